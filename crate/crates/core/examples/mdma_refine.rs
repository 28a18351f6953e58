//! Noise schedule, forward diffusion and the mask-diffuse-mask refinement.

use drcp::mdma::{forward_perturb, mdma_refine, DiffusionSchedule, MdmaParams};
use drcp::tensor::gaussian_draw;
use drcp::{FeatureMap, RngStream};

fn main() -> drcp::Result<()> {
    let schedule = DiffusionSchedule::default();
    for t in [1, 5, 10, 20] {
        println!("alpha_bar({t:2}) = {:.10}", schedule.alpha_bar(t)?);
    }

    let zero = FeatureMap::zeros(1, 100, 100);
    let mut rng = RngStream::new(1);
    let noisy = forward_perturb(&zero, &schedule, 10, &mut rng)?;
    let var = noisy
        .data()
        .iter()
        .map(|&v| (v as f64).powi(2))
        .sum::<f64>()
        / 1e4;
    println!(
        "variance at t=10: {var:.4} (expected {:.4})",
        1.0 - schedule.alpha_bar(10)?
    );

    let x = gaussian_draw(&mut rng, 4, 16, 16);
    let params = MdmaParams::xavier(4, &mut rng);
    let out = mdma_refine(&x, &params, &schedule, 10, &mut rng)?;
    println!(
        "refined map differs from input by {:.4}",
        out.final_map.max_abs_diff(&x)
    );
    let same = mdma_refine(&x, &MdmaParams::identity(4), &schedule, 10, &mut rng)?;
    println!(
        "identity parameters leave it by {:e}",
        same.final_map.max_abs_diff(&x)
    );
    Ok(())
}
