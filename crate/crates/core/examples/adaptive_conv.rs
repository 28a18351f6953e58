//! Per-pixel softmax blend of 3x3, 5x5 and 7x7 branches.

use drcp::adaptive_conv::{adaptive_conv_detailed, AdaptiveConvParams};
use drcp::tensor::gaussian_draw;
use drcp::RngStream;

fn main() -> drcp::Result<()> {
    let mut rng = RngStream::new(5);
    let x = gaussian_draw(&mut rng, 8, 32, 32);
    let params = AdaptiveConvParams::xavier(8, &mut rng);
    let out = adaptive_conv_detailed(&x, &params)?;

    let mut mean = [0.0; 3];
    for (k, m) in mean.iter_mut().enumerate() {
        *m = out.weights.plane(k).iter().map(|&v| v as f64).sum::<f64>()
            / out.weights.plane_len() as f64;
    }
    println!(
        "mean branch weights 3x3/5x5/7x7: {:.3} {:.3} {:.3}",
        mean[0], mean[1], mean[2]
    );

    let inside = out.output.data().iter().enumerate().all(|(i, &v)| {
        let b: Vec<f32> = out.branches.iter().map(|f| f.data()[i]).collect();
        let (lo, hi) = b
            .iter()
            .fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        v >= lo - 1e-5 && v <= hi + 1e-5
    });
    println!("output inside branch envelope: {inside}");
    Ok(())
}
