//! Dense CHW tensors: convolution, bilinear sampling and its adjoint, and the
//! DRCP on-disk format.

use drcp::tensor::{
    bilinear_sample, bilinear_scatter_unnormalized, conv2d, gaussian_draw, read_tensor,
    write_tensor, Kernel2D, SamplePoints,
};
use drcp::RngStream;

fn main() -> drcp::Result<()> {
    let mut rng = RngStream::new(42);
    let x = gaussian_draw(&mut rng, 3, 16, 16);

    let blur = Kernel2D::identity(3, 3);
    let y = conv2d(&x, &blur, 1)?;
    println!("identity conv max diff: {:e}", y.max_abs_diff(&x));

    // <sample(x), v> == <x, scatter(v)>
    let xy = (0..40)
        .map(|_| [rng.uniform(-1.0, 16.0), rng.uniform(-1.0, 16.0)])
        .collect();
    let points = SamplePoints::new(5, 8, xy)?;
    let v = gaussian_draw(&mut rng, 3, 5, 8);
    let lhs = bilinear_sample(&x, &points).dot(&v);
    let rhs = x.dot(&bilinear_scatter_unnormalized(&v, &points, 16, 16)?);
    println!("adjoint check: {lhs:.9} vs {rhs:.9}");

    let path = std::env::temp_dir().join("tensor_core_example.drcp");
    write_tensor(&path, &x)?;
    let back = read_tensor(&path)?;
    println!(
        "round trip through {}: equal = {}",
        path.display(),
        back == x
    );
    Ok(())
}
