//! Radian division of a camera's field of view and the polar sampling grid
//! that ties each feature column to one BEV ray.

use drcp::geometry::{
    build_sampling_grid, column_angles, warp_bev, BevGridSpec, CameraModel, Pose2D,
};
use drcp::FeatureMap;

fn main() -> drcp::Result<()> {
    let spec = BevGridSpec::from_range(64, 128, 102.4, 51.2)?;
    let cam = CameraModel::mounted(400.0, 640.0, 480.0, [0.0, 0.0, 1.6], 0.0);

    let thetas = column_angles(&cam, 8)?;
    for (m, t) in thetas.iter().enumerate() {
        println!("column {m}: heading {:+.4} rad", t);
    }

    let grid = build_sampling_grid(&cam, &spec, 8, spec.height)?;
    let [x, y] = grid.coord(0, grid.rings());
    println!("outermost sample of column 0 at cell ({x:.2}, {y:.2})");
    let covered = grid
        .footprint(spec.height, spec.width)
        .iter()
        .filter(|&&w| w > 0.0)
        .count();
    println!(
        "grid touches {covered} of {} cells",
        spec.height * spec.width
    );

    // a single hot cell moved by a relative pose
    let mut bev = FeatureMap::zeros(1, spec.height, spec.width);
    bev.set(0, 32, 80, 1.0);
    let moved = warp_bev(
        &bev,
        &Pose2D::new(8.0, 0.0, 0.0),
        &Pose2D::identity(),
        &spec,
    )?;
    let peak = (0..spec.width).max_by(|&a, &b| moved.get(0, 32, a).total_cmp(&moved.get(0, 32, b)));
    println!("cell 80 seen 8 m ahead lands on column {:?}", peak);
    Ok(())
}
