//! Camera-to-BEV geometry: intrinsics-aware radian division, grid sector
//! sampling and its inverse, and rigid warping between agent frames.
//!
//! Conventions:
//! - The BEV frame is metric, x forward, y left, angles counter-clockwise from +x.
//! - Raster cells are addressed `(col, row)`. Cell `(0, 0)` sits at
//!   [`BevGridSpec::origin`]; +x metric is +col and +y metric is -row, so the
//!   raster is y-down. Ray coordinates are therefore `x = p_x + r cos(theta)`,
//!   `y = p_y - r sin(theta)` in cell units.
//! - Radii are in cells. The outermost ring sits at `R = W1 / 2` and ring
//!   indices start at 1, so the camera's own cell is never sampled.

use std::f64::consts::PI;

use crate::error::{ensure, Result};
use crate::tensor::{bilinear_sample, bilinear_scatter, scatter_weights, FeatureMap, SamplePoints};

pub type Mat3 = [[f64; 3]; 3];

/// Pinhole intrinsics plus the camera-to-BEV extrinsic.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub sensor_width: f64,
    pub sensor_height: f64,
    /// Orthonormal camera-to-BEV rotation.
    pub rotation: Mat3,
    /// Camera-to-BEV translation, metres.
    pub translation: [f64; 3],
    /// Camera position in its own frame, metres.
    pub position_local: [f64; 3],
    /// Horizontal angle of the optical axis from the local x axis, radians.
    pub axis_angle_local: f64,
}

impl CameraModel {
    /// Validates intrinsics and that `rotation` is a proper rotation.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.fx > 0.0,
            "focal length f_x must be positive, got {}",
            self.fx
        );
        ensure!(
            self.sensor_width > 0.0 && self.sensor_height > 0.0,
            "sensor dims must be positive"
        );
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                ensure!(
                    (dot - expect).abs() <= 1e-6,
                    "rotation is not orthonormal (R^T R [{i}][{j}] = {dot})"
                );
            }
        }
        let det = det3(r);
        ensure!((det - 1.0).abs() <= 1e-6, "rotation determinant {det} != 1");
        Ok(())
    }

    /// A camera mounted at BEV position `(x, y, z)` metres, looking along `yaw`,
    /// with centred principal point.
    pub fn mounted(
        fx: f64,
        sensor_width: f64,
        sensor_height: f64,
        position: [f64; 3],
        yaw: f64,
    ) -> Self {
        Self {
            fx,
            fy: fx,
            cx: sensor_width / 2.0,
            cy: sensor_height / 2.0,
            sensor_width,
            sensor_height,
            rotation: rot_z(yaw),
            translation: position,
            position_local: [0.0; 3],
            axis_angle_local: 0.0,
        }
    }
}

pub fn rot_z(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Metric extent and resolution of a BEV raster.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGridSpec {
    pub height: usize,
    pub width: usize,
    /// Metres per cell.
    pub cell_size: f64,
    /// Metric `(x, y)` of the centre of cell `(0, 0)` (top-left).
    pub origin: [f64; 2],
}

impl BevGridSpec {
    pub fn new(height: usize, width: usize, cell_size: f64, origin: [f64; 2]) -> Result<Self> {
        ensure!(
            cell_size > 0.0,
            "cell size must be positive, got {cell_size}"
        );
        ensure!(height > 0 && width > 0, "grid dims must be positive");
        Ok(Self {
            height,
            width,
            cell_size,
            origin,
        })
    }

    /// Grid centred on the metric origin.
    pub fn centered(height: usize, width: usize, cell_size: f64) -> Result<Self> {
        let ox = -(width as f64) * cell_size / 2.0 + cell_size / 2.0;
        let oy = height as f64 * cell_size / 2.0 - cell_size / 2.0;
        Self::new(height, width, cell_size, [ox, oy])
    }

    /// Grid covering `x in [-half_x, half_x]`, `y in [-half_y, half_y]` with
    /// the given raster size. Cells must be square.
    pub fn from_range(height: usize, width: usize, half_x: f64, half_y: f64) -> Result<Self> {
        let cx = 2.0 * half_x / width as f64;
        let cy = 2.0 * half_y / height as f64;
        ensure!(
            (cx - cy).abs() <= 1e-9 * cx.max(cy),
            "range {}x{} m on {}x{} cells gives non-square cells ({cx} vs {cy})",
            2.0 * half_x,
            2.0 * half_y,
            width,
            height
        );
        Self::centered(height, width, cx)
    }

    /// `(col, row)` of a metric point.
    pub fn metric_to_cell(&self, x: f64, y: f64) -> [f64; 2] {
        [
            (x - self.origin[0]) / self.cell_size,
            (self.origin[1] - y) / self.cell_size,
        ]
    }

    /// Metric `(x, y)` of a `(col, row)` location.
    pub fn cell_to_metric(&self, col: f64, row: f64) -> [f64; 2] {
        [
            self.origin[0] + col * self.cell_size,
            self.origin[1] - row * self.cell_size,
        ]
    }

    /// The same extent at `1 / factor` resolution. Coarse cell `i` covers fine
    /// cells `factor * i .. factor * (i + 1)`.
    pub fn downscaled(&self, factor: usize) -> Result<Self> {
        ensure!(
            factor > 0 && self.height.is_multiple_of(factor) && self.width.is_multiple_of(factor),
            "grid {}x{} not divisible by {factor}",
            self.height,
            self.width
        );
        let shift = (factor as f64 - 1.0) / 2.0 * self.cell_size;
        Self::new(
            self.height / factor,
            self.width / factor,
            self.cell_size * factor as f64,
            [self.origin[0] + shift, self.origin[1] - shift],
        )
    }

    pub fn half_extent(&self) -> [f64; 2] {
        [
            self.width as f64 * self.cell_size / 2.0,
            self.height as f64 * self.cell_size / 2.0,
        ]
    }
}

/// Polar sampling raster for one camera: row `n - 1` holds ring `n`, column
/// `m` holds the ray of camera column `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingGrid {
    points: SamplePoints,
    thetas: Vec<f64>,
    radii: Vec<f64>,
    camera_cell: [f64; 2],
}

impl SamplingGrid {
    pub fn points(&self) -> &SamplePoints {
        &self.points
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    /// Ring radii in cells, `r_1 ..= r_H1`.
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Camera position in `(col, row)` cell coordinates.
    pub fn camera_cell(&self) -> [f64; 2] {
        self.camera_cell
    }

    pub fn columns(&self) -> usize {
        self.points.width()
    }

    pub fn rings(&self) -> usize {
        self.points.height()
    }

    /// `(x, y)` of ring `n` (1-based) on column `m`.
    pub fn coord(&self, m: usize, n: usize) -> [f64; 2] {
        self.points.at(n - 1, m)
    }

    /// Two-channel `(x, y)` export, `2 x H1 x W2`.
    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap::from_fn(2, self.rings(), self.columns(), |c, row, col| {
            self.points.at(row, col)[c] as f32
        })
    }

    /// Total scatter weight per BEV cell; non-zero exactly on the grid's footprint.
    pub fn footprint(&self, height: usize, width: usize) -> Vec<f64> {
        scatter_weights(&self.points, height, width)
    }
}

/// Camera centre and optical-axis heading in the BEV frame.
///
/// `position = R p + t` and the heading is `atan2` of `R [cos t, sin t, 0]`,
/// which keeps the quadrant for cameras facing backwards.
pub fn camera_axis_in_bev(cam: &CameraModel) -> ([f64; 3], f64) {
    let rp = mat_vec(&cam.rotation, cam.position_local);
    let position = [
        rp[0] + cam.translation[0],
        rp[1] + cam.translation[1],
        rp[2] + cam.translation[2],
    ];
    let (s, c) = cam.axis_angle_local.sin_cos();
    let d = mat_vec(&cam.rotation, [c, s, 0.0]);
    (position, d[1].atan2(d[0]))
}

/// Heading of each of the `columns` camera feature columns in the BEV frame.
///
/// Column `m` covers sensor pixels centred at `(m + 1/2) * sensor_width / columns`;
/// its heading is `atan((p - c_x) / f_x)` added to the optical-axis heading.
pub fn column_angles(cam: &CameraModel, columns: usize) -> Result<Vec<f64>> {
    ensure!(cam.fx != 0.0, "focal length f_x is zero");
    ensure!(columns > 0, "need at least one column");
    let (_, axis) = camera_axis_in_bev(cam);
    let p_width = cam.sensor_width / columns as f64;
    Ok((0..columns)
        .map(|m| {
            let p_origin = m as f64 * p_width + p_width / 2.0;
            ((p_origin - cam.cx) / cam.fx).atan() + axis
        })
        .collect())
}

/// Polar sampling raster with `rings` radial samples per camera column.
pub fn build_sampling_grid(
    cam: &CameraModel,
    spec: &BevGridSpec,
    columns: usize,
    rings: usize,
) -> Result<SamplingGrid> {
    cam.validate()?;
    ensure!(rings > 0, "need at least one radial sample");
    let thetas = column_angles(cam, columns)?;
    let (position, _) = camera_axis_in_bev(cam);
    let camera_cell = spec.metric_to_cell(position[0], position[1]);
    let reach = spec.width as f64 / 2.0;
    let radii: Vec<f64> = (1..=rings)
        .map(|n| n as f64 / rings as f64 * reach)
        .collect();
    let mut xy = Vec::with_capacity(rings * columns);
    for &r in &radii {
        for &theta in &thetas {
            xy.push([
                camera_cell[0] + r * theta.cos(),
                camera_cell[1] - r * theta.sin(),
            ]);
        }
    }
    Ok(SamplingGrid {
        points: SamplePoints::new(rings, columns, xy)?,
        thetas,
        radii,
        camera_cell,
    })
}

/// Polar sub-BEV `C x H1 x W2` read from `bev` along the grid's rays.
pub fn grid_sector_sample(bev: &FeatureMap, grid: &SamplingGrid) -> FeatureMap {
    bilinear_sample(bev, &grid.points)
}

/// Inverse of [`grid_sector_sample`]: weight-normalised scatter back onto an
/// `out_h x out_w` BEV. Cells no ray touches stay zero.
pub fn grid_sector_unsample(
    sub: &FeatureMap,
    grid: &SamplingGrid,
    out_h: usize,
    out_w: usize,
) -> Result<FeatureMap> {
    ensure!(
        sub.height() == grid.rings() && sub.width() == grid.columns(),
        "sub-BEV {}x{} does not match grid {}x{}",
        sub.height(),
        sub.width(),
        grid.rings(),
        grid.columns()
    );
    bilinear_scatter(sub, &grid.points, out_h, out_w)
}

/// Planar pose of an agent in a shared world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Heading in `(-pi, pi]`.
    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    /// Maps a point from this pose's local frame to the world frame.
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Maps a world point into this pose's local frame.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Pose of `other` expressed in this pose's frame.
    pub fn relative(&self, other: &Pose2D) -> Pose2D {
        let p = self.to_local([other.x, other.y]);
        Pose2D::new(p[0], p[1], other.yaw - self.yaw)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Resamples a BEV rasterised in the `from` frame into the `to` frame.
///
/// Each target cell is mapped to metric coordinates in `to`, taken to the
/// world, then into `from`, and bilinearly read there. Points outside the
/// source raster read zero.
pub fn warp_bev(
    bev: &FeatureMap,
    from: &Pose2D,
    to: &Pose2D,
    spec: &BevGridSpec,
) -> Result<FeatureMap> {
    ensure!(
        bev.height() == spec.height && bev.width() == spec.width,
        "BEV {}x{} does not match grid spec {}x{}",
        bev.height(),
        bev.width(),
        spec.height,
        spec.width
    );
    ensure!(
        [from.x, from.y, from.yaw, to.x, to.y, to.yaw]
            .iter()
            .all(|v| v.is_finite()),
        "poses must be finite"
    );
    if from == to {
        return Ok(bev.clone());
    }
    let mut xy = Vec::with_capacity(spec.height * spec.width);
    for row in 0..spec.height {
        for col in 0..spec.width {
            let target = spec.cell_to_metric(col as f64, row as f64);
            let source = from.to_local(to.to_world(target));
            xy.push(spec.metric_to_cell(source[0], source[1]));
        }
    }
    Ok(bilinear_sample(
        bev,
        &SamplePoints::new(spec.height, spec.width, xy)?,
    ))
}
