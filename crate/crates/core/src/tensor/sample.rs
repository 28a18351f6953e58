use super::FeatureMap;
use crate::error::{ensure, Result};

/// Cells whose accumulated scatter weight is at or below this are left at zero.
pub const SCATTER_EPS: f64 = 1e-6;

/// Continuous sampling locations arranged as a `height x width` output raster.
///
/// Coordinates are in source cell units: `x` is the column, `y` the row, and
/// integer values land exactly on cell centres.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePoints {
    height: usize,
    width: usize,
    xy: Vec<[f64; 2]>,
}

impl SamplePoints {
    pub fn new(height: usize, width: usize, xy: Vec<[f64; 2]>) -> Result<Self> {
        ensure!(
            xy.len() == height * width,
            "sample point count {} != {}x{}",
            xy.len(),
            height,
            width
        );
        ensure!(
            xy.iter().all(|p| p[0].is_finite() && p[1].is_finite()),
            "sample coordinates must be finite"
        );
        Ok(Self { height, width, xy })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Row-major: index `row * width + col`.
    pub fn xy(&self) -> &[[f64; 2]] {
        &self.xy
    }

    pub fn at(&self, row: usize, col: usize) -> [f64; 2] {
        self.xy[row * self.width + col]
    }
}

/// The four bilinear taps of a point: `(flat index, weight)` for every
/// neighbour that lies inside an `h x w` raster.
#[inline]
fn taps(x: f64, y: f64, h: usize, w: usize) -> impl Iterator<Item = (usize, f64)> {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ]
    .into_iter()
    .filter(move |&(cx, cy, wt)| {
        wt != 0.0 && cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h
    })
    .map(move |(cx, cy, wt)| (cy as usize * w + cx as usize, wt))
}

/// Bilinear read of one plane at `(x, y)`; neighbours outside the plane count as zero.
pub fn bilinear_sample_point(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    taps(x, y, h, w).map(|(i, wt)| wt * plane[i] as f64).sum()
}

/// Samples every channel of `input` at `points` with zero padding outside the map.
/// Output is `C x points.height() x points.width()`.
pub fn bilinear_sample(input: &FeatureMap, points: &SamplePoints) -> FeatureMap {
    let (c, h, w) = input.dims();
    let mut out = FeatureMap::zeros(c, points.height, points.width);
    for ch in 0..c {
        let src = input.plane(ch);
        let dst = out.plane_mut(ch);
        for (d, p) in dst.iter_mut().zip(&points.xy) {
            *d = bilinear_sample_point(src, h, w, p[0], p[1]) as f32;
        }
    }
    out
}

/// Adjoint of [`bilinear_sample`]: every value is spread onto its four
/// neighbours with the sampling weights, without normalisation.
pub fn bilinear_scatter_unnormalized(
    values: &FeatureMap,
    points: &SamplePoints,
    out_h: usize,
    out_w: usize,
) -> Result<FeatureMap> {
    let (acc, _) = scatter_accumulate(values, points, out_h, out_w)?;
    let (c, _, _) = values.dims();
    FeatureMap::from_vec(c, out_h, out_w, acc.into_iter().map(|v| v as f32).collect())
}

/// Inverse projection of sampled values back onto an `out_h x out_w` raster.
///
/// Values are splatted with their bilinear weights and each cell is divided
/// by its accumulated weight. Cells with total weight at or below
/// [`SCATTER_EPS`] are zero.
pub fn bilinear_scatter(
    values: &FeatureMap,
    points: &SamplePoints,
    out_h: usize,
    out_w: usize,
) -> Result<FeatureMap> {
    let (acc, weight) = scatter_accumulate(values, points, out_h, out_w)?;
    let c = values.channels();
    let n = out_h * out_w;
    let mut data = vec![0f32; c * n];
    for ch in 0..c {
        for i in 0..n {
            if weight[i] > SCATTER_EPS {
                data[ch * n + i] = (acc[ch * n + i] / weight[i]) as f32;
            }
        }
    }
    FeatureMap::from_vec(c, out_h, out_w, data)
}

/// Total bilinear weight each output cell receives from `points`.
pub fn scatter_weights(points: &SamplePoints, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut weight = vec![0f64; out_h * out_w];
    for p in &points.xy {
        for (i, wt) in taps(p[0], p[1], out_h, out_w) {
            weight[i] += wt;
        }
    }
    weight
}

fn scatter_accumulate(
    values: &FeatureMap,
    points: &SamplePoints,
    out_h: usize,
    out_w: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(
        values.height() == points.height && values.width() == points.width,
        "scatter values {}x{} do not match sample raster {}x{}",
        values.height(),
        values.width(),
        points.height,
        points.width
    );
    let c = values.channels();
    let n = out_h * out_w;
    let mut acc = vec![0f64; c * n];
    let weight = scatter_weights(points, out_h, out_w);
    for (k, p) in points.xy.iter().enumerate() {
        for (i, wt) in taps(p[0], p[1], out_h, out_w) {
            for ch in 0..c {
                acc[ch * n + i] += wt * values.data()[ch * points.xy.len() + k] as f64;
            }
        }
    }
    Ok((acc, weight))
}

/// Bilinear resize with half-pixel centres (align-corners = false): output
/// pixel `d` reads source coordinate `(d + 0.5) * in / out - 0.5`, clamped
/// at the low edge to 0.
pub fn upsample_bilinear(
    input: &FeatureMap,
    target_h: usize,
    target_w: usize,
) -> Result<FeatureMap> {
    let (c, h, w) = input.dims();
    ensure!(
        target_h >= h && target_w >= w,
        "upsample target {}x{} smaller than input {}x{}",
        target_h,
        target_w,
        h,
        w
    );
    if (target_h, target_w) == (h, w) {
        return Ok(input.clone());
    }
    let rows: Vec<_> = (0..target_h).map(|d| resize_taps(d, h, target_h)).collect();
    let cols: Vec<_> = (0..target_w).map(|d| resize_taps(d, w, target_w)).collect();
    let mut out = FeatureMap::zeros(c, target_h, target_w);
    for ch in 0..c {
        let src = input.plane(ch);
        let dst = out.plane_mut(ch);
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let top = src[y0 * w + x0] as f64 * (1.0 - fx) + src[y0 * w + x1] as f64 * fx;
                let bot = src[y1 * w + x0] as f64 * (1.0 - fx) + src[y1 * w + x1] as f64 * fx;
                dst[oy * target_w + ox] = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
    Ok(out)
}

fn resize_taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}
