//! 3D boxes, rotated BEV overlap and anchor layout.

use std::f64::consts::PI;

use crate::error::{ensure, Result};
use crate::geometry::{normalize_angle, BevGridSpec};

/// A decoded (or ground-truth) 3D box. `l` runs along the heading `theta`,
/// `w` across it; `(x, y, z)` is the box centre in metres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub theta: f64,
    pub score: f64,
    pub direction_bin: u8,
}

impl Detection {
    /// Ground-truth style box with score 1 and the direction bin implied by `theta`.
    pub fn new(x: f64, y: f64, z: f64, h: f64, w: f64, l: f64, theta: f64) -> Self {
        let theta = normalize_angle(theta);
        Self {
            x,
            y,
            z,
            h,
            w,
            l,
            theta,
            score: 1.0,
            direction_bin: direction_bin_of(theta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.h > 0.0 && self.w > 0.0 && self.l > 0.0,
            "box dims must be positive: h={} w={} l={}",
            self.h,
            self.w,
            self.l
        );
        ensure!(
            (0.0..=1.0).contains(&self.score),
            "score {} outside [0, 1]",
            self.score
        );
        Ok(())
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]]
            .map(|[u, v]| [self.x + c * u - s * v, self.y + s * u + c * v])
    }

    /// Whether a metric point lies inside the BEV footprint (boundary inclusive).
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (px - self.x, py - self.y);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u.abs() <= self.l / 2.0 && v.abs() <= self.w / 2.0
    }

    pub fn area(&self) -> f64 {
        self.l * self.w
    }
}

/// Bin 0 for headings in `[0, pi)`, bin 1 for `[pi, 2 pi)`.
pub fn direction_bin_of(theta: f64) -> u8 {
    if theta.rem_euclid(2.0 * PI) < PI {
        0
    } else {
        1
    }
}

/// Intersection-over-union of two BEV footprints.
pub fn bev_iou(a: &Detection, b: &Detection) -> f64 {
    let inter = intersection_area(&a.corners(), &b.corners());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Area of the intersection of two convex counter-clockwise polygons via
/// Sutherland-Hodgman clipping.
pub fn intersection_area(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> f64 {
    let mut poly: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if poly.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let inside = |p: [f64; 2]| cross(a, b, p) >= 0.0;
        let input = std::mem::take(&mut poly);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            match (inside(prev), inside(cur)) {
                (true, true) => poly.push(cur),
                (true, false) => poly.push(line_intersection(prev, cur, a, b)),
                (false, true) => {
                    poly.push(line_intersection(prev, cur, a, b));
                    poly.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    polygon_area(&poly)
}

fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let cp = cross(a, b, p);
    let cq = cross(a, b, q);
    let t = cp / (cp - cq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Shoelace area; absolute value so orientation does not matter.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        s += p[0] * q[1] - q[0] * p[1];
    }
    s.abs() / 2.0
}

/// Anchors at every BEV cell: one size, `yaws.len()` headings.
///
/// Anchor `a` at cell `(row, col)` owns classification channel `a`,
/// regression channels `7a .. 7a + 7` and direction channels `2a, 2a + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub spec: BevGridSpec,
    /// `(l, w, h)` in metres.
    pub size: [f64; 3],
    /// Anchor centre height.
    pub z: f64,
    pub yaws: Vec<f64>,
}

impl AnchorGrid {
    /// `n` yaw bins evenly spaced over `[0, pi)`.
    pub fn new(spec: BevGridSpec, n: usize, size: [f64; 3], z: f64) -> Self {
        let yaws = (0..n).map(|k| k as f64 * PI / n as f64).collect();
        Self {
            spec,
            size,
            z,
            yaws,
        }
    }

    /// Car-sized anchors with the default six headings.
    pub fn cars(spec: BevGridSpec) -> Self {
        Self::new(spec, 6, [4.5, 2.0, 1.6], -1.0)
    }

    pub fn per_cell(&self) -> usize {
        self.yaws.len()
    }

    pub fn diagonal(&self) -> f64 {
        self.size[0].hypot(self.size[1])
    }

    pub fn anchor(&self, row: usize, col: usize, a: usize) -> Detection {
        let [x, y] = self.spec.cell_to_metric(col as f64, row as f64);
        Detection {
            x,
            y,
            z: self.z,
            h: self.size[2],
            w: self.size[1],
            l: self.size[0],
            theta: self.yaws[a],
            score: 1.0,
            direction_bin: 0,
        }
    }

    /// Residual targets `(dx, dy, dz, dh, dw, dl, dtheta)` of `gt` w.r.t. an anchor.
    ///
    /// Centre offsets are scaled by the anchor's BEV diagonal, height by its
    /// height, sizes are log-ratios. `dtheta` is reduced modulo pi into
    /// `[-pi/2, pi/2)`; the heading half-plane goes to the direction head.
    pub fn encode(&self, anchor: &Detection, gt: &Detection) -> [f64; 7] {
        let diag = self.diagonal();
        [
            (gt.x - anchor.x) / diag,
            (gt.y - anchor.y) / diag,
            (gt.z - anchor.z) / anchor.h,
            (gt.h / anchor.h).ln(),
            (gt.w / anchor.w).ln(),
            (gt.l / anchor.l).ln(),
            wrap_half_turn(gt.theta - anchor.theta),
        ]
    }

    /// Inverse of [`AnchorGrid::encode`]. The heading is folded into `[0, pi)`
    /// and moved to the half-plane named by `direction_bin`.
    pub fn decode(
        &self,
        anchor: &Detection,
        residual: &[f64; 7],
        direction_bin: u8,
        score: f64,
    ) -> Detection {
        let diag = self.diagonal();
        let raw = anchor.theta + residual[6];
        let folded = raw.rem_euclid(PI);
        let theta = normalize_angle(folded + PI * direction_bin as f64);
        Detection {
            x: anchor.x + residual[0] * diag,
            y: anchor.y + residual[1] * diag,
            z: anchor.z + residual[2] * anchor.h,
            h: anchor.h * residual[3].exp(),
            w: anchor.w * residual[4].exp(),
            l: anchor.l * residual[5].exp(),
            theta,
            score,
            direction_bin,
        }
    }
}

/// Wraps into `[-pi/2, pi/2)`.
fn wrap_half_turn(a: f64) -> f64 {
    (a + PI / 2.0).rem_euclid(PI) - PI / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngStream;

    fn random_box(rng: &mut RngStream) -> Detection {
        Detection::new(
            rng.uniform(-3.0, 3.0),
            rng.uniform(-3.0, 3.0),
            0.0,
            1.5,
            rng.uniform(0.5, 3.0),
            rng.uniform(0.5, 5.0),
            rng.uniform(-PI, PI),
        )
    }

    #[test]
    fn identical_boxes_have_unit_iou() {
        let mut rng = RngStream::new(1);
        for _ in 0..20 {
            let b = random_box(&mut rng);
            assert!((bev_iou(&b, &b) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn axis_aligned_overlap_by_hand() {
        let a = Detection::new(0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 0.0);
        let b = Detection::new(1.0, 0.0, 0.0, 1.0, 2.0, 2.0, 0.0);
        assert!((bev_iou(&a, &b) - 2.0 / 6.0).abs() < 1e-12);
        let far = Detection::new(10.0, 0.0, 0.0, 1.0, 2.0, 2.0, 0.0);
        assert_eq!(bev_iou(&a, &far), 0.0);
    }

    #[test]
    fn iou_is_symmetric_and_matches_monte_carlo() {
        let mut rng = RngStream::new(2);
        for _ in 0..20 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let iou = bev_iou(&a, &b);
            assert!((iou - bev_iou(&b, &a)).abs() < 1e-9);
            // Monte-Carlo estimate of the intersection over a covering square
            let (lo, hi) = (-7.0, 7.0);
            let n = 40_000;
            let mut hits = 0usize;
            for _ in 0..n {
                let (px, py) = (rng.uniform(lo, hi), rng.uniform(lo, hi));
                if a.contains(px, py) && b.contains(px, py) {
                    hits += 1;
                }
            }
            let inter_mc = hits as f64 / n as f64 * (hi - lo) * (hi - lo);
            let inter = intersection_area(&a.corners(), &b.corners());
            assert!((inter - inter_mc).abs() < 0.3, "{inter} vs {inter_mc}");
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let spec = BevGridSpec::centered(4, 4, 1.0).unwrap();
        let anchors = AnchorGrid::cars(spec);
        let mut rng = RngStream::new(3);
        for _ in 0..50 {
            let gt = Detection::new(
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 0.0),
                rng.uniform(1.0, 2.0),
                rng.uniform(1.5, 2.5),
                rng.uniform(3.0, 5.0),
                rng.uniform(-PI, PI),
            );
            let a = anchors.anchor(1, 2, rng.below(0, 6));
            let r = anchors.encode(&a, &gt);
            let d = anchors.decode(&a, &r, gt.direction_bin, 1.0);
            for (u, v) in [
                (d.x, gt.x),
                (d.y, gt.y),
                (d.z, gt.z),
                (d.h, gt.h),
                (d.w, gt.w),
                (d.l, gt.l),
            ] {
                assert!((u - v).abs() < 1e-9);
            }
            assert!(normalize_angle(d.theta - gt.theta).abs() < 1e-9);
        }
    }

    #[test]
    fn direction_bins() {
        assert_eq!(direction_bin_of(0.0), 0);
        assert_eq!(direction_bin_of(3.0), 0);
        assert_eq!(direction_bin_of(-0.1), 1);
        assert_eq!(direction_bin_of(PI), 1);
    }
}
