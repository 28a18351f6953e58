//! Synthetic multi-agent scenes.
//!
//! The world frame is the ego vehicle's frame (agent 0 sits at the origin).
//! Static rectangular occluders cast shadows; cars are the ground truth.
//! Every agent gets a LiDAR-like BEV and camera feature maps synthesised from
//! what it can actually see.
//!
//! LiDAR BEV channel layout (agent-local frame, values on cells inside the
//! footprint of a box grown by [`SUPPORT_MARGIN`]):
//!
//! | ch | content |
//! |----|---------|
//! | 0 | objectness `a * g` (Gaussian footprint `g`, amplitude `a` from visibility and range) plus noise and clutter |
//! | 1, 2 | centre offset `(bx - X, by - Y) / anchor diagonal` |
//! | 3 | `(bz - anchor z) / anchor h` |
//! | 4..=6 | `ln(h / 1.6)`, `ln(w / 2.0)`, `ln(l / 4.5)` |
//! | 7, 8 | `cos 2 theta`, `sin 2 theta` |
//! | 9, 10 | `cos theta`, `sin theta` |
//! | 11 | amplitude `a` |
//! | 12 | occluder footprint |
//! | 13..16 | noise |
//!
//! Remaining channels stay zero; camera fusion writes there.

use std::f64::consts::PI;

use crate::error::{ensure, Result};
use crate::geometry::{column_angles, BevGridSpec, CameraModel, Pose2D};
use crate::heads::Detection;
use crate::tensor::{FeatureMap, RngStream};

/// Car anchor used by the synthetic encoder: `(l, w, h)`, centre height.
pub const ANCHOR_SIZE: [f64; 3] = [4.5, 2.0, 1.6];
pub const ANCHOR_Z: f64 = -1.0;
/// Cells this far outside a box still carry its regression channels.
pub const SUPPORT_MARGIN: f64 = 0.8;
/// A box counts as seen by an agent when at least this share of its sample
/// points is in line of sight.
pub const VISIBLE_FRACTION: f64 = 1.0 / 3.0;
/// Number of LiDAR channels the generator writes.
pub const LIDAR_CHANNELS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub bev_channels: usize,
    pub cam_channels: usize,
    pub cam_height: usize,
    pub cam_width: usize,
    pub cameras: usize,
    pub boxes: (usize, usize),
    pub occluders: (usize, usize),
    pub lidar_range: f64,
    /// Objectness decays as `exp(-(d / falloff)^2)`.
    pub range_falloff: f64,
    pub noise_sigma: f64,
    pub clutter: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            bev_channels: 32,
            cam_channels: 16,
            cam_height: 8,
            cam_width: 32,
            cameras: 4,
            boxes: (12, 18),
            occluders: (4, 6),
            lidar_range: 100.0,
            range_falloff: 100.0,
            noise_sigma: 0.06,
            clutter: 6,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.bev_channels >= 2 * LIDAR_CHANNELS && self.bev_channels.is_multiple_of(2),
            "BEV needs an even channel count >= 32, got {}",
            self.bev_channels
        );
        ensure!(
            self.cam_channels >= 8,
            "camera features need at least 8 channels"
        );
        ensure!(self.cam_height >= 6, "camera features need at least 6 rows");
        ensure!(
            self.cam_width > 0 && self.cameras > 0,
            "need cameras with columns"
        );
        ensure!(
            self.boxes.0 <= self.boxes.1 && self.occluders.0 <= self.occluders.1,
            "count ranges must be ordered"
        );
        Ok(())
    }
}

/// A static rectangle that blocks rays but is not a detection target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occluder {
    pub x: f64,
    pub y: f64,
    pub l: f64,
    pub w: f64,
    pub yaw: f64,
}

impl Occluder {
    fn radius(&self) -> f64 {
        self.l.hypot(self.w) / 2.0
    }

    fn footprint(&self) -> Rect {
        Rect::new(self.x, self.y, self.l / 2.0, self.w / 2.0, self.yaw)
    }
}

/// Oriented rectangle with half extents, used for ray casting.
#[derive(Clone, Copy, Debug)]
struct Rect {
    x: f64,
    y: f64,
    hl: f64,
    hw: f64,
    cos: f64,
    sin: f64,
}

impl Rect {
    fn new(x: f64, y: f64, hl: f64, hw: f64, yaw: f64) -> Self {
        let (sin, cos) = yaw.sin_cos();
        Self {
            x,
            y,
            hl,
            hw,
            cos,
            sin,
        }
    }

    fn of_box(b: &Detection) -> Self {
        Self::new(b.x, b.y, b.l / 2.0, b.w / 2.0, b.theta)
    }

    fn local(&self, p: [f64; 2]) -> [f64; 2] {
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [
            self.cos * dx + self.sin * dy,
            -self.sin * dx + self.cos * dy,
        ]
    }

    /// Entry parameter of the ray `o + t d` (`t` in `[0, t_max]`), slab method.
    fn hit(&self, o: [f64; 2], d: [f64; 2], t_max: f64) -> Option<f64> {
        let lo = self.local(o);
        let ld = [
            self.cos * d[0] + self.sin * d[1],
            -self.sin * d[0] + self.cos * d[1],
        ];
        let (mut t0, mut t1) = (0.0f64, t_max);
        for (p, v, h) in [(lo[0], ld[0], self.hl), (lo[1], ld[1], self.hw)] {
            if v.abs() < 1e-12 {
                if p.abs() > h {
                    return None;
                }
            } else {
                let (a, b) = ((-h - p) / v, (h - p) / v);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some(t0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub pose: Pose2D,
    /// Cameras in the agent's own frame.
    pub cameras: Vec<CameraModel>,
    pub lidar: FeatureMap,
    pub camera_features: Vec<FeatureMap>,
    /// Visible share of each ground-truth box's sample points.
    pub visibility: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: BevGridSpec,
    pub agents: Vec<Agent>,
    pub ground_truth: Vec<Detection>,
    pub occluders: Vec<Occluder>,
    pub seed: u64,
}

impl Scene {
    pub fn ego(&self) -> &Agent {
        &self.agents[0]
    }

    /// Ground-truth boxes seen (at [`VISIBLE_FRACTION`]) by any of the first
    /// `agents` agents.
    pub fn visible_to_first(&self, agents: usize) -> Vec<Detection> {
        self.ground_truth
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                self.agents
                    .iter()
                    .take(agents)
                    .any(|a| a.visibility[*i] >= VISIBLE_FRACTION)
            })
            .map(|(_, b)| *b)
            .collect()
    }
}

/// Four cameras at 90 degree spacing with a ~90 degree field of view each.
pub fn default_cameras(n: usize) -> Vec<CameraModel> {
    (0..n)
        .map(|j| {
            CameraModel::mounted(
                320.0,
                640.0,
                480.0,
                [0.0, 0.0, 1.6],
                j as f64 * 2.0 * PI / n as f64,
            )
        })
        .collect()
}

/// Builds a seeded scene with `n_agents` cooperating vehicles.
pub fn generate_scene(
    spec: &BevGridSpec,
    cfg: &SceneConfig,
    n_agents: usize,
    seed: u64,
) -> Result<Scene> {
    ensure!(
        (1..=5).contains(&n_agents),
        "agent count must be in 1..=5, got {n_agents}"
    );
    cfg.validate()?;
    let root = RngStream::new(seed);
    let mut rng = root.fork(1);
    let [half_x, half_y] = spec.half_extent();
    let (bx, by) = (half_x - 7.0, half_y - 5.0);

    let mut occluders: Vec<Occluder> = Vec::new();
    let n_occ = rng.below(cfg.occluders.0, cfg.occluders.1 + 1);
    for _ in 0..200 {
        if occluders.len() == n_occ {
            break;
        }
        let phi = rng.uniform(-PI, PI);
        let d = rng.uniform(12.0, 35.0);
        let o = Occluder {
            x: d * phi.cos(),
            y: d * phi.sin(),
            l: rng.uniform(4.0, 10.0),
            w: rng.uniform(3.0, 7.0),
            yaw: rng.uniform(-PI, PI),
        };
        if o.x.abs() > bx || o.y.abs() > by {
            continue;
        }
        if occluders
            .iter()
            .all(|p| dist(p.x, p.y, o.x, o.y) > p.radius() + o.radius() + 2.0)
        {
            occluders.push(o);
        }
    }

    let mut boxes: Vec<Detection> = Vec::new();
    let free = |x: f64, y: f64, boxes: &[Detection], occ: &[Occluder]| {
        x.abs() <= bx
            && y.abs() <= by
            && x.hypot(y) > 6.0
            && boxes.iter().all(|b| dist(b.x, b.y, x, y) > 6.0)
            && occ.iter().all(|o| dist(o.x, o.y, x, y) > o.radius() + 3.5)
    };
    let car = |rng: &mut RngStream, x: f64, y: f64| {
        let h = rng.uniform(1.45, 1.75);
        Detection::new(
            x,
            y,
            ANCHOR_Z + rng.uniform(-0.1, 0.1),
            h,
            rng.uniform(1.85, 2.15),
            rng.uniform(4.2, 4.8),
            rng.uniform(-PI, PI),
        )
    };
    // one car in each occluder's shadow as seen from the ego
    for o in &occluders {
        let phi = o.y.atan2(o.x) + rng.uniform(-0.05, 0.05);
        let d = o.x.hypot(o.y) + o.radius() + rng.uniform(5.0, 15.0);
        let (x, y) = (d * phi.cos(), d * phi.sin());
        if free(x, y, &boxes, &occluders) {
            let b = car(&mut rng, x, y);
            boxes.push(b);
        }
    }
    let n_boxes = rng.below(cfg.boxes.0, cfg.boxes.1 + 1).max(boxes.len());
    for _ in 0..1000 {
        if boxes.len() >= n_boxes {
            break;
        }
        let (x, y) = (rng.uniform(-bx, bx), rng.uniform(-by, by));
        if free(x, y, &boxes, &occluders) {
            let b = car(&mut rng, x, y);
            boxes.push(b);
        }
    }

    // helpers go where they see the most boxes nobody placed so far sees
    let mut poses = vec![Pose2D::identity()];
    let mut vis: Vec<Vec<f64>> = vec![visibility_all(
        [0.0, 0.0],
        &boxes,
        &occluders,
        cfg.lidar_range,
    )];
    let mut prng = root.fork(2);
    while poses.len() < n_agents {
        let mut best: Option<(f64, Pose2D, Vec<f64>)> = None;
        for _ in 0..40 {
            let (x, y) = (prng.uniform(-60.0, 60.0), prng.uniform(-40.0, 40.0));
            let clear = boxes.iter().all(|b| dist(b.x, b.y, x, y) > 5.0)
                && occluders
                    .iter()
                    .all(|o| dist(o.x, o.y, x, y) > o.radius() + 3.0)
                && poses.iter().all(|p| dist(p.x, p.y, x, y) > 15.0);
            if !clear {
                continue;
            }
            let v = visibility_all([x, y], &boxes, &occluders, cfg.lidar_range);
            let mut score = 0.0;
            for (i, &f) in v.iter().enumerate() {
                if f >= VISIBLE_FRACTION {
                    let seen = vis.iter().any(|a| a[i] >= VISIBLE_FRACTION);
                    score += if seen { 0.01 } else { 1.0 };
                }
            }
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, Pose2D::new(x, y, 0.0), v));
            }
        }
        let (_, pose, v) =
            best.ok_or_else(|| crate::Error::contract("no free position for a helper agent"))?;
        poses.push(pose);
        vis.push(v);
    }

    let cameras = default_cameras(cfg.cameras);
    let agents = poses
        .iter()
        .zip(vis)
        .enumerate()
        .map(|(k, (pose, visibility))| {
            let mut arng = root.fork(100 + k as u64);
            let lidar = synth_lidar(spec, cfg, pose, &boxes, &visibility, &occluders, &mut arng)?;
            let camera_features = cameras
                .iter()
                .map(|cam| synth_camera(cfg, pose, cam, &boxes, &occluders, &mut arng))
                .collect::<Result<Vec<_>>>()?;
            Ok(Agent {
                pose: *pose,
                cameras: cameras.clone(),
                lidar,
                camera_features,
                visibility,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Scene {
        spec: spec.clone(),
        agents,
        ground_truth: boxes,
        occluders,
        seed,
    })
}

fn dist(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    (ax - bx).hypot(ay - by)
}

/// Centre, four shrunken corners and four edge midpoints.
fn sample_points(b: &Detection) -> [[f64; 2]; 9] {
    let (s, c) = b.theta.sin_cos();
    let (hl, hw) = (0.8 * b.l / 2.0, 0.8 * b.w / 2.0);
    let local = [
        [0.0, 0.0],
        [hl, hw],
        [-hl, hw],
        [-hl, -hw],
        [hl, -hw],
        [hl, 0.0],
        [-hl, 0.0],
        [0.0, hw],
        [0.0, -hw],
    ];
    local.map(|[u, v]| [b.x + c * u - s * v, b.y + s * u + c * v])
}

/// Share of `boxes[target]`'s sample points in line of sight from `eye`.
pub fn visibility(
    eye: [f64; 2],
    target: usize,
    boxes: &[Detection],
    occluders: &[Occluder],
    range: f64,
) -> f64 {
    let b = &boxes[target];
    let blockers: Vec<Rect> = occluders
        .iter()
        .map(Occluder::footprint)
        .chain(
            boxes
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != target)
                .map(|(_, o)| Rect::of_box(o)),
        )
        .collect();
    let mut seen = 0;
    for p in sample_points(b) {
        let d = [p[0] - eye[0], p[1] - eye[1]];
        let len = d[0].hypot(d[1]);
        if len > range {
            continue;
        }
        let dir = [d[0] / len.max(1e-12), d[1] / len.max(1e-12)];
        if blockers.iter().all(|r| r.hit(eye, dir, len).is_none()) {
            seen += 1;
        }
    }
    seen as f64 / 9.0
}

fn visibility_all(
    eye: [f64; 2],
    boxes: &[Detection],
    occluders: &[Occluder],
    range: f64,
) -> Vec<f64> {
    (0..boxes.len())
        .map(|i| visibility(eye, i, boxes, occluders, range))
        .collect()
}

fn synth_lidar(
    spec: &BevGridSpec,
    cfg: &SceneConfig,
    pose: &Pose2D,
    boxes: &[Detection],
    vis: &[f64],
    occluders: &[Occluder],
    rng: &mut RngStream,
) -> Result<FeatureMap> {
    let (h, w) = (spec.height, spec.width);
    let mut map = FeatureMap::zeros(cfg.bev_channels, h, w);
    let mut owner = vec![0f64; h * w];
    let diag = ANCHOR_SIZE[0].hypot(ANCHOR_SIZE[1]);

    for (b, &v) in boxes.iter().zip(vis) {
        if v <= 0.0 {
            continue;
        }
        let [lx, ly] = pose.to_local([b.x, b.y]);
        let theta = b.theta - pose.yaw();
        let a = v * (-(lx.hypot(ly) / cfg.range_falloff).powi(2)).exp();
        let (s, c) = theta.sin_cos();
        let (hl, hw) = (b.l / 2.0, b.w / 2.0);
        let values = [
            0.0,
            0.0,
            0.0,
            (b.z - ANCHOR_Z) / ANCHOR_SIZE[2],
            (b.h / ANCHOR_SIZE[2]).ln(),
            (b.w / ANCHOR_SIZE[1]).ln(),
            (b.l / ANCHOR_SIZE[0]).ln(),
            (2.0 * theta).cos(),
            (2.0 * theta).sin(),
            theta.cos(),
            theta.sin(),
            a,
        ];
        for_cells_near(
            spec,
            lx,
            ly,
            hl.hypot(hw) + SUPPORT_MARGIN,
            |row, col, x, y| {
                let (dx, dy) = (x - lx, y - ly);
                let (u, q) = (c * dx + s * dy, -s * dx + c * dy);
                if u.abs() > hl + SUPPORT_MARGIN || q.abs() > hw + SUPPORT_MARGIN {
                    return;
                }
                let g = (-0.5 * ((u / hl).powi(2) + (q / hw).powi(2))).exp();
                let i = row * w + col;
                if g <= owner[i] {
                    return;
                }
                owner[i] = g;
                map.set(0, row, col, (a * g) as f32);
                map.set(1, row, col, (-dx / diag) as f32);
                map.set(2, row, col, (-dy / diag) as f32);
                for (ch, val) in values.iter().enumerate().skip(3) {
                    map.set(ch, row, col, *val as f32);
                }
            },
        );
    }

    for o in occluders {
        let [lx, ly] = pose.to_local([o.x, o.y]);
        let r = Rect::new(lx, ly, o.l / 2.0, o.w / 2.0, o.yaw - pose.yaw());
        for_cells_near(spec, lx, ly, o.radius(), |row, col, x, y| {
            let p = r.local([x, y]);
            if p[0].abs() <= r.hl && p[1].abs() <= r.hw {
                map.set(12, row, col, 1.0);
            }
        });
    }

    for _ in 0..cfg.clutter {
        let [hx, hy] = spec.half_extent();
        let (cx, cy) = (rng.uniform(-hx, hx), rng.uniform(-hy, hy));
        let amp = rng.uniform(0.2, 0.45);
        for_cells_near(spec, cx, cy, 3.0, |row, col, x, y| {
            let g = (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * 1.2 * 1.2)).exp();
            let v = map.get(0, row, col) + (amp * g) as f32;
            map.set(0, row, col, v);
        });
    }

    for v in map.plane_mut(0) {
        *v += (cfg.noise_sigma * rng.gaussian()) as f32;
    }
    for ch in 13..LIDAR_CHANNELS {
        for v in map.plane_mut(ch) {
            *v = (0.1 * rng.gaussian()) as f32;
        }
    }
    Ok(map)
}

fn for_cells_near(
    spec: &BevGridSpec,
    x: f64,
    y: f64,
    radius: f64,
    mut f: impl FnMut(usize, usize, f64, f64),
) {
    let [c0, r0] = spec.metric_to_cell(x - radius, y + radius);
    let [c1, r1] = spec.metric_to_cell(x + radius, y - radius);
    let rows = r0.floor().max(0.0) as usize..((r1.ceil() + 1.0).max(0.0) as usize).min(spec.height);
    let cols = c0.floor().max(0.0) as usize..((c1.ceil() + 1.0).max(0.0) as usize).min(spec.width);
    for row in rows {
        for col in cols.clone() {
            let [cx, cy] = spec.cell_to_metric(col as f64, row as f64);
            f(row, col, cx, cy);
        }
    }
}

/// Camera feature map: each column is a semantic stripe describing the first
/// thing its ray hits.
///
/// Channels: 0 car, 1 car nearness, 2/3 car heading relative to the ray,
/// 4 occluder, 5 occluder nearness, 6 sky, 7 ground; the rest is noise.
fn synth_camera(
    cfg: &SceneConfig,
    pose: &Pose2D,
    cam: &CameraModel,
    boxes: &[Detection],
    occluders: &[Occluder],
    rng: &mut RngStream,
) -> Result<FeatureMap> {
    let (c2, h2, w2) = (cfg.cam_channels, cfg.cam_height, cfg.cam_width);
    let mut map = FeatureMap::zeros(c2, h2, w2);
    let thetas = column_angles(cam, w2)?;
    let eye = pose.to_world([cam.translation[0], cam.translation[1]]);
    let band = h2 / 2 - 1..h2 / 2 + 2;
    for (m, &t) in thetas.iter().enumerate() {
        let heading = t + pose.yaw();
        let dir = [heading.cos(), heading.sin()];
        let mut nearest: Option<(f64, Option<usize>)> = None;
        for (i, b) in boxes.iter().enumerate() {
            if let Some(d) = Rect::of_box(b).hit(eye, dir, cfg.lidar_range) {
                if nearest.is_none_or(|(n, _)| d < n) {
                    nearest = Some((d, Some(i)));
                }
            }
        }
        for o in occluders {
            if let Some(d) = o.footprint().hit(eye, dir, cfg.lidar_range) {
                if nearest.is_none_or(|(n, _)| d < n) {
                    nearest = Some((d, None));
                }
            }
        }
        for row in 0..h2 {
            if row < band.start {
                map.set(6, row, m, 1.0);
            } else if row >= band.end {
                map.set(7, row, m, 1.0);
            }
        }
        if let Some((d, hit)) = nearest {
            let near = (-d / 40.0).exp() as f32;
            for row in band.clone() {
                match hit {
                    Some(i) => {
                        let rel = boxes[i].theta - heading;
                        map.set(0, row, m, 1.0);
                        map.set(1, row, m, near);
                        map.set(2, row, m, rel.cos() as f32);
                        map.set(3, row, m, rel.sin() as f32);
                    }
                    None => {
                        map.set(4, row, m, 1.0);
                        map.set(5, row, m, near);
                    }
                }
            }
        }
    }
    for v in map.data_mut() {
        *v += (0.05 * rng.gaussian()) as f32;
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> BevGridSpec {
        BevGridSpec::from_range(64, 128, 102.4, 51.2).unwrap()
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&spec(), &cfg, 3, 11).unwrap();
        let b = generate_scene(&spec(), &cfg, 3, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&spec(), &cfg, 3, 12).unwrap();
        assert_ne!(a.ground_truth, c.ground_truth);
        assert!(generate_scene(&spec(), &cfg, 0, 1).is_err());
        assert!(generate_scene(&spec(), &cfg, 6, 1).is_err());
    }

    #[test]
    fn ground_truth_inside_range() {
        let cfg = SceneConfig::default();
        for seed in 0..5 {
            let s = generate_scene(&spec(), &cfg, 2, seed).unwrap();
            assert!(!s.ground_truth.is_empty());
            for b in &s.ground_truth {
                assert!(b.x.abs() <= 102.4 && b.y.abs() <= 51.2);
                b.validate().unwrap();
            }
        }
    }

    #[test]
    fn box_behind_wall_leaves_no_blob() {
        let boxes = vec![Detection::new(30.0, 0.0, -1.0, 1.6, 2.0, 4.5, 0.0)];
        let occ = vec![Occluder {
            x: 15.0,
            y: 0.0,
            l: 2.0,
            w: 12.0,
            yaw: 0.0,
        }];
        assert_eq!(visibility([0.0, 0.0], 0, &boxes, &occ, 100.0), 0.0);
        assert_eq!(visibility([30.0, 20.0], 0, &boxes, &occ, 100.0), 1.0);

        let cfg = SceneConfig {
            clutter: 0,
            noise_sigma: 0.0,
            ..SceneConfig::default()
        };
        let sp = spec();
        let mut rng = RngStream::new(1);
        let hidden = synth_lidar(
            &sp,
            &cfg,
            &Pose2D::identity(),
            &boxes,
            &[0.0],
            &occ,
            &mut rng,
        )
        .unwrap();
        let seen = synth_lidar(
            &sp,
            &cfg,
            &Pose2D::identity(),
            &boxes,
            &[1.0],
            &occ,
            &mut rng,
        )
        .unwrap();
        let [col, row] = sp.metric_to_cell(30.0, 0.0);
        let (r, c) = (row.round() as usize, col.round() as usize);
        assert_eq!(hidden.get(0, r, c), 0.0);
        assert!(seen.get(0, r, c) > 0.5);
    }

    #[test]
    fn regression_channels_point_at_the_box() {
        let sp = spec();
        let cfg = SceneConfig {
            clutter: 0,
            noise_sigma: 0.0,
            ..SceneConfig::default()
        };
        let b = Detection::new(10.3, -4.1, -0.9, 1.5, 2.1, 4.6, 0.7);
        let map = synth_lidar(
            &sp,
            &cfg,
            &Pose2D::identity(),
            &[b],
            &[1.0],
            &[],
            &mut RngStream::new(2),
        )
        .unwrap();
        let diag = ANCHOR_SIZE[0].hypot(ANCHOR_SIZE[1]);
        let mut touched = 0;
        for row in 0..64 {
            for col in 0..128 {
                if map.get(11, row, col) > 0.0 {
                    touched += 1;
                    let [x, y] = sp.cell_to_metric(col as f64, row as f64);
                    let px = x + map.get(1, row, col) as f64 * diag;
                    let py = y + map.get(2, row, col) as f64 * diag;
                    assert!((px - b.x).abs() < 1e-4 && (py - b.y).abs() < 1e-4);
                }
            }
        }
        assert!(touched >= 2);
    }

    #[test]
    fn helper_sees_something_the_ego_does_not() {
        let cfg = SceneConfig::default();
        let mut gained = 0;
        for seed in 0..5 {
            let s = generate_scene(&spec(), &cfg, 2, seed).unwrap();
            gained += s.visible_to_first(2).len() - s.visible_to_first(1).len();
        }
        assert!(gained > 0);
    }

    #[test]
    fn camera_columns_see_a_car_ahead() {
        let cfg = SceneConfig::default();
        let boxes = vec![Detection::new(20.0, 0.0, -1.0, 1.6, 2.0, 4.5, 0.0)];
        let cam = &default_cameras(4)[0];
        let f = synth_camera(
            &cfg,
            &Pose2D::identity(),
            cam,
            &boxes,
            &[],
            &mut RngStream::new(3),
        )
        .unwrap();
        let mid = cfg.cam_width / 2;
        assert!(f.get(0, cfg.cam_height / 2, mid) > 0.8);
        assert!(f.get(0, cfg.cam_height / 2, 0) < 0.3);
    }
}
