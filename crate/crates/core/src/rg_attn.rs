//! Column-to-column cross-modal attention between a LiDAR BEV and camera
//! feature maps.
//!
//! Each camera column `m` owns one polar ray of the BEV (see
//! [`geometry::build_sampling_grid`]). The BEV samples along that ray are the
//! queries, the camera column's rows are keys and values, and columns are
//! processed independently as a batch. The attended sub-BEV is scattered back
//! onto the BEV raster and added to the input.
//!
//! Camera tokens are channel-aligned (`C2 -> C1`) first and the sinusoidal
//! row embedding is added afterwards. There is no layer norm inside the block.

use crate::error::{ensure, Result};
use crate::geometry::{
    build_sampling_grid, grid_sector_sample, grid_sector_unsample, BevGridSpec, CameraModel,
};
use crate::tensor::io::Bundle;
use crate::tensor::{
    bilinear_sample, bilinear_scatter, multi_head_attention, sinusoidal_embedding, FeatureMap,
    Linear, MhaWeights, RngStream, SamplePoints, Tokens,
};

#[derive(Clone, Debug, PartialEq)]
pub struct RgAttnConfig {
    pub heads: usize,
    /// LiDAR BEV channels `C1`; also the attention width.
    pub bev_channels: usize,
    /// Camera feature channels `C2`.
    pub cam_channels: usize,
    /// Camera feature rows `H2`.
    pub cam_height: usize,
    /// Camera feature columns `W2`.
    pub cam_width: usize,
}

impl RgAttnConfig {
    pub fn new(
        bev_channels: usize,
        cam_channels: usize,
        cam_height: usize,
        cam_width: usize,
    ) -> Self {
        Self {
            heads: 4,
            bev_channels,
            cam_channels,
            cam_height,
            cam_width,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.bev_channels
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.heads > 0 && self.bev_channels.is_multiple_of(self.heads),
            "model dim {} not divisible by {} heads",
            self.bev_channels,
            self.heads
        );
        ensure!(
            self.cam_channels > 0 && self.cam_height > 0 && self.cam_width > 0,
            "camera feature dims must be positive"
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgAttnParams {
    /// Channel alignment `C2 -> C1` for camera tokens.
    pub cam_proj: Linear,
    pub attn: MhaWeights,
}

impl RgAttnParams {
    pub fn xavier(cfg: &RgAttnConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cam_proj: Linear::xavier(cfg.cam_channels, cfg.bev_channels, rng),
            attn: MhaWeights::xavier(cfg.bev_channels, cfg.heads, rng)?,
        })
    }

    pub fn zeros(cfg: &RgAttnConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.bev_channels;
        Ok(Self {
            cam_proj: Linear::zeros(cfg.cam_channels, d),
            attn: MhaWeights::new(
                cfg.heads,
                Linear::zeros(d, d),
                Linear::zeros(d, d),
                Linear::zeros(d, d),
                Linear::zeros(d, d),
            )?,
        })
    }

    pub fn to_bundle(&self, bundle: &mut Bundle, prefix: &str) {
        bundle.insert_linear(&format!("{prefix}.cam_proj"), &self.cam_proj);
        bundle.insert_linear(&format!("{prefix}.q"), &self.attn.query);
        bundle.insert_linear(&format!("{prefix}.k"), &self.attn.key);
        bundle.insert_linear(&format!("{prefix}.v"), &self.attn.value);
        bundle.insert_linear(&format!("{prefix}.o"), &self.attn.output);
    }

    pub fn from_bundle(bundle: &Bundle, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            cam_proj: bundle.linear(&format!("{prefix}.cam_proj"))?,
            attn: MhaWeights::new(
                heads,
                bundle.linear(&format!("{prefix}.q"))?,
                bundle.linear(&format!("{prefix}.k"))?,
                bundle.linear(&format!("{prefix}.v"))?,
                bundle.linear(&format!("{prefix}.o"))?,
            )?,
        })
    }
}

/// Fuses one camera into the BEV. Returns a map with the BEV's shape.
pub fn intrin_rg_attn(
    bev: &FeatureMap,
    cam_feat: &FeatureMap,
    cam: &CameraModel,
    cfg: &RgAttnConfig,
    params: &RgAttnParams,
    spec: &BevGridSpec,
) -> Result<FeatureMap> {
    cfg.validate()?;
    ensure!(
        bev.channels() == cfg.bev_channels
            && bev.height() == spec.height
            && bev.width() == spec.width,
        "BEV dims {:?} do not match config C1={} and grid {}x{}",
        bev.dims(),
        cfg.bev_channels,
        spec.height,
        spec.width
    );
    ensure!(
        cam_feat.dims() == (cfg.cam_channels, cfg.cam_height, cfg.cam_width),
        "camera feature dims {:?} do not match config ({}, {}, {})",
        cam_feat.dims(),
        cfg.cam_channels,
        cfg.cam_height,
        cfg.cam_width
    );
    let grid = build_sampling_grid(cam, spec, cfg.cam_width, spec.height)?;
    let sub = grid_sector_sample(bev, &grid);
    let fused = attend_columns(&sub, cam_feat, params)?;
    let delta = grid_sector_unsample(&fused, &grid, spec.height, spec.width)?;
    crate::tensor::add(bev, &delta)
}

/// The attention core on an explicit sample raster (`H1` rings x `W2` columns),
/// independent of how the raster was built.
pub fn fuse_column_attention(
    bev: &FeatureMap,
    cam_feat: &FeatureMap,
    points: &SamplePoints,
    params: &RgAttnParams,
) -> Result<FeatureMap> {
    ensure!(
        points.width() == cam_feat.width(),
        "sample raster has {} columns, camera features {}",
        points.width(),
        cam_feat.width()
    );
    let sub = bilinear_sample(bev, points);
    let fused = attend_columns(&sub, cam_feat, params)?;
    let delta = bilinear_scatter(&fused, points, bev.height(), bev.width())?;
    crate::tensor::add(bev, &delta)
}

/// Runs MHA on every column of the sub-BEV against the matching camera column.
fn attend_columns(
    sub: &FeatureMap,
    cam_feat: &FeatureMap,
    params: &RgAttnParams,
) -> Result<FeatureMap> {
    let (c1, h1, w2) = sub.dims();
    let (c2, h2, cam_w) = cam_feat.dims();
    ensure!(cam_w == w2, "camera width {cam_w} != sub-BEV width {w2}");
    ensure!(
        params.cam_proj.in_dim() == c2 && params.cam_proj.out_dim() == c1,
        "camera projection is {}->{}, need {}->{}",
        params.cam_proj.in_dim(),
        params.cam_proj.out_dim(),
        c2,
        c1
    );
    ensure!(
        params.attn.dim() == c1,
        "attention width {} != C1 {}",
        params.attn.dim(),
        c1
    );
    let pe_q = sinusoidal_embedding(h1, c1);
    let pe_k = sinusoidal_embedding(h2, c1);

    let mut out = FeatureMap::zeros(c1, h1, w2);
    let mut column = vec![0f32; c2.max(c1)];
    for m in 0..w2 {
        let mut query = Tokens::zeros(h1, c1);
        for n in 0..h1 {
            let row = query.row_mut(n);
            for (c, v) in row.iter_mut().enumerate() {
                *v = sub.get(c, n, m) + pe_q.row(n)[c];
            }
        }
        let mut keys = Tokens::zeros(h2, c1);
        for h in 0..h2 {
            for (c, v) in column[..c2].iter_mut().enumerate() {
                *v = cam_feat.get(c, h, m);
            }
            let aligned = params.cam_proj.apply_vec(&column[..c2]);
            for (c, v) in keys.row_mut(h).iter_mut().enumerate() {
                *v = aligned[c] + pe_k.row(h)[c];
            }
        }
        let attended = multi_head_attention(&query, &keys, &keys, &params.attn)?;
        for n in 0..h1 {
            for (c, &v) in attended.row(n).iter().enumerate() {
                out.set(c, n, m, v);
            }
        }
    }
    Ok(out)
}

/// Applies [`intrin_rg_attn`] for each camera in order.
pub fn multi_camera_fuse(
    bev: &FeatureMap,
    cams: &[(CameraModel, FeatureMap)],
    cfg: &RgAttnConfig,
    params: &RgAttnParams,
    spec: &BevGridSpec,
) -> Result<FeatureMap> {
    let mut fused = bev.clone();
    for (cam, feat) in cams {
        fused = intrin_rg_attn(&fused, feat, cam, cfg, params, spec)?;
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_draw;

    fn setup() -> (BevGridSpec, RgAttnConfig, CameraModel) {
        let spec = BevGridSpec::centered(16, 32, 1.0).unwrap();
        let mut cfg = RgAttnConfig::new(4, 3, 5, 6);
        cfg.heads = 2;
        let cam = CameraModel::mounted(300.0, 640.0, 480.0, [0.0; 3], 0.2);
        (spec, cfg, cam)
    }

    #[test]
    fn zero_camera_with_zero_value_path_is_identity() {
        let (spec, cfg, cam) = setup();
        let mut rng = RngStream::new(1);
        let mut params = RgAttnParams::xavier(&cfg, &mut rng).unwrap();
        params.cam_proj = Linear::zeros(3, 4);
        params.attn.value = Linear::zeros(4, 4);
        params.attn.output = Linear::zeros(4, 4);
        let bev = gaussian_draw(&mut rng, 4, 16, 32);
        let cam_feat = FeatureMap::zeros(3, 5, 6);
        let out = intrin_rg_attn(&bev, &cam_feat, &cam, &cfg, &params, &spec).unwrap();
        assert_eq!(out, bev);
    }

    #[test]
    fn shape_is_preserved_and_mismatch_rejected() {
        let (spec, cfg, cam) = setup();
        let mut rng = RngStream::new(2);
        let params = RgAttnParams::xavier(&cfg, &mut rng).unwrap();
        let bev = gaussian_draw(&mut rng, 4, 16, 32);
        let cam_feat = gaussian_draw(&mut rng, 3, 5, 6);
        let out = intrin_rg_attn(&bev, &cam_feat, &cam, &cfg, &params, &spec).unwrap();
        assert_eq!(out.dims(), bev.dims());
        assert!(out.is_finite());
        let wrong = gaussian_draw(&mut rng, 3, 5, 7);
        assert!(intrin_rg_attn(&bev, &wrong, &cam, &cfg, &params, &spec).is_err());
    }

    #[test]
    fn empty_and_single_camera_lists() {
        let (spec, cfg, cam) = setup();
        let mut rng = RngStream::new(3);
        let params = RgAttnParams::xavier(&cfg, &mut rng).unwrap();
        let bev = gaussian_draw(&mut rng, 4, 16, 32);
        let feat = gaussian_draw(&mut rng, 3, 5, 6);
        assert_eq!(
            multi_camera_fuse(&bev, &[], &cfg, &params, &spec).unwrap(),
            bev
        );
        let one =
            multi_camera_fuse(&bev, &[(cam.clone(), feat.clone())], &cfg, &params, &spec).unwrap();
        assert_eq!(
            one,
            intrin_rg_attn(&bev, &feat, &cam, &cfg, &params, &spec).unwrap()
        );
    }

    #[test]
    fn bundle_round_trip() {
        let (_, cfg, _) = setup();
        let params = RgAttnParams::xavier(&cfg, &mut RngStream::new(4)).unwrap();
        let mut b = Bundle::new();
        params.to_bundle(&mut b, "rg");
        assert_eq!(
            RgAttnParams::from_bundle(&b, "rg", cfg.heads).unwrap(),
            params
        );
    }

    #[test]
    fn single_token_hand_trace() {
        // C1 = 2, one ring, one column, one camera row
        let mut cam_proj = Linear::zeros(1, 2);
        cam_proj.set(0, 0, 2.0);
        cam_proj.set(1, 0, -1.0);
        let id = || Linear::identity(2, 2);
        let params = RgAttnParams {
            cam_proj,
            attn: MhaWeights::new(1, id(), id(), id(), id()).unwrap(),
        };
        let bev = FeatureMap::from_vec(2, 1, 1, vec![0.3, -0.2]).unwrap();
        let cam = FeatureMap::from_vec(1, 1, 1, vec![0.5]).unwrap();
        let points = SamplePoints::new(1, 1, vec![[0.0, 0.0]]).unwrap();
        let out = fuse_column_attention(&bev, &cam, &points, &params).unwrap();
        // key = (2 * 0.5, -1 * 0.5) + pe(0) = (1.0, -0.5) + (0, 1)
        assert!((out.get(0, 0, 0) - 1.3).abs() < 1e-6);
        assert!((out.get(1, 0, 0) - 0.3).abs() < 1e-6);
    }

    #[test]
    fn column_permutation_is_invariant() {
        let mut rng = RngStream::new(5);
        let mut cfg = RgAttnConfig::new(4, 3, 5, 6);
        cfg.heads = 2;
        let params = RgAttnParams::xavier(&cfg, &mut rng).unwrap();
        let bev = gaussian_draw(&mut rng, 4, 12, 12);
        let cam = gaussian_draw(&mut rng, 3, 5, 6);
        let (rings, cols) = (7, 6);
        let xy: Vec<[f64; 2]> = (0..rings * cols)
            .map(|_| [rng.uniform(0.0, 11.0), rng.uniform(0.0, 11.0)])
            .collect();
        let points = SamplePoints::new(rings, cols, xy.clone()).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let cam_p = FeatureMap::from_fn(3, 5, 6, |c, h, m| cam.get(c, h, perm[m]));
        let xy_p: Vec<[f64; 2]> = (0..rings * cols)
            .map(|i| xy[(i / cols) * cols + perm[i % cols]])
            .collect();
        let points_p = SamplePoints::new(rings, cols, xy_p).unwrap();
        let a = fuse_column_attention(&bev, &cam, &points, &params).unwrap();
        let b = fuse_column_attention(&bev, &cam_p, &points_p, &params).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn disjoint_cameras_only_touch_their_sectors() {
        let spec = BevGridSpec::centered(32, 64, 1.0).unwrap();
        let mut cfg = RgAttnConfig::new(4, 3, 5, 8);
        cfg.heads = 2;
        let mut rng = RngStream::new(6);
        let params = RgAttnParams::xavier(&cfg, &mut rng).unwrap();
        let bev = gaussian_draw(&mut rng, 4, 32, 64);
        let front = CameraModel::mounted(600.0, 640.0, 480.0, [0.0; 3], 0.0);
        let back = CameraModel::mounted(600.0, 640.0, 480.0, [0.0; 3], std::f64::consts::PI);
        let cams = vec![
            (front.clone(), gaussian_draw(&mut rng, 3, 5, 8)),
            (back.clone(), gaussian_draw(&mut rng, 3, 5, 8)),
        ];
        let out = multi_camera_fuse(&bev, &cams, &cfg, &params, &spec).unwrap();
        let mut covered = vec![false; 32 * 64];
        for cam in [&front, &back] {
            let grid = build_sampling_grid(cam, &spec, 8, 32).unwrap();
            for (i, w) in grid.footprint(32, 64).iter().enumerate() {
                covered[i] |= *w > crate::tensor::SCATTER_EPS;
            }
        }
        assert!(covered.iter().any(|&c| !c));
        let mut changed = 0;
        for c in 0..4 {
            for (i, (&a, &b)) in bev.plane(c).iter().zip(out.plane(c)).enumerate() {
                if !covered[i] {
                    assert!((a - b).abs() < 1e-6);
                } else if a != b {
                    changed += 1;
                }
            }
        }
        assert!(changed > 0);
    }
}
