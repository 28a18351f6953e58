//! Model dimensions and the two parameter presets the harness runs with.
//!
//! `structured` wires every layer by hand so the pipeline reads the synthetic
//! LiDAR channel layout (see the scene docs) and produces meaningful boxes
//! without training. `seeded` is plain Xavier initialisation, useful for
//! exercising shapes and timing.

use crate::adaptive_conv::AdaptiveConvParams;
use crate::error::{ensure, Result};
use crate::heads::{HeadConfig, HeadParams};
use crate::mdma::{MdmaParams, UnetParams};
use crate::pyramid::{average_downsampler, PyramidParams};
use crate::rg_attn::{RgAttnConfig, RgAttnParams};
use crate::tensor::io::Bundle;
use crate::tensor::{sigmoid, Kernel2D, Linear, MhaWeights, RngStream};

/// Logit added by the seed and blend masks of the structured MDMA.
const MASK_LOGIT: f32 = 3.0;
/// Keeps U-Net activations in the near-linear range of SiLU.
const UNET_SHIFT: f32 = 12.0;
const OBJECTNESS_GAIN: f32 = 8.0;
const OCC_BIAS: f32 = -3.0;
const CLS_BIAS: f32 = -5.0;
const DIR_GAIN: f32 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub bev_channels: usize,
    pub cam_channels: usize,
    pub cam_height: usize,
    pub cam_width: usize,
    pub heads: usize,
    pub anchors: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            bev_channels: 32,
            cam_channels: 16,
            cam_height: 8,
            cam_width: 32,
            heads: 4,
            anchors: 6,
        }
    }
}

impl ModelDims {
    pub fn rg_attn(&self) -> RgAttnConfig {
        let mut cfg = RgAttnConfig::new(
            self.bev_channels,
            self.cam_channels,
            self.cam_height,
            self.cam_width,
        );
        cfg.heads = self.heads;
        cfg
    }

    /// Channels per pyramid level: `C`, `C/2`, `C/2`.
    pub fn level_channels(&self) -> [usize; 3] {
        let half = self.bev_channels / 2;
        [self.bev_channels, half, half]
    }

    /// Width of the concatenated multi-scale BEV.
    pub fn fused_channels(&self) -> usize {
        self.level_channels().iter().sum()
    }

    pub fn head_config(&self, score_thresh: f64, nms_iou: f64) -> HeadConfig {
        HeadConfig {
            in_channels: self.fused_channels(),
            n_anchor: self.anchors,
            score_thresh,
            nms_iou,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.bev_channels >= 32 && self.bev_channels.is_multiple_of(2),
            "BEV channels must be even and >= 32, got {}",
            self.bev_channels
        );
        ensure!(self.anchors > 0, "need at least one anchor per cell");
        self.rg_attn().validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineParams {
    pub rg_attn: RgAttnParams,
    pub pyramid: PyramidParams,
    pub adaptive: AdaptiveConvParams,
    pub mdma: MdmaParams,
    pub heads: HeadParams,
}

impl PipelineParams {
    /// Hand-wired weights that decode the synthetic feature layout.
    ///
    /// Camera attention writes into the upper half of the BEV channels and
    /// leaves the LiDAR half untouched. Coarse levels average the LiDAR half.
    /// Occupancy is `sigmoid(8 * objectness - 3)`. Adaptive conv and MDMA are
    /// near-identity with a small objectness blur. Heads read objectness,
    /// offsets, sizes and heading straight from the full-resolution channels.
    pub fn structured(dims: &ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let c = dims.bev_channels;
        let half = c / 2;
        let cfg = dims.rg_attn();
        let mut rng = RngStream::new(seed);

        let mut cam_proj = Linear::zeros(dims.cam_channels, c);
        for j in 0..dims.cam_channels.min(half) {
            cam_proj.set(half + j, j, 1.0);
        }
        let upper = || {
            let mut l = Linear::zeros(c, c);
            (half..c).for_each(|i| l.set(i, i, 1.0));
            l
        };
        let query = Linear::xavier(c, c, &mut rng);
        let key = Linear::xavier(c, c, &mut rng);
        let rg_attn = RgAttnParams {
            cam_proj,
            attn: MhaWeights::new(cfg.heads, query, key, upper(), upper())?,
        };

        let occ_head = |channels: usize| {
            let mut k = Kernel2D::zeros(1, channels, 1, 1);
            k.set_weight(0, 0, 0, 0, OBJECTNESS_GAIN);
            k.bias_mut()[0] = OCC_BIAS;
            k
        };
        let [c0, c1, c2] = dims.level_channels();
        let pyramid = PyramidParams {
            refine: None,
            downsamplers: vec![average_downsampler(c1, c0), average_downsampler(c2, c1)],
            occ_heads: vec![occ_head(c0), occ_head(c1), occ_head(c2)],
        };

        let d = dims.fused_channels();
        let mut conv5 = Kernel2D::identity(d, 5);
        set_blur(&mut conv5, 0, 0, 1.0);
        let mut weight_gen = Kernel2D::zeros(3, d, 1, 1);
        weight_gen.bias_mut().copy_from_slice(&[2.0, 0.0, -2.0]);
        let adaptive = AdaptiveConvParams {
            conv3: Kernel2D::identity(d, 3),
            conv5,
            conv7: Kernel2D::identity(d, 7),
            weight_gen,
        };

        let mask = || {
            let mut k = Kernel2D::zeros(d, d, 1, 1);
            k.bias_mut().iter_mut().for_each(|b| *b = MASK_LOGIT);
            k
        };
        // e1 = silu(seed / w1 + shift) recovers the input, u2 passes e1 on,
        // and the output layer removes the shift
        let mut denoiser = UnetParams::zeros(d);
        let unmask = 1.0 / sigmoid(MASK_LOGIT);
        for ch in 0..d {
            if ch == 0 {
                set_blur(&mut denoiser.enc, 0, d, unmask);
            } else {
                denoiser.enc.set_weight(ch, d + ch, 1, 1, unmask);
            }
            denoiser.up2.set_weight(ch, 2 * d + ch, 1, 1, 1.0);
            denoiser.out.set_weight(ch, ch, 0, 0, 1.0);
        }
        denoiser
            .enc
            .bias_mut()
            .iter_mut()
            .for_each(|b| *b = UNET_SHIFT);
        denoiser
            .out
            .bias_mut()
            .iter_mut()
            .for_each(|b| *b = -UNET_SHIFT);
        let mdma = MdmaParams {
            mask1: mask(),
            mask2: mask(),
            denoiser,
        };

        let hc = dims.head_config(0.0, 0.0);
        let mut heads = HeadParams::zeros(&hc);
        for a in 0..dims.anchors {
            let yaw = anchor_yaw(a, dims.anchors);
            let (s2, c2) = (2.0 * yaw).sin_cos();
            heads.cls.set_weight(a, 0, 0, 0, OBJECTNESS_GAIN);
            heads.cls.set_weight(a, 7, 0, 0, c2 as f32);
            heads.cls.set_weight(a, 8, 0, 0, s2 as f32);
            heads.cls.bias_mut()[a] = CLS_BIAS;
            for k in 0..6 {
                heads.reg.set_weight(7 * a + k, k + 1, 0, 0, 1.0);
            }
            // 0.5 sin(2 (theta - yaw))
            heads.reg.set_weight(7 * a + 6, 8, 0, 0, (0.5 * c2) as f32);
            heads.reg.set_weight(7 * a + 6, 7, 0, 0, (-0.5 * s2) as f32);
            heads.dir.set_weight(2 * a, 10, 0, 0, DIR_GAIN);
            heads.dir.set_weight(2 * a + 1, 10, 0, 0, -DIR_GAIN);
        }
        heads.occ.set_weight(0, 0, 0, 0, OBJECTNESS_GAIN);
        heads.occ.bias_mut()[0] = OCC_BIAS;

        let p = Self {
            rg_attn,
            pyramid,
            adaptive,
            mdma,
            heads,
        };
        p.validate(dims)?;
        Ok(p)
    }

    /// Xavier weights everywhere, zero biases.
    pub fn seeded(dims: &ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let root = RngStream::new(seed);
        let [c0, c1, c2] = dims.level_channels();
        let d = dims.fused_channels();
        let mut r = root.fork(1);
        let pyramid = PyramidParams {
            refine: None,
            downsamplers: vec![
                Kernel2D::xavier(c1, c0, 3, 3, &mut r),
                Kernel2D::xavier(c2, c1, 3, 3, &mut r),
            ],
            occ_heads: [c0, c1, c2]
                .iter()
                .map(|&c| Kernel2D::xavier(1, c, 1, 1, &mut r))
                .collect(),
        };
        let p = Self {
            rg_attn: RgAttnParams::xavier(&dims.rg_attn(), &mut root.fork(0))?,
            pyramid,
            adaptive: AdaptiveConvParams::xavier(d, &mut root.fork(2)),
            mdma: MdmaParams::xavier(d, &mut root.fork(3)),
            heads: HeadParams::xavier(&dims.head_config(0.0, 0.0), &mut root.fork(4)),
        };
        p.validate(dims)?;
        Ok(p)
    }

    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        let cfg = dims.rg_attn();
        let a = &self.rg_attn;
        ensure!(
            a.cam_proj.in_dim() == cfg.cam_channels && a.cam_proj.out_dim() == cfg.bev_channels,
            "camera projection must map {} -> {}",
            cfg.cam_channels,
            cfg.bev_channels
        );
        ensure!(
            a.attn.dim() == cfg.bev_channels,
            "attention width must be {}",
            cfg.bev_channels
        );
        self.pyramid.validate(dims.bev_channels)?;
        ensure!(
            self.pyramid.level_channels(dims.bev_channels) == dims.level_channels(),
            "pyramid levels must have {:?} channels",
            dims.level_channels()
        );
        let d = dims.fused_channels();
        self.adaptive.validate(d)?;
        self.mdma.validate()?;
        ensure!(self.mdma.channels() == d, "MDMA must run on {d} channels");
        self.heads.validate(&dims.head_config(0.0, 0.0))
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut b = Bundle::new();
        self.rg_attn.to_bundle(&mut b, "rg_attn");
        self.pyramid.to_bundle(&mut b, "pyramid");
        self.adaptive.to_bundle(&mut b, "adaptive");
        self.mdma.to_bundle(&mut b, "mdma");
        self.heads.to_bundle(&mut b, "heads");
        b
    }

    pub fn from_bundle(bundle: &Bundle, dims: &ModelDims) -> Result<Self> {
        let p = Self {
            rg_attn: RgAttnParams::from_bundle(bundle, "rg_attn", dims.heads)?,
            pyramid: PyramidParams::from_bundle(bundle, "pyramid")?,
            adaptive: AdaptiveConvParams::from_bundle(bundle, "adaptive")?,
            mdma: MdmaParams::from_bundle(bundle, "mdma")?,
            heads: HeadParams::from_bundle(bundle, "heads")?,
        };
        p.validate(dims)?;
        Ok(p)
    }
}

/// Heading of anchor `a` out of `n`, matching [`crate::heads::AnchorGrid::new`].
fn anchor_yaw(a: usize, n: usize) -> f64 {
    a as f64 * std::f64::consts::PI / n as f64
}

/// Writes a centred 3x3 binomial blur scaled by `gain` into slice `(o, i)`.
fn set_blur(k: &mut Kernel2D, o: usize, i: usize, gain: f32) {
    let c = k.k_h() / 2;
    let taps = [1.0, 2.0, 1.0];
    for (dy, ty) in taps.iter().enumerate() {
        for (dx, tx) in taps.iter().enumerate() {
            k.set_weight(o, i, c + dy - 1, c + dx - 1, gain * ty * tx / 16.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive_conv::adaptive_conv;
    use crate::mdma::{mdma_refine, DiffusionSchedule};
    use crate::tensor::{gaussian_draw, FeatureMap};

    fn smooth_input(d: usize) -> FeatureMap {
        // objectness constant so the blur is a no-op away from borders
        FeatureMap::from_fn(d, 16, 16, |c, y, x| {
            if c == 0 {
                0.7
            } else {
                ((c + y + x) % 5) as f32 * 0.2 - 0.4
            }
        })
    }

    #[test]
    fn presets_validate_and_round_trip() {
        let dims = ModelDims::default();
        for p in [
            PipelineParams::structured(&dims, 1).unwrap(),
            PipelineParams::seeded(&dims, 1).unwrap(),
        ] {
            let back = PipelineParams::from_bundle(&p.to_bundle(), &dims).unwrap();
            assert_eq!(back, p);
        }
        assert_eq!(dims.fused_channels(), 64);
    }

    #[test]
    fn structured_refinement_is_near_identity_off_borders() {
        let dims = ModelDims::default();
        let p = PipelineParams::structured(&dims, 2).unwrap();
        let x = smooth_input(dims.fused_channels());
        let y = adaptive_conv(&x, &p.adaptive).unwrap();
        let out = mdma_refine(
            &y,
            &p.mdma,
            &DiffusionSchedule::default(),
            10,
            &mut RngStream::new(3),
        )
        .unwrap();
        for c in 0..x.channels() {
            for r in 4..12 {
                for col in 4..12 {
                    assert!((out.final_map.get(c, r, col) - x.get(c, r, col)).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn structured_camera_attention_leaves_lidar_half() {
        let dims = ModelDims::default();
        let p = PipelineParams::structured(&dims, 4).unwrap();
        let mut rng = RngStream::new(5);
        let tokens = gaussian_draw(&mut rng, 1, 1, dims.bev_channels);
        let v = p.rg_attn.attn.value.apply_vec(tokens.data());
        assert!(v[..dims.bev_channels / 2].iter().all(|&x| x == 0.0));
        assert_eq!(
            &v[dims.bev_channels / 2..],
            &tokens.data()[dims.bev_channels / 2..]
        );
    }
}
