//! Mask, diffuse, denoise, mask again.
//!
//! A sigmoid mask picks the reliable part of the BEV as a conditioning seed.
//! The BEV is pushed forward along the noise schedule, a compact U-Net maps
//! `(noisy, seed)` back to a clean estimate in one step, and a second mask
//! decides per element how much of that estimate replaces the input.

mod schedule;
mod unet;

pub use schedule::*;
pub use unet::*;

use crate::error::{ensure, Result};
use crate::tensor::io::Bundle;
use crate::tensor::{conv2d, sigmoid_map, FeatureMap, Kernel2D, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct MdmaParams {
    /// 1x1, `C -> C`; gates the seed.
    pub mask1: Kernel2D,
    /// 1x1, `C -> C`; gates the final blend.
    pub mask2: Kernel2D,
    pub denoiser: UnetParams,
}

impl MdmaParams {
    pub fn xavier(channels: usize, rng: &mut RngStream) -> Self {
        Self {
            mask1: Kernel2D::xavier(channels, channels, 1, 1, rng),
            mask2: Kernel2D::xavier(channels, channels, 1, 1, rng),
            denoiser: UnetParams::xavier(channels, rng),
        }
    }

    /// Zero network with `mask2` saturated at one: the refinement returns its input.
    pub fn identity(channels: usize) -> Self {
        let mut mask2 = Kernel2D::zeros(channels, channels, 1, 1);
        mask2.bias_mut().iter_mut().for_each(|b| *b = 20.0);
        Self {
            mask1: Kernel2D::zeros(channels, channels, 1, 1),
            mask2,
            denoiser: UnetParams::zeros(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.denoiser.channels()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for (k, name) in [(&self.mask1, "mask1"), (&self.mask2, "mask2")] {
            ensure!(
                k.out_channels() == c && k.in_channels() == c && k.k_h() == 1 && k.k_w() == 1,
                "{name} must be a 1x1 {c}->{c} kernel"
            );
        }
        self.denoiser.validate()
    }

    pub fn to_bundle(&self, bundle: &mut Bundle, prefix: &str) {
        bundle.insert_kernel(&format!("{prefix}.mask1"), &self.mask1);
        bundle.insert_kernel(&format!("{prefix}.mask2"), &self.mask2);
        self.denoiser.to_bundle(bundle, &format!("{prefix}.unet"));
    }

    pub fn from_bundle(bundle: &Bundle, prefix: &str) -> Result<Self> {
        let p = Self {
            mask1: bundle.kernel(&format!("{prefix}.mask1"))?,
            mask2: bundle.kernel(&format!("{prefix}.mask2"))?,
            denoiser: UnetParams::from_bundle(bundle, &format!("{prefix}.unet"))?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Every intermediate of one refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct MdmaOutput {
    pub final_map: FeatureMap,
    pub seed: FeatureMap,
    /// The first candidate's noisy map.
    pub perturbed: FeatureMap,
    /// Mean clean estimate over all candidates.
    pub denoised: FeatureMap,
    pub w1: FeatureMap,
    pub w2: FeatureMap,
}

/// `w1 = sigmoid(mask1(x))`, `seed = x * w1`.
pub fn seed_mask(input: &FeatureMap, params: &MdmaParams) -> Result<(FeatureMap, FeatureMap)> {
    let w1 = sigmoid_map(&conv2d(input, &params.mask1, 0)?);
    let seed = crate::tensor::mul(input, &w1)?;
    Ok((seed, w1))
}

/// `x * w2 + d * (1 - w2)`
pub fn blend(input: &FeatureMap, denoised: &FeatureMap, w2: &FeatureMap) -> Result<FeatureMap> {
    combine(input, denoised, w2, |x, d, w| x * w + d * (1.0 - w))
}

/// `x + (d - x) * (1 - w2)`, algebraically the same as [`blend`].
pub fn residual_blend(
    input: &FeatureMap,
    denoised: &FeatureMap,
    w2: &FeatureMap,
) -> Result<FeatureMap> {
    combine(input, denoised, w2, |x, d, w| x + (d - x) * (1.0 - w))
}

fn combine(
    a: &FeatureMap,
    b: &FeatureMap,
    w: &FeatureMap,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<FeatureMap> {
    ensure!(
        a.same_shape(b) && a.same_shape(w),
        "blend operands differ in shape"
    );
    let (c, h, wd) = a.dims();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(w.data())
        .map(|((&x, &d), &m)| f(x as f64, d as f64, m as f64) as f32)
        .collect();
    FeatureMap::from_vec(c, h, wd, data)
}

/// Single-candidate refinement at step `t`.
pub fn mdma_refine(
    input: &FeatureMap,
    params: &MdmaParams,
    schedule: &DiffusionSchedule,
    t: usize,
    rng: &mut RngStream,
) -> Result<MdmaOutput> {
    mdma_refine_candidates(input, params, schedule, t, 1, rng)
}

/// Refinement averaging the clean estimates of `candidates` independent noise
/// draws. With one candidate this is the plain single-step refinement.
pub fn mdma_refine_candidates(
    input: &FeatureMap,
    params: &MdmaParams,
    schedule: &DiffusionSchedule,
    t: usize,
    candidates: usize,
    rng: &mut RngStream,
) -> Result<MdmaOutput> {
    params.validate()?;
    ensure!(candidates >= 1, "need at least one candidate");
    ensure!(
        input.channels() == params.channels(),
        "MDMA built for {} channels, input has {}",
        params.channels(),
        input.channels()
    );
    let (seed, w1) = seed_mask(input, params)?;
    let mut perturbed = None;
    let mut sum: Option<Vec<f64>> = None;
    for _ in 0..candidates {
        let noisy = forward_perturb(input, schedule, t, rng)?;
        let d = denoise_once(&noisy, t, &seed, &params.denoiser)?;
        match &mut sum {
            None => sum = Some(d.data().iter().map(|&v| v as f64).collect()),
            Some(acc) => acc
                .iter_mut()
                .zip(d.data())
                .for_each(|(a, &v)| *a += v as f64),
        }
        perturbed.get_or_insert(noisy);
    }
    let (c, h, w) = input.dims();
    let denoised = FeatureMap::from_vec(
        c,
        h,
        w,
        sum.expect("candidates >= 1")
            .into_iter()
            .map(|v| (v / candidates as f64) as f32)
            .collect(),
    )?;
    let w2 = sigmoid_map(&conv2d(input, &params.mask2, 0)?);
    let final_map = blend(input, &denoised, &w2)?;
    Ok(MdmaOutput {
        final_map,
        seed,
        perturbed: perturbed.expect("candidates >= 1"),
        denoised,
        w1,
        w2,
    })
}
