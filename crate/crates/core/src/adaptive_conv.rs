//! Per-pixel blend of 3x3, 5x5 and 7x7 convolution branches.
//!
//! A 1x1 convolution produces three logits per cell, a softmax over them gives
//! the branch weights, and the weights are shared by every output channel.

use crate::error::{ensure, Result};
use crate::tensor::io::Bundle;
use crate::tensor::{conv2d, softmax_over_axis, Axis, FeatureMap, Kernel2D, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveConvParams {
    pub conv3: Kernel2D,
    pub conv5: Kernel2D,
    pub conv7: Kernel2D,
    /// 1x1, three output channels.
    pub weight_gen: Kernel2D,
}

impl AdaptiveConvParams {
    pub fn xavier(channels: usize, rng: &mut RngStream) -> Self {
        Self {
            conv3: Kernel2D::xavier(channels, channels, 3, 3, rng),
            conv5: Kernel2D::xavier(channels, channels, 5, 5, rng),
            conv7: Kernel2D::xavier(channels, channels, 7, 7, rng),
            weight_gen: Kernel2D::xavier(3, channels, 1, 1, rng),
        }
    }

    /// Every branch is the identity and the weights are uniform.
    pub fn identity(channels: usize) -> Self {
        Self {
            conv3: Kernel2D::identity(channels, 3),
            conv5: Kernel2D::identity(channels, 5),
            conv7: Kernel2D::identity(channels, 7),
            weight_gen: Kernel2D::zeros(3, channels, 1, 1),
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (k, size) in [(&self.conv3, 3), (&self.conv5, 5), (&self.conv7, 7)] {
            ensure!(
                k.k_h() == size && k.k_w() == size,
                "branch kernel is {}x{}, expected {size}x{size}",
                k.k_h(),
                k.k_w()
            );
            ensure!(
                k.in_channels() == channels && k.out_channels() == channels,
                "{size}x{size} branch maps {}->{}, input has {channels} channels",
                k.in_channels(),
                k.out_channels()
            );
        }
        let g = &self.weight_gen;
        ensure!(
            g.out_channels() == 3 && g.k_h() == 1 && g.k_w() == 1,
            "weight generator must be 1x1 with 3 outputs"
        );
        ensure!(
            g.in_channels() == channels,
            "weight generator expects {} channels, input has {channels}",
            g.in_channels()
        );
        Ok(())
    }

    pub fn to_bundle(&self, bundle: &mut Bundle, prefix: &str) {
        bundle.insert_kernel(&format!("{prefix}.conv3"), &self.conv3);
        bundle.insert_kernel(&format!("{prefix}.conv5"), &self.conv5);
        bundle.insert_kernel(&format!("{prefix}.conv7"), &self.conv7);
        bundle.insert_kernel(&format!("{prefix}.weight_gen"), &self.weight_gen);
    }

    pub fn from_bundle(bundle: &Bundle, prefix: &str) -> Result<Self> {
        Ok(Self {
            conv3: bundle.kernel(&format!("{prefix}.conv3"))?,
            conv5: bundle.kernel(&format!("{prefix}.conv5"))?,
            conv7: bundle.kernel(&format!("{prefix}.conv7"))?,
            weight_gen: bundle.kernel(&format!("{prefix}.weight_gen"))?,
        })
    }
}

/// Everything computed inside one adaptive convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveConvOutput {
    pub output: FeatureMap,
    /// `[f3, f5, f7]`
    pub branches: [FeatureMap; 3],
    /// `3 x H x W`, sums to one over channels at every cell.
    pub weights: FeatureMap,
}

pub fn adaptive_conv(input: &FeatureMap, params: &AdaptiveConvParams) -> Result<FeatureMap> {
    Ok(adaptive_conv_detailed(input, params)?.output)
}

pub fn adaptive_conv_detailed(
    input: &FeatureMap,
    params: &AdaptiveConvParams,
) -> Result<AdaptiveConvOutput> {
    params.validate(input.channels())?;
    let f3 = conv2d(input, &params.conv3, 1)?;
    let f5 = conv2d(input, &params.conv5, 2)?;
    let f7 = conv2d(input, &params.conv7, 3)?;
    let logits = conv2d(input, &params.weight_gen, 0)?;
    let weights = softmax_over_axis(&logits, Axis::Channel);

    let (c, h, w) = input.dims();
    let plane = h * w;
    let (w1, w2, w3) = (weights.plane(0), weights.plane(1), weights.plane(2));
    let mut out = vec![0f32; c * plane];
    for (i, o) in out.iter_mut().enumerate() {
        let p = i % plane;
        *o = (w1[p] as f64 * f3.data()[i] as f64
            + w2[p] as f64 * f5.data()[i] as f64
            + w3[p] as f64 * f7.data()[i] as f64) as f32;
    }
    Ok(AdaptiveConvOutput {
        output: FeatureMap::from_vec(c, h, w, out)?,
        branches: [f3, f5, f7],
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_draw;

    #[test]
    fn saturated_generator_selects_first_branch() {
        let mut rng = RngStream::new(1);
        let x = gaussian_draw(&mut rng, 3, 9, 11);
        let mut p = AdaptiveConvParams::xavier(3, &mut rng);
        p.weight_gen = Kernel2D::zeros(3, 3, 1, 1);
        p.weight_gen
            .bias_mut()
            .copy_from_slice(&[20.0, -20.0, -20.0]);
        let d = adaptive_conv_detailed(&x, &p).unwrap();
        assert!(d.output.max_abs_diff(&d.branches[0]) < 1e-6);
    }

    #[test]
    fn zero_generator_gives_branch_mean() {
        let mut rng = RngStream::new(2);
        let x = gaussian_draw(&mut rng, 2, 8, 8);
        let mut p = AdaptiveConvParams::xavier(2, &mut rng);
        p.weight_gen = Kernel2D::zeros(3, 2, 1, 1);
        let d = adaptive_conv_detailed(&x, &p).unwrap();
        for i in 0..x.data().len() {
            let mean = d.branches.iter().map(|b| b.data()[i]).sum::<f32>() / 3.0;
            assert!((d.output.data()[i] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn output_is_convex_in_independent_branches() {
        let mut rng = RngStream::new(3);
        for _ in 0..5 {
            let x = gaussian_draw(&mut rng, 3, 10, 12);
            let mut p = AdaptiveConvParams::xavier(3, &mut rng);
            p.weight_gen = p.weight_gen.scaled(4.0);
            let out = adaptive_conv(&x, &p).unwrap();
            let f3 = conv2d(&x, &p.conv3, 1).unwrap();
            let f5 = conv2d(&x, &p.conv5, 2).unwrap();
            let f7 = conv2d(&x, &p.conv7, 3).unwrap();
            for i in 0..out.data().len() {
                let v = [f3.data()[i], f5.data()[i], f7.data()[i]];
                let lo = v.iter().cloned().fold(f32::INFINITY, f32::min);
                let hi = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                assert!(out.data()[i] >= lo - 1e-6 && out.data()[i] <= hi + 1e-6);
            }
            let d = adaptive_conv_detailed(&x, &p).unwrap();
            for p in 0..120 {
                let s: f32 = (0..3).map(|k| d.weights.plane(k)[p]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identity_params_and_mismatch() {
        let mut rng = RngStream::new(4);
        let x = gaussian_draw(&mut rng, 2, 5, 5);
        let out = adaptive_conv(&x, &AdaptiveConvParams::identity(2)).unwrap();
        assert!(out.max_abs_diff(&x) < 1e-6);
        assert!(adaptive_conv(&x, &AdaptiveConvParams::identity(3)).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let p = AdaptiveConvParams::xavier(2, &mut RngStream::new(5));
        let mut b = Bundle::new();
        p.to_bundle(&mut b, "ac");
        assert_eq!(AdaptiveConvParams::from_bundle(&b, "ac").unwrap(), p);
    }
}
