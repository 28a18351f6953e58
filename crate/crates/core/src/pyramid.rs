//! Multi-scale, occupancy-weighted fusion of BEV maps from several agents.
//!
//! Every agent turns its camera-fused BEV into a three-level pyramid and scores
//! each cell with an occupancy head. At every scale the ego vehicle blends the
//! (already ego-aligned) agent maps with per-cell weights
//! `alpha_k = occ_k / (sum_l occ_l + 1e-8)`, upsamples the blended levels to the
//! finest resolution and stacks them along channels.

use crate::error::{ensure, Result};
use crate::geometry::BevGridSpec;
use crate::heads::Detection;
use crate::tensor::io::Bundle;
use crate::tensor::{
    concat_channels, conv2d, conv2d_strided, sigmoid_map, upsample_bilinear, FeatureMap, Kernel2D,
};

/// Added to the occupancy sum so empty regions do not divide by zero.
pub const FUSION_EPS: f64 = 1e-8;

/// Number of pyramid levels.
pub const LEVELS: usize = 3;

/// Pyramid of one agent, finest level first. Level `s + 1` has half the
/// height and width of level `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevels {
    levels: Vec<FeatureMap>,
}

impl PyramidLevels {
    pub fn new(levels: Vec<FeatureMap>) -> Result<Self> {
        ensure!(!levels.is_empty(), "pyramid needs at least one level");
        for pair in levels.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            ensure!(
                b.height() * 2 == a.height() && b.width() * 2 == a.width(),
                "level {}x{} is not half of {}x{}",
                b.height(),
                b.width(),
                a.height(),
                a.width()
            );
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn level(&self, s: usize) -> &FeatureMap {
        &self.levels[s]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn into_levels(self) -> Vec<FeatureMap> {
        self.levels
    }
}

/// Builds the pyramid: level 1 is `fused` (run through `refine` when given),
/// each further level applies the next downsampler as a stride-2 convolution
/// with same-style padding.
pub fn build_pyramid(
    fused: &FeatureMap,
    refine: Option<&Kernel2D>,
    downsamplers: &[Kernel2D],
) -> Result<PyramidLevels> {
    let factor = 1usize << downsamplers.len();
    ensure!(
        fused.height().is_multiple_of(factor) && fused.width().is_multiple_of(factor),
        "BEV {}x{} not divisible by {factor} for {} downsampling steps",
        fused.height(),
        fused.width(),
        downsamplers.len()
    );
    let base = match refine {
        Some(k) => conv2d(fused, k, k.same_padding())?,
        None => fused.clone(),
    };
    let mut levels = vec![base];
    for k in downsamplers {
        let prev = levels.last().expect("non-empty");
        levels.push(conv2d_strided(prev, k, 2, k.same_padding())?);
    }
    PyramidLevels::new(levels)
}

/// Per-cell occupancy probabilities, one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyMap {
    scores: FeatureMap,
}

impl OccupancyMap {
    pub fn new(scores: FeatureMap) -> Result<Self> {
        ensure!(
            scores.channels() == 1,
            "occupancy map must have 1 channel, got {}",
            scores.channels()
        );
        ensure!(
            scores.data().iter().all(|v| (0.0..=1.0).contains(v)),
            "occupancy scores must lie in [0, 1]"
        );
        Ok(Self { scores })
    }

    /// Uniform map, mostly useful for tests and for agents without a head.
    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(FeatureMap::filled(1, height, width, value))
    }

    pub fn height(&self) -> usize {
        self.scores.height()
    }

    pub fn width(&self) -> usize {
        self.scores.width()
    }

    pub fn scores(&self) -> &[f32] {
        self.scores.data()
    }

    pub fn as_map(&self) -> &FeatureMap {
        &self.scores
    }

    pub fn into_map(self) -> FeatureMap {
        self.scores
    }
}

/// Raw occupancy logits of a level (same spatial size).
pub fn occupancy_logits(level: &FeatureMap, head: &Kernel2D) -> Result<FeatureMap> {
    ensure!(
        head.out_channels() == 1,
        "occupancy head must output 1 channel"
    );
    ensure!(head.k_h() == head.k_w(), "occupancy head must be square");
    conv2d(level, head, head.same_padding())
}

/// Sigmoid of [`occupancy_logits`].
pub fn occupancy_head(level: &FeatureMap, head: &Kernel2D) -> Result<OccupancyMap> {
    Ok(OccupancyMap {
        scores: sigmoid_map(&occupancy_logits(level, head)?),
    })
}

/// Per-agent blending weights, one `height * width` plane per agent.
pub fn fusion_weights(occs: &[&OccupancyMap]) -> Result<Vec<Vec<f64>>> {
    ensure!(!occs.is_empty(), "fusion needs at least one agent");
    let (h, w) = (occs[0].height(), occs[0].width());
    ensure!(
        occs.iter().all(|o| o.height() == h && o.width() == w),
        "occupancy maps differ in size"
    );
    let mut total = vec![FUSION_EPS; h * w];
    for o in occs {
        for (t, &s) in total.iter_mut().zip(o.scores()) {
            *t += s as f64;
        }
    }
    Ok(occs
        .iter()
        .map(|o| {
            o.scores()
                .iter()
                .zip(&total)
                .map(|(&s, &t)| s as f64 / t)
                .collect()
        })
        .collect())
}

/// Occupancy-weighted sum of the agents' maps at one scale.
pub fn fuse_agents_at_scale(levels: &[&FeatureMap], occs: &[&OccupancyMap]) -> Result<FeatureMap> {
    ensure!(!levels.is_empty(), "fusion needs at least one agent");
    ensure!(
        levels.len() == occs.len(),
        "{} feature maps but {} occupancy maps",
        levels.len(),
        occs.len()
    );
    let (c, h, w) = levels[0].dims();
    for (f, o) in levels.iter().zip(occs) {
        ensure!(
            f.dims() == (c, h, w),
            "agent maps differ: {:?} vs {:?}",
            f.dims(),
            (c, h, w)
        );
        ensure!(
            o.height() == h && o.width() == w,
            "occupancy {}x{} does not match features {h}x{w}",
            o.height(),
            o.width()
        );
    }
    let alphas = fusion_weights(occs)?;
    let plane = h * w;
    let mut acc = vec![0f64; c * plane];
    for (f, alpha) in levels.iter().zip(&alphas) {
        for (i, (a, &v)) in acc.iter_mut().zip(f.data()).enumerate() {
            *a += alpha[i % plane] * v as f64;
        }
    }
    FeatureMap::from_vec(c, h, w, acc.into_iter().map(|v| v as f32).collect())
}

/// Upsamples every scale to `target_h x target_w` and concatenates along
/// channels in the given order.
pub fn pyramid_concat(
    scales: &[FeatureMap],
    target_h: usize,
    target_w: usize,
) -> Result<FeatureMap> {
    ensure!(
        !scales.is_empty(),
        "pyramid concat needs at least one scale"
    );
    let resized = scales
        .iter()
        .map(|s| {
            if s.height() == target_h && s.width() == target_w {
                Ok(s.clone())
            } else {
                upsample_bilinear(s, target_h, target_w)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    concat_channels(&resized.iter().collect::<Vec<_>>())
}

/// Binary occupancy targets on one raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccupancyLabels {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl OccupancyLabels {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&v| v as f64).collect()
    }
}

/// Marks cells whose centre lies inside any box footprint. `scale` is the
/// 1-based pyramid level: level `s` uses `spec` downscaled by `2^(s - 1)`.
pub fn occupancy_labels_from_boxes(
    boxes: &[Detection],
    spec: &BevGridSpec,
    scale: usize,
) -> Result<OccupancyLabels> {
    ensure!(scale >= 1, "pyramid scales are 1-based");
    let grid = spec.downscaled(1 << (scale - 1))?;
    let mut labels = vec![0u8; grid.height * grid.width];
    for b in boxes {
        // only scan the box's bounding square
        let reach = b.l.hypot(b.w) / 2.0;
        let [c0, r0] = grid.metric_to_cell(b.x - reach, b.y + reach);
        let [c1, r1] = grid.metric_to_cell(b.x + reach, b.y - reach);
        let rows = clamp_span(r0, r1, grid.height);
        let cols = clamp_span(c0, c1, grid.width);
        for row in rows {
            for col in cols.clone() {
                let [x, y] = grid.cell_to_metric(col as f64, row as f64);
                if b.contains(x, y) {
                    labels[row * grid.width + col] = 1;
                }
            }
        }
    }
    Ok(OccupancyLabels {
        height: grid.height,
        width: grid.width,
        labels,
    })
}

fn clamp_span(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let a = lo.floor().max(0.0) as usize;
    let b = (hi.ceil() + 1.0).clamp(0.0, n as f64) as usize;
    a.min(n)..b
}

/// Learned pieces of the pyramid stage: optional level-1 refinement, the two
/// stride-2 downsamplers and one occupancy head per level.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidParams {
    pub refine: Option<Kernel2D>,
    pub downsamplers: Vec<Kernel2D>,
    pub occ_heads: Vec<Kernel2D>,
}

impl PyramidParams {
    pub fn validate(&self, in_channels: usize) -> Result<()> {
        ensure!(
            self.occ_heads.len() == self.downsamplers.len() + 1,
            "{} occupancy heads for {} levels",
            self.occ_heads.len(),
            self.downsamplers.len() + 1
        );
        let mut c = match &self.refine {
            Some(k) => {
                ensure!(
                    k.in_channels() == in_channels,
                    "refine kernel expects {} channels",
                    k.in_channels()
                );
                k.out_channels()
            }
            None => in_channels,
        };
        for (s, head) in self.occ_heads.iter().enumerate() {
            ensure!(
                head.in_channels() == c,
                "occupancy head {s} expects {} channels, level has {c}",
                head.in_channels()
            );
            if let Some(k) = self.downsamplers.get(s) {
                ensure!(
                    k.in_channels() == c,
                    "downsampler {s} expects {} channels, level has {c}",
                    k.in_channels()
                );
                c = k.out_channels();
            }
        }
        Ok(())
    }

    /// Channel count of every level for a given input width.
    pub fn level_channels(&self, in_channels: usize) -> Vec<usize> {
        let mut c = self
            .refine
            .as_ref()
            .map_or(in_channels, |k| k.out_channels());
        let mut out = vec![c];
        for k in &self.downsamplers {
            c = k.out_channels();
            out.push(c);
        }
        out
    }

    pub fn to_bundle(&self, bundle: &mut Bundle, prefix: &str) {
        if let Some(k) = &self.refine {
            bundle.insert_kernel(&format!("{prefix}.refine"), k);
        }
        for (i, k) in self.downsamplers.iter().enumerate() {
            bundle.insert_kernel(&format!("{prefix}.down{i}"), k);
        }
        for (i, k) in self.occ_heads.iter().enumerate() {
            bundle.insert_kernel(&format!("{prefix}.occ{i}"), k);
        }
    }

    pub fn from_bundle(bundle: &Bundle, prefix: &str) -> Result<Self> {
        let refine = bundle.kernel(&format!("{prefix}.refine")).ok();
        let mut downsamplers = Vec::new();
        while let Ok(k) = bundle.kernel(&format!("{prefix}.down{}", downsamplers.len())) {
            downsamplers.push(k);
        }
        let occ_heads = (0..=downsamplers.len())
            .map(|i| bundle.kernel(&format!("{prefix}.occ{i}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            refine,
            downsamplers,
            occ_heads,
        })
    }
}

/// 3x3 stride-2 kernel that averages each 2x2 block of the first
/// `min(out, in)` channels.
pub fn average_downsampler(out_channels: usize, in_channels: usize) -> Kernel2D {
    let mut k = Kernel2D::zeros(out_channels, in_channels, 3, 3);
    for c in 0..out_channels.min(in_channels) {
        for (ky, kx) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            k.set_weight(c, c, ky, kx, 0.25);
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gaussian_draw, sigmoid, RngStream};

    #[test]
    fn level_widths_halve() {
        let x = FeatureMap::zeros(2, 128, 256);
        let p = build_pyramid(
            &x,
            None,
            &[average_downsampler(2, 2), average_downsampler(2, 2)],
        )
        .unwrap();
        let widths: Vec<usize> = p.levels().iter().map(|l| l.width()).collect();
        assert_eq!(widths, vec![256, 128, 64]);
        let heights: Vec<usize> = p.levels().iter().map(|l| l.height()).collect();
        assert_eq!(heights, vec![128, 64, 32]);
    }

    #[test]
    fn identity_level_one_and_constant_levels() {
        let mut rng = RngStream::new(1);
        let x = gaussian_draw(&mut rng, 3, 8, 16);
        let id = Kernel2D::identity(3, 3);
        let p = build_pyramid(
            &x,
            Some(&id),
            &[average_downsampler(3, 3), average_downsampler(3, 3)],
        )
        .unwrap();
        assert_eq!(p.level(0), &x);

        let c = FeatureMap::filled(3, 8, 16, 2.5);
        let p = build_pyramid(
            &c,
            None,
            &[average_downsampler(3, 3), average_downsampler(3, 3)],
        )
        .unwrap();
        for l in p.levels() {
            assert!(l.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
        }
    }

    #[test]
    fn indivisible_base_is_rejected() {
        let x = FeatureMap::zeros(1, 8, 18);
        assert!(build_pyramid(
            &x,
            None,
            &[average_downsampler(1, 1), average_downsampler(1, 1)]
        )
        .is_err());
    }

    #[test]
    fn occupancy_head_degenerate_cases() {
        let mut rng = RngStream::new(2);
        let x = gaussian_draw(&mut rng, 3, 6, 6);
        let occ = occupancy_head(&x, &Kernel2D::zeros(1, 3, 1, 1)).unwrap();
        assert!(occ.scores().iter().all(|&v| v == 0.5));
        let mut k = Kernel2D::zeros(1, 3, 1, 1);
        k.bias_mut()[0] = -20.0;
        let occ = occupancy_head(&x, &k).unwrap();
        assert!(occ.scores().iter().all(|&v| v < 1e-8));
    }

    #[test]
    fn occupancy_head_matches_conv_then_sigmoid() {
        let mut rng = RngStream::new(3);
        let x = gaussian_draw(&mut rng, 3, 7, 9);
        let mut k = Kernel2D::xavier(1, 3, 3, 3, &mut rng);
        k.bias_mut()[0] = 0.3;
        let occ = occupancy_head(&x, &k).unwrap();
        for r in 0..7 {
            for c in 0..9 {
                let mut acc = 0.3f64;
                for i in 0..3 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (yy, xx) = (r as i64 + ky as i64 - 1, c as i64 + kx as i64 - 1);
                            if (0..7).contains(&yy) && (0..9).contains(&xx) {
                                acc += k.weight(0, i, ky, kx) as f64
                                    * x.get(i, yy as usize, xx as usize) as f64;
                            }
                        }
                    }
                }
                let expect = 1.0 / (1.0 + (-acc).exp());
                assert!((occ.as_map().get(0, r, c) as f64 - expect).abs() < 1e-6);
            }
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn two_agent_weights_by_hand() {
        let a = OccupancyMap::filled(1, 1, 0.2).unwrap();
        let b = OccupancyMap::filled(1, 1, 0.6).unwrap();
        let w = fusion_weights(&[&a, &b]).unwrap();
        assert!((w[0][0] - 0.25).abs() < 1e-7);
        assert!((w[1][0] - 0.75).abs() < 1e-7);
    }

    #[test]
    fn equal_occupancy_averages_and_single_agent_passes_through() {
        let mut rng = RngStream::new(4);
        let maps: Vec<FeatureMap> = (0..3).map(|_| gaussian_draw(&mut rng, 2, 4, 5)).collect();
        let occ = OccupancyMap::filled(4, 5, 0.4).unwrap();
        let fused =
            fuse_agents_at_scale(&maps.iter().collect::<Vec<_>>(), &[&occ, &occ, &occ]).unwrap();
        for i in 0..fused.data().len() {
            let mean = maps.iter().map(|m| m.data()[i]).sum::<f32>() / 3.0;
            assert!((fused.data()[i] - mean).abs() < 1e-6);
        }
        let one = fuse_agents_at_scale(&[&maps[0]], &[&occ]).unwrap();
        assert!(one.max_abs_diff(&maps[0]) < 1e-6);
        assert!(fuse_agents_at_scale(&[], &[]).is_err());
    }

    #[test]
    fn concat_channels_and_identity_resize() {
        let s1 = FeatureMap::filled(2, 8, 8, 1.0);
        let s2 = FeatureMap::filled(3, 4, 4, 2.0);
        let s3 = FeatureMap::filled(1, 2, 2, 3.0);
        let out = pyramid_concat(&[s1.clone(), s2, s3], 8, 8).unwrap();
        assert_eq!(out.channels(), 6);
        for (c, want) in [1.0, 1.0, 2.0, 2.0, 2.0, 3.0].iter().enumerate() {
            assert!(out.plane(c).iter().all(|v| (v - want).abs() < 1e-6));
        }
        assert_eq!(out.channel_slice(0..2).unwrap(), s1);
    }

    #[test]
    fn labels_by_hand() {
        let spec = BevGridSpec::centered(6, 6, 1.0).unwrap();
        assert_eq!(
            occupancy_labels_from_boxes(&[], &spec, 1)
                .unwrap()
                .positives(),
            0
        );
        // cell centres of cols/rows 2 and 3 straddle the metric origin at +-0.5
        let b = Detection::new(0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 0.0);
        let l = occupancy_labels_from_boxes(&[b], &spec, 1).unwrap();
        let on: Vec<usize> = (0..36).filter(|&i| l.labels[i] == 1).collect();
        assert_eq!(on, vec![2 * 6 + 2, 2 * 6 + 3, 3 * 6 + 2, 3 * 6 + 3]);
    }

    #[test]
    fn rotated_labels_match_point_in_box() {
        let spec = BevGridSpec::centered(32, 32, 0.5).unwrap();
        let b = Detection::new(0.7, -1.1, 0.0, 1.5, 2.0, 5.0, std::f64::consts::FRAC_PI_4);
        for scale in 1..=3 {
            let l = occupancy_labels_from_boxes(&[b], &spec, scale).unwrap();
            let g = spec.downscaled(1 << (scale - 1)).unwrap();
            for row in 0..g.height {
                for col in 0..g.width {
                    let [x, y] = g.cell_to_metric(col as f64, row as f64);
                    let (dx, dy) = (x - b.x, y - b.y);
                    let (s, c) = b.theta.sin_cos();
                    let inside = (c * dx + s * dy).abs() <= 2.5 && (-s * dx + c * dy).abs() <= 1.0;
                    assert_eq!(l.labels[row * g.width + col] == 1, inside);
                }
            }
        }
    }

    #[test]
    fn params_bundle_round_trip() {
        let mut rng = RngStream::new(5);
        let p = PyramidParams {
            refine: Some(Kernel2D::xavier(4, 4, 3, 3, &mut rng)),
            downsamplers: vec![average_downsampler(2, 4), average_downsampler(2, 2)],
            occ_heads: vec![
                Kernel2D::xavier(1, 4, 1, 1, &mut rng),
                Kernel2D::xavier(1, 2, 1, 1, &mut rng),
                Kernel2D::xavier(1, 2, 1, 1, &mut rng),
            ],
        };
        p.validate(4).unwrap();
        assert_eq!(p.level_channels(4), vec![4, 2, 2]);
        let mut b = Bundle::new();
        p.to_bundle(&mut b, "pyr");
        assert_eq!(PyramidParams::from_bundle(&b, "pyr").unwrap(), p);
    }
}
