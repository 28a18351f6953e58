use super::{FeatureMap, RngStream};
use crate::error::{ensure, Result};

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_map(input: &FeatureMap) -> FeatureMap {
    input.map(sigmoid)
}

/// `x * sigmoid(x)`
pub fn silu_map(input: &FeatureMap) -> FeatureMap {
    input.map(|x| x * sigmoid(x))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Channel,
    Height,
    Width,
}

/// Numerically stable softmax along one axis; every fibre sums to one.
pub fn softmax_over_axis(input: &FeatureMap, axis: Axis) -> FeatureMap {
    let (c, h, w) = input.dims();
    let (len, stride) = match axis {
        Axis::Channel => (c, h * w),
        Axis::Height => (h, w),
        Axis::Width => (w, 1),
    };
    let mut out = input.clone();
    if len == 0 {
        return out;
    }
    let data = input.data();
    let dst = out.data_mut();
    let mut buf = vec![0f64; len];
    let mut visit = |base: usize| {
        let mut max = f32::NEG_INFINITY;
        for i in 0..len {
            max = max.max(data[base + i * stride]);
        }
        let mut sum = 0.0f64;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = ((data[base + i * stride] - max) as f64).exp();
            sum += *b;
        }
        for (i, b) in buf.iter().enumerate() {
            dst[base + i * stride] = (b / sum) as f32;
        }
    };
    match axis {
        Axis::Channel => (0..h * w).for_each(&mut visit),
        Axis::Height => {
            for ch in 0..c {
                for x in 0..w {
                    visit(ch * h * w + x);
                }
            }
        }
        Axis::Width => {
            for ch in 0..c {
                for y in 0..h {
                    visit((ch * h + y) * w);
                }
            }
        }
    }
    out
}

fn zip_with(a: &FeatureMap, b: &FeatureMap, f: impl Fn(f32, f32) -> f32) -> Result<FeatureMap> {
    ensure!(
        a.same_shape(b),
        "shape mismatch: {:?} vs {:?}",
        a.dims(),
        b.dims()
    );
    let (c, h, w) = a.dims();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    FeatureMap::from_vec(c, h, w, data)
}

pub fn add(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    zip_with(a, b, |x, y| x + y)
}

pub fn mul(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    zip_with(a, b, |x, y| x * y)
}

pub fn scale(a: &FeatureMap, factor: f32) -> FeatureMap {
    a.map(|x| x * factor)
}

/// Stacks maps along the channel axis; spatial dims must agree.
pub fn concat_channels(maps: &[&FeatureMap]) -> Result<FeatureMap> {
    ensure!(!maps.is_empty(), "concat of zero maps");
    let (h, w) = (maps[0].height(), maps[0].width());
    let mut channels = 0;
    for m in maps {
        ensure!(
            m.height() == h && m.width() == w,
            "concat spatial mismatch: {}x{} vs {}x{}",
            m.height(),
            m.width(),
            h,
            w
        );
        channels += m.channels();
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for m in maps {
        data.extend_from_slice(m.data());
    }
    FeatureMap::from_vec(channels, h, w, data)
}

/// Standard-normal map drawn in storage order.
pub fn gaussian_draw(
    rng: &mut RngStream,
    channels: usize,
    height: usize,
    width: usize,
) -> FeatureMap {
    FeatureMap::from_fn(channels, height, width, |_, _, _| rng.gaussian() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-100.0) >= 0.0 && sigmoid(-100.0) < 1e-30);
        assert_eq!(sigmoid(100.0), 1.0);
    }

    #[test]
    fn softmax_sums_to_one_on_every_axis() {
        let mut rng = RngStream::new(3);
        let m = gaussian_draw(&mut rng, 3, 4, 5).map(|v| v * 4.0);
        for axis in [Axis::Channel, Axis::Height, Axis::Width] {
            let s = softmax_over_axis(&m, axis);
            assert!(s.data().iter().all(|&v| v >= 0.0));
            let (c, h, w) = m.dims();
            match axis {
                Axis::Channel => {
                    for y in 0..h {
                        for x in 0..w {
                            let sum: f64 = (0..c).map(|k| s.get(k, y, x) as f64).sum();
                            assert!((sum - 1.0).abs() < 1e-6);
                        }
                    }
                }
                Axis::Height => {
                    for k in 0..c {
                        for x in 0..w {
                            let sum: f64 = (0..h).map(|y| s.get(k, y, x) as f64).sum();
                            assert!((sum - 1.0).abs() < 1e-6);
                        }
                    }
                }
                Axis::Width => {
                    for k in 0..c {
                        for y in 0..h {
                            let sum: f64 = (0..w).map(|x| s.get(k, y, x) as f64).sum();
                            assert!((sum - 1.0).abs() < 1e-6);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn concat_stacks_channels_in_order() {
        let a = FeatureMap::filled(1, 2, 2, 1.0);
        let b = FeatureMap::filled(2, 2, 2, 2.0);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.dims(), (3, 2, 2));
        assert_eq!(c.plane(0), &[1.0; 4]);
        assert_eq!(c.plane(2), &[2.0; 4]);
        assert!(concat_channels(&[&a, &FeatureMap::zeros(1, 3, 2)]).is_err());
    }

    #[test]
    fn elementwise_ops_reject_mismatched_shapes() {
        let a = FeatureMap::filled(1, 2, 2, 3.0);
        let b = FeatureMap::filled(1, 2, 2, 2.0);
        assert_eq!(add(&a, &b).unwrap().data(), &[5.0; 4]);
        assert_eq!(mul(&a, &b).unwrap().data(), &[6.0; 4]);
        assert!(add(&a, &FeatureMap::zeros(2, 2, 2)).is_err());
    }

    #[test]
    fn gaussian_draw_moments() {
        let mut rng = RngStream::new(11);
        let m = gaussian_draw(&mut rng, 1, 100, 1000);
        let n = m.data().len() as f64;
        let mean: f64 = m.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = m
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
        let mut again = RngStream::new(11);
        assert_eq!(gaussian_draw(&mut again, 1, 100, 1000), m);
    }
}
