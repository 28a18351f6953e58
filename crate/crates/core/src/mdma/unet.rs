//! Two-level U-Net used for the one-step denoise.
//!
//! ```text
//! [perturbed | seed] (2C) -enc-> e1 (C, H)
//! e1 -down1 (stride 2)-> e2 (2C, H/2)
//! e2 -down2 (stride 2)-> b (4C, H/4) + time_proj(pe(t)) -mid-> m
//! up(m) | e2 -up1-> u1 (2C, H/2)
//! up(u1) | e1 -up2-> u2 (C, H) -out (1x1)-> C
//! ```
//!
//! Every 3x3 layer is followed by SiLU; `up` is a 2x bilinear resize.

use crate::error::{ensure, Result};
use crate::tensor::io::Bundle;
use crate::tensor::{
    concat_channels, conv2d, conv2d_strided, silu_map, sinusoidal_embedding, upsample_bilinear,
    FeatureMap, Kernel2D, Linear, RngStream,
};

#[derive(Clone, Debug, PartialEq)]
pub struct UnetParams {
    pub enc: Kernel2D,
    pub down1: Kernel2D,
    pub down2: Kernel2D,
    pub mid: Kernel2D,
    pub up1: Kernel2D,
    pub up2: Kernel2D,
    pub out: Kernel2D,
    /// Maps the sinusoidal step embedding (width 4C) to a per-channel bias.
    pub time_proj: Linear,
}

const NAMES: [&str; 7] = ["enc", "down1", "down2", "mid", "up1", "up2", "out"];

impl UnetParams {
    /// All-zero network for `channels` feature channels.
    pub fn zeros(channels: usize) -> Self {
        let c = channels;
        Self {
            enc: Kernel2D::zeros(c, 2 * c, 3, 3),
            down1: Kernel2D::zeros(2 * c, c, 3, 3),
            down2: Kernel2D::zeros(4 * c, 2 * c, 3, 3),
            mid: Kernel2D::zeros(4 * c, 4 * c, 3, 3),
            up1: Kernel2D::zeros(2 * c, 6 * c, 3, 3),
            up2: Kernel2D::zeros(c, 3 * c, 3, 3),
            out: Kernel2D::zeros(c, c, 1, 1),
            time_proj: Linear::zeros(4 * c, 4 * c),
        }
    }

    pub fn xavier(channels: usize, rng: &mut RngStream) -> Self {
        let c = channels;
        Self {
            enc: Kernel2D::xavier(c, 2 * c, 3, 3, rng),
            down1: Kernel2D::xavier(2 * c, c, 3, 3, rng),
            down2: Kernel2D::xavier(4 * c, 2 * c, 3, 3, rng),
            mid: Kernel2D::xavier(4 * c, 4 * c, 3, 3, rng),
            up1: Kernel2D::xavier(2 * c, 6 * c, 3, 3, rng),
            up2: Kernel2D::xavier(c, 3 * c, 3, 3, rng),
            out: Kernel2D::xavier(c, c, 1, 1, rng),
            time_proj: Linear::xavier(4 * c, 4 * c, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.out.out_channels()
    }

    fn kernels(&self) -> [&Kernel2D; 7] {
        [
            &self.enc,
            &self.down1,
            &self.down2,
            &self.mid,
            &self.up1,
            &self.up2,
            &self.out,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let want = [
            (c, 2 * c, 3),
            (2 * c, c, 3),
            (4 * c, 2 * c, 3),
            (4 * c, 4 * c, 3),
            (2 * c, 6 * c, 3),
            (c, 3 * c, 3),
            (c, c, 1),
        ];
        for ((k, (o, i, s)), name) in self.kernels().iter().zip(want).zip(NAMES) {
            ensure!(
                k.out_channels() == o && k.in_channels() == i && k.k_h() == s && k.k_w() == s,
                "U-Net layer {name} is {}x{}x{}x{}, expected {o}x{i}x{s}x{s}",
                k.out_channels(),
                k.in_channels(),
                k.k_h(),
                k.k_w()
            );
        }
        ensure!(
            self.time_proj.in_dim() == 4 * c && self.time_proj.out_dim() == 4 * c,
            "time projection must be {0}->{0}",
            4 * c
        );
        Ok(())
    }

    pub fn to_bundle(&self, bundle: &mut Bundle, prefix: &str) {
        for (k, name) in self.kernels().into_iter().zip(NAMES) {
            bundle.insert_kernel(&format!("{prefix}.{name}"), k);
        }
        bundle.insert_linear(&format!("{prefix}.time_proj"), &self.time_proj);
    }

    pub fn from_bundle(bundle: &Bundle, prefix: &str) -> Result<Self> {
        let k = |name: &str| bundle.kernel(&format!("{prefix}.{name}"));
        let p = Self {
            enc: k("enc")?,
            down1: k("down1")?,
            down2: k("down2")?,
            mid: k("mid")?,
            up1: k("up1")?,
            up2: k("up2")?,
            out: k("out")?,
            time_proj: bundle.linear(&format!("{prefix}.time_proj"))?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Per-channel bias added at the bottleneck for step `t`.
pub fn timestep_bias(params: &UnetParams, t: usize) -> Vec<f32> {
    let width = params.time_proj.in_dim();
    let table = sinusoidal_embedding(t + 1, width);
    params.time_proj.apply_vec(table.row(t))
}

/// One deterministic forward pass; returns `C` channels.
pub fn denoise_once(
    perturbed: &FeatureMap,
    t: usize,
    seed: &FeatureMap,
    params: &UnetParams,
) -> Result<FeatureMap> {
    params.validate()?;
    let (c, h, w) = perturbed.dims();
    ensure!(
        seed.dims() == (c, h, w),
        "seed {:?} does not match input {:?}",
        seed.dims(),
        (c, h, w)
    );
    ensure!(
        c == params.channels(),
        "U-Net built for {} channels, input has {c}",
        params.channels()
    );
    ensure!(
        h % 4 == 0 && w % 4 == 0,
        "U-Net needs dims divisible by 4, got {h}x{w}"
    );

    let x = concat_channels(&[perturbed, seed])?;
    let e1 = silu_map(&conv2d(&x, &params.enc, 1)?);
    let e2 = silu_map(&conv2d_strided(&e1, &params.down1, 2, 1)?);
    let mut b = silu_map(&conv2d_strided(&e2, &params.down2, 2, 1)?);
    let bias = timestep_bias(params, t);
    for (ch, &v) in bias.iter().enumerate() {
        if v != 0.0 {
            b.plane_mut(ch).iter_mut().for_each(|x| *x += v);
        }
    }
    let m = silu_map(&conv2d(&b, &params.mid, 1)?);
    let up = upsample_bilinear(&m, h / 2, w / 2)?;
    let u1 = silu_map(&conv2d(&concat_channels(&[&up, &e2])?, &params.up1, 1)?);
    let up = upsample_bilinear(&u1, h, w)?;
    let u2 = silu_map(&conv2d(&concat_channels(&[&up, &e1])?, &params.up2, 1)?);
    conv2d(&u2, &params.out, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_draw;

    type Grid = Vec<Vec<Vec<f64>>>;

    fn to_grid(m: &FeatureMap) -> Grid {
        let (c, h, w) = m.dims();
        (0..c)
            .map(|ch| {
                (0..h)
                    .map(|y| (0..w).map(|x| m.get(ch, y, x) as f64).collect())
                    .collect()
            })
            .collect()
    }

    fn conv(x: &Grid, k: &Kernel2D, stride: usize, pad: usize) -> Grid {
        let (h, w) = (x[0].len(), x[0][0].len());
        let s = k.k_h();
        let oh = (h + 2 * pad - s) / stride + 1;
        let ow = (w + 2 * pad - s) / stride + 1;
        (0..k.out_channels())
            .map(|o| {
                (0..oh)
                    .map(|oy| {
                        (0..ow)
                            .map(|ox| {
                                let mut acc = k.bias()[o] as f64;
                                for (i, plane) in x.iter().enumerate() {
                                    for ky in 0..s {
                                        for kx in 0..s {
                                            let y = (oy * stride + ky) as i64 - pad as i64;
                                            let xx = (ox * stride + kx) as i64 - pad as i64;
                                            if y >= 0
                                                && xx >= 0
                                                && (y as usize) < h
                                                && (xx as usize) < w
                                            {
                                                acc += k.weight(o, i, ky, kx) as f64
                                                    * plane[y as usize][xx as usize];
                                            }
                                        }
                                    }
                                }
                                acc
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn silu(x: Grid) -> Grid {
        x.into_iter()
            .map(|p| {
                p.into_iter()
                    .map(|r| r.into_iter().map(|v| v / (1.0 + (-v).exp())).collect())
                    .collect()
            })
            .collect()
    }

    /// Exact 2x half-pixel resize: each output sits a quarter cell from two
    /// source cells, weights 3/4 and 1/4, clamped at the borders.
    fn up2(x: &Grid) -> Grid {
        let (h, w) = (x[0].len(), x[0][0].len());
        let pick = |d: usize, n: usize| -> (usize, usize, f64) {
            let i = d / 2;
            if d.is_multiple_of(2) {
                if i == 0 {
                    (0, 0, 0.0)
                } else {
                    (i - 1, i, 0.75)
                }
            } else if i + 1 < n {
                (i, i + 1, 0.25)
            } else {
                (i, i, 0.0)
            }
        };
        x.iter()
            .map(|p| {
                (0..2 * h)
                    .map(|y| {
                        let (y0, y1, fy) = pick(y, h);
                        (0..2 * w)
                            .map(|xx| {
                                let (x0, x1, fx) = pick(xx, w);
                                let top = p[y0][x0] * (1.0 - fx) + p[y0][x1] * fx;
                                let bot = p[y1][x0] * (1.0 - fx) + p[y1][x1] * fx;
                                top * (1.0 - fy) + bot * fy
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn cat(a: &Grid, b: &Grid) -> Grid {
        a.iter().chain(b).cloned().collect()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let mut rng = RngStream::new(1);
        let x = gaussian_draw(&mut rng, 3, 8, 12);
        let s = gaussian_draw(&mut rng, 3, 8, 12);
        let out = denoise_once(&x, 10, &s, &UnetParams::zeros(3)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_rejects_odd_dims() {
        let mut rng = RngStream::new(2);
        let p = UnetParams::xavier(2, &mut rng);
        let x = gaussian_draw(&mut rng, 2, 8, 8);
        let s = gaussian_draw(&mut rng, 2, 8, 8);
        let a = denoise_once(&x, 5, &s, &p).unwrap();
        let b = denoise_once(&x, 5, &s, &p).unwrap();
        assert_eq!(a.data(), b.data());
        let odd = gaussian_draw(&mut rng, 2, 6, 8);
        assert!(denoise_once(&odd, 5, &odd, &p).is_err());
    }

    #[test]
    fn matches_layer_by_layer_trace() {
        let mut rng = RngStream::new(3);
        let mut p = UnetParams::xavier(2, &mut rng);
        for (i, b) in p.mid.bias_mut().iter_mut().enumerate() {
            *b = 0.1 * i as f32 - 0.3;
        }
        let x = gaussian_draw(&mut rng, 2, 8, 8);
        let s = gaussian_draw(&mut rng, 2, 8, 8);
        let t = 7;
        let got = denoise_once(&x, t, &s, &p).unwrap();

        let input = cat(&to_grid(&x), &to_grid(&s));
        let e1 = silu(conv(&input, &p.enc, 1, 1));
        let e2 = silu(conv(&e1, &p.down1, 2, 1));
        let mut b = silu(conv(&e2, &p.down2, 2, 1));
        // step embedding recomputed from its closed form
        let width = 8;
        let pe: Vec<f64> = (0..width)
            .map(|j| {
                let freq = 1.0 / 10000f64.powf(2.0 * (j / 2) as f64 / width as f64);
                let a = t as f64 * freq;
                if j % 2 == 0 {
                    a.sin()
                } else {
                    a.cos()
                }
            })
            .collect();
        for (o, plane) in b.iter_mut().enumerate() {
            let mut v = p.time_proj.bias()[o] as f64;
            for (i, e) in pe.iter().enumerate() {
                v += p.time_proj.weight()[o * width + i] as f64 * e;
            }
            plane.iter_mut().flatten().for_each(|x| *x += v);
        }
        let m = silu(conv(&b, &p.mid, 1, 1));
        let u1 = silu(conv(&cat(&up2(&m), &e2), &p.up1, 1, 1));
        let u2 = silu(conv(&cat(&up2(&u1), &e1), &p.up2, 1, 1));
        let want = conv(&u2, &p.out, 1, 0);

        for c in 0..2 {
            for y in 0..8 {
                for xx in 0..8 {
                    let d = (got.get(c, y, xx) as f64 - want[c][y][xx]).abs();
                    assert!(d < 1e-5, "({c},{y},{xx}) off by {d}");
                }
            }
        }
    }

    #[test]
    fn bundle_round_trip() {
        let p = UnetParams::xavier(2, &mut RngStream::new(4));
        let mut b = Bundle::new();
        p.to_bundle(&mut b, "unet");
        assert_eq!(UnetParams::from_bundle(&b, "unet").unwrap(), p);
    }
}
