use super::{FeatureMap, Kernel2D};
use crate::error::{ensure, Result};

/// Direct 2D convolution, stride 1, symmetric zero padding.
///
/// Cross-correlation convention (no kernel flip):
/// `out[o, y, x] = b[o] + sum_{i, ky, kx} w[o, i, ky, kx] * in[i, y + ky - pad, x + kx - pad]`.
/// With `padding = (k - 1) / 2` the output keeps the input's spatial size.
pub fn conv2d(input: &FeatureMap, kernel: &Kernel2D, padding: usize) -> Result<FeatureMap> {
    conv2d_strided(input, kernel, 1, padding)
}

/// Strided variant of [`conv2d`]. Output size is
/// `(in + 2 * padding - k) / stride + 1` along each axis.
pub fn conv2d_strided(
    input: &FeatureMap,
    kernel: &Kernel2D,
    stride: usize,
    padding: usize,
) -> Result<FeatureMap> {
    ensure!(
        kernel.in_channels() == input.channels(),
        "conv2d channel mismatch: kernel expects {} input channels, map has {}",
        kernel.in_channels(),
        input.channels()
    );
    ensure!(
        kernel.k_h() % 2 == 1 && kernel.k_w() % 2 == 1,
        "conv2d needs odd kernel dims, got {}x{}",
        kernel.k_h(),
        kernel.k_w()
    );
    ensure!(stride >= 1, "conv2d stride must be positive");
    let (_, in_h, in_w) = input.dims();
    ensure!(
        in_h + 2 * padding >= kernel.k_h() && in_w + 2 * padding >= kernel.k_w(),
        "conv2d kernel {}x{} larger than padded input {}x{}",
        kernel.k_h(),
        kernel.k_w(),
        in_h + 2 * padding,
        in_w + 2 * padding
    );
    let out_h = (in_h + 2 * padding - kernel.k_h()) / stride + 1;
    let out_w = (in_w + 2 * padding - kernel.k_w()) / stride + 1;
    let (k_h, k_w) = (kernel.k_h(), kernel.k_w());

    // For each kernel column, the contiguous range of output columns whose
    // input column falls inside the map.
    let col_ranges: Vec<(usize, usize)> = (0..k_w)
        .map(|kx| valid_range(out_w, in_w, stride, kx, padding))
        .collect();

    if stride <= 2 {
        return Ok(conv2d_padded(input, kernel, stride, padding, out_h, out_w));
    }

    let mut out = FeatureMap::zeros(kernel.out_channels(), out_h, out_w);
    let mut acc = vec![0f64; out_h * out_w];
    for o in 0..kernel.out_channels() {
        acc.iter_mut().for_each(|a| *a = kernel.bias()[o] as f64);
        for i in 0..input.channels() {
            let taps = kernel.tap_slice(o, i);
            if taps.iter().all(|&w| w == 0.0) {
                continue;
            }
            let src = input.plane(i);
            for ky in 0..k_h {
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    let row = &src[iy as usize * in_w..(iy as usize + 1) * in_w];
                    let dst = &mut acc[oy * out_w..(oy + 1) * out_w];
                    for kx in 0..k_w {
                        let w = taps[ky * k_w + kx] as f64;
                        if w == 0.0 {
                            continue;
                        }
                        let (lo, hi) = col_ranges[kx];
                        if lo >= hi {
                            continue;
                        }
                        if stride == 1 {
                            let ix0 = lo + kx - padding;
                            for (d, &s) in dst[lo..hi].iter_mut().zip(&row[ix0..ix0 + (hi - lo)]) {
                                *d += w * s as f64;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = ox * stride + kx - padding;
                                dst[ox] += w * row[ix] as f64;
                            }
                        }
                    }
                }
            }
        }
        for (d, &a) in out.plane_mut(o).iter_mut().zip(&acc) {
            *d = a as f32;
        }
    }
    Ok(out)
}

/// Stride 1 or 2 over an f64 copy of the input with the padding baked in.
/// Each kernel row is summed before it touches the accumulator.
fn conv2d_padded(
    input: &FeatureMap,
    kernel: &Kernel2D,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
) -> FeatureMap {
    let (channels, in_h, in_w) = input.dims();
    let (k_h, k_w) = (kernel.k_h(), kernel.k_w());
    let (pad_h, pad_w) = (in_h + 2 * padding, in_w + 2 * padding);
    let mut padded = vec![0f64; channels * pad_h * pad_w];
    for i in 0..channels {
        for (y, row) in input.plane(i).chunks_exact(in_w).enumerate() {
            let start = (i * pad_h + y + padding) * pad_w + padding;
            for (d, &s) in padded[start..start + in_w].iter_mut().zip(row) {
                *d = s as f64;
            }
        }
    }

    let live = (0..kernel.out_channels())
        .flat_map(|o| (0..channels).map(move |i| (o, i)))
        .filter(|&(o, i)| kernel.tap_slice(o, i).iter().any(|&w| w != 0.0))
        .count();
    if live * DENSE_DIVISOR >= kernel.out_channels() * channels {
        return conv2d_gemm(&padded, (pad_h, pad_w), kernel, stride, out_h, out_w);
    }

    let mut out = FeatureMap::zeros(kernel.out_channels(), out_h, out_w);
    let mut acc = vec![0f64; out_h * out_w];
    let mut taps64 = vec![0f64; k_w];
    for o in 0..kernel.out_channels() {
        acc.iter_mut().for_each(|a| *a = kernel.bias()[o] as f64);
        for i in 0..channels {
            let taps = kernel.tap_slice(o, i);
            if taps.iter().all(|&w| w == 0.0) {
                continue;
            }
            let src = &padded[i * pad_h * pad_w..(i + 1) * pad_h * pad_w];
            for ky in 0..k_h {
                let row_taps = &taps[ky * k_w..(ky + 1) * k_w];
                if row_taps.iter().all(|&w| w == 0.0) {
                    continue;
                }
                for (t, &w) in taps64.iter_mut().zip(row_taps) {
                    *t = w as f64;
                }
                for oy in 0..out_h {
                    let iy = oy * stride + ky;
                    let row = &src[iy * pad_w..(iy + 1) * pad_w];
                    let dst = &mut acc[oy * out_w..(oy + 1) * out_w];
                    match (k_w, stride) {
                        (1, 1) => row_taps_sum::<1, 1>(dst, row, &taps64),
                        (3, 1) => row_taps_sum::<3, 1>(dst, row, &taps64),
                        (5, 1) => row_taps_sum::<5, 1>(dst, row, &taps64),
                        (7, 1) => row_taps_sum::<7, 1>(dst, row, &taps64),
                        (3, 2) => row_taps_sum::<3, 2>(dst, row, &taps64),
                        _ => {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let window = &row[ox * stride..];
                                *d += taps64.iter().zip(window).map(|(w, s)| w * s).sum::<f64>();
                            }
                        }
                    }
                }
            }
        }
        for (d, &a) in out.plane_mut(o).iter_mut().zip(&acc) {
            *d = a as f32;
        }
    }
    out
}

/// Kernels with at least this reciprocal fraction of non-zero channel pairs
/// go through the GEMM path.
const DENSE_DIVISOR: usize = 4;

/// One `out_c x in_c` by `in_c x out_w` product per output row and tap,
/// reading the padded input through strides.
fn conv2d_gemm(
    padded: &[f64],
    (pad_h, pad_w): (usize, usize),
    kernel: &Kernel2D,
    stride: usize,
    out_h: usize,
    out_w: usize,
) -> FeatureMap {
    let (oc, ic, k_h, k_w) = (
        kernel.out_channels(),
        kernel.in_channels(),
        kernel.k_h(),
        kernel.k_w(),
    );
    let taps = k_h * k_w;
    // per tap, row-major out_c x in_c
    let mut weights = vec![0f64; taps * oc * ic];
    for o in 0..oc {
        for i in 0..ic {
            for (t, &w) in kernel.tap_slice(o, i).iter().enumerate() {
                weights[(t * oc + o) * ic + i] = w as f64;
            }
        }
    }
    let plane = out_h * out_w;
    let mut acc = vec![0f64; oc * plane];
    for (o, chunk) in acc.chunks_exact_mut(plane).enumerate() {
        chunk.fill(kernel.bias()[o] as f64);
    }
    let in_plane = pad_h * pad_w;
    for oy in 0..out_h {
        for ky in 0..k_h {
            for kx in 0..k_w {
                let t = ky * k_w + kx;
                let a = &weights[t * oc * ic..(t + 1) * oc * ic];
                let b = &padded[(oy * stride + ky) * pad_w + kx..];
                let c = &mut acc[oy * out_w..];
                // SAFETY: every index touched lies inside `a`, `b` and `c`:
                // b[i * in_plane + ox * stride] stays inside channel i's padded
                // plane, and c[o * plane + ox] inside output plane o.
                unsafe {
                    matrixmultiply::dgemm(
                        oc,
                        ic,
                        out_w,
                        1.0,
                        a.as_ptr(),
                        ic as isize,
                        1,
                        b.as_ptr(),
                        in_plane as isize,
                        stride as isize,
                        1.0,
                        c.as_mut_ptr(),
                        plane as isize,
                        1,
                    );
                }
            }
        }
    }
    let data = acc.into_iter().map(|v| v as f32).collect();
    FeatureMap::from_vec(oc, out_h, out_w, data).expect("shape computed above")
}

#[inline(always)]
fn row_taps_sum<const K: usize, const S: usize>(dst: &mut [f64], row: &[f64], taps: &[f64]) {
    let taps: [f64; K] = taps[..K].try_into().unwrap();
    let row = &row[..(dst.len() - 1) * S + K];
    for (ox, d) in dst.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in 0..K {
            s += taps[k] * row[ox * S + k];
        }
        *d += s;
    }
}

/// Output indices `[lo, hi)` for which `o * stride + k - pad` lands in `[0, len)`.
fn valid_range(
    out_len: usize,
    in_len: usize,
    stride: usize,
    k: usize,
    pad: usize,
) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    // largest o with o * stride + k - pad <= in_len - 1
    let limit = in_len as isize - 1 + pad as isize - k as isize;
    let hi = if limit < 0 {
        0
    } else {
        (limit as usize / stride + 1).min(out_len)
    };
    (lo.min(hi), hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gaussian_draw, RngStream};

    /// Quadruple loop straight from the definition.
    fn naive_conv(input: &FeatureMap, k: &Kernel2D, stride: usize, pad: usize) -> FeatureMap {
        let (c, h, w) = input.dims();
        let oh = (h + 2 * pad - k.k_h()) / stride + 1;
        let ow = (w + 2 * pad - k.k_w()) / stride + 1;
        FeatureMap::from_fn(k.out_channels(), oh, ow, |o, y, x| {
            let mut s = k.bias()[o] as f64;
            for i in 0..c {
                for ky in 0..k.k_h() {
                    for kx in 0..k.k_w() {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        let ix = (x * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            s += k.weight(o, i, ky, kx) as f64
                                * input.get(i, iy as usize, ix as usize) as f64;
                        }
                    }
                }
            }
            s as f32
        })
    }

    fn random_kernel(o: usize, i: usize, k: usize, rng: &mut RngStream) -> Kernel2D {
        let mut kern = Kernel2D::xavier(o, i, k, k, rng);
        for b in kern.bias_mut() {
            *b = rng.gaussian() as f32;
        }
        kern
    }

    #[test]
    fn ones_kernel_sums_neighbourhood() {
        let input = FeatureMap::filled(1, 3, 3, 1.0);
        let kernel = Kernel2D::new(1, 1, 3, 3, vec![1.0; 9], vec![0.0]).unwrap();
        let out = conv2d(&input, &kernel, 1).unwrap();
        assert_eq!(out.dims(), (1, 3, 3));
        assert_eq!(out.get(0, 1, 1), 9.0);
        assert_eq!(out.get(0, 0, 0), 4.0);
        assert_eq!(out.get(0, 0, 1), 6.0);
    }

    #[test]
    fn identity_pointwise_kernel() {
        let mut rng = RngStream::new(1);
        let input = gaussian_draw(&mut rng, 3, 4, 6);
        let out = conv2d(&input, &Kernel2D::identity(3, 1), 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn matches_naive_loop_on_small_case() {
        let mut rng = RngStream::new(2);
        let input = gaussian_draw(&mut rng, 2, 5, 5);
        let kernel = random_kernel(3, 2, 3, &mut rng);
        let fast = conv2d(&input, &kernel, 1).unwrap();
        let slow = naive_conv(&input, &kernel, 1, 1);
        assert!(fast.max_abs_diff(&slow) < 1e-6);
    }

    #[test]
    fn matches_naive_loop_over_random_configs() {
        let mut rng = RngStream::new(3);
        for trial in 0..120 {
            let c = 1 + rng.below(0, 3);
            let o = 1 + rng.below(0, 3);
            let k = [1, 3, 5, 7][rng.below(0, 4)];
            let h = k + rng.below(0, 6);
            let w = k + rng.below(0, 6);
            let stride = rng.below(1, 4);
            let pad = rng.below(0, k / 2 + 2);
            let input = gaussian_draw(&mut rng, c, h, w);
            let mut kernel = random_kernel(o, c, k, &mut rng);
            // odd trials keep one live channel pair, some with empty kernel
            // rows, so the sparse path runs too
            if trial % 2 == 1 {
                let keep = (rng.below(0, o), rng.below(0, c));
                for oo in 0..o {
                    for ii in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                if (oo, ii) != keep || ky == 0 {
                                    kernel.set_weight(oo, ii, ky, kx, 0.0);
                                }
                            }
                        }
                    }
                }
            }
            let fast = conv2d_strided(&input, &kernel, stride, pad).unwrap();
            let slow = naive_conv(&input, &kernel, stride, pad);
            assert_eq!(fast.dims(), slow.dims());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!(
                    (a - b).abs() <= 1e-6 * b.abs().max(1.0),
                    "trial {trial}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn stride_two_halves_even_dims() {
        let input = FeatureMap::zeros(2, 8, 16);
        let out = conv2d_strided(&input, &Kernel2D::zeros(4, 2, 3, 3), 2, 1).unwrap();
        assert_eq!(out.dims(), (4, 4, 8));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let input = FeatureMap::zeros(2, 3, 3);
        assert!(conv2d(&input, &Kernel2D::zeros(1, 3, 3, 3), 1).is_err());
        assert!(conv2d(&input, &Kernel2D::zeros(1, 2, 2, 2), 1).is_err());
    }
}
