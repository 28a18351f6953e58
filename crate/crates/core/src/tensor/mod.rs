//! Dense tensor substrate shared by every fusion stage.
//!
//! Everything is a [`FeatureMap`] (channels x height x width, f32, row-major)
//! or a [`Kernel2D`]. Operations are free functions over immutable inputs.

mod attention;
mod conv;
pub mod io;
mod ops;
mod rng;
mod sample;

pub use attention::{
    multi_head_attention, multi_head_attention_with_weights, sinusoidal_embedding, Linear,
    MhaWeights, Tokens,
};
pub use conv::{conv2d, conv2d_strided};
pub use io::{read_tensor, write_tensor, RawTensor};
pub use ops::{
    add, concat_channels, gaussian_draw, mul, scale, sigmoid, sigmoid_map, silu_map,
    softmax_over_axis, Axis,
};
pub use rng::RngStream;
pub use sample::{
    bilinear_sample, bilinear_sample_point, bilinear_scatter, bilinear_scatter_unnormalized,
    scatter_weights, upsample_bilinear, SamplePoints, SCATTER_EPS,
};

use crate::error::{ensure, Result};

/// Channel-major dense map: `data[c * h * w + y * w + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == channels * height * width,
            "feature map data length {} != {}x{}x{}",
            data.len(),
            channels,
            height,
            width
        );
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a map by evaluating `f(c, y, x)` at every element.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies channels `range` into a new map.
    pub fn channel_slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        ensure!(
            range.start <= range.end && range.end <= self.channels,
            "channel range {:?} out of bounds for {} channels",
            range,
            self.channels
        );
        let n = self.plane_len();
        Ok(Self {
            channels: range.len(),
            height: self.height,
            width: self.width,
            data: self.data[range.start * n..range.end * n].to_vec(),
        })
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.dims() == other.dims()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Inner product accumulated in f64.
    pub fn dot(&self, other: &FeatureMap) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Convolution weights laid out `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2D {
    out_channels: usize,
    in_channels: usize,
    k_h: usize,
    k_w: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl Kernel2D {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        k_h: usize,
        k_w: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        ensure!(
            weights.len() == out_channels * in_channels * k_h * k_w,
            "kernel weight length {} != {}x{}x{}x{}",
            weights.len(),
            out_channels,
            in_channels,
            k_h,
            k_w
        );
        ensure!(
            bias.len() == out_channels,
            "kernel bias length {} != out_channels {}",
            bias.len(),
            out_channels
        );
        Ok(Self {
            out_channels,
            in_channels,
            k_h,
            k_w,
            weights,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, k_h: usize, k_w: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            k_h,
            k_w,
            weights: vec![0.0; out_channels * in_channels * k_h * k_w],
            bias: vec![0.0; out_channels],
        }
    }

    /// Square kernel mapping each input channel onto the same output channel
    /// through its centre tap.
    pub fn identity(channels: usize, k: usize) -> Self {
        let mut kernel = Self::zeros(channels, channels, k, k);
        for c in 0..channels {
            kernel.set_weight(c, c, k / 2, k / 2, 1.0);
        }
        kernel
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier(
        out_channels: usize,
        in_channels: usize,
        k_h: usize,
        k_w: usize,
        rng: &mut RngStream,
    ) -> Self {
        let fan_in = (in_channels * k_h * k_w) as f64;
        let fan_out = (out_channels * k_h * k_w) as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        let weights = (0..out_channels * in_channels * k_h * k_w)
            .map(|_| rng.uniform(-bound, bound) as f32)
            .collect();
        Self {
            out_channels,
            in_channels,
            k_h,
            k_w,
            weights,
            bias: vec![0.0; out_channels],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn k_h(&self) -> usize {
        self.k_h
    }

    pub fn k_w(&self) -> usize {
        self.k_w
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_channels + i) * self.k_h + ky) * self.k_w + kx]
    }

    #[inline]
    pub fn set_weight(&mut self, o: usize, i: usize, ky: usize, kx: usize, v: f32) {
        self.weights[((o * self.in_channels + i) * self.k_h + ky) * self.k_w + kx] = v;
    }

    /// Weights of one `(out, in)` pair, row-major `k_h x k_w`.
    pub fn tap_slice(&self, o: usize, i: usize) -> &[f32] {
        let n = self.k_h * self.k_w;
        let start = (o * self.in_channels + i) * n;
        &self.weights[start..start + n]
    }

    /// Scales every weight and bias.
    pub fn scaled(mut self, factor: f32) -> Self {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.bias.iter_mut().for_each(|b| *b *= factor);
        self
    }

    /// Same-size zero padding for this kernel, `(k - 1) / 2`.
    pub fn same_padding(&self) -> usize {
        (self.k_h.max(self.k_w) - 1) / 2
    }
}
