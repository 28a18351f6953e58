use super::RngStream;
use crate::error::{ensure, Result};

/// A sequence of `len` vectors of width `dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokens {
    len: usize,
    dim: usize,
    data: Vec<f32>,
}

impl Tokens {
    pub fn new(len: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == len * dim,
            "token data length {} != {}x{}",
            data.len(),
            len,
            dim
        );
        Ok(Self { len, dim, data })
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        Self {
            len,
            dim,
            data: vec![0.0; len * dim],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Adds `other` row by row; shapes must agree.
    pub fn add_assign(&mut self, other: &Tokens) -> Result<()> {
        ensure!(
            self.len == other.len && self.dim == other.dim,
            "token shape mismatch {}x{} vs {}x{}",
            self.len,
            self.dim,
            other.len,
            other.dim
        );
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Dense affine map `y = W x + b` with `W` stored `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        ensure!(
            weight.len() == in_dim * out_dim && bias.len() == out_dim,
            "linear {}->{} got {} weights and {} biases",
            in_dim,
            out_dim,
            weight.len(),
            bias.len()
        );
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Ones on the leading diagonal; rectangular shapes truncate or zero-pad.
    pub fn identity(in_dim: usize, out_dim: usize) -> Self {
        let mut l = Self::zeros(in_dim, out_dim);
        for i in 0..in_dim.min(out_dim) {
            l.weight[i * in_dim + i] = 1.0;
        }
        l
    }

    pub fn xavier(in_dim: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.uniform(-bound, bound) as f32)
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut [f32] {
        &mut self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    pub fn set(&mut self, out: usize, inp: usize, v: f32) {
        self.weight[out * self.in_dim + inp] = v;
    }

    pub fn apply_vec(&self, x: &[f32]) -> Vec<f32> {
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let s: f64 = row.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum();
                (s + self.bias[o] as f64) as f32
            })
            .collect()
    }

    pub fn apply(&self, x: &Tokens) -> Result<Tokens> {
        ensure!(
            x.dim == self.in_dim,
            "linear expects width {}, tokens have {}",
            self.in_dim,
            x.dim
        );
        let mut data = Vec::with_capacity(x.len * self.out_dim);
        for i in 0..x.len {
            data.extend(self.apply_vec(x.row(i)));
        }
        Tokens::new(x.len, self.out_dim, data)
    }
}

/// Projections of one multi-head attention block; all are `dim -> dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct MhaWeights {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MhaWeights {
    pub fn new(
        heads: usize,
        query: Linear,
        key: Linear,
        value: Linear,
        output: Linear,
    ) -> Result<Self> {
        let dim = query.out_dim();
        ensure!(
            heads > 0 && dim.is_multiple_of(heads),
            "model dim {dim} not divisible by {heads} heads"
        );
        for l in [&query, &key, &value, &output] {
            ensure!(
                l.in_dim() == dim && l.out_dim() == dim,
                "attention projections must all be {dim}x{dim}"
            );
        }
        Ok(Self {
            heads,
            query,
            key,
            value,
            output,
        })
    }

    pub fn xavier(dim: usize, heads: usize, rng: &mut RngStream) -> Result<Self> {
        Self::new(
            heads,
            Linear::xavier(dim, dim, rng),
            Linear::xavier(dim, dim, rng),
            Linear::xavier(dim, dim, rng),
            Linear::xavier(dim, dim, rng),
        )
    }

    pub fn dim(&self) -> usize {
        self.query.out_dim()
    }
}

/// Scaled dot-product attention per head, heads concatenated, then the
/// output projection.
pub fn multi_head_attention(
    query: &Tokens,
    key: &Tokens,
    value: &Tokens,
    weights: &MhaWeights,
) -> Result<Tokens> {
    Ok(multi_head_attention_with_weights(query, key, value, weights)?.0)
}

/// As [`multi_head_attention`], also returning the softmax weights laid out
/// `[head][query][key]`.
pub fn multi_head_attention_with_weights(
    query: &Tokens,
    key: &Tokens,
    value: &Tokens,
    weights: &MhaWeights,
) -> Result<(Tokens, Vec<f64>)> {
    let dim = weights.dim();
    let heads = weights.heads;
    ensure!(
        heads > 0 && dim.is_multiple_of(heads),
        "model dim {dim} not divisible by {heads} heads"
    );
    ensure!(
        key.len == value.len,
        "key and value lengths differ: {} vs {}",
        key.len,
        value.len
    );
    ensure!(!key.is_empty(), "attention needs at least one key");
    let q = weights.query.apply(query)?;
    let k = weights.key.apply(key)?;
    let v = weights.value.apply(value)?;
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let mut concat = Tokens::zeros(q.len, dim);
    let mut attn = vec![0f64; heads * q.len * k.len];
    let mut scores = vec![0f64; k.len];
    for h in 0..heads {
        let span = h * head_dim..(h + 1) * head_dim;
        for i in 0..q.len {
            let qi = &q.row(i)[span.clone()];
            let mut max = f64::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &k.row(j)[span.clone()];
                *s = qi
                    .iter()
                    .zip(kj)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum::<f64>()
                    * scale;
                max = max.max(*s);
            }
            let mut sum = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let row = &mut attn[(h * q.len + i) * k.len..(h * q.len + i + 1) * k.len];
            for (r, s) in row.iter_mut().zip(&scores) {
                *r = s / sum;
            }
            let out = &mut concat.row_mut(i)[span.clone()];
            for (d, o) in out.iter_mut().enumerate() {
                let acc: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(j, &a)| a * v.row(j)[h * head_dim + d] as f64)
                    .sum();
                *o = acc as f32;
            }
        }
    }
    Ok((weights.output.apply(&concat)?, attn))
}

/// Fixed sinusoidal table, `len x dim`: even columns `sin(pos / 10000^(2i/dim))`,
/// odd columns the matching cosine.
pub fn sinusoidal_embedding(len: usize, dim: usize) -> Tokens {
    let mut t = Tokens::zeros(len, dim);
    for pos in 0..len {
        let row = t.row_mut(pos);
        for (j, v) in row.iter_mut().enumerate() {
            let pair = (j / 2) as f64;
            let freq = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
            let angle = pos as f64 * freq;
            *v = if j % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    t
}
