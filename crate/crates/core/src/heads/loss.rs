//! Detection losses with analytic gradients w.r.t. the raw head outputs.
//!
//! Every loss takes f64 slices and returns `(loss, d loss / d input)`.

/// Loss weights and shape parameters of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub reg: f64,
    pub cls: f64,
    pub dir: f64,
    pub occ: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub smooth_l1_sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reg: 2.0,
            cls: 1.0,
            dir: 0.4,
            occ: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            smooth_l1_sigma: 3.0,
        }
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid focal loss summed over elements and divided by `max(1, #positives)`.
///
/// Per element, with `p = sigmoid(x)`:
/// `y = 1: -alpha (1 - p)^gamma log p`, `y = 0: -(1 - alpha) p^gamma log(1 - p)`.
pub fn sigmoid_focal_loss(
    logits: &[f64],
    labels: &[f64],
    alpha: f64,
    gamma: f64,
) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), labels.len(), "focal loss shape mismatch");
    let positives = labels.iter().filter(|&&y| y > 0.5).count();
    let norm = positives.max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.iter().zip(labels) {
        let p = sigmoid(x);
        let (l, g) = if y > 0.5 {
            let log_p = -softplus(-x);
            let q = 1.0 - p;
            (
                -alpha * q.powf(gamma) * log_p,
                alpha * q.powf(gamma) * (gamma * p * log_p - q),
            )
        } else {
            let log_q = -softplus(x);
            (
                -(1.0 - alpha) * p.powf(gamma) * log_q,
                (1.0 - alpha) * p.powf(gamma) * (p - gamma * (1.0 - p) * log_q),
            )
        };
        loss += l;
        grad.push(g / norm);
    }
    (loss / norm, grad)
}

/// Weighted smooth-L1 on `pred - target`, summed:
/// `0.5 sigma^2 d^2` for `|d| < 1 / sigma^2`, else `|d| - 0.5 / sigma^2`.
/// `weights` default to one; gradients are w.r.t. `pred`.
pub fn weighted_smooth_l1(
    pred: &[f64],
    target: &[f64],
    weights: Option<&[f64]>,
    sigma: f64,
) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len(), "smooth-L1 shape mismatch");
    if let Some(w) = weights {
        assert_eq!(w.len(), pred.len(), "smooth-L1 weight shape mismatch");
    }
    let s2 = sigma * sigma;
    let knee = 1.0 / s2;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for i in 0..pred.len() {
        let w = weights.map_or(1.0, |w| w[i]);
        let d = pred[i] - target[i];
        let (l, g) = if d.abs() < knee {
            (0.5 * s2 * d * d, s2 * d)
        } else {
            (d.abs() - 0.5 / s2, d.signum())
        };
        loss += w * l;
        grad.push(w * g);
    }
    (loss, grad)
}

/// Mean two-bin softmax cross-entropy. `logits` is `[n][2]` flattened,
/// `weights` (default one) scale each row before averaging over `n`.
pub fn direction_ce_loss(
    logits: &[f64],
    labels: &[u8],
    weights: Option<&[f64]>,
) -> (f64, Vec<f64>) {
    assert_eq!(
        logits.len(),
        labels.len() * 2,
        "direction loss shape mismatch"
    );
    let n = labels.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, &y) in labels.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let (a, b) = (logits[2 * i], logits[2 * i + 1]);
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        let p = [(a - lse).exp(), (b - lse).exp()];
        loss += w * (lse - logits[2 * i + y as usize]);
        for k in 0..2 {
            let onehot = if k == y as usize { 1.0 } else { 0.0 };
            grad[2 * i + k] = w * (p[k] - onehot) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

/// Component losses of one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub reg: f64,
    pub cls: f64,
    pub dir: f64,
    pub occ: f64,
}

impl LossBreakdown {
    /// `lambda_reg L_reg + lambda_cls L_cls + lambda_dir L_dir + lambda_occ L_occ`
    pub fn total(&self, w: &LossWeights) -> f64 {
        total_loss(self, w)
    }
}

pub fn total_loss(parts: &LossBreakdown, w: &LossWeights) -> f64 {
    w.reg * parts.reg + w.cls * parts.cls + w.dir * parts.dir + w.occ * parts.occ
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngStream;

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut buf = x.to_vec();
        (0..x.len())
            .map(|i| {
                buf[i] = x[i] + h;
                let up = f(&buf);
                buf[i] = x[i] - h;
                let down = f(&buf);
                buf[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn focal_hand_value() {
        let (l, _) = sigmoid_focal_loss(&[0.0], &[1.0], 0.25, 2.0);
        assert!((l - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.043322).abs() < 1e-6);
        let (l, _) = sigmoid_focal_loss(&[40.0], &[1.0], 0.25, 2.0);
        assert!(l < 1e-12);
    }

    #[test]
    fn focal_with_zero_gamma_is_weighted_bce() {
        let mut rng = RngStream::new(1);
        let x: Vec<f64> = (0..20).map(|_| rng.uniform(-4.0, 4.0)).collect();
        let y: Vec<f64> = (0..20).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let (l, _) = sigmoid_focal_loss(&x, &y, 0.25, 0.0);
        let pos = y.iter().filter(|&&v| v > 0.5).count() as f64;
        let bce: f64 = x
            .iter()
            .zip(&y)
            .map(|(&xi, &yi)| {
                let p = 1.0 / (1.0 + (-xi).exp());
                if yi > 0.5 {
                    -0.25 * p.ln()
                } else {
                    -0.75 * (1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / pos;
        assert!((l - bce).abs() < 1e-8);
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(2);
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let y: Vec<f64> = (0..6)
                .map(|_| (rng.uniform(0.0, 1.0) < 0.4) as u8 as f64)
                .collect();
            let (_, g) = sigmoid_focal_loss(&x, &y, 0.25, 2.0);
            let fd = central_diff(|v| sigmoid_focal_loss(v, &y, 0.25, 2.0).0, &x, 1e-4);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn smooth_l1_values_and_knee() {
        assert_eq!(weighted_smooth_l1(&[0.0], &[0.0], None, 3.0).0, 0.0);
        let (l, _) = weighted_smooth_l1(&[1.0], &[0.0], None, 3.0);
        assert!((l - (1.0 - 0.5 / 9.0)).abs() < 1e-12);
        assert!((l - 0.944444).abs() < 1e-6);
        let knee: f64 = 1.0 / 9.0;
        let quad = 0.5 * 9.0 * knee * knee;
        let lin = knee - 0.5 / 9.0;
        assert!((quad - lin).abs() < 1e-12);
        let eps = 1e-9;
        let (_, g_lo) = weighted_smooth_l1(&[knee - eps], &[0.0], None, 3.0);
        let (_, g_hi) = weighted_smooth_l1(&[knee + eps], &[0.0], None, 3.0);
        assert!((g_lo[0] - g_hi[0]).abs() < 1e-6);
    }

    #[test]
    fn smooth_l1_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(3);
        for _ in 0..20 {
            let p: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let t: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let w: Vec<f64> = (0..8).map(|_| rng.uniform(0.0, 2.0)).collect();
            // keep away from the knee where the second derivative jumps
            if p.iter()
                .zip(&t)
                .any(|(a, b)| ((a - b).abs() - 1.0 / 9.0).abs() < 1e-3)
            {
                continue;
            }
            let (_, g) = weighted_smooth_l1(&p, &t, Some(&w), 3.0);
            let fd = central_diff(|v| weighted_smooth_l1(v, &t, Some(&w), 3.0).0, &p, 1e-4);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn direction_ce_values_and_gradient() {
        let (l, _) = direction_ce_loss(&[0.0, 0.0], &[1], None);
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let (l, _) = direction_ce_loss(&[20.0, 0.0], &[0], None);
        assert!(l < 1e-8);
        let mut rng = RngStream::new(4);
        for _ in 0..20 {
            let x: Vec<f64> = (0..10).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let y: Vec<u8> = (0..5).map(|_| rng.below(0, 2) as u8).collect();
            let (_, g) = direction_ce_loss(&x, &y, None);
            let fd = central_diff(|v| direction_ce_loss(v, &y, None).0, &x, 1e-4);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn total_loss_weighting() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossBreakdown::default(), &w), 0.0);
        let ones = LossBreakdown {
            reg: 1.0,
            cls: 1.0,
            dir: 1.0,
            occ: 1.0,
        };
        assert_eq!(total_loss(&ones, &w), 4.4);
    }
}
