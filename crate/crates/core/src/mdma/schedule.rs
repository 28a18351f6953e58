use crate::error::{ensure, Result};
use crate::tensor::{FeatureMap, RngStream};

/// Linear-beta noise schedule.
///
/// `betas[i]` is the beta of step `i + 1`; `alpha_bar(t)` is the product of
/// `1 - beta` over steps `1..=t`, with `alpha_bar(0) == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Default number of steps.
pub const DEFAULT_STEPS: usize = 20;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// `beta_i = start + (end - start) * i / (T - 1)` for `i = 0..T`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    ensure!(steps >= 1, "schedule needs at least one step");
    ensure!(
        beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
        "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
    );
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut acc = 1.0;
    let alpha_bars = betas
        .iter()
        .map(|b| {
            acc *= 1.0 - b;
            acc
        })
        .collect();
    Ok(DiffusionSchedule { betas, alpha_bars })
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("valid default schedule")
    }
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `alpha_bar` for steps `1..=T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        ensure!(
            t <= self.steps(),
            "step {t} beyond schedule length {}",
            self.steps()
        );
        Ok(if t == 0 { 1.0 } else { self.alpha_bars[t - 1] })
    }
}

/// `sqrt(ab) * input + sqrt(1 - ab) * eps`, `eps` drawn in data order.
pub fn perturb_with_alpha_bar(
    input: &FeatureMap,
    alpha_bar: f64,
    rng: &mut RngStream,
) -> Result<FeatureMap> {
    ensure!(
        (0.0..=1.0).contains(&alpha_bar),
        "alpha_bar {alpha_bar} outside [0, 1]"
    );
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let (c, h, w) = input.dims();
    let data = input
        .data()
        .iter()
        .map(|&x| (a * x as f64 + b * rng.gaussian()) as f32)
        .collect();
    FeatureMap::from_vec(c, h, w, data)
}

/// Forward noising to step `t` (`1 <= t <= T`).
pub fn forward_perturb(
    input: &FeatureMap,
    schedule: &DiffusionSchedule,
    t: usize,
    rng: &mut RngStream,
) -> Result<FeatureMap> {
    ensure!(
        (1..=schedule.steps()).contains(&t),
        "step {t} outside 1..={}",
        schedule.steps()
    );
    perturb_with_alpha_bar(input, schedule.alpha_bar(t)?, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_products() {
        let s = make_schedule(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        let s = make_schedule(1, 1e-12, 1e-12).unwrap();
        assert!((s.alpha_bar(1).unwrap() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        assert!(make_schedule(0, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 0.03, 0.02).is_err());
        assert!(make_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn default_is_strictly_decreasing() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.steps(), 20);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.betas().iter().all(|&b| b > 0.0 && b < 1.0));
    }

    #[test]
    fn perturb_limits() {
        let mut rng = RngStream::new(1);
        let x = FeatureMap::from_fn(2, 3, 4, |c, y, z| (c + y * z) as f32);
        assert_eq!(perturb_with_alpha_bar(&x, 1.0, &mut rng).unwrap(), x);
        let s = DiffusionSchedule::default();
        assert!(forward_perturb(&x, &s, 0, &mut rng).is_err());
        assert!(forward_perturb(&x, &s, 21, &mut rng).is_err());
        let noise = perturb_with_alpha_bar(&FeatureMap::zeros(1, 100, 100), 0.0, &mut rng).unwrap();
        let mean = noise.data().iter().map(|&v| v as f64).sum::<f64>() / 1e4;
        let var = noise
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / 1e4;
        assert!(mean.abs() < 0.05 && (var - 1.0).abs() < 0.05);
    }
}
