//! Simulated V2X link: pose noise on the sender's reported pose and a linear
//! bottleneck on every shared feature tensor.

use crate::error::{ensure, Result};
use crate::geometry::Pose2D;
use crate::pyramid::OccupancyMap;
use crate::tensor::{FeatureMap, RngStream};

pub const ALLOWED_RATIOS: [usize; 6] = [1, 2, 4, 8, 16, 32];

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelConfig {
    /// Standard deviation of the reported x and y, metres.
    pub pose_noise_xy: f64,
    /// Standard deviation of the reported yaw, radians.
    pub pose_noise_yaw: f64,
    pub compression_ratio: usize,
    /// Seeds the projection basis, fixed for a whole run.
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            pose_noise_xy: 0.0,
            pose_noise_yaw: 0.0,
            compression_ratio: 1,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            ALLOWED_RATIOS.contains(&self.compression_ratio),
            "compression ratio {} not in {:?}",
            self.compression_ratio,
            ALLOWED_RATIOS
        );
        ensure!(
            self.pose_noise_xy >= 0.0 && self.pose_noise_yaw >= 0.0,
            "pose noise must be non-negative"
        );
        Ok(())
    }
}

/// Bytes accounted for one shared `c x h x w` f32 tensor at `ratio`.
pub fn payload_bytes(c: usize, h: usize, w: usize, ratio: usize) -> f64 {
    (c * h * w * 4) as f64 / ratio as f64
}

/// Fixed random orthogonal projection onto `max(1, C / ratio)` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Compressor {
    channels: usize,
    /// `retained x channels`, orthonormal rows.
    basis: Vec<f64>,
}

impl Compressor {
    pub fn new(channels: usize, ratio: usize, seed: u64) -> Result<Self> {
        ensure!(
            channels > 0 && ratio > 0,
            "compressor needs positive channels and ratio"
        );
        let k = (channels / ratio).max(1);
        let mut rng = RngStream::new(seed).fork(channels as u64);
        let mut basis: Vec<f64> = Vec::with_capacity(k * channels);
        // modified Gram-Schmidt on Gaussian rows
        while basis.len() < k * channels {
            let mut v: Vec<f64> = (0..channels).map(|_| rng.gaussian()).collect();
            for row in basis.chunks(channels) {
                let d: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(row).for_each(|(x, r)| *x -= d * r);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                basis.extend(v.iter().map(|x| x / n));
            }
        }
        Ok(Self { channels, basis })
    }

    pub fn retained(&self) -> usize {
        self.basis.len() / self.channels
    }

    /// Row `i` of the basis.
    pub fn direction(&self, i: usize) -> &[f64] {
        &self.basis[i * self.channels..(i + 1) * self.channels]
    }

    pub fn encode(&self, map: &FeatureMap) -> Result<FeatureMap> {
        ensure!(
            map.channels() == self.channels,
            "compressor built for {} channels, map has {}",
            self.channels,
            map.channels()
        );
        let (_, h, w) = map.dims();
        let mut out = FeatureMap::zeros(self.retained(), h, w);
        for k in 0..self.retained() {
            let dir = self.direction(k);
            let mut acc = vec![0f64; h * w];
            for (c, &d) in dir.iter().enumerate() {
                acc.iter_mut()
                    .zip(map.plane(c))
                    .for_each(|(a, &v)| *a += d * v as f64);
            }
            out.plane_mut(k)
                .iter_mut()
                .zip(acc)
                .for_each(|(o, a)| *o = a as f32);
        }
        Ok(out)
    }

    pub fn decode(&self, code: &FeatureMap) -> Result<FeatureMap> {
        ensure!(
            code.channels() == self.retained(),
            "code has {} channels, expected {}",
            code.channels(),
            self.retained()
        );
        let (_, h, w) = code.dims();
        let mut out = FeatureMap::zeros(self.channels, h, w);
        for c in 0..self.channels {
            let mut acc = vec![0f64; h * w];
            for k in 0..self.retained() {
                let d = self.direction(k)[c];
                acc.iter_mut()
                    .zip(code.plane(k))
                    .for_each(|(a, &v)| *a += d * v as f64);
            }
            out.plane_mut(c)
                .iter_mut()
                .zip(acc)
                .for_each(|(o, a)| *o = a as f32);
        }
        Ok(out)
    }
}

/// What the ego receives from one sender.
#[derive(Clone, Debug, PartialEq)]
pub struct Transmission {
    pub levels: Vec<FeatureMap>,
    pub occupancy: Vec<OccupancyMap>,
    pub pose: Pose2D,
    pub bytes: f64,
}

/// Sends pyramid levels, occupancy maps and pose through the channel.
///
/// Features go through the projection bottleneck (skipped at ratio 1) and are
/// billed at `C H W 4 / ratio` bytes each. Occupancy maps travel uncompressed
/// and unbilled. Pose noise draws three standard normals from `noise` even
/// when the sigmas are zero, so runs that differ only in sigma share draws.
pub fn apply_channel(
    levels: &[FeatureMap],
    occupancy: &[OccupancyMap],
    pose: &Pose2D,
    cfg: &ChannelConfig,
    noise: &mut RngStream,
) -> Result<Transmission> {
    cfg.validate()?;
    let z = [noise.gaussian(), noise.gaussian(), noise.gaussian()];
    let noisy = Pose2D::new(
        pose.x + cfg.pose_noise_xy * z[0],
        pose.y + cfg.pose_noise_xy * z[1],
        pose.yaw() + cfg.pose_noise_yaw * z[2],
    );
    let mut bytes = 0.0;
    let mut sent = Vec::with_capacity(levels.len());
    for level in levels {
        let (c, h, w) = level.dims();
        bytes += payload_bytes(c, h, w, cfg.compression_ratio);
        if cfg.compression_ratio == 1 {
            sent.push(level.clone());
        } else {
            let comp = Compressor::new(c, cfg.compression_ratio, cfg.seed)?;
            sent.push(comp.decode(&comp.encode(level)?)?);
        }
    }
    Ok(Transmission {
        levels: sent,
        occupancy: occupancy.to_vec(),
        pose: noisy,
        bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_draw;

    #[test]
    fn clean_channel_is_identity() {
        let mut rng = RngStream::new(1);
        let levels = vec![gaussian_draw(&mut rng, 4, 6, 8)];
        let occ = vec![OccupancyMap::filled(6, 8, 0.3).unwrap()];
        let pose = Pose2D::new(3.0, -2.0, 0.4);
        let t = apply_channel(&levels, &occ, &pose, &ChannelConfig::default(), &mut rng).unwrap();
        assert_eq!(t.levels, levels);
        assert_eq!(t.occupancy, occ);
        assert_eq!(t.pose, pose);
        assert_eq!(t.bytes, (4 * 6 * 8 * 4) as f64);
    }

    #[test]
    fn payload_accounting_at_32x() {
        // 4 MiB tensor at 32x
        let bytes = payload_bytes(256, 64, 64, 32);
        assert_eq!(256 * 64 * 64 * 4, 4 * 1024 * 1024);
        assert_eq!(bytes / (1024.0 * 1024.0), 0.125);
    }

    #[test]
    fn basis_is_orthonormal_and_fixed() {
        let c = Compressor::new(32, 4, 7).unwrap();
        assert_eq!(c.retained(), 8);
        for i in 0..8 {
            for j in 0..8 {
                let d: f64 = c
                    .direction(i)
                    .iter()
                    .zip(c.direction(j))
                    .map(|(a, b)| a * b)
                    .sum();
                assert!((d - (i == j) as u8 as f64).abs() < 1e-12);
            }
        }
        assert_eq!(c, Compressor::new(32, 4, 7).unwrap());
        assert_eq!(Compressor::new(16, 32, 7).unwrap().retained(), 1);
    }

    #[test]
    fn retained_subspace_survives_round_trip() {
        let comp = Compressor::new(16, 4, 3).unwrap();
        let mut rng = RngStream::new(4);
        let (h, w) = (5, 7);
        let coeff = gaussian_draw(&mut rng, comp.retained(), h, w);
        let signal = comp.decode(&coeff).unwrap();
        let back = comp.decode(&comp.encode(&signal).unwrap()).unwrap();
        assert!(back.max_abs_diff(&signal) < 1e-5);
    }

    #[test]
    fn noise_scales_with_sigma_on_shared_draws() {
        let pose = Pose2D::identity();
        let cfg = |s: f64| ChannelConfig {
            pose_noise_xy: s,
            pose_noise_yaw: s.to_radians(),
            ..ChannelConfig::default()
        };
        let a = apply_channel(&[], &[], &pose, &cfg(0.2), &mut RngStream::new(9))
            .unwrap()
            .pose;
        let b = apply_channel(&[], &[], &pose, &cfg(0.4), &mut RngStream::new(9))
            .unwrap()
            .pose;
        assert!((b.x - 2.0 * a.x).abs() < 1e-12 && (b.y - 2.0 * a.y).abs() < 1e-12);
        assert!(ChannelConfig {
            compression_ratio: 3,
            ..ChannelConfig::default()
        }
        .validate()
        .is_err());
    }
}
