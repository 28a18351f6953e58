//! One-parameter sweeps over the experiment configuration.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};

use super::{run_scene_frame, scene_seed, summarise, Pipeline, RunConfig, ALLOWED_RATIOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Number of participating agents; scenes are generated with the largest
    /// grid value so every point sees the same scenes.
    Agents,
    /// Pose noise: `value` metres on x and y and `value` degrees on yaw.
    Pose,
    Compression,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agents" => Ok(Self::Agents),
            "pose" => Ok(Self::Pose),
            "compression" => Ok(Self::Compression),
            _ => Err(Error::config(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Agents => "agents",
            Self::Pose => "pose",
            Self::Compression => "compression",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    /// AP at IoU 0.3, 0.5, 0.7.
    pub ap: [f64; 3],
    pub bytes: f64,
    pub ms_per_frame: f64,
}

/// Configuration of one grid point.
pub fn sweep_point(
    base: &RunConfig,
    param: SweepParam,
    value: f64,
    grid: &[f64],
) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match param {
        SweepParam::Agents => {
            ensure!(
                value.fract() == 0.0 && value >= 1.0,
                "agent count must be a positive integer, got {value}"
            );
            let max = grid.iter().cloned().fold(value, f64::max) as usize;
            cfg.agents = max.max(base.agents);
            cfg.participants = value as usize;
        }
        SweepParam::Pose => {
            ensure!(value >= 0.0, "pose noise must be non-negative, got {value}");
            cfg.pose_noise_xy = value;
            cfg.pose_noise_yaw_deg = value;
        }
        SweepParam::Compression => {
            ensure!(
                value.fract() == 0.0 && ALLOWED_RATIOS.contains(&(value as usize)),
                "compression ratio must be one of {ALLOWED_RATIOS:?}, got {value}"
            );
            cfg.compression = value as usize;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs every grid point on the same scenes. All frames of all points run in
/// parallel; rows come back in grid order.
pub fn run_sweep(base: &RunConfig, param: SweepParam, grid: &[f64]) -> Result<Vec<SweepRow>> {
    ensure!(!grid.is_empty(), "sweep grid is empty");
    let configs = grid
        .iter()
        .map(|&v| sweep_point(base, param, v, grid))
        .collect::<Result<Vec<_>>>()?;
    let pipelines = configs
        .iter()
        .map(Pipeline::from_config)
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (0..base.seeds)
        .flat_map(|r| (0..base.frames).map(move |f| scene_seed(base.seed + r as u64, f)))
        .collect();
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| seeds.iter().map(move |&s| (g, s)))
        .collect();
    let mut records = jobs
        .par_iter()
        .map(|&(g, s)| run_scene_frame(&configs[g], &pipelines[g], s))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    Ok(configs
        .into_iter()
        .zip(grid)
        .map(|(cfg, &value)| {
            let r = summarise(cfg, records.by_ref().take(seeds.len()).collect());
            SweepRow {
                param,
                value,
                ap: r.ap,
                bytes: r.mean_bytes,
                ms_per_frame: r.ms_per_frame(),
            }
        })
        .collect())
}

/// Writes the sweep table. Timing is wall-clock and therefore left out
/// unless asked for, so that identical runs give identical files.
pub fn write_sweep_csv(
    out: &mut impl Write,
    rows: &[SweepRow],
    timing: bool,
) -> std::io::Result<()> {
    write!(out, "param,value,ap30,ap50,ap70,bytes")?;
    if timing {
        write!(out, ",ms_per_frame")?;
    }
    writeln!(out)?;
    for r in rows {
        write!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.0}",
            r.param.name(),
            r.value,
            r.ap[0],
            r.ap[1],
            r.ap[2],
            r.bytes
        )?;
        if timing {
            write!(out, ",{:.3}", r.ms_per_frame)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parses a comma-separated grid such as `0,0.2,0.4`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let grid = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad grid value `{v}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    ensure!(!grid.is_empty(), "sweep grid is empty");
    Ok(grid)
}
