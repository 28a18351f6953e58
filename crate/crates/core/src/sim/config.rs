//! Flat `key = value` run configuration.
//!
//! Blank lines and everything after `#` are ignored. Unknown keys are errors.
//! [`RunConfig::to_text`] writes every key, so a written file parses back to
//! the same configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{ensure, Error, Result};
use crate::geometry::BevGridSpec;
use crate::heads::{DEFAULT_NMS_IOU, DEFAULT_SCORE_THRESH};
use crate::mdma::{DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};

use super::{ChannelConfig, ModelDims, SceneConfig};

/// Which ground-truth boxes a frame is scored against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GtPolicy {
    /// Boxes visible to at least one participating agent.
    Participating,
    /// Boxes visible to at least one agent in the scene, participating or not.
    VisibleToAny,
    All,
}

impl FromStr for GtPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "participating" => Ok(Self::Participating),
            "visible" => Ok(Self::VisibleToAny),
            "all" => Ok(Self::All),
            _ => Err(Error::config(format!("unknown gt_policy `{s}`"))),
        }
    }
}

impl GtPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Participating => "participating",
            Self::VisibleToAny => "visible",
            Self::All => "all",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamsKind {
    Structured,
    Seeded,
}

impl FromStr for ParamsKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(Self::Structured),
            "seeded" => Ok(Self::Seeded),
            _ => Err(Error::config(format!("unknown params kind `{s}`"))),
        }
    }
}

impl ParamsKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Structured => "structured",
            Self::Seeded => "seeded",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// First scene seed.
    pub seed: u64,
    /// Independent seed replicas; replica `r` uses seed `seed + r`.
    pub seeds: usize,
    pub frames: usize,
    /// Agents in each generated scene.
    pub agents: usize,
    /// How many of them share features; `0` means all.
    pub participants: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub range_x: f64,
    pub range_y: f64,
    pub bev_channels: usize,
    pub cam_channels: usize,
    pub cam_h: usize,
    pub cam_w: usize,
    pub cameras: usize,
    pub heads: usize,
    pub mdma: bool,
    pub mdma_t: usize,
    pub mdma_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub mdma_candidates: usize,
    pub mdma_seed: u64,
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub pose_noise_xy: f64,
    pub pose_noise_yaw_deg: f64,
    pub compression: usize,
    pub channel_seed: u64,
    pub gt_policy: GtPolicy,
    pub params: ParamsKind,
    pub params_seed: u64,
    /// Bundle overriding the preset when set.
    pub params_file: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            seeds: 1,
            frames: 4,
            agents: 2,
            participants: 0,
            grid_h: 64,
            grid_w: 128,
            range_x: 102.4,
            range_y: 51.2,
            bev_channels: 32,
            cam_channels: 16,
            cam_h: 8,
            cam_w: 32,
            cameras: 4,
            heads: 4,
            mdma: true,
            mdma_t: 10,
            mdma_steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            mdma_candidates: 1,
            mdma_seed: 7,
            score_thresh: DEFAULT_SCORE_THRESH,
            nms_iou: DEFAULT_NMS_IOU,
            pose_noise_xy: 0.0,
            pose_noise_yaw_deg: 0.0,
            compression: 1,
            channel_seed: 11,
            gt_policy: GtPolicy::Participating,
            params: ParamsKind::Structured,
            params_seed: 3,
            params_file: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "seeds" => self.seeds = parse(key, v)?,
            "frames" => self.frames = parse(key, v)?,
            "agents" => self.agents = parse(key, v)?,
            "participants" => self.participants = parse(key, v)?,
            "grid_h" => self.grid_h = parse(key, v)?,
            "grid_w" => self.grid_w = parse(key, v)?,
            "range_x" => self.range_x = parse(key, v)?,
            "range_y" => self.range_y = parse(key, v)?,
            "bev_channels" => self.bev_channels = parse(key, v)?,
            "cam_channels" => self.cam_channels = parse(key, v)?,
            "cam_h" => self.cam_h = parse(key, v)?,
            "cam_w" => self.cam_w = parse(key, v)?,
            "cameras" => self.cameras = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "mdma" => self.mdma = parse_bool(key, v)?,
            "mdma_t" => self.mdma_t = parse(key, v)?,
            "mdma_steps" => self.mdma_steps = parse(key, v)?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "mdma_candidates" => self.mdma_candidates = parse(key, v)?,
            "mdma_seed" => self.mdma_seed = parse(key, v)?,
            "score_thresh" => self.score_thresh = parse(key, v)?,
            "nms_iou" => self.nms_iou = parse(key, v)?,
            "pose_noise_xy" => self.pose_noise_xy = parse(key, v)?,
            "pose_noise_yaw_deg" => self.pose_noise_yaw_deg = parse(key, v)?,
            "compression" => self.compression = parse(key, v)?,
            "channel_seed" => self.channel_seed = parse(key, v)?,
            "gt_policy" => self.gt_policy = v.parse()?,
            "params" => self.params = v.parse()?,
            "params_seed" => self.params_seed = parse(key, v)?,
            "params_file" => self.params_file = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("seeds", self.seeds.to_string());
        kv("frames", self.frames.to_string());
        kv("agents", self.agents.to_string());
        kv("participants", self.participants.to_string());
        kv("grid_h", self.grid_h.to_string());
        kv("grid_w", self.grid_w.to_string());
        kv("range_x", self.range_x.to_string());
        kv("range_y", self.range_y.to_string());
        kv("bev_channels", self.bev_channels.to_string());
        kv("cam_channels", self.cam_channels.to_string());
        kv("cam_h", self.cam_h.to_string());
        kv("cam_w", self.cam_w.to_string());
        kv("cameras", self.cameras.to_string());
        kv("heads", self.heads.to_string());
        kv("mdma", self.mdma.to_string());
        kv("mdma_t", self.mdma_t.to_string());
        kv("mdma_steps", self.mdma_steps.to_string());
        kv("beta_start", self.beta_start.to_string());
        kv("beta_end", self.beta_end.to_string());
        kv("mdma_candidates", self.mdma_candidates.to_string());
        kv("mdma_seed", self.mdma_seed.to_string());
        kv("score_thresh", self.score_thresh.to_string());
        kv("nms_iou", self.nms_iou.to_string());
        kv("pose_noise_xy", self.pose_noise_xy.to_string());
        kv("pose_noise_yaw_deg", self.pose_noise_yaw_deg.to_string());
        kv("compression", self.compression.to_string());
        kv("channel_seed", self.channel_seed.to_string());
        kv("gt_policy", self.gt_policy.name().to_string());
        kv("params", self.params.name().to_string());
        kv("params_seed", self.params_seed.to_string());
        kv(
            "params_file",
            self.params_file
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("out_dir", self.out_dir.display().to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.seeds > 0 && self.frames > 0,
            "need at least one seed and one frame"
        );
        ensure!(
            (1..=5).contains(&self.agents),
            "agents must be in 1..=5, got {}",
            self.agents
        );
        ensure!(
            self.participants <= self.agents,
            "participants {} exceed agents {}",
            self.participants,
            self.agents
        );
        ensure!(
            self.grid_h.is_multiple_of(4) && self.grid_w.is_multiple_of(4),
            "grid {}x{} must be divisible by 4",
            self.grid_h,
            self.grid_w
        );
        ensure!(self.mdma_steps > 0, "diffusion needs at least one step");
        ensure!(
            (1..=self.mdma_steps).contains(&self.mdma_t),
            "mdma_t must be in 1..={}, got {}",
            self.mdma_steps,
            self.mdma_t
        );
        ensure!(self.mdma_candidates > 0, "mdma_candidates must be positive");
        ensure!(
            (0.0..1.0).contains(&self.score_thresh) && (0.0..=1.0).contains(&self.nms_iou),
            "thresholds must lie in [0, 1)"
        );
        self.bev_spec()?;
        self.dims().validate()?;
        self.scene().validate()?;
        self.channel().validate()
    }

    pub fn bev_spec(&self) -> Result<BevGridSpec> {
        BevGridSpec::from_range(self.grid_h, self.grid_w, self.range_x, self.range_y)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            bev_channels: self.bev_channels,
            cam_channels: self.cam_channels,
            cam_height: self.cam_h,
            cam_width: self.cam_w,
            heads: self.heads,
            ..ModelDims::default()
        }
    }

    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            bev_channels: self.bev_channels,
            cam_channels: self.cam_channels,
            cam_height: self.cam_h,
            cam_width: self.cam_w,
            cameras: self.cameras,
            ..SceneConfig::default()
        }
    }

    pub fn channel(&self) -> ChannelConfig {
        ChannelConfig {
            pose_noise_xy: self.pose_noise_xy,
            pose_noise_yaw: self.pose_noise_yaw_deg.to_radians(),
            compression_ratio: self.compression,
            seed: self.channel_seed,
        }
    }

    /// Number of agents that share features.
    pub fn active_agents(&self) -> usize {
        if self.participants == 0 {
            self.agents
        } else {
            self.participants
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg =
            RunConfig::parse("# toy run\nagents = 3\nmdma = off  # ablate\n\ngt_policy = all\n")
                .unwrap();
        assert_eq!(cfg.agents, 3);
        assert!(!cfg.mdma);
        assert_eq!(cfg.gt_policy, GtPolicy::All);
        assert_eq!(cfg.frames, RunConfig::default().frames);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.pose_noise_xy = 0.4;
        cfg.params_file = Some(PathBuf::from("w.drcb"));
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("agents").is_err());
        assert!(RunConfig::parse("agents = many").is_err());
        assert!(RunConfig::parse("agents = 7").is_err());
        assert!(RunConfig::parse("compression = 3").is_err());
        assert!(RunConfig::parse("mdma_t = 0").is_err());
    }
}
