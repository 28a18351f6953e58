//! End-to-end frame: per-agent camera fusion and pyramids, the V2X channel,
//! occupancy-weighted fusion on the ego, refinement, heads and NMS.

use std::time::Instant;

use rayon::prelude::*;

use crate::adaptive_conv::adaptive_conv_detailed;
use crate::error::{ensure, Result};
use crate::geometry::{warp_bev, BevGridSpec, CameraModel};
use crate::heads::{decode_and_nms, run_heads, AnchorGrid, Detection, HeadConfig, HeadOutputs};
use crate::mdma::{make_schedule, mdma_refine_candidates, DiffusionSchedule};
use crate::pyramid::{
    build_pyramid, fuse_agents_at_scale, occupancy_head, pyramid_concat, OccupancyMap,
};
use crate::rg_attn::multi_camera_fuse;
use crate::tensor::io::Bundle;
use crate::tensor::{FeatureMap, RngStream};

use super::{
    ap_triplet, apply_channel, generate_scene, ChannelConfig, FrameBoxes, GtPolicy, ModelDims,
    ParamsKind, PipelineParams, RunConfig, Scene,
};

pub const STAGES: [&str; 8] = [
    "camera_fusion",
    "pyramid",
    "channel",
    "agent_fusion",
    "adaptive_conv",
    "mdma",
    "heads",
    "decode_nms",
];

/// Wall-clock milliseconds per stage, in [`STAGES`] order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub ms: [f64; 8],
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.ms.iter().sum()
    }

    fn add(&mut self, stage: usize, since: Instant) {
        self.ms[stage] += since.elapsed().as_secs_f64() * 1e3;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineFlags {
    pub mdma: bool,
    pub t: usize,
    pub candidates: usize,
    pub seed: u64,
}

/// Everything needed to run frames, built once per experiment.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub spec: BevGridSpec,
    pub dims: ModelDims,
    pub params: PipelineParams,
    pub head_cfg: HeadConfig,
    pub anchors: AnchorGrid,
    pub schedule: DiffusionSchedule,
    pub channel: ChannelConfig,
    pub refine: RefineFlags,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput {
    pub detections: Vec<Detection>,
    /// Feature bytes received by the ego over the channel.
    pub bytes: f64,
    pub timings: StageTimings,
    /// Named intermediate maps, filled only on request.
    pub intermediates: Vec<(String, FeatureMap)>,
}

impl Pipeline {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = cfg.dims();
        let params = match &cfg.params_file {
            Some(path) => PipelineParams::from_bundle(&Bundle::load(path)?, &dims)?,
            None => match cfg.params {
                ParamsKind::Structured => PipelineParams::structured(&dims, cfg.params_seed)?,
                ParamsKind::Seeded => PipelineParams::seeded(&dims, cfg.params_seed)?,
            },
        };
        let spec = cfg.bev_spec()?;
        Ok(Self {
            anchors: AnchorGrid::new(
                spec.clone(),
                dims.anchors,
                super::ANCHOR_SIZE,
                super::ANCHOR_Z,
            ),
            head_cfg: dims.head_config(cfg.score_thresh, cfg.nms_iou),
            spec,
            dims,
            params,
            schedule: make_schedule(cfg.mdma_steps, cfg.beta_start, cfg.beta_end)?,
            channel: cfg.channel(),
            refine: RefineFlags {
                mdma: cfg.mdma,
                t: cfg.mdma_t,
                candidates: cfg.mdma_candidates,
                seed: cfg.mdma_seed,
            },
        })
    }

    /// Runs one frame with the first `participants` agents of `scene`
    /// sharing features with agent 0.
    ///
    /// Channel noise is drawn from `channel.seed` forked by scene seed and
    /// agent, MDMA noise from `refine.seed` forked by scene seed, so a frame
    /// is reproducible on its own and grid points share noise draws.
    pub fn run_frame(&self, scene: &Scene, participants: usize, keep: bool) -> Result<FrameOutput> {
        ensure!(
            scene.spec == self.spec,
            "scene grid {}x{} differs from the pipeline grid {}x{}",
            scene.spec.height,
            scene.spec.width,
            self.spec.height,
            self.spec.width
        );
        ensure!(
            (1..=scene.agents.len()).contains(&participants),
            "participants {participants} outside 1..={}",
            scene.agents.len()
        );
        let p = &self.params;
        let mut timings = StageTimings::default();
        let mut inter: Vec<(String, FeatureMap)> = Vec::new();
        let mut record = |name: String, map: &FeatureMap| {
            if keep {
                inter.push((name, map.clone()));
            }
        };
        let ego_pose = scene.ego().pose;
        let noise_root = RngStream::new(self.channel.seed).fork(scene.seed);
        let mut levels_all: Vec<Vec<FeatureMap>> = Vec::with_capacity(participants);
        let mut occ_all: Vec<Vec<OccupancyMap>> = Vec::with_capacity(participants);
        let mut bytes = 0.0;

        for (k, agent) in scene.agents.iter().take(participants).enumerate() {
            let t0 = Instant::now();
            let cams: Vec<(CameraModel, FeatureMap)> = agent
                .cameras
                .iter()
                .cloned()
                .zip(agent.camera_features.iter().cloned())
                .collect();
            let fused = multi_camera_fuse(
                &agent.lidar,
                &cams,
                &self.dims.rg_attn(),
                &p.rg_attn,
                &self.spec,
            )?;
            timings.add(0, t0);
            record(format!("agent{k}_camera_fused"), &fused);

            let t0 = Instant::now();
            let pyramid =
                build_pyramid(&fused, p.pyramid.refine.as_ref(), &p.pyramid.downsamplers)?;
            let occ = pyramid
                .levels()
                .iter()
                .zip(&p.pyramid.occ_heads)
                .map(|(l, h)| occupancy_head(l, h))
                .collect::<Result<Vec<_>>>()?;
            timings.add(1, t0);

            let t0 = Instant::now();
            let (levels, occ) = if k == 0 {
                (pyramid.into_levels(), occ)
            } else {
                let mut rng = noise_root.fork(k as u64);
                let sent =
                    apply_channel(pyramid.levels(), &occ, &agent.pose, &self.channel, &mut rng)?;
                bytes += sent.bytes;
                let mut levels = Vec::with_capacity(sent.levels.len());
                let mut occs = Vec::with_capacity(sent.levels.len());
                for (s, (level, o)) in sent.levels.iter().zip(&sent.occupancy).enumerate() {
                    let spec = self.spec.downscaled(1 << s)?;
                    levels.push(warp_bev(level, &sent.pose, &ego_pose, &spec)?);
                    occs.push(OccupancyMap::new(warp_bev(
                        o.as_map(),
                        &sent.pose,
                        &ego_pose,
                        &spec,
                    )?)?);
                }
                (levels, occs)
            };
            timings.add(2, t0);
            for (s, (l, o)) in levels.iter().zip(&occ).enumerate() {
                record(format!("agent{k}_level{s}"), l);
                record(format!("agent{k}_occ{s}"), o.as_map());
            }
            levels_all.push(levels);
            occ_all.push(occ);
        }

        let t0 = Instant::now();
        let scales = (0..levels_all[0].len())
            .map(|s| {
                let feats: Vec<&FeatureMap> = levels_all.iter().map(|l| &l[s]).collect();
                let occs: Vec<&OccupancyMap> = occ_all.iter().map(|o| &o[s]).collect();
                fuse_agents_at_scale(&feats, &occs)
            })
            .collect::<Result<Vec<_>>>()?;
        let concat = pyramid_concat(&scales, self.spec.height, self.spec.width)?;
        timings.add(3, t0);
        for (s, m) in scales.iter().enumerate() {
            record(format!("fused_scale{s}"), m);
        }
        record("concat".into(), &concat);

        let t0 = Instant::now();
        let adapted = adaptive_conv_detailed(&concat, &p.adaptive)?;
        timings.add(4, t0);
        record("adaptive_conv".into(), &adapted.output);
        record("adaptive_weights".into(), &adapted.weights);

        let t0 = Instant::now();
        let bev = if self.refine.mdma {
            let mut rng = RngStream::new(self.refine.seed).fork(scene.seed);
            let out = mdma_refine_candidates(
                &adapted.output,
                &p.mdma,
                &self.schedule,
                self.refine.t,
                self.refine.candidates,
                &mut rng,
            )?;
            record("mdma_seed".into(), &out.seed);
            record("mdma_perturbed".into(), &out.perturbed);
            record("mdma_denoised".into(), &out.denoised);
            record("mdma_w2".into(), &out.w2);
            out.final_map
        } else {
            adapted.output
        };
        timings.add(5, t0);
        record("refined".into(), &bev);

        let t0 = Instant::now();
        let heads: HeadOutputs = run_heads(&bev, &self.head_cfg, &p.heads)?;
        timings.add(6, t0);
        record("cls".into(), &heads.cls);
        record("reg".into(), &heads.reg);
        record("dir".into(), &heads.dir);
        record("occ".into(), &heads.occ);

        let t0 = Instant::now();
        let detections = decode_and_nms(
            &heads,
            &self.anchors,
            self.head_cfg.score_thresh,
            self.head_cfg.nms_iou,
        )?;
        timings.add(7, t0);

        Ok(FrameOutput {
            detections,
            bytes,
            timings,
            intermediates: inter,
        })
    }
}

/// Scene seed of frame `frame` in replica `seed`.
pub fn scene_seed(seed: u64, frame: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(frame as u64)
}

/// Ground truth a frame is scored against.
pub fn ground_truth(scene: &Scene, policy: GtPolicy, participants: usize) -> Vec<Detection> {
    match policy {
        GtPolicy::Participating => scene.visible_to_first(participants),
        GtPolicy::VisibleToAny => scene.visible_to_first(scene.agents.len()),
        GtPolicy::All => scene.ground_truth.clone(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub scene_seed: u64,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<Detection>,
    pub bytes: f64,
    pub timings: StageTimings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub config: RunConfig,
    pub frames: Vec<FrameRecord>,
    /// AP at IoU 0.3, 0.5, 0.7.
    pub ap: [f64; 3],
    pub mean_bytes: f64,
    pub mean_timings: StageTimings,
}

impl ExperimentResult {
    pub fn ms_per_frame(&self) -> f64 {
        self.mean_timings.total()
    }
}

/// Runs every `(replica, frame)` of `cfg` and scores them together. Frames
/// run in parallel and are collected in order.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult> {
    let pipeline = Pipeline::from_config(cfg)?;
    let jobs: Vec<u64> = (0..cfg.seeds)
        .flat_map(|r| (0..cfg.frames).map(move |f| scene_seed(cfg.seed + r as u64, f)))
        .collect();
    let frames = jobs
        .par_iter()
        .map(|&s| run_scene_frame(cfg, &pipeline, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarise(cfg.clone(), frames))
}

/// Generates the scene for `seed` and runs one frame on it.
pub fn run_scene_frame(cfg: &RunConfig, pipeline: &Pipeline, seed: u64) -> Result<FrameRecord> {
    let scene = generate_scene(&pipeline.spec, &cfg.scene(), cfg.agents, seed)?;
    let participants = cfg.active_agents();
    let out = pipeline.run_frame(&scene, participants, false)?;
    Ok(FrameRecord {
        scene_seed: seed,
        detections: out.detections,
        ground_truth: ground_truth(&scene, cfg.gt_policy, participants),
        bytes: out.bytes,
        timings: out.timings,
    })
}

pub fn summarise(config: RunConfig, frames: Vec<FrameRecord>) -> ExperimentResult {
    let boxes: Vec<FrameBoxes> = frames
        .iter()
        .map(|f| FrameBoxes {
            detections: f.detections.clone(),
            ground_truth: f.ground_truth.clone(),
        })
        .collect();
    let n = frames.len().max(1) as f64;
    let mut mean = StageTimings::default();
    for f in &frames {
        mean.ms
            .iter_mut()
            .zip(f.timings.ms)
            .for_each(|(m, v)| *m += v / n);
    }
    ExperimentResult {
        ap: ap_triplet(&boxes),
        mean_bytes: frames.iter().map(|f| f.bytes).sum::<f64>() / n,
        mean_timings: mean,
        config,
        frames,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdma::MdmaParams;

    fn toy() -> RunConfig {
        RunConfig {
            frames: 1,
            ..RunConfig::default()
        }
    }

    #[test]
    fn colocated_twin_equals_single_agent() {
        let cfg = toy();
        let p = Pipeline::from_config(&cfg).unwrap();
        let mut scene = generate_scene(&p.spec, &cfg.scene(), 2, 5).unwrap();
        scene.agents[1] = scene.agents[0].clone();
        let one = p.run_frame(&scene, 1, true).unwrap();
        let two = p.run_frame(&scene, 2, true).unwrap();
        let get = |o: &FrameOutput, n: &str| {
            o.intermediates
                .iter()
                .find(|(k, _)| k == n)
                .unwrap()
                .1
                .clone()
        };
        for name in ["fused_scale0", "fused_scale1", "fused_scale2", "refined"] {
            assert!(
                get(&one, name).max_abs_diff(&get(&two, name)) < 1e-5,
                "{name}"
            );
        }
        assert_eq!(one.detections.len(), two.detections.len());
    }

    #[test]
    fn identity_mdma_keeps_detections() {
        let cfg = toy();
        let mut p = Pipeline::from_config(&cfg).unwrap();
        p.params.mdma = MdmaParams::identity(p.dims.fused_channels());
        let scene = generate_scene(&p.spec, &cfg.scene(), 2, 6).unwrap();
        let with = p.run_frame(&scene, 2, false).unwrap();
        p.refine.mdma = false;
        let without = p.run_frame(&scene, 2, false).unwrap();
        assert_eq!(with.detections, without.detections);
        assert!(!with.detections.is_empty());
    }

    #[test]
    fn frames_are_reproducible_and_bytes_accounted() {
        let mut cfg = toy();
        cfg.compression = 4;
        cfg.pose_noise_xy = 0.3;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.frames[0].detections, b.frames[0].detections);
        let [c0, c1, c2] = cfg.dims().level_channels();
        let (h, w) = (cfg.grid_h, cfg.grid_w);
        let want = (c0 * h * w + c1 * h * w / 4 + c2 * h * w / 16) as f64 * 4.0 / 4.0;
        assert_eq!(a.mean_bytes, want);
    }

    #[test]
    fn structured_model_finds_visible_cars() {
        let cfg = RunConfig {
            frames: 3,
            agents: 1,
            ..RunConfig::default()
        };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.ap[0] > 0.5, "AP@0.3 = {}", r.ap[0]);
    }
}
