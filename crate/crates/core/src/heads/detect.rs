use std::io::Write;

use super::boxes::{bev_iou, AnchorGrid, Detection};
use super::loss::{
    direction_ce_loss, sigmoid_focal_loss, weighted_smooth_l1, LossBreakdown, LossWeights,
};
use crate::error::{ensure, Result};
use crate::tensor::io::Bundle;
use crate::tensor::{conv2d, sigmoid, FeatureMap, Kernel2D, RngStream};

pub const DEFAULT_SCORE_THRESH: f64 = 0.2;
pub const DEFAULT_NMS_IOU: f64 = 0.15;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub in_channels: usize,
    pub n_anchor: usize,
    pub score_thresh: f64,
    pub nms_iou: f64,
}

impl HeadConfig {
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            n_anchor: 6,
            score_thresh: DEFAULT_SCORE_THRESH,
            nms_iou: DEFAULT_NMS_IOU,
        }
    }

    /// `(cls, reg, dir, occ)` output channel counts.
    pub fn output_channels(&self) -> (usize, usize, usize, usize) {
        (self.n_anchor, 7 * self.n_anchor, 2 * self.n_anchor, 1)
    }
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self::new(256)
    }
}

/// Four 1x1 convolutions over the final BEV.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub cls: Kernel2D,
    pub reg: Kernel2D,
    pub dir: Kernel2D,
    pub occ: Kernel2D,
}

impl HeadParams {
    pub fn zeros(cfg: &HeadConfig) -> Self {
        let (c, r, d, o) = cfg.output_channels();
        let i = cfg.in_channels;
        Self {
            cls: Kernel2D::zeros(c, i, 1, 1),
            reg: Kernel2D::zeros(r, i, 1, 1),
            dir: Kernel2D::zeros(d, i, 1, 1),
            occ: Kernel2D::zeros(o, i, 1, 1),
        }
    }

    pub fn xavier(cfg: &HeadConfig, rng: &mut RngStream) -> Self {
        let (c, r, d, o) = cfg.output_channels();
        let i = cfg.in_channels;
        Self {
            cls: Kernel2D::xavier(c, i, 1, 1, rng),
            reg: Kernel2D::xavier(r, i, 1, 1, rng),
            dir: Kernel2D::xavier(d, i, 1, 1, rng),
            occ: Kernel2D::xavier(o, i, 1, 1, rng),
        }
    }

    pub fn validate(&self, cfg: &HeadConfig) -> Result<()> {
        let (c, r, d, o) = cfg.output_channels();
        for (k, want, name) in [
            (&self.cls, c, "cls"),
            (&self.reg, r, "reg"),
            (&self.dir, d, "dir"),
            (&self.occ, o, "occ"),
        ] {
            ensure!(
                k.k_h() == 1 && k.k_w() == 1,
                "{name} head must be 1x1, got {}x{}",
                k.k_h(),
                k.k_w()
            );
            ensure!(
                k.out_channels() == want && k.in_channels() == cfg.in_channels,
                "{name} head maps {}->{}, expected {}->{want}",
                k.in_channels(),
                k.out_channels(),
                cfg.in_channels
            );
        }
        Ok(())
    }

    pub fn to_bundle(&self, bundle: &mut Bundle, prefix: &str) {
        bundle.insert_kernel(&format!("{prefix}.cls"), &self.cls);
        bundle.insert_kernel(&format!("{prefix}.reg"), &self.reg);
        bundle.insert_kernel(&format!("{prefix}.dir"), &self.dir);
        bundle.insert_kernel(&format!("{prefix}.occ"), &self.occ);
    }

    pub fn from_bundle(bundle: &Bundle, prefix: &str) -> Result<Self> {
        Ok(Self {
            cls: bundle.kernel(&format!("{prefix}.cls"))?,
            reg: bundle.kernel(&format!("{prefix}.reg"))?,
            dir: bundle.kernel(&format!("{prefix}.dir"))?,
            occ: bundle.kernel(&format!("{prefix}.occ"))?,
        })
    }
}

/// Raw logits / residuals of the four heads.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub cls: FeatureMap,
    pub reg: FeatureMap,
    pub dir: FeatureMap,
    pub occ: FeatureMap,
}

pub fn run_heads(bev: &FeatureMap, cfg: &HeadConfig, params: &HeadParams) -> Result<HeadOutputs> {
    params.validate(cfg)?;
    ensure!(
        bev.channels() == cfg.in_channels,
        "heads expect {} channels, BEV has {}",
        cfg.in_channels,
        bev.channels()
    );
    Ok(HeadOutputs {
        cls: conv2d(bev, &params.cls, 0)?,
        reg: conv2d(bev, &params.reg, 0)?,
        dir: conv2d(bev, &params.dir, 0)?,
        occ: conv2d(bev, &params.occ, 0)?,
    })
}

/// Greedy NMS: visit boxes by descending score (ties by index) and keep a box
/// unless its IoU with an already kept box exceeds `iou_thresh`.
/// Returns indices into `boxes` in keep order.
pub fn nms_indices(boxes: &[Detection], iou_thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    // boxes whose circumscribed circles are apart cannot overlap
    let radius: Vec<f64> = boxes.iter().map(|b| 0.5 * b.l.hypot(b.w)).collect();
    let apart = |a: usize, b: usize| {
        let reach = radius[a] + radius[b];
        (boxes[a].x - boxes[b].x).powi(2) + (boxes[a].y - boxes[b].y).powi(2) > reach * reach
    };
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| {
            (iou_thresh >= 0.0 && apart(k, i)) || bev_iou(&boxes[k], &boxes[i]) <= iou_thresh
        }) {
            keep.push(i);
        }
    }
    keep
}

pub fn nms(boxes: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    nms_indices(boxes, iou_thresh)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}

/// Anchors whose sigmoid score exceeds `score_thresh`, decoded, before NMS.
pub fn decode_candidates(
    outputs: &HeadOutputs,
    anchors: &AnchorGrid,
    score_thresh: f64,
) -> Result<Vec<Detection>> {
    let n = anchors.per_cell();
    let (h, w) = (anchors.spec.height, anchors.spec.width);
    ensure!(
        outputs.cls.dims() == (n, h, w)
            && outputs.reg.dims() == (7 * n, h, w)
            && outputs.dir.dims() == (2 * n, h, w),
        "head maps {:?}/{:?}/{:?} do not match {n} anchors on {h}x{w}",
        outputs.cls.dims(),
        outputs.reg.dims(),
        outputs.dir.dims()
    );
    let mut out = Vec::new();
    for a in 0..n {
        let cls = outputs.cls.plane(a);
        for row in 0..h {
            for col in 0..w {
                let score = sigmoid(cls[row * w + col]) as f64;
                if score <= score_thresh {
                    continue;
                }
                let mut residual = [0f64; 7];
                for (k, r) in residual.iter_mut().enumerate() {
                    *r = outputs.reg.get(7 * a + k, row, col) as f64;
                }
                let bin =
                    (outputs.dir.get(2 * a + 1, row, col) > outputs.dir.get(2 * a, row, col)) as u8;
                let anchor = anchors.anchor(row, col, a);
                out.push(anchors.decode(&anchor, &residual, bin, score));
            }
        }
    }
    Ok(out)
}

/// Score threshold, decode, then greedy BEV NMS. Output is sorted by score.
pub fn decode_and_nms(
    outputs: &HeadOutputs,
    anchors: &AnchorGrid,
    score_thresh: f64,
    iou_thresh: f64,
) -> Result<Vec<Detection>> {
    let candidates = decode_candidates(outputs, anchors, score_thresh)?;
    Ok(nms(&candidates, iou_thresh))
}

/// Training targets laid out like the head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    /// `[a][row][col]` in {0, 1}.
    pub cls: Vec<f64>,
    /// Positive anchors as flat `a * h * w + row * w + col` indices.
    pub positives: Vec<usize>,
    /// Residual targets of each positive.
    pub reg: Vec<[f64; 7]>,
    /// Direction bin of each positive.
    pub dir: Vec<u8>,
}

/// An anchor is positive for the ground-truth box it overlaps most when that
/// IoU reaches `pos_iou`; each box also claims its single best anchor.
/// Every other anchor is a negative.
pub fn assign_targets(anchors: &AnchorGrid, gt: &[Detection], pos_iou: f64) -> Targets {
    let n = anchors.per_cell();
    let (h, w) = (anchors.spec.height, anchors.spec.width);
    let mut best: Vec<Option<(usize, f64)>> = vec![None; n * h * w];
    for (g, b) in gt.iter().enumerate() {
        let reach = (b.l.hypot(b.w) + anchors.diagonal()) / 2.0;
        let [c0, r0] = anchors.spec.metric_to_cell(b.x - reach, b.y + reach);
        let [c1, r1] = anchors.spec.metric_to_cell(b.x + reach, b.y - reach);
        let rows = r0.floor().max(0.0) as usize..((r1.ceil() + 1.0).max(0.0) as usize).min(h);
        let cols = c0.floor().max(0.0) as usize..((c1.ceil() + 1.0).max(0.0) as usize).min(w);
        let mut own: Option<(usize, f64)> = None;
        for row in rows {
            for col in cols.clone() {
                for a in 0..n {
                    let iou = bev_iou(&anchors.anchor(row, col, a), b);
                    if iou <= 0.0 {
                        continue;
                    }
                    let idx = a * h * w + row * w + col;
                    if best[idx].is_none_or(|(_, v)| iou > v) && iou >= pos_iou {
                        best[idx] = Some((g, iou));
                    }
                    if own.is_none_or(|(_, v)| iou > v) {
                        own = Some((idx, iou));
                    }
                }
            }
        }
        if let Some((idx, iou)) = own {
            if best[idx].is_none_or(|(_, v)| v < pos_iou) {
                best[idx] = Some((g, iou));
            }
        }
    }
    let mut t = Targets {
        cls: vec![0.0; n * h * w],
        positives: Vec::new(),
        reg: Vec::new(),
        dir: Vec::new(),
    };
    for (idx, slot) in best.iter().enumerate() {
        if let Some((g, _)) = slot {
            let a = idx / (h * w);
            let (row, col) = ((idx % (h * w)) / w, idx % w);
            t.cls[idx] = 1.0;
            t.positives.push(idx);
            t.reg
                .push(anchors.encode(&anchors.anchor(row, col, a), &gt[*g]));
            t.dir.push(gt[*g].direction_bin);
        }
    }
    t
}

/// Classification, regression and direction terms of one frame. Regression
/// is normalised by the number of positives like the focal term.
pub fn detection_losses(
    outputs: &HeadOutputs,
    targets: &Targets,
    weights: &LossWeights,
) -> LossBreakdown {
    let logits: Vec<f64> = outputs.cls.data().iter().map(|&v| v as f64).collect();
    let (cls, _) = sigmoid_focal_loss(
        &logits,
        &targets.cls,
        weights.focal_alpha,
        weights.focal_gamma,
    );
    let plane = outputs.cls.plane_len();
    let mut pred = Vec::with_capacity(7 * targets.positives.len());
    let mut tgt = Vec::with_capacity(pred.capacity());
    let mut dir_logits = Vec::with_capacity(2 * targets.positives.len());
    for (k, &idx) in targets.positives.iter().enumerate() {
        let (a, p) = (idx / plane, idx % plane);
        for j in 0..7 {
            pred.push(outputs.reg.plane(7 * a + j)[p] as f64);
            tgt.push(targets.reg[k][j]);
        }
        dir_logits.push(outputs.dir.plane(2 * a)[p] as f64);
        dir_logits.push(outputs.dir.plane(2 * a + 1)[p] as f64);
    }
    let (reg, _) = weighted_smooth_l1(&pred, &tgt, None, weights.smooth_l1_sigma);
    let (dir, _) = direction_ce_loss(&dir_logits, &targets.dir, None);
    LossBreakdown {
        reg: reg / targets.positives.len().max(1) as f64,
        cls,
        dir,
        occ: 0.0,
    }
}

pub const DETECTION_CSV_HEADER: &str = "frame_id,x,y,z,h,w,l,theta,score,dir_bin";

/// Appends one CSV row per detection (no header).
pub fn write_detections_csv(
    out: &mut impl Write,
    frame_id: usize,
    dets: &[Detection],
) -> std::io::Result<()> {
    for d in dets {
        writeln!(
            out,
            "{frame_id},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.5},{:.5},{}",
            d.x, d.y, d.z, d.h, d.w, d.l, d.theta, d.score, d.direction_bin
        )?;
    }
    Ok(())
}
