//! 11-point interpolated average precision on BEV IoU.

use crate::heads::{bev_iou, Detection};

pub const AP_IOUS: [f64; 3] = [0.3, 0.5, 0.7];

/// Detections and ground truth of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBoxes {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<Detection>,
}

/// AP pooled over frames.
///
/// Detections from all frames are ranked by score (ties by frame, then by
/// position in the frame's list). Each one greedily takes the unmatched ground
/// truth box of its frame with the highest IoU, and counts as a true positive
/// when that IoU is at least `iou`. Precision is interpolated at recall
/// `0, 0.1, ..., 1`. With no ground truth the AP is 1 if there are also no
/// detections and 0 otherwise.
pub fn average_precision(frames: &[FrameBoxes], iou: f64) -> f64 {
    let n_gt: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    let mut ranked: Vec<(usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(f, fr)| (0..fr.detections.len()).map(move |d| (f, d)))
        .collect();
    if n_gt == 0 {
        return if ranked.is_empty() { 1.0 } else { 0.0 };
    }
    ranked.sort_by(|a, b| {
        let sa = frames[a.0].detections[a.1].score;
        let sb = frames[b.0].detections[b.1].score;
        sb.total_cmp(&sa).then(a.cmp(b))
    });
    let mut taken: Vec<Vec<bool>> = frames
        .iter()
        .map(|f| vec![false; f.ground_truth.len()])
        .collect();
    let mut curve = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, &(f, d)) in ranked.iter().enumerate() {
        let det = &frames[f].detections[d];
        let best = frames[f]
            .ground_truth
            .iter()
            .enumerate()
            .filter(|(g, _)| !taken[f][*g])
            .map(|(g, gt)| (g, bev_iou(det, gt)))
            .fold(None, |acc: Option<(usize, f64)>, (g, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((g, v)),
            });
        if let Some((g, v)) = best {
            if v >= iou {
                taken[f][g] = true;
                tp += 1;
            }
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    (0..=10)
        .map(|i| {
            let r = i as f64 / 10.0;
            curve
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// AP at each of [`AP_IOUS`].
pub fn ap_triplet(frames: &[FrameBoxes]) -> [f64; 3] {
    AP_IOUS.map(|t| average_precision(frames, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(x: f64, score: f64) -> Detection {
        let mut d = Detection::new(x, 0.0, -1.0, 1.6, 2.0, 4.5, 0.0);
        d.score = score;
        d
    }

    #[test]
    fn perfect_detections_score_one() {
        let f = FrameBoxes {
            detections: vec![car(0.0, 0.9), car(10.0, 0.8)],
            ground_truth: vec![car(0.0, 1.0), car(10.0, 1.0)],
        };
        assert_eq!(average_precision(&[f], 0.7), 1.0);
    }

    #[test]
    fn hand_worked_ranking() {
        // ranks: TP, FP, TP with 2 gt -> (0.5, 1), (0.5, 0.5), (1, 2/3)
        let f = FrameBoxes {
            detections: vec![car(0.0, 0.9), car(50.0, 0.8), car(10.0, 0.7)],
            ground_truth: vec![car(0.0, 1.0), car(10.0, 1.0)],
        };
        let want = (6.0 * 1.0 + 5.0 * (2.0 / 3.0)) / 11.0;
        assert!((average_precision(&[f], 0.5) - want).abs() < 1e-12);
    }

    #[test]
    fn duplicates_and_frames_are_kept_apart() {
        let a = FrameBoxes {
            detections: vec![car(0.0, 0.9), car(0.1, 0.85)],
            ground_truth: vec![car(0.0, 1.0)],
        };
        let b = FrameBoxes {
            detections: vec![],
            ground_truth: vec![car(0.0, 1.0)],
        };
        // TP then duplicate FP; second frame never matched
        let want = 6.0 * 1.0 / 11.0;
        assert!((average_precision(&[a, b], 0.5) - want).abs() < 1e-12);
        let empty = FrameBoxes {
            detections: vec![],
            ground_truth: vec![],
        };
        assert_eq!(average_precision(&[empty], 0.5), 1.0);
    }
}
