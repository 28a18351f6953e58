//! Anchor decoding, rotated-IoU NMS and the detection losses.

use drcp::geometry::BevGridSpec;
use drcp::heads::{
    bev_iou, nms, sigmoid_focal_loss, total_loss, weighted_smooth_l1, AnchorGrid, Detection,
    LossBreakdown, LossWeights,
};

fn main() -> drcp::Result<()> {
    let anchors = AnchorGrid::cars(BevGridSpec::from_range(64, 128, 102.4, 51.2)?);
    let anchor = anchors.anchor(32, 64, 2);
    let gt = Detection::new(anchor.x + 0.7, anchor.y - 0.4, -0.9, 1.7, 1.9, 4.6, 2.3);
    let r = anchors.encode(&anchor, &gt);
    let back = anchors.decode(&anchor, &r, drcp::heads::direction_bin_of(gt.theta), 0.9);
    println!(
        "encode/decode IoU with ground truth: {:.6}",
        bev_iou(&gt, &back)
    );

    let mut a = gt;
    a.score = 0.9;
    let mut b = Detection::new(gt.x + 0.3, gt.y, gt.z, gt.h, gt.w, gt.l, gt.theta);
    b.score = 0.8;
    let mut c = Detection::new(gt.x + 20.0, gt.y, gt.z, gt.h, gt.w, gt.l, 0.0);
    c.score = 0.5;
    println!("NMS keeps {} of 3 boxes", nms(&[a, b, c], 0.15).len());

    let (focal, _) = sigmoid_focal_loss(&[0.0], &[1.0], 0.25, 2.0);
    let (sl1, _) = weighted_smooth_l1(&[1.0], &[0.0], None, 3.0);
    println!("focal(p=0.5, y=1) = {focal:.6}, smooth-L1(d=1) = {sl1:.6}");
    let unit = LossBreakdown {
        reg: 1.0,
        cls: 1.0,
        dir: 1.0,
        occ: 1.0,
    };
    println!(
        "weighted unit losses: {}",
        total_loss(&unit, &LossWeights::default())
    );
    Ok(())
}
