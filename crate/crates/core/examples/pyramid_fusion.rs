//! Occupancy-weighted fusion of two agents' pyramids on a scene where the
//! helper sees cars hidden from the ego.

use drcp::pyramid::{build_pyramid, fuse_agents_at_scale, fusion_weights, occupancy_head};
use drcp::sim::{generate_scene, ModelDims, PipelineParams, RunConfig};

fn main() -> drcp::Result<()> {
    let cfg = RunConfig::default();
    let spec = cfg.bev_spec()?;
    let scene = generate_scene(&spec, &cfg.scene(), 2, 9)?;
    let p = PipelineParams::structured(&ModelDims::default(), 1)?.pyramid;

    let pyramids = scene
        .agents
        .iter()
        .map(|a| build_pyramid(&a.lidar, None, &p.downsamplers))
        .collect::<drcp::Result<Vec<_>>>()?;
    for s in 0..3 {
        let occ = pyramids
            .iter()
            .map(|py| occupancy_head(py.level(s), &p.occ_heads[s]))
            .collect::<drcp::Result<Vec<_>>>()?;
        let occ_refs: Vec<_> = occ.iter().collect();
        let w = fusion_weights(&occ_refs)?;
        let helper_led = w[1].iter().filter(|&&v| v > 0.8).count();
        let levels: Vec<_> = pyramids.iter().map(|py| py.level(s)).collect();
        let fused = fuse_agents_at_scale(&levels, &occ_refs)?;
        println!(
            "scale {s}: {:?}, helper dominates {helper_led} cells",
            fused.dims()
        );
    }
    let hidden = scene.visible_to_first(2).len() - scene.visible_to_first(1).len();
    println!("boxes only the helper sees: {hidden}");
    Ok(())
}
