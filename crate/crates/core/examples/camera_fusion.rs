//! Column-wise cross-attention between a synthetic LiDAR BEV and the four
//! surround cameras of the same agent.

use drcp::rg_attn::multi_camera_fuse;
use drcp::sim::{generate_scene, ModelDims, PipelineParams, RunConfig};

fn main() -> drcp::Result<()> {
    let cfg = RunConfig::default();
    let spec = cfg.bev_spec()?;
    let scene = generate_scene(&spec, &cfg.scene(), 1, 3)?;
    let dims = ModelDims::default();
    let params = PipelineParams::structured(&dims, 1)?;

    let ego = scene.ego();
    let cams: Vec<_> = ego
        .cameras
        .iter()
        .cloned()
        .zip(ego.camera_features.iter().cloned())
        .collect();
    let t = std::time::Instant::now();
    let fused = multi_camera_fuse(&ego.lidar, &cams, &dims.rg_attn(), &params.rg_attn, &spec)?;
    println!(
        "{} cameras fused in {:.1} ms",
        cams.len(),
        t.elapsed().as_secs_f64() * 1e3
    );

    let half = dims.bev_channels / 2;
    let lidar_changed = fused
        .channel_slice(0..half)?
        .max_abs_diff(&ego.lidar.channel_slice(0..half)?);
    let camera_energy: f64 = fused
        .channel_slice(half..dims.bev_channels)?
        .data()
        .iter()
        .map(|v| (*v as f64).powi(2))
        .sum();
    println!("LiDAR half changed by {lidar_changed:e}, camera half energy {camera_energy:.1}");
    Ok(())
}
