//! End-to-end cooperative runs: one agent against two, then a pose-noise
//! sweep on the same scenes.

use drcp::sim::{
    run_experiment, run_sweep, write_sweep_csv, GtPolicy, RunConfig, SweepParam, STAGES,
};

fn main() -> drcp::Result<()> {
    let base = RunConfig {
        frames: 4,
        gt_policy: GtPolicy::VisibleToAny,
        ..RunConfig::default()
    };
    for participants in [1, 2] {
        let r = run_experiment(&RunConfig {
            participants,
            ..base.clone()
        })?;
        println!(
            "{participants} agent(s): AP@0.3 {:.3}  AP@0.5 {:.3}  AP@0.7 {:.3}",
            r.ap[0], r.ap[1], r.ap[2]
        );
        if participants == 2 {
            for (name, ms) in STAGES.iter().zip(r.mean_timings.ms) {
                println!("  {name:<14} {ms:8.2} ms");
            }
        }
    }

    let rows = run_sweep(&base, SweepParam::Pose, &[0.0, 0.3, 0.6])?;
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &rows, false)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}
