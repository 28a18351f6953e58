use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use drcp::geometry::build_sampling_grid;
use drcp::heads::{write_detections_csv, DETECTION_CSV_HEADER};
use drcp::sim::{
    generate_scene, ground_truth, parse_grid, run_experiment, run_sweep, scene_seed,
    write_sweep_csv, Pipeline, RunConfig, SweepParam, STAGES,
};
use drcp::tensor::io::write_tensor;

#[derive(Parser)]
#[command(name = "drcp", version, about = "Cooperative BEV perception simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one synthetic scene and write its tensors and boxes.
    GenerateScene {
        #[arg(long)]
        agents: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the full pipeline over the frames described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        no_mdma: bool,
        #[arg(long)]
        mdma_t: Option<usize>,
        #[arg(long)]
        mdma_seed: Option<u64>,
        /// Write every intermediate map of the first frame as DRCP tensors.
        #[arg(long)]
        dump_intermediates: bool,
    },
    /// Sweep one parameter and write a CSV of AP per grid point.
    Sweep {
        #[arg(long, value_parser = ["agents", "pose", "compression"])]
        param: String,
        /// Comma-separated values, e.g. `0,0.2,0.4,0.6`.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Add a wall-clock ms_per_frame column.
        #[arg(long)]
        timing: bool,
    },
    /// Inspect the polar sampling grids.
    Grid {
        #[command(subcommand)]
        action: GridAction,
    },
}

#[derive(Subcommand)]
enum GridAction {
    /// Print the sampling grid of one camera as CSV.
    Dump {
        #[arg(long)]
        camera: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the `2 x rings x columns` grid as a DRCP tensor.
        #[arg(long)]
        tensor: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn generate(agents: usize, seed: u64, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let scene = generate_scene(&cfg.bev_spec()?, &cfg.scene(), agents, seed)?;
    fs::create_dir_all(out)?;
    let mut gt = create(&out.join("ground_truth.csv"))?;
    writeln!(gt, "{DETECTION_CSV_HEADER}")?;
    write_detections_csv(&mut gt, 0, &scene.ground_truth)?;
    let mut agents_csv = create(&out.join("agents.csv"))?;
    writeln!(agents_csv, "agent,x,y,yaw,visible_boxes")?;
    for (k, a) in scene.agents.iter().enumerate() {
        let seen = a
            .visibility
            .iter()
            .filter(|&&v| v >= drcp::sim::VISIBLE_FRACTION)
            .count();
        writeln!(
            agents_csv,
            "{k},{},{},{},{seen}",
            a.pose.x,
            a.pose.y,
            a.pose.yaw()
        )?;
        write_tensor(out.join(format!("agent{k}_lidar.drcp")), &a.lidar)?;
        for (j, f) in a.camera_features.iter().enumerate() {
            write_tensor(out.join(format!("agent{k}_cam{j}.drcp")), f)?;
        }
    }
    let mut occ = create(&out.join("occluders.csv"))?;
    writeln!(occ, "x,y,l,w,yaw")?;
    for o in &scene.occluders {
        writeln!(occ, "{},{},{},{},{}", o.x, o.y, o.l, o.w, o.yaw)?;
    }
    println!(
        "scene seed {seed}: {} agents, {} boxes, {} occluders -> {}",
        scene.agents.len(),
        scene.ground_truth.len(),
        scene.occluders.len(),
        out.display()
    );
    Ok(())
}

fn run(
    config: &Path,
    no_mdma: bool,
    mdma_t: Option<usize>,
    mdma_seed: Option<u64>,
    dump: bool,
) -> Result<()> {
    let mut cfg = load_config(Some(config))?;
    if no_mdma {
        cfg.mdma = false;
    }
    if let Some(t) = mdma_t {
        cfg.mdma_t = t;
    }
    if let Some(s) = mdma_seed {
        cfg.mdma_seed = s;
    }
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;

    let result = run_experiment(&cfg)?;
    let mut dets = create(&out.join("detections.csv"))?;
    writeln!(dets, "{DETECTION_CSV_HEADER}")?;
    let mut gts = create(&out.join("ground_truth.csv"))?;
    writeln!(gts, "{DETECTION_CSV_HEADER}")?;
    let mut timing = create(&out.join("timings.csv"))?;
    writeln!(
        timing,
        "frame_id,scene_seed,bytes,{},total_ms",
        STAGES.join(",")
    )?;
    for (i, f) in result.frames.iter().enumerate() {
        write_detections_csv(&mut dets, i, &f.detections)?;
        write_detections_csv(&mut gts, i, &f.ground_truth)?;
        let ms: Vec<String> = f.timings.ms.iter().map(|v| format!("{v:.3}")).collect();
        writeln!(
            timing,
            "{i},{},{:.0},{},{:.3}",
            f.scene_seed,
            f.bytes,
            ms.join(","),
            f.timings.total()
        )?;
    }
    let mut summary = create(&out.join("summary.csv"))?;
    writeln!(
        summary,
        "frames,ap30,ap50,ap70,bytes_per_frame,ms_per_frame"
    )?;
    writeln!(
        summary,
        "{},{:.6},{:.6},{:.6},{:.0},{:.3}",
        result.frames.len(),
        result.ap[0],
        result.ap[1],
        result.ap[2],
        result.mean_bytes,
        result.ms_per_frame()
    )?;

    if dump {
        let pipeline = Pipeline::from_config(&cfg)?;
        let seed = scene_seed(cfg.seed, 0);
        let scene = generate_scene(&pipeline.spec, &cfg.scene(), cfg.agents, seed)?;
        let frame = pipeline.run_frame(&scene, cfg.active_agents(), true)?;
        let dir = out.join("intermediates");
        fs::create_dir_all(&dir)?;
        for (name, map) in &frame.intermediates {
            write_tensor(dir.join(format!("{name}.drcp")), map)?;
        }
        let gt = ground_truth(&scene, cfg.gt_policy, cfg.active_agents());
        println!(
            "dumped {} tensors for scene {seed} ({} gt boxes)",
            frame.intermediates.len(),
            gt.len()
        );
    }

    println!(
        "{} frames  AP@0.3 {:.4}  AP@0.5 {:.4}  AP@0.7 {:.4}  {:.0} B/frame",
        result.frames.len(),
        result.ap[0],
        result.ap[1],
        result.ap[2],
        result.mean_bytes
    );
    for (name, ms) in STAGES.iter().zip(result.mean_timings.ms) {
        println!("  {name:<14} {ms:9.3} ms");
    }
    println!("  {:<14} {:9.3} ms", "total", result.ms_per_frame());
    Ok(())
}

fn sweep(param: &str, grid: &str, out: &Path, config: Option<&Path>, timing: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let param: SweepParam = param.parse()?;
    let grid = parse_grid(grid)?;
    let rows = run_sweep(&cfg, param, &grid)?;
    let mut w = create(out)?;
    write_sweep_csv(&mut w, &rows, timing)?;
    w.flush()?;
    for r in &rows {
        println!(
            "{} = {:<6} AP@0.3 {:.4}  AP@0.5 {:.4}  AP@0.7 {:.4}",
            param.name(),
            r.value,
            r.ap[0],
            r.ap[1],
            r.ap[2]
        );
    }
    Ok(())
}

fn grid_dump(camera: usize, config: Option<&Path>, tensor: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let cams = drcp::sim::default_cameras(cfg.cameras);
    let Some(cam) = cams.get(camera) else {
        bail!("camera {camera} out of range, the rig has {}", cams.len());
    };
    let spec = cfg.bev_spec()?;
    let grid = build_sampling_grid(cam, &spec, cfg.cam_w, spec.height)?;
    let mut w = String::from("column,ring,theta,radius,x,y\n");
    for m in 0..grid.columns() {
        for n in 1..=grid.rings() {
            let [x, y] = grid.coord(m, n);
            w.push_str(&format!(
                "{m},{n},{:.9},{:.9},{x:.9},{y:.9}\n",
                grid.thetas()[m],
                grid.radii()[n - 1]
            ));
        }
    }
    if let Some(path) = tensor {
        write_tensor(path, &grid.to_feature_map())?;
    }
    match std::io::stdout().lock().write_all(w.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateScene {
            agents,
            seed,
            out,
            config,
        } => generate(agents, seed, &out, config.as_deref()),
        Command::Run {
            config,
            no_mdma,
            mdma_t,
            mdma_seed,
            dump_intermediates,
        } => run(&config, no_mdma, mdma_t, mdma_seed, dump_intermediates),
        Command::Sweep {
            param,
            grid,
            out,
            config,
            timing,
        } => sweep(&param, &grid, &out, config.as_deref(), timing),
        Command::Grid {
            action:
                GridAction::Dump {
                    camera,
                    config,
                    tensor,
                },
        } => grid_dump(camera, config.as_deref(), tensor.as_deref()),
    }
}
