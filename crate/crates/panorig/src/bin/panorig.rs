//! Command-line front end: scene generation, calibration, ratio sweeps,
//! point cloud merging, and capture-link simulation.
//!
//! Exit codes: 0 success, 2 bad usage or configuration, 3 pipeline failure.

use clap::{Args, Parser, Subcommand};
use panorig::error::Error;
use panorig::graph::read_graph;
use panorig::netcap::{frame_set_bytes, simulate_session_with, ChannelSpec, SessionConfig};
use panorig::pairwise::SolverConfig;
use panorig::pipeline::{
    calibrate, load_scene, merge_cloud, save_calibration, save_scene, sweep, write_atomic,
    write_ply, write_sweep_csv, SceneConfig,
};
use panorig::rigsim::{NoiseSpec, SyntheticScene};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "panorig", version, about = "Panoramic RGB-D ring calibration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene bundle
    Generate(GenerateArgs),
    /// Calibrate the ring from a scene bundle
    Calibrate(CalibrateArgs),
    /// Run calibration over a list of match-filter ratios and write a CSV
    Sweep(SweepArgs),
    /// Merge depth maps into one point cloud using a calibrated graph
    Merge(MergeArgs),
    /// Simulate the datagram capture link and report throughput
    Netsim(NetsimArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for the bundle
    #[arg(long)]
    out: PathBuf,
    /// JSON scene config; command-line flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise preset; omitting it keeps the config's noise (default kinect-like)
    #[arg(long, value_parser = ["kinect-like", "noiseless"])]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cameras: Option<u32>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    room_size: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Scene bundle directory
    #[arg(long)]
    scene: PathBuf,
    /// Min-distance-ratio filter threshold
    #[arg(long, default_value_t = 3.0)]
    ratio: f64,
    /// Output directory for graphs and the report
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    max_iterations: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Comma-separated ratio list
    #[arg(long, value_delimiter = ',', default_value = "1.5,2,3,4,5,6,7,8,9,10")]
    ratios: Vec<f64>,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Calibrated graph file (optimized_graph.txt from `calibrate`)
    #[arg(long)]
    graph: PathBuf,
    /// Output PLY path
    #[arg(long)]
    out: PathBuf,
    /// Pixel grid subsampling step
    #[arg(long, default_value_t = 4)]
    stride: u32,
}

#[derive(Args)]
struct NetsimArgs {
    #[arg(long, default_value_t = 12)]
    cameras: u32,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 480)]
    height: u32,
    /// Frame sets to capture
    #[arg(long, default_value_t = 100)]
    frames: u32,
    /// Link bandwidth in bits per second
    #[arg(long, default_value_t = 1e9)]
    bandwidth: f64,
    /// Per-datagram loss probability
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    #[arg(long, default_value_t = 1500)]
    mtu: usize,
    /// One-way latency in seconds
    #[arg(long, default_value_t = 5e-4)]
    latency: f64,
    /// Re-send rounds for missing chunks of a frame set
    #[arg(long, default_value_t = 0)]
    retries: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("PANORIG_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // a failure here only means a pool already exists
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: PANORIG_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Merge(a) => cmd_merge(a),
        Command::Netsim(a) => cmd_netsim(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration and I/O problems, 3 for estimation failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Io(_) => 2,
        _ => 3,
    }
}

fn load_config(args: &GenerateArgs) -> panorig::Result<SceneConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let json = std::fs::read(path)?;
            serde_json::from_slice(&json).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?
        }
        None => SceneConfig::default(),
    };
    if let Some(preset) = &args.preset {
        let seed = args.seed.unwrap_or(config.noise.seed);
        config.noise = match preset.as_str() {
            "noiseless" => NoiseSpec::noiseless(seed),
            _ => NoiseSpec::kinect_like(seed),
        };
    } else if let Some(seed) = args.seed {
        config.noise.seed = seed;
    }
    if let Some(n) = args.cameras {
        config.rig.n_cameras = n;
    }
    if let Some(d) = args.density {
        config.density = d;
    }
    if let Some(s) = args.room_size {
        config.room_size = s;
    }
    config.rig.validate()?;
    Ok(config)
}

fn cmd_generate(args: GenerateArgs) -> panorig::Result<()> {
    let config = load_config(&args)?;
    let scene =
        SyntheticScene::generate(config.rig, config.noise, config.density, config.room_size)?;
    save_scene(&args.out, &scene)?;
    let kps: usize = scene.frames.iter().map(|f| f.keypoints.len()).sum();
    println!(
        "generated {} cameras, {} landmarks, {} keypoints -> {}",
        config.rig.n_cameras,
        scene.landmarks.len(),
        kps,
        args.out.display()
    );
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> panorig::Result<()> {
    let (_, input) = load_scene(&args.scene)?;
    let solver = SolverConfig { max_iterations: args.max_iterations, ..SolverConfig::default() };
    let result = calibrate(&input, args.ratio, &solver)?;
    save_calibration(&args.out, &result)?;
    println!(
        "closure residual: {:.4} deg {:.4} cm -> {:.4} deg {:.4} cm",
        result.initial_closure.0,
        result.initial_closure.1,
        result.optimized_closure.0,
        result.optimized_closure.1
    );
    if let (Some((ir, it)), Some((or, ot))) = (result.initial_error, result.optimized_error) {
        println!("mean node error: {ir:.4} deg {it:.4} cm -> {or:.4} deg {ot:.4} cm");
    }
    if result.pairs.iter().any(|p| !p.converged) {
        // signal a suspect calibration without discarding the outputs
        return Err(Error::NotConverged { iterations: args.max_iterations });
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> panorig::Result<()> {
    if args.ratios.is_empty() {
        return Err(Error::Config("no ratios given".into()));
    }
    let (_, input) = load_scene(&args.scene)?;
    let report = sweep(&input, &args.ratios, &SolverConfig::default())?;
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &report)?;
    write_atomic(&args.out, &buf)?;
    println!("wrote {} rows -> {}", report.rows.len(), args.out.display());
    Ok(())
}

fn cmd_merge(args: MergeArgs) -> panorig::Result<()> {
    if args.stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let (_, input) = load_scene(&args.scene)?;
    let f = std::fs::File::open(&args.graph)?;
    let graph = read_graph(std::io::BufReader::new(f), &args.graph)?;
    if graph.len() != input.frames.len() {
        return Err(Error::Config(format!(
            "graph has {} nodes but the scene has {} cameras",
            graph.len(),
            input.frames.len()
        )));
    }
    let cloud = merge_cloud(&input.frames, &graph, &input.intrinsics, args.stride);
    let mut buf = Vec::new();
    write_ply(&mut buf, &cloud)?;
    write_atomic(&args.out, &buf)?;
    println!("merged {} points -> {}", cloud.len(), args.out.display());
    Ok(())
}

fn cmd_netsim(args: NetsimArgs) -> panorig::Result<()> {
    if args.loss < 0.0 || args.loss >= 1.0 {
        return Err(Error::Config("loss must be in [0, 1)".into()));
    }
    let channel = ChannelSpec {
        bandwidth_bps: args.bandwidth,
        loss_rate: args.loss,
        latency: args.latency,
        mtu: args.mtu,
        seed: args.seed,
    };
    let frame_bytes = frame_set_bytes(args.width, args.height, 1);
    let stats = simulate_session_with(
        args.cameras,
        args.frames,
        frame_bytes,
        &channel,
        &SessionConfig { retries_per_set: args.retries },
    );
    println!("bytes per frame set: {}", stats.bytes_per_set);
    println!("bandwidth-bound max: {:.2} fps", stats.max_fps);
    println!(
        "delivered {}/{} sets at {:.2} fps",
        stats.delivered,
        stats.delivered + stats.dropped_sets,
        stats.achieved_fps
    );
    Ok(())
}
