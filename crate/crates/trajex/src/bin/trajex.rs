//! Command-line front end: simulate scenarios, extract trajectories from
//! detection logs, and evaluate extracted trajectories against ground truth.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use trajex::evaluation::{
    aggregate_bias_std, associate_tracks, error_curves, make_grid, render_bias_std_csv,
    render_errors_csv, render_summary, summary_stats, BiasTable, ComparisonTable, SensorMode,
};
use trajex::geometry::{estimate_homography, CorrespondenceSet, Frame, FrameTransform, Homography};
use trajex::ingest::{parse_camera_log, parse_radar_log};
use trajex::manifest::RunManifest;
use trajex::pipeline::{run_extraction, ExtractConfig};
use trajex::postprocess::{export_trajectories, parse_trajectories_csv};
use trajex::simulator::{
    parse_gt_csv, render_camera_jsonl, render_gt_csv, render_radar_jsonl, Scenario, ScenarioConfig,
};
use trajex::types::StateSample;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_EMPTY: u8 = 4;
const EXIT_ASSOCIATION: u8 = 5;

#[derive(Parser)]
#[command(name = "trajex", version, about = "Vehicle trajectory extraction from camera/radar detection logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground truth and sensor logs for a scenario.
    Simulate {
        /// Scenario JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract smoothed trajectories from detection logs.
    Extract {
        #[arg(long)]
        cam: PathBuf,
        #[arg(long)]
        radar: PathBuf,
        /// Image-to-road correspondence JSON for homography estimation.
        #[arg(long)]
        homography: PathBuf,
        /// Extraction JSON config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "fused")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate extracted trajectories against ground truth.
    Evaluate {
        /// Run directories, each holding gt.csv and trajectories_<mode>.csv.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        grid_step: f64,
        /// Aggregation interval as lo:hi in meters.
        #[arg(long, default_value = "35:135")]
        interval: String,
    },
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(msg: impl std::fmt::Display) -> CliError {
        CliError {
            code: EXIT_CONFIG,
            message: msg.to_string(),
        }
    }

    fn io(path: &Path, err: impl std::fmt::Display) -> CliError {
        CliError {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }
}

fn main() -> ExitCode {
    #[cfg(feature = "parallel")]
    if let Ok(v) = std::env::var("TRAJEX_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, seed } => cmd_simulate(config, out, seed),
        Command::Extract {
            cam,
            radar,
            homography,
            config,
            mode,
            out,
        } => cmd_extract(cam, radar, homography, config, mode, out),
        Command::Evaluate {
            runs,
            out,
            grid_step,
            interval,
        } => cmd_evaluate(runs, out, grid_step, interval),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn cmd_simulate(config: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<ExitCode, CliError> {
    let start = Instant::now();
    let mut cfg: ScenarioConfig = match &config {
        Some(path) => serde_json::from_str(&read_to_string(path)?)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let scenario = Scenario::new(cfg.clone()).map_err(CliError::config)?;
    ensure_dir(&out)?;

    write_file(&out, "gt.csv", &render_gt_csv(&scenario.ground_truth()))?;
    write_file(&out, "cam.jsonl", &render_camera_jsonl(&scenario.camera_log()))?;
    write_file(&out, "radar.jsonl", &render_radar_jsonl(&scenario.radar_log()))?;
    let correspondences = scenario.calibration_correspondences();
    write_file(
        &out,
        "homography.json",
        &serde_json::to_string_pretty(&correspondences).expect("correspondences serialize"),
    )?;
    write_file(
        &out,
        "scenario.json",
        &serde_json::to_string_pretty(&cfg).expect("config serializes"),
    )?;

    let mut manifest = RunManifest::new("simulate");
    manifest.seed = Some(cfg.seed);
    manifest.add_config("scenario", &cfg);
    if let Some(path) = &config {
        manifest.inputs.push(path.display().to_string());
    }
    for name in ["gt.csv", "cam.jsonl", "radar.jsonl", "homography.json", "scenario.json"] {
        manifest.outputs.push(name.to_string());
    }
    manifest.runtime_seconds = start.elapsed().as_secs_f64();
    write_file(&out, "manifest.json", &manifest.to_json())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_extract(
    cam: PathBuf,
    radar: PathBuf,
    homography: PathBuf,
    config: Option<PathBuf>,
    mode: String,
    out: PathBuf,
) -> Result<ExitCode, CliError> {
    let start = Instant::now();
    let mode = SensorMode::parse(&mode)
        .ok_or_else(|| CliError::config(format!("unknown mode {mode:?} (camera|radar|fused)")))?;
    let cfg: ExtractConfig = match &config {
        Some(path) => serde_json::from_str(&read_to_string(path)?)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?,
        None => ExtractConfig::default(),
    };
    cfg.tracker.validate().map_err(CliError::config)?;

    let correspondences = CorrespondenceSet::from_json(&read_to_string(&homography)?)
        .map_err(|e| CliError::config(format!("{}: {e}", homography.display())))?;
    let h: Homography = estimate_homography(&correspondences).map_err(CliError::config)?;
    let setup_to_road = FrameTransform::identity(Frame::Setup, Frame::Road);

    let cam_file = fs::File::open(&cam).map_err(|e| CliError::io(&cam, e))?;
    let cam_parsed = parse_camera_log(BufReader::new(cam_file))
        .map_err(|e| CliError::io(&cam, e))?;
    let radar_file = fs::File::open(&radar).map_err(|e| CliError::io(&radar, e))?;
    let radar_parsed = parse_radar_log(BufReader::new(radar_file))
        .map_err(|e| CliError::io(&radar, e))?;

    ensure_dir(&out)?;
    let traj_name = format!("trajectories_{}.csv", mode.name());
    let digest = trajex::manifest::config_digest(&cfg);

    let empty_input = match mode {
        SensorMode::Camera => cam_parsed.detections.is_empty(),
        SensorMode::Radar => radar_parsed.detections.is_empty(),
        SensorMode::Fused => {
            cam_parsed.detections.is_empty() && radar_parsed.detections.is_empty()
        }
    };

    let registry = trajex::geometry::TransformRegistry::new();
    if empty_input {
        let mut buf = Vec::new();
        export_trajectories(&[], Frame::Road, &registry, &digest, &mut buf)
            .map_err(CliError::config)?;
        write_file(&out, &traj_name, std::str::from_utf8(&buf).unwrap())?;
        eprintln!("warning: no input detections, wrote empty trajectory file");
        return Ok(ExitCode::from(EXIT_EMPTY));
    }

    let duration = {
        let last_cam = cam_parsed.detections.last().map(|d| d.t).unwrap_or(0.0);
        let last_radar = radar_parsed.detections.last().map(|d| d.t).unwrap_or(0.0);
        last_cam.max(last_radar)
    };
    let result = run_extraction(
        cam_parsed.detections,
        radar_parsed.detections,
        &h,
        &setup_to_road,
        &cfg,
        mode,
    )
    .map_err(CliError::config)?;

    let mut buf = Vec::new();
    export_trajectories(&result.trajectories, Frame::Road, &registry, &digest, &mut buf)
        .map_err(CliError::config)?;
    write_file(&out, &traj_name, std::str::from_utf8(&buf).unwrap())?;

    let mut discarded = String::from("track_id,duration,detections\n");
    for t in &result.discarded_tracks {
        discarded.push_str(&format!(
            "{},{:.6},{}\n",
            t.id,
            t.duration(),
            t.detection_count()
        ));
    }
    write_file(&out, "discarded.csv", &discarded)?;
    write_file(
        &out,
        "summary.txt",
        &render_summary(&summary_stats(&result.kept_tracks, duration)),
    )?;

    let mut manifest = RunManifest::new("extract");
    manifest.add_config("extract", &cfg);
    for p in [&cam, &radar, &homography] {
        manifest.inputs.push(p.display().to_string());
    }
    manifest
        .outputs
        .extend([traj_name, "discarded.csv".into(), "summary.txt".into()]);
    manifest.runtime_seconds = start.elapsed().as_secs_f64();
    write_file(&out, "manifest.json", &manifest.to_json())?;
    Ok(ExitCode::SUCCESS)
}

fn parse_interval(s: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let err = || CliError::config(format!("interval must be lo:hi, got {s:?}"));
    if parts.len() != 2 {
        return Err(err());
    }
    let lo: f64 = parts[0].parse().map_err(|_| err())?;
    let hi: f64 = parts[1].parse().map_err(|_| err())?;
    if !(lo < hi) {
        return Err(err());
    }
    Ok((lo, hi))
}

fn cmd_evaluate(
    runs: Vec<PathBuf>,
    out: PathBuf,
    grid_step: f64,
    interval: String,
) -> Result<ExitCode, CliError> {
    let start = Instant::now();
    if !(grid_step > 0.0) {
        return Err(CliError::config("grid-step must be positive"));
    }
    let (lo, hi) = parse_interval(&interval)?;
    let grid = make_grid(lo, hi, grid_step);
    ensure_dir(&out)?;

    // Per sensor mode: (reference samples, measured samples) per evaluated
    // vehicle, gathered across all run directories.
    let mut per_mode: Vec<(SensorMode, Vec<(Vec<StateSample>, Vec<StateSample>)>)> =
        SensorMode::ALL.iter().map(|m| (*m, Vec::new())).collect();
    let mut missing_modes: Vec<String> = Vec::new();

    for run_dir in &runs {
        let gt_path = run_dir.join("gt.csv");
        let gts = parse_gt_csv(&read_to_string(&gt_path)?)
            .map_err(|e| CliError::config(format!("{}: {e}", gt_path.display())))?;
        for (mode, pairs) in &mut per_mode {
            let path = run_dir.join(format!("trajectories_{}.csv", mode.name()));
            if !path.exists() {
                missing_modes.push(path.display().to_string());
                continue;
            }
            let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
            let (_, trajs) = parse_trajectories_csv(BufReader::new(file))
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let assoc = associate_tracks(&gts, &trajs);
            for (gi, gt) in gts.iter().enumerate() {
                match assoc[gi] {
                    Some(ti) => pairs.push((gt.samples.clone(), trajs[ti].samples.clone())),
                    None => {
                        return Err(CliError {
                            code: EXIT_ASSOCIATION,
                            message: format!(
                                "vehicle {} in {} has no associated {} track",
                                gt.id,
                                run_dir.display(),
                                mode.name()
                            ),
                        })
                    }
                }
            }
        }
    }
    for m in &missing_modes {
        eprintln!("warning: missing {m}, mode skipped for that run");
    }

    let mut tables: Vec<(SensorMode, BiasTable)> = Vec::new();
    for (mode, pairs) in &per_mode {
        if pairs.is_empty() {
            continue;
        }
        let slices: Vec<(&[StateSample], &[StateSample])> = pairs
            .iter()
            .map(|(r, m)| (r.as_slice(), m.as_slice()))
            .collect();
        let curves = error_curves(&slices, &grid)
            .map_err(|e| CliError::config(format!("{} mode: {e}", mode.name())))?;
        for c in &curves {
            write_file(
                &out,
                &format!("errors_{}_run{}.csv", mode.name(), c.run_id),
                &render_errors_csv(c),
            )?;
        }
        let table = aggregate_bias_std(&curves)
            .map_err(|e| CliError::config(format!("{} mode: {e}", mode.name())))?;
        write_file(
            &out,
            &format!("bias_std_{}.csv", mode.name()),
            &render_bias_std_csv(&table),
        )?;
        tables.push((*mode, table));
    }
    if tables.is_empty() {
        return Err(CliError::config("no trajectory files found in any run directory"));
    }

    let refs: Vec<(SensorMode, &BiasTable)> = tables.iter().map(|(m, t)| (*m, t)).collect();
    let cmp = ComparisonTable::new(&refs);
    write_file(&out, "comparison.csv", &cmp.render_csv())?;
    write_file(&out, "comparison.txt", &cmp.render_text())?;

    let mut manifest = RunManifest::new("evaluate");
    for r in &runs {
        manifest.inputs.push(r.display().to_string());
    }
    manifest
        .outputs
        .extend(["comparison.csv".into(), "comparison.txt".into()]);
    manifest.runtime_seconds = start.elapsed().as_secs_f64();
    write_file(&out, "manifest.json", &manifest.to_json())?;
    Ok(ExitCode::SUCCESS)
}
