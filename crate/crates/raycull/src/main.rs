use std::fs;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use raycull::azel::{AzElGrid, CastOptions};
use raycull::config::{parse_config_str, PipelineConfig};
use raycull::dataset::{self, RangeFilter, SequenceSource};
use raycull::error::Error;
use raycull::metrics::VoxelSetAccumulator;
use raycull::pipeline::{self, stage_report, timings_csv};
use raycull::synth::{generate, parse_scene_script, write_sequence};
use raycull::voxel::VoxelMap;

#[derive(Parser)]
#[command(
    name = "raycull",
    version,
    about = "Raycasting-based dynamic object removal for static LiDAR mapping"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Remove dynamic points from a scan sequence and export the static map.
    Run(RunArgs),
    /// Score predicted labels against ground truth at voxel level.
    Eval(EvalArgs),
    /// Generate a synthetic scan sequence from a scene script.
    Synth(SynthArgs),
    /// Dump the voxel map or a frame's raycasting cache for debugging.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Directory of <frame>.bin scan files.
    #[arg(long)]
    scans: PathBuf,
    /// Pose file, one row-major 3x4 matrix per line.
    #[arg(long)]
    poses: PathBuf,
    /// Calibration file; when given, poses are conjugated through its Tr.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Pipeline configuration (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Inclusive frame range "first:last"; default all frames.
    #[arg(long)]
    range: Option<String>,
    /// Worker threads for intra-frame parallelism; 0 = all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of <frame>.pred files.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    scans: PathBuf,
    /// Directory of <frame>.label ground-truth files.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Evaluation voxel size in meters.
    #[arg(long, default_value_t = 0.2)]
    voxel: f64,
    #[arg(long)]
    range: Option<String>,
    /// Ingestion range gate, matching the run that produced the predictions.
    #[arg(long, default_value_t = 0.5)]
    range_min: f64,
    #[arg(long, default_value_t = 60.0)]
    range_max: f64,
    /// Output JSON report path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene script file.
    #[arg(long)]
    script: PathBuf,
    /// Output directory (scans/, labels/, poses.txt).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    scans: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Pipeline configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    range: Option<String>,
    /// Frame whose raycasting cache to dump (required with --grid-dump).
    #[arg(long)]
    frame: Option<usize>,
    /// Write the cast array as CSV rows "i,j,r_cast".
    #[arg(long)]
    grid_dump: Option<PathBuf>,
    /// Write the occupied voxel list as "ix iy iz" lines.
    #[arg(long)]
    map_dump: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(AssertUnwindSafe(|| dispatch(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(UsageError::Lib(e))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Ok(Err(UsageError::Flag(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(1)
        }
    }
}

enum UsageError {
    Lib(Error),
    Flag(String),
}

impl From<Error> for UsageError {
    fn from(e: Error) -> Self {
        UsageError::Lib(e)
    }
}

fn dispatch(cli: Cli) -> Result<(), UsageError> {
    match cli.cmd {
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

fn parse_range(range: &Option<String>) -> Result<Option<(usize, usize)>, UsageError> {
    let Some(s) = range else { return Ok(None) };
    let err = || UsageError::Flag(format!("bad --range '{s}', expected 'first:last'"));
    let (a, b) = s.split_once(':').ok_or_else(err)?;
    let first = a.parse::<usize>().map_err(|_| err())?;
    let last = b.parse::<usize>().map_err(|_| err())?;
    Ok(Some((first, last)))
}

fn load_config(path: &Path) -> Result<PipelineConfig, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config_str(&text).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_run(args: RunArgs) -> Result<(), UsageError> {
    let config = load_config(&args.config)?;
    let source = SequenceSource {
        scan_dir: args.scans.clone(),
        pose_file: args.poses.clone(),
        calib_file: args.calib.clone(),
        label_dir: None,
        frame_range: parse_range(&args.range)?,
    };
    let out = pipeline::run_sequence(&source, &config, args.threads)?;

    for id in &out.skipped {
        eprintln!("warning: frame {id} is empty after ingestion filtering; skipped");
    }

    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    for frame in &out.frames {
        let path = args.out.join(format!("{:06}.pred", frame.frame_id));
        dataset::write_pred(&path, &frame.pred_bytes())?;
    }
    dataset::write_ply(&args.out.join("static_map.ply"), &out.static_map, None)?;
    write_file(&args.out.join("timing.csv"), &timings_csv(&out.timings))?;

    let mut meta = Vec::new();
    meta.push(format!("tool = raycull {}", env!("CARGO_PKG_VERSION")));
    meta.push("command = run".to_string());
    meta.push(format!("scans = {}", args.scans.display()));
    meta.push(format!("poses = {}", args.poses.display()));
    meta.push(format!(
        "calib = {}",
        args.calib
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "none".into())
    ));
    meta.push(format!(
        "range = {}",
        args.range.clone().unwrap_or_else(|| "all".into())
    ));
    meta.push(format!("threads = {}", args.threads));
    meta.push(format!("frames_processed = {}", out.frames.len()));
    meta.push(format!("frames_skipped = {:?}", out.skipped));
    meta.extend(config.meta_lines());
    meta.push(String::new());
    write_file(&args.out.join("run_meta.txt"), &meta.join("\n"))?;

    if let Ok(report) = stage_report(&out.timings) {
        println!("{}", report.text());
    }
    println!(
        "{} frames -> {} static-map points ({} voxels occupied)",
        out.frames.len(),
        out.static_map.len(),
        out.map.len()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), UsageError> {
    let source = SequenceSource {
        scan_dir: args.scans.clone(),
        pose_file: args.poses.clone(),
        calib_file: args.calib.clone(),
        label_dir: Some(args.labels.clone()),
        frame_range: parse_range(&args.range)?,
    };
    let seq = source.load()?;

    // All prediction files must exist before any work starts.
    let missing: Vec<usize> = seq
        .frame_ids()
        .filter(|&f| !args.pred.join(format!("{f:06}.pred")).exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing).into());
    }

    let filter = RangeFilter {
        min: args.range_min,
        max: args.range_max,
    };
    let mut acc = VoxelSetAccumulator::new(args.voxel);
    for f in seq.frame_ids() {
        let raw = dataset::read_scan(seq.scan_path(f))?;
        let gt = seq.read_frame_labels(f)?;
        if gt.len() != raw.raw_count {
            return Err(Error::LabelCount {
                frame: f,
                labels: gt.len(),
                points: raw.raw_count,
            }
            .into());
        }
        let pred = dataset::read_pred(&args.pred.join(format!("{f:06}.pred")))?;
        if pred.len() != raw.raw_count {
            return Err(Error::PredCount {
                frame: f,
                preds: pred.len(),
                points: raw.raw_count,
            }
            .into());
        }
        let pose = seq.pose(f);
        for (p, &ri) in raw.points.iter().zip(&raw.raw_indices) {
            if !filter.keeps(p) {
                continue;
            }
            let w = pose.transform(p);
            if gt.is_moving(ri as usize) {
                acc.add_gt_dynamic(&w);
            } else {
                acc.add_gt_static(&w);
            }
            if pred[ri as usize] == 0 {
                acc.add_predicted(&w);
            }
        }
    }

    let report = acc.finish().map_err(Error::from)?;
    write_file(&args.out, &report.to_json())?;
    print!("{}", report.text_table());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), UsageError> {
    let text = fs::read_to_string(&args.script).map_err(|e| Error::Io {
        path: args.script.clone(),
        source: e,
    })?;
    let script = parse_scene_script(&text).map_err(|e| Error::Script {
        path: args.script.clone(),
        source: e,
    })?;
    let frames = generate(&script);
    write_sequence(&frames, &args.out)?;
    let points: usize = frames.iter().map(|f| f.scan.points.len()).sum();
    let moving: usize = frames
        .iter()
        .map(|f| f.moving.iter().filter(|&&m| m).count())
        .sum();
    println!(
        "wrote {} frames ({} points, {} moving) to {}",
        frames.len(),
        points,
        moving,
        args.out.display()
    );
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), UsageError> {
    if args.grid_dump.is_none() && args.map_dump.is_none() {
        return Err(UsageError::Flag(
            "inspect needs --grid-dump and/or --map-dump".into(),
        ));
    }
    if args.grid_dump.is_some() && args.frame.is_none() {
        return Err(UsageError::Flag("--grid-dump needs --frame".into()));
    }
    let config = match &args.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    let source = SequenceSource {
        scan_dir: args.scans.clone(),
        pose_file: args.poses.clone(),
        calib_file: args.calib.clone(),
        label_dir: None,
        frame_range: parse_range(&args.range)?,
    };
    let seq = source.load()?;
    let filter = RangeFilter {
        min: config.range_min,
        max: config.range_max,
    };

    // The inspected map is the naive accumulation of the selected frames.
    let mut map = VoxelMap::new(config.voxel_size);
    for f in seq.frame_ids() {
        let input = seq.read_frame(f, filter)?;
        let world: Vec<_> = input
            .scan
            .points
            .iter()
            .map(|p| input.scan.pose.transform(p))
            .collect();
        map.insert_points(&world);
    }

    if let Some(path) = &args.map_dump {
        let mut text = String::new();
        for k in map.sorted_keys() {
            text.push_str(&format!("{} {} {}\n", k.ix, k.iy, k.iz));
        }
        write_file(path, &text)?;
        println!("wrote {} voxels to {}", map.len(), path.display());
    }

    if let Some(path) = &args.grid_dump {
        let frame = args.frame.unwrap();
        if !seq.frame_ids().contains(&frame) {
            return Err(UsageError::Flag(format!(
                "--frame {frame} is outside the selected range"
            )));
        }
        let input = seq.read_frame(frame, filter)?;
        let spec = pipeline::resolve_spec(&config, &input.scan.points);
        let mut grid = AzElGrid::bin_scan(&input.scan, spec);
        grid.cast_rays(
            &map.freeze(),
            &input.scan.pose,
            CastOptions {
                pad: config.consistency.neighbor_radius,
                all_bins: false,
            },
        );
        let mut text = String::from("i,j,r_cast\n");
        for (i, j, d) in grid.cast_entries() {
            text.push_str(&format!("{i},{j},{d:.6}\n"));
        }
        write_file(path, &text)?;
        println!("wrote cast entries for frame {frame} to {}", path.display());
    }
    Ok(())
}
