//! Frame-wise orchestration: map bootstrap, per-frame grid build,
//! classification, spatial validation, map update, stage timing, and final
//! static-map assembly.

use std::time::Instant;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::azel::{AzElGrid, CastOptions, GridSpec};
use crate::config::{MapMode, PipelineConfig};
use crate::consistency::{classify_frame, collect_no_return, LabelSet};
use crate::dataset::{FrameInput, LoadedSequence, RangeFilter, SequenceSource};
use crate::error::Error;
use crate::geom::Point3;
use crate::validation::validate_frame;
use crate::voxel::{VoxelKey, VoxelMap};

/// Wall-clock milliseconds spent in each stage of one frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTiming {
    pub frame_id: usize,
    pub scan_binning_ms: f64,
    pub raycasting_cache_ms: f64,
    pub classification_ms: f64,
    pub no_return_evidence_ms: f64,
    pub validation_ms: f64,
    pub total_ms: f64,
}

pub const STAGE_NAMES: [&str; 5] = [
    "scan_binning",
    "raycasting_cache",
    "classification",
    "no_return_evidence",
    "validation",
];

impl StageTiming {
    fn stage(&self, idx: usize) -> f64 {
        match idx {
            0 => self.scan_binning_ms,
            1 => self.raycasting_cache_ms,
            2 => self.classification_ms,
            3 => self.no_return_evidence_ms,
            _ => self.validation_ms,
        }
    }
}

/// Mean per-stage runtime across the processed frames.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub mean_ms: [f64; 5],
    pub percent: [f64; 5],
    pub mean_total_ms: f64,
}

/// Averages stage timings and expresses each stage as a share of the mean
/// frame total.
pub fn stage_report(timings: &[StageTiming]) -> Result<StageReport, Error> {
    if timings.is_empty() {
        return Err(Error::NoFrames);
    }
    let n = timings.len() as f64;
    let mut mean_ms = [0.0f64; 5];
    for t in timings {
        for (s, m) in mean_ms.iter_mut().enumerate() {
            *m += t.stage(s);
        }
    }
    for m in mean_ms.iter_mut() {
        *m /= n;
    }
    let mean_total_ms = timings.iter().map(|t| t.total_ms).sum::<f64>() / n;
    let denom = if mean_total_ms > 0.0 {
        mean_total_ms
    } else {
        1.0
    };
    let mut percent = [0.0f64; 5];
    for s in 0..5 {
        percent[s] = 100.0 * mean_ms[s] / denom;
    }
    Ok(StageReport {
        mean_ms,
        percent,
        mean_total_ms,
    })
}

impl StageReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("stage,mean_ms,percent\n");
        for i in 0..5 {
            s.push_str(&format!(
                "{},{:.3},{:.1}\n",
                STAGE_NAMES[i], self.mean_ms[i], self.percent[i]
            ));
        }
        s.push_str(&format!("total,{:.3},100.0\n", self.mean_total_ms));
        s
    }

    pub fn text(&self) -> String {
        let mut s = format!("{:<20} {:>10} {:>12}\n", "stage", "time [ms]", "share [%]");
        for i in 0..5 {
            s.push_str(&format!(
                "{:<20} {:>10.2} {:>12.1}\n",
                STAGE_NAMES[i], self.mean_ms[i], self.percent[i]
            ));
        }
        s.push_str(&format!(
            "{:<20} {:>10.2} {:>12.1}\n",
            "total", self.mean_total_ms, 100.0
        ));
        s
    }
}

/// Per-frame timings as CSV, one row per frame.
pub fn timings_csv(timings: &[StageTiming]) -> String {
    let mut s = String::from(
        "frame,scan_binning_ms,raycasting_cache_ms,classification_ms,no_return_evidence_ms,validation_ms,total_ms\n",
    );
    for t in timings {
        s.push_str(&format!(
            "{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            t.frame_id,
            t.scan_binning_ms,
            t.raycasting_cache_ms,
            t.classification_ms,
            t.no_return_evidence_ms,
            t.validation_ms,
            t.total_ms
        ));
    }
    s
}

/// Labels of one processed frame, plus the mapping back to raw records.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub frame_id: usize,
    pub labels: LabelSet,
    pub raw_indices: Vec<u32>,
    pub raw_count: usize,
}

impl FrameResult {
    /// One byte per raw record: 0 = static, 1 = dynamic. Records dropped at
    /// ingestion stay 0.
    pub fn pred_bytes(&self) -> Vec<u8> {
        let mut bytes = vec![0u8; self.raw_count];
        for (k, &ri) in self.raw_indices.iter().enumerate() {
            if self.labels.is_dynamic(k) {
                bytes[ri as usize] = 1;
            }
        }
        bytes
    }
}

/// Everything a run produces.
#[derive(Debug)]
pub struct RunOutput {
    pub frames: Vec<FrameResult>,
    /// Static-labeled world points, one representative per voxel, ordered by
    /// voxel key.
    pub static_map: Vec<Point3>,
    pub timings: Vec<StageTiming>,
    /// Frames skipped because they were empty after ingestion filtering.
    pub skipped: Vec<usize>,
    /// Final state of the prior map.
    pub map: VoxelMap,
}

enum FrameSupply<'a> {
    Memory(&'a [FrameInput]),
    Disk {
        seq: &'a LoadedSequence,
        filter: RangeFilter,
    },
}

impl FrameSupply<'_> {
    fn iterate(&self) -> Box<dyn Iterator<Item = Result<FrameInput, Error>> + '_> {
        match self {
            FrameSupply::Memory(v) => Box::new(v.iter().cloned().map(Ok)),
            FrameSupply::Disk { seq, filter } => {
                Box::new(seq.frame_ids().map(move |i| seq.read_frame(i, *filter)))
            }
        }
    }
}

/// Resolves the direction-grid geometry for one frame: configured vertical
/// field of view when set, otherwise the scan's observed elevation span
/// padded by one bin.
pub fn resolve_spec(config: &PipelineConfig, points: &[Point3]) -> GridSpec {
    let (beta_min, beta_max) = match (config.beta_min, config.beta_max) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => {
            // Derive the vertical field of view from the scan itself, padded
            // by one pre-padding bin height.
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for p in points {
                let r = p.range();
                if r > 0.0 {
                    let el = (p.z / r).asin();
                    lo = lo.min(el);
                    hi = hi.max(el);
                }
            }
            if !lo.is_finite() || !hi.is_finite() {
                (-0.5, 0.5)
            } else {
                let mut pad = (hi - lo) / config.n_el as f64;
                if !(pad > 0.0) {
                    pad = 1e-3;
                }
                (
                    config.beta_min.unwrap_or(lo - pad),
                    config.beta_max.unwrap_or(hi + pad),
                )
            }
        }
    };
    GridSpec::new(
        config.n_az,
        config.n_el,
        beta_min,
        beta_max,
        config.range_max,
    )
}

struct FrameOutcome {
    labels: LabelSet,
    world: Vec<Point3>,
    grid: AzElGrid,
    timing: StageTiming,
}

/// The per-frame read-only phase: bin, cast, classify, validate.
fn process_frame(input: &FrameInput, map: &VoxelMap, config: &PipelineConfig) -> FrameOutcome {
    let scan = &input.scan;
    let mut timing = StageTiming {
        frame_id: scan.frame_id,
        ..Default::default()
    };

    let t = Instant::now();
    let spec = resolve_spec(config, &scan.points);
    let mut grid = AzElGrid::bin_scan(scan, spec);
    timing.scan_binning_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let frozen = map.freeze();
    grid.cast_rays(
        &frozen,
        &scan.pose,
        CastOptions {
            pad: config.consistency.neighbor_radius,
            all_bins: config.evidence_enabled,
        },
    );
    timing.raycasting_cache_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let mut labels = classify_frame(&grid, scan.points.len(), &config.consistency);
    timing.classification_ms = t.elapsed().as_secs_f64() * 1e3;

    let world: Vec<Point3> = scan.points.iter().map(|p| scan.pose.transform(p)).collect();

    let t = Instant::now();
    let ranges: Vec<f64> = scan.points.iter().map(|p| p.range()).collect();
    validate_frame(&mut labels, &world, &ranges, map, &config.validation);
    timing.validation_ms = t.elapsed().as_secs_f64() * 1e3;

    FrameOutcome {
        labels,
        world,
        grid,
        timing,
    }
}

fn run_supply(
    supply: FrameSupply<'_>,
    config: &PipelineConfig,
    threads: usize,
) -> Result<RunOutput, Error> {
    config.validate().map_err(|e| Error::Config {
        path: "<config>".into(),
        source: e,
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction");
    pool.install(|| match config.map_mode {
        MapMode::Incremental => run_incremental(supply, config),
        MapMode::TwoPass => run_two_pass(supply, config),
    })
}

fn run_incremental(supply: FrameSupply<'_>, config: &PipelineConfig) -> Result<RunOutput, Error> {
    let mut map = VoxelMap::new(config.voxel_size);
    let mut out_voxels: FxHashMap<VoxelKey, Point3> = FxHashMap::default();
    let mut frames = Vec::new();
    let mut timings = Vec::new();
    let mut skipped = Vec::new();

    for frame in supply.iterate() {
        let input = frame?;
        let frame_id = input.scan.frame_id;
        if input.scan.is_empty() {
            skipped.push(frame_id);
            frames.push(FrameResult {
                frame_id,
                labels: LabelSet::all_static(0),
                raw_indices: input.raw_indices,
                raw_count: input.raw_count,
            });
            continue;
        }

        let frame_start = Instant::now();
        if map.is_empty() {
            // Bootstrap: the first non-empty frame seeds the map wholesale.
            let labels = LabelSet::all_static(input.scan.points.len());
            let world: Vec<Point3> = input
                .scan
                .points
                .iter()
                .map(|p| input.scan.pose.transform(p))
                .collect();
            map.insert_points(&world);
            for w in &world {
                out_voxels.entry(map.key_of(w)).or_insert(*w);
            }
            timings.push(StageTiming {
                frame_id,
                total_ms: frame_start.elapsed().as_secs_f64() * 1e3,
                ..Default::default()
            });
            frames.push(FrameResult {
                frame_id,
                labels,
                raw_indices: input.raw_indices,
                raw_count: input.raw_count,
            });
            continue;
        }

        let mut outcome = process_frame(&input, &map, config);

        // Map update: static points only; dynamic points never enter.
        for (idx, w) in outcome.world.iter().enumerate() {
            if !outcome.labels.is_dynamic(idx) {
                map.insert_key(map.key_of(w));
                out_voxels.entry(map.key_of(w)).or_insert(*w);
            }
        }

        if config.evidence_enabled {
            let t = Instant::now();
            collect_no_return(&outcome.grid, &mut map, &config.consistency);
            map.apply_evidence(config.miss_threshold);
            outcome.timing.no_return_evidence_ms = t.elapsed().as_secs_f64() * 1e3;
        }

        outcome.timing.total_ms = frame_start.elapsed().as_secs_f64() * 1e3;
        timings.push(outcome.timing);
        frames.push(FrameResult {
            frame_id,
            labels: outcome.labels,
            raw_indices: input.raw_indices,
            raw_count: input.raw_count,
        });
    }

    if frames.is_empty() {
        return Err(Error::NoFrames);
    }
    Ok(RunOutput {
        frames,
        static_map: sorted_points(out_voxels),
        timings,
        skipped,
        map,
    })
}

fn run_two_pass(supply: FrameSupply<'_>, config: &PipelineConfig) -> Result<RunOutput, Error> {
    // Pass 1: accumulate everything.
    let mut map = VoxelMap::new(config.voxel_size);
    let mut out_voxels: FxHashMap<VoxelKey, Point3> = FxHashMap::default();
    let mut any = false;
    for frame in supply.iterate() {
        let input = frame?;
        any = true;
        for p in &input.scan.points {
            let w = input.scan.pose.transform(p);
            map.insert_key(map.key_of(&w));
            out_voxels.entry(map.key_of(&w)).or_insert(w);
        }
    }
    if !any {
        return Err(Error::NoFrames);
    }

    // Pass 2: classify every frame against the fixed map.
    let mut frames = Vec::new();
    let mut timings = Vec::new();
    let mut skipped = Vec::new();
    let mut dynamic_voxels: FxHashSet<VoxelKey> = FxHashSet::default();
    for frame in supply.iterate() {
        let input = frame?;
        let frame_id = input.scan.frame_id;
        if input.scan.is_empty() {
            skipped.push(frame_id);
            frames.push(FrameResult {
                frame_id,
                labels: LabelSet::all_static(0),
                raw_indices: input.raw_indices,
                raw_count: input.raw_count,
            });
            continue;
        }
        let frame_start = Instant::now();
        let mut outcome = process_frame(&input, &map, config);
        if config.evidence_enabled {
            // Counters are collected for reporting, but the fixed map is not
            // edited mid-pass.
            let t = Instant::now();
            collect_no_return(&outcome.grid, &mut map, &config.consistency);
            outcome.timing.no_return_evidence_ms = t.elapsed().as_secs_f64() * 1e3;
        }
        for (idx, w) in outcome.world.iter().enumerate() {
            if outcome.labels.is_dynamic(idx) {
                dynamic_voxels.insert(map.key_of(w));
            }
        }
        outcome.timing.total_ms = frame_start.elapsed().as_secs_f64() * 1e3;
        timings.push(outcome.timing);
        frames.push(FrameResult {
            frame_id,
            labels: outcome.labels,
            raw_indices: input.raw_indices,
            raw_count: input.raw_count,
        });
    }

    out_voxels.retain(|k, _| !dynamic_voxels.contains(k));
    Ok(RunOutput {
        frames,
        static_map: sorted_points(out_voxels),
        timings,
        skipped,
        map,
    })
}

fn sorted_points(voxels: FxHashMap<VoxelKey, Point3>) -> Vec<Point3> {
    let mut entries: Vec<(VoxelKey, Point3)> = voxels.into_iter().collect();
    entries.sort_by_key(|(k, _)| *k);
    entries.into_iter().map(|(_, p)| p).collect()
}

/// Runs the pipeline over in-memory frames.
pub fn run_frames(
    frames: &[FrameInput],
    config: &PipelineConfig,
    threads: usize,
) -> Result<RunOutput, Error> {
    run_supply(FrameSupply::Memory(frames), config, threads)
}

/// Runs the pipeline over an on-disk sequence.
pub fn run_sequence(
    source: &SequenceSource,
    config: &PipelineConfig,
    threads: usize,
) -> Result<RunOutput, Error> {
    let seq = source.load()?;
    let filter = RangeFilter {
        min: config.range_min,
        max: config.range_max,
    };
    run_supply(FrameSupply::Disk { seq: &seq, filter }, config, threads)
}
