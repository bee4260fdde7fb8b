//! Readers and writers for on-disk scan sequences, poses, calibration,
//! semantic labels, predicted labels, and point-cloud output.
//!
//! File formats:
//! - Scan files `<frame:06>.bin`: little-endian float32 records of
//!   `x y z intensity`, 16 bytes per point. Intensity is discarded.
//! - Pose file: one row-major 3x4 matrix per line, 12 whitespace-separated
//!   numbers, mapping sensor to world.
//! - Calib file: lines of `KEY: v1 .. v12`; only the `Tr` entry (the
//!   sensor-to-camera transform) is used.
//! - Label files `<frame:06>.label`: little-endian uint32 per point; the
//!   low 16 bits are the semantic class.
//! - Prediction files `<frame:06>.pred`: one byte per point, 0 = static,
//!   1 = dynamic.
//! - Point clouds: ASCII PLY 1.0 with float x/y/z and an optional
//!   uchar label property.
//!
//! The `parse_*` functions work on in-memory bytes and never touch the
//! filesystem; the `read_*`/`write_*` wrappers add path context.

use std::fs;
use std::path::{Path, PathBuf};

use rustc_hash::FxHashSet;
use thiserror::Error;

use crate::error::Error;
use crate::geom::{Mat3, Point3, PoseSE3, Scan};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("byte length {len} is not a multiple of {record}; {residual} trailing bytes")]
    Truncated {
        len: usize,
        record: usize,
        residual: usize,
    },
    #[error("line {line}: expected {expected} numeric fields, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse '{token}' as a number")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: matrix is not a rotation")]
    BadRotation { line: usize },
    #[error("no '{0}' entry found")]
    MissingEntry(&'static str),
    #[error("file is not valid UTF-8")]
    NotUtf8,
    #[error("byte {offset}: invalid prediction value {value} (expected 0 or 1)")]
    BadPredByte { offset: usize, value: u8 },
    #[error("PLY: {0}")]
    Ply(String),
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_err(path: &Path, source: FormatError) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        source,
    }
}

/// A scan as stored on disk: finite points plus bookkeeping that maps them
/// back to raw record indices, so per-raw-point label files stay aligned
/// even when non-finite records were dropped.
#[derive(Debug, Clone)]
pub struct RawScan {
    pub points: Vec<Point3>,
    /// Raw record index of each kept point, ascending.
    pub raw_indices: Vec<u32>,
    /// Total number of records in the file.
    pub raw_count: usize,
}

/// Parses a scan file: 16-byte records of four little-endian f32 values.
/// Records containing NaN or infinite coordinates are dropped.
pub fn parse_scan_bytes(bytes: &[u8]) -> Result<RawScan, FormatError> {
    if bytes.len() % 16 != 0 {
        return Err(FormatError::Truncated {
            len: bytes.len(),
            record: 16,
            residual: bytes.len() % 16,
        });
    }
    let raw_count = bytes.len() / 16;
    let mut points = Vec::with_capacity(raw_count);
    let mut raw_indices = Vec::with_capacity(raw_count);
    for (i, rec) in bytes.chunks_exact(16).enumerate() {
        let x = f32::from_le_bytes(rec[0..4].try_into().unwrap()) as f64;
        let y = f32::from_le_bytes(rec[4..8].try_into().unwrap()) as f64;
        let z = f32::from_le_bytes(rec[8..12].try_into().unwrap()) as f64;
        let p = Point3::new(x, y, z);
        if p.is_finite() {
            points.push(p);
            raw_indices.push(i as u32);
        }
    }
    Ok(RawScan {
        points,
        raw_indices,
        raw_count,
    })
}

fn parse_twelve(line_no: usize, line: &str) -> Result<[f64; 12], FormatError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 12 {
        return Err(FormatError::FieldCount {
            line: line_no,
            expected: 12,
            found: tokens.len(),
        });
    }
    let mut vals = [0.0f64; 12];
    for (i, t) in tokens.iter().enumerate() {
        vals[i] = t.parse::<f64>().map_err(|_| FormatError::BadNumber {
            line: line_no,
            token: t.to_string(),
        })?;
        if !vals[i].is_finite() {
            return Err(FormatError::BadNumber {
                line: line_no,
                token: t.to_string(),
            });
        }
    }
    Ok(vals)
}

fn pose_from_row_major(line_no: usize, v: &[f64; 12]) -> Result<PoseSE3, FormatError> {
    let rot = Mat3::from_rows([v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]);
    let t = Point3::new(v[3], v[7], v[11]);
    PoseSE3::new(rot, t).map_err(|_| FormatError::BadRotation { line: line_no })
}

/// Parses a pose file: one row-major 3x4 matrix per non-blank line.
pub fn parse_poses_text(text: &str) -> Result<Vec<PoseSE3>, FormatError> {
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals = parse_twelve(idx + 1, line)?;
        poses.push(pose_from_row_major(idx + 1, &vals)?);
    }
    Ok(poses)
}

/// Parses a calibration file and extracts the `Tr` transform.
pub fn parse_calib_text(text: &str) -> Result<PoseSE3, FormatError> {
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line
            .strip_prefix("Tr:")
            .or_else(|| line.strip_prefix("Tr "))
        {
            let vals = parse_twelve(idx + 1, rest)?;
            return pose_from_row_major(idx + 1, &vals);
        }
    }
    Err(FormatError::MissingEntry("Tr"))
}

/// Remaps a pose through the calibration transform so it moves points in
/// the sensor frame: `Tr^-1 * P * Tr`.
pub fn remap_pose(pose: &PoseSE3, tr: &PoseSE3) -> PoseSE3 {
    tr.inverse().compose(pose).compose(tr)
}

/// Parses a label file: little-endian uint32 per point, low 16 bits are the
/// semantic class.
pub fn parse_label_bytes(bytes: &[u8]) -> Result<Vec<u16>, FormatError> {
    if bytes.len() % 4 != 0 {
        return Err(FormatError::Truncated {
            len: bytes.len(),
            record: 4,
            residual: bytes.len() % 4,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| (u32::from_le_bytes(c.try_into().unwrap()) & 0xffff) as u16)
        .collect())
}

/// Parses a prediction file: one byte per point, 0 or 1.
pub fn parse_pred_bytes(bytes: &[u8]) -> Result<Vec<u8>, FormatError> {
    for (offset, &b) in bytes.iter().enumerate() {
        if b > 1 {
            return Err(FormatError::BadPredByte { offset, value: b });
        }
    }
    Ok(bytes.to_vec())
}

/// Semantic classes treated as moving by default (the moving-object classes
/// of the common odometry labeling convention).
pub const DEFAULT_MOVING_CLASSES: [u16; 8] = [252, 253, 254, 255, 256, 257, 258, 259];

/// Per-point semantic classes for one scan plus the set of classes that
/// count as moving.
#[derive(Debug, Clone)]
pub struct GroundTruthLabels {
    pub classes: Vec<u16>,
    moving: FxHashSet<u16>,
}

impl GroundTruthLabels {
    pub fn new(classes: Vec<u16>) -> Self {
        GroundTruthLabels {
            classes,
            moving: DEFAULT_MOVING_CLASSES.iter().copied().collect(),
        }
    }

    pub fn with_moving_classes(classes: Vec<u16>, moving: impl IntoIterator<Item = u16>) -> Self {
        GroundTruthLabels {
            classes,
            moving: moving.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn is_moving(&self, idx: usize) -> bool {
        self.moving.contains(&self.classes[idx])
    }
}

/// A parsed ASCII PLY cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud {
    pub points: Vec<Point3>,
    pub labels: Option<Vec<u8>>,
}

/// Serializes points (and optional per-point labels) as ASCII PLY 1.0.
/// Output order equals input order; coordinates are written as f32.
pub fn ply_to_string(points: &[Point3], labels: Option<&[u8]>) -> String {
    if let Some(l) = labels {
        assert_eq!(l.len(), points.len(), "one label per point");
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", points.len()));
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if labels.is_some() {
        s.push_str("property uchar label\n");
    }
    s.push_str("end_header\n");
    for (i, p) in points.iter().enumerate() {
        match labels {
            Some(l) => s.push_str(&format!(
                "{} {} {} {}\n",
                p.x as f32, p.y as f32, p.z as f32, l[i]
            )),
            None => s.push_str(&format!("{} {} {}\n", p.x as f32, p.y as f32, p.z as f32)),
        }
    }
    s
}

/// Parses the ASCII PLY subset produced by [`ply_to_string`].
pub fn parse_ply_ascii(bytes: &[u8]) -> Result<PlyCloud, FormatError> {
    fn next_meaningful<'a>(
        lines: &mut std::iter::Enumerate<std::str::Lines<'a>>,
    ) -> Option<(usize, &'a str)> {
        loop {
            match lines.next() {
                Some((_, l)) if l.trim_start().starts_with("comment") => continue,
                Some((n, l)) => return Some((n, l.trim())),
                None => return None,
            }
        }
    }

    let text = std::str::from_utf8(bytes).map_err(|_| FormatError::NotUtf8)?;
    let mut lines = text.lines().enumerate();
    let bad = |msg: &str| FormatError::Ply(msg.to_string());

    match next_meaningful(&mut lines) {
        Some((_, "ply")) => {}
        _ => return Err(bad("missing 'ply' magic")),
    }
    match next_meaningful(&mut lines) {
        Some((_, "format ascii 1.0")) => {}
        _ => return Err(bad("only 'format ascii 1.0' is supported")),
    }
    let count = match next_meaningful(&mut lines) {
        Some((_, l)) if l.starts_with("element vertex ") => l["element vertex ".len()..]
            .trim()
            .parse::<usize>()
            .map_err(|_| bad("bad vertex count"))?,
        _ => return Err(bad("expected 'element vertex N'")),
    };
    for name in ["x", "y", "z"] {
        match next_meaningful(&mut lines) {
            Some((_, l)) if l == format!("property float {name}") => {}
            _ => return Err(bad(&format!("expected 'property float {name}'"))),
        }
    }
    let labeled = match next_meaningful(&mut lines) {
        Some((_, "property uchar label")) => {
            match next_meaningful(&mut lines) {
                Some((_, "end_header")) => {}
                _ => return Err(bad("expected 'end_header'")),
            }
            true
        }
        Some((_, "end_header")) => false,
        _ => return Err(bad("expected 'end_header'")),
    };

    // The declared count is untrusted; the rows themselves bound the real
    // memory, so cap the pre-allocation.
    let mut points = Vec::with_capacity(count.min(4096));
    let mut labels = if labeled {
        Some(Vec::with_capacity(count.min(4096)))
    } else {
        None
    };
    for _ in 0..count {
        let (n, line) = match next_meaningful(&mut lines) {
            Some(v) => v,
            None => return Err(bad("fewer rows than the vertex count")),
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        let expected = if labeled { 4 } else { 3 };
        if toks.len() != expected {
            return Err(FormatError::FieldCount {
                line: n + 1,
                expected,
                found: toks.len(),
            });
        }
        let mut coord = [0.0f64; 3];
        for a in 0..3 {
            coord[a] = toks[a].parse::<f32>().map_err(|_| FormatError::BadNumber {
                line: n + 1,
                token: toks[a].to_string(),
            })? as f64;
        }
        points.push(Point3::new(coord[0], coord[1], coord[2]));
        if let Some(l) = labels.as_mut() {
            l.push(toks[3].parse::<u8>().map_err(|_| FormatError::BadNumber {
                line: n + 1,
                token: toks[3].to_string(),
            })?);
        }
    }
    if let Some((_, extra)) = next_meaningful(&mut lines) {
        if !extra.is_empty() {
            return Err(bad("trailing data after the vertex rows"));
        }
    }
    Ok(PlyCloud { points, labels })
}

// ---------------------------------------------------------------------------
// File wrappers.

pub fn read_scan(path: &Path) -> Result<RawScan, Error> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_scan_bytes(&bytes).map_err(|e| fmt_err(path, e))
}

/// Reads poses, optionally remapping each through a calibration transform.
pub fn read_poses(path: &Path, calib: Option<&PoseSE3>) -> Result<Vec<PoseSE3>, Error> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let poses = parse_poses_text(&text).map_err(|e| fmt_err(path, e))?;
    Ok(match calib {
        Some(tr) => poses.iter().map(|p| remap_pose(p, tr)).collect(),
        None => poses,
    })
}

pub fn read_calib(path: &Path) -> Result<PoseSE3, Error> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_calib_text(&text).map_err(|e| fmt_err(path, e))
}

pub fn read_labels(path: &Path) -> Result<GroundTruthLabels, Error> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let classes = parse_label_bytes(&bytes).map_err(|e| fmt_err(path, e))?;
    Ok(GroundTruthLabels::new(classes))
}

pub fn read_pred(path: &Path) -> Result<Vec<u8>, Error> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_pred_bytes(&bytes).map_err(|e| fmt_err(path, e))
}

pub fn write_pred(path: &Path, labels: &[u8]) -> Result<(), Error> {
    fs::write(path, labels).map_err(|e| io_err(path, e))
}

pub fn write_ply(path: &Path, points: &[Point3], labels: Option<&[u8]>) -> Result<(), Error> {
    fs::write(path, ply_to_string(points, labels)).map_err(|e| io_err(path, e))
}

pub fn read_ply(path: &Path) -> Result<PlyCloud, Error> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_ply_ascii(&bytes).map_err(|e| fmt_err(path, e))
}

/// Serializes a scan into the binary record format (intensity written as 0).
pub fn scan_to_bytes(points: &[Point3]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(points.len() * 16);
    for p in points {
        bytes.extend_from_slice(&(p.x as f32).to_le_bytes());
        bytes.extend_from_slice(&(p.y as f32).to_le_bytes());
        bytes.extend_from_slice(&(p.z as f32).to_le_bytes());
        bytes.extend_from_slice(&0f32.to_le_bytes());
    }
    bytes
}

/// Serializes per-point classes into the label file format.
pub fn labels_to_bytes(classes: &[u16]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(classes.len() * 4);
    for &c in classes {
        bytes.extend_from_slice(&(c as u32).to_le_bytes());
    }
    bytes
}

/// Serializes poses as one row-major 3x4 matrix per line.
pub fn poses_to_string(poses: &[PoseSE3]) -> String {
    let mut s = String::new();
    for p in poses {
        let m = &p.rotation.m;
        let t = &p.translation;
        s.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} {} {}\n",
            m[0], m[1], m[2], t.x, m[3], m[4], m[5], t.y, m[6], m[7], m[8], t.z
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// Sequence access.

/// Where a scan sequence lives on disk and which frames of it to use.
#[derive(Debug, Clone)]
pub struct SequenceSource {
    pub scan_dir: PathBuf,
    pub pose_file: PathBuf,
    pub calib_file: Option<PathBuf>,
    pub label_dir: Option<PathBuf>,
    /// Inclusive frame range; `None` means all available frames.
    pub frame_range: Option<(usize, usize)>,
}

/// Near/far range gate applied to scan points at ingestion.
#[derive(Debug, Clone, Copy)]
pub struct RangeFilter {
    pub min: f64,
    pub max: f64,
}

impl RangeFilter {
    pub fn keeps(&self, p: &Point3) -> bool {
        let r = p.range();
        r >= self.min && r <= self.max
    }
}

/// One frame ready for the pipeline: the filtered scan with its pose, plus
/// the mapping back to raw record indices.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub scan: Scan,
    pub raw_indices: Vec<u32>,
    pub raw_count: usize,
}

impl FrameInput {
    /// Wraps an in-memory scan whose points are all considered kept.
    pub fn from_scan(scan: Scan) -> Self {
        let n = scan.points.len();
        FrameInput {
            scan,
            raw_indices: (0..n as u32).collect(),
            raw_count: n,
        }
    }
}

/// A validated sequence: sorted scan paths, matching poses, resolved range.
#[derive(Debug)]
pub struct LoadedSequence {
    scan_paths: Vec<PathBuf>,
    label_dir: Option<PathBuf>,
    poses: Vec<PoseSE3>,
    first: usize,
    last: usize,
}

fn sorted_files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, Error> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.extension().map(|e| e == ext).unwrap_or(false) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

impl SequenceSource {
    /// Lists scans, reads poses (remapped through the calibration transform
    /// when one is given), and validates the frame range against both.
    pub fn load(&self) -> Result<LoadedSequence, Error> {
        let scan_paths = sorted_files_with_ext(&self.scan_dir, "bin")?;
        let calib = match &self.calib_file {
            Some(p) => Some(read_calib(p)?),
            None => None,
        };
        let poses = read_poses(&self.pose_file, calib.as_ref())?;
        if poses.len() < scan_paths.len() {
            return Err(Error::PoseCount {
                scans: scan_paths.len(),
                poses: poses.len(),
            });
        }
        let available = scan_paths.len();
        let (first, last) = match self.frame_range {
            Some((a, b)) => (a, b),
            None if available > 0 => (0, available - 1),
            None => (0, 0),
        };
        if available == 0 || first > last || last >= available {
            return Err(Error::BadFrameRange {
                start: first,
                end: last,
                available,
            });
        }
        Ok(LoadedSequence {
            scan_paths,
            label_dir: self.label_dir.clone(),
            poses,
            first,
            last,
        })
    }
}

impl LoadedSequence {
    pub fn frame_ids(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    /// Number of selected frames; loading guarantees at least one.
    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scan_path(&self, frame: usize) -> &Path {
        &self.scan_paths[frame]
    }

    pub fn pose(&self, frame: usize) -> &PoseSE3 {
        &self.poses[frame]
    }

    /// Reads and range-filters one frame.
    pub fn read_frame(&self, frame: usize, filter: RangeFilter) -> Result<FrameInput, Error> {
        let raw = read_scan(&self.scan_paths[frame])?;
        let mut points = Vec::with_capacity(raw.points.len());
        let mut raw_indices = Vec::with_capacity(raw.points.len());
        for (p, &ri) in raw.points.iter().zip(&raw.raw_indices) {
            if filter.keeps(p) {
                points.push(*p);
                raw_indices.push(ri);
            }
        }
        Ok(FrameInput {
            scan: Scan::new(points, self.poses[frame], frame),
            raw_indices,
            raw_count: raw.raw_count,
        })
    }

    /// Reads the ground-truth labels of one frame, named after the scan stem.
    pub fn read_frame_labels(&self, frame: usize) -> Result<GroundTruthLabels, Error> {
        let dir = self
            .label_dir
            .as_ref()
            .expect("sequence has no label directory");
        let stem = self.scan_paths[frame].file_stem().unwrap();
        let mut path = dir.join(stem);
        path.set_extension("label");
        read_labels(&path)
    }

    pub fn has_labels(&self) -> bool {
        self.label_dir.is_some()
    }
}
