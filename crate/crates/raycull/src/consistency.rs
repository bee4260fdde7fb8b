//! The raycast consistency check: robust neighborhood map reference,
//! bin-level range comparison, provisional per-point labels, and free-space
//! (no-return) evidence collection.
//!
//! A bin is declared dynamic when the scan return lies sufficiently in front
//! of the map's first-hit distance along the same viewing direction, with a
//! margin that grows linearly with range. Returns behind the map (erase
//! cases) stay static to prevent over-removal.

use crate::azel::AzElGrid;
use crate::voxel::VoxelMap;

/// Parameters of the consistency test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyParams {
    /// Chebyshev radius of the neighborhood window, in bins.
    pub neighbor_radius: usize,
    /// Quantile of the window hits used as the map reference, in (0, 1).
    pub quantile: f64,
    /// Constant term of the decision margin, meters.
    pub tau0: f64,
    /// Range-proportional term of the decision margin, dimensionless.
    pub tau1: f64,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        ConsistencyParams {
            neighbor_radius: 1,
            quantile: 0.9,
            tau0: 0.30,
            tau1: 0.35,
        }
    }
}

impl ConsistencyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(format!("quantile must be in (0, 1), got {}", self.quantile));
        }
        if self.tau0 < 0.0 || self.tau1 < 0.0 {
            return Err("tau0 and tau1 must be non-negative".into());
        }
        Ok(())
    }
}

/// Per-point dynamic/static label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Static,
    Dynamic,
}

/// Which stage decided the current label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Raw raycast consistency verdict.
    RayTest,
    /// Dynamic label confirmed by spatial validation.
    Validated,
    /// Dynamic label reverted to static by spatial validation.
    Reverted,
}

/// Per-point labels for one scan, with provenance.
#[derive(Debug, Clone)]
pub struct LabelSet {
    labels: Vec<Label>,
    stages: Vec<Stage>,
}

impl LabelSet {
    pub fn all_static(n: usize) -> Self {
        LabelSet {
            labels: vec![Label::Static; n],
            stages: vec![Stage::RayTest; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, idx: usize) -> Label {
        self.labels[idx]
    }

    pub fn stage(&self, idx: usize) -> Stage {
        self.stages[idx]
    }

    pub fn is_dynamic(&self, idx: usize) -> bool {
        self.labels[idx] == Label::Dynamic
    }

    pub fn set(&mut self, idx: usize, label: Label, stage: Stage) {
        self.labels[idx] = label;
        self.stages[idx] = stage;
    }

    pub fn dynamic_indices(&self) -> Vec<u32> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| {
                if l == Label::Dynamic {
                    Some(i as u32)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn dynamic_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Dynamic).count()
    }
}

/// Nearest-rank quantile: the element at index `ceil(q * n) - 1` of the
/// ascending sort. Exact on small windows, no interpolation.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Robust map reference for bin `(i, j)`: the configured quantile of the
/// finite first-hit distances in the Chebyshev window around the bin,
/// clipped to grid bounds. `None` when the window has no map hits.
pub fn map_reference(
    grid: &AzElGrid,
    i: usize,
    j: usize,
    params: &ConsistencyParams,
) -> Option<f64> {
    let spec = &grid.spec;
    let r = params.neighbor_radius as i64;
    let mut hits: Vec<f64> = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for di in -r..=r {
        let u = i as i64 + di;
        if u < 0 || u >= spec.n_az as i64 {
            continue;
        }
        for dj in -r..=r {
            let v = j as i64 + dj;
            if v < 0 || v >= spec.n_el as i64 {
                continue;
            }
            let d = grid.cast_distance(u as usize, v as usize);
            if d.is_finite() {
                hits.push(d);
            }
        }
    }
    if hits.is_empty() {
        return None;
    }
    hits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(nearest_rank(&hits, params.quantile))
}

/// The bin-level decision rule: dynamic iff the scan return lies in front of
/// the map reference by more than `tau0 + tau1 * d_scan`.
pub fn classify_bin(d_scan: f64, d_map: f64, params: &ConsistencyParams) -> Label {
    debug_assert!(d_scan.is_finite() && d_map.is_finite());
    if d_map - d_scan > params.tau0 + params.tau1 * d_scan {
        Label::Dynamic
    } else {
        Label::Static
    }
}

/// Runs the consistency test over every populated bin of the grid and
/// returns provisional labels for the whole scan.
///
/// The bin verdict propagates to every point in the bin; per-point
/// refinement is the job of spatial validation. Bins whose window holds no
/// map hits stay static, as do points outside the vertical field of view.
pub fn classify_frame(grid: &AzElGrid, n_points: usize, params: &ConsistencyParams) -> LabelSet {
    let mut labels = LabelSet::all_static(n_points);
    for &b in grid.populated_bins() {
        let (i, j) = grid.unflatten(b);
        let d_map = match map_reference(grid, i, j, params) {
            Some(d) => d,
            None => continue,
        };
        let d_scan = grid.scan_min(i, j);
        if classify_bin(d_scan, d_map, params) == Label::Dynamic {
            for &pi in grid.members(i, j) {
                labels.set(pi as usize, Label::Dynamic, Stage::RayTest);
            }
        }
    }
    labels
}

/// Collects free-space evidence from the grid into the map's counters.
///
/// A bin where the map predicts a hit but the scan has no return counts one
/// miss against the predicted voxel; a bin whose scan minimum agrees with
/// the prediction within `tau0` counts one hit for it.
pub fn collect_no_return(grid: &AzElGrid, map: &mut VoxelMap, params: &ConsistencyParams) {
    let spec = grid.spec;
    for i in 0..spec.n_az {
        for j in 0..spec.n_el {
            let key = match grid.cast_hit(i, j) {
                Some(k) => k,
                None => continue,
            };
            let d_scan = grid.scan_min(i, j);
            if d_scan.is_infinite() {
                map.record_miss(key);
            } else if (d_scan - grid.cast_distance(i, j)).abs() <= params.tau0 {
                map.record_hit(key);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::azel::{bin_of, AzElGrid, CastOptions, GridSpec};
    use crate::geom::{Point3, PoseSE3, Scan};
    use crate::voxel::VoxelMap;

    fn params() -> ConsistencyParams {
        ConsistencyParams::default()
    }

    #[test]
    fn nearest_rank_examples() {
        assert_eq!(nearest_rank(&[4.0], 0.1), 4.0);
        assert_eq!(nearest_rank(&[4.0], 0.9), 4.0);
        let d: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        assert_eq!(nearest_rank(&d, 0.9), 9.0);
        assert_eq!(nearest_rank(&d, 0.05), 1.0);
        assert_eq!(nearest_rank(&d, 0.999), 10.0);
    }

    #[test]
    fn classify_bin_rule_arithmetic() {
        let p = params();
        // e = 2.0 > 0.3 + 0.35 * 3.0 = 1.35 -> dynamic
        assert_eq!(classify_bin(3.0, 5.0, &p), Label::Dynamic);
        // e = 0.1 <= 0.3 + 0.35 * 4.9 -> static
        assert_eq!(classify_bin(4.9, 5.0, &p), Label::Static);
        // Behind the map (erase case): e <= 0 -> static
        assert_eq!(classify_bin(6.0, 5.0, &p), Label::Static);
    }

    #[test]
    fn classify_bin_monotone_in_scan_range() {
        let p = params();
        let d_map = 20.0;
        let mut seen_dynamic = false;
        // Walking d_scan downward must never flip dynamic back to static.
        for k in 0..200 {
            let d_scan = 20.0 - 0.1 * k as f64;
            if d_scan <= 0.0 {
                break;
            }
            match classify_bin(d_scan, d_map, &p) {
                Label::Dynamic => seen_dynamic = true,
                Label::Static => assert!(!seen_dynamic, "dynamic flipped back at {d_scan}"),
            }
        }
        assert!(seen_dynamic);
    }

    fn build_grid(points: Vec<Point3>, map: &VoxelMap, spec: GridSpec) -> (AzElGrid, usize) {
        let n = points.len();
        let scan = Scan::new(points, PoseSE3::identity(), 0);
        let mut grid = AzElGrid::bin_scan(&scan, spec);
        grid.cast_rays(&map.freeze(), &scan.pose, CastOptions::default());
        (grid, n)
    }

    #[test]
    fn map_reference_singleton_and_empty() {
        let spec = GridSpec::new(720, 450, -0.45, 0.05, 60.0);
        let mut map = VoxelMap::new(0.2);
        map.insert_points(&[Point3::new(4.05, 0.01, 0.01)]);
        let (grid, _) = build_grid(vec![Point3::new(2.0, 0.0, 0.0)], &map, spec);
        let (i, j) = bin_of(&spec, &Point3::new(2.0, 0.0, 0.0)).unwrap();
        let d = map_reference(&grid, i, j, &params()).unwrap();
        assert!((d - 4.0).abs() < 0.05);

        // A bin far away from any populated bin was never cast: no hits.
        assert!(map_reference(&grid, 300, 10, &params()).is_none());
    }

    #[test]
    fn frame_identical_to_map_is_static() {
        let spec = GridSpec::new(360, 60, -0.3, 0.3, 60.0);
        // A wall of points at x ~ 8 m.
        let points: Vec<Point3> = (-20..=20)
            .flat_map(|a| (-5..=5).map(move |b| Point3::new(8.0, 0.08 * a as f64, 0.08 * b as f64)))
            .collect();
        let mut map = VoxelMap::new(0.2);
        map.insert_points(&points);
        let (grid, n) = build_grid(points, &map, spec);
        let labels = classify_frame(&grid, n, &params());
        assert_eq!(labels.dynamic_count(), 0);
    }

    #[test]
    fn box_in_front_of_wall_is_dynamic() {
        // Fine grid so every sample direction gets its own bin.
        let spec = GridSpec::new(720, 450, -0.3, 0.3, 60.0);
        let wall: Vec<Point3> = (-30..=30)
            .flat_map(|a| (-8..=8).map(move |b| Point3::new(10.0, 0.1 * a as f64, 0.1 * b as f64)))
            .collect();
        let mut map = VoxelMap::new(0.2);
        map.insert_points(&wall);

        // The scan sees the wall except where a box sits halfway in front;
        // each box point replaces a wall sample along the same ray.
        let mut points = Vec::new();
        for a in -30i32..=30 {
            for b in -8i32..=8 {
                let wall_p = Point3::new(10.0, 0.1 * a as f64, 0.1 * b as f64);
                if a.abs() <= 6 && b.abs() <= 4 {
                    points.push(wall_p.scaled(0.5));
                } else {
                    points.push(wall_p);
                }
            }
        }
        let (grid, n) = build_grid(points.clone(), &map, spec);
        let labels = classify_frame(&grid, n, &params());
        for (idx, p) in points.iter().enumerate() {
            if p.range() < 7.0 {
                // e = 10 - 5 = 5 > 0.3 + 0.35 * 5.
                assert!(labels.is_dynamic(idx), "box point {idx} should be dynamic");
            } else {
                assert!(
                    !labels.is_dynamic(idx),
                    "wall point {idx} should stay static"
                );
            }
        }
    }

    #[test]
    fn empty_map_keeps_everything_static() {
        let spec = GridSpec::new(360, 60, -0.3, 0.3, 60.0);
        let map = VoxelMap::new(0.2);
        let points: Vec<Point3> = (0..50)
            .map(|k| Point3::new(5.0 + 0.1 * k as f64, 0.3, 0.0))
            .collect();
        let (grid, n) = build_grid(points, &map, spec);
        let labels = classify_frame(&grid, n, &params());
        assert_eq!(labels.dynamic_count(), 0);
    }

    #[test]
    fn scale_invariance_with_zero_slope() {
        let mut p = params();
        p.tau1 = 0.0;
        for k in 0..50 {
            let d_scan = 1.0 + 0.37 * k as f64;
            let d_map = d_scan + 0.05 * k as f64;
            let verdict = classify_bin(d_scan, d_map, &p);
            let mut scaled = p;
            scaled.tau0 *= 2.0;
            let verdict2 = classify_bin(2.0 * d_scan, 2.0 * d_map, &scaled);
            assert_eq!(verdict, verdict2);
        }
    }

    #[test]
    fn no_return_evidence_counters() {
        // Odd bin counts put one bin center exactly on the +x axis, so
        // exactly one ray can meet the single wall voxel.
        let spec = GridSpec::new(5, 3, -0.3, 0.3, 60.0);
        let mut map = VoxelMap::new(0.2);
        map.insert_points(&[Point3::new(6.05, 0.01, 0.01)]);
        let wall_key = map.key_of(&Point3::new(6.05, 0.01, 0.01));

        // Scan has no return along that direction: a miss is recorded.
        let scan = Scan::new(vec![Point3::new(0.0, 5.0, 0.0)], PoseSE3::identity(), 0);
        let mut grid = AzElGrid::bin_scan(&scan, spec);
        grid.cast_rays(
            &map.freeze(),
            &scan.pose,
            CastOptions {
                pad: 1,
                all_bins: true,
            },
        );
        collect_no_return(&grid, &mut map, &params());
        assert_eq!(map.misses(&wall_key), 1);
        assert_eq!(map.hits(&wall_key), 0);

        // Scan confirms the wall within tau0: a hit is recorded.
        let scan = Scan::new(vec![Point3::new(6.1, 0.01, 0.01)], PoseSE3::identity(), 0);
        let mut grid = AzElGrid::bin_scan(&scan, spec);
        grid.cast_rays(
            &map.freeze(),
            &scan.pose,
            CastOptions {
                pad: 1,
                all_bins: true,
            },
        );
        collect_no_return(&grid, &mut map, &params());
        assert_eq!(map.hits(&wall_key), 1);
        assert_eq!(map.misses(&wall_key), 1);
    }
}
