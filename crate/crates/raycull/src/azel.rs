//! Azimuth-elevation grid construction and the per-frame raycasting cache.
//!
//! Each scan is binned onto a uniform azimuth-elevation direction grid. For
//! every viewing direction that matters, one ray is cast from the sensor
//! origin through the voxel map in the world frame, and the distance at
//! which the ray first enters an occupied voxel is cached. The consistency
//! check later compares this cache against the bin-wise scan minima along
//! the same visibility.

use rayon::prelude::*;

use crate::geom::{Point3, PoseSE3, Scan};
use crate::voxel::{FrozenOccupancy, VoxelKey};

/// Smallest representable hit distance; returned when the ray origin itself
/// sits inside an occupied voxel.
pub const MIN_HIT_DISTANCE: f64 = 1e-6;

/// Geometry of the direction grid: azimuth bin count, elevation bin count,
/// vertical field of view, and the ray truncation range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n_az: usize,
    pub n_el: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub r_max: f64,
}

impl GridSpec {
    pub fn new(n_az: usize, n_el: usize, beta_min: f64, beta_max: f64, r_max: f64) -> Self {
        assert!(n_az > 0 && n_el > 0, "bin counts must be positive");
        assert!(
            beta_min < beta_max,
            "vertical field of view must be nonempty"
        );
        assert!(r_max > 0.0, "truncation range must be positive");
        GridSpec {
            n_az,
            n_el,
            beta_min,
            beta_max,
            r_max,
        }
    }

    /// Azimuth step size (radians per bin).
    pub fn delta_az(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n_az as f64
    }

    /// Elevation step size (radians per bin).
    pub fn delta_el(&self) -> f64 {
        (self.beta_max - self.beta_min) / self.n_el as f64
    }

    pub fn bin_count(&self) -> usize {
        self.n_az * self.n_el
    }

    #[inline]
    pub fn flat_index(&self, i: usize, j: usize) -> usize {
        i * self.n_el + j
    }

    /// Center angles of bin `(i, j)`.
    pub fn bin_center(&self, i: usize, j: usize) -> (f64, f64) {
        let az = -std::f64::consts::PI + (i as f64 + 0.5) * self.delta_az();
        let el = self.beta_min + (j as f64 + 0.5) * self.delta_el();
        (az, el)
    }
}

/// Assigns a sensor-frame point to its direction bin.
///
/// Azimuth is wrapped to (-pi, pi] and the azimuth index is clamped into
/// range, so the result is total over the vertical field of view. Points
/// whose elevation falls outside `[beta_min, beta_max]` get `None`, as do
/// zero-range points, whose direction is undefined.
pub fn bin_of(spec: &GridSpec, p: &Point3) -> Option<(usize, usize)> {
    let r = p.range();
    if !(r > 0.0) {
        return None;
    }
    let mut az = p.y.atan2(p.x);
    if az == -std::f64::consts::PI {
        az = std::f64::consts::PI;
    }
    let el = (p.z / r).asin();
    if el < spec.beta_min || el > spec.beta_max {
        return None;
    }
    let i = (((az + std::f64::consts::PI) / spec.delta_az()) as usize).min(spec.n_az - 1);
    let j = (((el - spec.beta_min) / spec.delta_el()) as usize).min(spec.n_el - 1);
    Some((i, j))
}

/// Unit direction of the bin center, rotated into the world frame.
pub fn bin_direction_world(spec: &GridSpec, pose: &PoseSE3, i: usize, j: usize) -> Point3 {
    let (az, el) = spec.bin_center(i, j);
    let (saz, caz) = az.sin_cos();
    let (sel, cel) = el.sin_cos();
    let u = Point3::new(caz * cel, saz * cel, sel);
    pose.rotate(&u)
}

/// Casts a ray through the voxel map and returns the distance at which it
/// first enters an occupied voxel, or `f64::INFINITY` if none is entered
/// within `r_max`.
///
/// The traversal visits voxels in ray order, stepping across one face per
/// iteration. The reported distance is the entry-face ray parameter of the
/// first occupied voxel. If the origin's own voxel is occupied the result is
/// [`MIN_HIT_DISTANCE`].
pub fn cast_ray(map: &FrozenOccupancy<'_>, origin: &Point3, dir: &Point3, r_max: f64) -> f64 {
    match cast_ray_hit(map, origin, dir, r_max) {
        Some((t, _)) => t,
        None => f64::INFINITY,
    }
}

/// Like [`cast_ray`] but also reports which voxel was hit, for the
/// free-space evidence counters.
pub fn cast_ray_hit(
    map: &FrozenOccupancy<'_>,
    origin: &Point3,
    dir: &Point3,
    r_max: f64,
) -> Option<(f64, VoxelKey)> {
    debug_assert!(
        (dir.range() - 1.0).abs() < 1e-6,
        "direction must be unit length"
    );
    let v = map.voxel_size();
    let mut cell = VoxelKey::of(origin, v);
    if map.is_occupied(&cell) {
        return Some((MIN_HIT_DISTANCE, cell));
    }

    let dirs = [dir.x, dir.y, dir.z];
    let orig = [origin.x, origin.y, origin.z];
    let idx = [cell.ix, cell.iy, cell.iz];
    let mut step = [0i32; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        if dirs[a] > 0.0 {
            step[a] = 1;
            t_delta[a] = v / dirs[a];
            t_max[a] = ((idx[a] as f64 + 1.0) * v - orig[a]) / dirs[a];
        } else if dirs[a] < 0.0 {
            step[a] = -1;
            t_delta[a] = -v / dirs[a];
            t_max[a] = (idx[a] as f64 * v - orig[a]) / dirs[a];
        }
    }

    loop {
        let axis = if t_max[0] <= t_max[1] {
            if t_max[0] <= t_max[2] {
                0
            } else {
                2
            }
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        let t = t_max[axis];
        if !(t <= r_max) {
            return None;
        }
        match axis {
            0 => cell.ix += step[0],
            1 => cell.iy += step[1],
            _ => cell.iz += step[2],
        }
        if map.is_occupied(&cell) {
            return Some((t.max(MIN_HIT_DISTANCE), cell));
        }
        t_max[axis] += t_delta[axis];
    }
}

/// Options controlling which bins of the grid get a ray cast.
#[derive(Debug, Clone, Copy)]
pub struct CastOptions {
    /// Also cast the Chebyshev neighborhood of this radius around every
    /// populated bin, so the consistency window sees map hits next to the
    /// scan's own directions.
    pub pad: usize,
    /// Cast every bin of the grid, populated or not. Required for
    /// free-space (no-return) bookkeeping.
    pub all_bins: bool,
}

impl Default for CastOptions {
    fn default() -> Self {
        CastOptions {
            pad: 1,
            all_bins: false,
        }
    }
}

/// The per-frame direction grid: bin-wise scan minima, per-bin member
/// indices into the scan, and the cached first-hit distances.
#[derive(Debug, Clone)]
pub struct AzElGrid {
    pub spec: GridSpec,
    /// Minimum range of the scan points in each bin; +inf where empty.
    scan_min: Vec<f64>,
    /// CSR layout of per-bin member indices into the scan.
    member_start: Vec<u32>,
    member_idx: Vec<u32>,
    /// First-hit distance per bin; +inf where the ray missed or was never cast.
    cast: Vec<f64>,
    /// Voxel hit by the cast ray, parallel to `cast`.
    cast_hit: Vec<Option<VoxelKey>>,
    /// Flat indices of bins holding at least one scan point, ascending.
    populated: Vec<u32>,
    /// Scan indices that fell outside the vertical field of view.
    out_of_fov: Vec<u32>,
}

impl AzElGrid {
    /// Bins the scan. Raycasting is done separately by [`AzElGrid::cast_rays`]
    /// so the two stages can be timed independently.
    pub fn bin_scan(scan: &Scan, spec: GridSpec) -> AzElGrid {
        let bins = spec.bin_count();
        let mut counts = vec![0u32; bins];
        let mut assignment: Vec<u32> = Vec::with_capacity(scan.points.len());
        let mut out_of_fov = Vec::new();
        for (idx, p) in scan.points.iter().enumerate() {
            match bin_of(&spec, p) {
                Some((i, j)) => {
                    let flat = spec.flat_index(i, j) as u32;
                    counts[flat as usize] += 1;
                    assignment.push(flat);
                }
                None => {
                    out_of_fov.push(idx as u32);
                    assignment.push(u32::MAX);
                }
            }
        }

        let mut member_start = vec![0u32; bins + 1];
        for b in 0..bins {
            member_start[b + 1] = member_start[b] + counts[b];
        }
        let total = member_start[bins] as usize;
        let mut cursor = member_start.clone();
        let mut member_idx = vec![0u32; total];
        for (idx, &flat) in assignment.iter().enumerate() {
            if flat == u32::MAX {
                continue;
            }
            member_idx[cursor[flat as usize] as usize] = idx as u32;
            cursor[flat as usize] += 1;
        }

        let mut scan_min = vec![f64::INFINITY; bins];
        let mut populated = Vec::new();
        for b in 0..bins {
            let lo = member_start[b] as usize;
            let hi = member_start[b + 1] as usize;
            if lo == hi {
                continue;
            }
            populated.push(b as u32);
            let mut best = f64::INFINITY;
            for &pi in &member_idx[lo..hi] {
                let r = scan.points[pi as usize].range();
                if r < best {
                    best = r;
                }
            }
            scan_min[b] = best;
        }

        AzElGrid {
            spec,
            scan_min,
            member_start,
            member_idx,
            cast: vec![f64::INFINITY; bins],
            cast_hit: vec![None; bins],
            populated,
            out_of_fov,
        }
    }

    /// Builds a grid holding a given cast array with no scan points binned.
    /// For fixtures and debugging of the consistency-window logic.
    pub fn from_cast(spec: GridSpec, cast: Vec<f64>) -> AzElGrid {
        assert_eq!(cast.len(), spec.bin_count());
        let bins = spec.bin_count();
        AzElGrid {
            spec,
            scan_min: vec![f64::INFINITY; bins],
            member_start: vec![0; bins + 1],
            member_idx: Vec::new(),
            cast,
            cast_hit: vec![None; bins],
            populated: Vec::new(),
            out_of_fov: Vec::new(),
        }
    }

    /// Fills the raycasting cache against a frozen map, from the scan pose.
    ///
    /// Rays are cast only for populated bins plus the configured padding
    /// (or all bins when requested); every other bin keeps +inf. Bins are
    /// independent, so the work is data-parallel and the result does not
    /// depend on the worker count.
    pub fn cast_rays(&mut self, map: &FrozenOccupancy<'_>, pose: &PoseSE3, opts: CastOptions) {
        let spec = self.spec;
        let targets: Vec<u32> = if opts.all_bins {
            (0..spec.bin_count() as u32).collect()
        } else if opts.pad == 0 {
            self.populated.clone()
        } else {
            let pad = opts.pad as i64;
            let mut mask = vec![false; spec.bin_count()];
            for &b in &self.populated {
                let i = b as usize / spec.n_el;
                let j = b as usize % spec.n_el;
                for di in -pad..=pad {
                    let ii = i as i64 + di;
                    if ii < 0 || ii >= spec.n_az as i64 {
                        continue;
                    }
                    for dj in -pad..=pad {
                        let jj = j as i64 + dj;
                        if jj < 0 || jj >= spec.n_el as i64 {
                            continue;
                        }
                        mask[spec.flat_index(ii as usize, jj as usize)] = true;
                    }
                }
            }
            mask.iter()
                .enumerate()
                .filter_map(|(b, &m)| if m { Some(b as u32) } else { None })
                .collect()
        };

        let origin = pose.translation;
        let results: Vec<(f64, Option<VoxelKey>)> = targets
            .par_iter()
            .map(|&b| {
                let i = b as usize / spec.n_el;
                let j = b as usize % spec.n_el;
                let dir = bin_direction_world(&spec, pose, i, j);
                match cast_ray_hit(map, &origin, &dir, spec.r_max) {
                    Some((t, key)) => (t, Some(key)),
                    None => (f64::INFINITY, None),
                }
            })
            .collect();
        for (&b, (t, key)) in targets.iter().zip(results) {
            self.cast[b as usize] = t;
            self.cast_hit[b as usize] = key;
        }
    }

    pub fn scan_min(&self, i: usize, j: usize) -> f64 {
        self.scan_min[self.spec.flat_index(i, j)]
    }

    pub fn cast_distance(&self, i: usize, j: usize) -> f64 {
        self.cast[self.spec.flat_index(i, j)]
    }

    pub fn cast_hit(&self, i: usize, j: usize) -> Option<VoxelKey> {
        self.cast_hit[self.spec.flat_index(i, j)]
    }

    pub fn members(&self, i: usize, j: usize) -> &[u32] {
        let b = self.spec.flat_index(i, j);
        let lo = self.member_start[b] as usize;
        let hi = self.member_start[b + 1] as usize;
        &self.member_idx[lo..hi]
    }

    /// Flat indices of populated bins, ascending.
    pub fn populated_bins(&self) -> &[u32] {
        &self.populated
    }

    pub fn unflatten(&self, flat: u32) -> (usize, usize) {
        (
            flat as usize / self.spec.n_el,
            flat as usize % self.spec.n_el,
        )
    }

    pub fn out_of_fov(&self) -> &[u32] {
        &self.out_of_fov
    }

    /// Finite entries of the cast array as `(i, j, distance)` rows,
    /// ascending by `(i, j)`, for debug dumps.
    pub fn cast_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut rows = Vec::new();
        for i in 0..self.spec.n_az {
            for j in 0..self.spec.n_el {
                let d = self.cast[self.spec.flat_index(i, j)];
                if d.is_finite() {
                    rows.push((i, j, d));
                }
            }
        }
        rows
    }
}
