//! Sparse occupied-voxel set representing the prior map, with Chebyshev
//! dilation queries, free-space miss counters, and a frozen read-only view
//! optimized for ray traversal.
//!
//! Membership is exact set semantics: a voxel is occupied or it is not.
//! There is no probabilistic decay. The map is mutated only between frames;
//! during classification and raycasting of a frame it is read-only.

use rustc_hash::{FxHashMap, FxHashSet};

use crate::geom::Point3;

/// Signed integer voxel indices. A point maps to the key obtained by
/// flooring each coordinate divided by the voxel size, so voxels tile
/// space without a double-width cell at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl VoxelKey {
    pub fn new(ix: i32, iy: i32, iz: i32) -> Self {
        VoxelKey { ix, iy, iz }
    }

    pub fn of(p: &Point3, voxel_size: f64) -> Self {
        VoxelKey {
            ix: (p.x / voxel_size).floor() as i32,
            iy: (p.y / voxel_size).floor() as i32,
            iz: (p.z / voxel_size).floor() as i32,
        }
    }

    /// Chebyshev (L-infinity) distance between two keys.
    pub fn chebyshev(&self, o: &VoxelKey) -> u32 {
        let dx = (self.ix - o.ix).abs();
        let dy = (self.iy - o.iy).abs();
        let dz = (self.iz - o.iz).abs();
        dx.max(dy).max(dz) as u32
    }
}

/// The prior voxelized map: occupied keys plus hit/miss evidence counters.
#[derive(Debug, Clone)]
pub struct VoxelMap {
    voxel_size: f64,
    occupied: FxHashSet<VoxelKey>,
    miss_count: FxHashMap<VoxelKey, u32>,
    hit_count: FxHashMap<VoxelKey, u32>,
}

impl VoxelMap {
    pub fn new(voxel_size: f64) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        VoxelMap {
            voxel_size,
            occupied: FxHashSet::default(),
            miss_count: FxHashMap::default(),
            hit_count: FxHashMap::default(),
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn key_of(&self, p: &Point3) -> VoxelKey {
        VoxelKey::of(p, self.voxel_size)
    }

    /// Marks the voxels containing `points` as occupied. Idempotent per voxel.
    pub fn insert_points(&mut self, points: &[Point3]) {
        for p in points {
            self.occupied.insert(self.key_of(p));
        }
    }

    pub fn insert_key(&mut self, key: VoxelKey) {
        self.occupied.insert(key);
    }

    pub fn contains_key(&self, key: &VoxelKey) -> bool {
        self.occupied.contains(key)
    }

    /// True iff some occupied voxel is within Chebyshev distance `dilation`
    /// of the voxel containing `p`. `dilation = 0` is exact membership.
    ///
    /// The dilated set is never materialized; the neighborhood is probed at
    /// lookup time since the dilation radius is small.
    pub fn contains_dilated(&self, p: &Point3, dilation: u32) -> bool {
        let k = self.key_of(p);
        if dilation == 0 {
            return self.occupied.contains(&k);
        }
        let d = dilation as i32;
        for dx in -d..=d {
            for dy in -d..=d {
                for dz in -d..=d {
                    if self
                        .occupied
                        .contains(&VoxelKey::new(k.ix + dx, k.iy + dy, k.iz + dz))
                    {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Records free-space evidence against a voxel: the map predicted a hit
    /// there but the scan saw nothing. Counters are never reset by
    /// classification.
    pub fn record_miss(&mut self, key: VoxelKey) {
        *self.miss_count.entry(key).or_insert(0) += 1;
    }

    /// Records confirmation evidence: the scan agreed with the map there.
    pub fn record_hit(&mut self, key: VoxelKey) {
        *self.hit_count.entry(key).or_insert(0) += 1;
    }

    pub fn misses(&self, key: &VoxelKey) -> u32 {
        self.miss_count.get(key).copied().unwrap_or(0)
    }

    pub fn hits(&self, key: &VoxelKey) -> u32 {
        self.hit_count.get(key).copied().unwrap_or(0)
    }

    /// Removes occupied voxels whose miss count reached `miss_threshold` and
    /// exceeds their hit count. Returns the removed keys in sorted order.
    pub fn apply_evidence(&mut self, miss_threshold: u32) -> Vec<VoxelKey> {
        assert!(miss_threshold >= 1, "miss threshold must be at least 1");
        let mut removed: Vec<VoxelKey> = self
            .occupied
            .iter()
            .filter(|k| {
                let m = self.misses(k);
                m >= miss_threshold && m > self.hits(k)
            })
            .copied()
            .collect();
        removed.sort();
        for k in &removed {
            self.occupied.remove(k);
        }
        removed
    }

    /// Occupied keys in sorted order, for dumps and fixtures.
    pub fn sorted_keys(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<VoxelKey> = self.occupied.iter().copied().collect();
        keys.sort();
        keys
    }

    /// Builds the read-only traversal view for the raycasting phase.
    pub fn freeze(&self) -> FrozenOccupancy<'_> {
        FrozenOccupancy::build(self)
    }
}

/// Above this many cells in the bounding box, the frozen view falls back to
/// hashed lookups instead of a dense bitmap (64 Mcell = 8 MiB of bits).
const DENSE_CELL_LIMIT: u64 = 1 << 26;

enum Occupancy<'a> {
    Empty,
    Dense {
        min: VoxelKey,
        nx: u32,
        ny: u32,
        nz: u32,
        bits: Vec<u64>,
    },
    Hashed(&'a FxHashSet<VoxelKey>),
}

/// Immutable snapshot of the occupied set for the duration of one frame.
///
/// When the occupied bounding box is compact the snapshot is a dense bitmap,
/// which makes the per-step lookup of the grid traversal a couple of loads;
/// otherwise it falls back to the hash set. Both representations answer
/// queries identically.
pub struct FrozenOccupancy<'a> {
    voxel_size: f64,
    occupancy: Occupancy<'a>,
}

impl<'a> FrozenOccupancy<'a> {
    fn build(map: &'a VoxelMap) -> Self {
        if map.occupied.is_empty() {
            return FrozenOccupancy {
                voxel_size: map.voxel_size,
                occupancy: Occupancy::Empty,
            };
        }
        let mut min = VoxelKey::new(i32::MAX, i32::MAX, i32::MAX);
        let mut max = VoxelKey::new(i32::MIN, i32::MIN, i32::MIN);
        for k in &map.occupied {
            min.ix = min.ix.min(k.ix);
            min.iy = min.iy.min(k.iy);
            min.iz = min.iz.min(k.iz);
            max.ix = max.ix.max(k.ix);
            max.iy = max.iy.max(k.iy);
            max.iz = max.iz.max(k.iz);
        }
        let nx = (max.ix - min.ix + 1) as u64;
        let ny = (max.iy - min.iy + 1) as u64;
        let nz = (max.iz - min.iz + 1) as u64;
        if nx.saturating_mul(ny).saturating_mul(nz) <= DENSE_CELL_LIMIT {
            let cells = (nx * ny * nz) as usize;
            let mut bits = vec![0u64; cells.div_ceil(64)];
            for k in &map.occupied {
                let idx = ((k.ix - min.ix) as u64 * ny + (k.iy - min.iy) as u64) * nz
                    + (k.iz - min.iz) as u64;
                bits[(idx / 64) as usize] |= 1u64 << (idx % 64);
            }
            FrozenOccupancy {
                voxel_size: map.voxel_size,
                occupancy: Occupancy::Dense {
                    min,
                    nx: nx as u32,
                    ny: ny as u32,
                    nz: nz as u32,
                    bits,
                },
            }
        } else {
            FrozenOccupancy {
                voxel_size: map.voxel_size,
                occupancy: Occupancy::Hashed(&map.occupied),
            }
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    #[inline]
    pub fn is_occupied(&self, key: &VoxelKey) -> bool {
        match &self.occupancy {
            Occupancy::Empty => false,
            Occupancy::Dense {
                min,
                nx,
                ny,
                nz,
                bits,
            } => {
                let dx = key.ix.wrapping_sub(min.ix);
                let dy = key.iy.wrapping_sub(min.iy);
                let dz = key.iz.wrapping_sub(min.iz);
                if dx < 0 || dy < 0 || dz < 0 {
                    return false;
                }
                let (dx, dy, dz) = (dx as u32, dy as u32, dz as u32);
                if dx >= *nx || dy >= *ny || dz >= *nz {
                    return false;
                }
                let idx = (dx as u64 * *ny as u64 + dy as u64) * *nz as u64 + dz as u64;
                bits[(idx / 64) as usize] & (1u64 << (idx % 64)) != 0
            }
            Occupancy::Hashed(set) => set.contains(key),
        }
    }
}
