//! Shared test fixtures: independent oracles and the synthetic arena scene.
//!
//! The oracles here deliberately avoid the implementation paths they check:
//! the raycast oracle marches and bisects instead of walking the voxel
//! lattice, and the clustering oracle is a brute-force all-pairs
//! union-find.

#![allow(dead_code)]

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use raycull::geom::Point3;
use raycull::voxel::VoxelMap;

/// Deterministic uniform sample in [0, 1).
pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform direction on the unit sphere.
pub fn random_direction(rng: &mut ChaCha8Rng) -> Point3 {
    let z = uniform(rng, -1.0, 1.0);
    let phi = uniform(rng, 0.0, 2.0 * std::f64::consts::PI);
    let s = (1.0 - z * z).sqrt();
    Point3::new(s * phi.cos(), s * phi.sin(), z)
}

/// Fine-march raycast oracle: samples the ray at `step`, reports the first
/// sample whose voxel is occupied, and bisects back to the entry face of
/// that voxel. Independent of the lattice-walking implementation.
pub fn march_cast_oracle(
    map: &VoxelMap,
    origin: &Point3,
    dir: &Point3,
    r_max: f64,
    step: f64,
) -> f64 {
    if map.contains_key(&map.key_of(origin)) {
        return 1e-6;
    }
    let mut t = step;
    // Overshoot by one step so entries just below r_max are still found;
    // the refined entry decides against the true truncation.
    while t <= r_max + step {
        let sample = *origin + dir.scaled(t);
        let key = map.key_of(&sample);
        if map.contains_key(&key) {
            let mut lo = t - step;
            let mut hi = t;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if map.key_of(&(*origin + dir.scaled(mid))) == key {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return if hi <= r_max {
                hi.max(1e-6)
            } else {
                f64::INFINITY
            };
        }
        t += step;
    }
    f64::INFINITY
}

/// Exact raycast oracle: analytic slab intersection against every occupied
/// voxel, minimum entry wins. Used to arbitrate cases where the marching
/// oracle's step is longer than a corner-clip chord.
pub fn slab_cast_oracle(map: &VoxelMap, origin: &Point3, dir: &Point3, r_max: f64) -> f64 {
    if map.contains_key(&map.key_of(origin)) {
        return 1e-6;
    }
    let v = map.voxel_size();
    let o = [origin.x, origin.y, origin.z];
    let d = [dir.x, dir.y, dir.z];
    let mut best = f64::INFINITY;
    for key in map.sorted_keys() {
        let lo = [key.ix as f64 * v, key.iy as f64 * v, key.iz as f64 * v];
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let mut miss = false;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < lo[a] || o[a] > lo[a] + v {
                    miss = true;
                    break;
                }
            } else {
                let (ta, tb) = ((lo[a] - o[a]) / d[a], (lo[a] + v - o[a]) / d[a]);
                let (ta, tb) = if ta <= tb { (ta, tb) } else { (tb, ta) };
                t0 = t0.max(ta);
                t1 = t1.min(tb);
            }
        }
        if miss || t0 > t1 || t1 <= 0.0 || t0 > r_max {
            continue;
        }
        if t0 > 0.0 && t0 < best {
            best = t0;
        }
    }
    best
}

/// Brute-force single-linkage clustering oracle: all-pairs union-find with
/// the range-adaptive connection rule. Returns the partition as sorted
/// member lists, ordered by smallest member.
pub fn brute_force_clusters(
    points: &[Point3],
    ranges: &[f64],
    eps0: f64,
    eps1: f64,
) -> Vec<Vec<u32>> {
    let n = points.len();
    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn find(parent: &mut [u32], a: u32) -> u32 {
        let mut r = a;
        while parent[r as usize] != r {
            r = parent[r as usize];
        }
        let mut c = a;
        while parent[c as usize] != r {
            let next = parent[c as usize];
            parent[c as usize] = r;
            c = next;
        }
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let tol = eps0 + eps1 * ranges[i].min(ranges[j]);
            if (points[i] - points[j]).range() <= tol {
                let (ri, rj) = (find(&mut parent, i as u32), find(&mut parent, j as u32));
                if ri != rj {
                    let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
                    parent[hi as usize] = lo;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<u32, Vec<u32>> = Default::default();
    for i in 0..n as u32 {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<u32>> = groups.into_values().collect();
    for g in out.iter_mut() {
        g.sort_unstable();
    }
    out.sort_by_key(|g| g[0]);
    out
}

/// Closed arena with an occluder pillar and one box flying through it at
/// 0.5 m per frame. The pillar hides the box from the sensor during the
/// bootstrap frame, and the box keeps enough depth separation from every
/// background surface for the range-scaled test to see it.
pub const ARENA_SCENE: &str = "\
seed 11
frames 50
sensor 720 450 -0.45 0.25 60.0
origin 0 0 1.5
ground 0
box -20.2 -20.6 0 -19.8 20.6 5
box 19.8 -20.6 0 20.2 20.6 5
box -20.6 -20.2 0 20.6 -19.8 5
box -20.6 19.8 0 20.6 20.2 5
box -7.8 3.08 0 -6.2 3.88 4.6
mover -12.3 5.7 1.2 -11.7 6.3 1.8 0.5 0 0
";

/// The same arena restricted to a 120-degree azimuth window.
pub fn arena_scene_partial() -> String {
    format!("{ARENA_SCENE}azimuth_window 0.5236 2.6180\n")
}

/// Closed small room whose every ray returns, sized so one frame carries
/// about 120k points (490 x 245 = 120,050 rays).
pub const ROOM_SCENE: &str = "\
seed 5
frames 2
sensor 490 245 -1.0 1.0 40.0
origin 0 0 1.5
ground 0
box -10.2 -10.6 0 -9.8 10.6 4
box 9.8 -10.6 0 10.2 10.6 4
box -10.6 -10.2 0 10.6 -9.8 4
box -10.6 9.8 0 10.6 10.2 4
box -10.6 -10.6 4 10.6 10.6 4.3
";
