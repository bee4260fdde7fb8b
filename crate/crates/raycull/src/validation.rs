//! Spatial-consistency validation of provisional dynamic labels:
//! range-adaptive Euclidean clustering, cluster screening, group merging,
//! coverage-based reclassification against the dilated map, and residual
//! cleanup.
//!
//! Validation only ever moves labels from dynamic to static. Over-removal
//! suppression is one-directional by construction.

use rustc_hash::FxHashMap;

use crate::consistency::{Label, LabelSet, Stage};
use crate::geom::Point3;
use crate::voxel::{VoxelKey, VoxelMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationParams {
    /// Base clustering tolerance, meters.
    pub eps0: f64,
    /// Range-proportional clustering tolerance, per meter.
    pub eps1: f64,
    /// Scale of the minimum-size rule: a cluster at range r must have at
    /// least `max(min_cluster_size, ceil(size_rule_scale / r^2))` points.
    pub size_rule_scale: f64,
    /// Angular width of the minimum-diameter rule: a cluster at range r must
    /// be at least `max(min_cluster_diameter, width_rule_angle * r)` wide.
    pub width_rule_angle: f64,
    pub min_cluster_size: usize,
    pub min_cluster_diameter: f64,
    /// Chebyshev dilation of the map used for coverage, in voxels.
    pub map_dilation: u32,
    /// Coverage at or above which a group reverts to static.
    pub coverage_threshold: f64,
    /// Relaxed coverage threshold for thin structures.
    pub edge_coverage_threshold: f64,
    /// A group is "thin" when its smallest bounding-box side is at most this.
    pub thin_threshold: f64,
}

impl Default for ValidationParams {
    fn default() -> Self {
        ValidationParams {
            eps0: 0.3,
            eps1: 0.02,
            size_rule_scale: 2000.0,
            width_rule_angle: 0.01,
            min_cluster_size: 5,
            min_cluster_diameter: 0.2,
            map_dilation: 1,
            coverage_threshold: 0.8,
            edge_coverage_threshold: 0.4,
            thin_threshold: 0.3,
        }
    }
}

impl ValidationParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.edge_coverage_threshold > self.coverage_threshold {
            return Err("edge coverage threshold must not exceed the coverage threshold".into());
        }
        let nonneg = [
            self.eps0,
            self.eps1,
            self.size_rule_scale,
            self.width_rule_angle,
            self.min_cluster_diameter,
            self.coverage_threshold,
            self.edge_coverage_threshold,
            self.thin_threshold,
        ];
        if nonneg.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err("validation thresholds must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Minimum point count for a cluster at the given range.
    pub fn min_size_at(&self, range: f64) -> usize {
        let by_range = (self.size_rule_scale / (range * range)).ceil();
        if by_range.is_finite() && by_range > self.min_cluster_size as f64 {
            by_range as usize
        } else {
            self.min_cluster_size
        }
    }

    /// Minimum horizontal diameter for a cluster at the given range.
    pub fn min_diameter_at(&self, range: f64) -> f64 {
        self.min_cluster_diameter.max(self.width_rule_angle * range)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    fn of(points: impl Iterator<Item = Point3>) -> Option<Aabb> {
        let mut it = points;
        let first = it.next()?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            bb.min.x = bb.min.x.min(p.x);
            bb.min.y = bb.min.y.min(p.y);
            bb.min.z = bb.min.z.min(p.z);
            bb.max.x = bb.max.x.max(p.x);
            bb.max.y = bb.max.y.max(p.y);
            bb.max.z = bb.max.z.max(p.z);
        }
        Some(bb)
    }

    fn merged(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: Point3::new(
                self.min.x.min(o.min.x),
                self.min.y.min(o.min.y),
                self.min.z.min(o.min.z),
            ),
            max: Point3::new(
                self.max.x.max(o.max.x),
                self.max.y.max(o.max.y),
                self.max.z.max(o.max.z),
            ),
        }
    }

    /// Horizontal diameter: diagonal of the xy extent.
    pub fn horizontal_diameter(&self) -> f64 {
        let dx = self.max.x - self.min.x;
        let dy = self.max.y - self.min.y;
        (dx * dx + dy * dy).sqrt()
    }

    /// Smallest side of the box.
    pub fn thinnest_side(&self) -> f64 {
        let dx = self.max.x - self.min.x;
        let dy = self.max.y - self.min.y;
        let dz = self.max.z - self.min.z;
        dx.min(dy).min(dz)
    }
}

/// A connected component of dynamic points. Member indices point into the
/// arrays handed to [`cluster_dynamic`].
#[derive(Debug, Clone)]
pub struct Cluster {
    pub members: Vec<u32>,
    pub median_range: f64,
    pub bbox: Aabb,
}

impl Cluster {
    pub fn horizontal_diameter(&self) -> f64 {
        self.bbox.horizontal_diameter()
    }
}

/// A set of voxel-adjacent clusters treated as one object hypothesis.
#[derive(Debug, Clone)]
pub struct Group {
    /// Indices into the cluster list this group was merged from.
    pub cluster_indices: Vec<u32>,
    pub members: Vec<u32>,
    pub bbox: Aabb,
}

impl Group {
    pub fn thinnest_side(&self) -> f64 {
        self.bbox.thinnest_side()
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, a: u32) -> u32 {
        let mut root = a;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = a;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Anchor to the smaller index so output ordering is stable.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn components_to_clusters(points: &[Point3], ranges: &[f64], uf: &mut UnionFind) -> Vec<Cluster> {
    let n = points.len();
    let mut by_root: FxHashMap<u32, Vec<u32>> = FxHashMap::default();
    for i in 0..n as u32 {
        by_root.entry(uf.find(i)).or_default().push(i);
    }
    let mut clusters: Vec<Cluster> = by_root
        .into_values()
        .map(|mut members| {
            members.sort_unstable();
            let bbox = Aabb::of(members.iter().map(|&i| points[i as usize])).unwrap();
            let median_range = median(members.iter().map(|&i| ranges[i as usize]).collect());
            Cluster {
                members,
                median_range,
                bbox,
            }
        })
        .collect();
    clusters.sort_by_key(|c| c.members[0]);
    clusters
}

/// Single-linkage Euclidean clustering with a range-adaptive connection
/// threshold: two points connect iff their distance is at most
/// `eps0 + eps1 * min(r_a, r_b)`, where r is each point's sensor range.
///
/// `points` are world-frame positions; `ranges` are the matching sensor
/// ranges. Clusters come out ordered by smallest member index, members
/// ascending.
pub fn cluster_dynamic(
    points: &[Point3],
    ranges: &[f64],
    params: &ValidationParams,
) -> Vec<Cluster> {
    assert_eq!(points.len(), ranges.len());
    if points.is_empty() {
        return Vec::new();
    }
    let max_range = ranges.iter().cloned().fold(0.0f64, f64::max);
    let cell = (params.eps0 + params.eps1 * max_range).max(1e-9);

    let mut buckets: FxHashMap<VoxelKey, Vec<u32>> = FxHashMap::default();
    for (i, p) in points.iter().enumerate() {
        buckets
            .entry(VoxelKey::of(p, cell))
            .or_default()
            .push(i as u32);
    }

    let mut uf = UnionFind::new(points.len());
    for (key, members) in &buckets {
        for dx in 0..=1i32 {
            for dy in -1i32..=1 {
                for dz in -1i32..=1 {
                    // Visit each unordered cell pair once.
                    if dx == 0 && (dy < 0 || (dy == 0 && dz < 0)) {
                        continue;
                    }
                    let nkey = VoxelKey::new(key.ix + dx, key.iy + dy, key.iz + dz);
                    let same = nkey == *key;
                    let others = if same {
                        members
                    } else {
                        match buckets.get(&nkey) {
                            Some(v) => v,
                            None => continue,
                        }
                    };
                    for (ai, &a) in members.iter().enumerate() {
                        let start = if same { ai + 1 } else { 0 };
                        for &b in &others[start..] {
                            let pa = points[a as usize];
                            let pb = points[b as usize];
                            let tol = params.eps0
                                + params.eps1 * ranges[a as usize].min(ranges[b as usize]);
                            if (pa - pb).range() <= tol {
                                uf.union(a, b);
                            }
                        }
                    }
                }
            }
        }
    }
    components_to_clusters(points, ranges, &mut uf)
}

/// Splits clusters into those that pass the range-adaptive size and width
/// rules and those that revert to static.
pub fn screen_clusters(
    clusters: Vec<Cluster>,
    params: &ValidationParams,
) -> (Vec<Cluster>, Vec<Cluster>) {
    clusters.into_iter().partition(|c| {
        c.members.len() >= params.min_size_at(c.median_range)
            && c.horizontal_diameter() >= params.min_diameter_at(c.median_range)
    })
}

/// Merges clusters whose occupied voxel sets lie within Chebyshev distance 1
/// of each other, transitively, so split pieces of one object are handled
/// together.
pub fn merge_groups(clusters: &[Cluster], points: &[Point3], voxel_size: f64) -> Vec<Group> {
    if clusters.is_empty() {
        return Vec::new();
    }
    let mut voxel_owner: FxHashMap<VoxelKey, Vec<u32>> = FxHashMap::default();
    for (ci, c) in clusters.iter().enumerate() {
        for &m in &c.members {
            let owners = voxel_owner
                .entry(VoxelKey::of(&points[m as usize], voxel_size))
                .or_default();
            if !owners.contains(&(ci as u32)) {
                owners.push(ci as u32);
            }
        }
    }
    let mut uf = UnionFind::new(clusters.len());
    for (key, owners) in &voxel_owner {
        for dx in -1i32..=1 {
            for dy in -1i32..=1 {
                for dz in -1i32..=1 {
                    let nkey = VoxelKey::new(key.ix + dx, key.iy + dy, key.iz + dz);
                    if let Some(neighbors) = voxel_owner.get(&nkey) {
                        for &a in owners {
                            for &b in neighbors {
                                if a != b {
                                    uf.union(a, b);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let mut by_root: FxHashMap<u32, Vec<u32>> = FxHashMap::default();
    for ci in 0..clusters.len() as u32 {
        by_root.entry(uf.find(ci)).or_default().push(ci);
    }
    let mut groups: Vec<Group> = by_root
        .into_values()
        .map(|mut cluster_indices| {
            cluster_indices.sort_unstable();
            let mut members = Vec::new();
            let mut bbox: Option<Aabb> = None;
            for &ci in &cluster_indices {
                let c = &clusters[ci as usize];
                members.extend_from_slice(&c.members);
                bbox = Some(match bbox {
                    Some(b) => b.merged(&c.bbox),
                    None => c.bbox,
                });
            }
            members.sort_unstable();
            Group {
                cluster_indices,
                members,
                bbox: bbox.unwrap(),
            }
        })
        .collect();
    groups.sort_by_key(|g| g.cluster_indices[0]);
    groups
}

/// Fraction of the given points lying inside the dilated map.
pub fn coverage(points: &[Point3], indices: &[u32], map: &VoxelMap, dilation: u32) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let inside = indices
        .iter()
        .filter(|&&i| map.contains_dilated(&points[i as usize], dilation))
        .count();
    inside as f64 / indices.len() as f64
}

/// Group-wise reclassification per the coverage and thin-structure rules.
/// Returns the verdict together with the computed coverage.
pub fn reclassify_group(
    group: &Group,
    points: &[Point3],
    map: &VoxelMap,
    params: &ValidationParams,
) -> (Label, f64) {
    let cov = coverage(points, &group.members, map, params.map_dilation);
    let is_static = cov >= params.coverage_threshold
        || (cov >= params.edge_coverage_threshold
            && group.thinnest_side() <= params.thin_threshold);
    (
        if is_static {
            Label::Static
        } else {
            Label::Dynamic
        },
        cov,
    )
}

/// Outcome of residual cleanup for one still-dynamic group.
#[derive(Debug, Clone)]
pub struct ResidualPatch {
    /// Members reverting to static.
    pub reverted: Vec<u32>,
    /// Members staying dynamic.
    pub survivors: Vec<u32>,
}

/// Keeps only the unsupported points of a dynamic group: members covered by
/// the dilated map revert to static, and if the remaining dynamic subset is
/// too small or too narrow the whole group reverts.
pub fn residual_cleanup(
    group: &Group,
    points: &[Point3],
    map: &VoxelMap,
    params: &ValidationParams,
) -> ResidualPatch {
    let mut reverted = Vec::new();
    let mut survivors = Vec::new();
    for &m in &group.members {
        if map.contains_dilated(&points[m as usize], params.map_dilation) {
            reverted.push(m);
        } else {
            survivors.push(m);
        }
    }
    let too_small = survivors.len() < params.min_cluster_size;
    let too_narrow = match Aabb::of(survivors.iter().map(|&i| points[i as usize])) {
        Some(bb) => bb.horizontal_diameter() < params.min_cluster_diameter,
        None => true,
    };
    if too_small || too_narrow {
        reverted.append(&mut survivors);
        reverted.sort_unstable();
    }
    ResidualPatch {
        reverted,
        survivors,
    }
}

/// Runs the whole validation stage over one frame's provisional labels,
/// patching them in place. `world_points` and `sensor_ranges` must be
/// indexed like the scan behind `labels`; the map is read-only.
pub fn validate_frame(
    labels: &mut LabelSet,
    world_points: &[Point3],
    sensor_ranges: &[f64],
    map: &VoxelMap,
    params: &ValidationParams,
) {
    let dynamic_idx = labels.dynamic_indices();
    if dynamic_idx.is_empty() {
        return;
    }
    let dyn_points: Vec<Point3> = dynamic_idx
        .iter()
        .map(|&i| world_points[i as usize])
        .collect();
    let dyn_ranges: Vec<f64> = dynamic_idx
        .iter()
        .map(|&i| sensor_ranges[i as usize])
        .collect();

    let clusters = cluster_dynamic(&dyn_points, &dyn_ranges, params);
    let (kept, rejected) = screen_clusters(clusters, params);
    for c in &rejected {
        for &m in &c.members {
            labels.set(
                dynamic_idx[m as usize] as usize,
                Label::Static,
                Stage::Reverted,
            );
        }
    }

    let groups = merge_groups(&kept, &dyn_points, map.voxel_size());
    for g in &groups {
        let (verdict, _cov) = reclassify_group(g, &dyn_points, map, params);
        if verdict == Label::Static {
            for &m in &g.members {
                labels.set(
                    dynamic_idx[m as usize] as usize,
                    Label::Static,
                    Stage::Reverted,
                );
            }
            continue;
        }
        let patch = residual_cleanup(g, &dyn_points, map, params);
        for &m in &patch.reverted {
            labels.set(
                dynamic_idx[m as usize] as usize,
                Label::Static,
                Stage::Reverted,
            );
        }
        for &m in &patch.survivors {
            labels.set(
                dynamic_idx[m as usize] as usize,
                Label::Dynamic,
                Stage::Validated,
            );
        }
    }
}
