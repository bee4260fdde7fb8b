//! Voxel-level map quality metrics: preservation rate, rejection rate, and
//! F1, computed against ground-truth static/dynamic labels accumulated into
//! the naive map.
//!
//! A ground-truth static voxel counts as preserved when at least one
//! predicted static point falls in it; a ground-truth dynamic voxel counts
//! as remaining under the same rule. Voxels containing both static and
//! dynamic ground-truth points count toward both denominators.

use rustc_hash::FxHashSet;
use serde::Serialize;
use thiserror::Error;

use crate::geom::Point3;
use crate::voxel::VoxelKey;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ground-truth static set is empty; preservation rate is undefined")]
    EmptyGroundTruth,
}

/// Voxel-level confusion counts and the derived rates.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub voxel_size: f64,
    pub preserved_static: usize,
    pub total_static: usize,
    pub remaining_dynamic: usize,
    pub total_dynamic: usize,
    /// Preservation rate in [0, 1].
    pub pr: f64,
    /// Rejection rate in [0, 1].
    pub rr: f64,
    /// Harmonic mean of PR and RR; 0 when PR + RR = 0.
    pub f1: f64,
    /// Convention note: voxels holding both static and dynamic ground truth
    /// count toward both denominators.
    pub mixed_voxels: &'static str,
}

/// Streaming builder of the three voxel sets the metrics are defined over.
/// Lets callers evaluate long sequences without holding every point.
#[derive(Debug, Clone)]
pub struct VoxelSetAccumulator {
    voxel_size: f64,
    static_voxels: FxHashSet<VoxelKey>,
    dynamic_voxels: FxHashSet<VoxelKey>,
    predicted_voxels: FxHashSet<VoxelKey>,
}

impl VoxelSetAccumulator {
    pub fn new(voxel_size: f64) -> Self {
        assert!(voxel_size > 0.0);
        VoxelSetAccumulator {
            voxel_size,
            static_voxels: FxHashSet::default(),
            dynamic_voxels: FxHashSet::default(),
            predicted_voxels: FxHashSet::default(),
        }
    }

    pub fn add_gt_static(&mut self, p: &Point3) {
        self.static_voxels.insert(VoxelKey::of(p, self.voxel_size));
    }

    pub fn add_gt_dynamic(&mut self, p: &Point3) {
        self.dynamic_voxels.insert(VoxelKey::of(p, self.voxel_size));
    }

    pub fn add_predicted(&mut self, p: &Point3) {
        self.predicted_voxels
            .insert(VoxelKey::of(p, self.voxel_size));
    }

    pub fn finish(self) -> Result<EvalReport, MetricsError> {
        if self.static_voxels.is_empty() {
            return Err(MetricsError::EmptyGroundTruth);
        }
        let preserved = self
            .static_voxels
            .intersection(&self.predicted_voxels)
            .count();
        let remaining = self
            .dynamic_voxels
            .intersection(&self.predicted_voxels)
            .count();

        let pr = preserved as f64 / self.static_voxels.len() as f64;
        let rr = if self.dynamic_voxels.is_empty() {
            1.0
        } else {
            1.0 - remaining as f64 / self.dynamic_voxels.len() as f64
        };
        let f1 = if pr + rr > 0.0 {
            2.0 * pr * rr / (pr + rr)
        } else {
            0.0
        };

        Ok(EvalReport {
            voxel_size: self.voxel_size,
            preserved_static: preserved,
            total_static: self.static_voxels.len(),
            remaining_dynamic: remaining,
            total_dynamic: self.dynamic_voxels.len(),
            pr,
            rr,
            f1,
            mixed_voxels: "mixed voxels count toward both denominators",
        })
    }
}

/// Computes PR, RR, and F1 of a predicted static map against ground truth.
///
/// All three point sets must be in the same (world) frame; the ground-truth
/// voxel sets are built at `voxel_size`, which should match the voxel size
/// the predicted map was assembled at. When the ground truth contains no
/// dynamic points at all, RR is reported as 1 (there was nothing to reject).
pub fn evaluate(
    predicted_static: &[Point3],
    gt_static: &[Point3],
    gt_dynamic: &[Point3],
    voxel_size: f64,
) -> Result<EvalReport, MetricsError> {
    let mut acc = VoxelSetAccumulator::new(voxel_size);
    for p in gt_static {
        acc.add_gt_static(p);
    }
    for p in gt_dynamic {
        acc.add_gt_dynamic(p);
    }
    for p in predicted_static {
        acc.add_predicted(p);
    }
    acc.finish()
}

impl EvalReport {
    /// Aligned text table with PR/RR given in percent.
    pub fn text_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "voxel size: {} m ({})\n",
            self.voxel_size, self.mixed_voxels
        ));
        s.push_str(&format!(
            "{:<22} {:>10} {:>10} {:>10}\n",
            "", "PR [%]", "RR [%]", "F1"
        ));
        s.push_str(&format!(
            "{:<22} {:>10.3} {:>10.3} {:>10.4}\n",
            "static map",
            self.pr * 100.0,
            self.rr * 100.0,
            self.f1
        ));
        s.push_str(&format!(
            "preserved static voxels: {}/{}\n",
            self.preserved_static, self.total_static
        ));
        s.push_str(&format!(
            "remaining dynamic voxels: {}/{}\n",
            self.remaining_dynamic, self.total_dynamic
        ));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}
