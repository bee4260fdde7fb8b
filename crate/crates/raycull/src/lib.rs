//! Raycasting-based dynamic object removal for static LiDAR mapping.
//!
//! Each scan is projected onto an azimuth-elevation direction grid; one ray
//! per relevant bin is cast through a sparse voxel map of the scene so far,
//! and the bin-wise scan minimum is compared with the map's first-hit
//! distance along the same visibility. Returns that lie sufficiently in
//! front of the map (with a range-scaled margin) are flagged dynamic, then
//! refined by spatial-consistency validation so boundary points near depth
//! discontinuities are recovered instead of over-removed.
//!
//! The crate also ships a voxel-level evaluation harness (preservation rate,
//! rejection rate, F1 against labeled ground truth) and a deterministic
//! synthetic scene generator used for end-to-end verification, plus a CLI
//! wiring everything together.

pub mod azel;
pub mod config;
pub mod consistency;
pub mod dataset;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod validation;
pub mod voxel;

pub use config::{parse_config_str, MapMode, PipelineConfig};
pub use consistency::{Label, LabelSet, Stage};
pub use error::Error;
pub use geom::{Point3, PoseSE3, Scan};
pub use metrics::{evaluate, EvalReport};
pub use pipeline::{run_frames, run_sequence, RunOutput};
pub use voxel::{VoxelKey, VoxelMap};
