//! Adaptive ray-traced photoionization from a point source.

pub mod app;
pub mod equilibrium;
pub mod geometry;
pub mod grid;
pub mod params;
pub mod tracer;

pub use app::{
    decode_delta, decode_snapshot, decode_task, encode_delta, encode_snapshot, encode_task, run_photoionization,
    EpochStats, PhotoionizationRun, StromgrenMaster, StromgrenWorker,
};
pub use equilibrium::{apply_deltas, equilibrium_update, gamma_from_deltas, solve_neutral_fraction, GammaField};
pub use geometry::{pixel_direction, pixel_solid_angle, split_check, RayAddress};
pub use grid::{ionized_radius, read_f64_array, stromgren_radius, Grid, GridError};
pub use params::PhysicsParams;
pub use tracer::{base_tasks, trace_segment, DeltaEntry, GridDelta, RaySegmentTask, SegmentEnd, SegmentOutput};
