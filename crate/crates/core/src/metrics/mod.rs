//! Shape and distribution metrics for evaluating generated CAD.

mod chamfer;
mod coverage;
mod frechet;
mod summary;
mod voxel;

pub use chamfer::{chamfer_distance, sample_surface, PointSample, DEFAULT_SAMPLE_COUNT, DEFAULT_SAMPLE_SEED};
pub use coverage::kball_coverage;
pub use frechet::{frechet_distance, frechet_from_summaries, GaussianSummary};
pub use summary::{success_rate, DistributionStats, EvalSample, SuccessSummary};
pub use voxel::{
    best_rotation_iou, grid_iou, normalize_mesh, rotate_z, voxelize, IouValue, Normalization, OccupancyGrid,
    RotationMatch, DEFAULT_RESOLUTION, ROTATION_STEPS_DEG,
};

use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("mesh bounding box has zero extent along an axis")]
    ZeroExtent,
    #[error("mesh is not watertight; inside test is undefined")]
    NotWatertight,
    #[error("grid resolution must be at least 2, got {0}")]
    Resolution(usize),
    #[error("grid resolutions differ: {0} vs {1}")]
    ResolutionMismatch(usize, usize),
    #[error("ray perturbation failed to avoid degenerate hits")]
    RayDegenerate,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {needed} vectors, got {got}")]
    TooFewVectors { needed: usize, got: usize },
    #[error("point sample is empty")]
    EmptySample,
    #[error("{0}")]
    Invalid(String),
}
