//! Planning and cost accounting for multi-scale training samplers.
//!
//! The crate turns a sampler configuration into deterministic per-rank
//! iteration plans, estimates training cost relative to a single-scale
//! baseline, and computes evaluation metrics over prediction dumps.

pub mod cli;
pub mod costmodel;
pub mod error;
pub mod io;
pub mod metrics;
pub mod planner;
pub mod respool;
pub mod rng;
pub mod schedule;

pub use costmodel::{compare, simulate, CostProfile, CostReport, FlopLaw, RelativeReport, SimulationMode};
pub use error::{Error, ErrorCode, Location, Result};
pub use metrics::{ece, entropy, skewness, CalibrationReport, PredictionRecord};
pub use planner::{
    plan_epoch, plan_run, verify_plan, CoverageReport, EpochPlan, IterationSpec, ResolutionSync, SamplerConfig,
    SamplerKind,
};
pub use respool::{
    batch_size_for, build_pool, compress_pool, ReferenceBatchShape, Resolution, ResolutionPool,
};
pub use schedule::{schedule_value, CurriculumSchedule, ScheduleKind};
