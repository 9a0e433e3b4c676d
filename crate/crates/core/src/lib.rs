//! Desk-scale workbench for studying how offline imitation metrics relate to
//! online (closed-loop) driving quality.
//!
//! The pipeline: procedural grid towns ([`world`]) are driven by a privileged
//! expert ([`expert`]) on a kinematic bicycle ([`vehicle`]) to collect labeled
//! datasets ([`dataset`]); steering policies ([`policy`], [`trainer`]) are
//! scored both on held-out data ([`offline`]) and in closed-loop navigation
//! episodes ([`online`]); [`analysis`] correlates the two, and [`study`]
//! orchestrates the whole model family.
//!
//! Numeric kernels (metrics, correlation, the regression solver, the bicycle
//! step) are generic over the scalar type via [`Float`]; the simulation
//! pipeline instantiates them at [`Scalar`] (`f64`).

pub mod analysis;
pub mod dataset;
pub mod expert;
pub mod float;
pub mod linalg;
pub mod offline;
pub mod online;
pub mod policy;
pub mod rng;
pub mod study;
pub mod trainer;
pub mod vehicle;
pub mod world;

pub use float::Float;

/// Re-export for callers that size the study worker pool.
pub use rayon;

/// Scalar type used by the simulation pipeline.
pub type Scalar = f64;

pub type Pose = vehicle::Pose<Scalar>;
pub type VehicleState = vehicle::VehicleState<Scalar>;
pub type Action = vehicle::Action<Scalar>;
pub type BicycleParams = vehicle::BicycleParams<Scalar>;
pub type OfflineParams = offline::OfflineParams<Scalar>;
pub type OfflineReport = offline::OfflineReport<Scalar>;
