//! Beamformer-assisted acoustic echo cancellation in GSC form: signal and
//! plant generation, the adaptive engine, the stochastic MOP model,
//! Monte Carlo harness and design search.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common types.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod engine;
pub mod error;
pub mod gsc;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod signal_model;

pub use error::{Error, Result};
pub use nalgebra;
pub use scalar::{db, Real};

pub type LemPlantF64 = signal_model::LemPlant<f64>;
pub type LemPlantF32 = signal_model::LemPlant<f32>;
pub type GscStructureF64 = gsc::GscStructure<f64>;
pub type GscStructureF32 = gsc::GscStructure<f32>;
pub type SecondOrderStatsF64 = gsc::SecondOrderStats<f64>;
pub type SecondOrderStatsF32 = gsc::SecondOrderStats<f32>;
pub type AdaptiveStateF64 = engine::AdaptiveState<f64>;
pub type AdaptiveStateF32 = engine::AdaptiveState<f32>;
pub type StepMatrixF64 = engine::StepMatrix<f64>;
pub type StepMatrixF32 = engine::StepMatrix<f32>;
pub type StepModeF64 = engine::StepMode<f64>;
pub type StepModeF32 = engine::StepMode<f32>;
pub type ModelSetupF64 = model::ModelSetup<f64>;
pub type ModelSetupF32 = model::ModelSetup<f32>;
pub type PiecewiseModelF64 = model::PiecewiseModel<f64>;
pub type PiecewiseModelF32 = model::PiecewiseModel<f32>;
pub type PlanF64 = harness::Plan<f64>;
pub type PlanF32 = harness::Plan<f32>;
