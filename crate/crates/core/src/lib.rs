//! Valuation of dividend barrier strategies for the perturbed classical risk
//! process with Parisian ruin and claim-count discounting.

// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod expmodel;
pub mod firstpassage;
pub mod gridmath;
pub mod hfun;
pub mod lundberg;
pub mod model;
pub mod quad;
pub mod simulator;
pub mod special;
pub mod valuation;

pub use error::{Error, ModelError, Result};
pub use gridmath::GridFunction;
pub use hfun::{HFunction, HOptions, WdFunction};
pub use lundberg::LundbergRoot;
pub use simulator::{DiscountMode, SimConfig, SimEstimate};
pub use valuation::{BarrierSolution, HjbReport, HjbTolerances};
pub use model::{validate, ClaimDistribution, ModelParams, TabulatedDensity, ValidatedModel};


