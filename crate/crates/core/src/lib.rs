//! Equation discovery for hysteretic oscillators.
//!
//! The pipeline simulates Bouc-Wen oscillators, learns the unmeasured
//! internal variable `z` through a differentiable RK4 rollout, and then
//! recovers closed-form motion and link laws by symbolic regression. A
//! sparse-regression baseline is included for comparison.

pub mod adiff;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod excitation;
pub mod gauge;
pub mod io;
pub mod learner;
pub mod numeric;
pub mod optim;
pub mod pipeline;
pub mod report;
pub mod simulate;
pub mod sindy;
pub mod symreg;

pub use error::{Error, Result};
