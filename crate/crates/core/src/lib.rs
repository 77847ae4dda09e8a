//! Action-conditioned safety and speed predictions (general value
//! functions) for longitudinal vehicle control.
//!
//! A point-mass traffic simulator supplies episodes; [`learner`] fits
//! networks to the discounted future of safety and speed cumulants with
//! replayed TD(0); [`controllers`] turn those predictions into
//! throttle/brake commands; [`evaluation`] runs scenarios and scores
//! predictions against Monte-Carlo returns.

pub mod approximator;
pub mod config;
pub mod controllers;
pub mod cumulants;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod learner;
pub mod model;
pub mod scenario;
pub mod sim;

pub use config::RunConfig;
pub use controllers::ControllerKind;
pub use cumulants::{CumulantKind, SafetyZoneParams};
pub use error::{Error, Result};
pub use model::{GvfModel, Predictor};
pub use sim::{Action, SimConfig};
