//! Simulation and analysis of a third-order class-D amplifier with negative
//! feedback and optional ripple compensation.

pub mod error;
pub mod input;
pub mod model;
pub mod perturbation;
pub mod simulator;
pub mod small_signal;
pub mod spectral;
pub mod stability;
pub mod steady;

pub use error::{Error, Result};
pub use input::InputSignal;
pub use model::{AmplifierParams, Model, StateVector};
