//! Extended Kalman-Bucy filtering, its conditional McKean-Vlasov diffusion,
//! the ensemble particle filter approximating it, stability constants, and
//! the Monte Carlo checks built on top of them.

pub mod ekf;
pub mod ensemble;
pub mod error;
pub mod json;
pub mod linalg;
pub mod mckean;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod stability;
pub mod studies;

pub use error::{Error, Result};
