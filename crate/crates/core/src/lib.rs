//! Error analysis and particle simulation for cooperative multi-receiver
//! diffusive molecular communication.
//!
//! A point transmitter sends ON/OFF-keyed type A molecules to K passive
//! receivers. Each receiver makes a hard decision and reports a "1" by
//! releasing type B molecules, which a passive fusion center (FC) pools and
//! thresholds. [`analytical`] gives closed-form error probabilities under the
//! Poisson approximation, [`simulator`] runs the same protocol with Brownian
//! particles, and [`schemes`] adds the single-link and majority-vote baselines.

pub mod analytical;
pub mod channel;
pub mod config;
pub mod error;
pub mod optimizer;
pub mod schemes;
pub mod simulator;
pub mod topology;

pub use error::{Error, Result};
