//! Age of incorrect information (AoII) analysis for a CTMC source observed
//! through an exponential service channel: phase-type machinery, cycle
//! statistics for threshold policies, policy optimization and a discrete-event
//! simulator.

pub mod ctmc;
pub mod cycle;
pub mod error;
pub mod mrph;
pub mod numerics;
pub mod optimizer;
pub mod phase_type;
pub mod simulator;

pub use error::{Error, Result};
