//! Homeostatic drive-reduction learning on a multi-resource grid world,
//! comparing a monolithic deep Q-network with a modular greatest-mass
//! Q-learning agent (one Q-network per internal stat, actions chosen by
//! the argmax of the summed module Q-values).

pub mod agents;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod plot;
pub mod qlearn;
pub mod report;

pub use error::{Error, Result};
