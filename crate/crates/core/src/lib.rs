//! Deterministic simulator for overlapping local decentralized SGD and the
//! baselines it is compared against.

pub mod algorithms;
pub mod error;
pub mod harness;
pub mod io;
pub mod objectives;
pub mod rng;
pub mod theory;
pub mod timemodel;
pub mod topology;
pub mod vecops;

pub use error::{Error, Result};
