//! Federated learning over classically simulated quantum tensor-network
//! classifiers.
//!
//! - [`qsim`]: statevector simulation and parameter-shift gradients
//! - [`qtn`]: MPS, TTN and MERA circuit builders and patch encoding
//! - [`model`]: patch classifier with dense or average-pooling head
//! - [`data`]: dataset loading, resizing, splitting and partitioning
//! - [`train`]: Adam, differentially private gradients, metrics
//! - [`fed`]: federated averaging rounds and communication accounting
//! - [`experiment`]: JSON configuration and end-to-end runs

pub mod data;
pub mod error;
pub mod experiment;
pub mod fed;
pub mod model;
pub mod qsim;
pub mod qtn;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
