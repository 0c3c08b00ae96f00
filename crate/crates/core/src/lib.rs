//! Physics-informed neural network with control (PINC) for the dynamics of a
//! small underwater vehicle.
//!
//! The crate covers the whole pipeline: a 4-DOF vehicle simulator and
//! dataset generator ([`dynamics`], [`datagen`]), the network and its exact
//! derivatives ([`model`], [`autodiff`]), the training losses and gradient
//! combination schemes ([`losses`], [`gradcombine`]), the training loop
//! ([`trainer`]), evaluation metrics ([`eval`]) and the file-level workflows
//! used by the `pinc` binary ([`experiment`]).

pub mod autodiff;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcombine;
pub mod losses;
pub mod model;
pub mod trainer;

pub use error::{PincError, Result};
