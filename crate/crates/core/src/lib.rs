//! Two-stage spectral trajectory prediction.
//!
//! Trajectories are transformed per dimension into spectra (unitary DFT or
//! single-level Haar), a coarse stage predicts a low-resolution keypoint
//! spectrum, and a fine stage interpolates it into the full spectrum whose
//! inverse transform yields the predicted trajectory. The crate also ships
//! closed-form baselines, displacement/IoU metrics, a small reverse-mode
//! autodiff engine the networks are built on, dataset plumbing, and spectral
//! energy analytics.

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod train;
pub mod traj;
pub mod transforms;

pub use error::{Error, Result};
