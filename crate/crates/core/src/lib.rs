//! Camera height and tilt estimation from 2D pedestrian trajectories.
//!
//! A regressor is trained on synthetic trajectories rendered around a rough
//! nominal pose, then applied to many observed trajectories whose predictions
//! are averaged into a single pose estimate.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod neuralnet;
pub mod regressor;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
