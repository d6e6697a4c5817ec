//! Closed-loop simulator of OCT-guided needle synchronization with retinal
//! motion: phantom motion, segmentation-like observations, ILM prediction,
//! image-to-robot registration, axial velocity control and the five-phase
//! injection procedure.

pub mod controller;
pub mod error;
pub mod gate;
pub mod metrics;
pub mod motion;
pub mod observation;
pub mod predictor;
pub mod procedure;
pub mod registration;
mod rng;
pub mod table;

pub use error::{Error, Result};
