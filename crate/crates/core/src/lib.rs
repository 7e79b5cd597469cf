//! Occlusion-aware compositing of a real hand and a virtual object.
//!
//! The crate covers the whole loop: procedural hand-grabs-object scenes with tri-class
//! ground truth ([`dataset`]), a compact encoder-decoder with global-context and
//! detail-enhancement blocks ([`model`]), the training objectives ([`losses`]) and
//! optimizer loop ([`training`]), overlap-restricted evaluation ([`evaluation`]), and
//! mask post-processing plus frame composition ([`compositor`]).

pub mod cli;
pub mod compositor;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
