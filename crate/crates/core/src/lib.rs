//! Desk-scale radiance-field engine with joint view-dependent /
//! view-independent color, spherical-harmonic color supervision, cube
//! contraction and proposal-guided sampling.

pub mod cli;
pub mod diffcore;
pub mod encoders;
pub mod field;
pub mod geometry;
pub mod objective;
pub mod renderer;
pub mod scenegen;
pub mod trainer;
mod error;

pub use error::{Error, Result};
