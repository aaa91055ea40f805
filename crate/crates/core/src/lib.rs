//! Analysis and optimization of periodic acoustic metascreens above a sound-soft wall.

pub mod capacitance;
pub mod error;
pub mod fullorder;
pub mod geometry;
pub mod gradcheck;
pub mod layerpot;
pub mod optimizer;
pub mod qpgreens;
pub mod rom;
pub mod shapegrad;
pub mod special;

pub use error::{Error, Result};
