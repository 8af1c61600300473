//! Numerical homogenization of periodic eigenvalue problems with
//! sign-changing density on perforated domains.

pub mod acceptance;
pub mod assembly;
pub mod cell;
pub mod config;
pub mod error;
pub mod finescale;
pub mod geometry;
pub mod harness;
pub mod limits;
pub mod linalg;
pub mod materials;
pub mod pencil;

pub use error::{Error, Result};
