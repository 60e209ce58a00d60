//! Finite-mixture estimation from empirical moments through moment-SOS
//! relaxations of regularized W2 and total-variation fits.

pub mod cluster;
pub mod data;
pub mod error;
pub mod extract;
pub mod families;
pub mod linalg;
pub mod polybasis;
pub mod relax;
pub mod sdp;

pub use error::{Error, Result};
