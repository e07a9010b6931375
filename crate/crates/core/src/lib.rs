//! Rate-equation simulator for the polarization of a photon Bose-Einstein
//! condensate in a dye-filled microcavity, with a virtual Stokes/Mueller
//! detection chain.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod gas;
pub mod params;
pub mod polarimetry;
pub mod stokes;

pub use error::{Error, Result};
