//! Simulation and analysis toolkit for a Sagnac source of
//! polarization-entangled photon pairs.
//!
//! Two-qubit states use the basis order (HH, HV, VH, VV); mode A is the
//! signal arm and mode B the idler arm.

pub mod chsh;
pub mod error;
pub mod expsim;
pub mod io;
pub mod numerics;
pub mod polarization;
pub mod qstate;
pub mod source;
pub mod tomography;

pub use error::{Error, Result};
