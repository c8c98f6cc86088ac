//! Dephasing of a static impurity qubit in an ideal Fermi gas, and what it
//! buys for thermometry.
//!
//! All quantities are in Fermi units: `E_F = hbar = k_B = k_F = 1`, so times
//! are in units of `tau_F = hbar / E_F` and temperatures in units of `T_F`.

pub mod basis;
pub mod channel;
pub mod error;
pub mod levitov;
pub mod metrology;
pub mod numerics;
pub mod protocol;
pub mod weakcoupling;

pub use error::{Error, Result};
