//! Online subband identification of nonlinear dynamic systems.
//!
//! Signals are split by an analytic half-bin-shifted filterbank, each output
//! subband is modelled as a multi-input filter over a sparse set of input
//! subbands, and the filters are adapted by a lattice of Kalman stages. The
//! set of input subbands per output is chosen by a small learned detector or a
//! coherence fallback.

pub mod dependency;
pub mod error;
pub mod filterbank;
pub mod kalman;
pub mod lattice;
pub mod metrics;
pub mod systems;
pub mod wav;

pub use error::{Error, Result};
