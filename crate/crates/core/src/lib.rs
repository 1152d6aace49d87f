//! Hong-Ou-Mandel interference between two dissimilar single-photon sources
//! with exponential temporal envelopes.
//!
//! * [`wavepacket`]: photon envelopes and emission-time sampling.
//! * [`interference`]: closed-form and quadrature two-photon statistics.
//! * [`montecarlo`]: seeded, chunk-parallel generator of timestamped clicks.
//! * [`analysis`]: coincidence pipeline from click streams to visibilities.
//! * [`expected`]: semi-analytic expected histogram of a simulated run,
//!   including the accidental floor of the Poisson background.
//! * [`io`]: event, histogram and result file formats.

pub mod analysis;
pub mod error;
pub mod expected;
pub mod interference;
pub mod io;
pub mod montecarlo;
pub mod quadrature;
pub mod wavepacket;

pub use error::{Error, Result};
