//! Photon-level simulation and closed-form analysis of N-photon coincidence
//! fringes in a Mach-Zehnder interferometer fed with coherent cw laser light.
//!
//! The crate is organised along the measurement chain:
//!
//! - [`analytic`]: closed-form intensities, widths, Poisson weights and
//!   uncertainty limits. Every Monte Carlo result is checked against these.
//! - [`stream`]: Poisson photon arrivals and per-photon routing through the
//!   interferometer and the beam-splitter tree in front of the detectors.
//! - [`detector`]: click detectors (efficiency, dark counts, dead time),
//!   coincidence counting and the analog intensity-product mode.
//! - [`runner`]: phase-scan campaigns (single port and two-port cross
//!   correlation) plus the noiseless prediction on the same grid.
//! - [`fringe`]: normalisation, FWHM extraction, ratio tables and
//!   goodness-of-fit against the closed forms.
//! - [`io`]: configuration files, scan CSVs, prediction tables and reports.
//! - [`validate`]: the reproduction campaign suite behind `mzi-ncoinc validate`.

pub mod analytic;
pub mod detector;
mod error;
pub mod fringe;
pub mod io;
mod quad;
pub mod runner;
pub mod stream;
pub mod validate;

pub use error::{Error, Result};

/// Version string stamped into every output file.
pub const FORMAT_VERSION: &str = "v1";

/// Picoseconds per second; all simulation time is integer picoseconds.
pub const PS_PER_SECOND: f64 = 1.0e12;
