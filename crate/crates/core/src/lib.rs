//! Simulation and inference for light in lossy, disordered 1D media.
//!
//! * [`stack`]: reproducible disorder realizations of a layered medium;
//! * [`wave`]: transmission, resonances and Green's functions of a stack;
//! * [`calibration`]: Monte Carlo power laws linking the localization length
//!   to the index disorder and to the in-plane Q-factor statistics;
//! * [`spectra`]: peak fitting, instrument deconvolution and mode grouping
//!   that turn position-resolved spectra into Q-factor datasets;
//! * [`inference`]: truncated log-normal likelihoods and grid posteriors over
//!   localization length and loss;
//! * [`intensity`]: intensity and LDOS fluctuation statistics from embedded
//!   point sources.

// `!(x > 0.0)` is used on purpose so that NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod calibration;
pub mod error;
pub mod inference;
pub mod intensity;
pub mod io;
pub mod numeric;
pub mod spectra;
pub mod stack;
pub mod wave;

pub use error::{Error, ErrorClass, Result};
pub use stack::{generate_stack, DisorderedStack, EnsembleSpec, Layer, StackSpec};
pub use wave::{GreenSample, SpectrumKind, SpectrumScan, TransferMatrix, WaveSolver};
