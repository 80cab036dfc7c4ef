//! Balanced training-dataset synthesis for structural failure-mode prediction
//! under seismic excitation.
//!
//! The crate covers the full pipeline:
//!
//! 1. ground-motion handling — synthetic generation, baseline correction,
//!    amplitude scaling, spectrum-compatible selection ([`record`], [`synth`],
//!    [`spectrum`]);
//! 2. intensity-measure extraction — linear-oscillator response spectra and a
//!    16-feature catalog per record ([`gmf`]);
//! 3. nonlinear response-history analysis of an N-story bilinear shear
//!    building with per-story limit states and failure-mode encoding
//!    ([`building`]);
//! 4. probabilistic transforms between physical and uncorrelated
//!    standard-normal space ([`nataf`]);
//! 5. Gaussian-process limit-state surrogates with adaptive training,
//!    hypersphere sampling, and per-mode Gaussian-mixture densities
//!    ([`gp`], [`density`], [`gmm`]);
//! 6. cross-validated critical feature selection ([`feature_select`]);
//! 7. scaling-factor optimization that maps generated samples back to
//!    physical ground motions and assembles the balanced dataset
//!    ([`reconstruct`]);
//! 8. a from-scratch multilayer perceptron for multi-label component-failure
//!    prediction ([`mlp`]).
//!
//! Batch operations (Monte Carlo runs, ball classification, pool-wide scale
//! optimization) route through [`par`], which uses rayon when the `parallel`
//! feature is enabled (default) and a plain loop otherwise. Per-item RNG
//! streams are derived from `(seed, index)` so parallel and sequential runs
//! produce identical bytes.

// validation guards use negated comparisons (`!(x > 0.0)`) so NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod building;
pub mod density;
pub mod error;
pub mod feature_select;
pub mod gmf;
pub mod gmm;
pub mod gp;
pub mod mlp;
pub mod nataf;
pub mod par;
pub mod reconstruct;
pub mod record;
pub mod spectrum;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use record::AccelTimeSeries;
