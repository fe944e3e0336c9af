//! Numerical bubble analysis for fractional Yamabe-type equations on the flat
//! half-space `R^{n+1}_+`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod bubble;
pub mod error;
pub mod extension;
pub mod extract;
pub mod halfspace;
pub mod io;
pub mod params;
pub mod quadrature;
pub mod scalar;
pub mod special;
pub mod synth;

pub use bubble::{Bubble, Calibration};
pub use error::{Error, Result};
pub use extension::spectral::SpectralOracle;
pub use extension::PoissonKernel;
pub use extract::{BoundaryLattice, DecompositionReport, ExtractionSettings, TraceField};
pub use halfspace::{Field, GridSpec, HalfSpaceGrid};
pub use params::FracParams;
pub use scalar::Real;
pub use synth::BubbleConfig;

pub type Params = FracParams<f64>;
pub type Bubble64 = Bubble<f64>;
