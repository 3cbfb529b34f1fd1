//! Analysis and simulation of piezoelectric energy harvesters with
//! bias-flip rectification.
//!
//! * [`model`]: lumped equivalent circuit, resonance structure, conjugate matching.
//! * [`transient`]: piecewise-exact time simulation of the rectifier and matched-load circuits.
//! * [`optimize`]: rectification-voltage optimization, frequency sweeps, 3-dB bandwidth.
//! * [`design`]: coupling coefficient of composite bimorph cantilevers.
//! * [`fit`]: compact-model extraction from resistive-load voltage measurements.

pub mod design;
pub mod error;
pub mod fit;
mod linear;
pub mod model;
pub mod numeric;
pub mod optimize;
pub mod reference;
pub mod transient;

pub use error::{Error, Result};
pub use model::{CompactModel, Excitation, FrequencyAnalysis, MatchedLoad};
