//! Reference device calibrated to a commercial bimorph harvester.
//!
//! Short- and open-circuit resonances are 673 Hz and 696 Hz, and the damping
//! gives a matched-load bandwidth `f_sc / Q_ML` of 17 Hz. The electrical
//! impedance scale comes from the plate capacitance of the bundled
//! PPA2014-like layer stack, and the source amplitude is normalized to 1 V,
//! so absolute powers are only meaningful relative to
//! [`CompactModel::optimum_power`].

use crate::model::{CompactModel, Excitation};

pub const F_SC: f64 = 673.0;
pub const F_OC: f64 = 696.0;
/// Matched-load bandwidth of a weakly coupled device (Hz).
pub const MATCHED_LOAD_BANDWIDTH: f64 = 17.0;
pub const Q_ML: f64 = F_SC / MATCHED_LOAD_BANDWIDTH;
/// Plate capacitance (F), rounded from the bundled baseline stack.
pub const C_P: f64 = 230e-9;
/// Force-analog source amplitude (V).
pub const SOURCE_AMPLITUDE: f64 = 1.0;
/// 1 g base acceleration (m/s²).
pub const ACCEL_1G: f64 = 9.806_65;

/// Reference compact model; `C_m` is chosen so the transformer ratio `A` is 1.
pub fn compact_model() -> CompactModel {
    let kappa2 = (F_OC * F_OC - F_SC * F_SC) / (F_SC * F_SC);
    CompactModel::from_resonances(F_SC, F_OC, Q_ML, kappa2 * C_P, C_P)
        .expect("reference constants are valid")
}

pub fn excitation(frequency: f64) -> Excitation {
    Excitation::new(ACCEL_1G, frequency, SOURCE_AMPLITUDE).expect("reference excitation is valid")
}
