//! Lumped equivalent circuit of a single-mode piezoelectric harvester and its
//! frequency-domain analysis.
//!
//! The mechanical branch is a series `L_m`, `C_m`, `R_m` loop driven by the
//! force-analog source `V_F = |V_F| sin(2πft)`. It couples to the electrical
//! port through an ideal transformer of ratio `A`: the branch sees a back
//! voltage `A·V_out` and injects a current `A·I_S` into the plate capacitance
//! `C_P`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{require_non_negative, require_positive, Error, Result};
use crate::numeric::brent_root;

/// Points in the log-spaced scan used to bracket zero-reactance frequencies.
const ZR_SCAN_POINTS: usize = 2000;
/// Relative tolerance of the zero-reactance refinement.
const ZR_REL_TOL: f64 = 1e-10;

/// The five lumped parameters of the harvester equivalent circuit.
///
/// `A` may be zero (an uncoupled resonator); every other parameter must be
/// strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCompactModel", into = "RawCompactModel")]
pub struct CompactModel {
    l_m: f64,
    c_m: f64,
    r_m: f64,
    a: f64,
    c_p: f64,
}

/// Unvalidated serialized form of [`CompactModel`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RawCompactModel {
    pub l_m: f64,
    pub c_m: f64,
    pub r_m: f64,
    pub a: f64,
    pub c_p: f64,
}

impl TryFrom<RawCompactModel> for CompactModel {
    type Error = Error;

    fn try_from(raw: RawCompactModel) -> Result<Self> {
        CompactModel::new(raw.l_m, raw.c_m, raw.r_m, raw.a, raw.c_p)
    }
}

impl From<CompactModel> for RawCompactModel {
    fn from(cm: CompactModel) -> Self {
        RawCompactModel {
            l_m: cm.l_m,
            c_m: cm.c_m,
            r_m: cm.r_m,
            a: cm.a,
            c_p: cm.c_p,
        }
    }
}

impl CompactModel {
    pub fn new(l_m: f64, c_m: f64, r_m: f64, a: f64, c_p: f64) -> Result<Self> {
        Ok(Self {
            l_m: require_positive("l_m", l_m)?,
            c_m: require_positive("c_m", c_m)?,
            r_m: require_positive("r_m", r_m)?,
            a: require_non_negative("a", a)?,
            c_p: require_positive("c_p", c_p)?,
        })
    }

    /// Builds a model from its resonance structure.
    ///
    /// `q_ml` is the matched-load quality factor `2π f_sc L_m / (2 R_m)`;
    /// `c_p` and `c_m` fix the electrical and mechanical impedance scales.
    pub fn from_resonances(f_sc: f64, f_oc: f64, q_ml: f64, c_m: f64, c_p: f64) -> Result<Self> {
        require_positive("f_sc", f_sc)?;
        require_positive("q_ml", q_ml)?;
        require_positive("c_m", c_m)?;
        require_positive("c_p", c_p)?;
        if !(f_oc >= f_sc) {
            return Err(Error::InvalidParameter {
                name: "f_oc",
                reason: format!("must be >= f_sc ({f_sc}), got {f_oc}"),
            });
        }
        let w_sc = 2.0 * PI * f_sc;
        let l_m = 1.0 / (w_sc * w_sc * c_m);
        let r_m = w_sc * l_m / (2.0 * q_ml);
        let kappa2 = (f_oc * f_oc - f_sc * f_sc) / (f_sc * f_sc);
        let a = (kappa2 * c_p / c_m).sqrt();
        Self::new(l_m, c_m, r_m, a, c_p)
    }

    pub fn l_m(&self) -> f64 {
        self.l_m
    }
    pub fn c_m(&self) -> f64 {
        self.c_m
    }
    pub fn r_m(&self) -> f64 {
        self.r_m
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn c_p(&self) -> f64 {
        self.c_p
    }

    /// Same device with the coupling factor multiplied by `factor`.
    pub fn with_coupling_scaled(&self, factor: f64) -> Result<Self> {
        require_non_negative("coupling scale factor", factor)?;
        Self::new(self.l_m, self.c_m, self.r_m, self.a * factor, self.c_p)
    }

    pub fn short_circuit_frequency(&self) -> f64 {
        1.0 / (2.0 * PI * (self.l_m * self.c_m).sqrt())
    }

    /// κe² = A²·C_m / C_P.
    pub fn coupling_coefficient(&self) -> f64 {
        self.a * self.a * self.c_m / self.c_p
    }

    pub fn open_circuit_frequency(&self) -> f64 {
        self.short_circuit_frequency() * (1.0 + self.coupling_coefficient()).sqrt()
    }

    /// Matched-load quality factor, `2π f_sc L_m / (2 R_m)`.
    pub fn q_ml(&self) -> f64 {
        PI * self.short_circuit_frequency() * self.l_m / self.r_m
    }

    /// Unloaded mechanical quality factor, `2π f_sc L_m / R_m`.
    pub fn q_mechanical(&self) -> f64 {
        2.0 * self.q_ml()
    }

    /// Series impedance of the mechanical branch, `R_m + jωL_m + 1/(jωC_m)`.
    pub fn mechanical_impedance(&self, f: f64) -> Result<Complex64> {
        let w = 2.0 * PI * require_positive("frequency", f)?;
        Ok(Complex64::new(self.r_m, w * self.l_m - 1.0 / (w * self.c_m)))
    }

    /// Admittance seen at the electrical terminals.
    fn output_admittance(&self, f: f64) -> Result<Complex64> {
        let w = 2.0 * PI * f;
        let z_m = self.mechanical_impedance(f)?;
        Ok(Complex64::new(0.0, w * self.c_p) + self.a * self.a / z_m)
    }

    /// Impedance looking into the output terminals: `C_P` in parallel with the
    /// mechanical branch reflected through the transformer (`Z_m / A²`).
    pub fn thevenin_impedance(&self, f: f64) -> Result<Complex64> {
        Ok(self.output_admittance(f)?.inv())
    }

    /// Open-circuit Thevenin source amplitude at the output port.
    pub fn thevenin_voltage(&self, f: f64, source_amplitude: f64) -> Result<Complex64> {
        let z_m = self.mechanical_impedance(f)?;
        let y = self.output_admittance(f)?;
        Ok(source_amplitude * self.a / (z_m * y))
    }

    /// Peak open-circuit output voltage at `f`.
    pub fn open_circuit_voltage(&self, f: f64, source_amplitude: f64) -> Result<f64> {
        Ok(self.thevenin_voltage(f, source_amplitude)?.norm())
    }

    /// The two frequencies where the output reactance vanishes, `f_zr1 < f_zr2`.
    pub fn zero_reactance_frequencies(&self) -> Result<(f64, f64)> {
        let f_sc = self.short_circuit_frequency();
        let f_oc = self.open_circuit_frequency();
        let (lo, hi) = (0.5 * f_sc, 1.5 * f_oc);
        let reactance = |f: f64| -> f64 {
            // sign(Im Z) = -sign(Im Y); Y is smooth and never zero for R_m > 0.
            -self
                .output_admittance(f)
                .map(|y| y.im)
                .unwrap_or(f64::NAN)
        };
        let ratio = (hi / lo).ln() / (ZR_SCAN_POINTS - 1) as f64;
        let mut roots = Vec::with_capacity(2);
        let mut f_prev = lo;
        let mut x_prev = reactance(lo);
        for k in 1..ZR_SCAN_POINTS {
            let f = lo * (ratio * k as f64).exp();
            let x = reactance(f);
            if x_prev.signum() != x.signum() {
                let root = brent_root(reactance, f_prev, f, ZR_REL_TOL * f_prev, 200)
                    .ok_or(Error::NoZeroReactance)?;
                roots.push(root);
            }
            f_prev = f;
            x_prev = x;
        }
        match roots.as_slice() {
            [f1, f2] => Ok((*f1, *f2)),
            _ => Err(Error::NoZeroReactance),
        }
    }

    /// Bias-flip phase of `V_Out` relative to `V_F`:
    /// `atan((1/(2πf C_m) − 2πf L_m) / R_m)`.
    pub fn bf_phase(&self, f: f64) -> f64 {
        let w = 2.0 * PI * f;
        if w <= 0.0 {
            return FRAC_PI_2;
        }
        ((1.0 / (w * self.c_m) - w * self.l_m) / self.r_m).atan()
    }

    /// Available power of the source, `V_F² / (8 R_m)`.
    pub fn optimum_power(&self, exc: &Excitation) -> f64 {
        exc.source_amplitude() * exc.source_amplitude() / (8.0 * self.r_m)
    }

    /// Conjugate-matched load at `f`.
    pub fn matched_load(&self, f: f64) -> Result<MatchedLoad> {
        let z = self.thevenin_impedance(f)?;
        Ok(MatchedLoad {
            resistance: z.re,
            reactance: -z.im,
        })
    }

    /// Complex output voltage amplitude for an arbitrary load impedance.
    pub fn load_voltage(&self, f: f64, source_amplitude: f64, z_load: Complex64) -> Result<Complex64> {
        let z_m = self.mechanical_impedance(f)?;
        let y = self.output_admittance(f)? + z_load.inv();
        Ok(source_amplitude * self.a / (z_m * y))
    }

    pub fn frequency_analysis(&self) -> Result<FrequencyAnalysis> {
        let (f_zr1, f_zr2) = self.zero_reactance_frequencies()?;
        Ok(FrequencyAnalysis {
            f_sc: self.short_circuit_frequency(),
            f_oc: self.open_circuit_frequency(),
            f_zr1,
            f_zr2,
            r_ml: self.thevenin_impedance(f_zr1)?.re,
            q_ml: self.q_ml(),
        })
    }
}

/// Sinusoidal base excitation and the force-analog source it produces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExcitation", into = "RawExcitation")]
pub struct Excitation {
    accel_amplitude: f64,
    frequency: f64,
    source_amplitude: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RawExcitation {
    pub accel_amplitude: f64,
    pub frequency: f64,
    pub source_amplitude: f64,
}

impl TryFrom<RawExcitation> for Excitation {
    type Error = Error;

    fn try_from(raw: RawExcitation) -> Result<Self> {
        Excitation::new(raw.accel_amplitude, raw.frequency, raw.source_amplitude)
    }
}

impl From<Excitation> for RawExcitation {
    fn from(e: Excitation) -> Self {
        RawExcitation {
            accel_amplitude: e.accel_amplitude,
            frequency: e.frequency,
            source_amplitude: e.source_amplitude,
        }
    }
}

impl Excitation {
    pub fn new(accel_amplitude: f64, frequency: f64, source_amplitude: f64) -> Result<Self> {
        Ok(Self {
            accel_amplitude: require_non_negative("accel_amplitude", accel_amplitude)?,
            frequency: require_positive("frequency", frequency)?,
            source_amplitude: require_non_negative("source_amplitude", source_amplitude)?,
        })
    }

    /// Source amplitude from an effective mass-analog: `V_F = m·a`.
    pub fn from_mass(mass: f64, accel_amplitude: f64, frequency: f64) -> Result<Self> {
        require_non_negative("mass", mass)?;
        Self::new(accel_amplitude, frequency, mass * accel_amplitude)
    }

    pub fn accel_amplitude(&self) -> f64 {
        self.accel_amplitude
    }
    pub fn frequency(&self) -> f64 {
        self.frequency
    }
    pub fn source_amplitude(&self) -> f64 {
        self.source_amplitude
    }
    pub fn angular_frequency(&self) -> f64 {
        2.0 * PI * self.frequency
    }
    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }

    pub fn at_frequency(&self, frequency: f64) -> Result<Self> {
        Self::new(self.accel_amplitude, frequency, self.source_amplitude)
    }
}

/// Conjugate-matched load, `Z_load = R + jX`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedLoad {
    pub resistance: f64,
    pub reactance: f64,
}

/// The four characteristic frequencies plus matched-load figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyAnalysis {
    pub f_sc: f64,
    pub f_oc: f64,
    pub f_zr1: f64,
    pub f_zr2: f64,
    pub r_ml: f64,
    pub q_ml: f64,
}
