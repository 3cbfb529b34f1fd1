//! Compact-model extraction from output-voltage measurements on resistive loads.
//!
//! The search runs in log coordinates `(f_sc, κe², R_m/L_m, C_P, A)`. With
//! the source amplitude known these decouple well: `A` only scales the
//! response, `f_sc` and `κe²` place the two resonances, `R_m/L_m` sets their
//! width and `C_P` the load dependence.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CompactModel, Excitation};

pub const MAX_ITERATIONS: usize = 10_000;
/// Search stops once every coordinate step is below this (log units).
const STEP_TOL: f64 = 1e-11;
const INITIAL_STEP: f64 = 0.05;
const MAX_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub frequency: f64,
    pub load_resistance: f64,
    pub voltage_amplitude: f64,
}

impl Measurement {
    pub fn new(frequency: f64, load_resistance: f64, voltage_amplitude: f64) -> Result<Self> {
        for (name, v) in [
            ("frequency", frequency),
            ("load_resistance", load_resistance),
            ("voltage_amplitude", voltage_amplitude),
        ] {
            crate::error::require_positive(name, v)?;
        }
        Ok(Self {
            frequency,
            load_resistance,
            voltage_amplitude,
        })
    }
}

/// Output amplitude across a resistive load at `f`, from the phasor solution.
pub fn predict_voltage(cm: &CompactModel, exc: &Excitation, r_load: f64, f: f64) -> Result<f64> {
    crate::error::require_positive("r_load", r_load)?;
    let v = cm.load_voltage(f, exc.source_amplitude(), Complex64::new(r_load, 0.0))?;
    Ok(v.norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: CompactModel,
    /// RMS of `ln(predicted) − ln(measured)`.
    pub residual: f64,
    pub iterations: usize,
    /// Residual after each iteration; never increasing.
    pub history: Vec<f64>,
}

type Coords = [f64; 5];

fn to_coords(cm: &CompactModel) -> Coords {
    [
        cm.short_circuit_frequency().ln(),
        cm.coupling_coefficient().ln(),
        (cm.r_m() / cm.l_m()).ln(),
        cm.c_p().ln(),
        cm.a().ln(),
    ]
}

fn from_coords(x: &Coords) -> Result<CompactModel> {
    let [f_sc, kappa2, r_over_l, c_p, a] = x.map(f64::exp);
    let w = 2.0 * PI * f_sc;
    let c_m = kappa2 * c_p / (a * a);
    let l_m = 1.0 / (w * w * c_m);
    CompactModel::new(l_m, c_m, r_over_l * l_m, a, c_p)
}

fn check_data(data: &[Measurement], guess: &CompactModel) -> Result<()> {
    for m in data {
        Measurement::new(m.frequency, m.load_resistance, m.voltage_amplitude)?;
    }
    let mut loads: Vec<f64> = data.iter().map(|m| m.load_resistance).collect();
    loads.sort_by(f64::total_cmp);
    loads.dedup();
    if loads.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 distinct load resistances, got {}",
            loads.len()
        )));
    }
    let mut freqs: Vec<f64> = data.iter().map(|m| m.frequency).collect();
    freqs.sort_by(f64::total_cmp);
    freqs.dedup();
    if freqs.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "need at least 10 distinct frequencies, got {}",
            freqs.len()
        )));
    }
    let (lo, hi) = (freqs[0], freqs[freqs.len() - 1]);
    if !(lo < guess.short_circuit_frequency() && hi > guess.open_circuit_frequency()) {
        return Err(Error::InsufficientData(format!(
            "frequencies {lo}..{hi} Hz do not span both resonances of the initial guess"
        )));
    }
    Ok(())
}

/// Least-squares log-amplitude fit by adaptive coordinate search with pattern moves.
pub fn fit_compact_model(data: &[Measurement], exc: &Excitation, guess: &CompactModel) -> Result<FitResult> {
    check_data(data, guess)?;
    let objective = |x: &Coords| -> f64 {
        let Ok(cm) = from_coords(x) else {
            return f64::INFINITY;
        };
        let mut sum = 0.0;
        for m in data {
            match predict_voltage(&cm, exc, m.load_resistance, m.frequency) {
                Ok(v) if v > 0.0 => {
                    let e = v.ln() - m.voltage_amplitude.ln();
                    sum += e * e;
                }
                _ => return f64::INFINITY,
            }
        }
        (sum / data.len() as f64).sqrt()
    };

    let mut x = to_coords(guess);
    let mut fx = objective(&x);
    if !fx.is_finite() {
        return Err(Error::InvalidConfig("initial guess gives a non-finite residual".into()));
    }
    let mut steps = [INITIAL_STEP; 5];
    let mut history = vec![fx];
    let mut iterations = 0;
    while steps.iter().any(|&s| s > STEP_TOL) {
        if iterations == MAX_ITERATIONS {
            return Err(Error::NonConvergentFit {
                iterations,
                residual: fx,
            });
        }
        iterations += 1;
        let start = x;
        for i in 0..5 {
            let mut improved = false;
            for dir in [1.0, -1.0] {
                let mut trial = x;
                trial[i] += dir * steps[i];
                let ft = objective(&trial);
                if ft < fx {
                    x = trial;
                    fx = ft;
                    improved = true;
                    break;
                }
            }
            steps[i] = if improved {
                (2.0 * steps[i]).min(MAX_STEP)
            } else {
                0.5 * steps[i]
            };
        }
        // Pattern move along this iteration's net displacement.
        if x != start {
            let mut trial = x;
            for i in 0..5 {
                trial[i] += x[i] - start[i];
            }
            let ft = objective(&trial);
            if ft < fx {
                x = trial;
                fx = ft;
            }
        }
        history.push(fx);
    }
    Ok(FitResult {
        model: from_coords(&x)?,
        residual: fx,
        iterations,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn coordinates_round_trip() {
        let cm = reference::compact_model();
        let back = from_coords(&to_coords(&cm)).unwrap();
        for (a, b) in [
            (cm.l_m(), back.l_m()),
            (cm.c_m(), back.c_m()),
            (cm.r_m(), back.r_m()),
            (cm.a(), back.a()),
            (cm.c_p(), back.c_p()),
        ] {
            assert!((a / b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn open_circuit_peak_sits_at_f_oc() {
        let cm = reference::compact_model();
        let exc = reference::excitation(680.0);
        let f_oc = cm.open_circuit_frequency();
        let v = |f: f64| predict_voltage(&cm, &exc, 1e12, f).unwrap();
        let peak = (0..4001)
            .map(|k| 650.0 + 0.02 * k as f64)
            .max_by(|a, b| v(*a).total_cmp(&v(*b)))
            .unwrap();
        assert!((peak - f_oc).abs() < 0.05, "{peak} vs {f_oc}");
    }

    #[test]
    fn short_load_kills_output() {
        let cm = reference::compact_model();
        let exc = reference::excitation(680.0);
        assert!(predict_voltage(&cm, &exc, 1e-9, 680.0).unwrap() < 1e-9);
        assert!(predict_voltage(&cm, &exc, 0.0, 680.0).is_err());
    }

    #[test]
    fn one_load_is_insufficient() {
        let cm = reference::compact_model();
        let exc = reference::excitation(680.0);
        let data: Vec<_> = (0..20)
            .map(|k| {
                let f = 640.0 + 4.0 * k as f64;
                Measurement::new(f, 1e3, predict_voltage(&cm, &exc, 1e3, f).unwrap()).unwrap()
            })
            .collect();
        assert!(matches!(
            fit_compact_model(&data, &exc, &cm),
            Err(Error::InsufficientData(_))
        ));
    }
}
