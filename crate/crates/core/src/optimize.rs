//! Rectification-voltage optimization, frequency sweeps and 3-dB bandwidth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CompactModel, Excitation};
use crate::numeric::golden_section_max;
use crate::transient::{simulate_dcrs, BiasFlipConfig, RectifierModel};

/// Number of points in the coarse pre-scan over `v_rect`.
pub const GRID_POINTS: usize = 32;
/// Relative tolerance of the golden-section refinement on `v_rect`.
pub const V_RECT_REL_TOL: f64 = 1e-3;

/// Best rectification voltage at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VRectOptimum {
    pub v_rect: f64,
    pub power: f64,
    /// Pre-flip voltage magnitude at the optimum.
    pub v_bf: f64,
    /// Peak `|v_out|` at the optimum.
    pub v_peak: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub frequency: f64,
    pub best_v_rect: f64,
    pub best_power: f64,
    pub normalized_power: f64,
    pub v_bf: f64,
}

/// One frequency of a sweep; failures are kept in place.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub frequency: f64,
    pub outcome: Result<SweepPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub f_peak: f64,
    pub p_peak: f64,
    pub f_lo: f64,
    pub f_hi: f64,
    pub bw_3db: f64,
    pub bw_fraction: f64,
    /// False when the power never drops below half on the low side; `f_lo` is then the grid edge.
    pub lower_crossing: bool,
    pub upper_crossing: bool,
}

impl BandwidthReport {
    pub fn is_one_sided(&self) -> bool {
        !(self.lower_crossing && self.upper_crossing)
    }
}

/// Upper end of the `v_rect` search range.
///
/// Twice the larger of the open-circuit amplitude and the amplitude across
/// the conjugate-matched load. Off resonance the BF circuit pumps `v_out`
/// well above `V_oc`, so `2·V_oc` alone can cut off the optimum.
pub fn v_rect_upper_bound(cm: &CompactModel, exc: &Excitation) -> Result<f64> {
    let f = exc.frequency();
    let v_f = exc.source_amplitude();
    let v_oc = cm.open_circuit_voltage(f, v_f)?;
    let z_ml = cm.thevenin_impedance(f)?.conj();
    let v_ml = cm.load_voltage(f, v_f, z_ml)?.norm();
    Ok(2.0 * v_oc.max(v_ml))
}

/// Maximizes DCRS power over `v_rect`: 32-point pre-scan, then golden section
/// inside the bracket around the best grid point.
pub fn optimal_v_rect(
    cm: &CompactModel,
    exc: &Excitation,
    rect: &RectifierModel,
    bf: &BiasFlipConfig,
) -> Result<VRectOptimum> {
    if exc.source_amplitude() == 0.0 {
        return Ok(VRectOptimum {
            v_rect: 0.0,
            power: 0.0,
            v_bf: 0.0,
            v_peak: 0.0,
        });
    }
    let scan = |hi: f64| -> Result<Option<(usize, f64, f64)>> {
        let step = hi / (GRID_POINTS - 1) as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for k in 1..GRID_POINTS {
            let p = simulate_dcrs(cm, exc, rect, bf, k as f64 * step)?.avg_power;
            if p > 0.0 && best.is_none_or(|(_, bp, _)| p > bp) {
                best = Some((k, p, step));
            }
        }
        Ok(best)
    };
    let mut hi = v_rect_upper_bound(cm, exc)?;
    let mut best = scan(hi)?;
    if best.is_none() {
        // Without flips the output never exceeds about V_oc, which can sit below
        // the first grid point when the matched-load amplitude sets the range.
        let v_oc = cm.open_circuit_voltage(exc.frequency(), exc.source_amplitude())?;
        if 2.0 * v_oc < hi {
            hi = 2.0 * v_oc;
            best = scan(hi)?;
        }
    }
    let (k, grid_power, step) = best.ok_or(Error::EmptyBracket)?;
    let lo = (k - 1) as f64 * step;
    let up = (k + 1) as f64 * step;
    let refined = golden_section_max(
        |v| simulate_dcrs(cm, exc, rect, bf, v).map(|r| r.avg_power),
        lo,
        up,
        V_RECT_REL_TOL,
        1e-12 * hi,
        200,
    )?;
    let v_rect = if refined.value >= grid_power {
        refined.x
    } else {
        k as f64 * step
    };
    let r = simulate_dcrs(cm, exc, rect, bf, v_rect)?;
    Ok(VRectOptimum {
        v_rect,
        power: r.avg_power,
        v_bf: r.v_bf,
        v_peak: r.v_peak,
    })
}

/// Optimum at a single frequency with the BF phase taken from the phase law.
pub fn sweep_point(
    cm: &CompactModel,
    exc_template: &Excitation,
    rect: &RectifierModel,
    bf: &BiasFlipConfig,
    frequency: f64,
) -> Result<SweepPoint> {
    let exc = exc_template.at_frequency(frequency)?;
    let bf = if bf.enabled {
        bf.with_phase(cm.bf_phase(frequency))
    } else {
        *bf
    };
    let opt = optimal_v_rect(cm, &exc, rect, &bf)?;
    let p_opt = cm.optimum_power(&exc);
    Ok(SweepPoint {
        frequency,
        best_v_rect: opt.v_rect,
        best_power: opt.power,
        normalized_power: if p_opt > 0.0 { opt.power / p_opt } else { 0.0 },
        v_bf: opt.v_bf,
    })
}

/// Runs [`sweep_point`] for every frequency in parallel.
///
/// Points are independent, and the output is sorted by frequency, so the
/// order of `f_grid` does not affect the result.
pub fn frequency_sweep(
    cm: &CompactModel,
    exc_template: &Excitation,
    rect: &RectifierModel,
    bf: &BiasFlipConfig,
    f_grid: &[f64],
) -> Result<Vec<SweepRecord>> {
    let mut grid = f_grid.to_vec();
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty frequency grid".into()));
    }
    if let Some(bad) = grid.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "grid frequencies must be finite and > 0, got {bad}"
        )));
    }
    grid.sort_by(f64::total_cmp);
    if grid.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig("duplicate grid frequency".into()));
    }
    bf.validate()?;
    Ok(grid
        .par_iter()
        .map(|&f| SweepRecord {
            frequency: f,
            outcome: sweep_point(cm, exc_template, rect, bf, f),
        })
        .collect())
}

/// Uniform grid `lo, lo+step, …` up to and including `hi` (within rounding).
pub fn linear_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite() && lo > 0.0 && hi >= lo && step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "grid {lo}:{hi}:{step} must satisfy 0 < lo <= hi and step > 0"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + k as f64 * step).collect())
}

/// Default sweep range: 1 Hz steps from 60 Hz below `f_sc` to 60 Hz above `f_oc`.
pub fn default_grid(cm: &CompactModel) -> Vec<f64> {
    let lo = (cm.short_circuit_frequency() - 60.0).floor().max(1.0);
    let hi = (cm.open_circuit_frequency() + 60.0).ceil();
    linear_grid(lo, hi, 1.0).expect("default grid is well formed")
}

/// Half-power bandwidth of a power-vs-frequency curve.
///
/// `points` must be sorted by frequency. The crossings are the outermost
/// ones on each side of the peak, linearly interpolated.
pub fn bandwidth_3db(points: &[SweepPoint], f_sc: f64) -> Result<BandwidthReport> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "bandwidth needs at least 3 points, got {}",
            points.len()
        )));
    }
    let (ipk, peak) = points
        .iter()
        .enumerate()
        .fold((0, &points[0]), |acc, (i, p)| {
            if p.best_power > acc.1.best_power {
                (i, p)
            } else {
                acc
            }
        });
    let half = 0.5 * peak.best_power;
    if !(half > 0.0) || points.iter().all(|p| p.best_power >= half) {
        return Err(Error::NoHalfPowerCrossing);
    }
    if ipk == 0 || ipk == points.len() - 1 {
        return Err(Error::PeakAtBoundary);
    }
    let cross = |a: &SweepPoint, b: &SweepPoint| {
        let t = (half - a.best_power) / (b.best_power - a.best_power);
        a.frequency + t * (b.frequency - a.frequency)
    };
    let lower = (0..ipk)
        .find(|&i| points[i].best_power < half && points[i + 1].best_power >= half)
        .map(|i| cross(&points[i], &points[i + 1]));
    let upper = (ipk..points.len() - 1)
        .rev()
        .find(|&i| points[i].best_power >= half && points[i + 1].best_power < half)
        .map(|i| cross(&points[i], &points[i + 1]));
    if lower.is_none() && upper.is_none() {
        return Err(Error::NoHalfPowerCrossing);
    }
    let f_lo = lower.unwrap_or(points[0].frequency);
    let f_hi = upper.unwrap_or(points[points.len() - 1].frequency);
    let bw = f_hi - f_lo;
    Ok(BandwidthReport {
        f_peak: peak.frequency,
        p_peak: peak.best_power,
        f_lo,
        f_hi,
        bw_3db: bw,
        bw_fraction: bw / f_sc,
        lower_crossing: lower.is_some(),
        upper_crossing: upper.is_some(),
    })
}

/// Successful points of a sweep, in frequency order.
pub fn successful_points(records: &[SweepRecord]) -> Vec<SweepPoint> {
    records.iter().filter_map(|r| r.outcome.as_ref().ok().copied()).collect()
}

/// Bandwidth at one coupling-scale factor.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaEntry {
    pub scale: f64,
    pub kappa_e2: f64,
    pub f_sc: f64,
    pub bandwidth: Result<BandwidthReport>,
}

/// Scales `A` by each factor and extracts the bandwidth of the resulting sweep.
pub fn kappa_sweep(
    base: &CompactModel,
    scales: &[f64],
    exc_template: &Excitation,
    rect: &RectifierModel,
    bf: &BiasFlipConfig,
    f_grid: &[f64],
) -> Result<Vec<KappaEntry>> {
    if let Some(bad) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::InvalidConfig(format!("scale factors must be > 0, got {bad}")));
    }
    scales
        .iter()
        .map(|&s| {
            let cm = base.with_coupling_scaled(s)?;
            let f_sc = cm.short_circuit_frequency();
            let bandwidth = frequency_sweep(&cm, exc_template, rect, bf, f_grid)
                .and_then(|recs| bandwidth_3db(&successful_points(&recs), f_sc));
            Ok(KappaEntry {
                scale: s,
                kappa_e2: cm.coupling_coefficient(),
                f_sc,
                bandwidth,
            })
        })
        .collect()
}
