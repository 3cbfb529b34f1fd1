//! Time-domain simulation of the harvester driving either a bias-flip
//! rectifier into a constant-voltage store (DCRS) or a linear
//! conjugate-matched load (ACML).
//!
//! Both circuits are linear between switching events, so each segment is
//! advanced exactly with a matrix exponential. Internally the states are
//! energy-normalized (`√L·i`, `√C·v`) so that `½‖y‖²` is the stored energy.

mod acml;
mod dcrs;

pub use acml::{simulate_acml, AcmlCircuit, LoadKind};
pub use dcrs::{simulate_dcrs, DcrsCircuit};

use serde::{Deserialize, Serialize};

use crate::error::{require_non_negative, Error, Result};

/// Rectifier variants of the DCRS circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RectifierVariant {
    /// Lossless diodes.
    Ideal,
    /// Full bridge with a constant forward drop per diode.
    DiodeBridge,
    /// Synchronous switching bridge, no forward drop.
    Smart,
}

/// Default forward drop of one bridge diode (V).
pub const DEFAULT_DIODE_DROP: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectifierModel {
    pub variant: RectifierVariant,
    /// Forward voltage of one diode; only used by [`RectifierVariant::DiodeBridge`].
    pub diode_drop: f64,
}

impl RectifierModel {
    pub fn ideal() -> Self {
        Self {
            variant: RectifierVariant::Ideal,
            diode_drop: 0.0,
        }
    }

    pub fn smart() -> Self {
        Self {
            variant: RectifierVariant::Smart,
            diode_drop: 0.0,
        }
    }

    pub fn diode_bridge(diode_drop: f64) -> Result<Self> {
        Ok(Self {
            variant: RectifierVariant::DiodeBridge,
            diode_drop: require_non_negative("diode_drop", diode_drop)?,
        })
    }

    /// Drop across one conducting diode as seen by the circuit.
    pub fn effective_drop(&self) -> f64 {
        match self.variant {
            RectifierVariant::DiodeBridge => self.diode_drop,
            RectifierVariant::Ideal | RectifierVariant::Smart => 0.0,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        require_non_negative("diode_drop", self.diode_drop).map(|_| ())
    }
}

/// How a quoted bias-flip efficiency maps onto the voltage flip ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipConvention {
    /// Efficiency is the post/pre voltage magnitude ratio.
    Voltage,
    /// Efficiency is the retained energy fraction, so the voltage ratio is its square root.
    Energy,
}

impl FlipConvention {
    pub fn flip_ratio(self, efficiency: f64) -> f64 {
        match self {
            FlipConvention::Voltage => efficiency,
            FlipConvention::Energy => efficiency.sqrt(),
        }
    }
}

/// Bias-flip switching configuration.
///
/// When enabled, `V_Out` is reversed to `-flip_ratio·V_Out` twice per period,
/// at the instants where the reference waveform `sin(ωt + phase)` crosses
/// zero (`ωt ≡ -phase mod π`). `phase` is normally [`crate::CompactModel::bf_phase`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasFlipConfig {
    pub enabled: bool,
    pub flip_ratio: f64,
    pub phase: f64,
}

impl BiasFlipConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            flip_ratio: 0.0,
            phase: 0.0,
        }
    }

    pub fn new(flip_ratio: f64, phase: f64) -> Result<Self> {
        let cfg = Self {
            enabled: true,
            flip_ratio,
            phase,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_efficiency(efficiency: f64, convention: FlipConvention, phase: f64) -> Result<Self> {
        Self::new(convention.flip_ratio(efficiency), phase)
    }

    pub fn with_phase(self, phase: f64) -> Self {
        Self { phase, ..self }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_ratio) {
            return Err(Error::InvalidParameter {
                name: "flip_ratio",
                reason: format!("must lie in [0, 1], got {}", self.flip_ratio),
            });
        }
        if !self.phase.is_finite() {
            return Err(Error::InvalidParameter {
                name: "phase",
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }
}

/// Physical circuit state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Mechanical branch current (velocity analog), A.
    pub i_s: f64,
    /// Voltage across `C_m` (displacement analog), V.
    pub v_cm: f64,
    /// Voltage across `C_P`, V.
    pub v_out: f64,
    /// Time, s.
    pub t: f64,
}

/// Polarity of a conducting bridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    fn of(x: f64) -> Self {
        if x >= 0.0 {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }
}

/// Active branch set of the DCRS network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    /// Bridge blocking; `C_P` floats.
    Open,
    /// Bridge conducting; `V_Out` clamped at `±(V_rect + 2 V_d)`.
    Conducting(Polarity),
    /// Zero conduction threshold: the bridge holds `V_Out` at zero.
    Shorted,
}

/// Why a segment stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentEvent {
    FlipDue,
    DiodeOn(Polarity),
    DiodeOff,
    None,
}

/// Numerical controls shared by both simulators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Fixed propagation steps per excitation period (rounded up to even).
    pub steps_per_cycle: usize,
    /// Relative cycle-to-cycle power change that counts as settled.
    pub power_rel_tol: f64,
    /// Consecutive settled cycles required.
    pub settled_cycles: usize,
    /// Hard cap on simulated cycles.
    pub max_cycles: usize,
    /// Plain cycles integrated from the zero state before shooting.
    pub warmup_cycles: usize,
    /// Accelerate the approach to the periodic orbit with Newton shooting.
    pub shooting: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            steps_per_cycle: 200,
            power_rel_tol: 1e-3,
            settled_cycles: 3,
            max_cycles: 2000,
            warmup_cycles: 2,
            shooting: true,
        }
    }
}

impl SimOptions {
    pub(crate) fn half_steps(&self) -> usize {
        self.steps_per_cycle.max(8).div_ceil(2)
    }
}

/// One sample of the recorded final cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformSample {
    pub t: f64,
    pub v_out: f64,
    pub i_s: f64,
    /// Set on the sample taken just before a bias flip.
    pub flip: bool,
}

/// Energy flows over the final steady-state cycle (J).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyAudit {
    pub source: f64,
    pub damping: f64,
    pub diode: f64,
    pub flip: f64,
    pub storage: f64,
    /// Load resistor dissipation (ACML only).
    pub load: f64,
    /// Change of stored reactive energy across the cycle.
    pub reactive_change: f64,
}

impl EnergyAudit {
    /// `source − (damping + diode + flip + storage + load + reactive_change)`.
    pub fn imbalance(&self) -> f64 {
        self.source
            - (self.damping + self.diode + self.flip + self.storage + self.load + self.reactive_change)
    }

    pub fn relative_imbalance(&self) -> f64 {
        self.imbalance().abs() / self.source.abs().max(f64::MIN_POSITIVE)
    }
}

/// Fundamental (first-harmonic) component of `V_Out`, `amplitude·sin(ωt + phase)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Fundamental {
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateResult {
    /// Cycle-averaged power into the storage cell (DCRS) or load resistor (ACML), W.
    pub avg_power: f64,
    /// Mean `|V_Out|` just before a flip, V.
    pub v_bf: f64,
    /// Largest `|V_Out|` over the final cycle, V.
    pub v_peak: f64,
    pub v_out_fundamental: Fundamental,
    pub waveform: Vec<WaveformSample>,
    pub energy: EnergyAudit,
    pub cycles_run: usize,
    pub converged: bool,
    /// State at the start of the recorded cycle.
    pub periodic_state: SimState,
}

impl SteadyStateResult {
    /// `v_bf / v_peak`, or 0 for a dead waveform.
    pub fn flip_fraction(&self) -> f64 {
        if self.v_peak > 0.0 {
            self.v_bf / self.v_peak
        } else {
            0.0
        }
    }
}

/// Convergence tracking on cycle powers.
#[derive(Debug)]
pub(crate) struct SettleTracker {
    rel_tol: f64,
    abs_floor: f64,
    needed: usize,
    streak: usize,
    last: Option<f64>,
}

impl SettleTracker {
    pub fn new(opts: &SimOptions, abs_floor: f64) -> Self {
        Self {
            rel_tol: opts.power_rel_tol,
            abs_floor,
            needed: opts.settled_cycles.max(1),
            streak: 0,
            last: None,
        }
    }

    /// Feeds one cycle power; returns true once settled.
    pub fn push(&mut self, power: f64) -> bool {
        if let Some(prev) = self.last {
            if (power - prev).abs() <= self.rel_tol * power.abs() + self.abs_floor {
                self.streak += 1;
            } else {
                self.streak = 0;
            }
        }
        self.last = Some(power);
        self.streak >= self.needed
    }
}
