use nalgebra::{Matrix4, Vector4};

use super::{EnergyAudit, Fundamental, SettleTracker, SimOptions, SimState, SteadyStateResult, WaveformSample};
use crate::error::{Error, Result};
use crate::linear::{mat_vec, Generator, Mat, Vect};
use crate::model::{CompactModel, Excitation, MatchedLoad};
use crate::numeric::GAUSS5;

/// Internal state: `[√L·i_s, √C_m·v_cm, √C_P·v_out, load state, F·sin ωt, F·cos ωt]`.
const N: usize = 6;

/// Realization of a linear load `R + jX` at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadKind {
    Resistive { r: f64 },
    /// Series `R`–`L` (`X > 0`).
    Inductive { r: f64, l: f64 },
    /// Series `R`–`C` (`X < 0`).
    Capacitive { r: f64, c: f64 },
}

impl LoadKind {
    pub fn from_impedance(resistance: f64, reactance: f64, omega: f64) -> Result<Self> {
        if !(resistance.is_finite() && resistance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "load resistance must be > 0, got {resistance}"
            )));
        }
        Ok(if reactance > 0.0 {
            LoadKind::Inductive {
                r: resistance,
                l: reactance / omega,
            }
        } else if reactance < 0.0 {
            LoadKind::Capacitive {
                r: resistance,
                c: -1.0 / (omega * reactance),
            }
        } else {
            LoadKind::Resistive { r: resistance }
        })
    }

    fn resistance(&self) -> f64 {
        match *self {
            LoadKind::Resistive { r } | LoadKind::Inductive { r, .. } | LoadKind::Capacitive { r, .. } => r,
        }
    }
}

/// Harvester driving a linear `R ± jX` load.
#[derive(Debug, Clone)]
pub struct AcmlCircuit {
    load: LoadKind,
    omega: f64,
    period: f64,
    h: f64,
    half_steps: usize,
    forcing: f64,
    sqrt_l: f64,
    sqrt_cm: f64,
    sqrt_cp: f64,
    load_scale: f64,
    gen: Generator<N>,
    step: Mat<N>,
    r_over_l: f64,
    p_opt: f64,
    opts: SimOptions,
}

/// Attaches the conjugate-matched load at the excitation frequency and runs to steady state.
pub fn simulate_acml(cm: &CompactModel, exc: &Excitation) -> Result<SteadyStateResult> {
    let MatchedLoad {
        resistance,
        reactance,
    } = cm.matched_load(exc.frequency())?;
    let load = LoadKind::from_impedance(resistance, reactance, exc.angular_frequency())?;
    AcmlCircuit::new(*cm, *exc, load, SimOptions::default())?.steady_state()
}

impl AcmlCircuit {
    pub fn new(cm: CompactModel, exc: Excitation, load: LoadKind, opts: SimOptions) -> Result<Self> {
        let omega = exc.angular_frequency();
        let period = exc.period();
        let half_steps = opts.half_steps();
        let h = 0.5 * period / half_steps as f64;
        let (l, c_m, c_p, r, a) = (cm.l_m(), cm.c_m(), cm.c_p(), cm.r_m(), cm.a());
        let w_m = 1.0 / (l * c_m).sqrt();
        let w_a = a / (l * c_p).sqrt();
        let mut m: Mat<N> = crate::linear::zeros();
        m[0] = [-r / l, -w_m, -w_a, 0.0, omega, 0.0];
        m[1][0] = w_m;
        m[2][0] = w_a;
        m[4][5] = omega;
        m[5][4] = -omega;
        let load_scale = match load {
            LoadKind::Resistive { r: rl } => {
                m[2][2] = -1.0 / (rl * c_p);
                1.0
            }
            LoadKind::Inductive { r: rl, l: ll } => {
                let k = 1.0 / (ll * c_p).sqrt();
                m[2][3] = -k;
                m[3][2] = k;
                m[3][3] = -rl / ll;
                ll.sqrt()
            }
            LoadKind::Capacitive { r: rl, c: cl } => {
                let k = 1.0 / (rl * (c_p * cl).sqrt());
                m[2][2] = -1.0 / (rl * c_p);
                m[2][3] = k;
                m[3][2] = k;
                m[3][3] = -1.0 / (rl * cl);
                cl.sqrt()
            }
        };
        let gen = Generator::new(m);
        Ok(Self {
            load,
            omega,
            period,
            h,
            half_steps,
            forcing: exc.source_amplitude() / (l.sqrt() * omega),
            sqrt_l: l.sqrt(),
            sqrt_cm: c_m.sqrt(),
            sqrt_cp: c_p.sqrt(),
            load_scale,
            step: gen.exp(h),
            gen,
            r_over_l: r / l,
            p_opt: cm.optimum_power(&exc),
            opts,
        })
    }

    fn forcing_at(&self, t: f64) -> (f64, f64) {
        let (s, c) = (self.omega * t).sin_cos();
        (self.forcing * s, self.forcing * c)
    }

    /// Current through the load resistor for internal state `z`.
    fn load_current(&self, z: &Vect<N>) -> f64 {
        match self.load {
            LoadKind::Resistive { r } => z[2] / self.sqrt_cp / r,
            LoadKind::Inductive { .. } => z[3] / self.load_scale,
            LoadKind::Capacitive { r, .. } => (z[2] / self.sqrt_cp - z[3] / self.load_scale) / r,
        }
    }

    /// Periodic state from the half-wave condition `x(T/2) = −x(0)`.
    fn shoot(&self) -> Result<[f64; 4]> {
        let e = self.gen.exp(0.5 * self.period);
        let (fs, fc) = self.forcing_at(0.0);
        let mut lhs = Matrix4::<f64>::zeros();
        let mut rhs = Vector4::<f64>::zeros();
        for i in 0..4 {
            for j in 0..4 {
                lhs[(i, j)] = e[i][j] + if i == j { 1.0 } else { 0.0 };
            }
            rhs[i] = -(e[i][4] * fs + e[i][5] * fc);
        }
        let x = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::EventLocation("singular periodic-orbit system".into()))?;
        Ok([x[0], x[1], x[2], x[3]])
    }

    pub fn steady_state(&self) -> Result<SteadyStateResult> {
        let mut z: Vect<N> = [0.0; N];
        let mut half_periods = 0usize;
        if self.opts.shooting {
            let x = self.shoot()?;
            z[..4].copy_from_slice(&x);
        }
        let mut tracker = SettleTracker::new(&self.opts, 1e-12 * self.p_opt);
        let mut settled = false;
        while half_periods / 2 < self.opts.max_cycles {
            let cycle_start = (half_periods / 2) as f64 * self.period;
            let (power, zn) = self.cycle_power(&z, cycle_start);
            z = zn;
            half_periods += 2;
            if tracker.push(power) {
                settled = true;
                break;
            }
        }
        if !settled {
            return Err(Error::NonConvergent {
                cycles: half_periods / 2,
            });
        }
        Ok(self.record_cycle(&z, half_periods / 2 + 1))
    }

    /// Load power over one cycle by midpoint sampling of the step grid.
    fn cycle_power(&self, z0: &Vect<N>, t0: f64) -> (f64, Vect<N>) {
        let mut z = *z0;
        let (fs, fc) = self.forcing_at(t0);
        z[4] = fs;
        z[5] = fc;
        let r = self.load.resistance();
        let mut energy = 0.0;
        for _ in 0..2 * self.half_steps {
            let mid = self.gen.apply(&z, 0.5 * self.h);
            let i = self.load_current(&mid);
            energy += r * i * i * self.h;
            z = mat_vec(&self.step, &z);
        }
        (energy / self.period, z)
    }

    fn record_cycle(&self, z0: &Vect<N>, cycles_run: usize) -> SteadyStateResult {
        let mut z = *z0;
        let (fs, fc) = self.forcing_at(0.0);
        z[4] = fs;
        z[5] = fc;
        let start_energy: f64 = z[..4].iter().map(|x| 0.5 * x * x).sum();
        let periodic_state = SimState {
            i_s: z[0] / self.sqrt_l,
            v_cm: z[1] / self.sqrt_cm,
            v_out: z[2] / self.sqrt_cp,
            t: 0.0,
        };
        let r = self.load.resistance();
        let mut audit = EnergyAudit::default();
        let (mut fs_acc, mut fc_acc, mut v_peak) = (0.0, 0.0, 0.0f64);
        let mut samples = Vec::with_capacity(2 * self.half_steps + 1);
        let sample = |z: &Vect<N>, t: f64| WaveformSample {
            t,
            v_out: z[2] / self.sqrt_cp,
            i_s: z[0] / self.sqrt_l,
            flip: false,
        };
        samples.push(sample(&z, 0.0));
        for k in 0..2 * self.half_steps {
            let t = k as f64 * self.h;
            for (x, w) in GAUSS5 {
                let zn = self.gen.apply(&z, x * self.h);
                let dt = w * self.h;
                let i_load = self.load_current(&zn);
                audit.source += dt * self.omega * zn[4] * zn[0];
                audit.damping += dt * self.r_over_l * zn[0] * zn[0];
                audit.load += dt * r * i_load * i_load;
                let v = zn[2] / self.sqrt_cp;
                let (s, c) = (self.omega * (t + x * self.h)).sin_cos();
                fs_acc += dt * v * s;
                fc_acc += dt * v * c;
                v_peak = v_peak.max(v.abs());
            }
            z = mat_vec(&self.step, &z);
            samples.push(sample(&z, t + self.h));
        }
        let end_energy: f64 = z[..4].iter().map(|x| 0.5 * x * x).sum();
        audit.reactive_change = end_energy - start_energy;
        let a = 2.0 / self.period * fs_acc;
        let b = 2.0 / self.period * fc_acc;
        SteadyStateResult {
            avg_power: audit.load / self.period,
            v_bf: 0.0,
            v_peak,
            v_out_fundamental: Fundamental {
                amplitude: a.hypot(b),
                phase: b.atan2(a),
            },
            waveform: samples,
            energy: audit,
            cycles_run,
            converged: true,
            periodic_state,
        }
    }
}
