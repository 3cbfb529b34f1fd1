use nalgebra::{Matrix3, Vector3};

use super::{
    BiasFlipConfig, EnergyAudit, Fundamental, Polarity, RectifierModel, SegmentEvent, SettleTracker,
    SimOptions, SimState, SteadyStateResult, Topology, WaveformSample,
};
use crate::error::{Error, Result};
use crate::linear::{mat_vec, Generator, Mat, Vect};
use crate::model::{CompactModel, Excitation};
use crate::numeric::{brent_root, GAUSS5};

/// Internal state: `[√L·i_s, √C_m·v_cm, √C_P·v_out, F·sin ωt, F·cos ωt]`
/// with `F = V_F / (√L·ω)`.
const N: usize = 5;
const MAX_EVENTS_PER_STEP: usize = 16;
const NEWTON_MAX_ITER: usize = 25;

type Phys = [f64; 3];

/// Harvester + bias-flip switch + bridge rectifier + constant-voltage store.
#[derive(Debug, Clone)]
pub struct DcrsCircuit {
    cm: CompactModel,
    exc: Excitation,
    rect: RectifierModel,
    bf: BiasFlipConfig,
    v_rect: f64,
    opts: SimOptions,
    omega: f64,
    period: f64,
    h: f64,
    half_steps: usize,
    forcing: f64,
    sqrt_l: f64,
    sqrt_cm: f64,
    sqrt_cp: f64,
    threshold: f64,
    open: Generator<N>,
    clamped: Generator<N>,
    step_open: Mat<N>,
    step_clamped: Mat<N>,
    flip_offset: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct SpanStats {
    /// Charge delivered through the bridge, C.
    charge: f64,
    source: f64,
    damping: f64,
    v_pre_flip: f64,
    flip_loss: f64,
}

impl SpanStats {
    fn add(&mut self, other: &SpanStats) {
        self.charge += other.charge;
        self.source += other.source;
        self.damping += other.damping;
        self.flip_loss += other.flip_loss;
    }
}

#[derive(Debug, Default)]
struct Recorder {
    samples: Vec<WaveformSample>,
    v_peak: f64,
    fund_sin: f64,
    fund_cos: f64,
}

/// Runs the DCRS circuit from rest to periodic steady state with default options.
pub fn simulate_dcrs(
    cm: &CompactModel,
    exc: &Excitation,
    rect: &RectifierModel,
    bf: &BiasFlipConfig,
    v_rect: f64,
) -> Result<SteadyStateResult> {
    DcrsCircuit::new(*cm, *exc, *rect, *bf, v_rect, SimOptions::default())?.steady_state()
}

impl DcrsCircuit {
    pub fn new(
        cm: CompactModel,
        exc: Excitation,
        rect: RectifierModel,
        bf: BiasFlipConfig,
        v_rect: f64,
        opts: SimOptions,
    ) -> Result<Self> {
        if !(v_rect.is_finite() && v_rect >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rectification voltage must be >= 0, got {v_rect}"
            )));
        }
        rect.validate()?;
        if bf.enabled {
            bf.validate()?;
        }
        let omega = exc.angular_frequency();
        let period = exc.period();
        let half_steps = opts.half_steps();
        let h = 0.5 * period / half_steps as f64;
        let (l, c_m, c_p, r, a) = (cm.l_m(), cm.c_m(), cm.c_p(), cm.r_m(), cm.a());
        let w_m = 1.0 / (l * c_m).sqrt();
        let w_a = a / (l * c_p).sqrt();
        let mut m: Mat<N> = crate::linear::zeros();
        m[0] = [-r / l, -w_m, -w_a, omega, 0.0];
        m[1][0] = w_m;
        m[2][0] = w_a;
        m[3][4] = omega;
        m[4][3] = -omega;
        let open = Generator::new(m);
        m[2][0] = 0.0;
        let clamped = Generator::new(m);
        let half = 0.5 * period;
        let flip_offset = if bf.enabled {
            (-bf.phase / omega).rem_euclid(half)
        } else {
            0.0
        };
        Ok(Self {
            cm,
            exc,
            rect,
            bf,
            v_rect,
            opts,
            omega,
            period,
            h,
            half_steps,
            forcing: exc.source_amplitude() / (l.sqrt() * omega),
            sqrt_l: l.sqrt(),
            sqrt_cm: c_m.sqrt(),
            sqrt_cp: c_p.sqrt(),
            threshold: c_p.sqrt() * (v_rect + 2.0 * rect.effective_drop()),
            step_open: open.exp(h),
            step_clamped: clamped.exp(h),
            open,
            clamped,
            flip_offset,
        })
    }

    /// Conduction threshold `V_rect + 2 V_d` (V).
    pub fn threshold_voltage(&self) -> f64 {
        self.threshold / self.sqrt_cp
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// First flip instant in `[0, T/2)`; later flips follow every half period.
    pub fn first_flip_time(&self) -> f64 {
        self.flip_offset
    }

    fn forcing_at(&self, t: f64) -> (f64, f64) {
        let (s, c) = (self.omega * t).sin_cos();
        (self.forcing * s, self.forcing * c)
    }

    fn to_internal(&self, s: &SimState) -> Vect<N> {
        let (fs, fc) = self.forcing_at(s.t);
        [
            self.sqrt_l * s.i_s,
            self.sqrt_cm * s.v_cm,
            self.sqrt_cp * s.v_out,
            fs,
            fc,
        ]
    }

    fn to_state(&self, z: &Vect<N>, t: f64) -> SimState {
        SimState {
            i_s: z[0] / self.sqrt_l,
            v_cm: z[1] / self.sqrt_cm,
            v_out: z[2] / self.sqrt_cp,
            t,
        }
    }

    fn generator(&self, topo: Topology) -> &Generator<N> {
        match topo {
            Topology::Open => &self.open,
            Topology::Conducting(_) | Topology::Shorted => &self.clamped,
        }
    }

    fn locate<F: FnMut(f64) -> f64>(&self, f: F, a: f64, b: f64, what: &str) -> Result<f64> {
        brent_root(f, a, b, 1e-10 * self.h, 200)
            .ok_or_else(|| Error::EventLocation(format!("cannot isolate {what} in [{a:e}, {b:e}]")))
    }

    /// Topology implied by a state; snaps `v_out` onto the clamp when conducting.
    fn classify(&self, z: &mut Vect<N>) -> Topology {
        if self.threshold <= 0.0 {
            z[2] = 0.0;
            return Topology::Shorted;
        }
        if z[2].abs() >= self.threshold * (1.0 - 1e-12) {
            let p = Polarity::of(z[2]);
            if p.sign() * z[0] > 0.0 {
                z[2] = p.sign() * self.threshold;
                return Topology::Conducting(p);
            }
        }
        Topology::Open
    }

    /// Propagates over at most `dt`, stopping at the first diode event.
    fn advance(
        &self,
        z0: &Vect<N>,
        topo: Topology,
        dt: f64,
        full_step: bool,
    ) -> Result<(Vect<N>, f64, SegmentEvent)> {
        let gen = self.generator(topo);
        let z1 = if full_step {
            let m = match topo {
                Topology::Open => &self.step_open,
                _ => &self.step_clamped,
            };
            mat_vec(m, z0)
        } else {
            gen.apply(z0, dt)
        };
        match topo {
            Topology::Shorted => Ok((z1, dt, SegmentEvent::None)),
            Topology::Conducting(p) => {
                let s = p.sign();
                if s * z1[0] > 0.0 {
                    return Ok((z1, dt, SegmentEvent::None));
                }
                let mut lo = 0.0;
                if s * z0[0] <= 0.0 {
                    // At zero current the diode stays on only if the current
                    // turns straight back into conduction (grazing contact).
                    if s * gen.derivative(z0)[0] <= 0.0 {
                        return Ok((*z0, 0.0, SegmentEvent::DiodeOff));
                    }
                    let mut d = dt;
                    while d > 1e-6 * dt && s * gen.apply(z0, d)[0] <= 0.0 {
                        d *= 0.5;
                    }
                    if s * gen.apply(z0, d)[0] <= 0.0 {
                        return Ok((*z0, 0.0, SegmentEvent::DiodeOff));
                    }
                    lo = d;
                }
                let tau = self.locate(|tau| s * gen.apply(z0, tau)[0], lo, dt, "diode turn-off")?;
                Ok((gen.apply(z0, tau), tau, SegmentEvent::DiodeOff))
            }
            Topology::Open => {
                let thr = self.threshold;
                // |v_out| is monotone between reversals of the branch current.
                let mut bounds = [dt, dt];
                let mut pieces = 1;
                if self.cm.a() > 0.0 && z0[0] * z1[0] < 0.0 {
                    bounds[0] =
                        self.locate(|tau| gen.apply(z0, tau)[0], 0.0, dt, "current reversal")?;
                    pieces = 2;
                }
                let mut a = 0.0;
                for &b in &bounds[..pieces] {
                    let zb = if b == dt { z1 } else { gen.apply(z0, b) };
                    if zb[2].abs() >= thr {
                        let s = zb[2].signum();
                        let pol = Polarity::of(s);
                        let za = if a == 0.0 { *z0 } else { gen.apply(z0, a) };
                        if s * za[2] >= thr {
                            return Ok((za, a, SegmentEvent::DiodeOn(pol)));
                        }
                        let tau = self.locate(
                            |tau| s * gen.apply(z0, tau)[2] - thr,
                            a,
                            b,
                            "diode turn-on",
                        )?;
                        return Ok((gen.apply(z0, tau), tau, SegmentEvent::DiodeOn(pol)));
                    }
                    a = b;
                }
                Ok((z1, dt, SegmentEvent::None))
            }
        }
    }

    /// Advances `state` under `topology` for at most `dt_max`, stopping early
    /// at a diode transition or at the next scheduled flip instant.
    ///
    /// The returned state is the raw located boundary; switching topology
    /// (and applying the flip) is up to the caller.
    pub fn advance_segment(
        &self,
        state: &SimState,
        topology: Topology,
        dt_max: f64,
    ) -> Result<(SimState, SegmentEvent)> {
        if !(dt_max.is_finite() && dt_max >= 0.0) {
            return Err(Error::InvalidConfig(format!("dt_max must be >= 0, got {dt_max}")));
        }
        let z0 = self.to_internal(state);
        match topology {
            Topology::Conducting(p) => {
                let err = (p.sign() * z0[2] - self.threshold).abs();
                if err > 1e-9 * self.threshold.max(f64::MIN_POSITIVE) {
                    return Err(Error::EventLocation(
                        "conducting topology requires v_out on the clamp".into(),
                    ));
                }
            }
            Topology::Shorted if self.threshold > 0.0 => {
                return Err(Error::EventLocation(
                    "shorted topology requires a zero conduction threshold".into(),
                ));
            }
            _ => {}
        }
        let mut dt = dt_max;
        let mut flip_due = false;
        if self.bf.enabled {
            let half = 0.5 * self.period;
            let k = ((state.t - self.flip_offset) / half).floor() + 1.0;
            let mut t_flip = self.flip_offset + k * half;
            if t_flip <= state.t * (1.0 + 1e-15) {
                t_flip += half;
            }
            if t_flip - state.t <= dt_max {
                dt = t_flip - state.t;
                flip_due = true;
            }
        }
        // Event detection assumes at most one current reversal per piece, so
        // long spans are walked in steps of the simulation grid.
        let pieces = (dt / self.h).ceil().max(1.0) as usize;
        let piece = dt / pieces as f64;
        let mut z = z0;
        for k in 0..pieces {
            let t = state.t + k as f64 * piece;
            let (zn, tau, ev) = self.advance(&z, topology, piece, false)?;
            if ev != SegmentEvent::None {
                return Ok((self.to_state(&zn, t + tau), ev));
            }
            z = zn;
            let (fs, fc) = self.forcing_at(t + piece);
            z[3] = fs;
            z[4] = fc;
        }
        let ev = if flip_due { SegmentEvent::FlipDue } else { SegmentEvent::None };
        Ok((self.to_state(&z, state.t + dt), ev))
    }

    fn accumulate_quadrature(
        &self,
        gen: &Generator<N>,
        za: &Vect<N>,
        t: f64,
        tau: f64,
        stats: &mut SpanStats,
        rec: &mut Recorder,
    ) {
        if tau <= 0.0 {
            return;
        }
        let r_over_l = self.cm.r_m() / self.cm.l_m();
        for (x, w) in GAUSS5 {
            let zn = gen.apply(za, x * tau);
            let tn = t + x * tau;
            stats.source += w * tau * self.omega * zn[3] * zn[0];
            stats.damping += w * tau * r_over_l * zn[0] * zn[0];
            let v = zn[2] / self.sqrt_cp;
            let (s, c) = (self.omega * tn).sin_cos();
            rec.fund_sin += w * tau * v * s;
            rec.fund_cos += w * tau * v * c;
            rec.v_peak = rec.v_peak.max(v.abs());
        }
    }

    /// Integrates `steps` steps of length `step` from time `t0`, handling diode events.
    fn run_span(
        &self,
        z: &mut Vect<N>,
        topo: &mut Topology,
        t0: f64,
        steps: usize,
        step: f64,
        stats: &mut SpanStats,
        mut rec: Option<&mut Recorder>,
    ) -> Result<()> {
        let full_ok = step == self.h;
        for k in 0..steps {
            let t_step = t0 + k as f64 * step;
            let mut done = 0.0;
            let mut events = 0;
            loop {
                let remaining = step - done;
                let (zn, tau, ev) = self.advance(z, *topo, remaining, full_ok && done == 0.0)?;
                if let Some(r) = rec.as_deref_mut() {
                    self.accumulate_quadrature(self.generator(*topo), z, t_step + done, tau, stats, r);
                }
                if let Topology::Conducting(_) = topo {
                    stats.charge += self.cm.a() * self.sqrt_cm * (zn[1] - z[1]).abs();
                }
                *z = zn;
                done += tau;
                match ev {
                    SegmentEvent::DiodeOn(p) => {
                        z[2] = p.sign() * self.threshold;
                        *topo = Topology::Conducting(p);
                    }
                    SegmentEvent::DiodeOff => {
                        z[0] = 0.0;
                        *topo = Topology::Open;
                    }
                    SegmentEvent::None | SegmentEvent::FlipDue => break,
                }
                if let Some(r) = rec.as_deref_mut() {
                    r.samples.push(self.sample(z, t_step + done, false));
                }
                events += 1;
                if events > MAX_EVENTS_PER_STEP {
                    return Err(Error::EventLocation(format!(
                        "switching chatter near t = {:e} s",
                        t_step + done
                    )));
                }
                if done >= step * (1.0 - 1e-14) {
                    break;
                }
            }
            let t_end = t_step + step;
            let (fs, fc) = self.forcing_at(t_end);
            z[3] = fs;
            z[4] = fc;
            if let Some(r) = rec.as_deref_mut() {
                r.samples.push(self.sample(z, t_end, false));
            }
        }
        Ok(())
    }

    fn sample(&self, z: &Vect<N>, t: f64, flip: bool) -> WaveformSample {
        WaveformSample {
            t,
            v_out: z[2] / self.sqrt_cp,
            i_s: z[0] / self.sqrt_l,
            flip,
        }
    }

    fn apply_flip(&self, z: &mut Vect<N>, stats: &mut SpanStats, t: f64, rec: Option<&mut Recorder>) {
        let pre = z[2];
        stats.v_pre_flip = pre.abs() / self.sqrt_cp;
        if let Some(r) = rec {
            r.samples.push(self.sample(z, t, true));
            if self.bf.enabled {
                let mut post = *z;
                post[2] = -self.bf.flip_ratio * pre;
                r.samples.push(self.sample(&post, t, false));
            }
        }
        if self.bf.enabled {
            z[2] = -self.bf.flip_ratio * pre;
            stats.flip_loss += 0.5 * (1.0 - self.bf.flip_ratio * self.bf.flip_ratio) * pre * pre;
        }
    }

    /// One half period starting just after a flip at `t_start`, ending just after the next flip.
    fn run_half(
        &self,
        z: &mut Vect<N>,
        t_start: f64,
        mut rec: Option<&mut Recorder>,
    ) -> Result<SpanStats> {
        let (fs, fc) = self.forcing_at(t_start);
        z[3] = fs;
        z[4] = fc;
        let mut topo = self.classify(z);
        let mut stats = SpanStats::default();
        self.run_span(z, &mut topo, t_start, self.half_steps, self.h, &mut stats, rec.as_deref_mut())?;
        self.apply_flip(z, &mut stats, t_start + 0.5 * self.period, rec);
        Ok(stats)
    }

    /// Half-period return map in the frame of the first flip, using the
    /// half-wave symmetry `x(t + T/2) = −x(t)`.
    fn half_map(&self, y: &Phys) -> Result<(Phys, SpanStats)> {
        let mut z = [y[0], y[1], y[2], 0.0, 0.0];
        let stats = self.run_half(&mut z, self.flip_offset, None)?;
        Ok(([-z[0], -z[1], -z[2]], stats))
    }

    fn newton(&self, y0: Phys, half_periods: &mut usize) -> Result<Option<Phys>> {
        let norm = |v: &Phys| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let mut y = y0;
        let (mut g, _) = self.half_map(&y)?;
        *half_periods += 1;
        let mut f: Phys = [g[0] - y[0], g[1] - y[1], g[2] - y[2]];
        for _ in 0..NEWTON_MAX_ITER {
            let scale = norm(&y).max(norm(&g));
            if scale == 0.0 || norm(&f) <= 1e-12 * scale {
                return Ok(Some(y));
            }
            let mut jac = Matrix3::<f64>::zeros();
            let d = 1e-7 * scale;
            for j in 0..3 {
                let mut yp = y;
                yp[j] += d;
                let (gp, _) = self.half_map(&yp)?;
                *half_periods += 1;
                for i in 0..3 {
                    jac[(i, j)] = (gp[i] - g[i]) / d - if i == j { 1.0 } else { 0.0 };
                }
            }
            let Some(delta) = jac.lu().solve(&Vector3::new(-f[0], -f[1], -f[2])) else {
                return Ok(None);
            };
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let yn = [
                    y[0] + lambda * delta[0],
                    y[1] + lambda * delta[1],
                    y[2] + lambda * delta[2],
                ];
                let (gn, _) = self.half_map(&yn)?;
                *half_periods += 1;
                let fnew = [gn[0] - yn[0], gn[1] - yn[1], gn[2] - yn[2]];
                if norm(&fnew) < norm(&f) {
                    y = yn;
                    g = gn;
                    f = fnew;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Ok(None);
            }
        }
        Ok(None)
    }

    /// Integrates from the all-zero state at `t = 0` to periodic steady state
    /// and records the final cycle.
    pub fn steady_state(&self) -> Result<SteadyStateResult> {
        let mut z: Vect<N> = [0.0, 0.0, 0.0, 0.0, self.forcing];
        let mut topo = self.classify(&mut z);
        let mut scratch = SpanStats::default();
        if self.flip_offset > 0.0 {
            let steps = (self.flip_offset / self.h).ceil().max(1.0) as usize;
            let step = self.flip_offset / steps as f64;
            self.run_span(&mut z, &mut topo, 0.0, steps, step, &mut scratch, None)?;
        }
        self.apply_flip(&mut z, &mut scratch, self.flip_offset, None);
        let mut y: Phys = [z[0], z[1], z[2]];

        let mut half_periods = 0usize;
        for _ in 0..2 * self.opts.warmup_cycles {
            y = self.half_map(&y)?.0;
            half_periods += 1;
        }
        if self.opts.shooting {
            if let Some(ys) = self.newton(y, &mut half_periods)? {
                y = ys;
            }
        }

        let p_opt = self.cm.optimum_power(&self.exc);
        let mut tracker = SettleTracker::new(&self.opts, 1e-12 * p_opt);
        let mut settled = false;
        while half_periods / 2 < self.opts.max_cycles {
            let (y1, s1) = self.half_map(&y)?;
            let (y2, s2) = self.half_map(&y1)?;
            half_periods += 2;
            y = y2;
            let power = self.v_rect * (s1.charge + s2.charge) / self.period;
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
        self.record_cycle(y, half_periods / 2 + 1)
    }

    fn record_cycle(&self, y: Phys, cycles_run: usize) -> Result<SteadyStateResult> {
        let t0 = self.flip_offset;
        let mut z: Vect<N> = [y[0], y[1], y[2], 0.0, 0.0];
        let start_energy = 0.5 * (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]);
        let periodic_state = self.to_state(&z, t0);
        let mut rec = Recorder::default();
        rec.samples.push(self.sample(&z, t0, false));
        let s1 = self.run_half(&mut z, t0, Some(&mut rec))?;
        let s2 = self.run_half(&mut z, t0 + 0.5 * self.period, Some(&mut rec))?;
        let end_energy = 0.5 * (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]);
        let mut total = s1;
        total.add(&s2);

        let v_d = self.rect.effective_drop();
        let energy = EnergyAudit {
            source: total.source,
            damping: total.damping,
            diode: 2.0 * v_d * total.charge,
            flip: total.flip_loss,
            storage: self.v_rect * total.charge,
            load: 0.0,
            reactive_change: end_energy - start_energy,
        };
        let sampled_peak = rec.samples.iter().map(|s| s.v_out.abs()).fold(0.0, f64::max);
        let a = 2.0 / self.period * rec.fund_sin;
        let b = 2.0 / self.period * rec.fund_cos;
        Ok(SteadyStateResult {
            avg_power: energy.storage / self.period,
            v_bf: 0.5 * (s1.v_pre_flip + s2.v_pre_flip),
            v_peak: rec.v_peak.max(sampled_peak),
            v_out_fundamental: Fundamental {
                amplitude: a.hypot(b),
                phase: b.atan2(a),
            },
            waveform: rec.samples,
            energy,
            cycles_run,
            converged: true,
            periodic_state,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::reference;

    /// Dense RK4 on the physical equations, independent of the exponential propagator.
    fn rk4(cm: &CompactModel, v_f: f64, omega: f64, clamped: bool, s: SimState, dt: f64, n: usize) -> SimState {
        let (l, c_m, r, a, c_p) = (cm.l_m(), cm.c_m(), cm.r_m(), cm.a(), cm.c_p());
        let rhs = |t: f64, x: [f64; 3]| {
            let di = (v_f * (omega * t).sin() - r * x[0] - x[1] - a * x[2]) / l;
            let dv = if clamped { 0.0 } else { a * x[0] / c_p };
            [di, x[0] / c_m, dv]
        };
        let mut x = [s.i_s, s.v_cm, s.v_out];
        let h = dt / n as f64;
        for k in 0..n {
            let t = s.t + k as f64 * h;
            let add = |x: [f64; 3], d: [f64; 3], f: f64| [x[0] + f * d[0], x[1] + f * d[1], x[2] + f * d[2]];
            let k1 = rhs(t, x);
            let k2 = rhs(t + 0.5 * h, add(x, k1, 0.5 * h));
            let k3 = rhs(t + 0.5 * h, add(x, k2, 0.5 * h));
            let k4 = rhs(t + h, add(x, k3, h));
            for i in 0..3 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        SimState {
            i_s: x[0],
            v_cm: x[1],
            v_out: x[2],
            t: s.t + dt,
        }
    }

    fn circuit(f: f64, rect: RectifierModel, bf: BiasFlipConfig, v_rect: f64) -> DcrsCircuit {
        let cm = reference::compact_model();
        DcrsCircuit::new(cm, reference::excitation(f), rect, bf, v_rect, SimOptions::default()).unwrap()
    }

    fn rel_err(a: &SimState, b: &SimState, cm: &CompactModel) -> f64 {
        // Compare in energy-normalized units so all components weigh alike.
        let d = [
            cm.l_m().sqrt() * (a.i_s - b.i_s),
            cm.c_m().sqrt() * (a.v_cm - b.v_cm),
            cm.c_p().sqrt() * (a.v_out - b.v_out),
        ];
        let n = [cm.l_m().sqrt() * b.i_s, cm.c_m().sqrt() * b.v_cm, cm.c_p().sqrt() * b.v_out];
        let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        norm(d) / norm(n)
    }

    #[test]
    fn open_cycle_matches_dense_rk4() {
        let f = 690.0;
        let c = circuit(f, RectifierModel::ideal(), BiasFlipConfig::disabled(), 1e3);
        let cm = reference::compact_model();
        let s0 = SimState {
            i_s: 2e-4,
            v_cm: -0.5,
            v_out: 0.3,
            t: 1.3e-4,
        };
        let (s1, ev) = c.advance_segment(&s0, Topology::Open, c.period()).unwrap();
        assert_eq!(ev, SegmentEvent::None);
        let oracle = rk4(&cm, 1.0, 2.0 * PI * f, false, s0, c.period(), 100_000);
        assert!(rel_err(&s1, &oracle, &cm) < 1e-6, "{}", rel_err(&s1, &oracle, &cm));
    }

    #[test]
    fn shorted_cycle_matches_dense_rk4() {
        let f = 660.0;
        let c = circuit(f, RectifierModel::ideal(), BiasFlipConfig::disabled(), 0.0);
        let cm = reference::compact_model();
        let s0 = SimState {
            i_s: -1e-4,
            v_cm: 0.2,
            v_out: 0.0,
            t: 0.0,
        };
        let (s1, ev) = c.advance_segment(&s0, Topology::Shorted, c.period()).unwrap();
        assert_eq!(ev, SegmentEvent::None);
        let oracle = rk4(&cm, 1.0, 2.0 * PI * f, true, s0, c.period(), 100_000);
        assert!(rel_err(&s1, &oracle, &cm) < 1e-6);
    }

    #[test]
    fn unforced_energy_decays_monotonically() {
        let cm = reference::compact_model();
        let exc = Excitation::new(0.0, 680.0, 0.0).unwrap();
        let c = DcrsCircuit::new(
            cm,
            exc,
            RectifierModel::ideal(),
            BiasFlipConfig::disabled(),
            1e3,
            SimOptions::default(),
        )
        .unwrap();
        let energy = |s: &SimState| {
            0.5 * (cm.l_m() * s.i_s * s.i_s + cm.c_m() * s.v_cm * s.v_cm + cm.c_p() * s.v_out * s.v_out)
        };
        let mut s = SimState {
            i_s: 1e-3,
            v_cm: 0.0,
            v_out: 0.5,
            t: 0.0,
        };
        let mut e = energy(&s);
        for _ in 0..200 {
            let (n, ev) = c.advance_segment(&s, Topology::Open, 0.5 * c.period()).unwrap();
            assert_eq!(ev, SegmentEvent::None);
            let en = energy(&n);
            assert!(en <= e * (1.0 + 1e-12), "{en} > {e}");
            s = n;
            e = en;
        }
        assert!(e < 0.5 * energy(&SimState { i_s: 1e-3, v_cm: 0.0, v_out: 0.5, t: 0.0 }));
    }

    #[test]
    fn diode_turn_on_lands_on_threshold() {
        let v_rect = 0.4;
        let c = circuit(690.0, RectifierModel::ideal(), BiasFlipConfig::disabled(), v_rect);
        let s0 = SimState {
            i_s: 5e-4,
            v_cm: 0.0,
            v_out: 0.0,
            t: 0.0,
        };
        let (s1, ev) = c.advance_segment(&s0, Topology::Open, c.period()).unwrap();
        assert_eq!(ev, SegmentEvent::DiodeOn(Polarity::Positive));
        assert!((s1.v_out.abs() - c.threshold_voltage()).abs() < 1e-9 * v_rect);
        assert!(s1.t > 0.0 && s1.t < c.period());
    }

    #[test]
    fn conducting_until_current_reverses() {
        let c = circuit(690.0, RectifierModel::diode_bridge(0.3).unwrap(), BiasFlipConfig::disabled(), 0.4);
        let v = c.threshold_voltage();
        let s0 = SimState {
            i_s: 5e-4,
            v_cm: 0.0,
            v_out: v,
            t: 0.0,
        };
        let (s1, ev) = c.advance_segment(&s0, Topology::Conducting(Polarity::Positive), c.period()).unwrap();
        assert_eq!(ev, SegmentEvent::DiodeOff);
        assert!(s1.i_s.abs() < 1e-9 * 5e-4);
        assert_eq!(s1.v_out, v);
    }

    #[test]
    fn flip_instant_is_reported() {
        let f = 690.0;
        let cm = reference::compact_model();
        let bf = BiasFlipConfig::new(1.0, cm.bf_phase(f)).unwrap();
        let c = circuit(f, RectifierModel::ideal(), bf, 1e3);
        let s0 = SimState {
            i_s: 0.0,
            v_cm: 0.0,
            v_out: 0.0,
            t: 0.0,
        };
        let (s1, ev) = c.advance_segment(&s0, Topology::Open, c.period()).unwrap();
        assert_eq!(ev, SegmentEvent::FlipDue);
        assert!((s1.t - c.first_flip_time()).abs() < 1e-15);
        let omega = 2.0 * PI * f;
        let phase = (omega * s1.t + cm.bf_phase(f)).rem_euclid(PI);
        assert!(phase.min(PI - phase) < 1e-9);
    }

    #[test]
    fn inconsistent_topology_is_rejected() {
        let c = circuit(690.0, RectifierModel::ideal(), BiasFlipConfig::disabled(), 0.4);
        let s0 = SimState {
            i_s: 1e-4,
            v_cm: 0.0,
            v_out: 0.1,
            t: 0.0,
        };
        assert!(c.advance_segment(&s0, Topology::Conducting(Polarity::Positive), 1e-4).is_err());
        assert!(c.advance_segment(&s0, Topology::Shorted, 1e-4).is_err());
        assert!(c.advance_segment(&s0, Topology::Open, -1.0).is_err());
    }

    #[test]
    fn negative_rectification_voltage_is_invalid() {
        let cm = reference::compact_model();
        let r = simulate_dcrs(
            &cm,
            &reference::excitation(680.0),
            &RectifierModel::ideal(),
            &BiasFlipConfig::disabled(),
            -1.0,
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn zero_sink_voltage_harvests_nothing() {
        let cm = reference::compact_model();
        let bf = BiasFlipConfig::new(0.82, cm.bf_phase(680.0)).unwrap();
        for rect in [RectifierModel::ideal(), RectifierModel::diode_bridge(0.3).unwrap()] {
            let r = simulate_dcrs(&cm, &reference::excitation(680.0), &rect, &bf, 0.0).unwrap();
            assert_eq!(r.avg_power, 0.0);
        }
    }

    #[test]
    fn energy_balances_over_the_recorded_cycle() {
        let cm = reference::compact_model();
        for (f, rect, gamma, v) in [
            (673.0, RectifierModel::ideal(), 1.0, 0.8),
            (685.0, RectifierModel::smart(), 0.82, 1.5),
            (700.0, RectifierModel::diode_bridge(0.3).unwrap(), 0.82, 1.0),
            (620.0, RectifierModel::diode_bridge(0.5).unwrap(), 0.9, 0.5),
        ] {
            let bf = BiasFlipConfig::new(gamma, cm.bf_phase(f)).unwrap();
            let r = simulate_dcrs(&cm, &reference::excitation(f), &rect, &bf, v).unwrap();
            assert!(r.energy.relative_imbalance() < 1e-3, "f={f}: {:?}", r.energy);
            assert!(r.avg_power >= 0.0);
        }
    }

    #[test]
    fn open_circuit_flip_at_zero_reactance_sees_no_voltage() {
        // Without conduction and with a lossless flip the output is the plain
        // open-circuit response, which crosses zero at the flip phase.
        let cm = reference::compact_model();
        let (f1, _) = cm.zero_reactance_frequencies().unwrap();
        let bf = BiasFlipConfig::new(1.0, cm.bf_phase(f1)).unwrap();
        let r = simulate_dcrs(&cm, &reference::excitation(f1), &RectifierModel::ideal(), &bf, 1e3).unwrap();
        assert!(r.flip_fraction() < 0.02, "{}", r.flip_fraction());
        assert_eq!(r.avg_power, 0.0);
    }

    #[test]
    fn doubling_time_resolution_barely_moves_power() {
        let cm = reference::compact_model();
        for f in [660.0, 680.0, 700.0] {
            let bf = BiasFlipConfig::new(0.82, cm.bf_phase(f)).unwrap();
            let run = |steps: usize| {
                let opts = SimOptions {
                    steps_per_cycle: steps,
                    ..SimOptions::default()
                };
                DcrsCircuit::new(cm, reference::excitation(f), RectifierModel::smart(), bf, 1.2, opts)
                    .unwrap()
                    .steady_state()
                    .unwrap()
                    .avg_power
            };
            let (p1, p2) = (run(200), run(400));
            assert!((p1 - p2).abs() < 5e-4 * p2, "f={f}: {p1} vs {p2}");
        }
    }

    #[test]
    fn steady_state_is_periodic() {
        let cm = reference::compact_model();
        let f = 690.0;
        let bf = BiasFlipConfig::new(0.82, cm.bf_phase(f)).unwrap();
        let r = simulate_dcrs(&cm, &reference::excitation(f), &RectifierModel::smart(), &bf, 1.0).unwrap();
        assert!(r.converged);
        let (first, last) = (r.waveform[0], r.waveform[r.waveform.len() - 1]);
        // The last sample is the post-flip value one period later.
        assert!((last.t - first.t - 1.0 / f).abs() < 1e-12);
        assert!((last.v_out - first.v_out).abs() < 1e-3 * r.v_peak);
        assert_eq!(r.waveform.iter().filter(|s| s.flip).count(), 2);
    }
}
