//! Exact propagation of small linear time-invariant systems `ż = M z`.
//!
//! Sinusoidal forcing is folded into `M` by carrying `sin ωt` and `cos ωt`
//! as two extra states, so every circuit segment between switching events is
//! advanced by a matrix exponential rather than a numerical integrator.

pub(crate) type Mat<const N: usize> = [[f64; N]; N];
pub(crate) type Vect<const N: usize> = [f64; N];

pub(crate) fn zeros<const N: usize>() -> Mat<N> {
    [[0.0; N]; N]
}

fn identity<const N: usize>() -> Mat<N> {
    let mut m = zeros();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub(crate) fn mat_vec<const N: usize>(m: &Mat<N>, v: &Vect<N>) -> Vect<N> {
    let mut out = [0.0; N];
    for (o, row) in out.iter_mut().zip(m.iter()) {
        *o = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    }
    out
}

fn mat_mul<const N: usize>(a: &Mat<N>, b: &Mat<N>) -> Mat<N> {
    let mut out = zeros();
    for i in 0..N {
        for k in 0..N {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..N {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn norm_inf<const N: usize>(m: &Mat<N>) -> f64 {
    m.iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(M τ)` by scaling and squaring with a truncated Taylor series.
pub(crate) fn expm<const N: usize>(m: &Mat<N>, tau: f64) -> Mat<N> {
    let norm = norm_inf(m) * tau.abs();
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as u32
    } else {
        0
    };
    let scale = tau / f64::from(2u32.pow(squarings));
    let mut a = *m;
    for row in a.iter_mut() {
        for x in row.iter_mut() {
            *x *= scale;
        }
    }
    let mut result = identity();
    let mut term = identity();
    for k in 1..=16 {
        term = mat_mul(&term, &a);
        let inv_k = 1.0 / k as f64;
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x *= inv_k;
            }
        }
        for (r, t) in result.iter_mut().zip(term.iter()) {
            for (x, y) in r.iter_mut().zip(t.iter()) {
                *x += y;
            }
        }
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result);
    }
    result
}

/// `exp(M τ) z` without forming the exponential.
///
/// `norm` is a precomputed `‖M‖∞`; the interval is split so that each
/// Taylor expansion runs on `‖M δ‖ ≤ 0.5`.
pub(crate) fn propagate<const N: usize>(m: &Mat<N>, norm: f64, z: &Vect<N>, tau: f64) -> Vect<N> {
    if tau == 0.0 {
        return *z;
    }
    let pieces = ((norm * tau.abs()) / 0.5).ceil().max(1.0) as usize;
    let dt = tau / pieces as f64;
    let mut out = *z;
    for _ in 0..pieces {
        let mut term = out;
        let mut sum = out;
        let scale = norm_vec(&out).max(f64::MIN_POSITIVE);
        for k in 1..=30 {
            let next = mat_vec(m, &term);
            let f = dt / k as f64;
            for (t, n) in term.iter_mut().zip(next.iter()) {
                *t = n * f;
            }
            for (s, t) in sum.iter_mut().zip(term.iter()) {
                *s += t;
            }
            if norm_vec(&term) <= 1e-18 * scale {
                break;
            }
        }
        out = sum;
    }
    out
}

pub(crate) fn norm_vec<const N: usize>(v: &Vect<N>) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// A system matrix together with its infinity norm.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Generator<const N: usize> {
    pub m: Mat<N>,
    pub norm: f64,
}

impl<const N: usize> Generator<N> {
    pub fn new(m: Mat<N>) -> Self {
        Self { norm: norm_inf(&m), m }
    }

    pub fn apply(&self, z: &Vect<N>, tau: f64) -> Vect<N> {
        propagate(&self.m, self.norm, z, tau)
    }

    pub fn derivative(&self, z: &Vect<N>) -> Vect<N> {
        mat_vec(&self.m, z)
    }

    pub fn exp(&self, tau: f64) -> Mat<N> {
        expm(&self.m, tau)
    }
}
