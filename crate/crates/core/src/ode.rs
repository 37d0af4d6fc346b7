//! Adaptive Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The solver is generic over any fixed-size complex matrix state, which
//! covers density matrices, QRT operators, state vectors and propagators.

use nalgebra::{allocator::Allocator, DefaultAllocator, Dim, OMatrix};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// A state that can be advanced by the integrator.
pub trait OdeState: Clone {
    /// `self += a * x`
    fn add_scaled(&mut self, a: f64, x: &Self);

    /// `self *= a`
    fn scale(&mut self, a: f64);

    /// Max-norm of `err` scaled by `atol + rtol * max(|y0|, |y1|)` per component.
    fn error_norm(err: &Self, y0: &Self, y1: &Self, atol: f64, rtol: f64) -> f64;
}

impl<R: Dim, C: Dim> OdeState for OMatrix<Complex64, R, C>
where
    DefaultAllocator: Allocator<R, C>,
{
    fn add_scaled(&mut self, a: f64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x.iter()) {
            *s += v * a;
        }
    }

    fn scale(&mut self, a: f64) {
        for s in self.iter_mut() {
            *s *= a;
        }
    }

    fn error_norm(err: &Self, y0: &Self, y1: &Self, atol: f64, rtol: f64) -> f64 {
        let mut worst = 0.0f64;
        for ((e, a), b) in err.iter().zip(y0.iter()).zip(y1.iter()) {
            let sc_re = atol + rtol * a.re.abs().max(b.re.abs());
            let sc_im = atol + rtol * a.im.abs().max(b.im.abs());
            worst = worst.max((e.re / sc_re).abs()).max((e.im / sc_im).abs());
        }
        worst
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step together with its 4th-order continuous extension.
#[derive(Debug, Clone)]
pub struct DenseStep<S> {
    pub t0: f64,
    pub t1: f64,
    cont: [S; 5],
}

impl<S: OdeState> DenseStep<S> {
    /// State at `t` inside `[t0, t1]`.
    pub fn eval(&self, t: f64) -> S {
        let h = self.t1 - self.t0;
        let s = if h > 0.0 { ((t - self.t0) / h).clamp(0.0, 1.0) } else { 1.0 };
        let s1 = 1.0 - s;
        // c0 + s (c1 + s1 (c2 + s (c3 + s1 c4)))
        let mut acc = self.cont[3].clone();
        acc.add_scaled(s1, &self.cont[4]);
        let mut tmp = self.cont[2].clone();
        tmp.add_scaled(s, &acc);
        let mut acc = self.cont[1].clone();
        acc.add_scaled(s1, &tmp);
        let mut out = self.cont[0].clone();
        out.add_scaled(s, &acc);
        out
    }

    pub fn start(&self) -> &S {
        &self.cont[0]
    }

    pub fn end(&self) -> S {
        let mut y = self.cont[0].clone();
        y.add_scaled(1.0, &self.cont[1]);
        y
    }
}

/// Step-size controlled Dormand–Prince 5(4) solver.
#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    /// Steps smaller than `h_min_rel * |t1 - t0|` are treated as underflow.
    pub h_min_rel: f64,
    pub max_steps: usize,
    /// Optional cap on the step length (seconds).
    pub h_max: f64,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5::with_tolerance(1e-10)
    }
}

impl Dopri5 {
    pub fn with_tolerance(tol: f64) -> Self {
        Dopri5 { rtol: tol, atol: tol, h_min_rel: 1e-14, max_steps: 10_000_000, h_max: f64::INFINITY }
    }

    /// Integrates `dy/dt = f(t, y)` from `t0` to `t1`, handing every accepted
    /// step to `on_step`. Returns the state at `t1`.
    pub fn solve<S, F, G>(&self, mut f: F, t0: f64, y0: S, t1: f64, mut on_step: G) -> Result<S>
    where
        S: OdeState,
        F: FnMut(f64, &S) -> S,
        G: FnMut(&DenseStep<S>),
    {
        let span = t1 - t0;
        if span <= 0.0 {
            return Ok(y0);
        }
        let h_min = self.h_min_rel * span.max(t0.abs());
        let mut t = t0;
        let mut y = y0;
        let mut k1 = f(t, &y);
        let mut h = self.initial_step(&mut f, t, &y, &k1, span).min(self.h_max);
        let mut steps = 0usize;

        loop {
            if t1 - t <= 0.0 {
                return Ok(y);
            }
            let last = t + h >= t1;
            let h_try = if last { t1 - t } else { h };

            let stage = |base: &S, coeffs: &[(f64, &S)]| {
                let mut out = base.clone();
                for &(c, k) in coeffs {
                    out.add_scaled(h_try * c, k);
                }
                out
            };
            let k2 = f(t + C2 * h_try, &stage(&y, &[(A21, &k1)]));
            let k3 = f(t + C3 * h_try, &stage(&y, &[(A31, &k1), (A32, &k2)]));
            let k4 = f(t + C4 * h_try, &stage(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = f(
                t + C5 * h_try,
                &stage(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = f(
                t + h_try,
                &stage(&y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            );
            let y_new = stage(&y, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            let t_new = if last { t1 } else { t + h_try };
            let k7 = f(t_new, &y_new);

            let err_scaled = combo(
                h_try,
                &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
            );
            let err_norm = S::error_norm(&err_scaled, &y, &y_new, self.atol, self.rtol);

            steps += 1;
            if steps > self.max_steps {
                return Err(Error::Propagation { time: t, reason: "step budget exhausted".into() });
            }
            if !err_norm.is_finite() {
                return Err(Error::Propagation { time: t, reason: "non-finite state".into() });
            }

            if err_norm <= 1.0 {
                let mut ydiff = y_new.clone();
                ydiff.add_scaled(-1.0, &y);
                let mut bspl = k1.clone();
                bspl.scale(h_try);
                bspl.add_scaled(-1.0, &ydiff);
                let mut c3 = ydiff.clone();
                c3.add_scaled(-h_try, &k7);
                c3.add_scaled(-1.0, &bspl);
                let c4 = combo(
                    h_try,
                    &[(D1, &k1), (D3, &k3), (D4, &k4), (D5, &k5), (D6, &k6), (D7, &k7)],
                );
                let step = DenseStep { t0: t, t1: t_new, cont: [y.clone(), ydiff, bspl, c3, c4] };
                on_step(&step);

                t = t_new;
                y = y_new;
                k1 = k7;
                let fac = if err_norm == 0.0 { 5.0 } else { (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    h = (h_try * fac).min(self.h_max);
                }
            } else {
                let fac = (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9);
                h = h_try * fac;
                if h < h_min {
                    return Err(Error::Propagation { time: t, reason: "step size underflow".into() });
                }
            }
        }
    }

    fn initial_step<S, F>(&self, f: &mut F, t: f64, y: &S, k1: &S, span: f64) -> f64
    where
        S: OdeState,
        F: FnMut(f64, &S) -> S,
    {
        let mut zero = y.clone();
        zero.scale(0.0);
        let d0 = S::error_norm(y, &zero, &zero, self.atol, self.rtol);
        let d1 = S::error_norm(k1, y, y, self.atol, self.rtol);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        let mut y1 = y.clone();
        y1.add_scaled(h0, k1);
        let k2 = f(t + h0, &y1);
        let mut dk = k2;
        dk.add_scaled(-1.0, k1);
        let d2 = S::error_norm(&dk, y, y, self.atol, self.rtol) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6 * span)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    }
}

/// `h * sum(c_i * k_i)`
fn combo<S: OdeState>(h: f64, terms: &[(f64, &S)]) -> S {
    let (c0, k0) = terms[0];
    let mut out = k0.clone();
    out.scale(h * c0);
    for &(c, k) in &terms[1..] {
        out.add_scaled(h * c, k);
    }
    out
}

/// Integrates and samples the solution at the (sorted) `times`, calling
/// `on_sample(index, t, y)` for each. Times outside `[t0, t1]` are skipped.
pub fn solve_sampled<S, F, G>(
    solver: &Dopri5,
    f: F,
    t0: f64,
    y0: S,
    t1: f64,
    times: &[f64],
    mut on_sample: G,
) -> Result<S>
where
    S: OdeState,
    F: FnMut(f64, &S) -> S,
    G: FnMut(usize, f64, &S),
{
    let mut next = times.partition_point(|&x| x < t0);
    while next < times.len() && times[next] == t0 {
        on_sample(next, t0, &y0);
        next += 1;
    }
    let y_end = solver.solve(f, t0, y0, t1, |step| {
        while next < times.len() && times[next] <= step.t1 {
            let ts = times[next];
            on_sample(next, ts, &step.eval(ts));
            next += 1;
        }
    })?;
    Ok(y_end)
}
