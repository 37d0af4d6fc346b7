//! Master-equation propagation of the four-level emitter.
//!
//! Drive windows are integrated with DOPRI5; stretches where the laser is
//! off are propagated with the closed-form free evolution, which is exact.

use nalgebra::{Matrix4, SymmetricEigen};
use num_complex::Complex64;

use crate::atomic::{Channel, LevelScheme, D850, D854, E, G, N_LEVELS};
use crate::error::{Error, Result};
use crate::ode::Dopri5;
use crate::pulse::PulseTrain;

pub type Operator = Matrix4<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Trace, hermiticity and positivity slack accepted for a physical state.
pub const STATE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(pub Operator);

impl DensityMatrix {
    pub fn pure(level: usize) -> Self {
        let mut m = Operator::zeros();
        m[(level, level)] = Complex64::new(1.0, 0.0);
        DensityMatrix(m)
    }

    pub fn ground() -> Self {
        Self::pure(G)
    }

    /// Wraps `op` after checking it is a physical state within `tol`.
    pub fn from_operator(op: Operator, tol: f64) -> Result<Self> {
        let rho = DensityMatrix(op);
        rho.check(tol)?;
        Ok(rho)
    }

    pub fn population(&self, level: usize) -> f64 {
        self.0[(level, level)].re
    }

    pub fn coherence(&self, i: usize, j: usize) -> Complex64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        (0..N_LEVELS).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.0 - self.0.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0);
        SymmetricEigen::new(h).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        if self.0.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("density matrix".into()));
        }
        let tr = self.trace();
        let herm = self.hermiticity_error();
        let min_ev = self.min_eigenvalue();
        if (tr - 1.0).abs() > tol || herm > tol || min_ev < -tol {
            return Err(Error::Domain(format!(
                "not a density matrix: trace {tr:.3e}, hermiticity error {herm:.3e}, min eigenvalue {min_ev:.3e}"
            )));
        }
        Ok(())
    }
}

/// `sqrt(rate) |to><from|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseOperator {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

impl CollapseOperator {
    pub fn matrix(&self) -> Operator {
        let mut m = Operator::zeros();
        m[(self.to, self.from)] = Complex64::new(self.rate.sqrt(), 0.0);
        m
    }
}

/// Decay channels out of |e> plus pure dephasing `sqrt(2 δω) |e><e|`.
/// Zero-rate channels are omitted.
pub fn collapse_operators(scheme: &LevelScheme, dephasing: f64) -> Vec<CollapseOperator> {
    let mut ops: Vec<CollapseOperator> = Channel::ALL
        .iter()
        .map(|&c| CollapseOperator { from: E, to: c.target_level(), rate: scheme.rate(c) })
        .collect();
    ops.push(CollapseOperator { from: E, to: E, rate: 2.0 * dephasing });
    ops.retain(|op| op.rate > 0.0);
    ops
}

/// Generator of the emitter dynamics. Works on arbitrary (non-Hermitian)
/// operators, as needed for two-time correlations.
#[derive(Debug, Clone)]
pub struct Lindbladian {
    pub scheme: LevelScheme,
    pub dephasing: f64,
    ops: Vec<CollapseOperator>,
    gamma_total: f64,
}

impl Lindbladian {
    pub fn new(scheme: &LevelScheme, dephasing: f64) -> Result<Self> {
        let rates = [scheme.gamma_back, scheme.gamma_854, scheme.gamma_850, dephasing, scheme.detuning];
        if rates.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidScheme("non-finite rate or detuning".into()));
        }
        if scheme.gamma_back < 0.0 || scheme.gamma_854 < 0.0 || scheme.gamma_850 < 0.0 || dephasing < 0.0 {
            return Err(Error::InvalidScheme("rates must be non-negative".into()));
        }
        Ok(Lindbladian {
            scheme: *scheme,
            dephasing,
            ops: collapse_operators(scheme, dephasing),
            gamma_total: scheme.gamma_total(),
        })
    }

    pub fn operators(&self) -> &[CollapseOperator] {
        &self.ops
    }

    /// Hamiltonian `-δ|e><e| + (Ω/2)(|g><e| + |e><g|)`.
    pub fn hamiltonian(&self, omega: f64) -> Operator {
        let mut h = Operator::zeros();
        h[(E, E)] = Complex64::new(-self.scheme.detuning, 0.0);
        h[(G, E)] = Complex64::new(0.5 * omega, 0.0);
        h[(E, G)] = Complex64::new(0.5 * omega, 0.0);
        h
    }

    /// `L(x)` at Rabi frequency `omega`.
    pub fn apply(&self, omega: f64, x: &Operator) -> Operator {
        let half = Complex64::new(0.5 * omega, 0.0);
        let det = Complex64::new(self.scheme.detuning, 0.0);
        let mut out = Operator::zeros();
        // -i [H, X] with H sparse
        for j in 0..N_LEVELS {
            let hx_g = half * x[(E, j)];
            let hx_e = half * x[(G, j)] - det * x[(E, j)];
            out[(G, j)] -= I * hx_g;
            out[(E, j)] -= I * hx_e;
        }
        for i in 0..N_LEVELS {
            let xh_g = x[(i, E)] * half;
            let xh_e = x[(i, G)] * half - x[(i, E)] * det;
            out[(i, G)] += I * xh_g;
            out[(i, E)] += I * xh_e;
        }
        // decay out of |e>: anticommutator part, then refeeding
        let g = 0.5 * (self.gamma_total + 2.0 * self.dephasing);
        for k in 0..N_LEVELS {
            if k != E {
                out[(E, k)] -= x[(E, k)] * g;
                out[(k, E)] -= x[(k, E)] * g;
            }
        }
        out[(E, E)] -= x[(E, E)] * self.gamma_total;
        let xee = x[(E, E)];
        out[(G, G)] += xee * self.scheme.gamma_back;
        out[(D854, D854)] += xee * self.scheme.gamma_854;
        out[(D850, D850)] += xee * self.scheme.gamma_850;
        out
    }

    /// Same generator assembled from the collapse operators as dense matrices.
    /// Slow; kept as a reference for tests.
    pub fn apply_dense(&self, omega: f64, x: &Operator) -> Operator {
        let h = self.hamiltonian(omega);
        let mut out = (h * x - x * h) * (-I);
        for op in &self.ops {
            let c = op.matrix();
            let cd = c.adjoint();
            let cdc = cd * c;
            out += c * x * cd - (cdc * x + x * cdc) * Complex64::new(0.5, 0.0);
        }
        out
    }

    /// Exact evolution over `dt` with the drive off.
    pub fn free_evolution(&self, x: &Operator, dt: f64) -> Operator {
        let gt = self.gamma_total;
        let gc = 0.5 * gt + self.dephasing;
        let rot = (Complex64::new(-gc, self.scheme.detuning) * dt).exp();
        let mut out = *x;
        for k in 0..N_LEVELS {
            if k != E {
                out[(E, k)] = x[(E, k)] * rot;
                out[(k, E)] = x[(k, E)] * rot.conj();
            }
        }
        if gt > 0.0 {
            let survive = (-gt * dt).exp();
            let gone = -(-gt * dt).exp_m1();
            let xee = x[(E, E)];
            out[(E, E)] = xee * survive;
            out[(G, G)] += xee * (gone * self.scheme.gamma_back / gt);
            out[(D854, D854)] += xee * (gone * self.scheme.gamma_854 / gt);
            out[(D850, D850)] += xee * (gone * self.scheme.gamma_850 / gt);
        }
        out
    }
}

/// Time-dependent propagation of operators under a pulse train.
#[derive(Debug, Clone)]
pub struct Evolver<'a> {
    pub train: &'a PulseTrain,
    pub generator: Lindbladian,
    pub solver: Dopri5,
    /// Use the closed form between pulses instead of the integrator.
    pub exact_gaps: bool,
}

impl<'a> Evolver<'a> {
    pub fn new(train: &'a PulseTrain, scheme: &LevelScheme, dephasing: f64, tolerance: f64) -> Result<Self> {
        if !(tolerance > 0.0) {
            return Err(Error::Domain(format!("integrator tolerance must be positive, got {tolerance}")));
        }
        Ok(Evolver {
            train,
            generator: Lindbladian::new(scheme, dephasing)?,
            solver: Dopri5::with_tolerance(tolerance),
            exact_gaps: true,
        })
    }

    /// Evolves `x0` from `t0` to `t1`, calling `on_sample(i, x(times[i]))`
    /// for every sorted sample time in `[t0, t1]`.
    pub fn evolve<F>(&self, x0: Operator, t0: f64, t1: f64, times: &[f64], mut on_sample: F) -> Result<Operator>
    where
        F: FnMut(usize, &Operator),
    {
        let mut next = times.partition_point(|&t| t < t0);
        let mut edges = vec![t0];
        edges.extend(self.train.breakpoints(t0, t1));
        edges.push(t1.max(t0));
        let mut x = x0;
        for seg in edges.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if self.exact_gaps && self.train.is_dark(a, b) {
                while next < times.len() && times[next] <= b {
                    on_sample(next, &self.generator.free_evolution(&x, times[next] - a));
                    next += 1;
                }
                x = self.generator.free_evolution(&x, b - a);
            } else {
                let gen = &self.generator;
                let train = self.train;
                let xb = self.solver.solve(
                    |t, y: &Operator| gen.apply(train.rabi(t), y),
                    a,
                    x,
                    b,
                    |step| {
                        while next < times.len() && times[next] <= step.t1 {
                            on_sample(next, &step.eval(times[next]));
                            next += 1;
                        }
                    },
                )?;
                x = xb;
                while next < times.len() && times[next] <= b {
                    on_sample(next, &x);
                    next += 1;
                }
            }
            if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Propagation { time: b, reason: "non-finite state".into() });
            }
        }
        Ok(x)
    }
}

/// Uniform sampling grid for propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub step: f64,
    /// Integrator tolerance (absolute and relative).
    pub tolerance: f64,
}

impl SimGrid {
    pub fn new(t_start: f64, t_end: f64, step: f64, tolerance: f64) -> Result<Self> {
        let g = SimGrid { t_start, t_end, step, tolerance };
        g.validate()?;
        Ok(g)
    }

    /// Grid spanning the whole train.
    pub fn for_train(train: &PulseTrain, step: f64, tolerance: f64) -> Result<Self> {
        SimGrid::new(train.start(), train.end(), step, tolerance)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.t_start.is_finite() || !self.t_end.is_finite() || self.t_end < self.t_start {
            return Err(Error::Domain(format!(
                "bad grid [{}, {}] step {}",
                self.t_start, self.t_end, self.step
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Domain("tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.t_end - self.t_start) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.t_start + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

impl StateTrajectory {
    pub fn population(&self, level: usize) -> Vec<f64> {
        self.states.iter().map(|r| r.population(level)).collect()
    }
}

/// Propagates `rho0` from `grid.t_start` and samples on the grid.
pub fn propagate(
    rho0: &DensityMatrix,
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    grid: &SimGrid,
) -> Result<StateTrajectory> {
    grid.validate()?;
    rho0.check(STATE_TOLERANCE)?;
    let evolver = Evolver::new(train, scheme, dephasing, grid.tolerance)?;
    let times = grid.times();
    let mut states = vec![DensityMatrix(Operator::zeros()); times.len()];
    let t_end = *times.last().unwrap();
    evolver.evolve(rho0.0, grid.t_start, t_end, &times, |i, x| states[i] = DensityMatrix(*x))?;
    for (t, rho) in times.iter().zip(&states) {
        let tr = rho.trace();
        if (tr - 1.0).abs() > 1e-6 {
            return Err(Error::Propagation { time: *t, reason: format!("trace drifted to {tr}") });
        }
    }
    Ok(StateTrajectory { times, states })
}

/// Photon emission rate `Γ_channel ρ_ee(t)` along a trajectory.
pub fn emission_rate(traj: &StateTrajectory, scheme: &LevelScheme, channel: Channel) -> Vec<f64> {
    let gamma = scheme.rate(channel);
    traj.states.iter().map(|r| gamma * r.population(E)).collect()
}

/// Probability that the first pulse of `train`, acting on |g>, produces an
/// 854 nm photon: the |d854> population at the end of its cell.
pub fn p854_of_train(train: &PulseTrain, scheme: &LevelScheme, dephasing: f64, tolerance: f64) -> Result<f64> {
    train.validate()?;
    let evolver = Evolver::new(train, scheme, dephasing, tolerance)?;
    let (a, b) = train.cell(0);
    let x = evolver.evolve(DensityMatrix::ground().0, a, b, &[], |_, _| {})?;
    Ok(x[(D854, D854)].re)
}

/// Single-pulse Raman transfer probability: population left in either dark
/// state at the end of the first cell.
pub fn raman_probability(train: &PulseTrain, scheme: &LevelScheme, dephasing: f64, tolerance: f64) -> Result<f64> {
    train.validate()?;
    let evolver = Evolver::new(train, scheme, dephasing, tolerance)?;
    let (a, b) = train.cell(0);
    let x = evolver.evolve(DensityMatrix::ground().0, a, b, &[], |_, _| {})?;
    Ok(x[(D854, D854)].re + x[(D850, D850)].re)
}

/// 854 nm photon probability attributed to each pulse of the train: growth of
/// the |d854> population across each cell.
pub fn raman_areas(train: &PulseTrain, scheme: &LevelScheme, dephasing: f64, tolerance: f64) -> Result<Vec<f64>> {
    train.validate()?;
    let evolver = Evolver::new(train, scheme, dephasing, tolerance)?;
    let bounds: Vec<f64> = (0..=train.n_pulses).map(|k| train.start() + k as f64 * train.t_rep).collect();
    let mut pops = vec![0.0; bounds.len()];
    evolver.evolve(DensityMatrix::ground().0, bounds[0], *bounds.last().unwrap(), &bounds, |i, x| {
        pops[i] = x[(D854, D854)].re
    })?;
    Ok(pops.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Geometric fit `a_k = c q^k` of per-pulse photon numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalFit {
    pub first_area: f64,
    pub survival: f64,
    /// `1 - q`: the per-pulse probability of leaving |g>.
    pub p_raman: f64,
    pub p_raman_err: f64,
}

pub fn fit_survival(areas: &[f64]) -> Result<SurvivalFit> {
    if areas.len() < 2 {
        return Err(Error::FitFailure("need at least two pulses".into()));
    }
    if areas.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::FitFailure("areas must be finite and non-negative".into()));
    }
    let pos: Vec<(f64, f64)> =
        areas.iter().enumerate().filter(|(_, a)| **a > 0.0).map(|(k, a)| (k as f64, a.ln())).collect();
    if pos.len() < 2 {
        return Err(Error::FitFailure("need at least two non-zero areas".into()));
    }
    // log-linear start
    let n = pos.len() as f64;
    let mk = pos.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pos.iter().map(|p| p.1).sum::<f64>() / n;
    let skk: f64 = pos.iter().map(|p| (p.0 - mk).powi(2)).sum();
    let skl: f64 = pos.iter().map(|p| (p.0 - mk) * (p.1 - ml)).sum();
    let slope = skl / skk;
    let mut c = (ml - slope * mk).exp();
    let mut q = slope.exp();

    // Gauss-Newton on the linear-scale residuals
    let mut jtj = [[0.0; 2]; 2];
    for _ in 0..100 {
        jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for (k, &a) in areas.iter().enumerate() {
            let kf = k as f64;
            let qk = q.powf(kf);
            let r = a - c * qk;
            let j = [qk, if k == 0 { 0.0 } else { c * kf * q.powf(kf - 1.0) }];
            for u in 0..2 {
                jtr[u] += j[u] * r;
                for v in 0..2 {
                    jtj[u][v] += j[u] * j[v];
                }
            }
        }
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let dc = (jtr[0] * jtj[1][1] - jtr[1] * jtj[0][1]) / det;
        let dq = (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det;
        c += dc;
        q += dq;
        if dc.abs() <= 1e-15 * c.abs() && dq.abs() <= 1e-15 {
            break;
        }
    }
    if !c.is_finite() || !q.is_finite() {
        return Err(Error::FitFailure("survival fit diverged".into()));
    }
    if q > 1.0 + 1e-9 {
        return Err(Error::FitFailure(format!("areas grow along the train (q = {q})")));
    }
    let q = q.min(1.0);
    let resid: f64 = areas.iter().enumerate().map(|(k, a)| (a - c * q.powi(k as i32)).powi(2)).sum();
    let dof = areas.len().saturating_sub(2).max(1) as f64;
    let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
    let var_q = if det.abs() > 0.0 { resid / dof * jtj[0][0] / det } else { f64::INFINITY };
    Ok(SurvivalFit { first_area: c, survival: q, p_raman: 1.0 - q, p_raman_err: var_q.max(0.0).sqrt() })
}
