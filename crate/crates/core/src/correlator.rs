//! Two-time correlations by conditional-state propagation: the 393/854
//! back-decay correlation, first-order coherence of an emission channel and
//! the mean number of back-decays preceding a Raman photon.
//!
//! Delay convention: `τ = t_393 − t_854`, so negative delays mean the 393 nm
//! photon came first. Rows are indexed by the 854 nm detection time `t`.

use num_complex::Complex64;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::atomic::{Channel, LevelScheme, D854, E, G};
use crate::error::{Error, Result};
use crate::lindblad::{DensityMatrix, Evolver, Operator, SimGrid};
use crate::pulse::PulseTrain;
use crate::quad;

/// Lattice step and integrator tolerance shared by the correlation routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolution {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution { step: 0.25e-9, tolerance: 1e-10 }
    }
}

impl Resolution {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) || !(self.tolerance > 0.0) {
            return Err(Error::Domain(format!("bad resolution {self:?}")));
        }
        Ok(())
    }
}

/// `(t, τ)` lattice with a common step on both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub resolution: Resolution,
}

impl DelayGrid {
    fn t_axis(&self) -> Result<Vec<f64>> {
        Ok(SimGrid::new(self.t_start, self.t_end, self.resolution.step, self.resolution.tolerance)?.times())
    }

    /// Numbers of negative and positive delay offsets, in steps.
    fn tau_range(&self) -> Result<(usize, usize)> {
        self.resolution.validate()?;
        if !(self.tau_min <= 0.0 && self.tau_max >= 0.0) {
            return Err(Error::Domain(format!(
                "delay range [{}, {}] must contain zero",
                self.tau_min, self.tau_max
            )));
        }
        let h = self.resolution.step;
        let steps = |x: f64| (x / h - 1e-9).ceil().max(0.0) as usize;
        Ok((steps(-self.tau_min), steps(self.tau_max)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationGrid {
    pub t: Vec<f64>,
    pub tau: Vec<f64>,
    /// Row-major, `values[i * tau.len() + j]` at `(t[i], tau[j])`.
    pub values: Vec<f64>,
    /// Number of entries at positive delay, which are zero by construction.
    pub positive_delay_entries: usize,
}

impl CorrelationGrid {
    pub fn zeros(t: Vec<f64>, tau: Vec<f64>) -> Self {
        let n = t.len() * tau.len();
        CorrelationGrid { t, tau, values: vec![0.0; n], positive_delay_entries: 0 }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.tau.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.tau.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn same_axes(&self, other: &CorrelationGrid) -> bool {
        self.t == other.t && self.tau == other.tau
    }

    /// `∫ dt G(t, τ)` for every delay, trapezoidal in `t`.
    pub fn tau_marginal(&self) -> Vec<f64> {
        let w = quad::trapezoid_weights(&self.t);
        let n = self.tau.len();
        let mut out = vec![0.0; n];
        for (i, wi) in w.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += wi * v;
            }
        }
        out
    }

    /// `∫ dt ∫_{lo}^{hi} dτ G(t, τ)`.
    pub fn integrate(&self, tau_lo: f64, tau_hi: f64) -> f64 {
        quad::integrate_linear(&self.tau, &self.tau_marginal(), tau_lo, tau_hi)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "tau_s", "value"])?;
        for (i, t) in self.t.iter().enumerate() {
            for (j, tau) in self.tau.iter().enumerate() {
                w.write_record([format!("{t:e}"), format!("{tau:e}"), format!("{:e}", self.get(i, j))])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `g1(t1, t2) = <E†(t1) E(t2)>` on a square lattice, in units where the
/// diagonal is the emission rate of the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceGrid {
    pub channel: Channel,
    pub times: Vec<f64>,
    /// Row-major, `values[i * n + j] = g1(times[i], times[j])`.
    pub values: Vec<Complex64>,
}

impl CoherenceGrid {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.times.len() + j]
    }

    /// Emission rate along the diagonal.
    pub fn intensity(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get(i, i).re).collect()
    }

    pub fn step(&self) -> Option<f64> {
        (self.times.len() > 1).then(|| self.times[1] - self.times[0])
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }
}

/// Conditional propagation of `x0` from `times[k0]` across the next `len`
/// lattice points, returning the requested matrix element at each of them.
fn conditional_row(
    evolver: &Evolver,
    x0: Operator,
    times: &[f64],
    k0: usize,
    len: usize,
    element: (usize, usize),
) -> Result<Vec<Complex64>> {
    let end = (k0 + len).min(times.len() - 1);
    let mut out = vec![Complex64::new(0.0, 0.0); end - k0 + 1];
    let samples = &times[k0..=end];
    evolver.evolve(x0, times[k0], times[end], samples, |i, x| out[i] = x[element])?;
    Ok(out)
}

/// Unconditional state on a lattice, starting from |g> at the train start.
fn states_on(evolver: &Evolver, train: &PulseTrain, times: &[f64]) -> Result<Vec<Operator>> {
    let ground = DensityMatrix::ground().0;
    let mut out = vec![ground; times.len()];
    let t0 = train.start();
    let t_last = *times.last().unwrap();
    if t_last > t0 {
        evolver.evolve(ground, t0, t_last, times, |i, x| out[i] = *x)?;
    }
    Ok(out)
}

fn par_rows<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Back-decay correlation `G(t, τ)`: rate density of a 393 nm photon at
/// `t + τ` and an 854 nm photon at `t`.
///
/// For `τ ≤ 0` the emitter is propagated to `t + τ`, reset to |g> by the
/// back-decay jump, and propagated on to `t`. For `τ > 0` the 854 nm jump is
/// applied first; the dark level never re-emits, so these entries come out
/// zero and are counted in `positive_delay_entries`.
pub fn g2_back_decay(
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    grid: &DelayGrid,
) -> Result<CorrelationGrid> {
    train.validate()?;
    let t_axis = grid.t_axis()?;
    let (m, p) = grid.tau_range()?;
    let h = grid.resolution.step;
    let evolver = Evolver::new(train, scheme, dephasing, grid.resolution.tolerance)?;
    let tau: Vec<f64> = (-(m as i64)..=p as i64).map(|j| j as f64 * h).collect();
    let nt = t_axis.len();
    let ntau = tau.len();
    let mut out = CorrelationGrid::zeros(t_axis.clone(), tau);
    // emission-time lattice: m points before t[0], then the t axis itself
    let s: Vec<f64> = (0..m + nt).map(|k| grid.t_start + (k as f64 - m as f64) * h).collect();
    let rho = states_on(&evolver, train, &s)?;
    let gb = scheme.gamma_back;
    let g854 = scheme.gamma_854;

    if gb > 0.0 && m > 0 {
        // one conditional propagation per back-decay time s_k fills a diagonal
        let rows = par_rows(s.len(), |k| {
            let w = gb * rho[k][(E, E)].re.max(0.0);
            if w == 0.0 {
                return Ok(Vec::new());
            }
            let vals = conditional_row(&evolver, DensityMatrix::ground().0, &s, k, m, (E, E))?;
            Ok(vals.into_iter().map(|z| w * g854 * z.re.max(0.0)).collect::<Vec<f64>>())
        })?;
        for (k, row) in rows.iter().enumerate() {
            for (u, v) in row.iter().enumerate() {
                // 854 time s_{k+u} = t_{k+u-m}, delay -u
                let Some(i) = (k + u).checked_sub(m) else { continue };
                if i < nt {
                    out.values[i * ntau + m - u] = *v;
                }
            }
        }
    }

    if p > 0 {
        let pos = p;
        let rows = par_rows(nt, |i| {
            let w = g854 * rho[m + i][(E, E)].re.max(0.0);
            let x0 = DensityMatrix::pure(D854).0;
            let times: Vec<f64> = (0..=pos).map(|u| t_axis[i] + u as f64 * h).collect();
            let vals = conditional_row(&evolver, x0, &times, 0, pos, (E, E))?;
            Ok(vals.into_iter().skip(1).map(|z| w * gb * z.re).collect::<Vec<f64>>())
        })?;
        for (i, row) in rows.iter().enumerate() {
            for (u, v) in row.iter().enumerate() {
                let j = m + 1 + u;
                out.values[i * ntau + j] = *v;
            }
        }
        out.positive_delay_entries = nt * pos;
    }
    Ok(out)
}

/// Numerator, denominator and ratio of the mean back-decay number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanBackDecays {
    pub value: f64,
    /// `∬ G dt dτ` over `τ ∈ [−T_rep/2, 0]`.
    pub correlated: f64,
    /// `∫ Γ854 ρ_ee dt`.
    pub raman: f64,
}

/// Mean number of back-decays preceding the Raman photon over the whole
/// train.
///
/// Long trains are reduced to a three-pulse run: the first cell, one interior
/// cell (which also carries pairs whose back-decay happened in the previous
/// pulse) and the last cell. Interior cells differ only by the ground-state
/// occupation they start with, which falls by the per-pulse survival factor.
pub fn mean_back_decays(
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    resolution: &Resolution,
) -> Result<f64> {
    Ok(mean_back_decays_fast(train, scheme, dephasing, resolution)?.value)
}

pub fn mean_back_decays_fast(
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    resolution: &Resolution,
) -> Result<MeanBackDecays> {
    let n = train.n_pulses;
    if n <= 3 {
        return mean_back_decays_detailed(train, scheme, dephasing, resolution);
    }
    let short = train.with_pulses(3);
    let (cells, ground) = per_cell(&short, scheme, dephasing, resolution)?;
    let q = ground[2] / ground[1];
    let interior: f64 = (0..n - 2).map(|j| q.powi(j as i32)).sum();
    let last = q.powi(n as i32 - 3);
    let correlated = cells[0].0 + interior * cells[1].0 + last * cells[2].0;
    let raman = cells[0].1 + interior * cells[1].1 + last * cells[2].1;
    finish(correlated, raman)
}

/// Direct evaluation over every cell of the train.
pub fn mean_back_decays_detailed(
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    resolution: &Resolution,
) -> Result<MeanBackDecays> {
    let (cells, _) = per_cell(train, scheme, dephasing, resolution)?;
    finish(cells.iter().map(|c| c.0).sum(), cells.iter().map(|c| c.1).sum())
}

fn finish(correlated: f64, raman: f64) -> Result<MeanBackDecays> {
    if !(raman > 0.0) {
        return Err(Error::UndefinedMeanN("no 854 nm emission".into()));
    }
    Ok(MeanBackDecays { value: correlated / raman, correlated, raman })
}

/// Per-cell (correlated mass, 854 emission) split by the 854 detection time,
/// plus the ground population at every cell start.
fn per_cell(
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    resolution: &Resolution,
) -> Result<(Vec<(f64, f64)>, Vec<f64>)> {
    train.validate()?;
    let grid = DelayGrid {
        t_start: train.start(),
        t_end: train.end(),
        tau_min: -0.5 * train.t_rep,
        tau_max: 0.0,
        resolution: *resolution,
    };
    let g = g2_back_decay(train, scheme, dephasing, &grid)?;
    let evolver = Evolver::new(train, scheme, dephasing, resolution.tolerance)?;
    let mut probe = g.t.clone();
    let starts: Vec<f64> = (0..train.n_pulses).map(|k| train.cell(k).0).collect();
    probe.extend(&starts);
    probe.sort_by(f64::total_cmp);
    probe.dedup();
    let rho_all = states_on(&evolver, train, &probe)?;
    let at = |t: f64| rho_all[probe.partition_point(|&x| x < t)];
    let weights = quad::trapezoid_weights(&g.t);
    let mut cells = vec![(0.0, 0.0); train.n_pulses];
    for (i, t) in g.t.iter().enumerate() {
        let k = train.pulse_index(*t);
        let row = quad::integrate_linear(&g.tau, g.row(i), -0.5 * train.t_rep, 0.0);
        cells[k].0 += weights[i] * row;
        cells[k].1 += weights[i] * scheme.gamma_854 * at(*t)[(E, E)].re;
    }
    let ground = starts.iter().map(|&t| at(t)[(G, G)].re).collect();
    Ok((cells, ground))
}

/// Single-cell mean back-decay number with the inner delay integral done
/// exactly: after a back-decay at `s`, the probability of an 854 nm photon
/// before `s + T_rep/2` is the |d854> population the conditional state
/// accumulates. Only the outer integral is a quadrature.
pub fn mean_back_decays_direct(
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    resolution: &Resolution,
) -> Result<f64> {
    let train = train.with_pulses(1);
    train.validate()?;
    let evolver = Evolver::new(&train, scheme, dephasing, resolution.tolerance)?;
    let (a, b) = train.cell(0);
    let s = SimGrid::new(a, b, resolution.step, resolution.tolerance)?.times();
    let rho = states_on(&evolver, &train, &s)?;
    let half = 0.5 * train.t_rep;
    let inner = par_rows(s.len(), |k| {
        let w = scheme.gamma_back * rho[k][(E, E)].re.max(0.0);
        if w == 0.0 {
            return Ok(0.0);
        }
        let end = (s[k] + half).min(b);
        let x = evolver.evolve(DensityMatrix::ground().0, s[k], end, &[], |_, _| {})?;
        Ok(w * x[(D854, D854)].re)
    })?;
    let correlated = quad::trapezoid(&s, &inner);
    let end = evolver.evolve(DensityMatrix::ground().0, a, *s.last().unwrap(), &[], |_, _| {})?;
    let raman = end[(D854, D854)].re;
    if !(raman > 0.0) {
        return Err(Error::UndefinedMeanN("no 854 nm emission".into()));
    }
    Ok(correlated / raman)
}

/// First-order coherence of `channel` on the lattice of `grid`.
///
/// Row `t1` is obtained by propagating `ρ(t1) σ†` forward and reading
/// `Γ Tr[σ X(t2)]`; entries with `t2 < t1` follow from Hermitian symmetry.
pub fn g1(
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    channel: Channel,
    grid: &SimGrid,
) -> Result<CoherenceGrid> {
    train.validate()?;
    grid.validate()?;
    let evolver = Evolver::new(train, scheme, dephasing, grid.tolerance)?;
    let times = grid.times();
    let n = times.len();
    let rho = states_on(&evolver, train, &times)?;
    let target = channel.target_level();
    let gamma = scheme.rate(channel);
    let rows = par_rows(n, |i| {
        let mut x0 = Operator::zeros();
        let ee = rho[i][(E, E)].re;
        if gamma == 0.0 || ee.abs() == 0.0 && rho[i][(G, E)].norm() == 0.0 {
            return Ok(vec![Complex64::new(0.0, 0.0); n - i]);
        }
        for r in 0..4 {
            x0[(r, target)] = rho[i][(r, E)];
        }
        let row = conditional_row(&evolver, x0, &times, i, n - 1 - i, (E, target))?;
        Ok(row.into_iter().map(|z| z * gamma).collect::<Vec<_>>())
    })?;
    let mut values = vec![Complex64::new(0.0, 0.0); n * n];
    for (i, row) in rows.iter().enumerate() {
        for (u, v) in row.iter().enumerate() {
            let j = i + u;
            if u == 0 {
                values[i * n + i] = Complex64::new(gamma * rho[i][(E, E)].re, 0.0);
            } else {
                values[i * n + j] = *v;
                values[j * n + i] = v.conj();
            }
        }
    }
    Ok(CoherenceGrid { channel, times, values })
}

/// Reference evaluation of `g1(t1, t2)` for `t1 > t2`, computed directly by
/// propagating `σ ρ(t2)` from `t2`. Used to cross-check the symmetry fill.
pub fn g1_reversed(
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    channel: Channel,
    grid: &SimGrid,
) -> Result<CoherenceGrid> {
    train.validate()?;
    let evolver = Evolver::new(train, scheme, dephasing, grid.tolerance)?;
    let times = grid.times();
    let n = times.len();
    let rho = states_on(&evolver, train, &times)?;
    let target = channel.target_level();
    let gamma = scheme.rate(channel);
    let mut values = vec![Complex64::new(0.0, 0.0); n * n];
    for j in 0..n {
        // <E†(t1) E(t2)> with t1 = t2 + u: Tr[σ† e^{L u}(σ ρ(t2))]
        let mut x0 = Operator::zeros();
        for c in 0..4 {
            x0[(target, c)] = rho[j][(E, c)];
        }
        let row = conditional_row(&evolver, x0, &times, j, n - 1 - j, (target, E))?;
        for (u, v) in row.into_iter().enumerate() {
            values[(j + u) * n + j] = v * gamma;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            values[i * n + j] = values[j * n + i].conj();
        }
    }
    Ok(CoherenceGrid { channel, times, values })
}

/// Removes correlations between photons from different excitation pulses.
///
/// The excitation pulses carry no fixed optical phase relative to each other,
/// so after a detection at `t` the coherence is kept only for delays within
/// one excitation pulse: it is dropped when the two times lie in different
/// cells of the train *and* are more than `T_rep/2` apart. Intensities are
/// untouched, and so is everything inside the `|τ| ≤ T_rep/2` window.
pub trait SamePulse: Sized {
    fn restrict_to_same_pulse(&self, train: &PulseTrain) -> Self;
}

impl SamePulse for CoherenceGrid {
    fn restrict_to_same_pulse(&self, train: &PulseTrain) -> Self {
        let mut out = self.clone();
        let n = self.len();
        let half = 0.5 * train.t_rep * (1.0 + 1e-12);
        let cells: Vec<usize> = self.times.iter().map(|&t| train.pulse_index(t)).collect();
        for i in 0..n {
            for j in 0..n {
                if cells[i] != cells[j] && (self.times[j] - self.times[i]).abs() > half {
                    out.values[i * n + j] = Complex64::new(0.0, 0.0);
                }
            }
        }
        out
    }
}

impl SamePulse for CorrelationGrid {
    fn restrict_to_same_pulse(&self, train: &PulseTrain) -> Self {
        let mut out = self.clone();
        let half = 0.5 * train.t_rep * (1.0 + 1e-12);
        let nt = self.tau.len();
        for i in 0..self.t.len() {
            let cell = train.pulse_index(self.t[i]);
            for (j, tau) in self.tau.iter().enumerate() {
                if tau.abs() > half && train.pulse_index(self.t[i] + tau) != cell {
                    out.values[i * nt + j] = 0.0;
                }
            }
        }
        out
    }
}

pub fn restrict_to_same_pulse<T: SamePulse>(grid: &T, train: &PulseTrain) -> T {
    grid.restrict_to_same_pulse(train)
}

/// Stricter variant: zeroes coherence between times in different cells of
/// the train, however close they are.
pub fn restrict_to_same_cell(grid: &CoherenceGrid, train: &PulseTrain) -> CoherenceGrid {
    let mut out = grid.clone();
    let n = grid.len();
    let cells: Vec<usize> = grid.times.iter().map(|&t| train.pulse_index(t)).collect();
    for i in 0..n {
        for j in 0..n {
            if cells[i] != cells[j] {
                out.values[i * n + j] = Complex64::new(0.0, 0.0);
            }
        }
    }
    out
}
