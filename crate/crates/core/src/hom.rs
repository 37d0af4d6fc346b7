//! Hong-Ou-Mandel interference of photons from two independent emitters on
//! a beam splitter, detection imperfections and visibility curves.
//!
//! Output port `c` is detected at `t + τ`, port `d` at `t`. For independent
//! single-photon sources the coincidence density is
//!
//! ```text
//! G(t, τ, φ) = 𝔱² I_a(t+τ) I_b(t) + (1−𝔱)² I_a(t) I_b(t+τ)
//!            − 2𝔱(1−𝔱) cos²φ Re[g_a(t+τ, t) g_b(t, t+τ)]
//! ```
//!
//! where `φ` is the polarization angle between the two photons.

use std::f64::consts::FRAC_PI_4;

use crate::correlator::{CoherenceGrid, CorrelationGrid};
use crate::error::{Error, Result};
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSplitter {
    /// Power transmission 𝔱.
    pub transmission: f64,
}

impl BeamSplitter {
    pub fn new(transmission: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&transmission) {
            return Err(Error::Domain(format!("transmission {transmission} outside [0, 1]")));
        }
        Ok(BeamSplitter { transmission })
    }

    pub fn balanced() -> Self {
        BeamSplitter { transmission: 0.5 }
    }

    pub fn reflection(&self) -> f64 {
        1.0 - self.transmission
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionModel {
    pub eta_c: f64,
    pub eta_d: f64,
    /// Flat background level per output port (rate units).
    pub b0: f64,
    /// Polarization mismatch (rad).
    pub delta_phi: f64,
}

impl Default for DetectionModel {
    fn default() -> Self {
        DetectionModel { eta_c: 1.0, eta_d: 1.0, b0: 0.0, delta_phi: 0.0 }
    }
}

impl DetectionModel {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.eta_c) || !unit.contains(&self.eta_d) {
            return Err(Error::Domain("efficiencies must lie in [0, 1]".into()));
        }
        if !(self.b0 >= 0.0) || !self.b0.is_finite() {
            return Err(Error::Domain(format!("background {} must be >= 0", self.b0)));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.delta_phi) {
            return Err(Error::Domain(format!("delta_phi {} outside [0, π/2)", self.delta_phi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityCurve {
    pub windows: Vec<f64>,
    pub values: Vec<f64>,
    pub uncertainties: Option<Vec<f64>>,
}

impl VisibilityCurve {
    /// Value at a window equal to `t` up to rounding.
    pub fn at(&self, t: f64) -> Option<f64> {
        self.windows
            .iter()
            .position(|w| (w - t).abs() <= 1e-9 * t.abs().max(1e-300))
            .map(|i| self.values[i])
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["window_s", "visibility", "uncertainty"])?;
        for (i, (t, v)) in self.windows.iter().zip(&self.values).enumerate() {
            let u = self.uncertainties.as_ref().map(|u| format!("{:e}", u[i])).unwrap_or_default();
            w.write_record([format!("{t:e}"), format!("{v:e}"), u])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn check_windows(windows: &[f64]) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Domain("no coincidence windows".into()));
    }
    if windows.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::Domain("coincidence windows must be positive".into()));
    }
    if windows.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Domain("coincidence windows must be strictly increasing".into()));
    }
    Ok(())
}

/// Pieces of the coincidence density that do not depend on the polarization
/// angle or the detectors, on a shared `(t, τ)` lattice.
#[derive(Debug, Clone)]
pub struct HomModel {
    pub beam_splitter: BeamSplitter,
    /// Intensity products, the `φ`-independent part.
    pub intensity: CorrelationGrid,
    /// `2𝔱(1−𝔱) Re[g_a(t+τ, t) g_b(t, t+τ)]`.
    pub interference: CorrelationGrid,
    /// Output-port intensities on the `t` axis, before detection efficiency.
    pub i_c: Vec<f64>,
    pub i_d: Vec<f64>,
}

fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::GridMismatch("need at least two time samples".into()));
    }
    let h = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-6 * h {
            return Err(Error::GridMismatch("time axis is not uniform".into()));
        }
    }
    Ok(h)
}

impl HomModel {
    /// Builds the model for delays `|τ| ≤ tau_max` on the lattice of the
    /// coherence grids, which must share their time axis.
    pub fn new(a: &CoherenceGrid, b: &CoherenceGrid, bs: &BeamSplitter, tau_max: f64) -> Result<Self> {
        BeamSplitter::new(bs.transmission)?;
        if a.times != b.times {
            return Err(Error::GridMismatch("emitters sampled on different time axes".into()));
        }
        let h = uniform_step(&a.times)?;
        let m = (tau_max / h - 1e-9).ceil().max(0.0) as usize;
        let n = a.len();
        let tau: Vec<f64> = (-(m as i64)..=m as i64).map(|j| j as f64 * h).collect();
        let ntau = tau.len();
        let (t_, r_) = (bs.transmission, bs.reflection());
        let ia = a.intensity();
        let ib = b.intensity();
        let mut p = CorrelationGrid::zeros(a.times.clone(), tau.clone());
        let mut q = CorrelationGrid::zeros(a.times.clone(), tau);
        for i in 0..n {
            for j in 0..ntau {
                let Some(k) = (i + j).checked_sub(m) else { continue };
                if k >= n {
                    break;
                }
                let idx = i * ntau + j;
                p.values[idx] = t_ * t_ * ia[k] * ib[i] + r_ * r_ * ia[i] * ib[k];
                q.values[idx] = 2.0 * t_ * r_ * (a.get(k, i) * b.get(i, k)).re;
            }
        }
        let i_c = ia.iter().zip(&ib).map(|(x, y)| t_ * x + r_ * y).collect();
        let i_d = ia.iter().zip(&ib).map(|(x, y)| r_ * x + t_ * y).collect();
        Ok(HomModel { beam_splitter: *bs, intensity: p, interference: q, i_c, i_d })
    }

    /// Coincidence density at polarization angle `phi`.
    pub fn g2(&self, phi: f64) -> CorrelationGrid {
        let c2 = phi.cos().powi(2);
        let mut out = self.intensity.clone();
        for (o, q) in out.values.iter_mut().zip(&self.interference.values) {
            *o -= c2 * q;
        }
        out
    }

    /// Detected coincidence density for the parallel (`δφ`) or perpendicular
    /// (`π/2 + δφ`) setting.
    pub fn detected(&self, det: &DetectionModel, perpendicular: bool) -> Result<CorrelationGrid> {
        let phi = det.delta_phi + if perpendicular { std::f64::consts::FRAC_PI_2 } else { 0.0 };
        apply_imperfections(&self.g2(phi), det, &self.i_c, &self.i_d)
    }

    /// `V(T)` for every window, from `τ` marginals; cheap enough for fitting.
    pub fn visibility(&self, det: &DetectionModel, windows: &[f64]) -> Result<VisibilityCurve> {
        det.validate()?;
        let mp = self.intensity.tau_marginal();
        let mq = self.interference.tau_marginal();
        let (bc, bd) = self.background_marginals(det);
        let marginal = |phi: f64| -> Vec<f64> {
            let c2 = phi.cos().powi(2);
            (0..mp.len()).map(|j| det.eta_c * det.eta_d * (mp[j] - c2 * mq[j]) + bc[j] + bd[j]).collect()
        };
        let par = marginal(det.delta_phi);
        let perp = marginal(det.delta_phi + std::f64::consts::FRAC_PI_2);
        curve_from_marginals(&self.intensity.tau, &par, &perp, windows)
    }

    /// `τ` marginals of the background terms `η_c I_c(t+τ) B0 + B0²` and
    /// `η_d I_d(t) B0`.
    fn background_marginals(&self, det: &DetectionModel) -> (Vec<f64>, Vec<f64>) {
        let t = &self.intensity.t;
        let tau = &self.intensity.tau;
        let w = quad::trapezoid_weights(t);
        let m = tau.len() / 2;
        let n = t.len();
        let sum_d: f64 = w.iter().zip(&self.i_d).map(|(a, b)| a * b).sum();
        let span: f64 = w.iter().sum();
        let mut bc = vec![0.0; tau.len()];
        let bd = vec![det.eta_d * det.b0 * sum_d; tau.len()];
        for (j, o) in bc.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..n {
                if let Some(k) = (i + j).checked_sub(m) {
                    if k < n {
                        s += w[i] * self.i_c[k];
                    }
                }
            }
            *o = det.eta_c * det.b0 * s + det.b0 * det.b0 * span;
        }
        (bc, bd)
    }
}

/// Coincidence density of two independent emitters at polarization angle `phi`.
pub fn g2_hom(
    a: &CoherenceGrid,
    b: &CoherenceGrid,
    bs: &BeamSplitter,
    phi: f64,
    tau_max: f64,
) -> Result<CorrelationGrid> {
    Ok(HomModel::new(a, b, bs, tau_max)?.g2(phi))
}

/// Adds detection efficiencies and a flat background:
/// `G̃ = η_c η_d G + η_d I_d(t) B0 + η_c I_c(t+τ) B0 + B0²`.
pub fn apply_imperfections(
    grid: &CorrelationGrid,
    det: &DetectionModel,
    i_c: &[f64],
    i_d: &[f64],
) -> Result<CorrelationGrid> {
    det.validate()?;
    let n = grid.t.len();
    if i_c.len() != n || i_d.len() != n {
        return Err(Error::GridMismatch("output intensities not on the grid's t axis".into()));
    }
    let ntau = grid.tau.len();
    let j0 = grid
        .tau
        .iter()
        .position(|&x| x == 0.0)
        .ok_or_else(|| Error::GridMismatch("delay axis has no zero".into()))?;
    let mut out = grid.clone();
    let eta = det.eta_c * det.eta_d;
    for i in 0..n {
        for j in 0..ntau {
            let shifted = (i + j).checked_sub(j0).filter(|&k| k < n).map_or(0.0, |k| i_c[k]);
            let v = &mut out.values[i * ntau + j];
            *v = eta * *v + det.eta_d * i_d[i] * det.b0 + det.eta_c * shifted * det.b0 + det.b0 * det.b0;
        }
    }
    Ok(out)
}

/// Background level for a measured signal-to-background ratio,
/// `B0 = (η_c + η_d) ∫I dt / (2 SBR t_end)`.
pub fn b0_from_sbr(sbr: f64, signal: f64, eta_c: f64, eta_d: f64, t_end: f64) -> Result<f64> {
    if !(sbr > 0.0) {
        return Err(Error::Domain(format!("signal-to-background ratio must be positive, got {sbr}")));
    }
    if !(t_end > 0.0) {
        return Err(Error::Domain("t_end must be positive".into()));
    }
    Ok((eta_c + eta_d) * signal / (2.0 * sbr * t_end))
}

/// Inverse of [`b0_from_sbr`].
pub fn sbr_from_b0(b0: f64, signal: f64, eta_c: f64, eta_d: f64, t_end: f64) -> Result<f64> {
    if !(b0 > 0.0) || !(t_end > 0.0) {
        return Err(Error::Domain("b0 and t_end must be positive".into()));
    }
    Ok((eta_c + eta_d) * signal / (2.0 * b0 * t_end))
}

fn curve_from_marginals(tau: &[f64], par: &[f64], perp: &[f64], windows: &[f64]) -> Result<VisibilityCurve> {
    check_windows(windows)?;
    let mut values = Vec::with_capacity(windows.len());
    for &w in windows {
        let cp = quad::integrate_linear(tau, par, -0.5 * w, 0.5 * w);
        let cs = quad::integrate_linear(tau, perp, -0.5 * w, 0.5 * w);
        if !(cs > 0.0) {
            return Err(Error::UndefinedVisibility(format!("no perpendicular coincidences within T = {w:e} s")));
        }
        values.push(1.0 - cp / cs);
    }
    Ok(VisibilityCurve { windows: windows.to_vec(), values, uncertainties: None })
}

/// `V(T) = 1 − C_∥(T) / C_⊥(T)` with `C(T)` the coincidences within `|τ| ≤ T/2`.
pub fn visibility_curve(
    parallel: &CorrelationGrid,
    perpendicular: &CorrelationGrid,
    windows: &[f64],
) -> Result<VisibilityCurve> {
    if !parallel.same_axes(perpendicular) {
        return Err(Error::GridMismatch("parallel and perpendicular grids differ".into()));
    }
    curve_from_marginals(&parallel.tau, &parallel.tau_marginal(), &perpendicular.tau_marginal(), windows)
}

/// Visibility in the limit of a vanishing window, from the `τ = 0` column.
pub fn visibility_at_zero_delay(parallel: &CorrelationGrid, perpendicular: &CorrelationGrid) -> Result<f64> {
    if !parallel.same_axes(perpendicular) {
        return Err(Error::GridMismatch("parallel and perpendicular grids differ".into()));
    }
    let j0 = parallel
        .tau
        .iter()
        .position(|&x| x == 0.0)
        .ok_or_else(|| Error::GridMismatch("delay axis has no zero".into()))?;
    let w = quad::trapezoid_weights(&parallel.t);
    let col = |g: &CorrelationGrid| -> f64 { (0..g.t.len()).map(|i| w[i] * g.get(i, j0)).sum() };
    let cs = col(perpendicular);
    if !(cs > 0.0) {
        return Err(Error::UndefinedVisibility("no perpendicular coincidences at zero delay".into()));
    }
    Ok(1.0 - col(parallel) / cs)
}

/// Visibility of the side peaks: coincidences with
/// `T_rep/2 < |τ| ≤ T_rep/2 + T/2` only.
pub fn residual_visibility(
    parallel: &CorrelationGrid,
    perpendicular: &CorrelationGrid,
    windows: &[f64],
    t_rep: f64,
) -> Result<VisibilityCurve> {
    if !parallel.same_axes(perpendicular) {
        return Err(Error::GridMismatch("parallel and perpendicular grids differ".into()));
    }
    let need = 1.5 * t_rep * (1.0 - 1e-9);
    let (lo, hi) = (parallel.tau[0], *parallel.tau.last().unwrap());
    if lo > -need || hi < need {
        return Err(Error::InsufficientSpan(format!(
            "delay axis [{lo:e}, {hi:e}] must cover ±{:e} s",
            1.5 * t_rep
        )));
    }
    if windows.iter().any(|w| !(*w >= 0.0)) || windows.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Domain("windows must be non-negative and strictly increasing".into()));
    }
    let (mp, ms) = (parallel.tau_marginal(), perpendicular.tau_marginal());
    let tau = &parallel.tau;
    let half = 0.5 * t_rep;
    let mut values = Vec::with_capacity(windows.len());
    for &w in windows {
        let side = |m: &[f64]| {
            quad::integrate_linear(tau, m, half, half + 0.5 * w) + quad::integrate_linear(tau, m, -half - 0.5 * w, -half)
        };
        let cs = side(&ms);
        if !(cs > 0.0) {
            return Err(Error::UndefinedVisibility(format!("no side-peak coincidences within T = {w:e} s")));
        }
        values.push(1.0 - side(&mp) / cs);
    }
    Ok(VisibilityCurve { windows: windows.to_vec(), values, uncertainties: None })
}

/// Polarization mismatch that best reproduces a measured curve: golden-section
/// search of the summed squared deviation over `δφ ∈ [0, π/4]`.
pub fn fit_delta_phi<F>(measured: &VisibilityCurve, mut model: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<VisibilityCurve>,
{
    if measured.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measured visibility".into()));
    }
    let mut cost = |phi: f64| -> Result<f64> {
        let curve = model(phi)?;
        if curve.values.len() != measured.values.len() {
            return Err(Error::GridMismatch("model and measured windows differ".into()));
        }
        if curve.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("model visibility at δφ = {phi}")));
        }
        Ok(curve.values.iter().zip(&measured.values).map(|(a, b)| (a - b).powi(2)).sum())
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, FRAC_PI_4);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = cost(x1)?;
    let mut f2 = cost(x2)?;
    while b - a > 1e-8 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = cost(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = cost(x2)?;
        }
    }
    let mid = 0.5 * (a + b);
    // the interior search cannot land exactly on the bracket ends
    let ends = [(0.0, cost(0.0)?), (FRAC_PI_4, cost(FRAC_PI_4)?), (mid, cost(mid)?)];
    Ok(ends.iter().fold(ends[2], |best, c| if c.1 < best.1 { *c } else { best }).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomic::{Channel, LevelScheme};
    use crate::correlator::{g1, SamePulse};
    use crate::lindblad::SimGrid;
    use crate::pulse::{PulseShape, PulseTrain};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    /// Pure wave packet `ψ(t)`: `g1(t1, t2) = ψ*(t1) ψ(t2)`.
    fn pure(times: &[f64], psi: impl Fn(f64) -> Complex64) -> CoherenceGrid {
        let amp: Vec<Complex64> = times.iter().map(|&t| psi(t)).collect();
        let n = times.len();
        let mut values = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = amp[i].conj() * amp[j];
            }
        }
        CoherenceGrid { channel: Channel::Raman854, times: times.to_vec(), values }
    }

    fn times() -> Vec<f64> {
        (0..121).map(|i| i as f64 * 0.5).collect()
    }

    fn packet(t0: f64, chirp: f64) -> impl Fn(f64) -> Complex64 {
        move |t: f64| {
            let x = (t - t0) / 6.0;
            Complex64::from_polar((-x * x).exp(), chirp * x * x)
        }
    }

    #[test]
    fn ideal_pure_photons_fully_bunch() {
        let a = pure(&times(), packet(30.0, 0.0));
        let m = HomModel::new(&a, &a, &BeamSplitter::balanced(), 30.0).unwrap();
        let g = m.g2(0.0);
        let scale = m.intensity.values.iter().cloned().fold(0.0, f64::max);
        assert!(g.values.iter().all(|v| v.abs() < 1e-14 * scale));
        let v = m.visibility(&DetectionModel::default(), &[1.0, 10.0, 60.0]).unwrap();
        assert!(v.values.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_polarization_drops_interference() {
        let a = pure(&times(), packet(30.0, 0.3));
        let b = pure(&times(), packet(32.0, 0.0));
        let m = HomModel::new(&a, &b, &BeamSplitter::new(0.4).unwrap(), 20.0).unwrap();
        let g = m.g2(FRAC_PI_2);
        for (x, y) in g.values.iter().zip(&m.intensity.values) {
            assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
        // cos² dependence of the difference
        let g0 = m.g2(0.0);
        let g1_ = m.g2(0.7);
        for k in 0..g.values.len() {
            let d0 = g0.values[k] - g.values[k];
            let d1 = g1_.values[k] - g.values[k];
            assert!((d1 - 0.7f64.cos().powi(2) * d0).abs() <= 1e-12 * d0.abs().max(1e-300));
        }
    }

    #[test]
    fn unbalanced_splitter_zero_delay_visibility() {
        let a = pure(&times(), packet(30.0, 0.0));
        let t = 0.436;
        let m = HomModel::new(&a, &a, &BeamSplitter::new(t).unwrap(), 10.0).unwrap();
        let det = DetectionModel::default();
        let par = m.detected(&det, false).unwrap();
        let perp = m.detected(&det, true).unwrap();
        let v0 = visibility_at_zero_delay(&par, &perp).unwrap();
        let expect = 1.0 - (2.0 * t - 1.0).powi(2) / (t * t + (1.0 - t) * (1.0 - t));
        assert!((v0 - expect).abs() < 1e-12, "{v0} vs {expect}");
        assert!((expect - 0.96780).abs() < 1e-4);
    }

    #[test]
    fn emitter_swap_symmetry() {
        let a = pure(&times(), packet(30.0, 0.4));
        let b = pure(&times(), packet(33.0, -0.2));
        let ab = g2_hom(&a, &b, &BeamSplitter::new(0.3).unwrap(), 0.2, 15.0).unwrap();
        let ba = g2_hom(&b, &a, &BeamSplitter::new(0.7).unwrap(), 0.2, 15.0).unwrap();
        for (x, y) in ab.values.iter().zip(&ba.values) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn imperfection_identities() {
        let a = pure(&times(), packet(30.0, 0.2));
        let m = HomModel::new(&a, &a, &BeamSplitter::balanced(), 10.0).unwrap();
        let g = m.g2(0.1);
        let id = apply_imperfections(&g, &DetectionModel::default(), &m.i_c, &m.i_d).unwrap();
        assert_eq!(id.values, g.values);
        let blank = CorrelationGrid::zeros(g.t.clone(), g.tau.clone());
        let zeros = vec![0.0; g.t.len()];
        let det = DetectionModel { b0: 0.3, ..Default::default() };
        let bg = apply_imperfections(&blank, &det, &zeros, &zeros).unwrap();
        assert!(bg.values.iter().all(|v| (v - 0.09).abs() < 1e-15));
    }

    #[test]
    fn efficiency_ratio_cancels_without_background() {
        let a = pure(&times(), packet(30.0, 0.5));
        let b = pure(&times(), packet(31.0, 0.0));
        let m = HomModel::new(&a, &b, &BeamSplitter::new(0.436).unwrap(), 30.0).unwrap();
        let windows = [2.0, 8.0, 30.0];
        let base = m.visibility(&DetectionModel { delta_phi: 0.2, ..Default::default() }, &windows).unwrap();
        let skew = DetectionModel { eta_c: 0.3, eta_d: 0.3 / 2.14, b0: 0.0, delta_phi: 0.2 };
        let v = m.visibility(&skew, &windows).unwrap();
        for (x, y) in base.values.iter().zip(&v.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_route_matches_grid_route() {
        let a = pure(&times(), packet(30.0, 0.5));
        let b = pure(&times(), packet(31.0, 0.0));
        let m = HomModel::new(&a, &b, &BeamSplitter::new(0.436).unwrap(), 30.0).unwrap();
        let det = DetectionModel { eta_c: 0.8, eta_d: 0.5, b0: 1e-3, delta_phi: 0.15 };
        let windows = [1.3, 9.0, 40.0];
        let fast = m.visibility(&det, &windows).unwrap();
        let slow = visibility_curve(&m.detected(&det, false).unwrap(), &m.detected(&det, true).unwrap(), &windows).unwrap();
        for (x, y) in fast.values.iter().zip(&slow.values) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn identical_settings_give_zero_visibility() {
        let a = pure(&times(), packet(30.0, 0.0));
        let m = HomModel::new(&a, &a, &BeamSplitter::balanced(), 10.0).unwrap();
        let g = m.g2(FRAC_PI_2);
        let v = visibility_curve(&g, &g, &[5.0, 10.0]).unwrap();
        assert!(v.values.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn background_round_trip() {
        let b0 = b0_from_sbr(40.0, 0.7, 0.2, 0.1, 1e-6).unwrap();
        let sbr = sbr_from_b0(b0, 0.7, 0.2, 0.1, 1e-6).unwrap();
        assert!((sbr - 40.0).abs() < 1e-12);
        let large = b0_from_sbr(1e12, 0.7, 0.2, 0.1, 1e-6).unwrap();
        assert!(large < 1e-10 * b0 && b0_from_sbr(1e300, 0.7, 0.2, 0.1, 1e-6).unwrap() < large);
        let twice = b0_from_sbr(40.0, 0.7, 0.2, 0.1, 2e-6).unwrap();
        assert!((twice - 0.5 * b0).abs() < 1e-15 * b0);
        assert!(matches!(b0_from_sbr(0.0, 1.0, 1.0, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_denominator_is_undefined() {
        let a = pure(&times(), |_| Complex64::new(0.0, 0.0));
        let m = HomModel::new(&a, &a, &BeamSplitter::balanced(), 10.0).unwrap();
        assert!(matches!(m.visibility(&DetectionModel::default(), &[5.0]), Err(Error::UndefinedVisibility(_))));
    }

    fn mixed(times: &[f64]) -> CoherenceGrid {
        // incoherent mixture of two delayed packets
        let p = pure(times, packet(25.0, 0.0));
        let q = pure(times, packet(35.0, 0.0));
        let values = p.values.iter().zip(&q.values).map(|(x, y)| 0.5 * (x + y)).collect();
        CoherenceGrid { values, ..p }
    }

    #[test]
    fn delta_phi_round_trip() {
        let a = mixed(&times());
        let m = HomModel::new(&a, &a, &BeamSplitter::new(0.436).unwrap(), 30.0).unwrap();
        let windows = [1.0, 5.0, 10.0, 30.0, 60.0];
        let model = |dphi: f64| m.visibility(&DetectionModel { delta_phi: dphi, ..Default::default() }, &windows);
        let measured = model(0.2).unwrap();
        let fit = fit_delta_phi(&measured, model).unwrap();
        assert!((fit - 0.2).abs() < 1e-3, "{fit}");
        let zero = fit_delta_phi(&model(0.0).unwrap(), model).unwrap();
        assert!(zero < 1e-3);
        let bad = VisibilityCurve { windows: windows.to_vec(), values: vec![f64::NAN; 5], uncertainties: None };
        assert!(fit_delta_phi(&bad, model).is_err());
    }

    fn emitter_train(n: usize, back: bool) -> (PulseTrain, LevelScheme) {
        let s = PulseShape::from_fwhm(15.08e-9, 2.28, 0.0, 1.5e8).unwrap();
        let scheme = if back { LevelScheme::default() } else { LevelScheme::default().without_back_decay() };
        (PulseTrain::starting_at_zero(s, n, 104.25e-9).unwrap(), scheme)
    }

    #[test]
    fn emitter_without_back_decay_is_pure() {
        let (train, scheme) = emitter_train(1, false);
        let grid = SimGrid::new(0.0, train.t_rep, 0.5e-9, 1e-11).unwrap();
        let a = g1(&train, &scheme, 0.0, Channel::Raman854, &grid).unwrap();
        let m = HomModel::new(&a, &a, &BeamSplitter::balanced(), 0.5 * train.t_rep).unwrap();
        let v = m.visibility(&DetectionModel::default(), &[5e-9, 50e-9, train.t_rep]).unwrap();
        for x in &v.values {
            assert!((x - 1.0).abs() < 1e-6, "{x}");
        }
        let (train, scheme) = emitter_train(1, true);
        let b = g1(&train, &scheme, 0.0, Channel::Raman854, &grid).unwrap();
        let m = HomModel::new(&b, &b, &BeamSplitter::balanced(), 0.5 * train.t_rep).unwrap();
        let v = m.visibility(&DetectionModel::default(), &[train.t_rep]).unwrap();
        assert!(v.values[0] < 1.0 - 1e-3 && v.values[0] > 0.0);
    }

    #[test]
    fn residual_visibility_needs_span_and_vanishes_when_restricted() {
        let (train, scheme) = emitter_train(3, true);
        let grid = SimGrid::new(0.0, train.end(), 1e-9, 1e-10).unwrap();
        let a = g1(&train, &scheme, 2e5, Channel::Raman854, &grid).unwrap();
        let r = a.restrict_to_same_pulse(&train);
        let det = DetectionModel::default();
        let windows = [10e-9, 50e-9, 100e-9];
        let short = HomModel::new(&r, &r, &BeamSplitter::balanced(), 100e-9).unwrap();
        let (p, s) = (short.detected(&det, false).unwrap(), short.detected(&det, true).unwrap());
        assert!(matches!(residual_visibility(&p, &s, &windows, train.t_rep), Err(Error::InsufficientSpan(_))));

        let full = HomModel::new(&r, &r, &BeamSplitter::balanced(), 1.5 * train.t_rep).unwrap();
        let (p, s) = (full.detected(&det, false).unwrap(), full.detected(&det, true).unwrap());
        let v = residual_visibility(&p, &s, &windows, train.t_rep).unwrap();
        assert!(v.values.last().unwrap().abs() < 0.02, "{:?}", v.values);
        assert!(matches!(residual_visibility(&p, &s, &[0.0], train.t_rep), Err(Error::UndefinedVisibility(_))));

        let coherent = HomModel::new(&a, &a, &BeamSplitter::balanced(), 1.5 * train.t_rep).unwrap();
        let (p, s) = (coherent.detected(&det, false).unwrap(), coherent.detected(&det, true).unwrap());
        let vc = residual_visibility(&p, &s, &windows, train.t_rep).unwrap();
        assert!(*vc.values.last().unwrap() > 0.02, "{:?}", vc.values);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn detected_density_nonnegative(t in 0.0f64..1.0, phi in 0.0f64..1.5, chirp in -1.0f64..1.0,
                                        eta_c in 0.0f64..1.0, eta_d in 0.0f64..1.0, b0 in 0.0f64..1e-2) {
            let a = mixed(&times());
            let b = pure(&times(), packet(31.0, chirp));
            let m = HomModel::new(&a, &b, &BeamSplitter::new(t).unwrap(), 20.0).unwrap();
            let det = DetectionModel { eta_c, eta_d, b0, delta_phi: phi };
            let scale = m.intensity.values.iter().cloned().fold(0.0, f64::max);
            for perp in [false, true] {
                let g = m.detected(&det, perp).unwrap();
                prop_assert!(g.min_value() >= -1e-12 * scale);
            }
        }

        #[test]
        fn efficiency_rescaling_leaves_visibility(k1 in 0.05f64..1.0, k2 in 0.05f64..1.0, dphi in 0.0f64..0.7) {
            let a = mixed(&times());
            let b = pure(&times(), packet(31.0, 0.3));
            let m = HomModel::new(&a, &b, &BeamSplitter::new(0.436).unwrap(), 30.0).unwrap();
            let windows = [2.0, 20.0, 60.0];
            let v1 = m.visibility(&DetectionModel { delta_phi: dphi, ..Default::default() }, &windows).unwrap();
            let v2 = m.visibility(&DetectionModel { eta_c: k1, eta_d: k2, b0: 0.0, delta_phi: dphi }, &windows).unwrap();
            for (x, y) in v1.values.iter().zip(&v2.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
