//! Generalized-Gaussian excitation pulses, pulse trains, histogram fitting
//! and peak-Rabi calibration.
//!
//! The envelope `A exp(-(|t - t0| / (√2 σ))^β)` describes the *intensity*;
//! the Rabi frequency follows its square root.

use std::f64::consts::{LN_2, SQRT_2};

use nalgebra::{Matrix4, Vector4};

use crate::atomic::{branching_ratio, LevelScheme};
use crate::error::{Error, Result};
use crate::lindblad;

/// Relative intensity below which a pulse is switched off for propagation.
pub const DEFAULT_TRUNCATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShape {
    /// Peak intensity (arbitrary units, e.g. counts per bin).
    pub amplitude: f64,
    /// Pulse center (s).
    pub center: f64,
    /// Width parameter σ (s).
    pub sigma: f64,
    /// Shape exponent β; 2 is Gaussian, large values approach a flat top.
    pub beta: f64,
    /// Rabi frequency at the pulse peak (rad/s).
    pub peak_rabi: f64,
}

impl PulseShape {
    pub fn new(amplitude: f64, center: f64, sigma: f64, beta: f64, peak_rabi: f64) -> Result<Self> {
        let s = PulseShape { amplitude, center, sigma, beta, peak_rabi };
        s.validate()?;
        Ok(s)
    }

    /// Unit-amplitude pulse with the given FWHM of the intensity profile.
    pub fn from_fwhm(fwhm: f64, beta: f64, center: f64, peak_rabi: f64) -> Result<Self> {
        let sigma = sigma_for_fwhm(fwhm, beta)?;
        PulseShape::new(1.0, center, sigma, beta, peak_rabi)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.amplitude, self.center, self.sigma, self.beta, self.peak_rabi]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidShape("non-finite parameter".into()));
        }
        if self.sigma <= 0.0 || self.beta <= 0.0 {
            return Err(Error::InvalidShape(format!(
                "sigma and beta must be positive (sigma = {}, beta = {})",
                self.sigma, self.beta
            )));
        }
        if self.amplitude < 0.0 || self.peak_rabi < 0.0 {
            return Err(Error::InvalidShape("amplitude and peak Rabi frequency must be >= 0".into()));
        }
        Ok(())
    }

    pub fn with_peak_rabi(self, peak_rabi: f64) -> Self {
        PulseShape { peak_rabi, ..self }
    }

    pub fn intensity_at(&self, t: f64) -> f64 {
        self.amplitude * self.relative_intensity(t)
    }

    /// Intensity normalized to the peak, independent of `amplitude`.
    pub fn relative_intensity(&self, t: f64) -> f64 {
        let u = (t - self.center).abs() / (SQRT_2 * self.sigma);
        (-u.powf(self.beta)).exp()
    }

    /// Rabi frequency envelope, `Ω_peak sqrt(I(t) / A)`.
    pub fn rabi_at(&self, t: f64) -> Result<f64> {
        if self.peak_rabi == 0.0 {
            return Ok(0.0);
        }
        if self.amplitude == 0.0 {
            return Err(Error::InvalidShape("zero amplitude with non-zero peak Rabi frequency".into()));
        }
        Ok(self.rabi_unchecked(t))
    }

    #[inline]
    pub(crate) fn rabi_unchecked(&self, t: f64) -> f64 {
        let u = (t - self.center).abs() / (SQRT_2 * self.sigma);
        self.peak_rabi * (-0.5 * u.powf(self.beta)).exp()
    }

    pub fn fwhm(&self) -> f64 {
        fwhm_of(self.sigma, self.beta)
    }

    /// Half-width of the region where the relative intensity is at least `threshold`.
    pub fn truncation_half_width(&self, threshold: f64) -> f64 {
        SQRT_2 * self.sigma * (-threshold.ln()).powf(1.0 / self.beta)
    }
}

fn fwhm_of(sigma: f64, beta: f64) -> f64 {
    2.0 * SQRT_2 * LN_2.powf(1.0 / beta) * sigma
}

/// FWHM of the intensity profile, `2√2 (ln 2)^{1/β} σ`.
pub fn fwhm(sigma: f64, beta: f64) -> Result<f64> {
    if !(sigma > 0.0 && beta > 0.0) {
        return Err(Error::Domain(format!("fwhm needs sigma > 0 and beta > 0, got ({sigma}, {beta})")));
    }
    Ok(fwhm_of(sigma, beta))
}

/// Inverse of [`fwhm`].
pub fn sigma_for_fwhm(t_pulse: f64, beta: f64) -> Result<f64> {
    if !(t_pulse > 0.0 && beta > 0.0) {
        return Err(Error::Domain(format!(
            "sigma_for_fwhm needs T_pulse > 0 and beta > 0, got ({t_pulse}, {beta})"
        )));
    }
    Ok(t_pulse / (2.0 * SQRT_2 * LN_2.powf(1.0 / beta)))
}

/// `n_pulses` copies of `shape`, pulse k centered at `shape.center + k * t_rep`.
///
/// Each pulse owns the cell `[center_k - t_rep/2, center_k + t_rep/2)`; the
/// drive is switched off where the relative intensity drops below `truncation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseTrain {
    pub shape: PulseShape,
    pub n_pulses: usize,
    pub t_rep: f64,
    pub truncation: f64,
}

impl PulseTrain {
    pub fn new(shape: PulseShape, n_pulses: usize, t_rep: f64) -> Result<Self> {
        let train = PulseTrain { shape, n_pulses, t_rep, truncation: DEFAULT_TRUNCATION };
        train.validate()?;
        Ok(train)
    }

    /// Train whose first cell starts at t = 0.
    pub fn starting_at_zero(shape: PulseShape, n_pulses: usize, t_rep: f64) -> Result<Self> {
        PulseTrain::new(PulseShape { center: 0.5 * t_rep, ..shape }, n_pulses, t_rep)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !(self.t_rep > 0.0) || !self.t_rep.is_finite() {
            return Err(Error::InvalidTrain(format!("T_rep must be positive, got {}", self.t_rep)));
        }
        if self.n_pulses == 0 {
            return Err(Error::InvalidTrain("a train needs at least one pulse".into()));
        }
        if !(self.truncation > 0.0 && self.truncation < 1.0) {
            return Err(Error::InvalidTrain("truncation threshold must lie in (0, 1)".into()));
        }
        let w = self.half_width();
        if 2.0 * w > self.t_rep {
            return Err(Error::InvalidTrain(format!(
                "pulse envelopes overlap: truncated width {:.3e} s exceeds T_rep {:.3e} s",
                2.0 * w,
                self.t_rep
            )));
        }
        Ok(())
    }

    pub fn with_peak_rabi(self, peak_rabi: f64) -> Self {
        PulseTrain { shape: self.shape.with_peak_rabi(peak_rabi), ..self }
    }

    pub fn with_pulses(self, n_pulses: usize) -> Self {
        PulseTrain { n_pulses, ..self }
    }

    pub fn half_width(&self) -> f64 {
        self.shape.truncation_half_width(self.truncation)
    }

    pub fn center(&self, k: usize) -> f64 {
        self.shape.center + k as f64 * self.t_rep
    }

    /// Interval in which pulse `k` drives the emitter.
    pub fn drive_window(&self, k: usize) -> (f64, f64) {
        let c = self.center(k);
        let w = self.half_width();
        (c - w, c + w)
    }

    /// Cell `[start, end)` owned by pulse `k`.
    pub fn cell(&self, k: usize) -> (f64, f64) {
        let c = self.center(k);
        (c - 0.5 * self.t_rep, c + 0.5 * self.t_rep)
    }

    pub fn start(&self) -> f64 {
        self.cell(0).0
    }

    pub fn end(&self) -> f64 {
        self.cell(self.n_pulses - 1).1
    }

    /// Index of the cell containing `t`, clamped to the train.
    pub fn pulse_index(&self, t: f64) -> usize {
        let k = ((t - self.start()) / self.t_rep).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_pulses - 1)
        }
    }

    /// Index of the cell containing `t`, or `None` outside the train.
    pub fn cell_of(&self, t: f64) -> Option<usize> {
        let k = ((t - self.start()) / self.t_rep).floor();
        if k < 0.0 || k as usize >= self.n_pulses {
            None
        } else {
            Some(k as usize)
        }
    }

    /// Rabi frequency of the truncated train at `t`.
    #[inline]
    pub fn rabi(&self, t: f64) -> f64 {
        if self.shape.peak_rabi == 0.0 {
            return 0.0;
        }
        let k = ((t - self.shape.center) / self.t_rep).round();
        if k < 0.0 || k >= self.n_pulses as f64 {
            return 0.0;
        }
        let c = self.shape.center + k * self.t_rep;
        if (t - c).abs() > self.half_width() {
            return 0.0;
        }
        self.shape.rabi_unchecked(t - k * self.t_rep)
    }

    /// Drive-window edges strictly inside `(t0, t1)`, sorted.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        if self.shape.peak_rabi == 0.0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for k in 0..self.n_pulses {
            let (a, b) = self.drive_window(k);
            if b <= t0 {
                continue;
            }
            if a >= t1 {
                break;
            }
            for e in [a, b] {
                if e > t0 && e < t1 {
                    out.push(e);
                }
            }
        }
        out
    }

    /// True when the drive is identically zero on the open interval `(t0, t1)`.
    pub fn is_dark(&self, t0: f64, t1: f64) -> bool {
        if self.shape.peak_rabi == 0.0 {
            return true;
        }
        (0..self.n_pulses).all(|k| {
            let (a, b) = self.drive_window(k);
            b <= t0 || a >= t1
        })
    }
}

/// Fitted pulse parameters with 1σ uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseFitResult {
    pub shape: PulseShape,
    pub amplitude_err: f64,
    pub center_err: f64,
    pub sigma_err: f64,
    pub beta_err: f64,
    pub fwhm: f64,
    pub fwhm_err: f64,
    /// χ² per degree of freedom with Poisson weights.
    pub reduced_chi2: f64,
    pub iterations: usize,
}

/// Model in the internal parametrization `[A, t0, ln σ, ln β]`.
fn model_and_jacobian(p: &Vector4<f64>, t: f64) -> (f64, Vector4<f64>) {
    let (a, t0, sigma, beta) = (p[0], p[1], p[2].exp(), p[3].exp());
    let dt = t - t0;
    let u = dt.abs() / (SQRT_2 * sigma);
    let ub = u.powf(beta);
    let shape = (-ub).exp();
    let f = a * shape;
    let d_t0 = if u > 0.0 { f * beta * ub / u * dt.signum() / (SQRT_2 * sigma) } else { 0.0 };
    let d_lnsigma = f * beta * ub;
    let d_lnbeta = if u > 0.0 { -f * beta * ub * u.ln() } else { 0.0 };
    (f, Vector4::new(shape, d_t0, d_lnsigma, d_lnbeta))
}

/// Reads a two-column histogram (bin center in seconds, counts). A header row
/// is optional; rows with a non-numeric first field are skipped only if first.
pub fn read_histogram_csv<R: std::io::Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Domain(format!("histogram line {}: expected 2 columns, found {}", i + 1, rec.len())));
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        match parsed {
            (Ok(t), Ok(c)) => out.push((t, c)),
            _ if i == 0 => continue,
            _ => return Err(Error::Domain(format!("histogram line {}: not a number", i + 1))),
        }
    }
    if out.is_empty() {
        return Err(Error::Domain("histogram has no rows".into()));
    }
    Ok(out)
}

/// Weighted least-squares fit of the generalized Gaussian to a histogram of
/// `(bin center [s], counts)`. Weights are Poisson, `1 / max(count, 1)`.
pub fn fit_pulse(samples: &[(f64, f64)]) -> Result<PulseFitResult> {
    if samples.iter().any(|(t, c)| !t.is_finite() || !c.is_finite()) {
        return Err(Error::FitFailure("histogram contains non-finite values".into()));
    }
    if samples.iter().any(|&(_, c)| c < 0.0) {
        return Err(Error::FitFailure("negative counts".into()));
    }
    let nonempty = samples.iter().filter(|(_, c)| *c > 0.0).count();
    if nonempty < 5 || samples.len() <= 4 {
        return Err(Error::FitFailure(format!(
            "need at least 5 non-empty bins for 4 parameters, got {nonempty} of {}",
            samples.len()
        )));
    }

    let total: f64 = samples.iter().map(|(_, c)| c).sum();
    let centroid = samples.iter().map(|(t, c)| t * c).sum::<f64>() / total;
    let rms = (samples.iter().map(|(t, c)| c * (t - centroid).powi(2)).sum::<f64>() / total).sqrt();
    let peak = samples.iter().map(|(_, c)| *c).fold(0.0, f64::max);
    if !(rms > 0.0) {
        return Err(Error::FitFailure("zero-width histogram".into()));
    }

    let weights: Vec<f64> = samples.iter().map(|(_, c)| 1.0 / c.max(1.0)).collect();
    let chi2 = |p: &Vector4<f64>| -> f64 {
        samples
            .iter()
            .zip(&weights)
            .map(|(&(t, c), w)| w * (c - model_and_jacobian(p, t).0).powi(2))
            .sum()
    };
    let normal_eq = |p: &Vector4<f64>| -> (Matrix4<f64>, Vector4<f64>) {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (&(t, c), w) in samples.iter().zip(&weights) {
            let (f, j) = model_and_jacobian(p, t);
            jtj += j * j.transpose() * *w;
            jtr += j * (*w * (c - f));
        }
        (jtj, jtr)
    };

    let mut p = Vector4::new(peak, centroid, rms.ln(), 2f64.ln());
    let mut cost = chi2(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 1000 {
        iterations += 1;
        let (jtj, jtr) = normal_eq(&p);
        let mut a = jtj;
        for i in 0..4 {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
        }
        let Some(step) = a.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let trial = p + step;
        let trial_cost = chi2(&trial);
        if trial_cost.is_finite() && trial_cost <= cost {
            let rel = (cost - trial_cost) / cost.max(1e-300);
            let small_step = step.iter().zip(trial.iter()).all(|(d, v)| d.abs() <= 1e-12 * v.abs().max(1e-12));
            p = trial;
            cost = trial_cost;
            lambda = (lambda * 0.3).max(1e-12);
            if rel < 1e-14 || small_step || cost == 0.0 {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // no further descent possible; accept current point
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::FitFailure(format!("no convergence after {iterations} iterations")));
    }

    let shape = PulseShape {
        amplitude: p[0],
        center: p[1],
        sigma: p[2].exp(),
        beta: p[3].exp(),
        peak_rabi: 0.0,
    };
    shape.validate().map_err(|e| Error::FitFailure(format!("fit left the valid domain: {e}")))?;

    let dof = (samples.len() - 4) as f64;
    let reduced_chi2 = cost / dof;
    let (jtj, _) = normal_eq(&p);
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::FitFailure("singular normal matrix at the optimum".into()))?
        * reduced_chi2;
    let var = |i: usize| cov[(i, i)].max(0.0);
    let fw = shape.fwhm();
    // d fwhm / d(ln σ) = fwhm,  d fwhm / d(ln β) = -fwhm ln(ln 2) / β
    let g = [fw, -fw * LN_2.ln() / shape.beta];
    let fw_var = g[0] * g[0] * cov[(2, 2)] + 2.0 * g[0] * g[1] * cov[(2, 3)] + g[1] * g[1] * cov[(3, 3)];

    Ok(PulseFitResult {
        shape,
        amplitude_err: var(0).sqrt(),
        center_err: var(1).sqrt(),
        sigma_err: shape.sigma * var(2).sqrt(),
        beta_err: shape.beta * var(3).sqrt(),
        fwhm: fw,
        fwhm_err: fw_var.max(0.0).sqrt(),
        reduced_chi2,
        iterations,
    })
}

/// Search settings for [`calibrate_peak_rabi`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    /// Upper end of the Ω_peak bracket (rad/s).
    pub omega_max: f64,
    /// Points of the coarse monotone scan over `[0, omega_max]`.
    pub scan_points: usize,
    pub max_bisections: usize,
    /// Integrator tolerance used for every P854 evaluation.
    pub tolerance: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            omega_max: 2.0 * std::f64::consts::PI * 400e6,
            scan_points: 80,
            max_bisections: 200,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub peak_rabi: f64,
    pub achieved_p854: f64,
    pub evaluations: usize,
}

/// Finds Ω_peak such that the first pulse of `train` produces an 854 nm
/// photon with probability `target_p854` (within `tol`).
pub fn calibrate_peak_rabi(
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    target_p854: f64,
    tol: f64,
    config: &CalibrationConfig,
) -> Result<Calibration> {
    train.validate()?;
    let ceiling = branching_ratio(scheme)?;
    if !(tol > 0.0) {
        return Err(Error::Domain("calibration tolerance must be positive".into()));
    }
    if target_p854 >= ceiling {
        return Err(Error::UnreachableTarget { target: target_p854, ceiling });
    }
    if target_p854 < 0.0 {
        return Err(Error::Domain(format!("negative target P854 {target_p854}")));
    }
    if target_p854 == 0.0 {
        return Ok(Calibration { peak_rabi: 0.0, achieved_p854: 0.0, evaluations: 0 });
    }
    if train.shape.amplitude <= 0.0 {
        return Err(Error::InvalidShape("calibration needs a positive pulse amplitude".into()));
    }

    let mut evaluations = 0usize;
    let mut p854 = |omega: f64| -> Result<f64> {
        evaluations += 1;
        lindblad::p854_of_train(&train.with_peak_rabi(omega), scheme, dephasing, config.tolerance)
    };

    // Monotone scan for the first bracket.
    let n = config.scan_points.max(2);
    let d_omega = config.omega_max / n as f64;
    let (mut lo, mut p_lo) = (0.0, 0.0);
    let mut bracket = None;
    for i in 1..=n {
        let omega = i as f64 * d_omega;
        let p = p854(omega)?;
        if p < p_lo {
            return Err(Error::CalibrationFailure(format!(
                "P854(Ω) is not monotone below the target: P854 drops from {p_lo:.6} to {p:.6} at Ω = {omega:.4e} rad/s"
            )));
        }
        if p >= target_p854 {
            bracket = Some((lo, p_lo, omega, p));
            break;
        }
        lo = omega;
        p_lo = p;
    }
    let Some((mut lo, mut p_lo, mut hi, mut p_hi)) = bracket else {
        return Err(Error::CalibrationFailure(format!(
            "target {target_p854} not bracketed on [0, {:.4e}] rad/s (max P854 {p_lo:.6})",
            config.omega_max
        )));
    };

    let inner_tol = (tol * 1e-3).max(1e-13);
    for _ in 0..config.max_bisections {
        let mid = 0.5 * (lo + hi);
        let p = p854(mid)?;
        if p < p_lo - 1e-12 || p > p_hi + 1e-12 {
            return Err(Error::CalibrationFailure(format!(
                "monotonicity violated inside bracket at Ω = {mid:.6e} rad/s"
            )));
        }
        if (p - target_p854).abs() <= inner_tol || (hi - lo) <= 1e-14 * hi {
            return Ok(Calibration { peak_rabi: mid, achieved_p854: p, evaluations });
        }
        if p < target_p854 {
            lo = mid;
            p_lo = p;
        } else {
            hi = mid;
            p_hi = p;
        }
    }
    let mid = 0.5 * (lo + hi);
    let p = p854(mid)?;
    if (p - target_p854).abs() <= tol {
        Ok(Calibration { peak_rabi: mid, achieved_p854: p, evaluations })
    } else {
        Err(Error::CalibrationFailure("bisection budget exhausted".into()))
    }
}
