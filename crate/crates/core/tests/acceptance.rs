//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run with `cargo test -p raman-hom --test acceptance`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use raman_hom::correlator::{g1, g2_back_decay, mean_back_decays, SamePulse};
use raman_hom::hom::{b0_from_sbr, residual_visibility, visibility_at_zero_delay, visibility_curve};
use raman_hom::lindblad::{p854_of_train, raman_probability};
use raman_hom::pulse::{calibrate_peak_rabi, fit_pulse, fwhm, sigma_for_fwhm, CalibrationConfig};
use raman_hom::timetags::{
    cross_correlate, estimate_mean_n, estimate_visibility, sample_coincidences, split_by_detector,
    synthesize_detections, Clock, Detector, TAGGER_RESOLUTION_PS,
};
use raman_hom::trajectory::{empirical_mean_n, empirical_p854, run_trajectories};
use raman_hom::{
    BeamSplitter, Channel, DelayGrid, DensityMatrix, DetectionModel, EfficiencySet, HomModel, LevelScheme, PulseShape,
    PulseTrain, Resolution, Result, SimGrid,
};

const NS: f64 = 1e-9;
const N_PULSES: usize = 80;
const CAL_TOL: f64 = 1e-4;

/// Back-decay series: FWHM (ns), β, T_rep (ns), target P854.
const SERIES_N: [(f64, f64, f64, f64); 6] = [
    (6.52, 1.85, 104.25, 0.008),
    (9.91, 2.27, 104.25, 0.013),
    (15.08, 2.28, 104.25, 0.0206),
    (28.45, 2.97, 114.25, 0.030),
    (44.3, 4.24, 159.25, 0.038),
    (56.6, 4.53, 169.25, 0.045),
];

/// Interference series.
const SERIES_V: [(f64, f64, f64, f64); 5] = [
    (15.8, 2.23, 110.0, 0.020),
    (20.9, 2.19, 112.0, 0.025),
    (31.7, 2.63, 115.0, 0.030),
    (44.2, 3.30, 140.0, 0.035),
    (55.3, 3.46, 140.0, 0.040),
];

fn dephasing() -> f64 {
    2.0 * PI * 50e3
}

struct Row {
    label: String,
    target: f64,
    achieved: f64,
    elapsed: Duration,
    train: PulseTrain,
}

struct Context {
    scheme: LevelScheme,
    series_n: Option<Vec<Row>>,
    series_v: Option<Vec<Row>>,
}

fn calibrate_rows(scheme: &LevelScheme, rows: &[(f64, f64, f64, f64)]) -> Result<Vec<Row>> {
    rows.iter()
        .map(|&(t_pulse, beta, t_rep, target)| {
            let start = Instant::now();
            let shape = PulseShape::from_fwhm(t_pulse * NS, beta, 0.0, 0.0)?;
            let train = PulseTrain::starting_at_zero(shape, N_PULSES, t_rep * NS)?;
            let cal = calibrate_peak_rabi(&train, scheme, dephasing(), target, 0.1 * CAL_TOL, &CalibrationConfig::default())?;
            let train = train.with_peak_rabi(cal.peak_rabi);
            // re-simulate independently of the calibration loop
            let achieved = p854_of_train(&train, scheme, dephasing(), 1e-10)?;
            Ok(Row { label: format!("{t_pulse} ns"), target, achieved, elapsed: start.elapsed(), train })
        })
        .collect()
}

impl Context {
    fn series_n(&mut self) -> Result<&[Row]> {
        if self.series_n.is_none() {
            self.series_n = Some(calibrate_rows(&self.scheme, &SERIES_N)?);
        }
        Ok(self.series_n.as_deref().unwrap())
    }

    fn series_v(&mut self) -> Result<&[Row]> {
        if self.series_v.is_none() {
            self.series_v = Some(calibrate_rows(&self.scheme, &SERIES_V)?);
        }
        Ok(self.series_v.as_deref().unwrap())
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn calibration(ctx: &mut Context) -> Result<Outcome> {
    let rows = ctx.series_n()?;
    let mut pass = true;
    let mut parts = Vec::new();
    for r in rows {
        let err = (r.achieved - r.target).abs();
        pass &= err <= CAL_TOL && r.elapsed.as_secs_f64() <= 60.0;
        parts.push(format!("{} {:.5} ({:.1e}, {:.1}s)", r.label, r.achieved, err, r.elapsed.as_secs_f64()));
    }
    outcome(pass, parts.join("; "))
}

fn branching_ceiling(ctx: &mut Context) -> Result<Outcome> {
    let shape = PulseShape::from_fwhm(1.8e-6, 4.0, 0.0, 2.0 * PI * 40e6)?;
    let t_rep = 2.0 * shape.truncation_half_width(1e-6) + 10.0 * NS;
    let train = PulseTrain::starting_at_zero(shape, 1, t_rep)?;
    let p_raman = raman_probability(&train, &ctx.scheme, dephasing(), 1e-10)?;
    let p854 = p854_of_train(&train, &ctx.scheme, dephasing(), 1e-10)?;
    let expected = raman_hom::branching_ratio(&ctx.scheme)? * p_raman;
    let rel = (p854 / expected - 1.0).abs();
    outcome(p_raman >= 0.99 && rel <= 5e-3, format!("P_Raman = {p_raman:.6}, P854 = {p854:.6}, 0.90·P_Raman = {expected:.6}, rel {rel:.1e}"))
}

fn mean_n_regime(ctx: &mut Context) -> Result<Outcome> {
    let scheme = ctx.scheme;
    let rows = ctx.series_n()?;
    let mut values = Vec::new();
    for r in rows {
        values.push(mean_back_decays(&r.train, &scheme, dephasing(), &Resolution::default())?);
    }
    let in_range = values.iter().all(|&n| n > 0.0 && n < 0.5);
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let list: Vec<String> = rows.iter().zip(&values).map(|(r, n)| format!("{} {n:.4}", r.label)).collect();
    outcome(in_range && increasing, format!("<N> = [{}]", list.join(", ")))
}

fn oracle_equivalence(ctx: &mut Context) -> Result<Outcome> {
    let scheme = ctx.scheme;
    let rows = ctx.series_n()?;
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, idx) in [0usize, 2, 4].into_iter().enumerate() {
        let r = &rows[idx];
        let me_n = mean_back_decays(&r.train, &scheme, dephasing(), &Resolution::default())?;
        let me_p = p854_of_train(&r.train, &scheme, dephasing(), 1e-10)?;
        let (stats, _) = run_trajectories(&r.train, &scheme, dephasing(), 100_000, 11 + k as u64)?;
        let (mc_n, se_n) = empirical_mean_n(&stats)?;
        let (mc_p, se_p) = empirical_p854(&stats);
        let zn = (mc_n - me_n) / se_n;
        let zp = (mc_p - me_p) / se_p;
        pass &= zn.abs() < 3.0 && zp.abs() < 3.0;
        parts.push(format!("{}: <N> {me_n:.4}/{mc_n:.4} (z {zn:+.2}), P854 {me_p:.5}/{mc_p:.5} (z {zp:+.2})", r.label));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 600.0;
    outcome(pass, format!("{}; {secs:.0}s", parts.join("; ")))
}

fn causality(ctx: &mut Context) -> Result<Outcome> {
    let scheme = ctx.scheme;
    let train = ctx.series_n()?[2].train.clone().with_pulses(3);
    let (a, b) = train.cell(1);
    let grid = DelayGrid {
        t_start: a,
        t_end: b,
        tau_min: -0.5 * train.t_rep,
        tau_max: 0.5 * train.t_rep,
        resolution: Resolution { step: 0.5 * NS, tolerance: 1e-10 },
    };
    let g = g2_back_decay(&train, &scheme, dephasing(), &grid)?;
    let nt = g.tau.len();
    let mut worst: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for i in 0..g.t.len() {
        for j in 0..nt {
            let v = g.values[i * nt + j];
            if g.tau[j] > 0.0 {
                worst = worst.max(v.abs());
            } else {
                peak = peak.max(v);
            }
        }
    }
    outcome(
        worst <= 1e-14 && peak > 0.0 && g.positive_delay_entries > 0,
        format!("max |G| at τ > 0: {worst:e} over {} entries (peak at τ ≤ 0: {peak:.3e} s⁻²)", g.positive_delay_entries),
    )
}

fn hygiene(ctx: &mut Context) -> Result<Outcome> {
    let scheme = ctx.scheme;
    let mut trains: Vec<(String, PulseTrain)> = ctx.series_n()?.iter().map(|r| (r.label.clone(), r.train.clone())).collect();
    trains.extend(ctx.series_v()?.iter().map(|r| (r.label.clone(), r.train.clone())));
    let mut worst_trace: f64 = 0.0;
    let mut worst_eig: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut states = 0usize;
    for (_, train) in &trains {
        let grid = SimGrid::for_train(train, 0.25 * NS, 1e-10)?;
        let traj = raman_hom::propagate(&DensityMatrix::ground(), train, &scheme, dephasing(), &grid)?;
        for rho in &traj.states {
            worst_trace = worst_trace.max((rho.trace() - 1.0).abs());
            worst_eig = worst_eig.min(rho.min_eigenvalue());
        }
        states += traj.states.len();
        let p1 = p854_of_train(train, &scheme, dephasing(), 1e-10)?;
        let p2 = p854_of_train(train, &scheme, dephasing(), 5e-11)?;
        worst_shift = worst_shift.max((p1 - p2).abs());
    }
    outcome(
        worst_trace <= 1e-8 && worst_eig >= -1e-10 && worst_shift < 1e-6,
        format!(
            "{} trains, {states} states: max |Tr−1| {worst_trace:.1e}, min eig {worst_eig:.1e}, tolerance-halving ΔP854 {worst_shift:.1e}",
            trains.len()
        ),
    )
}

/// Single-pulse 854 nm coherence grid of a calibrated train.
fn coherence(train: &PulseTrain, scheme: &LevelScheme, dephasing: f64, step: f64) -> Result<raman_hom::CoherenceGrid> {
    let grid = SimGrid::new(train.start(), train.end(), step, 1e-10)?;
    g1(train, scheme, dephasing, Channel::Raman854, &grid)
}

fn pure_emitter(ctx: &mut Context) -> Result<(PulseTrain, raman_hom::CoherenceGrid)> {
    let train = ctx.series_v()?[0].train.clone().with_pulses(1);
    let scheme = ctx.scheme.without_back_decay();
    let a = coherence(&train, &scheme, 0.0, 0.25 * NS)?;
    Ok((train, a))
}

fn ideal_hom(ctx: &mut Context) -> Result<Outcome> {
    let (train, a) = pure_emitter(ctx)?;
    let m = HomModel::new(&a, &a, &BeamSplitter::balanced(), 0.5 * train.t_rep)?;
    let mut windows: Vec<f64> = (1..).map(|k| k as f64 * NS).take_while(|&w| w < train.t_rep).collect();
    windows.push(train.t_rep);
    let det = DetectionModel::default();
    let v = visibility_curve(&m.detected(&det, false)?, &m.detected(&det, true)?, &windows)?;
    let worst = v.values.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    outcome(worst <= 1e-6, format!("{} windows up to T_rep: max |V−1| = {worst:.1e}", windows.len()))
}

fn unbalanced_splitter(ctx: &mut Context) -> Result<Outcome> {
    let (train, a) = pure_emitter(ctx)?;
    let t = 0.436;
    let m = HomModel::new(&a, &a, &BeamSplitter::new(t)?, 0.5 * train.t_rep)?;
    let det = DetectionModel::default();
    let v0 = visibility_at_zero_delay(&m.detected(&det, false)?, &m.detected(&det, true)?)?;
    let expect = 1.0 - (2.0 * t - 1.0).powi(2) / (t * t + (1.0 - t).powi(2));
    outcome((v0 - expect).abs() <= 1e-4, format!("V(0⁺) = {v0:.6}, closed form {expect:.6}"))
}

fn efficiency_cancellation(ctx: &mut Context) -> Result<Outcome> {
    let train = ctx.series_v()?[2].train.clone().with_pulses(1);
    let a = coherence(&train, &ctx.scheme, dephasing(), 0.5 * NS)?;
    let m = HomModel::new(&a, &a, &BeamSplitter::new(0.436)?, 0.5 * train.t_rep)?;
    let windows: Vec<f64> = (1..=23).map(|k| k as f64 * 5.0 * NS).collect();
    let balanced = DetectionModel { delta_phi: 0.15, ..Default::default() };
    let skewed = DetectionModel { eta_c: 0.25, eta_d: 0.25 / 2.14, b0: 0.0, delta_phi: 0.15 };
    let curve = |det: &DetectionModel| visibility_curve(&m.detected(det, false)?, &m.detected(det, true)?, &windows);
    let (v1, v2) = (curve(&balanced)?, curve(&skewed)?);
    let worst = v1.values.iter().zip(&v2.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    outcome(worst < 1e-10, format!("max |ΔV(T)| = {worst:.1e} over {} windows", windows.len()))
}

fn phase_randomization(ctx: &mut Context) -> Result<Outcome> {
    let train = ctx.series_v()?[2].train.clone().with_pulses(3);
    let a = coherence(&train, &ctx.scheme, dephasing(), 0.5 * NS)?;
    let r = a.restrict_to_same_pulse(&train);
    let bs = BeamSplitter::balanced();
    let det = DetectionModel::default();
    let tau_max = 1.5 * train.t_rep;
    let grids = |g: &raman_hom::CoherenceGrid| -> Result<_> {
        let m = HomModel::new(g, g, &bs, tau_max)?;
        Ok((m.detected(&det, false)?, m.detected(&det, true)?))
    };
    let (pc, sc) = grids(&a)?;
    let (pr, sr) = grids(&r)?;
    let v_coh = visibility_curve(&pc, &sc, &[train.t_rep])?.values[0];
    let v_res = visibility_curve(&pr, &sr, &[train.t_rep])?.values[0];
    let windows: Vec<f64> = (1..=10).map(|k| k as f64 * 0.1 * train.t_rep).collect();
    let residual = residual_visibility(&pr, &sr, &windows, train.t_rep)?;
    let coherent_residual = residual_visibility(&pc, &sc, &windows, train.t_rep)?;
    let last = *residual.values.last().unwrap();
    outcome(
        (v_coh - v_res).abs() <= 1e-9 && last.abs() < 0.02,
        format!(
            "V(T_rep) {v_res:.6} restricted vs {v_coh:.6} unrestricted (Δ {:.1e}); V_res(T_rep) {last:.4} restricted, {:.4} unrestricted",
            (v_coh - v_res).abs(),
            coherent_residual.values.last().unwrap()
        ),
    )
}

fn estimator_pipeline(ctx: &mut Context) -> Result<Outcome> {
    let scheme = ctx.scheme;
    let train = ctx.series_n()?[2].train.clone();
    let model_n = mean_back_decays(&train, &scheme, dephasing(), &Resolution::default())?;
    let eff = EfficiencySet { eta_393: 0.5, eta_854: 0.6, background_393: 2e3, background_854: 1e3 };
    let halved = EfficiencySet { eta_854: 0.3, ..eff };
    let clock = Clock::for_train(&train);
    let half_ps = (0.5 * train.t_rep * 1e12).round() as i64;
    let res = TAGGER_RESOLUTION_PS as i64;
    let estimate = |events: &[raman_hom::EmissionEvent], n: u64, e: &EfficiencySet, seed: u64| -> Result<(f64, f64)> {
        let rec = synthesize_detections(events, n, e, &clock, seed)?;
        let (s854, s393) = split_by_detector(&rec);
        let h = cross_correlate(&s854, &s393, TAGGER_RESOLUTION_PS, -2 * half_ps - 4 * res, half_ps + res)?;
        let dark = e.expected_background(Detector::Ir854, clock.span * n as f64).round() as u64;
        estimate_mean_n(&h, e, h.n854.saturating_sub(dark), train.t_rep)
    };
    let n = 20_000u64;
    let mut n_runs = Pooled::default();
    let mut shift = 0.0;
    for seed in 0..SEEDS {
        let (_, events) = run_trajectories(&train, &scheme, dephasing(), n, 100 + seed)?;
        let (v, se) = estimate(&events, n, &eff, 500 + seed)?;
        let (vh, _) = estimate(&events, n, &halved, 500 + seed)?;
        n_runs.push(v, se, model_n);
        shift += (vh - v) / SEEDS as f64;
    }
    let n_ok = n_runs.z().abs() < 3.0 && shift.abs() < n_runs.sigma();

    // visibility from coincidences drawn from the detected model densities
    let vtrain = ctx.series_v()?[2].train.clone().with_pulses(1);
    let a = coherence(&vtrain, &scheme, dephasing(), 0.25 * NS)?;
    let m = HomModel::new(&a, &a, &BeamSplitter::new(0.436)?, 0.5 * vtrain.t_rep)?;
    let signal: f64 = raman_hom::quad::trapezoid(&a.times, &a.intensity());
    let (eta_c, eta_d) = (0.3, 0.3 / 2.14);
    let b0 = b0_from_sbr(30.0, signal, eta_c, eta_d, vtrain.end())?;
    let det = DetectionModel { eta_c, eta_d, b0, delta_phi: 0.1 };
    let (par, perp) = (m.detected(&det, false)?, m.detected(&det, true)?);
    let model_v = visibility_curve(&par, &perp, &[vtrain.t_rep])?.values[0];
    let mut v_runs = Pooled::default();
    for seed in 0..SEEDS {
        let c = sample_coincidences(&par, &perp, 20_000.0, TAGGER_RESOLUTION_PS as f64 * 1e-12, 900 + seed)?;
        let v = estimate_visibility(&c, &[vtrain.t_rep])?;
        v_runs.push(v.values[0], v.uncertainties.as_ref().unwrap()[0], model_v);
    }
    outcome(
        n_ok && v_runs.z().abs() < 3.0,
        format!(
            "<N> model {model_n:.4}, {} pooled z {:+.2} ({} of {SEEDS} single runs beyond 3σ, max |z| {:.2}); \
             η854 halved: mean shift {shift:+.5} vs σ {:.5}; V(T_rep) model {model_v:.4}, {} pooled z {:+.2} ({} beyond 3σ, max |z| {:.2})",
            n_runs.mean_string(),
            n_runs.z(),
            n_runs.outliers(),
            n_runs.max_z(),
            n_runs.sigma(),
            v_runs.mean_string(),
            v_runs.z(),
            v_runs.outliers(),
            v_runs.max_z(),
        ),
    )
}

const SEEDS: u64 = 20;

/// Repeated estimates of one model value.
#[derive(Default)]
struct Pooled {
    values: Vec<f64>,
    errors: Vec<f64>,
    model: f64,
}

impl Pooled {
    fn push(&mut self, value: f64, error: f64, model: f64) {
        self.values.push(value);
        self.errors.push(error);
        self.model = model;
    }

    fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Typical single-run standard error.
    fn sigma(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    /// Deviation of the seed average in units of its own standard error.
    fn z(&self) -> f64 {
        let k = self.values.len() as f64;
        (self.mean() - self.model) / (self.errors.iter().map(|e| e * e).sum::<f64>().sqrt() / k)
    }

    fn single_z(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.errors).map(|(v, e)| (v - self.model) / e)
    }

    fn max_z(&self) -> f64 {
        self.single_z().map(f64::abs).fold(0.0, f64::max)
    }

    fn outliers(&self) -> usize {
        self.single_z().filter(|z| z.abs() >= 3.0).count()
    }

    fn mean_string(&self) -> String {
        format!("mean {:.4}", self.mean())
    }
}

fn pulse_fitting(_: &mut Context) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_beta: f64 = 0.0;
    let mut worst_fwhm: f64 = 0.0;
    for &(t_pulse, beta, _, _) in SERIES_N.iter().chain(SERIES_V.iter()) {
        let shape = PulseShape::from_fwhm(t_pulse * NS, beta, 0.0, 0.0)?;
        let shape = PulseShape { amplitude: 1e4, ..shape };
        let bin = 0.512 * NS;
        let n_bins = (5.0 * t_pulse * NS / bin).ceil() as i64;
        let samples: Vec<(f64, f64)> = (-n_bins..=n_bins)
            .map(|k| {
                let t = k as f64 * bin;
                let mean = shape.intensity_at(t);
                // the sampler misbehaves for vanishing means
                let count = if mean > 1e-9 { Poisson::new(mean).unwrap().sample(&mut rng) } else { 0.0 };
                (t, count)
            })
            .collect();
        let fit = fit_pulse(&samples)?;
        worst_beta = worst_beta.max((fit.shape.beta / beta - 1.0).abs());
        worst_fwhm = worst_fwhm.max((fit.fwhm / (t_pulse * NS) - 1.0).abs());
    }
    let mut worst_trip: f64 = 0.0;
    for k in 0..1000 {
        let beta = 0.5 + 9.5 * (k as f64 * 0.618_033_988_75).fract();
        let t = (1.0 + 99.0 * (k as f64 * 0.414_213_562_37).fract()) * NS;
        let back = fwhm(sigma_for_fwhm(t, beta)?, beta)?;
        worst_trip = worst_trip.max((back / t - 1.0).abs());
    }
    outcome(
        worst_beta < 0.02 && worst_fwhm < 0.01 && worst_trip <= 4.0 * f64::EPSILON,
        format!("11 rows: max β error {:.2}%, max FWHM error {:.3}%; FWHM↔σ round trip {worst_trip:.1e}", 100.0 * worst_beta, 100.0 * worst_fwhm),
    )
}

fn ordering(ctx: &mut Context) -> Result<Outcome> {
    let scheme = ctx.scheme;
    let rows = ctx.series_v()?;
    let mut pairs = Vec::new();
    for r in rows {
        let n = mean_back_decays(&r.train, &scheme, dephasing(), &Resolution::default())?;
        let one = r.train.clone().with_pulses(1);
        let a = coherence(&one, &scheme, dephasing(), 0.25 * NS)?;
        let m = HomModel::new(&a, &a, &BeamSplitter::balanced(), 0.5 * one.t_rep)?;
        let v = m.visibility(&DetectionModel::default(), &[one.t_rep])?.values[0];
        pairs.push((r.label.clone(), n, v));
    }
    let mut sorted = pairs.clone();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let pass = sorted.windows(2).all(|w| w[1].1 > w[0].1 && w[1].2 < w[0].2);
    let list: Vec<String> = pairs.iter().map(|(l, n, v)| format!("{l} ({n:.4}, {v:.4})")).collect();
    outcome(pass, format!("(<N>, V(T_rep)) = {}", list.join(", ")))
}

type Criterion = fn(&mut Context) -> Result<Outcome>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 13] = [
        ("calibration fidelity", calibration),
        ("branching ceiling", branching_ceiling),
        ("<N> regime", mean_n_regime),
        ("oracle equivalence", oracle_equivalence),
        ("causality", causality),
        ("numerical hygiene", hygiene),
        ("ideal HOM", ideal_hom),
        ("unbalanced splitter", unbalanced_splitter),
        ("imperfection algebra", efficiency_cancellation),
        ("phase randomization", phase_randomization),
        ("estimator pipeline", estimator_pipeline),
        ("pulse fitting", pulse_fitting),
        ("<N> vs V(T_rep) ordering", ordering),
    ];
    let mut ctx = Context { scheme: LevelScheme::default(), series_n: None, series_v: None };
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match run(&mut ctx) {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        let id = if k < 12 { format!("{:>2}", k + 1) } else { " +".to_string() };
        println!(
            "{} {id} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
