use raman_hom::correlator::{g1, g2_back_decay, mean_back_decays_fast, SamePulse};
use raman_hom::hom::{b0_from_sbr, residual_visibility, visibility_at_zero_delay, visibility_curve};
use raman_hom::lindblad::{emission_rate, fit_survival, p854_of_train, raman_areas};
use raman_hom::pulse::{fit_pulse, read_histogram_csv};
use raman_hom::timetags::{
    cross_correlate, estimate_mean_n, estimate_visibility, read_coincidences_csv, read_records_csv,
    sample_coincidences, split_by_detector, synthesize_detections, write_coincidences_csv, write_records_csv, Clock,
    Coincidence, Detector, TAGGER_RESOLUTION_PS,
};
use raman_hom::trajectory::{empirical_mean_n, empirical_p854, run_trajectories_with, write_events_csv};
use raman_hom::atomic::{D850, D854, E, G};
use raman_hom::{propagate, Channel, CorrelationGrid, DelayGrid, DensityMatrix, HomModel, PulseTrain};

use crate::failure::{Context, Failure};
use crate::output::{Cell, Outputs};
use crate::scenario::{build_train, Drive, Loaded};
use crate::seeds::Seeds;

pub struct Run<'a> {
    pub scenario: &'a Loaded,
    pub out: &'a mut Outputs,
    pub seeds: &'a mut Seeds,
}

fn io_config(what: &str, path: &std::path::Path, e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{what} {}: {e}", path.display()))
}

/// Coincidence windows `step, 2·step, …` below T_rep, then T_rep itself.
fn windows(step: f64, t_rep: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (1..).map(|k| k as f64 * step).take_while(|&x| x < t_rep * (1.0 - 1e-12)).collect();
    w.push(t_rep);
    w
}

fn record_drive(out: &mut Outputs, train: &PulseTrain, cal: Option<&raman_hom::pulse::Calibration>) {
    out.result("peak_rabi_rad_s", train.shape.peak_rabi);
    if let Some(c) = cal {
        out.result("calibrated_p854", c.achieved_p854);
        out.result("calibration_evaluations", c.evaluations as u64);
    }
}

pub fn fit_pulse_cmd(run: Run) -> Result<(), Failure> {
    let l = run.scenario;
    let s = l.pulse_section()?;
    let Some(rel) = &s.get_ref().histogram else {
        return Err(l.at(s, "pulse", "fit-pulse needs `histogram`"));
    };
    let path = l.resolve(rel);
    let file = std::fs::File::open(&path).map_err(|e| io_config("cannot open histogram", &path, e))?;
    let samples = read_histogram_csv(file).map_err(|e| io_config("bad histogram", &path, e))?;
    let fit = fit_pulse(&samples).ctx("pulse fit")?;
    let sh = fit.shape;
    run.out.table(
        "pulse_fit.csv",
        &["parameter", "value", "std_error"],
        [
            ("amplitude".to_string(), sh.amplitude, fit.amplitude_err),
            ("center_s".into(), sh.center, fit.center_err),
            ("sigma_s".into(), sh.sigma, fit.sigma_err),
            ("beta".into(), sh.beta, fit.beta_err),
            ("fwhm_s".into(), fit.fwhm, fit.fwhm_err),
        ]
        .into_iter()
        .map(|(n, v, e)| [n, v.cell(), e.cell()]),
    )?;
    run.out.table(
        "pulse_fit_model.csv",
        &["t_s", "counts", "model"],
        samples.iter().map(|&(t, c)| [t, c, sh.intensity_at(t)]),
    )?;
    run.out.result("fwhm_s", fit.fwhm);
    run.out.result("beta", sh.beta);
    run.out.result("reduced_chi2", fit.reduced_chi2);
    Ok(())
}

pub fn calibrate(run: Run) -> Result<(), Failure> {
    let l = run.scenario;
    let s = l.pulse_section()?;
    let Some(target) = s.get_ref().target_p854 else {
        return Err(l.at(s, "pulse", "calibrate needs `target_p854`"));
    };
    let bare = l.bare_train()?;
    let (train, cal) = l.drive(bare.clone(), Drive::Target(target)).map_err(|f| l.anchor(s, "pulse", f))?;
    let cal = cal.expect("target drive calibrates");
    run.out.table(
        "calibration.csv",
        &["fwhm_s", "beta", "t_rep_s", "target_p854", "peak_rabi_rad_s", "achieved_p854", "evaluations"],
        [[
            bare.shape.fwhm().cell(),
            bare.shape.beta.cell(),
            bare.t_rep.cell(),
            target.cell(),
            cal.peak_rabi.cell(),
            cal.achieved_p854.cell(),
            (cal.evaluations as u64).cell(),
        ]],
    )?;
    record_drive(run.out, &train, Some(&cal));
    Ok(())
}

pub fn train_cmd(run: Run) -> Result<(), Failure> {
    let l = run.scenario;
    let (train, cal) = l.train()?;
    let scheme = l.scheme()?;
    let deph = l.dephasing();
    let grid = l.sim_grid(&train)?;
    let traj = propagate(&DensityMatrix::ground(), &train, &scheme, deph, &grid).ctx("propagation")?;
    run.out.table(
        "populations.csv",
        &["t_s", "p_g", "p_e", "p_d854", "p_d850"],
        traj.times.iter().zip(&traj.states).map(|(t, r)| {
            [*t, r.population(G), r.population(E), r.population(D854), r.population(D850)]
        }),
    )?;
    let rates: Vec<Vec<f64>> = Channel::ALL.iter().map(|&c| emission_rate(&traj, &scheme, c)).collect();
    run.out.table(
        "emission.csv",
        &["t_s", "rate_393", "rate_854", "rate_850"],
        traj.times.iter().enumerate().map(|(i, t)| [*t, rates[0][i], rates[1][i], rates[2][i]]),
    )?;
    let areas = raman_areas(&train, &scheme, deph, grid.tolerance).ctx("pulse areas")?;
    run.out.table("pulse_areas.csv", &["pulse", "p854"], areas.iter().enumerate().map(|(k, a)| [(k as u64).cell(), a.cell()]))?;
    record_drive(run.out, &train, cal.as_ref());
    let last = traj.states.last().expect("grid is not empty");
    run.out.result("p854_total", last.population(D854));
    if train.n_pulses >= 3 {
        let fit = fit_survival(&areas).ctx("survival fit")?;
        run.out.result("survival_per_pulse", fit.survival);
        run.out.result("p_raman_per_pulse", fit.p_raman);
    }
    Ok(())
}

pub fn backdecay(run: Run) -> Result<(), Failure> {
    let l = run.scenario;
    let (train, cal) = l.train()?;
    let scheme = l.scheme()?;
    let deph = l.dephasing();
    let resolution = l.resolution()?;
    let b = l.section(&l.scenario.backdecay);
    let cell = b.and_then(|b| b.cell).unwrap_or(if train.n_pulses >= 3 { 1 } else { 0 });
    if cell >= train.n_pulses {
        let s = l.scenario.backdecay.as_ref().expect("cell was given");
        return Err(l.at(s, "backdecay", format!("cell {cell} is outside a {}-pulse train", train.n_pulses)));
    }
    let span = b.and_then(|b| b.tau_span).map_or(0.5 * train.t_rep, |t| t.0);
    let (t0, t1) = train.cell(cell);
    let grid = DelayGrid { t_start: t0, t_end: t1, tau_min: -span, tau_max: span, resolution };
    let g = g2_back_decay(&train, &scheme, deph, &grid).ctx("back-decay correlation")?;
    run.out.write_with("g2_back_decay.csv", |w| g.write_csv(w))?;
    run.out.table(
        "g2_back_decay_marginal.csv",
        &["tau_s", "g2_integrated"],
        g.tau.iter().zip(g.tau_marginal()).map(|(t, m)| [*t, m]),
    )?;
    let n = mean_back_decays_fast(&train, &scheme, deph, &resolution).ctx("mean back-decay number")?;
    run.out.table(
        "mean_n.csv",
        &["mean_n", "correlated", "p854_total"],
        [[n.value, n.correlated, n.raman]],
    )?;
    record_drive(run.out, &train, cal.as_ref());
    run.out.result("cell", cell as u64);
    run.out.result("mean_n", n.value);
    run.out.result("positive_delay_entries", g.positive_delay_entries as u64);
    Ok(())
}

pub fn nmean_sweep(run: Run) -> Result<(), Failure> {
    let l = run.scenario;
    if l.scenario.sweep.is_empty() {
        return Err(Failure::Config(format!("{}: nmean-sweep needs [[sweep]] rows", l.path.display())));
    }
    let scheme = l.scheme()?;
    let deph = l.dephasing();
    let resolution = l.resolution()?;
    let mut rows = Vec::new();
    for s in &l.scenario.sweep {
        let r = s.get_ref();
        let bare = build_train(r.fwhm.0, r.beta, r.t_rep.0, r.pulses.unwrap_or(80)).map_err(|e| l.at(s, "sweep", e))?;
        let drive = Drive::from_options(r.peak_rabi, r.target_p854).map_err(|e| l.at(s, "sweep", e))?;
        let (train, _) = l.drive(bare, drive).map_err(|f| l.anchor(s, "sweep", f))?;
        let p854 = p854_of_train(&train, &scheme, deph, resolution.tolerance).ctx("P854")?;
        let n = mean_back_decays_fast(&train, &scheme, deph, &resolution).ctx("mean back-decay number")?;
        crate::note!("sweep row {} ns: ⟨N⟩ = {:.5}", r.fwhm.0 * 1e9, n.value);
        rows.push((r.fwhm.0, r.beta, r.t_rep.0, train.n_pulses as u64, train.shape.peak_rabi, p854, n.value));
    }
    run.out.table(
        "nmean_sweep.csv",
        &["fwhm_s", "beta", "t_rep_s", "pulses", "peak_rabi_rad_s", "p854", "mean_n"],
        rows.iter().map(|r| [r.0.cell(), r.1.cell(), r.2.cell(), r.3.cell(), r.4.cell(), r.5.cell(), r.6.cell()]),
    )?;
    run.out.result("mean_n", rows.iter().map(|r| r.6).collect::<Vec<_>>());
    Ok(())
}

pub fn trajectories(run: Run) -> Result<(), Failure> {
    let l = run.scenario;
    let (train, cal) = l.train()?;
    let n = l.trajectory_count()?;
    let seed = run.seeds.stream("trajectories");
    let tol = l.resolution()?.tolerance;
    let (stats, events) =
        run_trajectories_with(&train, &l.scheme()?, l.dephasing(), n, seed, tol).ctx("trajectories")?;
    run.out.table(
        "histogram.csv",
        &["back_decays", "trajectories"],
        stats.histogram.iter().enumerate().map(|(k, c)| [k as u64, *c]),
    )?;
    run.out.table(
        "raman_by_pulse.csv",
        &["pulse", "raman_photons"],
        stats.raman_by_pulse.iter().enumerate().map(|(k, c)| [k as u64, *c]),
    )?;
    let (mean_n, mean_se) = empirical_mean_n(&stats).ctx("empirical ⟨N⟩")?;
    let (p854, p_se) = empirical_p854(&stats);
    run.out.table(
        "summary.csv",
        &["quantity", "value", "std_error"],
        [
            ["mean_n".to_string(), mean_n.cell(), mean_se.cell()],
            ["p854".into(), p854.cell(), p_se.cell()],
        ],
    )?;
    if l.section(&l.scenario.trajectories).and_then(|t| t.write_events).unwrap_or(true) {
        run.out.write_with("events.csv", |w| write_events_csv(&events, w))?;
    }
    record_drive(run.out, &train, cal.as_ref());
    run.out.result("trajectories", n);
    run.out.result("mean_n", mean_n);
    run.out.result("mean_n_std_error", mean_se);
    run.out.result("p854", p854);
    run.out.result("p854_std_error", p_se);
    Ok(())
}

/// Two copies of the scenario emitter in front of the beam splitter.
struct HomContext {
    train: PulseTrain,
    coherence: raman_hom::CoherenceGrid,
    splitter: raman_hom::BeamSplitter,
    detection: raman_hom::DetectionModel,
    tau_max: f64,
}

/// Detected parallel and perpendicular coincidence densities.
struct Detected {
    parallel: CorrelationGrid,
    perpendicular: CorrelationGrid,
}

fn hom_context(l: &Loaded, default_pulses: usize) -> Result<HomContext, Failure> {
    let h = l.section(&l.scenario.hom);
    let pulses = h.and_then(|h| h.pulses).unwrap_or(default_pulses);
    if pulses == 0 {
        return Err(l.hom_error("pulses must be positive"));
    }
    let (train, _) = l.train()?;
    let train = train.with_pulses(pulses);
    let ideal = h.and_then(|h| h.ideal).unwrap_or(false);
    let (scheme, deph) = if ideal { (l.scheme()?.without_back_decay(), 0.0) } else { (l.scheme()?, l.dephasing()) };
    let grid = l.sim_grid(&train)?;
    let coherence = g1(&train, &scheme, deph, Channel::Raman854, &grid).ctx("first-order coherence")?;
    let mut detection = l.detection_model()?;
    if let Some(sbr) = h.and_then(|h| h.sbr) {
        let signal = raman_hom::quad::trapezoid(&coherence.times, &coherence.intensity());
        detection.b0 =
            b0_from_sbr(sbr, signal, detection.eta_c, detection.eta_d, train.end()).map_err(|e| l.hom_error(e))?;
    }
    // side peaks need delays out to 1.5 T_rep
    let tau_max = if pulses > 1 { 1.5 * train.t_rep } else { 0.5 * train.t_rep };
    Ok(HomContext { train, coherence, splitter: l.beam_splitter()?, detection, tau_max })
}

impl HomContext {
    fn detect(&self, same_pulse: bool) -> Result<Detected, Failure> {
        let restricted;
        let g = if same_pulse {
            restricted = self.coherence.restrict_to_same_pulse(&self.train);
            &restricted
        } else {
            &self.coherence
        };
        let m = HomModel::new(g, g, &self.splitter, self.tau_max).ctx("HOM model")?;
        Ok(Detected {
            parallel: m.detected(&self.detection, false).ctx("parallel coincidences")?,
            perpendicular: m.detected(&self.detection, true).ctx("perpendicular coincidences")?,
        })
    }
}

fn window_step(l: &Loaded) -> f64 {
    l.section(&l.scenario.hom).and_then(|h| h.window_step).map_or(1e-9, |t| t.0)
}

pub fn hom(run: Run) -> Result<(), Failure> {
    let l = run.scenario;
    let same = l.section(&l.scenario.hom).and_then(|h| h.same_pulse).unwrap_or(false);
    let ctx = hom_context(l, 1)?;
    let m = ctx.detect(same)?;
    let w = windows(window_step(l), ctx.train.t_rep);
    let v = visibility_curve(&m.parallel, &m.perpendicular, &w).ctx("visibility")?;
    let v0 = visibility_at_zero_delay(&m.parallel, &m.perpendicular).ctx("zero-delay visibility")?;
    run.out.write_with("visibility.csv", |out| v.write_csv(out))?;
    run.out.table(
        "hom_marginal.csv",
        &["tau_s", "parallel", "perpendicular"],
        m.parallel
            .tau
            .iter()
            .zip(m.parallel.tau_marginal())
            .zip(m.perpendicular.tau_marginal())
            .map(|((t, a), b)| [*t, a, b]),
    )?;
    run.out.result("visibility_t_rep", *v.values.last().expect("windows end at T_rep"));
    run.out.result("visibility_zero_delay", v0);
    Ok(())
}

pub fn residual(run: Run) -> Result<(), Failure> {
    let l = run.scenario;
    let ctx = hom_context(l, 3)?;
    let t_rep = ctx.train.t_rep;
    if ctx.train.n_pulses < 3 {
        return Err(l.hom_error("residual visibility needs at least 3 pulses"));
    }
    let (coherent, randomized) = (ctx.detect(false)?, ctx.detect(true)?);
    let w: Vec<f64> = (1..=20).map(|k| k as f64 * 0.05 * t_rep).collect();
    let vc = residual_visibility(&coherent.parallel, &coherent.perpendicular, &w, t_rep).ctx("residual visibility")?;
    let vr =
        residual_visibility(&randomized.parallel, &randomized.perpendicular, &w, t_rep).ctx("residual visibility")?;
    run.out.table(
        "residual.csv",
        &["window_s", "v_res_coherent", "v_res_randomized"],
        w.iter().zip(&vc.values).zip(&vr.values).map(|((t, a), b)| [*t, *a, *b]),
    )?;
    let full = |s: &Detected| visibility_curve(&s.parallel, &s.perpendicular, &[t_rep]).map(|v| v.values[0]);
    run.out.result("visibility_t_rep_coherent", full(&coherent).ctx("visibility")?);
    run.out.result("visibility_t_rep_randomized", full(&randomized).ctx("visibility")?);
    run.out.result("v_res_t_rep_randomized", *vr.values.last().expect("20 windows"));
    Ok(())
}

pub fn analyze(run: Run) -> Result<(), Failure> {
    let l = run.scenario;
    let (train, cal) = l.train()?;
    let eff = l.efficiencies()?;
    let det = l.section(&l.scenario.detection);
    let res_s = det.and_then(|d| d.resolution).map_or(TAGGER_RESOLUTION_PS as f64 * 1e-12, |t| t.0);
    let res_ps = (res_s * 1e12).round() as u64;
    if res_ps == 0 {
        let s = l.scenario.detection.as_ref().expect("resolution was given");
        return Err(l.at(s, "detection", "resolution must be at least 1 ps"));
    }
    let clock = Clock::for_train(&train).with_resolution(res_ps);

    let (records, cycles) = match det.and_then(|d| d.records.as_ref()) {
        Some(rel) => {
            let path = l.resolve(rel);
            let f = std::fs::File::open(&path).map_err(|e| io_config("cannot open records", &path, e))?;
            let rec = read_records_csv(f).map_err(|e| io_config("bad records", &path, e))?;
            let cycles = match l.section(&l.scenario.trajectories).and_then(|t| t.count) {
                Some(n) => n,
                None => rec.iter().map(|r| r.cycle + 1).max().unwrap_or(0),
            };
            (rec, cycles)
        }
        None => {
            let n = l.trajectory_count()?;
            let tol = l.resolution()?.tolerance;
            let seed = run.seeds.stream("trajectories");
            let (_, events) =
                run_trajectories_with(&train, &l.scheme()?, l.dephasing(), n, seed, tol).ctx("trajectories")?;
            let rec = synthesize_detections(&events, n, &eff, &clock, run.seeds.stream("detections"))
                .ctx("detection synthesis")?;
            run.out.write_with("detections.csv", |w| write_records_csv(&rec, w))?;
            (rec, n)
        }
    };
    let (s854, s393) = split_by_detector(&records);
    let half = (0.5 * train.t_rep * 1e12).round() as i64;
    let r = res_ps as i64;
    let hist = cross_correlate(&s854, &s393, res_ps, -2 * half - 4 * r, half + r).ctx("cross-correlation")?;
    run.out.write_with("delay_histogram.csv", |w| hist.write_csv(w))?;
    let dark = eff.expected_background(Detector::Ir854, clock.span * cycles as f64).round() as u64;
    let (mean_n, se) = estimate_mean_n(&hist, &eff, hist.n854.saturating_sub(dark), train.t_rep).ctx("⟨N⟩ estimate")?;
    let mut rows = vec![["mean_n".to_string(), mean_n.cell(), se.cell()]];
    run.out.result("mean_n", mean_n);
    run.out.result("mean_n_std_error", se);
    run.out.result("cycles", cycles);
    run.out.result("detections", records.len() as u64);

    let coincidences: Option<Vec<Coincidence>> = match det.and_then(|d| d.coincidence_file.as_ref()) {
        Some(rel) => {
            let path = l.resolve(rel);
            let f = std::fs::File::open(&path).map_err(|e| io_config("cannot open coincidences", &path, e))?;
            Some(read_coincidences_csv(f).map_err(|e| io_config("bad coincidences", &path, e))?)
        }
        None => match det.and_then(|d| d.coincidences).unwrap_or(0.0) {
            x if x > 0.0 => {
                let m = hom_context(l, 1)?.detect(false)?;
                let c = sample_coincidences(&m.parallel, &m.perpendicular, x, res_s, run.seeds.stream("coincidences"))
                    .ctx("coincidence sampling")?;
                run.out.write_with("coincidences.csv", |w| write_coincidences_csv(&c, w))?;
                let model = visibility_curve(&m.parallel, &m.perpendicular, &[train.t_rep]).ctx("visibility")?;
                run.out.result("visibility_t_rep_model", model.values[0]);
                Some(c)
            }
            x if x < 0.0 => {
                let s = l.scenario.detection.as_ref().expect("coincidences was given");
                return Err(l.at(s, "detection", "coincidences must be non-negative"));
            }
            _ => None,
        },
    };
    if let Some(c) = coincidences {
        let w = windows(window_step(l), train.t_rep);
        let v = estimate_visibility(&c, &w).ctx("visibility estimate")?;
        run.out.write_with("visibility_estimate.csv", |out| v.write_csv(out))?;
        let last = v.values.len() - 1;
        let err = v.uncertainties.as_ref().map_or(f64::NAN, |u| u[last]);
        rows.push(["visibility_t_rep".into(), v.values[last].cell(), err.cell()]);
        run.out.result("visibility_t_rep", v.values[last]);
        run.out.result("visibility_t_rep_std_error", err);
    }
    run.out.table("estimates.csv", &["quantity", "value", "std_error"], rows)?;
    record_drive(run.out, &train, cal.as_ref());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::windows;

    #[test]
    fn windows_end_exactly_at_the_period() {
        let w = windows(1e-9, 104.25e-9);
        assert_eq!(w.len(), 105);
        assert_eq!(*w.last().unwrap(), 104.25e-9);
        let w = windows(1e-9, 4e-9);
        assert_eq!(w.len(), 4);
        assert_eq!(w[3], 4e-9);
    }
}
