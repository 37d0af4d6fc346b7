//! Synthetic detector records and the estimators that run on timestamps:
//! cross-correlation histograms, the back-decay number and HOM visibility
//! from labelled coincidences.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::atomic::Channel;
use crate::correlator::CorrelationGrid;
use crate::error::{Error, Result};
use crate::hom::VisibilityCurve;
use crate::pulse::PulseTrain;
use crate::trajectory::EmissionEvent;

/// Time-tagger resolution (ps).
pub const TAGGER_RESOLUTION_PS: u64 = 625;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detector {
    Uv393,
    Ir854,
}

impl Detector {
    pub fn id(self) -> u8 {
        match self {
            Detector::Uv393 => 0,
            Detector::Ir854 => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Detector::Uv393),
            1 => Ok(Detector::Ir854),
            _ => Err(Error::Domain(format!("unknown detector id {id}"))),
        }
    }
}

/// What caused a click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Photon(Channel),
    Background,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Photon(c) => f.write_str(c.label()),
            Origin::Background => f.write_str("background"),
        }
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "background" {
            Ok(Origin::Background)
        } else {
            Ok(Origin::Photon(s.parse()?))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionRecord {
    pub detector: Detector,
    /// Time since the start of the cycle, a multiple of the clock resolution.
    pub timestamp_ps: u64,
    pub origin: Origin,
    pub cycle: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencySet {
    pub eta_393: f64,
    pub eta_854: f64,
    /// Dark-count rates (s⁻¹).
    pub background_393: f64,
    pub background_854: f64,
}

impl EfficiencySet {
    pub fn ideal() -> Self {
        EfficiencySet { eta_393: 1.0, eta_854: 1.0, background_393: 0.0, background_854: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [("eta_393", self.eta_393), ("eta_854", self.eta_854)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::Domain(format!("{name} = {eta} outside [0, 1]")));
            }
        }
        for (name, r) in [("background_393", self.background_393), ("background_854", self.background_854)] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Domain(format!("{name} = {r} must be a finite rate >= 0")));
            }
        }
        Ok(())
    }

    /// Mean number of dark counts on `detector` over `exposure` seconds.
    pub fn expected_background(&self, detector: Detector, exposure: f64) -> f64 {
        match detector {
            Detector::Uv393 => self.background_393 * exposure,
            Detector::Ir854 => self.background_854 * exposure,
        }
    }

    fn eta(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Back393 => self.eta_393,
            Channel::Raman854 => self.eta_854,
            Channel::Raman850 => 0.0,
        }
    }
}

/// Cycle time base: where a cycle starts, how long detectors are open, and
/// the timestamp quantum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clock {
    pub origin: f64,
    pub span: f64,
    pub resolution_ps: u64,
}

impl Clock {
    pub fn for_train(train: &PulseTrain) -> Self {
        Clock { origin: train.start(), span: train.end() - train.start(), resolution_ps: TAGGER_RESOLUTION_PS }
    }

    pub fn with_resolution(self, resolution_ps: u64) -> Self {
        Clock { resolution_ps, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.resolution_ps == 0 || !(self.span > 0.0) || !self.origin.is_finite() {
            return Err(Error::Domain("clock needs a positive span and resolution".into()));
        }
        Ok(())
    }

    fn quantize(&self, t: f64) -> u64 {
        let ps = ((t - self.origin) * 1e12).max(0.0);
        (ps / self.resolution_ps as f64).floor() as u64 * self.resolution_ps
    }
}

/// Thins emission events by channel efficiency and adds Poisson background
/// on each detector. Trajectory `i` is cycle `i`; cycles without events
/// still collect background. Cycle `c` draws from stream `c` of a ChaCha8
/// generator keyed by `seed`.
///
/// `events` must be grouped by trajectory, as produced by the oracle.
pub fn synthesize_detections(
    events: &[EmissionEvent],
    n_cycles: u64,
    eff: &EfficiencySet,
    clock: &Clock,
    seed: u64,
) -> Result<Vec<DetectionRecord>> {
    eff.validate()?;
    clock.validate()?;
    let bg = [
        (Detector::Uv393, Poisson::new(eff.background_393 * clock.span).ok()),
        (Detector::Ir854, Poisson::new(eff.background_854 * clock.span).ok()),
    ];
    let mut out = Vec::new();
    let mut rest = events;
    for cycle in 0..n_cycles {
        let k = rest.iter().position(|e| e.trajectory != cycle).unwrap_or(rest.len());
        let (mine, tail) = rest.split_at(k);
        rest = tail;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(cycle);
        let start = out.len();
        for e in mine {
            let eta = eff.eta(e.channel);
            if rng.gen::<f64>() < eta {
                let detector = match e.channel {
                    Channel::Back393 => Detector::Uv393,
                    _ => Detector::Ir854,
                };
                out.push(DetectionRecord { detector, timestamp_ps: clock.quantize(e.time), origin: Origin::Photon(e.channel), cycle });
            }
        }
        for (detector, dist) in &bg {
            let Some(dist) = dist else { continue };
            let n = dist.sample(&mut rng) as u64;
            for _ in 0..n {
                let t = clock.origin + rng.gen::<f64>() * clock.span;
                out.push(DetectionRecord { detector: *detector, timestamp_ps: clock.quantize(t), origin: Origin::Background, cycle });
            }
        }
        out[start..].sort_by_key(|r| (r.timestamp_ps, r.detector));
    }
    if !rest.is_empty() {
        return Err(Error::Domain(format!(
            "events must be grouped by trajectory id below {n_cycles}; found id {}",
            rest[0].trajectory
        )));
    }
    Ok(out)
}

/// Histogram of `t_393 − t_854` over same-cycle pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayHistogram {
    /// Lower edge of bin 0 (ps).
    pub tau_min_ps: i64,
    pub bin_ps: u64,
    pub counts: Vec<u64>,
    /// 854 nm clicks that served as start events.
    pub n854: u64,
}

impl DelayHistogram {
    pub fn is_empty(&self) -> bool {
        self.n854 == 0
    }

    pub fn bin_lower(&self, k: usize) -> i64 {
        self.tau_min_ps + k as i64 * self.bin_ps as i64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts in bins whose lower edge lies in `[lo, hi]` (ps).
    pub fn count_between(&self, lo: i64, hi: i64) -> (u64, usize) {
        let mut c = 0;
        let mut bins = 0;
        for (k, n) in self.counts.iter().enumerate() {
            let x = self.bin_lower(k);
            if x >= lo && x <= hi {
                c += n;
                bins += 1;
            }
        }
        (c, bins)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau_bin_ps", "count"])?;
        for (k, n) in self.counts.iter().enumerate() {
            w.write_record([self.bin_lower(k).to_string(), n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cross-correlates the 854 nm and 393 nm clicks of each cycle into bins of
/// `bin_ps` covering `[tau_min_ps, tau_max_ps)`.
///
/// Records may come in any order; pairs from different cycles are never
/// matched.
pub fn cross_correlate(
    s854: &[DetectionRecord],
    s393: &[DetectionRecord],
    bin_ps: u64,
    tau_min_ps: i64,
    tau_max_ps: i64,
) -> Result<DelayHistogram> {
    if bin_ps == 0 || tau_max_ps <= tau_min_ps {
        return Err(Error::Domain("histogram needs a positive bin and a non-empty range".into()));
    }
    let n_bins = ((tau_max_ps - tau_min_ps) as u64).div_ceil(bin_ps) as usize;
    let mut counts = vec![0u64; n_bins];
    let by_cycle = |s: &[DetectionRecord]| {
        let mut v: Vec<(u64, i64)> = s.iter().map(|r| (r.cycle, r.timestamp_ps as i64)).collect();
        v.sort_unstable();
        v
    };
    let starts = by_cycle(s854);
    let stops = by_cycle(s393);
    let mut j0 = 0;
    for &(cycle, t854) in &starts {
        while j0 < stops.len() && stops[j0].0 < cycle {
            j0 += 1;
        }
        for &(c, t393) in &stops[j0..] {
            if c != cycle {
                break;
            }
            let tau = t393 - t854;
            if tau >= tau_min_ps && tau < tau_max_ps {
                counts[((tau - tau_min_ps) / bin_ps as i64) as usize] += 1;
            }
        }
    }
    Ok(DelayHistogram { tau_min_ps, bin_ps, counts, n854: starts.len() as u64 })
}

/// Back-decay number from a cross-correlation histogram: 393 nm counts with
/// `τ ∈ [−T_rep/2, 0]`, minus the flat background seen at `τ > 0`, divided
/// by `η_393 · n854`. The 854 nm efficiency enters only through `n854` and
/// cancels.
///
/// The background is scaled from every positive-delay bin of the histogram,
/// so the histogram should extend to `+T_rep/2` or further. Pass `n854`
/// with the expected 854 nm dark counts removed; dark clicks add accidental
/// pairs that the sideband removes, but they would still inflate the
/// denominator.
pub fn estimate_mean_n(hist: &DelayHistogram, eff: &EfficiencySet, n854: u64, t_rep: f64) -> Result<(f64, f64)> {
    if !(eff.eta_393 > 0.0) {
        return Err(Error::UndefinedMeanN("eta_393 is zero".into()));
    }
    if n854 == 0 {
        return Err(Error::UndefinedMeanN("no 854 nm detections".into()));
    }
    let half = (0.5 * t_rep * 1e12).round() as i64;
    let (w, w_bins) = hist.count_between(-half, 0);
    let (p, p_bins) = hist.count_between(1, i64::MAX);
    let scale = if p_bins > 0 { w_bins as f64 / p_bins as f64 } else { 0.0 };
    let signal = w as f64 - scale * p as f64;
    let var = w as f64 + scale * scale * p as f64;
    let norm = eff.eta_393 * n854 as f64;
    Ok((signal / norm, var.sqrt() / norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    Parallel,
    Perpendicular,
}

impl Polarization {
    pub fn label(self) -> &'static str {
        match self {
            Polarization::Parallel => "parallel",
            Polarization::Perpendicular => "perpendicular",
        }
    }
}

impl FromStr for Polarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" | "par" => Ok(Polarization::Parallel),
            "perpendicular" | "perp" => Ok(Polarization::Perpendicular),
            other => Err(Error::Domain(format!("unknown polarization `{other}`"))),
        }
    }
}

/// A two-photon event: detection-time difference (s) and the relative
/// polarization setting of the run it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coincidence {
    pub tau: f64,
    pub polarization: Polarization,
}

/// `V(T) = 1 − C_∥(T)/C_⊥(T)` with `C(T)` counting `|τ| ≤ T/2`, and the
/// Poisson uncertainty of the ratio.
///
/// Windows with no perpendicular counts are an error.
pub fn estimate_visibility(coincidences: &[Coincidence], windows: &[f64]) -> Result<VisibilityCurve> {
    let mut values = Vec::with_capacity(windows.len());
    let mut errs = Vec::with_capacity(windows.len());
    for &w in windows {
        let mut par = 0u64;
        let mut perp = 0u64;
        for c in coincidences {
            if c.tau.abs() <= 0.5 * w {
                match c.polarization {
                    Polarization::Parallel => par += 1,
                    Polarization::Perpendicular => perp += 1,
                }
            }
        }
        if perp == 0 {
            return Err(Error::UndefinedVisibility(format!("no perpendicular coincidences within T = {w:e} s")));
        }
        let (a, b) = (par as f64, perp as f64);
        values.push(1.0 - a / b);
        errs.push((a * (1.0 + a / b)).sqrt() / b);
    }
    Ok(VisibilityCurve { windows: windows.to_vec(), values, uncertainties: Some(errs) })
}

/// Draws coincidences from the τ-marginals of detected parallel and
/// perpendicular grids. The perpendicular count is Poisson with mean
/// `expected_perp`; the parallel mean follows from the ratio of total
/// masses. Delays are rounded to `resolution` (s, zero for none).
pub fn sample_coincidences(
    parallel: &CorrelationGrid,
    perpendicular: &CorrelationGrid,
    expected_perp: f64,
    resolution: f64,
    seed: u64,
) -> Result<Vec<Coincidence>> {
    if !parallel.same_axes(perpendicular) {
        return Err(Error::GridMismatch("parallel and perpendicular grids differ".into()));
    }
    let tau = &parallel.tau;
    let sampler_par = Marginal::new(tau, parallel.tau_marginal());
    let sampler_perp = Marginal::new(tau, perpendicular.tau_marginal());
    if !(sampler_perp.total > 0.0) || !(expected_perp > 0.0) {
        return Err(Error::UndefinedVisibility("perpendicular marginal is empty".into()));
    }
    let expected_par = expected_perp * sampler_par.total / sampler_perp.total;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (sampler, mean, pol) in [
        (&sampler_perp, expected_perp, Polarization::Perpendicular),
        (&sampler_par, expected_par, Polarization::Parallel),
    ] {
        if !(mean > 0.0) {
            continue;
        }
        let n = Poisson::new(mean).map_err(|e| Error::Domain(e.to_string()))?.sample(&mut rng) as u64;
        for _ in 0..n {
            let mut t = sampler.sample(&mut rng);
            if resolution > 0.0 {
                t = (t / resolution).round() * resolution;
            }
            out.push(Coincidence { tau: t, polarization: pol });
        }
    }
    Ok(out)
}

/// Inverse-CDF sampler for a piecewise-linear density.
struct Marginal<'a> {
    x: &'a [f64],
    y: Vec<f64>,
    cumulative: Vec<f64>,
    total: f64,
}

impl<'a> Marginal<'a> {
    fn new(x: &'a [f64], y: Vec<f64>) -> Self {
        let y: Vec<f64> = y.into_iter().map(|v| v.max(0.0)).collect();
        let mut cumulative = Vec::with_capacity(x.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for k in 1..x.len() {
            acc += 0.5 * (x[k] - x[k - 1]) * (y[k] + y[k - 1]);
            cumulative.push(acc);
        }
        Marginal { x, y, cumulative, total: acc }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let target = rng.gen::<f64>() * self.total;
        let k = self.cumulative.partition_point(|&c| c <= target).clamp(1, self.x.len() - 1) - 1;
        let h = self.x[k + 1] - self.x[k];
        let (a, b) = (self.y[k], self.y[k + 1]);
        // mass c inside the segment, solved on the unit interval
        let c = (target - self.cumulative[k]) / h;
        let d = (a * a + 2.0 * (b - a) * c).max(0.0).sqrt();
        let u = if a + d > 0.0 { (2.0 * c / (a + d)).clamp(0.0, 1.0) } else { 0.5 };
        self.x[k] + u * h
    }
}

pub fn write_records_csv<W: std::io::Write>(records: &[DetectionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["detector", "timestamp_ps", "channel", "cycle"])?;
    for r in records {
        w.write_record([r.detector.id().to_string(), r.timestamp_ps.to_string(), r.origin.to_string(), r.cycle.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<DetectionRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Domain(format!("record {}: bad {what}", line + 1));
        let field = |i: usize| rec.get(i).ok_or_else(|| bad("column count"));
        let detector = Detector::from_id(field(0)?.trim().parse().map_err(|_| bad("detector"))?)?;
        let timestamp_ps = field(1)?.trim().parse().map_err(|_| bad("timestamp"))?;
        let origin = field(2)?.trim().parse()?;
        let cycle = field(3)?.trim().parse().map_err(|_| bad("cycle"))?;
        out.push(DetectionRecord { detector, timestamp_ps, origin, cycle });
    }
    Ok(out)
}

pub fn write_coincidences_csv<W: std::io::Write>(coincidences: &[Coincidence], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau_s", "polarization"])?;
    for c in coincidences {
        w.write_record([format!("{:e}", c.tau), c.polarization.label().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coincidences_csv<R: std::io::Read>(input: R) -> Result<Vec<Coincidence>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Domain(format!("coincidence {}: malformed row", line + 1));
        let tau = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let polarization = rec.get(1).ok_or_else(bad)?.trim().parse()?;
        out.push(Coincidence { tau, polarization });
    }
    Ok(out)
}

/// Splits records by detector.
pub fn split_by_detector(records: &[DetectionRecord]) -> (Vec<DetectionRecord>, Vec<DetectionRecord>) {
    records.iter().partition(|r| r.detector == Detector::Ir854)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(trajectory: u64, time: f64, channel: Channel) -> EmissionEvent {
        EmissionEvent { trajectory, time, channel, pulse: 0 }
    }

    fn clock() -> Clock {
        Clock { origin: 0.0, span: 1e-6, resolution_ps: TAGGER_RESOLUTION_PS }
    }

    #[test]
    fn ideal_detection_is_quantized_emission() {
        let events = vec![ev(0, 10.3e-9, Channel::Back393), ev(0, 12.0e-9, Channel::Raman854), ev(2, 1.0e-9, Channel::Raman854)];
        let rec = synthesize_detections(&events, 3, &EfficiencySet::ideal(), &clock(), 1).unwrap();
        let stamps: Vec<_> = rec.iter().map(|r| (r.cycle, r.timestamp_ps, r.detector)).collect();
        assert_eq!(stamps, vec![(0, 10000, Detector::Uv393), (0, 11875, Detector::Ir854), (2, 625, Detector::Ir854)]);
        assert!(rec.iter().all(|r| r.timestamp_ps % TAGGER_RESOLUTION_PS == 0));
    }

    #[test]
    fn blind_detectors_see_only_background() {
        let events: Vec<_> = (0..50).map(|i| ev(i, 5e-9, Channel::Raman854)).collect();
        let eff = EfficiencySet { eta_393: 0.0, eta_854: 0.0, background_393: 1e6, background_854: 2e6 };
        let rec = synthesize_detections(&events, 50, &eff, &clock(), 3).unwrap();
        assert!(!rec.is_empty());
        assert!(rec.iter().all(|r| r.origin == Origin::Background));
        let n854 = rec.iter().filter(|r| r.detector == Detector::Ir854).count() as f64;
        // mean 100 clicks at 2e6/s over 50 µs
        assert!((n854 - 100.0).abs() < 40.0, "{n854}");
    }

    #[test]
    fn synthesis_is_reproducible() {
        let events: Vec<_> = (0..100).map(|i| ev(i, (i as f64) * 1e-9, Channel::Back393)).collect();
        let eff = EfficiencySet { eta_393: 0.4, eta_854: 0.4, background_393: 1e5, background_854: 0.0 };
        let a = synthesize_detections(&events, 100, &eff, &clock(), 9).unwrap();
        let b = synthesize_detections(&events, 100, &eff, &clock(), 9).unwrap();
        let c = synthesize_detections(&events, 100, &eff, &clock(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ungrouped_events_rejected() {
        let events = vec![ev(1, 1e-9, Channel::Back393), ev(0, 1e-9, Channel::Back393)];
        assert!(synthesize_detections(&events, 2, &EfficiencySet::ideal(), &clock(), 0).is_err());
    }

    fn rec(detector: Detector, ps: u64, cycle: u64) -> DetectionRecord {
        DetectionRecord { detector, timestamp_ps: ps, origin: Origin::Background, cycle }
    }

    #[test]
    fn identical_streams_give_a_zero_delay_peak() {
        let a = vec![rec(Detector::Ir854, 5000, 0)];
        let b = vec![rec(Detector::Uv393, 5000, 0)];
        let h = cross_correlate(&a, &b, 625, -6250, 6250).unwrap();
        assert_eq!(h.total(), 1);
        let k = h.counts.iter().position(|&c| c == 1).unwrap();
        assert_eq!(h.bin_lower(k), 0);
    }

    #[test]
    fn different_cycles_never_pair() {
        let a = vec![rec(Detector::Ir854, 5000, 0), rec(Detector::Ir854, 5000, 2)];
        let b = vec![rec(Detector::Uv393, 4375, 1), rec(Detector::Uv393, 4375, 2)];
        let h = cross_correlate(&a, &b, 625, -6250, 6250).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.n854, 2);
    }

    #[test]
    fn empty_start_stream_flagged() {
        let h = cross_correlate(&[], &[rec(Detector::Uv393, 0, 0)], 625, -625, 625).unwrap();
        assert!(h.is_empty());
    }

    #[test]
    fn mean_n_arithmetic() {
        let hist = DelayHistogram { tau_min_ps: -2500, bin_ps: 625, counts: vec![1, 2, 3, 4, 10, 0, 0, 0], n854: 0 };
        // window [-1250, 0] holds bins at -1250, -625, 0 → 3 + 4 + 10
        let eff = EfficiencySet { eta_393: 0.5, ..EfficiencySet::ideal() };
        let (n, se) = estimate_mean_n(&hist, &eff, 100, 2.5e-9).unwrap();
        assert!((n - 17.0 / 50.0).abs() < 1e-12);
        assert!((se - 17f64.sqrt() / 50.0).abs() < 1e-12);
        let zero = DelayHistogram { counts: vec![0; 8], ..hist.clone() };
        assert_eq!(estimate_mean_n(&zero, &eff, 100, 2.5e-9).unwrap().0, 0.0);
        assert!(estimate_mean_n(&hist, &eff, 0, 2.5e-9).is_err());
        let blind = EfficiencySet { eta_393: 0.0, ..eff };
        assert!(estimate_mean_n(&hist, &blind, 100, 2.5e-9).is_err());
    }

    #[test]
    fn background_sideband_is_subtracted() {
        // flat 5 counts per bin, plus 20 real counts at τ = 0
        let mut counts = vec![5u64; 9];
        counts[4] += 20;
        let hist = DelayHistogram { tau_min_ps: -2500, bin_ps: 625, counts, n854: 0 };
        let eff = EfficiencySet::ideal();
        let (n, _) = estimate_mean_n(&hist, &eff, 10, 5e-9).unwrap();
        assert!((n - 2.0).abs() < 1e-12, "{n}");
    }

    fn coincidences(par: usize, perp: usize) -> Vec<Coincidence> {
        let mut v = Vec::new();
        for k in 0..par {
            v.push(Coincidence { tau: k as f64 * 1e-9, polarization: Polarization::Parallel });
        }
        for k in 0..perp {
            v.push(Coincidence { tau: -(k as f64) * 1e-9, polarization: Polarization::Perpendicular });
        }
        v
    }

    #[test]
    fn visibility_limits() {
        let w = [1e-6];
        assert_eq!(estimate_visibility(&coincidences(0, 10), &w).unwrap().values, vec![1.0]);
        assert_eq!(estimate_visibility(&coincidences(10, 10), &w).unwrap().values, vec![0.0]);
        assert!(matches!(estimate_visibility(&coincidences(3, 0), &w), Err(Error::UndefinedVisibility(_))));
        let v = estimate_visibility(&coincidences(25, 100), &w).unwrap();
        let expect = 0.25 * (1.0 / 25.0 + 1.0 / 100.0f64).sqrt();
        assert!((v.uncertainties.unwrap()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn marginal_sampler_follows_a_triangle() {
        let x = [0.0, 1.0, 2.0];
        let m = Marginal::new(&x, vec![0.0, 1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40_000;
        let s: Vec<f64> = (0..n).map(|_| m.sample(&mut rng)).collect();
        let mean = s.iter().sum::<f64>() / n as f64;
        let below = s.iter().filter(|&&t| t < 0.5).count() as f64 / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        // P(t < 0.5) = 0.125
        assert!((below - 0.125).abs() < 0.006, "{below}");
    }

    #[test]
    fn records_round_trip_through_csv() {
        let r = vec![
            DetectionRecord { detector: Detector::Uv393, timestamp_ps: 625, origin: Origin::Photon(Channel::Back393), cycle: 3 },
            DetectionRecord { detector: Detector::Ir854, timestamp_ps: 0, origin: Origin::Background, cycle: 4 },
        ];
        let mut buf = Vec::new();
        write_records_csv(&r, &mut buf).unwrap();
        assert_eq!(read_records_csv(buf.as_slice()).unwrap(), r);
        let c = coincidences(2, 3);
        let mut buf = Vec::new();
        write_coincidences_csv(&c, &mut buf).unwrap();
        assert_eq!(read_coincidences_csv(buf.as_slice()).unwrap(), c);
    }
}
