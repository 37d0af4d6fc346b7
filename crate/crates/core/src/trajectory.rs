//! Quantum-jump Monte Carlo of the emitter, independent of the master
//! equation code paths: wave-function amplitudes on {g, e}, waiting-time
//! sampling of jumps and a random channel choice at each jump.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::atomic::{Channel, LevelScheme};
use crate::error::{Error, Result};
use crate::ode::{DenseStep, Dopri5};
use crate::pulse::PulseTrain;

type Prop = Matrix2<Complex64>;
type Amp = Vector2<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionEvent {
    pub trajectory: u64,
    pub time: f64,
    pub channel: Channel,
    pub pulse: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub n_trajectories: u64,
    pub seed: u64,
    /// `histogram[N]`: trajectories whose 854 nm photon was preceded by `N`
    /// back-decays within half a period.
    pub histogram: Vec<u64>,
    /// Photon counts per channel, indexed like [`Channel::ALL`].
    pub counts: [u64; 3],
    /// 854 nm photons per pulse cell.
    pub raman_by_pulse: Vec<u64>,
}

impl TrajectoryStats {
    pub fn count(&self, channel: Channel) -> u64 {
        self.counts[channel_index(channel)]
    }

    pub fn n_raman854(&self) -> u64 {
        self.histogram.iter().sum()
    }

    fn merge(&mut self, other: &TrajectoryStats) {
        self.n_trajectories += other.n_trajectories;
        if self.histogram.len() < other.histogram.len() {
            self.histogram.resize(other.histogram.len(), 0);
        }
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.raman_by_pulse.iter_mut().zip(&other.raman_by_pulse) {
            *a += b;
        }
    }
}

fn channel_index(c: Channel) -> usize {
    match c {
        Channel::Back393 => 0,
        Channel::Raman854 => 1,
        Channel::Raman850 => 2,
    }
}

/// No-jump propagator of one drive window, split into segments short enough
/// that each segment's propagator is well conditioned.
struct PulseTable {
    /// `(anchor time, dense steps of U(t, anchor))` relative to pulse 0.
    segments: Vec<(f64, f64, Vec<DenseStep<Prop>>)>,
}

impl PulseTable {
    fn build(train: &PulseTrain, scheme: &LevelScheme, dephasing: f64, tolerance: f64) -> Result<Self> {
        let (a, b) = train.drive_window(0);
        let decay = scheme.gamma_total() + 2.0 * dephasing;
        let det = scheme.detuning;
        let seg_len = if decay > 0.0 { 2.0 / decay } else { b - a };
        let n_seg = (((b - a) / seg_len).ceil() as usize).max(1);
        let solver = Dopri5::with_tolerance(tolerance);
        let mut segments = Vec::with_capacity(n_seg);
        for j in 0..n_seg {
            let s0 = a + (b - a) * j as f64 / n_seg as f64;
            let s1 = if j + 1 == n_seg { b } else { a + (b - a) * (j + 1) as f64 / n_seg as f64 };
            let mut steps = Vec::new();
            let rhs = |t: f64, u: &Prop| -> Prop {
                let half = Complex64::new(0.0, -0.5 * train.rabi(t));
                let ee = Complex64::new(-0.5 * decay, det);
                Prop::new(half * u[(1, 0)], half * u[(1, 1)], half * u[(0, 0)] + ee * u[(1, 0)], half * u[(0, 1)] + ee * u[(1, 1)])
            };
            solver.solve(rhs, s0, Prop::identity(), s1, |st| steps.push(st.clone()))?;
            segments.push((s0, s1, steps));
        }
        Ok(PulseTable { segments })
    }

    fn eval(&self, seg: usize, t: f64) -> Prop {
        let steps = &self.segments[seg].2;
        let k = steps.partition_point(|s| s.t1 < t).min(steps.len() - 1);
        steps[k].eval(t)
    }

    fn segment_of(&self, t: f64) -> usize {
        self.segments.partition_point(|s| s.1 <= t).min(self.segments.len() - 1)
    }
}

struct Oracle<'a> {
    train: &'a PulseTrain,
    table: PulseTable,
    decay: f64,
    detuning: f64,
    /// Cumulative channel probabilities for a jump: back, 854, 850, dephasing.
    cumulative: [f64; 4],
}

enum Jump {
    Photon(Channel),
    Dephase,
}

impl<'a> Oracle<'a> {
    fn new(train: &'a PulseTrain, scheme: &LevelScheme, dephasing: f64, tolerance: f64) -> Result<Self> {
        let decay = scheme.gamma_total() + 2.0 * dephasing;
        let rates = [scheme.gamma_back, scheme.gamma_854, scheme.gamma_850, 2.0 * dephasing];
        let mut cumulative = [0.0; 4];
        let mut acc = 0.0;
        for (c, r) in cumulative.iter_mut().zip(rates) {
            acc += r / decay;
            *c = acc;
        }
        Ok(Oracle {
            train,
            table: PulseTable::build(train, scheme, dephasing, tolerance)?,
            decay,
            detuning: scheme.detuning,
            cumulative,
        })
    }

    fn pick(&self, u: f64) -> Jump {
        let k = self.cumulative.iter().position(|&c| u < c).unwrap_or(3);
        match k {
            0 => Jump::Photon(Channel::Back393),
            1 => Jump::Photon(Channel::Raman854),
            2 => Jump::Photon(Channel::Raman850),
            _ => Jump::Dephase,
        }
    }

    /// Free no-jump evolution over `dt`.
    fn free(&self, psi: &Amp, dt: f64) -> Amp {
        Amp::new(psi[0], psi[1] * (Complex64::new(-0.5 * self.decay, self.detuning) * dt).exp())
    }

    /// Advances `psi` from `t` until its squared norm reaches `r` or `t_end`.
    /// Returns the jump time, if any, and the state there.
    fn advance(&self, mut t: f64, mut psi: Amp, r: f64, t_end: f64) -> (Option<f64>, Amp) {
        let tr = self.train;
        let w = tr.half_width();
        let drive = tr.shape.peak_rabi > 0.0;
        // first window whose end lies after t; advanced explicitly afterwards
        let mut k = if drive {
            let x = ((t - tr.shape.center - w) / tr.t_rep).floor() + 1.0;
            if x < 0.0 { 0 } else { x as usize }
        } else {
            tr.n_pulses
        };
        loop {
            if t >= t_end {
                return (None, psi);
            }
            let (wa, wb) = if k < tr.n_pulses { tr.drive_window(k) } else { (f64::INFINITY, f64::INFINITY) };
            if t < wa {
                // dark stretch up to the window (or the end)
                let stop = wa.min(t_end);
                let g2 = psi[0].norm_sqr();
                let e2 = psi[1].norm_sqr();
                if g2 + e2 * (-self.decay * (stop - t)).exp() <= r {
                    let dt = if e2 > 0.0 { -((r - g2) / e2).ln() / self.decay } else { 0.0 };
                    let dt = dt.clamp(0.0, stop - t);
                    return (Some(t + dt), self.free(&psi, dt));
                }
                psi = self.free(&psi, stop - t);
                t = stop;
                continue;
            }
            // inside window k: shift to pulse-0 coordinates
            let shift = k as f64 * tr.t_rep;
            let stop = wb.min(t_end);
            let mut seg = self.table.segment_of(t - shift);
            let mut local = t - shift;
            let mut phi = self.table.eval(seg, local).try_inverse().expect("no-jump propagator is invertible") * psi;
            loop {
                let (_, s1, _) = self.table.segments[seg];
                let seg_stop = s1.min(stop - shift);
                let at = |x: f64| self.table.eval(seg, x) * phi;
                let end_state = at(seg_stop);
                if end_state.norm_squared() <= r {
                    let (mut lo, mut hi) = (local, seg_stop);
                    for _ in 0..100 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        if at(mid).norm_squared() > r {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    return (Some(hi + shift), at(hi));
                }
                if seg_stop >= stop - shift || seg + 1 >= self.table.segments.len() {
                    psi = end_state;
                    t = stop;
                    k += 1;
                    break;
                }
                seg += 1;
                local = self.table.segments[seg].0;
                phi = end_state;
            }
        }
    }

    fn run(&self, id: u64, seed: u64, events: &mut Vec<EmissionEvent>) -> TrajectoryStats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        let tr = self.train;
        let mut stats = TrajectoryStats {
            n_trajectories: 1,
            seed,
            histogram: Vec::new(),
            counts: [0; 3],
            raman_by_pulse: vec![0; tr.n_pulses],
        };
        let (mut t, t_end) = (tr.start(), tr.end());
        let mut psi = Amp::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        let mut back_times: Vec<f64> = Vec::new();
        loop {
            let r: f64 = rng.gen();
            let (jump, state) = self.advance(t, psi, r, t_end);
            let Some(tj) = jump else { break };
            let _ = state;
            t = tj;
            match self.pick(rng.gen()) {
                Jump::Dephase => {
                    psi = Amp::new(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0));
                }
                Jump::Photon(channel) => {
                    let pulse = tr.pulse_index(tj);
                    events.push(EmissionEvent { trajectory: id, time: tj, channel, pulse });
                    stats.counts[channel_index(channel)] += 1;
                    match channel {
                        Channel::Back393 => {
                            back_times.push(tj);
                            psi = Amp::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
                        }
                        Channel::Raman854 => {
                            let lo = tj - 0.5 * tr.t_rep;
                            let n = back_times.iter().filter(|&&s| s >= lo && s <= tj).count();
                            stats.histogram.resize(n + 1, 0);
                            stats.histogram[n] += 1;
                            stats.raman_by_pulse[pulse] += 1;
                            break;
                        }
                        Channel::Raman850 => break,
                    }
                }
            }
        }
        stats
    }
}

/// Runs `n` independent trajectories over the train, starting in |g>.
///
/// Trajectory `i` draws from stream `i` of a ChaCha8 generator keyed by
/// `seed`, so results do not depend on scheduling. Trajectories end at their
/// Raman photon or at the end of the last cell.
pub fn run_trajectories(
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    n: u64,
    seed: u64,
) -> Result<(TrajectoryStats, Vec<EmissionEvent>)> {
    run_trajectories_with(train, scheme, dephasing, n, seed, 1e-10)
}

pub fn run_trajectories_with(
    train: &PulseTrain,
    scheme: &LevelScheme,
    dephasing: f64,
    n: u64,
    seed: u64,
    tolerance: f64,
) -> Result<(TrajectoryStats, Vec<EmissionEvent>)> {
    train.validate()?;
    scheme.validate()?;
    if n == 0 {
        return Err(Error::Domain("need at least one trajectory".into()));
    }
    if !(dephasing >= 0.0) {
        return Err(Error::Domain("dephasing must be >= 0".into()));
    }
    let oracle = Oracle::new(train, scheme, dephasing, tolerance)?;
    let chunk = 1024u64;
    let n_chunks = n.div_ceil(chunk);
    let work = |c: u64| {
        let mut events = Vec::new();
        let mut stats: Option<TrajectoryStats> = None;
        for id in c * chunk..((c + 1) * chunk).min(n) {
            let s = oracle.run(id, seed, &mut events);
            match stats.as_mut() {
                Some(acc) => acc.merge(&s),
                None => stats = Some(s),
            }
        }
        (stats.expect("non-empty chunk"), events)
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<_> = (0..n_chunks).into_par_iter().map(work).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<_> = (0..n_chunks).map(work).collect();

    let mut stats = TrajectoryStats {
        n_trajectories: 0,
        seed,
        histogram: Vec::new(),
        counts: [0; 3],
        raman_by_pulse: vec![0; train.n_pulses],
    };
    let mut events = Vec::new();
    for (s, e) in parts {
        stats.merge(&s);
        events.extend(e);
    }
    Ok((stats, events))
}

/// `Σ N P̂_N` with its multinomial standard error.
pub fn empirical_mean_n(stats: &TrajectoryStats) -> Result<(f64, f64)> {
    let total = stats.n_raman854();
    if total == 0 {
        return Err(Error::UndefinedMeanN("no 854 nm photons among the trajectories".into()));
    }
    let n = total as f64;
    let mean = stats.histogram.iter().enumerate().map(|(k, c)| k as f64 * *c as f64).sum::<f64>() / n;
    let var = stats.histogram.iter().enumerate().map(|(k, c)| (k as f64 - mean).powi(2) * *c as f64).sum::<f64>() / n;
    Ok((mean, (var / n).sqrt()))
}

/// Fraction of trajectories emitting their 854 nm photon during the first
/// pulse cell, with binomial standard error.
pub fn empirical_p854(stats: &TrajectoryStats) -> (f64, f64) {
    let n = stats.n_trajectories as f64;
    let p = stats.raman_by_pulse.first().copied().unwrap_or(0) as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

pub fn write_events_csv<W: std::io::Write>(events: &[EmissionEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trajectory", "time_s", "channel", "pulse"])?;
    for e in events {
        w.write_record([e.trajectory.to_string(), format!("{:e}", e.time), e.channel.label().to_string(), e.pulse.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
