//! Scenario files: TOML with one table per concern. Every dimensioned value
//! is a string carrying its unit; unknown keys are errors.

use std::path::{Path, PathBuf};

use raman_hom::atomic::{DEFAULT_BACK_FRACTION, DEFAULT_BRANCHING_854, DEFAULT_EXCITED_LIFETIME};
use raman_hom::pulse::{calibrate_peak_rabi, Calibration, CalibrationConfig};
use raman_hom::{
    BeamSplitter, DetectionModel, EfficiencySet, LevelScheme, PulseShape, PulseTrain, Resolution, SimGrid,
};
use serde::Deserialize;
use toml::Spanned;

use crate::failure::Failure;
use crate::units::{Angle, Angular, Rate, Time};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub emitter: Option<Spanned<Emitter>>,
    pub pulse: Option<Spanned<Pulse>>,
    pub numerics: Option<Spanned<Numerics>>,
    pub backdecay: Option<Spanned<Backdecay>>,
    pub trajectories: Option<Spanned<Trajectories>>,
    pub hom: Option<Spanned<Hom>>,
    pub detection: Option<Spanned<Detection>>,
    #[serde(default)]
    pub sweep: Vec<Spanned<SweepRow>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Emitter {
    pub excited_lifetime: Option<Time>,
    /// Fraction of the excited-state decay that returns to |g>.
    pub back_fraction: Option<f64>,
    /// Share of the Raman decay going to the 854 nm channel.
    pub branching_854: Option<f64>,
    pub detuning: Option<Angular>,
    pub dephasing: Option<Angular>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub fwhm: Option<Time>,
    pub beta: Option<f64>,
    pub t_rep: Option<Time>,
    pub pulses: Option<usize>,
    pub peak_rabi: Option<Angular>,
    pub target_p854: Option<f64>,
    /// Two-column CSV (bin center in s, counts), relative to the scenario file.
    pub histogram: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub step: Option<Time>,
    pub tolerance: Option<f64>,
    /// Allowed |P854 − target| when calibrating.
    pub calibration_tolerance: Option<f64>,
    pub omega_max: Option<Angular>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backdecay {
    /// Cell whose 854 nm detection times span the correlation map.
    pub cell: Option<usize>,
    /// Largest |τ| of the map; defaults to T_rep/2.
    pub tau_span: Option<Time>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectories {
    pub count: Option<u64>,
    pub write_events: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hom {
    pub pulses: Option<usize>,
    pub transmission: Option<f64>,
    pub eta_c: Option<f64>,
    pub eta_d: Option<f64>,
    /// Signal-to-background ratio fixing B0; no background when absent.
    pub sbr: Option<f64>,
    pub delta_phi: Option<Angle>,
    /// Pure emitter: no back-decay channel and no dephasing.
    pub ideal: Option<bool>,
    pub same_pulse: Option<bool>,
    pub window_step: Option<Time>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub eta_393: Option<f64>,
    pub eta_854: Option<f64>,
    pub background_393: Option<Rate>,
    pub background_854: Option<Rate>,
    pub resolution: Option<Time>,
    /// Existing time tags to analyze instead of synthesizing them.
    pub records: Option<PathBuf>,
    /// Expected perpendicular coincidences for the synthetic HOM run; 0 skips it.
    pub coincidences: Option<f64>,
    pub coincidence_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub fwhm: Time,
    pub beta: f64,
    pub t_rep: Time,
    pub target_p854: Option<f64>,
    pub peak_rabi: Option<Angular>,
    pub pulses: Option<usize>,
}

/// A parsed scenario together with its source text, for line lookups.
pub struct Loaded {
    pub path: PathBuf,
    pub text: String,
    pub scenario: Scenario,
}

/// 1-based line of a byte offset.
pub fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        let scenario: Scenario =
            toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let loaded = Loaded { path: path.to_path_buf(), text, scenario };
        if loaded.scenario.threads == Some(0) {
            return Err(Failure::Config(format!("{}: threads must be at least 1", path.display())));
        }
        Ok(loaded)
    }

    /// Config error anchored at the start of a table.
    pub fn at<T>(&self, section: &Spanned<T>, name: &str, msg: impl std::fmt::Display) -> Failure {
        Failure::Config(format!(
            "{}: line {}: [{name}] {msg}",
            self.path.display(),
            line_of(&self.text, section.span().start)
        ))
    }

    fn missing(&self, name: &str) -> Failure {
        Failure::Config(format!("{}: missing [{name}] table", self.path.display()))
    }

    /// Paths in the scenario are relative to the scenario file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match self.path.parent() {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn scheme(&self) -> Result<LevelScheme, Failure> {
        let Some(s) = &self.scenario.emitter else {
            return Ok(LevelScheme::default());
        };
        let e = s.get_ref();
        let lifetime = e.excited_lifetime.map_or(DEFAULT_EXCITED_LIFETIME, |t| t.0);
        let back = e.back_fraction.unwrap_or(DEFAULT_BACK_FRACTION);
        let b854 = e.branching_854.unwrap_or(DEFAULT_BRANCHING_854);
        if !(lifetime > 0.0) || !(0.0..1.0).contains(&back) || !(0.0..=1.0).contains(&b854) {
            return Err(self.at(s, "emitter", "need excited_lifetime > 0, 0 ≤ back_fraction < 1, 0 ≤ branching_854 ≤ 1"));
        }
        let total = 1.0 / lifetime;
        let raman = (1.0 - back) * total;
        let detuning = e.detuning.map_or(0.0, |d| d.0);
        LevelScheme::new(back * total, b854 * raman, (1.0 - b854) * raman, detuning)
            .map_err(|err| self.at(s, "emitter", err))
    }

    pub fn dephasing(&self) -> f64 {
        let default = 2.0 * std::f64::consts::PI * 50e3;
        self.scenario.emitter.as_ref().and_then(|e| e.get_ref().dephasing).map_or(default, |d| d.0)
    }

    fn numerics(&self) -> Option<&Numerics> {
        self.scenario.numerics.as_ref().map(|n| n.get_ref())
    }

    pub fn resolution(&self) -> Result<Resolution, Failure> {
        let def = Resolution::default();
        let n = self.numerics();
        let r = Resolution {
            step: n.and_then(|n| n.step).map_or(def.step, |s| s.0),
            tolerance: n.and_then(|n| n.tolerance).unwrap_or(def.tolerance),
        };
        r.validate().map_err(|e| match &self.scenario.numerics {
            Some(s) => self.at(s, "numerics", e),
            None => Failure::Config(e.to_string()),
        })?;
        Ok(r)
    }

    pub fn sim_grid(&self, train: &PulseTrain) -> Result<SimGrid, Failure> {
        let r = self.resolution()?;
        SimGrid::new(train.start(), train.end(), r.step, r.tolerance).map_err(|e| Failure::Config(e.to_string()))
    }

    pub fn calibration_config(&self) -> (CalibrationConfig, f64) {
        let mut cfg = CalibrationConfig::default();
        let n = self.numerics();
        if let Some(w) = n.and_then(|n| n.omega_max) {
            cfg.omega_max = w.0;
        }
        if let Some(t) = n.and_then(|n| n.tolerance) {
            cfg.tolerance = t;
        }
        (cfg, n.and_then(|n| n.calibration_tolerance).unwrap_or(1e-5))
    }

    pub fn pulse_section(&self) -> Result<&Spanned<Pulse>, Failure> {
        self.scenario.pulse.as_ref().ok_or_else(|| self.missing("pulse"))
    }

    /// The train described by [pulse], with Ω_peak still zero.
    pub fn bare_train(&self) -> Result<PulseTrain, Failure> {
        let s = self.pulse_section()?;
        let p = s.get_ref();
        let (Some(fwhm), Some(beta), Some(t_rep)) = (p.fwhm, p.beta, p.t_rep) else {
            return Err(self.at(s, "pulse", "fwhm, beta and t_rep are required"));
        };
        build_train(fwhm.0, beta, t_rep.0, p.pulses.unwrap_or(1)).map_err(|e| self.at(s, "pulse", e))
    }

    /// The driven train: Ω_peak given directly or calibrated to target_p854.
    pub fn train(&self) -> Result<(PulseTrain, Option<Calibration>), Failure> {
        let s = self.pulse_section()?;
        let p = s.get_ref();
        let bare = self.bare_train()?;
        let drive = Drive::from_options(p.peak_rabi, p.target_p854).map_err(|e| self.at(s, "pulse", e))?;
        self.drive(bare, drive).map_err(|f| self.anchor(s, "pulse", f))
    }

    /// Attaches the table line to a config failure raised further down.
    pub fn anchor<T>(&self, section: &Spanned<T>, name: &str, f: Failure) -> Failure {
        match f {
            Failure::Config(m) => self.at(section, name, m),
            other => other,
        }
    }

    pub fn drive(&self, bare: PulseTrain, drive: Drive) -> Result<(PulseTrain, Option<Calibration>), Failure> {
        match drive {
            Drive::Peak(w) => Ok((bare.with_peak_rabi(w), None)),
            Drive::Target(target) => {
                let (cfg, tol) = self.calibration_config();
                let cal = calibrate_peak_rabi(&bare, &self.scheme()?, self.dephasing(), target, tol, &cfg)
                    .map_err(|e| Failure::from_core(e, "calibration"))?;
                Ok((bare.with_peak_rabi(cal.peak_rabi), Some(cal)))
            }
        }
    }

    pub fn section<'a, T>(&self, s: &'a Option<Spanned<T>>) -> Option<&'a T> {
        s.as_ref().map(|x| x.get_ref())
    }

    pub fn trajectory_count(&self) -> Result<u64, Failure> {
        let n = self.section(&self.scenario.trajectories).and_then(|t| t.count).unwrap_or(10_000);
        if n == 0 {
            return Err(self.at(self.scenario.trajectories.as_ref().unwrap(), "trajectories", "count must be positive"));
        }
        Ok(n)
    }

    pub fn beam_splitter(&self) -> Result<BeamSplitter, Failure> {
        let t = self.section(&self.scenario.hom).and_then(|h| h.transmission).unwrap_or(0.5);
        BeamSplitter::new(t).map_err(|e| self.hom_error(e))
    }

    pub fn hom_error(&self, e: impl std::fmt::Display) -> Failure {
        match &self.scenario.hom {
            Some(s) => self.at(s, "hom", e),
            None => Failure::Config(e.to_string()),
        }
    }

    /// Detection model without background; B0 needs the signal and is set later.
    pub fn detection_model(&self) -> Result<DetectionModel, Failure> {
        let h = self.section(&self.scenario.hom);
        let det = DetectionModel {
            eta_c: h.and_then(|h| h.eta_c).unwrap_or(1.0),
            eta_d: h.and_then(|h| h.eta_d).unwrap_or(1.0),
            b0: 0.0,
            delta_phi: h.and_then(|h| h.delta_phi).map_or(0.0, |a| a.0),
        };
        det.validate().map_err(|e| self.hom_error(e))?;
        Ok(det)
    }

    pub fn efficiencies(&self) -> Result<EfficiencySet, Failure> {
        let Some(s) = &self.scenario.detection else {
            return Ok(EfficiencySet::ideal());
        };
        let d = s.get_ref();
        let ideal = EfficiencySet::ideal();
        let eff = EfficiencySet {
            eta_393: d.eta_393.unwrap_or(ideal.eta_393),
            eta_854: d.eta_854.unwrap_or(ideal.eta_854),
            background_393: d.background_393.map_or(0.0, |r| r.0),
            background_854: d.background_854.map_or(0.0, |r| r.0),
        };
        eff.validate().map_err(|e| self.at(s, "detection", e))?;
        Ok(eff)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Drive {
    Peak(f64),
    Target(f64),
}

impl Drive {
    pub fn from_options(peak: Option<Angular>, target: Option<f64>) -> Result<Self, String> {
        match (peak, target) {
            (Some(w), None) => Ok(Drive::Peak(w.0)),
            (None, Some(t)) => Ok(Drive::Target(t)),
            (Some(_), Some(_)) => Err("give either peak_rabi or target_p854, not both".into()),
            (None, None) => Err("one of peak_rabi or target_p854 is required".into()),
        }
    }
}

pub fn build_train(fwhm: f64, beta: f64, t_rep: f64, pulses: usize) -> raman_hom::Result<PulseTrain> {
    let shape = PulseShape::from_fwhm(fwhm, beta, 0.0, 0.0)?;
    PulseTrain::starting_at_zero(shape, pulses, t_rep)
}
