//! Browser bindings: pulse shapes, the emitted wave packet with its
//! back-decay statistics, and the two-emitter visibility curve.
//!
//! The plain functions do the work and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use raman_hom::correlator::{g1, mean_back_decays_fast};
use raman_hom::hom::visibility_curve;
use raman_hom::lindblad::{emission_rate, p854_of_train};
use raman_hom::pulse::{calibrate_peak_rabi, CalibrationConfig};
use raman_hom::{
    propagate, BeamSplitter, Channel, DensityMatrix, DetectionModel, HomModel, LevelScheme, PulseShape, PulseTrain,
    Resolution, SimGrid,
};
use wasm_bindgen::prelude::*;

const NS: f64 = 1e-9;

fn dephasing() -> f64 {
    2.0 * std::f64::consts::PI * 50e3
}

fn train(fwhm_ns: f64, beta: f64, t_rep_ns: f64, pulses: usize) -> raman_hom::Result<PulseTrain> {
    let shape = PulseShape::from_fwhm(fwhm_ns * NS, beta, 0.0, 0.0)?;
    PulseTrain::starting_at_zero(shape, pulses, t_rep_ns * NS)
}

fn calibrated(fwhm_ns: f64, beta: f64, t_rep_ns: f64, pulses: usize, target: f64) -> raman_hom::Result<PulseTrain> {
    let t = train(fwhm_ns, beta, t_rep_ns, pulses)?;
    let cal = calibrate_peak_rabi(&t, &LevelScheme::default(), dephasing(), target, 1e-5, &CalibrationConfig::default())?;
    Ok(t.with_peak_rabi(cal.peak_rabi))
}

#[wasm_bindgen]
pub struct PulseView {
    times_ns: Vec<f64>,
    intensity: Vec<f64>,
    sigma_ns: f64,
    drive_half_width_ns: f64,
}

#[wasm_bindgen]
impl PulseView {
    #[wasm_bindgen(getter)]
    pub fn times_ns(&self) -> Vec<f64> {
        self.times_ns.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn intensity(&self) -> Vec<f64> {
        self.intensity.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sigma_ns(&self) -> f64 {
        self.sigma_ns
    }

    /// Half-width of the truncated drive window.
    #[wasm_bindgen(getter)]
    pub fn drive_half_width_ns(&self) -> f64 {
        self.drive_half_width_ns
    }
}

/// Relative intensity over one repetition cell.
pub fn pulse_view(fwhm_ns: f64, beta: f64, t_rep_ns: f64, points: usize) -> raman_hom::Result<PulseView> {
    let t = train(fwhm_ns, beta, t_rep_ns, 1)?;
    let (a, b) = t.cell(0);
    let n = points.max(2);
    let times: Vec<f64> = (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect();
    let center = t.center(0);
    let shape = t.shape;
    Ok(PulseView {
        intensity: times.iter().map(|&x| shape.relative_intensity(x)).collect(),
        times_ns: times.iter().map(|x| (x - center) / NS).collect(),
        sigma_ns: shape.sigma / NS,
        drive_half_width_ns: t.half_width() / NS,
    })
}

#[wasm_bindgen]
pub struct WavePacket {
    times_ns: Vec<f64>,
    rate_854: Vec<f64>,
    rate_393: Vec<f64>,
    peak_rabi_mhz: f64,
    p854: f64,
    mean_n: f64,
}

#[wasm_bindgen]
impl WavePacket {
    #[wasm_bindgen(getter)]
    pub fn times_ns(&self) -> Vec<f64> {
        self.times_ns.clone()
    }

    /// 854 nm emission rate (1/ns) during the first pulse.
    #[wasm_bindgen(getter)]
    pub fn rate_854(&self) -> Vec<f64> {
        self.rate_854.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rate_393(&self) -> Vec<f64> {
        self.rate_393.clone()
    }

    /// Ω_peak / 2π.
    #[wasm_bindgen(getter)]
    pub fn peak_rabi_mhz(&self) -> f64 {
        self.peak_rabi_mhz
    }

    #[wasm_bindgen(getter)]
    pub fn p854(&self) -> f64 {
        self.p854
    }

    #[wasm_bindgen(getter)]
    pub fn mean_n(&self) -> f64 {
        self.mean_n
    }
}

/// Calibrates the drive to `target_p854`, then returns the single-pulse
/// emission rates and ⟨N⟩ of a `pulses`-long train.
pub fn wave_packet(fwhm_ns: f64, beta: f64, t_rep_ns: f64, target_p854: f64, pulses: usize) -> raman_hom::Result<WavePacket> {
    let scheme = LevelScheme::default();
    let t = calibrated(fwhm_ns, beta, t_rep_ns, pulses.max(1), target_p854)?;
    let first = t.clone().with_pulses(1);
    let grid = SimGrid::for_train(&first, 0.25 * NS, 1e-9)?;
    let traj = propagate(&DensityMatrix::ground(), &first, &scheme, dephasing(), &grid)?;
    let center = first.center(0);
    let per_ns = |c| emission_rate(&traj, &scheme, c).into_iter().map(|r| r * NS).collect();
    let res = Resolution { step: 0.5 * NS, tolerance: 1e-9 };
    Ok(WavePacket {
        times_ns: traj.times.iter().map(|x| (x - center) / NS).collect(),
        rate_854: per_ns(Channel::Raman854),
        rate_393: per_ns(Channel::Back393),
        peak_rabi_mhz: t.shape.peak_rabi / (2.0 * std::f64::consts::PI * 1e6),
        p854: p854_of_train(&first, &scheme, dephasing(), 1e-9)?,
        mean_n: mean_back_decays_fast(&t, &scheme, dephasing(), &res)?.value,
    })
}

#[wasm_bindgen]
pub struct Visibility {
    windows_ns: Vec<f64>,
    values: Vec<f64>,
}

#[wasm_bindgen]
impl Visibility {
    #[wasm_bindgen(getter)]
    pub fn windows_ns(&self) -> Vec<f64> {
        self.windows_ns.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

/// V(T) for two identical emitters, windows from 1 ns up to T_rep.
pub fn visibility(
    fwhm_ns: f64,
    beta: f64,
    t_rep_ns: f64,
    target_p854: f64,
    transmission: f64,
    delta_phi: f64,
    ideal: bool,
) -> raman_hom::Result<Visibility> {
    let t = calibrated(fwhm_ns, beta, t_rep_ns, 1, target_p854)?;
    let (scheme, deph) =
        if ideal { (LevelScheme::default().without_back_decay(), 0.0) } else { (LevelScheme::default(), dephasing()) };
    let grid = SimGrid::for_train(&t, 0.5 * NS, 1e-9)?;
    let a = g1(&t, &scheme, deph, Channel::Raman854, &grid)?;
    let m = HomModel::new(&a, &a, &BeamSplitter::new(transmission)?, 0.5 * t.t_rep)?;
    let det = DetectionModel { delta_phi, ..Default::default() };
    let mut windows: Vec<f64> = (1..).map(|k| k as f64 * NS).take_while(|&w| w < t.t_rep).collect();
    windows.push(t.t_rep);
    let v = visibility_curve(&m.detected(&det, false)?, &m.detected(&det, true)?, &windows)?;
    Ok(Visibility { windows_ns: v.windows.iter().map(|w| w / NS).collect(), values: v.values })
}

fn js(e: raman_hom::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = pulseShape)]
pub fn pulse_shape_js(fwhm_ns: f64, beta: f64, t_rep_ns: f64, points: usize) -> Result<PulseView, JsError> {
    pulse_view(fwhm_ns, beta, t_rep_ns, points).map_err(js)
}

#[wasm_bindgen(js_name = wavePacket)]
pub fn wave_packet_js(fwhm_ns: f64, beta: f64, t_rep_ns: f64, target_p854: f64, pulses: usize) -> Result<WavePacket, JsError> {
    wave_packet(fwhm_ns, beta, t_rep_ns, target_p854, pulses).map_err(js)
}

#[wasm_bindgen(js_name = visibilityCurve)]
pub fn visibility_js(
    fwhm_ns: f64,
    beta: f64,
    t_rep_ns: f64,
    target_p854: f64,
    transmission: f64,
    delta_phi: f64,
    ideal: bool,
) -> Result<Visibility, JsError> {
    visibility(fwhm_ns, beta, t_rep_ns, target_p854, transmission, delta_phi, ideal).map_err(js)
}
