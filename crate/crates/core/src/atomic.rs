//! The driven Λ emitter: ground `g`, excited `e`, and two absorbing dark
//! levels reached by the 854 nm Raman decay and the parasitic 850 nm decay.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Radiative lifetime of the excited level used by [`LevelScheme::default`] (s).
pub const DEFAULT_EXCITED_LIFETIME: f64 = 6.924e-9;
/// Fraction of excited-state decays that return to the ground level.
pub const DEFAULT_BACK_FRACTION: f64 = 0.9347;
/// Raman branching ratio of the default profile.
pub const DEFAULT_BRANCHING_854: f64 = 0.90;

/// Spontaneous emission channels out of the excited level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    /// e → g, 393 nm.
    Back393,
    /// e → d854, the Raman photon.
    Raman854,
    /// e → d850, parasitic.
    Raman850,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Back393, Channel::Raman854, Channel::Raman850];

    pub fn label(self) -> &'static str {
        match self {
            Channel::Back393 => "back393",
            Channel::Raman854 => "raman854",
            Channel::Raman850 => "raman850",
        }
    }

    /// Level the emitter lands in after this decay.
    pub fn target_level(self) -> usize {
        match self {
            Channel::Back393 => G,
            Channel::Raman854 => D854,
            Channel::Raman850 => D850,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "back393" | "393" | "back" => Ok(Channel::Back393),
            "raman854" | "854" => Ok(Channel::Raman854),
            "raman850" | "850" => Ok(Channel::Raman850),
            other => Err(Error::UnknownChannel(other.to_string())),
        }
    }
}

/// Basis index of the ground level.
pub const G: usize = 0;
/// Basis index of the excited level.
pub const E: usize = 1;
/// Basis index of the 854 nm dark level.
pub const D854: usize = 2;
/// Basis index of the 850 nm dark level.
pub const D850: usize = 3;
pub const N_LEVELS: usize = 4;

/// Decay constants (s⁻¹) and laser detuning (rad/s) of the emitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelScheme {
    pub gamma_back: f64,
    pub gamma_854: f64,
    pub gamma_850: f64,
    /// Laser detuning from the g→e resonance; positive is blue.
    pub detuning: f64,
}

impl Default for LevelScheme {
    fn default() -> Self {
        let total = 1.0 / DEFAULT_EXCITED_LIFETIME;
        let raman = (1.0 - DEFAULT_BACK_FRACTION) * total;
        LevelScheme {
            gamma_back: DEFAULT_BACK_FRACTION * total,
            gamma_854: DEFAULT_BRANCHING_854 * raman,
            gamma_850: (1.0 - DEFAULT_BRANCHING_854) * raman,
            detuning: 0.0,
        }
    }
}

impl LevelScheme {
    pub fn new(gamma_back: f64, gamma_854: f64, gamma_850: f64, detuning: f64) -> Result<Self> {
        let s = LevelScheme { gamma_back, gamma_854, gamma_850, detuning };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.gamma_back, self.gamma_854, self.gamma_850];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) || !self.detuning.is_finite() {
            return Err(Error::InvalidScheme("decay rates must be finite and non-negative".into()));
        }
        if self.gamma_854 + self.gamma_850 <= 0.0 {
            return Err(Error::InvalidScheme("both Raman decay rates are zero".into()));
        }
        Ok(())
    }

    pub fn gamma_total(&self) -> f64 {
        self.gamma_back + self.gamma_854 + self.gamma_850
    }

    pub fn gamma_raman(&self) -> f64 {
        self.gamma_854 + self.gamma_850
    }

    pub fn rate(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Back393 => self.gamma_back,
            Channel::Raman854 => self.gamma_854,
            Channel::Raman850 => self.gamma_850,
        }
    }

    /// Same scheme with the back-decay channel switched off.
    pub fn without_back_decay(self) -> Self {
        LevelScheme { gamma_back: 0.0, ..self }
    }
}

/// Γ₈₅₄ / (Γ₈₅₄ + Γ₈₅₀): ceiling on the per-pulse Raman photon probability.
pub fn branching_ratio(scheme: &LevelScheme) -> Result<f64> {
    scheme.validate()?;
    Ok(scheme.gamma_854 / scheme.gamma_raman())
}
