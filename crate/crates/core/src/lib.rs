//! Simulation of back-decays in a Raman single-photon source: a driven
//! four-level emitter, its photon correlations, two-photon interference and
//! synthetic detector time tags.

pub mod atomic;
pub mod correlator;
pub mod error;
pub mod hom;
pub mod lindblad;
pub mod ode;
pub mod pulse;
pub mod quad;
pub mod timetags;
pub mod trajectory;

pub use atomic::{branching_ratio, Channel, LevelScheme};
pub use correlator::{CoherenceGrid, CorrelationGrid, DelayGrid, Resolution};
pub use error::{Error, Result};
pub use hom::{BeamSplitter, DetectionModel, HomModel, VisibilityCurve};
pub use lindblad::{propagate, DensityMatrix, SimGrid, StateTrajectory};
pub use pulse::{PulseShape, PulseTrain};
pub use timetags::{DetectionRecord, EfficiencySet};
pub use trajectory::{EmissionEvent, TrajectoryStats};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
