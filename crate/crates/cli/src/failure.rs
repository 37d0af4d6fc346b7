use std::fmt;

/// What went wrong, sorted by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad scenario, missing input file or invalid parameters (exit 2).
    Config(String),
    /// Integrator, fit or estimator failure (exit 3).
    Numerical(String),
    /// Could not write results (exit 1).
    Output(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Output(_) => 1,
        }
    }

    pub fn from_core(e: raman_hom::Error, context: &str) -> Self {
        if e.is_numerical() {
            Failure::Numerical(format!("{context}: {e}"))
        } else {
            Failure::Config(format!("{context}: {e}"))
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Output(m) => write!(f, "output error: {m}"),
        }
    }
}

pub trait Context<T> {
    fn ctx(self, what: &str) -> Result<T, Failure>;
}

impl<T> Context<T> for raman_hom::Result<T> {
    fn ctx(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::from_core(e, what))
    }
}
