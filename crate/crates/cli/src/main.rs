mod commands;
mod failure;
mod output;
mod scenario;
mod seeds;
mod units;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use clap::{Parser, ValueEnum};

use crate::commands::Run;
use crate::failure::Failure;
use crate::output::{Outputs, RunInfo};
use crate::scenario::Loaded;
use crate::seeds::Seeds;

static VERBOSE: AtomicBool = AtomicBool::new(false);

pub fn verbose() -> bool {
    VERBOSE.load(Ordering::Relaxed)
}

/// Progress line on stderr, only with `--verbose`.
#[macro_export]
macro_rules! note {
    ($($arg:tt)*) => {
        if $crate::verbose() {
            eprintln!($($arg)*);
        }
    };
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Fit the generalized-Gaussian pulse shape to a measured histogram.
    FitPulse,
    /// Find the peak Rabi frequency for a target 854 nm probability.
    Calibrate,
    /// Populations and emission rates over the pulse train.
    Train,
    /// Back-decay correlation map and mean back-decay number.
    Backdecay,
    /// Mean back-decay number over the [[sweep]] operating points.
    NmeanSweep,
    /// Quantum-jump trajectories (Monte Carlo oracle).
    Trajectories,
    /// Two-emitter HOM coincidences and visibility.
    Hom,
    /// Residual visibility from neighbouring pulses.
    Residual,
    /// Time-tag estimators on synthetic or recorded detections.
    Analyze,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::FitPulse => "fit-pulse",
            Command::Calibrate => "calibrate",
            Command::Train => "train",
            Command::Backdecay => "backdecay",
            Command::NmeanSweep => "nmean-sweep",
            Command::Trajectories => "trajectories",
            Command::Hom => "hom",
            Command::Residual => "residual",
            Command::Analyze => "analyze",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "raman-hom", version, about = "Back-decay and two-photon interference simulations for a pulsed Raman photon source")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (created if needed).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the scenario value.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

fn run(cli: &Cli) -> Result<PathBuf, Failure> {
    let started = Instant::now();
    let loaded = Loaded::read(&cli.scenario)?;
    let seed = cli.seed.or(loaded.scenario.seed).unwrap_or(0);
    let threads = cli.threads.or(loaded.scenario.threads).unwrap_or(1);
    if threads == 0 {
        return Err(Failure::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Output(format!("thread pool: {e}")))?;
    let mut out = Outputs::new(&cli.out)?;
    let mut seeds = Seeds::new(seed);
    note!("{} on {} (seed {seed}, {threads} threads)", cli.command.name(), cli.scenario.display());
    let r = Run { scenario: &loaded, out: &mut out, seeds: &mut seeds };
    match cli.command {
        Command::FitPulse => commands::fit_pulse_cmd(r),
        Command::Calibrate => commands::calibrate(r),
        Command::Train => commands::train_cmd(r),
        Command::Backdecay => commands::backdecay(r),
        Command::NmeanSweep => commands::nmean_sweep(r),
        Command::Trajectories => commands::trajectories(r),
        Command::Hom => commands::hom(r),
        Command::Residual => commands::residual(r),
        Command::Analyze => commands::analyze(r),
    }?;
    out.finish(RunInfo {
        subcommand: cli.command.name(),
        scenario_path: cli.scenario.clone(),
        scenario_text: loaded.text.clone(),
        seed,
        substreams: seeds.used(),
        threads,
        started,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    VERBOSE.store(cli.verbose, Ordering::Relaxed);
    match run(&cli) {
        Ok(manifest) => {
            note!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("raman-hom: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
