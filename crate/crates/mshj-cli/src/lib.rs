//! Config-driven command line for Hamilton-Jacobi verification: pick or
//! define a field theory, declare candidates in a plain-text config, and run
//! residual suites, equivalence checks, and solution reconstruction.
//!
//! Exit codes are a stable contract: 0 pass, 1 residual/property failure,
//! 2 configuration or usage error, 3 numerical failure (non-convergence,
//! domain exit, blow-up).

pub mod commands;
pub mod config;
pub mod render;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "mshj",
    version,
    about = "Verify Hamilton-Jacobi candidates for first-order field theories on grids"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Run configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,

    /// Pass tolerance (overrides [run] tolerance; default 1e-8).
    #[arg(long, value_name = "FLOAT")]
    pub tol: Option<f64>,

    /// Multiply every grid axis count by this integer.
    #[arg(long, value_name = "INT")]
    pub grid_scale: Option<usize>,

    /// Worker threads for grid sweeps (default: $MSHJ_JOBS, else all cores).
    #[arg(long, value_name = "INT")]
    pub jobs: Option<usize>,

    /// CSV output path: per-point residuals for verify, the trace for
    /// reconstruct (which otherwise streams the trace to stdout).
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,

    /// Suppress report text; the exit code carries the verdict.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Side {
    Lagrangian,
    Hamiltonian,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Lagrangian => "lagrangian",
            Side::Hamiltonian => "hamiltonian",
        })
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Mode {
    Generalized,
    Standard,
    Classic,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Generalized => "generalized",
            Mode::Standard => "standard",
            Mode::Classic => "classic",
        })
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Print regularity and Legendre round-trip diagnostics for the model.
    CheckTheory(Common),

    /// Run one residual suite for a declared candidate on the grid.
    ///
    /// With --candidate naming a family entry, runs the complete-solution
    /// check (slices, Jacobian determinant, coverage probes) instead; the
    /// --mode flag does not apply there.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Which side of the Legendre correspondence to evaluate.
        #[arg(long, value_enum)]
        side: Side,
        /// Which equation system to evaluate.
        #[arg(long, value_enum)]
        mode: Mode,
        /// Candidate name from the config; defaults to the unique candidate
        /// of the kind the suite needs.
        #[arg(long)]
        candidate: Option<String>,
    },

    /// Evaluate a jet field on both sides of the Legendre correspondence.
    Equivalence {
        #[command(flatten)]
        common: Common,
        /// Jet field candidate name (defaults to the unique one).
        #[arg(long)]
        candidate: Option<String>,
    },

    /// Integrate a jet field to a section; emit the CSV trace and verify it.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Jet field candidate name (defaults to the unique one).
        #[arg(long)]
        candidate: Option<String>,
        /// Base point, comma-separated (overrides [reconstruct] x0).
        #[arg(long, value_name = "LIST")]
        x0: Option<String>,
        /// Initial field value, comma-separated (overrides [reconstruct] u0).
        #[arg(long, value_name = "LIST")]
        u0: Option<String>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::CheckTheory(common) => common,
            Command::Verify { common, .. } => common,
            Command::Equivalence { common, .. } => common,
            Command::Reconstruct { common, .. } => common,
        }
    }
}

fn init_jobs(flag: Option<usize>) {
    let jobs = flag.or_else(|| {
        std::env::var("MSHJ_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(j) = jobs {
        if j >= 1 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build_global();
        }
    }
}

/// Parses argv, dispatches, and returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let common = cli.command.common();
    init_jobs(common.jobs);
    let ctx = match commands::Ctx::build(common) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::CheckTheory(_) => commands::check_theory(&ctx),
        Command::Verify {
            side,
            mode,
            candidate,
            ..
        } => commands::verify(&ctx, *side, *mode, candidate.as_deref()),
        Command::Equivalence { candidate, .. } => {
            commands::equivalence(&ctx, candidate.as_deref())
        }
        Command::Reconstruct {
            candidate, x0, u0, ..
        } => commands::reconstruct(&ctx, candidate.as_deref(), x0.as_deref(), u0.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
