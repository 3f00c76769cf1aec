//! Command-line front end: argument parsing, dispatch and exit codes.

pub mod commands;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kpcm::Error;

/// Exit code for a check that ran and failed.
pub const EXIT_VERIFICATION: i32 = 1;
/// Exit code for bad input or usage.
pub const EXIT_INPUT: i32 = 2;
/// Exit code when a window, truncation or tolerance runs out.
pub const EXIT_INDETERMINATE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kpcm", version, about = "KP hierarchy and Calogero-Moser toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Operator algebra.
    #[command(subcommand)]
    Mdo(MdoCommand),
    /// KP flows and the KP equation.
    #[command(subcommand)]
    Kp(KpCommand),
    /// Wave operators.
    #[command(subcommand)]
    Sato(SatoCommand),
    /// Calogero-Moser dynamics.
    #[command(subcommand)]
    Cm(CmCommand),
    /// KP solutions from CM data.
    #[command(subcommand)]
    Bridge(BridgeCommand),
    /// Derive every normalization constant and write them out.
    Calibrate {
        /// Where to write the constants (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args, Clone, Copy)]
pub struct Truncation {
    /// Series order of every coefficient.
    #[arg(long, default_value_t = 8)]
    pub trunc: usize,
    /// Lowest ∂-degree kept.
    #[arg(long = "floor", default_value_t = -6, allow_hyphen_values = true)]
    pub floor: i32,
}

#[derive(Debug, Subcommand)]
pub enum MdoCommand {
    /// Normal form of an operator expression.
    Eval {
        #[arg(long)]
        expr: String,
        #[command(flatten)]
        trunc: Truncation,
    },
}

#[derive(Debug, Subcommand)]
pub enum KpCommand {
    /// `[L, (Lⁿ)₊]`.
    Flow {
        #[arg(long)]
        lax: String,
        #[arg(long)]
        n: u32,
        /// Lowest ∂-degree computed.
        #[arg(long, default_value_t = 6)]
        depth: u32,
        #[command(flatten)]
        trunc: Truncation,
    },
    /// KP residual of a field.
    Residual {
        /// Pair file; the field is built from its tau function.
        #[arg(long, conflicts_with = "u", required_unless_present = "u")]
        tau_from: Option<PathBuf>,
        /// Field u(t) as an expression in t (constant in x and y).
        #[arg(long)]
        u: Option<String>,
        /// Evaluate in floating point instead of exactly.
        #[arg(long)]
        approx: bool,
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
        #[command(flatten)]
        trunc: Truncation,
    },
}

#[derive(Debug, Subcommand)]
pub enum SatoCommand {
    /// Wave operator `W` with `L = W∂W⁻¹`.
    Dress {
        #[arg(long)]
        lax: String,
        #[arg(long, default_value_t = 4)]
        depth: u32,
        #[command(flatten)]
        trunc: Truncation,
    },
    /// Wave operator of a point of the Grassmannian.
    Wave {
        #[arg(long)]
        point: PathBuf,
        #[arg(long, default_value_t = 1)]
        order: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum CmCommand {
    /// Integrate the coordinate flow; writes CSV.
    Simulate {
        #[arg(long)]
        flavor: String,
        #[arg(long)]
        coords: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        dt: f64,
        /// Imaginary part of the time step.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        dt_im: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value = "leapfrog")]
        integrator: String,
        #[arg(long, default_value_t = 1)]
        sample_every: usize,
        /// Write the CSV here and print a JSON summary instead.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact flow `(X + sY^{k-1}, Y)` of a rational pair.
    Exact {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        k: u32,
        /// Rational time, e.g. "1/2".
        #[arg(long, allow_hyphen_values = true)]
        s: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum BridgeCommand {
    /// Full correspondence report for a rational pair.
    Verify {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long, default_value = "-1:1", allow_hyphen_values = true)]
        x_range: String,
        #[arg(long, default_value_t = 201)]
        samples: usize,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
    },
    /// Pole paths of u(·, x, 0) as CSV.
    Poles {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long, default_value = "-1:1", allow_hyphen_values = true)]
        x_range: String,
        #[arg(long, default_value_t = 201)]
        samples: usize,
    },
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. }
        | Error::Input(_)
        | Error::Dimension(_)
        | Error::Shape(_)
        | Error::NotInvertible(_)
        | Error::LatticePoint(_)
        | Error::EmptySeries => EXIT_INPUT,
        Error::Indeterminate(_) | Error::WindowExhausted(_) | Error::TruncationExhausted(_) | Error::Singular => {
            EXIT_INDETERMINATE
        }
        _ => EXIT_VERIFICATION,
    }
}

/// Text written to stdout and whether every check passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub passed: bool,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match commands::dispatch(cli.command) {
        Ok(out) => {
            print!("{}", out.stdout);
            if out.passed {
                0
            } else {
                EXIT_VERIFICATION
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
