mod commands;
mod error;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

/// Specification checking, query and loss compilation, training and
/// certified verification for neural-network properties.
#[derive(Parser, Debug)]
#[command(name = "nnspec", version, arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Type-check a spec, bind it against a manifest and validate the data.
    Check(SpecArgs),
    /// Emit one VNN-LIB file per query plus obligations.json.
    CompileVnnlib {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compile a property into a differentiable-logic loss graph (loss.json).
    CompileLoss {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        loss: LossArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train the network bound to a property with its compiled loss.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        loss: LossArgs,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Verify every query; writes verdicts.json, certificates/ and witnesses/.
    Verify {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 100_000)]
        budget_nodes: usize,
        #[arg(long, default_value_t = 64)]
        max_depth: usize,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Check a certificate or witness file independently of the verifier.
    CheckProof {
        #[command(flatten)]
        spec: SpecArgs,
        /// Certificate (UNSAT) or witness (SAT) JSON.
        #[arg(long)]
        proof: PathBuf,
    },
    /// Evaluate a model on one input.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated decimals or p/q fractions.
        #[arg(long)]
        input: String,
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
    },
    /// Compare float32 fixed-order and exact evaluation of one input.
    Gap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: String,
    },
}

#[derive(Args, Debug, Clone)]
pub struct SpecArgs {
    /// Spec file (alternatively `--spec`).
    #[arg(value_name = "SPEC")]
    pub spec_pos: Option<PathBuf>,
    #[arg(long = "spec", value_name = "SPEC", conflicts_with = "spec_pos")]
    pub spec_flag: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Parameter override `name=value`; takes precedence over the manifest.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    /// Restrict to one property.
    #[arg(long)]
    pub property: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct LossArgs {
    /// Samples per continuous instance, centre included.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    #[arg(long, default_value_t = nnspec::loss::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value_t = ReductionArg::Mean)]
    pub reduction: ReductionArg,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Mode {
    Exact,
    F32,
    F64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ReductionArg {
    Mean,
    Sum,
    Max,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
