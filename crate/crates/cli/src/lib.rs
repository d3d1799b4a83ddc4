//! Command-line driver: `generate`, `train`, `eval`, `ablate` and
//! `selfcheck`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

pub mod ablate;
pub mod config;
pub mod error;
pub mod eval;
pub mod generate;
pub mod selfcheck;
pub mod train;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Context, FileConfig, RunConfig, Scale, DATA_ROOT_ENV, RUN_FILE};
pub use error::{CliError, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "flowrecon", version, about = "Sparse-to-dense 3D intraventricular flow reconstruction")]
pub struct Cli {
    /// TOML file with defaults for any subcommand flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root for datasets, runs and reports [env: FLOWRECON_DATA; default: data]
    #[arg(long, global = true)]
    pub data_root: Option<PathBuf>,
    /// Size preset bundling grid, channel divisor, epochs and batch size [default: desk]
    #[arg(long, global = true, value_enum)]
    pub scale: Option<Scale>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate geometries and write a dataset with folds
    Generate(generate::GenerateArgs),
    /// Train one model on one component of one fold
    Train(train::TrainArgs),
    /// Score component checkpoints on test folds
    Eval(eval::EvalArgs),
    /// Run the skip-connection or input-configuration study
    Ablate(ablate::AblateArgs),
    /// Gradient, adjoint, divergence, mask and PSNR checks
    Selfcheck(selfcheck::SelfcheckArgs),
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Context::resolve(cli.scale, cli.data_root.clone(), &file);
    match &cli.command {
        Command::Generate(a) => generate::run(&ctx, a, &file),
        Command::Train(a) => train::run(&ctx, a, &file),
        Command::Eval(a) => eval::run(&ctx, a, &file),
        Command::Ablate(a) => ablate::run(&ctx, a, &file),
        Command::Selfcheck(a) => selfcheck::run(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["flowrecon"]), EXIT_USAGE);
        assert_eq!(run(["flowrecon", "train", "--fold", "zero"]), EXIT_USAGE);
        assert_eq!(run(["flowrecon", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["flowrecon", "--help"]), EXIT_OK);
    }
}
