//! The `bcie` command line: prepare, train, evaluate, simulate, serve.
//!
//! Every flag can also come from a `--config` file of `key = value` lines
//! using the flag's name; flags take precedence over the file, and the file
//! over built-in defaults. Exit codes: 0 success, 1 usage, 2 data, 3
//! numerical failure.

mod args;
mod commands;
mod error;

pub use args::{Cli, Command, Params, PrepareArgs, ServeArgs, Settings, SimulateArgs};
pub use commands::{
    cmd_evaluate, cmd_prepare, cmd_serve, cmd_simulate, cmd_train, load_model, service_state, session_config,
    train_config, SimulateSummary, TrainSummary,
};
pub use error::{CliError, CliResult, ErrorKind};

use bcie_core::metrics::report_summary;

/// Runs one parsed invocation, printing results to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    let p = &cli.params;
    match &cli.command {
        Command::Prepare(a) => {
            print!("{}", cmd_prepare(p, a)?);
        }
        Command::Train => {
            let t = cmd_train(p)?;
            match t.best_validation_hit {
                Some(h) => println!("best epoch {} (validation hit@10 {h:.4})", t.best_epoch),
                None => println!("best epoch {}", t.best_epoch),
            }
            println!("checkpoint {}", t.checkpoint.display());
        }
        Command::Evaluate => {
            print!("{}", cmd_evaluate(p)?);
        }
        Command::Simulate(a) => {
            let s = cmd_simulate(p, a)?;
            print!("{}", report_summary(&s.report));
            println!("written to {}", s.out.display());
        }
        Command::Serve(a) => cmd_serve(p, a)?,
    }
    Ok(())
}
