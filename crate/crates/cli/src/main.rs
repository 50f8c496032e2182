//! Command-line front end: generate, fit, predict, eval, cv, export.
//!
//! Exit status: 0 on success, 2 on usage errors (bad flags, shape
//! mismatches), 1 on runtime errors (parse failures, numerical trouble).

mod commands;
mod model_file;

use clap::Parser;

use commands::*;

#[derive(Debug, Parser)]
#[command(
    name = "depcam",
    about = "Mixtures of exponential-family PCAs with a diversity prior",
    version
)]
enum Cli {
    /// Write a synthetic binary dataset.
    Generate(GenerateArgs),
    /// Fit a mixture and write a model file.
    Fit(FitArgs),
    /// Assign held-out samples to components.
    Predict(PredictArgs),
    /// Score a model against labeled data.
    Eval(EvalArgs),
    /// K-fold cross validation over a lambda sweep.
    Cv(CvArgs),
    /// Dump plot-ready views of a fitted model.
    Export(ExportArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli {
        Cli::Generate(args) => cmd_generate(args),
        Cli::Fit(args) => cmd_fit(args),
        Cli::Predict(args) => cmd_predict(args),
        Cli::Eval(args) => cmd_eval(args),
        Cli::Cv(args) => cmd_cv(args),
        Cli::Export(args) => cmd_export(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(match e {
            depcam::Error::Usage(_) => 2,
            _ => 1,
        });
    }
}
