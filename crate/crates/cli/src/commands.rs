//! One function per subcommand. Every command is deterministic given its
//! flags; data goes to files or standard output, diagnostics to standard
//! error (via the error return).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use nalgebra::DMatrix;

use depcam::data::{generate_synthetic, kfold_split, load_csv, save_csv, SyntheticConfig};
use depcam::eval::{evaluate, export_hinton, export_reconstructions, ExportFormat};
use depcam::inference::{fit, predict, FitConfig, Prediction};
use depcam::rng::derive_seed;
use depcam::{Error, Result};

use crate::model_file::{read_model, write_model};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of classes.
    #[arg(long, default_value_t = 3)]
    pub classes: usize,

    /// Prototype vectors drawn per class.
    #[arg(long, default_value_t = 3)]
    pub prototypes_per_class: usize,

    /// Copies of each prototype.
    #[arg(long, default_value_t = 50)]
    pub copies: usize,

    /// Data dimensionality.
    #[arg(long, default_value_t = 16)]
    pub dims: usize,

    /// Per-bit flip probability applied to the copies.
    #[arg(long, default_value_t = 0.1)]
    pub flip: f64,

    /// Per-class Bernoulli means, comma separated; one per class.
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.5, 0.1])]
    pub means: Vec<f64>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Noisy dataset CSV.
    #[arg(long)]
    pub out: PathBuf,

    /// Also write the unflipped prototype copies here.
    #[arg(long)]
    pub clean_out: Option<PathBuf>,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        classes: args.classes,
        prototypes_per_class: args.prototypes_per_class,
        copies: args.copies,
        dims: args.dims,
        flip_prob: args.flip,
        class_means: args.means.clone(),
        seed: args.seed,
    };
    let (noisy, clean) = generate_synthetic(&cfg)?;
    save_csv(&noisy, &args.out)?;
    if let Some(path) = &args.clean_out {
        save_csv(&clean, path)?;
    }
    println!("samples={}", noisy.len());
    println!("dims={}", noisy.dim());
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training data CSV.
    #[arg(long)]
    pub data: PathBuf,

    /// Mixture components.
    #[arg(long, default_value_t = 3)]
    pub k: usize,

    /// Latent dimensions per component.
    #[arg(long, default_value_t = 4)]
    pub d: usize,

    #[arg(long, default_value_t = 0.1)]
    pub xi: f64,

    #[arg(long, default_value_t = 0.1)]
    pub varrho: f64,

    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,

    /// Convergence tolerance on the objective.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,

    #[arg(long, default_value_t = 100)]
    pub max_outer: usize,

    #[arg(long, default_value_t = 50)]
    pub max_inner: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,

    /// Objective trace CSV (iter,objective).
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

fn fit_config(args: &FitArgs) -> FitConfig {
    let mut cfg = FitConfig::new(args.k, args.d);
    cfg.xi = args.xi;
    cfg.varrho = args.varrho;
    cfg.lambda = args.lambda;
    cfg.epsilon = args.eps;
    cfg.max_outer = args.max_outer;
    cfg.max_inner = args.max_inner;
    cfg.seed = args.seed;
    cfg
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let data = load_csv(&args.data)?;
    let outcome = fit(&data, &fit_config(args))?;
    write_model(&args.out, &outcome.model, &outcome.report)?;
    if let Some(path) = &args.trace_out {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "iter,objective")?;
        for (i, v) in outcome.report.objective_trace.iter().enumerate() {
            writeln!(out, "{i},{v}")?;
        }
        out.flush()?;
    }
    println!("outer_iters={}", outcome.report.outer_iters);
    println!("converged={}", outcome.report.converged);
    println!("jitter_events={}", outcome.report.jitter_events);
    println!(
        "final_objective={}",
        outcome.report.objective_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file from a previous fit.
    #[arg(long)]
    pub model: PathBuf,

    /// Data CSV; a label column, if present, is ignored.
    #[arg(long)]
    pub data: PathBuf,

    /// Assignments CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let (model, _) = read_model(&args.model)?;
    let data = load_csv(&args.data)?;
    if data.dim() != model.data_dim() {
        return Err(Error::Usage(format!(
            "data has {} columns but model expects {}",
            data.dim(),
            model.data_dim()
        )));
    }
    let mut out = BufWriter::new(File::create(&args.out)?);
    let mut header = String::from("sample_index,z_star");
    for k in 0..model.num_components() {
        header.push_str(&format!(",posterior_{k}"));
    }
    for j in 0..model.latent_dim() {
        header.push_str(&format!(",y_star_{j}"));
    }
    writeln!(out, "{header}")?;
    for i in 0..data.len() {
        let pred = predict(&data.row(i), &model)?;
        let mut line = format!("{i},{}", pred.component);
        for v in pred.posterior.iter() {
            line.push_str(&format!(",{v}"));
        }
        for v in pred.code.iter() {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// Labeled data CSV (final column named "label").
    #[arg(long)]
    pub data: PathBuf,

    /// Relative threshold for counting effective dimensions.
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (model, _) = read_model(&args.model)?;
    let data = load_csv(&args.data)?;
    let report = evaluate(&model, &data, args.tau)?;
    let perm: Vec<String> = report.matched_permutation.iter().map(|p| p.to_string()).collect();
    let dims: Vec<String> = report
        .effective_dims_per_component
        .iter()
        .map(|d| d.to_string())
        .collect();
    println!("accuracy={}", report.accuracy);
    println!("permutation={}", perm.join(","));
    println!("mean_log_likelihood={}", report.mean_log_likelihood);
    println!("effective_dims={}", dims.join(","));
    Ok(())
}

#[derive(Debug, Args)]
pub struct CvArgs {
    /// Labeled data CSV.
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, default_value_t = 5)]
    pub folds: usize,

    #[arg(long, default_value_t = 3)]
    pub k: usize,

    #[arg(long, default_value_t = 4)]
    pub d: usize,

    #[arg(long, default_value_t = 0.1)]
    pub xi: f64,

    #[arg(long, default_value_t = 0.1)]
    pub varrho: f64,

    /// Prior weights to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 10.0])]
    pub lambda_list: Vec<f64>,

    /// Number of repetitions; repetition s reshuffles the folds and reseeds
    /// the fits through seeds derived from --seed and s.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,

    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,

    #[arg(long, default_value_t = 100)]
    pub max_outer: usize,

    #[arg(long, default_value_t = 50)]
    pub max_inner: usize,

    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Per-run and summary CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_cv(args: &CvArgs) -> Result<()> {
    let data = load_csv(&args.data)?;
    if data.labels().is_none() {
        return Err(Error::Usage(
            "cross validation needs a labeled dataset".into(),
        ));
    }
    if args.seeds == 0 {
        return Err(Error::Usage("need at least one repetition".into()));
    }
    if args.lambda_list.is_empty() {
        return Err(Error::Usage("need at least one lambda".into()));
    }

    // Folds and fit seeds depend on the repetition but never on lambda, so
    // every lambda is scored against identical splits and initializations.
    let mut splits = Vec::with_capacity(args.seeds);
    for s in 0..args.seeds {
        let split_seed = derive_seed(args.seed, &format!("cv/split/{s}"));
        splits.push(kfold_split(data.len(), args.folds, split_seed)?);
    }

    let mut out = BufWriter::new(File::create(&args.out)?);
    writeln!(out, "kind,lambda,seed,fold,accuracy,mean_ll")?;
    for &lambda in &args.lambda_list {
        let mut seed_means = Vec::with_capacity(args.seeds);
        for s in 0..args.seeds {
            let mut fold_accs = Vec::with_capacity(args.folds);
            for (f, (train_idx, test_idx)) in splits[s].iter().enumerate() {
                let train = data.subset(train_idx)?;
                let test = data.subset(test_idx)?;
                let mut cfg = FitConfig::new(args.k, args.d);
                cfg.xi = args.xi;
                cfg.varrho = args.varrho;
                cfg.lambda = lambda;
                cfg.epsilon = args.eps;
                cfg.max_outer = args.max_outer;
                cfg.max_inner = args.max_inner;
                cfg.seed = derive_seed(args.seed, &format!("cv/seed/{s}/fold/{f}"));
                let outcome = fit(&train, &cfg)?;
                let report = evaluate(&outcome.model, &test, args.tau)?;
                writeln!(
                    out,
                    "run,{lambda},{s},{f},{},{}",
                    report.accuracy, report.mean_log_likelihood
                )?;
                fold_accs.push(report.accuracy);
            }
            let mean = fold_accs.iter().sum::<f64>() / fold_accs.len() as f64;
            writeln!(out, "seed_mean,{lambda},{s},,{mean},")?;
            seed_means.push(mean);
        }
        let mean = seed_means.iter().sum::<f64>() / seed_means.len() as f64;
        let std = if seed_means.len() > 1 {
            let var = seed_means.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
                / (seed_means.len() - 1) as f64;
            var.sqrt()
        } else {
            0.0
        };
        writeln!(out, "lambda_mean,{lambda},,,{mean},")?;
        writeln!(out, "lambda_std,{lambda},,,{std},")?;
        println!("lambda={lambda} mean_accuracy={mean} std={std}");
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportWhat {
    /// Scale magnitudes per component, plot-ready.
    Hinton,
    /// Reconstructed Bernoulli means per sample.
    Means,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormatArg {
    Csv,
    Pgm,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// Data CSV; required by --what means.
    #[arg(long)]
    pub data: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub what: ExportWhat,

    #[arg(long, value_enum, default_value_t = ExportFormatArg::Csv)]
    pub format: ExportFormatArg,

    /// Output file (csv) or directory (pgm).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_export(args: &ExportArgs) -> Result<()> {
    let (model, _) = read_model(&args.model)?;
    match args.what {
        ExportWhat::Hinton => {
            if args.format == ExportFormatArg::Pgm {
                return Err(Error::Usage("hinton export is CSV only".into()));
            }
            export_hinton(&model, &args.out)
        }
        ExportWhat::Means => {
            let path = args
                .data
                .as_ref()
                .ok_or_else(|| Error::Usage("--what means needs --data".into()))?;
            let data = load_csv(path)?;
            if data.dim() != model.data_dim() {
                return Err(Error::Usage(format!(
                    "data has {} columns but model expects {}",
                    data.dim(),
                    model.data_dim()
                )));
            }
            let k = model.num_components();
            let d = model.latent_dim();
            let n = data.len();
            let mut resp = DMatrix::zeros(n, k);
            let mut codes = vec![DMatrix::zeros(n, d); k];
            for i in 0..n {
                let Prediction {
                    posterior, code, ..
                } = predict(&data.row(i), &model)?;
                for j in 0..k {
                    resp[(i, j)] = posterior[j];
                    // Only the argmax component's row is ever read back.
                    codes[j].row_mut(i).tr_copy_from(&code);
                }
            }
            let format = match args.format {
                ExportFormatArg::Csv => ExportFormat::Csv,
                ExportFormatArg::Pgm => ExportFormat::Pgm,
            };
            export_reconstructions(&model, &data, &codes, &resp, &args.out, format)
        }
    }
}
