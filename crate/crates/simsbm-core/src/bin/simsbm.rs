//! Command-line front end: train, evaluate, expand, experiment, predict.
//!
//! Machine-readable results go to files under `--out-dir`; progress and
//! diagnostics go to standard error (set `RUST_LOG=debug` for per-iteration
//! likelihood lines). Exit codes: 0 success, 1 configuration error, 2 data
//! error, 3 fitting error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use simsbm_core::{
    baseline_frequency, baseline_naive_bayes, evaluate_scorer, expand_lower_order, fit,
    load_dataset, load_model, parse_spec_shorthand, save_dataset, save_fit_report, save_model,
    split, Dataset, Error, FitConfig, Keep, MetricReport, ModelSpec, Result, Scorer,
    ShorthandType, SpecMode, TrainedModel, Vocabulary,
};
use simsbm_core::io::save_dataset_header;

#[derive(Parser)]
#[command(
    name = "simsbm",
    version,
    about = "Mixed-membership block models over multipartite interaction data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a dataset and write it with its fit report
    Train(TrainArgs),
    /// Score a dataset with a trained model and write ranking metrics
    Evaluate(EvaluateArgs),
    /// Rewrite a dataset at a lower interaction order
    Expand(ExpandArgs),
    /// Split, fit with restarts, evaluate each, and aggregate
    Experiment(ExperimentArgs),
    /// Score one context (one token per layer) to standard output
    Predict(PredictArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Model structure: comma-separated `type:multiplicity@clusters`,
    /// e.g. "f:2@5,g:1@3"
    #[arg(long)]
    spec: String,
    /// Base RNG seed; restart r uses seed + r
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    restarts: usize,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    /// Consecutive iterations with relative likelihood change below
    /// --rel-tol required to stop
    #[arg(long, default_value_t = 30)]
    patience: usize,
    #[arg(long, default_value_t = 1e-4)]
    rel_tol: f64,
    /// Worker threads for parallel restarts and chunked passes
    /// (0 = all cores)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Allow unordered parallel reduction: faster, but results may vary
    /// run to run
    #[arg(long)]
    nondeterministic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KeepArg {
    /// Keep only the highest-likelihood restart's parameters
    Best,
    /// Write every restart's parameters
    All,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (TSV with a `#types ... out` header)
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, value_enum, default_value_t = KeepArg::Best)]
    keep: KeepArg,
    /// Directory for model.json and fit_report.json
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trained model (model.json)
    #[arg(long)]
    model: PathBuf,
    /// Dataset to score; tokens must be known to the model
    #[arg(long)]
    data: PathBuf,
    /// Training dataset; when given, frequency and naive Bayes baselines
    /// are evaluated on the same data
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Directory for metrics.json and metrics.txt
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExpandArgs {
    #[arg(long)]
    data: PathBuf,
    /// Source structure, e.g. "f:3" (cluster counts optional here)
    #[arg(long)]
    from: String,
    /// Target structure with reduced multiplicities, e.g. "f:2"
    #[arg(long)]
    to: String,
    /// Output TSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
    /// Fraction of observation weight assigned to the training side
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    /// Seed for the train/test split (independent of --seed)
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Directory for experiment.json, report.txt and best_model.json
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// One entity token per layer, in header order
    #[arg(required = true)]
    tokens: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Expand(args) => cmd_expand(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Predict(args) => cmd_predict(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn install_thread_pool(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot configure {jobs} worker threads: {e}")))
}

fn fit_config(args: &FitArgs, keep: Keep) -> FitConfig {
    FitConfig {
        rel_tol: args.rel_tol,
        patience: args.patience,
        max_iters: args.max_iters,
        restarts: args.restarts,
        seed: args.seed,
        keep,
        deterministic: !args.nondeterministic,
    }
}

/// Parses `--spec`, requiring a cluster count for every type.
fn parse_full_spec(input: &str) -> Result<Vec<ShorthandType>> {
    let shorthand = parse_spec_shorthand(input)?;
    for s in &shorthand {
        if s.clusters.is_none() {
            return Err(Error::Config(format!(
                "spec shorthand {input:?}: type {:?} needs a cluster count (name:multiplicity@clusters)",
                s.name
            )));
        }
    }
    Ok(shorthand)
}

/// Loads a dataset whose spec is inferred from the file, with cluster counts
/// and expected multiplicities from the shorthand. The header fixes layer
/// order; the shorthand must agree with it type for type.
fn load_with_shorthand(
    path: &Path,
    shorthand: &[ShorthandType],
) -> Result<(Dataset, Vocabulary)> {
    let cluster_counts: Vec<(String, usize)> = shorthand
        .iter()
        .map(|s| (s.name.clone(), s.clusters.unwrap_or(1)))
        .collect();
    let (data, vocab) = load_dataset(path, SpecMode::Infer { cluster_counts: &cluster_counts })?;
    let blocks = data.spec().type_blocks();
    for (t, ty) in data.spec().types.iter().enumerate() {
        let declared = shorthand
            .iter()
            .find(|s| s.name == ty.name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "type {:?} appears in the data header but not in --spec",
                    ty.name
                ))
            })?;
        if declared.multiplicity != blocks[t].len() {
            return Err(Error::Config(format!(
                "--spec gives type {:?} multiplicity {}, but the data header has {} {:?} layers",
                ty.name,
                declared.multiplicity,
                blocks[t].len(),
                ty.name
            )));
        }
    }
    Ok((data, vocab))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let shorthand = parse_full_spec(&args.fit.spec)?;
    install_thread_pool(args.fit.jobs)?;
    let (data, vocab) = load_with_shorthand(&args.data, &shorthand)?;
    let spec = data.spec().clone();
    log::info!(
        "loaded {}: {} distinct observations, total weight {}, {}",
        args.data.display(),
        data.observations().len(),
        data.total_weight(),
        spec.notation()
    );
    let keep = match args.keep {
        KeepArg::Best => Keep::BestLikelihood,
        KeepArg::All => Keep::All,
    };
    let cfg = fit_config(&args.fit, keep);
    let report = fit(&spec, &data, &cfg)?;
    let best = report.selected_report();
    log::info!(
        "selected restart seed {} after {} iterations (converged: {}), log-likelihood {}",
        best.seed,
        best.iterations,
        best.converged,
        best.final_log_likelihood
    );
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let trained = TrainedModel::new(report.best_model().clone(), vocab.clone())?;
    save_model(&trained, &args.out_dir.join("model.json"))?;
    save_fit_report(&args.out_dir.join("fit_report.json"), &spec, &cfg, &report)?;
    if matches!(keep, Keep::All) {
        for (i, restart) in report.restarts.iter().enumerate() {
            let model = restart.model.clone().expect("keep=all retains every model");
            let trained = TrainedModel::new(model, vocab.clone())?;
            save_model(&trained, &args.out_dir.join(format!("model.restart{i}.json")))?;
        }
    }
    log::info!("wrote {}", args.out_dir.join("model.json").display());
    Ok(())
}

/// One labeled metric section of an evaluation: the six ranking metrics plus
/// the model's (or baseline's) log-likelihood on the scored data.
struct Section {
    label: &'static str,
    metrics: MetricReport,
    log_likelihood: f64,
}

fn section_json(s: &Section) -> serde_json::Value {
    let mut v = serde_json::to_value(&s.metrics).expect("metric report serializes");
    v["log_likelihood"] = serde_json::json!(s.log_likelihood);
    v
}

fn sections_text(sections: &[Section]) -> String {
    let mut out = String::new();
    for s in sections {
        for (name, value) in MetricReport::fields().iter().zip(s.metrics.values()) {
            out.push_str(&format!("{}.{name} = {value}\n", s.label));
        }
        out.push_str(&format!("{}.log_likelihood = {}\n", s.label, s.log_likelihood));
    }
    out
}

/// Log-likelihood of count-weighted data under any scorer.
fn scorer_log_likelihood(scorer: &dyn Scorer, data: &Dataset) -> Result<f64> {
    let mut ll = 0.0;
    for obs in data.observations() {
        let probs = scorer.score(&obs.context)?;
        ll += obs.count as f64 * probs[obs.output].max(simsbm_core::PROB_FLOOR).ln();
    }
    Ok(ll)
}

fn baseline_sections(train: &Dataset, test: &Dataset) -> Result<Vec<Section>> {
    let bl = baseline_frequency(train)?;
    let nb = baseline_naive_bayes(train)?;
    Ok(vec![
        Section {
            label: "baseline_frequency",
            metrics: evaluate_scorer(&bl, test)?,
            log_likelihood: scorer_log_likelihood(&bl, test)?,
        },
        Section {
            label: "baseline_naive_bayes",
            metrics: evaluate_scorer(&nb, test)?,
            log_likelihood: scorer_log_likelihood(&nb, test)?,
        },
    ])
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let trained = load_model(&args.model)?;
    let spec = trained.model.spec();
    let (test, _) =
        load_dataset(&args.data, SpecMode::Explicit { spec, vocab: &trained.vocab })?;
    let mut sections = vec![Section {
        label: "model",
        metrics: evaluate_scorer(&trained.model, &test)?,
        log_likelihood: trained.model.log_likelihood(&test)?,
    }];
    if let Some(train_path) = &args.train_data {
        let (train, _) =
            load_dataset(train_path, SpecMode::Explicit { spec, vocab: &trained.vocab })?;
        sections.extend(baseline_sections(&train, &test)?);
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let mut json = serde_json::json!({
        "format": "simsbm-metrics",
        "version": 1,
        "notation": spec.notation(),
        "rows": test.total_weight(),
    });
    for s in &sections {
        json[s.label] = section_json(s);
    }
    write_json(&args.out_dir.join("metrics.json"), &json)?;
    fs::write(args.out_dir.join("metrics.txt"), sections_text(&sections))
        .map_err(|e| Error::io(&args.out_dir.join("metrics.txt"), e))?;
    log::info!("wrote {}", args.out_dir.join("metrics.json").display());
    Ok(())
}

fn cmd_expand(args: ExpandArgs) -> Result<()> {
    let from_short = parse_spec_shorthand(&args.from)?;
    let to_short = parse_spec_shorthand(&args.to)?;
    let (data, vocab) = match load_with_shorthand(&args.data, &from_short) {
        Err(Error::EmptyData) => {
            // an empty dataset expands to an empty dataset
            let layers = to_short
                .iter()
                .flat_map(|s| std::iter::repeat_n(s.name.clone(), s.multiplicity))
                .collect::<Vec<_>>();
            save_dataset_header(&layers, &args.out)?;
            return Ok(());
        }
        other => other?,
    };
    let spec_from = data.spec().clone();
    let mut types = spec_from.types.clone();
    // same types (clusters are irrelevant here), layers from the target
    // shorthand, grouped in its order
    let mut layers = Vec::new();
    for s in &to_short {
        if !types.iter().any(|t| t.name == s.name) {
            return Err(Error::Config(format!(
                "--to names type {:?}, which is not in the source data",
                s.name
            )));
        }
        layers.extend(std::iter::repeat_n(s.name.clone(), s.multiplicity));
    }
    types.retain(|t| to_short.iter().any(|s| s.name == t.name));
    if types.len() != spec_from.types.len() {
        return Err(Error::Config(
            "--to must keep every type of the source data (dropping a type is a multiplicity-0 rewrite, which is not supported)".into(),
        ));
    }
    let spec_to = ModelSpec::new(types, layers, spec_from.output_count)?;
    let expanded = expand_lower_order(&data, &spec_from, &spec_to)?;
    save_dataset(&expanded, &vocab, &args.out)?;
    log::info!(
        "expanded {} -> {}: {} distinct observations, total weight {}",
        spec_from.notation(),
        spec_to.notation(),
        expanded.observations().len(),
        expanded.total_weight()
    );
    Ok(())
}

struct Aggregate {
    mean: f64,
    stderr: f64,
}

/// Mean and standard error (sample standard deviation over sqrt n).
fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Aggregate { mean, stderr: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Aggregate { mean, stderr: (var / n).sqrt() }
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let shorthand = parse_full_spec(&args.fit.spec)?;
    install_thread_pool(args.fit.jobs)?;
    let (data, vocab) = load_with_shorthand(&args.data, &shorthand)?;
    let spec = data.spec().clone();
    let (train, test) = split(&data, args.train_fraction, args.split_seed)?;
    log::info!(
        "{}: split weight {} -> train {}, test {}",
        spec.notation(),
        data.total_weight(),
        train.total_weight(),
        test.total_weight()
    );
    // every restart's model is evaluated, so all must be kept
    let cfg = fit_config(&args.fit, Keep::All);
    let report = fit(&spec, &train, &cfg)?;

    let mut restart_rows = Vec::with_capacity(report.restarts.len());
    let mut metric_columns: Vec<Vec<f64>> = vec![Vec::new(); MetricReport::fields().len()];
    let mut ll_column = Vec::new();
    for restart in &report.restarts {
        let model = restart.model.as_ref().expect("keep=all retains every model");
        let metrics = evaluate_scorer(model, &test)?;
        let test_ll = model.log_likelihood(&test)?;
        for (col, v) in metric_columns.iter_mut().zip(metrics.values()) {
            col.push(v);
        }
        ll_column.push(test_ll);
        restart_rows.push(serde_json::json!({
            "seed": restart.seed,
            "iterations": restart.iterations,
            "converged": restart.converged,
            "train_log_likelihood": restart.final_log_likelihood,
            "test_log_likelihood": test_ll,
            "metrics": serde_json::to_value(&metrics).expect("metric report serializes"),
        }));
    }

    let mut agg_json = serde_json::Map::new();
    let mut report_lines = Vec::new();
    for (name, col) in MetricReport::fields().iter().zip(&metric_columns) {
        let a = aggregate(col);
        agg_json.insert(
            (*name).to_string(),
            serde_json::json!({ "mean": a.mean, "stderr": a.stderr }),
        );
        report_lines.push((*name, a));
    }
    let ll_agg = aggregate(&ll_column);
    agg_json.insert(
        "test_log_likelihood".into(),
        serde_json::json!({ "mean": ll_agg.mean, "stderr": ll_agg.stderr }),
    );

    let baselines = baseline_sections(&train, &test)?;

    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let best_model = report.best_model().clone();
    save_model(
        &TrainedModel::new(best_model, vocab)?,
        &args.out_dir.join("best_model.json"),
    )?;

    let mut json = serde_json::json!({
        "format": "simsbm-experiment",
        "version": 1,
        "notation": spec.notation(),
        "train_fraction": args.train_fraction,
        "split_seed": args.split_seed,
        "train_weight": train.total_weight(),
        "test_weight": test.total_weight(),
        "restarts": restart_rows,
        "selected": report.selected,
        "aggregate": serde_json::Value::Object(agg_json),
    });
    for s in &baselines {
        json[s.label] = section_json(s);
    }
    write_json(&args.out_dir.join("experiment.json"), &json)?;

    let mut text = format!(
        "{} on {} (train weight {}, test weight {}, {} restarts)\n\n",
        spec.notation(),
        args.data.display(),
        train.total_weight(),
        test.total_weight(),
        report.restarts.len()
    );
    text.push_str(&format!(
        "{:<26} {:>12} {:>12} {:>12} {:>12}\n",
        "metric", "mean", "stderr", "frequency", "naive-bayes"
    ));
    for (i, (name, a)) in report_lines.iter().enumerate() {
        text.push_str(&format!(
            "{:<26} {:>12.6} {:>12.6} {:>12.6} {:>12.6}\n",
            name,
            a.mean,
            a.stderr,
            baselines[0].metrics.values()[i],
            baselines[1].metrics.values()[i]
        ));
    }
    text.push_str(&format!(
        "{:<26} {:>12.6} {:>12.6} {:>12.6} {:>12.6}\n",
        "test_log_likelihood",
        ll_agg.mean,
        ll_agg.stderr,
        baselines[0].log_likelihood,
        baselines[1].log_likelihood
    ));
    let best = report.selected_report();
    text.push_str(&format!(
        "\nselected restart: seed {} (train log-likelihood {})\n",
        best.seed, best.final_log_likelihood
    ));
    fs::write(args.out_dir.join("report.txt"), text)
        .map_err(|e| Error::io(&args.out_dir.join("report.txt"), e))?;
    log::info!("wrote {}", args.out_dir.join("experiment.json").display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let trained = load_model(&args.model)?;
    let tokens: Vec<&str> = args.tokens.iter().map(String::as_str).collect();
    let probs = trained.predict_tokens(&tokens)?;
    let mut ranked: Vec<(usize, f64)> = probs.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (o, p) in ranked {
        println!("{}\t{p}", trained.vocab.outputs().token(o));
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
