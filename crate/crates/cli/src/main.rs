//! `fmda`: generate curve data, fit and apply curve classifiers, run
//! cross-validated benchmarks and export plot data.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or validation
//! failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fmda::basis::BasisSpec;
use fmda::data::{
    generate_synthetic_with_truth, load_csv, load_csv_detect, save_csv, split_kfold, SyntheticSpec,
};
use fmda::discriminant::{argmax, predict_proba_batch, train, Classifier, MethodSpec, TABLE_ORDER};
use fmda::evaluation::{cross_validate_on, format_table, results_csv, summary_json, CvResult};
use fmda::export::{plot_data, write_plot_files};
use fmda::mixrhlp::FitConfig;
use fmda::FmdaError;

/// Offset added to `--seed` for model fitting when the seed also drives a fold split.
const FIT_SEED_OFFSET: u64 = 7_919;

#[derive(Parser)]
#[command(
    name = "fmda",
    version,
    about = "Curve classification with mixtures of hidden logistic process regressions"
)]
struct Cli {
    /// Suppress summaries on stdout.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labeled dataset.
    Generate(GenerateArgs),
    /// Train a classifier on a labeled dataset.
    Fit(FitCmd),
    /// Classify curves with a saved classifier.
    Predict(PredictArgs),
    /// Cross-validate one method.
    Evaluate(EvaluateArgs),
    /// Cross-validate several methods on shared folds.
    Benchmark(BenchmarkArgs),
    /// Write sub-class assignments, logistic proportions and mean curves.
    ExportPlots(ExportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator configuration (JSON); the built-in default when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output dataset CSV.
    #[arg(long, short)]
    out: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the true sub-class of every curve (`index,label,subclass`).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write the built-in default configuration to this path.
    #[arg(long)]
    dump_spec: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Poly,
    Bspline,
}

#[derive(Args, Clone)]
struct MethodArgs {
    #[arg(long, default_value = "fmda-mixrhlp")]
    method: String,
    #[arg(long, value_enum)]
    basis: Option<BasisArg>,
    /// Polynomial degree.
    #[arg(long)]
    degree: Option<usize>,
    /// B-spline order (degree + 1).
    #[arg(long)]
    order: Option<usize>,
    /// Number of interior B-spline knots.
    #[arg(long)]
    knots: Option<usize>,
    /// Sub-classes per class: one value, or one per class (comma separated).
    #[arg(long = "K", value_delimiter = ',')]
    subclasses: Option<Vec<usize>>,
    /// Regimes per sub-class: one value, or one per class (comma separated).
    #[arg(long = "R", value_delimiter = ',')]
    regimes: Option<Vec<usize>>,
}

#[derive(Args, Clone)]
struct FitArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 300)]
    max_iters: usize,
    /// Relative log-likelihood change that stops EM.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Sub-class initialization strategy (kmeans, random).
    #[arg(long, default_value = "kmeans")]
    init: String,
    /// Variance floor relative to the pooled data variance.
    #[arg(long, default_value_t = 1e-8)]
    variance_floor: f64,
}

impl FitArgs {
    fn config(&self, seed: u64) -> FitConfig {
        FitConfig {
            max_iters: self.max_iters,
            rel_tol: self.tol,
            restarts: self.restarts,
            init: self.init.clone(),
            seed,
            variance_floor: self.variance_floor,
            ..FitConfig::default()
        }
    }
}

#[derive(Args)]
struct FitCmd {
    /// Labeled dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output classifier JSON.
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Classifier JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV, labeled or not.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV `index,predicted,p_1..p_G`.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Optional results CSV `method,fold,error`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    data: PathBuf,
    /// Methods to compare (comma separated); all built-in methods by default.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Directory receiving results.csv and summary.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum)]
    basis: Option<BasisArg>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    knots: Option<usize>,
    #[arg(long = "K", value_delimiter = ',')]
    subclasses: Option<Vec<usize>>,
    #[arg(long = "R", value_delimiter = ',')]
    regimes: Option<Vec<usize>>,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<FmdaError> for Failure {
    fn from(e: FmdaError) -> Self {
        Failure {
            code: if e.is_validation() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn say(quiet: bool, text: &str) {
    if !quiet {
        print!("{text}");
    }
}

fn apply_overrides(
    mut spec: MethodSpec,
    basis: Option<BasisArg>,
    degree: Option<usize>,
    order: Option<usize>,
    knots: Option<usize>,
    subclasses: &Option<Vec<usize>>,
    regimes: &Option<Vec<usize>>,
) -> Result<MethodSpec, Failure> {
    let kind = basis.unwrap_or(match spec.basis {
        BasisSpec::Polynomial { .. } => BasisArg::Poly,
        BasisSpec::Bspline { .. } => BasisArg::Bspline,
    });
    spec.basis = match (kind, spec.basis) {
        (BasisArg::Poly, current) => {
            if order.is_some() || knots.is_some() {
                return Err(usage("--order and --knots apply to the bspline basis"));
            }
            let base = match current {
                BasisSpec::Polynomial { degree } => degree,
                BasisSpec::Bspline { .. } => 3,
            };
            BasisSpec::Polynomial {
                degree: degree.unwrap_or(base),
            }
        }
        (BasisArg::Bspline, current) => {
            if degree.is_some() {
                return Err(usage("--degree applies to the poly basis"));
            }
            let (o, k) = match current {
                BasisSpec::Bspline { order, knots } => (order, knots),
                BasisSpec::Polynomial { .. } => (4, 8),
            };
            BasisSpec::Bspline {
                order: order.unwrap_or(o),
                knots: knots.unwrap_or(k),
            }
        }
    };
    if let Some(k) = subclasses {
        spec.subclasses = k.clone();
    }
    if let Some(r) = regimes {
        spec.regimes = r.clone();
    }
    Ok(spec)
}

impl MethodArgs {
    fn spec(&self) -> Result<MethodSpec, Failure> {
        apply_overrides(
            MethodSpec::named(&self.method)?,
            self.basis,
            self.degree,
            self.order,
            self.knots,
            &self.subclasses,
            &self.regimes,
        )
    }
}

fn cmd_generate(args: &GenerateArgs, quiet: bool) -> CmdResult {
    if let Some(path) = &args.dump_spec {
        let text =
            serde_json::to_string_pretty(&SyntheticSpec::default()).map_err(FmdaError::from)?;
        write_text(path, &(text + "\n"))?;
    }
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<SyntheticSpec>(&text).map_err(|e| {
                usage(format!(
                    "invalid generator configuration {}: {e}",
                    path.display()
                ))
            })?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let data = generate_synthetic_with_truth(&spec)?;
    save_csv(&data.set, &args.out)?;
    if let Some(path) = &args.truth {
        let mut text = String::from("index,label,subclass\n");
        for (i, (label, sub)) in data.set.labels().iter().zip(&data.subclasses).enumerate() {
            writeln!(text, "{i},{label},{sub}").unwrap();
        }
        write_text(path, &text)?;
    }
    let mut summary = format!(
        "wrote {}: n = {}, m = {}, G = {}\n",
        args.out.display(),
        data.set.len(),
        data.set.grid().len(),
        data.set.n_classes()
    );
    for (g, class) in spec.classes.iter().enumerate() {
        let counts: Vec<String> = (1..=class.subclasses.len())
            .map(|k| {
                let c = (0..data.set.len())
                    .filter(|&i| data.set.labels()[i] == g + 1 && data.subclasses[i] == k)
                    .count();
                c.to_string()
            })
            .collect();
        writeln!(
            summary,
            "class {}: sub-class counts {}",
            g + 1,
            counts.join(" ")
        )
        .unwrap();
    }
    say(quiet, &summary);
    Ok(())
}

fn cmd_fit(args: &FitCmd, quiet: bool) -> CmdResult {
    let set = load_csv(&args.data, true)?;
    let method = args.method.spec()?;
    let clf = train(&set, &method, &args.fit.config(args.fit.seed))?;
    clf.save(&args.out)?;
    let mut summary = format!("method {} on {} curves\n", method.method, set.len());
    for (g, class) in clf.classes.iter().enumerate() {
        let d = &class.diagnostics;
        writeln!(
            summary,
            "class {}: log-likelihood {:.6}, {} iterations{}",
            g + 1,
            d.log_likelihood,
            d.iterations,
            if d.converged { "" } else { " (not converged)" }
        )
        .unwrap();
    }
    say(quiet, &summary);
    Ok(())
}

fn cmd_predict(args: &PredictArgs, quiet: bool) -> CmdResult {
    let clf = Classifier::load(&args.model)?;
    let set = load_csv_detect(&args.data)?;
    clf.check_grid(set.grid())?;
    let probs = predict_proba_batch(&clf, set.curves())?;
    let mut text = String::from("index,predicted");
    for g in 1..=clf.n_classes() {
        write!(text, ",p_{g}").unwrap();
    }
    text.push('\n');
    for (i, p) in probs.iter().enumerate() {
        write!(text, "{},{}", i, argmax(p) + 1).unwrap();
        for v in p {
            write!(text, ",{v}").unwrap();
        }
        text.push('\n');
    }
    write_text(&args.out, &text)?;
    say(
        quiet,
        &format!(
            "wrote {} predictions to {}\n",
            probs.len(),
            args.out.display()
        ),
    );
    Ok(())
}

/// Cross-validates each method, reporting per-method failures on stderr.
fn run_methods(
    data: &Path,
    methods: &[MethodSpec],
    folds: usize,
    fit: &FitArgs,
) -> Result<Vec<CvResult>, Failure> {
    let set = load_csv(data, true)?;
    let split = split_kfold(&set, folds, fit.seed)?;
    let cfg = fit.config(fit.seed.wrapping_add(FIT_SEED_OFFSET));
    let mut results = Vec::new();
    for m in methods {
        match cross_validate_on(&set, m, &split, &cfg) {
            Ok(r) => {
                for f in r.folds.iter().filter(|f| f.failure.is_some()) {
                    eprintln!(
                        "{}: fold {} failed: {}",
                        r.method,
                        f.fold,
                        f.failure.as_deref().unwrap_or("")
                    );
                }
                results.push(r);
            }
            Err(e) => eprintln!("{}: {}", m.method, e),
        }
    }
    if results.is_empty() {
        return Err(runtime("every method failed"));
    }
    Ok(results)
}

fn cmd_evaluate(args: &EvaluateArgs, quiet: bool) -> CmdResult {
    let method = args.method.spec()?;
    fmda::discriminant::MethodRegistry::builtin()
        .get(&method.method)?
        .validate(&method)?;
    let results = run_methods(
        &args.data,
        std::slice::from_ref(&method),
        args.folds,
        &args.fit,
    )?;
    if let Some(out) = &args.out {
        write_text(out, &results_csv(&results))?;
    }
    let r = &results[0];
    let errors: Vec<String> = r.fold_errors.iter().map(|e| format!("{e:.4}")).collect();
    let mut summary = format_table(&results);
    writeln!(summary, "fold errors: {}", errors.join(" ")).unwrap();
    say(quiet, &summary);
    Ok(())
}

fn cmd_benchmark(args: &BenchmarkArgs, quiet: bool) -> CmdResult {
    let names: Vec<String> = match &args.methods {
        Some(m) => m.clone(),
        None => TABLE_ORDER.iter().map(|s| s.to_string()).collect(),
    };
    let registry = fmda::discriminant::MethodRegistry::builtin();
    let methods = names
        .iter()
        .map(|name| {
            let spec = apply_overrides(
                MethodSpec::named(name)?,
                args.basis,
                args.degree,
                args.order,
                args.knots,
                &args.subclasses,
                &args.regimes,
            )?;
            registry.get(name)?.validate(&spec)?;
            Ok(spec)
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let results = run_methods(&args.data, &methods, args.folds, &args.fit)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", args.out_dir.display())))?;
    write_text(&args.out_dir.join("results.csv"), &results_csv(&results))?;
    write_text(
        &args.out_dir.join("summary.json"),
        &(summary_json(&results)? + "\n"),
    )?;
    say(quiet, &format_table(&results));
    Ok(())
}

fn cmd_export(args: &ExportArgs, quiet: bool) -> CmdResult {
    let clf = Classifier::load(&args.model)?;
    let set = load_csv_detect(&args.data)?;
    let data = plot_data(&clf, &set)?;
    let files = write_plot_files(&data, &clf.grid, &args.out_dir)?;
    say(
        quiet,
        &format!(
            "wrote {} files to {}\n",
            files.len(),
            args.out_dir.display()
        ),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let q = cli.quiet;
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a, q),
        Command::Fit(a) => cmd_fit(a, q),
        Command::Predict(a) => cmd_predict(a, q),
        Command::Evaluate(a) => cmd_evaluate(a, q),
        Command::Benchmark(a) => cmd_benchmark(a, q),
        Command::ExportPlots(a) => cmd_export(a, q),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
