mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use farescale::io::{load_csv, load_model, save_model, write_data_csv, write_matrix_csv, write_trace_csv, CsvOptions};
use farescale::scores::builtin_score_estimators;
use farescale::svd::builtin_svd_strategies;
use farescale::{diagnose, DataMatrix, ErrorKind, Estimator, FaConfig, FaError, FaModel, Psi2Init, SimSpec};

const EXIT_INVALID: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

#[derive(Parser)]
#[command(name = "farescale", version, about = "Random-factor analysis for wide data (p > n)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a k-factor model and write it as JSON.
    Fit(FitArgs),
    /// Compute factor scores for a data set under a fitted model.
    Scores(ScoresArgs),
    /// Draw a synthetic data set from a JSON simulation spec.
    Simulate(SimulateArgs),
    /// Print fit diagnostics for a model and data set.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct CsvArgs {
    /// Input CSV (rows are observations).
    #[arg(long)]
    input: PathBuf,
    /// The first row holds values, not column names.
    #[arg(long)]
    no_header: bool,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

impl CsvArgs {
    fn options(&self, standardize: bool) -> Result<CsvOptions, FaError> {
        if !self.delimiter.is_ascii() {
            return Err(FaError::InvalidInput(format!("delimiter '{}' is not ASCII", self.delimiter)));
        }
        Ok(CsvOptions {
            has_header: !self.no_header,
            delimiter: self.delimiter as u8,
            standardize,
        })
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    csv: CsvArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value = "subtract")]
    rule: String,
    /// SVD route: auto, gram or cross-product.
    #[arg(long, default_value = "auto")]
    svd: String,
    /// Start at ψ²_j = V · S_xx,jj.
    #[arg(long, default_value_t = 0.5)]
    psi_init: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol_psi: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol_trace: f64,
    /// Scale columns to unit variance before fitting (the default).
    #[arg(long, overrides_with = "no_standardize")]
    standardize: bool,
    #[arg(long, overrides_with = "standardize")]
    no_standardize: bool,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write `<prefix>_tail_sum.svg` and `<prefix>_min_psi2.svg`.
    #[arg(long)]
    plot_out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoresArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
    #[arg(long, default_value = "bartlett")]
    kind: String,
    #[arg(long)]
    output: PathBuf,
    /// Standardized residuals (Bartlett scores only).
    #[arg(long)]
    residuals_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
}

fn exit_code(e: &FaError) -> u8 {
    match e.kind() {
        ErrorKind::InvalidInput => EXIT_INVALID,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

fn configure_threads() -> Result<(), FaError> {
    let Ok(raw) = std::env::var("FA_SVD_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| FaError::InvalidInput(format!("FA_SVD_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| FaError::Numerical(format!("could not configure thread pool: {e}")))
}

/// Loads data for an existing model, putting it on the model's column scale.
fn load_for_model(csv: &CsvArgs, model: &FaModel) -> Result<DataMatrix, FaError> {
    let x = load_csv(&csv.input, &csv.options(false)?)?;
    if x.p() != model.p() {
        return Err(FaError::InvalidInput(format!(
            "{} has {} columns but the model has {} variables",
            csv.input.display(),
            x.p(),
            model.p()
        )));
    }
    if !csv.no_header && x.column_names() != model.column_names.as_slice() {
        eprintln!("warning: column names in {} differ from the model's", csv.input.display());
    }
    if model.standardized {
        x.apply_scales(model.column_scales.as_slice())
    } else {
        Ok(x)
    }
}

fn run_fit(args: &FitArgs) -> Result<u8, FaError> {
    let standardize = args.standardize || !args.no_standardize;
    let mut routes = builtin_svd_strategies();
    let names = routes.names().join(", ");
    let svd = routes
        .take(&args.svd)
        .ok_or_else(|| FaError::InvalidInput(format!("unknown SVD route '{}' (available: {names})", args.svd)))?;

    let x = load_csv(&args.csv.input, &args.csv.options(standardize)?)?;
    let config = FaConfig::new(args.k)
        .with_rule(args.rule.clone())
        .with_psi2_init(Psi2Init::SxxFraction(args.psi_init))
        .with_max_iter(args.max_iter)
        .with_tol_psi(args.tol_psi)
        .with_tol_trace(args.tol_trace);
    config.validate(x.n(), x.p())?;
    let model = Estimator::default().with_svd(svd).fit(&x, &config)?;

    save_model(&model, &args.output)?;
    let trace_path = match (&args.trace_out, &args.plot_out) {
        (Some(path), _) => Some(path.clone()),
        (None, Some(prefix)) if !plot::AVAILABLE => Some(suffixed(prefix, "_trace.csv")),
        _ => None,
    };
    if let Some(path) = &trace_path {
        write_trace_csv(path, &model.trace)?;
    }
    if let Some(prefix) = &args.plot_out {
        if plot::AVAILABLE {
            plot::emit(prefix, &model)?;
        } else {
            eprintln!(
                "warning: built without plotting support; wrote trace CSV {} instead of plots",
                trace_path.as_deref().map_or(String::new(), |p| p.display().to_string())
            );
        }
    }
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    let last = model.trace.last();
    eprintln!(
        "fit: n={} p={} k={} iterations={} converged={} tail_sum/(n-1)={:.6} (target {})",
        x.n(),
        x.p(),
        model.k(),
        model.iterations(),
        model.converged,
        last.map_or(f64::NAN, |r| r.tail_sum),
        x.p() - model.k()
    );
    Ok(if model.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_scores(args: &ScoresArgs) -> Result<u8, FaError> {
    let registry = builtin_score_estimators();
    let estimator = registry.get(&args.kind).ok_or_else(|| {
        FaError::InvalidInput(format!("unknown score kind '{}' (available: {})", args.kind, registry.names().join(", ")))
    })?;
    let model = load_model(&args.model)?;
    let x = load_for_model(&args.csv, &model)?;
    let set = estimator.scores(&model, &x)?;
    let header: Vec<String> = (1..=model.k()).map(|l| format!("f{l}")).collect();
    write_matrix_csv(&args.output, &header, &set.scores)?;
    if let Some(path) = &args.residuals_out {
        let residuals = set.residuals.as_ref().ok_or_else(|| {
            FaError::InvalidInput(format!("residuals are only defined for bartlett scores, not '{}'", args.kind))
        })?;
        write_matrix_csv(path, &model.column_names, &residuals.residuals_z)?;
        eprintln!(
            "residual mean square total {:.6} (p - k = {})",
            residuals.total_msq,
            model.p() - model.k()
        );
    }
    Ok(0)
}

fn run_simulate(args: &SimulateArgs) -> Result<u8, FaError> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| FaError::Io {
        path: args.spec.clone(),
        source: e,
    })?;
    let spec: SimSpec = serde_json::from_str(&text).map_err(|e| FaError::Parse {
        context: args.spec.display().to_string(),
        message: e.to_string(),
    })?;
    let x = spec.simulate()?;
    write_data_csv(&args.output, &x)?;
    eprintln!("simulate: wrote {} x {} to {}", x.n(), x.p(), args.output.display());
    Ok(0)
}

fn run_diagnose(args: &DiagnoseArgs) -> Result<u8, FaError> {
    let model = load_model(&args.model)?;
    let x = load_for_model(&args.csv, &model)?;
    let r = diagnose(&model, &x)?;
    eprintln!("converged: {} after {} iterations", model.converged, model.iterations());
    eprintln!(
        "estimating residuals: lambda {:.3e}, psi2 {:.3e}",
        r.estimating.lambda_residual, r.estimating.psi_residual
    );
    eprintln!("tr(Omega_z): {:.6}", r.omega.trace_omega);
    eprintln!("theta: {:.6}", r.omega.theta);
    eprintln!(
        "tr(Omega_z)/k vs 1 + (theta - 1) p/k: relative gap {:.3e}{}",
        r.omega.identity_gap,
        match r.omega.identity_holds {
            Some(true) => " (holds)",
            Some(false) => " (VIOLATED)",
            None => " (not checked)",
        }
    );
    eprintln!(
        "sum of residual mean squares: {:.6} vs p - k = {}",
        r.residual_msq_total, r.residual_target
    );
    match r.heywood {
        Some(h) => eprintln!(
            "Heywood: min psi2 {:.6e} at iteration {}{}",
            h.min_psi2,
            h.at_iter,
            if h.heywood { " (HEYWOOD CASE)" } else { "" }
        ),
        None => eprintln!("Heywood: no trace recorded"),
    }
    eprintln!("Gaussian log-likelihood: {:.6}", r.loglik);
    eprintln!("centered Gaussian log-likelihood (n - 1 df): {:.6}", r.centered_loglik);
    for w in r.omega.warnings.iter().chain(model.warnings.iter()) {
        eprintln!("warning: {w}");
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Scores(a) => run_scores(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Diagnose(a) => run_diagnose(a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
