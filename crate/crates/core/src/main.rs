use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use monospline::design::build_design;
use monospline::estimators::{fit, lambda_max_for, FitOptions, FitResult, Method};
use monospline::simulation::{render_table, run_experiment, SimConfig};
use monospline::spline::BasisSpec;
use monospline::{center_response, SolverConfig};

const CURVE_POINTS: usize = 201;

#[derive(Parser)]
#[command(name = "monospline", version, about = "Sparse monotone additive regression")]
struct Cli {
    /// Worker threads for folds and replications (results do not depend on it).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write the fit file and component curves.
    Fit(FitArgs),
    /// Predict from a saved fit.
    Predict(PredictArgs),
    /// Write the cross-validation curve.
    Cv(FitArgs),
    /// Run a simulation experiment from a JSON config.
    Simulate(SimulateArgs),
    /// Dump a basis expansion as TSV.
    Basis(BasisArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Response column name; defaults to the last column.
    #[arg(long)]
    response: Option<String>,
    #[arg(long, default_value = "ms", value_parser = parse_method)]
    method: Method,
    /// Interior knot count.
    #[arg(long, default_value_t = 6)]
    knots: usize,
    /// Spline order (the B-spline baseline defaults to 3).
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, env = "MONOSPLINE_SEED", default_value_t = 0)]
    seed: u64,
    /// Fixed penalty level instead of cross-validation.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 100)]
    grid_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    grid_ratio: f64,
    /// Scale design columns to unit variance after centering.
    #[arg(long)]
    standardize: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Fit JSON (fit) or CV curve TSV (cv); stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Component curve TSV; defaults to `<output>.curves.tsv`.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Print the largest useful lambda and exit.
    #[arg(long)]
    lambda_max_only: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Fit JSON written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation config.
    #[arg(long)]
    config: PathBuf,
    /// Report JSON; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Text table; stderr when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Override the seed of the config.
    #[arg(long, env = "MONOSPLINE_SEED")]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisChoice {
    Ispline,
    Bspline,
    Identity,
}

#[derive(Args)]
struct BasisArgs {
    /// CSV with a header row; every column is expanded.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = BasisChoice::Ispline)]
    basis: BasisChoice,
    #[arg(long, default_value_t = 6)]
    knots: usize,
    #[arg(long)]
    order: Option<usize>,
    /// Subtract column means.
    #[arg(long)]
    centered: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

/// Fit file: the estimator plus the column names it was trained on.
#[derive(Serialize, Deserialize)]
struct FitFile {
    covariates: Vec<String>,
    response: String,
    fit: FitResult,
}

struct Table {
    header: Vec<String>,
    data: Array2<f64>,
}

/// Reads a numeric CSV with a header row, reporting the line and column of
/// the first bad cell.
fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .with_context(|| format!("{}: cannot read header", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() {
        bail!("{}: empty header", path.display());
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| anyhow!("{}: {e}", path.display()))?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() != header.len() {
            bail!(
                "{}:{line}: expected {} fields, found {}",
                path.display(),
                header.len(),
                record.len()
            );
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                anyhow!(
                    "{}:{line}: column {} ('{}'): '{cell}' is not a number",
                    path.display(),
                    col + 1,
                    header[col]
                )
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        bail!("{}: no data rows", path.display());
    }
    let data = Array2::from_shape_vec((rows, header.len()), values).expect("rectangular");
    Ok(Table { header, data })
}

fn split_response(table: &Table, response: Option<&str>) -> Result<(Array2<f64>, Array1<f64>, Vec<String>, String)> {
    let idx = match response {
        Some(name) => table
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("response column '{name}' not found"))?,
        None => table.header.len() - 1,
    };
    if table.header.len() < 2 {
        bail!("need at least one covariate column besides the response");
    }
    let keep: Vec<usize> = (0..table.header.len()).filter(|&c| c != idx).collect();
    let x = table.data.select(Axis(1), &keep);
    let y = table.data.column(idx).to_owned();
    let names = keep.iter().map(|&c| table.header[c].clone()).collect();
    Ok((x, y, names, table.header[idx].clone()))
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn fit_options(args: &ModelArgs) -> FitOptions {
    FitOptions {
        knots: args.knots,
        order: args.order,
        folds: args.folds,
        seed: args.seed,
        grid_size: args.grid_size,
        grid_ratio: args.grid_ratio,
        standardize: args.standardize,
        lambda: args.lambda,
        initial_lambda: None,
        solver: SolverConfig::default(),
    }
}

fn report_fit(fit: &FitResult, names: &[String]) {
    let selected: Vec<&str> = fit.support.iter().map(|&j| names[j].as_str()).collect();
    eprintln!(
        "{}: lambda = {:.6e}, selected = [{}]",
        fit.method.label(),
        fit.lambda,
        selected.join(", ")
    );
    for &j in &fit.diagnostics.incoherent_selected {
        eprintln!("warning: component '{}' is not sign-coherent", names[j]);
    }
    for note in &fit.diagnostics.notes {
        eprintln!("note: {note}");
    }
    if !fit.diagnostics.converged {
        eprintln!(
            "error: solver did not converge (KKT residual {:.3e} after {} iterations)",
            fit.diagnostics.kkt_residual, fit.diagnostics.iterations
        );
    }
}

fn write_curves(fit: &FitResult, names: &[String], out: &mut dyn Write) -> Result<()> {
    writeln!(out, "component\tgrid\tx\tvalue")?;
    writeln!(out, "intercept\tNA\tNA\t{}", fit.intercept)?;
    let grid: Vec<f64> = (0..CURVE_POINTS)
        .map(|i| i as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    for &j in &fit.support {
        let values = fit.component_curve(j, &grid)?;
        for (u, v) in grid.iter().zip(values) {
            let raw = match fit.transform.rescale.get(j) {
                Some(r) => r.min + u * (r.max - r.min),
                None => *u,
            };
            writeln!(out, "{}\t{u}\t{raw}\t{v}", names[j])?;
        }
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs, verbose: bool) -> Result<ExitCode> {
    let table = read_table(&args.model.input)?;
    let (x, y, names, response) = split_response(&table, args.model.response.as_deref())?;
    let opts = fit_options(&args.model);
    if args.lambda_max_only {
        let basis = args.model.method.basis(&opts)?;
        let design = build_design(x.view(), &basis)?;
        let (yc, _) = center_response(y.view());
        let weights = vec![1.0; design.groups().count];
        let lmax = lambda_max_for(&design, yc.view(), args.model.method.penalty(), &weights, &opts.solver)?;
        println!("{lmax}");
        return Ok(ExitCode::SUCCESS);
    }
    if verbose {
        eprintln!("fitting {} on {} x {}", args.model.method.label(), x.nrows(), x.ncols());
    }
    let result = fit(x.view(), y.view(), args.model.method, &opts)?;
    report_fit(&result, &names);
    let curves_path = args.curves.clone().or_else(|| {
        args.output.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".curves.tsv");
            PathBuf::from(s)
        })
    });
    if let Some(path) = curves_path {
        let mut out = writer(Some(&path))?;
        write_curves(&result, &names, &mut out)?;
        out.flush()?;
    }
    let converged = result.diagnostics.converged;
    let file = FitFile {
        covariates: names,
        response,
        fit: result,
    };
    let mut out = writer(args.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &file)?;
    writeln!(out)?;
    out.flush()?;
    Ok(if converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_predict(args: &PredictArgs) -> Result<ExitCode> {
    let file: FitFile = serde_json::from_reader(io::BufReader::new(
        File::open(&args.fit).with_context(|| format!("cannot open {}", args.fit.display()))?,
    ))
    .with_context(|| format!("{}: not a fit file", args.fit.display()))?;
    let table = read_table(&args.input)?;
    let columns: Vec<usize> = file
        .covariates
        .iter()
        .map(|name| {
            table.header.iter().position(|h| h == name).ok_or_else(|| {
                anyhow!(
                    "column mismatch: covariate '{name}' of the fit is missing from {}",
                    args.input.display()
                )
            })
        })
        .collect::<Result<_>>()?;
    let x = table.data.select(Axis(1), &columns);
    let pred = file.fit.predict(x.view())?;
    let mut out = writer(args.output.as_deref())?;
    writeln!(out, "prediction")?;
    for v in pred {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_cv(args: &FitArgs) -> Result<ExitCode> {
    let table = read_table(&args.model.input)?;
    let (x, y, names, _) = split_response(&table, args.model.response.as_deref())?;
    let mut opts = fit_options(&args.model);
    opts.lambda = None;
    let result = fit(x.view(), y.view(), args.model.method, &opts)?;
    report_fit(&result, &names);
    let mut out = writer(args.output.as_deref())?;
    writeln!(out, "stage\tlambda\tcv")?;
    let stages = [
        ("initial", result.initial.as_ref().and_then(|s| s.cv.as_ref())),
        ("final", result.cv.as_ref()),
    ];
    for (stage, cv) in stages {
        if let Some(cv) = cv {
            for (l, v) in cv.lambdas.iter().zip(&cv.cv) {
                writeln!(out, "{stage}\t{l}\t{v}")?;
            }
        }
    }
    out.flush()?;
    match &result.cv {
        Some(cv) => println!("chosen lambda: {}", cv.chosen_lambda),
        None => println!("chosen lambda: none (initial stage selected nothing)"),
    }
    Ok(if result.diagnostics.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_simulate(args: &SimulateArgs, verbose: bool) -> Result<ExitCode> {
    let mut cfg: SimConfig = serde_json::from_reader(io::BufReader::new(
        File::open(&args.config).with_context(|| format!("cannot open {}", args.config.display()))?,
    ))
    .with_context(|| format!("{}: invalid simulation config", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if verbose {
        eprintln!(
            "simulating model {:?}: n = {}, P = {}, R = {}",
            cfg.model, cfg.n, cfg.p, cfg.replications
        );
    }
    let report = run_experiment(&cfg)?;
    let mut out = writer(args.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    let table = render_table(&report);
    match &args.table {
        Some(p) => std::fs::write(p, &table).with_context(|| format!("cannot write {}", p.display()))?,
        None => eprint!("{table}"),
    }
    let clean = report
        .summaries
        .iter()
        .all(|s| s.failed == 0 && s.unconverged == 0);
    Ok(if clean { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_basis(args: &BasisArgs) -> Result<ExitCode> {
    let table = read_table(&args.input)?;
    let spec = match args.basis {
        BasisChoice::Ispline => BasisSpec::ispline(args.knots, args.order.unwrap_or(2))?,
        BasisChoice::Bspline => BasisSpec::bspline(args.knots, args.order.unwrap_or(3))?,
        BasisChoice::Identity => BasisSpec::identity(),
    };
    let design = build_design(table.data.view(), &spec)?;
    let mut z = design.z;
    if !args.centered {
        z += &Array1::from(design.transform.column_means.clone());
    }
    let m = spec.size();
    let mut out = writer(args.output.as_deref())?;
    let header: Vec<String> = table
        .header
        .iter()
        .flat_map(|name| (1..=m).map(move |k| format!("{name}_{k}")))
        .collect();
    writeln!(out, "{}", header.join("\t"))?;
    for row in z.axis_iter(Axis(0)) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", cells.join("\t"))?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    match &cli.command {
        Command::Fit(args) => cmd_fit(args, cli.verbose),
        Command::Predict(args) => cmd_predict(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Simulate(args) => cmd_simulate(args, cli.verbose),
        Command::Basis(args) => cmd_basis(args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
