use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use tdvarma::assumptions::{check_all, CheckOptions, InnovationDist};
use tdvarma::asymptotics::{theoretical_v_with, InfoOptions};
use tdvarma::config::ConfigFile;
use tdvarma::estimate::fit;
use tdvarma::examples::ExampleId;
use tdvarma::mc::{estimates_to_csv, run_mc, summary_to_csv, McPlan};
use tdvarma::simulate::{simulate, SimPlan, RNG_ID};
use tdvarma::{Error, Series, TdVarmaModel, Vector};

const THREADS_ENV: &str = "TDVARMA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tdvarma", about = "Exact Gaussian QML for VARMA models with time-dependent coefficients")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one series and write it as CSV (`t,x1,...,xr`).
    Simulate(SimulateArgs),
    /// Fit the model to a series CSV and write the fit as JSON.
    Fit(FitArgs),
    /// Theoretical information matrix and standard errors as JSON.
    Asymptotics(AsymptoticsArgs),
    /// Numerical audit of the regularity conditions as JSON.
    Check(CheckArgs),
    /// Monte Carlo study; writes summary.csv (and estimates.csv on request).
    Mc(McArgs),
    /// Write the built-in example configurations.
    Examples(ExamplesArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Model and run configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Series length; overrides `run.n`.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Replication stream of the generator.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    /// Comma-separated parameter vector; defaults to the true values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Series CSV with header `t,x1,...,xr`.
    #[arg(long)]
    series: PathBuf,
    /// Starting point; overrides `run.theta_init`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta_init: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct AsymptoticsArgs {
    #[command(flatten)]
    common: Common,
    /// Sample size; overrides `run.n`.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    /// Evaluation point; defaults to the true values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Include the per-t contributions to V.
    #[arg(long)]
    per_t: bool,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    /// Horizon of the coefficient probes.
    #[arg(long, default_value_t = tdvarma::assumptions::DEFAULT_N_PROBE)]
    n_probe: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Innovation distribution for the moment checks.
    #[arg(long, default_value = "gaussian")]
    dist: String,
}

#[derive(Debug, Args)]
struct McArgs {
    /// Model and run configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated sample sizes; overrides `run.n_list`.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Replications per sample size; overrides `run.replications`.
    #[arg(long)]
    replications: Option<usize>,
    /// Also write per-replication estimates.
    #[arg(long)]
    estimates: bool,
}

#[derive(Debug, Args)]
struct ExamplesArgs {
    /// `1` (both Example 1 variants), `1-theory`, `2` or `all`.
    #[arg(long, default_value = "all")]
    which: String,
    /// Directory to write into.
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(format!("{}\nrng: {RNG_ID}", env!("CARGO_PKG_VERSION")).into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => return usage_exit(e),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return usage_exit(e),
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn usage_exit(e: clap::Error) -> ExitCode {
    use clap::error::ErrorKind;
    let _ = e.print();
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            ExitCode::SUCCESS
        }
        _ => ExitCode::from(1),
    }
}

fn run(cmd: Command) -> tdvarma::Result<()> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Asymptotics(a) => cmd_asymptotics(a),
        Command::Check(a) => cmd_check(a),
        Command::Mc(a) => cmd_mc(a),
        Command::Examples(a) => cmd_examples(a),
    }
}

fn load(path: &Path) -> tdvarma::Result<(ConfigFile, TdVarmaModel)> {
    let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let cfg = ConfigFile::from_json(&text)?;
    let model = cfg.build_model()?;
    Ok((cfg, model))
}

fn theta_or_truth(model: &TdVarmaModel, theta: Option<Vec<f64>>) -> tdvarma::Result<Vec<f64>> {
    let theta = match theta {
        Some(t) => t,
        None => model
            .layout()
            .theta0()
            .map_err(|_| Error::config("model.params.true_value", "missing; pass --theta"))?
            .to_vec(),
    };
    if theta.len() != model.m() {
        return Err(Error::config("theta", format!("expected {} values, got {}", model.m(), theta.len())));
    }
    Ok(theta)
}

fn sample_size(flag: Option<u64>, cfg: &ConfigFile) -> tdvarma::Result<usize> {
    match flag.map(|n| n as usize).or(cfg.run.n) {
        Some(0) => Err(Error::config("run.n", "must be at least 1")),
        Some(n) => Ok(n),
        None => Err(Error::config("run.n", "missing; pass --n")),
    }
}

fn emit(out: Option<&Path>, text: &str) -> tdvarma::Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json<T: serde::Serialize>(value: &T) -> tdvarma::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn cmd_simulate(a: SimulateArgs) -> tdvarma::Result<()> {
    let (cfg, model) = load(&a.common.config)?;
    let n = sample_size(a.n, &cfg)?;
    let theta = theta_or_truth(&model, a.theta)?;
    let seed = a.seed.or(cfg.run.seed).unwrap_or(0);
    let plan = SimPlan { model: &model, theta, n, seed, stream: a.stream };
    let series = simulate(&plan)?;
    emit(a.common.out.as_deref(), &series_to_csv(&series)?)
}

fn cmd_fit(a: FitArgs) -> tdvarma::Result<()> {
    let (cfg, model) = load(&a.common.config)?;
    let text = fs::read_to_string(&a.series).map_err(|e| Error::config(a.series.display().to_string(), e.to_string()))?;
    let series = parse_series_csv(&text, model.r())?;
    let mut opts = cfg.fit_options(&model)?;
    if let Some(t) = a.theta_init {
        if t.len() != model.m() {
            return Err(Error::config("theta_init", format!("expected {} values, got {}", model.m(), t.len())));
        }
        opts.theta_init = t;
    }
    let result = fit(&model, &series, &opts)?;
    emit(a.common.out.as_deref(), &json(&result)?)
}

fn cmd_asymptotics(a: AsymptoticsArgs) -> tdvarma::Result<()> {
    let (cfg, model) = load(&a.common.config)?;
    let n = sample_size(a.n, &cfg)?;
    let theta = theta_or_truth(&model, a.theta)?;
    let opts = InfoOptions { keep_per_t: a.per_t, ..InfoOptions::default() };
    let report = theoretical_v_with(&model, &theta, n, opts)?;
    emit(a.common.out.as_deref(), &json(&report)?)?;
    if !report.positive_definite {
        return Err(Error::Singular(format!(
            "information matrix is not positive definite (min eigenvalue {:e})",
            report.min_eigenvalue
        )));
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> tdvarma::Result<()> {
    let (_, model) = load(&a.common.config)?;
    let theta = theta_or_truth(&model, a.theta)?;
    let dist: InnovationDist = a.dist.parse()?;
    let opts = CheckOptions { n_probe: a.n_probe, dist, ..CheckOptions::default() };
    let report = check_all(&model, &theta, &opts)?;
    eprint!("{report}");
    emit(a.common.out.as_deref(), &json(&report)?)
}

fn cmd_mc(a: McArgs) -> tdvarma::Result<()> {
    let (cfg, model) = load(&a.config)?;
    let mut plan = McPlan::from_config(&cfg, &model)?;
    if let Some(s) = a.seed {
        plan.seed = s;
    }
    if let Some(n) = a.n {
        plan.n_list = n;
    }
    if let Some(r) = a.replications {
        plan.replications = r;
    }
    plan.validate()?;
    let out = run_mc(&plan)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("summary.csv"), summary_to_csv(&out.summary)?)?;
    if a.estimates {
        fs::write(a.out.join("estimates.csv"), estimates_to_csv(&out.summary.params, &out.records)?)?;
    }
    for d in &out.summary.diagnostics {
        eprintln!(
            "n = {}: {} of {} replications used, {} not converged, {} errors, {} without standard errors{}",
            d.n,
            d.used,
            d.replications,
            d.non_converged,
            d.errors,
            d.without_se,
            if d.flagged { " (flagged)" } else { "" }
        );
    }
    Ok(())
}

fn cmd_examples(a: ExamplesArgs) -> tdvarma::Result<()> {
    let ids: Vec<ExampleId> = match a.which.as_str() {
        "all" => ExampleId::ALL.to_vec(),
        "1" => vec![ExampleId::Example1Sim, ExampleId::Example1Theory],
        other => vec![other.parse()?],
    };
    fs::create_dir_all(&a.out)?;
    for id in ids {
        let path = a.out.join(file_name(id));
        fs::write(&path, id.config_json())?;
        println!("{}", path.display());
    }
    Ok(())
}

fn file_name(id: ExampleId) -> &'static str {
    match id {
        ExampleId::Example1Sim => "example1_sim.json",
        ExampleId::Example1Theory => "example1_theory.json",
        ExampleId::Example2 => "example2.json",
    }
}

fn series_to_csv(series: &Series) -> tdvarma::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((1..=series.r()).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (t, x) in series.values().iter().enumerate() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn parse_series_csv(text: &str, r: usize) -> tdvarma::Result<Series> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let mut want = vec!["t".to_string()];
    want.extend((1..=r).map(|i| format!("x{i}")));
    if header != want {
        return Err(Error::config("series header", format!("expected `{}`, got `{}`", want.join(","), header.join(","))));
    }
    let mut values = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(row + 2, |p| p.line() as usize);
        let t: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("series line {line}, column t"), "expected an integer"))?;
        if t != row + 1 {
            return Err(Error::config(format!("series line {line}, column t"), format!("expected t = {}", row + 1)));
        }
        let mut x = Vector::zeros(r);
        for i in 0..r {
            x[i] = rec[i + 1]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::config(format!("series line {line}, column x{}", i + 1), "expected a finite number"))?;
        }
        values.push(x);
    }
    Series::new(r, values)
}
