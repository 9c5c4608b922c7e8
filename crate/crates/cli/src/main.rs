//! `hhsmm` command-line driver.

mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hhsmm::init::{initial_cluster, initialize_model, ClusterOptions, EmissionChoice, InitOptions, Nmix, SojournChoice};
use hhsmm::json::fmt_real;
use hhsmm::{
    estimate_rul, hhsmmfit, load_sequences, predict_states, score, simulate, store_sequences, Confidence,
    DecodeMethod, FitControl, HhsmmError, ModelSpec, SimulateOptions,
};

#[derive(Parser)]
#[command(name = "hhsmm", version, about = "Hidden hybrid Markov/semi-Markov models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample sequences from a model.
    Simulate(SimulateArgs),
    /// Cluster training data and build an initial model.
    Init(InitArgs),
    /// Estimate a model by EM.
    Fit(FitArgs),
    /// Decode hidden states and optionally extend them into the future.
    Predict(PredictArgs),
    /// Residual useful lifetime of each sequence under a left-to-right model.
    Rul(RulArgs),
    /// Log-likelihood of each sequence.
    Score(ScoreArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',', required = true)]
    nsim: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use each emitted response as the next covariate.
    #[arg(long)]
    autoregress: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    nstate: usize,
    /// Components per state: a comma list, `auto` or `none`.
    #[arg(long, default_value = "none")]
    nmix: Nmix,
    #[arg(long)]
    ltr: bool,
    #[arg(long)]
    final_absorb: bool,
    #[arg(long)]
    regress: bool,
    /// 1-based response columns for regression emissions.
    #[arg(long, value_delimiter = ',')]
    resp_ind: Vec<usize>,
    /// gamma, weibull, lognormal, nonparametric or auto.
    #[arg(long, default_value = "gamma")]
    sojourn: SojournChoice,
    /// mixmvnorm, nonpar, mixlm or addreg; defaults to mixlm with --regress.
    #[arg(long)]
    emission: Option<String>,
    /// Basis size for nonpar and addreg emissions.
    #[arg(long, default_value_t = 10)]
    knots: usize,
    /// Smoothing penalty for nonpar and addreg emissions.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Per-state semi-Markov flags (true/false).
    #[arg(long, value_delimiter = ',')]
    semi: Vec<bool>,
    /// Per-state maximum sojourn.
    #[arg(long = "max-sojourn", value_delimiter = ',')]
    max_sojourn: Vec<usize>,
    /// Also write the initial clustering as JSON.
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    maxit: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    lock_init: bool,
    #[arg(long)]
    lock_transition: bool,
    #[arg(long)]
    out: PathBuf,
    /// CSV of the log-likelihood per iteration.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "viterbi")]
    method: DecodeMethod,
    /// Number of future steps to append to every sequence.
    #[arg(long, default_value_t = 0)]
    future: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct RulArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "viterbi")]
    method: DecodeMethod,
    #[arg(long, default_value = "mean")]
    confidence: Confidence,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load_spec(path: &Path) -> anyhow::Result<ModelSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = ModelSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    spec.validate().with_context(|| format!("validating {}", path.display()))?;
    Ok(spec)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{header}")?;
    for r in rows {
        writeln!(buf, "{r}")?;
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

fn run_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let spec = load_spec(&a.model)?;
    let opts = SimulateOptions { autoregress: a.autoregress, ..Default::default() };
    let set = simulate(&spec, &a.nsim, a.seed, &opts)?;
    store_sequences(&set, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn run_init(a: InitArgs) -> anyhow::Result<()> {
    let train = load_sequences(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let resp_ind = if a.resp_ind.is_empty() {
        None
    } else {
        if a.resp_ind.contains(&0) {
            bail!(HhsmmError::Invalid("--resp-ind is 1-based".into()));
        }
        Some(a.resp_ind.iter().map(|c| c - 1).collect())
    };
    let copts = ClusterOptions {
        nstate: a.nstate,
        nmix: a.nmix,
        ltr: a.ltr,
        final_absorb: a.final_absorb,
        regress: a.regress,
        resp_ind,
        seed: a.seed,
    };
    let clus = initial_cluster(&train, &copts)?;
    if let Some(path) = &a.clusters {
        write_text(path, &hhsmm::json::to_string(&clus)?)?;
    }
    let default_family = if a.regress { "mixlm" } else { "mixmvnorm" };
    let emission = match a.emission.as_deref().unwrap_or(default_family) {
        "mixmvnorm" => EmissionChoice::MixMvn,
        "nonpar" => EmissionChoice::Spline { k: a.knots, lambda: a.lambda },
        "mixlm" => EmissionChoice::MixLm,
        "addreg" => EmissionChoice::AddReg { k: a.knots, lambda: a.lambda },
        other => bail!(HhsmmError::Invalid(format!("unknown emission family `{other}`"))),
    };
    let iopts = InitOptions {
        emission,
        sojourn: a.sojourn,
        m: (!a.max_sojourn.is_empty()).then_some(a.max_sojourn),
        semi: (!a.semi.is_empty()).then_some(a.semi),
    };
    let spec = initialize_model(&clus, &train, &iopts)?;
    write_text(&a.out, &spec.to_json()?)
}

fn run_fit(a: FitArgs) -> anyhow::Result<()> {
    let data = load_sequences(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let init = load_spec(&a.model)?;
    let control = FitControl {
        maxit: a.maxit,
        tol: a.tol,
        lock_init: a.lock_init,
        lock_transition: a.lock_transition,
        verbose: log::log_enabled!(log::Level::Info),
    };
    let fit = hhsmmfit(&data, &init, &control)?;
    fit.model.validate()?;
    write_text(&a.out, &hhsmm::json::to_string(&fit)?)?;
    if let Some(path) = &a.trace {
        let rows = fit.loglik_trace.iter().enumerate().map(|(i, v)| format!("{i},{}", fmt_real(*v)));
        write_csv(path, "iter,loglik", rows)?;
    }
    if let Some(path) = &a.plot {
        let series = plot::Series {
            x: (0..fit.loglik_trace.len()).map(|i| i as f64).collect(),
            y: fit.loglik_trace.clone(),
        };
        write_text(path, &plot::line_chart("EM log-likelihood", "iteration", "log-likelihood", &[series]))?;
    }
    Ok(())
}

fn run_predict(a: PredictArgs) -> anyhow::Result<()> {
    let spec = load_spec(&a.fit)?;
    let data = load_sequences(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let states = predict_states(&spec, &data, a.method, a.future)?;
    let rows = states.iter().enumerate().flat_map(|(i, seq)| {
        seq.iter().enumerate().map(move |(t, s)| format!("{},{},{}", i + 1, t + 1, s + 1))
    });
    write_csv(&a.out, "seq_id,t,state", rows)?;
    if let Some(path) = &a.plot {
        let series: Vec<plot::Series> = states
            .iter()
            .map(|seq| plot::Series {
                x: (1..=seq.len()).map(|t| t as f64).collect(),
                y: seq.iter().map(|&s| (s + 1) as f64).collect(),
            })
            .collect();
        write_text(path, &plot::line_chart("Decoded states", "t", "state", &series))?;
    }
    Ok(())
}

fn run_rul(a: RulArgs) -> anyhow::Result<()> {
    let spec = load_spec(&a.fit)?;
    let data = load_sequences(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let est = estimate_rul(&spec, &data, a.method, a.confidence, a.level)?;
    let rows = est.iter().enumerate().map(|(i, (states, r))| {
        let last = states.last().map_or(0, |s| s + 1);
        format!("{},{last},{},{},{}", i + 1, fmt_real(r.rul), fmt_real(r.low), fmt_real(r.up))
    });
    write_csv(&a.out, "seq_id,state,rul,rul_low,rul_up", rows)
}

fn run_score(a: ScoreArgs) -> anyhow::Result<()> {
    let spec = load_spec(&a.fit)?;
    let data = load_sequences(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let ll = score(&data, &spec)?;
    let rows = ll.iter().enumerate().map(|(i, v)| format!("{},{}", i + 1, fmt_real(*v)));
    write_csv(&a.out, "seq_id,loglik", rows)
}

/// 3 for numeric failures, 1 for I/O, 2 for everything the caller got wrong.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<HhsmmError>()) {
        Some(e) if e.is_numeric() => 3,
        Some(HhsmmError::Io(_)) => 1,
        Some(_) => 2,
        None if err.chain().any(|e| e.is::<std::io::Error>()) => 1,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Init(a) => run_init(a),
        Command::Fit(a) => run_fit(a),
        Command::Predict(a) => run_predict(a),
        Command::Rul(a) => run_rul(a),
        Command::Score(a) => run_score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
