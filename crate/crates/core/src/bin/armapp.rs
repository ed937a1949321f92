use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use armapp::em::{default_init, em_fit_observed, EmConfig, FitModel};
use armapp::events::EventSequence;
use armapp::inarma::{
    convergence_experiment, simulate_inarma, write_convergence_csv, ConvergenceConfig, INARMASpec,
};
use armapp::mcem::{mcem_fit, FitResult, McemConfig, Variant};
use armapp::model::ModelSpec;
use armapp::moments::{empirical_palm, palm_constants_for, palm_intensity};
use armapp::simulate::{simulate_arma, simulate_until_count};
use armapp::study::{run_study, write_outputs, StudyConfig};
use armapp::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_STUDY_FAILED: u8 = 4;

/// Simulation and estimation of ARMA point processes.
#[derive(Parser)]
#[command(name = "armapp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate events and write the event CSV.
    Simulate(SimulateArgs),
    /// Fit a model to an event CSV.
    Fit(FitArgs),
    /// Run a seeded replication study from a key = value config file.
    Study(StudyArgs),
    /// Compare the closed-form palm intensity with a simulation estimate.
    Palm(PalmArgs),
    /// Simulate INARMA counts or run the binning convergence experiment.
    Inarma(InarmaArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    /// MA mass (unmarked model).
    #[arg(long, conflicts_with = "mark_mean")]
    gamma: Option<f64>,
    /// Exponential mark mean (marked model).
    #[arg(long)]
    mark_mean: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    theta_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    phi_scale: f64,
    /// Immigrants trigger but are not recorded as events.
    #[arg(long)]
    excluded: bool,
}

impl ModelArgs {
    fn spec(&self) -> armapp::Result<ModelSpec> {
        let spec = match self.mark_mean {
            Some(m) => ModelSpec::marked(self.mu, m, self.theta_scale, self.eta, self.phi_scale)?,
            None => ModelSpec::unmarked(self.mu, self.gamma.unwrap_or(0.0), self.theta_scale, self.eta, self.phi_scale)?,
        };
        Ok(spec.with_immigrants_included(!self.excluded))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Window end.
    #[arg(long = "T", conflicts_with = "n", required_unless_present = "n")]
    window: Option<f64>,
    /// Simulate until exactly this many events.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file (standard output when omitted).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Event CSV.
    input: PathBuf,
    /// `observed`, `included`, `excluded`, `unmarked-included` or `unmarked-excluded`.
    #[arg(long, default_value = "unmarked-included")]
    variant: String,
    #[arg(long, default_value = "arma")]
    fit_model: FitModel,
    /// Window end when the file does not record one.
    #[arg(long)]
    window_end: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pieces: usize,
    #[arg(long)]
    chain_iter: Option<usize>,
    #[arg(long)]
    chain_burn_in: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    em_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Long chain of 300000 iterations per EM iteration
    #[arg(long)]
    full_scale: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Fit result JSON (standard output when omitted).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Per-iteration trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    config: PathBuf,
    /// `key=value` overrides, applied after the file.
    #[arg(long = "set")]
    overrides: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PalmArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Events in the simulated sequence.
    #[arg(long, default_value_t = 50_000)]
    events: usize,
    #[arg(long, default_value_t = 30)]
    points: usize,
    #[arg(long)]
    max_lag: Option<f64>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InarmaArgs {
    #[command(subcommand)]
    mode: InarmaMode,
}

#[derive(Subcommand)]
enum InarmaMode {
    /// Simulate a count series and write `bin,N,eps`.
    Simulate {
        #[arg(long)]
        mu_tilde: f64,
        /// Comma-separated θ̃ coefficients.
        #[arg(long, value_delimiter = ',')]
        theta: Vec<f64>,
        /// Comma-separated φ̃ coefficients.
        #[arg(long, value_delimiter = ',')]
        phi: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        length: usize,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Binned ARMA against matched INARMA at several bin widths.
    Converge {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.25, 0.1])]
        deltas: Vec<f64>,
        #[arg(long, default_value_t = 200_000.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidParameters(_)
        | Error::Supercritical(_)
        | Error::DegenerateRates(_)
        | Error::BoundaryInit(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn simulate(a: SimulateArgs) -> armapp::Result<u8> {
    let spec = a.model.spec()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (events, _) = match (a.window, a.n) {
        (Some(t), _) => simulate_arma(&spec, t, a.burn_in.unwrap_or_else(|| spec.default_burn_in()), &mut rng)?,
        (None, Some(n)) => simulate_until_count(&spec, n, a.burn_in, &mut rng)?,
        _ => unreachable!("clap requires one"),
    };
    let lambda = spec.expected_intensity_on(events.window_end)?;
    eprintln!(
        "expected intensity {lambda}; expected count {} on (0, {}]; simulated {}",
        lambda * events.window_end,
        events.window_end,
        events.len()
    );
    let mut out = output(&a.out)?;
    events.write_csv(&mut out)?;
    out.flush()?;
    Ok(0)
}

fn fit(a: FitArgs) -> armapp::Result<u8> {
    let events = EventSequence::read_csv(File::open(&a.input)?, a.window_end)?;
    let start = Instant::now();
    let (params, trace, variant, config) = if a.variant == "observed" {
        let ims = events.labeled_immigrants().ok_or_else(|| {
            Error::Domain("the observed variant needs the is_immigrant column".into())
        })?;
        let marked = events.marks.is_some();
        let init = default_init(&events, marked, true, a.pieces, a.fit_model)?;
        let cfg = EmConfig {
            max_iter: a.em_iters.unwrap_or(EmConfig::default().max_iter),
            tol: a.tol.unwrap_or(EmConfig::default().tol),
            band_cutoff: None,
            fit_model: a.fit_model,
        };
        let (p, t) = em_fit_observed(&events, &ims, &init, &cfg)?;
        let echo = serde_json::to_value(&cfg).expect("config serialises");
        (p, t, "observed".to_string(), echo)
    } else {
        let variant: Variant = a.variant.parse()?;
        let mut cfg = McemConfig::new(variant);
        if a.full_scale {
            cfg = cfg.full_scale();
        }
        cfg.fit_model = a.fit_model;
        cfg.chain.n_iter = a.chain_iter.unwrap_or(cfg.chain.n_iter);
        cfg.chain.burn_in = a.chain_burn_in.unwrap_or(cfg.chain.burn_in);
        cfg.chain.samples = a.samples.unwrap_or(cfg.chain.samples);
        cfg.em_iters = a.em_iters.unwrap_or(cfg.em_iters);
        cfg.tol = a.tol.unwrap_or(cfg.tol);
        let init = default_init(&events, variant.marked(), variant.immigrants_included(), a.pieces, a.fit_model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let (p, t) = mcem_fit(&events.unlabeled(), &init, &cfg, &mut rng)?;
        let mut echo = serde_json::to_value(&cfg).expect("config serialises");
        echo["seed"] = a.seed.into();
        (p, t, variant.to_string(), echo)
    };
    let result = FitResult::new(&params, &variant, a.fit_model, config, &trace, start.elapsed().as_secs_f64());
    let mut out = output(&a.out)?;
    serde_json::to_writer_pretty(&mut out, &result).map_err(|e| Error::Io(e.into()))?;
    writeln!(out)?;
    out.flush()?;
    if let Some(path) = &a.trace {
        trace.write_csv(File::create(path)?, events.window_end)?;
    }
    if !trace.converged {
        eprintln!("stopped after {} iterations without meeting the tolerance", trace.iterations);
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn study(a: StudyArgs) -> armapp::Result<u8> {
    let text = std::fs::read_to_string(&a.config)?;
    let mut overrides = a.overrides.clone();
    if let Some(t) = a.threads {
        overrides.push(format!("threads={t}"));
    }
    if let Some(d) = &a.out_dir {
        overrides.push(format!("out_dir={}", d.display()));
    }
    let cfg = StudyConfig::parse(&text)?.with_overrides(overrides.iter().map(String::as_str))?;
    let outcome = run_study(&cfg)?;
    write_outputs(&cfg, &outcome, &cfg.out_dir)?;
    eprintln!(
        "{} replications, {} failed; outputs in {}",
        outcome.rows.len(),
        outcome.failures(),
        cfg.out_dir.display()
    );
    Ok(if outcome.failed() { EXIT_STUDY_FAILED } else { 0 })
}

fn palm(a: PalmArgs) -> armapp::Result<u8> {
    let spec = a.model.spec()?;
    let pc = palm_constants_for(&spec)?;
    let slowest = (spec.phi.rate * (1.0 - spec.eta())).min(spec.theta.rate);
    let max_lag = a.max_lag.unwrap_or(5.0 / slowest);
    let bandwidth = a.bandwidth.unwrap_or(max_lag / (4.0 * a.points as f64));
    let grid: Vec<f64> = (1..=a.points).map(|k| k as f64 * max_lag / a.points as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (events, _) = simulate_until_count(&spec, a.events, None, &mut rng)?;
    let est = empirical_palm(&events, &grid, bandwidth)?;
    let mut w = csv::Writer::from_writer(output(&a.out)?);
    w.write_record(["lag", "h_closed", "h_bin", "h_empirical", "std_error", "lower", "upper"])?;
    for e in &est {
        let bin = pc.palm_bin_average(e.lag - 0.5 * bandwidth, e.lag + 0.5 * bandwidth);
        w.write_record([
            e.lag.to_string(),
            palm_intensity(&pc, e.lag)?.to_string(),
            bin.to_string(),
            e.h.to_string(),
            e.std_error.to_string(),
            (e.h - 3.0 * e.std_error).to_string(),
            (e.h + 3.0 * e.std_error).to_string(),
        ])?;
    }
    w.flush()?;
    eprintln!("h(0) = 0, h(∞) = λ̄ = {}", pc.lambda_bar);
    Ok(0)
}

fn inarma(a: InarmaArgs) -> armapp::Result<u8> {
    match a.mode {
        InarmaMode::Simulate { mu_tilde, theta, phi, length, burn_in, seed, out } => {
            let spec = INARMASpec::new(mu_tilde, theta, phi)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let burn = burn_in.unwrap_or_else(|| spec.default_burn_in());
            let series = simulate_inarma(&spec, length, burn, &mut rng)?;
            let mut o = output(&out)?;
            series.write_csv(&mut o)?;
            o.flush()?;
        }
        InarmaMode::Converge { model, deltas, horizon, seed, out } => {
            let spec = model.spec()?;
            let mut cfg = ConvergenceConfig::new(&spec);
            cfg.deltas = deltas;
            cfg.horizon = horizon;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = convergence_experiment(&spec, &cfg, &mut rng)?;
            write_convergence_csv(&rows, output(&out)?)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Study(a) => study(a),
        Command::Palm(a) => palm(a),
        Command::Inarma(a) => inarma(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
