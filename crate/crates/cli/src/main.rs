//! `remkit`: simulate event streams, compute observation tables, fit them,
//! run sampling experiments and inspect tables.

mod manifest;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use remkit::experiments::{
    covariance_diagnostic, density_diagnostic, near_degenerate, run_design, write_density,
    DesignKind, DesignSpec,
};
use remkit::fmt::g17;
use remkit::generator::{default_time_step, simulate, SimConfig};
use remkit::{
    fit, parse_events, replay, write_events, DecayConfig, EventFormat, FitOptions,
    ObservationTable, ReplayConfig, RiskSet, SampleConfig, NUM_STATS, STAT_NAMES,
};

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "remkit", version, about, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an event stream from known parameters.
    Simulate(SimulateArgs),
    /// Replay an event file into observation tables.
    Compute(ComputeArgs),
    /// Fit an observation table.
    Fit(FitArgs),
    /// Run a replicated sampling design.
    Experiment(ExperimentArgs),
    /// Density and covariance tables of an observation table.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct Common {
    /// Plain-text `key = value` settings; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct DecayArgs {
    /// Halflife of past events, in seconds.
    #[arg(long, default_value_t = remkit::network::DEFAULT_HALFLIFE)]
    halflife: f64,
    /// Weights below this value are set to zero.
    #[arg(long, default_value_t = remkit::network::DEFAULT_PRUNE_EPSILON)]
    epsilon: f64,
}

impl DecayArgs {
    fn config(&self) -> Result<DecayConfig, Failure> {
        DecayConfig::new(self.halflife, self.epsilon).map_err(Failure::usage)
    }

    fn record(&self, m: &mut Manifest) {
        m.set("halflife", g17(self.halflife));
        m.set("epsilon", g17(self.epsilon));
    }
}

#[derive(Args)]
struct InputArgs {
    /// Event file: `user,article,time` per line.
    #[arg(long)]
    events: PathBuf,
    /// Stable-sort events by time instead of rejecting out-of-order input.
    #[arg(long)]
    sort: bool,
    /// The first line is a header.
    #[arg(long)]
    header: bool,
    /// Field delimiter.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

impl InputArgs {
    fn format(&self) -> Result<EventFormat, Failure> {
        if !self.delimiter.is_ascii() {
            return Err(Failure::usage(anyhow!(
                "delimiter must be an ASCII character"
            )));
        }
        Ok(EventFormat {
            delimiter: self.delimiter as u8,
            has_header: self.header,
            sort: self.sort,
        })
    }

    fn record(&self, m: &mut Manifest) -> Result<(), Failure> {
        m.input("events", &self.events).map_err(Failure::input)?;
        m.set("sort", self.sort);
        m.set("header", self.header);
        m.set("delimiter", self.delimiter);
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RiskSetArg {
    /// Nodes seen at or before each event's time.
    Observed,
    /// Every node of the file, from the start.
    Closed,
}

impl RiskSetArg {
    fn name(self) -> &'static str {
        match self {
            RiskSetArg::Observed => "observed",
            RiskSetArg::Closed => "closed",
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    decay: DecayArgs,
    #[arg(long, default_value_t = 30)]
    users: usize,
    #[arg(long, default_value_t = 30)]
    articles: usize,
    /// Number of events to draw.
    #[arg(long, default_value_t = 10_000)]
    n_events: usize,
    /// Parameters: repetition, popularity, activity, four_cycle, assortativity.
    #[arg(long, default_value = "1,0.8,0.6,0.3,-0.1")]
    theta: String,
    /// Seconds between events (default: halflife / 50).
    #[arg(long)]
    time_step: Option<i64>,
    #[arg(long, default_value_t = 0)]
    start: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ComputeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    decay: DecayArgs,
    /// Event sampling probabilities, comma-separated.
    #[arg(long, default_value = "1")]
    p: String,
    /// Controls per sampled event, comma-separated.
    #[arg(long, default_value = "5")]
    m: String,
    /// Seeds, comma-separated.
    #[arg(long, default_value = "0")]
    seed: String,
    #[arg(long, value_enum, default_value_t = RiskSetArg::Observed)]
    risk_set: RiskSetArg,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Observation table written by `compute`.
    #[arg(long)]
    table: PathBuf,
    /// Ridge penalty (0 = plain maximum likelihood).
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    decay: DecayArgs,
    #[arg(long, default_value = "fixed")]
    design: String,
    /// Base event sampling probability.
    #[arg(long, default_value_t = 1e-4)]
    p: f64,
    /// Base number of controls.
    #[arg(long, default_value_t = 5)]
    m: usize,
    /// Replicates per cell (default: 100 for fixed, 10 otherwise).
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: available parallelism). Does not change
    /// any output.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = RiskSetArg::Observed)]
    risk_set: RiskSetArg,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    table: PathBuf,
    /// Densities below this are reported as near-degenerate.
    #[arg(long, default_value_t = remkit::experiments::DEFAULT_DENSITY_THRESHOLD)]
    threshold: f64,
}

/// An error with a machine-readable kind.
struct Failure {
    kind: &'static str,
    error: anyhow::Error,
}

impl Failure {
    fn new(kind: &'static str, e: impl Into<anyhow::Error>) -> Self {
        Failure {
            kind,
            error: e.into(),
        }
    }

    fn usage(e: impl Into<anyhow::Error>) -> Self {
        Self::new("usage", e)
    }

    fn input(e: impl Into<anyhow::Error>) -> Self {
        Self::new("input", e)
    }

    fn output(e: impl Into<anyhow::Error>) -> Self {
        Self::new("output", e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let args = match manifest::expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => return report(&Failure::usage(e)),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: kind=usage message={first}");
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Compute(a) => run_compute(a),
        Command::Fit(a) => run_fit(a),
        Command::Experiment(a) => run_experiment(a),
        Command::Diagnose(a) => run_diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f),
    }
}

fn report(f: &Failure) -> ExitCode {
    let message = format!("{:#}", f.error).replace('\n', " ");
    eprintln!("error: kind={} message={message}", f.kind);
    ExitCode::from(if f.kind == "usage" { 2 } else { 1 })
}

/// Writes `contents` behind the manifest header, and the manifest itself.
struct Output<'a> {
    dir: &'a Path,
    manifest: &'a Manifest,
}

impl<'a> Output<'a> {
    fn open(dir: &'a Path, manifest: &'a Manifest) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::output)?;
        let out = Output { dir, manifest };
        out.write_with("manifest.txt", |w| {
            w.write_all(manifest.canonical().as_bytes())
        })?;
        Ok(out)
    }

    fn write_with(
        &self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<PathBuf, Failure> {
        let path = self.dir.join(name);
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(&path)?);
            w.write_all(self.manifest.header().as_bytes())?;
            body(&mut w)?;
            w.flush()
        };
        write()
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::output)?;
        Ok(path)
    }
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Failure::usage(anyhow!("--{flag}: cannot parse {s:?}")))
        })
        .collect()
}

fn run_simulate(a: &SimulateArgs) -> Outcome {
    let decay = a.decay.config()?;
    let theta: Vec<f64> = parse_list("theta", &a.theta)?;
    let theta: [f64; NUM_STATS] = theta
        .try_into()
        .map_err(|_| Failure::usage(anyhow!("--theta needs {NUM_STATS} comma-separated values")))?;
    let cfg = SimConfig {
        time_step: a.time_step.unwrap_or_else(|| default_time_step(&decay)),
        start_time: a.start,
        decay,
        ..SimConfig::new(a.users, a.articles, theta, a.n_events, a.seed)
    };
    let mut m = Manifest::new("simulate");
    a.decay.record(&mut m);
    m.set("users", cfg.n_users);
    m.set("articles", cfg.n_articles);
    m.set("n_events", cfg.n_events);
    m.set("theta", theta.map(g17).join(","));
    m.set("time_step", cfg.time_step);
    m.set("start", cfg.start_time);
    m.set("seed", cfg.seed);

    let log = simulate(&cfg).map_err(|e| Failure::new("model", e))?;
    let out = Output::open(&a.common.out, &m)?;
    let path = out.write_with("events.csv", |w| {
        write_events(w, &log.events, &log.universe, b',')
    })?;
    println!("wrote {} ({} events)", path.display(), log.len());
    Ok(())
}

fn run_compute(a: &ComputeArgs) -> Outcome {
    let decay = a.decay.config()?;
    let ps: Vec<f64> = parse_list("p", &a.p)?;
    let ms: Vec<usize> = parse_list("m", &a.m)?;
    let seeds: Vec<u64> = parse_list("seed", &a.seed)?;
    let mut samples = Vec::new();
    for &p in &ps {
        for &m in &ms {
            for &seed in &seeds {
                samples.push(SampleConfig::new(p, m, seed).map_err(Failure::usage)?);
            }
        }
    }
    let format = a.input.format()?;
    let mut manifest = Manifest::new("compute");
    a.input.record(&mut manifest)?;
    a.decay.record(&mut manifest);
    manifest.set(
        "p",
        ps.iter().map(|p| g17(*p)).collect::<Vec<_>>().join(","),
    );
    manifest.set("m", a.m.replace(' ', ""));
    manifest.set("seed", a.seed.replace(' ', ""));
    manifest.set("risk_set", a.risk_set.name());

    let log = parse_events(&a.input.events, &format).map_err(Failure::input)?;
    let cfg = ReplayConfig {
        decay,
        risk_set: match a.risk_set {
            RiskSetArg::Observed => RiskSet::Observed,
            RiskSetArg::Closed => RiskSet::closed(&log.universe),
        },
        ..ReplayConfig::default()
    };
    let tables = replay(&log.events, &samples, &cfg).map_err(|e| Failure::new("model", e))?;
    let out = Output::open(&a.common.out, &manifest)?;
    for (i, table) in tables.iter().enumerate() {
        let name = if tables.len() == 1 {
            "table.csv".to_string()
        } else {
            format!("table_{i}.csv")
        };
        let path = out.write_with(&name, |w| table.write_csv(w, Some(&log.universe)))?;
        println!(
            "wrote {} ({} strata, {} rows, p={}, m={}, seed={})",
            path.display(),
            table.n_strata(),
            table.n_rows(),
            g17(samples[i].p()),
            samples[i].m(),
            samples[i].seed()
        );
        if table.degenerate > 0 {
            eprintln!(
                "warning: {} sampled events had only the case in their risk set and were dropped",
                table.degenerate
            );
        }
    }
    Ok(())
}

fn read_table(path: &Path) -> Result<ObservationTable, Failure> {
    let file = File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(Failure::input)?;
    ObservationTable::read_csv(BufReader::new(file))
        .map(|(t, _)| t)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::input)
}

fn fit_options(ridge: f64, max_iter: usize) -> Result<FitOptions, Failure> {
    if !(ridge >= 0.0) {
        return Err(Failure::usage(anyhow!("--ridge must be non-negative")));
    }
    Ok(FitOptions {
        ridge,
        max_iter,
        ..FitOptions::default()
    })
}

fn run_fit(a: &FitArgs) -> Outcome {
    let options = fit_options(a.ridge, a.max_iter)?;
    let mut manifest = Manifest::new("fit");
    manifest.input("table", &a.table).map_err(Failure::input)?;
    manifest.set("ridge", g17(a.ridge));
    manifest.set("max_iter", a.max_iter);

    let table = read_table(&a.table)?;
    let result = fit(&table.design(), &options).map_err(|e| Failure::new("fit", e))?;
    let out = Output::open(&a.common.out, &manifest)?;
    out.write_with("fit.csv", |w| result.write_csv(w, &STAT_NAMES))?;
    let report = result.report(&STAT_NAMES);
    out.write_with("fit.txt", |w| w.write_all(report.as_bytes()))?;
    print!("{report}");
    if !result.converged {
        eprintln!("warning: iteration limit reached before convergence");
    }
    Ok(())
}

fn run_experiment(a: &ExperimentArgs) -> Outcome {
    let decay = a.decay.config()?;
    let kind: DesignKind = a.design.parse().map_err(Failure::usage)?;
    SampleConfig::new(a.p, a.m, a.seed).map_err(Failure::usage)?;
    let options = fit_options(a.ridge, a.max_iter)?;
    let mut spec = DesignSpec::new(kind, a.p, a.m, a.seed);
    if let Some(r) = a.replicates {
        if r == 0 {
            return Err(Failure::usage(anyhow!("--replicates must be at least 1")));
        }
        spec.replicates = r;
    }
    let workers = match a.workers {
        Some(0) => return Err(Failure::usage(anyhow!("--workers must be at least 1"))),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let format = a.input.format()?;
    let mut manifest = Manifest::new("experiment");
    a.input.record(&mut manifest)?;
    a.decay.record(&mut manifest);
    manifest.set("design", kind);
    manifest.set("p", g17(a.p));
    manifest.set("m", a.m);
    manifest.set("replicates", spec.replicates);
    manifest.set("seed", a.seed);
    manifest.set("risk_set", a.risk_set.name());
    manifest.set("ridge", g17(a.ridge));
    manifest.set("max_iter", a.max_iter);

    let log = parse_events(&a.input.events, &format).map_err(Failure::input)?;
    let cfg = ReplayConfig {
        decay,
        risk_set: match a.risk_set {
            RiskSetArg::Observed => RiskSet::Observed,
            RiskSetArg::Closed => RiskSet::closed(&log.universe),
        },
        ..ReplayConfig::default()
    };
    let result = run_design(&log.events, &spec, &cfg, &options, workers)
        .map_err(|e| Failure::new("model", e))?;
    let out = Output::open(&a.common.out, &manifest)?;
    out.write_with("summary.csv", |w| result.write_summary(w))?;
    out.write_with("replicates.csv", |w| result.write_replicates(w))?;
    out.write_with("boxplot.csv", |w| result.write_boxplot(w))?;
    for c in &result.cells {
        let failed = c.failures();
        if failed == c.replicates.len() {
            eprintln!(
                "warning: cell {}: all {failed} replicates failed",
                c.cell.index
            );
        } else if failed > 0 {
            eprintln!(
                "warning: cell {}: {failed} of {} replicates failed",
                c.cell.index,
                c.replicates.len()
            );
        }
    }
    println!(
        "{} design: {} cells x {} replicates written to {}",
        kind,
        result.cells.len(),
        spec.replicates,
        a.common.out.display()
    );
    Ok(())
}

fn run_diagnose(a: &DiagnoseArgs) -> Outcome {
    let mut manifest = Manifest::new("diagnose");
    manifest.input("table", &a.table).map_err(Failure::input)?;
    manifest.set("threshold", g17(a.threshold));
    let table = read_table(&a.table)?;
    if table.is_empty() {
        return Err(Failure::input(anyhow!("table has no observations")));
    }
    let densities = density_diagnostic(&table);
    let covariance = covariance_diagnostic(&table).map_err(Failure::input)?;
    let out = Output::open(&a.common.out, &manifest)?;
    out.write_with("density.csv", |w| write_density(w, &densities, a.threshold))?;
    out.write_with("covariance.csv", |w| covariance.write(w))?;
    for name in near_degenerate(&densities, a.threshold) {
        let j = STAT_NAMES
            .iter()
            .position(|s| *s == name)
            .expect("known statistic");
        eprintln!(
            "warning: near-degenerate statistic {name}: non-zero in {} of events and {} of controls",
            g17(densities[j].events),
            g17(densities[j].controls)
        );
    }
    for name in covariance.constant() {
        eprintln!("warning: statistic {name} is constant; its correlations are left empty");
    }
    println!(
        "wrote density.csv and covariance.csv to {}",
        a.common.out.display()
    );
    Ok(())
}
