//! Replicated sampling experiments over grids of `(p, m)`, their summary
//! tables, and diagnostics of observation tables.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::estimator::{fit, FitOptions, FitResult};
use crate::fmt::g17;
use crate::ingest::Event;
use crate::replay::{replay, ObservationTable, ReplayConfig, ReplayError};
use crate::sampler::{derive_seed, SampleConfig, SampleError};
use crate::stats::{NUM_STATS, STAT_NAMES};

/// Values below this in absolute value count as zero in density tables.
pub const ZERO_TOLERANCE: f64 = 1e-12;
/// Default density below which a statistic is flagged.
pub const DEFAULT_DENSITY_THRESHOLD: f64 = 1e-3;
/// Sample configurations replayed together in one pass.
const PASS_WIDTH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DesignKind {
    Fixed,
    VaryP,
    VaryM,
    FixedBudget,
}

impl DesignKind {
    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Fixed => "fixed",
            DesignKind::VaryP => "vary_p",
            DesignKind::VaryM => "vary_m",
            DesignKind::FixedBudget => "fixed_budget",
        }
    }

    pub fn default_replicates(self) -> usize {
        match self {
            DesignKind::Fixed => 100,
            _ => 10,
        }
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(DesignKind::Fixed),
            "vary_p" => Ok(DesignKind::VaryP),
            "vary_m" => Ok(DesignKind::VaryM),
            "fixed_budget" => Ok(DesignKind::FixedBudget),
            other => Err(ExperimentError::UnknownDesign(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown design {0:?} (expected fixed, vary_p, vary_m or fixed_budget)")]
    UnknownDesign(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("replicates must be at least 1")]
    Replicates,
    #[error("worker pool: {0}")]
    Pool(String),
}

/// A design: the base parameters, the grid derived from them, replicates
/// per cell and the root seed.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub p0: f64,
    pub m0: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl DesignSpec {
    pub fn new(kind: DesignKind, p0: f64, m0: usize, seed: u64) -> Self {
        DesignSpec {
            kind,
            p0,
            m0,
            replicates: kind.default_replicates(),
            seed,
        }
    }

    /// Observations per event in expectation, `(m + 1) p`, held fixed by
    /// the budget design.
    pub fn budget(&self) -> f64 {
        (self.m0 + 1) as f64 * self.p0
    }

    /// Grid cells in order.
    ///
    /// - fixed: `(p0, m0)`.
    /// - vary_p: `p0 / 2^i` for `i = 1..=10`, `m = m0`.
    /// - vary_m: `m = 2^i` for `i = 0..=7`, `p = p0 / 10`.
    /// - fixed_budget: `m = 2^i` for `i = 1..=8`, `p = (m0 + 1) p0 / (m + 1)`.
    pub fn cells(&self) -> Vec<Cell> {
        let cell = |index, step, p, m| Cell { index, step, p, m };
        match self.kind {
            DesignKind::Fixed => vec![cell(0, 0, self.p0, self.m0)],
            DesignKind::VaryP => (1..=10)
                .enumerate()
                .map(|(k, i)| cell(k, i, self.p0 / f64::powi(2.0, i as i32), self.m0))
                .collect(),
            DesignKind::VaryM => (0..=7)
                .enumerate()
                .map(|(k, i)| cell(k, i, self.p0 / 10.0, 1 << i))
                .collect(),
            DesignKind::FixedBudget => (1..=8)
                .enumerate()
                .map(|(k, i)| {
                    let m = 1usize << i;
                    let p = self.p0 * ((self.m0 + 1) as f64 / (m + 1) as f64);
                    cell(k, i, p, m)
                })
                .collect(),
        }
    }

    /// Seed of replicate `r` in cell `c`.
    pub fn replicate_seed(&self, cell: usize, replicate: usize) -> u64 {
        derive_seed(self.seed, &[cell as u64, replicate as u64])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    /// Position in the grid.
    pub index: usize,
    /// The grid exponent `i`.
    pub step: usize,
    pub p: f64,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Replicate {
    pub replicate: usize,
    pub seed: u64,
    pub n_strata: usize,
    pub degenerate: usize,
    pub outcome: Result<FitResult, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub replicates: Vec<Replicate>,
}

impl CellResult {
    pub fn fits(&self) -> impl Iterator<Item = &FitResult> {
        self.replicates
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.replicates
            .iter()
            .filter(|r| r.outcome.is_err())
            .count()
    }

    /// One of `theta`, `se`, `z` for coordinate `j` over successful fits.
    pub fn values(&self, quantity: Quantity, j: usize) -> Vec<f64> {
        self.fits().map(|f| quantity.pick(f)[j]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Par,
    Se,
    Z,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::Par, Quantity::Se, Quantity::Z];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Par => "par",
            Quantity::Se => "se",
            Quantity::Z => "z",
        }
    }

    fn pick(self, f: &FitResult) -> &[f64] {
        match self {
            Quantity::Par => &f.theta,
            Quantity::Se => &f.se,
            Quantity::Z => &f.z,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignResult {
    pub spec: DesignSpec,
    pub cells: Vec<CellResult>,
}

/// Runs every replicate of every cell.
///
/// Sample configurations are replayed in groups sharing one pass over the
/// stream; groups run on a pool of `workers` threads. Results come back in
/// (cell, replicate) order whatever the number of workers.
pub fn run_design(
    events: &[Event],
    spec: &DesignSpec,
    replay_cfg: &ReplayConfig,
    options: &FitOptions,
    workers: usize,
) -> Result<DesignResult, ExperimentError> {
    if spec.replicates == 0 {
        return Err(ExperimentError::Replicates);
    }
    let cells = spec.cells();
    let mut jobs = Vec::new();
    for cell in &cells {
        for r in 0..spec.replicates {
            let seed = spec.replicate_seed(cell.index, r);
            jobs.push((cell.index, r, SampleConfig::new(cell.p, cell.m, seed)?));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let passes: Vec<Result<Vec<Replicate>, ExperimentError>> = pool.install(|| {
        jobs.par_chunks(PASS_WIDTH)
            .map(|chunk| {
                let configs: Vec<SampleConfig> = chunk.iter().map(|j| j.2).collect();
                let tables = replay(events, &configs, replay_cfg)?;
                Ok(chunk
                    .iter()
                    .zip(tables)
                    .map(|(&(_, r, sample), table)| Replicate {
                        replicate: r,
                        seed: sample.seed(),
                        n_strata: table.n_strata(),
                        degenerate: table.degenerate,
                        outcome: fit(&table.design(), options).map_err(|e| e.to_string()),
                    })
                    .collect())
            })
            .collect()
    });

    let mut results = cells
        .iter()
        .map(|&cell| CellResult {
            cell,
            replicates: Vec::with_capacity(spec.replicates),
        })
        .collect::<Vec<_>>();
    let mut job = jobs.iter();
    for pass in passes {
        for rep in pass? {
            let (cell, _, _) = job.next().expect("one result per job");
            results[*cell].replicates.push(rep);
        }
    }
    Ok(DesignResult {
        spec: spec.clone(),
        cells: results,
    })
}

/// Seven-number summary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    /// Standard deviation with `n - 1` denominator; `None` for one value.
    pub sd: Option<f64>,
}

/// Quantile by linear interpolation between order statistics at position
/// `1 + (n - 1) q`. `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary of `values`; `None` when empty.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| {
        let ss: f64 = sorted.iter().map(|x| (x - mean) * (x - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Some(Summary {
        n,
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        mean,
        q3: quantile(&sorted, 0.75),
        max: sorted[n - 1],
        sd,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(g17).unwrap_or_default()
}

impl DesignResult {
    /// Summary table: one row per cell, effect and quantity.
    pub fn write_summary<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "design,cell,step,p,m,effect,quantity,n,failures,min,q1,median,mean,q3,max,sd"
        )?;
        for c in &self.cells {
            for (j, effect) in STAT_NAMES.iter().enumerate() {
                for q in Quantity::ALL {
                    write!(
                        out,
                        "{},{},{},{},{},{effect},{},",
                        self.spec.kind,
                        c.cell.index,
                        c.cell.step,
                        g17(c.cell.p),
                        c.cell.m,
                        q.name()
                    )?;
                    match summarize(&c.values(q, j)) {
                        Some(s) => writeln!(
                            out,
                            "{},{},{},{},{},{},{},{},{}",
                            s.n,
                            c.failures(),
                            g17(s.min),
                            g17(s.q1),
                            g17(s.median),
                            g17(s.mean),
                            g17(s.q3),
                            g17(s.max),
                            opt(s.sd)
                        )?,
                        None => writeln!(out, "0,{},,,,,,,", c.failures())?,
                    }
                }
            }
        }
        out.flush()
    }

    /// Per-replicate results, failures included with their reason.
    pub fn write_replicates<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "cell,replicate,seed,p,m,strata,degenerate,status")?;
        for q in Quantity::ALL {
            for name in STAT_NAMES {
                write!(out, ",{}.{name}", q.name())?;
            }
        }
        writeln!(out, ",loglik,n_events,n_obs,iterations,error")?;
        for c in &self.cells {
            for r in &c.replicates {
                write!(
                    out,
                    "{},{},{},{},{},{},{}",
                    c.cell.index,
                    r.replicate,
                    r.seed,
                    g17(c.cell.p),
                    c.cell.m,
                    r.n_strata,
                    r.degenerate
                )?;
                match &r.outcome {
                    Ok(f) => {
                        write!(out, ",ok")?;
                        for q in Quantity::ALL {
                            for v in q.pick(f) {
                                write!(out, ",{}", g17(*v))?;
                            }
                        }
                        writeln!(
                            out,
                            ",{},{},{},{},",
                            g17(f.loglik),
                            f.n_events,
                            f.n_obs,
                            f.iterations
                        )?;
                    }
                    Err(e) => {
                        write!(out, ",failed")?;
                        for _ in 0..3 * NUM_STATS + 4 {
                            write!(out, ",")?;
                        }
                        writeln!(out, "\"{}\"", e.replace('"', "'"))?;
                    }
                }
            }
        }
        out.flush()
    }

    /// Box-plot data: quartiles, 1.5 IQR fences and the whisker ends (the
    /// most extreme values inside the fences).
    pub fn write_boxplot<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "cell,p,m,effect,quantity,min,lower_whisker,lower_fence,q1,median,q3,upper_fence,upper_whisker,max,outliers"
        )?;
        for c in &self.cells {
            for (j, effect) in STAT_NAMES.iter().enumerate() {
                for q in Quantity::ALL {
                    let values = c.values(q, j);
                    if let Some(b) = boxplot(&values) {
                        writeln!(
                            out,
                            "{},{},{},{effect},{},{},{},{},{},{},{},{},{},{},{}",
                            c.cell.index,
                            g17(c.cell.p),
                            c.cell.m,
                            q.name(),
                            g17(b.min),
                            g17(b.lower_whisker),
                            g17(b.lower_fence),
                            g17(b.q1),
                            g17(b.median),
                            g17(b.q3),
                            g17(b.upper_fence),
                            g17(b.upper_whisker),
                            g17(b.max),
                            b.outliers
                        )?;
                    }
                }
            }
        }
        out.flush()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Boxplot {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: usize,
}

pub fn boxplot(values: &[f64]) -> Option<Boxplot> {
    let s = summarize(values)?;
    let iqr = s.q3 - s.q1;
    let lower_fence = s.q1 - 1.5 * iqr;
    let upper_fence = s.q3 + 1.5 * iqr;
    let inside = values
        .iter()
        .copied()
        .filter(|v| (lower_fence..=upper_fence).contains(v));
    let (lo, hi) = inside.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    Some(Boxplot {
        min: s.min,
        q1: s.q1,
        median: s.median,
        q3: s.q3,
        max: s.max,
        lower_fence,
        upper_fence,
        lower_whisker: lo,
        upper_whisker: hi,
        outliers: values
            .iter()
            .filter(|v| !(lower_fence..=upper_fence).contains(*v))
            .count(),
    })
}

/// Proportions of non-zero values of one statistic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Density {
    pub all: f64,
    pub events: f64,
    pub controls: f64,
}

/// Per-statistic densities over all rows, case rows and control rows.
/// A group without rows has density zero.
pub fn density_diagnostic(table: &ObservationTable) -> [Density; NUM_STATS] {
    let flags = table.case_flags();
    let mut nonzero = [[0usize; 2]; NUM_STATS];
    let mut counts = [0usize; 2];
    for (row, &case) in flags.iter().enumerate() {
        let g = case as usize;
        counts[g] += 1;
        for (j, v) in table.row_stats(row).to_array().iter().enumerate() {
            if v.abs() >= ZERO_TOLERANCE {
                nonzero[j][g] += 1;
            }
        }
    }
    let ratio = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    std::array::from_fn(|j| Density {
        all: ratio(nonzero[j][0] + nonzero[j][1], counts[0] + counts[1]),
        events: ratio(nonzero[j][1], counts[1]),
        controls: ratio(nonzero[j][0], counts[0]),
    })
}

/// Statistics whose density among events or among controls is below
/// `threshold`.
pub fn near_degenerate(densities: &[Density; NUM_STATS], threshold: f64) -> Vec<&'static str> {
    (0..NUM_STATS)
        .filter(|&j| densities[j].events < threshold || densities[j].controls < threshold)
        .map(|j| STAT_NAMES[j])
        .collect()
}

pub fn write_density<W: Write>(
    mut out: W,
    densities: &[Density; NUM_STATS],
    threshold: f64,
) -> io::Result<()> {
    writeln!(out, "statistic,all,events,controls,near_degenerate")?;
    for (j, d) in densities.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            STAT_NAMES[j],
            g17(d.all),
            g17(d.events),
            g17(d.controls),
            (d.events < threshold || d.controls < threshold) as u8
        )?;
    }
    out.flush()
}

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticError {
    #[error("covariance needs at least 2 rows, table has {0}")]
    TooFewRows(usize),
}

/// Sample covariance of the statistics over all rows, `n - 1` denominator.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceTable {
    pub n: usize,
    /// Row-major `NUM_STATS x NUM_STATS`.
    pub covariance: Vec<f64>,
}

impl CovarianceTable {
    pub fn variance(&self, j: usize) -> f64 {
        self.covariance[j * NUM_STATS + j]
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * NUM_STATS + j]
    }

    /// `None` when either statistic is constant.
    pub fn correlation(&self, i: usize, j: usize) -> Option<f64> {
        let d = (self.variance(i) * self.variance(j)).sqrt();
        (d > 0.0).then(|| self.covariance(i, j) / d)
    }

    /// Statistics without variance.
    pub fn constant(&self) -> Vec<&'static str> {
        (0..NUM_STATS)
            .filter(|&j| !(self.variance(j) > 0.0))
            .map(|j| STAT_NAMES[j])
            .collect()
    }

    /// Correlations above the diagonal, variances on it, covariances below.
    /// Undefined correlations are left empty.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "statistic,{}", STAT_NAMES.join(","))?;
        for i in 0..NUM_STATS {
            write!(out, "{}", STAT_NAMES[i])?;
            for j in 0..NUM_STATS {
                let cell = match j.cmp(&i) {
                    std::cmp::Ordering::Greater => opt(self.correlation(i, j)),
                    std::cmp::Ordering::Equal => g17(self.variance(i)),
                    std::cmp::Ordering::Less => g17(self.covariance(i, j)),
                };
                write!(out, ",{cell}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    }
}

pub fn covariance_diagnostic(table: &ObservationTable) -> Result<CovarianceTable, DiagnosticError> {
    let n = table.n_rows();
    if n < 2 {
        return Err(DiagnosticError::TooFewRows(n));
    }
    let stats = table.stats();
    let mut mean = [0.0; NUM_STATS];
    for row in stats.chunks_exact(NUM_STATS) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; NUM_STATS * NUM_STATS];
    for row in stats.chunks_exact(NUM_STATS) {
        for i in 0..NUM_STATS {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[i * NUM_STATS + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..NUM_STATS {
        for j in 0..=i {
            let v = cov[i * NUM_STATS + j] / (n - 1) as f64;
            cov[i * NUM_STATS + j] = v;
            cov[j * NUM_STATS + i] = v;
        }
    }
    Ok(CovarianceTable { n, covariance: cov })
}
