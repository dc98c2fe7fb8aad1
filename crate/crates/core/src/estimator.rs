//! Maximum partial-likelihood fitting of stratified observations.
//!
//! Each stratum holds one case and its controls; its likelihood term is the
//! softmax probability of the case among the stratum's rows. This is the
//! conditional logit, and for strata built from the full risk set it is the
//! Cox partial likelihood.

use std::fmt;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::fmt::g17;

/// Strata per reduction chunk. Chunk partial sums are added in order, so
/// results are identical for any number of worker threads.
const CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stratum {
    /// First row.
    pub start: usize,
    /// Number of rows, case included.
    pub len: usize,
    /// Absolute row index of the case.
    pub case: usize,
}

impl Stratum {
    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Borrowed design: a row-major matrix of `k` statistics per row, grouped
/// into strata.
#[derive(Clone, Copy, Debug)]
pub struct Design<'a> {
    k: usize,
    values: &'a [f64],
    strata: &'a [Stratum],
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("stratum {stratum}: {reason}")]
    InvalidStratum { stratum: usize, reason: String },
    #[error("design has {values} values, not a multiple of k = {k}")]
    Shape { values: usize, k: usize },
    #[error("no stratum with at least one control")]
    Empty,
    #[error("likelihood is monotone (separation) in {}", coordinate_list(.coordinates))]
    Separation { coordinates: Vec<usize> },
    #[error("information matrix is singular (non-identifiable) in {}", coordinate_list(.coordinates))]
    NonIdentifiable { coordinates: Vec<usize> },
    #[error("non-finite likelihood at iteration {iteration}")]
    NonFinite { iteration: usize },
}

fn coordinate_list(coords: &[usize]) -> String {
    let parts: Vec<String> = coords.iter().map(|c| format!("#{c}")).collect();
    format!("coordinate(s) {}", parts.join(", "))
}

impl<'a> Design<'a> {
    /// Checks shapes and that each stratum's case lies inside it.
    pub fn new(k: usize, values: &'a [f64], strata: &'a [Stratum]) -> Result<Self, FitError> {
        if k == 0 || !values.len().is_multiple_of(k) {
            return Err(FitError::Shape {
                values: values.len(),
                k,
            });
        }
        let rows = values.len() / k;
        for (i, s) in strata.iter().enumerate() {
            if s.len == 0 || s.start + s.len > rows {
                return Err(FitError::InvalidStratum {
                    stratum: i,
                    reason: format!("rows {}..{} out of range", s.start, s.start + s.len),
                });
            }
            if !s.rows().contains(&s.case) {
                return Err(FitError::InvalidStratum {
                    stratum: i,
                    reason: "case row outside stratum".into(),
                });
            }
        }
        Ok(Design { k, values, strata })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn strata(&self) -> &'a [Stratum] {
        self.strata
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }
}

/// Owned strata and rows, built incrementally.
#[derive(Clone, Debug, Default)]
pub struct DesignBuf {
    pub k: usize,
    pub values: Vec<f64>,
    pub strata: Vec<Stratum>,
}

impl DesignBuf {
    pub fn new(k: usize) -> Self {
        DesignBuf {
            k,
            values: Vec::new(),
            strata: Vec::new(),
        }
    }

    /// Appends a stratum; `case` indexes into `rows`.
    pub fn push_stratum(&mut self, rows: &[&[f64]], case: usize) {
        let start = self.values.len() / self.k;
        for r in rows {
            assert_eq!(r.len(), self.k);
            self.values.extend_from_slice(r);
        }
        self.strata.push(Stratum {
            start,
            len: rows.len(),
            case: start + case,
        });
    }

    pub fn design(&self) -> Result<Design<'_>, FitError> {
        Design::new(self.k, &self.values, &self.strata)
    }
}

/// Log-likelihood with first and second derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodParts {
    pub loglik: f64,
    pub gradient: Vec<f64>,
    /// Row-major `k x k`.
    pub hessian: Vec<f64>,
}

impl LikelihoodParts {
    fn zeros(k: usize) -> Self {
        LikelihoodParts {
            loglik: 0.0,
            gradient: vec![0.0; k],
            hessian: vec![0.0; k * k],
        }
    }

    fn add(&mut self, other: &Self) {
        self.loglik += other.loglik;
        self.gradient
            .iter_mut()
            .zip(&other.gradient)
            .for_each(|(a, b)| *a += b);
        self.hessian
            .iter_mut()
            .zip(&other.hessian)
            .for_each(|(a, b)| *a += b);
    }
}

struct Scratch {
    eta: Vec<f64>,
    mean: Vec<f64>,
    centered: Vec<f64>,
}

fn accumulate_stratum(
    design: &Design<'_>,
    s: &Stratum,
    theta: &[f64],
    parts: &mut LikelihoodParts,
    scratch: &mut Scratch,
) {
    let k = design.k;
    if s.len < 2 {
        return;
    }
    scratch.eta.clear();
    let mut max = f64::NEG_INFINITY;
    for i in s.rows() {
        let eta: f64 = design.row(i).iter().zip(theta).map(|(x, t)| x * t).sum();
        max = max.max(eta);
        scratch.eta.push(eta);
    }
    let mut total = 0.0;
    for e in scratch.eta.iter_mut() {
        *e = (*e - max).exp();
        total += *e;
    }
    let case_eta = design
        .row(s.case)
        .iter()
        .zip(theta)
        .map(|(x, t)| x * t)
        .sum::<f64>();
    parts.loglik += case_eta - max - total.ln();

    scratch.mean.iter_mut().for_each(|m| *m = 0.0);
    for (j, i) in s.rows().enumerate() {
        let w = scratch.eta[j] / total;
        for (m, x) in scratch.mean.iter_mut().zip(design.row(i)) {
            *m += w * x;
        }
    }
    for ((g, x), m) in parts
        .gradient
        .iter_mut()
        .zip(design.row(s.case))
        .zip(&scratch.mean)
    {
        *g += x - m;
    }
    for (j, i) in s.rows().enumerate() {
        let w = scratch.eta[j] / total;
        if w == 0.0 {
            continue;
        }
        for ((c, x), m) in scratch
            .centered
            .iter_mut()
            .zip(design.row(i))
            .zip(&scratch.mean)
        {
            *c = x - m;
        }
        for a in 0..k {
            let wa = w * scratch.centered[a];
            for b in a..k {
                parts.hessian[a * k + b] -= wa * scratch.centered[b];
            }
        }
    }
}

/// Log partial likelihood, gradient and Hessian at `theta`.
///
/// Strata with a single row contribute nothing.
pub fn loglik_grad_hess(design: &Design<'_>, theta: &[f64]) -> LikelihoodParts {
    let k = design.k;
    assert_eq!(theta.len(), k, "theta has wrong length");
    let partials: Vec<LikelihoodParts> = design
        .strata
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut parts = LikelihoodParts::zeros(k);
            let mut scratch = Scratch {
                eta: Vec::new(),
                mean: vec![0.0; k],
                centered: vec![0.0; k],
            };
            for s in chunk {
                accumulate_stratum(design, s, theta, &mut parts, &mut scratch);
            }
            parts
        })
        .collect();
    let mut total = LikelihoodParts::zeros(k);
    for p in &partials {
        total.add(p);
    }
    for a in 0..k {
        for b in 0..a {
            total.hessian[a * k + b] = total.hessian[b * k + a];
        }
    }
    total
}

/// Log partial likelihood only.
pub fn loglik(design: &Design<'_>, theta: &[f64]) -> f64 {
    loglik_grad_hess(design, theta).loglik
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    /// Convergence requires `max |gradient| <` this.
    pub gradient_tolerance: f64,
    /// and `|change in loglik| <` this.
    pub loglik_tolerance: f64,
    pub max_iter: usize,
    /// Penalty `ridge * |theta|^2` subtracted from the log-likelihood.
    pub ridge: f64,
    /// Separation is declared when any `|theta_j|` exceeds this.
    pub max_abs_theta: f64,
    /// Information matrices with a larger condition number are singular.
    pub max_condition: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            gradient_tolerance: 1e-6,
            loglik_tolerance: 1e-9,
            max_iter: 100,
            ridge: 0.0,
            max_abs_theta: 500.0,
            max_condition: 1e12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub loglik: f64,
    /// Log-likelihood at `theta = 0`.
    pub loglik_null: f64,
    pub aic: f64,
    /// Cox-Snell pseudo R^2 over the number of observations.
    pub r2: f64,
    /// Upper bound of `r2` for this data.
    pub r2_max: f64,
    pub n_events: usize,
    pub n_obs: usize,
    /// Strata without controls, left out of the fit.
    pub dropped_strata: usize,
    pub converged: bool,
    pub iterations: usize,
}

struct Information {
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl Information {
    fn new(hessian: &[f64], k: usize, ridge: f64) -> Self {
        let mut info = DMatrix::from_row_slice(k, k, hessian);
        info.neg_mut();
        for j in 0..k {
            info[(j, j)] += 2.0 * ridge;
        }
        Information {
            eigen: SymmetricEigen::new(info),
        }
    }

    fn extremes(&self) -> (f64, f64) {
        let ev = &self.eigen.eigenvalues;
        (ev.min(), ev.max())
    }

    fn is_singular(&self, max_condition: f64) -> bool {
        let (lo, hi) = self.extremes();
        !(lo > 0.0) || hi / lo > max_condition
    }

    /// Coordinates loading on the weakest eigen-direction.
    fn weak_coordinates(&self) -> Vec<usize> {
        let ev = &self.eigen.eigenvalues;
        let idx = ev.imin();
        let v = self.eigen.eigenvectors.column(idx);
        let peak = v.amax();
        (0..v.len()).filter(|&j| v[j].abs() >= 0.5 * peak).collect()
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let q = &self.eigen.eigenvectors;
        let b = DVector::from_column_slice(rhs);
        let mut y = q.transpose() * b;
        for (yi, l) in y.iter_mut().zip(self.eigen.eigenvalues.iter()) {
            *yi /= l;
        }
        (q * y).iter().copied().collect()
    }

    fn inverse_diagonal(&self) -> Vec<f64> {
        let q = &self.eigen.eigenvectors;
        (0..q.nrows())
            .map(|i| {
                (0..q.ncols())
                    .map(|j| q[(i, j)] * q[(i, j)] / self.eigen.eigenvalues[j])
                    .sum()
            })
            .collect()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Maximizes the (optionally ridge-penalized) log partial likelihood by
/// Newton-Raphson with step halving.
pub fn fit(design: &Design<'_>, options: &FitOptions) -> Result<FitResult, FitError> {
    let k = design.k;
    let kept: Vec<&Stratum> = design.strata.iter().filter(|s| s.len >= 2).collect();
    if kept.is_empty() {
        return Err(FitError::Empty);
    }
    let n_events = kept.len();
    let n_obs: usize = kept.iter().map(|s| s.len).sum();
    let dropped_strata = design.strata.len() - n_events;
    let loglik_null: f64 = -kept.iter().map(|s| (s.len as f64).ln()).sum::<f64>();

    let penalized = |parts: &mut LikelihoodParts, theta: &[f64]| {
        if options.ridge > 0.0 {
            let r = options.ridge;
            parts.loglik -= r * theta.iter().map(|t| t * t).sum::<f64>();
            for j in 0..k {
                parts.gradient[j] -= 2.0 * r * theta[j];
                parts.hessian[j * k + j] -= 2.0 * r;
            }
        }
    };
    let evaluate = |theta: &[f64]| {
        let mut parts = loglik_grad_hess(design, theta);
        penalized(&mut parts, theta);
        parts
    };

    let mut theta = vec![0.0; k];
    let mut parts = evaluate(&theta);
    let mut previous: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iter {
        if !parts.loglik.is_finite() {
            return Err(FitError::NonFinite {
                iteration: iterations,
            });
        }
        let grad_max = max_abs(&parts.gradient);
        if let Some(prev) = previous {
            if grad_max < options.gradient_tolerance
                && (parts.loglik - prev).abs() < options.loglik_tolerance
            {
                converged = true;
                break;
            }
        }
        // The information of the unpenalized part; the ridge term was
        // already folded into the Hessian.
        let info = Information::new(&parts.hessian, k, 0.0);
        if info.is_singular(options.max_condition) {
            let coordinates = info.weak_coordinates();
            return Err(if grad_max < options.gradient_tolerance {
                FitError::NonIdentifiable { coordinates }
            } else {
                FitError::Separation { coordinates }
            });
        }
        let step = info.solve(&parts.gradient);

        let mut scale = 1.0;
        let mut candidate_theta;
        let mut candidate;
        let mut halvings = 0;
        loop {
            candidate_theta = theta
                .iter()
                .zip(&step)
                .map(|(t, d)| t + scale * d)
                .collect::<Vec<_>>();
            candidate = evaluate(&candidate_theta);
            let tolerance = 1e-12 * parts.loglik.abs().max(1.0);
            if candidate.loglik.is_finite() && candidate.loglik >= parts.loglik - tolerance {
                break;
            }
            halvings += 1;
            if halvings > 40 {
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        if halvings > 40 {
            // No ascent along the Newton direction: stationary up to
            // rounding.
            converged = grad_max < options.gradient_tolerance;
            break;
        }
        previous = Some(parts.loglik);
        theta = candidate_theta;
        parts = candidate;

        let runaway: Vec<usize> = (0..k)
            .filter(|&j| theta[j].abs() > options.max_abs_theta)
            .collect();
        if !runaway.is_empty() {
            return Err(FitError::Separation {
                coordinates: runaway,
            });
        }
    }

    let info = Information::new(&parts.hessian, k, 0.0);
    if info.is_singular(options.max_condition) {
        let coordinates = info.weak_coordinates();
        return Err(if max_abs(&parts.gradient) < options.gradient_tolerance {
            FitError::NonIdentifiable { coordinates }
        } else {
            FitError::Separation { coordinates }
        });
    }
    // A monotone likelihood meets the gradient and likelihood tolerances
    // while Newton steps still push a coordinate outwards by order one.
    let step = info.solve(&parts.gradient);
    let drifting: Vec<usize> = (0..k)
        .filter(|&j| step[j].abs() > 0.5 && step[j].signum() == theta[j].signum())
        .collect();
    if !drifting.is_empty() {
        return Err(FitError::Separation {
            coordinates: drifting,
        });
    }

    let se: Vec<f64> = info.inverse_diagonal().iter().map(|v| v.sqrt()).collect();
    let z = theta.iter().zip(&se).map(|(t, s)| t / s).collect();
    let loglik = loglik(design, &theta);
    let n = n_obs as f64;
    Ok(FitResult {
        aic: 2.0 * k as f64 - 2.0 * loglik,
        r2: 1.0 - (-2.0 * (loglik - loglik_null) / n).exp(),
        r2_max: 1.0 - (2.0 * loglik_null / n).exp(),
        theta,
        se,
        z,
        loglik,
        loglik_null,
        n_events,
        n_obs,
        dropped_strata,
        converged,
        iterations,
    })
}

/// Significance marks at the 5%, 1% and 0.1% levels (two-sided normal).
pub fn stars(z: f64) -> &'static str {
    let z = z.abs();
    if z >= 3.290_526_731_491_926 {
        "***"
    } else if z >= 2.575_829_303_548_900_4 {
        "**"
    } else if z >= 1.959_963_984_540_054 {
        "*"
    } else {
        ""
    }
}

impl FitResult {
    /// Delimited `key,value` lines. Parameter rows are keyed
    /// `theta.<name>`, `se.<name>` and `z.<name>`.
    pub fn write_csv<W: Write>(&self, mut out: W, names: &[&str]) -> io::Result<()> {
        writeln!(out, "key,value")?;
        for (prefix, values) in [("theta", &self.theta), ("se", &self.se), ("z", &self.z)] {
            for (name, v) in names.iter().zip(values.iter()) {
                writeln!(out, "{prefix}.{name},{}", g17(*v))?;
            }
        }
        for (key, v) in [
            ("loglik", self.loglik),
            ("loglik_null", self.loglik_null),
            ("aic", self.aic),
            ("r2", self.r2),
            ("r2_max", self.r2_max),
        ] {
            writeln!(out, "{key},{}", g17(v))?;
        }
        writeln!(out, "n_events,{}", self.n_events)?;
        writeln!(out, "n_obs,{}", self.n_obs)?;
        writeln!(out, "dropped_strata,{}", self.dropped_strata)?;
        writeln!(out, "converged,{}", self.converged)?;
        writeln!(out, "iterations,{}", self.iterations)?;
        Ok(())
    }

    /// Human-readable report: estimates with standard errors in brackets,
    /// then the goodness-of-fit block.
    pub fn report(&self, names: &[&str]) -> String {
        FitReport { fit: self, names }.to_string()
    }
}

struct FitReport<'a> {
    fit: &'a FitResult,
    names: &'a [&'a str],
}

impl fmt::Display for FitReport<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fit = self.fit;
        let rule = "-".repeat(44);
        writeln!(f, "{rule}")?;
        for (j, name) in self.names.iter().enumerate() {
            let cell = format!("{:.3} ({:.3})", fit.theta[j], fit.se[j]);
            writeln!(f, "{name:<16}{cell:>24} {}", stars(fit.z[j]))?;
        }
        writeln!(f, "{rule}")?;
        writeln!(f, "{:<16}{:>24.3}", "AIC", fit.aic)?;
        writeln!(f, "{:<16}{:>24.3}", "R^2", fit.r2)?;
        writeln!(f, "{:<16}{:>24.3}", "Max. R^2", fit.r2_max)?;
        writeln!(f, "{:<16}{:>24}", "Num. events", fit.n_events)?;
        writeln!(f, "{:<16}{:>24}", "Num. obs.", fit.n_obs)?;
        writeln!(f, "{rule}")?;
        writeln!(f, "*** p < 0.001, ** p < 0.01, * p < 0.05")?;
        if !fit.converged {
            writeln!(f, "warning: iteration limit reached before convergence")?;
        }
        if fit.dropped_strata > 0 {
            writeln!(
                f,
                "note: {} strata without controls left out",
                fit.dropped_strata
            )?;
        }
        Ok(())
    }
}
