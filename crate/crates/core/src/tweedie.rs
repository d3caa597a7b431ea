//! f-modeling: estimate the marginal density of the observations directly,
//! differentiate its logarithm and plug the score into Tweedie's formula
//! E[θ | x] = x + σ²·(d/dx) log m(x).
//!
//! The marginal is fitted by Lindsey's method: histogram counts are
//! regressed on a natural cubic spline basis with a Poisson likelihood, so
//! the fitted log-density is a spline with an analytic derivative.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::NormalMeansData;
use crate::error::{Error, Result};
use crate::quad::{self, QuadSettings};
use crate::rule::{check_grid, RuleMethod, ShrinkageRule};

pub use crate::rule::{monotonicity_diagnostic, DiagnosticReport};

pub const DEFAULT_BINS: usize = 60;
pub const DEFAULT_DF: usize = 5;

/// Ridge on the spline coefficients; a singularity guard, not a smoother.
const RIDGE: f64 = 1e-8;
const MAX_NEWTON_ITER: usize = 200;

/// Value of d/dx log m(x), flagged when x lies outside the fitted support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub value: f64,
    pub extrapolated: bool,
}

/// A marginal density of x that can be plugged into Tweedie's formula.
pub trait MarginalDensity {
    fn log_density(&self, x: f64) -> f64;

    fn score(&self, x: f64) -> Score;

    fn support(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn method(&self) -> RuleMethod;
}

/// The exact N(mean, var) marginal, e.g. a N(0, A) prior convolved with
/// N(0, σ²) noise.
#[derive(Clone, Copy, Debug)]
pub struct GaussianMarginal {
    pub mean: f64,
    pub var: f64,
}

impl MarginalDensity for GaussianMarginal {
    fn log_density(&self, x: f64) -> f64 {
        crate::dist::normal_logpdf_unchecked(x, self.mean, self.var.sqrt())
    }

    fn score(&self, x: f64) -> Score {
        Score {
            value: -(x - self.mean) / self.var,
            extrapolated: false,
        }
    }

    fn method(&self) -> RuleMethod {
        RuleMethod::Exact
    }
}

/// Natural cubic spline basis (truncated-power form) in a standardized
/// coordinate; linear beyond the boundary knots.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct NaturalSpline {
    knots: Vec<f64>,
}

impl NaturalSpline {
    /// Columns: 1, u, and one cubic term per interior knot.
    fn ncols(&self) -> usize {
        self.knots.len()
    }

    fn d(&self, k: usize, u: f64) -> f64 {
        let last = *self.knots.last().unwrap();
        let c = |t: f64| (u - t).max(0.0).powi(3);
        (c(self.knots[k]) - c(last)) / (last - self.knots[k])
    }

    fn d_prime(&self, k: usize, u: f64) -> f64 {
        let last = *self.knots.last().unwrap();
        let c = |t: f64| 3.0 * (u - t).max(0.0).powi(2);
        (c(self.knots[k]) - c(last)) / (last - self.knots[k])
    }

    fn row(&self, u: f64, out: &mut [f64]) {
        let k = self.knots.len();
        out[0] = 1.0;
        out[1] = u;
        let tail = self.d(k - 2, u);
        for j in 0..k - 2 {
            out[j + 2] = self.d(j, u) - tail;
        }
    }

    fn row_derivative(&self, u: f64, out: &mut [f64]) {
        let k = self.knots.len();
        out[0] = 0.0;
        out[1] = 1.0;
        let tail = self.d_prime(k - 2, u);
        for j in 0..k - 2 {
            out[j + 2] = self.d_prime(j, u) - tail;
        }
    }
}

/// Lindsey-method fit of log m̂(x).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginalFit {
    coefficients: Vec<f64>,
    spline: NaturalSpline,
    center: f64,
    scale: f64,
    support: (f64, f64),
    bins: usize,
    df: usize,
    log_norm: f64,
    deviance_trace: Vec<f64>,
}

impl MarginalFit {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn df(&self) -> usize {
        self.df
    }

    /// Penalized Poisson deviance after each accepted Newton step.
    pub fn deviance_trace(&self) -> &[f64] {
        &self.deviance_trace
    }

    fn standardize(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }

    fn linear_predictor(&self, x: f64) -> f64 {
        let mut row = vec![0.0; self.spline.ncols()];
        self.spline.row(self.standardize(x), &mut row);
        dot(&row, &self.coefficients)
    }
}

impl MarginalDensity for MarginalFit {
    fn log_density(&self, x: f64) -> f64 {
        self.linear_predictor(x) - self.log_norm
    }

    fn score(&self, x: f64) -> Score {
        let mut row = vec![0.0; self.spline.ncols()];
        self.spline.row_derivative(self.standardize(x), &mut row);
        Score {
            value: dot(&row, &self.coefficients) / self.scale,
            extrapolated: x < self.support.0 || x > self.support.1,
        }
    }

    fn support(&self) -> (f64, f64) {
        self.support
    }

    fn method(&self) -> RuleMethod {
        RuleMethod::FModel
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits log m̂ by Poisson regression of `bins` histogram counts on a natural
/// spline with `df` degrees of freedom (plus intercept).
///
/// The support is `[min x − 3σ, max x + 3σ]`. Boundary knots sit at the data
/// range and the `df − 1` interior knots are equally spaced between them, so
/// the fitted log-density is linear in the tails beyond the observed data.
pub fn fit_marginal(data: &NormalMeansData, bins: usize, df: usize) -> Result<MarginalFit> {
    if df == 0 {
        return Err(Error::domain("df must be positive"));
    }
    let need = (5 * df).max(20);
    if data.len() < need {
        return Err(Error::domain(format!(
            "f-modeling with df = {df} needs at least {need} observations, got {}",
            data.len()
        )));
    }
    if bins < df + 2 {
        return Err(Error::fit(format!(
            "singular basis: {bins} bins cannot support df = {df} (need at least {})",
            df + 2
        )));
    }
    let (xmin, xmax) = (data.min(), data.max());
    if xmax <= xmin {
        return Err(Error::fit("degenerate data: all observations are equal"));
    }

    let sigma = data.sigma();
    let support = (xmin - 3.0 * sigma, xmax + 3.0 * sigma);
    let center = 0.5 * (support.0 + support.1);
    let scale = 0.5 * (support.1 - support.0);

    let (blo, bhi) = ((xmin - center) / scale, (xmax - center) / scale);
    let knots: Vec<f64> = (0..=df)
        .map(|j| blo + (bhi - blo) * j as f64 / df as f64)
        .collect();
    let spline = NaturalSpline { knots };

    let width = (support.1 - support.0) / bins as f64;
    let mut counts = vec![0.0; bins];
    for &x in data.x() {
        let j = (((x - support.0) / width) as usize).min(bins - 1);
        counts[j] += 1.0;
    }
    let p = spline.ncols();
    let mut design = DMatrix::<f64>::zeros(bins, p);
    let mut row = vec![0.0; p];
    for j in 0..bins {
        let c = support.0 + (j as f64 + 0.5) * width;
        spline.row((c - center) / scale, &mut row);
        for (k, v) in row.iter().enumerate() {
            design[(j, k)] = *v;
        }
    }
    let y = DVector::from_vec(counts);

    let (coef, deviance_trace) = poisson_newton(&design, &y)?;
    let coefficients: Vec<f64> = coef.iter().copied().collect();

    let mut fit = MarginalFit {
        coefficients,
        spline,
        center,
        scale,
        support,
        bins,
        df,
        log_norm: 0.0,
        deviance_trace,
    };

    // log ∫ exp(η) over the support; shift by the max for stability
    let breaks: Vec<f64> = fit.spline.knots.iter().map(|u| center + scale * u).collect();
    let probe = crate::rule::linspace(support.0, support.1, 4 * bins);
    let peak = probe
        .iter()
        .map(|&x| fit.linear_predictor(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let mass = quad::integrate(
        |x| (fit.linear_predictor(x) - peak).exp(),
        support.0,
        support.1,
        &breaks,
        QuadSettings {
            abs_tol: 0.0,
            rel_tol: 1e-12,
            max_intervals: 2000,
        },
    )?;
    fit.log_norm = peak + mass.value.ln();
    if !fit.log_norm.is_finite() {
        return Err(Error::fit("fitted log-density could not be normalized"));
    }
    Ok(fit)
}

fn penalized_deviance(eta: &DVector<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let mut dev = 0.0;
    for (e, &yi) in eta.iter().zip(y.iter()) {
        let mu = e.exp();
        let t = if yi > 0.0 { yi * (yi.ln() - e) } else { 0.0 };
        dev += 2.0 * (t - (yi - mu));
    }
    dev + RIDGE * beta.norm_squared()
}

/// Damped Newton on the ridge-penalized Poisson log-likelihood; step
/// halving keeps the penalized deviance non-increasing.
fn poisson_newton(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, Vec<f64>)> {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    beta[0] = (y.mean()).max(1e-3).ln();
    let mut eta = x * &beta;
    let mut dev = penalized_deviance(&eta, y, &beta);
    let mut trace = vec![dev];

    for _ in 0..MAX_NEWTON_ITER {
        let mu = eta.map(f64::exp);
        let grad = x.transpose() * (y - &mu) - &beta * RIDGE;
        let mut hess = x.transpose() * DMatrix::from_diagonal(&mu) * x;
        for k in 0..p {
            hess[(k, k)] += RIDGE;
        }
        let chol = hess
            .cholesky()
            .ok_or_else(|| Error::fit("singular basis: Poisson Hessian is not positive definite"))?;
        let step = chol.solve(&grad);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &beta + &step * t;
            let cand_eta = x * &cand;
            let cand_dev = penalized_deviance(&cand_eta, y, &cand);
            if cand_dev.is_finite() && cand_dev <= dev {
                accepted = Some((cand, cand_eta, cand_dev));
                break;
            }
            t *= 0.5;
        }
        let Some((nb, ne, nd)) = accepted else {
            break;
        };
        let gain = dev - nd;
        beta = nb;
        eta = ne;
        dev = nd;
        trace.push(dev);
        if gain <= 1e-10 * (dev.abs() + 1.0) {
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::fit("Poisson regression diverged"));
    }
    Ok((beta, trace))
}

pub fn score<M: MarginalDensity + ?Sized>(fit: &M, x: f64) -> Score {
    fit.score(x)
}

/// Tweedie plug-in rule: value(x) = x + σ²·score(x) on `grid`.
pub fn tweedie_rule<M: MarginalDensity + ?Sized>(
    fit: &M,
    sigma: f64,
    grid: &[f64],
) -> Result<ShrinkageRule> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    check_grid(grid)?;
    let s2 = sigma * sigma;
    let mut extrapolated = Vec::new();
    let values = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let s = fit.score(x);
            if s.extrapolated {
                extrapolated.push(i);
            }
            x + s2 * s.value
        })
        .collect();
    ShrinkageRule::with_extrapolated(grid.to_vec(), values, fit.method(), extrapolated)
}

/// Local maxima of the fitted density on `grid`, located by + → − sign
/// changes of the score.
pub fn count_modes<M: MarginalDensity + ?Sized>(fit: &M, grid: &[f64]) -> usize {
    grid.windows(2)
        .filter(|w| fit.score(w[0]).value > 0.0 && fit.score(w[1]).value <= 0.0)
        .count()
}
