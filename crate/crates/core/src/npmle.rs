//! g-modeling by nonparametric maximum likelihood: the mixing distribution
//! is estimated on a fixed grid of atoms by EM, and the induced posterior
//! mean is a genuine Bayes rule for that discrete prior.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::NormalMeansData;
use crate::dist::{log_sum_exp, normal_logpdf_unchecked};
use crate::error::{Error, Result};
use crate::rule::{check_grid, linspace, RuleMethod, ShrinkageRule};
use crate::tweedie::{MarginalDensity, Score};

pub const DEFAULT_GRID_COUNT: usize = 600;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 5000;

/// Rows per parallel work unit; partial sums are combined in chunk order.
const CHUNK: usize = 256;

/// Finite-support prior: strictly increasing atoms with weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePrior {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscretePrior {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::domain(format!(
                "prior needs equal, nonzero numbers of atoms and weights (got {} and {})",
                atoms.len(),
                weights.len()
            )));
        }
        check_grid(&atoms)?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::domain("prior weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::domain(format!("prior weights sum to {total}, not 1")));
        }
        Ok(Self { atoms, weights })
    }

    pub fn point_mass(at: f64) -> Self {
        Self {
            atoms: vec![at],
            weights: vec![1.0],
        }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Writes `atom,weight` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["atom", "weight"])?;
        for (a, p) in self.atoms.iter().zip(&self.weights) {
            w.write_record([a.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Total weight on atoms within `radius` of `center`.
    pub fn mass_near(&self, center: f64, radius: f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .filter(|(a, _)| (*a - center).abs() <= radius)
            .map(|(_, w)| w)
            .sum()
    }
}

/// Equispaced grid of candidate atoms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::domain(format!("grid needs lo < hi, got [{lo}, {hi}]")));
        }
        if count < 2 {
            return Err(Error::domain("grid needs at least two points"));
        }
        Ok(Self { lo, hi, count })
    }

    /// Default grid: 600 atoms on `[min x − σ, max x + σ]`.
    pub fn covering(data: &NormalMeansData) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::domain("cannot build a grid for empty data"));
        }
        let s = data.sigma();
        Self::new(data.min() - s, data.max() + s, DEFAULT_GRID_COUNT)
    }

    pub fn points(&self) -> Vec<f64> {
        linspace(self.lo, self.hi, self.count)
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NpmleFit {
    pub prior: DiscretePrior,
    /// Marginal log-likelihood at the start of every EM iteration, plus the final value.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl NpmleFit {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

/// Which ascent scheme [`fit_npmle_with`] runs on the grid weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NpmleSolver {
    /// Plain multiplicative EM over all grid weights.
    Em,
    /// Constrained Newton with support expansion and a backtracking line search.
    #[default]
    ConstrainedNewton,
}

/// Likelihood matrix φ_σ(x_i − a_k), each row scaled by its maximum.
struct Kernel {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    log_offsets: f64,
}

impl Kernel {
    fn new(data: &NormalMeansData, atoms: &[f64]) -> Self {
        let sigma = data.sigma();
        let cols = atoms.len();
        let per_row: Vec<(Vec<f64>, f64)> = data
            .x()
            .par_iter()
            .map(|&x| {
                let logs: Vec<f64> = atoms
                    .iter()
                    .map(|&a| normal_logpdf_unchecked(x, a, sigma))
                    .collect();
                let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (logs.into_iter().map(|l| (l - top).exp()).collect(), top)
            })
            .collect();
        let mut values = Vec::with_capacity(per_row.len() * cols);
        let mut log_offsets = 0.0;
        for (row, top) in per_row {
            values.extend(row);
            log_offsets += top;
        }
        Self {
            rows: data.len(),
            cols,
            values,
            log_offsets,
        }
    }

    #[inline]
    fn at(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.cols + k]
    }

    /// Scaled mixture densities m_i over the atoms in `support`.
    fn mix(&self, support: &[usize], weights: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| support.iter().zip(weights).map(|(&k, w)| self.at(i, k) * w).sum())
            .collect()
    }

    fn loglik(&self, mix: &[f64]) -> f64 {
        self.log_offsets + mix.iter().map(|m| m.ln()).sum::<f64>()
    }

    /// Σ_i L_ik / m_i for every grid atom k, summed in fixed chunk order.
    fn ratio_sums(&self, mix: &[f64]) -> Vec<f64> {
        let cols = self.cols;
        let partials: Vec<Vec<f64>> = self
            .values
            .par_chunks(CHUNK * cols)
            .zip(mix.par_chunks(CHUNK))
            .map(|(block, m)| {
                let mut acc = vec![0.0; cols];
                for (row, &mi) in block.chunks_exact(cols).zip(m) {
                    let inv = 1.0 / mi;
                    for (a, l) in acc.iter_mut().zip(row) {
                        *a += l * inv;
                    }
                }
                acc
            })
            .collect();
        let mut acc = vec![0.0; cols];
        for p in partials {
            for (a, b) in acc.iter_mut().zip(p) {
                *a += b;
            }
        }
        acc
    }
}

/// Grid NPMLE of the mixing distribution with the default solver.
pub fn fit_npmle(
    data: &NormalMeansData,
    grid: &GridSpec,
    tol: f64,
    max_iter: usize,
) -> Result<NpmleFit> {
    fit_npmle_with(data, grid, tol, max_iter, NpmleSolver::default())
}

/// Maximizes Σ_i log Σ_k w_k φ_σ(x_i − a_k) over weights on the grid atoms.
///
/// Both solvers are ascent methods: the log-likelihood recorded once per
/// iteration never decreases. Iteration stops once the gain falls below `tol`.
pub fn fit_npmle_with(
    data: &NormalMeansData,
    grid: &GridSpec,
    tol: f64,
    max_iter: usize,
    solver: NpmleSolver,
) -> Result<NpmleFit> {
    if data.is_empty() {
        return Err(Error::domain("NPMLE needs at least one observation"));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::domain("tol and max_iter must be positive"));
    }
    let s = data.sigma();
    let slack = 1e-9 * (1.0 + grid.lo.abs().max(grid.hi.abs()));
    if grid.lo > data.min() - s + slack || grid.hi < data.max() + s - slack {
        return Err(Error::domain(format!(
            "grid [{}, {}] does not cover [{}, {}]",
            grid.lo,
            grid.hi,
            data.min() - s,
            data.max() + s
        )));
    }
    let atoms = grid.points();
    let kernel = Kernel::new(data, &atoms);
    let fit = match solver {
        NpmleSolver::Em => run_em(&kernel, tol, max_iter),
        NpmleSolver::ConstrainedNewton => run_cnm(data, &atoms, &kernel, tol, max_iter)?,
    };
    let (weights, trace, iterations, converged) = fit;
    if !trace.last().is_some_and(|v| v.is_finite()) {
        return Err(Error::numeric("NPMLE log-likelihood is not finite"));
    }
    Ok(NpmleFit {
        prior: DiscretePrior { atoms, weights },
        loglik_trace: trace,
        iterations,
        converged,
    })
}

type Run = (Vec<f64>, Vec<f64>, usize, bool);

/// Weights that decay below this are set to zero; they can no longer
/// matter and would otherwise turn into slow subnormal arithmetic.
const EM_FLUSH: f64 = 1e-250;

fn run_em(kernel: &Kernel, tol: f64, max_iter: usize) -> Run {
    let k = kernel.cols;
    let n = kernel.rows as f64;
    let all: Vec<usize> = (0..k).collect();
    let mut weights = vec![1.0 / k as f64; k];
    let mut mix = kernel.mix(&all, &weights);
    let mut ll = kernel.loglik(&mix);
    let mut trace = vec![ll];
    let mut iterations = 0;
    while iterations < max_iter {
        let ratios = kernel.ratio_sums(&mix);
        for (w, r) in weights.iter_mut().zip(&ratios) {
            *w *= r / n;
            if *w < EM_FLUSH {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        iterations += 1;

        let live: Vec<usize> = (0..k).filter(|&j| weights[j] > 0.0).collect();
        let live_w: Vec<f64> = live.iter().map(|&j| weights[j]).collect();
        mix = kernel.mix(&live, &live_w);
        let next = kernel.loglik(&mix);
        debug_assert!(
            next >= ll - 1e-9 * ll.abs().max(1.0),
            "EM decreased the log-likelihood: {ll} -> {next}"
        );
        let gain = next - ll;
        ll = next;
        trace.push(ll);
        if gain < tol {
            return (weights, trace, iterations, true);
        }
    }
    (weights, trace, iterations, false)
}

/// Number of starting atoms for the constrained Newton solver.
const CNM_START: usize = 10;
const ARMIJO: f64 = 1.0 / 3.0;

fn run_cnm(
    data: &NormalMeansData,
    atoms: &[f64],
    kernel: &Kernel,
    tol: f64,
    max_iter: usize,
) -> Result<Run> {
    let k = kernel.cols;
    let n = kernel.rows as f64;

    // start from equal weights on atoms nearest to evenly spaced data quantiles
    let mut sorted = data.x().to_vec();
    sorted.sort_by(f64::total_cmp);
    let step = atoms[1] - atoms[0];
    let mut support: Vec<usize> = (0..CNM_START)
        .map(|j| {
            let q = sorted[(j * (sorted.len() - 1)) / (CNM_START - 1).max(1)];
            (((q - atoms[0]) / step).round() as usize).min(k - 1)
        })
        .collect();
    support.dedup();
    let mut w = vec![1.0 / support.len() as f64; support.len()];
    let mut mix = kernel.mix(&support, &w);
    let mut ll = kernel.loglik(&mix);
    let mut trace = vec![ll];
    let mut iterations = 0;

    while iterations < max_iter {
        // directional derivative toward each grid atom; nonpositive at the optimum
        let grad = kernel.ratio_sums(&mix);
        let d: Vec<f64> = grad.iter().map(|g| g / n - 1.0).collect();
        let mut expanded = support.clone();
        for j in 0..k {
            let left = j == 0 || d[j] >= d[j - 1];
            let right = j + 1 == k || d[j] >= d[j + 1];
            if d[j] > 0.0 && left && right && !support.contains(&j) {
                expanded.push(j);
            }
        }
        let mut cur = w.clone();
        cur.resize(expanded.len(), 0.0);

        // Newton step: min ‖S γ − 2‖² over γ ≥ 0 with S_ij = L_ij / m_i,
        // plus a heavily weighted row holding Σ γ at one
        let rows = kernel.rows;
        let pin = 1e3 * n.sqrt();
        let a = DMatrix::from_fn(rows + 1, expanded.len(), |i, j| {
            if i == rows {
                pin
            } else {
                kernel.at(i, expanded[j]) / mix[i]
            }
        });
        let mut b = DVector::from_element(rows + 1, 2.0);
        b[rows] = pin;
        let gamma = nnls(&a, &b)?;
        let total: f64 = gamma.iter().sum();
        if !(total > 0.0) {
            return Err(Error::numeric("constrained Newton step collapsed to zero"));
        }
        let target: Vec<f64> = gamma.iter().map(|g| g / total).collect();
        let dir: Vec<f64> = target.iter().zip(&cur).map(|(t, c)| t - c).collect();
        let slope: f64 = dir
            .iter()
            .zip(&expanded)
            .map(|(dj, &j)| dj * grad[j])
            .sum();

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = cur
                .iter()
                .zip(&dir)
                .map(|(c, dj)| (c + alpha * dj).max(0.0))
                .collect();
            let trial_mix = kernel.mix(&expanded, &trial);
            let trial_ll = kernel.loglik(&trial_mix);
            if trial_ll >= ll + ARMIJO * alpha * slope && trial_ll >= ll {
                accepted = Some((trial, trial_mix, trial_ll));
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        let Some((trial, trial_mix, trial_ll)) = accepted else {
            // no ascent direction left at working precision
            trace.push(ll);
            let converged = d.iter().all(|v| *v < 1e-6);
            return Ok((scatter(k, &support, &w), trace, iterations, converged));
        };

        let gain = trial_ll - ll;
        support.clear();
        w.clear();
        for (&j, &v) in expanded.iter().zip(&trial) {
            if v > 0.0 {
                support.push(j);
                w.push(v);
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        mix = trial_mix.iter().map(|m| m / total).collect();
        ll = trial_ll - n * total.ln();
        trace.push(ll);
        if gain < tol {
            return Ok((scatter(k, &support, &w), trace, iterations, true));
        }
    }
    Ok((scatter(k, &support, &w), trace, iterations, false))
}

fn scatter(k: usize, support: &[usize], w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (&j, &v) in support.iter().zip(w) {
        out[j] = v;
    }
    out
}

/// Lawson–Hanson nonnegative least squares, min ‖A x − b‖ subject to x ≥ 0.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let p = a.ncols();
    let mut x = DVector::zeros(p);
    let mut passive = vec![false; p];
    let tol = 10.0 * f64::EPSILON * a.abs().max() * a.nrows().max(p) as f64;
    let solve = |passive: &[bool]| -> Result<DVector<f64>> {
        let cols: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
        let sub = DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])]);
        let sol = sub
            .svd(true, true)
            .solve(b, 1e-13)
            .map_err(|e| Error::numeric(format!("least-squares solve failed: {e}")))?;
        let mut z = DVector::zeros(p);
        for (c, &j) in cols.iter().enumerate() {
            z[j] = sol[c];
        }
        Ok(z)
    };

    for _ in 0..3 * p.max(1) {
        let resid = b - a * &x;
        let grad = a.transpose() * resid;
        let Some(j) = (0..p)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]))
        else {
            break;
        };
        passive[j] = true;
        loop {
            let z = solve(&passive)?;
            if (0..p).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                break;
            }
            let alpha = (0..p)
                .filter(|&i| passive[i] && z[i] <= 0.0)
                .map(|i| x[i] / (x[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for i in 0..p {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|&q| q) {
                break;
            }
        }
    }
    Ok(x)
}

/// Σ_i log Σ_k w_k φ_σ(x_i − a_k).
pub fn marginal_loglik(prior: &DiscretePrior, data: &NormalMeansData) -> f64 {
    let sigma = data.sigma();
    let log_w: Vec<f64> = prior.weights.iter().map(|w| w.ln()).collect();
    let mut terms = vec![0.0; prior.len()];
    data.x()
        .iter()
        .map(|&x| {
            for ((t, &a), &lw) in terms.iter_mut().zip(&prior.atoms).zip(&log_w) {
                *t = lw + normal_logpdf_unchecked(x, a, sigma);
            }
            log_sum_exp(&terms)
        })
        .sum()
}

/// Posterior mean under a discrete prior,
/// Σ_k a_k w_k φ_σ(x − a_k) / Σ_k w_k φ_σ(x − a_k).
pub fn bayes_rule_discrete(
    prior: &DiscretePrior,
    sigma: f64,
    grid: &[f64],
) -> Result<ShrinkageRule> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    check_grid(grid)?;
    let values = grid
        .iter()
        .map(|&x| posterior_mean_discrete(prior, sigma, x))
        .collect();
    ShrinkageRule::new(grid.to_vec(), values, RuleMethod::NpmleG)
}

pub(crate) fn posterior_mean_discrete(prior: &DiscretePrior, sigma: f64, x: f64) -> f64 {
    let logs: Vec<f64> = prior
        .atoms
        .iter()
        .zip(&prior.weights)
        .map(|(&a, &w)| w.ln() + normal_logpdf_unchecked(x, a, sigma))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (&a, l) in prior.atoms.iter().zip(&logs) {
        let r = (l - top).exp();
        num += a * r;
        den += r;
    }
    num / den
}

/// Drops atoms with weight below `eps` and renormalizes.
///
/// With δ the dropped mass (δ ≤ K·eps for K atoms) the marginal
/// log-likelihood rises by at most −n·log(1 − δ). For a fitted NPMLE whose
/// per-observation responsibility on the dropped atoms is at most ½, it
/// falls by at most 2·n·δ, so |Δ| ≤ 2·n·K·eps (constant C = 2).
pub fn support_prune(prior: &DiscretePrior, eps: f64) -> Result<DiscretePrior> {
    if !(eps > 0.0) || eps >= 1.0 / prior.len() as f64 {
        return Err(Error::domain(format!(
            "prune threshold must lie in (0, 1/{}), got {eps}",
            prior.len()
        )));
    }
    let (atoms, weights): (Vec<f64>, Vec<f64>) = prior
        .atoms
        .iter()
        .zip(&prior.weights)
        .filter(|(_, &w)| w >= eps)
        .map(|(&a, &w)| (a, w))
        .unzip();
    if atoms.is_empty() {
        return Err(Error::domain("every atom has weight below the prune threshold"));
    }
    let total: f64 = weights.iter().sum();
    Ok(DiscretePrior {
        atoms,
        weights: weights.into_iter().map(|w| w / total).collect(),
    })
}

/// The analytic marginal m(x) = Σ_k w_k φ_σ(x − a_k) of a discrete prior.
#[derive(Clone, Copy, Debug)]
pub struct MixtureMarginal<'a> {
    pub prior: &'a DiscretePrior,
    pub sigma: f64,
}

impl MarginalDensity for MixtureMarginal<'_> {
    fn log_density(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .prior
            .atoms
            .iter()
            .zip(&self.prior.weights)
            .map(|(&a, &w)| w.ln() + normal_logpdf_unchecked(x, a, self.sigma))
            .collect();
        log_sum_exp(&terms)
    }

    /// m′(x)/m(x) from the differentiated kernel Σ w_k φ′_σ(x − a_k).
    fn score(&self, x: f64) -> Score {
        let s2 = self.sigma * self.sigma;
        let log_m = self.log_density(x);
        let slope: f64 = self
            .prior
            .atoms
            .iter()
            .zip(&self.prior.weights)
            .map(|(&a, &w)| {
                let dens = (w.ln() + normal_logpdf_unchecked(x, a, self.sigma) - log_m).exp();
                -(x - a) / s2 * dens
            })
            .sum();
        Score {
            value: slope,
            extrapolated: false,
        }
    }

    fn method(&self) -> RuleMethod {
        RuleMethod::Exact
    }
}
