//! Population predictive distribution q*(θ) = E_{X∼Fⁿ}[p(θ | X)] in the
//! conjugate normal–normal model, built by Monte Carlo over replicate datasets.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{normal_logpdf_unchecked, RngStream};
use crate::error::{Error, Result};

pub const POOLED_GRID_POINTS: usize = 512;
/// Half-width of the pooled-density grid in pooled standard deviations.
pub const POOLED_GRID_SDS: f64 = 6.0;

/// Sampling distribution F of a single observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Population {
    Normal { mean: f64, sd: f64 },
    /// Equal mixture of N(−c, sd²) and N(c, sd²).
    TwoPointMixture { c: f64, sd: f64 },
    /// Resampled with replacement.
    Custom(Vec<f64>),
}

impl Population {
    fn validate(&self) -> Result<()> {
        match self {
            Population::Normal { mean, sd } => {
                if !mean.is_finite() || !(*sd >= 0.0 && sd.is_finite()) {
                    return Err(Error::domain("normal population needs finite mean and sd ≥ 0"));
                }
            }
            Population::TwoPointMixture { c, sd } => {
                if !c.is_finite() || !(*sd >= 0.0 && sd.is_finite()) {
                    return Err(Error::domain("two-point population needs finite c and sd ≥ 0"));
                }
            }
            Population::Custom(v) => {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::domain("custom population needs finite values"));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            Population::Normal { mean, sd } => rng.normal(*mean, *sd),
            Population::TwoPointMixture { c, sd } => {
                let centre = if rng.uniform() < 0.5 { -*c } else { *c };
                rng.normal(centre, *sd)
            }
            Population::Custom(v) => v[rng.below(v.len())],
        }
    }

    /// Variance of one draw from F.
    pub fn variance(&self) -> f64 {
        match self {
            Population::Normal { sd, .. } => sd * sd,
            Population::TwoPointMixture { c, sd } => c * c + sd * sd,
            Population::Custom(v) => {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub population: Population,
    pub n: usize,
    pub replicates: usize,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        if self.n == 0 {
            return Err(Error::domain("replicate dataset size must be at least 1"));
        }
        if self.replicates == 0 {
            return Err(Error::domain("need at least one replicate"));
        }
        Ok(())
    }
}

/// Conjugate prior N(m0, v0) on θ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub var: f64,
}

impl NormalPrior {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() || !(var > 0.0 && var.is_finite()) {
            return Err(Error::domain(format!("prior needs finite mean and positive variance, got ({mean}, {var})")));
        }
        Ok(Self { mean, var })
    }

    /// Posterior (mean, variance) after n observations with sample mean `xbar`.
    pub fn posterior(&self, sigma: f64, n: usize, xbar: f64) -> (f64, f64) {
        let prec = 1.0 / self.var + n as f64 / (sigma * sigma);
        let mean = (self.mean / self.var + n as f64 * xbar / (sigma * sigma)) / prec;
        (mean, 1.0 / prec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub post_means: Vec<f64>,
    pub post_vars: Vec<f64>,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl PopulationSummary {
    pub fn replicates(&self) -> usize {
        self.post_means.len()
    }

    /// Mean and variance of the pooled mixture from its raw moments.
    pub fn pooled_moments(&self) -> (f64, f64) {
        let r = self.replicates() as f64;
        let m1 = self.post_means.iter().sum::<f64>() / r;
        let m2 = self
            .post_means
            .iter()
            .zip(&self.post_vars)
            .map(|(m, v)| v + m * m)
            .sum::<f64>()
            / r;
        (m1, m2 - m1 * m1)
    }

    /// Trapezoid mass of the pooled density over its grid.
    pub fn grid_mass(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0] + d[1]))
            .sum()
    }

    /// Writes `replicate,post_mean,post_var` rows.
    pub fn write_replicates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate", "post_mean", "post_var"])?;
        for (i, (m, v)) in self.post_means.iter().zip(&self.post_vars).enumerate() {
            w.write_record([(i + 1).to_string(), m.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `theta,population_predictive_density` rows.
    pub fn write_density_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["theta", "population_predictive_density"])?;
        for (g, d) in self.grid.iter().zip(&self.density) {
            w.write_record([g.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `replicates` datasets of size n from F, forms each conjugate
/// posterior, and averages the posterior densities on a grid.
///
/// Replicate r uses the stream `rng.stream_id() + 1 + r` under the same seed.
pub fn population_predictive_mc(
    prior: &NormalPrior,
    sigma: f64,
    spec: &PopulationSpec,
    rng: RngStream,
) -> Result<PopulationSummary> {
    NormalPrior::new(prior.mean, prior.var)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    spec.validate()?;
    let base = rng.stream_id() + 1;
    let posts: Vec<(f64, f64)> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let mut stream = rng.sibling(base + r as u64);
            let sum: f64 = (0..spec.n).map(|_| spec.population.sample(&mut stream)).sum();
            prior.posterior(sigma, spec.n, sum / spec.n as f64)
        })
        .collect();
    let (post_means, post_vars): (Vec<f64>, Vec<f64>) = posts.into_iter().unzip();

    let mut summary = PopulationSummary { post_means, post_vars, grid: Vec::new(), density: Vec::new() };
    let (centre, var) = summary.pooled_moments();
    let half = POOLED_GRID_SDS * var.sqrt();
    let step = 2.0 * half / (POOLED_GRID_POINTS - 1) as f64;
    summary.grid = (0..POOLED_GRID_POINTS).map(|i| centre - half + step * i as f64).collect();
    let r = summary.replicates() as f64;
    summary.density = summary
        .grid
        .par_iter()
        .map(|&g| {
            summary
                .post_means
                .iter()
                .zip(&summary.post_vars)
                .map(|(m, v)| normal_logpdf_unchecked(g, *m, v.sqrt()).exp())
                .sum::<f64>()
                / r
        })
        .collect();
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub within: f64,
    pub between: f64,
    pub total: f64,
}

/// Law of total variance on the empirical mixture: within is the average
/// posterior variance, between the (1/R) variance of posterior means.
pub fn variance_decomposition(summary: &PopulationSummary) -> VarianceDecomposition {
    let r = summary.replicates() as f64;
    let within = summary.post_vars.iter().sum::<f64>() / r;
    let m = summary.post_means.iter().sum::<f64>() / r;
    let between = summary.post_means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / r;
    VarianceDecomposition { within, between, total: within + between }
}

/// Sampling variance of the conjugate posterior mean:
/// (n v0/(σ² + n v0))² · Var_F / n.
pub fn between_variance_closed_form(
    prior: &NormalPrior,
    sigma: f64,
    population: &Population,
    n: usize,
) -> f64 {
    let nv = n as f64 * prior.var;
    let shrink = nv / (sigma * sigma + nv);
    shrink * shrink * population.variance() / n as f64
}
