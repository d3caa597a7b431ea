//! Sparse normal-means scenarios and paired risk/coverage benchmarks.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{
    eb_plugin_calibration, gibbs_calibration, BiasHyperPrior, Study, StudySet, ThetaSummary,
};
use crate::data::NormalMeansData;
use crate::dist::{normal_quantile, RngStream};
use crate::error::{Error, Result};
use crate::horseshoe::{
    credible_intervals, gibbs_horseshoe_with, horseshoe_posterior_mean, tau_marginal_ml,
    HorseshoeConfig,
};
use crate::npmle::{fit_npmle, posterior_mean_discrete, GridSpec, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::stats;
use crate::tweedie::{fit_marginal, MarginalDensity};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseScenario {
    pub n: usize,
    pub sparsity: f64,
    pub signal: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl SparseScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::domain("scenario needs n ≥ 1"));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::domain(format!("sparsity must lie in (0, 1], got {}", self.sparsity)));
        }
        if !self.signal.is_finite() {
            return Err(Error::domain("signal must be finite"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Number of nonzero means, ⌈sparsity·n⌉ with a 1e-9 guard against
    /// products such as 0.05·200 landing a hair above an integer.
    pub fn signal_count(&self) -> usize {
        ((self.sparsity * self.n as f64 - 1e-9).ceil() as usize).clamp(1, self.n)
    }

    pub fn id(&self) -> String {
        format!("n{}-p{}-a{}-s{}", self.n, self.sparsity, self.signal, self.sigma)
    }
}

/// Replicate 0 of the scenario: stream 0 of its seed.
pub fn simulate_sparse_means(scenario: &SparseScenario) -> Result<(Vec<f64>, NormalMeansData)> {
    simulate_sparse_means_with(scenario, &mut RngStream::new(scenario.seed, 0))
}

/// Signal positions come from a partial Fisher–Yates shuffle, then x = θ + σ·z.
pub fn simulate_sparse_means_with(
    scenario: &SparseScenario,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, NormalMeansData)> {
    scenario.validate()?;
    let n = scenario.n;
    let mut index: Vec<usize> = (0..n).collect();
    let mut theta = vec![0.0; n];
    for i in 0..scenario.signal_count() {
        let j = i + rng.below(n - i);
        index.swap(i, j);
        theta[index[i]] = scenario.signal;
    }
    let x = theta.iter().map(|t| t + scenario.sigma * rng.standard_normal()).collect();
    Ok((theta, NormalMeansData::new(x, scenario.sigma)?))
}

/// Per-replicate context handed to every method.
pub struct FitContext<'a> {
    pub theta_true: &'a [f64],
    pub level: f64,
    /// Shared by all methods on the replicate.
    pub rng: RngStream,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub point: Vec<f64>,
    pub intervals: Option<Vec<(f64, f64)>>,
}

/// Uniform interface for benchmarked estimators.
pub trait Estimator: Sync {
    fn name(&self) -> String;
    fn provides_intervals(&self) -> bool;
    fn fit(&self, data: &NormalMeansData, ctx: &mut FitContext) -> Result<Estimate>;
}

/// Built-in estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// θ̂ = x with intervals x ± z·σ.
    Identity,
    /// θ̂ = θ with intervals [θ, θ].
    Oracle,
    /// Intervals of half-width 1e12 around x.
    Wide,
    FModel { bins: usize, df: usize },
    Npmle,
    /// τ sampled.
    HorseshoeFull(HorseshoeConfig),
    /// τ fixed at its marginal-ML estimate over [1/n, 10].
    HorseshoePlugin(HorseshoeConfig),
}

impl Method {
    /// Parses a CLI tag. Horseshoe variants use `config` for their chains.
    pub fn parse(tag: &str, config: &HorseshoeConfig) -> Result<Self> {
        Ok(match tag {
            "identity" => Method::Identity,
            "oracle" => Method::Oracle,
            "wide" => Method::Wide,
            "fmodel" => Method::FModel { bins: 60, df: 7 },
            "npmle" => Method::Npmle,
            "horseshoe-full" => Method::HorseshoeFull(config.clone()),
            "horseshoe-plugin" => Method::HorseshoePlugin(config.clone()),
            other => return Err(Error::domain(format!("unknown method '{other}'"))),
        })
    }
}

const WIDE_HALF_WIDTH: f64 = 1e12;

fn horseshoe_intervals(
    data: &NormalMeansData,
    config: &HorseshoeConfig,
    ctx: &mut FitContext,
) -> Result<Estimate> {
    let draws = gibbs_horseshoe_with(data, config, &mut ctx.rng)?;
    let ci = credible_intervals(&draws, ctx.level, "theta")?;
    Ok(Estimate {
        point: draws.means("theta"),
        intervals: Some(ci.into_iter().map(|c| (c.lower, c.upper)).collect()),
    })
}

impl Estimator for Method {
    fn name(&self) -> String {
        match self {
            Method::Identity => "identity",
            Method::Oracle => "oracle",
            Method::Wide => "wide",
            Method::FModel { .. } => "fmodel",
            Method::Npmle => "npmle",
            Method::HorseshoeFull(_) => "horseshoe-full",
            Method::HorseshoePlugin(_) => "horseshoe-plugin",
        }
        .to_string()
    }

    fn provides_intervals(&self) -> bool {
        !matches!(self, Method::FModel { .. } | Method::Npmle)
    }

    fn fit(&self, data: &NormalMeansData, ctx: &mut FitContext) -> Result<Estimate> {
        let x = data.x();
        let sigma = data.sigma();
        match self {
            Method::Identity => {
                let z = normal_quantile(0.5 + 0.5 * ctx.level) * sigma;
                Ok(Estimate {
                    point: x.to_vec(),
                    intervals: Some(x.iter().map(|v| (v - z, v + z)).collect()),
                })
            }
            Method::Oracle => Ok(Estimate {
                point: ctx.theta_true.to_vec(),
                intervals: Some(ctx.theta_true.iter().map(|t| (*t, *t)).collect()),
            }),
            Method::Wide => Ok(Estimate {
                point: x.to_vec(),
                intervals: Some(
                    x.iter().map(|v| (v - WIDE_HALF_WIDTH, v + WIDE_HALF_WIDTH)).collect(),
                ),
            }),
            Method::FModel { bins, df } => {
                let fit = fit_marginal(data, *bins, *df)?;
                let s2 = sigma * sigma;
                Ok(Estimate {
                    point: x.iter().map(|&v| v + s2 * fit.score(v).value).collect(),
                    intervals: None,
                })
            }
            Method::Npmle => {
                let fit = fit_npmle(data, &GridSpec::covering(data)?, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
                Ok(Estimate {
                    point: x.iter().map(|&v| posterior_mean_discrete(&fit.prior, sigma, v)).collect(),
                    intervals: None,
                })
            }
            Method::HorseshoeFull(config) => {
                let config = HorseshoeConfig { tau_fixed: None, ..config.clone() };
                horseshoe_intervals(data, &config, ctx)
            }
            Method::HorseshoePlugin(config) => {
                let tau = tau_marginal_ml(data, 1.0 / data.len() as f64, 10.0)?;
                let config = HorseshoeConfig { tau_fixed: Some(tau), ..config.clone() };
                let mut est = horseshoe_intervals(data, &config, ctx)?;
                est.point = x
                    .iter()
                    .map(|&v| horseshoe_posterior_mean(v, sigma, tau))
                    .collect::<Result<_>>()?;
                Ok(est)
            }
        }
    }
}

/// Stream of replicate r's data; the methods' shared stream is the next id.
fn replicate_streams(seed: u64, r: usize) -> (RngStream, RngStream) {
    (RngStream::new(seed, 2 * r as u64), RngStream::new(seed, 2 * r as u64 + 1))
}

/// Runs every method on replicate r. Each method gets its own copy of the
/// dataset, whose fingerprint is checked against the original afterwards.
fn run_replicate<E: Estimator>(
    methods: &[E],
    scenario: &SparseScenario,
    r: usize,
    level: f64,
) -> Result<(Vec<f64>, Vec<Result<Estimate>>)> {
    let (mut data_rng, method_rng) = replicate_streams(scenario.seed, r);
    let (theta, data) = simulate_sparse_means_with(scenario, &mut data_rng)?;
    let fingerprint = data.fingerprint();
    let fits = methods
        .iter()
        .map(|m| {
            let copy = data.clone();
            let mut ctx = FitContext { theta_true: &theta, level, rng: method_rng.clone() };
            let out = m.fit(&copy, &mut ctx);
            if copy.fingerprint() != fingerprint {
                return Err(Error::numeric(format!("{} saw a different dataset", m.name())));
            }
            let out = out?;
            if out.point.len() != data.len() || out.point.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("{} returned an invalid estimate", m.name())));
            }
            Ok(out)
        })
        .collect();
    Ok((theta, fits))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub method: String,
    pub scenario: String,
    pub mean_risk: f64,
    pub se: f64,
    pub replicates: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    pub rows: Vec<RiskRow>,
    /// Per-replicate losses, methods in row order.
    #[serde(skip)]
    pub losses: Vec<Vec<Option<f64>>>,
}

impl RiskTable {
    pub fn row(&self, method: &str) -> Option<&RiskRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates == 0 {
        return Err(Error::domain("need at least one replicate"));
    }
    Ok(())
}

/// Mean ‖θ̂ − θ‖²/n per method over replicates; a failing method is counted
/// and skipped on that replicate.
pub fn risk_bench<E: Estimator>(
    methods: &[E],
    scenario: &SparseScenario,
    replicates: usize,
) -> Result<RiskTable> {
    scenario.validate()?;
    check_replicates(replicates)?;
    let per_rep: Vec<Vec<Option<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let (theta, fits) = run_replicate(methods, scenario, r, 0.95)?;
            Ok(fits
                .into_iter()
                .map(|f| {
                    f.ok().map(|e| {
                        e.point.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                            / theta.len() as f64
                    })
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let rows = methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let ok: Vec<f64> = per_rep.iter().filter_map(|l| l[m]).collect();
            RiskRow {
                method: method.name(),
                scenario: scenario.id(),
                mean_risk: if ok.is_empty() { f64::NAN } else { stats::mean(&ok) },
                se: (stats::variance(&ok) / ok.len().max(1) as f64).sqrt(),
                replicates: ok.len(),
                failures: replicates - ok.len(),
            }
        })
        .collect();
    Ok(RiskTable { rows, losses: per_rep })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: String,
    pub scenario: String,
    pub level: f64,
    pub coverage: f64,
    /// Standard error from the spread of per-replicate coverage fractions.
    pub coverage_se: f64,
    pub mean_width: f64,
    pub replicates: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
}

impl CoverageTable {
    pub fn row(&self, method: &str) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("interval level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

fn coverage_row(
    method: String,
    scenario: String,
    level: f64,
    per_rep: &[Option<(f64, f64)>],
) -> CoverageRow {
    let ok: Vec<(f64, f64)> = per_rep.iter().flatten().copied().collect();
    let cov: Vec<f64> = ok.iter().map(|c| c.0).collect();
    let width: Vec<f64> = ok.iter().map(|c| c.1).collect();
    let nan_if_empty = |v: &[f64]| if v.is_empty() { f64::NAN } else { stats::mean(v) };
    CoverageRow {
        method,
        scenario,
        level,
        coverage: nan_if_empty(&cov),
        coverage_se: (stats::variance(&cov) / cov.len().max(1) as f64).sqrt(),
        mean_width: nan_if_empty(&width),
        replicates: ok.len(),
        failures: per_rep.len() - ok.len(),
    }
}

/// Empirical coverage over (coordinate, replicate) pairs. Each replicate has
/// the same number of coordinates, so the pooled fraction equals the mean of
/// per-replicate fractions.
pub fn coverage_bench<E: Estimator>(
    methods: &[E],
    scenario: &SparseScenario,
    level: f64,
    replicates: usize,
) -> Result<CoverageTable> {
    scenario.validate()?;
    check_level(level)?;
    check_replicates(replicates)?;
    if let Some(m) = methods.iter().find(|m| !m.provides_intervals()) {
        return Err(Error::domain(format!("{} does not produce intervals", m.name())));
    }
    let per_rep: Vec<Vec<Option<(f64, f64)>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let (theta, fits) = run_replicate(methods, scenario, r, level)?;
            Ok(fits
                .into_iter()
                .map(|f| {
                    let iv = f.ok()?.intervals?;
                    let n = theta.len() as f64;
                    let hit = iv.iter().zip(&theta).filter(|((l, u), t)| l <= t && *t <= u).count();
                    let width = iv.iter().map(|(l, u)| u - l).sum::<f64>() / n;
                    Some((hit as f64 / n, width))
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let rows = methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let col: Vec<Option<(f64, f64)>> = per_rep.iter().map(|r| r[m]).collect();
            coverage_row(method.name(), scenario.id(), level, &col)
        })
        .collect();
    Ok(CoverageTable { rows })
}

/// One experimental study, J observational and K calibration studies with
/// biases drawn from N(μ, γ²) on every replicate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationScenario {
    pub theta: f64,
    pub mu: f64,
    pub gamma: f64,
    pub exp_var: f64,
    pub n_obs: usize,
    pub obs_var: f64,
    pub n_calib: usize,
    pub calib_var: f64,
    pub seed: u64,
}

impl CalibrationScenario {
    pub fn id(&self) -> String {
        format!("calib-J{}-K{}-mu{}-g{}", self.n_obs, self.n_calib, self.mu, self.gamma)
    }

    pub fn simulate(&self, rng: &mut RngStream) -> Result<StudySet> {
        let exp = Study::new(rng.normal(self.theta, self.exp_var.sqrt()), self.exp_var)?;
        let mut draw = |shift: f64, v: f64| {
            let b = rng.normal(self.mu, self.gamma);
            Study::new(rng.normal(shift + b, v.sqrt()), v)
        };
        let obs = (0..self.n_obs).map(|_| draw(self.theta, self.obs_var)).collect::<Result<_>>()?;
        let cal = (0..self.n_calib).map(|_| draw(0.0, self.calib_var)).collect::<Result<_>>()?;
        StudySet::new(Some(exp), obs, cal)
    }
}

/// Coverage of θ by the full-Bayes Gibbs interval ("calib-full") and the
/// plug-in Gaussian interval ("calib-plugin") on paired replicates.
pub fn calibration_coverage_bench(
    scenario: &CalibrationScenario,
    hyper: &BiasHyperPrior,
    config: &HorseshoeConfig,
    level: f64,
    replicates: usize,
) -> Result<CoverageTable> {
    check_level(level)?;
    check_replicates(replicates)?;
    let per_rep: Vec<[Option<(f64, f64)>; 2]> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let set = scenario.simulate(&mut RngStream::new(scenario.seed, 2 * r as u64))?;
            let score = |s: Result<ThetaSummary>| {
                s.ok().map(|s| {
                    let hit = s.lower <= scenario.theta && scenario.theta <= s.upper;
                    (if hit { 1.0 } else { 0.0 }, s.upper - s.lower)
                })
            };
            let chain = HorseshoeConfig { seed: scenario.seed ^ (2 * r as u64 + 1), ..config.clone() };
            let full = gibbs_calibration(&set, hyper, crate::calib::DEFAULT_THETA_PRIOR_VAR, &chain)
                .and_then(|f| ThetaSummary::from_draws("full-bayes", &f, level));
            let plug = eb_plugin_calibration(&set, crate::calib::DEFAULT_THETA_PRIOR_VAR)
                .and_then(|p| ThetaSummary::from_plugin(&p, level, set.experiment_only()));
            Ok([score(full), score(plug)])
        })
        .collect::<Result<_>>()?;
    let rows = ["calib-full", "calib-plugin"]
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let col: Vec<Option<(f64, f64)>> = per_rep.iter().map(|r| r[m]).collect();
            coverage_row(name.to_string(), scenario.id(), level, &col)
        })
        .collect();
    Ok(CoverageTable { rows })
}

/// Writes serializable rows as CSV with a header.
pub fn write_rows_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(n: usize, sparsity: f64, signal: f64, seed: u64) -> SparseScenario {
        SparseScenario { n, sparsity, signal, sigma: 1.0, seed }
    }

    #[test]
    fn simulation_counts_and_determinism() {
        assert_eq!(scenario(200, 0.05, 8.0, 0).signal_count(), 10);
        assert_eq!(scenario(10, 0.01, 8.0, 0).signal_count(), 1);
        let (t, _) = simulate_sparse_means(&scenario(50, 1.0, 3.0, 1)).unwrap();
        assert!(t.iter().all(|&v| v == 3.0));
        let (t, _) = simulate_sparse_means(&scenario(50, 0.3, 0.0, 1)).unwrap();
        assert!(t.iter().all(|&v| v == 0.0));
        let a = simulate_sparse_means(&scenario(200, 0.05, 8.0, 7)).unwrap();
        let b = simulate_sparse_means(&scenario(200, 0.05, 8.0, 7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.iter().filter(|&&v| v != 0.0).count(), 10);
        assert!(simulate_sparse_means(&scenario(10, 0.0, 1.0, 0)).is_err());
    }

    #[test]
    fn anchors_identity_and_oracle() {
        let s = scenario(100, 0.1, 0.0, 3);
        let t = risk_bench(&[Method::Identity, Method::Oracle], &s, 40).unwrap();
        let id = t.row("identity").unwrap();
        assert!((id.mean_risk - 1.0).abs() < 3.0 * id.se, "{id:?}");
        assert_eq!(t.row("oracle").unwrap().mean_risk, 0.0);
        let c = coverage_bench(&[Method::Oracle, Method::Wide], &s, 0.9, 5).unwrap();
        assert_eq!(c.row("oracle").unwrap().coverage, 1.0);
        assert_eq!(c.row("oracle").unwrap().mean_width, 0.0);
        assert_eq!(c.row("wide").unwrap().coverage, 1.0);
    }

    struct Failing;
    impl Estimator for Failing {
        fn name(&self) -> String {
            "failing".into()
        }
        fn provides_intervals(&self) -> bool {
            true
        }
        fn fit(&self, _: &NormalMeansData, _: &mut FitContext) -> Result<Estimate> {
            Err(Error::fit("always fails"))
        }
    }

    #[test]
    fn failures_are_counted_not_fatal() {
        let t = risk_bench(&[Failing], &scenario(20, 0.1, 2.0, 0), 3).unwrap();
        assert_eq!((t.rows[0].failures, t.rows[0].replicates), (3, 0));
        assert!(coverage_bench(&[Method::Npmle], &scenario(20, 0.1, 2.0, 0), 0.9, 2).is_err());
    }

    #[test]
    fn tables_are_reproducible() {
        let s = scenario(60, 0.1, 4.0, 9);
        let methods = [Method::Identity, Method::FModel { bins: 30, df: 5 }, Method::Npmle];
        let a = risk_bench(&methods, &s, 4).unwrap();
        let b = risk_bench(&methods, &s, 4).unwrap();
        assert_eq!(a, b);
        let mut out = Vec::new();
        write_rows_csv(&a.rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("method,scenario,mean_risk,se,replicates,failures\n"));
    }
}
