//! Fusion of an experimental estimate with observational studies whose
//! biases are learned from calibration studies (true effect zero by design).
//!
//! Model: y_e ~ N(θ, v_e), y_oj ~ N(θ + b_j, v_oj), y_ck ~ N(b_ck, v_ck),
//! all biases b ~ N(μ, γ²), θ ~ N(0, V₀).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dist::{normal_quantile, RngStream};
use crate::error::{Error, Result};
use crate::horseshoe::{slice_log_tau, HorseshoeConfig, PosteriorDraws, TauSampler};
use crate::stats;

pub const DEFAULT_THETA_PRIOR_VAR: f64 = 1e6;
/// Prior variance of the bias location μ in the horseshoe extension.
pub const MU_PRIOR_VAR: f64 = 1e6;

const SCALE_MIN: f64 = 1e-100;
const SCALE_MAX: f64 = 1e100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub estimate: f64,
    pub variance: f64,
}

impl Study {
    pub fn new(estimate: f64, variance: f64) -> Result<Self> {
        if !estimate.is_finite() {
            return Err(Error::domain(format!("study estimate must be finite, got {estimate}")));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::domain(format!("study variance must be positive, got {variance}")));
        }
        Ok(Self { estimate, variance })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySet {
    experiment: Option<Study>,
    observational: Vec<Study>,
    calibration: Vec<Study>,
}

#[derive(Debug, Deserialize)]
struct StudyRow {
    role: String,
    estimate: f64,
    variance: f64,
}

impl StudySet {
    pub fn new(
        experiment: Option<Study>,
        observational: Vec<Study>,
        calibration: Vec<Study>,
    ) -> Result<Self> {
        for s in experiment.iter().chain(&observational).chain(&calibration) {
            Study::new(s.estimate, s.variance)?;
        }
        if experiment.is_none() && observational.is_empty() {
            return Err(Error::domain(
                "need an experimental estimate or at least one observational study",
            ));
        }
        Ok(Self { experiment, observational, calibration })
    }

    pub fn experiment(&self) -> Option<Study> {
        self.experiment
    }

    pub fn observational(&self) -> &[Study] {
        &self.observational
    }

    pub fn calibration(&self) -> &[Study] {
        &self.calibration
    }

    /// Only the experiment informs θ.
    pub fn experiment_only(&self) -> bool {
        self.observational.is_empty() && self.calibration.is_empty()
    }

    /// Reads `role,estimate,variance` rows, role one of exp, obs, calib.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["role", "estimate", "variance"] {
            return Err(Error::domain(format!(
                "study header must be role,estimate,variance, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let (mut exp, mut obs, mut cal) = (None, Vec::new(), Vec::new());
        for row in reader.deserialize() {
            let row: StudyRow = row?;
            let study = Study::new(row.estimate, row.variance)?;
            match row.role.as_str() {
                "exp" => {
                    if exp.replace(study).is_some() {
                        return Err(Error::domain("at most one exp row is allowed"));
                    }
                }
                "obs" => obs.push(study),
                "calib" => cal.push(study),
                other => return Err(Error::domain(format!("unknown study role '{other}'"))),
            }
        }
        Self::new(exp, obs, cal)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["role", "estimate", "variance"])?;
        let rows = self
            .experiment
            .iter()
            .map(|s| ("exp", s))
            .chain(self.observational.iter().map(|s| ("obs", s)))
            .chain(self.calibration.iter().map(|s| ("calib", s)));
        for (role, s) in rows {
            w.write_record([role.to_string(), s.estimate.to_string(), s.variance.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Normal–inverse-gamma prior: γ² ~ IG(a0, b0), μ | γ² ~ N(μ0, γ²/k0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasHyperPrior {
    pub mu0: f64,
    pub k0: f64,
    pub a0: f64,
    pub b0: f64,
}

impl Default for BiasHyperPrior {
    fn default() -> Self {
        Self { mu0: 0.0, k0: 0.01, a0: 1.0, b0: 0.1 }
    }
}

impl BiasHyperPrior {
    pub fn new(mu0: f64, k0: f64, a0: f64, b0: f64) -> Result<Self> {
        if !mu0.is_finite() {
            return Err(Error::domain("mu0 must be finite"));
        }
        for (name, v) in [("k0", k0), ("a0", a0), ("b0", b0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { mu0, k0, a0, b0 })
    }
}

/// Which biases inform the bias distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiasPool {
    /// Calibration and observational biases are exchangeable.
    #[default]
    Shared,
    /// Calibration studies are ignored; only observational biases are pooled.
    ObservationalOnly,
}

/// Sampler output together with the experiment-only flag.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationDraws {
    pub draws: PosteriorDraws,
    pub experiment_only: bool,
}

fn check_theta_prior(v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::domain(format!("theta prior variance must be positive, got {v}")));
    }
    Ok(())
}

fn calibration_used(studies: &StudySet, pool: BiasPool) -> &[Study] {
    match pool {
        BiasPool::Shared => &studies.calibration,
        BiasPool::ObservationalOnly => &[],
    }
}

pub fn gibbs_calibration(
    studies: &StudySet,
    hyper: &BiasHyperPrior,
    theta_prior_var: f64,
    config: &HorseshoeConfig,
) -> Result<CalibrationDraws> {
    gibbs_calibration_with(studies, hyper, theta_prior_var, config, BiasPool::Shared)
}

/// Blocked Gibbs sampler for the conjugate model. Each sweep draws θ with the
/// biases integrated out, then every bias given θ, then (μ, γ²) from its
/// normal–inverse-gamma full conditional.
///
/// Draw columns: `theta`, `mu`, `gamma2`, `b[1]..b[J]`. `tau_fixed` and
/// `tau_sampler` in the config are ignored.
pub fn gibbs_calibration_with(
    studies: &StudySet,
    hyper: &BiasHyperPrior,
    theta_prior_var: f64,
    config: &HorseshoeConfig,
    pool: BiasPool,
) -> Result<CalibrationDraws> {
    config.validate()?;
    check_theta_prior(theta_prior_var)?;
    BiasHyperPrior::new(hyper.mu0, hyper.k0, hyper.a0, hyper.b0)?;
    let mut rng = RngStream::new(config.seed, 0);
    let obs = &studies.observational;
    let cal = calibration_used(studies, pool);
    let (j, k) = (obs.len(), cal.len());

    let mut mu = hyper.mu0;
    let mut gamma2 = hyper.b0 / (hyper.a0 + 1.0);
    let mut b = vec![0.0; j];
    let mut bc = vec![0.0; k];
    let mut theta;

    let width = 3 + j;
    let keep = config.retained();
    let mut values = Vec::with_capacity(keep * width);
    for it in 0..config.n_iter {
        let (m, v) = theta_conditional(studies, mu, gamma2, theta_prior_var);
        theta = rng.normal(m, v.sqrt());

        for (bi, s) in b.iter_mut().zip(obs) {
            *bi = draw_bias(s.estimate - theta, s.variance, mu, gamma2, &mut rng);
        }
        for (bi, s) in bc.iter_mut().zip(cal) {
            *bi = draw_bias(s.estimate, s.variance, mu, gamma2, &mut rng);
        }

        let pooled = j + k;
        if pooled == 0 {
            gamma2 = rng.inv_gamma(hyper.a0, hyper.b0);
            mu = rng.normal(hyper.mu0, (gamma2 / hyper.k0).sqrt());
        } else {
            let nf = pooled as f64;
            let bar = (b.iter().sum::<f64>() + bc.iter().sum::<f64>()) / nf;
            let ss: f64 = b.iter().chain(&bc).map(|x| (x - bar) * (x - bar)).sum();
            let kn = hyper.k0 + nf;
            let mun = (hyper.k0 * hyper.mu0 + nf * bar) / kn;
            let an = hyper.a0 + 0.5 * nf;
            let bn = hyper.b0 + 0.5 * ss + 0.5 * hyper.k0 * nf * (bar - hyper.mu0).powi(2) / kn;
            gamma2 = rng.inv_gamma(an, bn).clamp(SCALE_MIN, SCALE_MAX);
            mu = rng.normal(mun, (gamma2 / kn).sqrt());
        }

        if it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0 {
            values.push(theta);
            values.push(mu);
            values.push(gamma2);
            values.extend_from_slice(&b);
        }
    }

    let mut names = vec!["theta".to_string(), "mu".to_string(), "gamma2".to_string()];
    names.extend((1..=j).map(|i| format!("b[{i}]")));
    let draws =
        PosteriorDraws::from_flat(names, keep, values, config.burn_in, config.thin, config.seed)?;
    Ok(CalibrationDraws { draws, experiment_only: studies.experiment_only() })
}

/// Draws b ~ N(μ, γ²) given a residual r ~ N(b, v).
fn draw_bias(r: f64, v: f64, mu: f64, gamma2: f64, rng: &mut RngStream) -> f64 {
    let prec = 1.0 / v + 1.0 / gamma2;
    let mean = (r / v + mu / gamma2) / prec;
    rng.normal(mean, (1.0 / prec).sqrt())
}

/// Gaussian posterior (mean, variance) of θ given (μ, γ²), biases integrated out.
pub fn theta_conditional(
    studies: &StudySet,
    mu: f64,
    gamma2: f64,
    theta_prior_var: f64,
) -> (f64, f64) {
    let mut prec = 1.0 / theta_prior_var;
    let mut lin = 0.0;
    if let Some(e) = studies.experiment {
        prec += 1.0 / e.variance;
        lin += e.estimate / e.variance;
    }
    for s in &studies.observational {
        let w = 1.0 / (s.variance + gamma2);
        prec += w;
        lin += w * (s.estimate - mu);
    }
    (lin / prec, 1.0 / prec)
}

/// Plug-in posterior of θ with (μ̂, γ̂²) fitted by maximum marginal likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PluginFit {
    pub mean: f64,
    pub sd: f64,
    pub mu_hat: f64,
    pub gamma2_hat: f64,
    /// γ̂² sits on the zero boundary.
    pub boundary: bool,
}

/// Profile log-likelihood of the calibration marginal at γ², with the
/// maximizing μ.
fn profile_loglik(cal: &[Study], gamma2: f64) -> (f64, f64) {
    let (mut sw, mut swy) = (0.0, 0.0);
    for s in cal {
        let w = 1.0 / (gamma2 + s.variance);
        sw += w;
        swy += w * s.estimate;
    }
    let mu = swy / sw;
    let ll = cal
        .iter()
        .map(|s| {
            let v = gamma2 + s.variance;
            -0.5 * (v.ln() + (s.estimate - mu).powi(2) / v)
        })
        .sum();
    (ll, mu)
}

/// d/dγ² of the profile log-likelihood (μ held at its profile value).
fn profile_score(cal: &[Study], gamma2: f64) -> f64 {
    let (_, mu) = profile_loglik(cal, gamma2);
    cal.iter()
        .map(|s| {
            let w = 1.0 / (gamma2 + s.variance);
            0.5 * w * (w * (s.estimate - mu).powi(2) - 1.0)
        })
        .sum()
}

/// Maximizes the profile likelihood over γ² ≥ 0: a log-spaced scan, bisection
/// on the score in the best bracket, then comparison with γ² = 0.
fn mml_calibration(cal: &[Study]) -> (f64, f64, bool) {
    let ys: Vec<f64> = cal.iter().map(|s| s.estimate).collect();
    let vmax = cal.iter().map(|s| s.variance).fold(0.0, f64::max);
    let scale = (stats::variance(&ys) + vmax).max(f64::MIN_POSITIVE);
    let (lo, hi) = (scale.ln() - 30.0, scale.ln() + 8.0);
    let points = 153;
    let etas: Vec<f64> =
        (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let f = |eta: f64| profile_loglik(cal, eta.exp()).0;
    let vals: Vec<f64> = etas.iter().map(|&e| f(e)).collect();
    let best = (0..points).fold(0, |b, i| if vals[i] > vals[b] { i } else { b });

    // the profile score changes sign inside the bracket around the best scan point
    let (mut a, mut c) = (etas[best.saturating_sub(1)], etas[(best + 1).min(points - 1)]);
    for _ in 0..200 {
        let mid = 0.5 * (a + c);
        if mid <= a || mid >= c {
            break;
        }
        if profile_score(cal, mid.exp()) > 0.0 {
            a = mid;
        } else {
            c = mid;
        }
    }
    let eta = 0.5 * (a + c);
    let (ll, mu) = profile_loglik(cal, eta.exp());
    let (ll0, mu0) = profile_loglik(cal, 0.0);
    if ll0 >= ll || best == 0 {
        (mu0, 0.0, true)
    } else {
        (mu, eta.exp(), false)
    }
}

pub fn eb_plugin_calibration(studies: &StudySet, theta_prior_var: f64) -> Result<PluginFit> {
    check_theta_prior(theta_prior_var)?;
    if studies.calibration.len() < 2 {
        return Err(Error::domain(format!(
            "plug-in needs at least 2 calibration studies, got {}",
            studies.calibration.len()
        )));
    }
    let (mu_hat, gamma2_hat, boundary) = mml_calibration(&studies.calibration);
    let (mean, var) = theta_conditional(studies, mu_hat, gamma2_hat, theta_prior_var);
    if !(mean.is_finite() && var > 0.0) {
        return Err(Error::numeric("plug-in posterior of theta is not finite"));
    }
    Ok(PluginFit { mean, sd: var.sqrt(), mu_hat, gamma2_hat, boundary })
}

pub fn gibbs_calibration_horseshoe(
    studies: &StudySet,
    config: &HorseshoeConfig,
) -> Result<CalibrationDraws> {
    gibbs_calibration_horseshoe_with(studies, DEFAULT_THETA_PRIOR_VAR, config, BiasPool::Shared)
}

/// Gibbs sampler for b = μ + δ, δ_i ~ N(0, λ_i²τ²), λ_i, τ ~ C⁺(0, 1) and
/// μ ~ N(0, 10⁶). (θ, μ) are drawn jointly; δ, λ², τ² follow the same
/// conditionals as the normal-means horseshoe sampler.
///
/// Draw columns: `theta`, `mu`, `delta[j]`, `lambda[j]` for observational
/// studies, then `tau`. Calibration δ and λ are sampled but not stored.
pub fn gibbs_calibration_horseshoe_with(
    studies: &StudySet,
    theta_prior_var: f64,
    config: &HorseshoeConfig,
    pool: BiasPool,
) -> Result<CalibrationDraws> {
    config.validate()?;
    check_theta_prior(theta_prior_var)?;
    let mut rng = RngStream::new(config.seed, 0);
    let obs = &studies.observational;
    let cal = calibration_used(studies, pool);
    let j = obs.len();
    let m = j + cal.len();
    // observational entries first, then calibration
    let y: Vec<f64> = obs.iter().chain(cal).map(|s| s.estimate).collect();
    let v: Vec<f64> = obs.iter().chain(cal).map(|s| s.variance).collect();

    let mut delta = vec![0.0; m];
    let mut lambda2 = vec![1.0; m];
    let mut nu = vec![1.0; m];
    let mut tau2 = config.tau_fixed.map_or(1.0, |t| t * t);
    let mut xi = 1.0;

    let width = 3 + 2 * j;
    let keep = config.retained();
    let mut values = Vec::with_capacity(keep * width);
    for it in 0..config.n_iter {
        // (θ, μ) | δ: a bivariate Gaussian
        let mut p11 = 1.0 / theta_prior_var;
        let mut p22 = 1.0 / MU_PRIOR_VAR;
        let mut p12 = 0.0;
        let (mut h1, mut h2) = (0.0, 0.0);
        if let Some(e) = studies.experiment {
            p11 += 1.0 / e.variance;
            h1 += e.estimate / e.variance;
        }
        for i in 0..m {
            let w = 1.0 / v[i];
            let r = w * (y[i] - delta[i]);
            p22 += w;
            h2 += r;
            if i < j {
                p11 += w;
                p12 += w;
                h1 += r;
            }
        }
        let l11 = p11.sqrt();
        let l21 = p12 / l11;
        let l22 = (p22 - l21 * l21).max(f64::MIN_POSITIVE).sqrt();
        let det = p11 * p22 - p12 * p12;
        let m1 = (p22 * h1 - p12 * h2) / det;
        let m2 = (p11 * h2 - p12 * h1) / det;
        // solve Lᵀ x = z for a N(0, P⁻¹) draw
        let (z1, z2) = (rng.standard_normal(), rng.standard_normal());
        let x2 = z2 / l22;
        let x1 = (z1 - l21 * x2) / l11;
        let theta = m1 + x1;
        let mu = m2 + x2;

        for i in 0..m {
            let r = y[i] - mu - if i < j { theta } else { 0.0 };
            let prior_var = lambda2[i] * tau2;
            let var = 1.0 / (1.0 / v[i] + 1.0 / prior_var);
            delta[i] = rng.normal(var * r / v[i], var.sqrt());
            let b = 1.0 / nu[i] + delta[i] * delta[i] / (2.0 * tau2);
            lambda2[i] = (b / rng.exponential()).clamp(SCALE_MIN, SCALE_MAX);
            nu[i] = (1.0 + 1.0 / lambda2[i]) / rng.exponential();
        }
        if config.tau_fixed.is_none() {
            let ss: f64 = delta.iter().zip(&lambda2).map(|(d, l)| d * d / l).sum();
            match config.tau_sampler {
                TauSampler::Auxiliary => {
                    tau2 = rng
                        .inv_gamma(0.5 * (m as f64 + 1.0), 1.0 / xi + 0.5 * ss)
                        .clamp(SCALE_MIN, SCALE_MAX);
                    xi = (1.0 + 1.0 / tau2) / rng.exponential();
                }
                TauSampler::Slice => {
                    let eta = slice_log_tau(0.5 * tau2.ln(), m, ss, &mut rng);
                    tau2 = (2.0 * eta).exp().clamp(SCALE_MIN, SCALE_MAX);
                }
            }
        }

        if it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0 {
            values.push(theta);
            values.push(mu);
            values.extend_from_slice(&delta[..j]);
            values.extend(lambda2[..j].iter().map(|l| l.sqrt()));
            values.push(tau2.sqrt());
        }
    }

    let mut names = vec!["theta".to_string(), "mu".to_string()];
    names.extend((1..=j).map(|i| format!("delta[{i}]")));
    names.extend((1..=j).map(|i| format!("lambda[{i}]")));
    names.push("tau".to_string());
    let draws =
        PosteriorDraws::from_flat(names, keep, values, config.burn_in, config.thin, config.seed)?;
    Ok(CalibrationDraws { draws, experiment_only: studies.experiment_only() })
}

/// One-line summary of the θ posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaSummary {
    pub method: String,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub experiment_only: bool,
}

impl ThetaSummary {
    /// Equal-tailed interval from the `theta` column of the draws.
    pub fn from_draws(method: &str, fit: &CalibrationDraws, level: f64) -> Result<Self> {
        let c = fit
            .draws
            .index_of("theta")
            .ok_or_else(|| Error::domain("draws have no theta column"))?;
        let col = fit.draws.column(c);
        let (lower, upper) = stats::equal_tailed(&col, level)?;
        Ok(Self {
            method: method.to_string(),
            mean: stats::mean(&col),
            sd: stats::variance(&col).sqrt(),
            lower,
            upper,
            level,
            experiment_only: fit.experiment_only,
        })
    }

    /// Gaussian interval mean ± z·sd.
    pub fn from_plugin(fit: &PluginFit, level: f64, experiment_only: bool) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::domain(format!("interval level must lie in (0, 1), got {level}")));
        }
        let z = normal_quantile(0.5 + 0.5 * level);
        Ok(Self {
            method: "eb-plugin".to_string(),
            mean: fit.mean,
            sd: fit.sd,
            lower: fit.mean - z * fit.sd,
            upper: fit.mean + z * fit.sd,
            level,
            experiment_only,
        })
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
