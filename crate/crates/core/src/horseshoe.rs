//! Horseshoe shrinkage for the normal means problem.
//!
//! With κ = 1/(1 + λ²τ²/σ²) the fixed-τ posterior of κ given x is
//!
//! ```text
//! p(κ | x) ∝ (1 − κ)^(−1/2) · exp(−κ x²/(2σ²)) / (1 − κ + (τ/σ)² κ),   κ ∈ (0, 1)
//! ```
//!
//! and E[θ | x] = (1 − E[κ | x])·x. Both moments are computed by adaptive
//! quadrature after substituting 1 − κ = u², which removes the endpoint
//! singularity. The full model is sampled by Gibbs with inverse-gamma
//! auxiliary variables for the half-Cauchy scales.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::NormalMeansData;
use crate::dist::RngStream;
use crate::error::{Error, Result};
use crate::quad::{integrate, QuadSettings};
use crate::rule::{check_grid, RuleMethod, ShrinkageRule};
use crate::stats;

fn quad_settings() -> QuadSettings {
    QuadSettings {
        abs_tol: 1e-300,
        rel_tol: 1e-11,
        max_intervals: 2000,
    }
}

fn check_scales(sigma: f64, tau: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::domain(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// Integrals of 2·w(u) times u² and times 1 − u², where
/// w(u) = exp(−(1 − u²)s) / (u² + a²(1 − u²)). Their sum is the
/// normalizer of p(κ | x); the ratios give E[1 − κ | x] and E[κ | x].
fn moment_integrals(x: f64, sigma: f64, tau: f64) -> Result<(f64, f64)> {
    let s = 0.5 * (x / sigma) * (x / sigma);
    let a2 = (tau / sigma) * (tau / sigma);
    let a = a2.sqrt();
    let w = move |u: f64| {
        let v = 1.0 - u * u;
        2.0 * (-v * s).exp() / (u * u + a2 * v)
    };
    let mut breaks = Vec::new();
    if s > 1.0 {
        // the exponential factor lives within ~1/s of u = 1
        for c in [0.5, 2.0, 8.0, 32.0, 128.0] {
            if c < s {
                breaks.push((1.0 - c / s).sqrt());
            }
        }
    }
    if a < 1.0 {
        // the denominator peaks on a scale a near u = 0
        for c in [1.0, 3.0, 10.0, 30.0] {
            if c * a < 1.0 {
                breaks.push(c * a);
            }
        }
    }
    if a > 1.0 {
        // and for large a it narrows to within ~1/a² of u = 1
        for c in [1.0, 10.0, 100.0] {
            if c < a2 {
                breaks.push((1.0 - c / a2).sqrt());
            }
        }
    }
    let describe = |e: Error| match e {
        Error::Numeric(m) => {
            Error::numeric(format!("E[kappa | x] at x = {x}, sigma = {sigma}, tau = {tau}: {m}"))
        }
        other => other,
    };
    let spread = integrate(|u| u * u * w(u), 0.0, 1.0, &breaks, quad_settings()).map_err(describe)?;
    let shrunk =
        integrate(|u| (1.0 - u * u) * w(u), 0.0, 1.0, &breaks, quad_settings()).map_err(describe)?;
    Ok((spread.value, shrunk.value))
}

/// E[κ | x, σ, τ] for the horseshoe prior with fixed global scale.
pub fn kappa_posterior_mean(x: f64, sigma: f64, tau: f64) -> Result<f64> {
    check_scales(sigma, tau)?;
    if !x.is_finite() {
        return Err(Error::domain(format!("x must be finite, got {x}")));
    }
    let (spread, shrunk) = moment_integrals(x.abs(), sigma, tau)?;
    Ok(shrunk / (spread + shrunk))
}

/// (1 − E[κ | x])·x, computed for |x| and reflected so the rule is exactly odd.
pub fn horseshoe_posterior_mean(x: f64, sigma: f64, tau: f64) -> Result<f64> {
    check_scales(sigma, tau)?;
    if !x.is_finite() {
        return Err(Error::domain(format!("x must be finite, got {x}")));
    }
    let ax = x.abs();
    if ax == 0.0 {
        return Ok(0.0);
    }
    let (spread, shrunk) = moment_integrals(ax, sigma, tau)?;
    let value = spread / (spread + shrunk) * ax;
    Ok(if x < 0.0 { -value } else { value })
}

pub fn horseshoe_tweedie_rule(sigma: f64, tau: f64, grid: &[f64]) -> Result<ShrinkageRule> {
    check_scales(sigma, tau)?;
    check_grid(grid)?;
    let values = grid
        .iter()
        .map(|&x| horseshoe_posterior_mean(x, sigma, tau))
        .collect::<Result<Vec<_>>>()?;
    ShrinkageRule::new(grid.to_vec(), values, RuleMethod::Horseshoe)
}

/// log m(x | τ): the marginal density of x after integrating θ and λ out.
///
/// m(x | τ) = (a/π)(2πσ²)^(−1/2) ∫₀¹ (1 − κ)^(−1/2) e^(−κs) / (1 − κ + a²κ) dκ
/// with a = τ/σ and s = x²/(2σ²).
pub fn horseshoe_log_marginal(x: f64, sigma: f64, tau: f64) -> Result<f64> {
    check_scales(sigma, tau)?;
    let (spread, shrunk) = moment_integrals(x.abs(), sigma, tau)?;
    let a = tau / sigma;
    Ok(a.ln() - PI.ln() - 0.5 * (2.0 * PI * sigma * sigma).ln() + (spread + shrunk).ln())
}

/// Type-II maximum likelihood for τ over `[lo, hi]`: a 41-point grid in
/// log τ followed by golden-section refinement around the best point.
pub fn tau_marginal_ml(data: &NormalMeansData, lo: f64, hi: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("tau estimation needs data"));
    }
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::domain(format!("tau search range [{lo}, {hi}] is invalid")));
    }
    let sigma = data.sigma();
    let objective = |eta: f64| -> Result<f64> {
        let tau = eta.exp();
        data.x()
            .iter()
            .map(|&x| horseshoe_log_marginal(x, sigma, tau))
            .sum()
    };
    let (a, b) = (lo.ln(), hi.ln());
    let points = 41;
    let etas: Vec<f64> = (0..points)
        .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
        .collect();
    let values = etas.iter().map(|&e| objective(e)).collect::<Result<Vec<_>>>()?;
    let best = values
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .expect("grid is nonempty");
    let mut left = etas[best.saturating_sub(1)];
    let mut right = etas[(best + 1).min(points - 1)];
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = right - ratio * (right - left);
    let mut d = left + ratio * (right - left);
    let (mut fc, mut fd) = (objective(c)?, objective(d)?);
    while right - left > 1e-6 {
        if fc > fd {
            right = d;
            d = c;
            fd = fc;
            c = right - ratio * (right - left);
            fc = objective(c)?;
        } else {
            left = c;
            c = d;
            fc = fd;
            d = left + ratio * (right - left);
            fd = objective(d)?;
        }
    }
    let eta = 0.5 * (left + right);
    // the golden search stays inside the bracket, but the grid end may still win
    let end_best = values[best];
    Ok(if objective(eta)? >= end_best { eta } else { etas[best] }.exp())
}

/// How the global scale is updated when it is not held fixed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TauSampler {
    /// τ² | ξ ~ IG, ξ | τ² ~ IG.
    #[default]
    Auxiliary,
    /// Univariate slice sampling on log τ.
    Slice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub tau_fixed: Option<f64>,
    pub tau_sampler: TauSampler,
}

impl Default for HorseshoeConfig {
    fn default() -> Self {
        Self {
            n_iter: 20_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
            tau_fixed: None,
            tau_sampler: TauSampler::Auxiliary,
        }
    }
}

impl HorseshoeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.thin == 0 {
            return Err(Error::domain("n_iter and thin must be positive"));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::domain(format!(
                "burn_in ({}) must be below n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if let Some(t) = self.tau_fixed {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::domain(format!("fixed tau must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Retained MCMC draws, one row per kept iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    names: Vec<String>,
    rows: usize,
    values: Vec<f64>,
    burn_in: usize,
    thin: usize,
    seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    pub param: String,
    pub lower: f64,
    pub upper: f64,
}

impl PosteriorDraws {
    pub fn new(
        names: Vec<String>,
        rows: Vec<Vec<f64>>,
        burn_in: usize,
        thin: usize,
        seed: u64,
    ) -> Result<Self> {
        let width = names.len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::domain("every draw must have one value per parameter"));
        }
        let count = rows.len();
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_flat(names, count, values, burn_in, thin, seed)
    }

    pub(crate) fn from_flat(
        names: Vec<String>,
        rows: usize,
        values: Vec<f64>,
        burn_in: usize,
        thin: usize,
        seed: u64,
    ) -> Result<Self> {
        debug_assert_eq!(values.len(), rows * names.len());
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos / names.len(), pos % names.len());
            return Err(Error::numeric(format!(
                "draw {r} of {} is not finite",
                names[c]
            )));
        }
        Ok(Self {
            names,
            rows,
            values,
            burn_in,
            thin,
            seed,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_draws(&self) -> usize {
        self.rows
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn thin(&self) -> usize {
        self.thin
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.names.len();
        &self.values[r * w..(r + 1) * w]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        let w = self.names.len();
        self.values.iter().skip(c).step_by(w).copied().collect()
    }

    pub fn mean(&self, c: usize) -> f64 {
        stats::mean(&self.column(c))
    }

    pub fn mcse(&self, c: usize) -> f64 {
        stats::batch_means_se(&self.column(c))
    }

    pub fn ess(&self, c: usize) -> f64 {
        stats::effective_sample_size(&self.column(c))
    }

    /// Column indices whose names are `prefix` or `prefix[...]`.
    pub fn matching(&self, prefix: &str) -> Vec<usize> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| {
                n.as_str() == prefix
                    || (n.starts_with(prefix) && n[prefix.len()..].starts_with('['))
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Posterior means of the parameters selected by `prefix`.
    pub fn means(&self, prefix: &str) -> Vec<f64> {
        self.matching(prefix).into_iter().map(|c| self.mean(c)).collect()
    }

    /// Long-format CSV with header `draw,param,value`.
    pub fn write_long_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["draw", "param", "value"])?;
        for r in 0..self.rows {
            for (name, v) in self.names.iter().zip(self.row(r)) {
                w.write_record([r.to_string(), name.clone(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub const MIN_DRAWS_FOR_INTERVALS: usize = 100;

/// Equal-tailed intervals from the empirical chain quantiles (type 7).
pub fn credible_intervals(
    draws: &PosteriorDraws,
    level: f64,
    param_prefix: &str,
) -> Result<Vec<CredibleInterval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("interval level must lie in (0, 1), got {level}")));
    }
    if draws.n_draws() < MIN_DRAWS_FOR_INTERVALS {
        return Err(Error::domain(format!(
            "need at least {MIN_DRAWS_FOR_INTERVALS} retained draws, have {}",
            draws.n_draws()
        )));
    }
    draws
        .matching(param_prefix)
        .into_iter()
        .map(|c| {
            let (lower, upper) = stats::equal_tailed(&draws.column(c), level)?;
            Ok(CredibleInterval {
                param: draws.names[c].clone(),
                lower,
                upper,
            })
        })
        .collect()
}

// Scale clamp keeping λ² and τ² away from under- and overflow.
const SCALE_MIN: f64 = 1e-100;
const SCALE_MAX: f64 = 1e100;

pub fn gibbs_horseshoe(data: &NormalMeansData, config: &HorseshoeConfig) -> Result<PosteriorDraws> {
    let mut rng = RngStream::new(config.seed, 0);
    gibbs_horseshoe_with(data, config, &mut rng)
}

/// Gibbs sampler for x_i ~ N(θ_i, σ²), θ_i ~ N(0, λ_i²τ²), λ_i, τ ~ C⁺(0, 1).
///
/// Each half-Cauchy scale is written as λ² | ν ~ IG(1/2, 1/ν), ν ~ IG(1/2, 1),
/// which makes every full conditional inverse-gamma:
/// λ_i² ~ IG(1, 1/ν_i + θ_i²/(2τ²)), ν_i ~ IG(1, 1 + 1/λ_i²),
/// τ² ~ IG((n+1)/2, 1/ξ + Σθ_i²/(2λ_i²)), ξ ~ IG(1, 1 + 1/τ²).
pub fn gibbs_horseshoe_with(
    data: &NormalMeansData,
    config: &HorseshoeConfig,
    rng: &mut RngStream,
) -> Result<PosteriorDraws> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::domain("horseshoe sampler needs at least one observation"));
    }
    let n = data.len();
    let x = data.x();
    let s2 = data.sigma() * data.sigma();

    let mut theta = x.to_vec();
    let mut lambda2 = vec![1.0; n];
    let mut nu = vec![1.0; n];
    let mut tau2 = config.tau_fixed.map_or(1.0, |t| t * t);
    let mut xi = 1.0;

    let width = 2 * n + 1;
    let keep = config.retained();
    let mut values = Vec::with_capacity(keep * width);

    for it in 0..config.n_iter {
        for i in 0..n {
            let prior_var = lambda2[i] * tau2;
            let v = 1.0 / (1.0 / s2 + 1.0 / prior_var);
            theta[i] = rng.normal(v * x[i] / s2, v.sqrt());
            // IG(1, b) draws are b / Exp(1)
            let b = 1.0 / nu[i] + theta[i] * theta[i] / (2.0 * tau2);
            lambda2[i] = (b / rng.exponential()).clamp(SCALE_MIN, SCALE_MAX);
            nu[i] = (1.0 + 1.0 / lambda2[i]) / rng.exponential();
        }
        if config.tau_fixed.is_none() {
            let ss: f64 = theta.iter().zip(&lambda2).map(|(t, l)| t * t / l).sum();
            match config.tau_sampler {
                TauSampler::Auxiliary => {
                    tau2 = rng
                        .inv_gamma(0.5 * (n as f64 + 1.0), 1.0 / xi + 0.5 * ss)
                        .clamp(SCALE_MIN, SCALE_MAX);
                    xi = (1.0 + 1.0 / tau2) / rng.exponential();
                }
                TauSampler::Slice => {
                    let eta = slice_log_tau(0.5 * tau2.ln(), n, ss, rng);
                    tau2 = (2.0 * eta).exp().clamp(SCALE_MIN, SCALE_MAX);
                }
            }
        }
        if it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0 {
            values.extend_from_slice(&theta);
            values.extend(lambda2.iter().map(|l| l.sqrt()));
            values.push(tau2.sqrt());
        }
    }

    let mut names = Vec::with_capacity(width);
    names.extend((1..=n).map(|i| format!("theta[{i}]")));
    names.extend((1..=n).map(|i| format!("lambda[{i}]")));
    names.push("tau".to_string());
    PosteriorDraws::from_flat(names, keep, values, config.burn_in, config.thin, config.seed)
}

/// One slice-sampling update of η = log τ targeting
/// −(n − 1)η − ss·e^(−2η)/2 − log(1 + e^(2η)).
pub(crate) fn slice_log_tau(eta0: f64, n: usize, ss: f64, rng: &mut RngStream) -> f64 {
    let log_target = |eta: f64| {
        let t = 2.0 * eta;
        let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
        -(n as f64 - 1.0) * eta - 0.5 * ss * (-t).exp() - softplus
    };
    let level = log_target(eta0) - rng.exponential();
    let width = 1.0;
    let mut left = eta0 - width * rng.uniform();
    let mut right = left + width;
    for _ in 0..100 {
        if log_target(left) <= level {
            break;
        }
        left -= width;
    }
    for _ in 0..100 {
        if log_target(right) <= level {
            break;
        }
        right += width;
    }
    loop {
        let eta = left + rng.uniform() * (right - left);
        if log_target(eta) > level {
            return eta;
        }
        if eta < eta0 {
            left = eta;
        } else {
            right = eta;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::{linspace, monotonicity_diagnostic};

    /// Midpoint rule with 10^6 panels after κ = sin²φ, which turns
    /// (1 − κ)^(−1/2) dκ into 2 sin φ dφ and leaves a smooth integrand.
    fn brute_force_kappa(x: f64, sigma: f64, tau: f64) -> f64 {
        let panels = 1_000_000;
        let h = 0.5 * PI / panels as f64;
        let s = 0.5 * x * x / (sigma * sigma);
        let a2 = (tau / sigma).powi(2);
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..panels {
            let phi = (j as f64 + 0.5) * h;
            let (sn, cs) = phi.sin_cos();
            let k = sn * sn;
            let g = 2.0 * sn * (-k * s).exp() / (cs * cs + a2 * k);
            num += k * g;
            den += g;
        }
        num / den
    }

    #[test]
    fn brute_force_reference_values() {
        // reference digits frozen from the brute-force oracle below; at x = 0 and
        // a = 1 the posterior is Beta(1, 1/2), whose mean is 2/3
        let at0 = kappa_posterior_mean(0.0, 1.0, 1.0).unwrap();
        let at20 = kappa_posterior_mean(20.0, 1.0, 1.0).unwrap();
        assert!(at0 > 0.5 && at0 < 1.0);
        assert!(at20 <= 0.01);
        assert!((at0 - KAPPA_AT_0).abs() < 1e-9, "{at0:.12}");
        assert!((at20 - KAPPA_AT_20).abs() < 1e-9, "{at20:.12e}");
    }

    const KAPPA_AT_0: f64 = 2.0 / 3.0;
    const KAPPA_AT_20: f64 = 5.012_659_211_427_805e-3;

    #[test]
    #[ignore = "slow oracle used to freeze reference digits"]
    fn print_brute_force_oracle() {
        for x in [0.0, 20.0] {
            println!("x = {x}: {:.15e}", brute_force_kappa(x, 1.0, 1.0));
        }
    }

    #[test]
    fn quadrature_matches_brute_force_on_moderate_inputs() {
        for &(x, tau) in &[(0.5, 1.0), (2.0, 0.5), (3.0, 2.0), (6.0, 0.05), (1.0, 1e3)] {
            let q = kappa_posterior_mean(x, 1.0, tau).unwrap();
            let b = brute_force_kappa(x, 1.0, tau);
            assert!((q - b).abs() < 1e-8, "x {x} tau {tau}: {q} vs {b}");
        }
    }

    #[test]
    fn kappa_is_even_bounded_and_nonincreasing() {
        let grid = linspace(0.0, 15.0, 200);
        let mut prev = f64::INFINITY;
        for &x in &grid {
            let k = kappa_posterior_mean(x, 1.0, 0.7).unwrap();
            assert!(k > 0.0 && k < 1.0);
            assert_eq!(k, kappa_posterior_mean(-x, 1.0, 0.7).unwrap());
            assert!(k <= prev + 1e-8);
            prev = k;
        }
    }

    #[test]
    fn small_tau_and_large_x_converge() {
        assert!(kappa_posterior_mean(0.1, 1.0, 1e-4).unwrap() > 0.999);
        assert!(kappa_posterior_mean(200.0, 1.0, 1e-3).unwrap() < 1e-3);
        // a huge τ leaves only the log-scale mass of κ near zero, not full release
        let wide = kappa_posterior_mean(1.0, 1.0, 1e3).unwrap();
        assert!(wide > 0.05 && wide < 0.2);
    }

    #[test]
    fn rule_is_odd_monotone_and_bounded_shrinkage() {
        let grid = linspace(-20.0, 20.0, 161);
        let rule = horseshoe_tweedie_rule(1.0, 1.0, &grid).unwrap();
        assert_eq!(rule.method(), RuleMethod::Horseshoe);
        assert!(monotonicity_diagnostic(&rule).is_monotone);
        let v = rule.values();
        for i in 0..v.len() {
            assert_eq!(v[i], -v[v.len() - 1 - i]);
        }
        assert_eq!(v[80], 0.0);
        assert!((v[160] - 20.0).abs() < 0.2);
    }

    #[test]
    fn marginal_integrates_to_one() {
        // x = tan(t) maps (−π/2, π/2) onto the line
        let f = |t: f64| {
            let x = t.tan();
            let c = t.cos();
            horseshoe_log_marginal(x, 1.0, 0.8).unwrap().exp() / (c * c)
        };
        let half = 0.5 * PI;
        let total = integrate(f, -half + 1e-9, half - 1e-9, &[0.0], QuadSettings::default())
            .unwrap()
            .value;
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn tau_mml_tracks_sparsity() {
        let mut rng = RngStream::new(8, 0);
        let make = |rng: &mut RngStream, signals: usize| {
            let x = (0..200)
                .map(|i| rng.normal(if i < signals { 6.0 } else { 0.0 }, 1.0))
                .collect();
            NormalMeansData::new(x, 1.0).unwrap()
        };
        let sparse = tau_marginal_ml(&make(&mut rng, 4), 1.0 / 200.0, 10.0).unwrap();
        let dense = tau_marginal_ml(&make(&mut rng, 100), 1.0 / 200.0, 10.0).unwrap();
        assert!(sparse < dense, "{sparse} vs {dense}");
        assert!(sparse >= 1.0 / 200.0 && dense <= 10.0);
    }

    #[test]
    fn config_validation() {
        let bad = HorseshoeConfig {
            n_iter: 10,
            burn_in: 10,
            ..HorseshoeConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad_tau = HorseshoeConfig {
            tau_fixed: Some(0.0),
            ..HorseshoeConfig::default()
        };
        assert!(bad_tau.validate().is_err());
    }

    fn short(seed: u64) -> HorseshoeConfig {
        HorseshoeConfig {
            n_iter: 3000,
            burn_in: 500,
            thin: 2,
            seed,
            ..HorseshoeConfig::default()
        }
    }

    #[test]
    fn draws_have_expected_shape_and_are_reproducible() {
        let data = NormalMeansData::new(vec![0.3, -2.0, 5.0], 1.0).unwrap();
        let a = gibbs_horseshoe(&data, &short(4)).unwrap();
        let b = gibbs_horseshoe(&data, &short(4)).unwrap();
        assert_eq!(a.n_draws(), 1250);
        assert_eq!(a.names().len(), 7);
        assert_eq!(a, b);
        assert_ne!(a, gibbs_horseshoe(&data, &short(5)).unwrap());
    }

    #[test]
    fn fixed_tau_column_is_constant() {
        let data = NormalMeansData::new(vec![1.0, 2.0], 1.0).unwrap();
        let cfg = HorseshoeConfig {
            tau_fixed: Some(0.4),
            ..short(1)
        };
        let draws = gibbs_horseshoe(&data, &cfg).unwrap();
        let tau = draws.column(draws.index_of("tau").unwrap());
        assert!(tau.iter().all(|&t| t == tau[0]));
        assert!((tau[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn slice_and_auxiliary_tau_agree() {
        let mut rng = RngStream::new(30, 0);
        let x = (0..50)
            .map(|i| rng.normal(if i < 5 { 5.0 } else { 0.0 }, 1.0))
            .collect();
        let data = NormalMeansData::new(x, 1.0).unwrap();
        let cfg = HorseshoeConfig {
            n_iter: 30_000,
            burn_in: 3_000,
            thin: 1,
            seed: 2,
            ..HorseshoeConfig::default()
        };
        let aux = gibbs_horseshoe(&data, &cfg).unwrap();
        let slice = gibbs_horseshoe(
            &data,
            &HorseshoeConfig {
                tau_sampler: TauSampler::Slice,
                ..cfg
            },
        )
        .unwrap();
        let c = aux.index_of("tau").unwrap();
        let gap = (aux.mean(c) - slice.mean(c)).abs();
        let se = (aux.mcse(c).powi(2) + slice.mcse(c).powi(2)).sqrt();
        assert!(gap < 4.0 * se, "gap {gap} se {se}");
    }

    #[test]
    fn interval_examples() {
        let names = vec!["theta[1]".to_string()];
        let constant = PosteriorDraws::new(names.clone(), vec![vec![1.5]; 200], 0, 1, 0).unwrap();
        let ci = credible_intervals(&constant, 0.9, "theta").unwrap();
        assert_eq!((ci[0].lower, ci[0].upper), (1.5, 1.5));
        assert!(credible_intervals(&constant, 1.5, "theta").is_err());
        let few = PosteriorDraws::new(names.clone(), vec![vec![1.0]; 99], 0, 1, 0).unwrap();
        assert!(credible_intervals(&few, 0.9, "theta").is_err());

        let mut rng = RngStream::new(6, 0);
        let rows = (0..10_000).map(|_| vec![rng.standard_normal()]).collect();
        let normal = PosteriorDraws::new(names, rows, 0, 1, 6).unwrap();
        let wide = &credible_intervals(&normal, 0.95, "theta").unwrap()[0];
        assert!((wide.lower + 1.96).abs() < 0.05 && (wide.upper - 1.96).abs() < 0.05);
        let narrow = &credible_intervals(&normal, 0.5, "theta").unwrap()[0];
        let widest = &credible_intervals(&normal, 0.99, "theta").unwrap()[0];
        assert!(widest.lower <= narrow.lower && narrow.upper <= widest.upper);
    }

    #[test]
    fn prefix_matching_is_exact() {
        let names = ["theta[1]", "theta2", "tau", "lambda[1]"]
            .map(String::from)
            .to_vec();
        let d = PosteriorDraws::new(names, vec![vec![0.0; 4]], 0, 1, 0).unwrap();
        assert_eq!(d.matching("theta"), vec![0]);
        assert_eq!(d.matching("tau"), vec![2]);
    }

    #[test]
    fn non_finite_draws_rejected() {
        let r = PosteriorDraws::new(vec!["a".into()], vec![vec![f64::NAN]], 0, 1, 0);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn long_csv_layout() {
        let d = PosteriorDraws::new(
            vec!["theta[1]".into(), "tau".into()],
            vec![vec![0.5, 1.0], vec![-0.25, 2.0]],
            0,
            1,
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_long_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "draw,param,value\n0,theta[1],0.5\n0,tau,1\n1,theta[1],-0.25\n1,tau,2\n"
        );
    }
}
