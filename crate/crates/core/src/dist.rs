//! Special functions, log-densities and the seeded random stream shared by
//! every other module.
//!
//! Gamma distributions are parameterized by **shape and rate** throughout
//! (density ∝ λ^(α−1) e^(−βλ)), so the conjugate Poisson update is simply
//! `rate + exposure`.

use std::f64::consts::{LN_2, PI};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ½·log(2π)
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the 64-bit stream selector, so distinct stream ids
/// under one seed are independent keystreams and any substream can be
/// derived without touching the others.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh stream under the same seed with a different id.
    pub fn sibling(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    pub fn uniform(&mut self) -> f64 {
        // 53 random bits in [0, 1)
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    pub fn exponential(&mut self) -> f64 {
        -self.uniform_open().ln()
    }

    /// Gamma draw with shape/rate parameterization.
    pub fn gamma(&mut self, shape: f64, rate: f64) -> f64 {
        let g = Gamma::new(shape, 1.0 / rate).expect("gamma parameters must be positive");
        g.sample(&mut self.rng)
    }

    /// Inverse-gamma draw: if X ~ Ga(shape, rate = scale) then 1/X ~ IG(shape, scale).
    pub fn inv_gamma(&mut self, shape: f64, scale: f64) -> f64 {
        1.0 / self.gamma(shape, scale)
    }

    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let p = rand_distr::Poisson::new(mean).expect("poisson mean must be finite");
        p.sample(&mut self.rng) as u64
    }

    /// Index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Gamma distribution with shape α and rate β.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
            return Err(Error::domain(format!(
                "gamma shape and rate must be positive and finite, got ({shape}, {rate})"
            )));
        }
        Ok(Self { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// E[log λ] = ψ(α) − log β.
    pub fn mean_log(&self) -> f64 {
        digamma_unchecked(self.shape) - self.rate.ln()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        statrs::function::gamma::gamma_lr(self.shape, self.rate * x)
    }

    /// Conjugate update after observing count `n` with exposure `e`.
    pub fn poisson_update(&self, n: u64, e: f64) -> Self {
        Self {
            shape: self.shape + n as f64,
            rate: self.rate + e,
        }
    }
}

fn require_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite, got {v}")))
    }
}

/// Log density of N(mean, sd²) at `x`.
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> Result<f64> {
    require_finite("x", x)?;
    require_finite("mean", mean)?;
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::domain(format!("sd must be positive, got {sd}")));
    }
    Ok(normal_logpdf_unchecked(x, mean, sd))
}

#[inline]
pub(crate) fn normal_logpdf_unchecked(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile Φ⁻¹(p).
pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// Digamma ψ(z) for z > 0.
///
/// Shifts with ψ(z) = ψ(z+1) − 1/z until z ≥ 6, then applies the
/// asymptotic Bernoulli series through z⁻¹⁶.
pub fn digamma(z: f64) -> Result<f64> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::domain(format!("digamma needs z > 0, got {z}")));
    }
    Ok(digamma_unchecked(z))
}

pub(crate) fn digamma_unchecked(mut z: f64) -> f64 {
    let mut acc = 0.0;
    while z < 6.0 {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let r = 1.0 / (z * z);
    // Horner form of Σ B_2k / (2k z^2k), k = 1..8
    let series = r
        * (1.0 / 12.0
            - r * (1.0 / 120.0
                - r * (1.0 / 252.0
                    - r * (1.0 / 240.0
                        - r * (1.0 / 132.0 - r * (691.0 / 32760.0 - r * (1.0 / 12.0 - r * (3617.0 / 8160.0))))))));
    acc + z.ln() - 0.5 / z - series
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Negative-binomial log pmf, NB(n; α, p) = C(n+α−1, n) p^α (1−p)^n.
pub fn nb_logpmf(n: u64, size: f64, prob: f64) -> Result<f64> {
    if !(size > 0.0 && size.is_finite()) {
        return Err(Error::domain(format!("NB size must be positive, got {size}")));
    }
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::domain(format!("NB prob must lie in (0,1), got {prob}")));
    }
    Ok(nb_logpmf_unchecked(n, size, prob))
}

#[inline]
pub(crate) fn nb_logpmf_unchecked(n: u64, size: f64, prob: f64) -> f64 {
    if n == 0 {
        return size * prob.ln();
    }
    let nf = n as f64;
    ln_gamma(nf + size) - ln_gamma(size) - ln_gamma(nf + 1.0)
        + size * prob.ln()
        + nf * (-prob).ln_1p()
}

/// Log density of the half-Cauchy C⁺(0, scale) on [0, ∞).
pub fn half_cauchy_logpdf(x: f64, scale: f64) -> Result<f64> {
    require_finite("x", x)?;
    if x < 0.0 {
        return Err(Error::domain(format!("half-Cauchy support is x >= 0, got {x}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::domain(format!("scale must be positive, got {scale}")));
    }
    let z = x / scale;
    Ok(LN_2 - PI.ln() - scale.ln() - z.mul_add(z, 1.0).ln())
}

/// log Σ exp(v), returning −∞ for an empty or all −∞ input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn normal_logpdf_values() {
        assert!((normal_logpdf(0.0, 0.0, 1.0).unwrap() + 0.918_938_533_204_672_8).abs() < 1e-15);
        assert!((normal_logpdf(2.0, 0.0, 1.0).unwrap() - (-2.0 - LN_SQRT_2PI)).abs() < 1e-15);
        for &(mu, s) in &[(3.0, 0.5), (-1.0, 7.0), (0.0, 1e-3)] {
            let v = normal_logpdf(mu, mu, s).unwrap();
            assert!((v - (-s.ln() - LN_SQRT_2PI)).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_logpdf_rejects_bad_input() {
        assert!(normal_logpdf(0.0, 0.0, 0.0).is_err());
        assert!(normal_logpdf(0.0, 0.0, -1.0).is_err());
        assert!(normal_logpdf(f64::NAN, 0.0, 1.0).is_err());
        assert!(normal_logpdf(0.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn normal_density_integrates_to_one() {
        // trapezoid over ±12 sd
        let (mean, sd) = (1.3, 0.7);
        let n = 20_000;
        let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * normal_logpdf(lo + i as f64 * h, mean, sd).unwrap().exp()
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0).unwrap() + EULER).abs() < 1e-13);
        assert!((digamma(2.0).unwrap() - (1.0 - EULER)).abs() < 1e-13);
        let psi10 = -EULER + (1..10).map(|k| 1.0 / k as f64).sum::<f64>();
        assert!((digamma(10.0).unwrap() - psi10).abs() < 1e-13);
        // ψ(1/2) = −γ − 2 ln 2
        assert!((digamma(0.5).unwrap() - (-EULER - 2.0 * LN_2)).abs() < 1e-13);
        assert!(digamma(0.0).is_err());
        assert!(digamma(-2.5).is_err());
    }

    #[test]
    fn digamma_recurrence_on_random_points() {
        let mut rng = RngStream::new(7, 0);
        for _ in 0..1000 {
            let z = 0.1 + 99.9 * rng.uniform();
            let lhs = digamma(z + 1.0).unwrap();
            let rhs = digamma(z).unwrap() + 1.0 / z;
            assert!(
                (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
                "z={z} lhs={lhs} rhs={rhs}"
            );
        }
    }

    #[test]
    fn nb_logpmf_values() {
        for &(a, p) in &[(0.3, 0.2), (2.5, 0.9), (10.0, 0.5)] {
            assert_eq!(nb_logpmf(0, a, p).unwrap(), a * f64::ln(p));
        }
        assert!((nb_logpmf(1, 1.0, 0.5).unwrap() - 0.25f64.ln()).abs() < 1e-14);

        // recursive pmf ratio: P(n+1)/P(n) = (n+α)/(n+1)·(1−p)
        let (a, p) = (2.5, 0.4);
        let mut log_pmf = a * f64::ln(p);
        for n in 0..3u64 {
            log_pmf += ((n as f64 + a) / (n as f64 + 1.0) * (1.0 - p)).ln();
        }
        assert!((nb_logpmf(3, a, p).unwrap() - log_pmf).abs() < 1e-12);
    }

    #[test]
    fn nb_pmf_sums_to_one() {
        for &(a, p) in &[(0.5, 0.3), (3.0, 0.1), (20.0, 0.7)] {
            let total: f64 = (0..20_000u64).map(|n| nb_logpmf(n, a, p).unwrap().exp()).sum();
            assert!(total >= 1.0 - 1e-10 && total <= 1.0 + 1e-10, "{total}");
        }
    }

    #[test]
    fn nb_rejects_out_of_range() {
        assert!(nb_logpmf(1, 0.0, 0.5).is_err());
        assert!(nb_logpmf(1, 1.0, 0.0).is_err());
        assert!(nb_logpmf(1, 1.0, 1.0).is_err());
    }

    #[test]
    fn half_cauchy_values() {
        assert!((half_cauchy_logpdf(0.0, 1.0).unwrap() - (2.0 / PI).ln()).abs() < 1e-15);
        assert!((half_cauchy_logpdf(1.0, 1.0).unwrap() - (1.0 / PI).ln()).abs() < 1e-15);
        for s in [0.1, 2.0, 30.0] {
            let v = half_cauchy_logpdf(s, s).unwrap();
            assert!((v - (1.0 / (PI * s)).ln()).abs() < 1e-13);
        }
        assert!(half_cauchy_logpdf(-0.1, 1.0).is_err());
    }

    #[test]
    fn half_cauchy_integrates_to_one() {
        // x = s·tan(πu/2) maps [0,1) onto [0,∞); density·dx/du = 1 identically,
        // so check the transformed integrand instead of a truncated grid
        let s = 2.5;
        let n = 10_000;
        let total: f64 = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                let x = s * (PI * u / 2.0).tan();
                let jac = s * PI / 2.0 / (PI * u / 2.0).cos().powi(2);
                half_cauchy_logpdf(x, s).unwrap().exp() * jac
            })
            .sum::<f64>()
            / n as f64;
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn gamma_params_validation_and_moments() {
        assert!(GammaParams::new(0.0, 1.0).is_err());
        assert!(GammaParams::new(1.0, -1.0).is_err());
        let g = GammaParams::new(3.0, 2.0).unwrap();
        assert_eq!(g.mean(), 1.5);
        let post = g.poisson_update(4, 0.5);
        assert_eq!((post.shape, post.rate), (7.0, 2.5));
        // Exp(1): cdf(1) = 1 − e^{-1}
        let e = GammaParams::new(1.0, 1.0).unwrap();
        assert!((e.cdf(1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn rng_streams_reproducible_and_distinct() {
        let mut a = RngStream::new(42, 3);
        let mut b = RngStream::new(42, 3);
        let mut c = RngStream::new(42, 4);
        let mut differ = 0;
        for _ in 0..1_000_000 {
            let x = a.next_u64();
            assert_eq!(x, b.next_u64());
            if x != c.next_u64() {
                differ += 1;
            }
        }
        assert!(differ > 999_000);
    }

    #[test]
    fn rng_stream_pinned_output() {
        // Frozen first outputs; any change here breaks cross-run reproducibility.
        let mut r = RngStream::new(2024, 0);
        let first: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        assert_eq!(
            first,
            vec![3080959604347521991, 18123447844947586703, 12649239169944512436]
        );
    }

    #[test]
    fn independent_streams_are_uncorrelated() {
        let mut a = RngStream::new(9, 0);
        let mut b = RngStream::new(9, 1);
        let n = 100_000;
        let (mut sxy, mut sx, mut sy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = a.uniform();
            let y = b.uniform();
            sxy += x * y;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx * sy / (nf * nf);
        let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        // 4 standard errors of a null correlation
        assert!(corr.abs() < 4.0 / nf.sqrt(), "corr={corr}");
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + LN_2)).abs() < 1e-12);
        assert!((log_add_exp(f64::NEG_INFINITY, -3.0) + 3.0).abs() < 1e-15);
    }
}
