//! Pólya–Gamma variates and the PG-augmented negative-binomial regression
//! with a horseshoe prior on the coefficients.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{normal_cdf, RngStream};
use crate::error::{Error, Result};
use crate::horseshoe::{HorseshoeConfig, PosteriorDraws};
use crate::mgps::DrugEventTable;

/// Truncation point of the alternating-series sampler.
const TRUNC: f64 = 0.64;
/// Integer shapes up to this are summed from exact PG(1, c) draws.
pub const EXACT_SUM_LIMIT: f64 = 64.0;
/// Number of gamma terms in the series approximation for other shapes.
pub const SERIES_TERMS: usize = 200;

/// E[PG(b, c)] = b/(2c)·tanh(c/2), with limit b/4 at c = 0.
pub fn polya_gamma_mean(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-6 {
        // tanh(c/2)/(2c) = 1/4 − c²/48 + …
        b * (0.25 - c * c / 48.0)
    } else {
        b / (2.0 * c) * (0.5 * c).tanh()
    }
}

/// Draws ω ~ PG(b, c).
///
/// Integer b ≤ 64 sums b exact PG(1, c) draws from the alternating-series
/// method with an exponential / inverse-Gaussian proposal. Any other b uses
/// the first 200 terms of ω = (1/2π²) Σ g_k / ((k − ½)² + c²/(4π²)),
/// g_k ~ Gamma(b, 1), plus the mean of the omitted tail.
pub fn sample_polya_gamma(b: f64, c: f64, rng: &mut RngStream) -> Result<f64> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::domain(format!("PG shape must be positive, got {b}")));
    }
    if !c.is_finite() {
        return Err(Error::domain(format!("PG tilt must be finite, got {c}")));
    }
    Ok(draw_unchecked(b, c, rng))
}

fn draw_unchecked(b: f64, c: f64, rng: &mut RngStream) -> f64 {
    if b == b.round() && b <= EXACT_SUM_LIMIT {
        (0..b as usize).map(|_| draw_pg1(c, rng)).sum()
    } else {
        draw_series(b, c, rng)
    }
}

fn draw_series(b: f64, c: f64, rng: &mut RngStream) -> f64 {
    let d = c * c / (4.0 * PI * PI);
    let scale = 1.0 / (2.0 * PI * PI);
    let mut total = 0.0;
    let mut head_mean = 0.0;
    for k in 1..=SERIES_TERMS {
        let h = k as f64 - 0.5;
        let denom = h * h + d;
        total += rng.gamma(b, 1.0) / denom;
        head_mean += b / denom;
    }
    let tail = polya_gamma_mean(b, c) - scale * head_mean;
    scale * total + tail.max(0.0)
}

/// Coefficient a_n(x) of the alternating series for J*(1, z).
fn series_coef(n: usize, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

/// Probability that the proposal is drawn from the exponential piece.
fn exponential_mass(z: f64) -> f64 {
    let t = TRUNC;
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + normal_cdf(b).ln();
    let xa = x0 + z + normal_cdf(a).ln();
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse-Gaussian(1/z, 1) truncated to (0, TRUNC).
fn truncated_inverse_gaussian(z: f64, rng: &mut RngStream) -> f64 {
    let t = TRUNC;
    if z < 1.0 / t {
        // mean beyond the truncation point: rejection from a truncated 1/χ²₁
        loop {
            let (mut e1, mut e2) = (rng.exponential(), rng.exponential());
            while e1 * e1 > 2.0 * e2 / t {
                e1 = rng.exponential();
                e2 = rng.exponential();
            }
            let x = t / ((1.0 + e1 * t) * (1.0 + e1 * t));
            if rng.uniform() <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    }
    let mu = 1.0 / z;
    loop {
        let y = rng.standard_normal();
        let my = mu * y * y;
        let mut x = mu + 0.5 * mu * my - 0.5 * mu * (4.0 * my + my * my).sqrt();
        if rng.uniform() > mu / (mu + x) {
            x = mu * mu / x;
        }
        if x < t {
            return x;
        }
    }
}

/// Exact PG(1, c) = J*(1, |c|/2)/4.
fn draw_pg1(c: f64, rng: &mut RngStream) -> f64 {
    let z = 0.5 * c.abs();
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let p_exp = exponential_mass(z);
    loop {
        let x = if rng.uniform() < p_exp {
            TRUNC + rng.exponential() / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.uniform() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Prior variance used for intercept (constant, nonzero) columns.
pub const INTERCEPT_PRIOR_VAR: f64 = 100.0;
const RIDGE_JITTER: f64 = 1e-8;
const SCALE_MIN: f64 = 1e-100;
const SCALE_MAX: f64 = 1e100;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovariateFit {
    pub draws: PosteriorDraws,
    /// Centered design lacked full column rank; a ridge jitter was added.
    pub rank_deficient: bool,
    /// Columns treated as intercepts (vague normal prior, no horseshoe).
    pub intercepts: Vec<usize>,
}

fn is_intercept(design: &DMatrix<f64>, j: usize) -> bool {
    let col = design.column(j);
    let first = col[0];
    first != 0.0 && col.iter().all(|&v| v == first)
}

/// Numerical rank check of the design after centering the non-intercept
/// columns; several intercept columns also count as deficient.
fn rank_deficient(design: &DMatrix<f64>, intercepts: &[usize]) -> bool {
    if intercepts.len() > 1 {
        return true;
    }
    let others: Vec<usize> = (0..design.ncols()).filter(|j| !intercepts.contains(j)).collect();
    if others.is_empty() {
        return false;
    }
    if others.len() >= design.nrows() {
        return true;
    }
    let centered = DMatrix::from_fn(design.nrows(), others.len(), |i, k| {
        let col = design.column(others[k]);
        col[i] - col.mean()
    });
    let sv = centered.singular_values();
    let top = sv.max();
    top == 0.0 || sv.min() <= 1e-10 * top
}

/// Gibbs sampler for n ~ NB(r, mean e·exp(xᵀβ)) with PG augmentation.
///
/// With ψ = xᵀβ + log e − log r the likelihood is ∝ e^(nψ)/(1 + e^ψ)^(n+r).
/// Given ω_i ~ PG(n_i + r, ψ_i) the coefficients are Gaussian with
/// precision XᵀΩX + D⁻¹ and linear term Xᵀ(κ − Ω·offset), κ = (n − r)/2.
/// Non-intercept coefficients get horseshoe scales updated as in the
/// normal means sampler.
pub fn pg_covariate_gibbs(
    table: &DrugEventTable,
    design: &DMatrix<f64>,
    r: f64,
    config: &HorseshoeConfig,
) -> Result<CovariateFit> {
    config.validate()?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::domain(format!("NB count parameter must be positive, got {r}")));
    }
    if design.nrows() != table.len() {
        return Err(Error::domain(format!(
            "design has {} rows for {} cells",
            design.nrows(),
            table.len()
        )));
    }
    let p = design.ncols();
    if p == 0 || table.is_empty() {
        return Err(Error::domain("need at least one cell and one covariate"));
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("design contains non-finite values"));
    }
    let mut rng = RngStream::new(config.seed, 0);
    let intercepts: Vec<usize> = (0..p).filter(|&j| is_intercept(design, j)).collect();
    let shrunk: Vec<usize> = (0..p).filter(|j| !intercepts.contains(j)).collect();
    let deficient = rank_deficient(design, &intercepts);
    let jitter = if deficient { RIDGE_JITTER } else { 0.0 };

    let cells = table.cells();
    let m = cells.len();
    let offset: Vec<f64> = cells.iter().map(|c| c.e.ln() - r.ln()).collect();
    let kappa = DVector::from_iterator(m, cells.iter().map(|c| 0.5 * (c.n as f64 - r)));
    let shapes: Vec<f64> = cells.iter().map(|c| c.n as f64 + r).collect();

    let mut beta = DVector::<f64>::zeros(p);
    let mut lambda2 = vec![1.0; p];
    let mut nu = vec![1.0; p];
    let mut tau2 = config.tau_fixed.map_or(1.0, |t| t * t);
    let mut xi = 1.0;
    let mut omega = vec![0.0; m];

    let width = p + shrunk.len() + usize::from(!shrunk.is_empty());
    let keep = config.retained();
    let mut values = Vec::with_capacity(keep * width);

    for it in 0..config.n_iter {
        let psi = design * &beta;
        for i in 0..m {
            omega[i] = draw_unchecked(shapes[i], psi[i] + offset[i], &mut rng);
        }
        // precision and linear term of β | ω
        let mut prec = DMatrix::<f64>::zeros(p, p);
        let mut lin = DVector::<f64>::zeros(p);
        for i in 0..m {
            let row = design.row(i);
            let w = omega[i];
            let target = kappa[i] - w * offset[i];
            for a in 0..p {
                lin[a] += row[a] * target;
                let wa = w * row[a];
                for b in a..p {
                    prec[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                prec[(a, b)] = prec[(b, a)];
            }
            let prior_var = if intercepts.contains(&a) {
                INTERCEPT_PRIOR_VAR
            } else {
                lambda2[a] * tau2
            };
            prec[(a, a)] += 1.0 / prior_var + jitter;
        }
        let chol = prec
            .cholesky()
            .ok_or_else(|| Error::numeric("coefficient precision is not positive definite"))?;
        let mean = chol.solve(&lin);
        let z = DVector::from_iterator(p, (0..p).map(|_| rng.standard_normal()));
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::numeric("singular Cholesky factor"))?;
        beta = mean + noise;

        for &j in &shrunk {
            let bj = beta[j];
            let scale = 1.0 / nu[j] + bj * bj / (2.0 * tau2);
            lambda2[j] = (scale / rng.exponential()).clamp(SCALE_MIN, SCALE_MAX);
            nu[j] = (1.0 + 1.0 / lambda2[j]) / rng.exponential();
        }
        if !shrunk.is_empty() && config.tau_fixed.is_none() {
            let ss: f64 = shrunk.iter().map(|&j| beta[j] * beta[j] / lambda2[j]).sum();
            tau2 = rng
                .inv_gamma(0.5 * (shrunk.len() as f64 + 1.0), 1.0 / xi + 0.5 * ss)
                .clamp(SCALE_MIN, SCALE_MAX);
            xi = (1.0 + 1.0 / tau2) / rng.exponential();
        }

        if it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0 {
            values.extend(beta.iter());
            values.extend(shrunk.iter().map(|&j| lambda2[j].sqrt()));
            if !shrunk.is_empty() {
                values.push(tau2.sqrt());
            }
        }
    }

    let mut names: Vec<String> = (1..=p).map(|j| format!("beta[{j}]")).collect();
    names.extend(shrunk.iter().map(|j| format!("lambda[{}]", j + 1)));
    if !shrunk.is_empty() {
        names.push("tau".into());
    }
    let draws =
        PosteriorDraws::from_flat(names, keep, values, config.burn_in, config.thin, config.seed)?;
    Ok(CovariateFit {
        draws,
        rank_deficient: deficient,
        intercepts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_mean(b: f64, c: f64, draws: usize, seed: u64) -> (f64, f64) {
        let mut rng = RngStream::new(seed, 0);
        let v: Vec<f64> = (0..draws)
            .map(|_| sample_polya_gamma(b, c, &mut rng).unwrap())
            .collect();
        (crate::stats::mean(&v), (crate::stats::variance(&v) / draws as f64).sqrt())
    }

    #[test]
    fn analytic_mean_values() {
        assert_eq!(polya_gamma_mean(1.0, 0.0), 0.25);
        assert!((polya_gamma_mean(1.0, 3.0) - 1.5f64.tanh() / 6.0).abs() < 1e-15);
        assert!((polya_gamma_mean(2.0, 1e-7) - 0.5).abs() < 1e-12);
        assert_eq!(polya_gamma_mean(1.0, -2.0), polya_gamma_mean(1.0, 2.0));
    }

    #[test]
    fn invalid_shape_rejected() {
        let mut rng = RngStream::new(0, 0);
        assert!(sample_polya_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_polya_gamma(1.0, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn fractional_shape_uses_series_with_right_mean() {
        let (m, se) = sample_mean(2.5, 1.5, 20_000, 3);
        let truth = polya_gamma_mean(2.5, 1.5);
        assert!((m - truth).abs() < 3.0 * se, "{m} vs {truth}");
    }

    #[test]
    fn exact_and_series_paths_agree_in_variance() {
        // Var PG(1, 0) = 1/24
        let mut rng = RngStream::new(9, 0);
        let v: Vec<f64> = (0..50_000).map(|_| draw_pg1(0.0, &mut rng)).collect();
        assert!((crate::stats::variance(&v) - 1.0 / 24.0).abs() < 0.003);
        let w: Vec<f64> = (0..50_000).map(|_| draw_series(1.0, 0.0, &mut rng)).collect();
        assert!((crate::stats::variance(&w) - 1.0 / 24.0).abs() < 0.003);
    }

    #[test]
    fn intercept_detection_and_rank() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.5, 0.0, 1.0, -0.2, 0.0, 1.0, 1.5, 0.0, 1.0, 0.1, 0.0]);
        assert!(is_intercept(&x, 0));
        assert!(!is_intercept(&x, 1));
        assert!(!is_intercept(&x, 2));
        assert!(rank_deficient(&x, &[0]));
        let y = x.columns(0, 2).into_owned();
        assert!(!rank_deficient(&y, &[0]));
    }
}
