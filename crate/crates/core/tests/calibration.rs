use eblab_core::calib::{
    eb_plugin_calibration, gibbs_calibration, gibbs_calibration_horseshoe, BiasHyperPrior, Study,
    StudySet,
};
use eblab_core::horseshoe::{credible_intervals, HorseshoeConfig};
use eblab_core::stats;
use eblab_core::RngStream;
use nalgebra::{Matrix2, Vector2};

fn st(y: f64, v: f64) -> Study {
    Study::new(y, v).unwrap()
}

fn cfg(n_iter: usize, seed: u64) -> HorseshoeConfig {
    HorseshoeConfig { n_iter, burn_in: n_iter / 5, seed, ..Default::default() }
}

struct Truth {
    theta: f64,
    mu: f64,
    gamma: f64,
}

fn simulate(t: &Truth, j: usize, k: usize, v: f64, rng: &mut RngStream) -> StudySet {
    let exp = st(rng.normal(t.theta, 0.2), 0.04);
    let obs = (0..j)
        .map(|_| {
            let b = rng.normal(t.mu, t.gamma);
            st(rng.normal(t.theta + b, v.sqrt()), v)
        })
        .collect();
    let cal = (0..k)
        .map(|_| {
            let b = rng.normal(t.mu, t.gamma);
            st(rng.normal(b, v.sqrt()), v)
        })
        .collect();
    StudySet::new(Some(exp), obs, cal).unwrap()
}

#[test]
fn bias_hyperparameters_recovered_with_twenty_and_twenty_studies() {
    let truth = Truth { theta: 1.0, mu: 0.3, gamma: 0.5 };
    let hyper = BiasHyperPrior::default();
    let mut mu_means = Vec::new();
    for seed in 0..20 {
        let mut rng = RngStream::new(seed, 1);
        let set = simulate(&truth, 20, 20, 0.01, &mut rng);
        let fit = gibbs_calibration(&set, &hyper, 1e6, &cfg(6000, seed)).unwrap();
        for (name, target) in [("mu", truth.mu), ("gamma2", truth.gamma * truth.gamma)] {
            let c = fit.draws.index_of(name).unwrap();
            let col = fit.draws.column(c);
            let sd = stats::variance(&col).sqrt();
            let err = (fit.draws.mean(c) - target).abs();
            assert!(err < 3.0 * fit.draws.mcse(c) + 3.0 * sd, "seed {seed} {name}: {err} sd {sd}");
        }
        mu_means.push(fit.draws.mean(fit.draws.index_of("mu").unwrap()));
    }
    let se = (stats::variance(&mu_means) / 20.0).sqrt();
    assert!((stats::mean(&mu_means) - truth.mu).abs() < 3.0 * se + 0.02);
}

#[test]
fn plugin_sd_not_above_full_bayes_sd() {
    let truth = Truth { theta: 1.0, mu: 0.3, gamma: 0.5 };
    let hyper = BiasHyperPrior::default();
    let diffs: Vec<f64> = (0..50)
        .map(|seed| {
            let mut rng = RngStream::new(seed, 2);
            let set = simulate(&truth, 5, 3, 0.01, &mut rng);
            let plug = eb_plugin_calibration(&set, 1e6).unwrap();
            let full = gibbs_calibration(&set, &hyper, 1e6, &cfg(3000, seed)).unwrap();
            let col = full.draws.column(full.draws.index_of("theta").unwrap());
            plug.sd - stats::variance(&col).sqrt()
        })
        .collect();
    let mean = stats::mean(&diffs);
    let se = (stats::variance(&diffs) / 50.0).sqrt();
    println!("paired sd difference (plug-in minus full): {mean:.4} (se {se:.4})");
    assert!(mean < 0.0);
}

/// E[θ | y] and E[θ² | y] for the experiment-plus-one-study toy, integrating
/// the Gaussian linear model over the inverse-gamma prior on γ².
fn toy_oracle(ye: f64, ve: f64, yo: f64, vo: f64, h: &BiasHyperPrior, v0: f64) -> (f64, f64) {
    let a = Matrix2::new(1.0, 0.0, 1.0, 1.0);
    let y = Vector2::new(ye, yo);
    let m0 = Vector2::new(0.0, h.mu0);
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let (lo, hi, n) = (-25.0f64, 12.0f64, 40_000);
    let step = (hi - lo) / n as f64;
    for i in 0..=n {
        let t = lo + step * i as f64;
        let g2 = t.exp();
        let p0 = Matrix2::new(v0, 0.0, 0.0, g2 / h.k0);
        let c = a * p0 * a.transpose() + Matrix2::new(ve, 0.0, 0.0, vo + g2);
        let ci = c.try_inverse().unwrap();
        let r = y - a * m0;
        let loglik = -0.5 * (c.determinant().ln() + (r.transpose() * ci * r)[0]);
        let log_prior = h.a0 * h.b0.ln() - eblab_core::dist::ln_gamma(h.a0)
            - (h.a0 + 1.0) * g2.ln()
            - h.b0 / g2;
        let trap = if i == 0 || i == n { 0.5 } else { 1.0 };
        let w = trap * (loglik + log_prior + t).exp();
        let gain = p0 * a.transpose() * ci;
        let mean = m0 + gain * r;
        let cov = p0 - gain * a * p0;
        z += w;
        s1 += w * mean[0];
        s2 += w * (cov[(0, 0)] + mean[0] * mean[0]);
    }
    (s1 / z, s2 / z)
}

#[test]
fn two_study_moments_match_marginalized_posterior() {
    let hyper = BiasHyperPrior::new(0.1, 0.5, 3.0, 1.0).unwrap();
    let (ye, ve, yo, vo) = (0.4, 0.09, 1.2, 0.04);
    let set = StudySet::new(Some(st(ye, ve)), vec![st(yo, vo)], vec![]).unwrap();
    let v0 = 4.0;
    let (m1, m2) = toy_oracle(ye, ve, yo, vo, &hyper, v0);
    let conf = HorseshoeConfig { n_iter: 200_000, burn_in: 2000, seed: 17, ..Default::default() };
    let fit = gibbs_calibration(&set, &hyper, v0, &conf).unwrap();
    let col = fit.draws.column(fit.draws.index_of("theta").unwrap());
    let sq: Vec<f64> = col.iter().map(|t| t * t).collect();
    let (g1, g2) = (stats::mean(&col), stats::mean(&sq));
    let (se1, se2) = (stats::batch_means_se(&col), stats::batch_means_se(&sq));
    println!("theta moments: gibbs ({g1:.5}, {g2:.5}) oracle ({m1:.5}, {m2:.5})");
    assert!((g1 - m1).abs() < 3.0 * se1, "first moment {g1} vs {m1} (se {se1})");
    assert!((g2 - m2).abs() < 3.0 * se2, "second moment {g2} vs {m2} (se {se2})");
}

#[test]
fn horseshoe_flags_the_biased_study() {
    let level = 0.95;
    for seed in 0..20 {
        let mut rng = RngStream::new(seed, 3);
        let theta = 1.0;
        let exp = st(rng.normal(theta, 0.2), 0.04);
        let obs: Vec<Study> = (0..10)
            .map(|j| {
                let bias = if j == 0 { 3.0 } else { 0.0 };
                st(rng.normal(theta + 0.2 + bias, 0.2), 0.04)
            })
            .collect();
        let cal: Vec<Study> = (0..20).map(|_| st(rng.normal(0.2, 0.2), 0.04)).collect();
        let set = StudySet::new(Some(exp), obs, cal).unwrap();
        let fit = gibbs_calibration_horseshoe(&set, &cfg(6000, seed)).unwrap();
        let ci = credible_intervals(&fit.draws, level, "delta").unwrap();
        assert_eq!(ci.len(), 10);
        assert!(ci[0].lower > 0.0, "seed {seed}: outlier {:?}", ci[0]);
        for c in &ci[1..] {
            assert!(c.lower < 0.0 && c.upper > 0.0, "seed {seed}: {c:?}");
        }
    }
}

#[test]
fn symmetric_studies_center_theta_on_experiment() {
    let ye = 0.5;
    let set = StudySet::new(
        Some(st(ye, 0.05)),
        vec![st(ye + 0.4, 0.02), st(ye - 0.4, 0.02), st(ye + 1.1, 0.05), st(ye - 1.1, 0.05)],
        vec![st(0.3, 0.02), st(-0.3, 0.02), st(0.05, 0.03), st(-0.05, 0.03)],
    )
    .unwrap();
    let fit = gibbs_calibration_horseshoe(&set, &cfg(40_000, 8)).unwrap();
    let c = fit.draws.index_of("theta").unwrap();
    let (m, se) = (fit.draws.mean(c), fit.draws.mcse(c));
    assert!((m - ye).abs() < 3.0 * se, "{m} (se {se})");
}

#[test]
fn small_calibration_biases_give_smaller_tau() {
    for seed in 0..20 {
        let run = |spread: f64| {
            let mut rng = RngStream::new(seed, 4);
            let cal: Vec<Study> = (0..40)
                .map(|_| st(rng.normal(0.0, spread) + rng.normal(0.0, 0.1), 0.01))
                .collect();
            let set =
                StudySet::new(Some(st(1.0, 0.04)), vec![st(1.1, 0.04), st(0.9, 0.04)], cal).unwrap();
            let fit = gibbs_calibration_horseshoe(&set, &cfg(4000, seed)).unwrap();
            fit.draws.mean(fit.draws.index_of("tau").unwrap())
        };
        let (small, large) = (run(0.05), run(1.0));
        assert!(small < large, "seed {seed}: {small} vs {large}");
    }
}

#[test]
fn horseshoe_experiment_only_is_flagged() {
    let set = StudySet::new(Some(st(2.0, 0.25)), vec![], vec![]).unwrap();
    let fit = gibbs_calibration_horseshoe(&set, &cfg(20_000, 1)).unwrap();
    assert!(fit.experiment_only);
    let c = fit.draws.index_of("theta").unwrap();
    assert!((fit.draws.mean(c) - 2.0).abs() < 4.0 * fit.draws.mcse(c));
}
