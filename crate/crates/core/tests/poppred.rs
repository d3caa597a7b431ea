use eblab_core::poppred::{
    between_variance_closed_form, population_predictive_mc, variance_decomposition, NormalPrior,
    Population, PopulationSpec,
};
use eblab_core::stats;
use eblab_core::RngStream;

#[test]
fn between_variance_matches_conjugate_closed_form() {
    let prior = NormalPrior::new(0.0, 1.0).unwrap();
    let pop = Population::Normal { mean: 0.0, sd: 2.0f64.sqrt() };
    let spec = PopulationSpec { population: pop.clone(), n: 10, replicates: 2000 };
    let out = population_predictive_mc(&prior, 1.0, &spec, RngStream::new(11, 0)).unwrap();
    let d = variance_decomposition(&out);
    let exact = between_variance_closed_form(&prior, 1.0, &pop, 10);
    assert!((exact - (10.0f64 / 11.0).powi(2) * 0.2).abs() < 1e-15);
    let m = stats::mean(&out.post_means);
    let sq: Vec<f64> = out.post_means.iter().map(|x| (x - m) * (x - m)).collect();
    let se = (stats::variance(&sq) / sq.len() as f64).sqrt();
    assert!((d.between - exact).abs() < 3.0 * se, "{} vs {exact} (se {se})", d.between);
}

#[test]
fn decomposition_is_additive_and_matches_direct_variance() {
    let prior = NormalPrior::new(0.3, 0.5).unwrap();
    for (i, pop) in [
        Population::Normal { mean: 1.0, sd: 1.0 },
        Population::TwoPointMixture { c: 2.0, sd: 0.3 },
        Population::Custom(vec![-1.0, 0.0, 0.5, 3.0]),
    ]
    .into_iter()
    .enumerate()
    {
        let spec = PopulationSpec { population: pop, n: 5, replicates: 400 };
        let out = population_predictive_mc(&prior, 0.8, &spec, RngStream::new(i as u64, 0)).unwrap();
        let d = variance_decomposition(&out);
        assert_eq!(d.total, d.within + d.between);
        let (_, direct) = out.pooled_moments();
        assert!((d.total - direct).abs() < 1e-10, "{} vs {direct}", d.total);
        assert!(d.total > d.within);
        assert!((out.grid_mass() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn replicate_streams_are_reproducible() {
    let prior = NormalPrior::new(0.0, 1.0).unwrap();
    let spec = PopulationSpec {
        population: Population::TwoPointMixture { c: 1.0, sd: 1.0 },
        n: 4,
        replicates: 64,
    };
    let a = population_predictive_mc(&prior, 1.0, &spec, RngStream::new(5, 0)).unwrap();
    let b = population_predictive_mc(&prior, 1.0, &spec, RngStream::new(5, 0)).unwrap();
    let c = population_predictive_mc(&prior, 1.0, &spec, RngStream::new(6, 0)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
