use eblab_core::mgps::{
    cell_posterior, ebgm, fit_type2_ml, DrugEventTable, MgpsParams,
};
use eblab_core::{GammaParams, RngStream};

fn truth() -> MgpsParams {
    MgpsParams::new(
        0.8,
        GammaParams::new(4.0, 4.0).unwrap(),
        GammaParams::new(8.0, 1.0).unwrap(),
    )
    .unwrap()
}

fn simulate(params: &MgpsParams, cells: usize, seed: u64) -> DrugEventTable {
    let mut rng = RngStream::new(seed, 0);
    let counts: Vec<(u64, f64)> = (0..cells)
        .map(|_| {
            let g = if rng.uniform() < params.w() { params.comp1() } else { params.comp2() };
            let lambda = rng.gamma(g.shape, g.rate);
            let e = 0.5 + 4.5 * rng.uniform();
            (rng.poisson(lambda * e), e)
        })
        .collect();
    DrugEventTable::from_counts(&counts).unwrap()
}

#[test]
fn recovers_component_means() {
    let truth = truth();
    for seed in 0..3 {
        let table = simulate(&truth, 10_000, seed);
        let fit = fit_type2_ml(&table, &MgpsParams::default_init(), 1e-6).unwrap();
        let p = fit.params;
        for (est, tru) in [(p.comp1().mean(), 1.0), (p.comp2().mean(), 8.0)] {
            assert!((est / tru - 1.0).abs() < 0.15, "seed {seed}: {est} vs {tru} ({p:?})");
        }
        assert!(fit.converged && !fit.degenerate);
    }
}

#[test]
fn ebgm_sandwich_on_random_cells() {
    let mut rng = RngStream::new(77, 0);
    for _ in 0..10_000 {
        let g1 = GammaParams::new(0.05 + 5.0 * rng.uniform(), 0.05 + 5.0 * rng.uniform()).unwrap();
        let g2 = GammaParams::new(0.05 + 5.0 * rng.uniform(), 0.05 + 5.0 * rng.uniform()).unwrap();
        let params = MgpsParams::new(0.01 + 0.98 * rng.uniform(), g1, g2).unwrap();
        let rate = 20.0 * rng.uniform();
        let n = rng.poisson(rate);
        let e = 0.01 + 10.0 * rng.uniform();
        let post = cell_posterior(n, e, &params).unwrap();
        assert_eq!(post.post1.shape, params.comp1().shape + n as f64);
        assert_eq!(post.post1.rate, params.comp1().rate + e);
        assert_eq!(post.post2.shape, params.comp2().shape + n as f64);
        assert_eq!(post.post2.rate, params.comp2().rate + e);
        let v = ebgm(n, e, &params).unwrap();
        let (a, b) = (post.post1.mean_log().exp(), post.post2.mean_log().exp());
        let slack = 1e-12 * a.max(b);
        assert!(v >= a.min(b) - slack && v <= a.max(b) + slack);
    }
}

#[test]
fn shrinkage_direction() {
    let params = truth();
    // a large observed ratio is pulled down
    assert!(ebgm(40, 2.0, &params).unwrap() < 20.0);
    // small counts with tiny exposure are pulled toward the prior, not to n/e
    for n in 0..=2u64 {
        let e = 0.05;
        let v = ebgm(n, e, &params).unwrap();
        let raw = n as f64 / e;
        let prior_gm = [params.comp1(), params.comp2()].map(|g| g.mean_log().exp());
        if n == 0 {
            assert!(v > raw && v >= prior_gm[0].min(prior_gm[1]) * 0.5);
        } else {
            assert!(v < raw, "n {n}: {v} vs {raw}");
        }
    }
}
