//! Multi-item gamma-Poisson shrinker.
//!
//! Counts follow n ~ Poisson(λe) with λ drawn from a two-component gamma
//! mixture, so each cell's marginal is a two-component negative binomial
//! mixture. Hyperparameters are fit by type-II maximum likelihood and every
//! cell gets a two-component gamma posterior summarized by its geometric
//! mean (EBGM) and 5th percentile (EB05).

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{ln_gamma, log_add_exp, GammaParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub drug: String,
    pub event: String,
    pub n: u64,
    pub e: f64,
}

/// Drug–event cells with observed counts `n` and expected counts `e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrugEventTable {
    cells: Vec<Cell>,
}

impl DrugEventTable {
    pub fn new(cells: Vec<Cell>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(cells.len());
        for c in &cells {
            if !(c.e > 0.0 && c.e.is_finite()) {
                return Err(Error::domain(format!(
                    "expected count for ({}, {}) must be positive, got {}",
                    c.drug, c.event, c.e
                )));
            }
            if !seen.insert((c.drug.as_str(), c.event.as_str())) {
                return Err(Error::domain(format!(
                    "duplicate cell ({}, {})",
                    c.drug, c.event
                )));
            }
        }
        Ok(Self { cells })
    }

    /// Anonymous cells named `d{i}`/`e{i}`, for simulations.
    pub fn from_counts(counts: &[(u64, f64)]) -> Result<Self> {
        Self::new(
            counts
                .iter()
                .enumerate()
                .map(|(i, &(n, e))| Cell {
                    drug: format!("d{i}"),
                    event: format!("e{i}"),
                    n,
                    e,
                })
                .collect(),
        )
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Reads a CSV with header `drug,event,n,e`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers()?.clone();
        let expected = ["drug", "event", "n", "e"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::domain(format!(
                "table header must be drug,event,n,e, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let cells = reader
            .deserialize()
            .collect::<std::result::Result<Vec<Cell>, _>>()?;
        Self::new(cells)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for c in &self.cells {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mixture prior w·Gamma(α1, β1) + (1 − w)·Gamma(α2, β2) on the reporting
/// ratio, stored with the smaller prior mean first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgpsParams {
    w: f64,
    comp1: GammaParams,
    comp2: GammaParams,
}

impl MgpsParams {
    /// Validates and puts the components in canonical (prior-mean) order.
    pub fn new(w: f64, comp1: GammaParams, comp2: GammaParams) -> Result<Self> {
        if !(w > 0.0 && w < 1.0) {
            return Err(Error::domain(format!("mixing weight must lie in (0, 1), got {w}")));
        }
        GammaParams::new(comp1.shape, comp1.rate)?;
        GammaParams::new(comp2.shape, comp2.rate)?;
        Ok(Self::canonical(w, comp1, comp2))
    }

    /// The one-component prior (w = 1), used for closed-form checks.
    pub fn single_component(comp: GammaParams) -> Result<Self> {
        GammaParams::new(comp.shape, comp.rate)?;
        Ok(Self {
            w: 1.0,
            comp1: comp,
            comp2: comp,
        })
    }

    /// Conventional starting point: w = 1/3, Gamma(0.2, 0.1) and Gamma(2, 4).
    pub fn default_init() -> Self {
        Self::canonical(
            1.0 / 3.0,
            GammaParams { shape: 0.2, rate: 0.1 },
            GammaParams { shape: 2.0, rate: 4.0 },
        )
    }

    fn canonical(w: f64, comp1: GammaParams, comp2: GammaParams) -> Self {
        if comp1.mean() <= comp2.mean() {
            Self { w, comp1, comp2 }
        } else {
            Self {
                w: 1.0 - w,
                comp1: comp2,
                comp2: comp1,
            }
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn comp1(&self) -> GammaParams {
        self.comp1
    }

    pub fn comp2(&self) -> GammaParams {
        self.comp2
    }

    fn to_coords(self) -> [f64; 5] {
        let w = self.w.clamp(1e-300, 1.0 - 1e-16);
        [
            (w / (1.0 - w)).ln(),
            self.comp1.shape.ln(),
            self.comp1.rate.ln(),
            self.comp2.shape.ln(),
            self.comp2.rate.ln(),
        ]
    }

    fn from_coords(z: &[f64]) -> Self {
        let w = 1.0 / (1.0 + (-z[0]).exp());
        Self {
            w,
            comp1: GammaParams {
                shape: z[1].exp(),
                rate: z[2].exp(),
            },
            comp2: GammaParams {
                shape: z[3].exp(),
                rate: z[4].exp(),
            },
        }
    }
}

/// log NB(n; α, β/(β+e)) written with ln β, ln e and ln(β+e) kept apart,
/// which stays accurate when e is tiny relative to β.
#[inline]
fn log_nb_term(n: u64, e: f64, g: GammaParams) -> f64 {
    let nf = n as f64;
    let log_total = (g.rate + e).ln();
    let mut v = g.shape * (g.rate.ln() - log_total);
    if n > 0 {
        v += ln_gamma(nf + g.shape) - ln_gamma(g.shape) - ln_gamma(nf + 1.0)
            + nf * (e.ln() - log_total);
    }
    v
}

fn cell_log_marginal(n: u64, e: f64, p: &MgpsParams) -> f64 {
    let first = p.w.ln() + log_nb_term(n, e, p.comp1);
    if p.w >= 1.0 {
        return first;
    }
    log_add_exp(first, (-p.w).ln_1p() + log_nb_term(n, e, p.comp2))
}

/// Σ over cells of log[w·NB(n; α1, β1/(β1+e)) + (1−w)·NB(n; α2, β2/(β2+e))].
pub fn marginal_loglik_mgps(params: &MgpsParams, table: &DrugEventTable) -> f64 {
    table
        .cells
        .iter()
        .map(|c| cell_log_marginal(c.n, c.e, params))
        .sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Type2Fit {
    pub params: MgpsParams,
    pub loglik: f64,
    /// Best log-likelihood so far, once per simplex iteration across restarts.
    pub trace: Vec<f64>,
    pub evaluations: usize,
    pub converged: bool,
    /// The fit sits on a boundary: w near 0 or 1, collapsed components, or
    /// a shape/rate driven to an extreme.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

pub const MIN_CELLS: usize = 50;
const MAX_EVALUATIONS: usize = 20_000;
const RESTARTS: usize = 3;
/// Coordinates beyond this are treated as outside the parameter space.
const COORD_LIMIT: f64 = 30.0;

/// Type-II maximum likelihood for the five hyperparameters by Nelder–Mead
/// in (logit w, log α1, log β1, log α2, log β2). The simplex is restarted
/// around the incumbent until a restart no longer improves it.
pub fn fit_type2_ml(table: &DrugEventTable, init: &MgpsParams, tol: f64) -> Result<Type2Fit> {
    if table.is_empty() {
        return Err(Error::domain("cannot fit an empty table"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tol must be positive, got {tol}")));
    }
    if !(init.w > 0.0 && init.w < 1.0) {
        return Err(Error::domain("initial mixing weight must lie in (0, 1)"));
    }
    let mut warnings = Vec::new();
    if table.len() < MIN_CELLS {
        warnings.push(format!(
            "only {} cells; type-II ML is poorly determined below {MIN_CELLS}",
            table.len()
        ));
    }
    let objective = |z: &[f64]| -> f64 {
        if z.iter().any(|v| v.abs() > COORD_LIMIT) {
            return f64::NEG_INFINITY;
        }
        let v = marginal_loglik_mgps(&MgpsParams::from_coords(z), table);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut best = init.to_coords().to_vec();
    let mut best_value = objective(&best);
    let mut trace = vec![best_value];
    let mut evaluations = 1;
    let mut converged = false;
    for round in 0..=RESTARTS {
        let budget = MAX_EVALUATIONS.saturating_sub(evaluations);
        if budget == 0 {
            break;
        }
        let run = nelder_mead(&objective, &best, 0.5, tol, budget);
        evaluations += run.evaluations;
        for v in run.trace {
            trace.push(v.max(*trace.last().expect("trace starts nonempty")));
        }
        let gain = run.value - best_value;
        if run.value > best_value {
            best = run.point;
            best_value = run.value;
        }
        converged = run.converged;
        if round > 0 && gain <= 1e-9 * best_value.abs().max(1.0) {
            break;
        }
    }
    if !best_value.is_finite() {
        return Err(Error::fit("type-II likelihood is not finite at any visited point"));
    }

    let raw = MgpsParams::from_coords(&best);
    let params = MgpsParams::canonical(raw.w, raw.comp1, raw.comp2);
    let (m1, m2) = (params.comp1.mean(), params.comp2.mean());
    let collapsed = (m2 - m1) <= 1e-3 * m2
        && (params.comp1.shape - params.comp2.shape).abs()
            <= 1e-3 * params.comp1.shape.max(params.comp2.shape);
    let degenerate = !(1e-3..=1.0 - 1e-3).contains(&params.w)
        || collapsed
        || best[1..].iter().any(|v| v.abs() > 20.0);
    if degenerate {
        warnings.push("degenerate fit: hyperparameters at a boundary of the parameter space".into());
    }
    if !converged {
        warnings.push("optimizer stopped before the simplex diameter fell below tol".into());
    }
    Ok(Type2Fit {
        params,
        loglik: best_value,
        trace,
        evaluations,
        converged,
        degenerate,
        warnings,
    })
}

struct SimplexRun {
    point: Vec<f64>,
    value: f64,
    trace: Vec<f64>,
    evaluations: usize,
    converged: bool,
}

/// Maximizes `f` with the standard Nelder–Mead moves (reflection 1,
/// expansion 2, contraction ½, shrink ½). Converged when every vertex lies
/// within `tol` (max norm) of the best one.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    step: f64,
    tol: f64,
    max_evaluations: usize,
) -> SimplexRun {
    let d = start.len();
    // internally minimize g = −f
    let g = |x: &[f64]| -f(x);
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for j in 0..d {
        let mut v = start.to_vec();
        v[j] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| g(v)).collect();
    let mut evaluations = d + 1;
    let mut trace = Vec::new();
    let mut converged = false;

    loop {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        trace.push(-values[0]);

        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter < tol {
            converged = true;
            break;
        }
        if evaluations >= max_evaluations {
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64)
            .collect();
        let toward = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };
        let reflected = toward(1.0);
        let fr = g(&reflected);
        evaluations += 1;
        if fr < values[0] {
            let expanded = toward(2.0);
            let fe = g(&expanded);
            evaluations += 1;
            if fe < fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
            continue;
        }
        if fr < values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
            continue;
        }
        // outside contraction when the reflection beat the worst vertex
        let contracted = toward(if fr < values[d] { 0.5 } else { -0.5 });
        let fc = g(&contracted);
        evaluations += 1;
        if fc < values[d].min(fr) {
            simplex[d] = contracted;
            values[d] = fc;
            continue;
        }
        for i in 1..=d {
            let shrunk: Vec<f64> = simplex[i]
                .iter()
                .zip(&simplex[0])
                .map(|(v, b)| b + 0.5 * (v - b))
                .collect();
            values[i] = g(&shrunk);
            simplex[i] = shrunk;
        }
        evaluations += d;
    }
    SimplexRun {
        point: simplex[0].clone(),
        value: -values[0],
        trace,
        evaluations,
        converged,
    }
}

/// Two-component gamma posterior of one cell's reporting ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPosterior {
    pub weight1: f64,
    pub post1: GammaParams,
    pub post2: GammaParams,
}

impl CellPosterior {
    pub fn weight2(&self) -> f64 {
        1.0 - self.weight1
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weight1 * self.post1.cdf(x) + self.weight2() * self.post2.cdf(x)
    }

    /// Quantile of the gamma mixture by bisection on its CDF.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("quantile level must lie in (0, 1), got {p}")));
        }
        let mut hi = self.post1.mean().max(self.post2.mean()).max(1e-300);
        let mut tries = 0;
        while self.cdf(hi) < p {
            hi *= 2.0;
            tries += 1;
            if tries > 2000 {
                return Err(Error::numeric("could not bracket the posterior quantile"));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn check_cell(e: f64) -> Result<()> {
    if !(e > 0.0 && e.is_finite()) {
        return Err(Error::domain(format!("expected count must be positive, got {e}")));
    }
    Ok(())
}

pub fn cell_posterior(n: u64, e: f64, params: &MgpsParams) -> Result<CellPosterior> {
    check_cell(e)?;
    let weight1 = if params.w >= 1.0 {
        1.0
    } else {
        let l1 = params.w.ln() + log_nb_term(n, e, params.comp1);
        let l2 = (-params.w).ln_1p() + log_nb_term(n, e, params.comp2);
        1.0 / (1.0 + (l2 - l1).exp())
    };
    Ok(CellPosterior {
        weight1,
        post1: params.comp1.poisson_update(n, e),
        post2: params.comp2.poisson_update(n, e),
    })
}

/// exp(E[log λ | n, e]), mixing ψ(a_k) − log b_k by the posterior weights.
pub fn ebgm(n: u64, e: f64, params: &MgpsParams) -> Result<f64> {
    let post = cell_posterior(n, e, params)?;
    Ok(ebgm_of(&post))
}

fn ebgm_of(post: &CellPosterior) -> f64 {
    let mut log_mean = post.weight1 * post.post1.mean_log();
    if post.weight1 < 1.0 {
        log_mean += post.weight2() * post.post2.mean_log();
    }
    log_mean.exp()
}

/// Posterior 5th percentile of λ.
pub fn eb05(n: u64, e: f64, params: &MgpsParams) -> Result<f64> {
    cell_posterior(n, e, params)?.quantile(0.05)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub drug: String,
    pub event: String,
    pub n: u64,
    pub e: f64,
    pub ebgm: f64,
    pub eb05: f64,
    pub weight1: f64,
}

/// Posterior summaries for every cell, in table order.
pub fn summarize_cells(table: &DrugEventTable, params: &MgpsParams) -> Result<Vec<CellSummary>> {
    table
        .cells
        .par_iter()
        .map(|c| {
            let post = cell_posterior(c.n, c.e, params)?;
            Ok(CellSummary {
                drug: c.drug.clone(),
                event: c.event.clone(),
                n: c.n,
                e: c.e,
                ebgm: ebgm_of(&post),
                eb05: post.quantile(0.05)?,
                weight1: post.weight1,
            })
        })
        .collect()
}

/// CSV with header `drug,event,n,e,ebgm,eb05,weight1`.
pub fn write_summaries<W: Write>(rows: &[CellSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads per-cell covariates from a CSV with header `drug,event,<names...>`
/// and returns the column names and a design matrix in table order.
pub fn read_covariates<R: Read>(
    input: R,
    table: &DrugEventTable,
) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "drug" || &headers[1] != "event" {
        return Err(Error::domain(
            "covariate header must be drug,event followed by at least one column",
        ));
    }
    let names: Vec<String> = headers.iter().skip(2).map(String::from).collect();
    let mut rows: HashMap<(String, String), Vec<f64>> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let key = (record[0].to_string(), record[1].to_string());
        let values = record
            .iter()
            .skip(2)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::domain(format!("covariate value '{v}' is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != names.len() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "covariate row for ({}, {}) is malformed",
                key.0, key.1
            )));
        }
        if rows.insert(key.clone(), values).is_some() {
            return Err(Error::domain(format!("duplicate covariate row ({}, {})", key.0, key.1)));
        }
    }
    let mut design = DMatrix::zeros(table.len(), names.len());
    for (i, c) in table.cells.iter().enumerate() {
        let row = rows
            .get(&(c.drug.clone(), c.event.clone()))
            .ok_or_else(|| Error::domain(format!("no covariates for ({}, {})", c.drug, c.event)))?;
        for (j, v) in row.iter().enumerate() {
            design[(i, j)] = *v;
        }
    }
    Ok((names, design))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{digamma, nb_logpmf, RngStream};

    fn gp(shape: f64, rate: f64) -> GammaParams {
        GammaParams::new(shape, rate).unwrap()
    }

    #[test]
    fn single_cell_closed_forms() {
        let one = MgpsParams::single_component(gp(1.0, 1.0)).unwrap();
        let table = DrugEventTable::from_counts(&[(0, 1.0)]).unwrap();
        assert!((marginal_loglik_mgps(&one, &table) - 0.5f64.ln()).abs() < 1e-15);

        let post = cell_posterior(0, 1.0, &one).unwrap();
        assert_eq!(post.weight1, 1.0);
        assert_eq!(post.post1, gp(1.0, 2.0));

        let expect = (digamma(1.0).unwrap() - 2f64.ln()).exp();
        assert!((ebgm(0, 1.0, &one).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.2807).abs() < 1e-4);
    }

    #[test]
    fn identical_components_collapse() {
        let g = gp(2.5, 0.7);
        let one = MgpsParams::single_component(g).unwrap();
        let table = DrugEventTable::from_counts(&[(0, 1.0), (3, 0.5), (12, 4.0)]).unwrap();
        for w in [0.1, 0.5, 0.9] {
            let two = MgpsParams::new(w, g, g).unwrap();
            let gap = marginal_loglik_mgps(&two, &table) - marginal_loglik_mgps(&one, &table);
            assert!(gap.abs() < 1e-12);
            assert!((ebgm(3, 0.5, &two).unwrap() - ebgm(3, 0.5, &one).unwrap()).abs() < 1e-12);
        }
        let sym = cell_posterior(4, 2.0, &MgpsParams::new(0.5, g, g).unwrap()).unwrap();
        assert!((sym.weight1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loglik_matches_term_by_term_oracle() {
        let params = MgpsParams::new(0.3, gp(0.5, 0.2), gp(4.0, 3.0)).unwrap();
        let counts = [(0u64, 0.4), (2, 1.5), (17, 3.0)];
        let table = DrugEventTable::from_counts(&counts).unwrap();
        let mut oracle = 0.0;
        for &(n, e) in &counts {
            let p = params.comp1();
            let q = params.comp2();
            let a = nb_logpmf(n, p.shape, p.rate / (p.rate + e)).unwrap().exp();
            let b = nb_logpmf(n, q.shape, q.rate / (q.rate + e)).unwrap().exp();
            oracle += (params.w() * a + (1.0 - params.w()) * b).ln();
        }
        assert!((marginal_loglik_mgps(&params, &table) - oracle).abs() < 1e-12);
    }

    #[test]
    fn canonical_order_swaps_weight() {
        let p = MgpsParams::new(0.2, gp(10.0, 1.0), gp(1.0, 1.0)).unwrap();
        assert_eq!(p.comp1(), gp(1.0, 1.0));
        assert!((p.w() - 0.8).abs() < 1e-15);
        assert!(MgpsParams::new(1.0, gp(1.0, 1.0), gp(1.0, 1.0)).is_err());
    }

    #[test]
    fn high_count_prefers_high_mean_component() {
        let params = MgpsParams::new(0.5, gp(1.0, 1.0), gp(10.0, 1.0)).unwrap();
        let post = cell_posterior(10, 1.0, &params).unwrap();
        // direct NB weight computation
        let a = nb_logpmf(10, 1.0, 0.5).unwrap().exp();
        let b = nb_logpmf(10, 10.0, 0.5).unwrap().exp();
        assert!((post.weight2() - b / (a + b)).abs() < 1e-12);
        assert!(post.weight2() > 0.9);
    }

    #[test]
    fn ebgm_concentrates_for_large_counts() {
        let params = MgpsParams::default_init();
        let v = ebgm(1000, 10.0, &params).unwrap();
        assert!((v / 100.0 - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn quantile_inverts_cdf() {
        let params = MgpsParams::new(0.4, gp(0.8, 0.5), gp(3.0, 1.0)).unwrap();
        let post = cell_posterior(3, 1.2, &params).unwrap();
        for p in [0.05, 0.5, 0.95] {
            let q = post.quantile(p).unwrap();
            assert!((post.cdf(q) - p).abs() < 1e-9);
        }
        assert!(eb05(3, 1.2, &params).unwrap() < ebgm(3, 1.2, &params).unwrap());
    }

    #[test]
    fn table_validation_and_csv_round_trip() {
        assert!(DrugEventTable::from_counts(&[(1, 0.0)]).is_err());
        let dup = vec![
            Cell { drug: "a".into(), event: "x".into(), n: 1, e: 1.0 },
            Cell { drug: "a".into(), event: "x".into(), n: 2, e: 1.0 },
        ];
        assert!(DrugEventTable::new(dup).is_err());

        let text = "drug,event,n,e\nasp,rash,3,1.25\nasp,ulcer,0,0.5\n";
        let table = DrugEventTable::read_csv(text.as_bytes()).unwrap();
        assert_eq!(table.len(), 2);
        let mut out = Vec::new();
        table.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
        assert!(DrugEventTable::read_csv("d,e,n,x\n".as_bytes()).is_err());
    }

    #[test]
    fn covariates_align_with_table() {
        let table = DrugEventTable::read_csv("drug,event,n,e\na,x,1,1\nb,y,2,1\n".as_bytes()).unwrap();
        let cov = "drug,event,age\nb,y,2.5\na,x,-1\n";
        let (names, m) = read_covariates(cov.as_bytes(), &table).unwrap();
        assert_eq!(names, vec!["age"]);
        assert_eq!((m[(0, 0)], m[(1, 0)]), (-1.0, 2.5));
        assert!(read_covariates("drug,event,age\na,x,1\n".as_bytes(), &table).is_err());
    }

    #[test]
    fn optimizer_does_not_descend_from_the_truth() {
        let truth = MgpsParams::new(0.6, gp(2.0, 4.0), gp(3.0, 0.5)).unwrap();
        let mut rng = RngStream::new(5, 0);
        let counts: Vec<(u64, f64)> = (0..400)
            .map(|_| {
                let g = if rng.uniform() < truth.w() { truth.comp1() } else { truth.comp2() };
                let lambda = rng.gamma(g.shape, g.rate);
                let e = 0.5 + 2.0 * rng.uniform();
                (rng.poisson(lambda * e), e)
            })
            .collect();
        let table = DrugEventTable::from_counts(&counts).unwrap();
        let fit = fit_type2_ml(&table, &truth, 1e-6).unwrap();
        assert!(fit.loglik >= marginal_loglik_mgps(&truth, &table));
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!((marginal_loglik_mgps(&fit.params, &table) - fit.loglik).abs() < 1e-9);
    }

    #[test]
    fn all_zero_counts_flag_degenerate_fit() {
        let counts: Vec<(u64, f64)> = (0..100).map(|_| (0, 1e-6)).collect();
        let table = DrugEventTable::from_counts(&counts).unwrap();
        let fit = fit_type2_ml(&table, &MgpsParams::default_init(), 1e-6).unwrap();
        assert!(fit.degenerate, "{:?}", fit.params);
    }

    #[test]
    fn small_tables_warn() {
        let table = DrugEventTable::from_counts(&[(1, 1.0), (4, 2.0), (0, 1.0)]).unwrap();
        let fit = fit_type2_ml(&table, &MgpsParams::default_init(), 1e-4).unwrap();
        assert!(fit.warnings.iter().any(|w| w.contains("cells")));
    }
}
