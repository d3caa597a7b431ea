use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use eblab_core::bench::{
    calibration_coverage_bench, coverage_bench, risk_bench, simulate_sparse_means,
    write_rows_csv, CalibrationScenario, Method, SparseScenario,
};
use eblab_core::calib::{
    eb_plugin_calibration, gibbs_calibration_horseshoe_with, gibbs_calibration_with,
    BiasHyperPrior, BiasPool, CalibrationDraws, StudySet, ThetaSummary,
};
use eblab_core::horseshoe::{credible_intervals, gibbs_horseshoe, HorseshoeConfig, TauSampler};
use eblab_core::mgps::{
    fit_type2_ml, read_covariates, summarize_cells, write_summaries, DrugEventTable, MgpsParams,
};
use eblab_core::npmle::{fit_npmle_with, support_prune, GridSpec, NpmleSolver};
use eblab_core::polya_gamma::pg_covariate_gibbs;
use eblab_core::poppred::{
    population_predictive_mc, variance_decomposition, NormalPrior, Population, PopulationSpec,
};
use eblab_core::rule::linspace;
use eblab_core::tweedie::{count_modes, fit_marginal, tweedie_rule};
use eblab_core::{monotonicity_diagnostic, Error, NormalMeansData, Result, RngStream};
use serde::Serialize;
use serde_json::json;

use crate::{
    CalibMethod, ChainArgs, Cli, Command, CoverageArgs, Experiment, Format, PopArgs,
    PopulationKind, RuleGridArgs, ScenarioArgs, TauSamplerArg,
};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::FitTweedie(a) => {
            let data = read_data(&a.data.input, a.data.sigma)?;
            let fit = fit_marginal(&data, a.bins, a.df)?;
            let rule = tweedie_rule(&fit, data.sigma(), &rule_grid(&a.grid, &data)?)?;
            match cli.format {
                Format::Csv => rule.write_csv(output(cli)?),
                Format::Json => {
                    let diag = monotonicity_diagnostic(&rule);
                    let modes = count_modes(&fit, rule.grid());
                    write_json(cli, &json!({ "rule": rule, "diagnostic": diag, "modes": modes }))
                }
            }
        }
        Command::FitNpmle(a) => {
            let data = read_data(&a.data.input, a.data.sigma)?;
            let grid = GridSpec::covering(&data)?;
            let grid = GridSpec::new(grid.lo, grid.hi, a.atoms)?;
            let solver = if a.em { NpmleSolver::Em } else { NpmleSolver::ConstrainedNewton };
            let fit = fit_npmle_with(&data, &grid, a.tol, a.max_iter, solver)?;
            let prior =
                if a.prune > 0.0 { support_prune(&fit.prior, a.prune)? } else { fit.prior.clone() };
            match cli.format {
                Format::Csv => prior.write_csv(output(cli)?),
                Format::Json => write_json(
                    cli,
                    &json!({
                        "atoms": prior.atoms(),
                        "weights": prior.weights(),
                        "loglik": fit.loglik(),
                        "iterations": fit.iterations,
                        "converged": fit.converged,
                    }),
                ),
            }
        }
        Command::FitHorseshoe(a) => {
            let data = read_data(&a.data.input, a.data.sigma)?;
            let mut config = chain_config(&a.chain, cli.seed);
            config.tau_fixed = a.tau;
            config.tau_sampler = match a.tau_sampler {
                TauSamplerArg::Auxiliary => TauSampler::Auxiliary,
                TauSamplerArg::Slice => TauSampler::Slice,
            };
            let draws = gibbs_horseshoe(&data, &config)?;
            match cli.format {
                Format::Csv => draws.write_long_csv(output(cli)?),
                Format::Json => {
                    let ci = credible_intervals(&draws, a.level, "theta")?;
                    let tau = draws.index_of("tau").map(|c| draws.mean(c));
                    write_json(
                        cli,
                        &json!({
                            "theta_mean": draws.means("theta"),
                            "intervals": ci,
                            "level": a.level,
                            "tau_mean": tau,
                            "draws": draws.n_draws(),
                        }),
                    )
                }
            }
        }
        Command::Mgps(a) => mgps(cli, a),
        Command::Calibrate(a) => calibrate(cli, a),
        Command::PopPredictive(a) => pop_predictive(cli, a),
        Command::RiskBench(a) => {
            let scenario = scenario(&a.scenario, cli.seed);
            let config = HorseshoeConfig {
                n_iter: a.n_iter,
                burn_in: a.burn_in,
                seed: cli.seed,
                ..Default::default()
            };
            let methods = parse_methods(&a.methods, &config)?;
            let table = risk_bench(&methods, &scenario, a.replicates)?;
            match cli.format {
                Format::Csv => write_rows_csv(&table.rows, output(cli)?),
                Format::Json => write_json(cli, &table),
            }
        }
        Command::CoverageBench(a) => coverage(cli, a),
    }
}

fn output(cli: &Cli) -> Result<Box<dyn Write>> {
    open_out(cli.out.as_deref())
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_json<T: Serialize + ?Sized>(cli: &Cli, value: &T) -> Result<()> {
    let mut out = output(cli)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn read_data(path: &Path, sigma: f64) -> Result<NormalMeansData> {
    NormalMeansData::read_csv(File::open(path)?, sigma)
}

fn rule_grid(a: &RuleGridArgs, data: &NormalMeansData) -> Result<Vec<f64>> {
    let lo = a.grid_lo.unwrap_or_else(|| data.min());
    let hi = a.grid_hi.unwrap_or_else(|| data.max());
    if !(lo < hi) || a.grid_points < 2 {
        return Err(Error::domain(format!("rule grid [{lo}, {hi}] with {} points is empty", a.grid_points)));
    }
    Ok(linspace(lo, hi, a.grid_points))
}

fn chain_config(c: &ChainArgs, seed: u64) -> HorseshoeConfig {
    HorseshoeConfig { n_iter: c.n_iter, burn_in: c.burn_in, thin: c.thin, seed, ..Default::default() }
}

fn scenario(a: &ScenarioArgs, seed: u64) -> SparseScenario {
    SparseScenario { n: a.n, sparsity: a.sparsity, signal: a.signal, sigma: a.sigma, seed }
}

fn parse_methods(tags: &[String], config: &HorseshoeConfig) -> Result<Vec<Method>> {
    tags.iter().map(|t| Method::parse(t.trim(), config)).collect()
}

fn simulate(cli: &Cli, a: &ScenarioArgs) -> Result<()> {
    let (theta, data) = simulate_sparse_means(&scenario(a, cli.seed))?;
    match cli.format {
        Format::Csv => {
            #[derive(Serialize)]
            struct Row {
                index: usize,
                theta: f64,
                x: f64,
            }
            let rows: Vec<Row> = theta
                .iter()
                .zip(data.x())
                .enumerate()
                .map(|(i, (t, x))| Row { index: i + 1, theta: *t, x: *x })
                .collect();
            write_rows_csv(&rows, output(cli)?)
        }
        Format::Json => {
            write_json(cli, &json!({ "sigma": data.sigma(), "theta": theta, "x": data.x() }))
        }
    }
}

fn mgps(cli: &Cli, a: &crate::MgpsArgs) -> Result<()> {
    let table = DrugEventTable::read_csv(File::open(&a.input)?)?;
    let fit = fit_type2_ml(&table, &MgpsParams::default_init(), a.tol)?;
    for w in &fit.warnings {
        eprintln!("eblab: warning: {w}");
    }
    let cells = summarize_cells(&table, &fit.params)?;

    let covariate = match &a.covariates {
        Some(path) => {
            let (names, design) = read_covariates(File::open(path)?, &table)?;
            let config = HorseshoeConfig {
                n_iter: a.n_iter,
                burn_in: a.burn_in,
                seed: cli.seed,
                ..Default::default()
            };
            let cov = pg_covariate_gibbs(&table, &design, a.nb_size, &config)?;
            if let Some(p) = &a.draws_out {
                cov.draws.write_long_csv(open_out(Some(p))?)?;
            }
            Some(json!({
                "names": names,
                "beta_mean": cov.draws.means("beta"),
                "tau_mean": cov.draws.index_of("tau").map(|c| cov.draws.mean(c)),
                "rank_deficient": cov.rank_deficient,
            }))
        }
        None => None,
    };

    match cli.format {
        Format::Csv => write_summaries(&cells, output(cli)?),
        Format::Json => write_json(
            cli,
            &json!({
                "params": fit.params,
                "loglik": fit.loglik,
                "converged": fit.converged,
                "degenerate": fit.degenerate,
                "warnings": fit.warnings,
                "cells": cells,
                "covariates": covariate,
            }),
        ),
    }
}

fn calibrate(cli: &Cli, a: &crate::CalibrateArgs) -> Result<()> {
    let studies = StudySet::read_csv(File::open(&a.input)?)?;
    let pool = if a.exclude_calibration { BiasPool::ObservationalOnly } else { BiasPool::Shared };
    let config = chain_config(&a.chain, cli.seed);
    let hyper = BiasHyperPrior::new(a.mu0, a.k0, a.a0, a.b0)?;
    let sampled: Option<CalibrationDraws> = match a.method {
        CalibMethod::Full => {
            Some(gibbs_calibration_with(&studies, &hyper, a.theta_prior_var, &config, pool)?)
        }
        CalibMethod::Horseshoe => {
            Some(gibbs_calibration_horseshoe_with(&studies, a.theta_prior_var, &config, pool)?)
        }
        CalibMethod::Plugin => None,
    };
    let summary = match (&sampled, a.method) {
        (Some(fit), CalibMethod::Full) => ThetaSummary::from_draws("full-bayes", fit, a.level)?,
        (Some(fit), _) => ThetaSummary::from_draws("location-horseshoe", fit, a.level)?,
        (None, _) => {
            let plug = eb_plugin_calibration(&studies, a.theta_prior_var)?;
            if plug.boundary {
                eprintln!("eblab: warning: bias variance estimate is on the zero boundary");
            }
            ThetaSummary::from_plugin(&plug, a.level, studies.experiment_only())?
        }
    };
    if summary.experiment_only {
        eprintln!("eblab: note: no observational or calibration studies; experiment-only posterior");
    }
    let line = summary.to_json_line()?;
    match cli.format {
        Format::Json => {
            let mut out = output(cli)?;
            writeln!(out, "{line}")?;
            out.flush()?;
        }
        Format::Csv => {
            match &sampled {
                Some(fit) => fit.draws.write_long_csv(output(cli)?)?,
                None => write_rows_csv(std::slice::from_ref(&summary), output(cli)?)?,
            }
            match &a.summary {
                Some(p) => {
                    let mut s = open_out(Some(p))?;
                    writeln!(s, "{line}")?;
                    s.flush()?;
                }
                None => eprintln!("{line}"),
            }
        }
    }
    Ok(())
}

fn pop_predictive(cli: &Cli, a: &PopArgs) -> Result<()> {
    let population = match a.population {
        PopulationKind::Normal => Population::Normal { mean: a.mean, sd: a.sd },
        PopulationKind::TwoPoint => Population::TwoPointMixture { c: a.c, sd: a.sd },
        PopulationKind::Custom => {
            let path = a
                .values
                .as_ref()
                .ok_or_else(|| Error::domain("custom population needs --values"))?;
            Population::Custom(NormalMeansData::read_csv(File::open(path)?, 1.0)?.x().to_vec())
        }
    };
    let spec = PopulationSpec { population, n: a.n, replicates: a.replicates };
    let prior = NormalPrior::new(a.prior_mean, a.prior_var)?;
    let summary = population_predictive_mc(&prior, a.sigma, &spec, RngStream::new(cli.seed, 0))?;
    let decomposition = variance_decomposition(&summary);
    match cli.format {
        Format::Csv => {
            summary.write_replicates_csv(output(cli)?)?;
            if let Some(p) = &a.density_out {
                summary.write_density_csv(open_out(Some(p))?)?;
            }
            Ok(())
        }
        Format::Json => write_json(
            cli,
            &json!({
                "label": "population predictive",
                "post_means": summary.post_means,
                "post_vars": summary.post_vars,
                "grid": summary.grid,
                "density": summary.density,
                "decomposition": decomposition,
            }),
        ),
    }
}

fn coverage(cli: &Cli, a: &CoverageArgs) -> Result<()> {
    let config = HorseshoeConfig {
        n_iter: a.n_iter,
        burn_in: a.burn_in,
        seed: cli.seed,
        ..Default::default()
    };
    let table = match a.experiment {
        Experiment::Sparse => {
            let methods = parse_methods(&a.methods, &config)?;
            coverage_bench(&methods, &scenario(&a.scenario, cli.seed), a.level, a.replicates)?
        }
        Experiment::Calibration => {
            let scenario = CalibrationScenario {
                theta: a.theta,
                mu: a.mu,
                gamma: a.gamma,
                exp_var: 0.04,
                n_obs: a.n_obs,
                obs_var: 0.01,
                n_calib: a.n_calib,
                calib_var: 0.01,
                seed: cli.seed,
            };
            calibration_coverage_bench(
                &scenario,
                &BiasHyperPrior::default(),
                &config,
                a.level,
                a.replicates,
            )?
        }
    };
    match cli.format {
        Format::Csv => write_rows_csv(&table.rows, output(cli)?),
        Format::Json => write_json(cli, &table),
    }
}
