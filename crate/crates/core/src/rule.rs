use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which construction produced a [`ShrinkageRule`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleMethod {
    FModel,
    NpmleG,
    Horseshoe,
    Exact,
}

impl RuleMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            RuleMethod::FModel => "FModel",
            RuleMethod::NpmleG => "NpmleG",
            RuleMethod::Horseshoe => "Horseshoe",
            RuleMethod::Exact => "Exact",
        }
    }
}

/// A tabulated posterior-mean map x ↦ E[θ | x].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageRule {
    grid: Vec<f64>,
    values: Vec<f64>,
    method: RuleMethod,
    /// Grid indices evaluated outside the fitted support (f-modeling only).
    extrapolated: Vec<usize>,
}

impl ShrinkageRule {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, method: RuleMethod) -> Result<Self> {
        Self::with_extrapolated(grid, values, method, Vec::new())
    }

    pub(crate) fn with_extrapolated(
        grid: Vec<f64>,
        values: Vec<f64>,
        method: RuleMethod,
        extrapolated: Vec<usize>,
    ) -> Result<Self> {
        check_grid(&grid)?;
        if grid.len() != values.len() {
            return Err(Error::domain(format!(
                "grid has {} points but {} values",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "rule value at x = {} is not finite",
                grid[i]
            )));
        }
        Ok(Self {
            grid,
            values,
            method,
            extrapolated,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Writes `grid,value,method_tag` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["grid", "value", "method_tag"])?;
        for (g, v) in self.grid.iter().zip(&self.values) {
            w.write_record([g.to_string(), v.to_string(), self.method.tag().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn method(&self) -> RuleMethod {
        self.method
    }

    pub fn extrapolated(&self) -> &[usize] {
        &self.extrapolated
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn sup_distance(&self, other: impl Fn(f64) -> f64) -> f64 {
        self.grid
            .iter()
            .zip(&self.values)
            .map(|(&x, &v)| (v - other(x)).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::domain("grid is empty"));
    }
    if let Some(v) = grid.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("grid point {v} is not finite")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("grid must be strictly increasing"));
    }
    Ok(())
}

/// `count` equispaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let h = (hi - lo) / (count - 1) as f64;
            (0..count)
                .map(|i| if i + 1 == count { hi } else { lo + i as f64 * h })
                .collect()
        }
    }
}

/// Decreases smaller than this (relative to the larger magnitude) are
/// treated as round-off rather than violations.
pub const MONOTONE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    /// Adjacent index pairs (i, i+1) where the rule decreases.
    pub violations: Vec<(usize, usize)>,
    pub is_monotone: bool,
    /// Largest single decrease observed (0 when monotone).
    pub max_drop: f64,
}

/// Any posterior mean under Gaussian noise is nondecreasing in x, so a
/// decrease certifies that `rule` is not a Bayes rule for any prior.
pub fn monotonicity_diagnostic(rule: &ShrinkageRule) -> DiagnosticReport {
    let mut violations = Vec::new();
    let mut max_drop: f64 = 0.0;
    for (i, w) in rule.values.windows(2).enumerate() {
        let drop = w[0] - w[1];
        let slack = MONOTONE_TOLERANCE * w[0].abs().max(w[1].abs()).max(1.0);
        if drop > slack {
            violations.push((i, i + 1));
            max_drop = max_drop.max(drop);
        }
    }
    DiagnosticReport {
        is_monotone: violations.is_empty(),
        violations,
        max_drop,
    }
}
