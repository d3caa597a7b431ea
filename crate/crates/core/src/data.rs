use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observations x_i ~ N(θ_i, σ²) with a common, known noise scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalMeansData {
    x: Vec<f64>,
    sigma: f64,
}

impl NormalMeansData {
    pub fn new(x: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("observation {bad} is not finite")));
        }
        Ok(Self { x, sigma })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.x.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Reads a CSV with a single `x` column; σ is supplied separately.
    pub fn read_csv<R: Read>(input: R, sigma: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.len() != 1 || &headers[0] != "x" {
            return Err(Error::domain("data file must have a single `x` column"));
        }
        let mut x = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let v: f64 = rec[0]
                .parse()
                .map_err(|_| Error::domain(format!("cannot parse '{}' as a number", &rec[0])))?;
            x.push(v);
        }
        Self::new(x, sigma)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x"])?;
        for v in &self.x {
            w.write_record([v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Hash of the exact bit patterns; used to audit that every benchmarked
    /// method sees the same dataset.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.sigma.to_bits().hash(&mut h);
        for v in &self.x {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}
