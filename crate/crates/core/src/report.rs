//! Residual rows, suite reports and their CSV/JSON serialization.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};
use crate::Result;

/// Tolerance for identities involving curvature or derivatives of Θ.
pub const TOL_CURVATURE: f64 = 1e-9;
/// Tolerance for pointwise algebraic identities.
pub const TOL_ALGEBRAIC: f64 = 1e-11;

/// `max|lhs − rhs| / scale`; zero when the difference vanishes exactly and
/// absolute when `scale` is zero.
pub fn residual<S: Scalar, T: Scalar>(lhs: &Tensor<S>, rhs: &Tensor<T>, scale: f64) -> f64 {
    let diff = crate::tensor::max_diff(lhs, rhs);
    relative(diff, scale.max(lhs.max_abs()).max(rhs.max_abs()))
}

/// Residual of a tensor that should vanish, relative to `scale`.
pub fn residual_zero<S: Scalar>(t: &Tensor<S>, scale: f64) -> f64 {
    relative(t.max_abs(), scale)
}

pub fn relative(diff: f64, scale: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Largest magnitude among several terms, used to normalize residuals.
pub fn scale_of<S: Scalar>(terms: &[&Tensor<S>]) -> f64 {
    terms.iter().map(|t| t.max_abs()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub id: String,
    pub anchor: String,
    pub dim: usize,
    pub seed: u64,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Row {
    pub fn new(id: &str, dim: usize, seed: u64, residual: f64, tol: f64) -> Self {
        Row {
            id: id.to_string(),
            anchor: anchor_of(id).to_string(),
            dim,
            seed,
            residual,
            tol,
            pass: residual.is_finite() && residual <= tol,
        }
    }
}

/// The label an identity id belongs to: everything before the first `.`.
pub fn anchor_of(id: &str) -> &str {
    id.split('.').next().unwrap_or(id)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    /// Worst residual-to-tolerance ratio per identity id.
    pub worst: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub seed_policy: String,
}

impl Default for Environment {
    fn default() -> Self {
        Environment {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed_policy: "ChaCha8 seeded by (seed, stream); stream = dimension".to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<Row>,
    pub summary: Summary,
    pub environment: Environment,
}

impl Report {
    pub fn from_rows(rows: Vec<Row>) -> Self {
        let mut r = Report {
            rows,
            ..Default::default()
        };
        r.summarize();
        r
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = Row>) {
        self.rows.extend(rows);
        self.summarize();
    }

    pub fn summarize(&mut self) {
        let mut s = Summary::default();
        for row in &self.rows {
            s.total += 1;
            if row.pass {
                s.passed += 1;
            } else {
                s.failed += 1;
            }
            let ratio = if row.tol > 0.0 { row.residual / row.tol } else { row.residual };
            let e = s.worst.entry(row.id.clone()).or_insert(0.0);
            if !(ratio <= *e) {
                *e = ratio;
            }
        }
        self.summary = s;
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| !r.pass)
    }

    /// Largest residual among rows whose id starts with `prefix`.
    pub fn worst_residual(&self, prefix: &str) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.id.starts_with(prefix))
            .map(|r| r.residual)
            .fold(0.0, |a, b| if b.is_nan() || b > a { b } else { a })
    }

    /// Columns: `id, anchor, dim, seed, residual, tol, pass`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wr.serialize(row).map_err(|e| crate::Error::Invalid(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn save(&self, csv_path: Option<&Path>, json_path: Option<&Path>) -> Result<()> {
        if let Some(p) = csv_path {
            self.write_csv(std::fs::File::create(p)?)?;
        }
        if let Some(p) = json_path {
            self.write_json(std::fs::File::create(p)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_conventions() {
        let a = Tensor::<f64>::identity(2);
        assert_eq!(residual(&a, &a, 0.0), 0.0);
        let b = a.scale(1.0 + 1e-10);
        assert!((residual(&a, &b, 0.0) - 1e-10).abs() < 1e-15);
        let z = Tensor::<f64>::zeros(2, a.variance());
        assert_eq!(residual_zero(&z.scale(2.0), 0.0), 0.0);
    }

    #[test]
    fn rows_and_summary() {
        let r = Report::from_rows(vec![
            Row::new("lem:ThetaPsi.2a", 4, 0, 1e-13, TOL_ALGEBRAIC),
            Row::new("lem:ThetaPsi.2a", 4, 1, 1e-3, TOL_ALGEBRAIC),
            Row::new("prop:RmOmega", 6, 0, f64::NAN, TOL_CURVATURE),
        ]);
        assert_eq!(r.rows[0].anchor, "lem:ThetaPsi");
        assert_eq!((r.summary.passed, r.summary.failed), (1, 2));
        assert!(!r.all_pass());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,anchor,dim,seed,residual,tol,pass"));
    }
}
