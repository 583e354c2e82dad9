//! Rewrite a trained rectifier network as an explicit system of linear
//! inequalities.
//!
//! A network with K hidden units accepts an input exactly when, for every
//! nonempty subset S of units, `1 - sum_{k in S} (w_k . psi + b_k) >= 0`.
//! Each subset therefore yields one inequality with weights `-sum_{k in S} w_k`
//! and bias `1 - sum_{k in S} b_k`. The equivalence holds because the subset
//! of units with nonnegative activations is the one that binds.

use crate::error::{Error, Result};
use crate::rectifier::{parse_floats, sgn, ConstraintNet};
use std::fmt::Write as _;
use std::path::Path;

/// Slack below zero that still counts as satisfied, absorbing float rounding
/// in dot products.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

/// Hidden layers wider than this would need more than a million inequalities.
pub const MAX_EXTRACT_HIDDEN: usize = 20;

/// One inequality `weights . psi + bias >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInequality {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Bitmask over hidden units recording which subset produced this row;
    /// zero for rows that were authored directly rather than extracted.
    pub subset_mask: u32,
}

impl LinearInequality {
    /// Signed slack of the inequality at `psi`; negative means violated.
    pub fn margin(&self, psi: &[f64]) -> f64 {
        self.weights.iter().zip(psi).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    /// Whether the inequality holds at `psi` up to [`FEASIBILITY_TOLERANCE`].
    pub fn is_satisfied(&self, psi: &[f64]) -> bool {
        self.margin(psi) >= -FEASIBILITY_TOLERANCE
    }
}

/// An ordered collection of inequalities over a fixed feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    pub input_dim: usize,
    pub inequalities: Vec<LinearInequality>,
    /// Free-form provenance string, e.g. the feature template the system was
    /// learned for. Decoders use it to recover the template.
    pub origin: String,
}

impl ConstraintSystem {
    /// Build a system, checking that every row matches `input_dim`.
    pub fn new(input_dim: usize, inequalities: Vec<LinearInequality>, origin: impl Into<String>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidParameter("input_dim must be at least 1".into()));
        }
        for row in &inequalities {
            if row.weights.len() != input_dim {
                return Err(Error::DimensionMismatch { expected: input_dim, actual: row.weights.len() });
            }
        }
        Ok(ConstraintSystem { input_dim, inequalities, origin: origin.into() })
    }

    pub fn len(&self) -> usize {
        self.inequalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inequalities.is_empty()
    }

    fn check_dim(&self, psi: &[f64]) -> Result<()> {
        if psi.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, actual: psi.len() });
        }
        Ok(())
    }

    /// Fraction of inequalities satisfied at `psi`; 1.0 for an empty system.
    pub fn satisfied_fraction(&self, psi: &[f64]) -> Result<f64> {
        self.check_dim(psi)?;
        if self.inequalities.is_empty() {
            return Ok(1.0);
        }
        let hits = self.inequalities.iter().filter(|r| r.is_satisfied(psi)).count();
        Ok(hits as f64 / self.inequalities.len() as f64)
    }

    /// Serialize to the text format accepted by [`ConstraintSystem::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("format_version: 1\n");
        let _ = writeln!(out, "input_dim: {}", self.input_dim);
        let _ = writeln!(out, "origin: {}", self.origin);
        let _ = writeln!(out, "inequalities: {}", self.inequalities.len());
        for row in &self.inequalities {
            let _ = write!(out, "{} {:.16e}", row.subset_mask, row.bias);
            for w in &row.weights {
                let _ = write!(out, " {w:.16e}");
            }
            out.push('\n');
        }
        out
    }

    /// Parse the text format produced by [`ConstraintSystem::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut expect = |key: &str| -> Result<(usize, String)> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("missing {key:?} line")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(':'))
                .ok_or_else(|| Error::parse(n + 1, format!("expected {key:?} line, got {line:?}")))?;
            Ok((n + 1, rest.trim().to_string()))
        };
        let (line, version) = expect("format_version")?;
        if version != "1" {
            return Err(Error::parse(line, format!("unsupported format version {version:?}")));
        }
        let (line, d) = expect("input_dim")?;
        let input_dim: usize = d.parse().map_err(|_| Error::parse(line, "input_dim must be an integer"))?;
        let (_, origin) = expect("origin")?;
        let (line, n) = expect("inequalities")?;
        let count: usize = n.parse().map_err(|_| Error::parse(line, "inequalities must be an integer"))?;
        let mut inequalities = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, row_line) = lines
                .next()
                .ok_or_else(|| Error::parse(line, format!("expected {count} inequality rows")))?;
            let values = parse_floats(row_line, n + 1)?;
            if values.len() != input_dim + 2 {
                return Err(Error::parse(
                    n + 1,
                    format!("expected mask, bias and {input_dim} weights, got {} fields", values.len()),
                ));
            }
            let mask = values[0];
            if mask < 0.0 || mask.fract() != 0.0 || mask > u32::MAX as f64 {
                return Err(Error::parse(n + 1, format!("invalid subset mask {mask}")));
            }
            inequalities.push(LinearInequality {
                subset_mask: mask as u32,
                bias: values[1],
                weights: values[2..].to_vec(),
            });
        }
        ConstraintSystem::new(input_dim, inequalities, origin)
    }

    /// Write the system atomically to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, &self.to_text())
    }

    /// Read a system from `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ConstraintSystem::from_text(&text)
    }
}

/// Convert a trained network into its equivalent inequality system. Rows are
/// ordered by ascending subset bitmask, so row `mask - 1` corresponds to the
/// subset encoded by `mask`.
pub fn extract_system(net: &ConstraintNet) -> Result<ConstraintSystem> {
    let k = net.hidden_count();
    if k > MAX_EXTRACT_HIDDEN {
        return Err(Error::SubsetEnumerationTooLarge { hidden_count: k, limit: MAX_EXTRACT_HIDDEN });
    }
    let d = net.input_dim();
    let total = (1u32 << k) - 1;
    let mut rows: Vec<LinearInequality> = Vec::with_capacity(total as usize);
    for mask in 1..=total {
        let low = mask & mask.wrapping_neg();
        let unit = low.trailing_zeros() as usize;
        let rest = mask ^ low;
        let mut row = if rest == 0 {
            // Single-unit subset: weights = -w_k, bias = 1 - b_k.
            LinearInequality {
                weights: vec![0.0; d],
                bias: 1.0 - net.biases()[unit],
                subset_mask: mask,
            }
        } else {
            // Extend the already-built subset without its lowest unit.
            let prev = &rows[rest as usize - 1];
            LinearInequality {
                weights: prev.weights.clone(),
                bias: prev.bias - net.biases()[unit],
                subset_mask: mask,
            }
        };
        for (w, v) in row.weights.iter_mut().zip(&net.weights()[unit]) {
            *w -= v;
        }
        rows.push(row);
    }
    ConstraintSystem::new(d, rows, format!("net:hidden={k}"))
}

/// Whether every inequality of the system holds at `psi`. An empty system is
/// trivially feasible.
pub fn is_feasible(system: &ConstraintSystem, psi: &[f64]) -> Result<bool> {
    system.check_dim(psi)?;
    Ok(system.inequalities.iter().all(|row| row.is_satisfied(psi)))
}

/// Indices and violation magnitudes of all unsatisfied inequalities, most
/// violated first (ties broken by ascending index).
pub fn violated_indices(system: &ConstraintSystem, psi: &[f64]) -> Result<Vec<(usize, f64)>> {
    system.check_dim(psi)?;
    let mut out: Vec<(usize, f64)> = system
        .inequalities
        .iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let margin = row.margin(psi);
            if margin < -FEASIBILITY_TOLERANCE {
                Some((i, -margin))
            } else {
                None
            }
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Logical-and over +1/-1 values expressed with the sign trick:
/// `sgn(1 - K + sum_k c_k)` is +1 exactly when every value is +1.
pub fn conjunction_eval(values: &[i32]) -> Result<i32> {
    if values.is_empty() {
        return Err(Error::EmptyInput("conjunction values"));
    }
    let mut sum = 0i64;
    for &v in values {
        if v != 1 && v != -1 {
            return Err(Error::InvalidSign(v));
        }
        sum += v as i64;
    }
    Ok(sgn((1 - values.len() as i64 + sum) as f64))
}

/// Conjunction of K linear threshold units: +1 exactly when every unit fires,
/// i.e. `sgn(1 - K + sum_k sgn(w_k . psi + b_k))`.
pub fn threshold_net_eval(weights: &[Vec<f64>], biases: &[f64], psi: &[f64]) -> Result<i32> {
    if weights.len() != biases.len() {
        return Err(Error::LengthMismatch { left: weights.len(), right: biases.len() });
    }
    let mut sum = 0i64;
    for (w, b) in weights.iter().zip(biases) {
        if w.len() != psi.len() {
            return Err(Error::DimensionMismatch { expected: psi.len(), actual: w.len() });
        }
        let a = w.iter().zip(psi).map(|(x, y)| x * y).sum::<f64>() + b;
        sum += sgn(a) as i64;
    }
    Ok(sgn((1 - weights.len() as i64 + sum) as f64))
}
