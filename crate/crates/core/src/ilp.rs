//! Binary integer linear programs: family generation, an exact
//! branch-and-bound solver, and evaluation of learned constraint systems
//! against the constraints that actually generated the data.
//!
//! A family shares one feasible region `{ z in {0,1}^n : A z >= b }` across
//! many instances that differ only in their cost vector; each instance asks
//! for `argmin_z c . z` subject to those constraints.

use crate::error::{Error, Result};
use crate::extraction::{ConstraintSystem, FEASIBILITY_TOLERANCE};
use crate::features::GeneratedDataset;
use crate::rectifier::{classification_accuracy, parse_floats, ConstraintNet, LabeledFeatureExample};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

/// One program of a family: minimize `costs . z` over the shared region.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpInstance {
    pub costs: Vec<f64>,
    /// Seed of the family the instance belongs to.
    pub family_id: u64,
}

/// The shared constraints `matrix . z >= bounds`, one row per constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedConstraints {
    pub matrix: Vec<Vec<f64>>,
    pub bounds: Vec<f64>,
}

impl SharedConstraints {
    pub fn new(matrix: Vec<Vec<f64>>, bounds: Vec<f64>) -> Result<Self> {
        if matrix.len() != bounds.len() {
            return Err(Error::LengthMismatch { left: matrix.len(), right: bounds.len() });
        }
        if let Some(first) = matrix.first() {
            let n = first.len();
            for row in &matrix {
                if row.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, actual: row.len() });
                }
            }
        }
        Ok(SharedConstraints { matrix, bounds })
    }

    pub fn constraint_count(&self) -> usize {
        self.matrix.len()
    }

    pub fn variable_count(&self) -> Option<usize> {
        self.matrix.first().map(|r| r.len())
    }

    /// Fraction of the constraint rows satisfied by `z` (1.0 when empty).
    pub fn satisfied_fraction(&self, z: &[u8]) -> f64 {
        if self.matrix.is_empty() {
            return 1.0;
        }
        let hits = self
            .matrix
            .iter()
            .zip(&self.bounds)
            .filter(|(row, b)| {
                let dot: f64 = row.iter().zip(z).map(|(w, &zi)| w * zi as f64).sum();
                dot >= **b - FEASIBILITY_TOLERANCE
            })
            .count();
        hits as f64 / self.matrix.len() as f64
    }

    pub fn is_satisfied(&self, z: &[u8]) -> bool {
        self.satisfied_fraction(z) == 1.0
    }
}

/// Outcome of an exact solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

/// Solver result; `assignment` and `objective` are meaningful only when the
/// status is [`SolveStatus::Optimal`].
#[derive(Debug, Clone, PartialEq)]
pub struct IlpSolution {
    pub assignment: Vec<u8>,
    pub objective: f64,
    pub status: SolveStatus,
}

/// Which feasible region to solve over.
#[derive(Debug, Clone, Copy)]
pub enum IlpConstraintSet<'a> {
    /// The whole cube {0,1}^n.
    Unconstrained,
    /// The generating constraints `A z >= b`.
    Shared(&'a SharedConstraints),
    /// A learned inequality system `W z + bias >= 0`.
    Learned(&'a ConstraintSystem),
}

/// Generate a family: one shared random constraint set plus `count` cost
/// vectors. The region is guaranteed nonempty because the bounds are slacked
/// around a random witness assignment. Deterministic in `seed`.
pub fn generate_family(n: usize, m: usize, count: usize, seed: u64) -> Result<(SharedConstraints, Vec<IlpInstance>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let witness: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    let slack_hi = 0.5 * (n as f64).sqrt();
    let bounds: Vec<f64> = matrix
        .iter()
        .map(|row| {
            let dot: f64 = row.iter().zip(&witness).map(|(w, &z)| w * z as f64).sum();
            dot - rng.random_range(0.0..slack_hi)
        })
        .collect();
    let shared = SharedConstraints::new(matrix, bounds)?;
    let instances: Vec<IlpInstance> = (0..count)
        .map(|_| IlpInstance {
            costs: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            family_id: seed,
        })
        .collect();
    Ok((shared, instances))
}

/// An inequality `weights . z + bias >= 0` prepared for the solver.
struct SolverRow {
    weights: Vec<f64>,
    bias: f64,
    /// `pos_suffix[t]` = sum of positive weights at positions >= t: the most
    /// the still-unassigned variables can add to the row's slack.
    pos_suffix: Vec<f64>,
}

impl SolverRow {
    fn new(weights: Vec<f64>, bias: f64) -> Self {
        let n = weights.len();
        let mut pos_suffix = vec![0.0; n + 1];
        for t in (0..n).rev() {
            pos_suffix[t] = pos_suffix[t + 1] + weights[t].max(0.0);
        }
        SolverRow { weights, bias, pos_suffix }
    }
}

struct Dfs<'a> {
    /// Costs in branching order (high magnitude first).
    costs: &'a [f64],
    /// `order[t]` = original variable index branched on at depth t.
    order: &'a [usize],
    /// `suffix_min[t]` = sum of negative costs at depths >= t: the best the
    /// remaining variables can still subtract from the objective.
    suffix_min: Vec<f64>,
    rows: Vec<SolverRow>,
    /// Working assignment in original variable order.
    assignment: Vec<u8>,
    dots: Vec<f64>,
    best: Option<(f64, Vec<u8>)>,
}

impl Dfs<'_> {
    fn run(&mut self, t: usize, prefix_obj: f64) {
        if let Some((best_obj, _)) = &self.best {
            // Strictly worse subtrees are cut; equal-value ones are explored
            // because they may hold a lexicographically smaller tie.
            if prefix_obj + self.suffix_min[t] > *best_obj {
                return;
            }
        }
        for (row, dot) in self.rows.iter().zip(&self.dots) {
            // Most optimistic slack this row can still reach; at t == n this
            // is exact, so any surviving leaf is feasible.
            if dot + row.pos_suffix[t] + row.bias < -FEASIBILITY_TOLERANCE {
                return;
            }
        }
        let n = self.costs.len();
        if t == n {
            let better = match &self.best {
                None => true,
                Some((best_obj, best_asg)) => {
                    prefix_obj < *best_obj
                        || (prefix_obj == *best_obj && self.assignment < *best_asg)
                }
            };
            if better {
                self.best = Some((prefix_obj, self.assignment.clone()));
            }
            return;
        }
        // Diving on the improving value first reaches a strong incumbent on
        // the very first descent, which lets the objective bound prune hard.
        let cost = self.costs[t];
        let dive = u8::from(cost < 0.0);
        for value in [dive, 1 - dive] {
            self.assignment[self.order[t]] = value;
            if value == 1 {
                for (row, dot) in self.rows.iter().zip(self.dots.iter_mut()) {
                    *dot += row.weights[t];
                }
            }
            self.run(t + 1, prefix_obj + if value == 1 { cost } else { 0.0 });
            if value == 1 {
                for (row, dot) in self.rows.iter().zip(self.dots.iter_mut()) {
                    *dot -= row.weights[t];
                }
            }
        }
    }
}

/// Solve `min costs . z` over {0,1}^n under the given constraints, exactly.
/// Depth-first branch and bound; ties in the objective resolve to the
/// lexicographically smallest assignment.
pub fn solve_exact(instance: &IlpInstance, constraints: &IlpConstraintSet) -> Result<IlpSolution> {
    let n = instance.costs.len();
    if n == 0 {
        return Err(Error::EmptyInput("cost vector"));
    }
    let raw_rows: Vec<(Vec<f64>, f64)> = match constraints {
        IlpConstraintSet::Unconstrained => Vec::new(),
        IlpConstraintSet::Shared(shared) => {
            if let Some(width) = shared.variable_count() {
                if width != n {
                    return Err(Error::DimensionMismatch { expected: n, actual: width });
                }
            }
            shared
                .matrix
                .iter()
                .zip(&shared.bounds)
                .map(|(row, b)| (row.clone(), -b))
                .collect()
        }
        IlpConstraintSet::Learned(system) => {
            if system.input_dim != n {
                return Err(Error::DimensionMismatch { expected: n, actual: system.input_dim });
            }
            system
                .inequalities
                .iter()
                .map(|ineq| (ineq.weights.clone(), ineq.bias))
                .collect()
        }
    };

    // Branch on high-magnitude costs first: deviating from the improving
    // value near the root opens a large objective gap, so those subtrees are
    // cut immediately once an incumbent exists.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        instance.costs[b]
            .abs()
            .total_cmp(&instance.costs[a].abs())
            .then(a.cmp(&b))
    });
    let costs: Vec<f64> = order.iter().map(|&i| instance.costs[i]).collect();

    // Rows no assignment can violate are dead weight; rows no assignment can
    // satisfy decide the whole program. Both checks preserve exactness.
    let mut rows = Vec::new();
    for (weights, bias) in raw_rows {
        let min_slack: f64 = weights.iter().map(|w| w.min(0.0)).sum::<f64>() + bias;
        let max_slack: f64 = weights.iter().map(|w| w.max(0.0)).sum::<f64>() + bias;
        if max_slack < -FEASIBILITY_TOLERANCE {
            return Ok(IlpSolution { assignment: Vec::new(), objective: 0.0, status: SolveStatus::Infeasible });
        }
        if min_slack >= -FEASIBILITY_TOLERANCE {
            continue;
        }
        let permuted: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
        rows.push(SolverRow::new(permuted, bias));
    }

    let mut suffix_min = vec![0.0; n + 1];
    for t in (0..n).rev() {
        suffix_min[t] = suffix_min[t + 1] + costs[t].min(0.0);
    }
    let mut dfs = Dfs {
        costs: &costs,
        order: &order,
        suffix_min,
        dots: vec![0.0; rows.len()],
        rows,
        assignment: vec![0; n],
        best: None,
    };
    dfs.run(0, 0.0);
    match dfs.best {
        Some((objective, assignment)) => Ok(IlpSolution { assignment, objective, status: SolveStatus::Optimal }),
        None => Ok(IlpSolution { assignment: Vec::new(), objective: 0.0, status: SolveStatus::Infeasible }),
    }
}

/// Turn solved instances into a two-class dataset: each gold assignment is a
/// positive example; flipping one bit in the direction that strictly improves
/// the objective leaves the feasible region (otherwise the solver would have
/// taken it), which makes the flipped assignment a negative example.
pub fn make_training_pairs(instances: &[IlpInstance], solutions: &[IlpSolution]) -> Result<GeneratedDataset> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("instances"));
    }
    if instances.len() != solutions.len() {
        return Err(Error::LengthMismatch { left: instances.len(), right: solutions.len() });
    }
    let n = instances[0].costs.len();
    let mut pos_seen = HashSet::new();
    let mut positives = Vec::new();
    for (instance, solution) in instances.iter().zip(solutions) {
        if solution.status != SolveStatus::Optimal {
            return Err(Error::InvalidParameter(
                "cannot build training pairs from an infeasible solve".into(),
            ));
        }
        if instance.costs.len() != n || solution.assignment.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: solution.assignment.len() });
        }
        if pos_seen.insert(solution.assignment.clone()) {
            let psi: Vec<f64> = solution.assignment.iter().map(|&z| z as f64).collect();
            positives.push(LabeledFeatureExample::new(psi, 1)?);
        }
    }
    let mut neg_seen = HashSet::new();
    let mut negatives = Vec::new();
    for (instance, solution) in instances.iter().zip(solutions) {
        for i in 0..n {
            let z = solution.assignment[i];
            let improves = (instance.costs[i] > 0.0 && z == 1) || (instance.costs[i] < 0.0 && z == 0);
            if !improves {
                continue;
            }
            let mut flipped = solution.assignment.clone();
            flipped[i] = 1 - z;
            if pos_seen.contains(&flipped) || !neg_seen.insert(flipped.clone()) {
                continue;
            }
            let psi: Vec<f64> = flipped.iter().map(|&z| z as f64).collect();
            negatives.push(LabeledFeatureExample::new(psi, -1)?);
        }
    }
    if negatives.is_empty() {
        return Err(Error::DegenerateTemplate);
    }
    GeneratedDataset::new(positives, negatives, None, n)
}

/// How well a learned system recovers the behaviour of the generating
/// constraints on held-out instances. All rates are percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryMetrics {
    pub instances: usize,
    /// Network accuracy on pairs built from the held-out instances.
    pub classification_acc: f64,
    /// Mean per-bit agreement between learned-constraint and gold solutions.
    pub bitwise_acc: f64,
    /// Mean fraction of the generating constraints satisfied by
    /// learned-constraint solutions.
    pub original_satisfied: f64,
    /// Mean fraction of learned inequalities satisfied by gold solutions.
    pub learned_satisfied: f64,
    /// Per-bit agreement of unconstrained solutions with gold.
    pub baseline_bitwise_acc: f64,
    /// Generating-constraint satisfaction of unconstrained solutions.
    pub baseline_original_satisfied: f64,
    /// Instances where the learned region was empty and the solver fell back
    /// to the unconstrained solution.
    pub fallback_instances: Vec<usize>,
}

fn bit_agreement(a: &[u8], b: &[u8]) -> f64 {
    let hits = a.iter().zip(b).filter(|(x, y)| x == y).count();
    hits as f64 / a.len() as f64
}

/// Evaluate a learned system on held-out instances: solve each instance under
/// the generating constraints (gold), under the learned system (falling back
/// to unconstrained when the learned region is empty), and unconstrained.
pub fn evaluate_recovery(
    test_instances: &[IlpInstance],
    shared: &SharedConstraints,
    learned: &ConstraintSystem,
    net: &ConstraintNet,
) -> Result<RecoveryMetrics> {
    if test_instances.is_empty() {
        return Err(Error::EmptyInput("test instances"));
    }
    let golds: Vec<IlpSolution> = test_instances
        .par_iter()
        .map(|inst| solve_exact(inst, &IlpConstraintSet::Shared(shared)))
        .collect::<Result<_>>()?;
    for (i, g) in golds.iter().enumerate() {
        if g.status != SolveStatus::Optimal {
            return Err(Error::InvalidParameter(format!(
                "generating constraints are infeasible on test instance {i}"
            )));
        }
    }
    let pairs = make_training_pairs(test_instances, &golds)?;
    let classification_acc = 100.0 * classification_accuracy(net, &pairs.combined())?;

    let learned_solutions: Vec<IlpSolution> = test_instances
        .par_iter()
        .map(|inst| solve_exact(inst, &IlpConstraintSet::Learned(learned)))
        .collect::<Result<_>>()?;
    let baselines: Vec<IlpSolution> = test_instances
        .par_iter()
        .map(|inst| solve_exact(inst, &IlpConstraintSet::Unconstrained))
        .collect::<Result<_>>()?;

    let mut fallback_instances = Vec::new();
    let mut bitwise = 0.0;
    let mut original = 0.0;
    let mut learned_sat = 0.0;
    let mut base_bitwise = 0.0;
    let mut base_original = 0.0;
    for (i, ((gold, pred), base)) in golds.iter().zip(&learned_solutions).zip(&baselines).enumerate() {
        let pred = if pred.status == SolveStatus::Optimal {
            pred
        } else {
            fallback_instances.push(i);
            base
        };
        bitwise += bit_agreement(&pred.assignment, &gold.assignment);
        original += shared.satisfied_fraction(&pred.assignment);
        let gold_psi: Vec<f64> = gold.assignment.iter().map(|&z| z as f64).collect();
        learned_sat += learned.satisfied_fraction(&gold_psi)?;
        base_bitwise += bit_agreement(&base.assignment, &gold.assignment);
        base_original += shared.satisfied_fraction(&base.assignment);
    }
    let count = test_instances.len() as f64;
    Ok(RecoveryMetrics {
        instances: test_instances.len(),
        classification_acc,
        bitwise_acc: 100.0 * bitwise / count,
        original_satisfied: 100.0 * original / count,
        learned_satisfied: 100.0 * learned_sat / count,
        baseline_bitwise_acc: 100.0 * base_bitwise / count,
        baseline_original_satisfied: 100.0 * base_original / count,
        fallback_instances,
    })
}

/// A family with its instances and optional gold assignments, as stored on
/// disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyFile {
    pub shared: SharedConstraints,
    pub instances: Vec<IlpInstance>,
    /// One entry per instance; `None` when the instance is unsolved.
    pub golds: Vec<Option<Vec<u8>>>,
}

impl FamilyFile {
    pub fn new(shared: SharedConstraints, instances: Vec<IlpInstance>, golds: Vec<Option<Vec<u8>>>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyInput("instances"));
        }
        if golds.len() != instances.len() {
            return Err(Error::LengthMismatch { left: instances.len(), right: golds.len() });
        }
        Ok(FamilyFile { shared, instances, golds })
    }

    /// Family without gold assignments.
    pub fn unsolved(shared: SharedConstraints, instances: Vec<IlpInstance>) -> Result<Self> {
        let golds = vec![None; instances.len()];
        FamilyFile::new(shared, instances, golds)
    }

    pub fn to_text(&self) -> String {
        let n = self.instances[0].costs.len();
        let mut out = String::new();
        out.push_str("format_version: 1\n");
        let _ = writeln!(out, "n: {n}");
        let _ = writeln!(out, "m: {}", self.shared.constraint_count());
        let _ = writeln!(out, "family_id: {}", self.instances[0].family_id);
        out.push_str("matrix:\n");
        for row in &self.shared.matrix {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                let _ = write!(out, "{v:.16e}");
                first = false;
            }
            out.push('\n');
        }
        out.push_str("bounds:");
        for v in &self.shared.bounds {
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
        let _ = writeln!(out, "instances: {}", self.instances.len());
        for (instance, gold) in self.instances.iter().zip(&self.golds) {
            out.push_str("costs:");
            for v in &instance.costs {
                let _ = write!(out, " {v:.16e}");
            }
            out.push('\n');
            if let Some(gold) = gold {
                out.push_str("gold:");
                for z in gold {
                    let _ = write!(out, " {z}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        fn field(lines: &[&str], at: &mut usize, key: &str) -> Result<String> {
            let line = lines
                .get(*at)
                .ok_or_else(|| Error::parse(*at, format!("missing {key:?} line")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(':'))
                .ok_or_else(|| Error::parse(*at + 1, format!("expected {key:?} line, got {line:?}")))?;
            *at += 1;
            Ok(rest.trim().to_string())
        }
        let lines: Vec<&str> = text.lines().collect();
        let mut at = 0usize;
        if field(&lines, &mut at, "format_version")? != "1" {
            return Err(Error::parse(at, "unsupported format version"));
        }
        let n: usize =
            field(&lines, &mut at, "n")?.parse().map_err(|_| Error::parse(at, "n must be an integer"))?;
        let m: usize =
            field(&lines, &mut at, "m")?.parse().map_err(|_| Error::parse(at, "m must be an integer"))?;
        let family_id: u64 = field(&lines, &mut at, "family_id")?
            .parse()
            .map_err(|_| Error::parse(at, "family_id must be an integer"))?;
        if field(&lines, &mut at, "matrix")? != "" {
            return Err(Error::parse(at, "matrix header takes no value"));
        }
        let mut matrix = Vec::with_capacity(m);
        for _ in 0..m {
            let line = lines.get(at).ok_or_else(|| Error::parse(at, "missing matrix row"))?;
            let row = parse_floats(line, at + 1)?;
            if row.len() != n {
                return Err(Error::parse(at + 1, format!("expected {n} entries, got {}", row.len())));
            }
            matrix.push(row);
            at += 1;
        }
        let bounds = parse_floats(&field(&lines, &mut at, "bounds")?, at)?;
        if bounds.len() != m {
            return Err(Error::parse(at, format!("expected {m} bounds, got {}", bounds.len())));
        }
        let count: usize = field(&lines, &mut at, "instances")?
            .parse()
            .map_err(|_| Error::parse(at, "instances must be an integer"))?;
        let mut instances = Vec::with_capacity(count);
        let mut golds = Vec::with_capacity(count);
        for _ in 0..count {
            let costs = parse_floats(&field(&lines, &mut at, "costs")?, at)?;
            if costs.len() != n {
                return Err(Error::parse(at, format!("expected {n} costs, got {}", costs.len())));
            }
            instances.push(IlpInstance { costs, family_id });
            let is_gold = lines.get(at).map(|l| l.starts_with("gold:")).unwrap_or(false);
            if is_gold {
                let gold_line = field(&lines, &mut at, "gold")?;
                let bits: Vec<u8> = gold_line
                    .split_whitespace()
                    .map(|tok| match tok {
                        "0" => Ok(0u8),
                        "1" => Ok(1u8),
                        other => Err(Error::parse(at, format!("invalid assignment bit {other:?}"))),
                    })
                    .collect::<Result<_>>()?;
                if bits.len() != n {
                    return Err(Error::parse(at, format!("expected {n} bits, got {}", bits.len())));
                }
                golds.push(Some(bits));
            } else {
                golds.push(None);
            }
        }
        FamilyFile::new(SharedConstraints::new(matrix, bounds)?, instances, golds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FamilyFile::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::LinearInequality;
    use proptest::prelude::*;

    fn instance(costs: &[f64]) -> IlpInstance {
        IlpInstance { costs: costs.to_vec(), family_id: 0 }
    }

    /// Enumeration oracle: walk all 2^n assignments with a Gray code,
    /// maintaining the objective and row activations incrementally.
    fn brute_force(costs: &[f64], rows: &[(Vec<f64>, f64)]) -> Option<f64> {
        let n = costs.len();
        let mut z = vec![0u8; n];
        let mut obj = 0.0;
        let mut dots: Vec<f64> = rows.iter().map(|_| 0.0).collect();
        let feasible = |dots: &[f64]| {
            rows.iter()
                .zip(dots)
                .all(|((_, bias), dot)| dot + bias >= -FEASIBILITY_TOLERANCE)
        };
        let mut best: Option<f64> = feasible(&dots).then_some(obj);
        for i in 1u64..(1u64 << n) {
            let bit = i.trailing_zeros() as usize;
            if z[bit] == 0 {
                z[bit] = 1;
                obj += costs[bit];
                for ((w, _), dot) in rows.iter().zip(dots.iter_mut()) {
                    *dot += w[bit];
                }
            } else {
                z[bit] = 0;
                obj -= costs[bit];
                for ((w, _), dot) in rows.iter().zip(dots.iter_mut()) {
                    *dot -= w[bit];
                }
            }
            if feasible(&dots) && best.map_or(true, |b| obj < b) {
                best = Some(obj);
            }
        }
        best
    }

    #[test]
    fn unconstrained_solver_takes_every_negative_cost() {
        let sol = solve_exact(&instance(&[1.0, -1.0, 0.5, -0.25]), &IlpConstraintSet::Unconstrained).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_eq!(sol.assignment, vec![0, 1, 0, 1]);
        assert_eq!(sol.objective, -1.25);
    }

    #[test]
    fn ties_resolve_to_the_lexicographically_smallest_assignment() {
        let sol = solve_exact(&instance(&[0.0, 0.0, 0.0]), &IlpConstraintSet::Unconstrained).unwrap();
        assert_eq!(sol.assignment, vec![0, 0, 0]);
        // z0 + z1 <= 1 leaves two optima (1,0) and (0,1) at cost -1: the
        // smaller string wins.
        let shared = SharedConstraints::new(vec![vec![-1.0, -1.0]], vec![-1.0]).unwrap();
        let sol = solve_exact(&instance(&[-1.0, -1.0]), &IlpConstraintSet::Shared(&shared)).unwrap();
        assert_eq!(sol.assignment, vec![0, 1]);
        assert_eq!(sol.objective, -1.0);
    }

    #[test]
    fn shared_constraints_bend_the_optimum() {
        // Without constraints both variables turn on; with z0 + z1 <= 1 the
        // solver keeps the cheaper one.
        let shared = SharedConstraints::new(vec![vec![-1.0, -1.0]], vec![-1.0]).unwrap();
        let sol = solve_exact(&instance(&[-1.0, -2.0]), &IlpConstraintSet::Shared(&shared)).unwrap();
        assert_eq!(sol.assignment, vec![0, 1]);
        assert_eq!(sol.objective, -2.0);
        assert!(shared.is_satisfied(&sol.assignment));
    }

    #[test]
    fn infeasible_region_is_reported() {
        let system = ConstraintSystem::new(
            2,
            vec![LinearInequality { weights: vec![0.0, 0.0], bias: -1.0, subset_mask: 0 }],
            "manual",
        )
        .unwrap();
        let sol = solve_exact(&instance(&[1.0, 1.0]), &IlpConstraintSet::Learned(&system)).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn solver_rejects_mismatched_widths() {
        let shared = SharedConstraints::new(vec![vec![1.0, 1.0, 1.0]], vec![0.0]).unwrap();
        assert!(matches!(
            solve_exact(&instance(&[1.0, 1.0]), &IlpConstraintSet::Shared(&shared)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn solver_matches_enumeration_on_random_programs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..60 {
            let n = rng.random_range(1..=12usize);
            let m = rng.random_range(0..=6usize);
            let costs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rows: Vec<(Vec<f64>, f64)> = (0..m)
                .map(|_| {
                    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let b = rng.random_range(-1.0..1.0);
                    (w, b)
                })
                .collect();
            let system = ConstraintSystem::new(
                n,
                rows.iter()
                    .map(|(w, b)| LinearInequality { weights: w.clone(), bias: *b, subset_mask: 0 })
                    .collect(),
                "random",
            )
            .unwrap();
            let sol = solve_exact(&instance(&costs), &IlpConstraintSet::Learned(&system)).unwrap();
            let oracle = brute_force(&costs, &rows);
            match oracle {
                Some(best) => {
                    assert_eq!(sol.status, SolveStatus::Optimal, "trial {trial}");
                    assert!((sol.objective - best).abs() < 1e-9, "trial {trial}: {} vs {best}", sol.objective);
                    // The returned assignment itself must be feasible.
                    let psi: Vec<f64> = sol.assignment.iter().map(|&z| z as f64).collect();
                    assert!(crate::extraction::is_feasible(&system, &psi).unwrap());
                }
                None => assert_eq!(sol.status, SolveStatus::Infeasible, "trial {trial}"),
            }
        }
    }

    #[test]
    fn generated_families_are_deterministic_and_feasible() {
        let (shared_a, instances_a) = generate_family(12, 4, 5, 42).unwrap();
        let (shared_b, instances_b) = generate_family(12, 4, 5, 42).unwrap();
        assert_eq!(shared_a, shared_b);
        assert_eq!(instances_a, instances_b);
        let (shared_c, _) = generate_family(12, 4, 5, 43).unwrap();
        assert_ne!(shared_a, shared_c);
        // The slacked witness keeps every instance solvable.
        for inst in &instances_a {
            let sol = solve_exact(inst, &IlpConstraintSet::Shared(&shared_a)).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            assert!(shared_a.is_satisfied(&sol.assignment));
        }
        assert_eq!(instances_a[0].family_id, 42);
    }

    #[test]
    fn training_pairs_flip_only_improving_bits() {
        let inst = instance(&[0.5, -0.25]);
        let gold = IlpSolution { assignment: vec![1, 0], objective: 0.5, status: SolveStatus::Optimal };
        let ds = make_training_pairs(&[inst], &[gold]).unwrap();
        assert_eq!(ds.positives.len(), 1);
        assert_eq!(ds.positives[0].psi, vec![1.0, 0.0]);
        // Dropping the costly bit and adding the rewarding bit both improve
        // the objective, so both flips are negatives.
        let neg: Vec<&[f64]> = ds.negatives.iter().map(|e| e.psi.as_slice()).collect();
        assert_eq!(neg, vec![&[0.0, 0.0][..], &[1.0, 1.0][..]]);
        ds.validate().unwrap();
    }

    #[test]
    fn training_pairs_skip_zero_cost_bits_and_duplicate_golds() {
        // A gold that is only constrained-optimal: dropping the 0.5-cost bit
        // would improve, flipping the zero-cost bit would not (not strict).
        let insts = vec![instance(&[0.5, -1.0, 0.0]), instance(&[0.5, -1.0, 0.0])];
        let gold = IlpSolution {
            assignment: vec![1, 1, 0],
            objective: -0.5,
            status: SolveStatus::Optimal,
        };
        let ds = make_training_pairs(&insts, &[gold.clone(), gold]).unwrap();
        assert_eq!(ds.positives.len(), 1);
        assert_eq!(ds.negatives.len(), 1);
        assert_eq!(ds.negatives[0].psi, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn family_file_round_trips() {
        let (shared, instances) = generate_family(6, 3, 4, 17).unwrap();
        let golds: Vec<Option<Vec<u8>>> = instances
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                (i % 2 == 0).then(|| {
                    solve_exact(inst, &IlpConstraintSet::Shared(&shared)).unwrap().assignment
                })
            })
            .collect();
        let family = FamilyFile::new(shared, instances, golds).unwrap();
        let text = family.to_text();
        let back = FamilyFile::from_text(&text).unwrap();
        assert_eq!(family, back);
        assert_eq!(text, back.to_text());
    }

    #[test]
    fn recovery_metrics_run_end_to_end_on_a_tiny_family() {
        let (shared, instances) = generate_family(8, 3, 16, 5).unwrap();
        let (train, test) = instances.split_at(12);
        let golds: Vec<IlpSolution> = train
            .iter()
            .map(|inst| solve_exact(inst, &IlpConstraintSet::Shared(&shared)).unwrap())
            .collect();
        let pairs = make_training_pairs(train, &golds).unwrap();
        let config = crate::rectifier::TrainConfig {
            learning_rate: 0.1,
            epochs: 200,
            seed: 1,
            ..Default::default()
        };
        let (net, _) = crate::rectifier::train(8, 4, &pairs.combined(), &config).unwrap();
        let learned = crate::extraction::extract_system(&net).unwrap();
        let metrics = evaluate_recovery(test, &shared, &learned, &net).unwrap();
        assert_eq!(metrics.instances, 4);
        for value in [
            metrics.classification_acc,
            metrics.bitwise_acc,
            metrics.original_satisfied,
            metrics.learned_satisfied,
            metrics.baseline_bitwise_acc,
            metrics.baseline_original_satisfied,
        ] {
            assert!((0.0..=100.0).contains(&value), "metric out of range: {value}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Adding constraint rows can only raise the optimal objective.
        #[test]
        fn more_constraints_never_improve_the_optimum(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..=8usize);
            let costs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rows: Vec<LinearInequality> = (0..4)
                .map(|_| LinearInequality {
                    weights: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    bias: rng.random_range(-0.5..1.0),
                    subset_mask: 0,
                })
                .collect();
            let small = ConstraintSystem::new(n, rows[..2].to_vec(), "subset").unwrap();
            let large = ConstraintSystem::new(n, rows, "superset").unwrap();
            let inst = IlpInstance { costs, family_id: 0 };
            let a = solve_exact(&inst, &IlpConstraintSet::Learned(&small)).unwrap();
            let b = solve_exact(&inst, &IlpConstraintSet::Learned(&large)).unwrap();
            if a.status == SolveStatus::Optimal && b.status == SolveStatus::Optimal {
                prop_assert!(b.objective >= a.objective - 1e-9);
            }
            if a.status == SolveStatus::Infeasible {
                prop_assert_eq!(b.status, SolveStatus::Infeasible);
            }
        }
    }
}
