//! Python bindings: train constraint networks, extract inequality systems,
//! solve constrained binary ILPs, and decode label sequences.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use polylearn::extraction;
use polylearn::features::FeatureTemplate;
use polylearn::ilp::{self, IlpConstraintSet, IlpInstance, SolveStatus};
use polylearn::rectifier::{self, LabeledFeatureExample, TrainConfig};
use polylearn::sequence::{self, DecodeInput, ScoreMatrix, SequenceModel};

fn to_py(e: polylearn::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Two-layer rectifier network classifying feature vectors as valid (+1) or
/// invalid (-1).
#[pyclass(module = "polylearn_py", frozen)]
pub struct ConstraintNet {
    inner: rectifier::ConstraintNet,
}

#[pymethods]
impl ConstraintNet {
    #[new]
    fn new(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> PyResult<Self> {
        Ok(ConstraintNet { inner: rectifier::ConstraintNet::new(weights, biases).map_err(to_py)? })
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn hidden_count(&self) -> usize {
        self.inner.hidden_count()
    }

    /// Classify a feature vector: +1 feasible, -1 infeasible.
    fn predict(&self, psi: Vec<f64>) -> PyResult<i32> {
        self.inner.predict(&psi).map_err(to_py)
    }

    /// Score before thresholding; >= 0 means the vector is classified +1.
    fn raw_score(&self, psi: Vec<f64>) -> PyResult<f64> {
        self.inner.forward_raw(&psi).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path.as_ref()).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(ConstraintNet { inner: rectifier::ConstraintNet::load(path.as_ref()).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "ConstraintNet(input_dim={}, hidden_count={})",
            self.inner.input_dim(),
            self.inner.hidden_count()
        )
    }
}

/// An explicit system of linear inequalities `w . psi + b >= 0`.
#[pyclass(module = "polylearn_py", frozen)]
pub struct ConstraintSystem {
    inner: extraction::ConstraintSystem,
}

#[pymethods]
impl ConstraintSystem {
    /// Author a system directly from (weights, bias) rows.
    #[new]
    #[pyo3(signature = (input_dim, rows, origin="authored"))]
    fn new(input_dim: usize, rows: Vec<(Vec<f64>, f64)>, origin: &str) -> PyResult<Self> {
        let inequalities = rows
            .into_iter()
            .map(|(weights, bias)| extraction::LinearInequality { weights, bias, subset_mask: 0 })
            .collect();
        Ok(ConstraintSystem {
            inner: extraction::ConstraintSystem::new(input_dim, inequalities, origin)
                .map_err(to_py)?,
        })
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim
    }

    #[getter]
    fn origin(&self) -> String {
        self.inner.origin.clone()
    }

    /// All rows as (weights, bias) pairs.
    fn rows(&self) -> Vec<(Vec<f64>, f64)> {
        self.inner.inequalities.iter().map(|r| (r.weights.clone(), r.bias)).collect()
    }

    /// Whether every inequality holds at `psi`.
    fn is_feasible(&self, psi: Vec<f64>) -> PyResult<bool> {
        extraction::is_feasible(&self.inner, &psi).map_err(to_py)
    }

    /// Fraction of inequalities satisfied at `psi`.
    fn satisfied_fraction(&self, psi: Vec<f64>) -> PyResult<f64> {
        self.inner.satisfied_fraction(&psi).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path.as_ref()).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(ConstraintSystem {
            inner: extraction::ConstraintSystem::load(path.as_ref()).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "ConstraintSystem(input_dim={}, rows={}, origin={:?})",
            self.inner.input_dim,
            self.inner.len(),
            self.inner.origin
        )
    }
}

/// Train a network on (feature_vector, label) pairs with labels +1/-1.
/// Returns the network and the per-epoch loss history.
#[pyfunction]
#[pyo3(signature = (input_dim, hidden_count, examples, *, epochs=1000, learning_rate=0.01, lr_decay=0.0, seed=0, batch_size=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    input_dim: usize,
    hidden_count: usize,
    examples: Vec<(Vec<f64>, i32)>,
    epochs: usize,
    learning_rate: f64,
    lr_decay: f64,
    seed: u64,
    batch_size: Option<usize>,
) -> PyResult<(ConstraintNet, Vec<f64>)> {
    let data: Vec<LabeledFeatureExample> = examples
        .into_iter()
        .map(|(psi, label)| LabeledFeatureExample::new(psi, label))
        .collect::<polylearn::Result<_>>()
        .map_err(to_py)?;
    let config = TrainConfig {
        learning_rate,
        lr_decay,
        epochs,
        seed,
        batch_size,
        ..TrainConfig::default()
    };
    let (net, history) = rectifier::train(input_dim, hidden_count, &data, &config).map_err(to_py)?;
    Ok((ConstraintNet { inner: net }, history))
}

/// Convert a trained network into its equivalent inequality system.
#[pyfunction]
fn extract_system(net: &ConstraintNet) -> PyResult<ConstraintSystem> {
    Ok(ConstraintSystem { inner: extraction::extract_system(&net.inner).map_err(to_py)? })
}

/// Whether `psi` satisfies every inequality of `system`.
#[pyfunction]
fn is_feasible(system: &ConstraintSystem, psi: Vec<f64>) -> PyResult<bool> {
    extraction::is_feasible(&system.inner, &psi).map_err(to_py)
}

/// Minimize `costs . z` over binary `z`, optionally subject to a constraint
/// system. Returns (assignment, objective), or None when infeasible.
#[pyfunction]
#[pyo3(signature = (costs, system=None))]
fn solve_ilp(
    costs: Vec<f64>,
    system: Option<PyRef<ConstraintSystem>>,
) -> PyResult<Option<(Vec<u32>, f64)>> {
    let instance = IlpInstance { costs, family_id: 0 };
    let constraints = match &system {
        Some(s) => IlpConstraintSet::Learned(&s.inner),
        None => IlpConstraintSet::Unconstrained,
    };
    let sol = ilp::solve_exact(&instance, &constraints).map_err(to_py)?;
    Ok(match sol.status {
        // Vec<u8> would cross into Python as bytes; widen so callers get a list.
        SolveStatus::Optimal => {
            Some((sol.assignment.iter().map(|&z| z as u32).collect(), sol.objective))
        }
        SolveStatus::Infeasible => None,
    })
}

/// Exact best-scoring label sequence for per-token emission scores, with an
/// optional label-transition matrix.
#[pyfunction]
#[pyo3(signature = (labels, emissions, transitions=None))]
fn viterbi(
    labels: Vec<String>,
    emissions: Vec<Vec<f64>>,
    transitions: Option<Vec<Vec<f64>>>,
) -> PyResult<Vec<String>> {
    let model = SequenceModel::from_parts(labels, transitions).map_err(to_py)?;
    let scores = ScoreMatrix::new(emissions).map_err(to_py)?;
    sequence::viterbi(&model, &DecodeInput::from_scores(&scores)).map_err(to_py)
}

/// Beam-search decoding; when `system` and `template` are given, candidates
/// violating the system on the template's windows are pruned.
#[pyfunction]
#[pyo3(signature = (labels, emissions, transitions=None, system=None, template=None, beam_width=16, fallback=true))]
#[allow(clippy::too_many_arguments)]
fn beam_decode(
    labels: Vec<String>,
    emissions: Vec<Vec<f64>>,
    transitions: Option<Vec<Vec<f64>>>,
    system: Option<PyRef<ConstraintSystem>>,
    template: Option<&str>,
    beam_width: usize,
    fallback: bool,
) -> PyResult<Vec<String>> {
    let systems = match (&system, template) {
        (Some(s), Some(t)) => {
            vec![(s.inner.clone(), FeatureTemplate::parse_spec(t).map_err(to_py)?)]
        }
        (None, None) => Vec::new(),
        _ => {
            return Err(PyValueError::new_err(
                "system and template must be provided together",
            ))
        }
    };
    let model = SequenceModel::from_parts(labels, transitions).map_err(to_py)?;
    let scores = ScoreMatrix::new(emissions).map_err(to_py)?;
    sequence::beam_decode(&model, &DecodeInput::from_scores(&scores), &systems, beam_width, fallback)
        .map_err(to_py)
}

/// Mean per-token agreement between predicted and gold label sequences.
#[pyfunction]
fn token_accuracy(predicted: Vec<Vec<String>>, gold: Vec<Vec<String>>) -> PyResult<f64> {
    sequence::token_accuracy(&predicted, &gold).map_err(to_py)
}

#[pymodule]
fn polylearn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ConstraintNet>()?;
    m.add_class::<ConstraintSystem>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(extract_system, m)?)?;
    m.add_function(wrap_pyfunction!(is_feasible, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ilp, m)?)?;
    m.add_function(wrap_pyfunction!(viterbi, m)?)?;
    m.add_function(wrap_pyfunction!(beam_decode, m)?)?;
    m.add_function(wrap_pyfunction!(token_accuracy, m)?)?;
    Ok(())
}
