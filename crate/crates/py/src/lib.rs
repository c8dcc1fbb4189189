//! Python bindings: scorers, the evaluation harness and trained-model
//! inference. Arrays cross the boundary as nested lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use uqkit::eval;
use uqkit::nn::{self, loss::normalized_probabilities};
use uqkit::scoring::{self, ScoreParams, Scorer, SoftplusVector};
use uqkit::{Tensor, UqError};

fn py_err(e: UqError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Pairs scores with positive-class flags, checking the lengths agree.
pub fn labeled(scores: &[f64], positives: &[bool]) -> Result<Vec<(f64, bool)>, UqError> {
    if scores.len() != positives.len() {
        return Err(UqError::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            positives.len()
        )));
    }
    Ok(scores.iter().copied().zip(positives.iter().copied()).collect())
}

/// Stacks equally long rows into a batch of samples shaped `sample_shape`.
pub fn batch(rows: &[Vec<f64>], sample_shape: &[usize]) -> Result<Tensor, UqError> {
    let width: usize = sample_shape.iter().product();
    if let Some(bad) = rows.iter().position(|r| r.len() != width) {
        return Err(UqError::Dimension(format!(
            "row {bad} has {} values, the model expects {width}",
            rows[bad].len()
        )));
    }
    let mut shape = vec![rows.len()];
    shape.extend_from_slice(sample_shape);
    Tensor::new(shape, rows.concat())
}

/// Per-sample spread and its mean for `[member][sample][class]` probabilities.
pub fn spread(member_probs: &[Vec<Vec<f64>>]) -> Result<(Vec<f64>, f64), UqError> {
    let members = member_probs
        .iter()
        .map(|m| Tensor::from_rows(m))
        .collect::<Result<Vec<_>, _>>()?;
    let report = uqkit::ensemble::spread_from_probabilities(&members)?;
    Ok((report.per_sample, report.aggregate))
}

#[pyfunction]
fn softplus_ratio(values: Vec<f64>) -> PyResult<f64> {
    let v = SoftplusVector::new(values).map_err(py_err)?;
    scoring::softplus_ratio_uncertainty(&v).map_err(py_err)
}

#[pyfunction]
fn max_softmax_score(probs: Vec<f64>) -> PyResult<f64> {
    scoring::max_softmax_score(&probs).map_err(py_err)
}

#[pyfunction]
fn auroc(scores: Vec<f64>, positives: Vec<bool>) -> PyResult<f64> {
    eval::auroc(&labeled(&scores, &positives).map_err(py_err)?).map_err(py_err)
}

/// Returns `(tpr, fpr, tp, fp, tn, fn)`; a score is positive when `> tau`.
#[pyfunction]
fn evaluate(scores: Vec<f64>, positives: Vec<bool>, tau: f64) -> PyResult<(f64, f64, usize, usize, usize, usize)> {
    let p = eval::evaluate(&labeled(&scores, &positives).map_err(py_err)?, tau).map_err(py_err)?;
    Ok((p.tpr, p.fpr, p.tp, p.fp, p.tn, p.fn_))
}

/// Smallest threshold with false-positive rate at most `max_fpr`.
#[pyfunction]
fn calibrate_max_fpr(scores: Vec<f64>, positives: Vec<bool>, max_fpr: f64) -> PyResult<f64> {
    let s = labeled(&scores, &positives).map_err(py_err)?;
    eval::calibrate(&s, eval::Target::MaxFpr(max_fpr)).map_err(py_err)
}

/// `(per_sample, aggregate)` ensemble spread.
#[pyfunction]
fn ensemble_spread(member_probs: Vec<Vec<Vec<f64>>>) -> PyResult<(Vec<f64>, f64)> {
    spread(&member_probs).map_err(py_err)
}

/// A trained network loaded from a model directory.
#[pyclass(name = "Network")]
struct PyNetwork {
    net: nn::Network,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork {
            net: nn::load_network(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.net.spec.input_shape.clone()
    }

    /// Normalized class probabilities for flattened input rows.
    fn probabilities(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = batch(&rows, &self.net.spec.input_shape).map_err(py_err)?;
        let logits = nn::infer_all(&self.net, &x).map_err(py_err)?.logits;
        let p = normalized_probabilities(self.net.spec.head, &logits);
        Ok((0..p.rows()).map(|i| p.row(i).to_vec()).collect())
    }

    /// `(predicted_label, score)` per row for scorer `softplus_ratio`,
    /// `max_softmax` or `mc_dropout`.
    #[pyo3(signature = (rows, labels, scorer, seed=0, mc_passes=scoring::DEFAULT_MC_PASSES))]
    fn score(&self, rows: Vec<Vec<f64>>, labels: Vec<usize>, scorer: &str, seed: u64, mc_passes: usize) -> PyResult<Vec<(usize, f64)>> {
        let scorer = Scorer::parse(scorer).ok_or_else(|| PyValueError::new_err(format!("unknown scorer {scorer:?}")))?;
        let x = batch(&rows, &self.net.spec.input_shape).map_err(py_err)?;
        let scored = scoring::score_dataset(&self.net, &x, &labels, scorer, ScoreParams { mc_passes, seed }).map_err(py_err)?;
        Ok(scored.into_iter().map(|s| (s.predicted_label, s.score)).collect())
    }
}

#[pymodule]
fn uqkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(softplus_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(max_softmax_score, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_max_fpr, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_spread, m)?)?;
    m.add_class::<PyNetwork>()?;
    Ok(())
}
