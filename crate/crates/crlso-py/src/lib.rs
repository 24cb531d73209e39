//! Python bindings: the search-space and graph types, the synthetic
//! benchmark, trained-model loading, the analysis helpers, and the pipeline
//! entry points, exposed as the `crlso_py` extension module.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use crlso::bundle::ModelBundle;
use crlso::graphspace::{ArchGraph, SearchSpace};
use crlso::gvae::{decode_argmax, LatentPoint};
use crlso::oracle::{self, Oracle, SyntheticBench};
use crlso::predictor::correlation_metrics;
use ndgrad::{CounterRng, Tensor};

fn to_py_err(err: crlso::Error) -> PyErr {
    match &err {
        crlso::Error::Io { .. } => PyIOError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// A cell architecture: an attributed DAG.
#[pyclass(name = "ArchGraph", from_py_object)]
#[derive(Clone)]
struct PyArchGraph {
    inner: ArchGraph,
}

#[pymethods]
impl PyArchGraph {
    #[new]
    fn new(node_attrs: Vec<u16>, edges: Vec<(u16, u16, u16)>) -> PyResult<Self> {
        ArchGraph::new(node_attrs.len(), node_attrs, edges)
            .map(|inner| PyArchGraph { inner })
            .map_err(to_py_err)
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn nodes(&self) -> Vec<u16> {
        self.inner.node_attrs().to_vec()
    }

    #[getter]
    fn edges(&self) -> Vec<(u16, u16, u16)> {
        self.inner.edges().to_vec()
    }

    /// Canonical relabeling of this graph.
    fn canonical(&self) -> PyArchGraph {
        PyArchGraph { inner: self.inner.canonicalize() }
    }

    /// Stable content hash of the canonical form (hex).
    fn arch_hash(&self) -> String {
        self.inner.arch_hash()
    }

    fn __repr__(&self) -> String {
        format!(
            "ArchGraph(nodes={:?}, edges={:?})",
            self.inner.node_attrs(),
            self.inner.edges()
        )
    }

    fn __eq__(&self, other: &PyArchGraph) -> bool {
        self.inner == other.inner
    }

    fn __hash__(&self) -> u64 {
        crlso::graphspace::fnv_hash_of(&self.inner)
    }
}

/// Declarative cell search space.
#[pyclass(name = "SearchSpace", from_py_object)]
#[derive(Clone)]
struct PySearchSpace {
    inner: SearchSpace,
}

#[pymethods]
impl PySearchSpace {
    /// Operator-on-edge space with a fixed template.
    #[staticmethod]
    #[pyo3(signature = (num_nodes, num_operators, max_edges=None))]
    fn operator_on_edge(
        num_nodes: usize,
        num_operators: usize,
        max_edges: Option<usize>,
    ) -> PyResult<Self> {
        SearchSpace::operator_on_edge(num_nodes, num_operators, max_edges)
            .map(|inner| PySearchSpace { inner })
            .map_err(to_py_err)
    }

    /// Operator-on-node space with a free edge set.
    #[staticmethod]
    fn operator_on_node(num_nodes: usize, num_operators: usize, max_edges: usize) -> PyResult<Self> {
        SearchSpace::operator_on_node(num_nodes, num_operators, max_edges)
            .map(|inner| PySearchSpace { inner })
            .map_err(to_py_err)
    }

    /// The default 4-node, 6-slot, 5-operator space (15,625 architectures).
    #[staticmethod]
    fn default_cell() -> Self {
        PySearchSpace { inner: SearchSpace::nb201_like() }
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes
    }

    #[getter]
    fn num_edge_slots(&self) -> usize {
        self.inner.num_edge_slots()
    }

    /// Exact architecture count for fixed-template spaces, else None.
    #[getter]
    fn count(&self) -> Option<u128> {
        self.inner.count()
    }

    /// Every architecture of a fixed-template space, in enumeration order.
    fn enumerate(&self) -> PyResult<Vec<PyArchGraph>> {
        Ok(self
            .inner
            .enumerate()
            .map_err(to_py_err)?
            .map(|inner| PyArchGraph { inner })
            .collect())
    }

    /// One uniform sample (deterministic per seed).
    fn sample(&self, seed: u64) -> PyArchGraph {
        let mut rng = CounterRng::new(seed);
        PyArchGraph { inner: self.inner.sample_uniform(&mut rng) }
    }

    /// Validates a graph against this space.
    fn validate(&self, graph: &PyArchGraph) -> PyResult<()> {
        self.inner.validate(&graph.inner).map_err(to_py_err)
    }
}

/// Deterministic synthetic benchmark over an operator-on-edge space.
#[pyclass(name = "SyntheticBench")]
struct PySyntheticBench {
    inner: SyntheticBench,
}

#[pymethods]
impl PySyntheticBench {
    #[new]
    fn new(space: &PySearchSpace) -> PyResult<Self> {
        SyntheticBench::new(space.inner.clone())
            .map(|inner| PySyntheticBench { inner })
            .map_err(to_py_err)
    }

    fn score(&self, graph: &PyArchGraph) -> PyResult<f64> {
        self.inner.score(&graph.inner).map_err(to_py_err)
    }

    /// 1-based global rank under the exhaustive ranking.
    fn rank(&self, graph: &PyArchGraph) -> PyResult<usize> {
        self.inner.rank_of(&graph.inner).map_err(to_py_err)
    }

    /// The best architecture and its score.
    fn best(&self) -> (PyArchGraph, f64) {
        let (g, s) = &self.inner.ranking().entries[0];
        (PyArchGraph { inner: g.clone() }, *s)
    }
}

/// A trained model checkpoint.
#[pyclass(name = "Bundle")]
struct PyBundle {
    inner: ModelBundle,
}

#[pymethods]
impl PyBundle {
    /// Loads a checkpoint written by `train` or `search`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ModelBundle::load(&path).map(|inner| PyBundle { inner }).map_err(to_py_err)
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.hyper.latent_dim
    }

    /// Posterior `(mean, sigma)` of a graph.
    fn encode(&self, graph: &PyArchGraph) -> PyResult<(Vec<f64>, Vec<f64>)> {
        self.inner.encoder.encode(&graph.inner).map_err(to_py_err)
    }

    /// Argmax decode of a latent point.
    fn decode(&self, z: Vec<f64>) -> PyResult<PyArchGraph> {
        let point = LatentPoint::posterior_mean(z);
        decode_argmax(&point, &self.inner.decoder, &self.inner.space)
            .map(|inner| PyArchGraph { inner })
            .map_err(to_py_err)
    }

    /// Latent predictor output, de-normalized to the oracle's score scale.
    fn predict(&self, z: Vec<f64>) -> PyResult<f64> {
        let raw = self.inner.latent_predictor.predict_one(&z).map_err(to_py_err)?;
        Ok(self.inner.denormalize_score(raw))
    }
}

/// The two-dimensional multimodal toy target.
#[pyfunction]
fn toy_h(x1: f64, x2: f64) -> f64 {
    oracle::toy_h(&[x1, x2])
}

/// Pearson r and Kendall tau-b between two score lists.
#[pyfunction]
fn correlation(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<(f64, f64)> {
    correlation_metrics(&pred, &truth).map_err(to_py_err)
}

/// PCA projection: returns (projections, explained_variance).
#[pyfunction]
fn pca_project(points: Vec<Vec<f64>>, dims: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    if points.is_empty() {
        return Err(PyValueError::new_err("no points"));
    }
    let d = points[0].len();
    let n = points.len();
    let flat: Vec<f64> = points.into_iter().flatten().collect();
    let tensor = Tensor::matrix(n, d, flat).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (proj, explained) = crlso::analysis::pca_project(&tensor, dims).map_err(to_py_err)?;
    let k = proj.cols().map_err(|e| PyValueError::new_err(e.to_string()))?;
    let rows = (0..n).map(|r| proj.data()[r * k..(r + 1) * k].to_vec()).collect();
    Ok((rows, explained))
}

/// Runs the training pipeline from a config file; artifacts land in `out`.
#[pyfunction]
fn train(config: PathBuf, out: PathBuf) -> PyResult<()> {
    crlso::cli::cmd_train(&config, &out).map_err(to_py_err)
}

/// Runs the full search from a config file; artifacts land in `out`.
#[pyfunction]
fn search(config: PathBuf, out: PathBuf) -> PyResult<()> {
    crlso::cli::cmd_search(&config, &out).map_err(to_py_err)
}

/// Runs the toy latent-dimension study from a config file.
#[pyfunction]
fn toy_study(config: PathBuf, out: PathBuf) -> PyResult<()> {
    crlso::cli::cmd_toy(&config, &out).map_err(to_py_err)
}

/// Dumps a fixed-template space as JSON lines.
#[pyfunction]
fn enumerate_space(config: PathBuf, out: PathBuf) -> PyResult<()> {
    crlso::cli::cmd_enumerate(&config, &out).map_err(to_py_err)
}

#[pymodule]
fn crlso_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArchGraph>()?;
    m.add_class::<PySearchSpace>()?;
    m.add_class::<PySyntheticBench>()?;
    m.add_class::<PyBundle>()?;
    m.add_function(wrap_pyfunction!(toy_h, m)?)?;
    m.add_function(wrap_pyfunction!(correlation, m)?)?;
    m.add_function(wrap_pyfunction!(pca_project, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(toy_study, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_space, m)?)?;
    Ok(())
}
