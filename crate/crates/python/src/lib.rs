//! Python bindings: knowledge-graph loading, subgraph extraction, training,
//! scoring, and evaluation, exposed as the `mines_py` extension module.
//!
//! ```python
//! import mines_py as m
//! m.synthesize_dataset(0, 200, "data/synth")
//! model = m.train("data/synth", k=2, epochs=10, target_relation="r_target")
//! print(m.evaluate(model, "data/synth")["auc_pr"])
//! ```

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mines_core::eval::{self, EvalProtocol};
use mines_core::kg::{load_triple_list, KnowledgeGraph, Triple, Vocab};
use mines_core::model::{load_checkpoint, save_checkpoint, LayerStack};
use mines_core::subgraph::{self, SubgraphMode};
use mines_core::synth::{synthesize_dataset as synth_impl, RuleSpec};
use mines_core::train::{train as train_impl, TrainConfig};
use mines_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// An immutable knowledge graph of (head, relation, tail) fact triples.
#[pyclass(name = "KnowledgeGraph")]
struct PyKnowledgeGraph {
    inner: KnowledgeGraph,
}

#[pymethods]
impl PyKnowledgeGraph {
    /// Load a TSV triple file (`head<TAB>relation<TAB>tail` per line).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyKnowledgeGraph {
            inner: KnowledgeGraph::load(path).map_err(py_err)?,
        })
    }

    #[getter]
    fn num_entities(&self) -> usize {
        self.inner.num_entities()
    }

    #[getter]
    fn num_relations(&self) -> usize {
        self.inner.num_relations()
    }

    #[getter]
    fn num_triples(&self) -> usize {
        self.inner.num_triples()
    }

    #[getter]
    fn duplicates_dropped(&self) -> usize {
        self.inner.duplicates_dropped()
    }

    fn entity_names(&self) -> Vec<String> {
        self.inner.entities().names().to_vec()
    }

    fn relation_names(&self) -> Vec<String> {
        self.inner.relations().names().to_vec()
    }

    fn triples(&self) -> Vec<(String, String, String)> {
        self.inner
            .triples()
            .iter()
            .map(|t| {
                (
                    self.inner.entities().name(t.head).to_string(),
                    self.inner.relations().name(t.rel).to_string(),
                    self.inner.entities().name(t.tail).to_string(),
                )
            })
            .collect()
    }

    /// Entities adjacent to `entity` ignoring edge direction.
    fn neighbors(&self, entity: &str) -> PyResult<Vec<String>> {
        let id = self
            .inner
            .entities()
            .get(entity)
            .ok_or_else(|| py_err(Error::UnknownEntity(entity.to_string())))?;
        let ids = self.inner.undirected_neighbors(id).map_err(py_err)?;
        Ok(ids
            .into_iter()
            .map(|e| self.inner.entities().name(e).to_string())
            .collect())
    }

    fn contains(&self, head: &str, relation: &str, tail: &str) -> bool {
        self.inner
            .resolve(head, relation, tail)
            .map(|t| self.inner.contains(&t))
            .unwrap_or(false)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "KnowledgeGraph(entities={}, relations={}, triples={})",
            self.inner.num_entities(),
            self.inner.num_relations(),
            self.inner.num_triples()
        )
    }
}

/// An extracted local subgraph around one target triple.
#[pyclass(name = "Subgraph")]
struct PySubgraph {
    /// Global entity names by local node id; node 0 = head, node 1 = tail.
    #[pyo3(get)]
    nodes: Vec<String>,
    /// `(local_head, relation_name, local_tail)` with the target removed.
    #[pyo3(get)]
    edges: Vec<(usize, String, usize)>,
    /// Per-node `(distance_to_head, distance_to_tail)` labels.
    #[pyo3(get)]
    labels: Vec<(usize, usize)>,
    #[pyo3(get)]
    target_relation: String,
    dump: String,
}

#[pymethods]
impl PySubgraph {
    fn dump(&self) -> String {
        self.dump.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Subgraph(nodes={}, edges={}, target_relation={:?})",
            self.nodes.len(),
            self.edges.len(),
            self.target_relation
        )
    }
}

fn parse_mode(mode: &str) -> PyResult<SubgraphMode> {
    SubgraphMode::parse(mode).map_err(py_err)
}

/// Extract the enclosing or neighbor-enhanced subgraph around a triple.
#[pyfunction]
#[pyo3(signature = (graph, head, relation, tail, k=3, mode="neighbor_enhanced", homo_self_loops=true))]
fn extract_subgraph(
    graph: &PyKnowledgeGraph,
    head: &str,
    relation: &str,
    tail: &str,
    k: usize,
    mode: &str,
    homo_self_loops: bool,
) -> PyResult<PySubgraph> {
    let g = &graph.inner;
    let triple = g.resolve(head, relation, tail).map_err(py_err)?;
    let sub = subgraph::extract(
        g,
        triple.head,
        triple.rel,
        triple.tail,
        k,
        parse_mode(mode)?,
        homo_self_loops,
    )
    .map_err(py_err)?;
    Ok(PySubgraph {
        nodes: sub
            .nodes
            .iter()
            .map(|&e| g.entities().name(e).to_string())
            .collect(),
        edges: sub
            .edges
            .iter()
            .map(|&(u, r, v)| (u, g.relations().name(r).to_string(), v))
            .collect(),
        labels: sub.labels.clone(),
        target_relation: relation.to_string(),
        dump: sub.dump(g),
    })
}

/// A trained scoring model plus the relation vocabulary it was fit on.
#[pyclass(name = "Model")]
struct PyModel {
    stack: LayerStack,
    relations: Vec<String>,
    config: TrainConfig,
    #[pyo3(get)]
    history: Vec<(usize, f64, Option<f64>)>,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn spec(&self) -> String {
        self.stack.spec().name.clone()
    }

    #[getter]
    fn total_params(&self) -> usize {
        self.stack.total_params()
    }

    #[getter]
    fn relation_names(&self) -> Vec<String> {
        self.relations.clone()
    }

    /// Score one triple against a graph (its subgraph is extracted with the
    /// training-time settings).
    fn score(
        &self,
        graph: &PyKnowledgeGraph,
        head: &str,
        relation: &str,
        tail: &str,
    ) -> PyResult<f64> {
        let triple = graph.inner.resolve(head, relation, tail).map_err(py_err)?;
        eval::score_on_graph(&self.stack, &graph.inner, triple, &self.config).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let config = serde_json::to_value(&self.config)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        save_checkpoint(&self.stack, &self.relations, config, path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (stack, relations, config) = load_checkpoint(path).map_err(py_err)?;
        let config: TrainConfig = serde_json::from_value(config)
            .map_err(|e| PyValueError::new_err(format!("config snapshot: {e}")))?;
        Ok(PyModel {
            stack,
            relations,
            config,
            history: Vec::new(),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(spec={:?}, dim={}, relations={}, params={})",
            self.stack.spec().name,
            self.stack.dim(),
            self.relations.len(),
            self.stack.total_params()
        )
    }
}

/// Generate the planted-rule synthetic dataset under `out_dir`
/// (train.txt / valid.txt / test.txt). Returns a summary dict.
#[pyfunction]
#[pyo3(signature = (seed, n_entities, out_dir, edges_per_entity=1.0, valid_fraction=0.2))]
fn synthesize_dataset(
    py: Python<'_>,
    seed: u64,
    n_entities: usize,
    out_dir: PathBuf,
    edges_per_entity: f64,
    valid_fraction: f64,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let rule = RuleSpec {
        edges_per_entity,
        valid_fraction,
        ..RuleSpec::default()
    };
    let ds = synth_impl(seed, n_entities, &rule).map_err(py_err)?;
    ds.write_to_dir(&out_dir).map_err(py_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("train_entities", ds.train.num_entities())?;
    dict.set_item("train_triples", ds.train.num_triples())?;
    dict.set_item("valid_triples", ds.valid.len())?;
    dict.set_item("test_entities", ds.test.num_entities())?;
    dict.set_item("test_triples", ds.test.num_triples())?;
    dict.set_item("target_relation", ds.target_relation.clone())?;
    Ok(dict.into())
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    k: usize,
    dim: usize,
    spec: &str,
    subgraph_mode: &str,
    lr: f64,
    batch_size: usize,
    margin: f64,
    dropout: f64,
    epochs: usize,
    neg_per_pos: usize,
    seed: u64,
    patience: usize,
    homo_self_loops: bool,
    grad_clip: Option<f64>,
    target_relation: Option<String>,
) -> PyResult<TrainConfig> {
    let cfg = TrainConfig {
        k,
        dim,
        spec: spec.to_string(),
        subgraph_mode: parse_mode(subgraph_mode)?,
        lr,
        batch_size,
        margin,
        dropout,
        epochs,
        neg_per_pos,
        seed,
        early_stop_patience: patience,
        homo_self_loops,
        grad_clip,
        target_relation,
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Train on a dataset directory (train.txt, optional valid.txt).
#[pyfunction]
#[pyo3(signature = (data_dir, *, k=3, dim=32, spec="RGR", subgraph_mode="neighbor_enhanced",
    lr=0.001, batch_size=16, margin=10.0, dropout=0.5, epochs=50, neg_per_pos=1, seed=0,
    patience=10, homo_self_loops=true, grad_clip=None, target_relation=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    data_dir: PathBuf,
    k: usize,
    dim: usize,
    spec: &str,
    subgraph_mode: &str,
    lr: f64,
    batch_size: usize,
    margin: f64,
    dropout: f64,
    epochs: usize,
    neg_per_pos: usize,
    seed: u64,
    patience: usize,
    homo_self_loops: bool,
    grad_clip: Option<f64>,
    target_relation: Option<String>,
) -> PyResult<PyModel> {
    let cfg = build_config(
        k,
        dim,
        spec,
        subgraph_mode,
        lr,
        batch_size,
        margin,
        dropout,
        epochs,
        neg_per_pos,
        seed,
        patience,
        homo_self_loops,
        grad_clip,
        target_relation,
    )?;
    let graph = KnowledgeGraph::load(data_dir.join("train.txt")).map_err(py_err)?;
    let valid_path = data_dir.join("valid.txt");
    let valid = if valid_path.exists() {
        load_triple_list(&valid_path, graph.entities(), graph.relations()).map_err(py_err)?
    } else {
        Vec::new()
    };
    let outcome = train_impl(&graph, &valid, &cfg).map_err(py_err)?;
    Ok(PyModel {
        stack: outcome.stack,
        relations: graph.relations().names().to_vec(),
        config: cfg,
        history: outcome
            .history
            .iter()
            .map(|h| (h.epoch, h.train_loss, h.valid_auc_pr))
            .collect(),
    })
}

/// Evaluate a model on a dataset's test split. Returns a dict with
/// `auc_pr`, `hits_at_k`, and `n_triples`.
#[pyfunction]
#[pyo3(signature = (model, data_dir, *, target_relation=None, n_negatives=50, hits_k=10,
    seed=None, threads=1))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    model: &PyModel,
    data_dir: PathBuf,
    target_relation: Option<String>,
    n_negatives: usize,
    hits_k: usize,
    seed: Option<u64>,
    threads: usize,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let vocab = Vocab::from_names(&model.relations);
    let test_graph =
        KnowledgeGraph::load_with_relations(Path::new(&data_dir).join("test.txt"), Some(&vocab))
            .map_err(py_err)?;
    let target = target_relation.or_else(|| model.config.target_relation.clone());
    let positives: Vec<Triple> = match target {
        Some(name) => {
            let rel = test_graph
                .relations()
                .get(&name)
                .ok_or_else(|| py_err(Error::UnknownRelation(name)))?;
            test_graph
                .triples()
                .iter()
                .copied()
                .filter(|t| t.rel == rel)
                .collect()
        }
        None => test_graph.triples().to_vec(),
    };
    let protocol = EvalProtocol {
        n_ranking_negatives: n_negatives,
        hits_k,
    };
    let report = eval::evaluate(
        &model.stack,
        &test_graph,
        &positives,
        &model.config,
        &protocol,
        seed.unwrap_or(model.config.seed),
        threads,
    )
    .map_err(py_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("auc_pr", report.auc_pr)?;
    dict.set_item("hits_at_k", report.hits_at_k)?;
    dict.set_item("hits_k", report.hits_k)?;
    dict.set_item("n_triples", report.n_triples)?;
    dict.set_item("seed", report.seed)?;
    Ok(dict.into())
}

/// Average precision of positive vs negative scores (pessimistic ties).
#[pyfunction]
fn auc_pr(pos_scores: Vec<f64>, neg_scores: Vec<f64>) -> PyResult<f64> {
    eval::auc_pr(&pos_scores, &neg_scores).map_err(py_err)
}

/// Whether `target` ranks within `k` among `negatives` (pessimistic ties).
#[pyfunction]
#[pyo3(signature = (target, negatives, k=10))]
fn hits_at_k(target: f64, negatives: Vec<f64>, k: usize) -> PyResult<bool> {
    eval::hits_at_k(target, &negatives, k).map_err(py_err)
}

/// Trainable parameter count of a stack spec.
#[pyfunction]
fn param_count(spec: &str, k: usize, dim: usize, n_relations: usize) -> PyResult<usize> {
    mines_core::model::param_count(spec, k, dim, n_relations).map_err(py_err)
}

/// Finite-difference check of the full model; returns the max relative
/// error over `cases` random subgraph pairs.
#[pyfunction]
#[pyo3(signature = (spec="RGR", k=2, dim=6, n_relations=3, cases=5, step=1e-4, tol=1e-4, seed=0))]
#[allow(clippy::too_many_arguments)]
fn grad_check(
    spec: &str,
    k: usize,
    dim: usize,
    n_relations: usize,
    cases: usize,
    step: f64,
    tol: f64,
    seed: u64,
) -> PyResult<f64> {
    let summary =
        mines_core::gradcheck::check_full_model(spec, k, dim, n_relations, cases, step, tol, seed)
            .map_err(py_err)?;
    Ok(summary.max_rel_error)
}

#[pymodule]
fn mines_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKnowledgeGraph>()?;
    m.add_class::<PySubgraph>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(extract_subgraph, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(auc_pr, m)?)?;
    m.add_function(wrap_pyfunction!(hits_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
