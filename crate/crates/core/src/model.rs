//! Message-passing layers, the intercommunication stack, and triplet scoring.
//!
//! Two layer types are interleaved per a spec string over `{R, G}`:
//!
//! * `R` — relational message passing on the original directed view:
//!   `out_i = σ( Σ_r Σ_{j∈N_i^r} (1/c_{i,r}) h_j W_r + h_i W_0 )` with
//!   `c_{i,r}` the in-degree of `i` under relation `r`. Messages flow
//!   head→tail only.
//! * `G` — homogeneous message passing on the undirected, unlabeled view:
//!   `out_i = σ( Σ_{j∈N_i} (1/√(|N_i||N_j|)) h_j W )`.
//!
//! Layers compose sequentially: the embeddings produced in one view are
//! handed to the next layer in the other view, which is what lets signal
//! travel against edge directions that are missing their inverse facts.
//! The default stack is `RGR`. `Bi-RRR` runs three relational layers over
//! an edge set augmented with one inverse edge per original edge.
//!
//! Scoring concatenates the mean-pooled subgraph embedding, the target
//! head/tail embeddings, and a learned relation embedding, then applies a
//! linear head.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::subgraph::{one_hot_init, Subgraph};
use crate::tensor::{Tape, Tensor, Var};

/// One layer kind of the intercommunication stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// `R`: relation-typed, uni-directional (original view).
    Relational,
    /// `G`: untyped, bi-directional (homogeneous view).
    Homogeneous,
}

/// Parsed stack spec, e.g. "RGR", "RRR", "GGG", or "Bi-RRR".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackSpec {
    pub name: String,
    pub layers: Vec<LayerKind>,
    /// Augment the directed edge list with one inverse edge per edge.
    pub inverse_edges: bool,
}

impl StackSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let (letters, inverse_edges) = match spec.strip_prefix("Bi-") {
            Some(rest) => (rest, true),
            None => (spec, false),
        };
        if letters.is_empty() {
            return Err(Error::InvalidStackSpec {
                spec: spec.to_string(),
                reason: "empty layer list".to_string(),
            });
        }
        let mut layers = Vec::with_capacity(letters.len());
        for c in letters.chars() {
            match c {
                'R' => layers.push(LayerKind::Relational),
                'G' => layers.push(LayerKind::Homogeneous),
                other => {
                    return Err(Error::InvalidStackSpec {
                        spec: spec.to_string(),
                        reason: format!("invalid layer character `{other}` (alphabet {{R, G}})"),
                    })
                }
            }
        }
        Ok(StackSpec {
            name: spec.to_string(),
            layers,
            inverse_edges,
        })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Parameters of a relational (`R`) layer: one d×d weight per relation plus
/// a d×d self weight.
#[derive(Debug, Clone)]
pub struct UdmpLayer {
    pub w_rel: Vec<Tensor>,
    pub w_self: Tensor,
}

/// Parameters of a homogeneous (`G`) layer.
#[derive(Debug, Clone)]
pub struct BdmpLayer {
    pub w: Tensor,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Udmp(UdmpLayer),
    Bdmp(BdmpLayer),
}

/// The full model: input projection, message-passing layers, relation
/// embeddings, and the scoring head.
#[derive(Debug, Clone)]
pub struct LayerStack {
    spec: StackSpec,
    k: usize,
    dim: usize,
    n_relations: usize,
    input_proj: Tensor,
    layers: Vec<Layer>,
    relation_table: Tensor,
    score_w: Tensor,
    score_b: Tensor,
}

/// Tape handles for every parameter of a bound stack.
pub struct Binding {
    flat: Vec<Var>,
    pub input_proj: Var,
    pub layers: Vec<LayerBinding>,
    pub relation_table: Var,
    pub score_w: Var,
    pub score_b: Var,
}

impl Binding {
    /// Every parameter var in canonical order (matches
    /// [`LayerStack::param_names`] and [`LayerStack::parameters`]).
    pub fn flat_vars(&self) -> &[Var] {
        &self.flat
    }
}

pub enum LayerBinding {
    Udmp { w_rel: Vec<Var>, w_self: Var },
    Bdmp { w: Var },
}

/// Build a stack with seeded uniform init in `[-1/√d, 1/√d]` per matrix.
pub fn build_stack(
    spec: &str,
    k: usize,
    dim: usize,
    n_relations: usize,
    seed: u64,
) -> Result<LayerStack> {
    let spec = StackSpec::parse(spec)?;
    if k < 1 {
        return Err(Error::InvalidHopCount(k));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("embedding dim must be positive".into()));
    }
    if n_relations == 0 {
        return Err(Error::InvalidArgument("need at least one relation".into()));
    }
    let mut rng = rng::stream(seed, "init");
    let bound = 1.0 / (dim as f64).sqrt();
    let mut mat = |rows: usize, cols: usize| Tensor::uniform(rows, cols, bound, &mut rng);

    let input_proj = mat(2 * (k + 2), dim);
    let layers = spec
        .layers
        .iter()
        .map(|kind| match kind {
            LayerKind::Relational => Layer::Udmp(UdmpLayer {
                w_rel: (0..n_relations).map(|_| mat(dim, dim)).collect(),
                w_self: mat(dim, dim),
            }),
            LayerKind::Homogeneous => Layer::Bdmp(BdmpLayer { w: mat(dim, dim) }),
        })
        .collect();
    let relation_table = mat(n_relations, dim);
    let score_w = mat(4 * dim, 1);
    let score_b = Tensor::zeros(1, 1);
    Ok(LayerStack {
        spec,
        k,
        dim,
        n_relations,
        input_proj,
        layers,
        relation_table,
        score_w,
        score_b,
    })
}

/// Closed-form parameter count for a spec without building it.
pub fn param_count(spec: &str, k: usize, dim: usize, n_relations: usize) -> Result<usize> {
    let spec = StackSpec::parse(spec)?;
    let per_layer: usize = spec
        .layers
        .iter()
        .map(|kind| match kind {
            LayerKind::Relational => (n_relations + 1) * dim * dim,
            LayerKind::Homogeneous => dim * dim,
        })
        .sum();
    let head = 2 * (k + 2) * dim + n_relations * dim + 4 * dim + 1;
    Ok(per_layer + head)
}

impl LayerStack {
    pub fn spec(&self) -> &StackSpec {
        &self.spec
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    /// Parameter tensors in canonical order (matches [`LayerStack::param_names`]).
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.input_proj];
        for layer in &self.layers {
            match layer {
                Layer::Udmp(l) => {
                    out.extend(l.w_rel.iter());
                    out.push(&l.w_self);
                }
                Layer::Bdmp(l) => out.push(&l.w),
            }
        }
        out.push(&self.relation_table);
        out.push(&self.score_w);
        out.push(&self.score_b);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.input_proj];
        for layer in &mut self.layers {
            match layer {
                Layer::Udmp(l) => {
                    out.extend(l.w_rel.iter_mut());
                    out.push(&mut l.w_self);
                }
                Layer::Bdmp(l) => out.push(&mut l.w),
            }
        }
        out.push(&mut self.relation_table);
        out.push(&mut self.score_w);
        out.push(&mut self.score_b);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec!["input_proj".to_string()];
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Udmp(l) => {
                    for r in 0..l.w_rel.len() {
                        out.push(format!("layer{i}.w_rel.{r}"));
                    }
                    out.push(format!("layer{i}.w_self"));
                }
                Layer::Bdmp(_) => out.push(format!("layer{i}.w")),
            }
        }
        out.push("relation_table".to_string());
        out.push("score.w".to_string());
        out.push("score.b".to_string());
        out
    }

    pub fn total_params(&self) -> usize {
        self.parameters().iter().map(|t| t.data().len()).sum()
    }

    /// Register every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let vars: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        self.binding_from_vars(&vars)
            .expect("own parameter list always matches layout")
    }

    /// Assemble a [`Binding`] from pre-registered vars in canonical order
    /// (used by gradient checking, which owns the leaves).
    pub fn binding_from_vars(&self, vars: &[Var]) -> Result<Binding> {
        let expected = self.parameters().len();
        if vars.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "expected {expected} parameter vars, got {}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked above");
        let input_proj = next();
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Udmp(l) => {
                    let w_rel: Vec<Var> = (0..l.w_rel.len()).map(|_| next()).collect();
                    layers.push(LayerBinding::Udmp {
                        w_rel,
                        w_self: next(),
                    });
                }
                Layer::Bdmp(_) => layers.push(LayerBinding::Bdmp { w: next() }),
            }
        }
        Ok(Binding {
            flat: vars.to_vec(),
            input_proj,
            layers,
            relation_table: next(),
            score_w: next(),
            score_b: next(),
        })
    }

    /// Run the stack over a subgraph. Returns `(node_embs n×d, pooled 1×d)`
    /// tape handles. Dropout applies after each layer while training.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        sub: &Subgraph,
        training: bool,
        dropout_p: f64,
        rng: &mut Rng,
    ) -> Result<(Var, Var)> {
        let n = sub.num_nodes();
        let feats = one_hot_init(&sub.labels, self.k)?;
        if feats.cols() != self.input_proj.rows() {
            return Err(Error::ShapeMismatch {
                op: "input projection",
                lhs: feats.shape_str(),
                rhs: self.input_proj.shape_str(),
            });
        }
        let feats = tape.constant(feats);
        let mut h = tape.matmul(feats, binding.input_proj)?;

        let edges: Vec<(usize, usize, usize)> = if self.spec.inverse_edges {
            let mut aug = sub.edges.clone();
            aug.extend(sub.edges.iter().map(|&(u, r, v)| (v, r, u)));
            aug.sort_unstable();
            aug.dedup();
            aug
        } else {
            sub.edges.clone()
        };

        for layer_binding in &binding.layers {
            h = match layer_binding {
                LayerBinding::Udmp { w_rel, w_self } => {
                    self.udmp_forward(tape, h, w_rel, *w_self, &edges, n)?
                }
                LayerBinding::Bdmp { w } => bdmp_forward(tape, h, *w, &sub.homo_adj)?,
            };
            if training {
                h = tape.dropout(h, dropout_p, rng, true)?;
            }
        }
        let pooled = tape.mean_rows(h);
        Ok((h, pooled))
    }

    fn udmp_forward(
        &self,
        tape: &mut Tape,
        h: Var,
        w_rel: &[Var],
        w_self: Var,
        edges: &[(usize, usize, usize)],
        n: usize,
    ) -> Result<Var> {
        // In-degree per (node, relation): the normalization constant.
        let mut in_deg: HashMap<(usize, usize), f64> = HashMap::new();
        for &(_, r, v) in edges {
            if r >= self.n_relations {
                return Err(Error::RelationOutOfRange {
                    id: r,
                    count: self.n_relations,
                });
            }
            *in_deg.entry((v, r)).or_insert(0.0) += 1.0;
        }
        let mut acc = tape.matmul(h, w_self)?;
        for (r, &w_r) in w_rel.iter().enumerate() {
            let entries: Vec<(usize, usize, f64)> = edges
                .iter()
                .filter(|&&(_, er, _)| er == r)
                .map(|&(u, _, v)| (v, u, 1.0 / in_deg[&(v, r)]))
                .collect();
            if entries.is_empty() {
                continue;
            }
            let agg = tape.scatter_agg(h, &entries, n)?;
            let term = tape.matmul(agg, w_r)?;
            acc = tape.add(acc, term)?;
        }
        Ok(tape.relu(acc))
    }

    /// Score a target triple from forward outputs: a linear head over
    /// `[pooled ⊕ h_head ⊕ h_tail ⊕ relation_emb]` plus bias.
    pub fn score(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        node_embs: Var,
        pooled: Var,
        r_t: usize,
    ) -> Result<Var> {
        if r_t >= self.n_relations {
            return Err(Error::RelationOutOfRange {
                id: r_t,
                count: self.n_relations,
            });
        }
        let h_head = tape.select_row(node_embs, 0)?;
        let h_tail = tape.select_row(node_embs, 1)?;
        let rel = tape.select_row(binding.relation_table, r_t)?;
        let cat = tape.concat_cols(&[pooled, h_head, h_tail, rel])?;
        let raw = tape.matmul(cat, binding.score_w)?;
        tape.add(raw, binding.score_b)
    }

    /// Untracked single-triple score (evaluation path): fresh tape, dropout
    /// off.
    pub fn infer(&self, sub: &Subgraph) -> Result<f64> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape);
        let mut rng = rng::stream(0, "unused-eval-dropout");
        let (node_embs, pooled) = self.forward(&mut tape, &binding, sub, false, 0.0, &mut rng)?;
        let f = self.score(&mut tape, &binding, node_embs, pooled, sub.target_relation)?;
        Ok(tape.scalar(f))
    }

    /// Overwrite parameters from a flat tensor list in canonical order.
    pub fn set_parameters(&mut self, tensors: &[Tensor]) -> Result<()> {
        let names = self.param_names();
        let mut params = self.parameters_mut();
        if tensors.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                params.len(),
                tensors.len()
            )));
        }
        for ((dst, src), name) in params.iter_mut().zip(tensors).zip(names) {
            if !dst.same_shape(src) {
                return Err(Error::CheckpointShape {
                    name,
                    found: src.shape_str(),
                    expected: dst.shape_str(),
                });
            }
            **dst = src.clone();
        }
        Ok(())
    }
}

fn bdmp_forward(tape: &mut Tape, h: Var, w: Var, homo_adj: &[Vec<usize>]) -> Result<Var> {
    let n = homo_adj.len();
    let deg: Vec<f64> = homo_adj.iter().map(|a| a.len() as f64).collect();
    let mut entries = Vec::new();
    for (i, neighbors) in homo_adj.iter().enumerate() {
        for &j in neighbors {
            entries.push((i, j, 1.0 / (deg[i] * deg[j]).sqrt()));
        }
    }
    let agg = if entries.is_empty() {
        let cols = tape.value(h).cols();
        tape.constant(Tensor::zeros(n, cols))
    } else {
        tape.scatter_agg(h, &entries, n)?
    };
    let out = tape.matmul(agg, w)?;
    Ok(tape.relu(out))
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    spec: String,
    k: usize,
    dim: usize,
    relations: Vec<String>,
    config: serde_json::Value,
    params: BTreeMap<String, ParamEntry>,
}

const CHECKPOINT_VERSION: u32 = 1;

/// Write a versioned JSON checkpoint: spec metadata, the training relation
/// vocabulary, an opaque config snapshot, and every parameter as shape +
/// flat float array.
pub fn save_checkpoint<P: AsRef<Path>>(
    stack: &LayerStack,
    relations: &[String],
    config: serde_json::Value,
    path: P,
) -> Result<()> {
    let mut params = BTreeMap::new();
    for (name, tensor) in stack.param_names().into_iter().zip(stack.parameters()) {
        params.insert(
            name,
            ParamEntry {
                shape: [tensor.rows(), tensor.cols()],
                data: tensor.data().to_vec(),
            },
        );
    }
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        spec: stack.spec().name.clone(),
        k: stack.k(),
        dim: stack.dim(),
        relations: relations.to_vec(),
        config,
        params,
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    let path = path.as_ref();
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load a checkpoint, validating the parameter shapes implied by its spec
/// string. Returns the stack, the relation vocabulary it was trained with,
/// and the stored config snapshot.
pub fn load_checkpoint<P: AsRef<Path>>(
    path: P,
) -> Result<(LayerStack, Vec<String>, serde_json::Value)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    let mut stack = build_stack(&file.spec, file.k, file.dim, file.relations.len(), 0)?;
    let names = stack.param_names();
    let mut tensors = Vec::with_capacity(names.len());
    for (name, current) in names.iter().zip(stack.parameters()) {
        let entry = file
            .params
            .get(name)
            .ok_or_else(|| Error::CheckpointMissing(name.clone()))?;
        if entry.shape != [current.rows(), current.cols()] {
            return Err(Error::CheckpointShape {
                name: name.clone(),
                found: format!("{}x{}", entry.shape[0], entry.shape[1]),
                expected: current.shape_str(),
            });
        }
        if entry.data.len() != entry.shape[0] * entry.shape[1] {
            return Err(Error::CheckpointFormat(format!(
                "parameter `{name}` has {} values for shape {}x{}",
                entry.data.len(),
                entry.shape[0],
                entry.shape[1]
            )));
        }
        tensors.push(Tensor::from_vec(
            entry.shape[0],
            entry.shape[1],
            entry.data.clone(),
        ));
    }
    stack.set_parameters(&tensors)?;
    Ok((stack, file.relations, file.config))
}
