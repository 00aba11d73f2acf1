//! Margin-loss training: negative sampling, Adam, and the epoch loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::kg::{KnowledgeGraph, Triple};
use crate::model::{build_stack, LayerStack};
use crate::rng::{self, Rng};
use crate::subgraph::{extract, SubgraphMode};
use crate::tensor::{Tape, Tensor, Var};

impl Serialize for SubgraphMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SubgraphMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SubgraphMode::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Hyperparameters. Defaults follow the reference protocol: 3-hop
/// neighbor-enhanced subgraphs, a 3-layer `RGR` stack at dimension 32,
/// dropout 0.5, Adam at 0.001, batch size 16, margin 10.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub dim: usize,
    pub spec: String,
    pub subgraph_mode: SubgraphMode,
    pub lr: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub neg_per_pos: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub homo_self_loops: bool,
    pub grad_clip: Option<f64>,
    /// Train only on positives of this relation (the rest of the graph
    /// still provides subgraph structure). All triples when unset.
    #[serde(default)]
    pub target_relation: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 3,
            dim: 32,
            spec: "RGR".to_string(),
            subgraph_mode: SubgraphMode::NeighborEnhanced,
            lr: 0.001,
            batch_size: 16,
            margin: 10.0,
            dropout: 0.5,
            epochs: 50,
            neg_per_pos: 1,
            seed: 0,
            early_stop_patience: 10,
            homo_self_loops: true,
            grad_clip: None,
            target_relation: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::InvalidMargin(self.margin));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidDropout(self.dropout));
        }
        if self.k < 1 {
            return Err(Error::InvalidHopCount(self.k));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.neg_per_pos == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, epochs, and neg_per_pos must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Corrupt the head or tail of `pos` with a uniformly drawn entity. Draws
/// colliding with the positive itself or with a known fact are resampled up
/// to 100 times; the last draw is accepted unconditionally after that.
pub fn sample_negative(g: &KnowledgeGraph, pos: Triple, rng: &mut Rng) -> Triple {
    let n = g.num_entities();
    let mut candidate = pos;
    for _ in 0..100 {
        let replacement = rng.gen_range(0..n);
        candidate = if rng.gen::<bool>() {
            Triple::new(replacement, pos.rel, pos.tail)
        } else {
            Triple::new(pos.head, pos.rel, replacement)
        };
        if candidate != pos && !g.contains(&candidate) {
            return candidate;
        }
    }
    candidate
}

/// `max(0, f_neg - f_pos + margin)`.
pub fn hinge_loss(f_pos: f64, f_neg: f64, margin: f64) -> f64 {
    (f_neg - f_pos + margin).max(0.0)
}

/// Tape-level hinge so gradients flow to both scores.
pub fn hinge_loss_on_tape(tape: &mut Tape, f_pos: Var, f_neg: Var, margin: f64) -> Result<Var> {
    let diff = tape.sub(f_neg, f_pos)?;
    let shifted = tape.add_scalar(diff, margin);
    Ok(tape.relu(shifted))
}

/// Adam with bias correction (β1 = 0.9, β2 = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update over matched parameter/gradient lists.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam state tracks {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if !p.same_shape(g) || !self.m[i].same_shape(g) {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape_str(),
                    rhs: g.shape_str(),
                });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for ((pv, gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_auc_pr: Option<f64>,
    /// Wall-clock seconds; logged to the console, excluded from the history
    /// CSV so repeated runs stay byte-identical.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub stack: LayerStack,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Deterministic CSV of the history (no timing column).
pub fn history_to_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,valid_auc_pr\n");
    for row in history {
        let auc = row
            .valid_auc_pr
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", row.epoch, row.train_loss, auc));
    }
    out
}

/// Train a stack on `train_graph`, early-stopping on validation AUC-PR when
/// validation triples are supplied. Returns the best checkpoint by
/// validation AUC (final parameters when no validation set exists).
pub fn train(
    train_graph: &KnowledgeGraph,
    valid_triples: &[Triple],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_logger(train_graph, valid_triples, cfg, &mut |_| {})
}

/// `train` with a per-epoch callback (the CLI uses it for progress lines).
pub fn train_with_logger(
    train_graph: &KnowledgeGraph,
    valid_triples: &[Triple],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let positives: Vec<Triple> = match &cfg.target_relation {
        Some(name) => {
            let rel = train_graph
                .relations()
                .get(name)
                .ok_or_else(|| Error::UnknownRelation(name.clone()))?;
            train_graph
                .triples()
                .iter()
                .copied()
                .filter(|t| t.rel == rel)
                .collect()
        }
        None => train_graph.triples().to_vec(),
    };
    if positives.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    for t in valid_triples {
        if t.rel >= train_graph.num_relations() {
            return Err(Error::RelationOutOfRange {
                id: t.rel,
                count: train_graph.num_relations(),
            });
        }
    }

    let mut stack = build_stack(
        &cfg.spec,
        cfg.k,
        cfg.dim,
        train_graph.num_relations(),
        cfg.seed,
    )?;
    let mut adam = AdamState::new(&stack.parameters());
    let mut shuffle_rng = rng::stream(cfg.seed, "shuffle");
    let mut neg_rng = rng::stream(cfg.seed, "negatives");
    let mut dropout_rng = rng::stream(cfg.seed, "dropout");

    let mut history = Vec::new();
    let mut best: Option<(f64, LayerStack, usize)> = None;
    let mut stale_epochs = 0;

    let mut order: Vec<usize> = (0..positives.len()).collect();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let binding = stack.bind(&mut tape);
            let mut batch_loss: Option<Var> = None;
            for &idx in batch {
                let pos = positives[idx];
                let pos_sub = extract(
                    train_graph,
                    pos.head,
                    pos.rel,
                    pos.tail,
                    cfg.k,
                    cfg.subgraph_mode,
                    cfg.homo_self_loops,
                )?;
                let (h, pooled) = stack.forward(
                    &mut tape,
                    &binding,
                    &pos_sub,
                    true,
                    cfg.dropout,
                    &mut dropout_rng,
                )?;
                let f_pos = stack.score(&mut tape, &binding, h, pooled, pos.rel)?;
                for _ in 0..cfg.neg_per_pos {
                    // The negative gets its own subgraph around the corrupted
                    // pair; its structure is the discriminative signal.
                    let neg = sample_negative(train_graph, pos, &mut neg_rng);
                    let neg_sub = extract(
                        train_graph,
                        neg.head,
                        neg.rel,
                        neg.tail,
                        cfg.k,
                        cfg.subgraph_mode,
                        cfg.homo_self_loops,
                    )?;
                    let (hn, pooled_n) = stack.forward(
                        &mut tape,
                        &binding,
                        &neg_sub,
                        true,
                        cfg.dropout,
                        &mut dropout_rng,
                    )?;
                    let f_neg = stack.score(&mut tape, &binding, hn, pooled_n, neg.rel)?;
                    let pair = hinge_loss_on_tape(&mut tape, f_pos, f_neg, cfg.margin)?;
                    batch_loss = Some(match batch_loss {
                        Some(acc) => tape.add(acc, pair)?,
                        None => pair,
                    });
                }
            }
            let loss = batch_loss.expect("batches are nonempty");
            epoch_loss += tape.scalar(loss);
            tape.backward(loss)?;
            let mut grads: Vec<Tensor> =
                binding.flat_vars().iter().map(|&v| tape.grad(v).clone()).collect();
            if let Some(limit) = cfg.grad_clip {
                clip_global_norm(&mut grads, limit);
            }
            adam.step(&mut stack.parameters_mut(), &grads, cfg.lr)?;
        }

        let valid_auc = if valid_triples.is_empty() {
            None
        } else {
            let mut eval_rng = rng::indexed_stream(cfg.seed, "eval-valid", epoch as u64);
            Some(validation_auc(
                &stack,
                train_graph,
                valid_triples,
                cfg,
                &mut eval_rng,
            )?)
        };

        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss,
            valid_auc_pr: valid_auc,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.push(stats);

        if let Some(auc) = valid_auc {
            let prev_best = best.as_ref().map(|(b, _, _)| *b);
            if prev_best.is_none_or(|b| auc > b) {
                best = Some((auc, stack.clone(), epoch));
                stale_epochs = 0;
            } else {
                // A tie keeps the later (more trained) checkpoint but does
                // not count as improvement for patience.
                if prev_best == Some(auc) {
                    best = Some((auc, stack.clone(), epoch));
                }
                stale_epochs += 1;
                if stale_epochs >= cfg.early_stop_patience {
                    break;
                }
            }
        }
    }

    let (stack, best_epoch) = match best {
        Some((_, s, e)) => (s, e),
        None => {
            let last = history.len().saturating_sub(1);
            (stack, last)
        }
    };
    Ok(TrainOutcome {
        stack,
        history,
        best_epoch,
    })
}

fn clip_global_norm(grads: &mut [Tensor], limit: f64) {
    let norm: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > limit && norm > 0.0 {
        let scale = limit / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

/// Validation AUC-PR: positives against one sampled negative each (the
/// evaluation protocol), averaged over a few negative draws so early
/// stopping does not chase sampling noise.
const VALIDATION_NEGATIVE_ROUNDS: usize = 3;

fn validation_auc(
    stack: &LayerStack,
    graph: &KnowledgeGraph,
    positives: &[Triple],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let mut pos_scores = Vec::with_capacity(positives.len());
    for &pos in positives {
        pos_scores.push(eval::score_on_graph(stack, graph, pos, cfg)?);
    }
    let mut total = 0.0;
    for _ in 0..VALIDATION_NEGATIVE_ROUNDS {
        let mut neg_scores = Vec::with_capacity(positives.len());
        for &pos in positives {
            let neg = sample_negative(graph, pos, rng);
            neg_scores.push(eval::score_on_graph(stack, graph, neg, cfg)?);
        }
        total += eval::auc_pr(&pos_scores, &neg_scores)?;
    }
    Ok(total / VALIDATION_NEGATIVE_ROUNDS as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Vocab;

    fn toy_graph() -> KnowledgeGraph {
        let entities = Vocab::from_names(["A", "B", "C"]);
        let relations = Vocab::from_names(["r"]);
        let triples = vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 0, 2),
            Triple::new(0, 0, 2),
        ];
        KnowledgeGraph::from_parts(entities, relations, triples).unwrap()
    }

    #[test]
    fn negative_differs_in_exactly_one_slot() {
        let g = toy_graph();
        let pos = Triple::new(0, 0, 1);
        let mut rng = rng::stream(3, "negatives");
        for _ in 0..200 {
            let neg = sample_negative(&g, pos, &mut rng);
            assert_eq!(neg.rel, pos.rel);
            let head_changed = neg.head != pos.head;
            let tail_changed = neg.tail != pos.tail;
            assert!(head_changed ^ tail_changed, "exactly one endpoint changes");
        }
    }

    #[test]
    fn negative_space_with_two_entities() {
        let entities = Vocab::from_names(["A", "B"]);
        let relations = Vocab::from_names(["r"]);
        let g = KnowledgeGraph::from_parts(
            entities,
            relations,
            vec![Triple::new(0, 0, 1)],
        )
        .unwrap();
        let pos = Triple::new(0, 0, 1);
        let mut rng = rng::stream(5, "negatives");
        for _ in 0..100 {
            let neg = sample_negative(&g, pos, &mut rng);
            assert!(
                neg == Triple::new(1, 0, 1) || neg == Triple::new(0, 0, 0),
                "unexpected negative {neg:?}"
            );
        }
    }

    #[test]
    fn negative_sequence_is_seeded() {
        let g = toy_graph();
        let pos = Triple::new(0, 0, 1);
        let seq = |seed| {
            let mut rng = rng::stream(seed, "negatives");
            (0..20)
                .map(|_| sample_negative(&g, pos, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
        assert_ne!(seq(9), seq(10));
    }

    #[test]
    fn hinge_values_and_gradients() {
        // Inactive hinge: zero loss, zero gradients.
        assert_eq!(hinge_loss(12.0, 1.0, 10.0), 0.0);
        // Equal scores: loss = margin.
        assert_eq!(hinge_loss(4.0, 4.0, 10.0), 10.0);
        // Active hinge example with unit subgradients.
        assert_eq!(hinge_loss(1.0, 3.0, 10.0), 12.0);
        // Degenerate zero margin.
        assert_eq!(hinge_loss(4.0, 4.0, 0.0), 0.0);

        let mut tape = Tape::new();
        let f_pos = tape.leaf(Tensor::from_vec(1, 1, vec![1.0]));
        let f_neg = tape.leaf(Tensor::from_vec(1, 1, vec![3.0]));
        let loss = hinge_loss_on_tape(&mut tape, f_pos, f_neg, 10.0).unwrap();
        assert_eq!(tape.scalar(loss), 12.0);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(f_pos).data(), &[-1.0]);
        assert_eq!(tape.grad(f_neg).data(), &[1.0]);

        // Inactive hinge gradients vanish.
        let mut tape = Tape::new();
        let f_pos = tape.leaf(Tensor::from_vec(1, 1, vec![20.0]));
        let f_neg = tape.leaf(Tensor::from_vec(1, 1, vec![1.0]));
        let loss = hinge_loss_on_tape(&mut tape, f_pos, f_neg, 10.0).unwrap();
        assert_eq!(tape.scalar(loss), 0.0);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(f_pos).data(), &[0.0]);
        assert_eq!(tape.grad(f_neg).data(), &[0.0]);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut p = Tensor::from_vec(1, 2, vec![1.5, -2.5]);
        let mut adam = AdamState::new(&[&p]);
        let g = Tensor::zeros(1, 2);
        adam.step(&mut [&mut p], &[g], 0.1).unwrap();
        assert_eq!(p.data(), &[1.5, -2.5]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = Tensor::from_vec(1, 1, vec![0.0]);
        let mut adam = AdamState::new(&[&p]);
        let g = Tensor::from_vec(1, 1, vec![1.0]);
        let lr = 0.01;
        adam.step(&mut [&mut p], &[g], lr).unwrap();
        // First bias-corrected step is -lr * 1/(1 + eps').
        assert!((p.data()[0] + lr).abs() < 1e-6, "got {}", p.data()[0]);
    }

    #[test]
    fn adam_constant_gradient_moves_monotonically() {
        let mut p = Tensor::from_vec(1, 1, vec![1.0]);
        let mut adam = AdamState::new(&[&p]);
        let g = Tensor::from_vec(1, 1, vec![0.5]);
        let mut prev = p.data()[0];
        for _ in 0..5 {
            adam.step(&mut [&mut p], std::slice::from_ref(&g), 0.01).unwrap();
            assert!(p.data()[0] < prev);
            prev = p.data()[0];
        }
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = Tensor::zeros(2, 2);
        let mut adam = AdamState::new(&[&p]);
        let g = Tensor::zeros(1, 2);
        assert!(adam.step(&mut [&mut p], &[g], 0.1).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_bit_identical() {
        let g = toy_graph();
        let cfg = TrainConfig {
            k: 1,
            dim: 4,
            epochs: 1,
            lr: 0.0,
            ..Default::default()
        };
        let before = build_stack(&cfg.spec, cfg.k, cfg.dim, 1, cfg.seed).unwrap();
        let out = train(&g, &[], &cfg).unwrap();
        for (a, b) in before.parameters().iter().zip(out.stack.parameters()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn one_epoch_on_toy_graph_produces_finite_loss() {
        let g = toy_graph();
        let cfg = TrainConfig {
            k: 1,
            dim: 4,
            epochs: 1,
            ..Default::default()
        };
        let out = train(&g, &[], &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert!(out.history[0].train_loss.is_finite());
        assert!(out.history[0].train_loss >= 0.0);
    }

    #[test]
    fn loss_history_is_reproducible() {
        let g = toy_graph();
        let cfg = TrainConfig {
            k: 1,
            dim: 4,
            epochs: 3,
            ..Default::default()
        };
        let a = train(&g, &[], &cfg).unwrap();
        let b = train(&g, &[], &cfg).unwrap();
        let losses = |o: &TrainOutcome| o.history.iter().map(|h| h.train_loss).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let entities = Vocab::from_names(["A"]);
        let relations = Vocab::from_names(["r"]);
        // from_parts would reject zero triples only via EmptyTrainingSet at
        // train time; build a one-triple graph and strip it via empty slice.
        let g = KnowledgeGraph::from_parts(entities, relations, vec![]).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(train(&g, &[], &cfg), Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn training_never_mutates_the_graph() {
        let g = toy_graph();
        let before = g.triples().to_vec();
        let cfg = TrainConfig {
            k: 1,
            dim: 4,
            epochs: 2,
            ..Default::default()
        };
        train(&g, &[], &cfg).unwrap();
        assert_eq!(g.triples(), &before[..]);
    }

    #[test]
    fn defaults_follow_the_reference_protocol() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.dim, 32);
        assert_eq!(cfg.spec, "RGR");
        assert_eq!(cfg.subgraph_mode, SubgraphMode::NeighborEnhanced);
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.margin, 10.0);
        assert_eq!(cfg.dropout, 0.5);
        assert_eq!(cfg.epochs, 50);
        assert_eq!(cfg.neg_per_pos, 1);
        assert_eq!(cfg.early_stop_patience, 10);
        assert!(cfg.homo_self_loops);
        assert!(cfg.grad_clip.is_none());
        cfg.validate().unwrap();
    }

    #[test]
    fn history_csv_has_no_timing_column() {
        let history = vec![EpochStats {
            epoch: 0,
            train_loss: 1.25,
            valid_auc_pr: Some(0.5),
            seconds: 123.0,
        }];
        let csv = history_to_csv(&history);
        assert_eq!(csv, "epoch,train_loss,valid_auc_pr\n0,1.25,0.5\n");
    }
}
