//! Whole-model finite-difference verification.
//!
//! Builds random small graphs, extracts subgraph pairs (a positive and its
//! corrupted negative), runs the full forward + scoring + hinge pipeline,
//! and checks every parameter gradient against central differences.

use rand::Rng as _;

use crate::error::Result;
use crate::kg::{KnowledgeGraph, Triple, Vocab};
use crate::model::{build_stack, LayerStack};
use crate::rng::{self, Rng};
use crate::subgraph::{extract, Subgraph, SubgraphMode};
use crate::tensor::{grad_check, Tensor};
use crate::train::hinge_loss_on_tape;

/// Random directed multigraph over synthetic entity/relation names.
pub fn random_graph(n_entities: usize, n_edges: usize, n_relations: usize, rng: &mut Rng) -> KnowledgeGraph {
    let entities = Vocab::from_names((0..n_entities).map(|i| format!("e{i}")));
    let relations = Vocab::from_names((0..n_relations).map(|i| format!("r{i}")));
    let triples: Vec<Triple> = (0..n_edges)
        .map(|_| {
            Triple::new(
                rng.gen_range(0..n_entities),
                rng.gen_range(0..n_relations),
                rng.gen_range(0..n_entities),
            )
        })
        .collect();
    KnowledgeGraph::from_parts(entities, relations, triples)
        .expect("synthetic ids are in range")
}

/// Sample a (positive, negative) subgraph pair whose positive subgraph has
/// `min_nodes..=max_nodes` nodes.
fn sample_subgraph_pair(
    n_relations: usize,
    k: usize,
    min_nodes: usize,
    max_nodes: usize,
    rng: &mut Rng,
) -> (Subgraph, Subgraph) {
    loop {
        let n = rng.gen_range(8..=16);
        let g = random_graph(n, 2 * n, n_relations, rng);
        if g.num_triples() == 0 {
            continue;
        }
        let pos = g.triples()[rng.gen_range(0..g.num_triples())];
        let sub = extract(
            &g,
            pos.head,
            pos.rel,
            pos.tail,
            k,
            SubgraphMode::NeighborEnhanced,
            true,
        )
        .expect("valid ids");
        if sub.num_nodes() < min_nodes || sub.num_nodes() > max_nodes {
            continue;
        }
        let neg_tail = rng.gen_range(0..g.num_entities());
        let neg_sub = extract(
            &g,
            pos.head,
            pos.rel,
            neg_tail,
            k,
            SubgraphMode::NeighborEnhanced,
            true,
        )
        .expect("valid ids");
        return (sub, neg_sub);
    }
}

#[derive(Debug)]
pub struct ModelGradCheckSummary {
    /// Worst relative error per checked subgraph pair.
    pub per_case: Vec<f64>,
    /// Worst relative error per parameter tensor across all cases.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl ModelGradCheckSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Check the full loss pipeline (two forwards, scoring, hinge) on `n_cases`
/// random subgraph pairs, dropout disabled.
#[allow(clippy::too_many_arguments)]
pub fn check_full_model(
    spec: &str,
    k: usize,
    dim: usize,
    n_relations: usize,
    n_cases: usize,
    step: f64,
    tol: f64,
    seed: u64,
) -> Result<ModelGradCheckSummary> {
    let stack: LayerStack = build_stack(spec, k, dim, n_relations, seed)?;
    let params: Vec<Tensor> = stack.parameters().into_iter().cloned().collect();
    let names = stack.param_names();
    let mut gen_rng = rng::stream(seed, "gradcheck-graphs");

    let loss_for =
        |tape: &mut crate::tensor::Tape, vars: &[crate::tensor::Var], pos_sub: &Subgraph, neg_sub: &Subgraph| {
            let binding = stack.binding_from_vars(vars)?;
            let mut unused = rng::stream(0, "off");
            let (h_p, pool_p) = stack.forward(tape, &binding, pos_sub, false, 0.0, &mut unused)?;
            let f_pos = stack.score(tape, &binding, h_p, pool_p, pos_sub.target_relation)?;
            let (h_n, pool_n) = stack.forward(tape, &binding, neg_sub, false, 0.0, &mut unused)?;
            let f_neg = stack.score(tape, &binding, h_n, pool_n, neg_sub.target_relation)?;
            hinge_loss_on_tape(tape, f_pos, f_neg, 10.0)
        };

    // Central differences are only meaningful away from ReLU kinks: a
    // preactivation within the probe step of zero flips activation state
    // mid-difference. Keep a case only if every ReLU input clears the step
    // size by a wide margin.
    let kink_clearance = (step * 10.0).max(1e-3);

    let mut per_case = Vec::with_capacity(n_cases);
    let mut per_param = vec![0.0f64; params.len()];
    let mut attempts = 0;
    while per_case.len() < n_cases {
        attempts += 1;
        assert!(
            attempts < 200 * n_cases,
            "could not sample enough kink-free subgraph pairs"
        );
        let (pos_sub, neg_sub) = sample_subgraph_pair(n_relations, k, 5, 10, &mut gen_rng);
        {
            let mut probe = crate::tensor::Tape::new();
            let vars: Vec<crate::tensor::Var> = params
                .iter()
                .map(|t| probe.constant(t.clone()))
                .collect();
            loss_for(&mut probe, &vars, &pos_sub, &neg_sub)?;
            if probe.min_relu_input_abs() < kink_clearance {
                continue;
            }
        }
        let report = grad_check(
            |tape, vars| loss_for(tape, vars, &pos_sub, &neg_sub),
            &params,
            step,
            tol,
        )?;
        for (acc, &err) in per_param.iter_mut().zip(&report.per_param) {
            *acc = acc.max(err);
        }
        per_case.push(report.max_rel_error);
    }
    let max_rel_error = per_case.iter().copied().fold(0.0, f64::max);
    Ok(ModelGradCheckSummary {
        per_case,
        per_param: names.into_iter().zip(per_param).collect(),
        max_rel_error,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_model_passes_on_a_few_cases() {
        let summary = check_full_model("RGR", 2, 6, 2, 3, 1e-4, 1e-4, 5).unwrap();
        assert!(summary.passed(), "max rel err {}", summary.max_rel_error);
        assert_eq!(summary.per_case.len(), 3);
    }

    #[test]
    fn random_graph_is_reproducible() {
        let mut a = rng::stream(3, "g");
        let mut b = rng::stream(3, "g");
        let ga = random_graph(10, 20, 3, &mut a);
        let gb = random_graph(10, 20, 3, &mut b);
        assert_eq!(ga.triples(), gb.triples());
    }
}
