//! Classification (AUC-PR) and ranking (Hits@k) evaluation.
//!
//! AUC-PR is average precision over positive scores vs. an equal number of
//! sampled negative scores; Hits@k ranks each positive against 50 sampled
//! negatives by default. Ties break pessimistically in both metrics so a
//! constant scorer cannot look good.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};
use crate::model::LayerStack;
use crate::rng;
use crate::subgraph::extract;
use crate::train::{sample_negative, TrainConfig};
use crate::util::parallel_map;

/// Average precision with pessimistic ties: scores sort descending and a
/// positive tied with negatives ranks after all of them.
pub fn auc_pr(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut ranked: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("scores must not be NaN")
            .then(a.1.cmp(&b.1))
    });
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (i, &(_, is_pos)) in ranked.iter().enumerate() {
        if is_pos {
            hits += 1;
            precision_sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(precision_sum / pos_scores.len() as f64)
}

/// Pessimistic rank of `target` among `negatives`: ties count against the
/// target.
pub fn rank_against(target: f64, negatives: &[f64]) -> Result<usize> {
    if negatives.is_empty() {
        return Err(Error::EmptyScores);
    }
    let above = negatives.iter().filter(|&&n| n > target).count();
    let tied = negatives.iter().filter(|&&n| n == target).count();
    Ok(1 + above + tied)
}

/// 1 iff the pessimistic rank of `target` among `negatives` is within `k`.
pub fn hits_at_k(target: f64, negatives: &[f64], k: usize) -> Result<bool> {
    Ok(rank_against(target, negatives)? <= k)
}

/// Extract the triple's subgraph from `graph` and score it.
pub fn score_on_graph(
    stack: &LayerStack,
    graph: &KnowledgeGraph,
    triple: Triple,
    cfg: &TrainConfig,
) -> Result<f64> {
    let sub = extract(
        graph,
        triple.head,
        triple.rel,
        triple.tail,
        cfg.k,
        cfg.subgraph_mode,
        cfg.homo_self_loops,
    )?;
    stack.infer(&sub)
}

/// Ranking protocol knobs.
#[derive(Debug, Clone, Serialize)]
pub struct EvalProtocol {
    /// Negatives per positive for the ranking metric.
    pub n_ranking_negatives: usize,
    pub hits_k: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            n_ranking_negatives: 50,
            hits_k: 10,
        }
    }
}

/// Per-triple evaluation record.
#[derive(Debug, Clone, Serialize)]
pub struct TripleRecord {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub score: f64,
    pub classification_negative_score: f64,
    pub ranking_negative_scores: Vec<f64>,
    pub rank: usize,
    pub hit: bool,
}

/// Full evaluation output: per-triple records plus aggregates, with the
/// config and seed that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub auc_pr: f64,
    pub hits_at_k: f64,
    pub hits_k: usize,
    pub n_ranking_negatives: usize,
    pub n_triples: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub records: Vec<TripleRecord>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One aggregate TSV line (plus header) for table assembly.
    pub fn to_tsv(&self, label: &str) -> String {
        format!(
            "dataset\tauc_pr\thits@{}\tn_triples\n{}\t{}\t{}\t{}\n",
            self.hits_k, label, self.auc_pr, self.hits_at_k, self.n_triples
        )
    }
}

/// Score `test_triples` against `test_graph` (inductive: its entities may be
/// entirely new; relations must come from the training vocabulary).
///
/// For each positive: one sampled negative for AUC-PR, `n_ranking_negatives`
/// sampled negatives for Hits@k, all filtered against known test-graph
/// facts. Sampling is seeded; scoring may fan out over `threads`.
pub fn evaluate(
    stack: &LayerStack,
    test_graph: &KnowledgeGraph,
    test_triples: &[Triple],
    cfg: &TrainConfig,
    protocol: &EvalProtocol,
    seed: u64,
    threads: usize,
) -> Result<EvalReport> {
    if test_triples.is_empty() {
        return Err(Error::EmptyScores);
    }
    for t in test_triples {
        if t.rel >= stack.n_relations() {
            return Err(Error::UnknownRelation(
                test_graph.relations().name(t.rel).to_string(),
            ));
        }
    }

    // Sample every negative up front in a fixed order so the result does not
    // depend on the thread count.
    let mut auc_rng = rng::stream(seed, "eval-auc");
    let mut rank_rng = rng::stream(seed, "eval-rank");
    let jobs: Vec<(Triple, Triple, Vec<Triple>)> = test_triples
        .iter()
        .map(|&pos| {
            let auc_neg = sample_negative(test_graph, pos, &mut auc_rng);
            let rank_negs = (0..protocol.n_ranking_negatives)
                .map(|_| sample_negative(test_graph, pos, &mut rank_rng))
                .collect();
            (pos, auc_neg, rank_negs)
        })
        .collect();

    let scored: Vec<Result<(f64, f64, Vec<f64>)>> = parallel_map(&jobs, threads, |job| {
        let (pos, auc_neg, rank_negs) = job;
        let pos_score = score_on_graph(stack, test_graph, *pos, cfg)?;
        let auc_neg_score = score_on_graph(stack, test_graph, *auc_neg, cfg)?;
        let rank_neg_scores = rank_negs
            .iter()
            .map(|&n| score_on_graph(stack, test_graph, n, cfg))
            .collect::<Result<Vec<f64>>>()?;
        Ok((pos_score, auc_neg_score, rank_neg_scores))
    });

    let mut records = Vec::with_capacity(test_triples.len());
    let mut pos_scores = Vec::with_capacity(test_triples.len());
    let mut neg_scores = Vec::with_capacity(test_triples.len());
    let mut hit_count = 0usize;
    for (job, scored) in jobs.iter().zip(scored) {
        let (pos, _, _) = job;
        let (pos_score, auc_neg_score, rank_neg_scores) = scored?;
        let rank = rank_against(pos_score, &rank_neg_scores)?;
        let hit = rank <= protocol.hits_k;
        hit_count += hit as usize;
        pos_scores.push(pos_score);
        neg_scores.push(auc_neg_score);
        records.push(TripleRecord {
            head: test_graph.entities().name(pos.head).to_string(),
            relation: test_graph.relations().name(pos.rel).to_string(),
            tail: test_graph.entities().name(pos.tail).to_string(),
            score: pos_score,
            classification_negative_score: auc_neg_score,
            ranking_negative_scores: rank_neg_scores,
            rank,
            hit,
        });
    }

    Ok(EvalReport {
        auc_pr: auc_pr(&pos_scores, &neg_scores)?,
        hits_at_k: hit_count as f64 / test_triples.len() as f64,
        hits_k: protocol.hits_k,
        n_ranking_negatives: protocol.n_ranking_negatives,
        n_triples: test_triples.len(),
        seed,
        config: cfg.clone(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Vocab;
    use crate::model::build_stack;
    use crate::subgraph::Subgraph;
    use proptest::prelude::*;

    #[test]
    fn perfect_separation_scores_one() {
        assert_eq!(auc_pr(&[1.0], &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn hand_example_five_sixths() {
        let ap = auc_pr(&[0.9, 0.4], &[0.6, 0.1]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15, "got {ap}");
    }

    #[test]
    fn single_inverted_pair_scores_half() {
        assert_eq!(auc_pr(&[0.0], &[1.0]).unwrap(), 0.5);
    }

    #[test]
    fn all_tied_single_pair_scores_half() {
        assert_eq!(auc_pr(&[0.0], &[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn empty_lists_error() {
        assert!(auc_pr(&[], &[1.0]).is_err());
        assert!(auc_pr(&[1.0], &[]).is_err());
        assert!(rank_against(1.0, &[]).is_err());
    }

    #[test]
    fn rank_is_one_when_above_all_negatives() {
        let negs = vec![0.0; 50];
        assert_eq!(rank_against(1.0, &negs).unwrap(), 1);
        assert!(hits_at_k(1.0, &negs, 10).unwrap());
    }

    #[test]
    fn ties_rank_pessimistically() {
        let mut negs = vec![0.5; 12];
        negs.extend(vec![-1.0; 38]);
        assert_eq!(rank_against(0.5, &negs).unwrap(), 13);
        assert!(!hits_at_k(0.5, &negs, 10).unwrap());
    }

    #[test]
    fn rank_is_last_when_below_all_negatives() {
        let negs = vec![1.0; 50];
        assert_eq!(rank_against(0.0, &negs).unwrap(), 51);
        assert!(!hits_at_k(0.0, &negs, 10).unwrap());
    }

    #[test]
    fn score_ignores_global_entity_ids() {
        // Two structurally identical subgraphs over different global ids
        // must score identically.
        let stack = build_stack("RGR", 2, 6, 2, 13).unwrap();
        let build = |globals: Vec<usize>| Subgraph {
            nodes: globals,
            edges: vec![(0, 0, 1), (2, 1, 1)],
            labels: vec![(0, 1), (1, 0), (1, 1)],
            target_relation: 1,
            homo_adj: vec![vec![0, 1], vec![0, 1, 2], vec![1, 2]],
        };
        let a = stack.infer(&build(vec![3, 8, 21])).unwrap();
        let b = stack.infer(&build(vec![100, 5, 77])).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn auc_pr_invariant_under_strictly_monotone_transform(
            pos in proptest::collection::vec(-1e3..1e3f64, 1..12),
            neg in proptest::collection::vec(-1e3..1e3f64, 1..12),
        ) {
            let base = auc_pr(&pos, &neg).unwrap();
            let squash = |v: &f64| (v / 2048.0).tanh() * 3.0 + 1.0;
            let pos2: Vec<f64> = pos.iter().map(squash).collect();
            let neg2: Vec<f64> = neg.iter().map(squash).collect();
            let transformed = auc_pr(&pos2, &neg2).unwrap();
            prop_assert!((base - transformed).abs() < 1e-9,
                "{base} vs {transformed}");
        }

        #[test]
        fn raising_target_score_never_loses_a_hit(
            target in -10.0..10.0f64,
            bump in 0.0..5.0f64,
            negs in proptest::collection::vec(-10.0..10.0f64, 1..60),
        ) {
            let before = hits_at_k(target, &negs, 10).unwrap();
            let after = hits_at_k(target + bump, &negs, 10).unwrap();
            prop_assert!(!(before && !after));
        }
    }

    #[test]
    fn evaluate_is_deterministic_and_recomputable() {
        let entities = Vocab::from_names(["A", "B", "C", "D"]);
        let relations = Vocab::from_names(["r", "s"]);
        let triples = vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 0, 2),
            Triple::new(2, 1, 3),
            Triple::new(0, 1, 3),
        ];
        let g = KnowledgeGraph::from_parts(entities, relations, triples).unwrap();
        let cfg = TrainConfig {
            k: 2,
            dim: 4,
            ..Default::default()
        };
        let stack = build_stack(&cfg.spec, cfg.k, cfg.dim, 2, 1).unwrap();
        let positives = g.triples().to_vec();
        let protocol = EvalProtocol {
            n_ranking_negatives: 10,
            hits_k: 3,
        };
        let a = evaluate(&stack, &g, &positives, &cfg, &protocol, 7, 1).unwrap();
        let b = evaluate(&stack, &g, &positives, &cfg, &protocol, 7, 2).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        // Aggregates recompute from the per-triple records.
        let pos: Vec<f64> = a.records.iter().map(|r| r.score).collect();
        let neg: Vec<f64> = a
            .records
            .iter()
            .map(|r| r.classification_negative_score)
            .collect();
        assert_eq!(auc_pr(&pos, &neg).unwrap(), a.auc_pr);
        let hits: usize = a.records.iter().filter(|r| r.hit).count();
        assert_eq!(hits as f64 / a.records.len() as f64, a.hits_at_k);
        for r in &a.records {
            assert!(r.rank >= 1 && r.rank <= 1 + protocol.n_ranking_negatives);
        }
    }
}
