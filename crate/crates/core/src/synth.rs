//! Synthetic planted-rule datasets.
//!
//! Generates a train/test graph pair in which a target relation holds exactly
//! when a two-hop composition rule fires: `r_target(x, z) ⇔ ∃y r1(x, y) ∧
//! r2(y, z)`. Train and test entity name sets are disjoint while the relation
//! vocabulary is shared, so a model must learn the rule structurally to score
//! test triples — the same regime the inductive benchmark splits enforce.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple, Vocab};
use crate::rng;

/// Planted composition rule `head(x, z) ⇔ ∃y body1(x, y) ∧ body2(y, z)`.
#[derive(Debug, Clone)]
pub struct RuleSpec {
    pub body1: String,
    pub body2: String,
    pub head: String,
    /// Body edges sampled per entity (controls graph density).
    pub edges_per_entity: f64,
    /// Fraction of train-graph rule firings held out as validation positives.
    pub valid_fraction: f64,
}

impl Default for RuleSpec {
    fn default() -> Self {
        RuleSpec {
            body1: "r1".to_string(),
            body2: "r2".to_string(),
            head: "r_target".to_string(),
            edges_per_entity: 1.0,
            valid_fraction: 0.2,
        }
    }
}

/// A generated dataset: train graph, held-out validation positives over the
/// train entities, and a test graph over disjoint entities.
#[derive(Debug)]
pub struct SyntheticDataset {
    pub train: KnowledgeGraph,
    pub valid: Vec<Triple>,
    pub test: KnowledgeGraph,
    pub target_relation: String,
}

impl SyntheticDataset {
    /// Write `train.txt`, `valid.txt`, and `test.txt` under `dir`.
    pub fn write_to_dir<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
        self.train.save(dir.join("train.txt"))?;
        self.test.save(dir.join("test.txt"))?;
        let valid_path = dir.join("valid.txt");
        let mut out = String::new();
        for t in &self.valid {
            out.push_str(self.train.entities().name(t.head));
            out.push('\t');
            out.push_str(self.train.relations().name(t.rel));
            out.push('\t');
            out.push_str(self.train.entities().name(t.tail));
            out.push('\n');
        }
        fs::write(&valid_path, out).map_err(|source| Error::Io {
            path: valid_path.display().to_string(),
            source,
        })
    }
}

/// Sample body edges and close them under the rule for one entity block.
/// Returns (background triples, rule-head pairs) over local entity ids.
///
/// Entities split into three layers: sources (half), witnesses (quarter),
/// sinks (quarter). Each source emits one `r1` edge to a witness (the first
/// witnesses.len() sources cover every witness, the rest draw uniformly),
/// and `r2` is a shuffled witness→sink matching. Each edge is kept with
/// probability `edges_per_entity` (clamped to 1). At the default density of
/// 1.0 every entity appears in some triple, every rule firing is a clean
/// three-node path with distinct endpoints, and in-degrees stay small so
/// aggregation never dilutes the witness signal.
type LocalTriples = Vec<(usize, usize, usize)>;
type RulePairs = Vec<(usize, usize)>;

fn sample_world(rng: &mut rng::Rng, n: usize, edges_per_entity: f64) -> (LocalTriples, RulePairs) {
    let p = edges_per_entity.clamp(0.0, 1.0);
    let sources = n / 2;
    let witnesses = n / 4;
    let witness_range = sources..sources + witnesses;
    let sink_range = sources + witnesses..n;
    debug_assert!(!sink_range.is_empty());

    let mut witness_cover: Vec<usize> = witness_range.clone().collect();
    witness_cover.shuffle(rng);
    let mut source_order: Vec<usize> = (0..sources).collect();
    source_order.shuffle(rng);
    let mut r1: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (i, &x) in source_order.iter().enumerate() {
        if rng.gen::<f64>() < p {
            let y = if i < witness_cover.len() {
                witness_cover[i]
            } else {
                rng.gen_range(witness_range.clone())
            };
            r1.insert((x, y));
        }
    }

    let mut matched_witnesses: Vec<usize> = witness_range.collect();
    matched_witnesses.shuffle(rng);
    let mut matched_sinks: Vec<usize> = sink_range.collect();
    matched_sinks.shuffle(rng);
    let mut r2: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 0..matched_witnesses.len().max(matched_sinks.len()) {
        if rng.gen::<f64>() < p {
            r2.insert((
                matched_witnesses[i % matched_witnesses.len()],
                matched_sinks[i % matched_sinks.len()],
            ));
        }
    }

    // Rule closure: r_target(x, z) for every x -r1-> y -r2-> z.
    let mut heads: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(x, y) in &r1 {
        for &(y2, z) in r2.range((y, 0)..=(y, usize::MAX)) {
            debug_assert_eq!(y, y2);
            heads.insert((x, z));
        }
    }
    let mut background = Vec::new();
    background.extend(r1.into_iter().map(|(x, y)| (x, 0, y)));
    background.extend(r2.into_iter().map(|(y, z)| (y, 1, z)));
    (background, heads.into_iter().collect())
}

/// Generate a deterministic planted-rule dataset.
///
/// `n_entities` entities are used for the train graph and `n_entities / 2`
/// disjoint ones for the test graph. Same seed, same bytes.
pub fn synthesize_dataset(seed: u64, n_entities: usize, rule: &RuleSpec) -> Result<SyntheticDataset> {
    if n_entities < 20 {
        return Err(Error::SynthTooSmall(n_entities, 20));
    }
    let mut rng = rng::stream(seed, "synth");

    let mut relations = Vocab::new();
    relations.intern(&rule.body1);
    relations.intern(&rule.body2);
    relations.intern(&rule.head);
    let target_rel = 2;

    // Train world.
    let n_train = n_entities;
    let (train_bg, train_heads) = sample_world(&mut rng, n_train, rule.edges_per_entity);
    // Test world over half as many, disjoint, entities.
    let n_test = n_entities / 2;
    let (test_bg, test_heads) = sample_world(&mut rng, n_test, rule.edges_per_entity);

    if train_heads.len() < 5 || test_heads.len() < 5 {
        return Err(Error::SynthTooSmall(n_entities, 20));
    }

    // Hold out a fraction of the train firings for validation. The holdout
    // stays out of the train graph so validation scoring cannot leak.
    let mut train_positive_idx: Vec<usize> = (0..train_heads.len()).collect();
    train_positive_idx.shuffle(&mut rng);
    let n_valid = ((train_heads.len() as f64) * rule.valid_fraction).round() as usize;
    let n_valid = n_valid.clamp(1, train_heads.len() - 1);
    let valid_idx: BTreeSet<usize> = train_positive_idx[..n_valid].iter().copied().collect();

    let train_entities = Vocab::from_names((0..n_train).map(|i| format!("T{i}")));
    let test_entities = Vocab::from_names((0..n_test).map(|i| format!("U{i}")));

    let mut train_triples: Vec<Triple> = train_bg
        .iter()
        .map(|&(h, r, t)| Triple::new(h, r, t))
        .collect();
    let mut valid = Vec::new();
    for (i, &(x, z)) in train_heads.iter().enumerate() {
        let t = Triple::new(x, target_rel, z);
        if valid_idx.contains(&i) {
            valid.push(t);
        } else {
            train_triples.push(t);
        }
    }

    let mut test_triples: Vec<Triple> = test_bg
        .iter()
        .map(|&(h, r, t)| Triple::new(h, r, t))
        .collect();
    test_triples.extend(
        test_heads
            .iter()
            .map(|&(x, z)| Triple::new(x, target_rel, z)),
    );

    let train = KnowledgeGraph::from_parts(train_entities, relations.clone(), train_triples)?;
    let test = KnowledgeGraph::from_parts(test_entities, relations, test_triples)?;
    Ok(SyntheticDataset {
        train,
        valid,
        test,
        target_relation: rule.head.clone(),
    })
}
