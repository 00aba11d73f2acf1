//! Inductive relation reasoning over knowledge graphs.
//!
//! The pipeline scores a candidate triple `(head, relation, tail)` purely
//! from the structure around it: extract a local subgraph (enclosing or
//! neighbor-enhanced), label nodes with their distances to the two targets,
//! run an interleaved stack of relational (directed) and homogeneous
//! (undirected) message-passing layers, and apply a linear scoring head.
//! Because no entity identity is ever used, a trained model transfers to
//! graphs over entirely unseen entities.
//!
//! Modules:
//!
//! * [`kg`] — triple store: TSV loading, vocabularies, adjacency indices.
//! * [`synth`] — planted-rule synthetic dataset generator.
//! * [`subgraph`] — extraction, double-radius labeling, one-hot features.
//! * [`tensor`] — dense matrices and the reverse-mode gradient tape.
//! * [`model`] — layer stack, scoring head, JSON checkpoints.
//! * [`train`] — negative sampling, hinge loss, Adam, the training loop.
//! * [`eval`] — AUC-PR / Hits@k and the ranking protocol.
//! * [`gradcheck`] — whole-model finite-difference verification.
//! * [`cli`] — the `mines` command-line interface.

pub mod cli;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kg;
pub mod model;
pub mod rng;
pub mod subgraph;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use eval::{auc_pr, evaluate, hits_at_k, EvalProtocol, EvalReport};
pub use kg::{KnowledgeGraph, Triple, Vocab};
pub use model::{build_stack, load_checkpoint, param_count, save_checkpoint, LayerStack};
pub use subgraph::{
    extract, extract_enclosing, extract_neighbor_enhanced, k_hop_set, one_hot_init, Subgraph,
    SubgraphMode,
};
pub use synth::{synthesize_dataset, RuleSpec, SyntheticDataset};
pub use tensor::{grad_check, Tape, Tensor, Var};
pub use train::{hinge_loss, sample_negative, train, AdamState, TrainConfig, TrainOutcome};
