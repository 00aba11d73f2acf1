//! Command-line interface: `train`, `eval`, `ablate`, `case-study`,
//! `synth-data`, and `grad-check`.
//!
//! Every run is reproducible from its flags: all randomness flows from a
//! single `--seed` through named substreams, and the parsed configuration is
//! echoed into every output artifact.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{evaluate, score_on_graph, EvalProtocol, EvalReport};
use crate::gradcheck::check_full_model;
use crate::kg::{load_triple_list, KnowledgeGraph, Triple, Vocab};
use crate::model::{load_checkpoint, param_count, save_checkpoint, LayerStack, StackSpec};
use crate::rng;
use crate::subgraph::{extract, SubgraphMode};
use crate::synth::{synthesize_dataset, RuleSpec};
use crate::train::{history_to_csv, sample_negative, train_with_logger, TrainConfig, TrainOutcome};

#[derive(Parser)]
#[command(
    name = "mines",
    version,
    about = "Inductive relation reasoning over knowledge graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a model on a dataset directory (train.txt / valid.txt).
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Run the subgraph-mode x stack ablation grid with a shared seed.
    Ablate(AblateArgs),
    /// Print the extracted subgraphs (and score, given a checkpoint) for one triple.
    CaseStudy(CaseStudyArgs),
    /// Generate a planted-rule synthetic dataset.
    SynthData(SynthArgs),
    /// Finite-difference check of the full model gradients.
    GradCheck(GradCheckArgs),
}

/// Hyperparameter flags shared by `train` and `ablate`. Unset flags fall
/// back to the optional `--config` key = value file, then to defaults.
#[derive(Args, Clone, Default)]
pub struct HyperArgs {
    /// Optional key = value file whose keys mirror these flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Subgraph hop count.
    #[arg(long)]
    pub k: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Layer stack over {R, G}, e.g. RGR, RRR, or Bi-RRR.
    #[arg(long)]
    pub spec: Option<String>,
    /// `enclosing` or `neighbor_enhanced`.
    #[arg(long)]
    pub subgraph_mode: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hinge margin.
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub neg_per_pos: Option<usize>,
    /// Early-stop patience in epochs (on validation AUC-PR).
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Global-norm gradient clip (off by default).
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Self-loops on the homogeneous view (default true).
    #[arg(long)]
    pub homo_self_loops: Option<bool>,
    /// Train only on positives of this relation.
    #[arg(long)]
    pub target_relation: Option<String>,
}

fn apply_kv(cfg: &mut TrainConfig, key: &str, value: &str, ctx: &dyn Fn() -> Error) -> Result<()> {
    fn parse<T: std::str::FromStr>(value: &str, ctx: &dyn Fn() -> Error) -> Result<T> {
        value.parse().map_err(|_| ctx())
    }
    match key.replace('-', "_").as_str() {
        "k" => cfg.k = parse(value, ctx)?,
        "dim" => cfg.dim = parse(value, ctx)?,
        "spec" => cfg.spec = value.to_string(),
        "subgraph_mode" => cfg.subgraph_mode = SubgraphMode::parse(value)?,
        "lr" => cfg.lr = parse(value, ctx)?,
        "batch_size" => cfg.batch_size = parse(value, ctx)?,
        "margin" => cfg.margin = parse(value, ctx)?,
        "dropout" => cfg.dropout = parse(value, ctx)?,
        "epochs" => cfg.epochs = parse(value, ctx)?,
        "neg_per_pos" => cfg.neg_per_pos = parse(value, ctx)?,
        "patience" => cfg.early_stop_patience = parse(value, ctx)?,
        "seed" => cfg.seed = parse(value, ctx)?,
        "grad_clip" => cfg.grad_clip = Some(parse(value, ctx)?),
        "homo_self_loops" => cfg.homo_self_loops = parse(value, ctx)?,
        "target_relation" => cfg.target_relation = Some(value.to_string()),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown config key `{other}`"
            )))
        }
    }
    Ok(())
}

impl HyperArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            for (idx, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let bad_line = || Error::BadConfigLine {
                    path: path.display().to_string(),
                    line: idx + 1,
                };
                let (key, value) = line.split_once('=').ok_or_else(bad_line)?;
                apply_kv(&mut cfg, key.trim(), value.trim(), &bad_line)?;
            }
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = &self.spec {
            cfg.spec = v.clone();
        }
        if let Some(v) = &self.subgraph_mode {
            cfg.subgraph_mode = SubgraphMode::parse(v)?;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.margin {
            cfg.margin = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.neg_per_pos {
            cfg.neg_per_pos = v;
        }
        if let Some(v) = self.patience {
            cfg.early_stop_patience = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.grad_clip {
            cfg.grad_clip = Some(v);
        }
        if let Some(v) = self.homo_self_loops {
            cfg.homo_self_loops = v;
        }
        if let Some(v) = &self.target_relation {
            cfg.target_relation = Some(v.clone());
        }
        // Fail fast on an unparsable stack before any training happens.
        StackSpec::parse(&cfg.spec)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory containing train.txt (and optionally valid.txt).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint.json, history.csv, config.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Dataset directory containing test.txt.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for eval_report.json and eval_summary.tsv.
    #[arg(long)]
    pub out: PathBuf,
    /// Only score test triples with this relation.
    #[arg(long)]
    pub target_relation: Option<String>,
    /// Cap the number of scored positives (seeded subsample).
    #[arg(long)]
    pub max_eval: Option<usize>,
    /// Negatives per positive for the ranking metric.
    #[arg(long, default_value_t = 50)]
    pub n_negatives: usize,
    #[arg(long, default_value_t = 10)]
    pub hits_k: usize,
    /// Defaults to the seed stored in the checkpoint config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for scoring (default: available cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Dataset label for the TSV summary (default: data dir name).
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Extra stack specs to run on the default subgraph mode, comma
    /// separated (e.g. RRR,Bi-RRR,GGG,GRR,RRG,RGR).
    #[arg(long)]
    pub frameworks: Option<String>,
    #[arg(long)]
    pub max_eval: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub n_negatives: usize,
    #[arg(long, default_value_t = 10)]
    pub hits_k: usize,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct CaseStudyArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Which split file to read the graph from.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Target triple as entity/relation names.
    pub head: String,
    pub relation: String,
    pub tail: String,
    #[arg(long)]
    pub k: Option<usize>,
    /// Score and rank the triple with this trained model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub n_negatives: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub n_entities: usize,
    /// Body edges sampled per entity (graph density).
    #[arg(long)]
    pub edges_per_entity: Option<f64>,
    /// Fraction of train rule firings held out as validation positives.
    #[arg(long)]
    pub valid_fraction: Option<f64>,
}

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value = "RGR")]
    pub spec: String,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 6)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub n_relations: usize,
    /// Random subgraph pairs to check.
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct RunSnapshot<'a> {
    command: &'a str,
    data: String,
    out: String,
    config: &'a TrainConfig,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load_dataset(data: &Path) -> Result<(KnowledgeGraph, Vec<Triple>)> {
    let train_graph = KnowledgeGraph::load(data.join("train.txt"))?;
    let valid_path = data.join("valid.txt");
    let valid = if valid_path.exists() {
        load_triple_list(&valid_path, train_graph.entities(), train_graph.relations())?
    } else {
        Vec::new()
    };
    Ok((train_graph, valid))
}

fn run_training(
    data: &Path,
    cfg: &TrainConfig,
    quiet: bool,
) -> Result<(KnowledgeGraph, TrainOutcome)> {
    let (train_graph, valid) = load_dataset(data)?;
    let outcome = train_with_logger(&train_graph, &valid, cfg, &mut |stats| {
        if !quiet {
            let auc = stats
                .valid_auc_pr
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".to_string());
            println!(
                "epoch {:>3}  loss {:>12.4}  valid_auc_pr {}  {:.1}s",
                stats.epoch, stats.train_loss, auc, stats.seconds
            );
        }
    })?;
    Ok((train_graph, outcome))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.hyper.resolve()?;
    let (train_graph, outcome) = run_training(&args.data, &cfg, false)?;
    fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.display().to_string(),
        source,
    })?;
    let relations: Vec<String> = train_graph.relations().names().to_vec();
    save_checkpoint(
        &outcome.stack,
        &relations,
        serde_json::to_value(&cfg).expect("config serializes"),
        args.out.join("checkpoint.json"),
    )?;
    write_file(&args.out.join("history.csv"), &history_to_csv(&outcome.history))?;
    let snapshot = RunSnapshot {
        command: "train",
        data: args.data.display().to_string(),
        out: args.out.display().to_string(),
        config: &cfg,
    };
    write_file(
        &args.out.join("config.json"),
        &serde_json::to_string_pretty(&snapshot).expect("snapshot serializes"),
    )?;
    println!(
        "trained {} epochs (best epoch {}); wrote {}",
        outcome.history.len(),
        outcome.best_epoch,
        args.out.display()
    );
    Ok(())
}

fn select_positives(
    test_graph: &KnowledgeGraph,
    target_relation: Option<&str>,
    max_eval: Option<usize>,
    seed: u64,
) -> Result<Vec<Triple>> {
    let mut positives: Vec<Triple> = match target_relation {
        Some(name) => {
            let rel = test_graph
                .relations()
                .get(name)
                .ok_or_else(|| Error::UnknownRelation(name.to_string()))?;
            test_graph
                .triples()
                .iter()
                .copied()
                .filter(|t| t.rel == rel)
                .collect()
        }
        None => test_graph.triples().to_vec(),
    };
    if let Some(cap) = max_eval {
        if positives.len() > cap {
            use rand::seq::SliceRandom;
            let mut idx: Vec<usize> = (0..positives.len()).collect();
            idx.shuffle(&mut rng::stream(seed, "eval-subsample"));
            let mut keep: Vec<usize> = idx.into_iter().take(cap).collect();
            keep.sort_unstable();
            positives = keep.into_iter().map(|i| positives[i]).collect();
        }
    }
    Ok(positives)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (stack, relations, ckpt_config) = load_checkpoint(&args.checkpoint)?;
    let cfg: TrainConfig = serde_json::from_value(ckpt_config)
        .map_err(|e| Error::CheckpointFormat(format!("config snapshot: {e}")))?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let rel_vocab = Vocab::from_names(&relations);
    let test_graph =
        KnowledgeGraph::load_with_relations(args.data.join("test.txt"), Some(&rel_vocab))?;
    // Flag wins; otherwise fall back to the relation the model was trained
    // to predict (if restricted).
    let target = args
        .target_relation
        .as_deref()
        .or(cfg.target_relation.as_deref());
    let positives = select_positives(&test_graph, target, args.max_eval, seed)?;
    let protocol = EvalProtocol {
        n_ranking_negatives: args.n_negatives,
        hits_k: args.hits_k,
    };
    let threads = args.threads.unwrap_or_else(default_threads);
    let report = evaluate(
        &stack,
        &test_graph,
        &positives,
        &cfg,
        &protocol,
        seed,
        threads,
    )?;
    fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.display().to_string(),
        source,
    })?;
    write_file(&args.out.join("eval_report.json"), &report.to_json())?;
    let label = args.label.clone().unwrap_or_else(|| {
        args.data
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string())
    });
    let tsv = report.to_tsv(&label);
    write_file(&args.out.join("eval_summary.tsv"), &tsv)?;
    print!("{tsv}");
    Ok(())
}

struct AblationRow {
    mode: SubgraphMode,
    spec: String,
    params: usize,
    report: EvalReport,
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let base = args.hyper.resolve()?;
    let mut rows: Vec<(SubgraphMode, String)> = vec![
        (SubgraphMode::Enclosing, "RRR".to_string()),
        (SubgraphMode::Enclosing, "RGR".to_string()),
        (SubgraphMode::NeighborEnhanced, "RRR".to_string()),
        (SubgraphMode::NeighborEnhanced, "RGR".to_string()),
    ];
    if let Some(extra) = &args.frameworks {
        for spec in extra.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let candidate = (base.subgraph_mode, spec.to_string());
            if !rows.contains(&candidate) {
                rows.push(candidate);
            }
        }
    }

    let (train_graph, valid) = load_dataset(&args.data)?;
    let rel_vocab = train_graph.relations().clone();
    let test_graph =
        KnowledgeGraph::load_with_relations(args.data.join("test.txt"), Some(&rel_vocab))?;
    let threads = args.threads.unwrap_or_else(default_threads);

    let mut results: Vec<AblationRow> = Vec::new();
    for (mode, spec) in rows {
        let cfg = TrainConfig {
            subgraph_mode: mode,
            spec: spec.clone(),
            ..base.clone()
        };
        println!("== {} / {} ==", mode.as_str(), spec);
        let outcome = train_with_logger(&train_graph, &valid, &cfg, &mut |_| {})?;
        let positives = select_positives(
            &test_graph,
            cfg.target_relation.as_deref(),
            args.max_eval,
            cfg.seed,
        )?;
        let protocol = EvalProtocol {
            n_ranking_negatives: args.n_negatives,
            hits_k: args.hits_k,
        };
        let report = evaluate(
            &outcome.stack,
            &test_graph,
            &positives,
            &cfg,
            &protocol,
            cfg.seed,
            threads,
        )?;
        println!(
            "   auc_pr {:.4}  hits@{} {:.4}",
            report.auc_pr, protocol.hits_k, report.hits_at_k
        );
        results.push(AblationRow {
            mode,
            spec: spec.clone(),
            params: param_count(&spec, cfg.k, cfg.dim, train_graph.num_relations())?,
            report,
        });
    }

    let mut tsv = format!("subgraph_mode\tspec\tparams\tauc_pr\thits@{}\n", args.hits_k);
    for row in &results {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            row.mode.as_str(),
            row.spec,
            row.params,
            row.report.auc_pr,
            row.report.hits_at_k
        ));
    }
    fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.display().to_string(),
        source,
    })?;
    write_file(&args.out.join("ablation.tsv"), &tsv)?;
    let snapshot = RunSnapshot {
        command: "ablate",
        data: args.data.display().to_string(),
        out: args.out.display().to_string(),
        config: &base,
    };
    write_file(
        &args.out.join("config.json"),
        &serde_json::to_string_pretty(&snapshot).expect("snapshot serializes"),
    )?;
    print!("{tsv}");
    Ok(())
}

fn cmd_case_study(args: &CaseStudyArgs) -> Result<()> {
    let graph_path = args.data.join(format!("{}.txt", args.split));
    let loaded_ckpt = match &args.checkpoint {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    let (graph, stack_cfg): (KnowledgeGraph, Option<(LayerStack, TrainConfig)>) =
        match loaded_ckpt {
            Some((stack, relations, ckpt_config)) => {
                let cfg: TrainConfig = serde_json::from_value(ckpt_config)
                    .map_err(|e| Error::CheckpointFormat(format!("config snapshot: {e}")))?;
                let vocab = Vocab::from_names(&relations);
                let graph = KnowledgeGraph::load_with_relations(&graph_path, Some(&vocab))?;
                (graph, Some((stack, cfg)))
            }
            None => (KnowledgeGraph::load(&graph_path)?, None),
        };

    let triple = graph.resolve(&args.head, &args.relation, &args.tail)?;
    let k = args
        .k
        .or_else(|| stack_cfg.as_ref().map(|(_, c)| c.k))
        .unwrap_or(3);
    let self_loops = stack_cfg.as_ref().is_none_or(|(_, c)| c.homo_self_loops);

    for mode in [SubgraphMode::Enclosing, SubgraphMode::NeighborEnhanced] {
        let sub = extract(&graph, triple.head, triple.rel, triple.tail, k, mode, self_loops)?;
        println!("--- {} subgraph (k = {k}) ---", mode.as_str());
        print!("{}", sub.dump(&graph));
    }

    if let Some((stack, cfg)) = stack_cfg {
        let cfg = TrainConfig { k, ..cfg };
        let score = score_on_graph(&stack, &graph, triple, &cfg)?;
        let mut neg_rng = rng::stream(args.seed, "case-study");
        let neg_scores = (0..args.n_negatives)
            .map(|_| {
                let neg = sample_negative(&graph, triple, &mut neg_rng);
                score_on_graph(&stack, &graph, neg, &cfg)
            })
            .collect::<Result<Vec<f64>>>()?;
        let rank = crate::eval::rank_against(score, &neg_scores)?;
        println!("--- model ---");
        println!("score\t{score}");
        println!("rank\t{rank} of {}", args.n_negatives + 1);
    }
    Ok(())
}

fn cmd_synth_data(args: &SynthArgs) -> Result<()> {
    let mut rule = RuleSpec::default();
    if let Some(v) = args.edges_per_entity {
        rule.edges_per_entity = v;
    }
    if let Some(v) = args.valid_fraction {
        rule.valid_fraction = v;
    }
    let ds = synthesize_dataset(args.seed, args.n_entities, &rule)?;
    ds.write_to_dir(&args.out)?;
    println!(
        "wrote {}: train |E|={} |R|={} |T|={}, valid {}, test |E|={} |T|={}",
        args.out.display(),
        ds.train.num_entities(),
        ds.train.num_relations(),
        ds.train.num_triples(),
        ds.valid.len(),
        ds.test.num_entities(),
        ds.test.num_triples()
    );
    Ok(())
}

fn cmd_grad_check(args: &GradCheckArgs) -> Result<()> {
    let summary = check_full_model(
        &args.spec,
        args.k,
        args.dim,
        args.n_relations,
        args.cases,
        args.step,
        args.tol,
        args.seed,
    )?;
    println!("parameter\tmax_rel_error");
    for (name, err) in &summary.per_param {
        println!("{name}\t{err:.3e}");
    }
    println!(
        "overall max relative error {:.3e} over {} cases (tol {:.1e})",
        summary.max_rel_error,
        summary.per_case.len(),
        summary.tol
    );
    if summary.passed() {
        println!("gradient check PASS");
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "gradient check FAILED: max relative error {:.3e} >= tol {:.1e}",
            summary.max_rel_error, summary.tol
        )))
    }
}

/// Execute a parsed command.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::CaseStudy(args) => cmd_case_study(args),
        Command::SynthData(args) => cmd_synth_data(args),
        Command::GradCheck(args) => cmd_grad_check(args),
    }
}

/// Parse `argv`-style arguments and run them (test entry point).
pub fn run_from<I, S>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    run(&cli)
}
