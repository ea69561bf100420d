//! Command-line front end: `train`, `evaluate`, `recommend`, `export-embeddings`.
//!
//! Exit status: 0 on success, 2 for bad input (flags, config, paths, data,
//! checkpoints), 3 when training diverges.

use std::collections::VecDeque;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::{RegularizationMode, TrainingConfig};
use crate::data::{self, Interactions, InteractionDataset, KnowledgeGraph};
use crate::error::{Error, Result};
use crate::eval::{evaluate, rank_items, EvalTarget, MetricsReport};
use crate::model::{Aggregation, Space};
use crate::trainer::{self, GraphSizes};

#[derive(Debug, Parser)]
#[command(name = "hyperrec", version, about = "Hyperbolic knowledge-aware recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write the best checkpoint plus a per-epoch history log.
    Train(TrainArgs),
    /// Print Recall@K / NDCG@K on the test split as `K<TAB>recall<TAB>ndcg`.
    Evaluate(EvaluateArgs),
    /// Print the top-K original item ids for one user, nearest first.
    Recommend(RecommendArgs),
    /// Write an entity and its KG neighborhood as CSV `entity_id,hop,x1..xd`.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpaceArg {
    Hyperbolic,
    Euclidean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    Attention,
    Average,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat `key = value` training config; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `user<TAB>item` interactions file.
    #[arg(long)]
    pub interactions: PathBuf,
    /// `head<TAB>relation<TAB>tail` knowledge-graph file.
    #[arg(long)]
    pub triples: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// History log path (default: `<out>.history`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Random seed for initialization, splitting and sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Regularization mode: one fixed coefficient or learned per-item weights.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// KG loss coefficient in fixed mode.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Embedding space.
    #[arg(long, value_enum)]
    pub space: Option<SpaceArg>,
    /// Neighbor pooling.
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// The interactions file the checkpoint was trained on.
    #[arg(long)]
    pub interactions: PathBuf,
    /// Comma-separated cutoffs.
    #[arg(long, default_value = "20", value_delimiter = ',')]
    pub k: Vec<usize>,
    /// Emit JSON instead of TSV.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Original user id.
    #[arg(long)]
    pub user: u64,
    /// Number of items to print.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// The triples file the checkpoint was trained on.
    #[arg(long)]
    pub triples: PathBuf,
    /// Original id of the root entity.
    #[arg(long)]
    pub entity: u64,
    /// Neighborhood radius in undirected KG hops (0, 1 or 2).
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=2))]
    pub hops: u8,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&a)?;
            let text = if a.json {
                serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
            } else {
                report.to_tsv()
            };
            write_out(out, &text)
        }
        Command::Recommend(a) => {
            let ids = cmd_recommend(&a)?;
            let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
            write_out(out, &text)
        }
        Command::ExportEmbeddings(a) => cmd_export_embeddings(&a).map(|_| ()),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

/// CLI flag > config file > built-in default.
pub fn effective_config(a: &TrainArgs) -> Result<TrainingConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            require_file(p)?;
            TrainingConfig::load(p)?
        }
        None => TrainingConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Fixed => RegularizationMode::Fixed,
            ModeArg::Adaptive => RegularizationMode::Adaptive,
        };
    }
    if let Some(b) = a.beta {
        cfg.beta = b;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.space {
        cfg.space = match s {
            SpaceArg::Hyperbolic => Space::Hyperbolic,
            SpaceArg::Euclidean => Space::Euclidean,
        };
    }
    if let Some(g) = a.aggregation {
        cfg.aggregation = match g {
            AggregationArg::Attention => Aggregation::Attention,
            AggregationArg::Average => Aggregation::Average,
        };
    }
    if let Some(d) = a.dim {
        cfg.dim = d;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads interactions (with the optional k-core pass), the KG and the split.
pub fn prepare_data(
    interactions: &Path,
    triples: Option<&Path>,
    cfg: &TrainingConfig,
) -> Result<(Interactions, KnowledgeGraph, InteractionDataset)> {
    require_file(interactions)?;
    let mut raw = data::read_interaction_pairs(interactions)?;
    if cfg.k_core > 0 {
        raw = data::k_core_filter(&raw, cfg.k_core);
        if raw.is_empty() {
            return Err(Error::Degenerate("k-core filter removed every interaction".into()));
        }
    }
    let inter = Interactions::from_raw(&raw);
    let kg = match triples {
        Some(t) => {
            require_file(t)?;
            data::load_triples(t, &inter.items)?
        }
        None => KnowledgeGraph::empty(&inter.items),
    };
    let ds = data::split(&inter, cfg.split_ratios(), cfg.seed);
    Ok((inter, kg, ds))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = effective_config(a)?;
    eprintln!("effective config:\n{}", cfg.to_text());
    let (inter, kg, ds) = prepare_data(&a.interactions, a.triples.as_deref(), &cfg)?;

    let (users_map, items_map) = Interactions::sidecar_paths(&a.interactions);
    inter.users.write(&users_map)?;
    inter.items.write(&items_map)?;
    if let Some(t) = &a.triples {
        let (ent, rel) = KnowledgeGraph::sidecar_paths(t);
        kg.entities.write(&ent)?;
        kg.relations.write(&rel)?;
    }

    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".history");
        PathBuf::from(s)
    });
    let mut history = fs::File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    let mut write_err = None;
    let outcome = trainer::train::<f64>(
        &ds,
        GraphSizes {
            entities: kg.n_entities(),
            relations: kg.n_relations(),
            neighbors: &kg.neighbors,
        },
        &cfg,
        |rec| {
            if write_err.is_none() {
                if let Err(e) = writeln!(history, "{}", rec.to_line()).and_then(|_| history.flush()) {
                    write_err = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(Error::io(&history_path, e));
    }
    eprintln!("best epoch {}", outcome.best_epoch);
    Checkpoint {
        params: outcome.params,
        config: cfg,
        users: inter.users,
        items: inter.items,
        entities: kg.entities,
        relations: kg.relations,
        train: ds.train,
    }
    .save(&a.out)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint<f64>> {
    require_file(path)?;
    Checkpoint::load(path)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<MetricsReport> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let (inter, _, ds) = prepare_data(&a.interactions, None, &ck.config)?;
    if inter.users != ck.users || inter.items != ck.items {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} users / {} items, data has {} / {}",
            ck.users.len(),
            ck.items.len(),
            inter.n_users(),
            inter.n_items()
        )));
    }
    evaluate(
        &ck.params,
        &ds,
        &a.k,
        EvalTarget::Test {
            exclude_validation: ck.config.exclude_validation,
        },
    )
}

pub fn cmd_recommend(a: &RecommendArgs) -> Result<Vec<u64>> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let user = ck
        .users
        .dense(a.user)
        .ok_or(Error::UnknownId { kind: "user", id: a.user as usize })?;
    let ranked = rank_items(&ck.params, user, &[&ck.train[user]], a.k)?;
    Ok(ranked
        .items
        .into_iter()
        .map(|v| ck.items.original(v).expect("dense item id in range"))
        .collect())
}

/// Undirected BFS from `root` up to `hops`, as `(entity, hop)` sorted by hop then id.
pub fn bfs_neighborhood(adjacency: &[Vec<usize>], root: usize, hops: usize) -> Vec<(usize, usize)> {
    let mut seen = vec![usize::MAX; adjacency.len()];
    seen[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(e) = queue.pop_front() {
        if seen[e] == hops {
            continue;
        }
        for &n in &adjacency[e] {
            if seen[n] == usize::MAX {
                seen[n] = seen[e] + 1;
                queue.push_back(n);
            }
        }
    }
    let mut out: Vec<(usize, usize)> = seen
        .iter()
        .enumerate()
        .filter(|(_, &h)| h != usize::MAX)
        .map(|(e, &h)| (e, h))
        .collect();
    out.sort_by_key(|&(e, h)| (h, e));
    out
}

/// Returns the number of data rows written.
pub fn cmd_export_embeddings(a: &ExportArgs) -> Result<usize> {
    let ck = load_checkpoint(&a.checkpoint)?;
    require_file(&a.triples)?;
    let kg = data::load_triples(&a.triples, &ck.items)?;
    if kg.entities != ck.entities {
        return Err(Error::Checkpoint("triples do not match the checkpoint's entities".into()));
    }
    let root = ck
        .entities
        .dense(a.entity)
        .ok_or(Error::UnknownId { kind: "entity", id: a.entity as usize })?;
    let rows = bfs_neighborhood(&kg.undirected_adjacency(), root, a.hops as usize);
    let dim = ck.params.entities.dim();
    let mut text = String::from("entity_id,hop");
    for i in 1..=dim {
        text.push_str(&format!(",x{i}"));
    }
    text.push('\n');
    for &(e, hop) in &rows {
        text.push_str(&format!("{},{hop}", ck.entities.original(e).unwrap()));
        for x in ck.params.entities.row(e) {
            text.push_str(&format!(",{x:?}"));
        }
        text.push('\n');
    }
    fs::write(&a.out, text).map_err(|e| Error::io(&a.out, e))?;
    Ok(rows.len())
}
