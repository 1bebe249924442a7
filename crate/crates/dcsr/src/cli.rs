//! Command-line interface: one executable exposing the whole pipeline.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::corpus::{conflict_stats, load_dataset, load_passages, overlap_stats};
use crate::encoder::{load_params, CHECKPOINT_VERSION};
use crate::index::{SentenceIndex, INDEX_VERSION};
use crate::retrieval::{evaluate, mine_hard_negatives, rank_passages, subsample_corpus, Subsample};
use crate::sampler::SamplingStrategy;
use crate::synth::{synth, SynthSpec};
use crate::trainer::{train, write_report, TrainConfig};
use crate::{IndexFloat, Result};

#[derive(Debug, Parser)]
#[command(name = "dcsr", disable_version_flag = true)]
#[command(about = "Sentence-granular dense retrieval: train, index, search, evaluate")]
struct Cli {
    /// Print the checkpoint and index format versions this build reads.
    #[arg(long, global = true)]
    version: bool,
    /// Cap internal parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset diagnostics: conflict histogram, optional train/dev overlap.
    Stats(StatsArgs),
    /// Train the encoder with SGD over the contrastive objective.
    Train(TrainArgs),
    /// Build a sentence-level vector index from a passages file.
    Index(IndexArgs),
    /// Rank passages for a single query.
    Search(SearchArgs),
    /// Top-k retrieval accuracy of an index against a dataset.
    Eval(EvalArgs),
    /// Replace dataset negatives with checkpoint-mined sentence negatives.
    MineNegatives(MineArgs),
    /// Generate a synthetic conflict-controlled corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Second dataset; adds title/passage overlap fractions.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training dataset file(s); several files are concatenated (Multi).
    #[arg(long, required = true)]
    train: Vec<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value = "inpassage+bm25")]
    strategy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = crate::encoder::DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = crate::encoder::DEFAULT_FEATURE_SPACE)]
    feature_space: u32,
    #[arg(long, default_value_t = crate::encoder::DEFAULT_CONTEXT_BLEND)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    passages: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Index only the first N passages.
    #[arg(long)]
    first_n: Option<usize>,
    /// Index a seeded uniform sample of this fraction of the passages.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    query: String,
    /// Sentence retrieval depth; default ceil(100 x avg sentences/passage).
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    passages: PathBuf,
    #[arg(long, default_value = "1,5,20,100", value_delimiter = ',')]
    ks: Vec<usize>,
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MineArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    passages: PathBuf,
    #[arg(long, default_value_t = 2)]
    per_question: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    passages: usize,
    #[arg(long, default_value_t = 3)]
    sentences: usize,
    #[arg(long, default_value_t = 3)]
    topics: usize,
    /// Questions-per-passage distribution, e.g. "3:1.0" or "1:0.5,2:0.5".
    #[arg(long, default_value = "3:1.0")]
    qpp: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_passages: PathBuf,
    #[arg(long)]
    out_dataset: PathBuf,
}

fn parse_qpp(text: &str) -> Result<std::collections::BTreeMap<usize, f64>> {
    let mut dist = std::collections::BTreeMap::new();
    for part in text.split(',') {
        let (count, prob) = part
            .split_once(':')
            .ok_or_else(|| crate::Error::Spec(format!("bad qpp entry `{part}`")))?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| crate::Error::Spec(format!("bad qpp count `{count}`")))?;
        let prob: f64 = prob
            .trim()
            .parse()
            .map_err(|_| crate::Error::Spec(format!("bad qpp probability `{prob}`")))?;
        dist.insert(count, prob);
    }
    Ok(dist)
}

fn emit(value: &serde_json::Value, out: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Stats(args) => {
            let loaded = load_dataset(&args.dataset)?;
            let stats = conflict_stats(&loaded.examples);
            let mut json = serde_json::json!({
                "histogram": stats.histogram,
                "average": stats.average,
                "dropped_examples": loaded.dropped,
            });
            if let Some(dev_path) = &args.dev {
                let dev = load_dataset(dev_path)?;
                let (titles, texts) = overlap_stats(&loaded.examples, &dev.examples);
                json["title_overlap_fraction"] = serde_json::json!(titles);
                json["passage_overlap_fraction"] = serde_json::json!(texts);
            }
            emit(&json, args.out.as_ref())
        }
        Command::Train(args) => {
            let mut examples = Vec::new();
            for path in &args.train {
                examples.extend(load_dataset(path)?.examples);
            }
            let dev = match &args.dev {
                Some(path) => load_dataset(path)?.examples,
                None => Vec::new(),
            };
            let config = TrainConfig {
                learning_rate: args.lr,
                epochs: args.epochs,
                batch_size: args.batch_size,
                strategy: SamplingStrategy::parse(&args.strategy)?,
                eval_every: args.eval_every,
                seed: args.seed,
                dim: args.dim,
                feature_space: args.feature_space,
                context_blend: args.alpha,
                validation_pool: 256,
            };
            let report = train(&examples, &dev, &config, &args.out)?;
            write_report(&report, args.out.join("report.jsonl"))?;
            log::info!(
                "trained {} epochs in {:.1}s, skipped {} examples",
                report.epochs.len(),
                report.wall_time_secs,
                report.skipped_examples
            );
            println!("{}", report.final_checkpoint.display());
            Ok(())
        }
        Command::Index(args) => {
            let params = load_params(&args.checkpoint)?;
            let mut passages = load_passages(&args.passages)?;
            if let Some(n) = args.first_n {
                passages = subsample_corpus(&passages, Subsample::FirstN(n), args.seed)?;
            } else if let Some(f) = args.fraction {
                passages = subsample_corpus(&passages, Subsample::Fraction(f), args.seed)?;
            }
            let index = SentenceIndex::build(&passages, &params)?;
            index.save(&args.out)?;
            log::info!(
                "indexed {} sentences from {} passages (avg {:.2}/passage)",
                index.len(),
                passages.len(),
                index.avg_sentences_per_passage()
            );
            Ok(())
        }
        Command::Search(args) => {
            let params = load_params(&args.checkpoint)?;
            let index = SentenceIndex::load(&args.index)?;
            let query: Vec<IndexFloat> = crate::encoder::encode_question(&args.query, &params)?
                .into_iter()
                .map(|v| v as IndexFloat)
                .collect();
            let top = args.top.unwrap_or_else(|| index.default_retrieval_depth());
            let ranked = rank_passages(&index, &query, top)?;
            let json = serde_json::to_value(&ranked).map_err(std::io::Error::other)?;
            emit(&json, None)
        }
        Command::Eval(args) => {
            let params = load_params(&args.checkpoint)?;
            let index = SentenceIndex::load(&args.index)?;
            let passages = load_passages(&args.passages)?;
            let dataset = load_dataset(&args.dataset)?;
            let report = evaluate(&dataset.examples, &index, &passages, &params, &args.ks, args.top)?;
            emit(&report.to_json(), args.json.as_ref())
        }
        Command::MineNegatives(args) => {
            let params = load_params(&args.checkpoint)?;
            let index = SentenceIndex::load(&args.index)?;
            let passages = load_passages(&args.passages)?;
            let dataset = load_dataset(&args.dataset)?;
            let mined = mine_hard_negatives(
                &dataset.examples,
                &index,
                &passages,
                &params,
                args.per_question,
            )?;
            crate::corpus::write_dataset(&mined.examples, &args.out)?;
            log::info!("mined negatives for {} questions ({} unmined)", mined.examples.len(), mined.unmined);
            Ok(())
        }
        Command::Synth(args) => {
            let spec = SynthSpec {
                passages: args.passages,
                sentences_per_passage: args.sentences,
                topics: args.topics,
                questions_per_passage: parse_qpp(&args.qpp)?,
                seed: args.seed,
            };
            let corpus = synth(&spec, &args.out_passages, &args.out_dataset)?;
            log::info!(
                "wrote {} passages and {} questions",
                corpus.passages.len(),
                corpus.dataset.len()
            );
            Ok(())
        }
    }
}

/// Dispatch a command line. Exit 0 on success, 1 on usage error, 2 on a
/// data or runtime error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.version {
        println!("checkpoint format v{CHECKPOINT_VERSION}, index format v{INDEX_VERSION}");
        return 0;
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given; see --help");
        return 1;
    };
    if let Some(threads) = cli.threads {
        // ignore failure when a pool already exists (repeated calls in tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match execute(command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
