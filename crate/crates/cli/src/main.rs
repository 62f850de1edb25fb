use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use reccot::cache::CacheStore;
use reccot::pipeline::{write_reviews_jsonl, ExperimentConfig, Pipeline, Stage, Variant};
use reccot::synth::{long_tail_corpus, planted_corpus, LongTailConfig, PlantedConfig, SentimentLexicon};

const STAGE_GRAPH: &str = "\
Stages run in this order; each reads the artifacts of the ones before it:

  ingest -> stats -> grpo-train -> cot-generate -> encoder-train -> embed -> rec-train -> rec-eval -> analyze

  ingest         corpus/    cleaned, k-core filtered corpus and the train/validation/test split
  stats          stats/     rating frequency table and corpus statistics
  grpo-train     grpo/      one rationale policy per training fold
  cot-generate   cot/       rationales for every review, each fold annotated by the other fold's policy
  encoder-train  encoder/   text encoder over rationale + review
  embed          cache/     per-user and per-item embedding histories
  rec-train      recsys/    attention recommender
  rec-eval       report/    test metrics and predictions
  analyze        analysis/  error by user engagement and review length

Artifacts go to <output_dir>/<variant>/<dir>/ with a manifest.json. The no_cot
and no_cot_item variants skip grpo-train and cot-generate.

Relative paths resolve against the config file's directory, then RECCOT_DATA_DIR.";

#[derive(Parser, Debug)]
#[command(name = "reccot", version, about = "Rationale-augmented review rating prediction", after_help = STAGE_GRAPH)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, env = "RECCOT_CONFIG")]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the variant: full, no_cot, no_cot_item or linear_reward.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Overwrite artifacts produced under a different config.
    #[arg(long, global = true)]
    force: bool,
    /// Use this encoder instead of training one.
    #[arg(long, global = true)]
    encoder_checkpoint: Option<PathBuf>,
    /// Append item metadata text to the encoder input.
    #[arg(long, global = true)]
    item_side_text: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read, clean, filter and split the review corpus.
    Ingest,
    /// Rating frequency table and corpus statistics.
    Stats,
    /// Train the rationale policies, one per fold.
    GrpoTrain,
    /// Generate rationales for all reviews.
    CotGenerate,
    /// Train the text encoder.
    EncoderTrain,
    /// Embed training reviews into the history cache.
    Embed,
    /// Print a cache file's header and index sizes as JSON.
    CacheInspect {
        /// Cache file; defaults to the configured run's cache.
        path: Option<PathBuf>,
    },
    /// Train the recommender.
    RecTrain,
    /// Evaluate the recommender on the test split.
    RecEval,
    /// Bucketed error analysis.
    Analyze,
    /// Run every stage in order and print the report.
    RunAll,
    /// Run the cascade under both accuracy rewards and write reward_compare.csv.
    RewardCompare,
    /// Write a synthetic review corpus.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        /// Output JSONL path.
        #[arg(long)]
        out: PathBuf,
        /// Lexicon size per sentiment class (planted corpus).
        #[arg(long, default_value_t = 400)]
        words_per_class: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    /// Ratings from latent user/item factors, text carrying the rating.
    Planted,
    /// Heavily skewed rating distribution.
    LongTail,
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Ingest => Stage::Ingest,
            Command::Stats => Stage::Stats,
            Command::GrpoTrain => Stage::GrpoTrain,
            Command::CotGenerate => Stage::CotGenerate,
            Command::EncoderTrain => Stage::EncoderTrain,
            Command::Embed => Stage::Embed,
            Command::RecTrain => Stage::RecTrain,
            Command::RecEval => Stage::RecEval,
            Command::Analyze => Stage::Analyze,
            _ => return None,
        })
    }
}

fn pipeline(cli: &Cli) -> anyhow::Result<Pipeline> {
    let path = cli.config.as_ref().context("--config is required for this command")?;
    let mut config = ExperimentConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if let Some(v) = &cli.variant {
        config.variant = v.parse::<Variant>()?;
    }
    if cli.item_side_text {
        config.encoder.item_side_text = true;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut p = Pipeline::new(config, base)?;
    p.force = cli.force;
    p.encoder_checkpoint = cli.encoder_checkpoint.clone();
    Ok(p)
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(stage) = cli.command.stage() {
        let p = pipeline(cli)?;
        let reviews = p.resolve(&p.config.data.reviews);
        if stage == Stage::Ingest && !reviews.exists() {
            bail!("review file {} not found", reviews.display());
        }
        p.run_stage(stage)?;
        eprintln!("{stage} done: {}", p.stage_dir(stage).display());
        return Ok(());
    }
    match &cli.command {
        Command::RunAll => print_json(&pipeline(cli)?.run_all()?),
        Command::RewardCompare => print_json(&pipeline(cli)?.reward_compare()?),
        Command::CacheInspect { path } => {
            let path = match path {
                Some(p) => p.clone(),
                None => pipeline(cli)?.artifact(Stage::Embed, "cache.bin"),
            };
            let store = CacheStore::read(&path)?;
            print_json(&store.summary())
        }
        Command::Synth { kind, out, words_per_class } => {
            let seed = cli.seed.unwrap_or(0);
            let records = match kind {
                SynthKind::Planted => {
                    let cfg = PlantedConfig { words_per_class: *words_per_class, seed, ..PlantedConfig::default() };
                    planted_corpus(&cfg, &cfg.lexicon())?
                }
                SynthKind::LongTail => {
                    let cfg = LongTailConfig { seed, ..LongTailConfig::default() };
                    long_tail_corpus(&cfg, &SentimentLexicon::english())?
                }
            };
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            write_reviews_jsonl(out, &records)?;
            eprintln!("wrote {} reviews to {}", records.len(), out.display());
            Ok(())
        }
        _ => unreachable!("stage commands handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
