use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use attnex::bundle::{Dataset, LoadOptions, TaskKind};
use attnex::eval::{GoldFormat, MatchPolicy};
use attnex::pipeline::{self, ConfigLayer, EngineConfig, EvalOptions, EvalReport, ProviderKind};
use attnex::Error;

/// Zero-shot triple extraction from language-model attention.
#[derive(Parser)]
#[command(name = "attnex", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search, rank and decode every bundle of a dataset into a JSONL file.
    Extract(ExtractArgs),
    /// Score a prediction file against gold.
    Evaluate(EvaluateArgs),
    /// Count where gold relations sit relative to their arguments.
    Stats(StatsArgs),
    /// Train the toy encoder on sentence/triple pairs.
    RankToyTrain(TrainArgs),
    /// Check bundle files against the format rules.
    ValidateBundle(ValidateArgs),
    /// Write the running-example dataset and its gold file.
    MakeFixture {
        dir: PathBuf,
    },
}

#[derive(Args)]
struct ExtractArgs {
    /// Dataset directory holding dataset.json and bundle subdirectories.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// TOML file with the same keys as the flags (snake_case).
    #[arg(long)]
    config: Option<PathBuf>,
    /// oie, rc or fp; must agree with the dataset.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    top_n: Option<usize>,
    /// Keep at most this many candidates per argument pair.
    #[arg(long)]
    pair_cap: Option<usize>,
    /// Leave the step into the end anchor out of the score.
    #[arg(long)]
    exclude_terminal: bool,
    /// Only search between the two arguments.
    #[arg(long)]
    between_only: bool,
    /// Order candidates by search score and skip the encoder.
    #[arg(long)]
    no_ranking: bool,
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    /// Model file from `rank-toy-train`, for `--provider toy`.
    #[arg(long)]
    toy_model: Option<PathBuf>,
    /// Predicate dictionary TSV.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Task map used to decode predicates, e.g. tacred or fewrel.
    #[arg(long)]
    task_map: Option<String>,
    #[arg(long)]
    null_label: Option<String>,
    /// Worker threads; 1 runs sequentially, 0 picks automatically.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ExtractArgs {
    fn layer(&self) -> ConfigLayer {
        let flag = |b: bool| b.then_some(true);
        ConfigLayer {
            task: self.task.clone(),
            dataset: self.dataset.clone(),
            output: self.output.clone(),
            beam_size: self.beam_size,
            max_steps: self.max_steps,
            top_n: self.top_n,
            pair_cap: self.pair_cap,
            include_terminal: self.exclude_terminal.then_some(false),
            between_only: flag(self.between_only),
            no_ranking: flag(self.no_ranking),
            provider: self.provider,
            toy_model: self.toy_model.clone(),
            dict: self.dict.clone(),
            task_map: self.task_map.clone(),
            null_label: self.null_label.clone(),
            workers: self.workers,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    task: String,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    gold_format: GoldFormat,
    /// OIE: fixed confidence threshold instead of the best-F1 one.
    #[arg(long)]
    threshold: Option<f64>,
    /// OIE: PR curve CSV output.
    #[arg(long)]
    pr_csv: Option<PathBuf>,
    /// RC: label that counts as no relation.
    #[arg(long)]
    null_label: Option<String>,
    /// OIE: token overlap needed for an element match.
    #[arg(long, default_value_t = 0.5)]
    min_overlap: f64,
    /// OIE: drop the shared-head requirement.
    #[arg(long)]
    no_head_rule: bool,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// OIE gold file; defaults to $OIE2016_GOLD.
    #[arg(long, env = "OIE2016_GOLD")]
    gold: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    gold_format: GoldFormat,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Lines of `sentence<TAB>triple`.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    step_size: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ValidateArgs {
    /// A bundle directory or a dataset directory.
    path: PathBuf,
    #[arg(long, default_value_t = attnex::bundle::DEFAULT_ROW_SUM_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value_t = attnex::bundle::DEFAULT_MAX_SEQ_LEN)]
    max_seq_len: usize,
}

fn extract(args: &ExtractArgs) -> anyhow::Result<()> {
    let file = match &args.config {
        Some(path) => ConfigLayer::from_toml_file(path)?,
        None => ConfigLayer::default(),
    };
    let layer = args.layer().over(file);
    let Some(root) = layer.dataset.clone() else {
        return Err(Error::Config("--dataset is required".into()).into());
    };
    let dataset = Dataset::open(&root)?;
    let config = EngineConfig::resolve(layer, &dataset)?;
    let manifest = pipeline::cmd_extract(&config)?;
    log::info!("timings (ms): {:?}", manifest.timings_ms);
    println!(
        "wrote {} predictions to {} (config {})",
        manifest.predictions,
        config.output.display(),
        &manifest.config_hash[..12]
    );
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> anyhow::Result<()> {
    let task = TaskKind::parse(&args.task).ok_or_else(|| Error::UnknownTask(args.task.clone()))?;
    let opts = EvalOptions {
        task,
        policy: MatchPolicy {
            min_overlap: args.min_overlap,
            require_head: !args.no_head_rule,
        },
        gold_format: args.gold_format,
        threshold: args.threshold,
        pr_csv: args.pr_csv.clone(),
        null_label: args.null_label.clone(),
    };
    let report = pipeline::cmd_evaluate(&args.predictions, &args.gold, &opts)?;
    if args.json {
        println!("{}", serde_json::to_string(&report)?);
        return Ok(());
    }
    match report {
        EvalReport::Oie {
            threshold,
            precision,
            recall,
            f1,
            auc,
            predictions,
            gold,
        } => {
            println!("predictions {predictions}  gold {gold}  threshold {threshold:.4}");
            println!("P {precision:.4}  R {recall:.4}  F1 {f1:.4}  AUC {auc:.4}");
        }
        EvalReport::RelationClassification {
            top1,
            top_n,
            samples,
        } => {
            println!("samples {samples}");
            println!("top-1  P {:.4}  R {:.4}  F1 {:.4}", top1.precision, top1.recall, top1.f1);
            println!("top-n  P {:.4}  R {:.4}  F1 {:.4}", top_n.precision, top_n.recall, top_n.f1);
        }
        EvalReport::FactualProbe {
            p_at_1,
            facts,
            abstained,
        } => {
            println!("facts {facts}  abstained {abstained}");
            println!("P@1 {p_at_1:.4}");
        }
    }
    Ok(())
}

fn stats(args: &StatsArgs) -> anyhow::Result<()> {
    let s = pipeline::cmd_stats(&args.gold, args.gold_format)?;
    if args.json {
        println!("{}", serde_json::to_string(&s)?);
    } else {
        println!(
            "left {}  right {}  middle {}  total {}  unlocatable {}",
            s.left, s.right, s.middle, s.total, s.unlocatable
        );
        println!("outside the argument pair: {:.1}%", 100.0 * s.outside_fraction());
    }
    Ok(())
}

fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let pairs = pipeline::read_pairs(&args.pairs)?;
    let opts = pipeline::ToyTrainOptions {
        dim: args.dim,
        epochs: args.epochs,
        batch_size: args.batch_size,
        step_size: args.step_size,
        seed: args.seed,
    };
    let (encoder, summary) = pipeline::cmd_rank_toy_train(&pairs, &opts)?;
    encoder.save(&args.output)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Returns whether every bundle passed.
fn validate(args: &ValidateArgs) -> anyhow::Result<bool> {
    let opts = LoadOptions {
        row_sum_tolerance: args.tolerance,
        max_seq_len: args.max_seq_len,
        ..LoadOptions::default()
    };
    let checks = pipeline::cmd_validate_bundle(&args.path, &opts)?;
    let mut ok = true;
    for c in &checks {
        match &c.error {
            None => println!("ok    {}", c.path.display()),
            Some(e) => {
                ok = false;
                println!("FAIL  {}: {e}", c.path.display());
            }
        }
    }
    Ok(ok)
}

fn make_fixture(dir: &Path) -> anyhow::Result<()> {
    if dir.exists() && dir.read_dir()?.next().is_some() {
        return Err(Error::Config(format!("{} exists and is not empty", dir.display())).into());
    }
    attnex::fixture::write_running_example_dataset(dir.join("dataset"))?;
    std::fs::write(dir.join("gold.tsv"), attnex::fixture::running_example_gold_tsv())
        .with_context(|| format!("writing {}", dir.display()))?;
    println!("wrote {}", dir.display());
    Ok(())
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Invariant(_)) => EXIT_INVARIANT,
        Some(e) if !e.is_data_error() => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Extract(a) => extract(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Stats(a) => stats(a),
        Command::RankToyTrain(a) => train(a),
        Command::ValidateBundle(a) => match validate(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_DATA),
            Err(e) => Err(e),
        },
        Command::MakeFixture { dir } => make_fixture(dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
