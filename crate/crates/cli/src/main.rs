use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use qase_core::data::{
    load, synth_corpus, write_squad_layout, write_tokenized_jsonl, DatasetKind, RawExample, SynthOptions,
};
use qase_core::harness::checkpoint;
use qase_core::harness::evaluate::{self, read_predictions, write_jsonl};
use qase_core::harness::gradcheck::{self, GradcheckSpec};
use qase_core::harness::sweep::{format_table, sweep, SweepGrid};
use qase_core::harness::{train_with, TrainConfig, TrainState};
use qase_core::{Error, HeadKind};

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "qase", version, about = "Train and evaluate question-attended span extraction models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint or a predictions file against a dataset.
    Evaluate(EvaluateArgs),
    /// Write greedy answers as JSONL.
    Predict(ModelDataArgs),
    /// Write the tagger's decoded context spans as JSONL.
    Tag(ModelDataArgs),
    /// Grid search over beta and learning rate.
    Sweep(SweepArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic corpus in the SQuAD layout.
    Synth(SynthArgs),
    /// Write tokenized prompts as JSONL.
    Prepare(PrepareArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// squad, multispanqa, quoref or synth.
    #[arg(long, default_value = "squad")]
    kind: DatasetKind,
}

/// Training options: a flat config file plus one flag per key. Flags win.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long, alias = "batch_size")]
    batch_size: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    head: Option<String>,
    #[arg(long, alias = "prompt_order")]
    prompt_order: Option<String>,
    #[arg(long, alias = "multi_span_clause")]
    multi_span_clause: Option<String>,
    #[arg(long, alias = "max_steps")]
    max_steps: Option<String>,
    #[arg(long, alias = "early_stop_window")]
    early_stop_window: Option<String>,
    #[arg(long, alias = "early_stop_delta")]
    early_stop_delta: Option<String>,
    #[arg(long, alias = "hidden_dim")]
    hidden_dim: Option<String>,
    #[arg(long, alias = "ff_dim")]
    ff_dim: Option<String>,
    #[arg(long, alias = "num_heads")]
    num_heads: Option<String>,
    #[arg(long, alias = "num_encoder_layers")]
    num_encoder_layers: Option<String>,
    #[arg(long, alias = "num_decoder_layers")]
    num_decoder_layers: Option<String>,
    #[arg(long, alias = "proj_dim")]
    proj_dim: Option<String>,
    #[arg(long, alias = "max_seq_len")]
    max_seq_len: Option<String>,
    #[arg(long, alias = "max_new_tokens")]
    max_new_tokens: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        let flags = [
            ("lr", &self.lr),
            ("beta", &self.beta),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("seed", &self.seed),
            ("optimizer", &self.optimizer),
            ("head", &self.head),
            ("prompt_order", &self.prompt_order),
            ("multi_span_clause", &self.multi_span_clause),
            ("max_steps", &self.max_steps),
            ("early_stop_window", &self.early_stop_window),
            ("early_stop_delta", &self.early_stop_delta),
            ("hidden_dim", &self.hidden_dim),
            ("ff_dim", &self.ff_dim),
            ("num_heads", &self.num_heads),
            ("num_encoder_layers", &self.num_encoder_layers),
            ("num_decoder_layers", &self.num_decoder_layers),
            ("proj_dim", &self.proj_dim),
            ("max_seq_len", &self.max_seq_len),
            ("max_new_tokens", &self.max_new_tokens),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-step loss log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Predictions JSONL ({id, answer} per line) to score instead of a model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep per-example scores in the report.
    #[arg(long)]
    per_example: bool,
}

#[derive(Args)]
struct ModelDataArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output JSONL; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Scoring set; the training data when absent.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Share of the training data each cell trains on.
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    /// Comma-separated beta grid.
    #[arg(long, value_delimiter = ',')]
    betas: Vec<f64>,
    /// Comma-separated learning-rate grid.
    #[arg(long, value_delimiter = ',')]
    lrs: Vec<f64>,
    /// Write the ranked rows as JSON here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 8)]
    proj_dim: usize,
    #[arg(long, default_value_t = 2)]
    num_heads: usize,
    #[arg(long, default_value_t = 5)]
    context_tokens: usize,
    #[arg(long, default_value_t = 3)]
    question_tokens: usize,
    #[arg(long, default_value_t = 3)]
    answer_tokens: usize,
    #[arg(long, default_value_t = 16)]
    vocab_size: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value = "qase")]
    head: HeadKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    multi_span_fraction: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Take the vocabulary and template from this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Either an error, or a check that ran and failed.
enum Failure {
    Core(Error),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    let target = path.unwrap_or(Path::new("<stdout>"));
    let mut out = output(path)?;
    out.write_all(text.as_bytes()).map_err(io_err(target))?;
    out.flush().map_err(io_err(target))
}

fn load_data(args: &DataArgs) -> Result<Vec<RawExample>, Failure> {
    let loaded = load(&args.data, args.kind)?;
    if !loaded.rejected.is_empty() || loaded.dropped > 0 {
        warn!(
            "{}: {} questions rejected, {} answers dropped, {} offsets recovered",
            args.data.display(),
            loaded.rejected.len(),
            loaded.dropped,
            loaded.recovered
        );
    }
    if loaded.examples.is_empty() {
        return Err(Error::Ingest {
            id: args.data.display().to_string(),
            reason: "no usable examples".into(),
        }
        .into());
    }
    Ok(loaded.examples)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(a) => {
            let cfg = a.config.resolve()?;
            let corpus = load_data(&a.data)?;
            let mut log = match &a.log {
                Some(p) => {
                    let mut f = BufWriter::new(File::create(p).map_err(io_err(p))?);
                    writeln!(f, "step,loss_lm,loss_qase,loss_total").map_err(io_err(p))?;
                    Some((f, p.clone()))
                }
                None => None,
            };
            let mut log_error = None;
            let (state, summary) = train_with(&cfg, &corpus, |r| {
                if let Some((f, p)) = &mut log {
                    if let Err(e) = writeln!(f, "{},{},{},{}", r.step, r.loss_lm, r.loss_qase, r.loss_total) {
                        log_error.get_or_insert((p.clone(), e));
                    }
                }
            })?;
            if let Some((p, e)) = log_error {
                return Err(io_err(&p)(e));
            }
            if let Some((mut f, p)) = log {
                f.flush().map_err(io_err(&p))?;
            }
            checkpoint::save(&state, &a.out)?;
            println!(
                "{} steps, final loss {:.6}{}",
                summary.steps(),
                summary.final_loss().unwrap_or(f64::NAN),
                if summary.stopped_early { " (stopped early)" } else { "" }
            );
        }
        Command::Evaluate(a) => {
            let corpus = load_data(&a.data)?;
            let mut report = if let Some(ckpt) = &a.checkpoint {
                let state = checkpoint::load(ckpt)?;
                evaluate::evaluate(&state, &corpus, a.data.kind)?
            } else {
                let path = a.predictions.as_ref().expect("clap enforces one source");
                let file = File::open(path).map_err(io_err(path))?;
                let preds = read_predictions(BufReader::new(file))?;
                evaluate::score(a.data.kind, &corpus, &preds)?
            };
            if !a.per_example {
                report.per_example = None;
            }
            write_text(a.out.as_deref(), &(report.to_json() + "\n"))?;
        }
        Command::Predict(a) => {
            let state = checkpoint::load(&a.checkpoint)?;
            let corpus = load_data(&a.data)?;
            let preds = evaluate::predict(&state, &state.prepare(&corpus)?)?;
            let target = a.out.clone().unwrap_or_else(|| "<stdout>".into());
            write_jsonl(output(a.out.as_deref())?, &preds).map_err(io_err(&target))?;
        }
        Command::Tag(a) => {
            let state = checkpoint::load(&a.checkpoint)?;
            let corpus = load_data(&a.data)?;
            let tagged = evaluate::tag(&state, &corpus, &state.prepare(&corpus)?)?
                .ok_or_else(|| Error::Config("checkpoint was trained without a tagging head".into()))?;
            let target = a.out.clone().unwrap_or_else(|| "<stdout>".into());
            write_jsonl(output(a.out.as_deref())?, &tagged).map_err(io_err(&target))?;
        }
        Command::Sweep(a) => {
            let base = a.config.resolve()?;
            let train_set = load_data(&a.data)?;
            let eval_set = match &a.eval_data {
                Some(p) => load_data(&DataArgs {
                    data: p.clone(),
                    kind: a.data.kind,
                })?,
                None => train_set.clone(),
            };
            let default = SweepGrid::default();
            let grid = SweepGrid {
                betas: if a.betas.is_empty() { default.betas } else { a.betas },
                lrs: if a.lrs.is_empty() { default.lrs } else { a.lrs },
            };
            info!("sweeping {} cells", grid.cells().len());
            let rows = sweep(&base, &grid, &train_set, &eval_set, a.data.kind, a.fraction)?;
            print!("{}", format_table(&rows));
            if let Some(p) = &a.out {
                let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
                write_text(Some(p), &(json + "\n"))?;
            }
        }
        Command::Gradcheck(a) => {
            let spec = GradcheckSpec {
                hidden_dim: a.hidden_dim,
                proj_dim: a.proj_dim,
                num_heads: a.num_heads,
                context_tokens: a.context_tokens,
                question_tokens: a.question_tokens,
                answer_tokens: a.answer_tokens,
                vocab_size: a.vocab_size,
                beta: a.beta,
                head: a.head,
            };
            let report = gradcheck::run(&spec, a.seed)?;
            print!("{}", report.render());
            if !report.passed() {
                return Err(Failure::Check);
            }
        }
        Command::Synth(a) => {
            if !(0.0..=1.0).contains(&a.multi_span_fraction) {
                return Err(Error::Config("multi_span_fraction must be within [0, 1]".into()).into());
            }
            let opts = SynthOptions {
                multi_span_fraction: a.multi_span_fraction,
                ..SynthOptions::default()
            };
            let corpus = synth_corpus(a.n, a.seed, &opts);
            write_text(a.out.as_deref(), &(write_squad_layout(&corpus) + "\n"))?;
        }
        Command::Prepare(a) => {
            let corpus = load_data(&a.data)?;
            let state = match &a.checkpoint {
                Some(p) => checkpoint::load(p)?,
                None => TrainState::init(&a.config.resolve()?, &corpus)?,
            };
            let examples = state.prepare(&corpus)?;
            let target = a.out.clone().unwrap_or_else(|| "<stdout>".into());
            write_tokenized_jsonl(output(a.out.as_deref())?, &examples).map_err(io_err(&target))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => {
            eprintln!("check failed");
            ExitCode::from(EXIT_CHECK)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { EXIT_DATA } else { EXIT_CONFIG })
        }
    }
}
