//! The `seqdiv` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O or
//! malformed input file, 3 numeric divergence during training. Every
//! argument is validated before any output file is written.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus::{
    generate_synthetic, load_checkpoint, parse_corpus, save_checkpoint, tokenize, SyntheticCorpusSpec,
    VocabPolicy, Vocabulary,
};
use crate::decoding::{
    decoder_registry, objective_registry, to_jsonl, DecodeParams, DecodePipeline, DecodeStrategy,
    NBestRecord, ObjectiveParams, RerankObjective, ScoringModels, SequenceScorer,
};
use crate::diagnostics::{select_responses, summarize, trace_decode};
use crate::error::{Error, Result};
use crate::model::{AttentionMode, ModelConfig, Seq2SeqModel};
use crate::training::{
    loss_registry, train, train_language_model, train_reverse_model, LossParams, OptimizerKind,
    TrainConfig,
};

/// Environment variable supplying the default `--seed`.
pub const SEED_ENV: &str = "SEQDIV_SEED";

#[derive(Parser, Debug)]
#[command(name = "seqdiv", version, about = "Seq2seq response diversity lab")]
pub struct Cli {
    /// Seed for corpus generation, initialization and shuffling.
    #[arg(long, global = true, env = SEED_ENV, default_value_t = 17)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic message/response TSV with a skewed response distribution.
    GenCorpus(GenCorpusArgs),
    /// Train a forward, language or reverse model.
    Train(TrainArgs),
    /// Decode input messages into ranked N-best lists (JSON lines).
    Decode(DecodeCmdArgs),
    /// Per-step top-k traces and a confidence summary for each input.
    Diagnose(DiagnoseArgs),
    /// Corpus-level diversity report over decoded inputs.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub base_vocab: usize,
    #[arg(long, default_value_t = 20)]
    pub templates: usize,
    /// Fraction of responses drawn from the generic set.
    #[arg(long, default_value_t = 0.8)]
    pub skew: f64,
    /// Size of the generic response set.
    #[arg(long, default_value_t = 2)]
    pub generic: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Forward,
    Lm,
    Reverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttentionArg {
    None,
    Single,
    Multi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Forward)]
    pub model_kind: ModelKind,
    /// nll, confidence-penalty or label-smoothing.
    #[arg(long, default_value = "nll")]
    pub loss: String,
    /// Confidence-penalty strength.
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Label-smoothing mass.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden_dim: usize,
    #[arg(long, value_enum, default_value_t = AttentionArg::None)]
    pub attention: AttentionArg,
    /// Number of heads for multi-head attention.
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    /// Share the input embedding table with the output candidate table.
    #[arg(long)]
    pub tie: bool,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Global gradient-norm clip.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Record wall-clock seconds in the report instead of NA.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Args, Debug, Clone)]
pub struct DecodeArgs {
    /// Greedy decoding (the default when --beam is absent).
    #[arg(long, conflicts_with = "beam")]
    pub greedy: bool,
    /// Beam width.
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    /// map, mmi-antilm or mmi-bidi.
    #[arg(long, default_value = "map")]
    pub objective: String,
    /// Weight of the language-model or reverse-model term.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Per-token length bonus.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Language-model checkpoint for mmi-antilm.
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// Reverse-model checkpoint for mmi-bidi.
    #[arg(long)]
    pub reverse: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DecodeCmdArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One message per line.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// JSON-lines output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Entries kept per step.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    /// Directory for trace_NNNN.jsonl files and summary.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } => 3,
        Error::Io(_)
        | Error::Parse { .. }
        | Error::Corpus(_)
        | Error::Corruption { .. }
        | Error::Version { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn main() -> ExitCode {
    run(std::env::args_os())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(a, cli.seed),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Decode(a) => decode_cmd(a),
        Command::Diagnose(a) => diagnose_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| with_path(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| with_path(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| with_path(path, e))
}

fn gen_corpus(a: &GenCorpusArgs, seed: u64) -> Result<()> {
    let spec = SyntheticCorpusSpec {
        base_vocab: a.base_vocab,
        templates: a.templates,
        generic_skew: a.skew,
        generic_responses: a.generic,
        seed,
    };
    spec.validate()?;
    if a.size == 0 {
        return Err(Error::config("--size must be >= 1"));
    }
    let corpus = generate_synthetic(&spec, a.size)?;
    let (_, vocab) = corpus.to_corpus(VocabPolicy::Build)?;
    write(&a.out, corpus.to_tsv())?;
    println!("pairs: {}", corpus.len());
    println!("vocab: {}", vocab.len());
    println!("generic_fraction: {:.4}", corpus.generic_fraction());
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: u64) -> Result<()> {
    let loss = loss_registry().build(
        &a.loss,
        &LossParams {
            beta: a.beta,
            epsilon: a.epsilon,
        },
    )?;
    let attention = match a.attention {
        AttentionArg::None => AttentionMode::None,
        AttentionArg::Single => AttentionMode::Single,
        AttentionArg::Multi => AttentionMode::Multi(a.heads),
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => OptimizerKind::default(),
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        clip_norm: a.clip,
        seed,
    };
    cfg.validate()?;
    cfg.optimizer.build(cfg.learning_rate)?;

    let (corpus, vocab) = parse_corpus(&read_text(&a.corpus)?, VocabPolicy::Build)?;
    let mut model_cfg = ModelConfig::new(vocab.len(), a.embed_dim, a.hidden_dim)
        .with_attention(attention)
        .tied(a.tie);
    if a.model_kind == ModelKind::Lm {
        model_cfg = model_cfg.language_model();
    }
    let mut model = Seq2SeqModel::new(model_cfg, seed)?;

    let report = match a.model_kind {
        ModelKind::Forward => train(&mut model, &corpus, &cfg, loss.as_ref())?,
        ModelKind::Lm => train_language_model(&mut model, &corpus.responses(), &cfg, loss.as_ref())?,
        ModelKind::Reverse => train_reverse_model(&mut model, &corpus, &cfg, loss.as_ref())?,
    };
    write(&a.out, save_checkpoint(&model, &vocab)?)?;
    if let Some(path) = &a.report {
        write(path, report.to_csv(a.timings))?;
    }
    if let Some(last) = report.last() {
        println!(
            "epochs: {}  loss: {:.6}  mean_entropy: {:.6}",
            last.epoch, last.loss, last.mean_entropy
        );
    }
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<(Seq2SeqModel, Vocabulary)> {
    load_checkpoint(&read(path)?)
}

/// Encoded messages, one per line. Blank lines are rejected.
fn read_inputs(path: &Path, vocab: &Vocabulary) -> Result<Vec<(String, Vec<usize>)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let toks = tokenize(line);
        if toks.is_empty() {
            return Err(Error::config(format!(
                "{}: line {} is empty",
                path.display(),
                i + 1
            )));
        }
        out.push((line.to_string(), vocab.encode(&toks)));
    }
    if out.is_empty() {
        return Err(Error::config(format!("{}: no input messages", path.display())));
    }
    Ok(out)
}

/// A validated decode configuration with its auxiliary models loaded.
struct Decoding {
    decoder: Box<dyn DecodeStrategy>,
    objective: Box<dyn RerankObjective>,
    lm: Option<Seq2SeqModel>,
    reverse: Option<Seq2SeqModel>,
}

impl Decoding {
    /// Checks flags without touching the filesystem.
    fn validate(a: &DecodeArgs) -> Result<(Box<dyn DecodeStrategy>, Box<dyn RerankObjective>)> {
        let (name, width) = match a.beam {
            Some(b) => ("beam", b),
            None => ("greedy", 1),
        };
        let decoder = decoder_registry().build(
            name,
            &DecodeParams {
                width,
                max_len: a.max_len,
            },
        )?;
        let objective = objective_registry().build(
            &a.objective,
            &ObjectiveParams {
                lambda: a.lambda,
                gamma: a.gamma,
            },
        )?;
        match objective.name() {
            "mmi-antilm" if a.lm.is_none() => {
                return Err(Error::config("--objective mmi-antilm requires --lm <CHECKPOINT>"));
            }
            "mmi-bidi" if a.reverse.is_none() => {
                return Err(Error::config("--objective mmi-bidi requires --reverse <CHECKPOINT>"));
            }
            _ => {}
        }
        Ok((decoder, objective))
    }

    fn load(a: &DecodeArgs, vocab: &Vocabulary) -> Result<Self> {
        let (decoder, objective) = Self::validate(a)?;
        let aux = |path: &Option<PathBuf>, flag: &str| -> Result<Option<Seq2SeqModel>> {
            let Some(p) = path else { return Ok(None) };
            let (m, v) = read_checkpoint(p)?;
            if &v != vocab {
                return Err(Error::config(format!(
                    "{flag} checkpoint vocabulary differs from the forward model's"
                )));
            }
            Ok(Some(m))
        };
        let lm = aux(&a.lm, "--lm")?;
        if lm.as_ref().is_some_and(|m| !m.config().decoder_only) {
            return Err(Error::config("--lm checkpoint is not a language model"));
        }
        let reverse = aux(&a.reverse, "--reverse")?;
        Ok(Self {
            decoder,
            objective,
            lm,
            reverse,
        })
    }

    fn pipeline(&self) -> DecodePipeline<'_> {
        DecodePipeline {
            decoder: self.decoder.as_ref(),
            objective: self.objective.as_ref(),
            models: ScoringModels {
                lm: self.lm.as_ref().map(|m| m as &dyn SequenceScorer),
                reverse: self.reverse.as_ref().map(|m| m as &dyn SequenceScorer),
            },
        }
    }
}

#[derive(Serialize)]
struct DecodeRecord {
    input: String,
    response: String,
    nbest: Vec<NBestRecord>,
}

fn decode_cmd(a: &DecodeCmdArgs) -> Result<()> {
    Decoding::validate(&a.decode)?;
    let (model, vocab) = read_checkpoint(&a.checkpoint)?;
    let decoding = Decoding::load(&a.decode, &vocab)?;
    let inputs = read_inputs(&a.input, &vocab)?;
    let pipeline = decoding.pipeline();
    let objective = decoding.objective.name();

    let mut records = Vec::with_capacity(inputs.len());
    for (line, x) in &inputs {
        let ranked = pipeline.run(&model, x)?;
        let nbest: Vec<NBestRecord> = ranked
            .iter()
            .map(|s| {
                let mut scores = BTreeMap::new();
                scores.insert("map".to_string(), s.hyp.log_prob);
                scores.insert(objective.to_string(), s.score);
                NBestRecord::new(&s.hyp, &vocab, scores)
            })
            .collect();
        let response = ranked
            .first()
            .map(|s| vocab.render(&s.hyp.tokens))
            .unwrap_or_default();
        records.push(DecodeRecord {
            input: line.clone(),
            response,
            nbest,
        });
    }
    let out = to_jsonl(&records)?;
    match &a.out {
        Some(p) => write(p, out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn diagnose_cmd(a: &DiagnoseArgs) -> Result<()> {
    if a.k == 0 || a.max_len == 0 {
        return Err(Error::config("--k and --max-len must be >= 1"));
    }
    let (model, vocab) = read_checkpoint(&a.checkpoint)?;
    if a.k > vocab.len() {
        return Err(Error::config(format!("--k {} exceeds vocabulary size {}", a.k, vocab.len())));
    }
    let inputs = read_inputs(&a.input, &vocab)?;
    let mut traces = Vec::with_capacity(inputs.len());
    for (_, x) in &inputs {
        traces.push(trace_decode(&model, &vocab, x, a.k, a.max_len)?);
    }

    fs::create_dir_all(&a.out).map_err(|e| with_path(&a.out, e))?;
    let mut summary =
        String::from("input,length,first_maxprob,final_maxprob,snowball_index,mean_entropy\n");
    for (i, t) in traces.iter().enumerate() {
        write(&a.out.join(format!("trace_{i:04}.jsonl")), t.to_jsonl(&vocab)?)?;
        let tr = &t.trajectory;
        let mean_entropy = tr.entropies.iter().sum::<f64>() / tr.entropies.len().max(1) as f64;
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            i,
            tr.len(),
            tr.max_probs.first().copied().unwrap_or(f64::NAN),
            tr.max_probs.last().copied().unwrap_or(f64::NAN),
            tr.snowball_index().map_or_else(|| "NA".to_string(), |s| s.to_string()),
            mean_entropy,
        );
    }
    write(&a.out.join("summary.csv"), summary)
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    Decoding::validate(&a.decode)?;
    let (model, vocab) = read_checkpoint(&a.checkpoint)?;
    let decoding = Decoding::load(&a.decode, &vocab)?;
    let inputs: Vec<Vec<usize>> = read_inputs(&a.input, &vocab)?
        .into_iter()
        .map(|(_, x)| x)
        .collect();
    let report = summarize(&select_responses(&model, &inputs, &decoding.pipeline())?)?;
    let json = report.to_json()?;
    if let Some(p) = &a.out_json {
        write(p, &json)?;
    }
    if let Some(p) = &a.out_csv {
        write(p, report.to_csv())?;
    }
    if a.out_json.is_none() && a.out_csv.is_none() {
        print!("{json}");
    }
    Ok(())
}
