//! Command-line surface: argument types and one function per subcommand.
//!
//! Every artifact-producing command writes `manifest.json` (or
//! `<output>.manifest.json`) next to its output with SHA-256 hashes of the
//! inputs and outputs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{
    build_vocab_with_capacity, encode_example, load_dataset, load_inputs, parse_dataset,
    write_dataset, Example, Vocab,
};
use crate::decode::{decode_all, BeamConfig};
use crate::eval::{
    evaluate, gates_csv, inspect_gates, inspect_quantization, quantization_csv, Smoothing,
};
use crate::model::{load_checkpoint, save_checkpoint, Ablations, ModelParams};
use crate::ops::{dump_line, execute_all, OpConfig};
use crate::synth::{generate as synth_generate, holdout_pairs, ScoreFilter, SynthConfig};
use crate::train::{init_params, prepare, train, EpochLog, Prepared, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "opgen", version, about = "Operation-guided table-to-text generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the vocabulary, encode examples and pre-execute operations.
    Preprocess(PreprocessArgs),
    /// Train a model on a preprocessed directory.
    Train(TrainArgs),
    /// Decode tables to text with a trained checkpoint.
    Generate(GenerateArgs),
    /// Score generated lines against references.
    Evaluate(EvaluateArgs),
    /// Dump gate values or quantization weights as CSV.
    #[command(subcommand)]
    Inspect(InspectCommand),
    /// Write a synthetic score-headline corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    /// Also emit MINUS(j, i) for every MINUS(i, j).
    #[arg(long)]
    pub both_orders: bool,
    /// Maximum number of MINUS operations per column.
    #[arg(long)]
    pub per_column_cap: Option<usize>,
    /// Largest row index the row embedding can address.
    #[arg(long, default_value_t = crate::data::DEFAULT_ROW_CAPACITY)]
    pub row_capacity: usize,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct AblationFlags {
    #[arg(long)]
    pub no_argmax: bool,
    #[arg(long)]
    pub no_quant: bool,
    #[arg(long)]
    pub no_gate: bool,
    #[arg(long)]
    pub no_ops: bool,
}

impl AblationFlags {
    fn apply(&self, a: &mut Ablations) {
        a.no_argmax |= self.no_argmax;
        a.no_quantization |= self.no_quant;
        a.no_gate |= self.no_gate;
        a.no_ops |= self.no_ops;
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Output directory of `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML training config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for checkpoints, the loss log and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub ablations: AblationFlags,
    /// Feed operation results to the record encoder as extra records.
    #[arg(long)]
    pub results_as_records: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Log each epoch to standard error.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset or box-score JSONL; reference text is optional.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 30)]
    pub max_len: usize,
    /// Exponent of the length normalization in beam ranking.
    #[arg(long, default_value_t = 1.0)]
    pub length_norm: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum SmoothingArg {
    None,
    AddOne,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Generated lines, one per example, tokens separated by spaces.
    #[arg(long)]
    pub hyp: PathBuf,
    /// Dataset JSONL holding the references and their tables.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, value_enum, default_value_t = SmoothingArg::None)]
    pub smoothing: SmoothingArg,
    /// Report file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Recorded in the report.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Recorded in the report.
    #[arg(long)]
    pub beam: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum InspectCommand {
    /// Per-step gate values of a greedy decode.
    Gates(GatesArgs),
    /// Quantization weights over a range of scalar values.
    Quant(QuantArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GatesArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Which input line to decode (0-based).
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 30)]
    pub max_len: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct QuantArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = -30.0, allow_hyphen_values = true)]
    pub from: f64,
    #[arg(long, default_value_t = 30.0, allow_hyphen_values = true)]
    pub to: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum SynthPart {
    /// Every score pair.
    All,
    /// Pairs outside the held-out set.
    Train,
    /// Only held-out pairs.
    Heldout,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 80)]
    pub min_points: u32,
    #[arg(long, default_value_t = 125)]
    pub max_points: u32,
    #[arg(long)]
    pub no_rebounds: bool,
    /// Number of score pairs held out.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[arg(long, default_value_t = 0)]
    pub holdout_seed: u64,
    #[arg(long, value_enum, default_value_t = SynthPart::All)]
    pub part: SynthPart,
    #[arg(long, default_value = "synth")]
    pub id_prefix: String,
}

/// Exit status for an error: 2 for I/O, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        2
    } else {
        1
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Generate(a) => cmd_generate(&a).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| ()),
        Command::Inspect(InspectCommand::Gates(a)) => cmd_inspect_gates(&a),
        Command::Inspect(InspectCommand::Quant(a)) => cmd_inspect_quant(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

// ---------------------------------------------------------------- files

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

fn hash_file(path: &Path) -> Result<FileHash> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Record of one command run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wall_clock_secs: f64,
}

fn write_manifest(
    path: &Path,
    command: &str,
    config: Value,
    seed: Option<u64>,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    started: Instant,
) -> Result<()> {
    let m = RunManifest {
        command: command.into(),
        config,
        seed,
        inputs: inputs.iter().map(|p| hash_file(p)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| hash_file(p)).collect::<Result<_>>()?,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    write_file(path, serde_json::to_string_pretty(&m).expect("serializable") + "\n")
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

// ----------------------------------------------------------- preprocess

/// Settings of a preprocessed directory, saved as `data.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataInfo {
    pub examples: usize,
    pub min_count: usize,
    pub row_capacity: usize,
    pub ops: OpConfig,
}

pub const EXAMPLES_FILE: &str = "examples.jsonl";
pub const ENCODED_FILE: &str = "encoded.jsonl";
pub const OPS_FILE: &str = "ops.jsonl";
pub const WORDS_FILE: &str = "words.txt";
pub const FIELDS_FILE: &str = "fields.txt";
pub const INFO_FILE: &str = "data.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn cmd_preprocess(a: &PreprocessArgs) -> Result<DataInfo> {
    let started = Instant::now();
    let examples = parse_dataset(&read_file(&a.input)?)?;
    let ops_cfg = OpConfig {
        both_orders: a.both_orders,
        per_column_cap: a.per_column_cap,
    };
    let vocab = build_vocab_with_capacity(&examples, a.min_count, a.row_capacity)?;
    let mut encoded = String::new();
    let mut dump = String::new();
    for ex in &examples {
        let e = encode_example(ex, &vocab)?;
        let line = json!({
            "id": e.id,
            "text_ids": e.text_ids,
            "targets": e.targets,
            "records": e.records.iter().map(|r| [r.row, r.field, r.value]).collect::<Vec<_>>(),
            "copy_ids": e.copy_ids,
            "oov": e.oov,
        });
        encoded.push_str(&line.to_string());
        encoded.push('\n');
        dump.push_str(&dump_line(&ex.id, &execute_all(&ex.table, &ops_cfg)?));
        dump.push('\n');
    }
    let info = DataInfo {
        examples: examples.len(),
        min_count: a.min_count,
        row_capacity: a.row_capacity,
        ops: ops_cfg,
    };
    create_dir(&a.out)?;
    let files = [
        (EXAMPLES_FILE, write_dataset(&examples)),
        (ENCODED_FILE, encoded),
        (OPS_FILE, dump),
        (WORDS_FILE, vocab.words_file()),
        (FIELDS_FILE, vocab.fields_file()),
        (INFO_FILE, serde_json::to_string_pretty(&info).expect("serializable") + "\n"),
    ];
    let mut outputs = Vec::new();
    for (name, contents) in files {
        let p = a.out.join(name);
        write_file(&p, contents)?;
        outputs.push(p);
    }
    write_manifest(
        &a.out.join(MANIFEST_FILE),
        "preprocess",
        serde_json::to_value(a).expect("serializable"),
        None,
        std::slice::from_ref(&a.input),
        &outputs,
        started,
    )?;
    Ok(info)
}

/// Examples, vocabulary and settings of a preprocessed directory.
pub fn load_preprocessed(dir: &Path) -> Result<(Vec<Example>, Vocab, DataInfo)> {
    let info: DataInfo = serde_json::from_str(&read_file(&dir.join(INFO_FILE))?)
        .map_err(|e| Error::Config(format!("{}: {e}", dir.join(INFO_FILE).display())))?;
    let vocab = Vocab::from_files(
        &read_file(&dir.join(WORDS_FILE))?,
        &read_file(&dir.join(FIELDS_FILE))?,
        info.row_capacity,
    )?;
    let examples = load_dataset(dir.join(EXAMPLES_FILE))?;
    Ok((examples, vocab, info))
}

// ---------------------------------------------------------------- train

/// Settings stored in each checkpoint that decoding needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub ops: OpConfig,
    pub results_as_records: bool,
}

pub const LOSS_FILE: &str = "loss.tsv";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:03}.ckpt")
}

fn loss_log_header(cfg: &TrainConfig) -> String {
    let a = &cfg.model.ablations;
    let mut s = String::new();
    if a.no_ops {
        s.push_str("# operations disabled: lambda pinned at 1, record context only\n");
    } else if a.no_gate {
        s.push_str("# gate disabled: lambda pinned at 0.5\n");
    }
    if a.no_argmax {
        s.push_str("# argmax operations dropped\n");
    }
    if a.no_quantization {
        s.push_str("# quantization disabled: scalar results use a direct linear map\n");
    }
    if cfg.results_as_records {
        s.push_str("# operation results also fed as records\n");
    }
    s.push_str("epoch\tloss\ttoken_loss\tgrad_norm\tskipped_updates\tclamped\tlambda_min\tlambda_max\n");
    s
}

fn loss_log_line(l: &EpochLog) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        l.epoch, l.loss, l.token_loss, l.grad_norm, l.skipped_updates, l.clamped, l.lambda_min, l.lambda_max
    )
}

/// The training config after the config file, data settings and flags are
/// merged.
pub fn resolve_train_config(a: &TrainArgs, info: &DataInfo) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if cfg.ops != OpConfig::default() && cfg.ops != info.ops {
        return Err(Error::Config(format!(
            "config ops {:?} differ from the preprocessed data's {:?}",
            cfg.ops, info.ops
        )));
    }
    cfg.ops = info.ops;
    a.ablations.apply(&mut cfg.model.ablations);
    cfg.results_as_records |= a.results_as_records;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> Result<Vec<EpochLog>> {
    let started = Instant::now();
    let (examples, vocab, info) = load_preprocessed(&a.data)?;
    let cfg = resolve_train_config(a, &info)?;
    let data = prepare(&examples, &vocab, &cfg)?;
    let mut model = init_params(&cfg, crate::model::VocabSizes::of(&vocab))?;
    create_dir(&a.out)?;
    let loss_path = a.out.join(LOSS_FILE);
    let mut log = String::new();
    log.push_str(&format!("# seed {}\n", cfg.seed));
    log.push_str(&loss_log_header(&cfg));
    let mut outputs = Vec::new();
    let logs = train(&mut model, &data, &cfg, |l, m| {
        log.push_str(&loss_log_line(l));
        if a.verbose {
            eprintln!(
                "epoch {:>3}  loss {:.4}  token {:.4}  |g| {:.3}  lambda [{:.3}, {:.3}]",
                l.epoch, l.loss, l.token_loss, l.grad_norm, l.lambda_min, l.lambda_max
            );
        }
        if l.epoch > 0 {
            let meta = CheckpointMeta {
                epoch: l.epoch,
                ops: cfg.ops,
                results_as_records: cfg.results_as_records,
            };
            let p = a.out.join(checkpoint_name(l.epoch));
            save_checkpoint(&p, m, &vocab, Some(cfg.seed), serde_json::to_value(meta).expect("serializable"))?;
            outputs.push(p);
        }
        Ok(())
    })?;
    write_file(&loss_path, &log)?;
    let final_path = a.out.join(FINAL_CHECKPOINT);
    let meta = CheckpointMeta {
        epoch: logs.last().map_or(0, |l| l.epoch),
        ops: cfg.ops,
        results_as_records: cfg.results_as_records,
    };
    save_checkpoint(&final_path, &model, &vocab, Some(cfg.seed), serde_json::to_value(meta).expect("serializable"))?;
    outputs.push(loss_path);
    outputs.push(final_path);
    let inputs: Vec<PathBuf> = [EXAMPLES_FILE, WORDS_FILE, FIELDS_FILE, INFO_FILE]
        .iter()
        .map(|f| a.data.join(f))
        .chain(a.config.clone())
        .collect();
    write_manifest(
        &a.out.join(MANIFEST_FILE),
        "train",
        json!({ "args": a, "resolved": cfg }),
        Some(cfg.seed),
        &inputs,
        &outputs,
        started,
    )?;
    Ok(logs)
}

// ------------------------------------------------------------- generate

/// A checkpoint with what decoding needs.
pub struct LoadedModel {
    pub model: ModelParams<f32>,
    pub vocab: Vocab,
    pub meta: CheckpointMeta,
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let (model, vocab, manifest) = load_checkpoint::<f32>(path)?;
    let meta: CheckpointMeta = serde_json::from_value(manifest.meta)
        .map_err(|e| Error::Checkpoint(format!("{}: missing decoding settings: {e}", path.display())))?;
    Ok(LoadedModel { model, vocab, meta })
}

impl LoadedModel {
    /// Encodes inputs the way the model was trained.
    pub fn prepare(&self, examples: &[Example]) -> Result<Vec<Prepared>> {
        let cfg = TrainConfig {
            model: self.model.config,
            ops: self.meta.ops,
            results_as_records: self.meta.results_as_records,
            ..TrainConfig::default()
        };
        prepare(examples, &self.vocab, &cfg)
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<Vec<Vec<String>>> {
    let started = Instant::now();
    if a.beam == 0 || a.max_len == 0 {
        return Err(Error::Config("beam and max-len must be at least 1".into()));
    }
    let lm = load_model(&a.model)?;
    let data = lm.prepare(&load_inputs(&a.input)?)?;
    let cfg = BeamConfig {
        beam: a.beam,
        max_len: a.max_len,
        length_norm: a.length_norm,
    };
    let outputs = decode_all(&lm.model, &lm.vocab, &data, &cfg)?;
    let mut text = String::new();
    for o in &outputs {
        text.push_str(&o.join(" "));
        text.push('\n');
    }
    match &a.out {
        Some(p) => {
            write_file(p, &text)?;
            write_manifest(
                &sibling_manifest(p),
                "generate",
                serde_json::to_value(a).expect("serializable"),
                None,
                &[a.model.clone(), a.input.clone()],
                std::slice::from_ref(p),
                started,
            )?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(outputs)
}

// ------------------------------------------------------------- evaluate

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<crate::eval::EvalReport> {
    let started = Instant::now();
    let hyps: Vec<Vec<String>> = read_file(&a.hyp)?
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    let refs = load_dataset(&a.reference)?;
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} generated lines for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let ids: Vec<String> = refs.iter().map(|e| e.id.clone()).collect();
    let texts: Vec<Vec<String>> = refs.iter().map(|e| e.text.clone()).collect();
    let tables: Vec<_> = refs.iter().map(|e| e.table.clone()).collect();
    // the winner diagnostic needs Team and Points on every table
    let scoreable = !tables.is_empty() && tables.iter().all(|t| crate::eval::template_generate(t).is_ok());
    let smoothing = match a.smoothing {
        SmoothingArg::None => Smoothing::None,
        SmoothingArg::AddOne => Smoothing::AddOne,
    };
    let mut report = evaluate(&ids, &hyps, &texts, scoreable.then_some(&tables[..]), smoothing)?;
    report.checkpoint = a.checkpoint.clone();
    report.beam = a.beam;
    let json = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
    match &a.out {
        Some(p) => {
            write_file(p, &json)?;
            write_manifest(
                &sibling_manifest(p),
                "evaluate",
                serde_json::to_value(a).expect("serializable"),
                None,
                &[a.hyp.clone(), a.reference.clone()],
                std::slice::from_ref(p),
                started,
            )?;
        }
        None => print!("{json}"),
    }
    Ok(report)
}

// -------------------------------------------------------------- inspect

fn emit(out: Option<&PathBuf>, contents: &str, command: &str, config: Value, inputs: &[PathBuf], started: Instant) -> Result<()> {
    match out {
        Some(p) => {
            write_file(p, contents)?;
            write_manifest(&sibling_manifest(p), command, config, None, inputs, std::slice::from_ref(p), started)
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

pub fn cmd_inspect_gates(a: &GatesArgs) -> Result<()> {
    let started = Instant::now();
    let lm = load_model(&a.model)?;
    let inputs = load_inputs(&a.input)?;
    let ex = inputs.get(a.index).ok_or_else(|| {
        Error::Contract(format!("index {} out of range for {} inputs", a.index, inputs.len()))
    })?;
    let p = lm.prepare(std::slice::from_ref(ex))?.remove(0);
    let rows = inspect_gates(&lm.model, &lm.vocab, &p.ex, &p.ops, a.max_len)?;
    emit(
        a.out.as_ref(),
        &gates_csv(&rows),
        "inspect gates",
        serde_json::to_value(a).expect("serializable"),
        &[a.model.clone(), a.input.clone()],
        started,
    )
}

/// `from, from + step, ...` up to `to` inclusive (within rounding).
pub fn value_range(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !from.is_finite() || !to.is_finite() || to < from {
        return Err(Error::Config("need finite from <= to and step > 0".into()));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| from + i as f64 * step).collect())
}

pub fn cmd_inspect_quant(a: &QuantArgs) -> Result<()> {
    let started = Instant::now();
    let lm = load_model(&a.model)?;
    let values = value_range(a.from, a.to, a.step)?;
    let weights = inspect_quantization(&lm.model, &values)?;
    emit(
        a.out.as_ref(),
        &quantization_csv(&values, &weights),
        "inspect quant",
        serde_json::to_value(a).expect("serializable"),
        std::slice::from_ref(&a.model),
        started,
    )
}

// ---------------------------------------------------------------- synth

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = SynthConfig {
        count: a.count,
        seed: a.seed,
        min_points: a.min_points,
        max_points: a.max_points,
        rebounds: !a.no_rebounds,
        id_prefix: a.id_prefix.clone(),
    };
    let filter = match a.part {
        SynthPart::All => ScoreFilter::Any,
        SynthPart::Train => ScoreFilter::Exclude(holdout_pairs(&cfg, a.holdout, a.holdout_seed)?),
        SynthPart::Heldout => ScoreFilter::Only(holdout_pairs(&cfg, a.holdout, a.holdout_seed)?),
    };
    let examples = synth_generate(&cfg, &filter)?;
    write_file(&a.out, write_dataset(&examples))?;
    write_manifest(
        &sibling_manifest(&a.out),
        "synth",
        serde_json::to_value(a).expect("serializable"),
        Some(a.seed),
        &[],
        std::slice::from_ref(&a.out),
        started,
    )
}
