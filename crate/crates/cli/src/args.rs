use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tokmarg", version, about = "Marginal string probabilities over all tokenizations")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pack raw documents into evaluation sequences (JSON Lines).
    Ingest(IngestArgs),
    /// Estimate the marginal probability of every sequence (JSON Lines).
    Estimate(EstimateArgs),
    /// Aggregate estimates into a dataset table and a CI scatter file.
    Report(ReportArgs),
    /// Compare estimates against an exact oracle.
    Validate(ValidateArgs),
    /// Bin blocks by the proposal probability of their default tokenization.
    BinBlocks(BinBlocksArgs),
    /// Sampled tokenization lengths for frequent and rare blocks.
    FreqReport(FreqReportArgs),
    /// List the tokenizations of a span.
    Enumerate(EnumerateArgs),
    /// Train an add-alpha n-gram model on default tokenizations.
    TrainNgram(TrainNgramArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Separators {
    SpaceNewline,
    AsciiWhitespace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Bootstrap {
    Percentile,
    Bca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CharUnitArg {
    Chars,
    Bytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Jsonl,
}

#[derive(Debug, Clone, Args)]
pub struct TokenizerArgs {
    /// GPT-2 style vocab.json.
    #[arg(long, requires = "merges")]
    pub vocab: Option<PathBuf>,
    /// GPT-2 style merges.txt.
    #[arg(long, requires = "vocab")]
    pub merges: Option<PathBuf>,
    /// Use the 256 single-byte vocabulary with no merges.
    #[arg(long, conflicts_with_all = ["vocab", "merges"])]
    pub single_bytes: bool,
    /// Pre-tokenizer regex replacing the GPT-2 pattern.
    #[arg(long)]
    pub pretokenizer: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// `uniform`, `ngram:<model.json>` or `remote:<url>`.
    #[arg(long, default_value = "uniform")]
    pub backend: String,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Sequences file: JSON Lines with `text` (and optionally `id`), or a
    /// plain text file taken as one sequence.
    #[arg(long, short)]
    pub input: Vec<PathBuf>,
    /// Literal sequences.
    #[arg(long = "text")]
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    /// Maximum block length in bytes.
    #[arg(long, conflicts_with = "auto_l")]
    pub max_block_len: Option<usize>,
    /// Use the longest default token over all input sequences as the block length (default).
    #[arg(long = "auto-L")]
    pub auto_l: bool,
    #[arg(long, value_enum, default_value = "space-newline")]
    pub separators: Separators,
}

#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    /// Draws per sequence.
    #[arg(long, default_value_t = 30)]
    pub k: usize,
    /// Candidates scored per block.
    #[arg(long, default_value_t = 128)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "percentile")]
    pub bootstrap: Bootstrap,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    #[arg(long, value_enum, default_value = "chars")]
    pub char_unit: CharUnitArg,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    /// Document files: `.jsonl` with a `text` field, anything else is one document.
    #[arg(required = true)]
    pub documents: Vec<PathBuf>,
    /// Token budget per sequence.
    #[arg(long, default_value_t = 800)]
    pub target_len: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub segment: SegmentArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also write every draw (token ids and weights) as JSON Lines.
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Estimates written by `estimate`.
    #[arg(required = true)]
    pub estimates: Vec<PathBuf>,
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
    /// Where to write the table CSV (stdout if absent).
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub scatter: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Sentences to check.
    pub sentences: Vec<String>,
    #[arg(long, short)]
    pub input: Vec<PathBuf>,
    #[command(flatten)]
    pub segment: SegmentArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Tokenization cap for the enumeration oracle.
    #[arg(long, default_value_t = 1_000_000)]
    pub cap: usize,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BinBlocksArgs {
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub segment: SegmentArgs,
    #[arg(long, default_value_t = 128)]
    pub m: usize,
    /// Descending cut points between bins.
    #[arg(long, value_delimiter = ',', default_value = "0.999,0.99,0.9,0.5")]
    pub bins: Vec<f64>,
    /// Example blocks kept per bin.
    #[arg(long, default_value_t = 5)]
    pub examples: usize,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct FreqReportArgs {
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub segment: SegmentArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Documents to count block frequencies in (the input sequences if absent).
    #[arg(long)]
    pub reference: Vec<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    pub span: String,
    #[arg(long, default_value_t = 128)]
    pub m: usize,
}

#[derive(Debug, Args)]
pub struct TrainNgramArgs {
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    #[arg(required = true)]
    pub documents: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Vocabulary size of the model (the tokenizer's if absent).
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long, short, required = true)]
    pub output: PathBuf,
}

/// Expands `--config <file>` into flags placed right after the subcommand,
/// so anything given on the command line wins.
///
/// The file holds `key = value` lines named after the long flags; `#` starts
/// a comment, `true` turns on a switch and `false` leaves it off.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        match arg.to_str() {
            Some("--config") => {
                config = Some(iter.next().ok_or("--config needs a file")?);
            }
            Some(s) if s.starts_with("--config=") => config = Some(OsString::from(&s["--config=".len()..])),
            _ => rest.push(arg),
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config {}: {e}", PathBuf::from(&path).display()))?;
    let mut flags = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", n + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        match value {
            "true" => flags.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => {
                flags.push(OsString::from(format!("--{key}")));
                flags.push(OsString::from(value));
            }
        }
    }
    // argv[0], then the subcommand, then the config flags.
    let split = rest.len().min(2);
    let tail = rest.split_off(split);
    rest.extend(flags);
    rest.extend(tail);
    Ok(rest)
}
