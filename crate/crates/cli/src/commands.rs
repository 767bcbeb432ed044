use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tokmarg::analysis::{
    bin_blocks_by_q_default, bins_from_cuts, dataset_report, length_by_frequency_report, sampled_blocks,
    BlockFrequencyTable,
};
use tokmarg::corpus::{build_sequences, read_documents};
use tokmarg::estimator::{
    run_estimate, BlockLen, BootstrapConfig, BootstrapMethod, CharUnit, EstimateRecord, EstimatorConfig,
};
use tokmarg::lm::{train_ngram, NGramLm, RemoteBackend, ScoringBackend, UniformLm};
use tokmarg::oracle::{exact_marginal_enumerate, exact_marginal_lattice, ValidationRow};
use tokmarg::segmenter::{recommend_block_len, SegmenterConfig, SeparatorClass};
use tokmarg::TokenizerSpec;

use crate::args::*;

/// A bad combination of arguments that clap cannot catch; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub enum Backend {
    Uniform(UniformLm),
    NGram(NGramLm),
    Remote(RemoteBackend),
}

impl Backend {
    fn as_dyn(&self) -> &dyn ScoringBackend {
        match self {
            Backend::Uniform(b) => b,
            Backend::NGram(b) => b,
            Backend::Remote(b) => b,
        }
    }
}

/// Resolves the tokenizer and the backend together: a remote backend can
/// supply the tokenizer, and the uniform backend takes its size from it.
fn load(tok: &TokenizerArgs, backend: &BackendArgs) -> Result<(TokenizerSpec, Backend)> {
    let remote = match backend.backend.split_once(':') {
        Some(("remote", url)) => Some(RemoteBackend::connect(url)?),
        _ => None,
    };
    let spec = load_tokenizer(tok, remote.as_ref())?;
    let backend = match (backend.backend.as_str(), remote) {
        (_, Some(r)) => Backend::Remote(r),
        ("uniform", None) => Backend::Uniform(UniformLm::new(spec.vocab_size())),
        (b, None) => match b.split_once(':') {
            Some(("ngram", path)) => Backend::NGram(NGramLm::load(path)?),
            _ => return Err(usage(format!("unknown backend {b:?}; use uniform, ngram:<path> or remote:<url>"))),
        },
    };
    Ok((spec, backend))
}

fn load_tokenizer(tok: &TokenizerArgs, remote: Option<&RemoteBackend>) -> Result<TokenizerSpec> {
    let spec = match (&tok.vocab, &tok.merges) {
        (Some(v), Some(m)) => TokenizerSpec::load(v, m)?,
        _ if tok.single_bytes => TokenizerSpec::single_bytes(),
        _ => match remote {
            Some(r) => r.fetch_tokenizer()?,
            None => return Err(usage("no tokenizer: pass --vocab and --merges, or --single-bytes")),
        },
    };
    Ok(match &tok.pretokenizer {
        Some(p) => spec.with_pretokenizer(p)?,
        None => spec,
    })
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Debug, Deserialize)]
struct InputLine {
    text: String,
    #[serde(default)]
    id: Option<String>,
}

/// `(id, text)` pairs from `--input` files followed by `--text` literals.
fn load_sequences(files: &[PathBuf], texts: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for path in files {
        if path.extension().is_some_and(|e| e == "jsonl") {
            let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: InputLine = serde_json::from_str(&line)
                    .map_err(tokmarg::Error::from)
                    .with_context(|| format!("{}:{}", path.display(), n + 1))?;
                let id = parsed.id.unwrap_or_else(|| format!("{}:{}", path.display(), n + 1));
                out.push((id, parsed.text));
            }
        } else {
            let text = read_documents(path)?.remove(0);
            out.push((path.display().to_string(), text));
        }
    }
    out.extend(texts.iter().enumerate().map(|(i, t)| (format!("text-{i}"), t.clone())));
    if out.is_empty() {
        return Err(usage("no input sequences: pass --input or --text"));
    }
    Ok(out)
}

fn separators(s: Separators) -> SeparatorClass {
    match s {
        Separators::SpaceNewline => SeparatorClass::SpaceNewline,
        Separators::AsciiWhitespace => SeparatorClass::AsciiWhitespace,
    }
}

/// The fixed block length, or the longest default token over all `texts`.
fn block_len<T: AsRef<[u8]>>(spec: &TokenizerSpec, seg: &SegmentArgs, texts: &[T]) -> Result<usize> {
    Ok(match seg.max_block_len {
        Some(l) => l.max(1),
        None => recommend_block_len(spec, texts)?,
    })
}

fn estimator_config(seg: &SegmentArgs, s: &SamplingArgs, max_block_len: usize) -> Result<EstimatorConfig> {
    if s.k == 0 || s.m == 0 {
        return Err(usage("--k and --m must be at least 1"));
    }
    if !(s.level > 0.0 && s.level < 1.0) {
        return Err(usage("--level must lie in (0, 1)"));
    }
    Ok(EstimatorConfig {
        samples: s.k,
        max_candidates: s.m,
        block_len: BlockLen::Fixed(max_block_len),
        separators: separators(seg.separators),
        seed: s.seed,
        bootstrap: BootstrapConfig {
            method: match s.bootstrap {
                Bootstrap::Percentile => BootstrapMethod::Percentile,
                Bootstrap::Bca => BootstrapMethod::Bca,
            },
            resamples: s.resamples,
            level: s.level,
        },
        char_unit: match s.char_unit {
            CharUnitArg::Chars => CharUnit::Chars,
            CharUnitArg::Bytes => CharUnit::Bytes,
        },
    })
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn write_jsonl<T: Serialize>(out: &mut dyn Write, rows: &[T]) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut *out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let spec = load_tokenizer(&args.tokenizer, None)?;
    let mut docs = Vec::new();
    for path in &args.documents {
        docs.extend(read_documents(path)?);
    }
    let seqs = build_sequences(&spec, &docs, args.target_len)?;
    write_jsonl(&mut *writer(args.output.as_deref())?, &seqs)
}

#[derive(Serialize)]
struct SampleRow<'a> {
    id: &'a str,
    k: usize,
    token_ids: &'a [u32],
    log_p_joint: f64,
    log_q: f64,
}

pub fn estimate(args: EstimateArgs) -> Result<()> {
    let (spec, backend) = load(&args.tokenizer, &args.backend)?;
    let seqs = load_sequences(&args.input.input, &args.input.texts)?;
    let texts: Vec<&str> = seqs.iter().map(|(_, t)| t.as_str()).collect();
    let config = estimator_config(&args.segment, &args.sampling, block_len(&spec, &args.segment, &texts)?)?;
    let model = backend.as_dyn().model_name();
    let results = pool(args.sampling.threads)?.install(|| {
        seqs.par_iter()
            .enumerate()
            .map(|(i, (id, text))| {
                run_estimate(&spec, backend.as_dyn(), text.as_bytes(), &config, i as u64)
                    .with_context(|| format!("sequence {id}"))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let records: Vec<EstimateRecord> = seqs
        .iter()
        .zip(&results)
        .map(|((id, _), r)| EstimateRecord {
            id: id.clone(),
            seed: config.seed,
            model: model.clone(),
            estimate: r.estimate.clone(),
        })
        .collect();
    write_jsonl(&mut *writer(args.output.as_deref())?, &records)?;
    if let Some(path) = &args.samples_out {
        let rows: Vec<SampleRow> = seqs
            .iter()
            .zip(&results)
            .flat_map(|((id, _), r)| {
                r.samples.iter().enumerate().map(move |(k, s)| SampleRow {
                    id,
                    k,
                    token_ids: &s.token_ids,
                    log_p_joint: s.log_p_joint,
                    log_q: s.log_q,
                })
            })
            .collect();
        write_jsonl(&mut *writer(Some(path))?, &rows)?;
    }
    if let Backend::Remote(r) = &backend {
        if r.truncations() > 0 {
            eprintln!("note: {} requests had their prefix truncated to the model context", r.truncations());
        }
    }
    Ok(())
}

fn read_estimates(paths: &[PathBuf]) -> Result<Vec<EstimateRecord>> {
    let mut out = Vec::new();
    for path in paths {
        let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if !line.trim().is_empty() {
                let rec: EstimateRecord = serde_json::from_str(&line)
                    .map_err(tokmarg::Error::from)
                    .with_context(|| format!("{}:{}", path.display(), n + 1))?;
                out.push(rec);
            }
        }
    }
    Ok(out)
}

pub fn report(args: ReportArgs) -> Result<()> {
    let records = read_estimates(&args.estimates)?;
    let report = dataset_report(&records)?;
    let mut table = writer(args.table.as_deref())?;
    table.write_all(report.table_csv(&args.dataset).as_bytes())?;
    table.flush()?;
    if let Some(path) = &args.scatter {
        let mut out = writer(Some(path))?;
        out.write_all(report.scatter_csv().as_bytes())?;
        out.flush()?;
    }
    if let Some(path) = &args.json {
        let mut out = writer(Some(path))?;
        serde_json::to_writer_pretty(&mut out, &report)?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}

pub fn validate(args: ValidateArgs) -> Result<()> {
    let (spec, backend) = load(&args.tokenizer, &args.backend)?;
    let seqs = load_sequences(&args.input, &args.sentences)?;
    let texts: Vec<&str> = seqs.iter().map(|(_, t)| t.as_str()).collect();
    let config = estimator_config(&args.segment, &args.sampling, block_len(&spec, &args.segment, &texts)?)?;
    let rows = pool(args.sampling.threads)?.install(|| {
        seqs.par_iter()
            .enumerate()
            .map(|(i, (id, text))| -> Result<ValidationRow> {
                let s = text.as_bytes();
                let est = run_estimate(&spec, backend.as_dyn(), s, &config, i as u64)
                    .with_context(|| format!("sequence {id}"))?;
                let exact = match &backend {
                    Backend::NGram(lm) => exact_marginal_lattice(&spec, lm, s)?,
                    _ => exact_marginal_enumerate(&spec, backend.as_dyn(), s, args.cap)?.log_prob,
                };
                Ok(ValidationRow::new(text.clone(), &est.estimate, exact))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = writer(None)?;
    match args.format {
        Format::Jsonl => write_jsonl(&mut *out, &rows),
        Format::Table => {
            let width = rows.iter().map(|r| r.text.chars().count()).max().unwrap_or(0).clamp(8, 40);
            writeln!(
                out,
                "{:<width$}  {:>12}  {:>12}  {:>12}  {:>12}",
                "text", "df - is", "is - m", "ci_lo - m", "ci_hi - m"
            )?;
            for r in &rows {
                let text: String = r.text.chars().take(width).collect();
                writeln!(
                    out,
                    "{:<width$}  {:>12.3e}  {:>12.3e}  {:>12.3e}  {:>12.3e}",
                    text, r.df_minus_is, r.is_minus_m, r.ci_low_minus_m, r.ci_high_minus_m
                )?;
            }
            out.flush()?;
            Ok(())
        }
    }
}

pub fn bin_blocks(args: BinBlocksArgs) -> Result<()> {
    let (spec, backend) = load(&args.tokenizer, &args.backend)?;
    let seqs = load_sequences(&args.input.input, &args.input.texts)?;
    let texts: Vec<&[u8]> = seqs.iter().map(|(_, t)| t.as_bytes()).collect();
    let segmenter = SegmenterConfig {
        max_block_len: block_len(&spec, &args.segment, &texts)?,
        separators: separators(args.segment.separators) };
    let bins = bins_from_cuts(&args.bins).map_err(|e| usage(e.to_string()))?;
    let report = pool(args.threads)?.install(|| {
        bin_blocks_by_q_default(&spec, backend.as_dyn(), &texts, &segmenter, args.m, &bins, args.examples)
    })?;
    let mut out = writer(None)?;
    match args.format {
        Format::Jsonl => write_jsonl(&mut *out, std::slice::from_ref(&report)),
        Format::Table => {
            out.write_all(report.to_csv().as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn freq_report(args: FreqReportArgs) -> Result<()> {
    let (spec, backend) = load(&args.tokenizer, &args.backend)?;
    let seqs = load_sequences(&args.input.input, &args.input.texts)?;
    let texts: Vec<&str> = seqs.iter().map(|(_, t)| t.as_str()).collect();
    let config = estimator_config(&args.segment, &args.sampling, block_len(&spec, &args.segment, &texts)?)?;
    let mut reference = Vec::new();
    for path in &args.reference {
        reference.extend(read_documents(path)?);
    }
    if reference.is_empty() {
        reference = seqs.iter().map(|(_, t)| t.clone()).collect();
    }
    let table = BlockFrequencyTable::from_texts(&reference, config.separators);
    let estimations = pool(args.sampling.threads)?.install(|| {
        seqs.par_iter()
            .enumerate()
            .map(|(i, (_, text))| run_estimate(&spec, backend.as_dyn(), text.as_bytes(), &config, i as u64))
            .collect::<tokmarg::Result<Vec<_>>>()
    })?;
    let samples: Vec<_> = estimations.iter().flat_map(|e| sampled_blocks(e, config.separators)).collect();
    let report = length_by_frequency_report(&samples, &table, args.threshold);
    let mut out = writer(None)?;
    match args.format {
        Format::Jsonl => write_jsonl(&mut *out, std::slice::from_ref(&report)),
        Format::Table => {
            out.write_all(report.to_csv().as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct CandidateRow {
    rank: usize,
    ids: Vec<u32>,
    tokens: Vec<String>,
    is_default: bool,
    log_score: f64,
}

#[derive(Serialize)]
struct EnumerateOutput {
    span: String,
    total: String,
    truncated: bool,
    candidates: Vec<CandidateRow>,
}

pub fn enumerate(args: EnumerateArgs) -> Result<()> {
    let (spec, backend) = load(&args.tokenizer, &args.backend)?;
    let span = args.span.as_bytes();
    let set = spec.enumerate_tokenizations(span, args.m)?;
    let default = spec.default_tokenize(span)?;
    let cands: Vec<Vec<u32>> = set.candidates.iter().map(|t| t.0.clone()).collect();
    let scores = backend.as_dyn().score_continuations(&[], &cands)?;
    let candidates = cands
        .into_iter()
        .zip(scores)
        .enumerate()
        .map(|(rank, (ids, log_score))| CandidateRow {
            rank,
            tokens: ids
                .iter()
                .map(|&id| String::from_utf8_lossy(spec.token_bytes(id).unwrap_or_default()).into_owned())
                .collect(),
            is_default: ids == default.0,
            ids,
            log_score,
        })
        .collect();
    let output = EnumerateOutput { span: args.span.clone(), total: set.total.to_string(), truncated: set.truncated, candidates };
    let mut out = writer(None)?;
    serde_json::to_writer_pretty(&mut out, &output)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn train(args: TrainNgramArgs) -> Result<()> {
    let spec = load_tokenizer(&args.tokenizer, None)?;
    let mut corpus = Vec::new();
    for path in &args.documents {
        for doc in read_documents(path)? {
            corpus.push(spec.default_tokenize(doc.as_bytes())?.0);
        }
    }
    let vocab_size = args.vocab_size.unwrap_or(spec.vocab_size());
    let lm = train_ngram(&corpus, args.order, args.alpha, vocab_size)?;
    lm.save(&args.output)?;
    Ok(())
}
