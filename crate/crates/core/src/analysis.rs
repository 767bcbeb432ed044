//! Dataset-level reports: aggregate bits per character, binning of blocks by
//! the proposal probability of their default tokenization, and the length of
//! sampled tokenizations split by block frequency.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimateRecord, Estimation};
use crate::lm::ScoringBackend;
use crate::math::logsumexp;
use crate::segmenter::{split_in_blocks_with, SegmenterConfig, SeparatorClass};
use crate::tokenizer::TokenizerSpec;

/// A bin `(lo, hi]` of `Q(default)`; a bin with `lo == 0` also takes `0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QBin {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
}

impl QBin {
    pub fn new(label: impl Into<String>, lo: f64, hi: f64) -> Self {
        QBin { label: label.into(), lo, hi }
    }

    pub fn contains(&self, q: f64) -> bool {
        (q > self.lo || (self.lo == 0.0 && q == 0.0)) && q <= self.hi
    }
}

/// `>0.999`, `0.99-0.999`, `0.9-0.99`, `0.5-0.9`, `0-0.5`.
pub fn default_bins() -> Vec<QBin> {
    vec![
        QBin::new(">0.999", 0.999, 1.0),
        QBin::new("0.99-0.999", 0.99, 0.999),
        QBin::new("0.9-0.99", 0.9, 0.99),
        QBin::new("0.5-0.9", 0.5, 0.9),
        QBin::new("0-0.5", 0.0, 0.5),
    ]
}

/// Parses comma-separated descending cut points such as `0.999,0.99,0.9,0.5`
/// into bins covering `[0, 1]`.
pub fn bins_from_cuts(cuts: &[f64]) -> Result<Vec<QBin>> {
    let mut edges = vec![1.0];
    edges.extend_from_slice(cuts);
    edges.push(0.0);
    if edges.windows(2).any(|w| !(w[0] > w[1])) || cuts.iter().any(|c| !(0.0..1.0).contains(c) || *c == 0.0) {
        return Err(Error::InvalidArgument("bin cut points must be strictly decreasing inside (0, 1)".into()));
    }
    Ok(edges
        .windows(2)
        .map(|w| {
            let label = if w[0] == 1.0 { format!(">{}", w[1]) } else { format!("{}-{}", w[1], w[0]) };
            QBin::new(label, w[1], w[0])
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub freq: f64,
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub total_blocks: usize,
    pub bins: Vec<BinRow>,
}

impl BinReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lo,hi,count,freq,examples\n");
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&b.label),
                b.lo,
                b.hi,
                b.count,
                b.freq,
                csv_field(&b.examples.join(" | "))
            );
        }
        out
    }
}

/// Per-block `Q(default)` given the default tokenization of everything before it.
pub fn q_default_per_block<B: ScoringBackend + ?Sized>(
    spec: &TokenizerSpec,
    backend: &B,
    s: &[u8],
    segmenter: &SegmenterConfig,
    max_candidates: usize,
) -> Result<Vec<(String, f64)>> {
    let blocks = split_in_blocks_with(spec, s, segmenter)?;
    let mut prefix = Vec::new();
    let mut out = Vec::with_capacity(blocks.len());
    for block in &blocks {
        let set = spec.enumerate_tokenizations(&block.bytes, max_candidates)?;
        let cands: Vec<Vec<u32>> = set.candidates.iter().map(|t| t.0.clone()).collect();
        let scores = backend.score_continuations(&prefix, &cands)?;
        let norm = logsumexp(&scores);
        let q = set.position(&block.default).map_or(0.0, |r| (scores[r] - norm).exp());
        out.push((block_key(&block.bytes, segmenter.separators), q));
        prefix.extend_from_slice(block.default.ids());
    }
    Ok(out)
}

/// Tallies block occurrences over `sequences` into `bins`, keeping up to
/// `examples_per_bin` distinct example blocks per bin.
pub fn bin_blocks_by_q_default<B, T>(
    spec: &TokenizerSpec,
    backend: &B,
    sequences: &[T],
    segmenter: &SegmenterConfig,
    max_candidates: usize,
    bins: &[QBin],
    examples_per_bin: usize,
) -> Result<BinReport>
where
    B: ScoringBackend + ?Sized,
    T: AsRef<[u8]> + Sync,
{
    let per_sequence: Vec<Vec<(String, f64)>> = sequences
        .par_iter()
        .map(|s| q_default_per_block(spec, backend, s.as_ref(), segmenter, max_candidates))
        .collect::<Result<_>>()?;

    let mut rows: Vec<BinRow> = bins
        .iter()
        .map(|b| BinRow { label: b.label.clone(), lo: b.lo, hi: b.hi, count: 0, freq: 0.0, examples: Vec::new() })
        .collect();
    let mut total = 0;
    for (text, q) in per_sequence.into_iter().flatten() {
        let Some(row) = bins.iter().position(|b| b.contains(q)).map(|i| &mut rows[i]) else {
            return Err(Error::InvalidArgument(format!("Q(default) = {q} falls outside every bin")));
        };
        row.count += 1;
        total += 1;
        if row.examples.len() < examples_per_bin && !text.is_empty() && !row.examples.contains(&text) {
            row.examples.push(text);
        }
    }
    for row in &mut rows {
        row.freq = if total > 0 { row.count as f64 / total as f64 } else { 0.0 };
    }
    Ok(BinReport { total_blocks: total, bins: rows })
}

/// A block text with its separator prefix removed.
pub fn block_key(bytes: &[u8], separators: SeparatorClass) -> String {
    let start = bytes.iter().position(|&b| !separators.is_separator(b)).unwrap_or(bytes.len());
    String::from_utf8_lossy(&bytes[start..]).into_owned()
}

/// One sampled block occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledBlock {
    pub text: String,
    pub is_default: bool,
    pub num_tokens: usize,
}

/// Flattens every (draw, block) pair of an estimation.
pub fn sampled_blocks(estimation: &Estimation, separators: SeparatorClass) -> Vec<SampledBlock> {
    let keys: Vec<String> = estimation.blocks.iter().map(|b| block_key(&b.bytes, separators)).collect();
    estimation
        .samples
        .iter()
        .flat_map(|s| s.blocks.iter())
        .map(|d| SampledBlock { text: keys[d.block].clone(), is_default: d.is_default, num_tokens: d.num_tokens })
        .collect()
}

/// Relative frequency of every word in a reference corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockFrequencyTable {
    pub total: usize,
    pub counts: HashMap<String, usize>,
}

impl BlockFrequencyTable {
    pub fn from_texts<T: AsRef<[u8]>>(texts: &[T], separators: SeparatorClass) -> Self {
        let mut table = BlockFrequencyTable::default();
        for text in texts {
            for word in text.as_ref().split(|&b| separators.is_separator(b)).filter(|w| !w.is_empty()) {
                *table.counts.entry(String::from_utf8_lossy(word).into_owned()).or_default() += 1;
                table.total += 1;
            }
        }
        table
    }

    pub fn frequency(&self, key: &str) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.get(key).copied().unwrap_or(0) as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyColumn {
    pub label: String,
    pub blocks: usize,
    /// Share of all sampled blocks falling in this column.
    pub share: f64,
    pub default: f64,
    pub non_default: f64,
    pub len1: f64,
    pub len2: f64,
    pub len3_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub threshold: f64,
    pub columns: Vec<FrequencyColumn>,
}

impl FrequencyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for c in &self.columns {
            out.push(',');
            out.push_str(&csv_field(&c.label));
        }
        out.push('\n');
        let rows: [(&str, fn(&FrequencyColumn) -> f64); 6] = [
            ("such blocks", |c| c.share),
            ("sampled default", |c| c.default),
            ("sampled non-default", |c| c.non_default),
            ("sampled length 1", |c| c.len1),
            ("sampled length 2", |c| c.len2),
            ("sampled length >=3", |c| c.len3_plus),
        ];
        for (name, get) in rows {
            out.push_str(name);
            for c in &self.columns {
                let _ = write!(out, ",{}", get(c));
            }
            out.push('\n');
        }
        out
    }
}

/// Splits sampled blocks at `threshold` corpus frequency and reports, per
/// side, how often the default was drawn and how many tokens were drawn.
/// Sides without any block are omitted.
pub fn length_by_frequency_report(
    samples: &[SampledBlock],
    table: &BlockFrequencyTable,
    threshold: f64,
) -> FrequencyReport {
    let mut sides = [(format!(">={threshold}"), Vec::new()), (format!("<{threshold}"), Vec::new())];
    for s in samples {
        let side = usize::from(table.frequency(&s.text) < threshold);
        sides[side].1.push(s);
    }
    let total = samples.len();
    let columns = sides
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(label, v)| {
            let n = v.len() as f64;
            let frac = |pred: &dyn Fn(&SampledBlock) -> bool| v.iter().filter(|s| pred(s)).count() as f64 / n;
            let default = frac(&|s| s.is_default);
            let len1 = frac(&|s| s.num_tokens == 1);
            let len2 = frac(&|s| s.num_tokens == 2);
            FrequencyColumn {
                label,
                blocks: v.len(),
                share: n / total as f64,
                default,
                non_default: 1.0 - default,
                len1,
                len2,
                len3_plus: 1.0 - len1 - len2,
            }
        })
        .collect();
    FrequencyReport { threshold, columns }
}

/// Dataset-level aggregate over per-sequence estimates.
///
/// Bits per character are total bits over total characters, not a mean of
/// per-sequence values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub sequences: usize,
    pub total_chars: usize,
    pub bpc_df: f64,
    pub bpc_is: f64,
    pub bpc_gap: f64,
    pub rel_gap: f64,
    pub pct_nd: f64,
    /// Sequences whose `BPC_is < BPC_df`.
    pub frac_is_below_df: f64,
    pub scatter: Vec<ScatterPoint>,
}

/// A confidence-interval scatter point: `x` is the left end of the interval
/// on the BPC gap, `y` the interval width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub id: String,
    pub gap_ci_left: f64,
    pub ci_width: f64,
    pub bpc_gap: f64,
}

fn sorted_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.into_iter().sum()
}

pub fn dataset_report(records: &[EstimateRecord]) -> Result<DatasetReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no estimates to report".into()));
    }
    let total_chars: usize = records.iter().map(|r| r.estimate.char_count).sum();
    let bits_df = sorted_sum(records.iter().map(|r| -r.estimate.log_p_default / LN_2).collect());
    let bits_is = sorted_sum(records.iter().map(|r| -r.estimate.log_p_marginal_hat / LN_2).collect());
    let bpc_df = bits_df / total_chars as f64;
    let bpc_is = bits_is / total_chars as f64;
    let bpc_gap = bpc_df - bpc_is;
    let nd: usize = records.iter().map(|r| r.estimate.non_default_draws).sum();
    let draws: usize = records.iter().map(|r| r.estimate.k * r.estimate.num_blocks).sum();
    let below = records.iter().filter(|r| r.estimate.bpc_is < r.estimate.bpc_df).count();

    let mut scatter: Vec<ScatterPoint> = records
        .iter()
        .map(|r| ScatterPoint {
            id: r.id.clone(),
            gap_ci_left: r.estimate.bpc_df - r.estimate.ci_high,
            ci_width: r.estimate.ci_high - r.estimate.ci_low,
            bpc_gap: r.estimate.bpc_gap,
        })
        .collect();
    scatter.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(DatasetReport {
        sequences: records.len(),
        total_chars,
        bpc_df,
        bpc_is,
        bpc_gap,
        rel_gap: if bpc_df != 0.0 { bpc_gap / bpc_df } else { 0.0 },
        pct_nd: if draws > 0 { nd as f64 / draws as f64 } else { 0.0 },
        frac_is_below_df: below as f64 / records.len() as f64,
        scatter,
    })
}

impl DatasetReport {
    /// The five headline columns, one row.
    pub fn table_csv(&self, dataset: &str) -> String {
        format!(
            "dataset,sequences,chars,bpc_df,bpc_is,bpc_gap,rel_gap_pct,pct_nd\n{},{},{},{:.4},{:.4},{:.4},{:.2},{:.1}\n",
            csv_field(dataset),
            self.sequences,
            self.total_chars,
            self.bpc_df,
            self.bpc_is,
            self.bpc_gap,
            100.0 * self.rel_gap,
            100.0 * self.pct_nd
        )
    }

    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("id,gap_ci_left,ci_width,bpc_gap\n");
        for p in &self.scatter {
            let _ = writeln!(out, "{},{},{},{}", csv_field(&p.id), p.gap_ci_left, p.ci_width, p.bpc_gap);
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::MarginalEstimate;
    use crate::lm::UniformLm;

    #[test]
    fn default_bins_partition_unit_interval() {
        let bins = default_bins();
        for q in [0.0, 0.1, 0.5, 0.50001, 0.9, 0.95, 0.99, 0.995, 0.999, 0.9995, 1.0] {
            assert_eq!(bins.iter().filter(|b| b.contains(q)).count(), 1, "q = {q}");
        }
        assert_eq!(bins_from_cuts(&[0.999, 0.99, 0.9, 0.5]).unwrap(), bins);
        assert!(bins_from_cuts(&[0.5, 0.9]).is_err());
    }

    #[test]
    fn single_byte_vocab_lands_in_top_bin() {
        let spec = TokenizerSpec::single_bytes();
        let lm = UniformLm::new(256);
        let seqs = ["the cat sat on the mat", "hello world"];
        let report =
            bin_blocks_by_q_default(&spec, &lm, &seqs, &SegmenterConfig::new(8), 128, &default_bins(), 3).unwrap();
        assert_eq!(report.total_blocks, 8);
        assert_eq!(report.bins[0].count, 8);
        assert_eq!(report.bins[0].freq, 1.0);
        assert_eq!(report.bins[0].examples, vec!["the", "cat", "sat"]);
    }

    fn sb(text: &str, is_default: bool, num_tokens: usize) -> SampledBlock {
        SampledBlock { text: text.into(), is_default, num_tokens }
    }

    #[test]
    fn frequency_report_constructed_split() {
        // "common" is 3/4 of the corpus, "rare" 1/4.
        let table = BlockFrequencyTable::from_texts(&["common common rare common"], SeparatorClass::default());
        let samples = vec![
            sb("common", true, 1),
            sb("common", true, 1),
            sb("common", false, 2),
            sb("rare", true, 3),
            sb("rare", false, 2),
        ];
        let report = length_by_frequency_report(&samples, &table, 0.5);
        assert_eq!(report.columns.len(), 2);
        let (hi, lo) = (&report.columns[0], &report.columns[1]);
        assert_eq!(hi.share, 0.6);
        assert_eq!(lo.share, 0.4);
        assert!((hi.default - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(lo.default, 0.5);
        assert!((hi.len1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(lo.len3_plus, 0.5);
        for c in &report.columns {
            assert!((c.default + c.non_default - 1.0).abs() < 1e-9);
            assert!((c.len1 + c.len2 + c.len3_plus - 1.0).abs() < 1e-9);
        }
        assert!(report.to_csv().starts_with("row,>=0.5,<0.5\n"));
    }

    #[test]
    fn frequency_report_single_column() {
        let table = BlockFrequencyTable::from_texts(&["a b"], SeparatorClass::default());
        let report = length_by_frequency_report(&[sb("a", true, 1), sb("b", true, 1)], &table, 1e-4);
        assert_eq!(report.columns.len(), 1);
        assert_eq!(report.columns[0].share, 1.0);
    }

    fn record(id: &str, log_p_default: f64, log_p_hat: f64, chars: usize) -> EstimateRecord {
        let bpc_df = -log_p_default / LN_2 / chars as f64;
        let bpc_is = -log_p_hat / LN_2 / chars as f64;
        EstimateRecord {
            id: id.into(),
            seed: 0,
            model: "m".into(),
            estimate: MarginalEstimate {
                k: 2,
                max_candidates: 4,
                max_block_len: 5,
                char_count: chars,
                num_blocks: 3,
                t1_blocks: 0,
                t2_blocks: 0,
                truncated_blocks: 0,
                log_ratios: vec![log_p_hat, log_p_hat],
                log_p_default,
                log_p_marginal_hat: log_p_hat,
                bpc_df,
                bpc_is,
                bpc_gap: bpc_df - bpc_is,
                rel_gap: (bpc_df - bpc_is) / bpc_df,
                pct_nd: 1.0 / 6.0,
                non_default_draws: 1,
                ci_low: bpc_is - 0.01,
                ci_high: bpc_is + 0.01,
                ci_level: 0.9,
            },
        }
    }

    #[test]
    fn dataset_report_aggregates() {
        let a = record("a", -20.0, -19.0, 10);
        let single = dataset_report(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.bpc_df, a.estimate.bpc_df);
        assert_eq!(single.bpc_is, a.estimate.bpc_is);
        assert_eq!(single.pct_nd, a.estimate.pct_nd);

        let doubled = dataset_report(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(doubled.bpc_df, single.bpc_df);
        assert_eq!(doubled.bpc_is, single.bpc_is);
        assert_eq!(doubled.rel_gap, single.rel_gap);
        assert_eq!(doubled.pct_nd, single.pct_nd);

        let b = record("b", -33.3, -33.0, 17);
        let c = record("c", -5.1, -5.2, 3);
        let one = dataset_report(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let two = dataset_report(&[c, a, b]).unwrap();
        assert_eq!(one, two);
        assert_eq!(one.total_chars, 30);
        assert!((one.bpc_df - (20.0 + 33.3 + 5.1) / LN_2 / 30.0).abs() < 1e-12);
        assert_eq!(one.frac_is_below_df, 2.0 / 3.0);
        assert!(dataset_report(&[]).is_err());
    }

    #[test]
    fn csv_outputs() {
        let r = dataset_report(&[record("x,y", -20.0, -19.0, 10)]).unwrap();
        let table = r.table_csv("wiki");
        assert!(table.starts_with("dataset,sequences,chars,bpc_df,bpc_is,bpc_gap,rel_gap_pct,pct_nd\nwiki,1,10,"));
        assert!(r.scatter_csv().contains("\"x,y\","));
    }
}
