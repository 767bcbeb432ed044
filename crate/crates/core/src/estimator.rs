//! Importance-sampling estimate of `ln P(S)` and the bits-per-character report.
//!
//! With `K` draws `T_k ~ Q(T | S)`:
//!
//! ```text
//! P(S) ~= (1 / K) * sum_k P(T_k, S) / Q(T_k | S)
//! ```
//!
//! evaluated in log space as `logsumexp(log_ratios) - ln K`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::lm::ScoringBackend;
use crate::math::{bits_per_char, logsumexp, quantile_sorted};
use crate::rng::{stream_rng, BOOTSTRAP_STREAM};
use crate::sampler::{Proposal, TokenizationSample};
use crate::segmenter::{recommend_block_len, split_in_blocks_with, Block, BlockKind, SegmenterConfig, SeparatorClass};
use crate::tokenizer::TokenizerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapMethod {
    #[default]
    Percentile,
    Bca,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub method: BootstrapMethod,
    pub resamples: usize,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { method: BootstrapMethod::Percentile, resamples: 1000, level: 0.9 }
    }
}

/// What `|S|` counts in bits per character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharUnit {
    /// Unicode scalar values.
    #[default]
    Chars,
    Bytes,
}

impl CharUnit {
    pub fn count(self, s: &[u8]) -> usize {
        match self {
            CharUnit::Chars => String::from_utf8_lossy(s).chars().count(),
            CharUnit::Bytes => s.len(),
        }
    }
}

/// Maximum block length: fixed, or the longest default token of the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockLen {
    Fixed(usize),
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// `K`, draws per sequence.
    pub samples: usize,
    /// `M`, candidates scored per block.
    pub max_candidates: usize,
    pub block_len: BlockLen,
    pub separators: SeparatorClass,
    pub seed: u64,
    pub bootstrap: BootstrapConfig,
    pub char_unit: CharUnit,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            samples: 30,
            max_candidates: 128,
            block_len: BlockLen::Auto,
            separators: SeparatorClass::default(),
            seed: 0,
            bootstrap: BootstrapConfig::default(),
            char_unit: CharUnit::default(),
        }
    }
}

/// Per-sequence estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEstimate {
    pub k: usize,
    pub max_candidates: usize,
    pub max_block_len: usize,
    pub char_count: usize,
    pub num_blocks: usize,
    pub t1_blocks: usize,
    pub t2_blocks: usize,
    pub truncated_blocks: usize,
    /// `ln P(T_k, S) - ln Q(T_k | S)` for every draw.
    pub log_ratios: Vec<f64>,
    pub log_p_default: f64,
    pub log_p_marginal_hat: f64,
    pub bpc_df: f64,
    pub bpc_is: f64,
    pub bpc_gap: f64,
    pub rel_gap: f64,
    /// Fraction of (draw, block) pairs that did not pick the block default.
    pub pct_nd: f64,
    pub non_default_draws: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_level: f64,
}

/// An estimate together with the blocks and draws behind it.
#[derive(Debug, Clone)]
pub struct Estimation {
    pub estimate: MarginalEstimate,
    pub blocks: Vec<Block>,
    pub samples: Vec<TokenizationSample>,
}

/// Estimates `ln P(S)` by importance sampling; see [`run_estimate`].
pub fn estimate_marginal<B: ScoringBackend + ?Sized>(
    spec: &TokenizerSpec,
    backend: &B,
    s: &[u8],
    config: &EstimatorConfig,
    sequence: u64,
) -> Result<MarginalEstimate> {
    run_estimate(spec, backend, s, config, sequence).map(|e| e.estimate)
}

/// Runs the full estimator on one sequence.
///
/// Draw `k` of sequence `sequence` uses the random stream `(seed, sequence, k)`,
/// so results do not depend on thread scheduling.
pub fn run_estimate<B: ScoringBackend + ?Sized>(
    spec: &TokenizerSpec,
    backend: &B,
    s: &[u8],
    config: &EstimatorConfig,
    sequence: u64,
) -> Result<Estimation> {
    if config.samples == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if s.is_empty() {
        return Err(Error::InvalidArgument("cannot score an empty sequence".into()));
    }
    let char_count = config.char_unit.count(s);

    let max_block_len = match config.block_len {
        BlockLen::Fixed(l) => l.max(1),
        BlockLen::Auto => recommend_block_len(spec, &[s])?,
    };
    let segmenter = SegmenterConfig { max_block_len, separators: config.separators };
    let blocks = split_in_blocks_with(spec, s, &segmenter)?;

    let default = spec.default_tokenize(s)?;
    let log_p_default = backend.score_sequence(default.ids())?;

    let proposal = Proposal::new(spec, blocks.clone(), config.max_candidates)?;
    let samples: Vec<TokenizationSample> = (0..config.samples as u64)
        .into_par_iter()
        .map(|k| proposal.sample(backend, &mut stream_rng(config.seed, sequence, k)))
        .collect::<Result<_>>()?;

    let log_ratios: Vec<f64> = samples.iter().map(TokenizationSample::log_ratio).collect();
    let log_p_marginal_hat = log_mean_exp(&log_ratios);
    let bpc_df = bits_per_char(log_p_default, char_count);
    let bpc_is = bits_per_char(log_p_marginal_hat, char_count);
    let bpc_gap = bpc_df - bpc_is;
    let rel_gap = if bpc_df != 0.0 { bpc_gap / bpc_df } else { 0.0 };

    let non_default_draws: usize = samples.iter().map(TokenizationSample::non_default_count).sum();
    let draws = samples.len() * blocks.len();
    let pct_nd = if draws > 0 { non_default_draws as f64 / draws as f64 } else { 0.0 };

    let mut boot_rng = stream_rng(config.seed, sequence, BOOTSTRAP_STREAM);
    let [ci_low, ci_high] = bootstrap_ci(
        &log_ratios,
        char_count,
        config.bootstrap.resamples,
        config.bootstrap.level,
        config.bootstrap.method,
        &mut boot_rng,
    );

    let count_kind = |k: BlockKind| blocks.iter().filter(|b| b.kind == k).count();
    let estimate = MarginalEstimate {
        k: config.samples,
        max_candidates: config.max_candidates,
        max_block_len,
        char_count,
        num_blocks: blocks.len(),
        t1_blocks: count_kind(BlockKind::T1),
        t2_blocks: count_kind(BlockKind::T2),
        truncated_blocks: proposal.blocks().iter().filter(|b| b.truncated).count(),
        log_ratios,
        log_p_default,
        log_p_marginal_hat,
        bpc_df,
        bpc_is,
        bpc_gap,
        rel_gap,
        pct_nd,
        non_default_draws,
        ci_low,
        ci_high,
        ci_level: config.bootstrap.level,
    };
    Ok(Estimation { estimate, blocks, samples })
}

/// `ln(mean(exp(xs)))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    logsumexp(xs) - (xs.len() as f64).ln()
}

/// Bootstrap confidence interval for `BPC_is`, returned as `[low, high]`.
///
/// Resamples the log ratios with replacement `n_resamples` times. With all
/// ratios equal (or a single ratio) the interval collapses onto the point
/// estimate.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    log_ratios: &[f64],
    char_count: usize,
    n_resamples: usize,
    level: f64,
    method: BootstrapMethod,
    rng: &mut R,
) -> [f64; 2] {
    let point = bits_per_char(log_mean_exp(log_ratios), char_count);
    let k = log_ratios.len();
    if k < 2 || n_resamples == 0 || log_ratios.iter().all(|&r| r == log_ratios[0]) {
        return [point, point];
    }

    let stat = |xs: &[f64]| bits_per_char(log_mean_exp(xs), char_count);
    let mut resample = vec![0.0; k];
    let mut replicates: Vec<f64> = (0..n_resamples)
        .map(|_| {
            for slot in resample.iter_mut() {
                *slot = log_ratios[rng.random_range(0..k)];
            }
            stat(&resample)
        })
        .collect();
    replicates.sort_by(f64::total_cmp);

    let alpha = (1.0 - level) / 2.0;
    let (q_low, q_high) = match method {
        BootstrapMethod::Percentile => (alpha, 1.0 - alpha),
        BootstrapMethod::Bca => bca_levels(log_ratios, &replicates, point, alpha, stat).unwrap_or((alpha, 1.0 - alpha)),
    };
    let low = quantile_sorted(&replicates, q_low);
    let high = quantile_sorted(&replicates, q_high);
    [low.min(high), low.max(high)]
}

/// Convenience wrapper seeding a dedicated generator.
pub fn bootstrap_ci_seeded(
    log_ratios: &[f64],
    char_count: usize,
    n_resamples: usize,
    level: f64,
    method: BootstrapMethod,
    seed: u64,
) -> [f64; 2] {
    let mut rng = stream_rng(seed, 0, BOOTSTRAP_STREAM);
    bootstrap_ci(log_ratios, char_count, n_resamples, level, method, &mut rng)
}

/// Bias-corrected and accelerated quantile levels; `None` when the bias
/// correction is undefined (the point estimate lies outside the replicates).
fn bca_levels(
    data: &[f64],
    sorted_replicates: &[f64],
    point: f64,
    alpha: f64,
    stat: impl Fn(&[f64]) -> f64,
) -> Option<(f64, f64)> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let n = sorted_replicates.len() as f64;
    let below = sorted_replicates.iter().filter(|&&x| x < point).count() as f64;
    let at_or_below = sorted_replicates.iter().filter(|&&x| x <= point).count() as f64;
    let prop = (below + at_or_below) / (2.0 * n);
    if prop <= 0.0 || prop >= 1.0 {
        return None;
    }
    let z0 = normal.inverse_cdf(prop);

    // Jackknife acceleration.
    let mut leave_one_out = Vec::with_capacity(data.len() - 1);
    let jack: Vec<f64> = (0..data.len())
        .map(|i| {
            leave_one_out.clear();
            leave_one_out.extend(data.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x));
            stat(&leave_one_out)
        })
        .collect();
    let mean = jack.iter().sum::<f64>() / jack.len() as f64;
    let num: f64 = jack.iter().map(|&t| (mean - t).powi(3)).sum();
    let den: f64 = 6.0 * jack.iter().map(|&t| (mean - t).powi(2)).sum::<f64>().powf(1.5);
    let accel = if den > 0.0 { num / den } else { 0.0 };

    let adjust = |z: f64| {
        let shifted = z0 + z;
        normal.cdf(z0 + shifted / (1.0 - accel * shifted))
    };
    let lo = adjust(normal.inverse_cdf(alpha));
    let hi = adjust(normal.inverse_cdf(1.0 - alpha));
    (lo.is_finite() && hi.is_finite()).then_some((lo, hi))
}

/// A per-sequence output record (one JSON Lines row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub id: String,
    pub seed: u64,
    pub model: String,
    #[serde(flatten)]
    pub estimate: MarginalEstimate,
}
