//! Complexity, memorization and Gambler's-Fallacy metrics over sets of
//! sequences, normalized against seed-matched Bernoulli baselines.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use flate2::{Compression, GzBuilder};
use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::genmodels::ModelSpec;
use crate::rng::SeededRng;
use crate::seqcore::{alternation_rate, longest_run, BinarySequence};

/// Bernoulli replicates averaged into every baseline.
pub const BASELINE_REPLICATES: u64 = 20;
pub const DEFAULT_MAX_PAIRS: usize = 5000;
/// Number of bins of the per-sequence mean histogram (width 0.02).
pub const MEAN_BINS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("sequence set {0:?} is empty")]
    EmptySet(String),
    #[error("pairwise metric needs at least 2 sequences")]
    TooFewSequences,
    #[error("k={k} exceeds the shortest sequence length {shortest}")]
    WindowTooLarge { k: usize, shortest: usize },
    #[error("k must be at least 1")]
    ZeroWindow,
    #[error("gambler statistics need sequences of length >= 2")]
    ShortSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceSet {
    pub sequences: Vec<BinarySequence>,
    pub label: String,
    pub declared_p: Option<f64>,
}

impl SequenceSet {
    pub fn new(label: impl Into<String>, sequences: Vec<BinarySequence>) -> Self {
        Self {
            sequences,
            label: label.into(),
            declared_p: None,
        }
    }

    pub fn with_declared_p(mut self, p: f64) -> Self {
        self.declared_p = Some(p);
        self
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    fn require_non_empty(&self) -> Result<(), MetricError> {
        if self.sequences.is_empty() {
            Err(MetricError::EmptySet(self.label.clone()))
        } else {
            Ok(())
        }
    }

    /// Mean over all flips of all sequences; 0 for an all-empty set.
    pub fn pooled_mean(&self) -> f64 {
        let (ones, total) = self
            .sequences
            .iter()
            .fold((0usize, 0usize), |(o, t), s| (o + s.ones(), t + s.len()));
        if total == 0 {
            0.0
        } else {
            ones as f64 / total as f64
        }
    }

    /// A Bernoulli set with the same shape and pooled mean.
    pub fn bernoulli_twin(&self, seed: u64, replicate: u64) -> SequenceSet {
        let coin = ModelSpec::Bernoulli {
            p: self.pooled_mean(),
        };
        let mut rng = SeededRng::derived(seed, replicate);
        let sequences = self
            .sequences
            .iter()
            .map(|s| coin.sample(s.len(), &mut rng))
            .collect();
        SequenceSet::new(format!("{}-baseline-{replicate}", self.label), sequences)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: &'static str,
    pub k: Option<usize>,
    pub raw: f64,
    pub baseline: f64,
    /// `raw / baseline`; `None` when the baseline is not positive.
    pub ratio: Option<f64>,
    pub seed: u64,
}

impl MetricReport {
    fn new(metric: &'static str, k: Option<usize>, raw: f64, baseline: f64, seed: u64) -> Self {
        Self {
            metric,
            k,
            raw,
            baseline,
            ratio: (baseline > 0.0).then(|| raw / baseline),
            seed,
        }
    }
}

/// CSV row `label,declared_p,metric,k,raw,baseline,ratio,seed`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub label: String,
    pub declared_p: Option<f64>,
    pub metric: &'static str,
    pub k: Option<usize>,
    pub raw: f64,
    pub baseline: f64,
    pub ratio: Option<f64>,
    pub seed: u64,
}

impl MetricRow {
    pub fn new(set: &SequenceSet, report: &MetricReport) -> Self {
        Self {
            label: set.label.clone(),
            declared_p: set.declared_p,
            metric: report.metric,
            k: report.k,
            raw: report.raw,
            baseline: report.baseline,
            ratio: report.ratio,
            seed: report.seed,
        }
    }
}

fn baseline_mean<F>(set: &SequenceSet, seed: u64, metric: F) -> f64
where
    F: Fn(&SequenceSet) -> f64 + Sync,
{
    let total: f64 = (0..BASELINE_REPLICATES)
        .map(|r| metric(&set.bernoulli_twin(seed, r)))
        .sum();
    total / BASELINE_REPLICATES as f64
}

/// Gzip stream of all sequences as `0`/`1` lines joined by `\n`, maximum
/// compression, zero mtime and no file name.
pub fn gzip_bytes(set: &SequenceSet) -> Vec<u8> {
    let text = set
        .sequences
        .iter()
        .map(BinarySequence::to_bit_string)
        .collect::<Vec<_>>()
        .join("\n");
    let mut encoder = GzBuilder::new()
        .mtime(0)
        .operating_system(255)
        .write(Vec::new(), Compression::best());
    encoder
        .write_all(text.as_bytes())
        .expect("writing to memory cannot fail");
    encoder.finish().expect("writing to memory cannot fail")
}

pub fn compressed_size(set: &SequenceSet) -> Result<usize, MetricError> {
    set.require_non_empty()?;
    Ok(gzip_bytes(set).len())
}

pub fn compressed_size_report(set: &SequenceSet, seed: u64) -> Result<MetricReport, MetricError> {
    let raw = compressed_size(set)? as f64;
    let baseline = baseline_mean(set, seed, |s| gzip_bytes(s).len() as f64);
    Ok(MetricReport::new("gzip_bytes", None, raw, baseline, seed))
}

/// Edit distance with unit insert/delete/substitute costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.len() < b.len() {
        return levenshtein(b, a);
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(x != y);
            curr[j + 1] = substitute.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

pub fn sequence_distance(a: &BinarySequence, b: &BinarySequence) -> usize {
    levenshtein(a.flips(), b.flips())
}

/// Unordered pair `(i, j)`, `i < j`, with the given rank in row-major order.
fn pair_from_rank(n: usize, mut rank: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if rank < row {
            return (i, i + 1 + rank);
        }
        rank -= row;
        i += 1;
    }
}

fn mean_pairwise(set: &SequenceSet, max_pairs: usize, seed: u64) -> f64 {
    let n = set.sequences.len();
    let total_pairs = n * (n - 1) / 2;
    let ranks: Vec<usize> = if total_pairs > max_pairs {
        let mut rng = SeededRng::derived(seed, u64::MAX);
        let mut picked = index::sample(&mut rng, total_pairs, max_pairs).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..total_pairs).collect()
    };
    let seqs = &set.sequences;
    let sum: usize = ranks
        .par_iter()
        .map(|&r| {
            let (i, j) = pair_from_rank(n, r);
            sequence_distance(&seqs[i], &seqs[j])
        })
        .sum();
    sum as f64 / ranks.len() as f64
}

/// Mean Levenshtein distance over unordered pairs (seeded subsample above
/// `max_pairs`).
pub fn mean_pairwise_levenshtein(
    set: &SequenceSet,
    max_pairs: usize,
    seed: u64,
) -> Result<MetricReport, MetricError> {
    if set.sequences.len() < 2 || max_pairs == 0 {
        return Err(MetricError::TooFewSequences);
    }
    let raw = mean_pairwise(set, max_pairs, seed);
    let baseline = baseline_mean(set, seed, |s| mean_pairwise(s, max_pairs, seed));
    Ok(MetricReport::new("mean_levenshtein", None, raw, baseline, seed))
}

fn distinct_windows(set: &SequenceSet, k: usize) -> usize {
    let mut seen = HashSet::new();
    for seq in &set.sequences {
        for window in seq.flips().windows(k) {
            seen.insert(window.to_vec());
        }
    }
    seen.len()
}

/// Number of distinct length-`k` windows across the whole set.
pub fn unique_subseq_count(set: &SequenceSet, k: usize, seed: u64) -> Result<MetricReport, MetricError> {
    set.require_non_empty()?;
    if k == 0 {
        return Err(MetricError::ZeroWindow);
    }
    let shortest = set.sequences.iter().map(BinarySequence::len).min().unwrap_or(0);
    if k > shortest {
        return Err(MetricError::WindowTooLarge { k, shortest });
    }
    let raw = distinct_windows(set, k) as f64;
    let baseline = baseline_mean(set, seed, |s| distinct_windows(s, k) as f64);
    Ok(MetricReport::new("unique_subsequences", Some(k), raw, baseline, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GamblerStats {
    /// Counts of per-sequence means in `[i/50, (i+1)/50)`, last bin closed.
    pub mean_histogram: Vec<usize>,
    /// Longest-run length to number of sequences.
    pub longest_run_histogram: BTreeMap<usize, usize>,
    pub mean_alternation: f64,
    pub mean_longest_run: f64,
    pub mean_of_means: f64,
}

impl GamblerStats {
    /// `(lo, hi)` edges of every mean-histogram bin.
    pub fn mean_bin_edges() -> Vec<(f64, f64)> {
        (0..MEAN_BINS)
            .map(|i| (i as f64 / MEAN_BINS as f64, (i + 1) as f64 / MEAN_BINS as f64))
            .collect()
    }

    /// Sequences whose longest run is at least `len`.
    pub fn runs_at_least(&self, len: usize) -> usize {
        self.longest_run_histogram.range(len..).map(|(_, c)| c).sum()
    }
}

/// Bin of `ones / len` computed in integers so edges like 0.06 land exactly.
pub fn mean_bin(ones: usize, len: usize) -> usize {
    ((ones * MEAN_BINS) / len).min(MEAN_BINS - 1)
}

pub fn gambler_stats(set: &SequenceSet) -> Result<GamblerStats, MetricError> {
    set.require_non_empty()?;
    if set.sequences.iter().any(|s| s.len() < 2) {
        return Err(MetricError::ShortSequence);
    }
    let n = set.sequences.len() as f64;
    let mut mean_histogram = vec![0; MEAN_BINS];
    let mut longest_run_histogram = BTreeMap::new();
    let (mut alt, mut runs, mut means) = (0.0, 0.0, 0.0);
    for seq in &set.sequences {
        mean_histogram[mean_bin(seq.ones(), seq.len())] += 1;
        let run = longest_run(seq);
        *longest_run_histogram.entry(run).or_insert(0) += 1;
        alt += alternation_rate(seq).expect("length checked");
        runs += run as f64;
        means += seq.ones() as f64 / seq.len() as f64;
    }
    Ok(GamblerStats {
        mean_histogram,
        longest_run_histogram,
        mean_alternation: alt / n,
        mean_longest_run: runs / n,
        mean_of_means: means / n,
    })
}
