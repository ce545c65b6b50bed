//! The hypothesis model zoo: Bernoulli coins, the memory-limited Window
//! Average generator, order-k Markov chains and cyclic pattern repeaters.
//!
//! Every model answers one question, the probability that the next flip is
//! Tails given everything seen so far, and likelihoods and sampling are
//! derived from that by the chain rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;
use crate::seqcore::{BinarySequence, Flip};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("probability {name}={value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("markov order must be at least 1")]
    ZeroOrder,
    #[error("markov order {0} too large")]
    OrderTooLarge(usize),
    #[error("markov table has {got} entries, order {k} needs {expected}")]
    TableSize { k: usize, expected: usize, got: usize },
    #[error("repeater pattern must be non-empty")]
    EmptyPattern,
    #[error("repeater phase {phase} out of range for pattern length {len}")]
    Phase { phase: usize, len: usize },
    #[error("lapse probability {0} outside [0, 0.5)")]
    Lapse(f64),
    #[error("no usable transitions for an order-{0} fit without smoothing")]
    InsufficientData(usize),
    #[error("malformed model record: {0}")]
    Parse(String),
}

/// Orders above this produce tables too large to be meaningful here.
pub const MAX_MARKOV_ORDER: usize = 20;

fn default_half() -> f64 {
    0.5
}

/// One generative hypothesis over flip sequences.
///
/// Markov contexts are keyed oldest-to-newest: the table index is the
/// integer value of the last `k` flips read with the oldest flip as the most
/// significant bit. So for `k = 2` the conditional usually written
/// `p(0|11)` is `1 - table[0b11]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", try_from = "RawModelSpec")]
pub enum ModelSpec {
    Bernoulli {
        p: f64,
    },
    WindowAverage {
        p: f64,
        w: usize,
    },
    MarkovChain {
        k: usize,
        table: Vec<f64>,
        /// Used while fewer than `k` flips are available; persisted as `p`.
        #[serde(rename = "p")]
        fallback: f64,
    },
    RegularRepeater {
        pattern: BinarySequence,
        phase: usize,
        epsilon: f64,
    },
}

#[derive(Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
enum RawModelSpec {
    Bernoulli {
        p: f64,
    },
    WindowAverage {
        p: f64,
        w: usize,
    },
    MarkovChain {
        k: usize,
        table: Vec<f64>,
        #[serde(rename = "p", default = "default_half")]
        fallback: f64,
    },
    RegularRepeater {
        pattern: BinarySequence,
        #[serde(default)]
        phase: usize,
        #[serde(default)]
        epsilon: f64,
    },
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = ModelError;

    fn try_from(raw: RawModelSpec) -> Result<Self, Self::Error> {
        let spec = match raw {
            RawModelSpec::Bernoulli { p } => ModelSpec::Bernoulli { p },
            RawModelSpec::WindowAverage { p, w } => ModelSpec::WindowAverage { p, w },
            RawModelSpec::MarkovChain { k, table, fallback } => {
                ModelSpec::MarkovChain { k, table, fallback }
            }
            RawModelSpec::RegularRepeater {
                pattern,
                phase,
                epsilon,
            } => ModelSpec::RegularRepeater {
                pattern,
                phase,
                epsilon,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn check_prob(name: &'static str, value: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::Probability { name, value })
    }
}

impl ModelSpec {
    pub fn bernoulli(p: f64) -> Result<Self, ModelError> {
        let m = ModelSpec::Bernoulli { p };
        m.validate()?;
        Ok(m)
    }

    pub fn window_average(p: f64, w: usize) -> Result<Self, ModelError> {
        let m = ModelSpec::WindowAverage { p, w };
        m.validate()?;
        Ok(m)
    }

    pub fn markov_chain(k: usize, table: Vec<f64>, fallback: f64) -> Result<Self, ModelError> {
        let m = ModelSpec::MarkovChain { k, table, fallback };
        m.validate()?;
        Ok(m)
    }

    pub fn repeater(pattern: BinarySequence, phase: usize, epsilon: f64) -> Result<Self, ModelError> {
        let m = ModelSpec::RegularRepeater {
            pattern,
            phase,
            epsilon,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::Bernoulli { p } => check_prob("p", *p),
            ModelSpec::WindowAverage { p, w } => {
                check_prob("p", *p)?;
                if *w == 0 {
                    return Err(ModelError::ZeroWindow);
                }
                Ok(())
            }
            ModelSpec::MarkovChain { k, table, fallback } => {
                if *k == 0 {
                    return Err(ModelError::ZeroOrder);
                }
                if *k > MAX_MARKOV_ORDER {
                    return Err(ModelError::OrderTooLarge(*k));
                }
                if table.len() != 1 << k {
                    return Err(ModelError::TableSize {
                        k: *k,
                        expected: 1 << k,
                        got: table.len(),
                    });
                }
                check_prob("p", *fallback)?;
                table.iter().try_for_each(|&v| check_prob("table", v))
            }
            ModelSpec::RegularRepeater {
                pattern,
                phase,
                epsilon,
            } => {
                if pattern.is_empty() {
                    return Err(ModelError::EmptyPattern);
                }
                if *phase >= pattern.len() {
                    return Err(ModelError::Phase {
                        phase: *phase,
                        len: pattern.len(),
                    });
                }
                if !(0.0..0.5).contains(epsilon) {
                    return Err(ModelError::Lapse(*epsilon));
                }
                Ok(())
            }
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            ModelSpec::Bernoulli { .. } => "bernoulli",
            ModelSpec::WindowAverage { .. } => "window_average",
            ModelSpec::MarkovChain { .. } => "markov_chain",
            ModelSpec::RegularRepeater { .. } => "regular_repeater",
        }
    }

    pub fn is_bernoulli(&self) -> bool {
        matches!(self, ModelSpec::Bernoulli { .. })
    }

    /// P(next = Tails | context).
    pub fn next_prob(&self, context: &BinarySequence) -> f64 {
        self.next_prob_slice(context.flips())
    }

    pub fn next_prob_slice(&self, context: &[Flip]) -> f64 {
        match self {
            ModelSpec::Bernoulli { p } => *p,
            ModelSpec::WindowAverage { p, w } => {
                if context.is_empty() {
                    return *p;
                }
                let window = &context[context.len().saturating_sub(*w)..];
                let ones = window.iter().filter(|f| f.is_tails()).count();
                let avg = ones as f64 / window.len() as f64;
                (2.0 * p - avg).clamp(0.0, 1.0)
            }
            ModelSpec::MarkovChain { k, table, fallback } => {
                if context.len() < *k {
                    *fallback
                } else {
                    table[context_index(&context[context.len() - k..])]
                }
            }
            ModelSpec::RegularRepeater { .. } => {
                self.prob_of_slice(context, Flip::Tails)
            }
        }
    }

    /// Probability of `flip` being next. Exact for repeaters (no `1 - (1 - ε)`
    /// round trip).
    pub fn prob_of_slice(&self, context: &[Flip], flip: Flip) -> f64 {
        match self {
            ModelSpec::RegularRepeater {
                pattern,
                phase,
                epsilon,
            } => {
                let expected = pattern.flips()[(phase + context.len()) % pattern.len()];
                if expected == flip {
                    1.0 - epsilon
                } else {
                    *epsilon
                }
            }
            _ => {
                let p = self.next_prob_slice(context);
                if flip.is_tails() {
                    p
                } else {
                    1.0 - p
                }
            }
        }
    }

    /// Base-2 log-likelihood by the chain rule; `f64::NEG_INFINITY` when the
    /// sequence is impossible under the model.
    pub fn log_likelihood(&self, seq: &BinarySequence) -> f64 {
        let flips = seq.flips();
        let mut total = 0.0;
        for t in 0..flips.len() {
            let p = self.prob_of_slice(&flips[..t], flips[t]);
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += p.log2();
        }
        total
    }

    /// Autoregressive draw of `length` flips.
    pub fn sample(&self, length: usize, rng: &mut SeededRng) -> BinarySequence {
        self.continue_from(&BinarySequence::empty(), length, rng)
    }

    /// Draw `length` further flips after `context`; only the new flips are
    /// returned.
    pub fn continue_from(
        &self,
        context: &BinarySequence,
        length: usize,
        rng: &mut SeededRng,
    ) -> BinarySequence {
        let mut all: Vec<Flip> = context.flips().to_vec();
        let start = all.len();
        for _ in 0..length {
            let p = self.next_prob_slice(&all);
            all.push(Flip::from_bit(rng.bernoulli(p)));
        }
        BinarySequence::new(all.split_off(start))
    }

    pub fn description_length(&self, costs: &DescriptionCosts) -> f64 {
        match self {
            ModelSpec::RegularRepeater { pattern, .. } => {
                let len = pattern.len();
                len as f64 + ceil_log2(len) as f64
            }
            ModelSpec::Bernoulli { .. } => costs.bernoulli_bits,
            ModelSpec::WindowAverage { .. } => costs.window_bits,
            ModelSpec::MarkovChain { k, .. } => (1u64 << k) as f64 * costs.prob_bits,
        }
    }

    /// Parse either the JSON record or the compact `key=value,...` form.
    pub fn parse_record(s: &str) -> Result<Self, ModelError> {
        let s = s.trim();
        if s.starts_with('{') {
            serde_json::from_str(s).map_err(|e| ModelError::Parse(e.to_string()))
        } else {
            s.parse()
        }
    }
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Integer index of a context window, oldest flip most significant.
pub fn context_index(window: &[Flip]) -> usize {
    window
        .iter()
        .fold(0usize, |acc, f| (acc << 1) | f.bit() as usize)
}

/// Bit costs of the non-repeater model families in the simplicity prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptionCosts {
    pub bernoulli_bits: f64,
    pub window_bits: f64,
    /// Per-entry cost of a Markov table.
    pub prob_bits: f64,
}

impl Default for DescriptionCosts {
    fn default() -> Self {
        Self {
            bernoulli_bits: 2.0,
            window_bits: 4.0,
            prob_bits: 4.0,
        }
    }
}

pub fn description_length(model: &ModelSpec) -> f64 {
    model.description_length(&DescriptionCosts::default())
}

/// Transition counts of an order-`k` chain: `counts[c] = [#c→0, #c→1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkovCounts {
    k: usize,
    counts: Vec<[u64; 2]>,
}

impl MarkovCounts {
    pub fn tally<'a, I>(sequences: I, k: usize) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = &'a BinarySequence>,
    {
        if k == 0 {
            return Err(ModelError::ZeroOrder);
        }
        if k > MAX_MARKOV_ORDER {
            return Err(ModelError::OrderTooLarge(k));
        }
        let mut counts = vec![[0u64; 2]; 1 << k];
        for seq in sequences {
            for window in seq.flips().windows(k + 1) {
                let ctx = context_index(&window[..k]);
                counts[ctx][window[k].bit() as usize] += 1;
            }
        }
        Ok(Self { k, counts })
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| c[0] + c[1]).sum()
    }

    pub fn count(&self, context: &BinarySequence, next: Flip) -> u64 {
        assert_eq!(context.len(), self.k, "context length must equal the order");
        self.counts[context_index(context.flips())][next.bit() as usize]
    }

    /// Empirical `p(next | suffix)` for a suffix of at most `k` flips (oldest
    /// first), pooling every full context that ends in `suffix`. `None` when
    /// no such context was observed.
    pub fn conditional(&self, next: Flip, suffix: &BinarySequence) -> Option<f64> {
        assert!(suffix.len() <= self.k, "suffix longer than the chain order");
        let free = self.k - suffix.len();
        let tail = context_index(suffix.flips());
        let (mut hit, mut total) = (0u64, 0u64);
        for head in 0..(1usize << free) {
            let c = self.counts[(head << suffix.len()) | tail];
            hit += c[next.bit() as usize];
            total += c[0] + c[1];
        }
        (total > 0).then(|| hit as f64 / total as f64)
    }

    pub fn to_model(&self, smoothing: f64) -> Result<ModelSpec, ModelError> {
        if !(smoothing >= 0.0) {
            return Err(ModelError::Parse(format!("smoothing {smoothing} must be >= 0")));
        }
        if smoothing == 0.0 && self.total() == 0 {
            return Err(ModelError::InsufficientData(self.k));
        }
        let table = self
            .counts
            .iter()
            .map(|&[zeros, ones]| {
                let denom = (zeros + ones) as f64 + 2.0 * smoothing;
                if denom == 0.0 {
                    0.5
                } else {
                    (ones as f64 + smoothing) / denom
                }
            })
            .collect();
        ModelSpec::markov_chain(self.k, table, 0.5)
    }
}

/// Fit an order-`k` Markov chain by (optionally add-`smoothing`) counting.
pub fn markov_fit(
    sequences: &[BinarySequence],
    k: usize,
    smoothing: f64,
) -> Result<ModelSpec, ModelError> {
    MarkovCounts::tally(sequences, k)?.to_model(smoothing)
}

impl fmt::Display for ModelSpec {
    /// Compact `key=value` record, e.g. `variant=window_average,p=0.5,w=5`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "variant={}", self.variant_name())?;
        match self {
            ModelSpec::Bernoulli { p } => write!(f, ",p={p}"),
            ModelSpec::WindowAverage { p, w } => write!(f, ",p={p},w={w}"),
            ModelSpec::MarkovChain { k, table, fallback } => {
                let table: Vec<String> = table.iter().map(|v| v.to_string()).collect();
                write!(f, ",k={k},table={},p={fallback}", table.join("/"))
            }
            ModelSpec::RegularRepeater {
                pattern,
                phase,
                epsilon,
            } => write!(f, ",pattern={pattern},phase={phase},epsilon={epsilon}"),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut fields = std::collections::BTreeMap::new();
        for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| ModelError::Parse(format!("expected key=value, got {pair:?}")))?;
            fields.insert(key.trim(), value.trim());
        }
        let get = |key: &str| -> Result<&str, ModelError> {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| ModelError::Parse(format!("missing field {key:?}")))
        };
        let num = |key: &str| -> Result<f64, ModelError> {
            get(key)?
                .parse()
                .map_err(|_| ModelError::Parse(format!("field {key:?} is not a number")))
        };
        let count = |key: &str| -> Result<usize, ModelError> {
            get(key)?
                .parse()
                .map_err(|_| ModelError::Parse(format!("field {key:?} is not a count")))
        };
        match get("variant")? {
            "bernoulli" => ModelSpec::bernoulli(num("p")?),
            "window_average" => ModelSpec::window_average(num("p")?, count("w")?),
            "markov_chain" => {
                let table = get("table")?
                    .split('/')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| ModelError::Parse(format!("bad table entry {v:?}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let fallback = if fields.contains_key("p") { num("p")? } else { 0.5 };
                ModelSpec::markov_chain(count("k")?, table, fallback)
            }
            "regular_repeater" => {
                let pattern = BinarySequence::from_bit_str(get("pattern")?)
                    .map_err(|e| ModelError::Parse(e.to_string()))?;
                let phase = if fields.contains_key("phase") { count("phase")? } else { 0 };
                let epsilon = if fields.contains_key("epsilon") { num("epsilon")? } else { 0.0 };
                ModelSpec::repeater(pattern, phase, epsilon)
            }
            other => Err(ModelError::Parse(format!("unknown variant {other:?}"))),
        }
    }
}
