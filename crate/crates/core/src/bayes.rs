//! Bayesian model selection over small enumerable hypothesis spaces.
//!
//! All arithmetic is in base-2 log space. Impossible evidence is carried as
//! `f64::NEG_INFINITY`, never as a large negative sentinel.

use serde::Serialize;
use thiserror::Error;

use crate::genmodels::{DescriptionCosts, ModelError, ModelSpec};
use crate::seqcore::{BinarySequence, Flip};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesError {
    #[error("hypothesis space is empty")]
    EmptySpace,
    #[error("random hypothesis index {0} out of range")]
    RandomIndex(usize),
    #[error("random hypothesis must be a Bernoulli model")]
    RandomNotBernoulli,
    #[error("priors sum to {0}, expected 1")]
    PriorsNotNormalized(f64),
    #[error("every hypothesis assigns zero probability to the evidence")]
    ImpossibleEvidence,
    #[error("randomness score needs a non-empty sequence")]
    EmptySequence,
    #[error("pattern length {0} outside 1..=8")]
    PatternLength(usize),
    #[error("repetition counts must be non-empty and ascending")]
    BadRange,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `log2(Σ 2^x_i)`, exact for all-`-∞` input.
pub fn log2_sum_exp2(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp2()).sum();
    max + sum.log2()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    pub model: ModelSpec,
    pub log2_prior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisSpace {
    hypotheses: Vec<Hypothesis>,
    random_index: usize,
}

impl HypothesisSpace {
    /// Priors must already sum to 1 (±1e-9).
    pub fn new(hypotheses: Vec<Hypothesis>, random_index: usize) -> Result<Self, BayesError> {
        if hypotheses.is_empty() {
            return Err(BayesError::EmptySpace);
        }
        let random = hypotheses
            .get(random_index)
            .ok_or(BayesError::RandomIndex(random_index))?;
        if !random.model.is_bernoulli() {
            return Err(BayesError::RandomNotBernoulli);
        }
        for h in &hypotheses {
            h.model.validate()?;
        }
        let total: f64 = hypotheses.iter().map(|h| h.log2_prior.exp2()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(BayesError::PriorsNotNormalized(total));
        }
        Ok(Self {
            hypotheses,
            random_index,
        })
    }

    /// Build from arbitrary non-negative log-weights, normalizing them.
    pub fn from_weights(
        models: Vec<(ModelSpec, f64)>,
        random_index: usize,
    ) -> Result<Self, BayesError> {
        if models.is_empty() {
            return Err(BayesError::EmptySpace);
        }
        let logs: Vec<f64> = models.iter().map(|(_, w)| *w).collect();
        let z = log2_sum_exp2(&logs);
        let hypotheses = models
            .into_iter()
            .map(|(model, w)| Hypothesis {
                model,
                log2_prior: w - z,
            })
            .collect();
        Self::new(hypotheses, random_index)
    }

    /// Equal prior on every model.
    pub fn uniform(models: Vec<ModelSpec>, random_index: usize) -> Result<Self, BayesError> {
        Self::from_weights(models.into_iter().map(|m| (m, 0.0)).collect(), random_index)
    }

    /// The two-hypothesis space {Bernoulli(0.5), concept repeater} with equal
    /// priors; the random coin comes first.
    pub fn coin_versus_concept(pattern: &BinarySequence, epsilon: f64) -> Result<Self, BayesError> {
        Self::uniform(
            vec![
                ModelSpec::bernoulli(0.5)?,
                ModelSpec::repeater(pattern.clone(), 0, epsilon)?,
            ],
            0,
        )
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn random_index(&self) -> usize {
        self.random_index
    }

    pub fn random_model(&self) -> &ModelSpec {
        &self.hypotheses[self.random_index].model
    }

    pub fn prior(&self) -> Posterior {
        Posterior {
            log2_weights: self.hypotheses.iter().map(|h| h.log2_prior).collect(),
        }
    }
}

/// Normalized log2 posterior weights, one per hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Posterior {
    log2_weights: Vec<f64>,
}

impl Posterior {
    fn normalized(mut log2_weights: Vec<f64>) -> Result<Self, BayesError> {
        let z = log2_sum_exp2(&log2_weights);
        if z == f64::NEG_INFINITY {
            return Err(BayesError::ImpossibleEvidence);
        }
        for w in &mut log2_weights {
            *w -= z;
        }
        Ok(Self { log2_weights })
    }

    pub fn log2_weights(&self) -> &[f64] {
        &self.log2_weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.log2_weights[i].exp2()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log2_weights.iter().map(|w| w.exp2()).collect()
    }

    /// Index of the highest posterior weight, lowest index on ties.
    pub fn map_index(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.log2_weights.iter().enumerate() {
            if w > self.log2_weights[best] {
                best = i;
            }
        }
        best
    }

    /// Condition on one more flip observed after `context`.
    pub fn update(
        &self,
        space: &HypothesisSpace,
        context: &BinarySequence,
        next: Flip,
    ) -> Result<Posterior, BayesError> {
        let weights = self
            .log2_weights
            .iter()
            .zip(space.hypotheses())
            .map(|(&w, h)| {
                if w == f64::NEG_INFINITY {
                    return w;
                }
                let p = h.model.prob_of_slice(context.flips(), next);
                if p <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    w + p.log2()
                }
            })
            .collect();
        Posterior::normalized(weights)
    }
}

pub fn posterior(space: &HypothesisSpace, x: &BinarySequence) -> Result<Posterior, BayesError> {
    let weights = space
        .hypotheses()
        .iter()
        .map(|h| h.log2_prior + h.model.log_likelihood(x))
        .collect();
    Posterior::normalized(weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveMode {
    /// Σ_h p(next | h) p(h | x): sampling at temperature 1.
    Marginalize,
    /// Prediction of the MAP hypothesis: greedy decoding.
    Map,
}

pub fn predictive_next(
    space: &HypothesisSpace,
    x: &BinarySequence,
    mode: PredictiveMode,
) -> Result<f64, BayesError> {
    let post = posterior(space, x)?;
    Ok(predictive_from_posterior(space, &post, x, mode))
}

pub fn predictive_from_posterior(
    space: &HypothesisSpace,
    post: &Posterior,
    x: &BinarySequence,
    mode: PredictiveMode,
) -> f64 {
    match mode {
        PredictiveMode::Marginalize => space
            .hypotheses()
            .iter()
            .enumerate()
            .filter(|(i, _)| post.log2_weights[*i] > f64::NEG_INFINITY)
            .map(|(i, h)| post.weight(i) * h.model.next_prob(x))
            .sum::<f64>()
            .clamp(0.0, 1.0),
        PredictiveMode::Map => space.hypotheses()[post.map_index()].model.next_prob(x),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomnessScore {
    /// `log2 p(x | random) − max_h [log2 p(h) + log2 p(x | h)]` in bits;
    /// negative means the sequence looks non-random.
    pub value: f64,
    pub map_hypothesis: Option<usize>,
    /// Set when no non-random hypothesis can produce `x` (value is `+∞`).
    pub flagged: bool,
}

/// Subjective randomness of `x`. Non-random priors are renormalized among
/// themselves before the comparison.
pub fn randomness_score(
    x: &BinarySequence,
    space: &HypothesisSpace,
) -> Result<RandomnessScore, BayesError> {
    if x.is_empty() {
        return Err(BayesError::EmptySequence);
    }
    let random_ll = space.random_model().log_likelihood(x);
    let others: Vec<(usize, &Hypothesis)> = space
        .hypotheses()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != space.random_index())
        .collect();
    let priors: Vec<f64> = others.iter().map(|(_, h)| h.log2_prior).collect();
    let z = log2_sum_exp2(&priors);
    let mut best: Option<(usize, f64)> = None;
    for (i, h) in &others {
        let joint = h.log2_prior - z + h.model.log_likelihood(x);
        if joint == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| joint > b) {
            best = Some((*i, joint));
        }
    }
    Ok(match best {
        Some((i, joint)) => RandomnessScore {
            value: random_ll - joint,
            map_hypothesis: Some(i),
            flagged: false,
        },
        None => RandomnessScore {
            value: f64::INFINITY,
            map_hypothesis: None,
            flagged: true,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgmentPoint {
    pub n: usize,
    pub x_len: usize,
    pub p_random: f64,
}

/// Posterior weight of the random hypothesis on `pattern^n` for each `n`.
pub fn judgment_curve(
    pattern: &BinarySequence,
    n_range: &[usize],
    space: &HypothesisSpace,
) -> Result<Vec<JudgmentPoint>, BayesError> {
    if n_range.is_empty() || n_range.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BayesError::BadRange);
    }
    n_range
        .iter()
        .map(|&n| {
            let x = BinarySequence::repeat(pattern, n);
            let post = posterior(space, &x)?;
            Ok(JudgmentPoint {
                n,
                x_len: x.len(),
                p_random: post.weight(space.random_index()),
            })
        })
        .collect()
}

/// True when `pattern` is not a repetition of a shorter pattern.
pub fn is_primitive(pattern: &BinarySequence) -> bool {
    let len = pattern.len();
    if len == 0 {
        return false;
    }
    let flips = pattern.flips();
    (1..len)
        .filter(|d| len % d == 0)
        .all(|d| flips.chunks(d).any(|c| c != &flips[..d]))
}

/// Primitive patterns of length `len` in canonical form: the smallest
/// rotation of each class (Lyndon words), in lexicographic order.
pub fn primitive_necklaces(len: usize) -> Vec<BinarySequence> {
    let mut out = Vec::new();
    for code in 0u32..(1 << len) {
        let pattern =
            BinarySequence::from_bits((0..len).rev().map(|i| ((code >> i) & 1) as u8));
        if !is_primitive(&pattern) {
            continue;
        }
        let smallest = (1..len).all(|r| {
            let rotated: Vec<Flip> = pattern.flips()[r..]
                .iter()
                .chain(&pattern.flips()[..r])
                .copied()
                .collect();
            pattern.flips() < rotated.as_slice()
        });
        if smallest {
            out.push(pattern);
        }
    }
    out
}

/// Every primitive repeater up to `max_pattern_len` in each phase, weighted
/// by `2^-description_length`, plus a Bernoulli random hypothesis (last).
pub fn enumerate_repeaters(max_pattern_len: usize, epsilon: f64) -> Result<HypothesisSpace, BayesError> {
    enumerate_repeaters_with(max_pattern_len, epsilon, 0.5, &DescriptionCosts::default())
}

pub fn enumerate_repeaters_with(
    max_pattern_len: usize,
    epsilon: f64,
    random_p: f64,
    costs: &DescriptionCosts,
) -> Result<HypothesisSpace, BayesError> {
    if !(1..=8).contains(&max_pattern_len) {
        return Err(BayesError::PatternLength(max_pattern_len));
    }
    let mut models = Vec::new();
    for len in 1..=max_pattern_len {
        for pattern in primitive_necklaces(len) {
            for phase in 0..len {
                let model = ModelSpec::repeater(pattern.clone(), phase, epsilon)?;
                let dl = model.description_length(costs);
                models.push((model, -dl));
            }
        }
    }
    let random = ModelSpec::bernoulli(random_p)?;
    let dl = random.description_length(costs);
    models.push((random, -dl));
    let random_index = models.len() - 1;
    HypothesisSpace::from_weights(models, random_index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> BinarySequence {
        BinarySequence::from_bit_str(s).unwrap()
    }

    fn two_space() -> HypothesisSpace {
        HypothesisSpace::coin_versus_concept(&bits("011"), 0.0).unwrap()
    }

    #[test]
    fn logsumexp() {
        assert_eq!(log2_sum_exp2(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log2_sum_exp2(&[-1.0, -1.0]) - 0.0).abs() < 1e-15);
        assert!((log2_sum_exp2(&[-2000.0, -2000.0]) + 1999.0).abs() < 1e-9);
        assert_eq!(log2_sum_exp2(&[3.0, f64::NEG_INFINITY]), 3.0);
    }

    #[test]
    fn space_validation() {
        assert_eq!(HypothesisSpace::new(vec![], 0), Err(BayesError::EmptySpace));
        let coin = ModelSpec::bernoulli(0.5).unwrap();
        let r = ModelSpec::repeater(bits("01"), 0, 0.0).unwrap();
        assert_eq!(
            HypothesisSpace::uniform(vec![coin.clone(), r.clone()], 1),
            Err(BayesError::RandomNotBernoulli)
        );
        assert_eq!(HypothesisSpace::uniform(vec![coin.clone()], 3), Err(BayesError::RandomIndex(3)));
        let bad = vec![Hypothesis { model: coin, log2_prior: -2.0 }];
        assert!(matches!(HypothesisSpace::new(bad, 0), Err(BayesError::PriorsNotNormalized(_))));
    }

    #[test]
    fn posterior_examples() {
        let single = HypothesisSpace::uniform(vec![ModelSpec::bernoulli(0.3).unwrap()], 0).unwrap();
        assert_eq!(posterior(&single, &bits("0110")).unwrap().weight(0), 1.0);

        let post = posterior(&two_space(), &bits("011011")).unwrap();
        assert!((post.weight(1) - 64.0 / 65.0).abs() < 1e-15);

        let post = posterior(&two_space(), &bits("100")).unwrap();
        assert_eq!(post.weight(1), 0.0);
        assert_eq!(post.weight(0), 1.0);

        let only_repeater = HypothesisSpace::uniform(
            vec![ModelSpec::bernoulli(1.0).unwrap(), ModelSpec::repeater(bits("0"), 0, 0.0).unwrap()],
            0,
        )
        .unwrap();
        assert_eq!(posterior(&only_repeater, &bits("01")), Err(BayesError::ImpossibleEvidence));
        assert_eq!(
            predictive_next(&only_repeater, &bits("01"), PredictiveMode::Map),
            Err(BayesError::ImpossibleEvidence)
        );
    }

    #[test]
    fn predictive_examples() {
        let single = HypothesisSpace::uniform(vec![ModelSpec::bernoulli(0.3).unwrap()], 0).unwrap();
        for mode in [PredictiveMode::Marginalize, PredictiveMode::Map] {
            assert_eq!(predictive_next(&single, &bits("0101"), mode).unwrap(), 0.3);
        }
        let x4 = BinarySequence::repeat(&bits("011"), 4);
        assert_eq!(predictive_next(&two_space(), &x4, PredictiveMode::Map).unwrap(), 0.0);
        let p = predictive_next(&two_space(), &bits("011"), PredictiveMode::Marginalize).unwrap();
        assert!((p - 1.0 / 18.0).abs() < 1e-15, "{p}");
    }

    #[test]
    fn map_ties_break_to_lowest_index() {
        let space = HypothesisSpace::uniform(
            vec![
                ModelSpec::bernoulli(0.5).unwrap(),
                ModelSpec::bernoulli(0.5).unwrap(),
                ModelSpec::bernoulli(0.9).unwrap(),
            ],
            1,
        )
        .unwrap();
        let post = posterior(&space, &bits("01")).unwrap();
        assert_eq!(post.map_index(), 0);
    }

    #[test]
    fn enumeration_examples() {
        let space = enumerate_repeaters(1, 0.0).unwrap();
        let names: Vec<String> = space.hypotheses().iter().map(|h| h.model.to_string()).collect();
        assert_eq!(
            names,
            [
                "variant=regular_repeater,pattern=0,phase=0,epsilon=0",
                "variant=regular_repeater,pattern=1,phase=0,epsilon=0",
                "variant=bernoulli,p=0.5",
            ]
        );
        let space = enumerate_repeaters(2, 0.0).unwrap();
        assert_eq!(space.len() - 1, 4);
        let patterns: Vec<_> = space.hypotheses()[2..4]
            .iter()
            .map(|h| match &h.model {
                ModelSpec::RegularRepeater { pattern, phase, .. } => (pattern.to_string(), *phase),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(patterns, [("01".to_string(), 0), ("01".to_string(), 1)]);
        assert!(!is_primitive(&bits("00")));
        assert!(!is_primitive(&bits("0101")));
        assert!(is_primitive(&bits("011")));
        // Counts of binary Lyndon words: 2, 1, 2, 3, 6, 9, 18, 30.
        let counts: Vec<usize> = (1..=8).map(|l| primitive_necklaces(l).len()).collect();
        assert_eq!(counts, [2, 1, 2, 3, 6, 9, 18, 30]);
        assert!(enumerate_repeaters(0, 0.0).is_err());
        assert!(enumerate_repeaters(9, 0.0).is_err());
    }

    #[test]
    fn score_flags_unexplained_sequences() {
        let s = randomness_score(&bits("100"), &two_space()).unwrap();
        assert!(s.flagged);
        assert_eq!(s.value, f64::INFINITY);
        assert_eq!(s.map_hypothesis, None);
        assert_eq!(randomness_score(&BinarySequence::empty(), &two_space()), Err(BayesError::EmptySequence));
    }

    #[test]
    fn judgment_curve_examples() {
        let curve = judgment_curve(&bits("011"), &[1, 2, 3, 4, 5], &two_space()).unwrap();
        assert!((curve[0].p_random - 1.0 / 9.0).abs() < 1e-15);
        assert!((curve[2].p_random - 1.0 / 513.0).abs() < 1e-15);
        assert_eq!(curve[2].x_len, 9);
        assert!(curve.windows(2).all(|w| w[1].p_random < w[0].p_random));

        let random_only =
            HypothesisSpace::uniform(vec![ModelSpec::bernoulli(0.5).unwrap()], 0).unwrap();
        let curve = judgment_curve(&bits("011"), &[1, 2, 3], &random_only).unwrap();
        assert!(curve.iter().all(|p| p.p_random == 1.0));
        assert_eq!(judgment_curve(&bits("01"), &[2, 2], &two_space()), Err(BayesError::BadRange));
        assert_eq!(judgment_curve(&bits("01"), &[], &two_space()), Err(BayesError::BadRange));
    }
}
