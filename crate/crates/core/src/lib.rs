//! Randomness models and in-context-learning analysis for binary sequences.
//!
//! * [`seqcore`]: flip sequences, text parsing and descriptive statistics.
//! * [`genmodels`]: Bernoulli, Window Average, Markov and repeater models.
//! * [`bayes`]: posteriors, posterior predictive, subjective randomness.
//! * [`predtree`]: next-token prediction trees and concept mass.
//! * [`metrics`]: compression, edit-distance and run-length metrics.

pub mod bayes;
pub mod genmodels;
pub mod metrics;
pub mod predtree;
pub mod rng;
pub mod seqcore;

pub use bayes::{HypothesisSpace, Posterior, PredictiveMode, RandomnessScore};
pub use genmodels::{DescriptionCosts, ModelSpec};
pub use metrics::{MetricReport, SequenceSet};
pub use predtree::{Concept, NextTokenProvider, PredictionTree, ProviderError};
pub use rng::SeededRng;
pub use seqcore::{BinarySequence, Flip, TokenFormat};
