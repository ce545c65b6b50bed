//! Experiment harness: configs, the batch runner, the JSONL record store and
//! report tables for the generation, judgment and learning-curve protocols.

pub mod config;
pub mod report;
pub mod run;
pub mod store;

use anyhow::{bail, Result};
use flipscope_core::bayes::{enumerate_repeaters, randomness_score};
use flipscope_core::seqcore::parse_flips;
use flipscope_core::{BinarySequence, TokenFormat};
use serde::Serialize;

pub use config::{parse_mock_provider, ExperimentConfig, ExperimentKind};
pub use report::{report, ReportSummary};
pub use run::{cells, run, RunOptions, RunSummary};
pub use store::{Cell, RecordStore, RunRecord, Status};

/// Accepts a bit string (`0110`), an H/T string (`HTTH`) or a flip list
/// (`Heads, Tails, ...`).
pub fn parse_sequence_arg(arg: &str) -> Result<BinarySequence> {
    let s = arg.trim();
    if !s.is_empty() && s.chars().all(|c| c == '0' || c == '1') {
        return Ok(BinarySequence::from_bit_str(s)?);
    }
    if !s.is_empty() && s.chars().all(|c| matches!(c, 'H' | 'T' | 'h' | 't')) {
        return Ok(BinarySequence::from_bits(
            s.chars().map(|c| matches!(c, 'T' | 't') as u8),
        ));
    }
    let parsed = parse_flips(s, &TokenFormat::default());
    if parsed.sequence.is_empty() || parsed.stopped_at.is_some() {
        bail!("cannot read {arg:?} as a flip sequence");
    }
    Ok(parsed.sequence)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreOutput {
    pub sequence: BinarySequence,
    pub length: usize,
    /// Bits; negative means the sequence looks patterned.
    pub score: Option<f64>,
    pub map_hypothesis: Option<String>,
    pub flagged: bool,
}

/// Randomness score against every repeater up to `max_pattern_len`.
pub fn score(x: &BinarySequence, max_pattern_len: usize, epsilon: f64) -> Result<ScoreOutput> {
    let space = enumerate_repeaters(max_pattern_len, epsilon)?;
    let s = randomness_score(x, &space)?;
    Ok(ScoreOutput {
        sequence: x.clone(),
        length: x.len(),
        score: s.value.is_finite().then_some(s.value),
        map_hypothesis: s.map_hypothesis.map(|i| space.hypotheses()[i].model.to_string()),
        flagged: s.flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_argument_forms() {
        let want = BinarySequence::from_bit_str("0110").unwrap();
        assert_eq!(parse_sequence_arg("0110").unwrap(), want);
        assert_eq!(parse_sequence_arg("HTTH").unwrap(), want);
        assert_eq!(parse_sequence_arg("Heads, Tails, Tails, Heads").unwrap(), want);
        assert!(parse_sequence_arg("").is_err());
        assert!(parse_sequence_arg("Heads, maybe").is_err());
    }

    #[test]
    fn patterned_sequences_score_lower() {
        let pattern = score(&BinarySequence::from_bit_str("011011011011").unwrap(), 4, 0.05).unwrap();
        let messy = score(&BinarySequence::from_bit_str("010011101100").unwrap(), 4, 0.05).unwrap();
        assert!(pattern.score.unwrap() < messy.score.unwrap());
        assert!(pattern.score.unwrap() < 0.0);
        assert!(pattern.map_hypothesis.unwrap().contains("regular_repeater"));
    }
}
