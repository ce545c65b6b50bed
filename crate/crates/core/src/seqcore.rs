//! Binary flip sequences: representation, text parsing/rendering and the
//! descriptive statistics every downstream metric builds on.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SeqError {
    #[error("statistic undefined on an empty sequence")]
    Empty,
    #[error("statistic needs at least {needed} flips, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("window length {k} out of range for sequence of length {len}")]
    WindowOutOfRange { k: usize, len: usize },
    #[error("invalid flip character {0:?} (expected '0' or '1')")]
    InvalidBit(char),
    #[error("invalid token format: {0}")]
    InvalidFormat(&'static str),
}

/// One coin flip. `Heads` is 0, `Tails` is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flip {
    Heads,
    Tails,
}

impl Flip {
    #[inline]
    pub fn bit(self) -> u8 {
        match self {
            Flip::Heads => 0,
            Flip::Tails => 1,
        }
    }

    #[inline]
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Flip::Tails
        } else {
            Flip::Heads
        }
    }

    #[inline]
    pub fn flipped(self) -> Self {
        match self {
            Flip::Heads => Flip::Tails,
            Flip::Tails => Flip::Heads,
        }
    }

    #[inline]
    pub fn is_tails(self) -> bool {
        self == Flip::Tails
    }
}

/// An immutable ordered run of flips.
///
/// Ordering is lexicographic on the flips, then by length, which makes the
/// type usable as a key in sorted multisets (`subsequences`).
#[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BinarySequence {
    flips: Vec<Flip>,
}

impl BinarySequence {
    pub fn new(flips: Vec<Flip>) -> Self {
        Self { flips }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_bits<I: IntoIterator<Item = u8>>(bits: I) -> Self {
        bits.into_iter().map(|b| Flip::from_bit(b != 0)).collect()
    }

    /// Parse the compact `"0110"` persistence form.
    pub fn from_bit_str(s: &str) -> Result<Self, SeqError> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(Flip::Heads),
                '1' => Ok(Flip::Tails),
                other => Err(SeqError::InvalidBit(other)),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self::new)
    }

    /// `pattern` repeated `n` times.
    pub fn repeat(pattern: &BinarySequence, n: usize) -> Self {
        Self::new(pattern.flips.repeat(n))
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    pub fn flips(&self) -> &[Flip] {
        &self.flips
    }

    pub fn get(&self, i: usize) -> Option<Flip> {
        self.flips.get(i).copied()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = Flip> + ExactSizeIterator + '_ {
        self.flips.iter().copied()
    }

    pub fn bits(&self) -> impl Iterator<Item = u8> + '_ {
        self.flips.iter().map(|f| f.bit())
    }

    pub fn ones(&self) -> usize {
        self.flips.iter().filter(|f| f.is_tails()).count()
    }

    /// Compact `"0"`/`"1"` rendering used for persistence and compression.
    pub fn to_bit_string(&self) -> String {
        self.flips
            .iter()
            .map(|f| if f.is_tails() { '1' } else { '0' })
            .collect()
    }

    pub fn prefix(&self, len: usize) -> BinarySequence {
        Self::new(self.flips[..len.min(self.flips.len())].to_vec())
    }

    pub fn slice(&self, start: usize, end: usize) -> BinarySequence {
        Self::new(self.flips[start..end].to_vec())
    }

    /// A new sequence with `flip` appended.
    pub fn pushed(&self, flip: Flip) -> BinarySequence {
        let mut flips = Vec::with_capacity(self.flips.len() + 1);
        flips.extend_from_slice(&self.flips);
        flips.push(flip);
        Self::new(flips)
    }

    pub fn concat(&self, other: &BinarySequence) -> BinarySequence {
        let mut flips = Vec::with_capacity(self.len() + other.len());
        flips.extend_from_slice(&self.flips);
        flips.extend_from_slice(&other.flips);
        Self::new(flips)
    }

    pub fn into_vec(self) -> Vec<Flip> {
        self.flips
    }
}

impl FromIterator<Flip> for BinarySequence {
    fn from_iter<T: IntoIterator<Item = Flip>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

impl fmt::Debug for BinarySequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinarySequence({})", self.to_bit_string())
    }
}

impl fmt::Display for BinarySequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

impl FromStr for BinarySequence {
    type Err = SeqError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_bit_str(s)
    }
}

impl Serialize for BinarySequence {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_bit_string())
    }
}

impl<'de> Deserialize<'de> for BinarySequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::from_bit_str(&s).map_err(serde::de::Error::custom)
    }
}

/// Surface spelling of flips in prompts and model output.
///
/// Tokens must start with an alphanumeric character and neither may be a
/// prefix of the other (ASCII case-insensitively); the separator may only
/// contain non-alphanumeric characters. Under those rules greedy parsing
/// inverts [`render`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenFormat {
    heads_token: String,
    tails_token: String,
    separator: String,
}

impl Default for TokenFormat {
    fn default() -> Self {
        Self {
            heads_token: "Heads".into(),
            tails_token: "Tails".into(),
            separator: ", ".into(),
        }
    }
}

impl TokenFormat {
    pub fn new(
        heads_token: impl Into<String>,
        tails_token: impl Into<String>,
        separator: impl Into<String>,
    ) -> Result<Self, SeqError> {
        let format = Self {
            heads_token: heads_token.into(),
            tails_token: tails_token.into(),
            separator: separator.into(),
        };
        format.validate()?;
        Ok(format)
    }

    pub fn validate(&self) -> Result<(), SeqError> {
        let (h, t) = (&self.heads_token, &self.tails_token);
        if h.is_empty() || t.is_empty() {
            return Err(SeqError::InvalidFormat("tokens must be non-empty"));
        }
        let starts_alnum = |s: &str| s.chars().next().is_some_and(char::is_alphanumeric);
        if !starts_alnum(h) || !starts_alnum(t) {
            return Err(SeqError::InvalidFormat("tokens must start alphanumeric"));
        }
        let (hl, tl) = (h.to_ascii_lowercase(), t.to_ascii_lowercase());
        if hl.starts_with(&tl) || tl.starts_with(&hl) {
            return Err(SeqError::InvalidFormat(
                "tokens must differ and neither may prefix the other",
            ));
        }
        if self.separator.chars().any(char::is_alphanumeric) {
            return Err(SeqError::InvalidFormat(
                "separator may not contain alphanumeric characters",
            ));
        }
        Ok(())
    }

    pub fn heads_token(&self) -> &str {
        &self.heads_token
    }

    pub fn tails_token(&self) -> &str {
        &self.tails_token
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    pub fn token(&self, flip: Flip) -> &str {
        match flip {
            Flip::Heads => &self.heads_token,
            Flip::Tails => &self.tails_token,
        }
    }

    /// Which flip a bare token names, if any. Whitespace is stripped, the
    /// comparison is ASCII case-insensitive.
    pub fn classify(&self, token: &str) -> Option<Flip> {
        let token = token.trim();
        if token.eq_ignore_ascii_case(&self.heads_token) {
            Some(Flip::Heads)
        } else if token.eq_ignore_ascii_case(&self.tails_token) {
            Some(Flip::Tails)
        } else {
            None
        }
    }

    fn match_at(&self, rest: &str) -> Option<(Flip, usize)> {
        let matches = |tok: &str| {
            rest.len() >= tok.len()
                && rest.is_char_boundary(tok.len())
                && rest[..tok.len()].eq_ignore_ascii_case(tok)
        };
        // Longer token first; the prefix-free rule makes this unambiguous.
        let mut candidates = [
            (Flip::Heads, self.heads_token.as_str()),
            (Flip::Tails, self.tails_token.as_str()),
        ];
        candidates.sort_by_key(|(_, tok)| std::cmp::Reverse(tok.len()));
        candidates
            .into_iter()
            .find(|(_, tok)| matches(tok))
            .map(|(flip, tok)| (flip, tok.len()))
    }
}

/// Result of [`parse_flips`]: the parsed prefix plus diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFlips {
    pub sequence: BinarySequence,
    /// Separator/punctuation/whitespace characters passed over before the
    /// stop point.
    pub skipped_chars: usize,
    /// Byte offset where parsing stopped; `None` if the whole input parsed.
    pub stopped_at: Option<usize>,
}

impl ParsedFlips {
    /// Characters left unparsed after the stop point.
    pub fn unparsed<'a>(&self, text: &'a str) -> &'a str {
        self.stopped_at.map_or("", |i| &text[i..])
    }
}

fn is_skippable(c: char, separator: &str) -> bool {
    c.is_whitespace() || c.is_ascii_punctuation() || separator.contains(c)
}

/// Parse the maximal prefix of whole flip tokens in `text`.
///
/// Separators, whitespace and ASCII punctuation between tokens are skipped.
/// Parsing stops at the first thing that is neither, or at a token that runs
/// into further alphanumeric text (`"Headsy"`). No token parsing yields an
/// empty sequence, never an error.
pub fn parse_flips(text: &str, format: &TokenFormat) -> ParsedFlips {
    let mut flips = Vec::new();
    let mut skipped = 0usize;
    let mut pos = 0usize;
    while pos < text.len() {
        let rest = &text[pos..];
        if let Some((flip, len)) = format.match_at(rest) {
            let after = &rest[len..];
            let boundary_ok = match after.chars().next() {
                None => true,
                Some(c) if !c.is_alphanumeric() => true,
                Some(_) => format.match_at(after).is_some(),
            };
            if !boundary_ok {
                return ParsedFlips {
                    sequence: BinarySequence::new(flips),
                    skipped_chars: skipped,
                    stopped_at: Some(pos),
                };
            }
            flips.push(flip);
            pos += len;
            continue;
        }
        let c = rest.chars().next().expect("non-empty remainder");
        if is_skippable(c, &format.separator) {
            skipped += 1;
            pos += c.len_utf8();
        } else {
            return ParsedFlips {
                sequence: BinarySequence::new(flips),
                skipped_chars: skipped,
                stopped_at: Some(pos),
            };
        }
    }
    ParsedFlips {
        sequence: BinarySequence::new(flips),
        skipped_chars: skipped,
        stopped_at: None,
    }
}

pub fn render(seq: &BinarySequence, format: &TokenFormat) -> String {
    let mut out = String::new();
    for (i, flip) in seq.iter().enumerate() {
        if i > 0 {
            out.push_str(&format.separator);
        }
        out.push_str(format.token(flip));
    }
    out
}

pub fn mean(seq: &BinarySequence) -> Result<f64, SeqError> {
    if seq.is_empty() {
        return Err(SeqError::Empty);
    }
    Ok(seq.ones() as f64 / seq.len() as f64)
}

pub fn running_mean(seq: &BinarySequence) -> Result<Vec<f64>, SeqError> {
    if seq.is_empty() {
        return Err(SeqError::Empty);
    }
    let mut ones = 0usize;
    Ok(seq
        .iter()
        .enumerate()
        .map(|(t, f)| {
            ones += f.bit() as usize;
            ones as f64 / (t + 1) as f64
        })
        .collect())
}

/// Length of the longest maximal constant run; 0 for the empty sequence.
pub fn longest_run(seq: &BinarySequence) -> usize {
    let mut best = 0;
    let mut current = 0;
    let mut prev = None;
    for flip in seq.iter() {
        current = if Some(flip) == prev { current + 1 } else { 1 };
        best = best.max(current);
        prev = Some(flip);
    }
    best
}

/// Fraction of adjacent pairs that differ.
pub fn alternation_rate(seq: &BinarySequence) -> Result<f64, SeqError> {
    if seq.len() < 2 {
        return Err(SeqError::TooShort {
            needed: 2,
            got: seq.len(),
        });
    }
    let changes = seq.flips().windows(2).filter(|w| w[0] != w[1]).count();
    Ok(changes as f64 / (seq.len() - 1) as f64)
}

/// All contiguous length-`k` windows with multiplicities.
pub fn subsequences(
    seq: &BinarySequence,
    k: usize,
) -> Result<BTreeMap<BinarySequence, usize>, SeqError> {
    if k == 0 || k > seq.len() {
        return Err(SeqError::WindowOutOfRange { k, len: seq.len() });
    }
    let mut counts = BTreeMap::new();
    for window in seq.flips().windows(k) {
        *counts.entry(BinarySequence::new(window.to_vec())).or_insert(0) += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(s: &str) -> BinarySequence {
        BinarySequence::from_bit_str(s).unwrap()
    }

    #[test]
    fn parse_examples() {
        let f = TokenFormat::default();
        assert_eq!(parse_flips("Heads, Tails, Tails", &f).sequence, bits("011"));
        let p = parse_flips("Heads,Tails,banana,Tails", &f);
        assert_eq!(p.sequence, bits("01"));
        assert_eq!(p.unparsed("Heads,Tails,banana,Tails"), "banana,Tails");
        let p = parse_flips("", &f);
        assert!(p.sequence.is_empty());
        assert_eq!(p.stopped_at, None);
    }

    #[test]
    fn parse_handles_chat_noise() {
        let f = TokenFormat::default();
        let text = "[ heads, TAILS, \"Tails\".]\n";
        let p = parse_flips(text, &f);
        assert_eq!(p.sequence, bits("011"));
        assert_eq!(p.stopped_at, None);
        assert!(p.skipped_chars > 0);
    }

    #[test]
    fn parse_stops_on_glued_word() {
        let f = TokenFormat::default();
        let p = parse_flips("Heads, Tailspin, Heads", &f);
        assert_eq!(p.sequence, bits("0"));
        assert_eq!(p.stopped_at, Some(7));
    }

    #[test]
    fn parse_without_separator() {
        let f = TokenFormat::new("H", "T", "").unwrap();
        assert_eq!(parse_flips("HTTH", &f).sequence, bits("0110"));
        assert_eq!(render(&bits("0110"), &f), "HTTH");
    }

    #[test]
    fn render_examples() {
        let f = TokenFormat::default();
        assert_eq!(render(&bits("01"), &f), "Heads, Tails");
        assert_eq!(render(&BinarySequence::empty(), &f), "");
        assert_eq!(render(&bits("110"), &f), "Tails, Tails, Heads");
    }

    #[test]
    fn format_validation() {
        assert!(TokenFormat::new("Heads", "heads", ", ").is_err());
        assert!(TokenFormat::new("", "T", ", ").is_err());
        assert!(TokenFormat::new("H", "Ho", ", ").is_err());
        assert!(TokenFormat::new("H", "T", " and ").is_err());
        assert!(TokenFormat::new("0", "1", "").is_ok());
    }

    #[test]
    fn stats_examples() {
        assert_eq!(mean(&bits("0111")).unwrap(), 0.75);
        assert_eq!(mean(&bits("00")).unwrap(), 0.0);
        assert_eq!(mean(&bits("01")).unwrap(), 0.5);
        assert_eq!(mean(&BinarySequence::empty()), Err(SeqError::Empty));

        assert_eq!(running_mean(&bits("10")).unwrap(), vec![1.0, 0.5]);
        assert_eq!(running_mean(&bits("000")).unwrap(), vec![0.0; 3]);
        assert_eq!(running_mean(&bits("011")).unwrap(), vec![0.0, 0.5, 2.0 / 3.0]);
        assert!(running_mean(&BinarySequence::empty()).is_err());

        assert_eq!(longest_run(&bits("01111111")), 7);
        assert_eq!(longest_run(&bits("0101")), 1);
        assert_eq!(longest_run(&BinarySequence::empty()), 0);

        assert_eq!(alternation_rate(&bits("0101")).unwrap(), 1.0);
        assert_eq!(alternation_rate(&bits("0000")).unwrap(), 0.0);
        assert_eq!(alternation_rate(&bits("011")).unwrap(), 0.5);
        assert!(alternation_rate(&bits("1")).is_err());
    }

    #[test]
    fn subsequence_examples() {
        let m = subsequences(&bits("011"), 2).unwrap();
        assert_eq!(m, BTreeMap::from([(bits("01"), 1), (bits("11"), 1)]));
        let m = subsequences(&bits("010101"), 2).unwrap();
        assert_eq!(m, BTreeMap::from([(bits("01"), 3), (bits("10"), 2)]));
        let m = subsequences(&bits("00000"), 3).unwrap();
        assert_eq!(m, BTreeMap::from([(bits("000"), 3)]));
        assert!(subsequences(&bits("01"), 3).is_err());
        assert!(subsequences(&bits("01"), 0).is_err());
    }

    #[test]
    fn repeater_distinct_windows_bounded_by_period() {
        for len in 1..=4usize {
            for code in 0..(1u32 << len) {
                let pattern = BinarySequence::from_bits((0..len).map(|i| ((code >> i) & 1) as u8));
                let seq = BinarySequence::repeat(&pattern, 60 / len + 1);
                for k in 1..=25 {
                    let distinct = subsequences(&seq, k).unwrap().len();
                    assert!(distinct <= len, "pattern {pattern} k {k}: {distinct}");
                }
            }
        }
    }

    fn arb_seq(max: usize) -> impl Strategy<Value = BinarySequence> {
        proptest::collection::vec(any::<bool>(), 0..max)
            .prop_map(|v| v.into_iter().map(Flip::from_bit).collect())
    }

    fn arb_format() -> impl Strategy<Value = TokenFormat> {
        let token = "[A-Za-z][a-z0-9]{0,5}";
        (token, token, "[ ,;|\\-]{0,3}").prop_filter_map("valid format", |(h, t, s)| {
            TokenFormat::new(h, t, s).ok()
        })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(seq in arb_seq(40), format in arb_format()) {
            let text = render(&seq, &format);
            let parsed = parse_flips(&text, &format);
            prop_assert_eq!(parsed.sequence, seq);
            prop_assert_eq!(parsed.stopped_at, None);
        }

        #[test]
        fn bit_string_round_trip(seq in arb_seq(64)) {
            prop_assert_eq!(BinarySequence::from_bit_str(&seq.to_bit_string()).unwrap(), seq);
        }

        #[test]
        fn stat_laws(seq in arb_seq(64), k in 1usize..8) {
            if !seq.is_empty() {
                let rm = running_mean(&seq).unwrap();
                prop_assert_eq!(*rm.last().unwrap(), mean(&seq).unwrap());
            }
            if seq.len() >= 2 {
                prop_assert_eq!(longest_run(&seq) == 1, alternation_rate(&seq).unwrap() == 1.0);
            }
            if k <= seq.len() {
                let total: usize = subsequences(&seq, k).unwrap().values().sum();
                prop_assert_eq!(total, seq.len() - k + 1);
            }
        }
    }
}
