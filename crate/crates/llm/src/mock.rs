//! In-process provider simulating a language model from a [`MockSpec`].

use std::borrow::Cow;

use flipscope_core::bayes::{posterior, predictive_next, HypothesisSpace, PredictiveMode};
use flipscope_core::seqcore::parse_flips;
use flipscope_core::{BinarySequence, Flip, ModelSpec, SeededRng, TokenFormat};

use crate::config::MockSpec;
use crate::prompts::{is_judgment, NON_TOKEN, RANDOM_TOKEN};
use crate::record::{Alternative, TokenLogprob};

#[derive(Debug, Clone)]
pub struct Mock {
    model: Option<ModelSpec>,
    follow_prompt: bool,
    space: Option<(HypothesisSpace, PredictiveMode)>,
    format: TokenFormat,
}

/// A mock's answer: text plus one logprob entry per answer token.
#[derive(Debug, Clone, PartialEq)]
pub struct MockResponse {
    pub text: String,
    pub tokens: Vec<TokenLogprob>,
}

impl Mock {
    pub fn new(spec: &MockSpec) -> Result<Self, String> {
        let format = TokenFormat::default();
        match spec {
            MockSpec::Model {
                model,
                follow_prompt,
            } => {
                model.validate().map_err(|e| e.to_string())?;
                Ok(Self {
                    model: Some(model.clone()),
                    follow_prompt: *follow_prompt,
                    space: None,
                    format,
                })
            }
            MockSpec::Bayes { mode, .. } => {
                let space = spec.space().map_err(|e| e.to_string())?.expect("bayes space");
                Ok(Self {
                    model: None,
                    follow_prompt: false,
                    space: Some((space, *mode)),
                    format,
                })
            }
        }
    }

    /// Flips after the last `[` in the prompt.
    pub fn context(&self, prompt: &str) -> BinarySequence {
        let tail = prompt.rfind('[').map_or(prompt, |i| &prompt[i + 1..]);
        parse_flips(tail, &self.format).sequence
    }

    /// The model answering `prompt`: the configured one, or with its base
    /// rate replaced by the prompt's P(Tails) when following the prompt.
    fn model_for(&self, prompt: &str) -> Option<Cow<'_, ModelSpec>> {
        let model = self.model.as_ref()?;
        if !self.follow_prompt {
            return Some(Cow::Borrowed(model));
        }
        Some(match requested_p(prompt) {
            Some(p) => Cow::Owned(with_base_rate(model, p)),
            None => Cow::Borrowed(model),
        })
    }

    pub fn prob_tails(&self, prompt: &str, context: &BinarySequence) -> Result<f64, String> {
        match (self.model_for(prompt), &self.space) {
            (Some(model), _) => Ok(model.next_prob(context)),
            (None, Some((space, mode))) => {
                predictive_next(space, context, *mode).map_err(|e| e.to_string())
            }
            _ => unreachable!("mock holds a model or a space"),
        }
    }

    /// Probability the sequence is judged random.
    pub fn prob_random(&self, context: &BinarySequence) -> Result<f64, String> {
        match &self.space {
            None => Ok(1.0),
            Some((space, _)) => posterior(space, context)
                .map(|post| post.weight(space.random_index()))
                .map_err(|e| e.to_string()),
        }
    }

    /// Answer `prompt`. Flip prompts get `max_tokens / 2` flips (a word and a
    /// separator each); judgment prompts get one Random/Non token.
    pub fn respond(&self, prompt: &str, max_tokens: u32, seed: u64) -> Result<MockResponse, String> {
        let mut rng = SeededRng::new(seed);
        let lead = if prompt.ends_with(char::is_whitespace) || prompt.is_empty() {
            ""
        } else {
            " "
        };
        let mut context = self.context(prompt);
        if is_judgment(prompt) {
            let p = self.prob_random(&context)?;
            let word = if rng.bernoulli(p) { RANDOM_TOKEN } else { NON_TOKEN };
            let token = format!("{lead}{word}");
            let alternatives = distribution(&[(RANDOM_TOKEN, p), (NON_TOKEN, 1.0 - p)], lead);
            let logprob = if word == RANDOM_TOKEN { p.ln() } else { (1.0 - p).ln() };
            return Ok(MockResponse {
                text: token.clone(),
                tokens: vec![TokenLogprob {
                    token,
                    logprob,
                    alternatives,
                }],
            });
        }
        let count = (max_tokens / 2).max(1) as usize;
        let mut text = String::new();
        let mut tokens = Vec::with_capacity(count);
        for i in 0..count {
            let p = self.prob_tails(prompt, &context)?;
            let flip = Flip::from_bit(rng.bernoulli(p));
            let space = if i == 0 { lead } else { " " };
            let token = format!("{space}{}", self.format.token(flip));
            if i > 0 {
                text.push(',');
            }
            text.push_str(&token);
            tokens.push(TokenLogprob {
                logprob: if flip.is_tails() { p.ln() } else { (1.0 - p).ln() },
                alternatives: distribution(
                    &[
                        (self.format.heads_token(), 1.0 - p),
                        (self.format.tails_token(), p),
                    ],
                    space,
                ),
                token,
            });
            context = context.pushed(flip);
        }
        Ok(MockResponse { text, tokens })
    }
}

/// P(Tails) requested by a generation prompt: the number before
/// "% probability of Tails".
pub fn requested_p(prompt: &str) -> Option<f64> {
    let end = prompt.rfind("% probability of Tails")?;
    let head = &prompt[..end];
    let start = head
        .rfind(|c: char| !(c.is_ascii_digit() || c == '.'))
        .map_or(0, |i| i + 1);
    let p = head[start..].parse::<f64>().ok()? / 100.0;
    (0.0..=1.0).contains(&p).then_some(p)
}

fn with_base_rate(model: &ModelSpec, p: f64) -> ModelSpec {
    match model {
        ModelSpec::Bernoulli { .. } => ModelSpec::Bernoulli { p },
        ModelSpec::WindowAverage { w, .. } => ModelSpec::WindowAverage { p, w: *w },
        other => other.clone(),
    }
}

/// Alternatives with non-zero probability, most likely first.
fn distribution(options: &[(&str, f64)], lead: &str) -> Vec<Alternative> {
    let mut out: Vec<Alternative> = options
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(word, p)| Alternative {
            token: format!("{lead}{word}"),
            logprob: p.ln(),
        })
        .collect();
    out.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    out
}
