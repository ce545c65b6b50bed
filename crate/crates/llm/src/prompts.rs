//! Prompt templates for generation and judgment tasks.

use flipscope_core::seqcore::render;
use flipscope_core::{BinarySequence, TokenFormat};

use crate::config::ProviderKind;
use crate::record::{Message, Prompt};

pub const SYSTEM_PROMPT: &str = "Your responses will only consist of comma-separated \"Heads\" and \"Tails\" samples.\nDo not repeat the user's messages in your responses.";

pub const JUDGMENT_QUESTION: &str = "Is the following sequence of coin flips generated by a random process with no pattern, or are they generated by a non-random algorithm?";

pub const RANDOM_TOKEN: &str = "Random";
pub const NON_TOKEN: &str = "Non";

/// `0.7` -> `"70"`, `0.495` -> `"49.5"`. Rounded to two decimals.
pub fn percent(fraction: f64) -> String {
    let hundredths = (fraction * 10_000.0).round() as i64;
    let whole = hundredths / 100;
    let rest = (hundredths % 100).abs();
    if rest == 0 {
        format!("{whole}")
    } else if rest % 10 == 0 {
        format!("{whole}.{}", rest / 10)
    } else {
        format!("{whole}.{rest:02}")
    }
}

pub fn generation_request(p_tails: f64) -> String {
    format!(
        "Generate a sequence of 1000 random samples from a weighted coin, with {}% probability of Heads and {}% probability of Tails.",
        percent(1.0 - p_tails),
        percent(p_tails)
    )
}

/// The three-message chat form: system, user, and an assistant turn that
/// opens the list with the given flips.
pub fn chat_wrap(p_tails: f64, sequence: &BinarySequence) -> Vec<Message> {
    let format = TokenFormat::default();
    vec![
        Message::new("system", SYSTEM_PROMPT),
        Message::new("user", generation_request(p_tails)),
        Message::new("assistant", format!("[ {}", render(sequence, &format))),
    ]
}

/// Opening bracket plus the flips, ending in a separator so the next token is
/// a flip.
fn open_list(sequence: &BinarySequence, format: &TokenFormat) -> String {
    if sequence.is_empty() {
        "[ ".to_string()
    } else {
        format!("[ {}{}", render(sequence, format), format.separator().trim_end())
    }
}

pub fn generation_prompt(kind: ProviderKind, p_tails: f64, sequence: &BinarySequence) -> Prompt {
    match kind {
        ProviderKind::RemoteChat => Prompt::Chat(chat_wrap(p_tails, sequence)),
        _ => Prompt::Text(format!(
            "{}\n\n{}",
            generation_request(p_tails),
            open_list(sequence, &TokenFormat::default())
        )),
    }
}

pub fn judgment_prompt(sequence: &BinarySequence) -> Prompt {
    let format = TokenFormat::default();
    Prompt::Text(format!(
        "{JUDGMENT_QUESTION}\n\n[ {} ]\n\nAnswer:",
        render(sequence, &format)
    ))
}

pub fn is_judgment(text: &str) -> bool {
    text.contains(JUDGMENT_QUESTION)
}
