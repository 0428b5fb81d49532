use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::MultipleChoiceQuestion;

/// Outcome of mapping free model text onto a question's choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchedLabel {
    Choice(char),
    Abstain,
    Unmatched,
}

impl MatchedLabel {
    pub fn label(self) -> Option<char> {
        match self {
            MatchedLabel::Choice(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for MatchedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchedLabel::Choice(c) => write!(f, "{c}"),
            MatchedLabel::Abstain => f.write_str("ABSTAIN"),
            MatchedLabel::Unmatched => f.write_str("UNMATCHED"),
        }
    }
}

impl Serialize for MatchedLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MatchedLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "ABSTAIN" => Ok(Self::Abstain),
            "UNMATCHED" => Ok(Self::Unmatched),
            _ => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_lowercase() => Ok(Self::Choice(c)),
                    _ => Err(serde::de::Error::custom(format!("invalid matched label `{s}`"))),
                }
            }
        }
    }
}

/// Casefolds, unifies apostrophes, expands "don't", drops punctuation and collapses
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.replace(['\u{2019}', '\u{2018}', '`'], "'").to_lowercase();
    let expanded = lowered.replace("don't", "do not");
    let stripped: String = expanded
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else if c == '-' {
                ' '
            } else {
                '\0'
            }
        })
        .filter(|&c| c != '\0')
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn leading_label(raw: &str, q: &MultipleChoiceQuestion) -> Option<char> {
    let text = raw.trim_start();
    let text = text.strip_prefix('(').unwrap_or(text);
    let mut chars = text.chars();
    let first = chars.next()?;
    let next = chars.next();
    let label = first.to_ascii_lowercase();
    q.choice(label)?;
    let punct = matches!(next, Some('.' | ')' | ':'));
    // A bare capital letter followed by a space is usually the article "A", so
    // uppercase labels need explicit punctuation.
    let accepted = if first.is_ascii_lowercase() {
        punct || next.is_none_or(char::is_whitespace)
    } else {
        first.is_ascii_uppercase() && punct
    };
    accepted.then_some(label)
}

pub fn match_answer(raw: &str, q: &MultipleChoiceQuestion) -> MatchedLabel {
    let normalized = normalize_answer(raw);
    if normalized.contains("i do not know") {
        return MatchedLabel::Abstain;
    }
    if let Some(label) = leading_label(raw, q) {
        return MatchedLabel::Choice(label);
    }
    if normalized.is_empty() {
        return MatchedLabel::Unmatched;
    }
    let choices: Vec<(char, String)> = q.choices.iter().map(|c| (c.label, normalize_answer(&c.text))).collect();
    if let Some((label, _)) = choices.iter().find(|(_, text)| *text == normalized) {
        return MatchedLabel::Choice(*label);
    }
    let mut hits = choices
        .iter()
        .filter(|(_, text)| !text.is_empty() && contains_words(&normalized, text));
    match (hits.next(), hits.next()) {
        (Some((label, _)), None) => MatchedLabel::Choice(*label),
        _ => MatchedLabel::Unmatched,
    }
}

/// Substring test aligned to word boundaries, so "5" does not hit inside "15".
fn contains_words(haystack: &str, needle: &str) -> bool {
    let padded = format!(" {haystack} ");
    padded.contains(&format!(" {needle} "))
}
