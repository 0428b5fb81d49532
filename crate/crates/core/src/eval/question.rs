use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: char,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultipleChoiceQuestion {
    pub id: u32,
    pub stem: String,
    pub choices: Vec<Choice>,
    pub correct_label: char,
}

#[derive(Deserialize)]
struct RawChoice {
    label: String,
    text: String,
}

#[derive(Deserialize)]
struct RawQuestion {
    id: u32,
    stem: String,
    choices: Vec<RawChoice>,
    correct: String,
}

fn single_letter(s: &str) -> Option<char> {
    let mut chars = s.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c.to_ascii_lowercase()),
        _ => None,
    }
}

impl MultipleChoiceQuestion {
    /// Checks id, stem, 2 to 26 consecutive labels from `a`, and the correct label.
    pub fn validate(&self) -> Result<(), String> {
        if self.id == 0 {
            return Err("id must be positive".into());
        }
        if self.stem.trim().is_empty() {
            return Err("empty stem".into());
        }
        if !(2..=26).contains(&self.choices.len()) {
            return Err(format!("expected 2 to 26 choices, found {}", self.choices.len()));
        }
        for (i, choice) in self.choices.iter().enumerate() {
            let expected = (b'a' + i as u8) as char;
            if choice.label != expected {
                return Err(format!(
                    "choice {} has label `{}`, expected `{expected}`",
                    i + 1,
                    choice.label
                ));
            }
            if choice.text.trim().is_empty() {
                return Err(format!("choice `{}` has empty text", choice.label));
            }
        }
        if !self.choices.iter().any(|c| c.label == self.correct_label) {
            return Err(format!(
                "correct label `{}` is not among the choices",
                self.correct_label
            ));
        }
        Ok(())
    }

    pub fn choice(&self, label: char) -> Option<&Choice> {
        self.choices.iter().find(|c| c.label == label)
    }

    /// Same question with every choice removed. The result intentionally fails
    /// `validate`; it exists only to render a stem-only question block.
    pub fn without_choices(&self) -> Self {
        Self {
            choices: Vec::new(),
            ..self.clone()
        }
    }

    pub fn with_edited_choice(&self, label: char, new_text: &str) -> Result<Self, EvalError> {
        let label = label.to_ascii_lowercase();
        if new_text.trim().is_empty() {
            return Err(EvalError::Precondition("edited choice text is empty".into()));
        }
        let mut edited = self.clone();
        let choice = edited
            .choices
            .iter_mut()
            .find(|c| c.label == label)
            .ok_or_else(|| EvalError::Precondition(format!("question {} has no choice `{label}`", self.id)))?;
        choice.text = new_text.to_string();
        Ok(edited)
    }
}

pub fn parse_test(text: &str, origin: &str) -> Result<Vec<MultipleChoiceQuestion>, EvalError> {
    let invalid = |line: usize, reason: String| EvalError::InvalidTest {
        origin: origin.to_string(),
        line,
        reason,
    };
    let mut questions = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQuestion = serde_json::from_str(line).map_err(|e| invalid(line_no, e.to_string()))?;
        let choices = raw
            .choices
            .into_iter()
            .map(|c| {
                single_letter(&c.label)
                    .map(|label| Choice { label, text: c.text })
                    .ok_or_else(|| invalid(line_no, format!("malformed choice label `{}`", c.label)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let correct_label = single_letter(&raw.correct)
            .ok_or_else(|| invalid(line_no, format!("malformed correct label `{}`", raw.correct)))?;
        let question = MultipleChoiceQuestion {
            id: raw.id,
            stem: raw.stem,
            choices,
            correct_label,
        };
        question
            .validate()
            .map_err(|reason| invalid(line_no, format!("question {}: {reason}", question.id)))?;
        if !seen.insert(question.id) {
            return Err(invalid(line_no, format!("duplicate question id {}", question.id)));
        }
        questions.push(question);
    }
    if questions.is_empty() {
        return Err(EvalError::InvalidTest {
            origin: origin.to_string(),
            line: 0,
            reason: "test contains no questions".into(),
        });
    }
    Ok(questions)
}

pub fn load_test(path: &Path) -> Result<Vec<MultipleChoiceQuestion>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_test(&text, &path.display().to_string())
}
