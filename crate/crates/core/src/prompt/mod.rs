//! Prompt assembly: guard header, ranked context sections packed under a token
//! budget, then the question block.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{render_content, CorpusTable, FormattingMode};
use crate::eval::MultipleChoiceQuestion;
use crate::retrieval::RankedSection;
use crate::tokenizer::Tokenizer;

pub const GUARD_HEADER: &str = "Use the below text to answer the subsequent multiple-choice question. \
Pick only one correct answer. If the answer cannot be found, write 'I don't know.'";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error(
        "question does not fit: {required} tokens needed before any context, \
         but only {available} are available ({model_max} max minus {reserved} reserved)"
    )]
    Unsatisfiable {
        required: usize,
        available: usize,
        model_max: usize,
        reserved: usize,
    },
    #[error("ranked section `{0}` is not in the corpus")]
    UnknownSection(String),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptBudget {
    pub model_max_tokens: usize,
    pub context_budget_tokens: usize,
    pub reserved_completion_tokens: usize,
}

impl Default for PromptBudget {
    fn default() -> Self {
        Self::with_context(1900)
    }
}

impl PromptBudget {
    pub fn with_context(context_budget_tokens: usize) -> Self {
        Self {
            model_max_tokens: 2048,
            context_budget_tokens,
            reserved_completion_tokens: 64,
        }
    }

    /// Tokens the whole rendered prompt may occupy.
    pub fn prompt_limit(&self) -> usize {
        self.model_max_tokens.saturating_sub(self.reserved_completion_tokens)
    }

    fn validate(&self) -> Result<(), PromptError> {
        if self.model_max_tokens == 0 || self.context_budget_tokens == 0 || self.reserved_completion_tokens == 0 {
            return Err(PromptError::InvalidBudget("all budget fields must be positive".into()));
        }
        if self.reserved_completion_tokens >= self.model_max_tokens {
            return Err(PromptError::InvalidBudget(format!(
                "reserved completion tokens ({}) leave no room in a {}-token window",
                self.reserved_completion_tokens, self.model_max_tokens
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuestionLayout {
    /// Stem, then one line per choice.
    #[default]
    Multiline,
    /// Stem and choices on one line.
    Inline,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptStyle {
    pub mode: FormattingMode,
    pub layout: QuestionLayout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncludedSection {
    pub section_id: String,
    pub rendered_text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSection {
    pub section_id: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    /// Empty for question-only prompts.
    pub header: String,
    pub included_sections: Vec<IncludedSection>,
    pub question_block: String,
    /// Token count of the full rendered prompt.
    pub total_tokens: usize,
    /// First ranked section that did not fit; packing stopped there.
    pub skipped_first_overflow: Option<SkippedSection>,
}

impl AssembledPrompt {
    pub fn context_tokens(&self) -> usize {
        self.included_sections.iter().map(|s| s.token_count).sum()
    }

    pub fn render(&self) -> String {
        render_prompt(self)
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_question(q: &MultipleChoiceQuestion, layout: QuestionLayout) -> String {
    match layout {
        QuestionLayout::Multiline => {
            let mut out = q.stem.trim().to_string();
            for c in &q.choices {
                out.push_str(&format!("\n{}. {}", c.label, c.text.trim()));
            }
            out
        }
        QuestionLayout::Inline => {
            let mut parts = vec![one_line(&q.stem)];
            parts.extend(q.choices.iter().map(|c| format!("{}. {}", c.label, one_line(&c.text))));
            parts.join(" ")
        }
    }
}

fn render_parts(header: &str, sections: &[IncludedSection], question_block: &str) -> String {
    let mut blocks: Vec<String> = Vec::with_capacity(sections.len() + 2);
    if !header.is_empty() {
        blocks.push(header.to_string());
    }
    blocks.extend(sections.iter().map(|s| format!("Context:\n{}", s.rendered_text)));
    blocks.push(format!("Question:\n{question_block}\nAnswer:"));
    blocks.join("\n\n")
}

/// Header, blank line, `Context:` blocks separated by blank lines, blank line,
/// `Question:` block and a final `Answer:` line.
pub fn render_prompt(p: &AssembledPrompt) -> String {
    render_parts(&p.header, &p.included_sections, &p.question_block)
}

/// Packs ranked sections whole, in rank order, stopping at the first one that does
/// not fit. A section fits when the context total stays within the context budget
/// and the prompt stays within the model window minus the reserved completion
/// tokens.
///
/// Window usage is tracked as the question-only prompt plus each section's
/// `Context:` block counted on its own. Block boundaries fall on newlines, where
/// pre-tokenization already splits, so the sum normally equals the exact count. The
/// finished prompt is counted exactly and trailing sections are dropped in the rare
/// case the sum undershot.
pub fn assemble_prompt(
    ranked: &[RankedSection],
    corpus: &CorpusTable,
    question: &MultipleChoiceQuestion,
    budget: &PromptBudget,
    style: PromptStyle,
    tokenizer: &Tokenizer,
) -> Result<AssembledPrompt, PromptError> {
    budget.validate()?;
    let sections = ranked
        .iter()
        .map(|r| {
            corpus
                .get(&r.section_id)
                .ok_or_else(|| PromptError::UnknownSection(r.section_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let question_block = render_question(question, style.layout);
    let header = GUARD_HEADER.to_string();
    let limit = budget.prompt_limit();
    let base = tokenizer.count_tokens(&render_parts(&header, &[], &question_block));
    if base > limit {
        return Err(PromptError::Unsatisfiable {
            required: base,
            available: limit,
            model_max: budget.model_max_tokens,
            reserved: budget.reserved_completion_tokens,
        });
    }

    let mut included: Vec<IncludedSection> = Vec::new();
    let mut used = 0usize;
    let mut estimate = base;
    let mut skipped = None;
    for section in sections {
        let rendered_text = render_content(section, style.mode);
        let token_count = tokenizer.count_tokens(&rendered_text);
        let block = tokenizer.count_tokens(&format!("Context:\n{rendered_text}\n\n"));
        if used + token_count > budget.context_budget_tokens || estimate + block > limit {
            skipped = Some(SkippedSection {
                section_id: section.id.clone(),
                token_count,
            });
            break;
        }
        used += token_count;
        estimate += block;
        included.push(IncludedSection {
            section_id: section.id.clone(),
            rendered_text,
            token_count,
        });
    }

    let mut total = tokenizer.count_tokens(&render_parts(&header, &included, &question_block));
    while total > limit {
        let Some(last) = included.pop() else { break };
        log::debug!(
            "dropping section {} after exact prompt count {total} > {limit}",
            last.section_id
        );
        skipped = Some(SkippedSection {
            section_id: last.section_id,
            token_count: last.token_count,
        });
        total = tokenizer.count_tokens(&render_parts(&header, &included, &question_block));
    }

    Ok(AssembledPrompt {
        header,
        included_sections: included,
        question_block,
        total_tokens: total,
        skipped_first_overflow: skipped,
    })
}

/// Prompt for the no-context condition: no header, no sections.
pub fn assemble_question_only(
    question: &MultipleChoiceQuestion,
    layout: QuestionLayout,
    tokenizer: &Tokenizer,
) -> AssembledPrompt {
    let question_block = render_question(question, layout);
    let total_tokens = tokenizer.count_tokens(&render_parts("", &[], &question_block));
    AssembledPrompt {
        header: String::new(),
        included_sections: Vec::new(),
        question_block,
        total_tokens,
        skipped_first_overflow: None,
    }
}
