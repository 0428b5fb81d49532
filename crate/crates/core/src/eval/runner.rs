use serde::{Deserialize, Serialize};

use super::{
    match_answer, score_test, AnswerRecord, Choice, EvalError, EvaluationReport, MatchedLabel, MultipleChoiceQuestion,
    PromptTrace,
};
use crate::corpus::{CorpusTable, FormattingMode};
use crate::embedding::{Embedder, EmbeddingVector};
use crate::generation::{complete, Completion, CompletionBackend, CompletionRequest, RequestContext};
use crate::parallel::ordered_map;
use crate::prompt::{
    assemble_prompt, assemble_question_only, render_question, AssembledPrompt, PromptBudget, PromptStyle,
    QuestionLayout,
};
use crate::retrieval::{rank_sections, RankedSection, SimilarityMetric, VectorStore};
use crate::tokenizer::Tokenizer;

/// Number of ranked sections kept in a prompt trace.
const TRACE_TOP_K: usize = 5;

/// One experimental setting: with or without retrieved context, and how the
/// prompt is formatted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    /// `None` is the no-context condition: no header, no sections.
    pub budget: Option<PromptBudget>,
    pub style: PromptStyle,
}

impl Condition {
    pub fn no_context(layout: QuestionLayout) -> Self {
        let style = PromptStyle {
            mode: FormattingMode::default(),
            layout,
        };
        Self {
            name: decorate("No context".into(), None, style),
            budget: None,
            style,
        }
    }

    pub fn with_budget(budget: PromptBudget, style: PromptStyle) -> Self {
        Self {
            name: decorate(
                format!("Context {}", budget.context_budget_tokens),
                Some(&budget),
                style,
            ),
            budget: Some(budget),
            style,
        }
    }

    /// Scripted-response key prefix: `none` or the context budget, then `/comma`
    /// and `/inline` qualifiers when they apply.
    pub fn key(&self) -> String {
        let mut key = self
            .budget
            .map_or_else(|| "none".to_string(), |b| b.context_budget_tokens.to_string());
        if self.budget.is_some() && self.style.mode == FormattingMode::CommaJoined {
            key.push_str("/comma");
        }
        if self.style.layout == QuestionLayout::Inline {
            key.push_str("/inline");
        }
        key
    }

    /// Filesystem-friendly version of the key.
    pub fn slug(&self) -> String {
        self.key().replace('/', "-")
    }
}

fn decorate(mut name: String, budget: Option<&PromptBudget>, style: PromptStyle) -> String {
    if budget.is_some() && style.mode == FormattingMode::CommaJoined {
        name.push_str(" (comma-joined)");
    }
    if style.layout == QuestionLayout::Inline {
        name.push_str(" (inline)");
    }
    name
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub metric: SimilarityMetric,
    pub model_max_tokens: usize,
    pub reserved_completion_tokens: usize,
    /// Model parameters for every completion; the prompt field is ignored.
    pub request: CompletionRequest,
    /// Questions processed concurrently within one condition.
    pub max_in_flight: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        let budget = PromptBudget::default();
        Self {
            metric: SimilarityMetric::Cosine,
            model_max_tokens: budget.model_max_tokens,
            reserved_completion_tokens: budget.reserved_completion_tokens,
            request: CompletionRequest::new(""),
            max_in_flight: 2,
        }
    }
}

impl PipelineSettings {
    pub fn budget(&self, context_tokens: usize) -> PromptBudget {
        PromptBudget {
            model_max_tokens: self.model_max_tokens,
            context_budget_tokens: context_tokens,
            reserved_completion_tokens: self.reserved_completion_tokens,
        }
    }

    /// Budget 0 means no context.
    pub fn condition(&self, context_tokens: usize, style: PromptStyle) -> Condition {
        if context_tokens == 0 {
            Condition::no_context(style.layout)
        } else {
            Condition::with_budget(self.budget(context_tokens), style)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AblationVariant {
    DropChoices,
    EditChoice { label: char, new_text: String },
}

impl AblationVariant {
    fn key_suffix(&self) -> &'static str {
        match self {
            AblationVariant::DropChoices => "drop-choices",
            AblationVariant::EditChoice { .. } => "edit-choice",
        }
    }

    pub fn apply(&self, q: &MultipleChoiceQuestion) -> Result<MultipleChoiceQuestion, EvalError> {
        match self {
            AblationVariant::DropChoices => Ok(q.without_choices()),
            AblationVariant::EditChoice { label, new_text } => q.with_edited_choice(*label, new_text),
        }
    }
}

/// Original and modified question run under one condition with the same retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub condition_name: String,
    pub question_id: u32,
    pub variant: AblationVariant,
    pub original_block: String,
    pub variant_block: String,
    pub original: AnswerRecord,
    pub modified: AnswerRecord,
}

/// Renders outcomes as a table: one row per (condition, question form).
pub fn render_ablation_table(outcomes: &[AblationOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        for (form, block, record) in [
            ("original", &o.original_block, &o.original),
            (o.variant.key_suffix(), &o.variant_block, &o.modified),
        ] {
            out.push_str(&format!(
                "[{}] Q{} {form}\n  question: {}\n  answer:   {}\n  matched:  {} ({})\n",
                o.condition_name,
                o.question_id,
                block.replace('\n', " / "),
                record.raw_model_text,
                record.matched_label,
                if record.correct { "correct" } else { "incorrect" },
            ));
        }
    }
    out
}

/// The same test under preserved bullets and comma-joined formatting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatComparison {
    pub preserve: EvaluationReport,
    pub comma: EvaluationReport,
}

impl FormatComparison {
    pub fn reports(&self) -> [&EvaluationReport; 2] {
        [&self.preserve, &self.comma]
    }

    /// Question ids whose correctness differs between the two formats.
    pub fn changed_ids(&self) -> Vec<u32> {
        self.preserve
            .records
            .iter()
            .zip(&self.comma.records)
            .filter(|(a, b)| a.correct != b.correct)
            .map(|(a, _)| a.question_id)
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = super::render_summary_text(&[self.preserve.clone(), self.comma.clone()]);
        let changed = self.changed_ids();
        if changed.is_empty() {
            out.push_str("\nNo question changed outcome between formats.\n");
        } else {
            out.push_str("\nChanged outcome:\n");
            for id in changed {
                let find = |r: &EvaluationReport| r.records.iter().find(|x| x.question_id == id).cloned();
                let (a, b) = (find(&self.preserve), find(&self.comma));
                if let (Some(a), Some(b)) = (a, b) {
                    out.push_str(&format!(
                        "  Q{id}: bullets -> {} ({}), comma -> {} ({})\n",
                        a.matched_label,
                        if a.correct { "correct" } else { "incorrect" },
                        b.matched_label,
                        if b.correct { "correct" } else { "incorrect" },
                    ));
                }
            }
        }
        out
    }
}

/// Result of a single ad-hoc question.
#[derive(Debug, Clone)]
pub struct AskOutcome {
    pub ranked: Vec<RankedSection>,
    pub prompt: AssembledPrompt,
    pub completion: Completion,
    pub matched: MatchedLabel,
}

impl AskOutcome {
    /// Matched choice text when a choice was recognized, else the raw completion.
    pub fn answer_text(&self, q: &MultipleChoiceQuestion) -> String {
        match self.matched {
            MatchedLabel::Choice(label) => q
                .choice(label)
                .map_or_else(|| self.completion.text.clone(), |c| format!("{label}. {}", c.text)),
            _ => self.completion.text.clone(),
        }
    }
}

/// Splits free text into a stem and trailing choice lines such as `a. 5` or `b) 10`.
/// The result has id 0 and no meaningful correct label.
pub fn parse_question_text(text: &str) -> MultipleChoiceQuestion {
    let lines: Vec<&str> = text.trim().lines().collect();
    let parse_choice = |line: &str| -> Option<(char, String)> {
        let line = line.trim();
        let mut chars = line.chars();
        let label = chars.next()?.to_ascii_lowercase();
        let sep = chars.next()?;
        (label.is_ascii_lowercase() && matches!(sep, '.' | ')') && line[2..].starts_with(' '))
            .then(|| (label, line[2..].trim().to_string()))
    };
    let mut split = lines.len();
    while split > 1 && parse_choice(lines[split - 1]).is_some() {
        split -= 1;
    }
    let choices: Vec<Choice> = lines[split..]
        .iter()
        .filter_map(|l| parse_choice(l))
        .map(|(label, text)| Choice { label, text })
        .collect();
    let consecutive = choices
        .iter()
        .enumerate()
        .all(|(i, c)| c.label == (b'a' + i as u8) as char);
    let (stem_lines, choices) = if consecutive && !choices.is_empty() {
        (&lines[..split], choices)
    } else {
        (&lines[..], Vec::new())
    };
    MultipleChoiceQuestion {
        id: 0,
        stem: stem_lines.join("\n").trim().to_string(),
        correct_label: choices.first().map_or('a', |c| c.label),
        choices,
    }
}

/// Everything needed to answer questions: corpus, store, backends and settings.
#[derive(Debug)]
pub struct Pipeline<'a> {
    corpus: &'a CorpusTable,
    store: &'a VectorStore,
    embedder: &'a Embedder,
    backend: &'a dyn CompletionBackend,
    tokenizer: &'a Tokenizer,
    settings: PipelineSettings,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        corpus: &'a CorpusTable,
        store: &'a VectorStore,
        embedder: &'a Embedder,
        backend: &'a dyn CompletionBackend,
        tokenizer: &'a Tokenizer,
        settings: PipelineSettings,
    ) -> Result<Self, EvalError> {
        if let Some(missing) = store.entries().iter().find(|e| corpus.get(&e.section_id).is_none()) {
            return Err(EvalError::Consistency(format!(
                "store entry `{}` has no corpus section",
                missing.section_id
            )));
        }
        if embedder.dim() != store.dim() {
            return Err(EvalError::Consistency(format!(
                "embedder produces {}-dimensional vectors but the store holds {}",
                embedder.dim(),
                store.dim()
            )));
        }
        Ok(Self {
            corpus,
            store,
            embedder,
            backend,
            tokenizer,
            settings,
        })
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    /// Retrieval query for a question: stem and choices, one per line.
    pub fn question_text(q: &MultipleChoiceQuestion) -> String {
        render_question(q, QuestionLayout::Multiline)
    }

    pub fn embed_questions(&self, questions: &[MultipleChoiceQuestion]) -> Result<Vec<EmbeddingVector>, EvalError> {
        let texts: Vec<String> = questions.iter().map(Self::question_text).collect();
        Ok(self.embedder.embed_batch(&texts)?)
    }

    /// `pinned` replaces retrieval with a fixed candidate list.
    fn build_prompt(
        &self,
        shown: &MultipleChoiceQuestion,
        query: &EmbeddingVector,
        condition: &Condition,
        pinned: Option<&[RankedSection]>,
    ) -> Result<(AssembledPrompt, Vec<RankedSection>), EvalError> {
        match &condition.budget {
            None => Ok((
                assemble_question_only(shown, condition.style.layout, self.tokenizer),
                Vec::new(),
            )),
            Some(budget) => {
                let ranked = match pinned {
                    Some(p) => p.to_vec(),
                    None => rank_sections(query, self.store, self.settings.metric)?,
                };
                let prompt = assemble_prompt(&ranked, self.corpus, shown, budget, condition.style, self.tokenizer)?;
                Ok((prompt, ranked))
            }
        }
    }

    fn generate(&self, prompt: &AssembledPrompt, ctx: &RequestContext) -> Result<Completion, EvalError> {
        let request = CompletionRequest {
            prompt: prompt.render(),
            ..self.settings.request.clone()
        };
        complete(self.backend, &request, ctx).map_err(|source| EvalError::Generation {
            question_id: ctx.question_id.unwrap_or(0),
            source,
        })
    }

    /// Answers `shown` using retrieval driven by `query` and grades it.
    fn answer(
        &self,
        shown: &MultipleChoiceQuestion,
        query: &EmbeddingVector,
        condition: &Condition,
        key: String,
        pinned: Option<&[RankedSection]>,
    ) -> Result<AnswerRecord, EvalError> {
        let (prompt, ranked) = self.build_prompt(shown, query, condition, pinned)?;
        let ctx = RequestContext {
            question_id: Some(shown.id),
            condition: Some(key),
        };
        let completion = self.generate(&prompt, &ctx)?;
        let matched = match_answer(&completion.text, shown);
        let top = ranked
            .iter()
            .take(TRACE_TOP_K)
            .map(|r| (r.section_id.clone(), r.score))
            .collect();
        Ok(AnswerRecord {
            question_id: shown.id,
            raw_model_text: completion.text,
            matched_label: matched,
            correct_label: shown.correct_label,
            correct: matched == MatchedLabel::Choice(shown.correct_label),
            prompt_trace: Some(PromptTrace::from_prompt(&prompt, top)),
        })
    }

    /// Runs one condition over precomputed question embeddings.
    pub fn run_condition_with(
        &self,
        questions: &[MultipleChoiceQuestion],
        vectors: &[EmbeddingVector],
        condition: &Condition,
    ) -> Result<EvaluationReport, EvalError> {
        if questions.len() != vectors.len() {
            return Err(EvalError::Precondition(format!(
                "{} questions but {} query vectors",
                questions.len(),
                vectors.len()
            )));
        }
        let key = condition.key();
        let pairs: Vec<(&MultipleChoiceQuestion, &EmbeddingVector)> = questions.iter().zip(vectors).collect();
        let results = ordered_map(&pairs, self.settings.max_in_flight, |_, (q, v)| {
            self.answer(q, v, condition, key.clone(), None)
        });
        let mut completed = Vec::with_capacity(questions.len());
        let mut failure = None;
        for result in results.into_iter().flatten() {
            match result {
                Ok(record) => completed.push(record),
                Err(e) if failure.is_none() => failure = Some(e),
                Err(_) => {}
            }
        }
        if let Some(source) = failure {
            return Err(EvalError::Aborted {
                condition: condition.name.clone(),
                completed,
                completed_reports: Vec::new(),
                source: Box::new(source),
            });
        }
        score_test(
            completed,
            &condition.name,
            condition.budget.map(|b| b.context_budget_tokens),
        )
    }

    pub fn run_condition(
        &self,
        questions: &[MultipleChoiceQuestion],
        condition: &Condition,
    ) -> Result<EvaluationReport, EvalError> {
        let vectors = self.embed_questions(questions)?;
        self.run_condition_with(questions, &vectors, condition)
    }

    /// One report per budget, in the given order, preceded by the no-context
    /// baseline when requested. A budget of 0 is the no-context condition.
    pub fn run_sweep(
        &self,
        questions: &[MultipleChoiceQuestion],
        budgets: &[usize],
        baseline: bool,
        style: PromptStyle,
    ) -> Result<Vec<EvaluationReport>, EvalError> {
        if budgets.is_empty() && !baseline {
            return Err(EvalError::Precondition("sweep needs at least one budget".into()));
        }
        let mut conditions = Vec::new();
        if baseline {
            conditions.push(Condition::no_context(style.layout));
        }
        conditions.extend(budgets.iter().map(|&b| self.settings.condition(b, style)));
        self.run_conditions(questions, &conditions)
    }

    pub fn run_conditions(
        &self,
        questions: &[MultipleChoiceQuestion],
        conditions: &[Condition],
    ) -> Result<Vec<EvaluationReport>, EvalError> {
        let vectors = self.embed_questions(questions)?;
        let mut reports = Vec::with_capacity(conditions.len());
        for condition in conditions {
            match self.run_condition_with(questions, &vectors, condition) {
                Ok(report) => reports.push(report),
                Err(EvalError::Aborted {
                    condition,
                    completed,
                    source,
                    ..
                }) => {
                    return Err(EvalError::Aborted {
                        condition,
                        completed,
                        completed_reports: reports,
                        source,
                    })
                }
                Err(e) => return Err(e),
            }
        }
        Ok(reports)
    }

    /// Same questions at one budget with bullets preserved and comma-joined.
    pub fn run_format_comparison(
        &self,
        questions: &[MultipleChoiceQuestion],
        context_tokens: usize,
        layout: QuestionLayout,
    ) -> Result<FormatComparison, EvalError> {
        if context_tokens == 0 {
            return Err(EvalError::Precondition(
                "formatting comparison needs a positive context budget".into(),
            ));
        }
        let style = |mode| PromptStyle { mode, layout };
        let conditions = [
            self.settings
                .condition(context_tokens, style(FormattingMode::PreserveBullets)),
            self.settings
                .condition(context_tokens, style(FormattingMode::CommaJoined)),
        ];
        let mut reports = self.run_conditions(questions, &conditions)?.into_iter();
        match (reports.next(), reports.next()) {
            (Some(preserve), Some(comma)) => Ok(FormatComparison { preserve, comma }),
            _ => unreachable!("two conditions yield two reports"),
        }
    }

    /// Runs the original question and its variant under each condition. The variant
    /// is offered exactly the sections the original prompt included (minus any that
    /// no longer fit the model window).
    pub fn run_ablation(
        &self,
        question: &MultipleChoiceQuestion,
        variant: &AblationVariant,
        conditions: &[Condition],
    ) -> Result<Vec<AblationOutcome>, EvalError> {
        let modified = variant.apply(question)?;
        let query = self.embedder.embed_text(&Self::question_text(question))?;
        let mut outcomes = Vec::with_capacity(conditions.len());
        for condition in conditions {
            let key = condition.key();
            let original = self.answer(question, &query, condition, key.clone(), None)?;
            let included: Vec<&str> = original
                .prompt_trace
                .iter()
                .flat_map(|t| t.included_sections.iter().map(|s| s.section_id.as_str()))
                .collect();
            let pinned: Vec<RankedSection> = if condition.budget.is_some() {
                rank_sections(&query, self.store, self.settings.metric)?
                    .into_iter()
                    .filter(|r| included.contains(&r.section_id.as_str()))
                    .collect()
            } else {
                Vec::new()
            };
            let variant_key = format!("{key}/{}", variant.key_suffix());
            let mut variant_record = self.answer(&modified, &query, condition, variant_key, Some(&pinned))?;
            variant_record.correct_label = question.correct_label;
            outcomes.push(AblationOutcome {
                condition_name: condition.name.clone(),
                question_id: question.id,
                variant: variant.clone(),
                original_block: render_question(question, condition.style.layout),
                variant_block: render_question(&modified, condition.style.layout),
                original,
                modified: variant_record,
            });
        }
        Ok(outcomes)
    }

    /// Answers a single question; `question.id` of 0 means an ad-hoc question, which
    /// scripted backends can only resolve by prompt hash.
    pub fn ask(&self, question: &MultipleChoiceQuestion, condition: &Condition) -> Result<AskOutcome, EvalError> {
        let query = self.embedder.embed_text(&Self::question_text(question))?;
        let (prompt, ranked) = self.build_prompt(question, &query, condition, None)?;
        let ctx = RequestContext {
            question_id: (question.id > 0).then_some(question.id),
            condition: Some(condition.key()),
        };
        let completion = self.generate(&prompt, &ctx)?;
        let matched = if question.choices.is_empty() {
            MatchedLabel::Unmatched
        } else {
            match_answer(&completion.text, question)
        };
        Ok(AskOutcome {
            ranked,
            prompt,
            completion,
            matched,
        })
    }
}
