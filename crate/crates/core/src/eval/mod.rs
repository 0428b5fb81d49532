//! Test loading, answer matching, scoring and the experiment runners.

mod matching;
mod question;
mod report;
mod runner;

use std::path::PathBuf;

use thiserror::Error;

use crate::embedding::EmbeddingError;
use crate::generation::GenerationError;
use crate::prompt::PromptError;
use crate::retrieval::RetrievalError;

pub use matching::{match_answer, normalize_answer, MatchedLabel};
pub use question::{load_test, parse_test, Choice, MultipleChoiceQuestion};
pub use report::{
    render_summary_csv, render_summary_text, score_test, write_records, write_summary, AnswerRecord, EvaluationReport,
    PromptTrace, TracedSection,
};
pub use runner::{
    parse_question_text, render_ablation_table, AblationOutcome, AblationVariant, AskOutcome, Condition,
    FormatComparison, Pipeline, PipelineSettings,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}: {reason}")]
    InvalidTest {
        origin: String,
        line: usize,
        reason: String,
    },
    #[error("{0}")]
    Precondition(String),
    #[error("duplicate record for question {0}")]
    DuplicateRecord(u32),
    #[error("store and corpus disagree: {0}")]
    Consistency(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("question {question_id}: {source}")]
    Generation {
        question_id: u32,
        #[source]
        source: GenerationError,
    },
    #[error("condition `{condition}` aborted after {} completed question(s): {source}", completed.len())]
    Aborted {
        condition: String,
        /// Records finished before the failure, in question order.
        completed: Vec<AnswerRecord>,
        /// Whole reports from conditions that finished earlier in the same run.
        completed_reports: Vec<EvaluationReport>,
        #[source]
        source: Box<EvalError>,
    },
}
