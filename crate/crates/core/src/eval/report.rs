use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, MatchedLabel};
use crate::prompt::{AssembledPrompt, SkippedSection};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracedSection {
    pub section_id: String,
    pub token_count: usize,
}

/// Summary of the prompt behind one answer. The rendered text is kept in memory for
/// trace dumps but never serialized into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTrace {
    pub included_sections: Vec<TracedSection>,
    pub context_tokens: usize,
    pub total_tokens: usize,
    pub skipped_first_overflow: Option<SkippedSection>,
    /// Top-ranked section ids with their scores, best first.
    pub top_ranked: Vec<(String, f64)>,
    #[serde(skip)]
    pub rendered_prompt: String,
}

impl PromptTrace {
    pub fn from_prompt(prompt: &AssembledPrompt, top_ranked: Vec<(String, f64)>) -> Self {
        Self {
            included_sections: prompt
                .included_sections
                .iter()
                .map(|s| TracedSection {
                    section_id: s.section_id.clone(),
                    token_count: s.token_count,
                })
                .collect(),
            context_tokens: prompt.context_tokens(),
            total_tokens: prompt.total_tokens,
            skipped_first_overflow: prompt.skipped_first_overflow.clone(),
            top_ranked,
            rendered_prompt: prompt.render(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: u32,
    pub raw_model_text: String,
    pub matched_label: MatchedLabel,
    pub correct_label: char,
    pub correct: bool,
    pub prompt_trace: Option<PromptTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub condition_name: String,
    pub context_budget: Option<usize>,
    pub question_count: usize,
    pub failed_ids: Vec<u32>,
    pub passing_score_percent: f64,
    pub records: Vec<AnswerRecord>,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Abstentions and unmatched answers count as failures. Records are ordered by
/// question id.
pub fn score_test(
    records: Vec<AnswerRecord>,
    condition_name: &str,
    context_budget: Option<usize>,
) -> Result<EvaluationReport, EvalError> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in &records {
        if !seen.insert(r.question_id) {
            return Err(EvalError::DuplicateRecord(r.question_id));
        }
    }
    if records.is_empty() {
        return Err(EvalError::Precondition("cannot score an empty set of records".into()));
    }
    let mut records = records;
    records.sort_by_key(|r| r.question_id);
    let failed_ids: Vec<u32> = records.iter().filter(|r| !r.correct).map(|r| r.question_id).collect();
    let n = records.len();
    let passing = round1(100.0 * (n - failed_ids.len()) as f64 / n as f64);
    Ok(EvaluationReport {
        condition_name: condition_name.to_string(),
        context_budget,
        question_count: n,
        failed_ids,
        passing_score_percent: passing,
        records,
    })
}

fn summary_row(r: &EvaluationReport) -> [String; 4] {
    [
        r.condition_name.clone(),
        r.context_budget.map_or_else(|| "-".to_string(), |b| b.to_string()),
        r.failed_ids.iter().map(u32::to_string).collect::<Vec<_>>().join(", "),
        format!("{:.1}%", r.passing_score_percent),
    ]
}

const SUMMARY_HEADER: [&str; 4] = ["Condition", "Prompt Length", "Failed Questions", "Passing Score"];

pub fn render_summary_text(reports: &[EvaluationReport]) -> String {
    let rows: Vec<[String; 4]> = reports.iter().map(summary_row).collect();
    let mut widths = SUMMARY_HEADER.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: [&str; 4]| {
        let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("{}\n", padded.join(" | ").trim_end())
    };
    let mut out = line(SUMMARY_HEADER);
    out.push_str(&format!(
        "{}\n",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-")
    ));
    for row in &rows {
        out.push_str(&line([&row[0], &row[1], &row[2], &row[3]]));
    }
    out
}

pub fn render_summary_csv(reports: &[EvaluationReport]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(SUMMARY_HEADER).expect("in-memory write");
    for r in reports {
        writer.write_record(summary_row(r)).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One JSON object per line, in question order.
pub fn write_records(records: &[AnswerRecord], path: &Path) -> Result<(), EvalError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&out).map_err(io_err(path))
}

/// Writes `summary.txt` and `summary.csv` into `dir`.
pub fn write_summary(reports: &[EvaluationReport], dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let txt = dir.join("summary.txt");
    std::fs::write(&txt, render_summary_text(reports)).map_err(io_err(&txt))?;
    let csv_path = dir.join("summary.csv");
    std::fs::write(&csv_path, render_summary_csv(reports)).map_err(io_err(&csv_path))
}
