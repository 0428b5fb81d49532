use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use contextqa::corpus::{load_corpus, CorpusTable};
use contextqa::embedding::Embedder;
use contextqa::eval::{
    load_test, parse_question_text, render_ablation_table, render_summary_text, write_records, write_summary,
    AblationVariant, Condition, EvalError, EvaluationReport, MultipleChoiceQuestion, Pipeline, PipelineSettings,
};
use contextqa::generation::CompletionBackend;
use contextqa::prompt::PromptBudget;
use contextqa::retrieval::{build_store, export_csv, load_store, save_store, VectorStore};
use contextqa::tokenizer::Tokenizer;

use crate::config::RunConfig;
use crate::error::ConfigError;

const DEFAULT_BUDGET: usize = 1900;
const DEFAULT_BUDGETS: [usize; 3] = [500, 1200, 1900];
const HISTOGRAM_BIN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    /// Ask the stem alone.
    DropChoices,
    /// Replace one choice's text (needs --edit).
    EditChoice,
    /// Whole test with bullets preserved vs comma-joined.
    Format,
}

fn tokenizer(cfg: &RunConfig) -> Result<Tokenizer> {
    Ok(Tokenizer::from_spec(&cfg.tokenizer)?)
}

fn corpus(cfg: &RunConfig, tok: &Tokenizer) -> Result<CorpusTable> {
    let path = RunConfig::require(&cfg.corpus, "--corpus")?;
    let table = load_corpus(path, tok)?;
    if table.is_empty() {
        return Err(ConfigError(format!("empty corpus: {}", path.display())).into());
    }
    Ok(table)
}

fn questions(cfg: &RunConfig) -> Result<Vec<MultipleChoiceQuestion>> {
    let path = RunConfig::require(&cfg.test, "--test")?;
    // A test file that cannot be read is an input problem, not a runtime failure.
    let qs = load_test(path).map_err(|e| match e {
        EvalError::Io { .. } => anyhow::Error::from(ConfigError(e.to_string())),
        other => other.into(),
    })?;
    if qs.is_empty() {
        return Err(ConfigError(format!("test file {} has no questions", path.display())).into());
    }
    Ok(qs)
}

fn settings(cfg: &RunConfig) -> PipelineSettings {
    let defaults = PromptBudget::default();
    PipelineSettings {
        metric: cfg.metric,
        model_max_tokens: cfg.model_max_tokens.unwrap_or(defaults.model_max_tokens),
        reserved_completion_tokens: cfg
            .reserved_completion_tokens
            .unwrap_or(defaults.reserved_completion_tokens),
        request: cfg.completion.request(""),
        max_in_flight: cfg.completion.max_in_flight,
    }
}

/// Everything a question-answering command needs, owned in one place.
struct Session {
    tokenizer: Tokenizer,
    corpus: CorpusTable,
    store: VectorStore,
    embedder: Embedder,
    backend: Box<dyn CompletionBackend>,
    settings: PipelineSettings,
}

impl Session {
    fn open(cfg: &RunConfig) -> Result<Self> {
        let tokenizer = tokenizer(cfg)?;
        let corpus = corpus(cfg, &tokenizer)?;
        let store = load_store(RunConfig::require(&cfg.store, "--store")?)?;
        let embedder = Embedder::new(cfg.embedding.clone(), tokenizer.clone())?;
        let backend = cfg.completion.build()?;
        Ok(Self {
            tokenizer,
            corpus,
            store,
            embedder,
            backend,
            settings: settings(cfg),
        })
    }

    fn pipeline(&self) -> Result<Pipeline<'_>> {
        Ok(Pipeline::new(
            &self.corpus,
            &self.store,
            &self.embedder,
            self.backend.as_ref(),
            &self.tokenizer,
            self.settings.clone(),
        )?)
    }
}

fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn write_reports(cfg: &RunConfig, reports: &[EvaluationReport]) -> Result<()> {
    for r in reports {
        let name = slug(&r.condition_name);
        write_records(&r.records, &cfg.out.join(format!("records_{name}.jsonl")))?;
        if cfg.trace {
            let dir = cfg.out.join("prompts").join(&name);
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for rec in &r.records {
                if let Some(trace) = &rec.prompt_trace {
                    let path = dir.join(format!("q{:03}.txt", rec.question_id));
                    std::fs::write(&path, &trace.rendered_prompt)
                        .with_context(|| format!("writing {}", path.display()))?;
                }
            }
        }
    }
    write_summary(reports, &cfg.out)?;
    Ok(())
}

/// Saves whatever finished before an aborted run, then hands the error back.
fn persist_partial(cfg: &RunConfig, err: EvalError) -> anyhow::Error {
    if let EvalError::Aborted {
        condition,
        completed,
        completed_reports,
        ..
    } = &err
    {
        let path = cfg.out.join(format!("records_{}.partial.jsonl", slug(condition)));
        let saved = write_reports(cfg, completed_reports).and_then(|()| Ok(write_records(completed, &path)?));
        match saved {
            Ok(()) => eprintln!(
                "partial results: {} finished condition(s) and {} record(s) written to {}",
                completed_reports.len(),
                completed.len(),
                cfg.out.display()
            ),
            Err(e) => eprintln!("could not save partial results: {e:#}"),
        }
    }
    err.into()
}

pub fn ingest(cfg: &RunConfig, export: Option<&Path>) -> Result<()> {
    let tok = tokenizer(cfg)?;
    let table = corpus(cfg, &tok)?;
    let out = RunConfig::require(&cfg.store, "--store")?;
    let embedder = Embedder::new(cfg.embedding.clone(), tok.clone())?;
    let store = build_store(&table, &embedder)?;
    save_store(&store, out)?;
    if let Some(path) = export {
        export_csv(&store, &table, path)?;
    }

    let total: usize = table.sections().iter().map(|s| s.token_count).sum();
    println!("sections: {}", table.len());
    println!("tokens: {total} ({})", cfg.tokenizer.name);
    println!("token histogram (bin width {HISTOGRAM_BIN}):");
    let hist = table.token_histogram(HISTOGRAM_BIN);
    let widest = hist.iter().map(|(_, n)| *n).max().unwrap_or(1);
    for (start, count) in hist {
        let bar = "#".repeat((count * 40).div_ceil(widest));
        println!("  {:>5}-{:<5} {count:>4} {bar}", start, start + HISTOGRAM_BIN - 1);
    }
    println!("store: {} ({} x {})", out.display(), store.len(), store.dim());
    Ok(())
}

pub fn ask(cfg: &RunConfig, text: Option<&str>, id: Option<u32>, budget: Option<usize>) -> Result<()> {
    let question = match (text, id) {
        (Some(text), _) => {
            let q = parse_question_text(text);
            if q.stem.is_empty() {
                return Err(ConfigError("empty question".into()).into());
            }
            q
        }
        (None, Some(id)) => questions(cfg)?
            .into_iter()
            .find(|q| q.id == id)
            .ok_or_else(|| ConfigError(format!("question {id} is not in the test file")))?,
        (None, None) => return Err(ConfigError("ask needs --question or --id".into()).into()),
    };
    let session = Session::open(cfg)?;
    let pipeline = session.pipeline()?;
    let condition = session
        .settings
        .condition(budget.or(cfg.budget).unwrap_or(DEFAULT_BUDGET), cfg.style);
    let outcome = pipeline.ask(&question, &condition)?;

    println!("{}", outcome.answer_text(&question));
    if !question.choices.is_empty() {
        let verdict = match id {
            Some(_) if outcome.matched.label() == Some(question.correct_label) => " (correct)",
            Some(_) => " (incorrect)",
            None => "",
        };
        println!("matched: {}{verdict}", outcome.matched);
    }
    if cfg.trace {
        std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
        let prompt_path = cfg.out.join("ask_prompt.txt");
        std::fs::write(&prompt_path, outcome.prompt.render())
            .with_context(|| format!("writing {}", prompt_path.display()))?;
        let included: Vec<&str> = outcome
            .prompt
            .included_sections
            .iter()
            .map(|s| s.section_id.as_str())
            .collect();
        let mut table = String::from("rank\tsection_id\tscore\tincluded\n");
        for r in &outcome.ranked {
            table.push_str(&format!(
                "{}\t{}\t{:.6}\t{}\n",
                r.rank,
                r.section_id,
                r.score,
                included.contains(&r.section_id.as_str())
            ));
        }
        let ranked_path = cfg.out.join("ask_ranked.tsv");
        std::fs::write(&ranked_path, table).with_context(|| format!("writing {}", ranked_path.display()))?;
        eprintln!("trace written to {}", cfg.out.display());
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, budget: Option<usize>) -> Result<()> {
    let qs = questions(cfg)?;
    let session = Session::open(cfg)?;
    let pipeline = session.pipeline()?;
    let condition = session
        .settings
        .condition(budget.or(cfg.budget).unwrap_or(DEFAULT_BUDGET), cfg.style);
    let report = pipeline
        .run_condition(&qs, &condition)
        .map_err(|e| persist_partial(cfg, e))?;
    let reports = [report];
    write_reports(cfg, &reports)?;
    print!("{}", render_summary_text(&reports));
    Ok(())
}

pub fn sweep(cfg: &RunConfig, budgets: Option<Vec<usize>>, baseline: bool) -> Result<()> {
    let qs = questions(cfg)?;
    let budgets = budgets
        .or_else(|| cfg.budgets.clone())
        .unwrap_or_else(|| DEFAULT_BUDGETS.to_vec());
    let session = Session::open(cfg)?;
    let pipeline = session.pipeline()?;
    let reports = pipeline
        .run_sweep(&qs, &budgets, baseline, cfg.style)
        .map_err(|e| persist_partial(cfg, e))?;
    write_reports(cfg, &reports)?;
    print!("{}", render_summary_text(&reports));
    Ok(())
}

fn parse_edit(edit: &str) -> Result<AblationVariant, ConfigError> {
    let (label, text) = edit
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("--edit expects `label=text`, got `{edit}`")))?;
    let mut chars = label.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(label), None) if label.is_ascii_alphabetic() && !text.trim().is_empty() => {
            Ok(AblationVariant::EditChoice {
                label: label.to_ascii_lowercase(),
                new_text: text.trim().to_string(),
            })
        }
        _ => Err(ConfigError(format!(
            "--edit expects a single-letter label and text, got `{edit}`"
        ))),
    }
}

pub fn ablate(
    cfg: &RunConfig,
    variant: VariantArg,
    id: Option<u32>,
    edit: Option<&str>,
    budget: Option<usize>,
) -> Result<()> {
    let budget = budget.or(cfg.budget).unwrap_or(DEFAULT_BUDGET);
    let qs = questions(cfg)?;
    let variant = match variant {
        VariantArg::Format => {
            let session = Session::open(cfg)?;
            let cmp = session
                .pipeline()?
                .run_format_comparison(&qs, budget, cfg.style.layout)
                .map_err(|e| persist_partial(cfg, e))?;
            write_reports(cfg, &[cmp.preserve.clone(), cmp.comma.clone()])?;
            let text = cmp.render();
            let path = cfg.out.join("format_comparison.txt");
            std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            print!("{text}");
            return Ok(());
        }
        VariantArg::DropChoices => AblationVariant::DropChoices,
        VariantArg::EditChoice => {
            parse_edit(edit.ok_or_else(|| ConfigError("edit-choice needs --edit label=text".into()))?)?
        }
    };
    let id = id.ok_or_else(|| ConfigError("choice ablations need --id".into()))?;
    let question = qs
        .iter()
        .find(|q| q.id == id)
        .ok_or_else(|| ConfigError(format!("question {id} is not in the test file")))?;

    let session = Session::open(cfg)?;
    let pipeline = session.pipeline()?;
    let conditions = [
        Condition::no_context(cfg.style.layout),
        session.settings.condition(budget, cfg.style),
    ];
    let outcomes = pipeline.run_ablation(question, &variant, &conditions)?;
    let table = render_ablation_table(&outcomes);
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let txt = cfg.out.join(format!("ablation_q{id}.txt"));
    std::fs::write(&txt, &table).with_context(|| format!("writing {}", txt.display()))?;
    let json = cfg.out.join(format!("ablation_q{id}.json"));
    std::fs::write(&json, serde_json::to_string_pretty(&outcomes)? + "\n")
        .with_context(|| format!("writing {}", json.display()))?;
    print!("{table}");
    Ok(())
}
