use contextqa::corpus::CorpusError;
use contextqa::embedding::EmbeddingError;
use contextqa::eval::EvalError;
use contextqa::generation::GenerationError;
use contextqa::prompt::PromptError;
use contextqa::retrieval::RetrievalError;
use contextqa::tokenizer::TokenizerError;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

/// Bad flags, config or input files.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn embedding_code(e: &EmbeddingError) -> u8 {
    match e {
        EmbeddingError::Config(_) | EmbeddingError::EmptyInput => EXIT_CONFIG,
        EmbeddingError::AtIndex { source, .. } => embedding_code(source),
        _ => EXIT_RUNTIME,
    }
}

fn generation_code(e: &GenerationError) -> u8 {
    match e {
        GenerationError::Config(_) | GenerationError::Script { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn retrieval_code(e: &RetrievalError) -> u8 {
    match e {
        RetrievalError::Embedding(inner) => embedding_code(inner),
        RetrievalError::Io { .. } => EXIT_RUNTIME,
        _ => EXIT_CONFIG,
    }
}

/// Maps an error chain onto the exit-code contract: 2 for configuration and input
/// problems, 1 for everything that went wrong while running.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>()
            || cause.is::<CorpusError>()
            || cause.is::<TokenizerError>()
            || cause.is::<PromptError>()
        {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<EmbeddingError>() {
            return embedding_code(e);
        }
        if let Some(e) = cause.downcast_ref::<GenerationError>() {
            return generation_code(e);
        }
        if let Some(e) = cause.downcast_ref::<RetrievalError>() {
            return retrieval_code(e);
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::InvalidTest { .. }
                | EvalError::Precondition(_)
                | EvalError::Consistency(_)
                | EvalError::DuplicateRecord(_)
                | EvalError::Prompt(_) => EXIT_CONFIG,
                EvalError::Embedding(inner) => embedding_code(inner),
                EvalError::Retrieval(inner) => retrieval_code(inner),
                EvalError::Generation { source, .. } => generation_code(source),
                EvalError::Io { .. } | EvalError::Aborted { .. } => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}
