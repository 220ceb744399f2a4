//! Shared per-item outcome and error types for the generation stages.

use thiserror::Error;

use crate::backend::BackendError;
use crate::corpus::CorpusError;

/// Result of processing one work item in a generation stage.
///
/// `Skipped` means the item was abandoned after the configured retries
/// (a logged, recoverable event); backend transport failures are real
/// errors and abort the stage instead.
#[derive(Debug, Clone, PartialEq)]
pub enum StageOutcome<T> {
    Emitted(T),
    Skipped { reason: String, attempts: u32 },
}

impl<T> StageOutcome<T> {
    pub fn emitted(self) -> Option<T> {
        match self {
            StageOutcome::Emitted(v) => Some(v),
            StageOutcome::Skipped { .. } => None,
        }
    }

    pub fn is_skipped(&self) -> bool {
        matches!(self, StageOutcome::Skipped { .. })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}
