use thiserror::Error;

use crate::catalog::CriterionId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure a core operation can report.
///
/// Each variant maps to exactly one machine-readable code (see [`Error::code`]);
/// the HTTP facade relies on that mapping.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} not found: {id}")]
    NotFound { what: &'static str, id: String },

    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("strict mode requires every criterion to be answered; unanswered: {}", join_ids(.unanswered))]
    StrictCriteriaUnanswered { unanswered: Vec<CriterionId> },

    #[error("need at least 3 included and 3 excluded papers (have {included} included, {excluded} excluded)")]
    InsufficientTrainingData { included: usize, excluded: usize },

    #[error("no {kind} classifier has been trained for this review")]
    ModelNotTrained { kind: String },

    #[error("non-finite value in {context}")]
    Numeric { context: String },

    #[error("{service} is unavailable: {message}")]
    ServiceUnavailable { service: &'static str, message: String },

    #[error("every connector failed for every query")]
    AllConnectorsFailed { failures: Vec<String> },

    #[error("revision conflict: expected {expected}, current is {current}")]
    RevisionConflict { expected: u64, current: u64 },

    #[error("write conflict, retry: {0}")]
    Conflict(String),

    #[error("{0}")]
    Import(#[from] crate::ingest::IngestError),

    #[error("payload of {size} bytes exceeds the {limit} byte limit")]
    PayloadTooLarge { size: usize, limit: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("storage error: {0}")]
    Storage(#[from] rusqlite::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("schema version {found} does not match expected {expected}; run `migrate`")]
    SchemaMismatch { found: u32, expected: u32 },
}

impl Error {
    pub fn not_found(what: &'static str, id: impl Into<String>) -> Self {
        Error::NotFound { what, id: id.into() }
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Stable machine code for this error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotFound { .. } => "not_found",
            Error::Validation { .. } => "validation_failed",
            Error::StrictCriteriaUnanswered { .. } => "strict_criteria_unanswered",
            Error::InsufficientTrainingData { .. } => "insufficient_training_data",
            Error::ModelNotTrained { .. } => "model_not_trained",
            Error::Numeric { .. } => "numeric_error",
            Error::ServiceUnavailable { .. } => "service_unavailable",
            Error::AllConnectorsFailed { .. } => "all_connectors_failed",
            Error::RevisionConflict { .. } => "revision_conflict",
            Error::Conflict(_) => "write_conflict",
            Error::Import(_) => "import_failed",
            Error::PayloadTooLarge { .. } => "payload_too_large",
            Error::Config(_) => "config_invalid",
            Error::Storage(_) => "storage_error",
            Error::Serde(_) => "serialization_error",
            Error::SchemaMismatch { .. } => "schema_mismatch",
        }
    }

    /// Structured details for API clients.
    pub fn details(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            Error::NotFound { what, id } => json!({ "what": what, "id": id }),
            Error::Validation { field, .. } => json!({ "field": field }),
            Error::StrictCriteriaUnanswered { unanswered } => {
                json!({ "unanswered_criterion_ids": unanswered })
            }
            Error::InsufficientTrainingData { included, excluded } => {
                json!({ "included": included, "excluded": excluded, "required": 3 })
            }
            Error::ModelNotTrained { kind } => json!({ "kind": kind }),
            Error::AllConnectorsFailed { failures } => json!({ "failures": failures }),
            Error::RevisionConflict { expected, current } => {
                json!({ "expected": expected, "current": current })
            }
            Error::Import(e) => e.details(),
            Error::PayloadTooLarge { size, limit } => json!({ "size": size, "limit": limit }),
            _ => json!({}),
        }
    }
}

fn join_ids(ids: &[CriterionId]) -> String {
    ids.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
}
