use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use facetgt_core::agreement::AgreementError;
use facetgt_core::api::ErrorBody;
use facetgt_core::canon::CanonError;
use facetgt_core::flaw::CategorizeError;
use facetgt_core::io::IoError;
use facetgt_core::lexicon::LexiconError;
use facetgt_core::model::ModelError;
use facetgt_core::pipeline::PipelineError;
use facetgt_core::PathIndex;

/// An error rendered as a JSON [`ErrorBody`] with a status code.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                offending: Vec::new(),
            },
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn with_offending(mut self, offending: Vec<PathIndex>) -> Self {
        self.body.offending = offending;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::UnknownMedia(_) | PipelineError::UnknownObject(_) => ApiError::not_found(msg),
            PipelineError::DuplicateSource(_) => ApiError::conflict("duplicate_source", msg),
            PipelineError::EmptySource | PipelineError::Geometry(_) | PipelineError::InvalidObservation(_) => {
                ApiError::unprocessable("invalid_input", msg)
            }
            PipelineError::StageOrder { .. } => ApiError::conflict("stage_order", msg),
            PipelineError::Gate { offending, .. } => ApiError::conflict("gate", msg).with_offending(offending),
            PipelineError::Io(_) | PipelineError::Replay { .. } => ApiError::internal(msg),
        }
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::VersionConflict { .. } => ApiError::conflict("version_conflict", e.to_string()),
            ModelError::NotFound(_) => ApiError::not_found(e.to_string()),
            _ => ApiError::unprocessable("invalid_concept", e.to_string()),
        }
    }
}

impl From<LexiconError> for ApiError {
    fn from(e: LexiconError) -> Self {
        match e {
            LexiconError::UnknownConcept(_) => ApiError::not_found(e.to_string()),
            LexiconError::GapConflict { .. } | LexiconError::EntryConflict { .. } => {
                ApiError::conflict("lexicon_conflict", e.to_string())
            }
            _ => ApiError::unprocessable("invalid_input", e.to_string()),
        }
    }
}

impl From<CanonError> for ApiError {
    fn from(e: CanonError) -> Self {
        match e {
            CanonError::Model(m) => m.into(),
            other => ApiError::unprocessable("canon", other.to_string()),
        }
    }
}

impl From<IoError> for ApiError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Model(m) => m.into(),
            IoError::Lexicon(l) => l.into(),
            IoError::Pipeline(p) => p.into(),
            IoError::Agreement(a) => a.into(),
            IoError::UnknownMedia(_) => ApiError::not_found(e.to_string()),
            IoError::NotIdentified(_) => ApiError::conflict("not_identified", e.to_string()),
            IoError::File { .. } => ApiError::internal(e.to_string()),
            _ => ApiError::unprocessable("invalid_input", e.to_string()),
        }
    }
}

impl From<CategorizeError> for ApiError {
    fn from(e: CategorizeError) -> Self {
        match e {
            CategorizeError::UnknownMedia(_) => ApiError::not_found(e.to_string()),
            CategorizeError::Config(_) => ApiError::unprocessable("invalid_config", e.to_string()),
            _ => ApiError::unprocessable("categorize", e.to_string()),
        }
    }
}

impl From<AgreementError> for ApiError {
    fn from(e: AgreementError) -> Self {
        match e {
            AgreementError::UnknownAnnotator(_) => ApiError::not_found(e.to_string()),
            _ => ApiError::unprocessable("statistics", e.to_string()),
        }
    }
}
