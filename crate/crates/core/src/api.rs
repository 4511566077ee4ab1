//! Request and response bodies exchanged with the annotation service.
//!
//! Kept free of any HTTP machinery so that both the server and its
//! clients can share them.

use serde::{Deserialize, Serialize};

use crate::agreement::{AgreementMatrix, AgreementReport, OutlierCandidate};
use crate::canon::RelevanceAttestation;
use crate::flaw::{CategorizerConfig, CorpusReport, FlawCategory, FlawKind};
use crate::ids::{AnnotatorId, MediaId, ObjectId};
use crate::io::CategoryFile;
use crate::lexicon::{AlinguisticId, Language, LexicalEntry, LexicalGap};
use crate::model::{ConceptNode, Differentia, FacetId, Observation, PathIndex};
use crate::pipeline::{AnnotationRecord, Assignment, DetectedObject, MediaItem, Mode, NextStep, Polygon};

/// Header carrying the client-chosen request id used to deduplicate retries.
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
/// Header naming the acting annotator.
pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

/// Error body returned with every non-2xx status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    /// Nodes blocking a stage gate, when that is the failure.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offending: Vec<PathIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSession {
    /// Falls back to the annotator header when absent.
    #[serde(default)]
    pub annotator: Option<AnnotatorId>,
    pub language: Language,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: u64,
    pub annotator: AnnotatorId,
    pub language: Language,
    pub mode: Mode,
    pub hierarchy_version: u64,
    /// Media not yet identified, with their current stage.
    pub queue: Vec<MediaItem>,
    /// Partial observations of objects still being elicited.
    pub in_progress: Vec<(ObjectId, Observation)>,
}

/// One unit of work submitted within a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Step {
    /// Delineate an object on a media item.
    RegisterObject { media_id: MediaId, polygon: Polygon },
    /// Add observed properties to an object being classified; the answer is
    /// the next facet to ask about, or the terminal assignment (which is
    /// then recorded).
    Assert {
        media_id: MediaId,
        #[serde(default)]
        object_id: Option<ObjectId>,
        observed: Observation,
    },
    /// One-shot classification from a complete observation.
    Classify {
        media_id: MediaId,
        #[serde(default)]
        object_id: Option<ObjectId>,
        observed: Observation,
    },
    Unrecognized {
        media_id: MediaId,
        #[serde(default)]
        object_id: Option<ObjectId>,
    },
    /// Name the object with a word in the session language.
    Label {
        media_id: MediaId,
        #[serde(default)]
        object_id: Option<ObjectId>,
        lemma: String,
    },
    AddLabel { node: PathIndex, lemma: String },
    DeclareGap { node: PathIndex },
    AdvanceLabelled { media_id: MediaId },
    Mint { node: PathIndex },
    AdvanceIdentified { media_id: MediaId },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media: Option<MediaItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<DetectedObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<AnnotationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next: Option<NextStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<LexicalEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<LexicalGap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alinguistic_id: Option<AlinguisticId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewConcept {
    pub expected_version: u64,
    pub parent: PathIndex,
    pub differentia: Differentia,
    #[serde(default)]
    pub gloss: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptCreated {
    pub node: ConceptNode,
    pub hierarchy_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttestRequest {
    pub facets: Vec<FacetId>,
    /// Falls back to the annotator header when absent.
    #[serde(default)]
    pub attestor: Option<AnnotatorId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attested {
    pub attestations: Vec<RelevanceAttestation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResponse {
    pub matrix: AgreementMatrix,
    /// Absent when fewer than two annotators contribute.
    #[serde(default)]
    pub report: Option<AgreementReport>,
    #[serde(default)]
    pub outlier: Option<OutlierCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Classification preview for a partial observation; nothing is recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub assignment: Assignment,
    pub next: NextStep,
}

/// Analysis of an uploaded count grid (CSV with an `index` column and one
/// column per annotator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRequest {
    pub grid: String,
    #[serde(default)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CategorizeRequest {
    /// Overrides the server's configuration for this run.
    #[serde(default)]
    pub config: Option<CategorizerConfig>,
    /// Store the computed categories on the media items.
    #[serde(default)]
    pub persist: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizeResponse {
    pub report: CorpusReport,
    pub categories: Vec<FlawCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportRequest {
    pub categories: CategoryFile,
    /// Known image references; others are skipped with a warning.
    #[serde(default)]
    pub image_index: Option<Vec<String>>,
}

/// Expert flaw counts to stamp onto freshly ingested media.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedImport {
    /// CSV with `category,flaw,original,ue` columns.
    pub counts: String,
    /// Media per category, in report order.
    pub sizes: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaFlaw {
    pub media_id: MediaId,
    pub flaw: FlawKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyWarnings {
    pub hierarchy_version: u64,
    pub warnings: Vec<String>,
}
