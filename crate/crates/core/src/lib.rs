//! Faceted ground-truth engine: concept hierarchies built by genus and
//! differentia, a staged annotation pipeline over them, dataset flaw
//! categorization and inter-annotator agreement statistics.

pub mod agreement;
pub mod api;
pub mod canon;
pub mod fixtures;
pub mod flaw;
pub mod ids;
pub mod io;
pub mod lexicon;
pub mod model;
pub mod pipeline;

pub use agreement::{agreement_report, count_matrix, outlier_column, sample_std_dev, AgreementMatrix, AgreementReport, Category};
pub use canon::{validate, Attestations, ValidationReport, Violation, ViolationCode};
pub use flaw::{categorize_corpus, categorize_media, CategorizerConfig, CorpusReport, FlawCategory, FlawKind};
pub use ids::{AnnotatorId, MediaId, ObjectId, RecordId};
pub use io::{HierarchyBundle, ManifestMode, ManifestRequest, SplitSpec};
pub use lexicon::{AlinguisticId, Language, Lexicon};
pub use model::{Atom, Differentia, Facet, FacetId, Hierarchy, Observation, PathIndex, PropertyAssertion, ValueSet};
pub use pipeline::{classify, elicit_next_facet, AnnotationStore, Assignment, Mode, NextStep, Polygon, Stage};
