use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use facetgt_core::api::SessionView;
use facetgt_core::io::{self, HierarchyBundle, IoError};
use facetgt_core::pipeline::{AnnotationStore, PipelineError, Stage};
use facetgt_core::{fixtures, AnnotatorId, CategorizerConfig, Language, Mode, Observation, ObjectId};

use crate::error::ApiError;

pub const HIERARCHY_FILE: &str = "hierarchy.json";
pub const LOG_FILE: &str = "annotations.jsonl";

/// Startup options for a workspace.
#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Directory holding the hierarchy file and the annotation log. When
    /// absent everything lives in memory.
    pub store_dir: Option<PathBuf>,
    pub categorizer: CategorizerConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("cannot create store directory {path}: {source}")]
    Dir {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("hierarchy file: {0}")]
    Hierarchy(#[from] IoError),
    #[error("annotation log: {0}")]
    Log(#[from] PipelineError),
    #[error("categorizer config: {0}")]
    Config(#[from] facetgt_core::flaw::CategorizeError),
}

#[derive(Debug, Clone)]
pub(crate) struct Session {
    pub annotator: AnnotatorId,
    pub language: Language,
    pub mode: Mode,
    /// Observations accumulated by the elicitation wizard, per object.
    pub wizard: BTreeMap<ObjectId, Observation>,
}

/// Everything the service operates on. Guarded by a single lock; every
/// handler runs to completion while holding it.
#[derive(Debug)]
pub struct Workspace {
    pub(crate) bundle: HierarchyBundle,
    pub(crate) store: AnnotationStore,
    pub(crate) config: CategorizerConfig,
    pub(crate) sessions: BTreeMap<u64, Session>,
    next_session: u64,
    store_dir: Option<PathBuf>,
}

impl Workspace {
    /// Opens (or initializes) a workspace. A store directory without a
    /// hierarchy file is seeded with the built-in musical-instrument
    /// hierarchy and its English lexicon.
    pub fn open(config: ServiceConfig) -> Result<Self, StartupError> {
        config.categorizer.validate()?;
        let mut warnings = Vec::new();
        let (bundle, store) = match &config.store_dir {
            None => (default_bundle(), AnnotationStore::new()),
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|source| StartupError::Dir {
                    path: dir.display().to_string(),
                    source,
                })?;
                let file = dir.join(HIERARCHY_FILE);
                let bundle = if file.exists() {
                    let (b, w) = io::load_hierarchy(&file)?;
                    warnings = w;
                    b
                } else {
                    let b = default_bundle();
                    io::save_hierarchy(&b, &file)?;
                    b
                };
                (bundle, AnnotationStore::open(&dir.join(LOG_FILE))?)
            }
        };
        for w in &warnings {
            tracing::warn!("{w}");
        }
        Ok(Self {
            bundle,
            store,
            config: config.categorizer,
            sessions: BTreeMap::new(),
            next_session: 1,
            store_dir: config.store_dir,
        })
    }

    pub fn bundle(&self) -> &HierarchyBundle {
        &self.bundle
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }

    pub fn store_dir(&self) -> Option<&Path> {
        self.store_dir.as_deref()
    }

    /// Replaces the bundle after persisting it; on a write failure the
    /// in-memory bundle is left as it was.
    pub(crate) fn install(&mut self, bundle: HierarchyBundle) -> Result<(), ApiError> {
        if let Some(dir) = &self.store_dir {
            io::save_hierarchy(&bundle, &dir.join(HIERARCHY_FILE))?;
        }
        self.bundle = bundle;
        Ok(())
    }

    pub(crate) fn open_session(&mut self, session: Session) -> u64 {
        let id = self.next_session;
        self.next_session += 1;
        self.sessions.insert(id, session);
        id
    }

    pub(crate) fn session(&self, id: u64) -> Result<&Session, ApiError> {
        self.sessions
            .get(&id)
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }

    pub(crate) fn session_view(&self, id: u64) -> Result<SessionView, ApiError> {
        let s = self.session(id)?;
        Ok(SessionView {
            session_id: id,
            annotator: s.annotator.clone(),
            language: s.language.clone(),
            mode: s.mode,
            hierarchy_version: self.bundle.hierarchy.version(),
            queue: self
                .store
                .media_items()
                .filter(|m| m.stage < Stage::Identified)
                .cloned()
                .collect(),
            in_progress: s.wizard.iter().map(|(o, obs)| (*o, obs.clone())).collect(),
        })
    }
}

fn default_bundle() -> HierarchyBundle {
    let h = fixtures::musical_instruments();
    let lexicon = fixtures::english_lexicon(&h);
    HierarchyBundle {
        lexicon,
        ..HierarchyBundle::new(h)
    }
}
