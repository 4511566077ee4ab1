//! Multilingual labels, lexical gaps and alinguistic identifiers.
//!
//! The entry relation is many-to-many: a lemma may name several concepts
//! (polysemy) and a concept may carry several lemmas per language
//! (synonymy). A declared gap records that a language has no word for a
//! concept; a gap and an entry never coexist for the same
//! (concept, language) pair.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::model::{Hierarchy, PathIndex};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexiconError {
    #[error("unknown concept {0}")]
    UnknownConcept(PathIndex),
    #[error("a lexical gap is declared for {concept} in `{language}`")]
    GapConflict { concept: PathIndex, language: Language },
    #[error("{concept} already has `{language}` labels")]
    EntryConflict { concept: PathIndex, language: Language },
    #[error("language code must not be empty")]
    EmptyLanguage,
    #[error("lemma must not be empty")]
    EmptyLemma,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Language(String);

impl Language {
    pub fn new(code: impl Into<String>) -> Result<Self, LexiconError> {
        let code = code.into();
        if code.trim().is_empty() {
            return Err(LexiconError::EmptyLanguage);
        }
        Ok(Self(code.trim().to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Language {
    type Error = LexiconError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<Language> for String {
    fn from(l: Language) -> Self {
        l.0
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Comparison key for lemmas: NFKC-normalized, case-folded, trimmed.
pub fn normalize_lemma(lemma: &str) -> String {
    lemma.nfkc().collect::<String>().trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LexicalEntry {
    pub language: Language,
    pub lemma: String,
    pub concept: PathIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LexicalGap {
    pub language: Language,
    pub concept: PathIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlinguisticId(pub u64);

impl fmt::Display for AlinguisticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelStatus {
    Labelled,
    Gap,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub concept: PathIndex,
    pub status: LabelStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    /// (concept, language) -> normalized lemma -> lemma as first entered
    forward: BTreeMap<(PathIndex, Language), BTreeMap<String, String>>,
    /// (language, normalized lemma) -> concepts
    inverse: BTreeMap<(Language, String), BTreeSet<PathIndex>>,
    gaps: BTreeSet<(PathIndex, Language)>,
    ids: BTreeMap<PathIndex, AlinguisticId>,
    next_id: u64,
}

impl Lexicon {
    pub fn new() -> Self {
        Self {
            next_id: 1,
            ..Default::default()
        }
    }

    /// Adds a lemma for a concept. Adding the same (normalized) lemma twice
    /// is a no-op.
    pub fn add_label(
        &mut self,
        hierarchy: &Hierarchy,
        concept: &PathIndex,
        language: &Language,
        lemma: &str,
    ) -> Result<LexicalEntry, LexiconError> {
        ensure_concept(hierarchy, concept)?;
        let key = normalize_lemma(lemma);
        if key.is_empty() {
            return Err(LexiconError::EmptyLemma);
        }
        if self.gaps.contains(&(concept.clone(), language.clone())) {
            return Err(LexiconError::GapConflict {
                concept: concept.clone(),
                language: language.clone(),
            });
        }
        let shown = self
            .forward
            .entry((concept.clone(), language.clone()))
            .or_default()
            .entry(key.clone())
            .or_insert_with(|| lemma.trim().to_string())
            .clone();
        self.inverse
            .entry((language.clone(), key))
            .or_default()
            .insert(concept.clone());
        Ok(LexicalEntry {
            language: language.clone(),
            lemma: shown,
            concept: concept.clone(),
        })
    }

    /// Records that `language` has no word for `concept`. Idempotent.
    pub fn declare_gap(
        &mut self,
        hierarchy: &Hierarchy,
        concept: &PathIndex,
        language: &Language,
    ) -> Result<LexicalGap, LexiconError> {
        ensure_concept(hierarchy, concept)?;
        let pair = (concept.clone(), language.clone());
        if self.forward.get(&pair).is_some_and(|m| !m.is_empty()) {
            return Err(LexiconError::EntryConflict {
                concept: concept.clone(),
                language: language.clone(),
            });
        }
        self.gaps.insert(pair);
        Ok(LexicalGap {
            language: language.clone(),
            concept: concept.clone(),
        })
    }

    pub fn lookup(&self, lemma: &str, language: &Language) -> BTreeSet<PathIndex> {
        self.inverse
            .get(&(language.clone(), normalize_lemma(lemma)))
            .cloned()
            .unwrap_or_default()
    }

    /// Lemmas for a concept in one language, in normalized-key order.
    pub fn synonyms(&self, concept: &PathIndex, language: &Language) -> Vec<String> {
        self.forward
            .get(&(concept.clone(), language.clone()))
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default()
    }

    pub fn has_gap(&self, concept: &PathIndex, language: &Language) -> bool {
        self.gaps.contains(&(concept.clone(), language.clone()))
    }

    pub fn has_label(&self, concept: &PathIndex, language: &Language) -> bool {
        self.forward
            .get(&(concept.clone(), language.clone()))
            .is_some_and(|m| !m.is_empty())
    }

    pub fn status(&self, concept: &PathIndex, language: &Language) -> LabelStatus {
        if self.has_label(concept, language) {
            LabelStatus::Labelled
        } else if self.has_gap(concept, language) {
            LabelStatus::Gap
        } else {
            LabelStatus::Missing
        }
    }

    /// Mints the next identifier for a concept, or returns the one it
    /// already has.
    pub fn mint_alinguistic_id(
        &mut self,
        hierarchy: &Hierarchy,
        concept: &PathIndex,
    ) -> Result<AlinguisticId, LexiconError> {
        ensure_concept(hierarchy, concept)?;
        if let Some(id) = self.ids.get(concept) {
            return Ok(*id);
        }
        let id = AlinguisticId(self.next_id);
        self.next_id += 1;
        self.ids.insert(concept.clone(), id);
        Ok(id)
    }

    pub fn alinguistic_id(&self, concept: &PathIndex) -> Option<AlinguisticId> {
        self.ids.get(concept).copied()
    }

    pub fn concept_for_id(&self, id: AlinguisticId) -> Option<&PathIndex> {
        self.ids.iter().find(|(_, v)| **v == id).map(|(k, _)| k)
    }

    /// The value the next mint will hand out.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn coverage_report(&self, hierarchy: &Hierarchy, language: &Language) -> Vec<CoverageRow> {
        hierarchy
            .paths()
            .into_iter()
            .map(|concept| CoverageRow {
                status: self.status(&concept, language),
                concept,
            })
            .collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = LexicalEntry> + '_ {
        self.forward.iter().flat_map(|((concept, language), lemmas)| {
            lemmas.values().map(move |lemma| LexicalEntry {
                language: language.clone(),
                lemma: lemma.clone(),
                concept: concept.clone(),
            })
        })
    }

    pub fn gaps(&self) -> impl Iterator<Item = LexicalGap> + '_ {
        self.gaps.iter().map(|(concept, language)| LexicalGap {
            language: language.clone(),
            concept: concept.clone(),
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = (&PathIndex, AlinguisticId)> {
        self.ids.iter().map(|(k, v)| (k, *v))
    }

    /// Reassembles a lexicon from persisted parts. `next_id` is raised past
    /// every restored identifier so that ids are never reused.
    pub(crate) fn restore(
        hierarchy: &Hierarchy,
        entries: impl IntoIterator<Item = LexicalEntry>,
        gaps: impl IntoIterator<Item = LexicalGap>,
        ids: impl IntoIterator<Item = (PathIndex, AlinguisticId)>,
        next_id: Option<u64>,
    ) -> Result<Self, LexiconError> {
        let mut lex = Self::new();
        for e in entries {
            lex.add_label(hierarchy, &e.concept, &e.language, &e.lemma)?;
        }
        for g in gaps {
            lex.declare_gap(hierarchy, &g.concept, &g.language)?;
        }
        let mut max = 0;
        for (concept, id) in ids {
            ensure_concept(hierarchy, &concept)?;
            max = max.max(id.0);
            lex.ids.insert(concept, id);
        }
        lex.next_id = next_id.unwrap_or(1).max(max + 1);
        Ok(lex)
    }

    /// Checks that the forward and inverse indexes describe the same
    /// relation. Exposed for property tests.
    #[doc(hidden)]
    pub fn views_agree(&self) -> bool {
        let forward: BTreeSet<(Language, String, PathIndex)> = self
            .forward
            .iter()
            .flat_map(|((c, l), m)| m.keys().map(move |k| (l.clone(), k.clone(), c.clone())))
            .collect();
        let inverse: BTreeSet<(Language, String, PathIndex)> = self
            .inverse
            .iter()
            .flat_map(|((l, k), cs)| cs.iter().map(move |c| (l.clone(), k.clone(), c.clone())))
            .collect();
        forward == inverse
    }
}

fn ensure_concept(hierarchy: &Hierarchy, concept: &PathIndex) -> Result<(), LexiconError> {
    if hierarchy.contains(concept) {
        Ok(())
    } else {
        Err(LexiconError::UnknownConcept(concept.clone()))
    }
}
