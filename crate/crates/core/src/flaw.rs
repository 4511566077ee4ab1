//! Dataset flaw categorization: Good, Multi-Object, Single-Object and
//! Mislabelled media, plus corpus-level reports in the shape of the
//! published statistics table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AnnotatorId, MediaId, ObjectId, RecordId};
use crate::lexicon::{Language, Lexicon};
use crate::model::{Hierarchy, Observation, PathIndex};
use crate::pipeline::{AnnotationRecord, AnnotationStore, Assignment, MediaItem, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlawKind {
    Good,
    MultiObject,
    SingleObject,
    Mislabelled,
}

impl FlawKind {
    pub const ALL: [FlawKind; 4] = [FlawKind::Good, FlawKind::MultiObject, FlawKind::SingleObject, FlawKind::Mislabelled];

    /// Row label used in corpus reports.
    pub fn label(self) -> &'static str {
        match self {
            FlawKind::Good => "Good",
            FlawKind::MultiObject => "Multi-Object",
            FlawKind::SingleObject => "Single-Object",
            FlawKind::Mislabelled => "Mislabelled",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FlawKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FlawKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "good" => Ok(FlawKind::Good),
            "multiobject" => Ok(FlawKind::MultiObject),
            "singleobject" => Ok(FlawKind::SingleObject),
            "mislabelled" | "mislabeled" => Ok(FlawKind::Mislabelled),
            _ => Err(format!("unknown flaw kind `{s}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CategorizeError {
    #[error("invalid categorizer config: {0}")]
    Config(String),
    #[error("media {0} has no detected objects")]
    NoObjects(MediaId),
    #[error("media {media} has records from {found} annotator(s); at least {required} required")]
    TooFewAnnotators { media: MediaId, found: usize, required: usize },
    #[error("selection frequency is undefined for media {0}: no annotators")]
    NoAnnotators(MediaId),
    #[error("unknown media {0}")]
    UnknownMedia(MediaId),
    #[error("statistics fixture: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategorizerConfig {
    pub agreement_threshold: f64,
    pub rival_support_ratio: f64,
    pub min_annotators: usize,
    /// Order in which the defect tests are tried; the first that fires
    /// wins. Good is only considered after all of them.
    pub precedence: Vec<FlawKind>,
    /// Language used to resolve dataset labels against the lexicon.
    pub label_language: Language,
}

impl Default for CategorizerConfig {
    fn default() -> Self {
        Self {
            agreement_threshold: 0.75,
            rival_support_ratio: 0.5,
            min_annotators: 2,
            precedence: vec![FlawKind::Mislabelled, FlawKind::MultiObject, FlawKind::SingleObject],
            label_language: Language::new("eng").expect("non-empty"),
        }
    }
}

impl CategorizerConfig {
    pub fn validate(&self) -> Result<(), CategorizeError> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !frac(self.agreement_threshold) {
            return Err(CategorizeError::Config(format!(
                "agreement_threshold {} not in (0, 1]",
                self.agreement_threshold
            )));
        }
        if !frac(self.rival_support_ratio) {
            return Err(CategorizeError::Config(format!(
                "rival_support_ratio {} not in (0, 1]",
                self.rival_support_ratio
            )));
        }
        if self.min_annotators == 0 {
            return Err(CategorizeError::Config("min_annotators must be positive".into()));
        }
        let set: BTreeSet<_> = self.precedence.iter().collect();
        if set.len() != self.precedence.len() || self.precedence.contains(&FlawKind::Good) {
            return Err(CategorizeError::Config(
                "precedence must list distinct defect kinds (not Good)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    /// The dataset label names concepts no annotator selected.
    LabelNeverSelected,
    /// The dataset label matched no lexicon entry.
    UnresolvedLabel,
    /// Objects were modally assigned to unrelated classes.
    UnrelatedObjects,
    /// Annotators split between unrelated candidates for one object.
    RivalCandidates,
    /// Agreement met the threshold and the agreed signature was observed.
    Agreement,
    /// No defect test fired but agreement fell short.
    LowAgreement,
    /// The category was supplied rather than computed.
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEvidence {
    pub object_id: ObjectId,
    pub annotators: usize,
    /// Votes per node (`"Unrecognized"` for the escape).
    pub votes: BTreeMap<String, usize>,
    pub modal: Option<Assignment>,
    /// Deepest node whose coarse support reaches the threshold.
    pub agreed: Option<PathIndex>,
    pub agreement: f64,
    /// Whether the agreed node's signature was found among the pooled
    /// observations; `None` when no observation was recorded.
    pub signature_observed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlawEvidence {
    pub reason: Reason,
    pub annotators: usize,
    pub supporting_records: Vec<RecordId>,
    pub objects: Vec<ObjectEvidence>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub selection_frequencies: BTreeMap<PathIndex, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rivals: Option<(PathIndex, PathIndex)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub unrelated: Option<(Assignment, Assignment)>,
    pub needs_review: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlawCategory {
    pub media_id: MediaId,
    pub kind: FlawKind,
    pub evidence: FlawEvidence,
}

/// Fraction of the media's annotators with a record assigning any of its
/// objects to `concept` or a descendant of it.
pub fn selection_frequency(
    media: MediaId,
    concept: &PathIndex,
    records: &[&AnnotationRecord],
) -> Result<f64, CategorizeError> {
    let annotators: BTreeSet<&AnnotatorId> = records.iter().map(|r| &r.annotator).collect();
    if annotators.is_empty() {
        return Err(CategorizeError::NoAnnotators(media));
    }
    let selecting: BTreeSet<&AnnotatorId> = records
        .iter()
        .filter(|r| r.assignment.node().is_some_and(|n| concept.is_ancestor_or_self(n)))
        .map(|r| &r.annotator)
        .collect();
    Ok(selecting.len() as f64 / annotators.len() as f64)
}

/// The latest record of each annotator for one object.
fn latest_votes<'a>(records: &[&'a AnnotationRecord]) -> Vec<&'a AnnotationRecord> {
    let mut by_annotator: BTreeMap<&AnnotatorId, &AnnotationRecord> = BTreeMap::new();
    for r in records {
        by_annotator.insert(&r.annotator, r);
    }
    by_annotator.into_values().collect()
}

struct ObjectTally {
    evidence: ObjectEvidence,
    /// exact votes per node
    exact: BTreeMap<PathIndex, usize>,
    modal_count: usize,
}

fn tally(
    h: &Hierarchy,
    object_id: ObjectId,
    votes: &[&AnnotationRecord],
    threshold: f64,
) -> ObjectTally {
    let mut exact: BTreeMap<PathIndex, usize> = BTreeMap::new();
    let mut unrecognized = 0;
    let mut pooled = Observation::new();
    let mut observed_any = false;
    for r in votes {
        match &r.assignment {
            Assignment::Node { node } => *exact.entry(node.clone()).or_default() += 1,
            Assignment::Unrecognized => unrecognized += 1,
            Assignment::Pending { .. } => {}
        }
        if r.mode == Mode::ViaDifferentia && !r.observed.is_empty() {
            pooled.merge(&r.observed);
            observed_any = true;
        }
    }
    let n = exact.values().sum::<usize>() + unrecognized;

    // exact-count mode; ties go to the earliest node, the escape comes last
    let mut modal = None;
    let mut modal_count = 0;
    for (node, &c) in &exact {
        if c > modal_count {
            modal = Some(Assignment::Node { node: node.clone() });
            modal_count = c;
        }
    }
    if unrecognized > modal_count {
        modal = Some(Assignment::Unrecognized);
        modal_count = unrecognized;
    }

    let coarse = |p: &PathIndex| -> usize {
        exact
            .iter()
            .filter(|(n, _)| p.is_ancestor_or_self(n))
            .map(|(_, c)| c)
            .sum()
    };
    let mut agreed: Option<(PathIndex, usize)> = None;
    if n > 0 {
        for p in h.paths() {
            let support = coarse(&p);
            if support as f64 / n as f64 >= threshold {
                let deeper = agreed.as_ref().is_none_or(|(a, _)| p.depth() > a.depth());
                if deeper {
                    agreed = Some((p, support));
                }
            }
        }
    }
    let signature_observed = match (&agreed, observed_any) {
        (Some((p, _)), true) => {
            let sig = h.signature(p).unwrap_or_default();
            Some(pooled.satisfies_all(sig.iter()))
        }
        _ => None,
    };
    let mut vote_map: BTreeMap<String, usize> = exact.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    if unrecognized > 0 {
        vote_map.insert("Unrecognized".into(), unrecognized);
    }
    ObjectTally {
        evidence: ObjectEvidence {
            object_id,
            annotators: n,
            votes: vote_map,
            modal,
            agreement: agreed.as_ref().map(|(_, s)| *s as f64 / n as f64).unwrap_or(0.0),
            agreed: agreed.map(|(p, _)| p),
            signature_observed,
        },
        exact,
        modal_count,
    }
}

/// Two modal assignments denote different classes: unrelated nodes, or a
/// node against the out-of-hierarchy escape.
fn distinct_classes(a: &Assignment, b: &Assignment) -> bool {
    match (a, b) {
        (Assignment::Node { node: x }, Assignment::Node { node: y }) => x.unrelated(y),
        (Assignment::Node { .. }, Assignment::Unrecognized) | (Assignment::Unrecognized, Assignment::Node { .. }) => true,
        _ => false,
    }
}

/// Sorts one media item into exactly one flaw kind.
pub fn categorize_media(
    store: &AnnotationStore,
    media: MediaId,
    hierarchy: &Hierarchy,
    lexicon: &Lexicon,
    config: &CategorizerConfig,
) -> Result<FlawCategory, CategorizeError> {
    config.validate()?;
    let item = store.media(media).ok_or(CategorizeError::UnknownMedia(media))?;
    let objects = store.objects_of(media);
    if objects.is_empty() {
        return Err(CategorizeError::NoObjects(media));
    }
    let records = store.records_for_media(media);
    let annotators: BTreeSet<&AnnotatorId> = records.iter().map(|r| &r.annotator).collect();
    if annotators.len() < config.min_annotators {
        return Err(CategorizeError::TooFewAnnotators {
            media,
            found: annotators.len(),
            required: config.min_annotators,
        });
    }

    let tallies: Vec<ObjectTally> = objects
        .iter()
        .map(|o| {
            let votes = latest_votes(&store.records_for_object(o.object_id));
            tally(hierarchy, o.object_id, &votes, config.agreement_threshold)
        })
        .collect();

    let mut evidence = FlawEvidence {
        reason: Reason::LowAgreement,
        annotators: annotators.len(),
        supporting_records: records.iter().map(|r| r.record_id).collect(),
        objects: tallies.iter().map(|t| t.evidence.clone()).collect(),
        selection_frequencies: BTreeMap::new(),
        rivals: None,
        unrelated: None,
        needs_review: false,
        warnings: Vec::new(),
    };

    for kind in &config.precedence {
        let fired = match kind {
            FlawKind::Mislabelled => mislabelled(item, &records, lexicon, config, &mut evidence)?,
            FlawKind::MultiObject => multi_object(&tallies, &mut evidence),
            FlawKind::SingleObject => single_object(&tallies, config, &mut evidence),
            FlawKind::Good => false,
        };
        if fired {
            return Ok(FlawCategory {
                media_id: media,
                kind: *kind,
                evidence,
            });
        }
    }

    let good = tallies
        .iter()
        .all(|t| t.evidence.agreed.is_some() && t.evidence.signature_observed != Some(false));
    let kind = if good {
        evidence.reason = Reason::Agreement;
        FlawKind::Good
    } else {
        evidence.reason = Reason::LowAgreement;
        FlawKind::SingleObject
    };
    Ok(FlawCategory {
        media_id: media,
        kind,
        evidence,
    })
}

fn mislabelled(
    item: &MediaItem,
    records: &[&AnnotationRecord],
    lexicon: &Lexicon,
    config: &CategorizerConfig,
    evidence: &mut FlawEvidence,
) -> Result<bool, CategorizeError> {
    let Some(label) = item.dataset_label.as_deref() else { return Ok(false) };
    let resolved = lexicon.lookup(label, &config.label_language);
    if resolved.is_empty() {
        evidence.reason = Reason::UnresolvedLabel;
        evidence.needs_review = true;
        evidence
            .warnings
            .push(format!("dataset label `{label}` does not resolve in `{}`", config.label_language));
        return Ok(true);
    }
    let mut never = true;
    for c in &resolved {
        let f = selection_frequency(item.media_id, c, records)?;
        never &= f == 0.0;
        evidence.selection_frequencies.insert(c.clone(), f);
    }
    if never {
        evidence.reason = Reason::LabelNeverSelected;
    }
    Ok(never)
}

fn multi_object(tallies: &[ObjectTally], evidence: &mut FlawEvidence) -> bool {
    let modals: Vec<&Assignment> = tallies.iter().filter_map(|t| t.evidence.modal.as_ref()).collect();
    for (i, a) in modals.iter().enumerate() {
        for b in &modals[i + 1..] {
            if distinct_classes(a, b) {
                evidence.reason = Reason::UnrelatedObjects;
                evidence.unrelated = Some(((*a).clone(), (*b).clone()));
                return true;
            }
        }
    }
    false
}

fn single_object(tallies: &[ObjectTally], config: &CategorizerConfig, evidence: &mut FlawEvidence) -> bool {
    let [t] = tallies else { return false };
    if t.modal_count == 0 {
        return false;
    }
    let bar = config.rival_support_ratio * t.modal_count as f64;
    let coarse = |p: &PathIndex| -> usize {
        t.exact
            .iter()
            .filter(|(n, _)| p.is_ancestor_or_self(n))
            .map(|(_, c)| c)
            .sum()
    };
    let candidates: Vec<&PathIndex> = t.exact.keys().filter(|p| coarse(p) as f64 >= bar).collect();
    for (i, a) in candidates.iter().enumerate() {
        for b in &candidates[i + 1..] {
            if a.unrelated(b) {
                evidence.reason = Reason::RivalCandidates;
                evidence.rivals = Some(((*a).clone(), (*b).clone()));
                return true;
            }
        }
    }
    false
}

/// Counts per origin category and flaw kind; media that are neither
/// precomputed nor categorizable land in the `unassigned` row.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub origins: Vec<String>,
    /// `counts[i][k]` for origin `i`; `k` follows [`FlawKind::ALL`] with the
    /// unassigned count in the last slot.
    pub counts: Vec<[usize; 5]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<(MediaId, String)>,
}

pub const UNLABELLED_ORIGIN: &str = "(no label)";

impl CorpusReport {
    fn bump(&mut self, origin: &str, slot: usize) {
        let i = match self.origins.iter().position(|o| o == origin) {
            Some(i) => i,
            None => {
                self.origins.push(origin.to_string());
                self.counts.push([0; 5]);
                self.origins.len() - 1
            }
        };
        self.counts[i][slot] += 1;
    }

    pub fn count(&self, origin: &str, kind: FlawKind) -> usize {
        self.origins
            .iter()
            .position(|o| o == origin)
            .map_or(0, |i| self.counts[i][kind.slot()])
    }

    pub fn unassigned(&self, origin: &str) -> usize {
        self.origins.iter().position(|o| o == origin).map_or(0, |i| self.counts[i][4])
    }

    /// Media per origin (the "All" row).
    pub fn all_row(&self) -> Vec<usize> {
        self.counts.iter().map(|c| c.iter().sum()).collect()
    }

    pub fn total(&self) -> usize {
        self.all_row().iter().sum()
    }

    /// (row label, per-origin counts) in table order: the four kinds, the
    /// unassigned row when non-empty, then "All".
    pub fn rows(&self) -> Vec<(String, Vec<usize>)> {
        let mut rows: Vec<(String, Vec<usize>)> = FlawKind::ALL
            .iter()
            .map(|k| (k.label().to_string(), self.counts.iter().map(|c| c[k.slot()]).collect()))
            .collect();
        if self.counts.iter().any(|c| c[4] > 0) {
            rows.push(("Unassigned".into(), self.counts.iter().map(|c| c[4]).collect()));
        }
        rows.push(("All".into(), self.all_row()));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["flaw".to_string()];
        header.extend(self.origins.iter().cloned());
        header.push("total".into());
        w.write_record(&header).expect("in-memory write");
        for (label, counts) in self.rows() {
            let mut rec = vec![label];
            rec.extend(counts.iter().map(ToString::to_string));
            rec.push(counts.iter().sum::<usize>().to_string());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

impl fmt::Display for CorpusReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.origins.iter().map(String::len).max().unwrap_or(0).max(5);
        write!(f, "{:<14}", "")?;
        for o in &self.origins {
            write!(f, " {o:>width$}")?;
        }
        writeln!(f, " {:>width$}", "total")?;
        for (label, counts) in self.rows() {
            write!(f, "{label:<14}")?;
            for c in &counts {
                write!(f, " {c:>width$}")?;
            }
            writeln!(f, " {:>width$}", counts.iter().sum::<usize>())?;
        }
        Ok(())
    }
}

/// Categorizes every media item of the store. Precomputed categories are
/// taken as given; media failing the preconditions are counted as
/// unassigned and listed in `skipped`.
pub fn categorize_corpus(
    store: &AnnotationStore,
    hierarchy: &Hierarchy,
    lexicon: &Lexicon,
    config: &CategorizerConfig,
) -> Result<(CorpusReport, Vec<FlawCategory>), CategorizeError> {
    config.validate()?;
    let mut report = CorpusReport::default();
    let mut categories = Vec::new();
    for item in store.media_items() {
        let origin = item.dataset_label.as_deref().unwrap_or(UNLABELLED_ORIGIN);
        if let Some(kind) = item.flaw {
            report.bump(origin, kind.slot());
            continue;
        }
        match categorize_media(store, item.media_id, hierarchy, lexicon, config) {
            Ok(cat) => {
                report.bump(origin, cat.kind.slot());
                categories.push(cat);
            }
            Err(
                e @ (CategorizeError::NoObjects(_)
                | CategorizeError::TooFewAnnotators { .. }
                | CategorizeError::NoAnnotators(_)),
            ) => {
                report.bump(origin, 4);
                report.skipped.push((item.media_id, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((report, categories))
}

/// One row of the expert flaw-count fixture.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct FlawCountRow {
    pub category: String,
    pub flaw: FlawKindField,
    pub original: usize,
    pub ue: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub struct FlawKindField(pub FlawKind);

impl TryFrom<String> for FlawKindField {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse().map(FlawKindField)
    }
}

pub fn parse_flaw_counts(text: &str) -> Result<Vec<FlawCountRow>, CategorizeError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<FlawCountRow>, _>>()
        .map_err(|e| CategorizeError::Fixture(e.to_string()))
}

/// Ingests `size` media per category and stamps the expert `original`
/// counts onto them as precomputed categories. Media beyond the expert
/// counts stay uncategorized.
pub fn ingest_precomputed(
    store: &mut AnnotationStore,
    categories: &[(&str, usize)],
    rows: &[FlawCountRow],
) -> Result<(), CategorizeError> {
    let io = |e: crate::pipeline::PipelineError| CategorizeError::Fixture(e.to_string());
    for &(category, size) in categories {
        let mut kinds: Vec<FlawKind> = Vec::with_capacity(size);
        for row in rows.iter().filter(|r| r.category == category) {
            kinds.extend(std::iter::repeat_n(row.flaw.0, row.original));
        }
        if kinds.len() > size {
            return Err(CategorizeError::Fixture(format!(
                "{category}: {} categorized media exceed the {size} ingested",
                kinds.len()
            )));
        }
        for i in 0..size {
            let m = store
                .ingest_media(&format!("{category}/{:04}", i + 1), Some(category))
                .map_err(io)?;
            if let Some(&k) = kinds.get(i) {
                store.assign_flaw(m.media_id, k).map_err(io)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, facets};
    use crate::model::PropertyAssertion;
    use crate::pipeline::Polygon;

    fn p(s: &str) -> PathIndex {
        s.parse().unwrap()
    }

    fn setup(label: Option<&str>, objects: usize) -> (AnnotationStore, MediaId, Vec<ObjectId>) {
        let mut s = AnnotationStore::new();
        let m = s.ingest_media("x.jpg", label).unwrap().media_id;
        let os = (0..objects)
            .map(|i| {
                s.register_object(m, Polygon::rect(i as f64 * 10.0, 0.0, 5.0, 5.0), &AnnotatorId::new("d"))
                    .unwrap()
                    .object_id
            })
            .collect();
        (s, m, os)
    }

    fn guitar_obs(jack: &str) -> Observation {
        Observation::from_assertions([
            PropertyAssertion::one(facets::SOUND_MECHANISM, "present"),
            PropertyAssertion::one(facets::SOUND_PRODUCTION, "taut-strings"),
            PropertyAssertion::one(facets::STRING_COUNT, 6),
            PropertyAssertion::one(facets::INPUT_JACK, jack),
        ])
    }

    fn strings(n: i64) -> Observation {
        Observation::from_assertions([
            PropertyAssertion::one(facets::SOUND_MECHANISM, "present"),
            PropertyAssertion::one(facets::SOUND_PRODUCTION, "taut-strings"),
            PropertyAssertion::one(facets::STRING_COUNT, n),
        ])
    }

    fn run(s: &AnnotationStore, m: MediaId) -> FlawCategory {
        let h = fixtures::musical_instruments();
        let lex = fixtures::english_lexicon(&h);
        categorize_media(s, m, &h, &lex, &CategorizerConfig::default()).unwrap()
    }

    #[test]
    fn unanimous_with_visible_signature_is_good() {
        let h = fixtures::musical_instruments();
        let (mut s, m, os) = setup(Some("acoustic guitar"), 1);
        for i in 1..=8 {
            s.classify_object(&h, os[0], guitar_obs("absent"), &AnnotatorId::new(format!("U1.{i}")))
                .unwrap();
        }
        let c = run(&s, m);
        assert_eq!(c.kind, FlawKind::Good);
        assert_eq!(c.evidence.objects[0].agreed, Some(p("1_1_1_1")));
        assert_eq!(c.evidence.objects[0].signature_observed, Some(true));
    }

    #[test]
    fn even_split_between_unrelated_nodes_is_single_object() {
        let h = fixtures::musical_instruments();
        let (mut s, m, os) = setup(Some("dulcimer"), 1);
        for i in 1..=8 {
            let obs = if i <= 4 { strings(4) } else { strings(13) };
            s.classify_object(&h, os[0], obs, &AnnotatorId::new(format!("U1.{i}"))).unwrap();
        }
        let c = run(&s, m);
        assert_eq!(c.kind, FlawKind::SingleObject);
        assert_eq!(c.evidence.rivals, Some((p("1_1_2"), p("1_1_3"))));
    }

    #[test]
    fn label_nobody_chose_is_mislabelled() {
        let h = fixtures::musical_instruments();
        let (mut s, m, os) = setup(Some("acoustic guitar"), 1);
        for i in 1..=3 {
            s.classify_object(&h, os[0], strings(13), &AnnotatorId::new(format!("U{i}"))).unwrap();
        }
        let c = run(&s, m);
        assert_eq!(c.kind, FlawKind::Mislabelled);
        assert_eq!(c.evidence.selection_frequencies[&p("1_1_1_1")], 0.0);
    }

    #[test]
    fn unresolvable_label_is_flagged() {
        let h = fixtures::musical_instruments();
        let (mut s, m, os) = setup(Some("birthday cake"), 1);
        for i in 1..=2 {
            s.record_unrecognized(os[0], &AnnotatorId::new(format!("U{i}")), Mode::ViaDifferentia)
                .unwrap();
        }
        let _ = h;
        let c = run(&s, m);
        assert_eq!(c.kind, FlawKind::Mislabelled);
        assert!(c.evidence.needs_review);
        assert_eq!(c.evidence.warnings.len(), 1);
    }

    #[test]
    fn stage_photo_is_multi_object() {
        let h = fixtures::musical_instruments();
        let (mut s, m, os) = setup(None, 3);
        for i in 1..=3 {
            let a = AnnotatorId::new(format!("U{i}"));
            s.classify_object(&h, os[0], guitar_obs("present"), &a).unwrap();
            s.record_unrecognized(os[1], &a, Mode::ViaDifferentia).unwrap();
            s.record_unrecognized(os[2], &a, Mode::ViaDifferentia).unwrap();
        }
        assert_eq!(run(&s, m).kind, FlawKind::MultiObject);
    }

    #[test]
    fn preconditions() {
        let h = fixtures::musical_instruments();
        let lex = fixtures::english_lexicon(&h);
        let cfg = CategorizerConfig::default();
        let (s, m, _) = setup(None, 0);
        assert!(matches!(
            categorize_media(&s, m, &h, &lex, &cfg),
            Err(CategorizeError::NoObjects(_))
        ));
        let (mut s, m, os) = setup(None, 1);
        s.classify_object(&h, os[0], strings(6), &AnnotatorId::new("solo")).unwrap();
        assert!(matches!(
            categorize_media(&s, m, &h, &lex, &cfg),
            Err(CategorizeError::TooFewAnnotators { found: 1, .. })
        ));
        assert!(selection_frequency(m, &p("1"), &[]).is_err());
    }

    #[test]
    fn selection_frequency_counts_descendants() {
        let h = fixtures::musical_instruments();
        let (mut s, m, os) = setup(None, 1);
        for (i, obs) in [guitar_obs("absent"), guitar_obs("present"), strings(13), strings(4)]
            .into_iter()
            .enumerate()
        {
            s.classify_object(&h, os[0], obs, &AnnotatorId::new(format!("U{i}"))).unwrap();
        }
        let recs = s.records_for_media(m);
        assert_eq!(selection_frequency(m, &p("1_1_1"), &recs).unwrap(), 0.5);
        assert_eq!(selection_frequency(m, &p("1_1"), &recs).unwrap(), 1.0);
        assert_eq!(selection_frequency(m, &p("1_2"), &recs).unwrap(), 0.0);
    }

    #[test]
    fn config_ranges() {
        let mut c = CategorizerConfig::default();
        assert!(c.validate().is_ok());
        c.agreement_threshold = 0.0;
        assert!(c.validate().is_err());
        let c = CategorizerConfig {
            precedence: vec![FlawKind::Good],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn report_columns_sum_to_media() {
        let mut s = AnnotationStore::new();
        let rows = parse_flaw_counts(fixtures::TABLE2_CSV).unwrap();
        ingest_precomputed(&mut s, &fixtures::CORPUS_CATEGORIES, &rows).unwrap();
        let h = fixtures::musical_instruments();
        let lex = fixtures::english_lexicon(&h);
        let (report, _) = categorize_corpus(&s, &h, &lex, &CategorizerConfig::default()).unwrap();
        assert_eq!(report.count("Guitar", FlawKind::MultiObject), rows
            .iter()
            .find(|r| r.category == "Guitar" && r.flaw.0 == FlawKind::MultiObject)
            .unwrap()
            .original);
        assert_eq!(report.total(), 3660);
        assert!(report.to_csv().lines().last().unwrap().starts_with("All,"));
    }

    #[test]
    fn empty_corpus_reports_zero() {
        let h = fixtures::musical_instruments();
        let lex = fixtures::english_lexicon(&h);
        let (report, cats) =
            categorize_corpus(&AnnotationStore::new(), &h, &lex, &CategorizerConfig::default()).unwrap();
        assert_eq!(report.total(), 0);
        assert!(cats.is_empty());
    }
}
