//! File formats: the hierarchy document (with labels, gaps, identifiers
//! and relevance attestations), standalone lexicon documents, corpus
//! import from category listings, agreement grids, and dataset manifests.
//!
//! Everything is plain JSON or CSV. Writes go to a temporary file in the
//! destination directory which is then renamed over the target.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{AgreementError, AgreementMatrix};
use crate::canon::Attestations;
use crate::flaw::FlawKind;
use crate::ids::MediaId;
use crate::lexicon::{AlinguisticId, Language, LexicalEntry, LexicalGap, Lexicon, LexiconError};
use crate::model::{Differentia, Facet, FacetId, Hierarchy, ModelError, PathIndex, PropertyAssertion, PropertyRegistry, ValueSet};
use crate::pipeline::{AnnotationStore, Assignment, MediaItem, Mode, PipelineError, Polygon, Stage};

pub const HIERARCHY_FORMAT: &str = "facetgt-hierarchy";
pub const LEXICON_FORMAT: &str = "facetgt-lexicon";
pub const MANIFEST_FORMAT: &str = "facetgt-manifest";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid document: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error("split of {train} + {test} does not cover the {corpus} included media")]
    SplitArity { train: usize, test: usize, corpus: usize },
    #[error("{} media are not Identified: {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    NotIdentified(Vec<MediaId>),
    #[error("unknown media {0}")]
    UnknownMedia(MediaId),
}

impl From<serde_json::Error> for IoError {
    fn from(e: serde_json::Error) -> Self {
        IoError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let file_err = |source| IoError::File {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(file_err)?;
    tmp.write_all(bytes).map_err(file_err)?;
    tmp.as_file().sync_all().map_err(file_err)?;
    tmp.persist(path).map_err(|e| file_err(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDoc {
    pub language: Language,
    pub lemma: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub path_index: PathIndex,
    #[serde(default)]
    pub parent_index: Option<PathIndex>,
    pub facet: FacetId,
    pub value: ValueSet,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_assertions: Vec<PropertyAssertion>,
    #[serde(default)]
    pub gloss: Option<String>,
    #[serde(default)]
    pub alinguistic_id: Option<AlinguisticId>,
    #[serde(default)]
    pub labels: Vec<LabelDoc>,
    #[serde(default)]
    pub gaps: Vec<Language>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyDoc {
    pub format: String,
    pub schema_version: u32,
    pub version: u64,
    pub purpose: String,
    pub succession_order: Vec<FacetId>,
    pub facets: Vec<Facet>,
    pub nodes: Vec<NodeDoc>,
    #[serde(default)]
    pub next_alinguistic_id: Option<u64>,
    #[serde(default)]
    pub attestations: Attestations,
}

/// A hierarchy with its lexicon and relevance attestations: what one
/// hierarchy file carries.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyBundle {
    pub hierarchy: Hierarchy,
    pub lexicon: Lexicon,
    pub attestations: Attestations,
}

impl HierarchyBundle {
    pub fn new(hierarchy: Hierarchy) -> Self {
        Self {
            hierarchy,
            lexicon: Lexicon::new(),
            attestations: Attestations::new(),
        }
    }

    pub fn to_doc(&self) -> HierarchyDoc {
        let h = &self.hierarchy;
        let mut labels: BTreeMap<PathIndex, Vec<LabelDoc>> = BTreeMap::new();
        for e in self.lexicon.entries() {
            labels.entry(e.concept).or_default().push(LabelDoc {
                language: e.language,
                lemma: e.lemma,
            });
        }
        let mut gaps: BTreeMap<PathIndex, Vec<Language>> = BTreeMap::new();
        for g in self.lexicon.gaps() {
            gaps.entry(g.concept).or_default().push(g.language);
        }
        let nodes = h
            .nodes()
            .map(|n| {
                let mut assertions = n.differentia.assertions().iter().cloned();
                let first = assertions.next().expect("differentiae are non-empty");
                NodeDoc {
                    alinguistic_id: self.lexicon.alinguistic_id(&n.path_index),
                    labels: labels.remove(&n.path_index).unwrap_or_default(),
                    gaps: gaps.remove(&n.path_index).unwrap_or_default(),
                    parent_index: n.parent,
                    facet: first.facet,
                    value: first.value,
                    extra_assertions: assertions.collect(),
                    gloss: n.gloss,
                    path_index: n.path_index,
                }
            })
            .collect();
        HierarchyDoc {
            format: HIERARCHY_FORMAT.into(),
            schema_version: SCHEMA_VERSION,
            version: h.version(),
            purpose: h.purpose().to_string(),
            succession_order: h.succession_order().to_vec(),
            facets: h.registry().facets().cloned().collect(),
            nodes,
            next_alinguistic_id: Some(self.lexicon.next_id()),
            attestations: self.attestations.clone(),
        }
    }

    /// Rebuilds a bundle; returns it with non-fatal warnings.
    pub fn from_doc(doc: HierarchyDoc) -> Result<(Self, Vec<String>), IoError> {
        let mut warnings = Vec::new();
        if doc.format != HIERARCHY_FORMAT {
            warnings.push(format!("unexpected format `{}`", doc.format));
        }
        if doc.schema_version != SCHEMA_VERSION {
            warnings.push(format!(
                "schema version {} differs from supported version {SCHEMA_VERSION}",
                doc.schema_version
            ));
        }
        let registry = PropertyRegistry::new(doc.facets)?;
        let mut nodes: BTreeMap<PathIndex, NodeDoc> = BTreeMap::new();
        for n in doc.nodes {
            if nodes.contains_key(&n.path_index) {
                return Err(IoError::Invalid(format!("duplicate path_index `{}`", n.path_index)));
            }
            if n.parent_index != n.path_index.parent() {
                return Err(IoError::Invalid(format!(
                    "node `{}`: parent_index does not match its path",
                    n.path_index
                )));
            }
            nodes.insert(n.path_index.clone(), n);
        }
        let differentia = |n: &NodeDoc| {
            Differentia::new(
                std::iter::once(PropertyAssertion::new(n.facet.clone(), n.value.clone()))
                    .chain(n.extra_assertions.iter().cloned()),
            )
        };
        let root = nodes
            .get(&PathIndex::root())
            .ok_or_else(|| IoError::Invalid("missing root node `1`".into()))?;
        let mut h = Hierarchy::new(
            doc.purpose,
            registry,
            doc.succession_order,
            differentia(root)?,
            root.gloss.clone(),
        )?;
        // numeric path order is a preorder, so parents come first and
        // siblings arrive in index order
        for (path, n) in nodes.iter().skip(1) {
            let parent = path.parent().expect("non-root");
            if !h.contains(&parent) {
                return Err(IoError::Invalid(format!("node `{path}` has no parent node")));
            }
            let got = h.graft(&parent, differentia(n)?, n.gloss.clone())?;
            if &got != path {
                return Err(IoError::Invalid(format!(
                    "path_index `{path}` skips a sibling (expected `{got}`)"
                )));
            }
        }
        h.set_version(doc.version);

        let entries = nodes.values().flat_map(|n| {
            n.labels.iter().map(move |l| LexicalEntry {
                language: l.language.clone(),
                lemma: l.lemma.clone(),
                concept: n.path_index.clone(),
            })
        });
        let gaps = nodes.values().flat_map(|n| {
            n.gaps.iter().map(move |l| LexicalGap {
                language: l.clone(),
                concept: n.path_index.clone(),
            })
        });
        let ids = nodes
            .values()
            .filter_map(|n| n.alinguistic_id.map(|id| (n.path_index.clone(), id)));
        let lexicon = Lexicon::restore(&h, entries, gaps, ids, doc.next_alinguistic_id)?;
        let mut seen = HashSet::new();
        for (_, id) in lexicon.ids() {
            if !seen.insert(id) {
                return Err(IoError::Invalid(format!("alinguistic id {id} is used twice")));
            }
        }
        for a in doc.attestations.iter() {
            if h.registry().get(&a.facet_id).is_none() {
                return Err(IoError::Invalid(format!("attestation for unknown facet `{}`", a.facet_id)));
            }
        }
        Ok((
            Self {
                hierarchy: h,
                lexicon,
                attestations: doc.attestations,
            },
            warnings,
        ))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_doc()).expect("documents serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<(Self, Vec<String>), IoError> {
        Self::from_doc(serde_json::from_str(text)?)
    }
}

pub fn save_hierarchy(bundle: &HierarchyBundle, path: &Path) -> Result<(), IoError> {
    write_atomic(path, bundle.to_json().as_bytes())
}

pub fn load_hierarchy(path: &Path) -> Result<(HierarchyBundle, Vec<String>), IoError> {
    HierarchyBundle::from_json(&read(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdDoc {
    pub concept: PathIndex,
    pub id: AlinguisticId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconDoc {
    pub format: String,
    pub entries: Vec<LexicalEntry>,
    #[serde(default)]
    pub gaps: Vec<LexicalGap>,
    #[serde(default)]
    pub ids: Vec<IdDoc>,
    #[serde(default)]
    pub next_id: Option<u64>,
}

pub fn lexicon_to_json(lexicon: &Lexicon) -> String {
    let doc = LexiconDoc {
        format: LEXICON_FORMAT.into(),
        entries: lexicon.entries().collect(),
        gaps: lexicon.gaps().collect(),
        ids: lexicon.ids().map(|(c, id)| IdDoc { concept: c.clone(), id }).collect(),
        next_id: Some(lexicon.next_id()),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("documents serialize");
    s.push('\n');
    s
}

pub fn lexicon_from_json(text: &str, hierarchy: &Hierarchy) -> Result<Lexicon, IoError> {
    let doc: LexiconDoc = serde_json::from_str(text)?;
    if doc.format != LEXICON_FORMAT {
        return Err(IoError::Invalid(format!("unexpected format `{}`", doc.format)));
    }
    Ok(Lexicon::restore(
        hierarchy,
        doc.entries,
        doc.gaps,
        doc.ids.into_iter().map(|d| (d.concept, d.id)),
        doc.next_id,
    )?)
}

pub fn load_agreement_fixture(path: &Path, mode: Option<Mode>) -> Result<AgreementMatrix, IoError> {
    Ok(AgreementMatrix::from_csv(&read(path)?, mode)?)
}

/// A category listing: each dataset category with its gloss and image
/// references.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryFile {
    pub categories: Vec<CategoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub label: String,
    #[serde(default)]
    pub gloss: Option<String>,
    #[serde(default)]
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReport {
    pub items: Vec<MediaItem>,
    /// (category, imported media) in file order.
    pub counts: Vec<(String, usize)>,
    pub warnings: Vec<String>,
}

impl ImportReport {
    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, c)| c).sum()
    }
}

/// Ingests one media item per image reference. When `image_index` is
/// given, references missing from it are skipped with a warning. A
/// reference listed under several categories is ingested once per
/// category, with a warning.
pub fn import_imagenet_style(
    store: &mut AnnotationStore,
    categories: &CategoryFile,
    image_index: Option<&BTreeSet<String>>,
) -> Result<ImportReport, IoError> {
    let mut report = ImportReport {
        items: Vec::new(),
        counts: Vec::new(),
        warnings: Vec::new(),
    };
    let mut first_seen: BTreeMap<&str, &str> = BTreeMap::new();
    for cat in &categories.categories {
        let mut n = 0;
        for (row, image) in cat.images.iter().enumerate() {
            let image = image.trim();
            if image.is_empty() {
                report
                    .warnings
                    .push(format!("{}: image {} has an empty reference", cat.label, row + 1));
                continue;
            }
            if image_index.is_some_and(|ix| !ix.contains(image)) {
                report
                    .warnings
                    .push(format!("{}: image {} `{image}` is missing from the index", cat.label, row + 1));
                continue;
            }
            if let Some(prev) = first_seen.get(image) {
                report.warnings.push(format!(
                    "`{image}` is listed under both `{prev}` and `{}`",
                    cat.label
                ));
            } else {
                first_seen.insert(image, &cat.label);
            }
            let item = store.ingest_media_duplicate_ok(image, Some(&cat.label))?;
            report.items.push(item);
            n += 1;
        }
        report.counts.push((cat.label.clone(), n));
    }
    Ok(report)
}

pub fn read_category_file(text: &str) -> Result<CategoryFile, IoError> {
    Ok(serde_json::from_str(text)?)
}

/// One image reference per line; blank lines and `#` comments ignored.
pub fn read_image_index(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// How manifest rows obtain their concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifestMode {
    /// From differentia-driven annotations; media must be Identified.
    ViaDifferentia,
    /// From label-driven annotations; media must be Identified.
    ViaLabel,
    /// From the dataset label alone.
    DatasetLabel,
}

impl std::str::FromStr for ManifestMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "viadifferentia" | "differentia" => Ok(Self::ViaDifferentia),
            "vialabel" | "label" => Ok(Self::ViaLabel),
            "datasetlabel" | "dataset" => Ok(Self::DatasetLabel),
            _ => Err(format!("unknown manifest mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub test: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub stratify: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub media_id: MediaId,
    pub source_ref: String,
    pub polygon: Option<Polygon>,
    pub alinguistic_id: Option<AlinguisticId>,
    pub flaw_kind: Option<FlawKind>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub hierarchy_version: u64,
    pub mode: ManifestMode,
    pub split: SplitSpec,
    pub hierarchy: HierarchyDoc,
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.rows.iter().filter(|r| r.split == split).count()
    }

    /// Deterministic JSON rendering.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifests serialize");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["media_id", "source_ref", "polygon", "alinguistic_id", "flaw_kind", "split"])
            .expect("in-memory write");
        for r in &self.rows {
            let polygon = r
                .polygon
                .as_ref()
                .map(|p| serde_json::to_string(p).expect("polygons serialize"))
                .unwrap_or_default();
            let split = match r.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            w.write_record([
                r.media_id.0.to_string(),
                r.source_ref.clone(),
                polygon,
                r.alinguistic_id.map(|i| i.0.to_string()).unwrap_or_default(),
                r.flaw_kind.map(|k| format!("{k:?}")).unwrap_or_default(),
                split.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRequest {
    pub mode: ManifestMode,
    pub split: SplitSpec,
    /// Media to include; all media when absent.
    #[serde(default)]
    pub include: Option<Vec<MediaId>>,
}

/// Modal node of one object among records of a given mode (ties go to the
/// earliest path).
fn modal_node(store: &AnnotationStore, object: crate::ids::ObjectId, mode: Mode) -> Option<PathIndex> {
    let mut counts: BTreeMap<PathIndex, usize> = BTreeMap::new();
    for r in store.records_for_object(object) {
        if r.mode != mode {
            continue;
        }
        if let Assignment::Node { node } = &r.assignment {
            *counts.entry(node.clone()).or_default() += 1;
        }
    }
    let mut best: Option<(PathIndex, usize)> = None;
    for (p, c) in counts {
        if best.as_ref().is_none_or(|(_, b)| c > *b) {
            best = Some((p, c));
        }
    }
    best.map(|(p, _)| p)
}

/// Assigns train/test per media: seeded shuffle, optionally stratified by
/// dataset label with largest-remainder quotas.
fn assign_splits(media: &[&MediaItem], spec: &SplitSpec) -> BTreeMap<MediaId, Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut groups: Vec<(Option<&str>, Vec<MediaId>)> = Vec::new();
    if spec.stratify {
        for m in media {
            let key = m.dataset_label.as_deref();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(m.media_id),
                None => groups.push((key, vec![m.media_id])),
            }
        }
    } else {
        groups.push((None, media.iter().map(|m| m.media_id).collect()));
    }
    let total = media.len().max(1);
    let mut quotas: Vec<usize> = groups.iter().map(|(_, v)| spec.test * v.len() / total).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    // largest remainder, ties to the earlier group
    order.sort_by_key(|&i| std::cmp::Reverse((spec.test * groups[i].1.len()) % total));
    for &i in order.iter().take(spec.test - assigned) {
        quotas[i] += 1;
    }
    let mut out = BTreeMap::new();
    for ((_, ids), quota) in groups.iter_mut().zip(quotas) {
        ids.sort();
        ids.shuffle(&mut rng);
        for (k, id) in ids.iter().enumerate() {
            out.insert(*id, if k < quota { Split::Test } else { Split::Train });
        }
    }
    out
}

/// Builds a manifest with one row per included (media, object), or one
/// object-less row for media without objects.
pub fn export_manifest(
    store: &AnnotationStore,
    bundle: &HierarchyBundle,
    request: &ManifestRequest,
    label_language: &Language,
) -> Result<DatasetManifest, IoError> {
    let media: Vec<&MediaItem> = match &request.include {
        Some(ids) => {
            let mut seen = BTreeSet::new();
            let mut v = Vec::new();
            for id in ids {
                let m = store.media(*id).ok_or(IoError::UnknownMedia(*id))?;
                if seen.insert(*id) {
                    v.push(m);
                }
            }
            v.sort_by_key(|m| m.media_id);
            v
        }
        None => store.media_items().collect(),
    };
    let spec = &request.split;
    if spec.train + spec.test != media.len() {
        return Err(IoError::SplitArity {
            train: spec.train,
            test: spec.test,
            corpus: media.len(),
        });
    }
    let annotation_mode = match request.mode {
        ManifestMode::ViaDifferentia => Some(Mode::ViaDifferentia),
        ManifestMode::ViaLabel => Some(Mode::ViaLabel),
        ManifestMode::DatasetLabel => None,
    };
    if annotation_mode.is_some() {
        let offenders: Vec<MediaId> = media
            .iter()
            .filter(|m| m.stage != Stage::Identified)
            .map(|m| m.media_id)
            .collect();
        if !offenders.is_empty() {
            return Err(IoError::NotIdentified(offenders));
        }
    }
    let lexicon = &bundle.lexicon;
    let splits = assign_splits(&media, spec);
    let mut rows = Vec::new();
    for m in &media {
        let split = splits[&m.media_id];
        let label_id = || {
            let hits = m
                .dataset_label
                .as_deref()
                .map(|l| lexicon.lookup(l, label_language))
                .unwrap_or_default();
            match hits.len() {
                1 => lexicon.alinguistic_id(hits.iter().next().expect("one hit")),
                _ => None,
            }
        };
        let objects = store.objects_of(m.media_id);
        if objects.is_empty() {
            rows.push(ManifestRow {
                media_id: m.media_id,
                source_ref: m.source_ref.clone(),
                polygon: None,
                alinguistic_id: if annotation_mode.is_none() { label_id() } else { None },
                flaw_kind: m.flaw,
                split,
            });
        }
        for o in objects {
            let alinguistic_id = match annotation_mode {
                Some(mode) => modal_node(store, o.object_id, mode).and_then(|n| lexicon.alinguistic_id(&n)),
                None => label_id(),
            };
            rows.push(ManifestRow {
                media_id: m.media_id,
                source_ref: m.source_ref.clone(),
                polygon: Some(o.polygon.clone()),
                alinguistic_id,
                flaw_kind: m.flaw,
                split,
            });
        }
    }
    Ok(DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        hierarchy_version: bundle.hierarchy.version(),
        mode: request.mode,
        split: spec.clone(),
        hierarchy: bundle.to_doc(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn bundle() -> HierarchyBundle {
        let h = fixtures::musical_instruments();
        let mut lexicon = fixtures::english_lexicon(&h);
        let ben = Language::new("ben").unwrap();
        lexicon.declare_gap(&h, &"1_1_3".parse().unwrap(), &ben).unwrap();
        lexicon.mint_alinguistic_id(&h, &"1_1_3".parse().unwrap()).unwrap();
        HierarchyBundle {
            hierarchy: h,
            lexicon,
            attestations: Attestations::new(),
        }
    }

    #[test]
    fn hierarchy_round_trip() {
        let b = bundle();
        let (back, warnings) = HierarchyBundle::from_json(&b.to_json()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back, b);
        assert_eq!(back.to_json(), b.to_json());
    }

    #[test]
    fn missing_nodes_field_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(&bundle().to_json()).unwrap();
        v.as_object_mut().unwrap().remove("nodes");
        let err = HierarchyBundle::from_json(&serde_json::to_string_pretty(&v).unwrap()).unwrap_err();
        assert!(err.to_string().contains("missing field `nodes`"), "{err}");
        assert!(matches!(err, IoError::Parse { .. }));
    }

    #[test]
    fn duplicate_path_index_rejected() {
        let mut doc = bundle().to_doc();
        let dup = doc.nodes[1].clone();
        doc.nodes.push(dup);
        let err = HierarchyBundle::from_doc(doc).unwrap_err();
        assert!(err.to_string().contains("duplicate path_index"), "{err}");
    }

    #[test]
    fn skipped_sibling_and_missing_root_rejected() {
        let mut doc = bundle().to_doc();
        doc.nodes.retain(|n| n.path_index.as_str() != "1_2");
        assert!(HierarchyBundle::from_doc(doc).is_err());
        let mut doc = bundle().to_doc();
        doc.nodes.clear();
        assert!(HierarchyBundle::from_doc(doc).unwrap_err().to_string().contains("root"));
    }

    #[test]
    fn schema_version_mismatch_warns() {
        let mut doc = bundle().to_doc();
        doc.schema_version = 99;
        let (_, warnings) = HierarchyBundle::from_doc(doc).unwrap();
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn syntax_errors_carry_position() {
        match HierarchyBundle::from_json("{\n  \"format\": ,\n}") {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        let b = bundle();
        save_hierarchy(&b, &path).unwrap();
        let (back, _) = load_hierarchy(&path).unwrap();
        assert_eq!(back, b);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn lexicon_round_trip() {
        let b = bundle();
        let back = lexicon_from_json(&lexicon_to_json(&b.lexicon), &b.hierarchy).unwrap();
        assert_eq!(back, b.lexicon);
    }

    #[test]
    fn import_warns_and_continues() {
        let file = CategoryFile {
            categories: vec![
                CategoryEntry {
                    label: "Guitar".into(),
                    gloss: None,
                    images: vec!["a.jpg".into(), "b.jpg".into(), "gone.jpg".into()],
                },
                CategoryEntry {
                    label: "Acoustic Guitar".into(),
                    gloss: None,
                    images: vec!["a.jpg".into()],
                },
            ],
        };
        let index = read_image_index("a.jpg\nb.jpg\n# comment\n");
        let mut store = AnnotationStore::new();
        let r = import_imagenet_style(&mut store, &file, Some(&index)).unwrap();
        assert_eq!(r.items.len(), 3);
        assert_eq!(r.counts, vec![("Guitar".into(), 2), ("Acoustic Guitar".into(), 1)]);
        assert_eq!(r.warnings.len(), 2);
        let empty = import_imagenet_style(&mut AnnotationStore::new(), &CategoryFile::default(), None).unwrap();
        assert_eq!(empty.total(), 0);
    }

    #[test]
    fn split_arity_checked() {
        let mut store = AnnotationStore::new();
        for i in 0..10 {
            store.ingest_media(&format!("{i}.jpg"), Some("Guitar")).unwrap();
        }
        let req = |train, test| ManifestRequest {
            mode: ManifestMode::DatasetLabel,
            split: SplitSpec {
                train,
                test,
                seed: 7,
                stratify: true,
            },
            include: None,
        };
        let eng = Language::new("eng").unwrap();
        assert!(matches!(
            export_manifest(&store, &bundle(), &req(5, 4), &eng),
            Err(IoError::SplitArity { .. })
        ));
        let m = export_manifest(&store, &bundle(), &req(7, 3), &eng).unwrap();
        assert_eq!((m.count(Split::Train), m.count(Split::Test)), (7, 3));
        assert!(matches!(
            export_manifest(
                &store,
                &bundle(),
                &ManifestRequest {
                    mode: ManifestMode::ViaDifferentia,
                    ..req(7, 3)
                },
                &eng
            ),
            Err(IoError::NotIdentified(ids)) if ids.len() == 10
        ));
    }

    #[test]
    fn stratified_quotas_follow_largest_remainder() {
        let mut store = AnnotationStore::new();
        for i in 0..6 {
            store.ingest_media(&format!("g{i}"), Some("Guitar")).unwrap();
        }
        for i in 0..4 {
            store.ingest_media(&format!("k{i}"), Some("Koto")).unwrap();
        }
        let media: Vec<&MediaItem> = store.media_items().collect();
        let spec = SplitSpec {
            train: 5,
            test: 5,
            seed: 1,
            stratify: true,
        };
        let s = assign_splits(&media, &spec);
        let tests = |label: &str| {
            media
                .iter()
                .filter(|m| m.dataset_label.as_deref() == Some(label) && s[&m.media_id] == Split::Test)
                .count()
        };
        assert_eq!(tests("Guitar"), 3);
        assert_eq!(tests("Koto"), 2);
    }
}
