//! Four-stage annotation pipeline over an append-only store.
//!
//! Media move through `Ingested → Detected → VisuallyClassified →
//! Labelled → Identified` and never move back. Every state change is an
//! [`Event`]; the store is the fold of its event log, so replaying a log
//! on an empty store reproduces the same media, objects, records and
//! stages.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flaw::FlawKind;
use crate::ids::{AnnotatorId, MediaId, ObjectId, RecordId};
use crate::lexicon::{normalize_lemma, Language, Lexicon};
use crate::model::{Facet, Hierarchy, ModelError, Observation, PathIndex};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown media {0}")]
    UnknownMedia(MediaId),
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("source `{0}` was already ingested")]
    DuplicateSource(String),
    #[error("source reference must not be empty")]
    EmptySource,
    #[error("invalid polygon: {0}")]
    Geometry(#[from] GeometryError),
    #[error("media {media} is at stage {current:?}; operation requires {required}")]
    StageOrder {
        media: MediaId,
        current: Stage,
        required: String,
    },
    #[error("media {media} cannot reach {target:?}: {reason} ({})", join_paths(.offending))]
    Gate {
        media: MediaId,
        target: Stage,
        reason: &'static str,
        offending: Vec<PathIndex>,
    },
    #[error("observation is not registry-valid: {0}")]
    InvalidObservation(#[source] ModelError),
    #[error("annotation log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("annotation log line {line}: {message}")]
    Replay { line: usize, message: String },
}

fn join_paths(paths: &[PathIndex]) -> String {
    paths.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Ingested,
    Detected,
    VisuallyClassified,
    Labelled,
    Identified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    ViaDifferentia,
    ViaLabel,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "viadifferentia" | "differentia" => Ok(Mode::ViaDifferentia),
            "vialabel" | "label" => Ok(Mode::ViaLabel),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaItem {
    pub media_id: MediaId,
    pub source_ref: String,
    pub dataset_label: Option<String>,
    pub stage: Stage,
    pub flaw: Option<FlawKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("a polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("edge {0} is degenerate")]
    DegenerateEdge(usize),
    #[error("edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
}

/// Closed polygon in pixel coordinates; the last vertex connects back to
/// the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon(pub Vec<[f64; 2]>);

impl Polygon {
    pub fn new(vertices: impl IntoIterator<Item = (f64, f64)>) -> Self {
        Self(vertices.into_iter().map(|(x, y)| [x, y]).collect())
    }

    pub fn rect(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new([(x, y), (x + w, y), (x + w, y + h), (x, y + h)])
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.0
    }

    /// Simple-polygon check: at least three finite vertices, no zero-length
    /// edge, no two edges touching except adjacent edges at their shared
    /// vertex.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let v = &self.0;
        let n = v.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        if let Some(i) = v.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        let edge = |i: usize| (v[i], v[(i + 1) % n]);
        for i in 0..n {
            let (a, b) = edge(i);
            if a == b {
                return Err(GeometryError::DegenerateEdge(i));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = edge(i);
                let (c, d) = edge(j);
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // shared vertex plus folding back along the same line
                    let (p, q, r) = if j == i + 1 { (a, b, d) } else { (c, d, b) };
                    if cross(p, q, r) == 0.0 && dot_dir(p, q, r) < 0.0 {
                        return Err(GeometryError::SelfIntersecting(i, j));
                    }
                } else if segments_touch(a, b, c, d) {
                    return Err(GeometryError::SelfIntersecting(i, j));
                }
            }
        }
        Ok(())
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Dot product of (q - p) and (r - q).
fn dot_dir(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    (q[0] - p[0]) * (r[0] - q[0]) + (q[1] - p[1]) * (r[1] - q[1])
}

fn on_segment(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> bool {
    q[0] <= p[0].max(r[0]) && q[0] >= p[0].min(r[0]) && q[1] <= p[1].max(r[1]) && q[1] >= p[1].min(r[1])
}

fn segments_touch(p1: [f64; 2], q1: [f64; 2], p2: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(p1, q1, p2);
    let d2 = cross(p1, q1, q2);
    let d3 = cross(p2, q2, p1);
    let d4 = cross(p2, q2, q1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(p1, p2, q1))
        || (d2 == 0.0 && on_segment(p1, q2, q1))
        || (d3 == 0.0 && on_segment(p2, p1, q2))
        || (d4 == 0.0 && on_segment(p2, q1, q2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub object_id: ObjectId,
    pub media_ref: MediaId,
    pub polygon: Polygon,
    pub annotator: AnnotatorId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendingReason {
    /// No concept carries this lemma in the language.
    UnknownLemma,
    /// The lemma names several concepts.
    Ambiguous,
    /// The annotator said they did not know.
    AnnotatorUnsure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Assignment {
    Node { node: PathIndex },
    Unrecognized,
    Pending {
        lemma: String,
        language: Language,
        reason: PendingReason,
    },
}

impl Assignment {
    pub fn node(&self) -> Option<&PathIndex> {
        match self {
            Assignment::Node { node } => Some(node),
            _ => None,
        }
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assignment::Node { node } => write!(f, "{node}"),
            Assignment::Unrecognized => f.write_str("Unrecognized"),
            Assignment::Pending { lemma, language, .. } => write!(f, "pending `{lemma}`@{language}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub record_id: RecordId,
    pub annotator: AnnotatorId,
    pub object_ref: ObjectId,
    pub assignment: Assignment,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Observation::is_empty")]
    pub observed: Observation,
    pub timestamp: DateTime<Utc>,
}

/// One line of the annotation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    MediaIngested {
        media_id: MediaId,
        source_ref: String,
        dataset_label: Option<String>,
    },
    ObjectRegistered(DetectedObject),
    Record(AnnotationRecord),
    StageAdvanced { media_id: MediaId, from: Stage, to: Stage },
    FlawAssigned { media_id: MediaId, flaw: FlawKind },
}

/// Outcome of asking which question comes next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextStep {
    Ask { facet: Facet },
    Terminal { assignment: Assignment },
}

/// Deepest node whose signature the observation satisfies, found by
/// descending from the root; `Unrecognized` when the root itself fails.
pub fn classify(h: &Hierarchy, observed: &Observation) -> Assignment {
    let root = PathIndex::root();
    let Ok(d) = h.differentia(&root) else { return Assignment::Unrecognized };
    if !observed.satisfies_all(d.assertions()) {
        return Assignment::Unrecognized;
    }
    let mut cur = root;
    'descend: loop {
        for child in h.children(&cur).expect("node exists") {
            if observed.satisfies_all(h.differentia(&child).expect("node exists").assertions()) {
                cur = child;
                continue 'descend;
            }
        }
        return Assignment::Node { node: cur };
    }
}

/// The next facet to ask about, following the succession of differentiae
/// from the root down, or the terminal assignment once the observation
/// pins a leaf or fits no child.
pub fn elicit_next_facet(h: &Hierarchy, observed: &Observation) -> NextStep {
    let facet = |id| h.registry().get(id).cloned().expect("hierarchy facets are registered");
    let root = PathIndex::root();
    let rd = h.differentia(&root).expect("root exists");
    if !observed.satisfies_all(rd.assertions()) {
        return match rd.facets().find(|f| observed.get(f).is_none()) {
            Some(f) => NextStep::Ask { facet: facet(f) },
            None => NextStep::Terminal {
                assignment: Assignment::Unrecognized,
            },
        };
    }
    let mut cur = root;
    loop {
        let Some(child_facet) = h.child_facet(&cur).expect("node exists") else {
            return NextStep::Terminal {
                assignment: Assignment::Node { node: cur },
            };
        };
        if observed.get(child_facet).is_none() {
            return NextStep::Ask {
                facet: facet(child_facet),
            };
        }
        let next = h
            .children(&cur)
            .expect("node exists")
            .into_iter()
            .find(|c| observed.satisfies_all(h.differentia(c).expect("node exists").assertions()));
        match next {
            Some(c) => cur = c,
            None => {
                return NextStep::Terminal {
                    assignment: Assignment::Node { node: cur },
                }
            }
        }
    }
}

const UNSURE_LEMMAS: [&str; 3] = ["idk", "i don't know", "i dont know"];

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct AnnotationStore {
    media: BTreeMap<MediaId, MediaItem>,
    objects: BTreeMap<ObjectId, DetectedObject>,
    objects_by_media: BTreeMap<MediaId, Vec<ObjectId>>,
    records: Vec<AnnotationRecord>,
    records_by_object: BTreeMap<ObjectId, Vec<usize>>,
    sources: HashMap<String, MediaId>,
    events: Vec<Event>,
    next_media: u64,
    next_object: u64,
    next_record: u64,
    allow_duplicate_sources: bool,
    clock: Clock,
    sink: Option<File>,
}

impl fmt::Debug for AnnotationStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnnotationStore")
            .field("media", &self.media.len())
            .field("objects", &self.objects.len())
            .field("records", &self.records.len())
            .field("persistent", &self.sink.is_some())
            .finish()
    }
}

impl Default for AnnotationStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for AnnotationStore {
    /// Clones the in-memory state; the clone is never attached to a log.
    fn clone(&self) -> Self {
        Self {
            media: self.media.clone(),
            objects: self.objects.clone(),
            objects_by_media: self.objects_by_media.clone(),
            records: self.records.clone(),
            records_by_object: self.records_by_object.clone(),
            sources: self.sources.clone(),
            events: self.events.clone(),
            next_media: self.next_media,
            next_object: self.next_object,
            next_record: self.next_record,
            allow_duplicate_sources: self.allow_duplicate_sources,
            clock: Arc::clone(&self.clock),
            sink: None,
        }
    }
}

impl AnnotationStore {
    pub fn new() -> Self {
        Self {
            media: BTreeMap::new(),
            objects: BTreeMap::new(),
            objects_by_media: BTreeMap::new(),
            records: Vec::new(),
            records_by_object: BTreeMap::new(),
            sources: HashMap::new(),
            events: Vec::new(),
            next_media: 1,
            next_object: 1,
            next_record: 1,
            allow_duplicate_sources: false,
            clock: Arc::new(Utc::now),
            sink: None,
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn allow_duplicate_sources(mut self, allow: bool) -> Self {
        self.allow_duplicate_sources = allow;
        self
    }

    /// Replays an event sequence onto an empty store.
    pub fn replay(events: impl IntoIterator<Item = Event>) -> Result<Self, PipelineError> {
        let mut store = Self::new().allow_duplicate_sources(true);
        for (i, event) in events.into_iter().enumerate() {
            store
                .apply(event)
                .map_err(|message| PipelineError::Replay { line: i + 1, message })?;
        }
        store.allow_duplicate_sources = false;
        Ok(store)
    }

    /// Opens (creating if needed) a newline-delimited JSON log, replays it
    /// and appends every further event to it.
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        let mut events = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event = serde_json::from_str(&line).map_err(|e| PipelineError::Replay {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                events.push(event);
            }
        }
        let mut store = Self::replay(events)?;
        store.sink = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(store)
    }

    /// Writes the full event log to `w`, one JSON object per line.
    pub fn write_log(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn media(&self, id: MediaId) -> Option<&MediaItem> {
        self.media.get(&id)
    }

    pub fn media_items(&self) -> impl Iterator<Item = &MediaItem> {
        self.media.values()
    }

    pub fn media_by_source(&self, source_ref: &str) -> Option<&MediaItem> {
        self.sources.get(source_ref).and_then(|id| self.media.get(id))
    }

    pub fn object(&self, id: ObjectId) -> Option<&DetectedObject> {
        self.objects.get(&id)
    }

    pub fn objects_of(&self, media: MediaId) -> Vec<&DetectedObject> {
        self.objects_by_media
            .get(&media)
            .map(|ids| ids.iter().map(|i| &self.objects[i]).collect())
            .unwrap_or_default()
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn records_for_object(&self, object: ObjectId) -> Vec<&AnnotationRecord> {
        self.records_by_object
            .get(&object)
            .map(|ix| ix.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    pub fn records_for_media(&self, media: MediaId) -> Vec<&AnnotationRecord> {
        self.objects_of(media)
            .into_iter()
            .flat_map(|o| self.records_for_object(o.object_id))
            .collect()
    }

    pub fn media_of_record(&self, record: &AnnotationRecord) -> Option<&MediaItem> {
        self.objects
            .get(&record.object_ref)
            .and_then(|o| self.media.get(&o.media_ref))
    }

    pub fn ingest_media(&mut self, source_ref: &str, dataset_label: Option<&str>) -> Result<MediaItem, PipelineError> {
        self.ingest(source_ref, dataset_label, self.allow_duplicate_sources)
    }

    /// Like [`ingest_media`](Self::ingest_media) but accepts a source that
    /// is already present.
    pub fn ingest_media_duplicate_ok(
        &mut self,
        source_ref: &str,
        dataset_label: Option<&str>,
    ) -> Result<MediaItem, PipelineError> {
        self.ingest(source_ref, dataset_label, true)
    }

    fn ingest(&mut self, source_ref: &str, dataset_label: Option<&str>, allow_dup: bool) -> Result<MediaItem, PipelineError> {
        let source_ref = source_ref.trim();
        if source_ref.is_empty() {
            return Err(PipelineError::EmptySource);
        }
        if !allow_dup && self.sources.contains_key(source_ref) {
            return Err(PipelineError::DuplicateSource(source_ref.to_string()));
        }
        let media_id = MediaId(self.next_media);
        self.commit(Event::MediaIngested {
            media_id,
            source_ref: source_ref.to_string(),
            dataset_label: dataset_label.map(str::to_string),
        })?;
        Ok(self.media[&media_id].clone())
    }

    /// Stage S1: stores a delineated object. The media reaches `Detected`
    /// with its first object; objects cannot be added once visual
    /// classification is complete.
    pub fn register_object(
        &mut self,
        media: MediaId,
        polygon: Polygon,
        annotator: &AnnotatorId,
    ) -> Result<DetectedObject, PipelineError> {
        let item = self.media.get(&media).ok_or(PipelineError::UnknownMedia(media))?;
        if item.stage > Stage::Detected {
            return Err(PipelineError::StageOrder {
                media,
                current: item.stage,
                required: "Ingested or Detected".into(),
            });
        }
        polygon.validate()?;
        let object_id = ObjectId(self.next_object);
        let obj = DetectedObject {
            object_id,
            media_ref: media,
            polygon,
            annotator: annotator.clone(),
        };
        self.commit(Event::ObjectRegistered(obj.clone()))?;
        self.advance_if(media, Stage::Ingested, Stage::Detected)?;
        Ok(obj)
    }

    /// Stage S2: classifies an object from observed visual properties only.
    pub fn classify_object(
        &mut self,
        h: &Hierarchy,
        object: ObjectId,
        observed: Observation,
        annotator: &AnnotatorId,
    ) -> Result<AnnotationRecord, PipelineError> {
        self.object(object).ok_or(PipelineError::UnknownObject(object))?;
        h.registry()
            .check_observation(&observed)
            .map_err(PipelineError::InvalidObservation)?;
        let assignment = classify(h, &observed);
        self.append_record(object, annotator, assignment, Mode::ViaDifferentia, observed)
    }

    /// Records the "Unrecognized" escape for an object.
    pub fn record_unrecognized(
        &mut self,
        object: ObjectId,
        annotator: &AnnotatorId,
        mode: Mode,
    ) -> Result<AnnotationRecord, PipelineError> {
        self.object(object).ok_or(PipelineError::UnknownObject(object))?;
        self.append_record(object, annotator, Assignment::Unrecognized, mode, Observation::new())
    }

    /// Label-driven annotation: resolved when the lemma names exactly one
    /// concept in the language, otherwise kept pending.
    pub fn record_label_annotation(
        &mut self,
        lexicon: &Lexicon,
        object: ObjectId,
        lemma: &str,
        language: &Language,
        annotator: &AnnotatorId,
    ) -> Result<AnnotationRecord, PipelineError> {
        self.object(object).ok_or(PipelineError::UnknownObject(object))?;
        let pending = |reason| Assignment::Pending {
            lemma: lemma.trim().to_string(),
            language: language.clone(),
            reason,
        };
        let assignment = if UNSURE_LEMMAS.contains(&normalize_lemma(lemma).as_str()) {
            pending(PendingReason::AnnotatorUnsure)
        } else {
            let hits = lexicon.lookup(lemma, language);
            match hits.len() {
                0 => pending(PendingReason::UnknownLemma),
                1 => Assignment::Node {
                    node: hits.into_iter().next().expect("one hit"),
                },
                _ => pending(PendingReason::Ambiguous),
            }
        };
        self.append_record(object, annotator, assignment, Mode::ViaLabel, Observation::new())
    }

    /// Nodes assigned to any object of the media, in path order.
    pub fn assigned_nodes(&self, media: MediaId) -> BTreeSet<PathIndex> {
        self.records_for_media(media)
            .into_iter()
            .filter_map(|r| r.assignment.node().cloned())
            .collect()
    }

    /// Stage S3 gate: every assigned node needs a label or a declared gap in
    /// `language`.
    pub fn advance_to_labelled(
        &mut self,
        media: MediaId,
        lexicon: &Lexicon,
        language: &Language,
    ) -> Result<MediaItem, PipelineError> {
        let item = self.media.get(&media).ok_or(PipelineError::UnknownMedia(media))?;
        match item.stage {
            s if s < Stage::VisuallyClassified => {
                return Err(PipelineError::StageOrder {
                    media,
                    current: s,
                    required: "VisuallyClassified".into(),
                })
            }
            Stage::VisuallyClassified => {}
            _ => return Ok(item.clone()),
        }
        let offending: Vec<PathIndex> = self
            .assigned_nodes(media)
            .into_iter()
            .filter(|n| !lexicon.has_label(n, language) && !lexicon.has_gap(n, language))
            .collect();
        if !offending.is_empty() {
            return Err(PipelineError::Gate {
                media,
                target: Stage::Labelled,
                reason: "nodes without a label or declared gap",
                offending,
            });
        }
        self.advance_if(media, Stage::VisuallyClassified, Stage::Labelled)?;
        Ok(self.media[&media].clone())
    }

    /// Stage S4 gate: every assigned node needs an alinguistic identifier.
    pub fn advance_to_identified(&mut self, media: MediaId, lexicon: &Lexicon) -> Result<MediaItem, PipelineError> {
        let item = self.media.get(&media).ok_or(PipelineError::UnknownMedia(media))?;
        match item.stage {
            s if s < Stage::Labelled => {
                return Err(PipelineError::StageOrder {
                    media,
                    current: s,
                    required: "Labelled".into(),
                })
            }
            Stage::Labelled => {}
            _ => return Ok(item.clone()),
        }
        let offending: Vec<PathIndex> = self
            .assigned_nodes(media)
            .into_iter()
            .filter(|n| lexicon.alinguistic_id(n).is_none())
            .collect();
        if !offending.is_empty() {
            return Err(PipelineError::Gate {
                media,
                target: Stage::Identified,
                reason: "nodes without an alinguistic identifier",
                offending,
            });
        }
        self.advance_if(media, Stage::Labelled, Stage::Identified)?;
        Ok(self.media[&media].clone())
    }

    pub fn assign_flaw(&mut self, media: MediaId, flaw: FlawKind) -> Result<(), PipelineError> {
        let item = self.media.get(&media).ok_or(PipelineError::UnknownMedia(media))?;
        if item.flaw == Some(flaw) {
            return Ok(());
        }
        self.commit(Event::FlawAssigned { media_id: media, flaw })
    }

    fn append_record(
        &mut self,
        object: ObjectId,
        annotator: &AnnotatorId,
        assignment: Assignment,
        mode: Mode,
        observed: Observation,
    ) -> Result<AnnotationRecord, PipelineError> {
        let media = self.objects[&object].media_ref;
        let stage = self.media[&media].stage;
        if stage > Stage::VisuallyClassified {
            return Err(PipelineError::StageOrder {
                media,
                current: stage,
                required: "Detected or VisuallyClassified".into(),
            });
        }
        let record = AnnotationRecord {
            record_id: RecordId(self.next_record),
            annotator: annotator.clone(),
            object_ref: object,
            assignment,
            mode,
            observed,
            timestamp: (self.clock)(),
        };
        self.commit(Event::Record(record.clone()))?;
        let all_covered = self
            .objects_of(media)
            .iter()
            .all(|o| self.records_by_object.contains_key(&o.object_id));
        if all_covered {
            self.advance_if(media, Stage::Detected, Stage::VisuallyClassified)?;
        }
        Ok(record)
    }

    /// Compare-and-set on the media stage.
    fn advance_if(&mut self, media: MediaId, from: Stage, to: Stage) -> Result<(), PipelineError> {
        if self.media[&media].stage == from {
            self.commit(Event::StageAdvanced { media_id: media, from, to })?;
        }
        Ok(())
    }

    /// Persists the event (when a log is attached), then applies it.
    fn commit(&mut self, event: Event) -> Result<(), PipelineError> {
        if let Some(sink) = self.sink.as_mut() {
            let mut line = serde_json::to_vec(&event).expect("events serialize");
            line.push(b'\n');
            sink.write_all(&line)?;
            sink.flush()?;
        }
        self.apply(event).map_err(|message| PipelineError::Replay {
            line: self.events.len() + 1,
            message,
        })
    }

    fn apply(&mut self, event: Event) -> Result<(), String> {
        match &event {
            Event::MediaIngested {
                media_id,
                source_ref,
                dataset_label,
            } => {
                if self.media.contains_key(media_id) {
                    return Err(format!("media {media_id} ingested twice"));
                }
                self.media.insert(
                    *media_id,
                    MediaItem {
                        media_id: *media_id,
                        source_ref: source_ref.clone(),
                        dataset_label: dataset_label.clone(),
                        stage: Stage::Ingested,
                        flaw: None,
                    },
                );
                self.sources.entry(source_ref.clone()).or_insert(*media_id);
                self.next_media = self.next_media.max(media_id.0 + 1);
            }
            Event::ObjectRegistered(obj) => {
                if !self.media.contains_key(&obj.media_ref) {
                    return Err(format!("object {} references unknown media {}", obj.object_id, obj.media_ref));
                }
                if self.objects.contains_key(&obj.object_id) {
                    return Err(format!("object {} registered twice", obj.object_id));
                }
                self.objects_by_media.entry(obj.media_ref).or_default().push(obj.object_id);
                self.next_object = self.next_object.max(obj.object_id.0 + 1);
                self.objects.insert(obj.object_id, obj.clone());
            }
            Event::Record(rec) => {
                if !self.objects.contains_key(&rec.object_ref) {
                    return Err(format!(
                        "record {} references object {} that was not registered earlier",
                        rec.record_id, rec.object_ref
                    ));
                }
                if rec.record_id.0 < self.next_record {
                    return Err(format!("record id {} is not fresh", rec.record_id));
                }
                self.records_by_object
                    .entry(rec.object_ref)
                    .or_default()
                    .push(self.records.len());
                self.next_record = rec.record_id.0 + 1;
                self.records.push(rec.clone());
            }
            Event::StageAdvanced { media_id, from, to } => {
                let item = self
                    .media
                    .get_mut(media_id)
                    .ok_or_else(|| format!("unknown media {media_id}"))?;
                if item.stage != *from || to <= from {
                    return Err(format!(
                        "stage change {from:?} -> {to:?} for {media_id} at stage {:?}",
                        item.stage
                    ));
                }
                item.stage = *to;
            }
            Event::FlawAssigned { media_id, flaw } => {
                self.media
                    .get_mut(media_id)
                    .ok_or_else(|| format!("unknown media {media_id}"))?
                    .flaw = Some(*flaw);
            }
        }
        self.events.push(event);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, facets};
    use crate::model::PropertyAssertion;

    fn p(s: &str) -> PathIndex {
        s.parse().unwrap()
    }

    fn fixed_clock() -> Clock {
        Arc::new(|| DateTime::from_timestamp(1_700_000_000, 0).unwrap())
    }

    fn store() -> AnnotationStore {
        AnnotationStore::new().with_clock(fixed_clock())
    }

    fn who(s: &str) -> AnnotatorId {
        AnnotatorId::new(s)
    }

    fn strings(n: i64) -> Observation {
        Observation::from_assertions([
            PropertyAssertion::one(facets::SOUND_MECHANISM, "present"),
            PropertyAssertion::one(facets::SOUND_PRODUCTION, "taut-strings"),
            PropertyAssertion::one(facets::STRING_COUNT, n),
        ])
    }

    #[test]
    fn ingest_keeps_dataset_label_and_rejects_duplicates() {
        let mut s = store();
        let m = s.ingest_media("img/0001.jpg", Some("Electric Guitar")).unwrap();
        assert_eq!(m.stage, Stage::Ingested);
        assert_eq!(m.dataset_label.as_deref(), Some("Electric Guitar"));
        let m2 = s.ingest_media("img/0002.jpg", None).unwrap();
        assert_eq!(m2.dataset_label, None);
        assert_ne!(m.media_id, m2.media_id);
        assert!(matches!(
            s.ingest_media("img/0001.jpg", None),
            Err(PipelineError::DuplicateSource(_))
        ));
        assert!(s.ingest_media_duplicate_ok("img/0001.jpg", None).is_ok());
        assert!(matches!(s.ingest_media("  ", None), Err(PipelineError::EmptySource)));
    }

    #[test]
    fn stage_photo_with_three_objects() {
        let mut s = store();
        let m = s.ingest_media("koto-stage.jpg", Some("Koto")).unwrap().media_id;
        for (i, _) in ["koto", "flute", "music stand"].iter().enumerate() {
            s.register_object(m, Polygon::rect(i as f64 * 100.0, 0.0, 80.0, 60.0), &who("U1.1"))
                .unwrap();
        }
        assert_eq!(s.objects_of(m).len(), 3);
        assert_eq!(s.media(m).unwrap().stage, Stage::Detected);
    }

    #[test]
    fn degenerate_and_self_intersecting_polygons_rejected() {
        let mut s = store();
        let m = s.ingest_media("a.jpg", None).unwrap().media_id;
        let two = Polygon::new([(0.0, 0.0), (1.0, 1.0)]);
        assert!(matches!(
            s.register_object(m, two, &who("u")),
            Err(PipelineError::Geometry(GeometryError::TooFewVertices(2)))
        ));
        let bowtie = Polygon::new([(0.0, 0.0), (2.0, 2.0), (2.0, 0.0), (0.0, 2.0)]);
        assert!(matches!(bowtie.validate(), Err(GeometryError::SelfIntersecting(..))));
        let collinear = Polygon::new([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert!(collinear.validate().is_err());
        let repeated = Polygon::new([(0.0, 0.0), (0.0, 0.0), (2.0, 0.0)]);
        assert_eq!(repeated.validate(), Err(GeometryError::DegenerateEdge(0)));
        assert!(Polygon::rect(0.0, 0.0, 1.0, 1.0).validate().is_ok());
        assert_eq!(s.media(m).unwrap().stage, Stage::Ingested);
    }

    #[test]
    fn identical_polygon_twice_gives_two_objects() {
        let mut s = store();
        let m = s.ingest_media("a.jpg", None).unwrap().media_id;
        let a = s.register_object(m, Polygon::rect(0.0, 0.0, 5.0, 5.0), &who("u")).unwrap();
        let b = s.register_object(m, Polygon::rect(0.0, 0.0, 5.0, 5.0), &who("u")).unwrap();
        assert_ne!(a.object_id, b.object_id);
        assert_eq!(s.objects_of(m).len(), 2);
    }

    #[test]
    fn elicitation_follows_succession() {
        let h = fixtures::musical_instruments();
        let ask = |o: &Observation| match elicit_next_facet(&h, o) {
            NextStep::Ask { facet } => facet.facet_id.to_string(),
            NextStep::Terminal { assignment } => format!("terminal {assignment}"),
        };
        assert_eq!(ask(&Observation::new()), facets::SOUND_MECHANISM);
        let mut o = Observation::from_assertions([
            PropertyAssertion::one(facets::SOUND_MECHANISM, "present"),
            PropertyAssertion::one(facets::SOUND_PRODUCTION, "taut-strings"),
        ]);
        assert_eq!(ask(&o), facets::STRING_COUNT);
        o.insert(PropertyAssertion::one(facets::STRING_COUNT, 6));
        assert_eq!(ask(&o), facets::INPUT_JACK);
        o.insert(PropertyAssertion::one(facets::INPUT_JACK, "present"));
        assert_eq!(ask(&o), "terminal 1_1_1_2");
        assert_eq!(ask(&strings(21)), "terminal 1_1");
        let absent = Observation::from_assertions([PropertyAssertion::one(facets::SOUND_MECHANISM, "absent")]);
        assert_eq!(ask(&absent), "terminal Unrecognized");
    }

    #[test]
    fn classification_picks_deepest_match() {
        let h = fixtures::musical_instruments();
        assert_eq!(classify(&h, &strings(13)), Assignment::Node { node: p("1_1_3") });
        assert_eq!(classify(&h, &Observation::new()), Assignment::Unrecognized);
        // string count occluded: lands on the interior node
        let partial = Observation::from_assertions([
            PropertyAssertion::one(facets::SOUND_MECHANISM, "present"),
            PropertyAssertion::one(facets::SOUND_PRODUCTION, "taut-strings"),
        ]);
        assert_eq!(classify(&h, &partial), Assignment::Node { node: p("1_1") });
    }

    #[test]
    fn classify_object_records_and_advances() {
        let h = fixtures::musical_instruments();
        let mut s = store();
        let m = s.ingest_media("koto.jpg", Some("Koto")).unwrap().media_id;
        let o1 = s.register_object(m, Polygon::rect(0.0, 0.0, 1.0, 1.0), &who("u")).unwrap();
        let o2 = s.register_object(m, Polygon::rect(2.0, 0.0, 1.0, 1.0), &who("u")).unwrap();
        let r = s.classify_object(&h, o1.object_id, strings(13), &who("u")).unwrap();
        assert_eq!(r.assignment, Assignment::Node { node: p("1_1_3") });
        assert_eq!(r.mode, Mode::ViaDifferentia);
        assert_eq!(s.media(m).unwrap().stage, Stage::Detected);
        s.record_unrecognized(o2.object_id, &who("u"), Mode::ViaDifferentia).unwrap();
        assert_eq!(s.media(m).unwrap().stage, Stage::VisuallyClassified);
        // no new objects once classified
        assert!(matches!(
            s.register_object(m, Polygon::rect(5.0, 5.0, 1.0, 1.0), &who("u")),
            Err(PipelineError::StageOrder { .. })
        ));
        assert!(matches!(
            s.classify_object(&h, ObjectId(99), strings(6), &who("u")),
            Err(PipelineError::UnknownObject(_))
        ));
        let bad = Observation::from_assertions([PropertyAssertion::one("colour", "red")]);
        assert!(matches!(
            s.classify_object(&h, o1.object_id, bad, &who("u")),
            Err(PipelineError::InvalidObservation(_))
        ));
    }

    #[test]
    fn label_annotations_resolve_or_pend() {
        let h = fixtures::musical_instruments();
        let lex = fixtures::english_lexicon(&h);
        let eng = Language::new("eng").unwrap();
        let mut s = store();
        let m = s.ingest_media("g.jpg", Some("Guitar")).unwrap().media_id;
        let o = s.register_object(m, Polygon::rect(0.0, 0.0, 1.0, 1.0), &who("U2.1")).unwrap().object_id;

        let r = s.record_label_annotation(&lex, o, "guitar", &eng, &who("U2.1")).unwrap();
        assert_eq!(r.assignment, Assignment::Node { node: p("1_1_1") });
        assert_eq!(r.mode, Mode::ViaLabel);

        let r = s.record_label_annotation(&lex, o, "bass", &eng, &who("U2.2")).unwrap();
        assert!(matches!(r.assignment, Assignment::Pending { reason: PendingReason::UnknownLemma, .. }));

        let r = s.record_label_annotation(&lex, o, "IDK", &eng, &who("U2.3")).unwrap();
        assert!(matches!(r.assignment, Assignment::Pending { reason: PendingReason::AnnotatorUnsure, .. }));
    }

    #[test]
    fn label_and_identify_gates() {
        let h = fixtures::musical_instruments();
        let mut lex = crate::lexicon::Lexicon::new();
        let ben = Language::new("ben").unwrap();
        let mut s = store();
        let m = s.ingest_media("koto.jpg", Some("Koto")).unwrap().media_id;
        let o = s.register_object(m, Polygon::rect(0.0, 0.0, 1.0, 1.0), &who("u")).unwrap().object_id;

        assert!(matches!(
            s.advance_to_labelled(m, &lex, &ben),
            Err(PipelineError::StageOrder { .. })
        ));
        s.classify_object(&h, o, strings(13), &who("u")).unwrap();

        match s.advance_to_labelled(m, &lex, &ben) {
            Err(PipelineError::Gate { offending, .. }) => assert_eq!(offending, vec![p("1_1_3")]),
            other => panic!("expected gate failure, got {other:?}"),
        }
        lex.declare_gap(&h, &p("1_1_3"), &ben).unwrap();
        assert_eq!(s.advance_to_labelled(m, &lex, &ben).unwrap().stage, Stage::Labelled);
        // assignments are frozen once labelling has started
        assert!(matches!(
            s.classify_object(&h, o, strings(6), &who("late")),
            Err(PipelineError::StageOrder { .. })
        ));

        match s.advance_to_identified(m, &lex) {
            Err(PipelineError::Gate { offending, .. }) => assert_eq!(offending, vec![p("1_1_3")]),
            other => panic!("expected gate failure, got {other:?}"),
        }
        lex.mint_alinguistic_id(&h, &p("1_1_3")).unwrap();
        let first = s.advance_to_identified(m, &lex).unwrap();
        let events = s.events().len();
        let second = s.advance_to_identified(m, &lex).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.stage, Stage::Identified);
        assert_eq!(s.events().len(), events);
    }

    #[test]
    fn replay_reproduces_store() {
        let h = fixtures::musical_instruments();
        let lex = fixtures::english_lexicon(&h);
        let mut s = store();
        let m = s.ingest_media("a.jpg", Some("Koto")).unwrap().media_id;
        let o = s.register_object(m, Polygon::rect(0.0, 0.0, 1.0, 1.0), &who("u")).unwrap().object_id;
        s.classify_object(&h, o, strings(13), &who("u")).unwrap();
        s.advance_to_labelled(m, &lex, &Language::new("eng").unwrap()).unwrap();
        s.assign_flaw(m, FlawKind::Good).unwrap();
        s.ingest_media("b.jpg", None).unwrap();

        let mut buf = Vec::new();
        s.write_log(&mut buf).unwrap();
        let lines: Vec<Event> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let r = AnnotationStore::replay(lines).unwrap();
        assert_eq!(
            r.media_items().cloned().collect::<Vec<_>>(),
            s.media_items().cloned().collect::<Vec<_>>()
        );
        assert_eq!(r.records(), s.records());
    }

    #[test]
    fn replay_rejects_record_before_object() {
        let h = fixtures::musical_instruments();
        let mut s = store();
        let m = s.ingest_media("a.jpg", None).unwrap().media_id;
        let o = s.register_object(m, Polygon::rect(0.0, 0.0, 1.0, 1.0), &who("u")).unwrap().object_id;
        s.classify_object(&h, o, strings(6), &who("u")).unwrap();
        let mut events = s.events().to_vec();
        events.swap(1, 3);
        assert!(matches!(AnnotationStore::replay(events), Err(PipelineError::Replay { .. })));
    }

    #[test]
    fn record_lines_carry_record_fields() {
        let h = fixtures::musical_instruments();
        let mut s = store();
        let m = s.ingest_media("a.jpg", None).unwrap().media_id;
        let o = s.register_object(m, Polygon::rect(0.0, 0.0, 1.0, 1.0), &who("u")).unwrap().object_id;
        let rec = s.classify_object(&h, o, strings(6), &who("u")).unwrap();
        let line = serde_json::to_value(Event::Record(rec)).unwrap();
        let keys: BTreeSet<&str> = line.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            BTreeSet::from(["event", "record_id", "annotator", "object_ref", "assignment", "mode", "observed", "timestamp"])
        );
    }
}
