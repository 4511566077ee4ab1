use std::collections::BTreeSet;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::Utc;
use facetgt_core::agreement::{agreement_report, count_matrix, outlier_column, AgreementMatrix};
use facetgt_core::api::*;
use facetgt_core::canon::{self, attest_relevance};
use facetgt_core::flaw::{categorize_corpus, ingest_precomputed, parse_flaw_counts};
use facetgt_core::io::{self, HierarchyBundle, HierarchyDoc, ManifestRequest};
use facetgt_core::pipeline::{classify, elicit_next_facet, MediaItem, NextStep, PipelineError, Stage};
use facetgt_core::{AnnotatorId, FlawKind, MediaId, Mode, ObjectId, Observation};
use serde::Deserialize;

use crate::error::ApiError;
use crate::state::{Session, Workspace};
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

/// `Json` whose rejections use the service's error body.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Self(v)),
            Err(e) => Err(ApiError::new(e.status(), "invalid_body", e.body_text())),
        }
    }
}

fn annotator_header(headers: &HeaderMap) -> ApiResult<Option<AnnotatorId>> {
    match headers.get(ANNOTATOR_HEADER) {
        None => Ok(None),
        Some(v) => {
            let s = v
                .to_str()
                .map_err(|_| ApiError::bad_request("annotator header is not valid text"))?
                .trim();
            if s.is_empty() {
                return Err(ApiError::bad_request("annotator header is empty"));
            }
            Ok(Some(AnnotatorId::new(s)))
        }
    }
}

fn etag(version: u64) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{version}\"")).expect("digits are valid header text")
}

pub async fn health() -> &'static str {
    "ok"
}

pub async fn get_hierarchy(State(app): State<AppState>) -> Response {
    let ws = app.lock();
    let doc = ws.bundle.to_doc();
    let mut r = Json(doc).into_response();
    r.headers_mut().insert(header::ETAG, etag(ws.bundle.hierarchy.version()));
    r
}

/// Replaces the hierarchy under compare-and-set: the expected version comes
/// from `If-Match`, or from the document itself when the header is absent.
pub async fn put_hierarchy(
    State(app): State<AppState>,
    headers: HeaderMap,
    ApiJson(doc): ApiJson<HierarchyDoc>,
) -> ApiResult<Response> {
    let expected = match headers.get(header::IF_MATCH) {
        Some(v) => v
            .to_str()
            .ok()
            .and_then(|s| s.trim().trim_matches('"').parse::<u64>().ok())
            .ok_or_else(|| ApiError::bad_request("If-Match must carry a hierarchy version"))?,
        None => doc.version,
    };
    let mut ws = app.lock();
    let current = ws.bundle.hierarchy.version();
    if expected != current {
        return Err(ApiError::conflict(
            "version_conflict",
            format!("stale hierarchy version: expected {expected}, current {current}"),
        ));
    }
    let (mut bundle, warnings) = HierarchyBundle::from_doc(doc)?;
    let missing: BTreeSet<_> = ws
        .store
        .records()
        .iter()
        .filter_map(|r| r.assignment.node())
        .filter(|n| !bundle.hierarchy.contains(n))
        .cloned()
        .collect();
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(ToString::to_string).collect();
        return Err(ApiError::conflict(
            "assigned_nodes_missing",
            format!("recorded assignments reference nodes absent from the new hierarchy: {}", list.join(", ")),
        ));
    }
    bundle.hierarchy.set_version(current + 1);
    ws.install(bundle)?;
    let version = ws.bundle.hierarchy.version();
    let mut r = Json(HierarchyWarnings {
        hierarchy_version: version,
        warnings,
    })
    .into_response();
    r.headers_mut().insert(header::ETAG, etag(version));
    Ok(r)
}

pub async fn add_concept(
    State(app): State<AppState>,
    ApiJson(req): ApiJson<NewConcept>,
) -> ApiResult<(StatusCode, Json<ConceptCreated>)> {
    let mut ws = app.lock();
    let mut bundle = ws.bundle.clone();
    let node = bundle
        .hierarchy
        .add_concept_at(req.expected_version, &req.parent, req.differentia, req.gloss)?;
    ws.install(bundle)?;
    Ok((
        StatusCode::CREATED,
        Json(ConceptCreated {
            node,
            hierarchy_version: ws.bundle.hierarchy.version(),
        }),
    ))
}

pub async fn attest(
    State(app): State<AppState>,
    headers: HeaderMap,
    ApiJson(req): ApiJson<AttestRequest>,
) -> ApiResult<Json<Attested>> {
    let attestor = req
        .attestor
        .or(annotator_header(&headers)?)
        .ok_or_else(|| ApiError::bad_request("an attestor is required"))?;
    let mut ws = app.lock();
    let mut bundle = ws.bundle.clone();
    let now = Utc::now();
    let mut out = Vec::new();
    for facet in &req.facets {
        out.push(attest_relevance(&bundle.hierarchy, &mut bundle.attestations, facet, &attestor, now)?);
    }
    ws.install(bundle)?;
    Ok(Json(Attested { attestations: out }))
}

pub async fn validation(State(app): State<AppState>) -> ApiResult<Json<canon::ValidationReport>> {
    let ws = app.lock();
    let observations: Vec<Observation> = ws
        .store
        .records()
        .iter()
        .filter(|r| r.mode == Mode::ViaDifferentia && !r.observed.is_empty())
        .map(|r| r.observed.clone())
        .collect();
    Ok(Json(canon::validate(
        &ws.bundle.hierarchy,
        &ws.bundle.attestations,
        &observations,
    )?))
}

#[derive(Debug, Deserialize)]
pub struct PreviewRequest {
    observed: Observation,
}

/// What the answers given so far classify to, and what to ask next.
pub async fn preview(State(app): State<AppState>, ApiJson(req): ApiJson<PreviewRequest>) -> ApiResult<Json<Preview>> {
    let ws = app.lock();
    let h = &ws.bundle.hierarchy;
    h.registry()
        .check_observation(&req.observed)
        .map_err(PipelineError::InvalidObservation)?;
    Ok(Json(Preview {
        assignment: classify(h, &req.observed),
        next: elicit_next_facet(h, &req.observed),
    }))
}

pub async fn list_media(State(app): State<AppState>) -> Json<Vec<MediaItem>> {
    Json(app.lock().store.media_items().cloned().collect())
}

pub async fn open_session(
    State(app): State<AppState>,
    headers: HeaderMap,
    ApiJson(req): ApiJson<NewSession>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let header = annotator_header(&headers)?;
    let annotator = match (req.annotator, header) {
        (Some(a), Some(h)) if a != h => {
            return Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "annotator_mismatch",
                format!("body names annotator {a} but the request is made as {h}"),
            ))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(ApiError::bad_request("an annotator is required")),
    };
    let mut ws = app.lock();
    let id = ws.open_session(Session {
        annotator,
        language: req.language,
        mode: req.mode,
        wizard: Default::default(),
    });
    Ok((StatusCode::CREATED, Json(ws.session_view(id)?)))
}

pub async fn get_session(State(app): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<SessionView>> {
    Ok(Json(app.lock().session_view(id)?))
}

pub async fn step(
    State(app): State<AppState>,
    Path(id): Path<u64>,
    headers: HeaderMap,
    ApiJson(step): ApiJson<Step>,
) -> ApiResult<Json<StepResult>> {
    let mut ws = app.lock();
    let session = ws.session(id)?.clone();
    if let Some(who) = annotator_header(&headers)? {
        if who != session.annotator {
            return Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "annotator_mismatch",
                format!("session {id} belongs to {}, not {who}", session.annotator),
            ));
        }
    }
    run_step(&mut ws, id, &session, step).map(Json)
}

fn require_mode(session: &Session, mode: Mode) -> ApiResult<()> {
    if session.mode != mode {
        return Err(ApiError::unprocessable(
            "mode_mismatch",
            format!("this step needs a {mode:?} session; the session is {:?}", session.mode),
        ));
    }
    Ok(())
}

/// The object an annotation step refers to: the named one, or the only
/// object of the media. The media must be in S1/S2.
fn target_object(ws: &Workspace, media: MediaId, object: Option<ObjectId>) -> ApiResult<ObjectId> {
    let item = ws.store.media(media).ok_or(PipelineError::UnknownMedia(media))?;
    if !matches!(item.stage, Stage::Detected | Stage::VisuallyClassified) {
        return Err(PipelineError::StageOrder {
            media,
            current: item.stage,
            required: "Detected or VisuallyClassified".into(),
        }
        .into());
    }
    let objects = ws.store.objects_of(media);
    match object {
        Some(o) => {
            if objects.iter().any(|d| d.object_id == o) {
                Ok(o)
            } else if ws.store.object(o).is_some() {
                Err(ApiError::unprocessable(
                    "object_not_in_media",
                    format!("object {o} does not belong to media {media}"),
                ))
            } else {
                Err(PipelineError::UnknownObject(o).into())
            }
        }
        None if objects.len() == 1 => Ok(objects[0].object_id),
        None => Err(ApiError::unprocessable(
            "object_required",
            format!("media {media} has {} objects; name one", objects.len()),
        )),
    }
}

fn media_of(ws: &Workspace, media: MediaId) -> Option<MediaItem> {
    ws.store.media(media).cloned()
}

fn run_step(ws: &mut Workspace, id: u64, session: &Session, step: Step) -> ApiResult<StepResult> {
    let who = &session.annotator;
    let mut out = StepResult::default();
    match step {
        Step::RegisterObject { media_id, polygon } => {
            out.object = Some(ws.store.register_object(media_id, polygon, who)?);
            out.media = media_of(ws, media_id);
        }
        Step::Assert {
            media_id,
            object_id,
            observed,
        } => {
            require_mode(session, Mode::ViaDifferentia)?;
            let object = target_object(ws, media_id, object_id)?;
            ws.bundle
                .hierarchy
                .registry()
                .check_observation(&observed)
                .map_err(PipelineError::InvalidObservation)?;
            let mut merged = ws.sessions[&id].wizard.get(&object).cloned().unwrap_or_default();
            merged.merge(&observed);
            let next = elicit_next_facet(&ws.bundle.hierarchy, &merged);
            match &next {
                NextStep::Terminal { .. } => {
                    out.record = Some(ws.store.classify_object(&ws.bundle.hierarchy, object, merged, who)?);
                    ws.sessions.get_mut(&id).expect("session exists").wizard.remove(&object);
                }
                NextStep::Ask { .. } => {
                    ws.sessions
                        .get_mut(&id)
                        .expect("session exists")
                        .wizard
                        .insert(object, merged);
                }
            }
            out.next = Some(next);
            out.media = media_of(ws, media_id);
        }
        Step::Classify {
            media_id,
            object_id,
            observed,
        } => {
            require_mode(session, Mode::ViaDifferentia)?;
            let object = target_object(ws, media_id, object_id)?;
            out.record = Some(ws.store.classify_object(&ws.bundle.hierarchy, object, observed, who)?);
            ws.sessions.get_mut(&id).expect("session exists").wizard.remove(&object);
            out.media = media_of(ws, media_id);
        }
        Step::Unrecognized { media_id, object_id } => {
            let object = target_object(ws, media_id, object_id)?;
            out.record = Some(ws.store.record_unrecognized(object, who, session.mode)?);
            ws.sessions.get_mut(&id).expect("session exists").wizard.remove(&object);
            out.media = media_of(ws, media_id);
        }
        Step::Label {
            media_id,
            object_id,
            lemma,
        } => {
            require_mode(session, Mode::ViaLabel)?;
            let object = target_object(ws, media_id, object_id)?;
            out.record = Some(ws.store.record_label_annotation(
                &ws.bundle.lexicon,
                object,
                &lemma,
                &session.language,
                who,
            )?);
            out.media = media_of(ws, media_id);
        }
        Step::AddLabel { node, lemma } => {
            let mut bundle = ws.bundle.clone();
            out.entry = Some(bundle.lexicon.add_label(&bundle.hierarchy, &node, &session.language, &lemma)?);
            ws.install(bundle)?;
        }
        Step::DeclareGap { node } => {
            let mut bundle = ws.bundle.clone();
            out.gap = Some(bundle.lexicon.declare_gap(&bundle.hierarchy, &node, &session.language)?);
            ws.install(bundle)?;
        }
        Step::Mint { node } => {
            let mut bundle = ws.bundle.clone();
            out.alinguistic_id = Some(bundle.lexicon.mint_alinguistic_id(&bundle.hierarchy, &node)?);
            ws.install(bundle)?;
        }
        Step::AdvanceLabelled { media_id } => {
            out.media = Some(ws.store.advance_to_labelled(media_id, &ws.bundle.lexicon, &session.language)?);
        }
        Step::AdvanceIdentified { media_id } => {
            out.media = Some(ws.store.advance_to_identified(media_id, &ws.bundle.lexicon)?);
        }
    }
    Ok(out)
}

/// SDs need two annotators; with fewer the matrix is returned alone.
fn analyse(matrix: AgreementMatrix) -> ApiResult<AgreementResponse> {
    if matrix.columns.len() < 2 {
        let note = format!(
            "{} annotator(s): standard deviations need at least two",
            matrix.columns.len()
        );
        return Ok(AgreementResponse {
            matrix,
            report: None,
            outlier: None,
            note: Some(note),
        });
    }
    let report = agreement_report(&matrix)?;
    let outlier = outlier_column(&matrix)?;
    Ok(AgreementResponse {
        matrix,
        report: Some(report),
        outlier,
        note: None,
    })
}

#[derive(Debug, Default, Deserialize)]
pub struct AgreementQuery {
    #[serde(default)]
    scope: Option<String>,
    #[serde(default)]
    mode: Option<String>,
    /// Comma-separated annotator ids; all annotators with records when
    /// absent.
    #[serde(default)]
    annotators: Option<String>,
}

pub async fn agreement(
    State(app): State<AppState>,
    Query(q): Query<AgreementQuery>,
) -> ApiResult<Json<AgreementResponse>> {
    let parse_err = |e: String| ApiError::bad_request(e);
    let scope: Option<FlawKind> = match q.scope.as_deref() {
        None | Some("") | Some("all") => None,
        Some(s) => Some(s.parse().map_err(parse_err)?),
    };
    let mode: Option<Mode> = match q.mode.as_deref() {
        None | Some("") | Some("all") => None,
        Some(s) => Some(s.parse().map_err(parse_err)?),
    };
    let ws = app.lock();
    let annotators: Vec<AnnotatorId> = match &q.annotators {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(AnnotatorId::new)
            .collect(),
        None => ws
            .store
            .records()
            .iter()
            .filter(|r| mode.is_none_or(|m| r.mode == m))
            .map(|r| r.annotator.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let matrix = count_matrix(&ws.store, &ws.bundle.hierarchy, scope, mode, &annotators)
        .with_names(&ws.bundle.lexicon, &ws.config.label_language);
    analyse(matrix).map(Json)
}

/// Analyses an uploaded count grid instead of the store's records.
pub async fn agreement_from_grid(
    State(app): State<AppState>,
    ApiJson(req): ApiJson<GridRequest>,
) -> ApiResult<Json<AgreementResponse>> {
    let ws = app.lock();
    let matrix = AgreementMatrix::from_csv(&req.grid, req.mode)?
        .with_names(&ws.bundle.lexicon, &ws.config.label_language);
    analyse(matrix).map(Json)
}

pub async fn categorize(
    State(app): State<AppState>,
    ApiJson(req): ApiJson<CategorizeRequest>,
) -> ApiResult<Json<CategorizeResponse>> {
    let mut ws = app.lock();
    let config = req.config.unwrap_or_else(|| ws.config.clone());
    let (report, categories) = categorize_corpus(&ws.store, &ws.bundle.hierarchy, &ws.bundle.lexicon, &config)?;
    if req.persist {
        for c in &categories {
            ws.store.assign_flaw(c.media_id, c.kind)?;
        }
    }
    Ok(Json(CategorizeResponse { report, categories }))
}

pub async fn assign_flaw(State(app): State<AppState>, ApiJson(req): ApiJson<MediaFlaw>) -> ApiResult<Json<MediaItem>> {
    let mut ws = app.lock();
    ws.store.assign_flaw(req.media_id, req.flaw)?;
    Ok(Json(ws.store.media(req.media_id).cloned().expect("flaw was just assigned")))
}

#[derive(Debug, Default, Deserialize)]
pub struct ExportQuery {
    #[serde(default)]
    format: Option<String>,
}

pub async fn export_manifest(
    State(app): State<AppState>,
    Query(q): Query<ExportQuery>,
    ApiJson(req): ApiJson<ManifestRequest>,
) -> ApiResult<Response> {
    let ws = app.lock();
    let manifest = io::export_manifest(&ws.store, &ws.bundle, &req, &ws.config.label_language)?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(manifest).into_response()),
        Some("csv") => Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], manifest.to_csv()).into_response()),
        Some(other) => Err(ApiError::bad_request(format!("unknown format `{other}`"))),
    }
}

pub async fn import_imagenet(
    State(app): State<AppState>,
    ApiJson(req): ApiJson<ImportRequest>,
) -> ApiResult<Json<io::ImportReport>> {
    let index: Option<BTreeSet<String>> = req
        .image_index
        .map(|v| v.into_iter().map(|s| s.trim().to_string()).collect());
    let mut ws = app.lock();
    Ok(Json(io::import_imagenet_style(&mut ws.store, &req.categories, index.as_ref())?))
}

pub async fn import_precomputed(
    State(app): State<AppState>,
    ApiJson(req): ApiJson<PrecomputedImport>,
) -> ApiResult<Json<Vec<MediaItem>>> {
    let rows = parse_flaw_counts(&req.counts)?;
    let sizes: Vec<(&str, usize)> = req.sizes.iter().map(|(c, n)| (c.as_str(), *n)).collect();
    let mut ws = app.lock();
    let before = ws.store.media_items().count();
    ingest_precomputed(&mut ws.store, &sizes, &rows)?;
    Ok(Json(ws.store.media_items().skip(before).cloned().collect()))
}
