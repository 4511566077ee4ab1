//! Typed client for the annotation service.
//!
//! Every mutating call carries a fresh `Idempotency-Key`; transport
//! failures are retried a few times with the same key, so a request the
//! server already handled is answered from its replay cache instead of
//! being applied twice.

use std::time::Duration;

use facetgt_core::agreement::AgreementMatrix;
use facetgt_core::api::*;
use facetgt_core::canon::ValidationReport;
use facetgt_core::io::{DatasetManifest, HierarchyDoc, ImportReport, ManifestRequest};
use facetgt_core::pipeline::MediaItem;
use facetgt_core::{AnnotatorId, FlawKind, Mode, Observation};
use reqwest::{Method, RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach the service: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{} ({status}): {}", .body.code, .body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("unexpected response ({status}): {text}")]
    Unexpected { status: u16, text: String },
}

impl ClientError {
    /// The service's error code, when the service answered with one.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.code),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } | ClientError::Unexpected { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status().map(|s| s.as_u16()),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
    annotator: Option<AnnotatorId>,
    retries: u32,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
            annotator: None,
            retries: 3,
        }
    }

    /// Sends `X-Annotator-Id` with every request.
    pub fn with_annotator(mut self, annotator: AnnotatorId) -> Self {
        self.annotator = Some(annotator);
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        let mut rb = self.http.request(method, format!("{}{path}", self.base));
        if let Some(a) = &self.annotator {
            rb = rb.header(ANNOTATOR_HEADER, a.as_str());
        }
        rb
    }

    async fn send(&self, method: Method, path: &str, body: Option<&impl Serialize>, extra: &[(&str, String)]) -> Result<reqwest::Response> {
        let key = (method != Method::GET).then(|| uuid::Uuid::new_v4().to_string());
        let mut attempt = 0;
        loop {
            let mut rb = self.request(method.clone(), path);
            if let Some(k) = &key {
                rb = rb.header(IDEMPOTENCY_HEADER, k);
            }
            for (name, value) in extra {
                rb = rb.header(*name, value);
            }
            if let Some(b) = body {
                rb = rb.json(b);
            }
            match rb.send().await {
                Ok(resp) => return check(resp).await,
                Err(e) if attempt < self.retries && (e.is_connect() || e.is_timeout() || e.is_request()) => {
                    attempt += 1;
                    tokio::time::sleep(Duration::from_millis(50 << attempt)).await;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Ok(self.send(Method::GET, path, None::<&()>, &[]).await?.json().await?)
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Ok(self.send(Method::POST, path, Some(body), &[]).await?.json().await?)
    }

    pub async fn health(&self) -> Result<()> {
        self.send(Method::GET, "/health", None::<&()>, &[]).await.map(|_| ())
    }

    pub async fn hierarchy(&self) -> Result<HierarchyDoc> {
        self.get("/hierarchy").await
    }

    /// Replaces the hierarchy if it is still at `expected_version`.
    pub async fn put_hierarchy(&self, doc: &HierarchyDoc, expected_version: u64) -> Result<HierarchyWarnings> {
        let resp = self
            .send(Method::PUT, "/hierarchy", Some(doc), &[("if-match", format!("\"{expected_version}\""))])
            .await?;
        Ok(resp.json().await?)
    }

    pub async fn add_concept(&self, req: &NewConcept) -> Result<ConceptCreated> {
        self.post("/hierarchy/concepts", req).await
    }

    pub async fn attest(&self, req: &AttestRequest) -> Result<Attested> {
        self.post("/attestations", req).await
    }

    /// Classifies a (partial) observation without recording anything.
    pub async fn preview(&self, observed: &Observation) -> Result<Preview> {
        self.post("/classify/preview", &serde_json::json!({ "observed": observed })).await
    }

    pub async fn validation(&self) -> Result<ValidationReport> {
        self.get("/validation").await
    }

    pub async fn media(&self) -> Result<Vec<MediaItem>> {
        self.get("/media").await
    }

    pub async fn assign_flaw(&self, req: &MediaFlaw) -> Result<MediaItem> {
        self.post("/media/flaw", req).await
    }

    pub async fn open_session(&self, req: &NewSession) -> Result<SessionView> {
        self.post("/session", req).await
    }

    pub async fn session(&self, id: u64) -> Result<SessionView> {
        self.get(&format!("/session/{id}")).await
    }

    pub async fn step(&self, session: u64, step: &Step) -> Result<StepResult> {
        self.post(&format!("/session/{session}/step"), step).await
    }

    pub async fn agreement(
        &self,
        scope: Option<FlawKind>,
        mode: Option<Mode>,
        annotators: Option<&[AnnotatorId]>,
    ) -> Result<AgreementResponse> {
        let mut params = Vec::new();
        if let Some(s) = scope {
            params.push(format!("scope={}", s.label().replace(' ', "-")));
        }
        if let Some(m) = mode {
            params.push(format!("mode={}", if m == Mode::ViaLabel { "via-label" } else { "via-differentia" }));
        }
        if let Some(list) = annotators {
            let ids: Vec<&str> = list.iter().map(|a| a.as_str()).collect();
            params.push(format!("annotators={}", encode(&ids.join(","))));
        }
        let query = if params.is_empty() { String::new() } else { format!("?{}", params.join("&")) };
        self.get(&format!("/stats/agreement{query}")).await
    }

    pub async fn agreement_from_grid(&self, grid: &str, mode: Option<Mode>) -> Result<AgreementResponse> {
        self.post(
            "/stats/agreement",
            &GridRequest {
                grid: grid.to_string(),
                mode,
            },
        )
        .await
    }

    /// Analyses a count grid already held in memory.
    pub async fn agreement_from_matrix(&self, matrix: &AgreementMatrix) -> Result<AgreementResponse> {
        self.agreement_from_grid(&matrix.to_csv(), matrix.mode).await
    }

    pub async fn categorize(&self, req: &CategorizeRequest) -> Result<CategorizeResponse> {
        self.post("/categorize", req).await
    }

    pub async fn export_manifest(&self, req: &ManifestRequest) -> Result<DatasetManifest> {
        self.post("/export/manifest", req).await
    }

    pub async fn export_manifest_csv(&self, req: &ManifestRequest) -> Result<String> {
        Ok(self
            .send(Method::POST, "/export/manifest?format=csv", Some(req), &[])
            .await?
            .text()
            .await?)
    }

    pub async fn import_imagenet(&self, req: &ImportRequest) -> Result<ImportReport> {
        self.post("/import/imagenet", req).await
    }

    pub async fn import_precomputed(&self, req: &PrecomputedImport) -> Result<Vec<MediaItem>> {
        self.post("/import/precomputed", req).await
    }
}

async fn check(resp: reqwest::Response) -> Result<reqwest::Response> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let text = resp.text().await?;
    match serde_json::from_str::<ErrorBody>(&text) {
        Ok(body) => Err(ClientError::Api {
            status: status.as_u16(),
            body,
        }),
        Err(_) => Err(ClientError::Unexpected {
            status: status.as_u16(),
            text: if text.is_empty() {
                StatusCode::from_u16(status.as_u16()).map(|s| s.to_string()).unwrap_or_default()
            } else {
                text
            },
        }),
    }
}

/// Percent-encodes everything but unreserved characters and commas.
fn encode(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~,".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_query_values() {
        assert_eq!(encode("U1.1,U 2"), "U1.1,U%202");
        assert_eq!(encode("ü"), "%C3%BC");
    }
}
