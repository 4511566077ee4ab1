//! Replays the stored response when a mutating request is retried with the
//! same `Idempotency-Key`.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{HeaderMap, Method, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use facetgt_core::api::IDEMPOTENCY_HEADER;

use crate::error::ApiError;

const BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
struct Stored {
    request: Bytes,
    status: StatusCode,
    headers: HeaderMap,
    body: Bytes,
}

type Slot = Arc<tokio::sync::Mutex<Option<Stored>>>;

/// Bounded map from (method, path, key) to the first response produced for
/// it. Concurrent requests with the same key wait for the first one.
#[derive(Debug, Clone)]
pub struct IdempotencyCache {
    inner: Arc<Mutex<Entries>>,
    capacity: usize,
}

#[derive(Debug, Default)]
struct Entries {
    slots: HashMap<String, Slot>,
    order: VecDeque<String>,
}

impl IdempotencyCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Entries::default())),
            capacity: capacity.max(1),
        }
    }

    fn slot(&self, key: &str) -> Slot {
        let mut e = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(s) = e.slots.get(key) {
            return s.clone();
        }
        while e.order.len() >= self.capacity {
            if let Some(old) = e.order.pop_front() {
                e.slots.remove(&old);
            }
        }
        let s = Slot::default();
        e.slots.insert(key.to_string(), s.clone());
        e.order.push_back(key.to_string());
        s
    }
}

impl Default for IdempotencyCache {
    fn default() -> Self {
        Self::new(10_000)
    }
}

pub async fn middleware(State(cache): State<IdempotencyCache>, req: Request, next: Next) -> Response {
    if req.method() == Method::GET || req.method() == Method::HEAD {
        return next.run(req).await;
    }
    let Some(key) = req
        .headers()
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
    else {
        return next.run(req).await;
    };
    let full_key = format!("{} {} {key}", req.method(), req.uri().path());
    let slot = cache.slot(&full_key);
    let mut guard = slot.lock().await;

    let (parts, body) = req.into_parts();
    let request = match axum::body::to_bytes(body, BODY_LIMIT).await {
        Ok(b) => b,
        Err(e) => return ApiError::bad_request(format!("request body: {e}")).into_response(),
    };
    if let Some(stored) = guard.as_ref() {
        if stored.request != request {
            return ApiError::unprocessable(
                "idempotency_key_reused",
                format!("idempotency key `{key}` was already used with a different request body"),
            )
            .into_response();
        }
        return replay(stored);
    }

    let response = next.run(Request::from_parts(parts, Body::from(request.clone()))).await;
    let (parts, body) = response.into_parts();
    let body = match axum::body::to_bytes(body, BODY_LIMIT).await {
        Ok(b) => b,
        Err(e) => return ApiError::internal(format!("response body: {e}")).into_response(),
    };
    // server-side failures may be transient; let the retry run again
    if !parts.status.is_server_error() {
        *guard = Some(Stored {
            request,
            status: parts.status,
            headers: parts.headers.clone(),
            body: body.clone(),
        });
    }
    Response::from_parts(parts, Body::from(body))
}

fn replay(stored: &Stored) -> Response {
    let mut r = Response::new(Body::from(stored.body.clone()));
    *r.status_mut() = stored.status;
    *r.headers_mut() = stored.headers.clone();
    r.headers_mut()
        .insert("idempotent-replay", axum::http::HeaderValue::from_static("true"));
    r
}
