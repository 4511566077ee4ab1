//! Annotation batches.
//!
//! A batch file is one of:
//!
//! * a session object `{"annotator", "language", "mode", "steps": [...]}`,
//! * a JSON array of such objects,
//! * a JSON array of steps, or JSON lines with one step per line; these
//!   use the annotator, language and mode given on the command line.
//!
//! Steps are the service's step bodies (`{"action": "classify", ...}`).

use std::path::Path;

use anyhow::{bail, Context, Result};
use facetgt_client::Client;
use facetgt_core::api::{NewSession, Step, StepResult};
use facetgt_core::{AnnotatorId, Language, Mode};
use serde::Deserialize;
use serde_json::Value;

use crate::AnnotateArgs;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionBatch {
    #[serde(default)]
    pub annotator: Option<String>,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub mode: Option<Mode>,
    pub steps: Vec<Step>,
}

pub fn parse(text: &str) -> Result<Vec<SessionBatch>> {
    let bare = |steps| SessionBatch {
        annotator: None,
        language: None,
        mode: None,
        steps,
    };
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    // A whole-document parse first; JSON lines only if that fails.
    if let Ok(doc) = serde_json::from_str::<Value>(text) {
        return match doc {
            Value::Object(ref o) if o.contains_key("steps") => Ok(vec![serde_json::from_value(doc)?]),
            Value::Array(ref items) if items.iter().any(|i| i.get("steps").is_some()) => {
                Ok(serde_json::from_value(doc).context("array of session objects")?)
            }
            Value::Array(_) => Ok(vec![bare(serde_json::from_value(doc).context("array of steps")?)]),
            Value::Object(_) => Ok(vec![bare(vec![serde_json::from_value(doc).context("step")?])]),
            _ => bail!("expected a session object, an array or JSON lines"),
        };
    }
    let mut steps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        steps.push(serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?);
    }
    Ok(vec![bare(steps)])
}

fn summary(r: &StepResult) -> String {
    let mut parts = Vec::new();
    if let Some(o) = &r.object {
        parts.push(format!("object {}", o.object_id));
    }
    if let Some(rec) = &r.record {
        parts.push(format!("recorded {}", serde_json::to_string(&rec.assignment).unwrap_or_default()));
    }
    if let Some(n) = &r.next {
        parts.push(format!("next {}", serde_json::to_string(n).unwrap_or_default()));
    }
    if let Some(e) = &r.entry {
        parts.push(format!("label `{}`", e.lemma));
    }
    if r.gap.is_some() {
        parts.push("lexical gap".into());
    }
    if let Some(a) = &r.alinguistic_id {
        parts.push(format!("id {a}"));
    }
    if let Some(m) = &r.media {
        parts.push(format!("media {} at {:?}", m.media_id, m.stage));
    }
    if parts.is_empty() {
        "ok".into()
    } else {
        parts.join("; ")
    }
}

/// Runs every batch; returns false if any step failed.
pub async fn run(client: &Client, args: &AnnotateArgs, json: bool) -> Result<bool> {
    let mut ok = true;
    for file in &args.files {
        let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
        let batches = parse(&text).with_context(|| format!("parsing {}", file.display()))?;
        for batch in batches {
            if !run_session(client, args, file, batch, json).await? {
                ok = false;
                if !args.keep_going {
                    return Ok(false);
                }
            }
        }
    }
    Ok(ok)
}

async fn run_session(client: &Client, args: &AnnotateArgs, file: &Path, batch: SessionBatch, json: bool) -> Result<bool> {
    let annotator = batch
        .annotator
        .or_else(|| args.annotator.clone())
        .with_context(|| format!("{}: no annotator (give --annotator or an \"annotator\" field)", file.display()))?;
    let annotator = AnnotatorId::new(annotator);
    let language = Language::new(batch.language.unwrap_or_else(|| args.language.clone()))?;
    let client = client.clone().with_annotator(annotator.clone());
    let session = client
        .open_session(&NewSession {
            annotator: Some(annotator.clone()),
            language,
            mode: batch.mode.unwrap_or(args.mode),
        })
        .await?;
    let mut ok = true;
    for (i, step) in batch.steps.iter().enumerate() {
        match client.step(session.session_id, step).await {
            Ok(r) if json => println!("{}", serde_json::to_string(&r)?),
            Ok(r) => println!("{annotator} step {}: {}", i + 1, summary(&r)),
            Err(e) => {
                eprintln!("{}: {annotator} step {}: {e}", file.display(), i + 1);
                ok = false;
                if !args.keep_going {
                    break;
                }
            }
        }
    }
    Ok(ok)
}
