//! Deterministic scripted backend for offline runs and tests.
//!
//! A script is an ordered list of entries. Lookup order: exact
//! fingerprint match, then `match_fields` rules in file order, then the
//! default entry. The backend is a pure function of the request, so
//! concurrent identical requests always get identical responses.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatBackend, ChatRequest, ChatResponse, ModelRole, TokenUsage};
use crate::jsonl::JsonlError;

/// Partial matcher for script entries. All present fields must match;
/// `text_contains` substrings are checked against the canonical request
/// rendering.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchFields {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<ModelRole>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_contains: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request_seed: Option<u64>,
}

impl MatchFields {
    fn matches(&self, request: &ChatRequest, canonical: &str) -> bool {
        if let Some(role) = self.role {
            if role != request.role {
                return false;
            }
        }
        if let Some(temperature) = self.temperature {
            if temperature != request.temperature {
                return false;
            }
        }
        if let Some(seed) = self.request_seed {
            if Some(seed) != request.request_seed {
                return false;
            }
        }
        if let Some(substrings) = &self.text_contains {
            if !substrings.iter().all(|s| canonical.contains(s.as_str())) {
                return false;
            }
        }
        true
    }
}

/// One canned response. Exactly one of `fingerprint`, `match_fields`,
/// or `default` selects it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_fields: Option<MatchFields>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub default: bool,
    pub response_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning_trace: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Script {
    entries: Vec<ScriptEntry>,
}

impl Script {
    pub fn new() -> Self {
        Script::default()
    }

    pub fn load(path: &Path) -> Result<Self, JsonlError> {
        Ok(Script {
            entries: crate::jsonl::read_jsonl(path)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), JsonlError> {
        crate::jsonl::write_jsonl(path, &self.entries)
    }

    pub fn push(&mut self, entry: ScriptEntry) {
        self.entries.push(entry);
    }

    pub fn add_exact(&mut self, fingerprint: impl Into<String>, response_text: impl Into<String>) {
        self.push(ScriptEntry {
            fingerprint: Some(fingerprint.into()),
            response_text: response_text.into(),
            ..ScriptEntry::default()
        });
    }

    pub fn add_match(&mut self, match_fields: MatchFields, response_text: impl Into<String>) {
        self.push(ScriptEntry {
            match_fields: Some(match_fields),
            response_text: response_text.into(),
            ..ScriptEntry::default()
        });
    }

    /// Convenience rule: match on role plus canonical substrings.
    pub fn on(&mut self, role: ModelRole, contains: &[&str], response_text: impl Into<String>) {
        self.add_match(
            MatchFields {
                role: Some(role),
                text_contains: Some(contains.iter().map(|s| s.to_string()).collect()),
                ..MatchFields::default()
            },
            response_text,
        );
    }

    pub fn set_default(&mut self, response_text: impl Into<String>) {
        self.push(ScriptEntry {
            default: true,
            response_text: response_text.into(),
            ..ScriptEntry::default()
        });
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    /// Resolve a request: exact fingerprint, then rules in order, then
    /// the default entry.
    fn lookup(&self, request: &ChatRequest, fingerprint: &str, canonical: &str) -> Option<&ScriptEntry> {
        if let Some(entry) = self
            .entries
            .iter()
            .find(|e| e.fingerprint.as_deref() == Some(fingerprint))
        {
            return Some(entry);
        }
        if let Some(entry) = self.entries.iter().find(|e| {
            e.match_fields
                .as_ref()
                .is_some_and(|m| m.matches(request, canonical))
        }) {
            return Some(entry);
        }
        self.entries.iter().find(|e| e.default)
    }
}

/// A request observed by a recording backend.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub role: ModelRole,
    pub fingerprint: String,
    pub canonical: String,
    pub text_content: String,
}

pub struct ScriptedBackend {
    script: Script,
    model_name: String,
    calls: AtomicU64,
    role_calls: Mutex<HashMap<ModelRole, u64>>,
    recorded: Option<Mutex<Vec<RecordedRequest>>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        ScriptedBackend {
            script,
            model_name: "scripted".into(),
            calls: AtomicU64::new(0),
            role_calls: Mutex::new(HashMap::new()),
            recorded: None,
        }
    }

    pub fn with_model_name(mut self, name: impl Into<String>) -> Self {
        self.model_name = name.into();
        self
    }

    /// Keep a copy of every request seen, for prompt-content assertions.
    pub fn recording(mut self) -> Self {
        self.recorded = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn call_count_for(&self, role: ModelRole) -> u64 {
        *self.role_calls.lock().unwrap().get(&role).unwrap_or(&0)
    }

    pub fn recorded_requests(&self) -> Vec<RecordedRequest> {
        match &self.recorded {
            Some(m) => m.lock().unwrap().clone(),
            None => Vec::new(),
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let canonical = request.canonical();
        let fingerprint = request.fingerprint();
        self.calls.fetch_add(1, Ordering::SeqCst);
        *self
            .role_calls
            .lock()
            .unwrap()
            .entry(request.role)
            .or_insert(0) += 1;
        if let Some(recorded) = &self.recorded {
            recorded.lock().unwrap().push(RecordedRequest {
                role: request.role,
                fingerprint: fingerprint.clone(),
                canonical: canonical.clone(),
                text_content: request.text_content(),
            });
        }
        let entry = self
            .script
            .lookup(request, &fingerprint, &canonical)
            .ok_or(BackendError::UnscriptedRequest { fingerprint })?;
        Ok(ChatResponse {
            text: entry.response_text.clone(),
            reasoning_trace: entry.reasoning_trace.clone(),
            usage: TokenUsage {
                prompt_tokens: (canonical.len() / 4) as u32,
                completion_tokens: (entry.response_text.len() / 4) as u32,
            },
            latency_ms: 0,
        })
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }
}
