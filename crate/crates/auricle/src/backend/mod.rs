//! Chat-completion backends for the three pipeline roles, over a live
//! OpenAI-compatible wire protocol or a deterministic scripted mock.

pub mod http;
pub mod limiter;
pub mod policy;
pub mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::sha256_hex16;

pub use http::{http_backend, HttpBackend, HttpTransport};
pub use policy::{PolicyBackend, SendError, Transport};
pub use scripted::{MatchFields, Script, ScriptEntry, ScriptedBackend};

/// Which pipeline role a request is issued under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Annotator,
    Thinker,
    Judge,
}

impl ModelRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelRole::Annotator => "annotator",
            ModelRole::Thinker => "thinker",
            ModelRole::Judge => "judge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
}

impl Speaker {
    pub fn as_str(&self) -> &'static str {
        match self {
            Speaker::System => "system",
            Speaker::User => "user",
        }
    }
}

/// Audio attachment carried by a content part: either a reference by
/// URI or inline bytes, plus the media subtype ("wav", "mp3", ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioAttachment {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uri: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<u8>>,
    pub media_type: String,
}

impl AudioAttachment {
    pub fn from_uri(uri: impl Into<String>, media_type: impl Into<String>) -> Self {
        AudioAttachment {
            uri: Some(uri.into()),
            data: None,
            media_type: media_type.into(),
        }
    }

    pub fn from_bytes(data: Vec<u8>, media_type: impl Into<String>) -> Self {
        AudioAttachment {
            uri: None,
            data: Some(data),
            media_type: media_type.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum ContentPart {
    Text { text: String },
    Audio { audio: AudioAttachment },
}

impl ContentPart {
    pub fn text(text: impl Into<String>) -> Self {
        ContentPart::Text { text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker: Speaker,
    pub parts: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            speaker: Speaker::System,
            parts: vec![ContentPart::text(text)],
        }
    }

    pub fn user_text(text: impl Into<String>) -> Self {
        ChatMessage {
            speaker: Speaker::User,
            parts: vec![ContentPart::text(text)],
        }
    }

    pub fn user(parts: Vec<ContentPart>) -> Self {
        ChatMessage {
            speaker: Speaker::User,
            parts,
        }
    }
}

/// One chat-completion request. Carries exactly one role and at most
/// one audio attachment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: ModelRole,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request_seed: Option<u64>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest(
                "request has no messages".into(),
            ));
        }
        let audio_parts = self
            .messages
            .iter()
            .flat_map(|m| &m.parts)
            .filter(|p| matches!(p, ContentPart::Audio { .. }))
            .count();
        if audio_parts > 1 {
            return Err(BackendError::InvalidRequest(format!(
                "request has {audio_parts} audio attachments, at most 1 allowed"
            )));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical rendering of the message list. Stable across runs; the
    /// basis for prompt hashes and scripted matching.
    pub fn messages_canonical(&self) -> String {
        let mut out = String::new();
        for message in &self.messages {
            out.push('[');
            out.push_str(message.speaker.as_str());
            out.push_str("]\n");
            for part in &message.parts {
                match part {
                    ContentPart::Text { text } => out.push_str(text),
                    ContentPart::Audio { audio } => {
                        match (&audio.uri, &audio.data) {
                            (Some(uri), _) => {
                                out.push_str(&format!("[audio uri={uri} format={}]", audio.media_type))
                            }
                            (None, Some(data)) => out.push_str(&format!(
                                "[audio bytes={} sha256={} format={}]",
                                data.len(),
                                {
                                    use sha2::{Digest, Sha256};
                                    hex::encode(&Sha256::digest(data)[..4])
                                },
                                audio.media_type
                            )),
                            (None, None) => out.push_str("[audio empty]"),
                        }
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// Canonical rendering of the whole request: role, sampling knobs,
    /// and messages. This is the string scripted matching runs against.
    pub fn canonical(&self) -> String {
        let seed = match self.request_seed {
            Some(s) => s.to_string(),
            None => "none".into(),
        };
        format!(
            "role: {}\ntemperature: {}\nseed: {}\n{}",
            self.role.as_str(),
            self.temperature,
            seed,
            self.messages_canonical()
        )
    }

    /// Stable fingerprint of (role, messages, temperature, seed).
    pub fn fingerprint(&self) -> String {
        sha256_hex16(&self.canonical())
    }

    /// Hash of the rendered messages only (prompt identity, independent
    /// of the per-attempt request seed).
    pub fn prompt_hash(&self) -> String {
        sha256_hex16(&self.messages_canonical())
    }

    /// All text content joined, for prompt-content assertions.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        for message in &self.messages {
            for part in &message.parts {
                if let ContentPart::Text { text } = part {
                    out.push_str(text);
                    out.push('\n');
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning_trace: Option<String>,
    pub usage: TokenUsage,
    pub latency_ms: u64,
}

/// Retry policy for transient failures (timeouts, HTTP 429/5xx).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig {
            max_attempts: 3,
            base_backoff_ms: 250,
            max_backoff_ms: 8_000,
        }
    }
}

/// Configuration for a live HTTP backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token. The
    /// token itself never appears in config files.
    pub auth_token_env: Option<String>,
    pub max_in_flight: usize,
    pub requests_per_minute: u32,
    pub retry: RetryConfig,
    pub timeout_ms: u64,
    /// Audio payloads up to this size are inlined as base64; larger
    /// ones fall back to a URL content part.
    pub inline_audio_max_bytes: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint_url: String::new(),
            model_name: String::new(),
            auth_token_env: None,
            max_in_flight: 4,
            requests_per_minute: 600,
            retry: RetryConfig::default(),
            timeout_ms: 120_000,
            inline_audio_max_bytes: 20 * 1024 * 1024,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.endpoint_url.is_empty() {
            return Err(BackendError::Config("endpoint_url is empty".into()));
        }
        if self.model_name.is_empty() {
            return Err(BackendError::Config("model_name is empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(BackendError::Config("max_in_flight must be >= 1".into()));
        }
        if self.requests_per_minute == 0 {
            return Err(BackendError::Config(
                "requests_per_minute must be >= 1".into(),
            ));
        }
        if self.retry.max_attempts == 0 {
            return Err(BackendError::Config("retry.max_attempts must be >= 1".into()));
        }
        if self.retry.base_backoff_ms > self.retry.max_backoff_ms {
            return Err(BackendError::Config(
                "retry.base_backoff_ms exceeds retry.max_backoff_ms".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fatal backend error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Fatal { status: Option<u16>, message: String },
    #[error("retries exhausted after {attempts} attempts: {cause}")]
    Exhausted { attempts: u32, cause: String },
    #[error("no scripted response for request {fingerprint}")]
    UnscriptedRequest { fingerprint: String },
    #[error("backend config error: {0}")]
    Config(String),
}

/// Uniform completion interface shared by the HTTP and scripted
/// backends. Handles are shareable across workers; implementations
/// synchronize their own internal state.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
    fn model_name(&self) -> &str;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }

    fn model_name(&self) -> &str {
        (**self).model_name()
    }
}

/// Guess the audio media subtype from a URI's extension.
pub fn media_type_for_uri(uri: &str) -> &'static str {
    let lower = uri.to_ascii_lowercase();
    for (ext, media) in [
        (".wav", "wav"),
        (".mp3", "mp3"),
        (".flac", "flac"),
        (".ogg", "ogg"),
        (".m4a", "mp4"),
        (".aac", "aac"),
        (".opus", "opus"),
    ] {
        if lower.ends_with(ext) {
            return media;
        }
    }
    "wav"
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> ChatRequest {
        ChatRequest {
            role: ModelRole::Thinker,
            messages: vec![
                ChatMessage::system("sys"),
                ChatMessage::user(vec![
                    ContentPart::text("hello"),
                    ContentPart::Audio {
                        audio: AudioAttachment::from_uri("audio/x.wav", "wav"),
                    },
                ]),
            ],
            temperature: 0.7,
            max_tokens: 256,
            request_seed: Some(9),
        }
    }

    #[test]
    fn fingerprint_is_stable_and_seed_sensitive() {
        let a = request();
        let mut b = request();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.request_seed = Some(10);
        assert_ne!(a.fingerprint(), b.fingerprint());
        // Prompt hash ignores the seed.
        assert_eq!(a.prompt_hash(), b.prompt_hash());
    }

    #[test]
    fn validate_rejects_empty_messages() {
        let mut r = request();
        r.messages.clear();
        assert!(r.validate().is_err());
    }

    #[test]
    fn validate_rejects_two_audio_parts() {
        let mut r = request();
        r.messages.push(ChatMessage::user(vec![ContentPart::Audio {
            audio: AudioAttachment::from_uri("audio/y.wav", "wav"),
        }]));
        assert!(r.validate().is_err());
    }

    #[test]
    fn media_type_guesses() {
        assert_eq!(media_type_for_uri("a/b/c.MP3"), "mp3");
        assert_eq!(media_type_for_uri("x.flac"), "flac");
        assert_eq!(media_type_for_uri("nosuffix"), "wav");
    }
}
