//! OpenAI-compatible chat-completions transport.
//!
//! Requests go out as JSON with `model`, `messages[]` (role plus a
//! content-part array), `temperature`, `max_tokens`, and optional
//! `seed`. Audio rides along as an `input_audio` part with a base64
//! payload, falling back to an `audio_url` part past the configured
//! inline size. A `reasoning_content` (or `reasoning`) field on the
//! response message is surfaced as the reasoning trace.

use std::path::Path;
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use crate::backend::policy::{PolicyBackend, SendError, Transport};
use crate::backend::{BackendConfig, BackendError, ChatRequest, ChatResponse, ContentPart, TokenUsage};

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint_url: String,
    model_name: String,
    auth_token: Option<String>,
    inline_audio_max_bytes: u64,
}

pub type HttpBackend = PolicyBackend<HttpTransport>;

/// Build a live backend from config. The bearer token is read from the
/// configured environment variable; config files never hold secrets.
pub fn http_backend(config: &BackendConfig) -> Result<HttpBackend, BackendError> {
    config.validate()?;
    let auth_token = match &config.auth_token_env {
        Some(var) => Some(std::env::var(var).map_err(|_| {
            BackendError::Config(format!("auth environment variable {var} is not set"))
        })?),
        None => None,
    };
    let agent_config = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
        .http_status_as_error(false)
        .build();
    let transport = HttpTransport {
        agent: agent_config.into(),
        endpoint_url: config.endpoint_url.clone(),
        model_name: config.model_name.clone(),
        auth_token,
        inline_audio_max_bytes: config.inline_audio_max_bytes,
    };
    Ok(PolicyBackend::new(transport, config))
}

impl HttpTransport {
    fn wire_body(&self, request: &ChatRequest) -> Result<Value, SendError> {
        let mut messages = Vec::with_capacity(request.messages.len());
        for message in &request.messages {
            let mut parts = Vec::with_capacity(message.parts.len());
            for part in &message.parts {
                parts.push(self.wire_part(part)?);
            }
            messages.push(json!({
                "role": message.speaker.as_str(),
                "content": parts,
            }));
        }
        let mut body = json!({
            "model": self.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.request_seed {
            body["seed"] = json!(seed);
        }
        Ok(body)
    }

    fn wire_part(&self, part: &ContentPart) -> Result<Value, SendError> {
        match part {
            ContentPart::Text { text } => Ok(json!({"type": "text", "text": text})),
            ContentPart::Audio { audio } => {
                if let Some(data) = &audio.data {
                    return Ok(inline_audio(data, &audio.media_type));
                }
                let uri = audio.uri.as_deref().unwrap_or_default();
                if let Some(path) = local_path(uri) {
                    let size = std::fs::metadata(path)
                        .map_err(|e| SendError::Fatal {
                            status: None,
                            cause: format!("audio file {uri} not readable: {e}"),
                        })?
                        .len();
                    if size <= self.inline_audio_max_bytes {
                        let data = std::fs::read(path).map_err(|e| SendError::Fatal {
                            status: None,
                            cause: format!("audio file {uri} not readable: {e}"),
                        })?;
                        return Ok(inline_audio(&data, &audio.media_type));
                    }
                }
                Ok(json!({"type": "audio_url", "audio_url": {"url": uri}}))
            }
        }
    }
}

fn inline_audio(data: &[u8], media_type: &str) -> Value {
    json!({
        "type": "input_audio",
        "input_audio": {
            "data": base64::engine::general_purpose::STANDARD.encode(data),
            "format": media_type,
        }
    })
}

/// Treat bare paths and file:// URIs as local files.
fn local_path(uri: &str) -> Option<&Path> {
    if let Some(stripped) = uri.strip_prefix("file://") {
        return Some(Path::new(stripped));
    }
    if uri.contains("://") {
        return None;
    }
    Some(Path::new(uri))
}

fn parse_response(body: &Value) -> Result<ChatResponse, SendError> {
    let malformed = |what: &str| SendError::Fatal {
        status: None,
        cause: format!("malformed response body: {what}"),
    };
    let message = body
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| malformed("missing choices[0].message"))?;
    let text = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        _ => return Err(malformed("missing message.content")),
    };
    if text.is_empty() {
        return Err(malformed("empty message.content"));
    }
    let reasoning_trace = message
        .get("reasoning_content")
        .or_else(|| message.get("reasoning"))
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .map(str::to_string);
    let usage = TokenUsage {
        prompt_tokens: body
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0) as u32,
        completion_tokens: body
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0) as u32,
    };
    Ok(ChatResponse {
        text,
        reasoning_trace,
        usage,
        latency_ms: 0,
    })
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, SendError> {
        let body = self.wire_body(request)?;
        let mut builder = self.agent.post(&self.endpoint_url);
        if let Some(token) = &self.auth_token {
            builder = builder.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = builder.send_json(&body).map_err(|e| SendError::Transient {
            cause: format!("transport error: {e}"),
        })?;
        let status = response.status().as_u16();
        if status == 429 || (500..600).contains(&status) {
            return Err(SendError::Transient {
                cause: format!("HTTP {status}"),
            });
        }
        if !(200..300).contains(&status) {
            return Err(SendError::Fatal {
                status: Some(status),
                cause: format!("HTTP {status}"),
            });
        }
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| SendError::Fatal {
                status: None,
                cause: format!("malformed response body: {e}"),
            })?;
        parse_response(&value)
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_plain_content() {
        let body = json!({
            "choices": [{"message": {"content": "hello"}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 2}
        });
        let response = parse_response(&body).unwrap();
        assert_eq!(response.text, "hello");
        assert_eq!(response.usage.prompt_tokens, 10);
        assert!(response.reasoning_trace.is_none());
    }

    #[test]
    fn parse_reasoning_channel() {
        let body = json!({
            "choices": [{"message": {"content": "B", "reasoning_content": "steps"}}],
        });
        let response = parse_response(&body).unwrap();
        assert_eq!(response.reasoning_trace.as_deref(), Some("steps"));
    }

    #[test]
    fn parse_content_parts() {
        let body = json!({
            "choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}}],
        });
        assert_eq!(parse_response(&body).unwrap().text, "ab");
    }

    #[test]
    fn missing_content_is_fatal() {
        let body = json!({"choices": [{"message": {}}]});
        assert!(matches!(
            parse_response(&body),
            Err(SendError::Fatal { .. })
        ));
    }

    #[test]
    fn local_path_detection() {
        assert!(local_path("audio/x.wav").is_some());
        assert!(local_path("file:///tmp/x.wav").is_some());
        assert!(local_path("https://example.com/x.wav").is_none());
    }
}
