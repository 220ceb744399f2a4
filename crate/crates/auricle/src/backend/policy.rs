//! Retry, rate-limit, and concurrency policy wrapped around a raw
//! transport. The transport classifies each failure as transient or
//! fatal; only transient failures are retried.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::backend::limiter::{InFlightGate, TokenBucket};
use crate::backend::{BackendConfig, BackendError, ChatBackend, ChatRequest, ChatResponse, RetryConfig};

/// Failure classification produced by a transport.
#[derive(Debug, Clone)]
pub enum SendError {
    /// Worth retrying: timeout, connect failure, HTTP 429 or 5xx.
    Transient { cause: String },
    /// Not worth retrying: other 4xx, malformed response body.
    Fatal { status: Option<u16>, cause: String },
}

/// One-shot request sender. `PolicyBackend` layers retries and limits
/// on top.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, SendError>;
    fn model_name(&self) -> &str;
}

pub struct PolicyBackend<T: Transport> {
    transport: T,
    retry: RetryConfig,
    bucket: TokenBucket,
    gate: InFlightGate,
}

impl<T: Transport> PolicyBackend<T> {
    pub fn new(transport: T, config: &BackendConfig) -> Self {
        PolicyBackend {
            transport,
            retry: config.retry.clone(),
            bucket: TokenBucket::new(config.requests_per_minute),
            gate: InFlightGate::new(config.max_in_flight),
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }
}

fn backoff_delay(retry: &RetryConfig, attempt: u32) -> Duration {
    let shift = (attempt - 1).min(16);
    let exp = retry.base_backoff_ms.saturating_mul(1u64 << shift);
    let capped = exp.min(retry.max_backoff_ms);
    let jitter = rand::rng().random_range(0.5..1.5);
    Duration::from_millis((capped as f64 * jitter).round() as u64)
}

impl<T: Transport> ChatBackend for PolicyBackend<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let _permit = self.gate.acquire();
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.bucket.acquire();
            match self.transport.send(request) {
                Ok(mut response) => {
                    response.latency_ms = start.elapsed().as_millis() as u64;
                    return Ok(response);
                }
                Err(SendError::Fatal { status, cause }) => {
                    return Err(BackendError::Fatal {
                        status,
                        message: cause,
                    });
                }
                Err(SendError::Transient { cause }) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(BackendError::Exhausted {
                            attempts: attempt,
                            cause,
                        });
                    }
                    let delay = backoff_delay(&self.retry, attempt);
                    tracing::debug!(attempt, ?delay, cause = %cause, "transient failure, backing off");
                    std::thread::sleep(delay);
                }
            }
        }
    }

    fn model_name(&self) -> &str {
        self.transport.model_name()
    }
}
