//! Request throttling primitives: a token bucket for request rate and
//! a counting gate for in-flight concurrency.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Token bucket enforcing a requests-per-minute budget at one-second
/// granularity: capacity is one second's worth of tokens, refilled
/// continuously.
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<BucketState>,
}

struct BucketState {
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn new(requests_per_minute: u32) -> Self {
        let refill_per_sec = f64::from(requests_per_minute) / 60.0;
        let capacity = refill_per_sec.max(1.0);
        TokenBucket {
            capacity,
            refill_per_sec,
            state: Mutex::new(BucketState {
                tokens: capacity,
                last: Instant::now(),
            }),
        }
    }

    /// Take one token if available at `now`; otherwise return how long
    /// until one will be.
    pub fn try_acquire_at(&self, now: Instant) -> Result<(), Duration> {
        let mut state = self.state.lock().unwrap();
        let elapsed = now.saturating_duration_since(state.last).as_secs_f64();
        state.tokens = (state.tokens + elapsed * self.refill_per_sec).min(self.capacity);
        state.last = now;
        if state.tokens >= 1.0 {
            state.tokens -= 1.0;
            Ok(())
        } else {
            let deficit = 1.0 - state.tokens;
            Err(Duration::from_secs_f64(deficit / self.refill_per_sec))
        }
    }

    /// Block until a token is available.
    pub fn acquire(&self) {
        loop {
            match self.try_acquire_at(Instant::now()) {
                Ok(()) => return,
                Err(wait) => std::thread::sleep(wait.min(Duration::from_millis(50))),
            }
        }
    }
}

/// Bounds the number of concurrently in-flight requests.
pub struct InFlightGate {
    max: usize,
    active: Mutex<usize>,
    released: Condvar,
}

impl InFlightGate {
    pub fn new(max: usize) -> Self {
        InFlightGate {
            max: max.max(1),
            active: Mutex::new(0),
            released: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.max {
            active = self.released.wait(active).unwrap();
        }
        *active += 1;
        InFlightPermit { gate: self }
    }
}

pub struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut active = self.gate.active.lock().unwrap();
        *active -= 1;
        self.gate.released.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_paces_requests() {
        let bucket = TokenBucket::new(60); // 1 token/sec, capacity 1
        let t0 = Instant::now();
        assert!(bucket.try_acquire_at(t0).is_ok());
        let wait = bucket.try_acquire_at(t0).unwrap_err();
        assert!(wait > Duration::from_millis(900), "wait = {wait:?}");
        // One second later a token is back.
        assert!(bucket.try_acquire_at(t0 + Duration::from_secs(1)).is_ok());
    }

    #[test]
    fn bucket_caps_burst_to_capacity() {
        let bucket = TokenBucket::new(120); // 2 tokens/sec, capacity 2
        let t0 = Instant::now();
        // A long idle period must not accumulate more than capacity.
        let later = t0 + Duration::from_secs(3600);
        assert!(bucket.try_acquire_at(later).is_ok());
        assert!(bucket.try_acquire_at(later).is_ok());
        assert!(bucket.try_acquire_at(later).is_err());
    }

    #[test]
    fn gate_limits_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;

        let gate = Arc::new(InFlightGate::new(3));
        let active = Arc::new(AtomicUsize::new(0));
        let high_water = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..16 {
            let gate = Arc::clone(&gate);
            let active = Arc::clone(&active);
            let high_water = Arc::clone(&high_water);
            handles.push(std::thread::spawn(move || {
                let _permit = gate.acquire();
                let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                high_water.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(2));
                active.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for handle in handles {
            handle.join().unwrap();
        }
        assert!(high_water.load(Ordering::SeqCst) <= 3);
    }
}
