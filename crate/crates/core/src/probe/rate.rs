//! Packets-per-second pacing.

use std::num::NonZeroU32;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimit {
    pub packets_per_second: NonZeroU32,
}

impl RateLimit {
    pub fn new(pps: u32) -> Option<Self> {
        NonZeroU32::new(pps).map(|packets_per_second| Self { packets_per_second })
    }

    pub fn pps(&self) -> u32 {
        self.packets_per_second.get()
    }
}

impl Default for RateLimit {
    fn default() -> Self {
        Self::new(10_000).unwrap()
    }
}

/// Token bucket refilled continuously at `rate` tokens per second. Capacity is
/// one hundredth of a second of traffic (at least one packet), so any window
/// of length `w` admits at most `rate * w + capacity` packets.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn new(limit: RateLimit, now: Instant) -> Self {
        let rate = limit.pps() as f64;
        let capacity = (rate / 100.0).max(1.0);
        Self {
            rate,
            capacity,
            tokens: 1.0,
            last: now,
        }
    }

    fn refill(&mut self, now: Instant) {
        let dt = now.saturating_duration_since(self.last).as_secs_f64();
        self.tokens = (self.tokens + dt * self.rate).min(self.capacity);
        self.last = self.last.max(now);
    }

    /// Take one token at `now`, or return how long to wait for one.
    pub fn try_take(&mut self, now: Instant) -> Result<(), Duration> {
        self.refill(now);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - self.tokens) / self.rate))
        }
    }

    /// Block until a token is available.
    pub fn acquire(&mut self) {
        loop {
            match self.try_take(Instant::now()) {
                Ok(()) => return,
                Err(wait) => std::thread::sleep(wait),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_rejected() {
        assert!(RateLimit::new(0).is_none());
    }

    #[test]
    fn window_bound_with_synthetic_clock() {
        let t0 = Instant::now();
        let mut b = TokenBucket::new(RateLimit::new(1000).unwrap(), t0);
        // Poll every 100us for two seconds.
        let mut sent = Vec::new();
        for step in 0..20_000u64 {
            let now = t0 + Duration::from_micros(step * 100);
            while b.try_take(now).is_ok() {
                sent.push(now);
            }
        }
        let in_window = |from: Duration| {
            sent.iter()
                .filter(|t| **t >= t0 + from && **t < t0 + from + Duration::from_secs(1))
                .count()
        };
        for ms in (0..1000).step_by(50) {
            assert!(in_window(Duration::from_millis(ms)) as f64 <= 1.1 * 1000.0);
        }
        assert!((1990..=2011).contains(&sent.len()), "{}", sent.len());
    }

    #[test]
    fn wait_hint_is_positive_when_empty() {
        let t0 = Instant::now();
        let mut b = TokenBucket::new(RateLimit::new(10).unwrap(), t0);
        assert!(b.try_take(t0).is_ok());
        let wait = b.try_take(t0).unwrap_err();
        assert!(wait > Duration::from_millis(90) && wait <= Duration::from_millis(100));
    }
}
