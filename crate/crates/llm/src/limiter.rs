use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::config::RateLimit;

/// Bounds concurrent requests and spaces request starts to a per-minute rate.
#[derive(Debug)]
pub struct Limiter {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    spacing: Option<Duration>,
    next_start: Mutex<Option<Instant>>,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

impl Limiter {
    pub fn new(limit: RateLimit) -> Self {
        Self {
            max_in_flight: limit.max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            spacing: limit
                .requests_per_minute
                .map(|rpm| Duration::from_secs_f64(60.0 / rpm.max(1) as f64)),
            next_start: Mutex::new(None),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.max_in_flight {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
        }
        if let Some(spacing) = self.spacing {
            let wait = {
                let mut next = self.next_start.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let start = next.map_or(now, |t| t.max(now));
                *next = Some(start + spacing);
                start - now
            };
            std::thread::sleep(wait);
        }
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn never_exceeds_bound() {
        let limiter = Limiter::new(RateLimit {
            max_in_flight: 3,
            requests_per_minute: None,
        });
        let active = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..12 {
                s.spawn(|| {
                    let _p = limiter.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert_eq!(peak.load(Ordering::SeqCst), 3);
        assert_eq!(limiter.in_flight(), 0);
    }

    #[test]
    fn spaces_request_starts() {
        let limiter = Limiter::new(RateLimit {
            max_in_flight: 4,
            requests_per_minute: Some(1200),
        });
        let t0 = Instant::now();
        for _ in 0..4 {
            drop(limiter.acquire());
        }
        // Three gaps of 50 ms.
        assert!(t0.elapsed() >= Duration::from_millis(145));
    }
}
