use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Time source for pacing and backoff. Tests inject a virtual clock.
pub trait Clock: Send + Sync {
    /// Elapsed time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Clock that only advances when slept on. Sleeping is instantaneous.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
}

impl VirtualClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// Per-host request pacing: consecutive request starts to the same host are
/// at least `interval` apart. Different hosts do not wait on each other.
pub struct HostRateLimiter {
    interval: Duration,
    clock: Arc<dyn Clock>,
    hosts: Mutex<HashMap<String, Arc<Mutex<Option<Duration>>>>>,
    starts: Mutex<Vec<(String, Duration)>>,
}

impl HostRateLimiter {
    pub fn new(interval: Duration, clock: Arc<dyn Clock>) -> Self {
        Self {
            interval,
            clock,
            hosts: Mutex::new(HashMap::new()),
            starts: Mutex::new(Vec::new()),
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Block until a request to `host` may start, then record its start time.
    pub fn acquire(&self, host: &str) -> Duration {
        let slot = {
            let mut hosts = self.hosts.lock().unwrap();
            hosts.entry(host.to_string()).or_default().clone()
        };
        // holding the per-host slot serializes pacing for that host only
        let mut last = slot.lock().unwrap();
        if let Some(prev) = *last {
            let ready = prev + self.interval;
            let now = self.clock.now();
            if now < ready {
                self.clock.sleep(ready - now);
            }
        }
        let start = self.clock.now();
        *last = Some(start);
        self.starts.lock().unwrap().push((host.to_string(), start));
        start
    }

    /// Every recorded request start, in acquisition order.
    pub fn request_starts(&self) -> Vec<(String, Duration)> {
        self.starts.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_host_is_spaced() {
        let clock = Arc::new(VirtualClock::default());
        let lim = HostRateLimiter::new(Duration::from_millis(250), clock.clone());
        lim.acquire("a");
        clock.advance(Duration::from_millis(100));
        lim.acquire("a");
        lim.acquire("b");
        clock.advance(Duration::from_millis(400));
        lim.acquire("a");
        let starts = lim.request_starts();
        let a: Vec<_> = starts.iter().filter(|(h, _)| h == "a").map(|s| s.1).collect();
        for w in a.windows(2) {
            assert!(w[1] - w[0] >= Duration::from_millis(250));
        }
        // "b" had no prior request and starts immediately
        assert_eq!(starts[2].1, Duration::from_millis(250));
    }

    #[test]
    fn zero_interval_never_sleeps() {
        let clock = Arc::new(VirtualClock::default());
        let lim = HostRateLimiter::new(Duration::ZERO, clock.clone());
        for _ in 0..5 {
            lim.acquire("h");
        }
        assert_eq!(clock.now(), Duration::ZERO);
    }
}
