use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

/// Counting semaphore bounding concurrent requests. Share one instance across
/// gateways to get a global cap.
#[derive(Debug)]
pub struct InFlightCap {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

impl InFlightCap {
    pub fn new(max: usize) -> Arc<Self> {
        Arc::new(Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        })
    }

    pub fn max(&self) -> usize {
        self.max
    }

    fn acquire(self: &Arc<Self>) -> InFlightPermit {
        let mut current = self.current.lock().expect("in-flight cap poisoned");
        while *current >= self.max {
            current = self.freed.wait(current).expect("in-flight cap poisoned");
        }
        *current += 1;
        InFlightPermit { cap: self.clone() }
    }

    #[cfg(test)]
    fn in_flight(&self) -> usize {
        *self.current.lock().unwrap()
    }
}

struct InFlightPermit {
    cap: Arc<InFlightCap>,
}

impl Drop for InFlightPermit {
    fn drop(&mut self) {
        let mut current = self.cap.current.lock().expect("in-flight cap poisoned");
        *current -= 1;
        self.cap.freed.notify_one();
    }
}

/// Spaces attempts at least `1 / rps` apart.
#[derive(Debug)]
struct RateCap {
    interval: Duration,
    next_slot: Mutex<Instant>,
}

impl RateCap {
    fn wait(&self) {
        let slot = {
            let mut next = self.next_slot.lock().expect("rate cap poisoned");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

/// Combined per-backend rate cap and (possibly shared) in-flight cap.
#[derive(Debug, Default)]
pub struct Throttle {
    rate: Option<RateCap>,
    in_flight: Option<Arc<InFlightCap>>,
}

/// Held for the duration of one attempt.
pub struct ThrottlePermit {
    _in_flight: Option<InFlightPermit>,
}

impl Throttle {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn new(requests_per_second: Option<f64>, in_flight: Option<Arc<InFlightCap>>) -> Self {
        let rate = requests_per_second
            .filter(|r| r.is_finite() && *r > 0.0)
            .map(|r| RateCap {
                interval: Duration::from_secs_f64(1.0 / r),
                next_slot: Mutex::new(Instant::now()),
            });
        Self { rate, in_flight }
    }

    pub fn acquire(&self) -> ThrottlePermit {
        if let Some(rate) = &self.rate {
            rate.wait();
        }
        ThrottlePermit {
            _in_flight: self.in_flight.as_ref().map(|cap| cap.acquire()),
        }
    }
}
