use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Default)]
struct State {
    in_flight: usize,
    peak: usize,
    next_start: Option<Instant>,
}

/// Caps concurrent calls and spaces out call starts.
#[derive(Debug)]
pub struct RateLimiter {
    max_in_flight: usize,
    min_interval: Duration,
    state: Mutex<State>,
    freed: Condvar,
}

/// Held for the duration of one call; releases its slot on drop.
pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut st = self.limiter.state.lock().unwrap();
        st.in_flight -= 1;
        self.limiter.freed.notify_one();
    }
}

impl RateLimiter {
    /// `max_in_flight` is raised to at least 1.
    pub fn new(max_in_flight: usize, min_interval: Duration) -> Self {
        RateLimiter {
            max_in_flight: max_in_flight.max(1),
            min_interval,
            state: Mutex::new(State::default()),
            freed: Condvar::new(),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(usize::MAX, Duration::ZERO)
    }

    /// Blocks until a slot is free and the start interval has elapsed.
    pub fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap();
        while st.in_flight >= self.max_in_flight {
            st = self.freed.wait(st).unwrap();
        }
        st.in_flight += 1;
        st.peak = st.peak.max(st.in_flight);
        let now = Instant::now();
        let start = st.next_start.map_or(now, |t| t.max(now));
        st.next_start = Some(start + self.min_interval);
        drop(st);
        let wait = start.saturating_duration_since(Instant::now());
        if !wait.is_zero() {
            thread::sleep(wait);
        }
        Permit { limiter: self }
    }

    /// Highest number of simultaneously held permits so far.
    pub fn peak_in_flight(&self) -> usize {
        self.state.lock().unwrap().peak
    }
}
