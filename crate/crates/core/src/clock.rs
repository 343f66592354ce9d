//! Process-wide monotonic clock in nanoseconds.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

static EPOCH: OnceLock<Instant> = OnceLock::new();

fn epoch() -> Instant {
    *EPOCH.get_or_init(Instant::now)
}

/// Nanoseconds elapsed on the monotonic clock since the first call in this
/// process. Never decreases.
pub fn mono_now_ns() -> u64 {
    epoch().elapsed().as_nanos() as u64
}

/// The `Instant` corresponding to a [`mono_now_ns`] reading.
pub fn instant_at(ns: u64) -> Instant {
    epoch() + Duration::from_nanos(ns)
}

/// Sleeps until the monotonic clock reaches `deadline_ns`.
pub fn sleep_until_ns(deadline_ns: u64) {
    let now = mono_now_ns();
    if deadline_ns > now {
        std::thread::sleep(Duration::from_nanos(deadline_ns - now));
    }
}
