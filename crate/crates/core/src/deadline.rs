//! Cooperative deadlines shared by every pipeline stage.

use std::time::{Duration, Instant};

/// A point in time after which work must be abandoned.
///
/// Stages receive the deadline rather than a timeout so that nested calls
/// all observe the same cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deadline {
    at: Option<Instant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("deadline expired")]
pub struct Expired;

impl Deadline {
    pub fn after(budget: Duration) -> Self {
        Self {
            at: Some(Instant::now() + budget),
        }
    }

    pub fn at(instant: Instant) -> Self {
        Self { at: Some(instant) }
    }

    /// A deadline that never expires.
    pub fn never() -> Self {
        Self { at: None }
    }

    pub fn instant(&self) -> Option<Instant> {
        self.at
    }

    /// Time left, or `None` when unbounded.
    pub fn remaining(&self) -> Option<Duration> {
        self.at
            .map(|at| at.saturating_duration_since(Instant::now()))
    }

    pub fn expired(&self) -> bool {
        matches!(self.remaining(), Some(d) if d.is_zero())
    }

    pub fn check(&self) -> Result<(), Expired> {
        if self.expired() {
            Err(Expired)
        } else {
            Ok(())
        }
    }

    /// The earlier of two deadlines.
    pub fn min(self, other: Deadline) -> Deadline {
        match (self.at, other.at) {
            (Some(a), Some(b)) => Deadline { at: Some(a.min(b)) },
            (Some(a), None) | (None, Some(a)) => Deadline { at: Some(a) },
            (None, None) => Deadline { at: None },
        }
    }

    /// Sleep for `wanted`, waking early at the deadline.
    ///
    /// Returns `Err(Expired)` when the deadline cut the sleep short.
    pub fn sleep(&self, wanted: Duration) -> Result<(), Expired> {
        match self.remaining() {
            Some(left) if left < wanted => {
                std::thread::sleep(left);
                Err(Expired)
            }
            _ => {
                std::thread::sleep(wanted);
                Ok(())
            }
        }
    }
}

impl Default for Deadline {
    fn default() -> Self {
        Self::never()
    }
}
