use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear annealing: `start` until `delay`, linear to `end` over
/// the next `duration` frames, `end` afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub duration: u64,
    #[serde(default)]
    pub delay: u64,
}

impl Schedule {
    pub fn new(start: f64, end: f64, duration: u64, delay: u64) -> Self {
        Self {
            start,
            end,
            duration,
            delay,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(value, value, 0, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.start.is_finite() || !self.end.is_finite() {
            return Err(Error::Config(format!("schedule endpoints must be finite: {self:?}")));
        }
        Ok(())
    }

    pub fn value(&self, frame: u64) -> f64 {
        if frame <= self.delay {
            return self.start;
        }
        let t = frame - self.delay;
        if t >= self.duration {
            return self.end;
        }
        let f = t as f64 / self.duration as f64;
        self.start + (self.end - self.start) * f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        let s = Schedule::new(0.0, 1.0 / 255.0, 3_500_000, 500_000);
        assert_eq!(s.value(0), 0.0);
        assert_eq!(s.value(500_000), 0.0);
        assert_eq!(s.value(4_000_000), 1.0 / 255.0);
        assert_eq!(s.value(2_250_000), 0.5 / 255.0);
        assert_eq!(s.value(9_000_000), 1.0 / 255.0);
    }

    #[test]
    fn zero_duration_steps_at_delay() {
        let s = Schedule::new(1.0, 0.0, 0, 10);
        assert_eq!(s.value(10), 1.0);
        assert_eq!(s.value(11), 0.0);
    }

    proptest! {
        #[test]
        fn stays_between_endpoints(start in -5.0f64..5.0, end in -5.0f64..5.0, duration in 0u64..1000, delay in 0u64..1000, t in 0u64..3000) {
            let s = Schedule::new(start, end, duration, delay);
            let v = s.value(t);
            prop_assert!(v >= start.min(end) - 1e-12 && v <= start.max(end) + 1e-12);
        }
    }
}
