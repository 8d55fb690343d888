//! Piecewise-constant rate schedules and timestamped glucose traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-continuous piecewise-constant rate function on `[start, horizon]`.
///
/// `starts[i]` opens the i-th segment; segment i carries `rates[i]` on
/// `[starts[i], starts[i+1])`, and the last segment runs to `horizon`.
/// Evaluation clamps outside the domain (the validity of a query range is
/// checked by [`RateSchedule::covers`] at operation boundaries, not per call).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    starts: Vec<f64>,
    rates: Vec<f64>,
    horizon: f64,
}

impl RateSchedule {
    /// Schedule with a single constant rate.
    pub fn constant(start: f64, horizon: f64, rate: f64) -> Result<Self> {
        Self::from_segments(vec![start], vec![rate], horizon)
    }

    /// Build from segment start times and per-segment rates.
    pub fn from_segments(starts: Vec<f64>, rates: Vec<f64>, horizon: f64) -> Result<Self> {
        if starts.is_empty() || starts.len() != rates.len() {
            return Err(Error::InvalidSchedule(format!(
                "{} segment starts vs {} rates",
                starts.len(),
                rates.len()
            )));
        }
        for w in starts.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidSchedule(format!(
                    "segment starts not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if !(horizon > *starts.last().unwrap()) {
            return Err(Error::InvalidSchedule(format!(
                "horizon {} not past last segment start {}",
                horizon,
                starts.last().unwrap()
            )));
        }
        for (&t, &r) in starts.iter().zip(&rates) {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidSchedule(format!("rate {r} at t = {t}")));
            }
            if !t.is_finite() {
                return Err(Error::InvalidSchedule(format!("non-finite start {t}")));
            }
        }
        Ok(Self {
            starts,
            rates,
            horizon,
        })
    }

    pub fn start(&self) -> f64 {
        self.starts[0]
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Rate in effect at time `t`, right-continuous, clamped to the domain
    /// (queries at `t == horizon` return the final segment's rate).
    pub fn rate_at(&self, t: f64) -> f64 {
        match self.starts.partition_point(|&s| s <= t) {
            0 => self.rates[0],
            i => self.rates[i - 1],
        }
    }

    /// Whether `[a, b]` lies inside the schedule domain.
    pub fn covers(&self, a: f64, b: f64) -> bool {
        self.start() <= a && b <= self.horizon
    }

    pub fn require_cover(&self, a: f64, b: f64) -> Result<()> {
        if self.covers(a, b) {
            Ok(())
        } else {
            Err(Error::ScheduleGap {
                needed_start: a,
                needed_end: b,
                start: self.start(),
                horizon: self.horizon,
            })
        }
    }

    /// Interior change times strictly inside `(a, b)`.
    pub fn change_times_in(&self, a: f64, b: f64) -> Vec<f64> {
        self.starts
            .iter()
            .copied()
            .filter(|&t| t > a && t < b)
            .collect()
    }

    /// All segment boundaries, including the opening time.
    pub fn segment_starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Restriction to `[a, b]`; the containing segment's rate applies at `a`.
    pub fn clip(&self, a: f64, b: f64) -> Result<Self> {
        self.require_cover(a, b)?;
        let mut starts = vec![a];
        let mut rates = vec![self.rate_at(a)];
        for (&t, &r) in self.starts.iter().zip(&self.rates) {
            if t > a && t < b {
                starts.push(t);
                rates.push(r);
            }
        }
        Self::from_segments(starts, rates, b)
    }

    /// Concatenate two adjacent schedules (`other` starting at this horizon).
    pub fn extend(&self, other: &RateSchedule) -> Result<Self> {
        if (other.start() - self.horizon).abs() > 1e-9 {
            return Err(Error::InvalidSchedule(format!(
                "cannot extend schedule ending at {} with one starting at {}",
                self.horizon,
                other.start()
            )));
        }
        let mut starts = self.starts.clone();
        let mut rates = self.rates.clone();
        for (&t, &r) in other.starts.iter().zip(&other.rates) {
            let t = t.max(self.horizon);
            if let Some(&last) = starts.last() {
                if t <= last {
                    // coincident boundary: later schedule wins from here on
                    rates.pop();
                    starts.pop();
                }
            }
            starts.push(t);
            rates.push(r);
        }
        Self::from_segments(starts, rates, other.horizon)
    }
}

/// Timestamped blood-glucose measurements in mg/dL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlucoseTrace {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl GlucoseTrace {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidTrace(format!(
                "{} times vs {} values",
                times.len(),
                values.len()
            )));
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::UnsortedTimes { index: i + 1 });
            }
        }
        for (&t, &v) in times.iter().zip(&values) {
            if !t.is_finite() || !v.is_finite() {
                return Err(Error::InvalidTrace(format!("non-finite sample ({t}, {v})")));
            }
        }
        Ok(Self { times, values })
    }

    pub fn empty() -> Self {
        Self {
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    /// Append a sample strictly after the current last time.
    pub fn push(&mut self, t: f64, v: f64) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::UnsortedTimes {
                    index: self.times.len(),
                });
            }
        }
        if !t.is_finite() || !v.is_finite() {
            return Err(Error::InvalidTrace(format!("non-finite sample ({t}, {v})")));
        }
        self.times.push(t);
        self.values.push(v);
        Ok(())
    }

    /// Samples with `a <= t <= b`.
    pub fn window(&self, a: f64, b: f64) -> GlucoseTrace {
        let lo = self.times.partition_point(|&t| t < a);
        let hi = self.times.partition_point(|&t| t <= b);
        GlucoseTrace {
            times: self.times[lo..hi].to_vec(),
            values: self.values[lo..hi].to_vec(),
        }
    }

    /// Latest sample at or before `t`.
    pub fn last_at_or_before(&self, t: f64) -> Option<(f64, f64)> {
        match self.times.partition_point(|&s| s <= t) {
            0 => None,
            i => Some((self.times[i - 1], self.values[i - 1])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> RateSchedule {
        RateSchedule::from_segments(vec![0.0, 2.0, 5.0], vec![1.0, 3.0, 0.5], 10.0).unwrap()
    }

    #[test]
    fn right_continuous_evaluation() {
        let s = sched();
        assert_eq!(s.rate_at(0.0), 1.0);
        assert_eq!(s.rate_at(1.999), 1.0);
        assert_eq!(s.rate_at(2.0), 3.0); // right-continuous at the breakpoint
        assert_eq!(s.rate_at(4.999), 3.0);
        assert_eq!(s.rate_at(5.0), 0.5);
        assert_eq!(s.rate_at(10.0), 0.5); // closing time clamps to last segment
    }

    #[test]
    fn rejects_bad_segments() {
        assert!(RateSchedule::from_segments(vec![0.0, 0.0], vec![1.0, 2.0], 5.0).is_err());
        assert!(RateSchedule::from_segments(vec![0.0, 2.0], vec![1.0, -2.0], 5.0).is_err());
        assert!(RateSchedule::from_segments(vec![0.0, 2.0], vec![1.0, 2.0], 2.0).is_err());
    }

    #[test]
    fn clip_keeps_rates() {
        let s = sched();
        let c = s.clip(1.0, 6.0).unwrap();
        assert_eq!(c.start(), 1.0);
        assert_eq!(c.horizon(), 6.0);
        assert_eq!(c.rate_at(1.5), 1.0);
        assert_eq!(c.rate_at(2.5), 3.0);
        assert_eq!(c.rate_at(5.5), 0.5);
    }

    #[test]
    fn extend_joins_adjacent() {
        let a = RateSchedule::constant(0.0, 4.0, 2.0).unwrap();
        let b = RateSchedule::from_segments(vec![4.0, 6.0], vec![1.0, 5.0], 8.0).unwrap();
        let j = a.extend(&b).unwrap();
        assert_eq!(j.rate_at(3.9), 2.0);
        assert_eq!(j.rate_at(4.0), 1.0);
        assert_eq!(j.rate_at(7.0), 5.0);
        assert_eq!(j.horizon(), 8.0);
    }

    #[test]
    fn change_times_are_interior() {
        let s = sched();
        assert_eq!(s.change_times_in(0.0, 10.0), vec![2.0, 5.0]);
        assert_eq!(s.change_times_in(2.0, 5.0), Vec::<f64>::new());
    }

    #[test]
    fn trace_window_and_lookup() {
        let tr = GlucoseTrace::new(vec![0.0, 1.0, 2.0, 3.0], vec![90.0, 100.0, 110.0, 120.0])
            .unwrap();
        let w = tr.window(1.0, 2.5);
        assert_eq!(w.times(), &[1.0, 2.0]);
        assert_eq!(tr.last_at_or_before(2.5), Some((2.0, 110.0)));
        assert_eq!(tr.last_at_or_before(-1.0), None);
    }

    #[test]
    fn trace_rejects_unsorted() {
        assert!(GlucoseTrace::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        let mut tr = GlucoseTrace::new(vec![1.0], vec![100.0]).unwrap();
        assert!(tr.push(1.0, 90.0).is_err());
        assert!(tr.push(2.0, 90.0).is_ok());
    }
}
