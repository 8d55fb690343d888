//! Table-driven glycemic-management protocol engine.
//!
//! A protocol is a validated table of rows keyed by BG band and trend.
//! Each decision reads only the latest two BG values and the running IV
//! insulin rate; nutrition is deliberately invisible to it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// BG trend at a decision point, classified from the latest two values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Falling,
    Stable,
    Rising,
}

/// Row selector for the trend column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendSel {
    Any,
    Falling,
    Stable,
    Rising,
}

impl TrendSel {
    fn matches(self, trend: Trend) -> bool {
        matches!(
            (self, trend),
            (TrendSel::Any, _)
                | (TrendSel::Falling, Trend::Falling)
                | (TrendSel::Stable, Trend::Stable)
                | (TrendSel::Rising, Trend::Rising)
        )
    }
}

/// What a fired row does to the running rate (before clamping).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateAction {
    /// Absolute rate in U/hr.
    Set(f64),
    /// Multiply the current rate.
    Scale(f64),
    /// Add to the current rate (U/hr, may be negative).
    Delta(f64),
}

impl RateAction {
    fn apply(self, current: f64) -> f64 {
        match self {
            RateAction::Set(v) => v,
            RateAction::Scale(f) => current * f,
            RateAction::Delta(d) => current + d,
        }
    }
}

/// One protocol table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolRow {
    /// BG band `[lo, hi)`; use `inf` for the last band's upper edge.
    pub bg: [f64; 2],
    pub trend: TrendSel,
    pub action: RateAction,
    /// Hours until the next BG check.
    pub next_check: f64,
}

/// Validated protocol table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub name: String,
    /// Target BG range `[lo, hi]` in mg/dL.
    pub target_range: [f64; 2],
    pub max_rate: f64,
    /// BG change (mg/dL) between consecutive readings beyond which the
    /// trend counts as rising/falling.
    #[serde(default = "default_trend_threshold")]
    pub trend_threshold: f64,
    pub rows: Vec<ProtocolRow>,
}

fn default_trend_threshold() -> f64 {
    10.0
}

/// What the protocol says to do at one decision point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolDecision {
    /// New IV insulin rate (U/hr), clamped to `[0, max_rate]`.
    pub new_rate: f64,
    /// Hours until the next BG measurement.
    pub next_check: f64,
    /// Index of the fired row in the spec's table.
    pub rule_id: usize,
}

impl ProtocolSpec {
    /// Parse and validate a protocol table from a TOML file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read protocol file {}: {e}", path.display()))
        })?;
        let spec: ProtocolSpec = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Check the band partition and rate bounds.
    ///
    /// For each trend value the applicable rows (specific plus `any`) must
    /// partition `[0, inf)` with no gaps or overlaps.
    pub fn validate(&self) -> Result<()> {
        if !(self.target_range[0] > 0.0 && self.target_range[1] > self.target_range[0]) {
            return Err(Error::InvalidProtocol(format!(
                "target range [{}, {}] is not increasing and positive",
                self.target_range[0], self.target_range[1]
            )));
        }
        if !(self.max_rate > 0.0) {
            return Err(Error::InvalidProtocol(format!(
                "max_rate {} must be positive",
                self.max_rate
            )));
        }
        if !(self.trend_threshold >= 0.0) {
            return Err(Error::InvalidProtocol(format!(
                "trend_threshold {} must be nonnegative",
                self.trend_threshold
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !(row.next_check > 0.0) {
                return Err(Error::InvalidProtocol(format!(
                    "row {i}: next_check {} must be positive",
                    row.next_check
                )));
            }
            if !(row.bg[0] >= 0.0 && row.bg[1] > row.bg[0]) {
                return Err(Error::InvalidProtocol(format!(
                    "row {i}: band [{}, {}) is empty or negative",
                    row.bg[0], row.bg[1]
                )));
            }
        }
        for trend in [Trend::Falling, Trend::Stable, Trend::Rising] {
            let mut bands: Vec<(f64, f64, usize)> = self
                .rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.trend.matches(trend))
                .map(|(i, r)| (r.bg[0], r.bg[1], i))
                .collect();
            bands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            if bands.is_empty() || bands[0].0 != 0.0 {
                return Err(Error::InvalidProtocol(format!(
                    "trend {trend:?}: no band starts at 0"
                )));
            }
            for w in bands.windows(2) {
                let (lo0, hi0, i0) = w[0];
                let (lo1, _, i1) = w[1];
                if hi0 < lo1 {
                    return Err(Error::InvalidProtocol(format!(
                        "trend {trend:?}: gap between [{lo0}, {hi0}) (row {i0}) and [{lo1}, ...) (row {i1})"
                    )));
                }
                if hi0 > lo1 {
                    return Err(Error::InvalidProtocol(format!(
                        "trend {trend:?}: overlap between [{lo0}, {hi0}) (row {i0}) and [{lo1}, ...) (row {i1})"
                    )));
                }
            }
            let last = bands.last().unwrap();
            if last.1.is_finite() {
                return Err(Error::InvalidProtocol(format!(
                    "trend {trend:?}: bands end at {} instead of inf (row {})",
                    last.1, last.2
                )));
            }
        }
        Ok(())
    }

    fn classify_trend(&self, bg_now: f64, bg_prev: Option<f64>) -> Trend {
        match bg_prev {
            None => Trend::Stable,
            Some(prev) => {
                let d = bg_now - prev;
                if d > self.trend_threshold {
                    Trend::Rising
                } else if d < -self.trend_threshold {
                    Trend::Falling
                } else {
                    Trend::Stable
                }
            }
        }
    }

    /// Fire the unique row for `(bg_now, trend)` and apply its action to
    /// `current_rate`. The partition property makes this total for any
    /// `bg_now > 0`.
    pub fn decide(&self, bg_now: f64, bg_prev: Option<f64>, current_rate: f64) -> ProtocolDecision {
        debug_assert!(bg_now > 0.0, "BG must be positive");
        let trend = self.classify_trend(bg_now, bg_prev);
        let (rule_id, row) = self
            .rows
            .iter()
            .enumerate()
            .find(|(_, r)| r.trend.matches(trend) && bg_now >= r.bg[0] && bg_now < r.bg[1])
            .expect("validated partition covers every BG");
        ProtocolDecision {
            new_rate: row.action.apply(current_rate).clamp(0.0, self.max_rate),
            next_check: row.next_check,
            rule_id,
        }
    }
}
