//! Retrospective replay of recorded patient data.
//!
//! Ingests per-patient BG/insulin/nutrition CSVs, locates adverse events,
//! attributes each to the latest prior IV-insulin change, computes what
//! the protocol table and the LQG controller would have suggested at that
//! moment, and classifies the (real, protocol, LQG) rate triple by its
//! clinical meaning.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identify::{fit, FitConfig, TrainingWindow, MIN_MEASUREMENTS};
use crate::lqg::{self, ControllerConfig, ControllerState, LinearSystem};
use crate::protocol::ProtocolSpec;
use crate::schedule::{GlucoseTrace, RateSchedule};

/// Adverse-event polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Hypoglycemia,
    Hyperglycemia,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::Hypoglycemia => "hypoglycemia",
            EventKind::Hyperglycemia => "hyperglycemia",
        }
    }
}

/// Clinical reading of how the three insulin rates compare at an
/// intervention that preceded an adverse event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeCategory {
    /// Both advisors dosed on the safe side of what was given.
    BothAppropriate,
    ProtocolMoreAppropriate,
    LqgMoreAppropriate,
    /// Both advisors dosed on the harmful side of what was given.
    BothInappropriate,
    /// All three rates agreed and the event still happened, at a rate that
    /// could have been improved.
    AllInappropriate,
    /// All three rates agreed at zero before hypoglycemia: nothing less
    /// could have been given.
    AllAppropriate,
}

impl OutcomeCategory {
    pub const ALL: [OutcomeCategory; 6] = [
        OutcomeCategory::BothAppropriate,
        OutcomeCategory::ProtocolMoreAppropriate,
        OutcomeCategory::LqgMoreAppropriate,
        OutcomeCategory::BothInappropriate,
        OutcomeCategory::AllInappropriate,
        OutcomeCategory::AllAppropriate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OutcomeCategory::BothAppropriate => "both_appropriate",
            OutcomeCategory::ProtocolMoreAppropriate => "protocol_more_appropriate",
            OutcomeCategory::LqgMoreAppropriate => "lqg_more_appropriate",
            OutcomeCategory::BothInappropriate => "both_inappropriate",
            OutcomeCategory::AllInappropriate => "all_inappropriate",
            OutcomeCategory::AllAppropriate => "all_appropriate",
        }
    }
}

/// Classify an insulin-rate triple at an adverse event.
///
/// Rates are quantized to `tol` (pump resolution) before comparison, which
/// keeps equality transitive. Before hypoglycemia, lower rates are the
/// safer advice; before hyperglycemia, higher rates are. Three-way
/// agreement is inappropriate unless it is an all-zero agreement before
/// hypoglycemia.
pub fn classify(i_real: f64, i_protocol: f64, i_lqg: f64, kind: EventKind, tol: f64) -> OutcomeCategory {
    debug_assert!(i_real >= 0.0 && i_protocol >= 0.0 && i_lqg >= 0.0);
    let q = |x: f64| -> i64 { (x / tol).round() as i64 };
    let (r, p, l) = (q(i_real), q(i_protocol), q(i_lqg));

    if r == p && p == l {
        return match kind {
            EventKind::Hypoglycemia if r == 0 => OutcomeCategory::AllAppropriate,
            _ => OutcomeCategory::AllInappropriate,
        };
    }
    // orient so that "safe" means below the real rate for hypoglycemia and
    // above it for hyperglycemia
    let (real_extreme_high, real_extreme_low) = (r > p && r > l, r < p && r < l);
    match kind {
        EventKind::Hypoglycemia => {
            if real_extreme_high {
                OutcomeCategory::BothAppropriate
            } else if real_extreme_low {
                OutcomeCategory::BothInappropriate
            } else if l >= r && r >= p {
                OutcomeCategory::ProtocolMoreAppropriate
            } else {
                OutcomeCategory::LqgMoreAppropriate
            }
        }
        EventKind::Hyperglycemia => {
            if real_extreme_low {
                OutcomeCategory::BothAppropriate
            } else if real_extreme_high {
                OutcomeCategory::BothInappropriate
            } else if p >= r && r >= l {
                OutcomeCategory::ProtocolMoreAppropriate
            } else {
                OutcomeCategory::LqgMoreAppropriate
            }
        }
    }
}

/// One recorded patient stay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: u64,
    pub bg: GlucoseTrace,
    pub insulin: RateSchedule,
    /// Times at which the recorded IV insulin rate changed.
    pub insulin_changes: Vec<f64>,
    pub nutrition: RateSchedule,
}

/// Ingest outcome: validated records plus per-record warnings for data
/// that was skipped rather than rejected.
#[derive(Debug, Clone)]
pub struct Ingest {
    pub records: Vec<PatientRecord>,
    pub warnings: Vec<String>,
}

fn read_rows(path: &Path, value_col: &str) -> Result<Vec<(u64, f64, f64, u64)>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let want = ["patient_id", "time_hr", value_col];
    let idx: Vec<usize> = want
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| Error::CsvRecord {
                path: path.display().to_string(),
                line: 1,
                msg: format!("missing column {name}"),
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<&str> {
            rec.get(idx[i]).ok_or_else(|| Error::CsvRecord {
                path: path.display().to_string(),
                line,
                msg: "short row".into(),
            })
        };
        let patient_id: u64 = field(0)?.parse().map_err(|_| Error::CsvRecord {
            path: path.display().to_string(),
            line,
            msg: format!("bad patient_id {:?}", field(0).unwrap_or("")),
        })?;
        let time: f64 = field(1)?.parse().map_err(|_| Error::CsvRecord {
            path: path.display().to_string(),
            line,
            msg: format!("bad time_hr {:?}", field(1).unwrap_or("")),
        })?;
        let value: f64 = field(2)?.parse().map_err(|_| Error::CsvRecord {
            path: path.display().to_string(),
            line,
            msg: format!("bad {value_col} {:?}", field(2).unwrap_or("")),
        })?;
        if !time.is_finite() || !value.is_finite() {
            return Err(Error::CsvRecord {
                path: path.display().to_string(),
                line,
                msg: "non-finite value".into(),
            });
        }
        rows.push((patient_id, time, value, line));
    }
    Ok(rows)
}

fn check_sorted(path: &str, rows: &[(u64, f64, f64, u64)]) -> Result<()> {
    let mut last: BTreeMap<u64, (f64, u64)> = BTreeMap::new();
    for &(pid, t, _, line) in rows {
        if let Some(&(prev_t, _)) = last.get(&pid) {
            if t <= prev_t {
                return Err(Error::CsvRecord {
                    path: path.to_string(),
                    line,
                    msg: format!("time {t} not after previous {prev_t} for patient {pid}"),
                });
            }
        }
        last.insert(pid, (t, line));
    }
    Ok(())
}

/// Read `bg.csv`, `insulin.csv`, and `nutrition.csv` from a directory.
/// Missing files count as empty; malformed content is an error naming the
/// file and line.
pub fn ingest(dir: &Path) -> Result<Ingest> {
    let bg_path = dir.join("bg.csv");
    let insulin_path = dir.join("insulin.csv");
    let nutrition_path = dir.join("nutrition.csv");

    let bg_rows = read_rows(&bg_path, "bg_mgdl")?;
    let insulin_rows = read_rows(&insulin_path, "rate_u_per_hr")?;
    let nutrition_rows = read_rows(&nutrition_path, "rate_units_per_hr")?;

    check_sorted(&bg_path.display().to_string(), &bg_rows)?;
    check_sorted(&insulin_path.display().to_string(), &insulin_rows)?;
    check_sorted(&nutrition_path.display().to_string(), &nutrition_rows)?;

    for &(_, t, v, line) in &bg_rows {
        if v <= 0.0 || v >= 2000.0 {
            return Err(Error::CsvRecord {
                path: bg_path.display().to_string(),
                line,
                msg: format!("BG {v} mg/dL out of range at t = {t}"),
            });
        }
    }
    for (path, rows) in [(&insulin_path, &insulin_rows), (&nutrition_path, &nutrition_rows)] {
        for &(_, t, v, line) in rows.iter() {
            if v < 0.0 || v >= 1000.0 {
                return Err(Error::CsvRecord {
                    path: path.display().to_string(),
                    line,
                    msg: format!("rate {v} out of range at t = {t}"),
                });
            }
        }
    }

    let mut by_patient: BTreeMap<u64, (Vec<(f64, f64)>, Vec<(f64, f64)>, Vec<(f64, f64)>)> =
        BTreeMap::new();
    for &(pid, t, v, _) in &bg_rows {
        by_patient.entry(pid).or_default().0.push((t, v));
    }
    for &(pid, t, v, _) in &insulin_rows {
        by_patient.entry(pid).or_default().1.push((t, v));
    }
    for &(pid, t, v, _) in &nutrition_rows {
        by_patient.entry(pid).or_default().2.push((t, v));
    }

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (pid, (bg, ins, nut)) in by_patient {
        if bg.len() < 2 {
            warnings.push(format!("patient {pid}: fewer than 2 BG measurements, skipped"));
            continue;
        }
        if ins.len() < 2 {
            warnings.push(format!(
                "patient {pid}: fewer than 2 insulin changes, skipped"
            ));
            continue;
        }
        let t_first = bg[0].0.min(ins[0].0).min(nut.first().map_or(f64::MAX, |x| x.0));
        let t_last = bg.last().unwrap().0.max(ins.last().unwrap().0)
            .max(nut.last().map_or(f64::MIN, |x| x.0))
            + 1e-6;

        let trace =
            GlucoseTrace::new(bg.iter().map(|x| x.0).collect(), bg.iter().map(|x| x.1).collect())?;
        let insulin = schedule_from_changes(t_first, t_last, &ins)?;
        let nutrition = if nut.is_empty() {
            RateSchedule::constant(t_first, t_last, 0.0)?
        } else {
            schedule_from_changes(t_first, t_last, &nut)?
        };
        records.push(PatientRecord {
            patient_id: pid,
            bg: trace,
            insulin_changes: ins.iter().map(|x| x.0).collect(),
            insulin,
            nutrition,
        });
    }
    Ok(Ingest { records, warnings })
}

/// Rate 0 before the first recorded change, then each change's rate until
/// the next one.
fn schedule_from_changes(t_first: f64, t_last: f64, changes: &[(f64, f64)]) -> Result<RateSchedule> {
    let mut starts = Vec::with_capacity(changes.len() + 1);
    let mut rates = Vec::with_capacity(changes.len() + 1);
    if changes[0].0 > t_first {
        starts.push(t_first);
        rates.push(0.0);
    }
    for &(t, r) in changes {
        starts.push(t);
        rates.push(r);
    }
    RateSchedule::from_segments(starts, rates, t_last)
}

/// BG thresholds that make a measurement an adverse event.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EventBands {
    /// Hypoglycemia when BG is strictly below this (mg/dL).
    pub hypo_below: f64,
    /// Hyperglycemia when BG is strictly above this (mg/dL).
    pub hyper_above: f64,
}

impl EventBands {
    /// Moderate-and-severe bands shared by both protocols.
    pub fn moderate_and_severe() -> Self {
        Self {
            hypo_below: 70.0,
            hyper_above: 250.0,
        }
    }

    /// Everything outside the protocol's target range counts, mild bands
    /// included.
    pub fn including_mild(spec: &ProtocolSpec) -> Self {
        Self {
            hypo_below: spec.target_range[0],
            hyper_above: spec.target_range[1],
        }
    }
}

/// An adverse measurement attributed to its latest prior insulin change.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdverseEvent {
    pub patient_id: u64,
    pub time: f64,
    pub bg: f64,
    pub kind: EventKind,
    pub intervention_time: f64,
    pub i_real: f64,
    pub i_protocol: Option<f64>,
    pub i_lqg: Option<f64>,
    pub category: Option<OutcomeCategory>,
}

/// Locate adverse events between the second and last insulin change, each
/// annotated with the latest insulin change strictly before it.
pub fn find_events(record: &PatientRecord, bands: &EventBands) -> Vec<AdverseEvent> {
    let changes = &record.insulin_changes;
    if changes.len() < 2 {
        return Vec::new();
    }
    let t_second = changes[1];
    let t_last = *changes.last().unwrap();

    record
        .bg
        .iter()
        .filter(|&(t, _)| t >= t_second && t <= t_last)
        .filter_map(|(t, bg)| {
            let kind = if bg < bands.hypo_below {
                EventKind::Hypoglycemia
            } else if bg > bands.hyper_above {
                EventKind::Hyperglycemia
            } else {
                return None;
            };
            // latest change strictly before the measurement
            let idx = changes.partition_point(|&c| c < t);
            if idx == 0 {
                return None;
            }
            let intervention_time = changes[idx - 1];
            Some(AdverseEvent {
                patient_id: record.patient_id,
                time: t,
                bg,
                kind,
                intervention_time,
                i_real: record.insulin.rate_at(intervention_time),
                i_protocol: None,
                i_lqg: None,
                category: None,
            })
        })
        .collect()
}

/// Replay settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetroConfig {
    pub controller: ControllerConfig,
    pub fit: FitConfig,
    /// Pump resolution for rate-equality comparison (U/hr).
    pub equality_tol: f64,
    /// Also count mild-band excursions as events.
    pub include_mild: bool,
}

impl Default for RetroConfig {
    fn default() -> Self {
        Self {
            controller: ControllerConfig::default(),
            fit: FitConfig::default(),
            equality_tol: 0.05,
            include_mild: false,
        }
    }
}

/// Counterfactual suggestions at an event's intervention time: what the
/// protocol table and a freshly fitted LQG controller would have done with
/// the data recorded up to that moment.
pub fn counterfactuals(
    record: &PatientRecord,
    event: &AdverseEvent,
    spec: &ProtocolSpec,
    config: &RetroConfig,
) -> Result<(f64, f64)> {
    let t_i = event.intervention_time;
    let history = record.bg.window(f64::MIN, t_i);
    let (_, bg_now) = history
        .last_at_or_before(t_i)
        .ok_or_else(|| Error::Stats(format!("no BG measurement before intervention at {t_i}")))?;
    let n = history.len();
    let bg_prev = (n >= 2).then(|| history.values()[n - 2]);

    // rate in effect before the recorded change fired
    let rate_before = {
        let starts = record.insulin.segment_starts();
        let idx = starts.partition_point(|&s| s < t_i);
        if idx == 0 {
            record.insulin.rates()[0]
        } else {
            record.insulin.rates()[idx - 1]
        }
    };
    let i_protocol = spec.decide(bg_now, bg_prev, rate_before).new_rate;

    let window_start = (t_i - 24.0).max(record.insulin.start());
    let train = record.bg.window(window_start, t_i);
    if train.len() < MIN_MEASUREMENTS {
        return Err(Error::InsufficientData {
            n: train.len(),
            min: MIN_MEASUREMENTS,
        });
    }
    let window = TrainingWindow::new(
        train,
        record.insulin.clip(window_start, t_i)?,
        record.nutrition.clip(window_start, t_i)?,
        window_start,
        t_i,
    )?;
    let fitted = fit(&window, &config.fit)?;
    let p = fitted.params;

    let u_max = config.controller.u_max;
    let i_lqg = if p.beta_i < 1e-9 {
        if bg_now > spec.target_range[1] {
            u_max
        } else {
            0.0
        }
    } else {
        let sys = LinearSystem::from_msg_params(&p);
        let k_c = lqg::lqr_gain(&sys, config.controller.q_cost, config.controller.r_cost)?;
        let gains = lqg::LqgGains {
            k_c,
            k_f: lqg::kalman_gain(&sys),
            x_r: spec.target_range[1],
            u_r: lqg::reference_shift(&p, spec.target_range[1], record.nutrition.rate_at(t_i), u_max)?,
        };
        let state = ControllerState {
            x_hat: bg_now,
            p_cov: p.r_meas,
            last_update: t_i,
        };
        lqg::suggest_rate(&state, &gains, u_max)
    };
    Ok((i_protocol, i_lqg))
}

/// Per-category, per-kind event counts plus the events that could not be
/// evaluated for lack of training data.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub counts: BTreeMap<String, [usize; 2]>,
    pub unevaluable: [usize; 2],
}

impl CategoryCounts {
    pub fn add(&mut self, category: OutcomeCategory, kind: EventKind) {
        let entry = self.counts.entry(category.label().to_string()).or_insert([0, 0]);
        entry[kind as usize] += 1;
    }

    pub fn total(&self, kind: EventKind) -> usize {
        self.counts.values().map(|c| c[kind as usize]).sum()
    }
}

/// Full replay result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetroOutcome {
    pub events: Vec<AdverseEvent>,
    pub counts: CategoryCounts,
}

/// Find, evaluate, and classify every adverse event in the records.
/// Events without enough trailing data are kept in the output but marked
/// unevaluable and excluded from the tallies.
pub fn replay(records: &[PatientRecord], spec: &ProtocolSpec, config: &RetroConfig) -> Result<RetroOutcome> {
    let bands = if config.include_mild {
        EventBands::including_mild(spec)
    } else {
        EventBands::moderate_and_severe()
    };
    let mut events = Vec::new();
    let mut counts = CategoryCounts::default();
    for record in records {
        for mut event in find_events(record, &bands) {
            match counterfactuals(record, &event, spec, config) {
                Ok((i_protocol, i_lqg)) => {
                    let category =
                        classify(event.i_real, i_protocol, i_lqg, event.kind, config.equality_tol);
                    event.i_protocol = Some(i_protocol);
                    event.i_lqg = Some(i_lqg);
                    event.category = Some(category);
                    counts.add(category, event.kind);
                }
                Err(Error::InsufficientData { .. })
                | Err(Error::NoInsulinExposure)
                | Err(Error::FitDiverged { .. }) => {
                    counts.unevaluable[event.kind as usize] += 1;
                }
                Err(e) => return Err(e),
            }
            events.push(event);
        }
    }
    Ok(RetroOutcome { events, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 0.05;

    #[test]
    fn classify_matches_published_rows() {
        use EventKind::*;
        use OutcomeCategory::*;
        // all-equal special cases
        assert_eq!(classify(0.0, 0.0, 0.0, Hypoglycemia, TOL), AllAppropriate);
        assert_eq!(classify(2.0, 2.0, 2.0, Hypoglycemia, TOL), AllInappropriate);
        assert_eq!(classify(0.0, 0.0, 0.0, Hyperglycemia, TOL), AllInappropriate);
        assert_eq!(classify(3.0, 3.0, 3.0, Hyperglycemia, TOL), AllInappropriate);
        // hypoglycemia: both advised less than was given
        assert_eq!(classify(4.0, 2.0, 2.0, Hypoglycemia, TOL), BothAppropriate);
        assert_eq!(classify(4.0, 3.0, 2.0, Hypoglycemia, TOL), BothAppropriate);
        assert_eq!(classify(4.0, 2.0, 3.0, Hypoglycemia, TOL), BothAppropriate);
        // hypoglycemia: protocol below real, LQG at or above
        assert_eq!(classify(3.0, 2.0, 3.0, Hypoglycemia, TOL), ProtocolMoreAppropriate);
        assert_eq!(classify(3.0, 2.0, 5.0, Hypoglycemia, TOL), ProtocolMoreAppropriate);
        assert_eq!(classify(3.0, 3.0, 5.0, Hypoglycemia, TOL), ProtocolMoreAppropriate);
        // hypoglycemia: LQG below real, protocol at or above
        assert_eq!(classify(3.0, 3.0, 2.0, Hypoglycemia, TOL), LqgMoreAppropriate);
        assert_eq!(classify(3.0, 5.0, 2.0, Hypoglycemia, TOL), LqgMoreAppropriate);
        assert_eq!(classify(3.0, 5.0, 3.0, Hypoglycemia, TOL), LqgMoreAppropriate);
        // hypoglycemia: both advised more
        assert_eq!(classify(1.0, 2.0, 2.0, Hypoglycemia, TOL), BothInappropriate);
        assert_eq!(classify(1.0, 3.0, 2.0, Hypoglycemia, TOL), BothInappropriate);
        assert_eq!(classify(1.0, 2.0, 3.0, Hypoglycemia, TOL), BothInappropriate);
        // hyperglycemia mirrors with the safe side flipped
        assert_eq!(classify(2.0, 3.0, 3.0, Hyperglycemia, TOL), BothAppropriate);
        assert_eq!(classify(2.0, 4.0, 3.0, Hyperglycemia, TOL), BothAppropriate);
        assert_eq!(classify(2.0, 3.0, 4.0, Hyperglycemia, TOL), BothAppropriate);
        assert_eq!(classify(3.0, 5.0, 3.0, Hyperglycemia, TOL), ProtocolMoreAppropriate);
        assert_eq!(classify(3.0, 5.0, 2.0, Hyperglycemia, TOL), ProtocolMoreAppropriate);
        assert_eq!(classify(3.0, 3.0, 2.0, Hyperglycemia, TOL), ProtocolMoreAppropriate);
        assert_eq!(classify(3.0, 3.0, 5.0, Hyperglycemia, TOL), LqgMoreAppropriate);
        assert_eq!(classify(3.0, 2.0, 5.0, Hyperglycemia, TOL), LqgMoreAppropriate);
        assert_eq!(classify(3.0, 2.0, 3.0, Hyperglycemia, TOL), LqgMoreAppropriate);
        assert_eq!(classify(4.0, 3.0, 3.0, Hyperglycemia, TOL), BothInappropriate);
        assert_eq!(classify(4.0, 2.0, 3.0, Hyperglycemia, TOL), BothInappropriate);
        assert_eq!(classify(4.0, 3.0, 2.0, Hyperglycemia, TOL), BothInappropriate);
    }

    #[test]
    fn classify_is_total_over_order_types() {
        // all weak orderings of three rates, both kinds, land somewhere
        let values = [0.0, 1.0, 2.0];
        for kind in [EventKind::Hypoglycemia, EventKind::Hyperglycemia] {
            for &r in &values {
                for &p in &values {
                    for &l in &values {
                        let _ = classify(r, p, l, kind, TOL);
                    }
                }
            }
        }
    }

    #[test]
    fn kind_swap_mirrors_categories() {
        use OutcomeCategory::*;
        let mut rng = crate::seed::rng(3, &[1]);
        use rand::Rng;
        for _ in 0..500 {
            let r: f64 = rng.gen_range(0.0..6.0);
            let p: f64 = rng.gen_range(0.0..6.0);
            let l: f64 = rng.gen_range(0.0..6.0);
            let hypo = classify(r, p, l, EventKind::Hypoglycemia, TOL);
            let hyper = classify(r, p, l, EventKind::Hyperglycemia, TOL);
            let expected = match hypo {
                BothAppropriate => BothInappropriate,
                BothInappropriate => BothAppropriate,
                ProtocolMoreAppropriate => LqgMoreAppropriate,
                LqgMoreAppropriate => ProtocolMoreAppropriate,
                AllAppropriate | AllInappropriate => AllInappropriate,
            };
            assert_eq!(hyper, expected, "triple ({r}, {p}, {l})");
        }
    }

    #[test]
    fn equality_tolerance_quantizes() {
        use OutcomeCategory::*;
        // 2.00 vs 2.02 quantize to the same pump step
        assert_eq!(classify(2.0, 2.02, 1.98, EventKind::Hypoglycemia, TOL), AllInappropriate);
        // a full step apart is a real difference
        assert_eq!(classify(2.0, 2.0, 1.9, EventKind::Hypoglycemia, TOL), LqgMoreAppropriate);
    }

    fn toy_record() -> PatientRecord {
        let bg_times: Vec<f64> = (0..30).map(|i| i as f64 * 2.0).collect();
        let bg_vals: Vec<f64> = bg_times
            .iter()
            .map(|&t| {
                if (26.0..=30.0).contains(&t) {
                    60.0 // hypoglycemic stretch
                } else if (40.0..=44.0).contains(&t) {
                    300.0 // hyperglycemic stretch
                } else {
                    150.0
                }
            })
            .collect();
        let insulin_changes = vec![(4.0, 2.0), (20.0, 4.0), (36.0, 1.0), (50.0, 2.0)];
        PatientRecord {
            patient_id: 9,
            bg: GlucoseTrace::new(bg_times, bg_vals).unwrap(),
            insulin: schedule_from_changes(0.0, 60.0, &insulin_changes).unwrap(),
            insulin_changes: insulin_changes.iter().map(|x| x.0).collect(),
            nutrition: RateSchedule::constant(0.0, 60.0, 3.0).unwrap(),
        }
    }

    #[test]
    fn find_events_locates_and_attributes() {
        let rec = toy_record();
        let events = find_events(&rec, &EventBands::moderate_and_severe());
        // hypo at 26, 28, 30 (after the 2nd change at 20); hyper at 40, 42, 44
        let hypo: Vec<_> = events
            .iter()
            .filter(|e| e.kind == EventKind::Hypoglycemia)
            .collect();
        let hyper: Vec<_> = events
            .iter()
            .filter(|e| e.kind == EventKind::Hyperglycemia)
            .collect();
        assert_eq!(hypo.len(), 3);
        assert_eq!(hyper.len(), 3);
        for e in &hypo {
            assert_eq!(e.intervention_time, 20.0);
            assert_eq!(e.i_real, 4.0);
            assert!(e.intervention_time < e.time);
        }
        for e in &hyper {
            assert_eq!(e.intervention_time, 36.0);
            assert_eq!(e.i_real, 1.0);
        }
    }

    #[test]
    fn events_before_second_change_are_dropped() {
        let mut rec = toy_record();
        // hypoglycemic reading before the second insulin change
        let mut vals = rec.bg.values().to_vec();
        vals[3] = 55.0; // t = 6, between changes 1 and 2
        vals[1] = 320.0; // t = 2, before any usable interval
        rec.bg = GlucoseTrace::new(rec.bg.times().to_vec(), vals).unwrap();
        let events = find_events(&rec, &EventBands::moderate_and_severe());
        assert!(events.iter().all(|e| e.time >= 20.0));
        // mild readings are not events
        assert!(events.iter().all(|e| e.bg < 70.0 || e.bg > 250.0));
    }

    #[test]
    fn counterfactual_protocol_identity_in_target() {
        // BG sits at 150 (in protocol B target) at the intervention: the
        // table's stable target row keeps the running rate
        let rec = toy_record();
        let spec = crate::protocol::ProtocolSpec::load(
            &std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
                .join("../../configs/protocol_b.toml"),
        )
        .unwrap();
        let event = AdverseEvent {
            patient_id: 9,
            time: 40.0,
            bg: 300.0,
            kind: EventKind::Hyperglycemia,
            intervention_time: 36.0,
            i_real: 1.0,
            i_protocol: None,
            i_lqg: None,
            category: None,
        };
        let cfg = RetroConfig::default();
        let (i_protocol, i_lqg) = counterfactuals(&rec, &event, &spec, &cfg).unwrap();
        // BG before the change at 36 is 150, stable: hold the pre-change rate
        assert_eq!(i_protocol, 4.0);
        assert!(i_lqg >= 0.0 && i_lqg <= cfg.controller.u_max);
        // determinism
        let again = counterfactuals(&rec, &event, &spec, &cfg).unwrap();
        assert_eq!((i_protocol, i_lqg), again);
    }

    #[test]
    fn replay_counts_conserve_events() {
        let rec = toy_record();
        let spec = crate::protocol::ProtocolSpec::load(
            &std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
                .join("../../configs/protocol_b.toml"),
        )
        .unwrap();
        let out = replay(&[rec], &spec, &RetroConfig::default()).unwrap();
        let hypo_total = out.counts.total(EventKind::Hypoglycemia)
            + out.counts.unevaluable[EventKind::Hypoglycemia as usize];
        let hyper_total = out.counts.total(EventKind::Hyperglycemia)
            + out.counts.unevaluable[EventKind::Hyperglycemia as usize];
        assert_eq!(hypo_total, 3);
        assert_eq!(hyper_total, 3);
        assert_eq!(out.events.len(), 6);
    }
}
