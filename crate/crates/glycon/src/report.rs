//! Plot-ready report emission: JSON summaries and CSV tables.
//!
//! Figures are rendered outside this crate; everything here is schema'd
//! text output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::retro::{EventKind, OutcomeCategory, RetroOutcome};
use crate::stats::{GlycemicRegions, PairedSummary};
use crate::trial::TrialRun;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

pub const SUMMARY_FILE: &str = "summary.json";
pub const BOXPLOT_FILE: &str = "boxplot_data.csv";
pub const RECORDS_FILE: &str = "records.json";
pub const EVENTS_FILE: &str = "events.csv";
pub const OUTCOME_COUNTS_FILE: &str = "table4_counts.csv";

/// Top-level summary document for one protocol pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummaryFile {
    pub schema_version: u32,
    pub protocol: String,
    pub n_patients: usize,
    /// Evaluation-value region counts per arm.
    pub region_counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub summary: Option<PairedSummary>,
}

impl TrialSummaryFile {
    pub fn build(run: &TrialRun, regions: &GlycemicRegions, summary: Option<PairedSummary>) -> Self {
        let mut region_counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for (prot, lqg) in &run.records {
            for (arm, rec) in [("protocol", prot), ("lqg", lqg)] {
                let per_arm = region_counts.entry(arm.to_string()).or_default();
                for &v in rec.etw_bg.values() {
                    *per_arm.entry(regions.classify(v).label().to_string()).or_insert(0) += 1;
                }
            }
        }
        Self {
            schema_version: SUMMARY_SCHEMA_VERSION,
            protocol: run.protocol_name.clone(),
            n_patients: run.records.len(),
            region_counts,
            summary,
        }
    }
}

/// Write the summary document, the per-patient boxplot table, and the full
/// run records for one protocol pairing.
pub fn emit_trial_report(
    run: &TrialRun,
    regions: &GlycemicRegions,
    summary: Option<&PairedSummary>,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let doc = TrialSummaryFile::build(run, regions, summary.cloned());
    write_json(&out_dir.join(SUMMARY_FILE), &doc)?;
    write_json(&out_dir.join(RECORDS_FILE), &run.records)?;

    let mut w = csv_writer(&out_dir.join(BOXPLOT_FILE))?;
    w.write_record(["patient_id", "arm", "stat", "bg_mgdl", "region"])?;
    if let Some(s) = summary {
        for p in &s.patients {
            for (arm, st) in [("protocol", &p.protocol), ("lqg", &p.lqg)] {
                for (name, v) in [("min", st.min), ("max", st.max), ("avg", st.avg)] {
                    w.write_record([
                        p.patient_id.to_string(),
                        arm.to_string(),
                        name.to_string(),
                        format_f64(v),
                        regions.classify(v).label().to_string(),
                    ])?;
                }
            }
        }
    }
    for (prot, lqg) in &run.records {
        for (arm, rec) in [("protocol", prot), ("lqg", lqg)] {
            for &v in rec.etw_bg.values() {
                w.write_record([
                    rec.patient_id.to_string(),
                    arm.to_string(),
                    "value".to_string(),
                    format_f64(v),
                    regions.classify(v).label().to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write `events.csv` and the category-count table for a replay run.
pub fn emit_retro_report(outcome: &RetroOutcome, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;

    let mut w = csv_writer(&out_dir.join(EVENTS_FILE))?;
    w.write_record([
        "patient_id",
        "time_hr",
        "bg_mgdl",
        "kind",
        "intervention_time_hr",
        "i_real",
        "i_protocol",
        "i_lqg",
        "category",
    ])?;
    for e in &outcome.events {
        w.write_record([
            e.patient_id.to_string(),
            format_f64(e.time),
            format_f64(e.bg),
            e.kind.label().to_string(),
            format_f64(e.intervention_time),
            format_f64(e.i_real),
            e.i_protocol.map(format_f64).unwrap_or_default(),
            e.i_lqg.map(format_f64).unwrap_or_default(),
            e.category.map(|c| c.label().to_string()).unwrap_or_else(|| "unevaluable".into()),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&out_dir.join(OUTCOME_COUNTS_FILE))?;
    w.write_record(["category", "hypoglycemia", "hyperglycemia"])?;
    for category in OutcomeCategory::ALL {
        let counts = outcome
            .counts
            .counts
            .get(category.label())
            .copied()
            .unwrap_or([0, 0]);
        w.write_record([
            category.label().to_string(),
            counts[EventKind::Hypoglycemia as usize].to_string(),
            counts[EventKind::Hyperglycemia as usize].to_string(),
        ])?;
    }
    w.write_record([
        "unevaluable".to_string(),
        outcome.counts.unevaluable[0].to_string(),
        outcome.counts.unevaluable[1].to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn format_f64(v: f64) -> String {
    // shortest round-trip representation keeps the files reproducible
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // serde_json already depends on ryu; format through JSON to reuse it
    serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
}
