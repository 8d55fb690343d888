use std::path::Path;

use glycon::identify::{fit as fit_model, FitConfig, TrainingWindow};
use glycon::protocol::ProtocolSpec;
use glycon::report;
use glycon::retro;
use glycon::stats::{self, GlycemicRegions};
use glycon::trial;

use crate::config::{RetroFile, TrialFile};
use crate::manifest::RunManifest;
use crate::{EXIT_CONFIG, EXIT_RUNTIME};

/// Errors split by exit code: bad configuration (2) vs runtime failure (3).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Directory name for one protocol pairing's outputs.
fn pairing_dir(protocol_path: &Path) -> String {
    protocol_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "protocol".into())
}

pub fn simulate(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    protocol_override: Option<&Path>,
) -> Result<(), CliError> {
    let (file, config_text) = TrialFile::load(config_path).map_err(CliError::Config)?;
    let mut config = file.trial.clone();
    if let Some(s) = seed {
        config.root_seed = s;
    }
    let protocol_paths = match protocol_override {
        Some(p) => vec![p.to_path_buf()],
        None => file.protocol_paths(config_path),
    };
    let mut protocols = Vec::new();
    for p in &protocol_paths {
        protocols.push(ProtocolSpec::load(p).map_err(|e| CliError::Config(e.to_string()))?);
    }

    let outputs: Vec<String> = protocol_paths
        .iter()
        .map(|p| pairing_dir(p))
        .collect();
    RunManifest::new("simulate", &config_text, config.root_seed, outputs.clone())
        .write_atomic(out)
        .map_err(runtime)?;

    eprintln!(
        "generating cohort: {} patients, {} schedule groups, seed {}",
        config.n_patients, config.m_schedules, config.root_seed
    );
    let cohort = trial::generate_cohort(&config).map_err(runtime)?;

    for (spec, dir_name) in protocols.iter().zip(&outputs) {
        eprintln!("running arms against {}", spec.name);
        let run = trial::run_trial(&cohort, spec, &config).map_err(runtime)?;
        let floored = run
            .records
            .iter()
            .filter(|(p, l)| p.floored || l.floored)
            .count();
        if floored > 0 {
            eprintln!("warning: glucose floor engaged for {floored} patients");
        }
        let regions =
            GlycemicRegions::for_target(spec.target_range).map_err(runtime)?;
        let summary = stats::summarize(&run.paired_evals()).map_err(runtime)?;
        let dir = out.join(dir_name);
        report::emit_trial_report(&run, &regions, Some(&summary), &dir).map_err(runtime)?;
        eprintln!(
            "  min-BG diff CI [{:.2}, {:.2}], max-BG diff CI [{:.2}, {:.2}], avg-BG diff CI [{:.2}, {:.2}]",
            summary.min_bg.ttest.ci95[0],
            summary.min_bg.ttest.ci95[1],
            summary.max_bg.ttest.ci95[0],
            summary.max_bg.ttest.ci95[1],
            summary.avg_bg.ttest.ci95[0],
            summary.avg_bg.ttest.ci95[1],
        );
        eprintln!("  wrote {}", dir.display());
    }
    Ok(())
}

pub fn retro(
    data: &Path,
    protocol_path: &Path,
    out: &Path,
    config_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let spec = ProtocolSpec::load(protocol_path).map_err(|e| CliError::Config(e.to_string()))?;
    let (retro_file, config_text) = match config_path {
        Some(p) => RetroFile::load(p).map_err(CliError::Config)?,
        None => (RetroFile::default(), String::new()),
    };
    let mut config = retro_file.retro;
    if let Some(s) = seed {
        config.fit.seed = s;
    }

    RunManifest::new(
        "retro",
        &config_text,
        config.fit.seed,
        vec![report::EVENTS_FILE.into(), report::OUTCOME_COUNTS_FILE.into()],
    )
    .write_atomic(out)
    .map_err(runtime)?;

    let ingest = retro::ingest(data).map_err(runtime)?;
    for w in &ingest.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("replaying {} records against {}", ingest.records.len(), spec.name);
    let outcome = retro::replay(&ingest.records, &spec, &config).map_err(runtime)?;
    report::emit_retro_report(&outcome, out).map_err(runtime)?;
    eprintln!(
        "{} hypoglycemic and {} hyperglycemic events classified ({} unevaluable)",
        outcome.counts.total(retro::EventKind::Hypoglycemia),
        outcome.counts.total(retro::EventKind::Hyperglycemia),
        outcome.counts.unevaluable.iter().sum::<usize>(),
    );
    Ok(())
}

pub fn fit(
    data: &Path,
    patient: Option<u64>,
    window_hours: f64,
    seed: u64,
) -> Result<(), CliError> {
    let bg = data.join("bg.csv");
    if !bg.is_file() {
        return Err(CliError::Config(format!("{} is not readable", bg.display())));
    }
    let ingest = retro::ingest(data).map_err(runtime)?;
    for w in &ingest.warnings {
        eprintln!("warning: {w}");
    }
    let record = match patient {
        Some(id) => ingest
            .records
            .iter()
            .find(|r| r.patient_id == id)
            .ok_or_else(|| CliError::Runtime(format!("patient {id} not found")))?,
        None => match ingest.records.as_slice() {
            [one] => one,
            [] => return Err(CliError::Runtime("no usable patient records".into())),
            many => {
                return Err(CliError::Runtime(format!(
                    "{} patients present; pick one with --patient",
                    many.len()
                )))
            }
        },
    };

    let t0 = record.bg.times().first().copied().unwrap_or(0.0);
    let t1 = t0 + window_hours;
    let window = TrainingWindow::new(
        record.bg.window(t0, t1),
        record
            .insulin
            .clip(t0, t1.min(record.insulin.horizon()))
            .map_err(runtime)?,
        record
            .nutrition
            .clip(t0, t1.min(record.nutrition.horizon()))
            .map_err(runtime)?,
        t0,
        t1,
    )
    .map_err(runtime)?;
    let cfg = FitConfig::default().with_seed(seed);
    let result = fit_model(&window, &cfg).map_err(runtime)?;
    let doc = serde_json::json!({
        "patient_id": record.patient_id,
        "window_hours": window_hours,
        "seed": seed,
        "fit": result,
    });
    println!("{}", serde_json::to_string_pretty(&doc).map_err(runtime)?);
    Ok(())
}
