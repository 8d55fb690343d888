//! Virtual-trial engine.
//!
//! Builds a cohort of virtual patients with shared nutrition/insulin
//! schedules, simulates training-window data, then runs two closed-loop
//! arms per patient over the evaluation window: a table-driven protocol
//! arm, and an LQG arm whose intervention times are the protocol's times
//! plus every nutrition change. The LQG arm refits the glucose model on
//! its own trailing 24-hour history at each intervention.
//!
//! Everything is a pure function of the config (seeds included): records
//! come out identical across runs and thread counts.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identify::{fit, FitConfig, FitResult, TrainingWindow};
use crate::lqg::{self, ControllerConfig, ControllerState, LinearSystem};
use crate::msg::{self, MsgParams};
use crate::patient::{
    sample_measurement_times, sample_patient, simulate, IntervalDistribution, PatientBox,
    SimState, VirtualPatient,
};
use crate::protocol::ProtocolSpec;
use crate::schedule::{GlucoseTrace, RateSchedule};
use crate::seed::{self, tag};
use crate::stats::{GlycemicRegions, PatientEvals, Region};

/// Distributions for generated nutrition and TTW insulin schedules.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleGenConfig {
    pub nutrition_interval: IntervalDistribution,
    pub nutrition_rate_range: [f64; 2],
    pub insulin_interval: IntervalDistribution,
    pub insulin_rate_range: [f64; 2],
    /// Probability that a TTW insulin segment is an off period.
    pub insulin_zero_fraction: f64,
}

impl Default for ScheduleGenConfig {
    fn default() -> Self {
        Self {
            nutrition_interval: IntervalDistribution {
                median_hr: 6.0,
                sigma: 0.5,
                clip_hr: [1.0, 24.0],
            },
            nutrition_rate_range: [1.0, 8.0],
            insulin_interval: IntervalDistribution {
                median_hr: 3.0,
                sigma: 0.5,
                clip_hr: [0.5, 12.0],
            },
            insulin_rate_range: [0.0, 6.0],
            insulin_zero_fraction: 0.25,
        }
    }
}

/// BG measurement-time and assay-noise model for the simulated cohort.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    pub interval: IntervalDistribution,
    pub noise_sd_mgdl: f64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            interval: IntervalDistribution::default(),
            noise_sd_mgdl: 2.0,
        }
    }
}

/// Full trial configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialConfig {
    pub n_patients: usize,
    pub m_schedules: usize,
    pub ttw_hours: f64,
    pub etw_hours: f64,
    pub root_seed: u64,
    pub schedules: ScheduleGenConfig,
    pub measurement: MeasurementConfig,
    pub patient: PatientBox,
    pub controller: ControllerConfig,
    pub fit: FitConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            n_patients: 200,
            m_schedules: 20,
            ttw_hours: 24.0,
            etw_hours: 24.0,
            root_seed: 42,
            schedules: ScheduleGenConfig::default(),
            measurement: MeasurementConfig::default(),
            patient: PatientBox::default(),
            controller: ControllerConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.m_schedules == 0 {
            return Err(Error::Config("n_patients and m_schedules must be positive".into()));
        }
        if self.n_patients % self.m_schedules != 0 {
            return Err(Error::Config(format!(
                "m_schedules ({}) must divide n_patients ({})",
                self.m_schedules, self.n_patients
            )));
        }
        if !(self.ttw_hours > 0.0 && self.etw_hours > 0.0) {
            return Err(Error::Config("window lengths must be positive".into()));
        }
        self.patient.validate()?;
        self.fit.theta.validate()?;
        Ok(())
    }

    pub fn ttw_end(&self) -> f64 {
        self.ttw_hours
    }

    pub fn etw_end(&self) -> f64 {
        self.ttw_hours + self.etw_hours
    }
}

/// One patient's training-window data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TtwData {
    pub trace: GlucoseTrace,
    pub end_state: SimState,
}

/// Generated cohort: patients, shared schedule pairs, group assignment,
/// and simulated training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<VirtualPatient>,
    /// M nutrition schedules over the whole trial window.
    pub nutrition: Vec<RateSchedule>,
    /// M insulin schedules over the training window only.
    pub insulin_ttw: Vec<RateSchedule>,
    /// Patient index -> schedule group.
    pub assignment: Vec<usize>,
    pub ttw: Vec<TtwData>,
}

fn gen_schedule(
    rng: &mut rand_chacha::ChaCha8Rng,
    interval: &IntervalDistribution,
    rate_range: [f64; 2],
    zero_fraction: f64,
    start: f64,
    horizon: f64,
) -> RateSchedule {
    loop {
        let mut starts = vec![start];
        let mut t = start;
        loop {
            t += interval.sample_gap(rng);
            if t >= horizon - 1e-9 {
                break;
            }
            starts.push(t);
        }
        let rates: Vec<f64> = starts
            .iter()
            .map(|_| {
                if zero_fraction > 0.0 && rng.gen::<f64>() < zero_fraction {
                    0.0
                } else {
                    rng.gen_range(rate_range[0]..rate_range[1])
                }
            })
            .collect();
        if zero_fraction > 0.0 && !rates.iter().any(|&r| r > 0.0) {
            continue; // a training window must carry some insulin signal
        }
        return RateSchedule::from_segments(starts, rates, horizon)
            .expect("generated segments are valid");
    }
}

/// Generate the full cohort (patients, schedules, assignments, TTW data).
pub fn generate_cohort(config: &TrialConfig) -> Result<Cohort> {
    config.validate()?;
    let root = config.root_seed;
    let m = config.m_schedules;
    let n = config.n_patients;

    let nutrition: Vec<RateSchedule> = (0..m)
        .map(|g| {
            gen_schedule(
                &mut seed::rng(root, &[tag::NUTRITION_SCHEDULE, g as u64]),
                &config.schedules.nutrition_interval,
                config.schedules.nutrition_rate_range,
                0.0,
                0.0,
                config.etw_end(),
            )
        })
        .collect();
    let insulin_ttw: Vec<RateSchedule> = (0..m)
        .map(|g| {
            gen_schedule(
                &mut seed::rng(root, &[tag::INSULIN_SCHEDULE, g as u64]),
                &config.schedules.insulin_interval,
                config.schedules.insulin_rate_range,
                config.schedules.insulin_zero_fraction,
                0.0,
                config.ttw_end(),
            )
        })
        .collect();

    let patients: Vec<VirtualPatient> = (0..n)
        .map(|i| {
            sample_patient(
                i as u64,
                &config.patient,
                &mut seed::rng(root, &[tag::PATIENT_PARAMS, i as u64]),
            )
        })
        .collect();

    // random pairing: shuffle patient indices, then chunk into M groups
    let mut order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut seed::rng(root, &[tag::ASSIGNMENT]));
    }
    let per_group = n / m;
    let mut assignment = vec![0usize; n];
    for (pos, &pid) in order.iter().enumerate() {
        assignment[pid] = pos / per_group;
    }

    let ttw: Vec<TtwData> = patients
        .par_iter()
        .map(|p| {
            let g = assignment[p.id as usize];
            let mut times = sample_measurement_times(
                0.0,
                config.ttw_end(),
                &config.measurement.interval,
                &mut seed::rng(root, &[tag::MEASUREMENT_TIMES, p.id]),
            );
            // the handover measurement at the end of the training window
            if config.ttw_end() - times.last().unwrap() > 1e-9 {
                times.push(config.ttw_end());
            }
            let s0 = SimState::basal(p, 0.0);
            let traj = simulate(p, &s0, config.ttw_end(), &insulin_ttw[g], &nutrition[g])?;
            let mut noise = seed::rng(root, &[tag::TTW_NOISE, p.id]);
            let mut trace = GlucoseTrace::empty();
            for &t in &times {
                let z: f64 = noise.sample(StandardNormal);
                let y = (traj.bg_at(t) + config.measurement.noise_sd_mgdl * z).max(1.0);
                trace.push(t, y)?;
            }
            Ok(TtwData {
                trace,
                end_state: traj.final_state(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Cohort {
        patients,
        nutrition,
        insulin_ttw,
        assignment,
        ttw,
    })
}

/// Which control strategy produced a run record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Protocol,
    Lqg,
}

/// One decision point and its outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub time: f64,
    /// BG value the decision was based on.
    pub bg: f64,
    /// Insulin rate in effect before the decision (U/hr).
    pub insulin_before: f64,
    /// Nutrition rate at the decision time (carb-units/hr).
    pub nutrition_rate: f64,
    /// Rate chosen by the arm (U/hr).
    pub suggested_rate: f64,
    /// BG measured at the following evaluation time.
    pub resulting_bg: f64,
    pub resulting_region: Region,
    /// Protocol arm: fired table row.
    pub rule_id: Option<usize>,
    /// LQG arm: this intervention reused stale parameters after a fit error.
    pub fit_fallback: bool,
}

/// One arm's full evaluation-window history for one patient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientRunRecord {
    pub patient_id: u64,
    pub arm: Arm,
    pub interventions: Vec<InterventionRecord>,
    /// Evaluation measurements (each follows an intervention).
    pub etw_bg: GlucoseTrace,
    /// Fit results of the LQG arm, one per successful refit.
    pub fit_history: Vec<FitResult>,
    /// Whether the simulator's glucose floor ever engaged.
    pub floored: bool,
}

impl PatientRunRecord {
    pub fn intervention_times(&self) -> Vec<f64> {
        self.interventions.iter().map(|r| r.time).collect()
    }
}

/// Protocol arm: decide at each check time, hold the rate, measure at the
/// next check (clamped to the window end), repeat.
pub fn run_protocol_arm(
    patient: &VirtualPatient,
    ttw: &TtwData,
    nutrition: &RateSchedule,
    insulin_ttw: &RateSchedule,
    spec: &ProtocolSpec,
    config: &TrialConfig,
) -> Result<PatientRunRecord> {
    let regions = GlycemicRegions::for_target(spec.target_range)?;
    let ttw_end = config.ttw_end();
    let etw_end = config.etw_end();
    let mut noise = seed::rng(config.root_seed, &[tag::ARM_NOISE, patient.id, 0]);

    let ttw_values = ttw.trace.values();
    let mut bg_now = *ttw_values.last().expect("TTW trace is never empty");
    let mut bg_prev = (ttw_values.len() >= 2).then(|| ttw_values[ttw_values.len() - 2]);
    let mut rate = insulin_ttw.rate_at(ttw_end);
    let mut state = ttw.end_state;
    let mut t = ttw_end;

    let mut interventions = Vec::new();
    let mut etw_bg = GlucoseTrace::empty();
    let mut floored = false;

    while t < etw_end {
        let d = spec.decide(bg_now, bg_prev, rate);
        let t_next = (t + d.next_check).min(etw_end);
        let seg = RateSchedule::constant(t, t_next, d.new_rate)?;
        let traj = simulate(patient, &state, t_next, &seg, nutrition)?;
        floored |= traj.floored;
        state = traj.final_state();
        let z: f64 = noise.sample(StandardNormal);
        let y = (state.g + config.measurement.noise_sd_mgdl * z).max(1.0);
        etw_bg.push(t_next, y)?;
        interventions.push(InterventionRecord {
            time: t,
            bg: bg_now,
            insulin_before: rate,
            nutrition_rate: nutrition.rate_at(t),
            suggested_rate: d.new_rate,
            resulting_bg: y,
            resulting_region: regions.classify(y),
            rule_id: Some(d.rule_id),
            fit_fallback: false,
        });
        rate = d.new_rate;
        bg_prev = Some(bg_now);
        bg_now = y;
        t = t_next;
    }

    Ok(PatientRunRecord {
        patient_id: patient.id,
        arm: Arm::Protocol,
        interventions,
        etw_bg,
        fit_history: Vec::new(),
        floored,
    })
}

/// Build the insulin schedule the LQG arm has actually experienced up to
/// `until`: the generated TTW schedule followed by the delivered rates.
fn delivered_insulin(
    insulin_ttw: &RateSchedule,
    delivered: &[(f64, f64)],
    until: f64,
) -> Result<RateSchedule> {
    if delivered.is_empty() || until <= insulin_ttw.horizon() {
        return insulin_ttw.clip(insulin_ttw.start(), until.min(insulin_ttw.horizon()));
    }
    let starts: Vec<f64> = delivered.iter().map(|&(t, _)| t).collect();
    let rates: Vec<f64> = delivered.iter().map(|&(_, r)| r).collect();
    let etw = RateSchedule::from_segments(starts, rates, until)?;
    insulin_ttw.extend(&etw)
}

/// LQG arm: intervene at every protocol intervention time plus every
/// nutrition change inside the evaluation window. Each intervention refits
/// the model on the trailing 24 hours of this arm's own history, rebuilds
/// the gains, filters the new measurement, and holds the suggested rate
/// until the next intervention.
pub fn run_lqg_arm(
    patient: &VirtualPatient,
    ttw: &TtwData,
    nutrition: &RateSchedule,
    insulin_ttw: &RateSchedule,
    protocol_times: &[f64],
    spec: &ProtocolSpec,
    config: &TrialConfig,
) -> Result<PatientRunRecord> {
    let regions = GlycemicRegions::for_target(spec.target_range)?;
    let ttw_end = config.ttw_end();
    let etw_end = config.etw_end();
    let x_r = spec.target_range[1];
    let u_max = config.controller.u_max;
    let mut noise = seed::rng(config.root_seed, &[tag::ARM_NOISE, patient.id, 1]);

    let mut times: Vec<f64> = protocol_times
        .iter()
        .copied()
        .chain(nutrition.change_times_in(ttw_end, etw_end))
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();

    let mut trace = ttw.trace.clone();
    let mut state = ttw.end_state;
    let mut rate = insulin_ttw.rate_at(ttw_end);
    let mut bg_now = *trace.values().last().expect("TTW trace is never empty");
    let mut delivered: Vec<(f64, f64)> = Vec::new();

    let mut params: Option<MsgParams> = None;
    let mut ctrl: Option<ControllerState> = None;
    let mut prev_nutrition = nutrition.rate_at(ttw_end);

    let mut interventions = Vec::new();
    let mut etw_bg = GlucoseTrace::empty();
    let mut fit_history = Vec::new();
    let mut floored = false;

    for (k, &t_k) in times.iter().enumerate() {
        // refit on the trailing window of this arm's own history
        let window_start = (t_k - 24.0).max(0.0);
        let mut fallback = false;
        let insulin_hist = delivered_insulin(insulin_ttw, &delivered, t_k.max(ttw_end))?;
        let fit_attempt = TrainingWindow::new(
            trace.window(window_start, t_k),
            insulin_hist.clip(window_start, t_k.max(insulin_hist.start()))?,
            nutrition.clip(window_start, t_k)?,
            window_start,
            t_k,
        )
        .and_then(|w| {
            let cfg = config
                .fit
                .with_seed(seed::derive(config.root_seed, &[tag::FIT, patient.id, k as u64]));
            fit(&w, &cfg)
        });
        match fit_attempt {
            Ok(r) => {
                params = Some(r.params);
                fit_history.push(r);
            }
            Err(Error::FitDiverged { best }) if params.is_none() => {
                params = Some(best.params);
                fallback = true;
            }
            Err(_) => {
                // degrade gracefully: keep the previous parameters
                fallback = true;
            }
        }

        let u = match params {
            Some(p) => {
                let sys = LinearSystem::from_msg_params(&p);
                let nutr_now = nutrition.rate_at(t_k);
                let ctrl_state = match ctrl {
                    None => ControllerState {
                        x_hat: bg_now,
                        p_cov: p.r_meas,
                        last_update: t_k,
                    },
                    Some(prev) => {
                        let eq_held = msg::equilibrium(&p, rate, prev_nutrition);
                        lqg::filter_update(&prev, &sys, eq_held, bg_now, t_k - prev.last_update)?
                    }
                };
                ctrl = Some(ctrl_state);

                if p.beta_i < 1e-9 {
                    // no learned insulin authority: the control law's limit is
                    // all-or-nothing around the target
                    if ctrl_state.x_hat > x_r {
                        u_max
                    } else {
                        0.0
                    }
                } else {
                    let k_c = lqg::lqr_gain(&sys, config.controller.q_cost, config.controller.r_cost)?;
                    let k_f = lqg::kalman_gain(&sys);
                    let u_r = lqg::reference_shift(&p, x_r, nutr_now, u_max)?;
                    let gains = lqg::LqgGains { k_c, k_f, x_r, u_r };
                    lqg::suggest_rate(&ctrl_state, &gains, u_max)
                }
            }
            // no parameters ever fitted: deliver nothing rather than guess
            None => 0.0,
        };

        let t_next = times.get(k + 1).copied().unwrap_or(etw_end);
        let seg = RateSchedule::constant(t_k, t_next, u)?;
        let traj = simulate(patient, &state, t_next, &seg, nutrition)?;
        floored |= traj.floored;
        state = traj.final_state();
        let z: f64 = noise.sample(StandardNormal);
        let y = (state.g + config.measurement.noise_sd_mgdl * z).max(1.0);
        etw_bg.push(t_next, y)?;
        trace.push(t_next, y)?;
        interventions.push(InterventionRecord {
            time: t_k,
            bg: bg_now,
            insulin_before: rate,
            nutrition_rate: nutrition.rate_at(t_k),
            suggested_rate: u,
            resulting_bg: y,
            resulting_region: regions.classify(y),
            rule_id: None,
            fit_fallback: fallback,
        });

        delivered.push((t_k, u));
        prev_nutrition = nutrition.rate_at(0.5 * (t_k + t_next));
        rate = u;
        bg_now = y;
    }

    Ok(PatientRunRecord {
        patient_id: patient.id,
        arm: Arm::Lqg,
        interventions,
        etw_bg,
        fit_history,
        floored,
    })
}

/// Both arms for one patient. The LQG arm consumes the protocol arm's
/// intervention times and nothing else from it.
pub fn run_patient(
    patient: &VirtualPatient,
    ttw: &TtwData,
    nutrition: &RateSchedule,
    insulin_ttw: &RateSchedule,
    spec: &ProtocolSpec,
    config: &TrialConfig,
) -> Result<(PatientRunRecord, PatientRunRecord)> {
    let protocol = run_protocol_arm(patient, ttw, nutrition, insulin_ttw, spec, config)?;
    let times = protocol.intervention_times();
    let lqg = run_lqg_arm(
        patient,
        ttw,
        nutrition,
        insulin_ttw,
        &times,
        spec,
        config,
    )?;
    Ok((protocol, lqg))
}

/// Output of one full protocol pairing over the cohort.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRun {
    pub protocol_name: String,
    pub records: Vec<(PatientRunRecord, PatientRunRecord)>,
}

impl TrialRun {
    /// Paired per-patient evaluation values, ordered by patient id.
    pub fn paired_evals(&self) -> Vec<PatientEvals> {
        self.records
            .iter()
            .map(|(prot, lqg)| PatientEvals {
                patient_id: prot.patient_id,
                lqg: Some(lqg.etw_bg.values().to_vec()),
                protocol: Some(prot.etw_bg.values().to_vec()),
            })
            .collect()
    }
}

/// Run protocol and LQG arms for every patient against one protocol.
/// Patients run in parallel; output order and content are independent of
/// the thread count.
pub fn run_trial(cohort: &Cohort, spec: &ProtocolSpec, config: &TrialConfig) -> Result<TrialRun> {
    let records: Vec<(PatientRunRecord, PatientRunRecord)> = cohort
        .patients
        .par_iter()
        .map(|p| {
            let g = cohort.assignment[p.id as usize];
            run_patient(
                p,
                &cohort.ttw[p.id as usize],
                &cohort.nutrition[g],
                &cohort.insulin_ttw[g],
                spec,
                config,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialRun {
        protocol_name: spec.name.clone(),
        records,
    })
}
