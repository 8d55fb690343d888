//! Nonlinear virtual-patient simulator.
//!
//! A minimal-model style glucose/insulin ODE stands in for real patient
//! physiology. It is used only to generate and replay virtual-patient
//! responses; nothing in the controller stack depends on it, and it shares
//! no parameters with the identified glucose model.
//!
//! States: plasma glucose `g` (mg/dL), remote insulin action `x` (1/hr),
//! plasma insulin `i1` (uU/mL), and an endogenous secretion compartment
//! `i2`:
//!
//! ```text
//! dg/dt  = -(p1 + x) g + p1 g_b + ra_nutrition / v_g
//! dx/dt  = -p2 x + p3 (i1 - i_b)
//! di1/dt = -n_clear (i1 - i_b) + max(0, i2) / v_i + u_iv / v_i
//! di2/dt = gamma_sec max(0, g - h_thresh) - n_clear i2
//! ```
//!
//! IV insulin `u_iv` enters in uU/hr (1 U = 1e6 uU); nutrition appears as
//! glucose at 1000 mg per carb-unit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::RateSchedule;

/// Glucose appearance per carb-unit of nutrition (mg).
pub const RA_PER_CARB_UNIT: f64 = 1000.0;

/// Micro-units per insulin unit.
pub const UU_PER_UNIT: f64 = 1e6;

/// Fixed RK4 step (hr).
pub const RK4_STEP: f64 = 0.01;

/// Glucose floor (mg/dL); the integrator clamps here rather than going
/// nonphysical, and the trajectory records that it happened.
pub const BG_FLOOR: f64 = 1.0;

/// One virtual patient's ODE parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualPatient {
    pub id: u64,
    /// Glucose effectiveness (1/hr).
    pub p1: f64,
    /// Remote-insulin decay (1/hr).
    pub p2: f64,
    /// Insulin action gain (1/hr per uU/mL).
    pub p3: f64,
    /// Insulin clearance (1/hr).
    pub n_clear: f64,
    /// Endogenous secretion gain (uU per mg/dL per hr).
    pub gamma_sec: f64,
    /// Secretion threshold (mg/dL).
    pub h_thresh: f64,
    /// Glucose distribution volume (dL).
    pub v_g: f64,
    /// Insulin distribution volume (mL).
    pub v_i: f64,
    /// Basal glucose (mg/dL).
    pub g_b: f64,
    /// Basal insulin (uU/mL).
    pub i_b: f64,
}

/// Simulation state at a time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub g: f64,
    pub x_remote: f64,
    pub i1: f64,
    pub i2: f64,
    pub t: f64,
}

impl SimState {
    /// Resting state: basal glucose and insulin, no remote action, no
    /// secretion-compartment content.
    pub fn basal(patient: &VirtualPatient, t: f64) -> Self {
        Self {
            g: patient.g_b,
            x_remote: 0.0,
            i1: patient.i_b,
            i2: 0.0,
            t,
        }
    }
}

/// Uniform sampling box per parameter. Degenerate (`lo == hi`) entries pin
/// the parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientBox {
    pub p1: [f64; 2],
    pub p2: [f64; 2],
    pub p3: [f64; 2],
    pub n_clear: [f64; 2],
    pub gamma_sec: [f64; 2],
    pub h_thresh: [f64; 2],
    pub v_g: [f64; 2],
    pub v_i: [f64; 2],
    pub g_b: [f64; 2],
    pub i_b: [f64; 2],
}

impl Default for PatientBox {
    fn default() -> Self {
        Self {
            p1: [0.5, 1.2],
            p2: [1.2, 2.5],
            p3: [5.0e-4, 1.5e-3],
            n_clear: [5.0, 10.0],
            gamma_sec: [0.0, 1.5e5],
            h_thresh: [130.0, 180.0],
            v_g: [100.0, 180.0],
            v_i: [9000.0, 15000.0],
            g_b: [85.0, 115.0],
            i_b: [5.0, 15.0],
        }
    }
}

impl PatientBox {
    fn ranges(&self) -> [[f64; 2]; 10] {
        [
            self.p1,
            self.p2,
            self.p3,
            self.n_clear,
            self.gamma_sec,
            self.h_thresh,
            self.v_g,
            self.v_i,
            self.g_b,
            self.i_b,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        const NAMES: [&str; 10] = [
            "p1", "p2", "p3", "n_clear", "gamma_sec", "h_thresh", "v_g", "v_i", "g_b", "i_b",
        ];
        for ([lo, hi], name) in self.ranges().iter().zip(NAMES) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && *lo >= 0.0) {
                return Err(Error::Config(format!(
                    "patient box for {name} is invalid: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Draw one patient uniformly from the box. Deterministic for a given RNG
/// state; each parameter is drawn independently in declaration order.
pub fn sample_patient(id: u64, bounds: &PatientBox, rng: &mut ChaCha8Rng) -> VirtualPatient {
    let mut draw = |[lo, hi]: [f64; 2]| -> f64 {
        if hi > lo {
            rng.gen_range(lo..hi)
        } else {
            lo
        }
    };
    VirtualPatient {
        id,
        p1: draw(bounds.p1),
        p2: draw(bounds.p2),
        p3: draw(bounds.p3),
        n_clear: draw(bounds.n_clear),
        gamma_sec: draw(bounds.gamma_sec),
        h_thresh: draw(bounds.h_thresh),
        v_g: draw(bounds.v_g),
        v_i: draw(bounds.v_i),
        g_b: draw(bounds.g_b),
        i_b: draw(bounds.i_b),
    }
}

fn deriv(p: &VirtualPatient, s: [f64; 4], u_iv_uu: f64, ra: f64) -> [f64; 4] {
    let [g, x, i1, i2] = s;
    [
        -(p.p1 + x) * g + p.p1 * p.g_b + ra / p.v_g,
        -p.p2 * x + p.p3 * (i1 - p.i_b),
        -p.n_clear * (i1 - p.i_b) + i2.max(0.0) / p.v_i + u_iv_uu / p.v_i,
        p.gamma_sec * (g - p.h_thresh).max(0.0) - p.n_clear * i2,
    ]
}

/// Dense simulation output on the fixed integration grid, queryable at
/// arbitrary interior times by cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<[f64; 4]>,
    dg: Vec<f64>,
    /// Whether the glucose floor ever engaged.
    pub floored: bool,
}

impl Trajectory {
    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// BG at `t` by cubic Hermite interpolation on the integration grid.
    pub fn bg_at(&self, t: f64) -> f64 {
        let t = t.clamp(self.start_time(), self.end_time());
        let idx = match self.times.partition_point(|&s| s <= t) {
            0 => 0,
            i if i >= self.times.len() => self.times.len() - 2,
            i => i - 1,
        };
        let (t0, t1) = (self.times[idx], self.times[idx + 1]);
        let h = t1 - t0;
        if h <= 0.0 {
            return self.states[idx][0];
        }
        let s = (t - t0) / h;
        let (g0, g1) = (self.states[idx][0], self.states[idx + 1][0]);
        let (m0, m1) = (self.dg[idx] * h, self.dg[idx + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * g0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * g1
            + (s3 - s2) * m1
    }

    /// Full state at the end of the simulated interval.
    pub fn final_state(&self) -> SimState {
        let s = *self.states.last().unwrap();
        SimState {
            g: s[0],
            x_remote: s[1],
            i1: s[2],
            i2: s[3],
            t: self.end_time(),
        }
    }
}

/// Integrate from `state0.t` to `until` with RK4 at the fixed step,
/// cutting steps at every insulin/nutrition breakpoint so the forcing is
/// constant within each step.
pub fn simulate(
    patient: &VirtualPatient,
    state0: &SimState,
    until: f64,
    insulin: &RateSchedule,
    nutrition: &RateSchedule,
) -> Result<Trajectory> {
    simulate_with_step(patient, state0, until, insulin, nutrition, RK4_STEP)
}

pub fn simulate_with_step(
    patient: &VirtualPatient,
    state0: &SimState,
    until: f64,
    insulin: &RateSchedule,
    nutrition: &RateSchedule,
    step: f64,
) -> Result<Trajectory> {
    let t0 = state0.t;
    if until < t0 {
        return Err(Error::NegativeDt(until - t0));
    }
    insulin.require_cover(t0, until)?;
    nutrition.require_cover(t0, until)?;

    let mut cuts: Vec<f64> = insulin
        .change_times_in(t0, until)
        .into_iter()
        .chain(nutrition.change_times_in(t0, until))
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    cuts.push(until);

    let mut state = [state0.g, state0.x_remote, state0.i1, state0.i2];
    let mut floored = false;

    let cap = ((until - t0) / step) as usize + cuts.len() + 2;
    let mut times = Vec::with_capacity(cap);
    let mut states = Vec::with_capacity(cap);
    let mut dg = Vec::with_capacity(cap);

    let mut t = t0;
    {
        let u = insulin.rate_at(t) * UU_PER_UNIT;
        let ra = nutrition.rate_at(t) * RA_PER_CARB_UNIT;
        times.push(t);
        states.push(state);
        dg.push(deriv(patient, state, u, ra)[0]);
    }

    for &cut in &cuts {
        while t < cut - 1e-12 {
            let remaining = cut - t;
            let h = step.min(remaining);
            let u = insulin.rate_at(t) * UU_PER_UNIT;
            let ra = nutrition.rate_at(t) * RA_PER_CARB_UNIT;

            let k1 = deriv(patient, state, u, ra);
            let s2 = add_scaled(state, k1, 0.5 * h);
            let k2 = deriv(patient, s2, u, ra);
            let s3 = add_scaled(state, k2, 0.5 * h);
            let k3 = deriv(patient, s3, u, ra);
            let s4 = add_scaled(state, k3, h);
            let k4 = deriv(patient, s4, u, ra);
            for i in 0..4 {
                state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            // land exactly on the cut; accumulated steps drift otherwise
            t = if remaining - h <= 1e-12 { cut } else { t + h };

            if state[0] < BG_FLOOR {
                state[0] = BG_FLOOR;
                floored = true;
            }
            if state.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationBlowup {
                    patient: patient.id,
                    time: t,
                });
            }

            let u_next = insulin.rate_at(t) * UU_PER_UNIT;
            let ra_next = nutrition.rate_at(t) * RA_PER_CARB_UNIT;
            times.push(t);
            states.push(state);
            dg.push(deriv(patient, state, u_next, ra_next)[0]);
        }
        t = cut;
    }

    Ok(Trajectory {
        times,
        states,
        dg,
        floored,
    })
}

fn add_scaled(s: [f64; 4], k: [f64; 4], h: f64) -> [f64; 4] {
    [
        s[0] + h * k[0],
        s[1] + h * k[1],
        s[2] + h * k[2],
        s[3] + h * k[3],
    ]
}

/// Inter-measurement gap distribution: lognormal by median and shape,
/// clipped to a plausible range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntervalDistribution {
    pub median_hr: f64,
    pub sigma: f64,
    pub clip_hr: [f64; 2],
}

impl Default for IntervalDistribution {
    fn default() -> Self {
        Self {
            median_hr: 1.5,
            sigma: 0.5,
            clip_hr: [0.25, 6.0],
        }
    }
}

impl IntervalDistribution {
    pub fn sample_gap(&self, rng: &mut ChaCha8Rng) -> f64 {
        use rand_distr::{Distribution, LogNormal};
        let d = LogNormal::new(self.median_hr.ln(), self.sigma).expect("valid lognormal");
        d.sample(rng).clamp(self.clip_hr[0], self.clip_hr[1])
    }
}

/// Cumulative gap draws over `[t0, t1]`; always includes `t0`, stops when
/// the next draw would leave the window.
pub fn sample_measurement_times(
    t0: f64,
    t1: f64,
    dist: &IntervalDistribution,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    assert!(t1 > t0, "empty measurement window");
    let mut times = vec![t0];
    let mut t = t0;
    loop {
        t += dist.sample_gap(rng);
        if t > t1 {
            break;
        }
        times.push(t);
    }
    times
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn test_patient() -> VirtualPatient {
        VirtualPatient {
            id: 1,
            p1: 0.8,
            p2: 1.8,
            p3: 1.0e-3,
            n_clear: 7.0,
            gamma_sec: 5.0e4,
            h_thresh: 150.0,
            v_g: 140.0,
            v_i: 12000.0,
            g_b: 100.0,
            i_b: 10.0,
        }
    }

    fn flat(rate: f64) -> RateSchedule {
        RateSchedule::constant(0.0, 100.0, rate).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let bounds = PatientBox::default();
        let a = sample_patient(3, &bounds, &mut seed::rng(9, &[3]));
        let b = sample_patient(3, &bounds, &mut seed::rng(9, &[3]));
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_respects_box_and_is_uniformish() {
        let bounds = PatientBox::default();
        let n = 10_000;
        let mut rng = seed::rng(4, &[0]);
        let mut p1s = Vec::with_capacity(n);
        for i in 0..n {
            let p = sample_patient(i as u64, &bounds, &mut rng);
            assert!(p.p1 >= bounds.p1[0] && p.p1 <= bounds.p1[1]);
            assert!(p.gamma_sec >= bounds.gamma_sec[0] && p.gamma_sec <= bounds.gamma_sec[1]);
            assert!(p.v_i >= bounds.v_i[0] && p.v_i <= bounds.v_i[1]);
            p1s.push((p.p1 - bounds.p1[0]) / (bounds.p1[1] - bounds.p1[0]));
        }
        // one-sample KS statistic against U(0,1)
        p1s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0f64;
        for (i, &u) in p1s.iter().enumerate() {
            let fe = (i + 1) as f64 / n as f64;
            let fe_prev = i as f64 / n as f64;
            d = d.max((fe - u).abs()).max((u - fe_prev).abs());
        }
        // critical value at alpha = 0.01 is ~1.63 / sqrt(n)
        assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn degenerate_box_pins_parameter() {
        let mut bounds = PatientBox::default();
        bounds.p1 = [0.9, 0.9];
        let p = sample_patient(0, &bounds, &mut seed::rng(1, &[2]));
        assert_eq!(p.p1, 0.9);
    }

    #[test]
    fn basal_state_is_equilibrium() {
        let p = test_patient();
        let s0 = SimState::basal(&p, 0.0);
        let traj = simulate(&p, &s0, 30.0, &flat(0.0), &flat(0.0)).unwrap();
        for k in 0..=300 {
            let t = k as f64 * 0.1;
            assert!(
                (traj.bg_at(t) - p.g_b).abs() < 1e-6,
                "t = {t}: {}",
                traj.bg_at(t)
            );
        }
        let end = traj.final_state();
        assert!((end.i1 - p.i_b).abs() < 1e-6);
        assert!(end.x_remote.abs() < 1e-9);
    }

    #[test]
    fn insulin_step_lowers_bg() {
        let p = test_patient();
        let s0 = SimState::basal(&p, 0.0);
        let nutrition = flat(4.0);
        let with = simulate(&p, &s0, 6.0, &flat(2.0), &nutrition).unwrap();
        let without = simulate(&p, &s0, 6.0, &flat(0.0), &nutrition).unwrap();
        assert!(with.bg_at(6.0) < without.bg_at(6.0));
    }

    #[test]
    fn monotone_in_forcing_on_random_patients() {
        let bounds = PatientBox::default();
        let mut rng = seed::rng(77, &[1]);
        for i in 0..10 {
            let p = sample_patient(i, &bounds, &mut rng);
            let s0 = SimState::basal(&p, 0.0);
            let lo_n = simulate(&p, &s0, 12.0, &flat(1.0), &flat(2.0)).unwrap();
            let hi_n = simulate(&p, &s0, 12.0, &flat(1.0), &flat(5.0)).unwrap();
            let lo_i = simulate(&p, &s0, 12.0, &flat(0.5), &flat(3.0)).unwrap();
            let hi_i = simulate(&p, &s0, 12.0, &flat(4.0), &flat(3.0)).unwrap();
            for k in 1..=24 {
                let t = k as f64 * 0.5;
                assert!(
                    hi_n.bg_at(t) >= lo_n.bg_at(t) - 1e-6,
                    "nutrition monotonicity at t={t} patient {i}"
                );
                assert!(
                    hi_i.bg_at(t) <= lo_i.bg_at(t) + 1e-6,
                    "insulin monotonicity at t={t} patient {i}"
                );
            }
        }
    }

    #[test]
    fn converges_to_basal_from_anywhere_without_secretion() {
        let mut p = test_patient();
        p.gamma_sec = 0.0;
        for g0 in [40.0, 150.0, 400.0, 600.0] {
            let s0 = SimState {
                g: g0,
                ..SimState::basal(&p, 0.0)
            };
            let traj = simulate(&p, &s0, 40.0, &flat(0.0), &flat(0.0)).unwrap();
            assert!(
                (traj.bg_at(40.0) - p.g_b).abs() < 1e-3,
                "from {g0}: {}",
                traj.bg_at(40.0)
            );
        }
    }

    #[test]
    fn step_halving_convergence() {
        let p = test_patient();
        let s0 = SimState {
            g: 250.0,
            ..SimState::basal(&p, 0.0)
        };
        let insulin =
            RateSchedule::from_segments(vec![0.0, 3.0, 7.0], vec![0.0, 3.0, 1.0], 100.0).unwrap();
        let nutrition =
            RateSchedule::from_segments(vec![0.0, 5.0], vec![2.0, 6.0], 100.0).unwrap();
        let coarse = simulate_with_step(&p, &s0, 12.0, &insulin, &nutrition, 0.01).unwrap();
        let fine = simulate_with_step(&p, &s0, 12.0, &insulin, &nutrition, 0.005).unwrap();
        for k in 1..=48 {
            let t = k as f64 * 0.25;
            let (a, b) = (coarse.bg_at(t), fine.bg_at(t));
            assert!(
                ((a - b) / b).abs() < 1e-6,
                "t = {t}: coarse {a} vs fine {b}"
            );
        }
    }

    #[test]
    fn blowup_is_reported_with_patient_and_time() {
        let mut p = test_patient();
        p.p3 = -1.0e3; // nonphysical sign flips the feedback loop unstable
        p.gamma_sec = 1.0e9;
        let s0 = SimState {
            g: 500.0,
            ..SimState::basal(&p, 0.0)
        };
        match simulate(&p, &s0, 50.0, &flat(10.0), &flat(8.0)) {
            Err(Error::IntegrationBlowup { patient, time }) => {
                assert_eq!(patient, 1);
                assert!(time > 0.0);
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn schedule_gap_is_an_error() {
        let p = test_patient();
        let s0 = SimState::basal(&p, 0.0);
        let short = RateSchedule::constant(0.0, 5.0, 1.0).unwrap();
        assert!(matches!(
            simulate(&p, &s0, 10.0, &short, &flat(2.0)),
            Err(Error::ScheduleGap { .. })
        ));
    }

    #[test]
    fn measurement_times_behave() {
        let dist = IntervalDistribution::default();
        // window shorter than the minimum gap: only the opening measurement
        let times = sample_measurement_times(3.0, 3.2, &dist, &mut seed::rng(5, &[1]));
        assert_eq!(times, vec![3.0]);

        let a = sample_measurement_times(0.0, 24.0, &dist, &mut seed::rng(5, &[2]));
        let b = sample_measurement_times(0.0, 24.0, &dist, &mut seed::rng(5, &[2]));
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[1] > w[0]));
        assert!(*a.last().unwrap() <= 24.0);
    }

    #[test]
    fn measurement_count_matches_renewal_rate() {
        let dist = IntervalDistribution::default();
        // estimate the clipped-gap mean by simulation
        let mut rng = seed::rng(8, &[1]);
        let mut gap_sum = 0.0;
        let gap_n = 200_000;
        for _ in 0..gap_n {
            gap_sum += dist.sample_gap(&mut rng);
        }
        let mean_gap = gap_sum / gap_n as f64;

        let windows = 10_000;
        let mut count_sum = 0usize;
        for w in 0..windows {
            let times = sample_measurement_times(0.0, 24.0, &dist, &mut seed::rng(8, &[2, w]));
            count_sum += times.len();
        }
        let mean_count = count_sum as f64 / windows as f64;
        let expected = 24.0 / mean_gap;
        assert!(
            (mean_count - expected).abs() / expected < 0.10,
            "mean count {mean_count} vs renewal estimate {expected}"
        );
    }
}
