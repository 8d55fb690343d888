//! Mean-reverting stochastic glucose model.
//!
//! The model is an Ornstein-Uhlenbeck process with piecewise-constant
//! forcing from nutrition and IV insulin:
//!
//! ```text
//! dG = gamma * (g_eq(t) - G) dt + sigma dW
//! g_eq(t) = g_b + beta_n * N(t) - beta_i * I(t)
//! ```
//!
//! Because the forcing is constant between schedule breakpoints, the
//! transition law over any interval is Gaussian and available in closed
//! form, so discrete observations are jointly multivariate normal.
//! Measured values carry additional independent noise of variance
//! `r_meas` on the diagonal.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{GlucoseTrace, RateSchedule};

/// Model parameters. Units: hours, mg/dL, U/hr, carb-units/hr.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsgParams {
    /// Mean-reversion rate (1/hr), > 0.
    pub gamma: f64,
    /// Basal glucose level (mg/dL), > 0.
    pub g_b: f64,
    /// Nutrition gain (mg/dL per carb-unit/hr), >= 0.
    pub beta_n: f64,
    /// Insulin gain (mg/dL per U/hr), >= 0.
    pub beta_i: f64,
    /// Diffusion amplitude (mg/dL per sqrt(hr)), >= 0.
    pub sigma: f64,
    /// Measurement-noise variance (mg^2/dL^2), >= 0.
    pub r_meas: f64,
}

impl MsgParams {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &'static str, v: f64, min_excl: bool| -> Result<()> {
            if !v.is_finite() {
                return Err(Error::InvalidParam {
                    name,
                    value: v,
                    reason: "not finite",
                });
            }
            if (min_excl && v <= 0.0) || (!min_excl && v < 0.0) {
                return Err(Error::InvalidParam {
                    name,
                    value: v,
                    reason: if min_excl {
                        "must be > 0"
                    } else {
                        "must be >= 0"
                    },
                });
            }
            Ok(())
        };
        check("gamma", self.gamma, true)?;
        check("g_b", self.g_b, true)?;
        check("beta_n", self.beta_n, false)?;
        check("beta_i", self.beta_i, false)?;
        check("sigma", self.sigma, false)?;
        check("r_meas", self.r_meas, false)?;
        Ok(())
    }

    /// Parameters as a fixed-order vector (the optimizer's coordinate order).
    pub fn to_array(self) -> [f64; 6] {
        [
            self.gamma, self.g_b, self.beta_n, self.beta_i, self.sigma, self.r_meas,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            gamma: a[0],
            g_b: a[1],
            beta_n: a[2],
            beta_i: a[3],
            sigma: a[4],
            r_meas: a[5],
        }
    }

    pub const FIELD_NAMES: [&'static str; 6] =
        ["gamma", "g_b", "beta_n", "beta_i", "sigma", "r_meas"];
}

/// Admissible parameter box for identification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBox {
    pub gamma: [f64; 2],
    pub g_b: [f64; 2],
    pub beta_n: [f64; 2],
    pub beta_i: [f64; 2],
    pub sigma: [f64; 2],
    pub r_meas: [f64; 2],
}

impl Default for ParamBox {
    fn default() -> Self {
        Self {
            gamma: [0.01, 3.0],
            g_b: [40.0, 400.0],
            beta_n: [0.0, 50.0],
            beta_i: [0.0, 50.0],
            sigma: [0.0, 60.0],
            r_meas: [0.0, 400.0],
        }
    }
}

impl ParamBox {
    pub fn bounds(&self) -> [[f64; 2]; 6] {
        [
            self.gamma, self.g_b, self.beta_n, self.beta_i, self.sigma, self.r_meas,
        ]
    }

    pub fn contains(&self, p: &MsgParams) -> bool {
        let a = p.to_array();
        self.bounds()
            .iter()
            .zip(a.iter())
            .all(|([lo, hi], v)| lo <= v && v <= hi)
    }

    pub fn validate(&self) -> Result<()> {
        for ([lo, hi], name) in self.bounds().iter().zip(MsgParams::FIELD_NAMES) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "parameter box for {name} is invalid: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Joint Gaussian over glucose values at a list of measurement times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    /// Row-major dense covariance, `times.len()` square.
    pub cov: Vec<Vec<f64>>,
}

/// Drift fixed point under constant forcing.
///
/// This is the one place the model's forcing algebra lives; swapping in an
/// alternative gain scaling is a change to this function alone.
pub fn equilibrium(params: &MsgParams, insulin_rate: f64, nutrition_rate: f64) -> f64 {
    params.g_b + params.beta_n * nutrition_rate - params.beta_i * insulin_rate
}

/// Exact transition law over `dt` hours of constant forcing: the
/// conditional distribution of `G(dt)` given `G(0) = g0` is
/// `N(mean, var)` with
///
/// ```text
/// mean = eq + (g0 - eq) * exp(-gamma dt)
/// var  = sigma^2 (1 - exp(-2 gamma dt)) / (2 gamma)
/// ```
pub fn transition(
    params: &MsgParams,
    g0: f64,
    dt: f64,
    insulin_rate: f64,
    nutrition_rate: f64,
) -> Result<(f64, f64)> {
    params.validate()?;
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::NegativeDt(dt));
    }
    let eq = equilibrium(params, insulin_rate, nutrition_rate);
    let decay = (-params.gamma * dt).exp();
    let mean = eq + (g0 - eq) * decay;
    let var = params.sigma * params.sigma * (1.0 - decay * decay) / (2.0 * params.gamma);
    Ok((mean, var))
}

/// Propagate the deterministic mean from `(t0, g0)` to `t1`, splitting at
/// every schedule breakpoint so each step sees constant forcing.
fn propagate_mean(
    params: &MsgParams,
    mut g: f64,
    t0: f64,
    t1: f64,
    insulin: &RateSchedule,
    nutrition: &RateSchedule,
) -> f64 {
    let mut cuts: Vec<f64> = insulin
        .change_times_in(t0, t1)
        .into_iter()
        .chain(nutrition.change_times_in(t0, t1))
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    cuts.push(t1);

    let mut t = t0;
    for cut in cuts {
        let eq = equilibrium(params, insulin.rate_at(t), nutrition.rate_at(t));
        g = eq + (g - eq) * (-params.gamma * (cut - t)).exp();
        t = cut;
    }
    g
}

fn check_sorted(times: &[f64]) -> Result<()> {
    for (i, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::UnsortedTimes { index: i + 1 });
        }
    }
    Ok(())
}

/// Joint Gaussian over `times`, starting from the known value `g0` at `t0`.
///
/// The latent covariance of the process between two measurement times
/// `s <= t` is `Var(G_s) * exp(-gamma (t - s))`; measurement noise adds
/// `r_meas` on the diagonal only.
pub fn predict_joint(
    params: &MsgParams,
    g0: f64,
    t0: f64,
    times: &[f64],
    insulin: &RateSchedule,
    nutrition: &RateSchedule,
) -> Result<GaussianPrediction> {
    params.validate()?;
    check_sorted(times)?;
    if times.is_empty() {
        return Ok(GaussianPrediction {
            times: vec![],
            mean: vec![],
            cov: vec![],
        });
    }
    if times[0] < t0 {
        return Err(Error::NegativeDt(times[0] - t0));
    }
    let t_end = *times.last().unwrap();
    insulin.require_cover(t0, t_end)?;
    nutrition.require_cover(t0, t_end)?;

    let n = times.len();
    let mut mean = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n); // latent variance at each time
    let mut g = g0;
    let mut v = 0.0_f64;
    let mut prev_t = t0;
    for &t in times {
        g = propagate_mean(params, g, prev_t, t, insulin, nutrition);
        let decay2 = (-2.0 * params.gamma * (t - prev_t)).exp();
        v = v * decay2
            + params.sigma * params.sigma * (1.0 - decay2) / (2.0 * params.gamma);
        mean.push(g);
        var.push(v);
        prev_t = t;
    }

    let mut cov = vec![vec![0.0; n]; n];
    for i in 0..n {
        cov[i][i] = var[i] + params.r_meas;
        for j in (i + 1)..n {
            let c = var[i] * (-params.gamma * (times[j] - times[i])).exp();
            cov[i][j] = c;
            cov[j][i] = c;
        }
    }

    Ok(GaussianPrediction {
        times: times.to_vec(),
        mean,
        cov,
    })
}

/// Sample one measured trace by exact sequential transition sampling.
///
/// The latent path is sampled from the Gaussian transition law at each
/// breakpoint and measurement time; measurement noise (sd `sqrt(r_meas)`)
/// is added to the recorded values only, never fed back into the state.
pub fn simulate_path<R: Rng>(
    params: &MsgParams,
    g0: f64,
    t0: f64,
    times: &[f64],
    insulin: &RateSchedule,
    nutrition: &RateSchedule,
    rng: &mut R,
) -> Result<GlucoseTrace> {
    params.validate()?;
    check_sorted(times)?;
    if times.is_empty() {
        return Ok(GlucoseTrace::empty());
    }
    if times[0] < t0 {
        return Err(Error::NegativeDt(times[0] - t0));
    }
    let t_end = *times.last().unwrap();
    insulin.require_cover(t0, t_end)?;
    nutrition.require_cover(t0, t_end)?;

    let meas_sd = params.r_meas.sqrt();
    let mut out_times = Vec::with_capacity(times.len());
    let mut out_values = Vec::with_capacity(times.len());

    let mut g = g0;
    let mut prev_t = t0;
    for &t in times {
        // step across forcing breakpoints so each sub-step has constant rates
        let mut cuts: Vec<f64> = insulin
            .change_times_in(prev_t, t)
            .into_iter()
            .chain(nutrition.change_times_in(prev_t, t))
            .collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        cuts.push(t);
        let mut s = prev_t;
        for cut in cuts {
            let (m, v) =
                transition(params, g, cut - s, insulin.rate_at(s), nutrition.rate_at(s))?;
            let z: f64 = rng.sample(StandardNormal);
            g = m + v.sqrt() * z;
            s = cut;
        }
        let eta: f64 = rng.sample(StandardNormal);
        out_times.push(t);
        out_values.push(g + meas_sd * eta);
        prev_t = t;
    }

    GlucoseTrace::new(out_times, out_values)
}
