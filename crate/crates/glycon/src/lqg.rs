//! Scalar LQG controller.
//!
//! The identified glucose model maps onto the linear system
//! `dx = a x + b u + xi`, `y = c x + eta` with `a = -gamma`,
//! `b = -beta_i` (insulin lowers BG), `c = 1`, `q_noise = sigma^2`,
//! `r_noise = r_meas`. Regulator and observer gains come from the two
//! scalar continuous algebraic Riccati equations; by the separation
//! principle each is computed ignoring the other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msg::MsgParams;

/// Scalar linear input/output system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    /// Drift coefficient (1/hr).
    pub a: f64,
    /// Input coefficient (mg/dL per U).
    pub b: f64,
    /// Observation coefficient.
    pub c: f64,
    /// Process-noise intensity.
    pub q_noise: f64,
    /// Measurement-noise variance.
    pub r_noise: f64,
}

impl LinearSystem {
    pub fn from_msg_params(p: &MsgParams) -> Self {
        Self {
            a: -p.gamma,
            b: -p.beta_i,
            c: 1.0,
            q_noise: p.sigma * p.sigma,
            r_noise: p.r_meas,
        }
    }
}

/// Controller and observer gains plus the reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqgGains {
    pub k_c: f64,
    pub k_f: f64,
    /// Reference BG (mg/dL).
    pub x_r: f64,
    /// Steady-state input shift (U/hr).
    pub u_r: f64,
}

/// Filter state: current BG estimate and its variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub x_hat: f64,
    pub p_cov: f64,
    pub last_update: f64,
}

/// Cost weights for the regulator; defaults favor strong tracking with a
/// mild input penalty.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub q_cost: f64,
    pub r_cost: f64,
    pub u_max: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            q_cost: 1.0,
            r_cost: 0.05,
            u_max: 25.0,
        }
    }
}

/// Positive root of the scalar CARE `2 a p - b^2 p^2 / r + q = 0`.
fn care_positive_root(a: f64, b: f64, q: f64, r: f64) -> f64 {
    // p = r (a + sqrt(a^2 + b^2 q / r)) / b^2, the nonnegative branch
    let disc = (a * a + b * b * q / r).sqrt();
    (r * (a + disc) / (b * b)).max(0.0)
}

/// Optimal state-feedback gain: `u = -k_c (x - x_r) + u_r` minimizing
/// `integral(q_cost x^2 + r_cost u^2)`.
pub fn lqr_gain(sys: &LinearSystem, q_cost: f64, r_cost: f64) -> Result<f64> {
    if sys.b == 0.0 {
        return Err(Error::Uncontrollable);
    }
    assert!(r_cost > 0.0, "r_cost must be positive");
    assert!(q_cost >= 0.0, "q_cost must be nonnegative");
    let p = care_positive_root(sys.a, sys.b, q_cost, r_cost);
    Ok(sys.b * p / r_cost)
}

/// Stationary Kalman gain from the filter Riccati equation.
///
/// `r_noise = 0` is the perfect-measurement limit: the discrete update gain
/// `p c / (c^2 p + r)` goes to `1/c`, so that value is returned directly.
pub fn kalman_gain(sys: &LinearSystem) -> f64 {
    if sys.r_noise == 0.0 {
        return 1.0 / sys.c;
    }
    let s = care_positive_root(sys.a, sys.c, sys.q_noise, sys.r_noise);
    s * sys.c / sys.r_noise
}

/// Unclamped steady-state feedforward: the insulin rate whose equilibrium
/// sits exactly at `x_r` under the current nutrition rate.
pub fn reference_shift_raw(params: &MsgParams, x_r: f64, nutrition_rate: f64) -> Result<f64> {
    if params.beta_i <= 0.0 {
        return Err(Error::NoAuthority);
    }
    Ok((params.g_b + params.beta_n * nutrition_rate - x_r) / params.beta_i)
}

/// Feedforward insulin rate, clamped to `[0, u_max]`.
pub fn reference_shift(
    params: &MsgParams,
    x_r: f64,
    nutrition_rate: f64,
    u_max: f64,
) -> Result<f64> {
    Ok(reference_shift_raw(params, x_r, nutrition_rate)?.clamp(0.0, u_max))
}

/// Control law: `clamp(-k_c (x_hat - x_r) + u_r, 0, u_max)`. The clamp
/// applies to the summed feedback plus feedforward, not per term.
pub fn suggest_rate(state: &ControllerState, gains: &LqgGains, u_max: f64) -> f64 {
    (-gains.k_c * (state.x_hat - gains.x_r) + gains.u_r).clamp(0.0, u_max)
}

/// One filter step: exact OU predict over `dt` toward the equilibrium `eq`
/// implied by the held rates, then a measurement update with `y`.
pub fn filter_update(
    state: &ControllerState,
    sys: &LinearSystem,
    eq: f64,
    y: f64,
    dt: f64,
) -> Result<ControllerState> {
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::NegativeDt(dt));
    }
    let (x_pred, p_pred) = predict_state(state, sys, eq, dt);
    let denom = sys.c * sys.c * p_pred + sys.r_noise;
    let gain = if denom > 0.0 {
        p_pred * sys.c / denom
    } else {
        // both prediction variance and measurement noise are zero
        1.0 / sys.c
    };
    let x_hat = x_pred + gain * (y - sys.c * x_pred);
    let p_cov = (1.0 - gain * sys.c) * p_pred;
    Ok(ControllerState {
        x_hat,
        p_cov,
        last_update: state.last_update + dt,
    })
}

/// Predict-only step (no measurement), used when an intervention falls on
/// a time with no BG observation.
pub fn predict_state(state: &ControllerState, sys: &LinearSystem, eq: f64, dt: f64) -> (f64, f64) {
    let decay = (sys.a * dt).exp();
    let x_pred = eq + (state.x_hat - eq) * decay;
    let p_pred = if sys.a == 0.0 {
        state.p_cov + sys.q_noise * dt
    } else {
        state.p_cov * decay * decay + sys.q_noise * (1.0 - decay * decay) / (-2.0 * sys.a)
    };
    (x_pred, p_pred)
}
