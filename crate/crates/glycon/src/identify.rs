//! Personalized parameter estimation.
//!
//! Fits [`MsgParams`] to a training window of BG measurements plus the
//! insulin/nutrition schedules in force, by minimizing the Gaussian
//! negative log-likelihood of the joint prediction over the admissible
//! box. The first measurement anchors the initial state exactly; the
//! likelihood runs over the remaining points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msg::{self, MsgParams, ParamBox};
use crate::opt::{minimize_box, Bounds, NmConfig};
use crate::schedule::{GlucoseTrace, RateSchedule};

/// Fewest measurements a window may carry and still be fitted.
pub const MIN_MEASUREMENTS: usize = 4;

/// One patient's training data over `[t_start, t_end]`.
#[derive(Debug, Clone)]
pub struct TrainingWindow {
    pub trace: GlucoseTrace,
    pub insulin: RateSchedule,
    pub nutrition: RateSchedule,
    pub t_start: f64,
    pub t_end: f64,
}

impl TrainingWindow {
    pub fn new(
        trace: GlucoseTrace,
        insulin: RateSchedule,
        nutrition: RateSchedule,
        t_start: f64,
        t_end: f64,
    ) -> Result<Self> {
        if let (Some(&first), Some(&last)) = (trace.times().first(), trace.times().last()) {
            if first < t_start || last > t_end {
                return Err(Error::InvalidTrace(format!(
                    "trace [{first}, {last}] outside window [{t_start}, {t_end}]"
                )));
            }
            insulin.require_cover(first, last)?;
            nutrition.require_cover(first, last)?;
        }
        Ok(Self {
            trace,
            insulin,
            nutrition,
            t_start,
            t_end,
        })
    }

    /// Whether any interval in the window delivers insulin.
    pub fn has_insulin_exposure(&self) -> bool {
        let a = self.t_start.max(self.insulin.start());
        let b = self.t_end.min(self.insulin.horizon());
        if b <= a {
            return false;
        }
        if self.insulin.rate_at(a) > 0.0 {
            return true;
        }
        self.insulin
            .change_times_in(a, b)
            .iter()
            .any(|&t| self.insulin.rate_at(t) > 0.0)
    }
}

/// Identification settings; loadable from the trial config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// When false, `r_meas` is pinned to `pinned_r_meas` instead of fitted.
    pub fit_r_meas: bool,
    pub pinned_r_meas: f64,
    pub theta: ParamBox,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iters: 2000,
            tol: 1e-8,
            seed: 0,
            fit_r_meas: true,
            pinned_r_meas: 4.0,
            theta: ParamBox::default(),
        }
    }
}

impl FitConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: MsgParams,
    pub neg_log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub restarts_used: usize,
}

/// In-place Cholesky of a dense symmetric matrix; returns the factor L with
/// `L L^T = A`. Adds `jitter` to the diagonal before factorizing.
fn cholesky(mut a: Vec<Vec<f64>>, jitter: f64) -> std::result::Result<Vec<Vec<f64>>, (usize, f64)> {
    let n = a.len();
    for i in 0..n {
        a[i][i] += jitter;
    }
    for j in 0..n {
        for k in 0..j {
            let ljk = a[j][k];
            for i in j..n {
                a[i][j] -= a[i][k] * ljk;
            }
        }
        let pivot = a[j][j];
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err((j, pivot));
        }
        let root = pivot.sqrt();
        for i in j..n {
            a[i][j] /= root;
        }
    }
    // zero the upper triangle for cleanliness
    for i in 0..n {
        for j in (i + 1)..n {
            a[i][j] = 0.0;
        }
    }
    Ok(a)
}

fn forward_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i][j] * y[j];
        }
        y[i] = s / l[i][i];
    }
    y
}

/// Negative log-likelihood of the window under `params`:
/// `0.5 (log det S + r^T S^{-1} r + k log 2 pi)` with the mean and
/// covariance from the joint prediction anchored at the first measurement.
pub fn neg_log_likelihood(params: &MsgParams, window: &TrainingWindow) -> Result<f64> {
    params.validate()?;
    let times = window.trace.times();
    let values = window.trace.values();
    if times.len() < 2 {
        return Err(Error::InsufficientData {
            n: times.len(),
            min: 2,
        });
    }
    let g0 = values[0];
    let t0 = times[0];
    let pred = msg::predict_joint(
        params,
        g0,
        t0,
        &times[1..],
        &window.insulin,
        &window.nutrition,
    )?;
    let k = pred.mean.len();
    let resid: Vec<f64> = values[1..]
        .iter()
        .zip(&pred.mean)
        .map(|(y, m)| y - m)
        .collect();

    // scale-aware jitter keeps near-degenerate sigma/r_meas factorizable
    let scale = pred
        .cov
        .iter()
        .enumerate()
        .map(|(i, row)| row[i])
        .fold(0.0f64, f64::max)
        .max(1.0);
    let l = cholesky(pred.cov, 1e-9 * scale)
        .map_err(|(index, pivot)| Error::SingularCovariance { index, pivot })?;

    let mut log_det = 0.0;
    for (i, row) in l.iter().enumerate() {
        log_det += row[i].ln();
    }
    log_det *= 2.0;

    let y = forward_solve(&l, &resid);
    let quad: f64 = y.iter().map(|v| v * v).sum();

    Ok(0.5 * (log_det + quad + k as f64 * (2.0 * std::f64::consts::PI).ln()))
}

/// Multi-start maximum-likelihood fit over the admissible box.
///
/// Deterministic under `config.seed`. Fails with [`Error::InsufficientData`]
/// or [`Error::NoInsulinExposure`] before any optimization starts, and with
/// [`Error::FitDiverged`] (carrying the best-effort result) if no restart
/// produced a finite objective.
pub fn fit(window: &TrainingWindow, config: &FitConfig) -> Result<FitResult> {
    config.theta.validate()?;
    if window.trace.len() < MIN_MEASUREMENTS {
        return Err(Error::InsufficientData {
            n: window.trace.len(),
            min: MIN_MEASUREMENTS,
        });
    }
    if !window.has_insulin_exposure() {
        return Err(Error::NoInsulinExposure);
    }

    let mut bounds_lo = Vec::with_capacity(6);
    let mut bounds_hi = Vec::with_capacity(6);
    for (i, [lo, hi]) in config.theta.bounds().into_iter().enumerate() {
        if i == 5 && !config.fit_r_meas {
            bounds_lo.push(config.pinned_r_meas);
            bounds_hi.push(config.pinned_r_meas);
        } else {
            bounds_lo.push(lo);
            bounds_hi.push(hi);
        }
    }
    let bounds = Bounds {
        lo: bounds_lo,
        hi: bounds_hi,
    };

    let objective = |x: &[f64]| -> f64 {
        let p = MsgParams::from_array([x[0], x[1], x[2], x[3], x[4], x[5]]);
        match neg_log_likelihood(&p, window) {
            Ok(v) => v,
            Err(_) => f64::MAX,
        }
    };

    let nm = NmConfig {
        restarts: config.restarts,
        max_iters: config.max_iters,
        tol: config.tol,
        seed: config.seed,
    };
    let r = minimize_box(objective, &bounds, &nm);
    let params = MsgParams::from_array([r.x[0], r.x[1], r.x[2], r.x[3], r.x[4], r.x[5]]);
    let result = FitResult {
        params,
        neg_log_likelihood: r.value,
        converged: r.converged,
        iterations: r.iterations,
        restarts_used: r.restarts_used,
    };
    if !r.value.is_finite() || r.value == f64::MAX {
        return Err(Error::FitDiverged {
            best: Box::new(result),
        });
    }
    Ok(result)
}
