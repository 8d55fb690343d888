//! Derivative-free box-constrained minimization.
//!
//! Nelder-Mead runs in an unconstrained space reached through a
//! coordinate-wise logit transform of the box, so every candidate the
//! simplex produces maps back strictly inside the bounds. Restart points
//! come from a seeded Latin hypercube over the box.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Lower/upper bound per coordinate. `lo == hi` pins the coordinate.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn is_free(&self, i: usize) -> bool {
        self.hi[i] > self.lo[i]
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Map unconstrained coordinates of the free dims into the box.
fn to_box(bounds: &Bounds, free: &[usize], z: &[f64]) -> Vec<f64> {
    let mut x = bounds.lo.clone();
    for (k, &i) in free.iter().enumerate() {
        x[i] = bounds.lo[i] + (bounds.hi[i] - bounds.lo[i]) * sigmoid(z[k]);
    }
    x
}

fn from_box(bounds: &Bounds, free: &[usize], x: &[f64]) -> Vec<f64> {
    free.iter()
        .map(|&i| logit((x[i] - bounds.lo[i]) / (bounds.hi[i] - bounds.lo[i])))
        .collect()
}

/// Latin hypercube sample of `n` points inside the box (free dims only).
fn latin_hypercube(bounds: &Bounds, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dim = bounds.dim();
    let mut strata: Vec<Vec<usize>> = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        strata.push(order);
    }
    (0..n)
        .map(|k| {
            (0..dim)
                .map(|d| {
                    if bounds.is_free(d) {
                        let u: f64 = rng.gen();
                        let cell = strata[d][k] as f64;
                        bounds.lo[d] + (bounds.hi[d] - bounds.lo[d]) * (cell + u) / n as f64
                    } else {
                        bounds.lo[d]
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NmConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Convergence threshold on simplex size (max vertex distance in the
    /// transformed space) and on the function value spread.
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iters: 2000,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// Multi-start Nelder-Mead over a box. `f` may return non-finite values;
/// those are treated as worse than any finite value. Returns the best
/// restart by (value, restart index), which makes the outcome independent
/// of evaluation order.
pub fn minimize_box<F>(f: F, bounds: &Bounds, cfg: &NmConfig) -> MinimizeResult
where
    F: Fn(&[f64]) -> f64,
{
    let free: Vec<usize> = (0..bounds.dim()).filter(|&i| bounds.is_free(i)).collect();
    if free.is_empty() {
        let x = bounds.lo.clone();
        let value = f(&x);
        return MinimizeResult {
            x,
            value,
            iterations: 0,
            converged: true,
            restarts_used: 1,
        };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts = latin_hypercube(bounds, cfg.restarts.max(1), &mut rng);

    let mut best: Option<MinimizeResult> = None;
    let mut restarts_used = 0;
    for start in &starts {
        restarts_used += 1;
        let z0 = from_box(bounds, &free, start);
        let run = nelder_mead(&f, bounds, &free, &z0, cfg);
        let better = match &best {
            None => true,
            Some(b) => run.value < b.value,
        };
        if better {
            best = Some(run);
        }
    }
    let mut out = best.expect("at least one restart");
    out.restarts_used = restarts_used;
    out
}

fn nelder_mead<F>(
    f: &F,
    bounds: &Bounds,
    free: &[usize],
    z0: &[f64],
    cfg: &NmConfig,
) -> MinimizeResult
where
    F: Fn(&[f64]) -> f64,
{
    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const RHO: f64 = 0.5; // contraction
    const SIG: f64 = 0.5; // shrink

    let n = free.len();
    let eval = |z: &[f64]| -> f64 {
        let v = f(&to_box(bounds, free, z));
        if v.is_finite() {
            v
        } else {
            f64::MAX
        }
    };

    // initial simplex: unit offsets in the transformed space
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n + 1);
    simplex.push((eval(z0), z0.to_vec()));
    for i in 0..n {
        let mut z = z0.to_vec();
        z[i] += 0.5;
        simplex.push((eval(&z), z));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        // convergence: simplex diameter and value spread
        let spread = simplex[n].0 - simplex[0].0;
        let diam = simplex[1..]
            .iter()
            .map(|(_, z)| {
                z.iter()
                    .zip(&simplex[0].1)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if diam < cfg.tol && spread.abs() < cfg.tol.max(1e-12 * simplex[0].0.abs()) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|(_, z)| z[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();

        let reflect: Vec<f64> = (0..n)
            .map(|d| centroid[d] + ALPHA * (centroid[d] - worst.1[d]))
            .collect();
        let f_r = eval(&reflect);

        if f_r < simplex[0].0 {
            let expand: Vec<f64> = (0..n)
                .map(|d| centroid[d] + GAMMA * (reflect[d] - centroid[d]))
                .collect();
            let f_e = eval(&expand);
            simplex[n] = if f_e < f_r {
                (f_e, expand)
            } else {
                (f_r, reflect)
            };
        } else if f_r < simplex[n - 1].0 {
            simplex[n] = (f_r, reflect);
        } else {
            let contract: Vec<f64> = if f_r < worst.0 {
                (0..n)
                    .map(|d| centroid[d] + RHO * (reflect[d] - centroid[d]))
                    .collect()
            } else {
                (0..n)
                    .map(|d| centroid[d] + RHO * (worst.1[d] - centroid[d]))
                    .collect()
            };
            let f_c = eval(&contract);
            if f_c < worst.0.min(f_r) {
                simplex[n] = (f_c, contract);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].1.clone();
                for v in simplex.iter_mut().skip(1) {
                    for d in 0..n {
                        v.1[d] = best[d] + SIG * (v.1[d] - best[d]);
                    }
                    v.0 = eval(&v.1);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    MinimizeResult {
        x: to_box(bounds, free, &simplex[0].1),
        value: simplex[0].0,
        iterations,
        converged,
        restarts_used: 1,
    }
}
