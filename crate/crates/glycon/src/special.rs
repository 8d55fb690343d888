//! Scalar special functions backing the statistics module.
//!
//! The Student-t CDF goes through the regularized incomplete beta function
//! evaluated with the Lentz continued fraction; the Kolmogorov distribution
//! has both of its classical series (they trade convergence speed at small
//! vs. large argument, and double as an internal cross-check).

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta I_x(a, b) by the Lentz continued fraction.
pub fn beta_inc_reg(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta_inc_reg needs positive parameters");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    // use the symmetry that keeps the continued fraction fast-converging
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - beta_inc_reg(b, a, 1.0 - x);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let front = ln_front.exp() / a;

    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let mut f = 1.0f64;
    let mut c = 1.0f64;
    let mut d = 0.0f64;
    for i in 0..400 {
        let m = i / 2;
        let numerator = if i == 0 {
            1.0
        } else if i % 2 == 0 {
            let m = m as f64;
            m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m))
        } else {
            let m = m as f64;
            -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0))
        };
        d = 1.0 + numerator * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = 1.0 + numerator / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    front * (f - 1.0)
}

/// CDF of Student's t with `nu` degrees of freedom.
pub fn student_t_cdf(t: f64, nu: f64) -> f64 {
    assert!(nu > 0.0);
    if t == 0.0 {
        return 0.5;
    }
    let x = nu / (nu + t * t);
    let tail = 0.5 * beta_inc_reg(0.5 * nu, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value for a t statistic.
pub fn student_t_two_sided_p(t: f64, nu: f64) -> f64 {
    let x = nu / (nu + t * t);
    beta_inc_reg(0.5 * nu, 0.5, x)
}

/// Upper quantile t_{p, nu} with P(T <= t) = p, by bisection on the CDF.
pub fn student_t_quantile(p: f64, nu: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    if (p - 0.5).abs() < 1e-15 {
        return 0.0;
    }
    let (mut lo, mut hi) = (-1e4, 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, nu) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Standard normal CDF via erfc (Abramowitz-Stegun style rational kernel is
/// not accurate enough; use the complementary error function series below).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Complementary error function: Maclaurin series for small arguments,
/// upper-incomplete-gamma continued fraction (`erfc(x) = Q(1/2, x^2)`)
/// beyond.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 1.5 {
        return 1.0 - erf_series(x);
    }
    gamma_q_half(x * x)
}

/// Regularized upper incomplete gamma Q(1/2, t) by the Lentz continued
/// fraction; converges fast for t > 1.5.
fn gamma_q_half(t: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let a = 0.5;
    let mut b = t + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..300 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    // ln Gamma(1/2) = ln(pi) / 2
    (-t + a * t.ln() - 0.5 * std::f64::consts::PI.ln()).exp() * h
}

fn erf_series(x: f64) -> f64 {
    // Maclaurin series, fine for |x| < 0.5
    let mut term = x;
    let mut sum = x;
    let x2 = x * x;
    for n in 1..60 {
        term *= -x2 / n as f64;
        let add = term / (2.0 * n as f64 + 1.0);
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

/// Kolmogorov distribution Q(lambda) = P(K > lambda): the tail probability
/// used for KS p-values, by the alternating exponential series.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.3 {
        // the alternating series converges too slowly here; use the dual form
        return 1.0 - kolmogorov_cdf_theta(lambda);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = sign * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Kolmogorov CDF via the Jacobi-theta dual series (fast for small lambda).
/// Serves as the independent second route for cross-checks.
pub fn kolmogorov_cdf_theta(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let pi = std::f64::consts::PI;
    let mut sum = 0.0;
    for j in 1..=100 {
        let k = (2 * j - 1) as f64;
        let term = (-k * k * pi * pi / (8.0 * lambda * lambda)).exp();
        sum += term;
        if term < 1e-300 {
            break;
        }
    }
    ((2.0 * pi).sqrt() / lambda * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(ln_gamma(2.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(ln_gamma(5.0), 24.0f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(
            ln_gamma(0.5),
            std::f64::consts::PI.sqrt().ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn t_cdf_reference_points() {
        // classic table values
        assert_relative_eq!(student_t_cdf(0.0, 7.0), 0.5, epsilon = 1e-14);
        // t_{0.975, 10} = 2.228138852
        assert_relative_eq!(student_t_cdf(2.228138852, 10.0), 0.975, epsilon = 1e-8);
        // one-sided 95% with 5 dof: 2.015048373
        assert_relative_eq!(student_t_cdf(2.015048373, 5.0), 0.95, epsilon = 1e-8);
        // symmetric
        for t in [-3.0, -0.7, 0.4, 2.2] {
            let nu = 13.0;
            assert_relative_eq!(
                student_t_cdf(t, nu) + student_t_cdf(-t, nu),
                1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn t_quantile_inverts_cdf() {
        for nu in [2.0, 5.0, 29.0, 199.0] {
            for p in [0.6, 0.9, 0.975, 0.999] {
                let q = student_t_quantile(p, nu);
                assert_relative_eq!(student_t_cdf(q, nu), p, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn t_cdf_matches_statrs() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        for nu in [3.0, 9.0, 24.0, 120.0] {
            let d = StudentsT::new(0.0, 1.0, nu).unwrap();
            for t in [-4.0, -1.3, -0.2, 0.0, 0.9, 2.6, 5.0] {
                assert_relative_eq!(student_t_cdf(t, nu), d.cdf(t), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn normal_cdf_reference() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-14);
        assert_relative_eq!(normal_cdf(1.0), 0.841344746068543, epsilon = 1e-12);
        assert_relative_eq!(normal_cdf(-1.96), 0.024997895148220435, epsilon = 1e-12);
        assert_relative_eq!(normal_cdf(3.0), 0.9986501019683699, epsilon = 1e-12);
    }

    #[test]
    fn kolmogorov_series_agree() {
        // two independent series for the same distribution
        for lambda in [0.35, 0.5, 0.8, 1.0, 1.36, 2.0, 3.0] {
            let tail = kolmogorov_tail(lambda);
            let dual = 1.0 - kolmogorov_cdf_theta(lambda);
            assert_relative_eq!(tail, dual, epsilon = 1e-12);
        }
        // classic critical value: Q(1.36) ~ 0.049
        assert!((kolmogorov_tail(1.36) - 0.049).abs() < 5e-4);
    }
}
