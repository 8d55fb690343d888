//! Evaluation statistics: glycemic region labels, per-patient summaries,
//! paired t-test with a normality pre-check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special;

/// Glycemic region of a single BG value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    SevereHypoglycemia,
    ModerateHypoglycemia,
    MildHypoglycemia,
    Target,
    MildHyperglycemia,
    ModerateHyperglycemia,
    SevereHyperglycemia,
}

impl Region {
    pub fn label(self) -> &'static str {
        match self {
            Region::SevereHypoglycemia => "severe_hypoglycemia",
            Region::ModerateHypoglycemia => "moderate_hypoglycemia",
            Region::MildHypoglycemia => "mild_hypoglycemia",
            Region::Target => "target",
            Region::MildHyperglycemia => "mild_hyperglycemia",
            Region::ModerateHyperglycemia => "moderate_hyperglycemia",
            Region::SevereHyperglycemia => "severe_hyperglycemia",
        }
    }
}

/// Band edges for one protocol's region scheme. The severe/moderate edges
/// are shared across protocols; only the target band moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlycemicRegions {
    /// Upper edge of severe hypoglycemia (exclusive): `[0, 40)`.
    pub severe_hypo_below: f64,
    /// Upper edge of moderate hypoglycemia (exclusive): `[40, 70)`.
    pub moderate_hypo_below: f64,
    /// Target band, closed on both ends.
    pub target: [f64; 2],
    /// Upper edge of mild hyperglycemia (inclusive): `(target_hi, 250]`.
    pub mild_hyper_upto: f64,
    /// Upper edge of moderate hyperglycemia (inclusive): `(250, 400]`.
    pub moderate_hyper_upto: f64,
}

impl GlycemicRegions {
    /// Standard bands around a protocol's target range.
    pub fn for_target(target: [f64; 2]) -> Result<Self> {
        let r = Self {
            severe_hypo_below: 40.0,
            moderate_hypo_below: 70.0,
            target,
            mild_hyper_upto: 250.0,
            moderate_hyper_upto: 400.0,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 < self.severe_hypo_below
            && self.severe_hypo_below <= self.moderate_hypo_below
            && self.moderate_hypo_below <= self.target[0]
            && self.target[0] < self.target[1]
            && self.target[1] <= self.mild_hyper_upto
            && self.mild_hyper_upto <= self.moderate_hyper_upto;
        if !ordered {
            return Err(Error::Stats(format!("region edges out of order: {self:?}")));
        }
        Ok(())
    }

    /// Unique region of a BG value. Boundary conventions: the target band
    /// is closed, hyperglycemia bands are half-open `(lo, hi]`,
    /// hypoglycemia bands are half-open `[lo, hi)`.
    pub fn classify(&self, bg: f64) -> Region {
        debug_assert!(bg >= 0.0);
        if bg < self.severe_hypo_below {
            Region::SevereHypoglycemia
        } else if bg < self.moderate_hypo_below {
            Region::ModerateHypoglycemia
        } else if bg < self.target[0] {
            Region::MildHypoglycemia
        } else if bg <= self.target[1] {
            Region::Target
        } else if bg <= self.mild_hyper_upto {
            Region::MildHyperglycemia
        } else if bg <= self.moderate_hyper_upto {
            Region::ModerateHyperglycemia
        } else {
            Region::SevereHyperglycemia
        }
    }
}

/// Two-sided paired t-test output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub mean: f64,
    pub t: f64,
    pub p: f64,
    pub ci95: [f64; 2],
    /// Zero-variance inputs cannot support a t statistic.
    pub degenerate: bool,
}

/// Two-sided paired t statistics with the 95% confidence interval
/// `mean +- t_{0.975, n-1} * se`.
pub fn paired_ttest(diffs: &[f64]) -> Result<TTest> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::Stats(format!("paired t-test needs n >= 2, got {n}")));
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var <= 0.0 {
        return Ok(TTest {
            n,
            mean,
            t: 0.0,
            p: 1.0,
            ci95: [mean, mean],
            degenerate: true,
        });
    }
    let se = (var / nf).sqrt();
    let t = mean / se;
    let df = nf - 1.0;
    let p = special::student_t_two_sided_p(t, df);
    let q = special::student_t_quantile(0.975, df);
    Ok(TTest {
        n,
        mean,
        t,
        p,
        ci95: [mean - q * se, mean + q * se],
        degenerate: false,
    })
}

/// One-sample Kolmogorov-Smirnov normality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub n: usize,
    pub d: f64,
    pub p: f64,
    pub degenerate: bool,
}

/// KS statistic of the sample against a normal with the sample's own mean
/// and (n-1) standard deviation; p-value from the asymptotic Kolmogorov
/// distribution. Estimating the parameters from the sample makes the
/// p-value conservative (no small-sample correction is applied).
pub fn ks_normality(sample: &[f64]) -> Result<KsTest> {
    let n = sample.len();
    if n < 5 {
        return Err(Error::Stats(format!("KS check needs n >= 5, got {n}")));
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let sd = (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Ok(KsTest {
            n,
            d: 1.0,
            p: 0.0,
            degenerate: true,
        });
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = special::normal_cdf((x - mean) / sd);
        let hi = (i + 1) as f64 / nf - f;
        let lo = f - i as f64 / nf;
        d = d.max(hi).max(lo);
    }
    let lambda = (nf.sqrt() + 0.12 + 0.11 / nf.sqrt()) * d;
    Ok(KsTest {
        n,
        d,
        p: special::kolmogorov_tail(lambda),
        degenerate: false,
    })
}

/// Per-patient evaluation BG values for the two arms. `None` marks an arm
/// that did not complete.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientEvals {
    pub patient_id: u64,
    pub lqg: Option<Vec<f64>>,
    pub protocol: Option<Vec<f64>>,
}

/// min/max/avg triple of one arm's evaluation BG values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats3 {
    pub min: f64,
    pub max: f64,
    pub avg: f64,
}

impl Stats3 {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        Some(Self {
            min,
            max,
            avg: sum / values.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSummary {
    pub patient_id: u64,
    pub lqg: Stats3,
    pub protocol: Stats3,
}

/// One statistic's paired comparison across the cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedStat {
    pub diffs: Vec<f64>,
    pub ttest: TTest,
    pub normality: KsTest,
}

/// Full paired evaluation: per-patient triples plus LQG-minus-protocol
/// differences of each summary statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub patients: Vec<PatientSummary>,
    pub min_bg: PairedStat,
    pub max_bg: PairedStat,
    pub avg_bg: PairedStat,
    /// Patients dropped because an arm was missing or empty.
    pub excluded: usize,
}

/// Summarize paired per-patient evaluations. Differences are LQG minus
/// protocol, aligned by patient id order of the input.
pub fn summarize(records: &[PatientEvals]) -> Result<PairedSummary> {
    let mut patients = Vec::with_capacity(records.len());
    let mut excluded = 0usize;
    for r in records {
        let (lqg, protocol) = match (&r.lqg, &r.protocol) {
            (Some(l), Some(p)) => match (Stats3::of(l), Stats3::of(p)) {
                (Some(l3), Some(p3)) => (l3, p3),
                _ => {
                    excluded += 1;
                    continue;
                }
            },
            _ => {
                excluded += 1;
                continue;
            }
        };
        patients.push(PatientSummary {
            patient_id: r.patient_id,
            lqg,
            protocol,
        });
    }
    if patients.len() < 2 {
        return Err(Error::Stats(format!(
            "need at least 2 complete pairs, got {} ({excluded} excluded)",
            patients.len()
        )));
    }
    let stat = |pick: fn(&Stats3) -> f64| -> Result<PairedStat> {
        let diffs: Vec<f64> = patients
            .iter()
            .map(|p| pick(&p.lqg) - pick(&p.protocol))
            .collect();
        // cohorts too small for the normality check get a degenerate marker
        let normality = if diffs.len() >= 5 {
            ks_normality(&diffs)?
        } else {
            KsTest {
                n: diffs.len(),
                d: 1.0,
                p: 0.0,
                degenerate: true,
            }
        };
        Ok(PairedStat {
            ttest: paired_ttest(&diffs)?,
            normality,
            diffs,
        })
    };
    Ok(PairedSummary {
        min_bg: stat(|s| s.min)?,
        max_bg: stat(|s| s.max)?,
        avg_bg: stat(|s| s.avg)?,
        patients,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn region_examples() {
        let a = GlycemicRegions::for_target([120.0, 150.0]).unwrap();
        let b = GlycemicRegions::for_target([140.0, 180.0]).unwrap();
        assert_eq!(b.classify(160.0), Region::Target);
        assert_eq!(a.classify(160.0), Region::MildHyperglycemia);
        assert_eq!(a.classify(400.0), Region::ModerateHyperglycemia);
        assert_eq!(a.classify(400.0001), Region::SevereHyperglycemia);
        assert_eq!(a.classify(250.0), Region::MildHyperglycemia);
        assert_eq!(a.classify(70.0), Region::MildHypoglycemia);
        assert_eq!(a.classify(69.999), Region::ModerateHypoglycemia);
        assert_eq!(a.classify(40.0), Region::ModerateHypoglycemia);
        assert_eq!(a.classify(39.999), Region::SevereHypoglycemia);
        assert_eq!(a.classify(120.0), Region::Target);
        assert_eq!(a.classify(150.0), Region::Target);
    }

    #[test]
    fn regions_are_exhaustive_and_exclusive() {
        // dense grid over [0, 700]: each point lands in exactly one band,
        // and the band sequence is monotone
        let r = GlycemicRegions::for_target([140.0, 180.0]).unwrap();
        let order = |reg: Region| reg as usize;
        let mut prev = 0usize;
        let mut k = 0;
        while k <= 70000 {
            let bg = k as f64 * 0.01;
            let region = r.classify(bg);
            let o = order(region);
            assert!(o >= prev, "band order broke at {bg}");
            prev = o;
            k += 1;
        }
    }

    #[test]
    fn ttest_all_zero_is_degenerate() {
        let t = paired_ttest(&[0.0; 10]).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.t, 0.0);
        assert_eq!(t.ci95, [0.0, 0.0]);
    }

    #[test]
    fn ttest_textbook_sample() {
        // hand data: diffs with known t; cross-checked against statrs below
        let diffs = [2.0, 4.0, 1.0, 3.0, 5.0];
        let t = paired_ttest(&diffs).unwrap();
        // mean 3, sd sqrt(2.5), se sqrt(0.5), t = 3/sqrt(0.5)
        assert_relative_eq!(t.t, 3.0 / 0.5f64.sqrt(), max_relative = 1e-12);
        // p from an independent implementation
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let d = StudentsT::new(0.0, 1.0, 4.0).unwrap();
        let p_ref = 2.0 * (1.0 - d.cdf(t.t.abs()));
        assert_relative_eq!(t.p, p_ref, epsilon = 1e-10);
        // t_{0.975,4} = 2.776445105
        assert_relative_eq!(
            t.ci95[1],
            3.0 + 2.776445105 * 0.5f64.sqrt(),
            max_relative = 1e-8
        );
    }

    #[test]
    fn ttest_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let diffs: Vec<f64> = (0..40).map(|_| rng.gen_range(-3.0..5.0)).collect();
        let neg: Vec<f64> = diffs.iter().map(|d| -d).collect();
        let a = paired_ttest(&diffs).unwrap();
        let b = paired_ttest(&neg).unwrap();
        assert_relative_eq!(a.t, -b.t, max_relative = 1e-12);
        assert_relative_eq!(a.p, b.p, max_relative = 1e-12);
        assert_relative_eq!(a.ci95[0], -b.ci95[1], max_relative = 1e-12);
        assert_relative_eq!(a.ci95[1], -b.ci95[0], max_relative = 1e-12);
    }

    #[test]
    fn ttest_ci_coverage() {
        // CI contains the true mean 3 in at least 93% of replications
        let mut hits = 0;
        let reps = 1000;
        for s in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + s);
            let diffs: Vec<f64> = (0..200)
                .map(|_| 3.0 + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let t = paired_ttest(&diffs).unwrap();
            if t.ci95[0] <= 3.0 && 3.0 <= t.ci95[1] {
                hits += 1;
            }
        }
        assert!(hits >= 930, "coverage {hits}/1000");
    }

    #[test]
    fn ks_constant_sample_is_degenerate() {
        let k = ks_normality(&[4.0; 12]).unwrap();
        assert!(k.degenerate);
    }

    #[test]
    fn ks_calibration_on_normal_data() {
        let mut ok = 0;
        let reps = 1000;
        for s in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(9000 + s);
            let sample: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
            let k = ks_normality(&sample).unwrap();
            if k.p > 0.05 {
                ok += 1;
            }
        }
        assert!(ok >= 900, "normal data retained {ok}/1000");
    }

    #[test]
    fn ks_power_against_uniform() {
        // the fitted-parameter statistic without small-sample correction is
        // conservative, so power needs a larger n to show up decisively
        let mut rejected = 0;
        let reps = 200;
        for s in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(12000 + s);
            let sample: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>()).collect();
            let k = ks_normality(&sample).unwrap();
            if k.p < 0.01 {
                rejected += 1;
            }
        }
        assert!(
            rejected * 100 >= reps * 95,
            "uniform data rejected only {rejected}/{reps}"
        );
    }

    #[test]
    fn summarize_identical_arms_gives_zero_diffs() {
        let recs: Vec<PatientEvals> = (0..5)
            .map(|i| PatientEvals {
                patient_id: i,
                lqg: Some(vec![150.0 + i as f64, 160.0, 140.0]),
                protocol: Some(vec![150.0 + i as f64, 160.0, 140.0]),
            })
            .collect();
        let s = summarize(&recs).unwrap();
        assert!(s.min_bg.diffs.iter().all(|&d| d == 0.0));
        assert!(s.max_bg.ttest.degenerate);
        assert_eq!(s.excluded, 0);
    }

    #[test]
    fn summarize_single_measurement_collapses() {
        let recs = vec![
            PatientEvals {
                patient_id: 0,
                lqg: Some(vec![155.0]),
                protocol: Some(vec![149.0]),
            },
            PatientEvals {
                patient_id: 1,
                lqg: Some(vec![170.0]),
                protocol: Some(vec![162.0]),
            },
        ];
        let s = summarize(&recs).unwrap();
        for p in &s.patients {
            assert_eq!(p.lqg.min, p.lqg.max);
            assert_eq!(p.lqg.min, p.lqg.avg);
        }
    }

    #[test]
    fn summarize_hand_checked_fixture() {
        let recs = vec![
            PatientEvals {
                patient_id: 0,
                lqg: Some(vec![150.0, 170.0, 160.0]),
                protocol: Some(vec![120.0, 200.0, 160.0]),
            },
            PatientEvals {
                patient_id: 1,
                lqg: Some(vec![140.0, 180.0]),
                protocol: Some(vec![130.0, 210.0]),
            },
            PatientEvals {
                patient_id: 2,
                lqg: Some(vec![155.0, 165.0, 175.0, 145.0]),
                protocol: Some(vec![115.0, 225.0, 170.0, 150.0]),
            },
        ];
        let s = summarize(&recs).unwrap();
        // hand computation
        assert_eq!(s.min_bg.diffs, vec![30.0, 10.0, 30.0]);
        assert_eq!(s.max_bg.diffs, vec![-30.0, -30.0, -50.0]);
        assert_relative_eq!(s.avg_bg.diffs[0], 160.0 - 160.0, epsilon = 1e-12);
        assert_relative_eq!(s.avg_bg.diffs[1], 160.0 - 170.0, epsilon = 1e-12);
        assert_relative_eq!(s.avg_bg.diffs[2], 160.0 - 165.0, epsilon = 1e-12);
        // per-patient ordering invariant
        for p in &s.patients {
            assert!(p.lqg.min <= p.lqg.avg && p.lqg.avg <= p.lqg.max);
            assert!(p.protocol.min <= p.protocol.avg && p.protocol.avg <= p.protocol.max);
        }
    }

    #[test]
    fn summarize_excludes_incomplete_patients() {
        let recs = vec![
            PatientEvals {
                patient_id: 0,
                lqg: Some(vec![150.0]),
                protocol: Some(vec![140.0]),
            },
            PatientEvals {
                patient_id: 1,
                lqg: None,
                protocol: Some(vec![130.0]),
            },
            PatientEvals {
                patient_id: 2,
                lqg: Some(vec![160.0]),
                protocol: Some(vec![]),
            },
            PatientEvals {
                patient_id: 3,
                lqg: Some(vec![170.0]),
                protocol: Some(vec![180.0]),
            },
        ];
        let s = summarize(&recs).unwrap();
        assert_eq!(s.excluded, 2);
        assert_eq!(s.patients.len(), 2);
    }
}
