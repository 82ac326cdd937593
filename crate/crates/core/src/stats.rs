//! The paired-significance bundle: McNemar (exact and continuity-
//! corrected), effect sizes, Wald paired-difference intervals, Bonferroni
//! adjustment, baseline-vs-gain correlation, and synergy arithmetic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::taxonomy::Layer;

/// Discordant-pair count below which the exact binomial test is used.
pub const EXACT_CUTOFF: u64 = 25;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("DegenerateVariance: {0}")]
    DegenerateVariance(String),
    #[error("TooFewCases: need at least {needed}, got {got}")]
    TooFewCases { needed: usize, got: usize },
    #[error("NoDiscordantPairs: b = c = 0")]
    NoDiscordantPairs,
}

/// Per-case paired correctness for one enhanced arm against baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub case_id: String,
    pub baseline_correct: bool,
    pub enhanced_correct: bool,
}

/// 2x2 paired contingency table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    /// Both arms correct.
    pub a: u64,
    /// Baseline only.
    pub b: u64,
    /// Enhanced only.
    pub c: u64,
    /// Both wrong.
    pub d: u64,
}

impl Contingency {
    pub fn from_outcomes(outcomes: &[PairedOutcome]) -> Self {
        let mut t = Contingency {
            a: 0,
            b: 0,
            c: 0,
            d: 0,
        };
        for o in outcomes {
            match (o.baseline_correct, o.enhanced_correct) {
                (true, true) => t.a += 1,
                (true, false) => t.b += 1,
                (false, true) => t.c += 1,
                (false, false) => t.d += 1,
            }
        }
        t
    }

    pub fn n(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn baseline_acc(&self) -> f64 {
        (self.a + self.b) as f64 / self.n() as f64
    }

    pub fn enhanced_acc(&self) -> f64 {
        (self.a + self.c) as f64 / self.n() as f64
    }

    /// 100 * (c - b) / n.
    pub fn delta_pp(&self) -> f64 {
        100.0 * (self.c as f64 - self.b as f64) / self.n() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMethod {
    ExactBinomial,
    Chi2Continuity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McNemarResult {
    pub b: u64,
    pub c: u64,
    pub method: McNemarMethod,
    /// Chi-square statistic; absent for the exact method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    pub p_value: f64,
    /// b = c = 0: no information, p reported as 1 and flagged.
    pub no_discordant: bool,
}

/// Exact two-sided binomial McNemar: p = min(1, 2 * P(X <= min(b,c))) with
/// X ~ Binomial(b + c, 1/2).
pub fn mcnemar_exact(b: u64, c: u64) -> McNemarResult {
    let n = b + c;
    if n == 0 {
        return McNemarResult {
            b,
            c,
            method: McNemarMethod::ExactBinomial,
            statistic: None,
            p_value: 1.0,
            no_discordant: true,
        };
    }
    let dist = Binomial::new(0.5, n).expect("valid binomial");
    let p = (2.0 * dist.cdf(b.min(c))).min(1.0);
    McNemarResult {
        b,
        c,
        method: McNemarMethod::ExactBinomial,
        statistic: None,
        p_value: p,
        no_discordant: false,
    }
}

/// Continuity-corrected chi-square McNemar: statistic (|b-c|-1)^2/(b+c),
/// p from the chi-square(1) survival function.
pub fn mcnemar_chi2(b: u64, c: u64) -> McNemarResult {
    let n = b + c;
    if n == 0 {
        return McNemarResult {
            b,
            c,
            method: McNemarMethod::Chi2Continuity,
            statistic: None,
            p_value: 1.0,
            no_discordant: true,
        };
    }
    // The correction shrinks |b - c| toward the null by 1 and must not
    // cross zero (else b = c would yield a positive statistic).
    let corrected = ((b as f64 - c as f64).abs() - 1.0).max(0.0);
    let statistic = corrected.powi(2) / n as f64;
    // chi-square(1) survival: sf(x) = erfc(sqrt(x / 2)); keeps precision
    // for the very small p this harness reports.
    let p = erfc((statistic / 2.0).sqrt()).min(1.0);
    McNemarResult {
        b,
        c,
        method: McNemarMethod::Chi2Continuity,
        statistic: Some(statistic),
        p_value: p,
        no_discordant: false,
    }
}

/// McNemar with the exact method below [`EXACT_CUTOFF`] discordant pairs
/// and the continuity-corrected chi-square at or above it.
pub fn mcnemar(b: u64, c: u64) -> McNemarResult {
    if b + c < EXACT_CUTOFF {
        mcnemar_exact(b, c)
    } else {
        mcnemar_chi2(b, c)
    }
}

pub const D_PAIRED_FORMULA: &str = "mean(diff) / sd_sample(diff), diff in {-1,0,+1}";
pub const H_ARCSINE_FORMULA: &str = "2*asin(sqrt(p2)) - 2*asin(sqrt(p1))";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectSizes {
    /// Cohen's d over paired difference scores; `None` when the
    /// differences have zero variance (flagged, not silently zeroed).
    pub d_paired: Option<f64>,
    pub d_formula: String,
    /// Cohen's h over arcsine-transformed accuracies.
    pub h_arcsine: f64,
    pub h_formula: String,
    pub degenerate_variance: bool,
}

/// Both effect sizes, with their formulas named in the output.
pub fn effect_sizes(outcomes: &[PairedOutcome]) -> Result<EffectSizes, StatsError> {
    let n = outcomes.len();
    if n < 2 {
        return Err(StatsError::TooFewCases { needed: 2, got: n });
    }
    let diffs: Vec<f64> = outcomes
        .iter()
        .map(|o| (o.enhanced_correct as i64 - o.baseline_correct as i64) as f64)
        .collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    let t = Contingency::from_outcomes(outcomes);
    let h = 2.0 * t.enhanced_acc().sqrt().asin() - 2.0 * t.baseline_acc().sqrt().asin();
    let degenerate = sd == 0.0;
    Ok(EffectSizes {
        d_paired: if degenerate { None } else { Some(mean / sd) },
        d_formula: D_PAIRED_FORMULA.into(),
        h_arcsine: h,
        h_formula: H_ARCSINE_FORMULA.into(),
        degenerate_variance: degenerate,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CiDelta {
    pub lo_pp: f64,
    pub hi_pp: f64,
    pub method: String,
    /// No discordant pairs: width-zero interval, flagged.
    pub degenerate: bool,
}

/// 95% Wald interval for the paired proportion difference, in percentage
/// points, clamped to [-100, 100].
pub fn ci95_delta(t: &Contingency) -> CiDelta {
    let n = t.n() as f64;
    let delta = (t.c as f64 - t.b as f64) / n;
    let disc = t.b + t.c;
    let half = 1.96 * ((t.b + t.c) as f64 - (t.c as f64 - t.b as f64).powi(2) / n).sqrt() / n;
    CiDelta {
        lo_pp: (100.0 * (delta - half)).max(-100.0),
        hi_pp: (100.0 * (delta + half)).min(100.0),
        method: "wald_paired".into(),
        degenerate: disc == 0,
    }
}

/// Bonferroni adjustment: each p becomes min(1, m*p), order preserved.
/// Callers guarantee `m >= p_values.len()`.
pub fn bonferroni(p_values: &[f64], m: usize) -> Vec<f64> {
    assert!(
        m >= p_values.len(),
        "bonferroni m ({m}) must cover all {} comparisons",
        p_values.len()
    );
    p_values.iter().map(|p| (p * m as f64).min(1.0)).collect()
}

/// Product-moment correlation over (baseline accuracy, delta) points.
pub fn pearson_r(points: &[(f64, f64)]) -> Result<f64, StatsError> {
    let n = points.len();
    if n < 3 {
        return Err(StatsError::TooFewCases { needed: 3, got: n });
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in points {
        cov += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateVariance(
            "pearson_r needs nonzero variance on both axes".into(),
        ));
    }
    Ok((cov / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynergyReport {
    pub individual_deltas_pp: BTreeMap<Layer, f64>,
    pub combined_delta_pp: f64,
    /// combined - sum(individual), exact arithmetic, sign preserved.
    pub synergy_pp: f64,
}

pub fn synergy(individual: &BTreeMap<Layer, f64>, combined: f64) -> SynergyReport {
    let sum: f64 = individual.values().sum();
    SynergyReport {
        individual_deltas_pp: individual.clone(),
        combined_delta_pp: combined,
        synergy_pp: combined - sum,
    }
}

/// The full significance bundle for one enhanced arm vs baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n: u64,
    pub baseline_acc: f64,
    pub enhanced_acc: f64,
    pub delta_pp: f64,
    pub contingency: Contingency,
    pub mcnemar: McNemarResult,
    pub effect: EffectSizes,
    pub ci95_delta: CiDelta,
    /// Bonferroni-adjusted p over m comparisons.
    pub p_adjusted: f64,
    pub m_comparisons: usize,
}

pub fn summarize(outcomes: &[PairedOutcome], m_comparisons: usize) -> Result<StatsSummary, StatsError> {
    let t = Contingency::from_outcomes(outcomes);
    if t.n() == 0 {
        return Err(StatsError::TooFewCases { needed: 1, got: 0 });
    }
    let mc = mcnemar(t.b, t.c);
    let p_adjusted = (mc.p_value * m_comparisons.max(1) as f64).min(1.0);
    Ok(StatsSummary {
        n: t.n(),
        baseline_acc: t.baseline_acc(),
        enhanced_acc: t.enhanced_acc(),
        delta_pp: t.delta_pp(),
        contingency: t,
        effect: effect_sizes(outcomes)?,
        ci95_delta: ci95_delta(&t),
        mcnemar: mc,
        p_adjusted,
        m_comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: exact McNemar p via Pascal's-triangle
    /// enumeration of the Binomial(n, 1/2) lower tail.
    pub(crate) fn mcnemar_exact_oracle(b: u64, c: u64) -> f64 {
        let n = (b + c) as usize;
        if n == 0 {
            return 1.0;
        }
        let mut row = vec![1.0f64];
        for _ in 0..n {
            let mut next = vec![1.0f64; row.len() + 1];
            for i in 1..row.len() {
                next[i] = row[i - 1] + row[i];
            }
            row = next;
        }
        let k = b.min(c) as usize;
        let tail: f64 = row[..=k].iter().sum();
        (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
    }

    fn outcomes_from(a: usize, b: usize, c: usize, d: usize) -> Vec<PairedOutcome> {
        let mut out = Vec::new();
        let mut push = |n: usize, base: bool, enh: bool| {
            for _ in 0..n {
                out.push(PairedOutcome {
                    case_id: format!("case-{}", out.len()),
                    baseline_correct: base,
                    enhanced_correct: enh,
                });
            }
        };
        push(a, true, true);
        push(b, true, false);
        push(c, false, true);
        push(d, false, false);
        out
    }

    #[test]
    fn symmetric_discordance_caps_at_one() {
        assert_eq!(mcnemar(5, 5).p_value, 1.0);
    }

    #[test]
    fn exact_2_12() {
        let r = mcnemar(2, 12);
        assert_eq!(r.method, McNemarMethod::ExactBinomial);
        assert!((r.p_value - 212.0 / 16384.0).abs() < 1e-12);
    }

    #[test]
    fn no_discordant_pairs_is_flagged_not_fatal() {
        let r = mcnemar(0, 0);
        assert!(r.no_discordant);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn chi2_large_split() {
        // b=0, c=146: statistic 145^2/146 ~ 144.01, p far below 1e-30.
        let r = mcnemar(0, 146);
        assert_eq!(r.method, McNemarMethod::Chi2Continuity);
        assert!((r.statistic.unwrap() - 144.0068493150685).abs() < 1e-9);
        assert!(r.p_value < 1e-30);
        assert!(r.p_value > 0.0);
    }

    #[test]
    fn cutoff_selects_method() {
        assert_eq!(mcnemar(12, 12).method, McNemarMethod::ExactBinomial);
        assert_eq!(mcnemar(12, 13).method, McNemarMethod::Chi2Continuity);
    }

    #[test]
    fn effect_sizes_hand_arithmetic() {
        // n=100, b=5, c=25: mean diff 0.20, sample sd 0.5124707, d 0.390266.
        let outcomes = outcomes_from(40, 5, 25, 30);
        let e = effect_sizes(&outcomes).unwrap();
        assert!((e.d_paired.unwrap() - 0.39026618135279484).abs() < 1e-12);
        assert!(!e.degenerate_variance);
    }

    #[test]
    fn effect_size_h_fixture() {
        // p1=0.647, p2=0.759 over n=1000: h = 0.2461020 (direct trig).
        let outcomes = outcomes_from(647, 0, 112, 241);
        let e = effect_sizes(&outcomes).unwrap();
        assert!((e.h_arcsine - 0.246102038441959).abs() < 1e-9);
    }

    #[test]
    fn identical_arms_flag_degenerate_h_zero() {
        let outcomes = outcomes_from(50, 0, 0, 50);
        let e = effect_sizes(&outcomes).unwrap();
        assert!(e.degenerate_variance);
        assert_eq!(e.d_paired, None);
        assert_eq!(e.h_arcsine, 0.0);
    }

    #[test]
    fn ci95_hand_arithmetic() {
        // n=1000, b=27, c=139: 11.2pp ± 2.428pp.
        let t = Contingency {
            a: 500,
            b: 27,
            c: 139,
            d: 334,
        };
        let ci = ci95_delta(&t);
        assert!((ci.lo_pp - 8.772003769360422).abs() < 1e-9);
        assert!((ci.hi_pp - 13.627996230639578).abs() < 1e-9);
        assert!(!ci.degenerate);
    }

    #[test]
    fn ci95_pooled_5000_contains_average_improvement() {
        // Pooled five-model fixture: n=5000 with a +11.2pp net gain
        // (c - b = 560). The interval must contain the 11.2 midpoint of
        // the published [10.1, 12.3].
        let t = Contingency {
            a: 2500,
            b: 135,
            c: 695,
            d: 1670,
        };
        assert!((t.delta_pp() - 11.2).abs() < 1e-9);
        let ci = ci95_delta(&t);
        assert!(ci.lo_pp <= 11.2 && 11.2 <= ci.hi_pp);
        assert!(ci.lo_pp > 9.0 && ci.hi_pp < 13.5, "({}, {})", ci.lo_pp, ci.hi_pp);
    }

    #[test]
    fn ci95_degenerate_zero_width() {
        let t = Contingency {
            a: 10,
            b: 0,
            c: 0,
            d: 5,
        };
        let ci = ci95_delta(&t);
        assert_eq!((ci.lo_pp, ci.hi_pp), (0.0, 0.0));
        assert!(ci.degenerate);
    }

    #[test]
    fn bonferroni_examples() {
        assert_eq!(bonferroni(&[0.01, 0.02, 0.2], 3), vec![0.03, 0.06, 0.6000000000000001]);
        assert_eq!(bonferroni(&[0.5], 4), vec![1.0]);
        assert_eq!(bonferroni(&[], 0), Vec::<f64>::new());
    }

    #[test]
    fn pearson_cross_model_rows() {
        // The five (baseline, delta) validation rows: r = -0.4811, within
        // ±0.05 of the published -0.464.
        let points = [
            (58.1, 14.6),
            (65.9, 13.5),
            (65.1, 12.4),
            (70.6, 8.9),
            (63.7, 6.8),
        ];
        let r = pearson_r(&points).unwrap();
        assert!((r - (-0.48111714353235385)).abs() < 1e-12);
        assert!((r - (-0.464)).abs() < 0.05);
    }

    #[test]
    fn pearson_collinear_is_exactly_one() {
        let up = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)];
        assert_eq!(pearson_r(&up).unwrap(), 1.0);
        let down = [(0.0, 2.0), (1.0, 1.0), (2.0, 0.0)];
        assert_eq!(pearson_r(&down).unwrap(), -1.0);
    }

    #[test]
    fn pearson_degenerate_variance() {
        let flat = [(1.0, 5.0), (2.0, 5.0), (3.0, 5.0)];
        assert!(matches!(
            pearson_r(&flat),
            Err(StatsError::DegenerateVariance(_))
        ));
    }

    #[test]
    fn synergy_fixture() {
        let individual = BTreeMap::from([
            (Layer::Knowledge, 5.0),
            (Layer::Reasoning, 3.0),
            (Layer::Complexity, 0.5),
        ]);
        let report = synergy(&individual, 10.8);
        assert!((report.synergy_pp - 2.3).abs() < 1e-9);

        let additive = synergy(&individual, 8.5);
        assert_eq!(additive.synergy_pp, 0.0);

        let negative = synergy(&individual, 7.0);
        assert!(negative.synergy_pp < 0.0);
        assert!((negative.synergy_pp - (-1.5)).abs() < 1e-9);
    }

    #[test]
    fn summary_assembles_and_adjusts() {
        let outcomes = outcomes_from(500, 27, 139, 334);
        let s = summarize(&outcomes, 5).unwrap();
        assert_eq!(s.n, 1000);
        assert!((s.delta_pp - 11.2).abs() < 1e-9);
        assert!((s.p_adjusted - (s.mcnemar.p_value * 5.0).min(1.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration_oracle(b in 0u64..16, c in 0u64..16) {
            let got = mcnemar_exact(b, c).p_value;
            let want = mcnemar_exact_oracle(b, c);
            prop_assert!((got - want).abs() < 1e-9, "b={} c={} got {} want {}", b, c, got, want);
        }

        #[test]
        fn mcnemar_is_symmetric(b in 0u64..200, c in 0u64..200) {
            prop_assert_eq!(mcnemar(b, c).p_value, mcnemar(c, b).p_value);
        }

        #[test]
        fn ci_contains_point_estimate(a in 0u64..50, b in 0u64..50, c in 0u64..50, d in 0u64..50) {
            prop_assume!(a + b + c + d > 0);
            let t = Contingency { a, b, c, d };
            let ci = ci95_delta(&t);
            prop_assert!(ci.lo_pp <= t.delta_pp() + 1e-9);
            prop_assert!(ci.hi_pp >= t.delta_pp() - 1e-9);
        }

        #[test]
        fn bonferroni_is_monotone_never_lowering(ps in proptest::collection::vec(0.0f64..1.0, 0..8), extra in 0usize..5) {
            let m = ps.len() + extra;
            let adj = bonferroni(&ps, m);
            for (p, q) in ps.iter().zip(adj.iter()) {
                prop_assert!(q >= p);
                prop_assert!(*q <= 1.0);
            }
            // Order preserved under the same adjustment.
            for i in 1..ps.len() {
                if ps[i - 1] <= ps[i] {
                    prop_assert!(adj[i - 1] <= adj[i] + 1e-15);
                }
            }
        }

        #[test]
        fn pearson_affine_invariance(scale_x in 0.1f64..10.0, shift_x in -5.0f64..5.0,
                                     scale_y in 0.1f64..10.0, shift_y in -5.0f64..5.0) {
            let points = [
                (58.1, 14.6), (65.9, 13.5), (65.1, 12.4), (70.6, 8.9), (63.7, 6.8),
            ];
            let moved: Vec<(f64, f64)> = points
                .iter()
                .map(|(x, y)| (x * scale_x + shift_x, y * scale_y + shift_y))
                .collect();
            let r0 = pearson_r(&points).unwrap();
            let r1 = pearson_r(&moved).unwrap();
            prop_assert!((r0 - r1).abs() < 1e-9);
        }
    }
}
