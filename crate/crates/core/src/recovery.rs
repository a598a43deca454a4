//! Parameter recovery: bias, RMSE and out-of-range counts per replication,
//! and their aggregation over the replications of a condition.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::design::{Interval, SimulationDesign};
use crate::error::{IrtError, Result};
use crate::estimation::{IrtModel, ItemEstimates};
use crate::generators::TrueParameters;

/// Share of failed replications above which a condition is unreliable.
pub const UNRELIABLE_FAILURE_RATE: f64 = 0.20;

fn check_lengths(estimates: &[f64], truths: &[f64]) -> Result<()> {
    if estimates.len() != truths.len() {
        return Err(IrtError::Dimension(format!(
            "{} estimates against {} true values",
            estimates.len(),
            truths.len()
        )));
    }
    if estimates.is_empty() {
        return Err(IrtError::Input("no parameters to compare".into()));
    }
    Ok(())
}

/// Mean of `estimate - truth`.
pub fn bias(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_lengths(estimates, truths)?;
    let sum: f64 = estimates.iter().zip(truths).map(|(e, t)| e - t).sum();
    Ok(sum / estimates.len() as f64)
}

/// Root mean squared `estimate - truth`.
pub fn rmse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_lengths(estimates, truths)?;
    let ss: f64 = estimates.iter().zip(truths).map(|(e, t)| (e - t).powi(2)).sum();
    Ok((ss / estimates.len() as f64).sqrt())
}

/// Values strictly outside the closed interval.
pub fn count_out_of_range(estimates: &[f64], range: &Interval) -> usize {
    estimates.iter().filter(|&&x| !range.contains(x)).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub bias_a: f64,
    pub bias_b: f64,
    pub rmse_a: f64,
    pub rmse_b: f64,
    pub oob_a_count: usize,
    pub oob_b_count: usize,
    pub k: usize,
}

/// Recovery of a 2PL fit against the generating parameters.
///
/// By default estimated difficulties are compared with generating
/// difficulties (intercepts converted by `b = -d / a`). With
/// `intercept_as_difficulty` the estimated intercepts fill the difficulty slot
/// and are compared with the drawn `b` values as generated, which are
/// intercepts for slope-intercept generators.
pub fn recovery_metrics(
    est: &ItemEstimates,
    truth: &TrueParameters,
    design: &SimulationDesign,
    intercept_as_difficulty: bool,
) -> Result<RecoveryMetrics> {
    let b_hat = est.reported_difficulty(intercept_as_difficulty);
    let b_true = if intercept_as_difficulty {
        truth.b.clone()
    } else {
        truth.difficulties()
    };
    Ok(RecoveryMetrics {
        bias_a: bias(&est.a_hat, &truth.a)?,
        bias_b: bias(b_hat, &b_true)?,
        rmse_a: rmse(&est.a_hat, &truth.a)?,
        rmse_b: rmse(b_hat, &b_true)?,
        oob_a_count: count_out_of_range(&est.a_hat, &design.a_range),
        oob_b_count: count_out_of_range(b_hat, &design.b_range),
        k: est.n_items(),
    })
}

/// Per-replication inputs to a condition summary. Diagnostics that could
/// not be computed are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub metrics: RecoveryMetrics,
    pub efa_factors: Option<usize>,
    pub pa_factors: Option<usize>,
    pub q3_violation: Option<bool>,
    pub m2_p_value: Option<f64>,
    pub preferred_model: Option<IrtModel>,
}

/// Distribution of a categorical outcome over datasets, reported as the mode
/// with the counts of other values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally<T: Ord> {
    pub counts: BTreeMap<T, usize>,
}

impl<T: Ord + Clone> Tally<T> {
    pub fn from_values(values: impl IntoIterator<Item = T>) -> Self {
        let mut counts = BTreeMap::new();
        for v in values {
            *counts.entry(v).or_insert(0) += 1;
        }
        Tally { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Most frequent value; ties go to the smallest.
    pub fn mode(&self) -> Option<T> {
        let mut best: Option<(&T, usize)> = None;
        for (v, &c) in &self.counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((v, c));
            }
        }
        best.map(|(v, _)| v.clone())
    }

    /// Values other than the mode, with their counts.
    pub fn deviations(&self) -> Vec<(T, usize)> {
        let mode = self.mode();
        self.counts
            .iter()
            .filter(|(v, _)| Some(*v) != mode.as_ref())
            .map(|(v, &c)| (v.clone(), c))
            .collect()
    }
}

impl<T: Ord + Clone + fmt::Display> fmt::Display for Tally<T> {
    /// `mode (count x value, ..)`, or `-` when empty.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Some(mode) = self.mode() else {
            return write!(f, "-");
        };
        write!(f, "{mode}")?;
        let dev = self.deviations();
        if !dev.is_empty() {
            let parts: Vec<String> = dev.iter().map(|(v, c)| format!("{c} x {v}")).collect();
            write!(f, " ({})", parts.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition_id: String,
    pub n_items: usize,
    pub n_persons: usize,
    pub replications: usize,
    pub failed: usize,
    /// More than 20% of replications failed.
    pub unreliable: bool,
    pub efa_factors: Tally<usize>,
    pub pa_factors: Tally<usize>,
    pub q3_violating_datasets: usize,
    pub m2_tested: usize,
    pub m2_violations: usize,
    pub m2_violation_pct: f64,
    pub preferred_model: Tally<IrtModel>,
    pub total_oob_a: usize,
    pub total_oob_b: usize,
    pub oob_a_pct: f64,
    pub oob_b_pct: f64,
    pub mean_bias_a: f64,
    pub mean_bias_b: f64,
    pub mean_rmse_a: f64,
    pub mean_rmse_b: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Averages metrics over successful replications and tallies diagnostics.
///
/// `failed` counts replications that produced no outcome; percentages of
/// out-of-range parameters are over `successful replications x K`, and the M2
/// violation rate is over datasets where M2 was computed.
pub fn aggregate_condition(
    condition_id: &str,
    n_persons: usize,
    outcomes: &[ReplicationOutcome],
    failed: usize,
    alpha: f64,
) -> Result<ConditionSummary> {
    let Some(first) = outcomes.first() else {
        return Err(IrtError::Input(format!(
            "condition {condition_id} has no successful replications"
        )));
    };
    let k = first.metrics.k;
    if outcomes.iter().any(|o| o.metrics.k != k) {
        return Err(IrtError::Dimension(format!(
            "condition {condition_id} mixes item counts"
        )));
    }
    let n = outcomes.len();
    let replications = n + failed;
    let total_oob_a: usize = outcomes.iter().map(|o| o.metrics.oob_a_count).sum();
    let total_oob_b: usize = outcomes.iter().map(|o| o.metrics.oob_b_count).sum();
    let cells = (n * k) as f64;
    let m2: Vec<f64> = outcomes.iter().filter_map(|o| o.m2_p_value).collect();
    let m2_violations = m2.iter().filter(|&&p| p < alpha).count();
    Ok(ConditionSummary {
        condition_id: condition_id.to_string(),
        n_items: k,
        n_persons,
        replications,
        failed,
        unreliable: failed as f64 > UNRELIABLE_FAILURE_RATE * replications as f64,
        efa_factors: Tally::from_values(outcomes.iter().filter_map(|o| o.efa_factors)),
        pa_factors: Tally::from_values(outcomes.iter().filter_map(|o| o.pa_factors)),
        q3_violating_datasets: outcomes.iter().filter(|o| o.q3_violation == Some(true)).count(),
        m2_tested: m2.len(),
        m2_violations,
        m2_violation_pct: if m2.is_empty() {
            0.0
        } else {
            100.0 * m2_violations as f64 / m2.len() as f64
        },
        preferred_model: Tally::from_values(outcomes.iter().filter_map(|o| o.preferred_model)),
        total_oob_a,
        total_oob_b,
        oob_a_pct: 100.0 * total_oob_a as f64 / cells,
        oob_b_pct: 100.0 * total_oob_b as f64 / cells,
        mean_bias_a: mean(outcomes.iter().map(|o| o.metrics.bias_a)),
        mean_bias_b: mean(outcomes.iter().map(|o| o.metrics.bias_b)),
        mean_rmse_a: mean(outcomes.iter().map(|o| o.metrics.rmse_a)),
        mean_rmse_b: mean(outcomes.iter().map(|o| o.metrics.rmse_b)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn metrics(bias_a: f64, oob_a: usize) -> RecoveryMetrics {
        RecoveryMetrics {
            bias_a,
            bias_b: 0.0,
            rmse_a: bias_a.abs(),
            rmse_b: 0.0,
            oob_a_count: oob_a,
            oob_b_count: 0,
            k: 20,
        }
    }

    fn outcome(bias_a: f64, oob_a: usize) -> ReplicationOutcome {
        ReplicationOutcome {
            metrics: metrics(bias_a, oob_a),
            efa_factors: Some(1),
            pa_factors: Some(1),
            q3_violation: Some(false),
            m2_p_value: Some(0.5),
            preferred_model: Some(IrtModel::TwoPL),
        }
    }

    #[test]
    fn hand_computed_values() {
        assert_eq!(bias(&[1.2, 0.8], &[1.0, 1.0]).unwrap(), 0.0);
        assert!((rmse(&[1.2, 0.8], &[1.0, 1.0]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(bias(&[2.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(bias(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert!(matches!(bias(&[1.0], &[1.0, 2.0]), Err(IrtError::Dimension(_))));
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn out_of_range_uses_closed_interval() {
        let r = Interval::new(1.0, 2.0).unwrap();
        assert_eq!(count_out_of_range(&[0.9, 1.5, 2.1], &r), 2);
        assert_eq!(count_out_of_range(&[1.0, 2.0], &r), 0);
    }

    #[test]
    fn aggregation() {
        let s = aggregate_condition("c", 500, &[outcome(0.1, 3), outcome(-0.1, 1)], 0, 0.05).unwrap();
        assert!(s.mean_bias_a.abs() < 1e-15);
        assert_eq!(s.total_oob_a, 4);
        assert!((s.oob_a_pct - 10.0).abs() < 1e-12);
        assert_eq!(s.efa_factors.to_string(), "1");

        let one = aggregate_condition("c", 500, &[outcome(0.25, 2)], 0, 0.05).unwrap();
        assert_eq!(one.mean_bias_a, 0.25);
        assert_eq!(one.mean_rmse_a, 0.25);
        assert_eq!(one.total_oob_a, 2);

        // 222 out-of-range slopes over 100 x 20 items round to 11%
        let mut reps: Vec<ReplicationOutcome> = (0..100).map(|_| outcome(0.0, 2)).collect();
        for r in reps.iter_mut().take(22) {
            r.metrics.oob_a_count = 3;
        }
        let s = aggregate_condition("c", 500, &reps, 0, 0.05).unwrap();
        assert_eq!(s.total_oob_a, 222);
        assert_eq!(s.oob_a_pct.round(), 11.0);

        assert!(aggregate_condition("c", 500, &[], 3, 0.05).is_err());
    }

    #[test]
    fn failures_and_tallies() {
        let mut reps: Vec<ReplicationOutcome> = (0..8).map(|_| outcome(0.0, 0)).collect();
        reps[0].pa_factors = Some(2);
        reps[1].pa_factors = Some(2);
        reps[2].preferred_model = Some(IrtModel::ThreePL);
        reps[3].m2_p_value = Some(0.01);
        reps[4].m2_p_value = None;
        let s = aggregate_condition("c", 500, &reps, 2, 0.05).unwrap();
        assert_eq!(s.replications, 10);
        assert!(!s.unreliable);
        assert_eq!(s.pa_factors.to_string(), "1 (2 x 2)");
        assert_eq!(s.preferred_model.to_string(), "2PL (1 x 3PL)");
        assert_eq!((s.m2_tested, s.m2_violations), (7, 1));
        let s = aggregate_condition("c", 500, &reps[..7], 3, 0.05).unwrap();
        assert!(s.unreliable);
    }

    #[test]
    fn tally_mode_prefers_smallest_on_ties() {
        let t = Tally::from_values([2usize, 1, 2, 1]);
        assert_eq!(t.mode(), Some(1));
        assert_eq!(Tally::<usize>::from_values([]).to_string(), "-");
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|k| {
            (
                prop::collection::vec(-5.0f64..5.0, k),
                prop::collection::vec(-5.0f64..5.0, k),
            )
        })
    }

    proptest! {
        #[test]
        fn rmse_dominates_bias((est, truth) in pairs()) {
            let b = bias(&est, &truth).unwrap();
            let r = rmse(&est, &truth).unwrap();
            prop_assert!(r + 1e-12 >= b.abs());
        }

        #[test]
        fn translation_identity((est, truth) in pairs(), c in -3.0f64..3.0) {
            let b = bias(&est, &truth).unwrap();
            let r = rmse(&est, &truth).unwrap();
            let shifted: Vec<f64> = est.iter().map(|x| x + c).collect();
            let b2 = bias(&shifted, &truth).unwrap();
            let r2 = rmse(&shifted, &truth).unwrap();
            prop_assert!((b2 - (b + c)).abs() < 1e-9);
            prop_assert!((r2 * r2 - (r * r + 2.0 * c * b + c * c)).abs() < 1e-9);
        }

        #[test]
        fn widening_never_increases_count(
            est in prop::collection::vec(-4.0f64..4.0, 0..30),
            lo in -2.0f64..0.0, hi in 0.0f64..2.0, widen in 0.0f64..1.0,
        ) {
            let narrow = Interval::new(lo, hi).unwrap();
            let wide = Interval::new(lo - widen, hi + widen).unwrap();
            prop_assert!(count_out_of_range(&est, &wide) <= count_out_of_range(&est, &narrow));
        }
    }
}
