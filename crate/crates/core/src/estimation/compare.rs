use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{IrtModel, ItemEstimates};
use crate::error::{IrtError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRatioTest {
    pub reduced: IrtModel,
    pub full: IrtModel,
    /// `(-2LL_reduced) - (-2LL_full)`
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub pairs: Vec<LikelihoodRatioTest>,
    pub preferred: IrtModel,
    pub alpha: f64,
    /// Set when a fit did not converge or the deviances contradict nesting.
    pub unreliable: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Upper-tail chi-square probability.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if df == 0 {
        return if x > 0.0 { 0.0 } else { 1.0 };
    }
    if x <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    dist.sf(x).clamp(0.0, 1.0)
}

const NESTING_TOL: f64 = 1e-6;

fn lr_test(reduced: &ItemEstimates, full: &ItemEstimates) -> LikelihoodRatioTest {
    let chi2 = reduced.deviance() - full.deviance();
    let df = full.n_params - reduced.n_params;
    LikelihoodRatioTest {
        reduced: reduced.model,
        full: full.model,
        chi2,
        df,
        p_value: chi2_sf(chi2, df),
    }
}

/// Likelihood-ratio tests 1PL vs 2PL and 2PL vs 3PL.
///
/// The preferred model is the 3PL when 2PL vs 3PL is significant, otherwise
/// the 2PL when 1PL vs 2PL is significant, otherwise the 1PL.
pub fn compare_nested(fits: &[ItemEstimates], alpha: f64) -> Result<ModelComparison> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(IrtError::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let find = |m: IrtModel| {
        fits.iter()
            .find(|f| f.model == m)
            .ok_or_else(|| IrtError::Input(format!("no {m} fit supplied for the nested comparison")))
    };
    let one = find(IrtModel::OnePL)?;
    let two = find(IrtModel::TwoPL)?;
    let three = find(IrtModel::ThreePL)?;
    if one.n_items() != two.n_items() || two.n_items() != three.n_items() {
        return Err(IrtError::Dimension("fits cover different item sets".into()));
    }

    let pairs = vec![lr_test(one, two), lr_test(two, three)];
    let mut notes = Vec::new();
    for f in [one, two, three] {
        if !f.converged {
            notes.push(format!("{} fit did not converge", f.model));
        }
        if !f.log_lik.is_finite() {
            notes.push(format!("{} log-likelihood is not finite", f.model));
        }
    }
    for p in &pairs {
        if p.chi2 < -NESTING_TOL {
            notes.push(format!(
                "{} deviance below {} deviance by {:.3e}",
                p.reduced,
                p.full,
                -p.chi2
            ));
        }
    }
    let significant = |p: &LikelihoodRatioTest| p.p_value < alpha;
    let preferred = if significant(&pairs[1]) {
        IrtModel::ThreePL
    } else if significant(&pairs[0]) {
        IrtModel::TwoPL
    } else {
        IrtModel::OnePL
    };
    Ok(ModelComparison {
        pairs,
        preferred,
        alpha,
        unreliable: !notes.is_empty(),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(model: IrtModel, k: usize, ll: f64) -> ItemEstimates {
        let c = (model == IrtModel::ThreePL).then(|| vec![0.0; k]);
        let mut e = ItemEstimates::from_parameters(model, vec![1.0; k], vec![0.0; k], c).unwrap();
        e.log_lik = ll;
        e
    }

    #[test]
    fn equal_likelihoods_prefer_simplest() {
        let fits = [fit(IrtModel::OnePL, 20, -100.0), fit(IrtModel::TwoPL, 20, -100.0), fit(IrtModel::ThreePL, 20, -100.0)];
        let cmp = compare_nested(&fits, 0.05).unwrap();
        assert_eq!(cmp.pairs[0].chi2, 0.0);
        assert_eq!(cmp.pairs[0].p_value, 1.0);
        assert_eq!(cmp.pairs[0].df, 19);
        assert_eq!(cmp.pairs[1].df, 20);
        assert_eq!(cmp.preferred, IrtModel::OnePL);
        assert!(!cmp.unreliable);
    }

    #[test]
    fn preference_rules() {
        let k = 20;
        let two = compare_nested(&[fit(IrtModel::OnePL, k, -200.0), fit(IrtModel::TwoPL, k, -150.0), fit(IrtModel::ThreePL, k, -149.0)], 0.05).unwrap();
        assert_eq!(two.preferred, IrtModel::TwoPL);
        let three = compare_nested(&[fit(IrtModel::OnePL, k, -200.0), fit(IrtModel::TwoPL, k, -150.0), fit(IrtModel::ThreePL, k, -100.0)], 0.05).unwrap();
        assert_eq!(three.preferred, IrtModel::ThreePL);
    }

    #[test]
    fn broken_nesting_is_flagged() {
        let mut f3 = fit(IrtModel::ThreePL, 5, -160.0);
        f3.converged = false;
        let cmp = compare_nested(&[fit(IrtModel::OnePL, 5, -170.0), fit(IrtModel::TwoPL, 5, -150.0), f3], 0.05).unwrap();
        assert!(cmp.unreliable);
        assert_eq!(cmp.notes.len(), 2);
        assert!(compare_nested(&[fit(IrtModel::OnePL, 5, -1.0)], 0.05).is_err());
    }

    #[test]
    fn chi2_tail() {
        assert_eq!(chi2_sf(0.0, 5), 1.0);
        assert!((chi2_sf(3.841_458_820_694_124, 1) - 0.05).abs() < 1e-9);
        assert!((chi2_sf(31.410_432_844_230_918, 20) - 0.05).abs() < 1e-9);
    }
}
