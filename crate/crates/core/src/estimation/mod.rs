//! Marginal maximum likelihood for unidimensional logistic models.
//!
//! Items are fitted in slope-intercept form `P = c + (1 - c) logistic(a theta + d)`
//! with `c = 0` outside the 3PL. The latent trait is integrated over a fixed
//! grid of equally spaced nodes carrying normalized standard-normal weights.

mod compare;
mod em;
mod scoring;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IrtError, Result};
use crate::generators::logistic;

pub use compare::{chi2_sf, compare_nested, LikelihoodRatioTest, ModelComparison};
pub use em::{fit_mml, item_score_2pl, marginal_gradient, mstep_item_2pl, FitSettings};
pub use scoring::{eap_scores, log_likelihood, person_log_likelihoods, AbilityEstimates};

pub const DEFAULT_QUAD_POINTS: usize = 61;
pub const DEFAULT_QUAD_BOUND: f64 = 6.0;

/// Upper bound on the lower asymptote of 3PL items.
pub const MAX_GUESSING: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| x * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * (x - m).powi(2))
            .sum()
    }
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        make_grid(DEFAULT_QUAD_POINTS, DEFAULT_QUAD_BOUND).expect("default grid is valid")
    }
}

/// `n_points` equally spaced nodes on `[-bound, bound]`, weights proportional
/// to the standard-normal density and normalized to sum to one.
pub fn make_grid(n_points: usize, bound: f64) -> Result<QuadratureGrid> {
    if n_points < 11 {
        return Err(IrtError::Config(format!(
            "quadrature needs at least 11 points, got {n_points}"
        )));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(IrtError::Config(format!(
            "quadrature bound must be positive, got {bound}"
        )));
    }
    let span = (n_points - 1) as f64;
    // mirrored exactly: node[q] == -node[n - 1 - q]
    let nodes: Vec<f64> = (0..n_points)
        .map(|q| bound * (2.0 * q as f64 - span) / span)
        .collect();
    let dens: Vec<f64> = nodes.iter().map(|x| (-0.5 * x * x).exp()).collect();
    // pairwise-symmetric summation keeps the weights exactly mirrored
    let total: f64 = (0..n_points / 2)
        .map(|q| dens[q] + dens[n_points - 1 - q])
        .sum::<f64>()
        + if n_points % 2 == 1 { dens[n_points / 2] } else { 0.0 };
    let weights = dens.iter().map(|d| d / total).collect();
    Ok(QuadratureGrid { nodes, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IrtModel {
    #[serde(rename = "1PL")]
    OnePL,
    #[serde(rename = "2PL")]
    TwoPL,
    #[serde(rename = "3PL")]
    ThreePL,
}

impl IrtModel {
    pub fn n_params(self, n_items: usize) -> usize {
        match self {
            IrtModel::OnePL => n_items + 1,
            IrtModel::TwoPL => 2 * n_items,
            IrtModel::ThreePL => 3 * n_items,
        }
    }
}

impl fmt::Display for IrtModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IrtModel::OnePL => "1PL",
            IrtModel::TwoPL => "2PL",
            IrtModel::ThreePL => "3PL",
        })
    }
}

impl FromStr for IrtModel {
    type Err = IrtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1pl" => Ok(IrtModel::OnePL),
            "2pl" => Ok(IrtModel::TwoPL),
            "3pl" => Ok(IrtModel::ThreePL),
            other => Err(IrtError::Config(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEstimates {
    pub model: IrtModel,
    pub a_hat: Vec<f64>,
    pub d_hat: Vec<f64>,
    /// `-d_hat / a_hat`
    pub b_hat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_hat: Option<Vec<f64>>,
    pub log_lik: f64,
    pub n_params: usize,
    pub converged: bool,
    pub n_iterations: usize,
    /// Items with a constant response column; their parameters are clamped.
    #[serde(default)]
    pub degenerate_items: Vec<usize>,
    /// Marginal log-likelihood at the start of every EM iteration, then at
    /// the final estimates.
    #[serde(skip)]
    pub log_lik_trace: Vec<f64>,
}

impl ItemEstimates {
    /// Estimates built from known parameters, with `log_lik` left as NaN.
    pub fn from_parameters(
        model: IrtModel,
        a: Vec<f64>,
        d: Vec<f64>,
        c: Option<Vec<f64>>,
    ) -> Result<Self> {
        if a.len() != d.len() || c.as_ref().is_some_and(|c| c.len() != a.len()) {
            return Err(IrtError::Dimension("item parameter vectors differ in length".into()));
        }
        if (model == IrtModel::ThreePL) != c.is_some() {
            return Err(IrtError::Input(
                "guessing parameters are required for, and only for, the 3PL".into(),
            ));
        }
        let n_params = model.n_params(a.len());
        Ok(ItemEstimates {
            model,
            b_hat: difficulties(&a, &d),
            a_hat: a,
            d_hat: d,
            c_hat: c,
            log_lik: f64::NAN,
            n_params,
            converged: true,
            n_iterations: 0,
            degenerate_items: Vec::new(),
            log_lik_trace: Vec::new(),
        })
    }

    pub fn n_items(&self) -> usize {
        self.a_hat.len()
    }

    #[inline]
    pub fn guessing(&self, item: usize) -> f64 {
        self.c_hat.as_ref().map_or(0.0, |c| c[item])
    }

    /// Probability of a correct response to `item` at ability `theta`.
    #[inline]
    pub fn probability(&self, item: usize, theta: f64) -> f64 {
        let p = logistic(self.a_hat[item] * theta + self.d_hat[item]);
        let c = self.guessing(item);
        c + (1.0 - c) * p
    }

    /// Values placed in the difficulty slot for recovery: `b_hat`, or the
    /// intercepts when `intercept_as_difficulty` is set.
    pub fn reported_difficulty(&self, intercept_as_difficulty: bool) -> &[f64] {
        if intercept_as_difficulty {
            &self.d_hat
        } else {
            &self.b_hat
        }
    }

    pub fn deviance(&self) -> f64 {
        -2.0 * self.log_lik
    }
}

pub(crate) fn difficulties(a: &[f64], d: &[f64]) -> Vec<f64> {
    a.iter().zip(d).map(|(a, d)| -d / a).collect()
}

/// Per-item, per-node log probabilities for a fixed set of estimates.
/// Layout is item-major so that summing over a person's correct items walks
/// contiguous memory.
pub(crate) struct ItemTables {
    pub n_nodes: usize,
    /// `log(1 - P_j(node_q))`, summed over items, per node.
    pub base: Vec<f64>,
    /// `log P - log(1 - P)`, item-major `[j * Q + q]`.
    pub log_odds: Vec<f64>,
}

impl ItemTables {
    pub fn new(est: &ItemEstimates, grid: &QuadratureGrid) -> Self {
        let q_len = grid.len();
        let k = est.n_items();
        let mut base = vec![0.0; q_len];
        let mut log_odds = vec![0.0; k * q_len];
        for j in 0..k {
            for (q, &theta) in grid.nodes.iter().enumerate() {
                let p = est.probability(j, theta).clamp(1e-300, 1.0 - 1e-16);
                let (lp, lq) = log_probs(p, est.a_hat[j] * theta + est.d_hat[j], est.guessing(j));
                base[q] += lq;
                log_odds[j * q_len + q] = lp - lq;
            }
        }
        ItemTables {
            n_nodes: q_len,
            base,
            log_odds,
        }
    }

    /// Log-likelihood of one response pattern at every node.
    #[inline]
    pub fn pattern_log_lik(&self, row: &[u8], out: &mut [f64]) {
        out.copy_from_slice(&self.base);
        let q_len = self.n_nodes;
        for (j, &x) in row.iter().enumerate() {
            if x == 1 {
                let lo = &self.log_odds[j * q_len..(j + 1) * q_len];
                for (o, l) in out.iter_mut().zip(lo) {
                    *o += l;
                }
            }
        }
    }
}

/// `(log P, log(1 - P))`, computed from the linear predictor when there is no
/// guessing so that tails stay accurate.
#[inline]
fn log_probs(p: f64, z: f64, c: f64) -> (f64, f64) {
    if c == 0.0 {
        (-softplus(-z), -softplus(z))
    } else {
        (p.ln(), (1.0 - p).ln())
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log sum exp(v_q + log w_q)` together with the normalized posterior.
#[inline]
pub(crate) fn posterior(log_lik: &[f64], log_weights: &[f64], post: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (p, (l, lw)) in post.iter_mut().zip(log_lik.iter().zip(log_weights)) {
        *p = l + lw;
        if *p > max {
            max = *p;
        }
    }
    let mut total = 0.0;
    for p in post.iter_mut() {
        *p = (*p - max).exp();
        total += *p;
    }
    for p in post.iter_mut() {
        *p /= total;
    }
    max + total.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_shape() {
        let g = make_grid(61, 6.0).unwrap();
        assert_eq!(g.len(), 61);
        assert_eq!(g.nodes[30], 0.0);
        assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
        for q in 0..61 {
            assert_eq!(g.weights[q], g.weights[60 - q]);
            assert!(g.weights[q] > 0.0);
        }
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.mean().abs() < 1e-12);
        assert!((g.variance() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn grid_preconditions() {
        assert!(make_grid(10, 6.0).is_err());
        assert!(make_grid(21, 0.0).is_err());
        assert!(make_grid(21, -1.0).is_err());
        assert_eq!(make_grid(11, 4.0).unwrap().len(), 11);
    }

    #[test]
    fn param_counts() {
        assert_eq!(IrtModel::OnePL.n_params(20), 21);
        assert_eq!(IrtModel::TwoPL.n_params(20), 40);
        assert_eq!(IrtModel::ThreePL.n_params(20), 60);
    }

    #[test]
    fn difficulty_identity() {
        let est = ItemEstimates::from_parameters(
            IrtModel::TwoPL,
            vec![1.2, 0.7, -0.4],
            vec![0.3, -1.1, 0.9],
            None,
        )
        .unwrap();
        for j in 0..3 {
            assert!((est.d_hat[j] + est.a_hat[j] * est.b_hat[j]).abs() < 1e-10);
        }
        assert_eq!(est.reported_difficulty(true), est.d_hat.as_slice());
        assert_eq!(est.reported_difficulty(false), est.b_hat.as_slice());
    }

    #[test]
    fn model_parsing() {
        assert_eq!("2pl".parse::<IrtModel>().unwrap(), IrtModel::TwoPL);
        assert_eq!("3PL".parse::<IrtModel>().unwrap(), IrtModel::ThreePL);
        assert!("4pl".parse::<IrtModel>().is_err());
        assert_eq!(IrtModel::OnePL.to_string(), "1PL");
    }
}
