use serde::{Deserialize, Serialize};

use super::{posterior, ItemEstimates, ItemTables, QuadratureGrid};
use crate::error::{IrtError, Result};
use crate::generators::ResponseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimates {
    pub theta_hat: Vec<f64>,
    pub posterior_sd: Vec<f64>,
}

fn check_dims(data: &ResponseMatrix, est: &ItemEstimates) -> Result<()> {
    if data.n_items() != est.n_items() {
        return Err(IrtError::Dimension(format!(
            "data has {} items, estimates have {}",
            data.n_items(),
            est.n_items()
        )));
    }
    Ok(())
}

/// Expected a posteriori abilities: posterior mean and standard deviation of
/// theta over the grid, with the grid weights as prior.
pub fn eap_scores(
    data: &ResponseMatrix,
    est: &ItemEstimates,
    grid: &QuadratureGrid,
) -> Result<AbilityEstimates> {
    check_dims(data, est)?;
    let tables = ItemTables::new(est, grid);
    let log_w: Vec<f64> = grid.weights.iter().map(|w| w.ln()).collect();
    let q_len = grid.len();
    let mut ll = vec![0.0; q_len];
    let mut post = vec![0.0; q_len];
    let mut theta_hat = Vec::with_capacity(data.n_persons());
    let mut posterior_sd = Vec::with_capacity(data.n_persons());
    for row in data.rows() {
        tables.pattern_log_lik(row, &mut ll);
        posterior(&ll, &log_w, &mut post);
        let mean: f64 = post.iter().zip(&grid.nodes).map(|(p, t)| p * t).sum();
        let var: f64 = post
            .iter()
            .zip(&grid.nodes)
            .map(|(p, t)| p * (t - mean).powi(2))
            .sum();
        theta_hat.push(mean);
        posterior_sd.push(var.max(0.0).sqrt());
    }
    Ok(AbilityEstimates {
        theta_hat,
        posterior_sd,
    })
}

/// Marginal log-likelihood of every response pattern.
pub fn person_log_likelihoods(
    data: &ResponseMatrix,
    est: &ItemEstimates,
    grid: &QuadratureGrid,
) -> Result<Vec<f64>> {
    check_dims(data, est)?;
    let tables = ItemTables::new(est, grid);
    let log_w: Vec<f64> = grid.weights.iter().map(|w| w.ln()).collect();
    let mut ll = vec![0.0; grid.len()];
    let mut post = vec![0.0; grid.len()];
    Ok(data
        .rows()
        .map(|row| {
            tables.pattern_log_lik(row, &mut ll);
            posterior(&ll, &log_w, &mut post)
        })
        .collect())
}

/// `sum_i log sum_q w_q prod_j P_j(node_q)^x_ij (1 - P_j(node_q))^(1 - x_ij)`
pub fn log_likelihood(
    data: &ResponseMatrix,
    est: &ItemEstimates,
    grid: &QuadratureGrid,
) -> Result<f64> {
    Ok(person_log_likelihoods(data, est, grid)?.iter().sum())
}
