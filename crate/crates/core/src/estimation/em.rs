//! Bock-Aitkin EM: the E-step turns the current item parameters into
//! posterior-weighted expected counts at every quadrature node, the M-step
//! maximizes the expected complete-data log-likelihood item by item.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    difficulties, posterior, softplus, IrtModel, ItemEstimates, ItemTables, QuadratureGrid,
    MAX_GUESSING,
};
use crate::error::{IrtError, Result};
use crate::generators::{logistic, ResponseMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Stop once the largest absolute parameter change falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Put intercepts in the difficulty slot when computing recovery.
    pub report_intercept_as_difficulty: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            tol: 1e-4,
            max_iter: 500,
            report_intercept_as_difficulty: false,
        }
    }
}

const DEGENERATE_INTERCEPT: f64 = 10.0;
const PARAM_LIMIT: f64 = 30.0;
const GAMMA_LIMIT: f64 = 20.0;
const INITIAL_GUESSING: f64 = 0.1;
const NEWTON_MAX_ITER: usize = 50;

/// Posterior expected counts from one E-step.
pub(crate) struct ExpectedCounts {
    pub log_lik: f64,
    /// Expected number of persons at each node.
    pub n: Vec<f64>,
    /// Expected number of correct responses, item-major `[j * Q + q]`.
    pub r: Vec<f64>,
}

pub(crate) fn e_step(data: &ResponseMatrix, est: &ItemEstimates, grid: &QuadratureGrid) -> ExpectedCounts {
    let q_len = grid.len();
    let tables = ItemTables::new(est, grid);
    let log_w: Vec<f64> = grid.weights.iter().map(|w| w.ln()).collect();
    let mut n = vec![0.0; q_len];
    let mut r = vec![0.0; est.n_items() * q_len];
    let mut ll = vec![0.0; q_len];
    let mut post = vec![0.0; q_len];
    let mut log_lik = 0.0;
    for row in data.rows() {
        tables.pattern_log_lik(row, &mut ll);
        log_lik += posterior(&ll, &log_w, &mut post);
        for (acc, p) in n.iter_mut().zip(&post) {
            *acc += p;
        }
        for (j, &x) in row.iter().enumerate() {
            if x == 1 {
                for (acc, p) in r[j * q_len..(j + 1) * q_len].iter_mut().zip(&post) {
                    *acc += p;
                }
            }
        }
    }
    ExpectedCounts { log_lik, n, r }
}

/// Expected complete-data log-likelihood of one 2PL item.
fn item_objective_2pl(a: f64, d: f64, r: &[f64], n: &[f64], nodes: &[f64]) -> f64 {
    nodes
        .iter()
        .zip(r.iter().zip(n))
        .map(|(&t, (&r, &n))| {
            let z = a * t + d;
            -r * softplus(-z) - (n - r) * softplus(z)
        })
        .sum()
}

/// Gradient of the expected complete-data log-likelihood of one 2PL item
/// with respect to `(a, d)`.
pub fn item_score_2pl(a: f64, d: f64, r: &[f64], n: &[f64], nodes: &[f64]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for ((&t, &r), &n) in nodes.iter().zip(r).zip(n) {
        let resid = r - n * logistic(a * t + d);
        g[0] += resid * t;
        g[1] += resid;
    }
    g
}

/// Newton-Raphson maximizer of the 2PL item objective, started at `start`.
/// Each accepted step increases the objective.
pub fn mstep_item_2pl(r: &[f64], n: &[f64], nodes: &[f64], start: (f64, f64)) -> (f64, f64) {
    let (mut a, mut d) = start;
    let mut obj = item_objective_2pl(a, d, r, n, nodes);
    for _ in 0..NEWTON_MAX_ITER {
        let mut g = Vector2::zeros();
        let mut info = Matrix2::zeros();
        for ((&t, &r), &n) in nodes.iter().zip(r).zip(n) {
            let p = logistic(a * t + d);
            let resid = r - n * p;
            let w = n * p * (1.0 - p);
            g[0] += resid * t;
            g[1] += resid;
            info[(0, 0)] += w * t * t;
            info[(0, 1)] += w * t;
            info[(1, 1)] += w;
        }
        info[(1, 0)] = info[(0, 1)];
        let step = match info.cholesky() {
            Some(ch) => ch.solve(&g),
            None => g * 0.1,
        };
        let Some((na, nd, nobj)) = line_search(obj, step.as_slice(), |s| {
            let na = (a + s[0]).clamp(-PARAM_LIMIT, PARAM_LIMIT);
            let nd = (d + s[1]).clamp(-PARAM_LIMIT, PARAM_LIMIT);
            (item_objective_2pl(na, nd, r, n, nodes), (na, nd))
        })
        .map(|(v, (na, nd))| (na, nd, v)) else {
            break;
        };
        let moved = (na - a).abs().max((nd - d).abs());
        a = na;
        d = nd;
        obj = nobj;
        if moved < 1e-10 {
            break;
        }
    }
    (a, d)
}

/// Halves `step` until the objective does not decrease. Returns the new
/// objective and whatever `eval` produced, or `None` when no step helps.
fn line_search<T>(
    current: f64,
    step: &[f64],
    mut eval: impl FnMut(&[f64]) -> (f64, T),
) -> Option<(f64, T)> {
    let mut scale = 1.0;
    let mut scaled = step.to_vec();
    for _ in 0..40 {
        for (s, &full) in scaled.iter_mut().zip(step) {
            *s = full * scale;
        }
        let (value, out) = eval(&scaled);
        if value.is_finite() && value >= current {
            return Some((value, out));
        }
        scale *= 0.5;
    }
    None
}

fn guessing_from(gamma: f64) -> f64 {
    MAX_GUESSING * logistic(gamma)
}

fn gamma_from(c: f64) -> f64 {
    let u = (c / MAX_GUESSING).clamp(1e-9, 1.0 - 1e-9);
    (u / (1.0 - u)).ln()
}

fn item_objective_3pl(a: f64, d: f64, c: f64, r: &[f64], n: &[f64], nodes: &[f64]) -> f64 {
    nodes
        .iter()
        .zip(r.iter().zip(n))
        .map(|(&t, (&r, &n))| {
            let p = (c + (1.0 - c) * logistic(a * t + d)).clamp(1e-300, 1.0 - 1e-16);
            r * p.ln() + (n - r) * (1.0 - p).ln()
        })
        .sum()
}

/// Gradient of the 3PL item objective with respect to `(a, d, c)`.
fn item_score_3pl(a: f64, d: f64, c: f64, r: &[f64], n: &[f64], nodes: &[f64]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for ((&t, &r), &n) in nodes.iter().zip(r).zip(n) {
        let s = logistic(a * t + d);
        let p = (c + (1.0 - c) * s).clamp(1e-300, 1.0 - 1e-16);
        let u = r / p - (n - r) / (1.0 - p);
        let dz = u * (1.0 - c) * s * (1.0 - s);
        g[0] += dz * t;
        g[1] += dz;
        g[2] += u * (1.0 - s);
    }
    g
}

/// Score in the unconstrained coordinates `(a, d, gamma)`.
fn item_score_3pl_gamma(a: f64, d: f64, gamma: f64, r: &[f64], n: &[f64], nodes: &[f64]) -> Vector3<f64> {
    let c = guessing_from(gamma);
    let g = item_score_3pl(a, d, c, r, n, nodes);
    Vector3::new(g[0], g[1], g[2] * c * (1.0 - c / MAX_GUESSING))
}

fn mstep_item_3pl(r: &[f64], n: &[f64], nodes: &[f64], start: (f64, f64, f64)) -> (f64, f64, f64) {
    let (mut a, mut d, c0) = start;
    let mut gamma = gamma_from(c0);
    let mut obj = item_objective_3pl(a, d, guessing_from(gamma), r, n, nodes);
    for _ in 0..NEWTON_MAX_ITER {
        let g = item_score_3pl_gamma(a, d, gamma, r, n, nodes);
        // Hessian by central differences of the analytic score
        let h = 1e-5;
        let mut hess = Matrix3::zeros();
        for k in 0..3 {
            let mut plus = [a, d, gamma];
            let mut minus = [a, d, gamma];
            plus[k] += h;
            minus[k] -= h;
            let gp = item_score_3pl_gamma(plus[0], plus[1], plus[2], r, n, nodes);
            let gm = item_score_3pl_gamma(minus[0], minus[1], minus[2], r, n, nodes);
            hess.set_column(k, &((gp - gm) / (2.0 * h)));
        }
        let neg = -(hess + hess.transpose()) * 0.5;
        let step = match neg.cholesky() {
            Some(ch) => ch.solve(&g),
            None => g * (0.1 / (1.0 + g.norm())),
        };
        let Some((nobj, (na, nd, ng))) = line_search(obj, step.as_slice(), |s| {
            let na = (a + s[0]).clamp(-PARAM_LIMIT, PARAM_LIMIT);
            let nd = (d + s[1]).clamp(-PARAM_LIMIT, PARAM_LIMIT);
            let ng = (gamma + s[2]).clamp(-GAMMA_LIMIT, GAMMA_LIMIT);
            (item_objective_3pl(na, nd, guessing_from(ng), r, n, nodes), (na, nd, ng))
        }) else {
            break;
        };
        let moved = (na - a).abs().max((nd - d).abs()).max((ng - gamma).abs());
        a = na;
        d = nd;
        gamma = ng;
        obj = nobj;
        if moved < 1e-9 {
            break;
        }
    }
    (a, d, guessing_from(gamma))
}

/// Joint Newton step for the 1PL: common slope plus free intercepts.
fn mstep_1pl(
    counts: &ExpectedCounts,
    nodes: &[f64],
    a: &mut f64,
    d: &mut [f64],
    free: &[usize],
) {
    let q_len = nodes.len();
    let objective = |a: f64, d: &[f64]| -> f64 {
        free.iter()
            .map(|&j| item_objective_2pl(a, d[j], &counts.r[j * q_len..(j + 1) * q_len], &counts.n, nodes))
            .sum()
    };
    let m = free.len() + 1;
    let mut obj = objective(*a, d);
    for _ in 0..NEWTON_MAX_ITER {
        let mut g = DVector::zeros(m);
        let mut info = DMatrix::zeros(m, m);
        for (idx, &j) in free.iter().enumerate() {
            let r = &counts.r[j * q_len..(j + 1) * q_len];
            for q in 0..q_len {
                let t = nodes[q];
                let p = logistic(*a * t + d[j]);
                let resid = r[q] - counts.n[q] * p;
                let w = counts.n[q] * p * (1.0 - p);
                g[0] += resid * t;
                g[idx + 1] += resid;
                info[(0, 0)] += w * t * t;
                info[(0, idx + 1)] += w * t;
                info[(idx + 1, idx + 1)] += w;
            }
            info[(idx + 1, 0)] = info[(0, idx + 1)];
        }
        let step = match info.cholesky() {
            Some(ch) => ch.solve(&g),
            None => &g * 0.1,
        };
        let base_a = *a;
        let base_d = d.to_vec();
        let accepted = line_search(obj, step.as_slice(), |s| {
            let na = (base_a + s[0]).clamp(-PARAM_LIMIT, PARAM_LIMIT);
            let mut nd = base_d.clone();
            for (idx, &j) in free.iter().enumerate() {
                nd[j] = (base_d[j] + s[idx + 1]).clamp(-PARAM_LIMIT, PARAM_LIMIT);
            }
            (objective(na, &nd), (na, nd))
        });
        let Some((nobj, (na, nd))) = accepted else {
            break;
        };
        let moved = free
            .iter()
            .map(|&j| (nd[j] - d[j]).abs())
            .fold((na - *a).abs(), f64::max);
        *a = na;
        d.copy_from_slice(&nd);
        obj = nobj;
        if moved < 1e-10 {
            break;
        }
    }
}

fn build(model: IrtModel, a: &[f64], d: &[f64], c: Option<&[f64]>) -> ItemEstimates {
    ItemEstimates {
        model,
        a_hat: a.to_vec(),
        d_hat: d.to_vec(),
        b_hat: difficulties(a, d),
        c_hat: c.map(|c| c.to_vec()),
        log_lik: f64::NAN,
        n_params: model.n_params(a.len()),
        converged: false,
        n_iterations: 0,
        degenerate_items: Vec::new(),
        log_lik_trace: Vec::new(),
    }
}

/// Fits `model` to `data` by marginal maximum likelihood.
///
/// Starting values are `a = 1`, `d = logit(proportion correct)` and `c = 0.1`.
/// Slopes are unconstrained in sign. Items answered identically by everyone
/// are held at `a = 1`, `d = +-10` (and `c = 0`) and listed in
/// `degenerate_items`.
pub fn fit_mml(
    data: &ResponseMatrix,
    model: IrtModel,
    grid: &QuadratureGrid,
    settings: &FitSettings,
) -> Result<ItemEstimates> {
    if !(settings.tol > 0.0) || settings.max_iter == 0 {
        return Err(IrtError::Config(
            "fit settings need a positive tolerance and iteration cap".into(),
        ));
    }
    let k = data.n_items();
    let q_len = grid.len();
    let nodes = &grid.nodes;
    let sums = data.column_sums();
    let n_persons = data.n_persons();
    let degenerate: Vec<usize> = (0..k)
        .filter(|&j| sums[j] == 0 || sums[j] == n_persons)
        .collect();
    let free: Vec<usize> = (0..k).filter(|j| !degenerate.contains(j)).collect();

    let mut a = vec![1.0; k];
    let mut d: Vec<f64> = sums
        .iter()
        .map(|&s| {
            if s == 0 {
                -DEGENERATE_INTERCEPT
            } else if s == n_persons {
                DEGENERATE_INTERCEPT
            } else {
                let p = (s as f64 / n_persons as f64).clamp(1e-3, 1.0 - 1e-3);
                (p / (1.0 - p)).ln()
            }
        })
        .collect();
    let mut c: Option<Vec<f64>> = (model == IrtModel::ThreePL).then(|| {
        (0..k)
            .map(|j| if degenerate.contains(&j) { 0.0 } else { INITIAL_GUESSING })
            .collect()
    });
    let mut common_a = 1.0;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iter {
        iterations += 1;
        let est = build(model, &a, &d, c.as_deref());
        let counts = e_step(data, &est, grid);
        trace.push(counts.log_lik);

        let mut change: f64 = 0.0;
        match model {
            IrtModel::OnePL => {
                let old_a = common_a;
                let old_d = d.clone();
                mstep_1pl(&counts, nodes, &mut common_a, &mut d, &free);
                change = free
                    .iter()
                    .map(|&j| (d[j] - old_d[j]).abs())
                    .fold((common_a - old_a).abs(), f64::max);
                for &j in &free {
                    a[j] = common_a;
                }
            }
            IrtModel::TwoPL => {
                for &j in &free {
                    let r = &counts.r[j * q_len..(j + 1) * q_len];
                    let (na, nd) = mstep_item_2pl(r, &counts.n, nodes, (a[j], d[j]));
                    change = change.max((na - a[j]).abs()).max((nd - d[j]).abs());
                    a[j] = na;
                    d[j] = nd;
                }
            }
            IrtModel::ThreePL => {
                let cs = c.as_mut().expect("3PL carries guessing parameters");
                for &j in &free {
                    let r = &counts.r[j * q_len..(j + 1) * q_len];
                    let (na, nd, nc) = mstep_item_3pl(r, &counts.n, nodes, (a[j], d[j], cs[j]));
                    change = change
                        .max((na - a[j]).abs())
                        .max((nd - d[j]).abs())
                        .max((nc - cs[j]).abs());
                    a[j] = na;
                    d[j] = nd;
                    cs[j] = nc;
                }
            }
        }
        if change < settings.tol {
            converged = true;
            break;
        }
    }

    let mut est = build(model, &a, &d, c.as_deref());
    let final_ll = super::log_likelihood(data, &est, grid)?;
    trace.push(final_ll);
    est.log_lik = final_ll;
    est.converged = converged;
    est.n_iterations = iterations;
    est.degenerate_items = degenerate;
    est.log_lik_trace = trace;
    Ok(est)
}

/// Analytic gradient of the marginal log-likelihood at `est`.
///
/// Ordering: 1PL `[a, d_1, .., d_K]`; 2PL `[a_1, d_1, a_2, d_2, ..]`;
/// 3PL `[a_1, d_1, c_1, a_2, ..]`.
pub fn marginal_gradient(
    data: &ResponseMatrix,
    est: &ItemEstimates,
    grid: &QuadratureGrid,
) -> Result<Vec<f64>> {
    if data.n_items() != est.n_items() {
        return Err(IrtError::Dimension(format!(
            "data has {} items, estimates {}",
            data.n_items(),
            est.n_items()
        )));
    }
    let counts = e_step(data, est, grid);
    let q_len = grid.len();
    let k = est.n_items();
    let slice = |j: usize| &counts.r[j * q_len..(j + 1) * q_len];
    Ok(match est.model {
        IrtModel::OnePL => {
            let mut g = vec![0.0; k + 1];
            for j in 0..k {
                let s = item_score_2pl(est.a_hat[j], est.d_hat[j], slice(j), &counts.n, &grid.nodes);
                g[0] += s[0];
                g[j + 1] = s[1];
            }
            g
        }
        IrtModel::TwoPL => (0..k)
            .flat_map(|j| item_score_2pl(est.a_hat[j], est.d_hat[j], slice(j), &counts.n, &grid.nodes))
            .collect(),
        IrtModel::ThreePL => (0..k)
            .flat_map(|j| {
                item_score_3pl(est.a_hat[j], est.d_hat[j], est.guessing(j), slice(j), &counts.n, &grid.nodes)
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{Condition, GeneratorKind, SimulationDesign};
    use crate::estimation::make_grid;
    use crate::generators::simulate_dataset;

    fn a2_data(k: usize, n: usize, seed: u64) -> (crate::generators::TrueParameters, ResponseMatrix) {
        simulate_dataset(&Condition::new(GeneratorKind::A2, k, n), &SimulationDesign::default(), seed).unwrap()
    }

    #[test]
    fn em_trace_is_monotone_for_every_model() {
        let grid = QuadratureGrid::default();
        let (_, data) = a2_data(10, 400, 11);
        for model in [IrtModel::OnePL, IrtModel::TwoPL, IrtModel::ThreePL] {
            let est = fit_mml(&data, model, &grid, &FitSettings::default()).unwrap();
            for w in est.log_lik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{model}: {} -> {}", w[0], w[1]);
            }
            assert_eq!(est.n_params, model.n_params(10));
            assert!(est.converged, "{model} did not converge");
        }
    }

    #[test]
    fn mstep_score_vanishes_at_optimum() {
        let grid = QuadratureGrid::default();
        let (_, data) = a2_data(8, 300, 3);
        let est = fit_mml(&data, IrtModel::TwoPL, &grid, &FitSettings::default()).unwrap();
        let counts = e_step(&data, &est, &grid);
        let q = grid.len();
        for j in 0..8 {
            let r = &counts.r[j * q..(j + 1) * q];
            let (a, d) = mstep_item_2pl(r, &counts.n, &grid.nodes, (1.0, 0.0));
            let g = item_score_2pl(a, d, r, &counts.n, &grid.nodes);
            assert!((g[0].powi(2) + g[1].powi(2)).sqrt() < 1e-6, "{g:?}");
        }
    }

    #[test]
    fn degenerate_columns_are_clamped() {
        let grid = make_grid(31, 5.0).unwrap();
        let (_, mut data) = a2_data(6, 200, 5);
        for i in 0..200 {
            data.set(i, 2, true);
            data.set(i, 4, false);
        }
        for model in [IrtModel::OnePL, IrtModel::TwoPL, IrtModel::ThreePL] {
            let est = fit_mml(&data, model, &grid, &FitSettings::default()).unwrap();
            assert_eq!(est.degenerate_items, vec![2, 4]);
            assert_eq!(est.d_hat[2], 10.0);
            assert_eq!(est.d_hat[4], -10.0);
            assert_eq!(est.a_hat[2], 1.0);
            assert!(est.log_lik.is_finite());
        }
    }

    #[test]
    fn guessing_stays_bounded() {
        let grid = QuadratureGrid::default();
        let (_, data) = a2_data(10, 300, 8);
        let est = fit_mml(&data, IrtModel::ThreePL, &grid, &FitSettings::default()).unwrap();
        let c = est.c_hat.as_ref().unwrap();
        assert!(c.iter().all(|&c| (0.0..=MAX_GUESSING).contains(&c)));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let grid = QuadratureGrid::default();
        let (_, data) = a2_data(10, 300, 1);
        let settings = FitSettings {
            max_iter: 2,
            ..FitSettings::default()
        };
        let est = fit_mml(&data, IrtModel::TwoPL, &grid, &settings).unwrap();
        assert!(!est.converged);
        assert_eq!(est.n_iterations, 2);
        assert!(fit_mml(&data, IrtModel::TwoPL, &grid, &FitSettings { tol: 0.0, ..settings }).is_err());
    }

    #[test]
    fn nested_models_order_log_likelihoods() {
        let grid = QuadratureGrid::default();
        let (_, data) = a2_data(10, 500, 21);
        let s = FitSettings::default();
        let l1 = fit_mml(&data, IrtModel::OnePL, &grid, &s).unwrap().log_lik;
        let l2 = fit_mml(&data, IrtModel::TwoPL, &grid, &s).unwrap().log_lik;
        assert!(l2 >= l1 - 1e-6, "{l1} {l2}");
    }
}
