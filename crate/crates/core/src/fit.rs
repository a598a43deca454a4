//! Local independence and limited-information fit: Yen's Q3 residual
//! correlations and the M2 statistic over first- and second-order margins.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{IrtError, Result};
use crate::estimation::{chi2_sf, AbilityEstimates, IrtModel, ItemEstimates, QuadratureGrid};
use crate::generators::ResponseMatrix;

pub const DEFAULT_Q3_THRESHOLD: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Q3Settings {
    pub threshold: f64,
    /// Flag `|Q3| > threshold` rather than `Q3 > threshold`.
    pub two_sided: bool,
}

impl Default for Q3Settings {
    fn default() -> Self {
        Q3Settings {
            threshold: DEFAULT_Q3_THRESHOLD,
            two_sided: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Q3Violation {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q3Report {
    /// Symmetric with unit diagonal; `None` where a residual column has no
    /// variance.
    pub q3: Vec<Vec<Option<f64>>>,
    pub threshold: f64,
    pub two_sided: bool,
    pub violations: Vec<Q3Violation>,
    #[serde(default)]
    pub undefined_pairs: Vec<(usize, usize)>,
}

impl Q3Report {
    pub fn has_violation(&self) -> bool {
        !self.violations.is_empty()
    }

    /// Largest off-diagonal `|Q3|` among defined pairs.
    pub fn max_abs(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, row) in self.q3.iter().enumerate() {
            for v in row.iter().skip(i + 1).flatten() {
                best = best.max(v.abs());
            }
        }
        best
    }
}

/// Yen's Q3: correlations of the residuals `x_ij - P_j(theta_i)` between item
/// pairs, with `theta_i` the supplied point estimates.
pub fn yen_q3(
    data: &ResponseMatrix,
    est: &ItemEstimates,
    ability: &AbilityEstimates,
    settings: &Q3Settings,
) -> Result<Q3Report> {
    let k = data.n_items();
    let n = data.n_persons();
    if est.n_items() != k || ability.theta_hat.len() != n {
        return Err(IrtError::Dimension(format!(
            "data is {n} x {k}, estimates cover {} items and {} persons",
            est.n_items(),
            ability.theta_hat.len()
        )));
    }
    // centered residual columns
    let mut resid = vec![vec![0.0; n]; k];
    for (i, row) in data.rows().enumerate() {
        let theta = ability.theta_hat[i];
        for j in 0..k {
            resid[j][i] = row[j] as f64 - est.probability(j, theta);
        }
    }
    let mut norms = vec![0.0; k];
    for (col, norm) in resid.iter_mut().zip(norms.iter_mut()) {
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|e| *e -= mean);
        *norm = col.iter().map(|e| e * e).sum::<f64>().sqrt();
    }
    let defined: Vec<bool> = norms.iter().map(|&s| s > 1e-12 * (n as f64).sqrt()).collect();
    let mut q3 = vec![vec![None; k]; k];
    let mut violations = Vec::new();
    let mut undefined_pairs = Vec::new();
    for j in 0..k {
        q3[j][j] = Some(1.0);
        for l in j + 1..k {
            if !(defined[j] && defined[l]) {
                undefined_pairs.push((j, l));
                continue;
            }
            let dot: f64 = resid[j].iter().zip(&resid[l]).map(|(x, y)| x * y).sum();
            let r = (dot / (norms[j] * norms[l])).clamp(-1.0, 1.0);
            q3[j][l] = Some(r);
            q3[l][j] = Some(r);
            let flagged = if settings.two_sided {
                r.abs() > settings.threshold
            } else {
                r > settings.threshold
            };
            if flagged {
                violations.push(Q3Violation { i: j, j: l, value: r });
            }
        }
    }
    Ok(Q3Report {
        q3,
        threshold: settings.threshold,
        two_sided: settings.two_sided,
        violations,
        undefined_pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M2Result {
    pub m2: f64,
    pub df: usize,
    pub p_value: f64,
    pub n_margins: usize,
    pub n_free_params: usize,
    /// Set when the margin covariance was not positive definite and a
    /// pseudo-inverse was used.
    #[serde(default)]
    pub pseudo_inverse: bool,
}

/// Item pairs `(j, k)`, `j < k`, in the order used for second-order margins.
pub fn margin_pairs(n_items: usize) -> Vec<(usize, usize)> {
    (0..n_items)
        .flat_map(|j| (j + 1..n_items).map(move |k| (j, k)))
        .collect()
}

/// Sample proportions: `K` first-order margins, then the pairwise margins.
pub fn observed_margins(data: &ResponseMatrix) -> Vec<f64> {
    let k = data.n_items();
    let n = data.n_persons() as f64;
    let pairs = margin_pairs(k);
    let mut counts = vec![0usize; k + pairs.len()];
    let mut ones = Vec::with_capacity(k);
    for row in data.rows() {
        ones.clear();
        ones.extend((0..k).filter(|&j| row[j] == 1));
        for (a, &j) in ones.iter().enumerate() {
            counts[j] += 1;
            for &l in &ones[a + 1..] {
                counts[k + pair_index(k, j, l)] += 1;
            }
        }
    }
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Position of `(j, l)`, `j < l`, within [`margin_pairs`].
#[inline]
fn pair_index(k: usize, j: usize, l: usize) -> usize {
    j * (2 * k - j - 1) / 2 + (l - j - 1)
}

/// Per-node products `A_s(q) = prod_{j in s} P_j(node_q)` for every margin.
struct MarginTable {
    k: usize,
    q_len: usize,
    items: Vec<Vec<usize>>,
    /// margin-major `[s * Q + q]`
    prod: Vec<f64>,
    probs: Vec<f64>,
}

impl MarginTable {
    fn new(est: &ItemEstimates, grid: &QuadratureGrid) -> Result<Self> {
        if est.model != IrtModel::TwoPL {
            return Err(IrtError::Input(format!(
                "M2 is implemented for the 2PL, got {}",
                est.model
            )));
        }
        let k = est.n_items();
        if k < 3 {
            return Err(IrtError::Dimension(format!(
                "M2 needs at least 3 items for positive degrees of freedom, got {k}"
            )));
        }
        let q_len = grid.len();
        let mut probs = vec![0.0; k * q_len];
        for j in 0..k {
            for (q, &t) in grid.nodes.iter().enumerate() {
                probs[j * q_len + q] = est.probability(j, t);
            }
        }
        let mut items: Vec<Vec<usize>> = (0..k).map(|j| vec![j]).collect();
        items.extend(margin_pairs(k).into_iter().map(|(j, l)| vec![j, l]));
        let mut prod = vec![0.0; items.len() * q_len];
        for (s, set) in items.iter().enumerate() {
            let out = &mut prod[s * q_len..(s + 1) * q_len];
            out.fill(1.0);
            for &j in set {
                for (o, p) in out.iter_mut().zip(&probs[j * q_len..(j + 1) * q_len]) {
                    *o *= p;
                }
            }
        }
        Ok(MarginTable {
            k,
            q_len,
            items,
            prod,
            probs,
        })
    }

    fn n_margins(&self) -> usize {
        self.items.len()
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.prod[s * self.q_len..(s + 1) * self.q_len]
    }

    fn margins(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n_margins()).map(|s| dot(w, self.row(s))).collect()
    }

    /// Index of the margin whose item set is `t \ s`, or `None` when empty.
    fn remainder(&self, s: usize, t: usize) -> Option<usize> {
        let rest: Vec<usize> = self.items[t]
            .iter()
            .copied()
            .filter(|j| !self.items[s].contains(j))
            .collect();
        match rest.as_slice() {
            [] => None,
            [j] => Some(*j),
            [j, l] => Some(self.k + pair_index(self.k, *j, *l)),
            _ => unreachable!("margins hold at most two items"),
        }
    }

    /// `Xi_st = pi_{s u t} - pi_s pi_t`, the covariance of the margin
    /// indicators for a single respondent.
    fn covariance(&self, w: &[f64], pi: &[f64]) -> DMatrix<f64> {
        let m = self.n_margins();
        let mut weighted = self.prod.clone();
        for s in 0..m {
            for (v, wq) in weighted[s * self.q_len..(s + 1) * self.q_len].iter_mut().zip(w) {
                *v *= wq;
            }
        }
        let mut xi = DMatrix::zeros(m, m);
        for s in 0..m {
            let ws = &weighted[s * self.q_len..(s + 1) * self.q_len];
            for t in s..m {
                let joint = match self.remainder(s, t) {
                    None => pi[s],
                    Some(r) => dot(ws, self.row(r)),
                };
                let v = joint - pi[s] * pi[t];
                xi[(s, t)] = v;
                xi[(t, s)] = v;
            }
        }
        xi
    }

    /// Jacobian of the margins with respect to `(a_1, d_1, a_2, d_2, ..)`.
    fn jacobian(&self, w: &[f64], nodes: &[f64]) -> DMatrix<f64> {
        let m = self.n_margins();
        let mut delta = DMatrix::zeros(m, 2 * self.k);
        for s in 0..m {
            let a_s = self.row(s);
            for &j in &self.items[s] {
                let p = &self.probs[j * self.q_len..(j + 1) * self.q_len];
                let mut da = 0.0;
                let mut dd = 0.0;
                for q in 0..self.q_len {
                    let g = w[q] * a_s[q] * (1.0 - p[q]);
                    dd += g;
                    da += g * nodes[q];
                }
                delta[(s, 2 * j)] = da;
                delta[(s, 2 * j + 1)] = dd;
            }
        }
        delta
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Model-implied first- and second-order margins, ordered as in
/// [`observed_margins`].
pub fn model_margins(est: &ItemEstimates, grid: &QuadratureGrid) -> Result<Vec<f64>> {
    Ok(MarginTable::new(est, grid)?.margins(&grid.weights))
}

/// Per-respondent covariance matrix of the margin indicators.
pub fn margin_covariance(est: &ItemEstimates, grid: &QuadratureGrid) -> Result<DMatrix<f64>> {
    let table = MarginTable::new(est, grid)?;
    let pi = table.margins(&grid.weights);
    Ok(table.covariance(&grid.weights, &pi))
}

/// Derivatives of the model margins, columns ordered `(a_1, d_1, a_2, ..)`.
pub fn margin_jacobian(est: &ItemEstimates, grid: &QuadratureGrid) -> Result<DMatrix<f64>> {
    let table = MarginTable::new(est, grid)?;
    Ok(table.jacobian(&grid.weights, &grid.nodes))
}

/// M2 for the given observed margins from `n_persons` respondents.
///
/// With `Xi = L L'`, `z = L^-1 e` and `D = L^-1 Delta`, the statistic is
/// `N |z - P_D z|^2` where `P_D` projects onto the column space of `D`.
pub fn m2_from_margins(
    observed: &[f64],
    n_persons: usize,
    est: &ItemEstimates,
    grid: &QuadratureGrid,
) -> Result<M2Result> {
    let table = MarginTable::new(est, grid)?;
    let m = table.n_margins();
    if observed.len() != m {
        return Err(IrtError::Dimension(format!(
            "expected {m} observed margins, got {}",
            observed.len()
        )));
    }
    let pi = table.margins(&grid.weights);
    let xi = table.covariance(&grid.weights, &pi);
    let delta = table.jacobian(&grid.weights, &grid.nodes);
    let e = DVector::from_iterator(m, observed.iter().zip(&pi).map(|(o, p)| o - p));

    let (z, d, pseudo_inverse) = match xi.clone().cholesky() {
        Some(chol) => {
            let l = chol.l();
            let z = l.solve_lower_triangular(&e);
            let d = l.solve_lower_triangular(&delta);
            match (z, d) {
                (Some(z), Some(d)) => (z, d, false),
                _ => whiten_pseudo(xi, &e, &delta)?,
            }
        }
        None => whiten_pseudo(xi, &e, &delta)?,
    };

    let n_free = delta.ncols();
    let qr = d.qr();
    let r_diag: Vec<f64> = qr.r().diagonal().iter().map(|v| v.abs()).collect();
    let r_max = r_diag.iter().cloned().fold(0.0, f64::max);
    let r_min = r_diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if r_diag.len() < n_free || !(r_min > 1e-10 * r_max) {
        return Err(IrtError::Numerical(format!(
            "Delta' Xi^-1 Delta is singular: R diagonal spans [{r_min:.3e}, {r_max:.3e}]"
        )));
    }
    let q = qr.q();
    let resid = &z - &q * (q.transpose() * &z);
    let m2 = n_persons as f64 * resid.norm_squared();
    if !m2.is_finite() || m2 < -1e-6 {
        return Err(IrtError::Numerical(format!("M2 evaluated to {m2}")));
    }
    let m2 = m2.max(0.0);
    let df = m - n_free;
    Ok(M2Result {
        m2,
        df,
        p_value: chi2_sf(m2, df),
        n_margins: m,
        n_free_params: n_free,
        pseudo_inverse,
    })
}

/// Whitening through the eigen-decomposition of `Xi`, dropping null
/// directions. Fails when `Xi` has a clearly negative eigenvalue.
fn whiten_pseudo(
    xi: DMatrix<f64>,
    e: &DVector<f64>,
    delta: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, bool)> {
    let eig = SymmetricEigen::new(xi);
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min < -1e-8 {
        return Err(IrtError::Numerical(format!(
            "margin covariance is not positive semi-definite: eigenvalues span [{min:.3e}, {max:.3e}]"
        )));
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * max)
        .collect();
    if keep.is_empty() {
        return Err(IrtError::Numerical("margin covariance is zero".into()));
    }
    let mut w = DMatrix::zeros(keep.len(), eig.eigenvalues.len());
    for (r, &i) in keep.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt().recip();
        for c in 0..w.ncols() {
            w[(r, c)] = eig.eigenvectors[(c, i)] * scale;
        }
    }
    Ok((&w * e, &w * delta, true))
}

/// M2 of a fitted 2PL against its data, with `df = K(K-1)/2 - K`.
pub fn m2_statistic(
    data: &ResponseMatrix,
    est: &ItemEstimates,
    grid: &QuadratureGrid,
) -> Result<M2Result> {
    if data.n_items() != est.n_items() {
        return Err(IrtError::Dimension(format!(
            "data has {} items, estimates {}",
            data.n_items(),
            est.n_items()
        )));
    }
    m2_from_margins(&observed_margins(data), data.n_persons(), est, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{eap_scores, fit_mml, FitSettings};

    fn est(a: Vec<f64>, d: Vec<f64>) -> ItemEstimates {
        ItemEstimates::from_parameters(IrtModel::TwoPL, a, d, None).unwrap()
    }

    /// Probability of every pattern of `k` items at each node, by enumeration.
    fn pattern_probs(e: &ItemEstimates, grid: &QuadratureGrid) -> Vec<(Vec<u8>, f64)> {
        let k = e.n_items();
        (0..1usize << k)
            .map(|bits| {
                let x: Vec<u8> = (0..k).map(|j| ((bits >> j) & 1) as u8).collect();
                let p: f64 = grid
                    .nodes
                    .iter()
                    .zip(&grid.weights)
                    .map(|(&t, w)| {
                        w * x
                            .iter()
                            .enumerate()
                            .map(|(j, &xj)| {
                                let p = e.probability(j, t);
                                if xj == 1 { p } else { 1.0 - p }
                            })
                            .product::<f64>()
                    })
                    .sum();
                (x, p)
            })
            .collect()
    }

    fn indicators(x: &[u8]) -> Vec<f64> {
        let k = x.len();
        let mut u: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        u.extend(margin_pairs(k).iter().map(|&(j, l)| (x[j] * x[l]) as f64));
        u
    }

    #[test]
    fn pair_index_matches_enumeration() {
        for k in [2, 3, 7] {
            for (idx, (j, l)) in margin_pairs(k).into_iter().enumerate() {
                assert_eq!(pair_index(k, j, l), idx);
            }
        }
    }

    #[test]
    fn margins_and_covariance_match_pattern_enumeration() {
        let grid = QuadratureGrid::default();
        let e = est(vec![1.3, 0.7, 2.1], vec![0.4, -1.1, 0.9]);
        let patterns = pattern_probs(&e, &grid);
        let m = 6;
        let mut pi = vec![0.0; m];
        let mut second = DMatrix::<f64>::zeros(m, m);
        for (x, p) in &patterns {
            let u = indicators(x);
            for s in 0..m {
                pi[s] += p * u[s];
                for t in 0..m {
                    second[(s, t)] += p * u[s] * u[t];
                }
            }
        }
        let got = model_margins(&e, &grid).unwrap();
        for (g, w) in got.iter().zip(&pi) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
        let xi = margin_covariance(&e, &grid).unwrap();
        for s in 0..m {
            for t in 0..m {
                let want = second[(s, t)] - pi[s] * pi[t];
                assert!((xi[(s, t)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let grid = QuadratureGrid::default();
        let a = vec![1.3, 0.7, 2.1, 1.6];
        let d = vec![0.4, -1.1, 0.9, -0.2];
        let analytic = margin_jacobian(&est(a.clone(), d.clone()), &grid).unwrap();
        let h = 1e-5;
        for col in 0..8 {
            let (j, is_d) = (col / 2, col % 2 == 1);
            let shifted = |sign: f64| {
                let (mut a2, mut d2) = (a.clone(), d.clone());
                if is_d {
                    d2[j] += sign * h;
                } else {
                    a2[j] += sign * h;
                }
                model_margins(&est(a2, d2), &grid).unwrap()
            };
            let (up, down) = (shifted(1.0), shifted(-1.0));
            for s in 0..analytic.nrows() {
                let fd = (up[s] - down[s]) / (2.0 * h);
                let an = analytic[(s, col)];
                assert!((an - fd).abs() <= 1e-4 * an.abs().max(1e-6), "({s},{col}): {an} vs {fd}");
            }
        }
    }

    #[test]
    fn m2_vanishes_at_model_margins() {
        let grid = QuadratureGrid::default();
        let e = est(vec![1.0, 1.5, 0.8, 1.2, 2.0], vec![0.0, 0.5, -0.7, 1.0, -0.3]);
        let pi = model_margins(&e, &grid).unwrap();
        let r = m2_from_margins(&pi, 1000, &e, &grid).unwrap();
        assert!(r.m2.abs() < 1e-12);
        assert_eq!((r.n_margins, r.n_free_params, r.df), (15, 10, 5));
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn m2_degrees_of_freedom() {
        let grid = QuadratureGrid::default();
        let e = est(vec![1.2; 20], (0..20).map(|j| j as f64 / 10.0 - 1.0).collect());
        let pi = model_margins(&e, &grid).unwrap();
        let r = m2_from_margins(&pi, 500, &e, &grid).unwrap();
        assert_eq!(r.df, 170);
        assert!(matches!(
            m2_from_margins(&pi[1..], 500, &e, &grid),
            Err(IrtError::Dimension(_))
        ));
    }

    #[test]
    fn observed_margins_count_pairs() {
        let data = ResponseMatrix::from_rows(&[vec![1, 1, 0], vec![1, 0, 1], vec![1, 1, 1], vec![0, 0, 0]]).unwrap();
        let m = observed_margins(&data);
        assert_eq!(m, vec![0.75, 0.5, 0.5, 0.5, 0.5, 0.25]);
    }

    fn small_fit() -> (ResponseMatrix, ItemEstimates, AbilityEstimates) {
        use crate::design::{Condition, GeneratorKind, SimulationDesign};
        let (_, data) = crate::generators::simulate_dataset(
            &Condition::new(GeneratorKind::A2, 6, 400),
            &SimulationDesign::default(),
            5,
        )
        .unwrap();
        let grid = QuadratureGrid::default();
        let e = fit_mml(&data, IrtModel::TwoPL, &grid, &FitSettings::default()).unwrap();
        let ab = eap_scores(&data, &e, &grid).unwrap();
        (data, e, ab)
    }

    #[test]
    fn q3_is_symmetric_with_unit_diagonal() {
        let (data, e, ab) = small_fit();
        let r = yen_q3(&data, &e, &ab, &Q3Settings::default()).unwrap();
        for j in 0..6 {
            assert_eq!(r.q3[j][j], Some(1.0));
            for l in 0..6 {
                assert_eq!(r.q3[j][l], r.q3[l][j]);
                assert!(r.q3[j][l].unwrap().abs() <= 1.0);
            }
        }
        for v in &r.violations {
            assert!(v.value.abs() > r.threshold);
        }
    }

    #[test]
    fn q3_is_permutation_equivariant() {
        let (data, e, ab) = small_fit();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let rows: Vec<Vec<u8>> = data.rows().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
        let pdata = ResponseMatrix::from_rows(&rows).unwrap();
        let pe = est(
            perm.iter().map(|&j| e.a_hat[j]).collect(),
            perm.iter().map(|&j| e.d_hat[j]).collect(),
        );
        let r = yen_q3(&data, &e, &ab, &Q3Settings::default()).unwrap();
        let pr = yen_q3(&pdata, &pe, &ab, &Q3Settings::default()).unwrap();
        for x in 0..6 {
            for y in 0..6 {
                let (u, v) = (pr.q3[x][y].unwrap(), r.q3[perm[x]][perm[y]].unwrap());
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_item_is_flagged() {
        let (data, _, _) = small_fit();
        let rows: Vec<Vec<u8>> = data
            .rows()
            .map(|r| {
                let mut v = r.to_vec();
                v.push(r[2]);
                v
            })
            .collect();
        let dup = ResponseMatrix::from_rows(&rows).unwrap();
        let grid = QuadratureGrid::default();
        let e = fit_mml(&dup, IrtModel::TwoPL, &grid, &FitSettings::default()).unwrap();
        let ab = eap_scores(&dup, &e, &grid).unwrap();
        let r = yen_q3(&dup, &e, &ab, &Q3Settings::default()).unwrap();
        let v = r.q3[2][6].unwrap();
        assert!(v > 0.5, "{v}");
        assert!(r.violations.iter().any(|x| (x.i, x.j) == (2, 6)));
    }

    #[test]
    fn q3_one_sided_ignores_negative_values() {
        let (data, e, ab) = small_fit();
        let loose = Q3Settings { threshold: 0.0, two_sided: false };
        let r = yen_q3(&data, &e, &ab, &loose).unwrap();
        assert!(r.violations.iter().all(|v| v.value > 0.0));
    }

    #[test]
    fn constant_residual_column_is_undefined() {
        let data = ResponseMatrix::from_rows(&[vec![1, 0, 1], vec![0, 1, 1], vec![1, 1, 1]]).unwrap();
        // slope 0 makes the residual of the constant item constant
        let e = est(vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 2.0]);
        let ab = AbilityEstimates {
            theta_hat: vec![-0.5, 0.1, 0.9],
            posterior_sd: vec![1.0; 3],
        };
        let r = yen_q3(&data, &e, &ab, &Q3Settings::default()).unwrap();
        assert_eq!(r.undefined_pairs, vec![(0, 2), (1, 2)]);
        assert_eq!(r.q3[0][2], None);
    }
}
