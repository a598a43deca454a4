//! Unidimensionality battery on tetrachoric correlations: KMO sampling
//! adequacy, Bartlett's sphericity test, principal-component eigen summary,
//! and Horn's parallel analysis.

pub mod bvn;
mod tetrachoric;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{IrtError, Result};
use crate::estimation::chi2_sf;
use crate::generators::{ResponseMatrix, SimRng};

pub use tetrachoric::{
    repair_to_correlation, sorted_eigenvalues, tetrachoric_log_lik, tetrachoric_matrix,
    tetrachoric_pair, TetrachoricMatrix, TetrachoricPair, EIGEN_FLOOR, RHO_LIMIT,
    ZERO_CELL_CORRECTION,
};

pub const DEFAULT_PA_ITERATIONS: usize = 100;
/// First-to-second eigenvalue ratio at which one factor is called dominant.
pub const DOMINANCE_RATIO: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSolution {
    pub eigenvalues: Vec<f64>,
    pub loadings_first_factor: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl FactorSolution {
    /// `lambda_1 / lambda_2` is at least [`DOMINANCE_RATIO`].
    pub fn has_dominant_factor(&self) -> bool {
        match self.eigenvalues.as_slice() {
            [l1, l2, ..] => *l2 <= 0.0 || l1 / l2 >= DOMINANCE_RATIO,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelAnalysisResult {
    pub observed_eigenvalues: Vec<f64>,
    pub reference_eigenvalues: Vec<f64>,
    pub n_factors_retained: usize,
    pub n_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BartlettResult {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

fn check_square(r: &DMatrix<f64>) -> Result<()> {
    if r.nrows() != r.ncols() || r.nrows() < 2 {
        return Err(IrtError::Dimension(format!(
            "expected a square matrix of order >= 2, got {} x {}",
            r.nrows(),
            r.ncols()
        )));
    }
    Ok(())
}

/// Kaiser-Meyer-Olkin measure of sampling adequacy.
pub fn kmo(r: &DMatrix<f64>) -> Result<f64> {
    check_square(r)?;
    let k = r.nrows();
    let s = r
        .clone()
        .cholesky()
        .ok_or_else(|| IrtError::Numerical("correlation matrix is singular or not positive definite".into()))?
        .inverse();
    let mut r2 = 0.0;
    let mut q2 = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                r2 += r[(i, j)].powi(2);
                let q = -s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt();
                q2 += q * q;
            }
        }
    }
    if r2 + q2 == 0.0 {
        return Err(IrtError::UndefinedCorrelation(
            "KMO undefined: all off-diagonal correlations are zero".into(),
        ));
    }
    Ok(r2 / (r2 + q2))
}

/// Bartlett's test that `r` is an identity matrix, for sample size `n`.
pub fn bartlett(r: &DMatrix<f64>, n: usize) -> Result<BartlettResult> {
    check_square(r)?;
    let k = r.nrows();
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| IrtError::Numerical("Bartlett test needs a positive definite matrix".into()))?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let factor = n as f64 - 1.0 - (2.0 * k as f64 + 5.0) / 6.0;
    // + 0.0 turns a negative zero into zero
    let chi2 = -factor * log_det + 0.0;
    let df = k * (k - 1) / 2;
    Ok(BartlettResult {
        chi2,
        df,
        p_value: chi2_sf(chi2, df),
    })
}

/// Principal-component eigen summary of a correlation matrix.
pub fn efa_eigen(r: &DMatrix<f64>) -> Result<FactorSolution> {
    check_square(r)?;
    let k = r.nrows();
    let eig = SymmetricEigen::new(r.clone());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let v1 = eig.eigenvectors.column(order[0]);
    let scale = eigenvalues[0].max(0.0).sqrt();
    let sign = if v1.sum() < 0.0 { -1.0 } else { 1.0 };
    let loadings_first_factor = v1.iter().map(|v| sign * scale * v).collect();
    let explained_variance_ratio = eigenvalues.iter().map(|l| l / k as f64).collect();
    Ok(FactorSolution {
        eigenvalues,
        loadings_first_factor,
        explained_variance_ratio,
    })
}

/// Horn's parallel analysis with a margin-preserving permutation null.
///
/// Each null dataset shuffles every column independently. The reference
/// eigenvalue at each rank is the mean over `n_iter` null datasets; factors
/// are retained while the observed eigenvalue exceeds the reference.
pub fn parallel_analysis(
    data: &ResponseMatrix,
    n_iter: usize,
    rng: &mut SimRng,
) -> Result<ParallelAnalysisResult> {
    if n_iter < 20 {
        return Err(IrtError::Config(format!(
            "parallel analysis needs at least 20 iterations, got {n_iter}"
        )));
    }
    let observed = tetrachoric_matrix(data)?;
    let observed_eigenvalues = sorted_eigenvalues(&observed.rho);
    let mut columns: Vec<Vec<u8>> = observed.items.iter().map(|&j| data.column(j)).collect();
    let k = columns.len();
    let mut sums = vec![0.0; k];
    for _ in 0..n_iter {
        for col in columns.iter_mut() {
            col.shuffle(rng);
        }
        let (null_r, _, _) = tetrachoric::raw_tetrachoric(&columns)?;
        for (s, l) in sums.iter_mut().zip(sorted_eigenvalues(&null_r)) {
            *s += l;
        }
    }
    let reference_eigenvalues: Vec<f64> = sums.iter().map(|s| s / n_iter as f64).collect();
    let n_factors_retained = observed_eigenvalues
        .iter()
        .zip(&reference_eigenvalues)
        .take_while(|(o, r)| o > r)
        .count();
    Ok(ParallelAnalysisResult {
        observed_eigenvalues,
        reference_eigenvalues,
        n_factors_retained,
        n_iterations: n_iter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaSummary {
    pub reference: Vec<f64>,
    pub retained: usize,
}

/// Per-dataset unidimensionality report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionalityReport {
    pub kmo: Option<f64>,
    pub bartlett: Option<BartlettResult>,
    pub eigenvalues: Vec<f64>,
    pub loadings_first_factor: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub pa: PaSummary,
    /// Factor count from eigenvalue inspection: 1 when the first eigenvalue
    /// dominates, otherwise the parallel-analysis count.
    pub efa_factors: usize,
    pub psd_repaired: bool,
    pub min_eigenvalue: f64,
    pub flagged_pairs: Vec<(usize, usize)>,
    pub excluded_items: Vec<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Runs tetrachorics, KMO, Bartlett, the eigen summary and parallel analysis.
pub fn dimensionality_battery(
    data: &ResponseMatrix,
    pa_iterations: usize,
    rng: &mut SimRng,
) -> Result<DimensionalityReport> {
    let tet = tetrachoric_matrix(data)?;
    let mut warnings = Vec::new();
    if !tet.excluded_items.is_empty() {
        warnings.push(format!(
            "constant items {:?} excluded from the tetrachoric matrix ({} of {} items analyzed)",
            tet.excluded_items,
            tet.dim(),
            data.n_items()
        ));
    }
    if tet.psd_repaired {
        warnings.push(format!(
            "tetrachoric matrix repaired (smallest eigenvalue {:.3e})",
            tet.min_eigenvalue
        ));
    }
    let kmo_value = kmo(&tet.rho)
        .map_err(|e| warnings.push(format!("KMO: {e}")))
        .ok();
    let bartlett_value = bartlett(&tet.rho, data.n_persons())
        .map_err(|e| warnings.push(format!("Bartlett: {e}")))
        .ok();
    let solution = efa_eigen(&tet.rho)?;
    let pa = parallel_analysis(data, pa_iterations, rng)?;
    let efa_factors = if solution.has_dominant_factor() {
        1
    } else {
        pa.n_factors_retained
    };
    Ok(DimensionalityReport {
        kmo: kmo_value,
        bartlett: bartlett_value,
        flagged_pairs: tet.flagged_pairs(),
        eigenvalues: solution.eigenvalues,
        loadings_first_factor: solution.loadings_first_factor,
        explained_variance_ratio: solution.explained_variance_ratio,
        pa: PaSummary {
            reference: pa.reference_eigenvalues,
            retained: pa.n_factors_retained,
        },
        efa_factors,
        psd_repaired: tet.psd_repaired,
        min_eigenvalue: tet.min_eigenvalue,
        excluded_items: tet.excluded_items,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::rng_from_seed;
    use rand::Rng;

    fn compound(k: usize, r: f64) -> DMatrix<f64> {
        DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { r })
    }

    #[test]
    fn kmo_two_items_is_one_half() {
        for r in [-0.7, 0.1, 0.45, 0.9] {
            let v = kmo(&compound(2, r)).unwrap();
            assert!((v - 0.5).abs() < 1e-12, "{r}: {v}");
        }
    }

    #[test]
    fn kmo_identity_is_undefined() {
        assert!(matches!(kmo(&compound(4, 0.0)), Err(IrtError::UndefinedCorrelation(_))));
        let singular = compound(3, 1.0);
        assert!(matches!(kmo(&singular), Err(IrtError::Numerical(_))));
    }

    #[test]
    fn kmo_in_unit_interval() {
        let v = kmo(&compound(6, 0.4)).unwrap();
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn bartlett_identity_and_df() {
        let b = bartlett(&compound(5, 0.0), 300).unwrap();
        assert_eq!(b.chi2, 0.0);
        assert_eq!(b.p_value, 1.0);
        assert_eq!(bartlett(&compound(20, 0.2), 500).unwrap().df, 190);
        assert!(bartlett(&compound(20, 0.2), 500).unwrap().p_value < 1e-10);
        assert!(bartlett(&compound(3, 1.0), 100).is_err());
    }

    #[test]
    fn compound_symmetry_eigenvalues() {
        let s = efa_eigen(&compound(4, 0.5)).unwrap();
        assert!((s.eigenvalues[0] - 2.5).abs() < 1e-12);
        for l in &s.eigenvalues[1..] {
            assert!((l - 0.5).abs() < 1e-12);
        }
        assert!((s.eigenvalues.iter().sum::<f64>() - 4.0).abs() < 1e-12);
        assert!(s.loadings_first_factor.iter().all(|&l| (l - 2.5f64.sqrt() / 2.0).abs() < 1e-12));
        let id = efa_eigen(&compound(5, 0.0)).unwrap();
        assert!(id.eigenvalues.iter().all(|l| (l - 1.0).abs() < 1e-12));
        assert!(id.explained_variance_ratio.iter().all(|r| (r - 0.2).abs() < 1e-12));
    }

    #[test]
    fn independent_columns_retain_no_factors_mostly() {
        let mut zero = 0;
        for trial in 0..10u64 {
            let mut rng = rng_from_seed(trial);
            let p: Vec<f64> = (0..8).map(|_| rng.random_range(0.2..0.8)).collect();
            let rows: Vec<Vec<u8>> = (0..300)
                .map(|_| p.iter().map(|&pj| (rng.random::<f64>() < pj) as u8).collect())
                .collect();
            let data = ResponseMatrix::from_rows(&rows).unwrap();
            let pa = parallel_analysis(&data, 20, &mut rng).unwrap();
            if pa.n_factors_retained == 0 {
                zero += 1;
            }
        }
        assert!(zero >= 7, "{zero}/10");
    }

    #[test]
    fn too_few_iterations() {
        let data = ResponseMatrix::from_rows(&[vec![0, 1], vec![1, 0], vec![1, 1]]).unwrap();
        assert!(parallel_analysis(&data, 5, &mut rng_from_seed(0)).is_err());
    }
}
