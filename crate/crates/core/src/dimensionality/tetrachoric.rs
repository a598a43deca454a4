use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::bvn::{bvn_lower, norm_quantile};
use crate::error::{IrtError, Result};
use crate::generators::ResponseMatrix;

pub const RHO_LIMIT: f64 = 0.999;
pub const ZERO_CELL_CORRECTION: f64 = 0.5;
/// Eigenvalue floor used by the positive-definiteness repair.
pub const EIGEN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TetrachoricPair {
    pub rho: f64,
    /// Thresholds of the first and second item (`Phi^-1` of the proportion answering 0).
    pub thresholds: (f64, f64),
    pub zero_cell_corrected: bool,
}

/// Maximum-likelihood tetrachoric correlation of a 2x2 table.
///
/// `nXY` counts persons answering `X` to the first item and `Y` to the
/// second. Thresholds come from the margins; rho maximizes the cell
/// likelihood with thresholds held fixed, clamped to `[-0.999, 0.999]`. A
/// table with an empty cell gets 0.5 added to every cell.
pub fn tetrachoric_pair(n00: f64, n01: f64, n10: f64, n11: f64) -> Result<TetrachoricPair> {
    let cells = [n00, n01, n10, n11];
    if cells.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(IrtError::Input(format!("invalid cell counts {cells:?}")));
    }
    let total: f64 = cells.iter().sum();
    if total < 1.0 {
        return Err(IrtError::Input("2x2 table is empty".into()));
    }
    let first_zero = n00 + n01;
    let second_zero = n00 + n10;
    if first_zero == 0.0 || first_zero == total || second_zero == 0.0 || second_zero == total {
        return Err(IrtError::UndefinedCorrelation(format!(
            "an item has a single observed response in table {cells:?}"
        )));
    }
    let corrected = cells.contains(&0.0);
    let [n00, n01, n10, n11] = if corrected {
        cells.map(|c| c + ZERO_CELL_CORRECTION)
    } else {
        cells
    };
    let n = n00 + n01 + n10 + n11;
    let p1 = (n00 + n01) / n;
    let p2 = (n00 + n10) / n;
    let t1 = norm_quantile(p1);
    let t2 = norm_quantile(p2);

    // sign of d logL / d rho; decreasing in rho
    let score = |rho: f64| -> f64 {
        let p00 = bvn_lower(t1, t2, rho).clamp(1e-300, 1.0);
        let p01 = (p1 - p00).max(1e-300);
        let p10 = (p2 - p00).max(1e-300);
        let p11 = (1.0 - p1 - p2 + p00).max(1e-300);
        n00 / p00 - n01 / p01 - n10 / p10 + n11 / p11
    };
    let lo = -RHO_LIMIT;
    let hi = RHO_LIMIT;
    let (f_lo, f_hi) = (score(lo), score(hi));
    let rho = if f_lo <= 0.0 {
        lo
    } else if f_hi >= 0.0 {
        hi
    } else {
        brent_root(score, lo, hi, f_lo, f_hi, 1e-12)
    };
    Ok(TetrachoricPair {
        rho,
        thresholds: (t1, t2),
        zero_cell_corrected: corrected,
    })
}

/// Cell log-likelihood of a 2x2 table at correlation `rho` with margins-fixed
/// thresholds. Exposed for grid-search checks.
pub fn tetrachoric_log_lik(cells: [f64; 4], rho: f64) -> f64 {
    let [n00, n01, n10, n11] = cells;
    let n = n00 + n01 + n10 + n11;
    let p1 = (n00 + n01) / n;
    let p2 = (n00 + n10) / n;
    let (t1, t2) = (norm_quantile(p1), norm_quantile(p2));
    let p00 = bvn_lower(t1, t2, rho);
    let probs = [p00, p1 - p00, p2 - p00, 1.0 - p1 - p2 + p00];
    cells.iter().zip(probs).map(|(c, p)| c * p.max(1e-300).ln()).sum()
}

/// Brent's method on a bracket with `f(a) > 0 > f(b)` or the reverse.
fn brent_root(f: impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fb: f64, xtol: f64) -> f64 {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut bisected = true;
    for _ in 0..200 {
        if fb == 0.0 || (b - a).abs() < xtol {
            return b;
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let mid = (3.0 * a + b) / 4.0;
        let out_of_range = !((s > mid.min(b)) && (s < mid.max(b)));
        if out_of_range
            || (bisected && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!bisected && (s - b).abs() >= (c - d).abs() / 2.0)
            || (bisected && (b - c).abs() < xtol)
            || (!bisected && (c - d).abs() < xtol)
        {
            s = (a + b) / 2.0;
            bisected = true;
        } else {
            bisected = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetrachoricMatrix {
    /// Correlations over the retained items (row-major K' x K').
    #[serde(with = "matrix_rows")]
    pub rho: DMatrix<f64>,
    pub thresholds: Vec<f64>,
    pub zero_cell_corrected: Vec<Vec<bool>>,
    /// Original indices of the items kept in `rho`.
    pub items: Vec<usize>,
    /// Constant columns left out of the matrix.
    pub excluded_items: Vec<usize>,
    /// Smallest eigenvalue before any repair.
    pub min_eigenvalue: f64,
    pub psd_repaired: bool,
}

impl TetrachoricMatrix {
    pub fn dim(&self) -> usize {
        self.items.len()
    }

    /// Original item-index pairs that needed the zero-cell correction.
    pub fn flagged_pairs(&self) -> Vec<(usize, usize)> {
        let k = self.dim();
        let mut out = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                if self.zero_cell_corrected[i][j] {
                    out.push((self.items[i], self.items[j]));
                }
            }
        }
        out
    }
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

/// Column bitsets for fast joint counts.
struct ColumnBits {
    words: usize,
    bits: Vec<u64>,
    ones: Vec<u32>,
}

impl ColumnBits {
    fn new(columns: &[Vec<u8>]) -> Self {
        let n = columns.first().map_or(0, Vec::len);
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; words * columns.len()];
        let mut ones = Vec::with_capacity(columns.len());
        for (j, col) in columns.iter().enumerate() {
            let mut count = 0;
            for (i, &x) in col.iter().enumerate() {
                if x == 1 {
                    bits[j * words + i / 64] |= 1 << (i % 64);
                    count += 1;
                }
            }
            ones.push(count);
        }
        ColumnBits { words, bits, ones }
    }

    fn both(&self, j: usize, k: usize) -> u32 {
        let a = &self.bits[j * self.words..(j + 1) * self.words];
        let b = &self.bits[k * self.words..(k + 1) * self.words];
        a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
    }
}

/// Unrepaired correlations, zero-cell flags and per-item thresholds.
pub(crate) type RawTetrachoric = (DMatrix<f64>, Vec<Vec<bool>>, Vec<f64>);

/// Pairwise tetrachoric correlations of the non-constant columns, without
/// any repair.
pub(crate) fn raw_tetrachoric(columns: &[Vec<u8>]) -> Result<RawTetrachoric> {
    let k = columns.len();
    let n = columns.first().map_or(0, Vec::len) as f64;
    let bits = ColumnBits::new(columns);
    let mut rho = DMatrix::identity(k, k);
    let mut mask = vec![vec![false; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let n11 = f64::from(bits.both(i, j));
            let si = f64::from(bits.ones[i]);
            let sj = f64::from(bits.ones[j]);
            let n10 = si - n11;
            let n01 = sj - n11;
            let n00 = n - si - sj + n11;
            let pair = tetrachoric_pair(n00, n01, n10, n11)?;
            rho[(i, j)] = pair.rho;
            rho[(j, i)] = pair.rho;
            mask[i][j] = pair.zero_cell_corrected;
            mask[j][i] = pair.zero_cell_corrected;
        }
    }
    let thresholds = bits
        .ones
        .iter()
        .map(|&s| norm_quantile(1.0 - f64::from(s) / n))
        .collect();
    Ok((rho, mask, thresholds))
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Clips eigenvalues below [`EIGEN_FLOOR`] and rescales to unit diagonal.
pub fn repair_to_correlation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let clipped = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    let k = m.nrows();
    let scale: Vec<f64> = (0..k).map(|i| rebuilt[(i, i)].sqrt()).collect();
    let mut out = DMatrix::from_fn(k, k, |i, j| rebuilt[(i, j)] / (scale[i] * scale[j]));
    for i in 0..k {
        out[(i, i)] = 1.0;
        for j in 0..i {
            let avg = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
    }
    out
}

/// Tetrachoric correlation matrix of a response matrix.
///
/// Constant columns are left out and listed in `excluded_items`. A matrix
/// with a negative eigenvalue is repaired by [`repair_to_correlation`].
pub fn tetrachoric_matrix(data: &ResponseMatrix) -> Result<TetrachoricMatrix> {
    let excluded = data.constant_columns();
    let items: Vec<usize> = (0..data.n_items()).filter(|j| !excluded.contains(j)).collect();
    if items.len() < 2 {
        return Err(IrtError::Input(format!(
            "need at least two non-constant items, {} of {} columns are constant",
            excluded.len(),
            data.n_items()
        )));
    }
    let columns: Vec<Vec<u8>> = items.iter().map(|&j| data.column(j)).collect();
    let (raw, mask, thresholds) = raw_tetrachoric(&columns)?;
    let min_eigenvalue = *sorted_eigenvalues(&raw).last().expect("non-empty");
    let psd_repaired = min_eigenvalue < 0.0;
    let rho = if psd_repaired {
        repair_to_correlation(&raw)
    } else {
        raw
    };
    Ok(TetrachoricMatrix {
        rho,
        thresholds,
        zero_cell_corrected: mask,
        items,
        excluded_items: excluded,
        min_eigenvalue,
        psd_repaired,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independence_table() {
        let p = tetrachoric_pair(25.0, 25.0, 25.0, 25.0).unwrap();
        assert!(p.rho.abs() < 1e-9);
        assert!(p.thresholds.0.abs() < 1e-12 && p.thresholds.1.abs() < 1e-12);
        assert!(!p.zero_cell_corrected);
    }

    #[test]
    fn matches_grid_search() {
        let cells = [40.0, 10.0, 10.0, 40.0];
        let p = tetrachoric_pair(cells[0], cells[1], cells[2], cells[3]).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut rho = -0.999;
        while rho <= 0.999 {
            let ll = tetrachoric_log_lik(cells, rho);
            if ll > best.0 {
                best = (ll, rho);
            }
            rho += 1e-4;
        }
        assert!((p.rho - best.1).abs() < 1e-3, "{} vs {}", p.rho, best.1);
        // closed form for symmetric balanced margins: cos(pi * n01 / (n01 + n11) ...)
        let cos_pi = (std::f64::consts::PI * 0.2).cos();
        assert!((p.rho - cos_pi).abs() < 1e-6);
    }

    #[test]
    fn perfect_association_is_clamped() {
        let p = tetrachoric_pair(50.0, 0.0, 0.0, 50.0).unwrap();
        assert!(p.zero_cell_corrected);
        assert!(p.rho >= 0.95 && p.rho <= RHO_LIMIT, "{}", p.rho);
        let n = tetrachoric_pair(0.0, 50.0, 50.0, 0.0).unwrap();
        assert!(n.rho <= -0.95);
    }

    #[test]
    fn zero_margin_is_undefined() {
        assert!(matches!(
            tetrachoric_pair(0.0, 0.0, 30.0, 20.0),
            Err(IrtError::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            tetrachoric_pair(10.0, 0.0, 30.0, 0.0),
            Err(IrtError::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn transposed_table_is_symmetric() {
        let a = tetrachoric_pair(30.0, 12.0, 7.0, 51.0).unwrap();
        let b = tetrachoric_pair(30.0, 7.0, 12.0, 51.0).unwrap();
        assert!((a.rho - b.rho).abs() < 1e-10);
        assert_eq!(a.thresholds.0, b.thresholds.1);
    }

    #[test]
    fn two_item_matrix_is_the_pair() {
        let rows: Vec<Vec<u8>> = (0..60)
            .map(|i| vec![(i % 3 != 0) as u8, (i % 4 != 0) as u8])
            .collect();
        let data = ResponseMatrix::from_rows(&rows).unwrap();
        let m = tetrachoric_matrix(&data).unwrap();
        let (mut c00, mut c01, mut c10, mut c11) = (0.0, 0.0, 0.0, 0.0);
        for r in &rows {
            match (r[0], r[1]) {
                (0, 0) => c00 += 1.0,
                (0, 1) => c01 += 1.0,
                (1, 0) => c10 += 1.0,
                _ => c11 += 1.0,
            }
        }
        let p = tetrachoric_pair(c00, c01, c10, c11).unwrap();
        assert_eq!(m.rho[(0, 1)], p.rho);
        assert_eq!(m.rho[(1, 0)], p.rho);
        assert_eq!(m.rho[(0, 0)], 1.0);
    }

    #[test]
    fn duplicated_column_hits_the_clamp() {
        let rows: Vec<Vec<u8>> = (0..80)
            .map(|i| {
                let x = ((i * 7) % 5 < 2) as u8;
                vec![x, x, ((i * 3) % 4 == 0) as u8]
            })
            .collect();
        let m = tetrachoric_matrix(&ResponseMatrix::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(m.rho[(0, 1)], RHO_LIMIT);
        assert!(m.flagged_pairs().contains(&(0, 1)));
    }

    #[test]
    fn constant_columns_are_excluded() {
        let rows: Vec<Vec<u8>> = (0..40).map(|i| vec![1, (i % 2) as u8, (i % 3 == 0) as u8]).collect();
        let m = tetrachoric_matrix(&ResponseMatrix::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(m.excluded_items, vec![0]);
        assert_eq!(m.items, vec![1, 2]);
        assert_eq!(m.dim(), 2);
    }

    #[test]
    fn repair_restores_positive_definite_correlation() {
        let bad = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(sorted_eigenvalues(&bad)[2] < 0.0);
        let fixed = repair_to_correlation(&bad);
        assert!(sorted_eigenvalues(&fixed)[2] > 0.0);
        for i in 0..3 {
            assert!((fixed[(i, i)] - 1.0).abs() < 1e-15);
            for j in 0..3 {
                assert_eq!(fixed[(i, j)], fixed[(j, i)]);
                assert!(fixed[(i, j)].abs() <= 1.0);
            }
        }
    }
}
