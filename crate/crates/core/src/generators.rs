//! True-parameter draws and the three response generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{Condition, GeneratorKind, SimulationDesign};
use crate::error::{IrtError, Result};

/// Random generator used everywhere in the toolkit: ChaCha with 8 rounds,
/// seeded through `seed_from_u64`. Stable across platforms and releases of
/// `rand_chacha`.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parameterization {
    /// `P = logistic(a (theta - b))`
    SlopeDifficulty,
    /// `P = logistic(a theta + d)`, with the `b` vector holding `d`.
    SlopeIntercept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    pub theta: Vec<f64>,
    pub a: Vec<f64>,
    /// Difficulties, or intercepts under [`Parameterization::SlopeIntercept`].
    pub b: Vec<f64>,
    pub parameterization: Parameterization,
    pub rounded: bool,
}

impl TrueParameters {
    pub fn n_items(&self) -> usize {
        self.a.len()
    }

    pub fn n_persons(&self) -> usize {
        self.theta.len()
    }

    /// Generating difficulties; intercepts are converted with `b = -d / a`.
    pub fn difficulties(&self) -> Vec<f64> {
        match self.parameterization {
            Parameterization::SlopeDifficulty => self.b.clone(),
            Parameterization::SlopeIntercept => {
                self.a.iter().zip(&self.b).map(|(a, d)| -d / a).collect()
            }
        }
    }

    /// Generating intercepts; difficulties are converted with `d = -a b`.
    pub fn intercepts(&self) -> Vec<f64> {
        match self.parameterization {
            Parameterization::SlopeIntercept => self.b.clone(),
            Parameterization::SlopeDifficulty => {
                self.a.iter().zip(&self.b).map(|(a, b)| -a * b).collect()
            }
        }
    }

    fn check(&self, expected: Parameterization) -> Result<()> {
        if self.a.len() != self.b.len() {
            return Err(IrtError::Dimension(format!(
                "{} slopes but {} difficulties",
                self.a.len(),
                self.b.len()
            )));
        }
        if self.a.is_empty() || self.theta.is_empty() {
            return Err(IrtError::Dimension("empty parameter vector".into()));
        }
        if self.parameterization != expected {
            return Err(IrtError::Input(format!(
                "generator expects {expected:?} parameters, got {:?}",
                self.parameterization
            )));
        }
        Ok(())
    }
}

/// Persisted form of the generating parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParametersRecord {
    pub theta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub parameterization: Parameterization,
    pub seed: u64,
}

impl TrueParametersRecord {
    pub fn new(params: &TrueParameters, seed: u64) -> Self {
        TrueParametersRecord {
            theta: params.theta.clone(),
            a: params.a.clone(),
            b: params.b.clone(),
            parameterization: params.parameterization,
            seed,
        }
    }
}

/// N x K matrix of 0/1 responses, row-major (persons by items).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    n_persons: usize,
    n_items: usize,
    data: Vec<u8>,
}

impl ResponseMatrix {
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n_persons = rows.len();
        if n_persons == 0 {
            return Err(IrtError::Input("response matrix has no rows".into()));
        }
        let n_items = rows[0].len();
        let mut data = Vec::with_capacity(n_persons * n_items);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_items {
                return Err(IrtError::Dimension(format!(
                    "row {} has {} entries, expected {n_items}",
                    i + 1,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(n_persons, n_items, data)
    }

    pub fn from_vec(n_persons: usize, n_items: usize, data: Vec<u8>) -> Result<Self> {
        if n_items == 0 || n_persons == 0 {
            return Err(IrtError::Input("response matrix must be non-empty".into()));
        }
        if data.len() != n_persons * n_items {
            return Err(IrtError::Dimension(format!(
                "{} entries for a {n_persons} x {n_items} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&x| x > 1) {
            return Err(IrtError::Input(format!(
                "non-binary entry {} at row {}, column {}",
                data[pos],
                pos / n_items + 1,
                pos % n_items + 1
            )));
        }
        Ok(ResponseMatrix {
            n_persons,
            n_items,
            data,
        })
    }

    pub fn n_persons(&self) -> usize {
        self.n_persons
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    #[inline]
    pub fn get(&self, person: usize, item: usize) -> u8 {
        self.data[person * self.n_items + item]
    }

    pub fn set(&mut self, person: usize, item: usize, value: bool) {
        self.data[person * self.n_items + item] = value as u8;
    }

    pub fn row(&self, person: usize) -> &[u8] {
        &self.data[person * self.n_items..(person + 1) * self.n_items]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.n_items)
    }

    pub fn column(&self, item: usize) -> Vec<u8> {
        (0..self.n_persons).map(|i| self.get(i, item)).collect()
    }

    /// Number of correct (1) responses per item.
    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0usize; self.n_items];
        for row in self.rows() {
            for (s, &x) in sums.iter_mut().zip(row) {
                *s += x as usize;
            }
        }
        sums
    }

    pub fn proportions_correct(&self) -> Vec<f64> {
        let n = self.n_persons as f64;
        self.column_sums().into_iter().map(|s| s as f64 / n).collect()
    }

    /// Items whose column is all 0 or all 1.
    pub fn constant_columns(&self) -> Vec<usize> {
        self.column_sums()
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s == 0 || s == self.n_persons)
            .map(|(j, _)| j)
            .collect()
    }

    /// Copy with the given item columns removed.
    pub fn without_columns(&self, drop: &[usize]) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n_items).filter(|j| !drop.contains(j)).collect();
        let mut data = Vec::with_capacity(self.n_persons * keep.len());
        for row in self.rows() {
            data.extend(keep.iter().map(|&j| row[j]));
        }
        Self::from_vec(self.n_persons, keep.len(), data)
    }

    pub fn column_labels(&self) -> Vec<String> {
        (1..=self.n_items).map(|j| format!("Item{j}")).collect()
    }

    /// Header `Item1,...,ItemK` followed by one line of 0/1 per person.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.n_persons * (2 * self.n_items + 1) + 8 * self.n_items);
        out.push_str(&self.column_labels().join(","));
        out.push('\n');
        for row in self.rows() {
            for (j, &x) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push(if x == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    /// Parses CSV with a header line. Fields must be `0` or `1`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| IrtError::Input("empty CSV".into()))?;
        let n_items = header.split(',').count();
        let mut data = Vec::new();
        let mut n_persons = 0;
        for (lineno, line) in lines.enumerate() {
            let mut count = 0;
            for field in line.split(',') {
                let v = match field.trim().trim_matches('"') {
                    "0" => 0u8,
                    "1" => 1u8,
                    other => {
                        return Err(IrtError::Input(format!(
                            "line {}: non-binary entry '{other}'",
                            lineno + 2
                        )))
                    }
                };
                data.push(v);
                count += 1;
            }
            if count != n_items {
                return Err(IrtError::Dimension(format!(
                    "line {}: {count} fields, header has {n_items}",
                    lineno + 2
                )));
            }
            n_persons += 1;
        }
        Self::from_vec(n_persons, n_items, data)
    }

    /// Hex SHA-256 of [`ResponseMatrix::to_csv`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Two-parameter logistic item response function `1 / (1 + exp(-a (theta - b)))`.
#[inline]
pub fn irf_2pl(theta: f64, a: f64, b: f64) -> f64 {
    logistic(a * (theta - b))
}

fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[inline]
fn bernoulli(rng: &mut SimRng, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Draws theta ~ N(mean, sd), a ~ U(a_range), b ~ U(b_range).
///
/// A1 and A2 draw abilities, then slopes, then difficulties. A3 draws slopes,
/// intercepts, then abilities, rounds everything to two decimals and tags the
/// result as slope-intercept.
pub fn draw_true_parameters(
    cond: &Condition,
    design: &SimulationDesign,
    rng: &mut SimRng,
) -> TrueParameters {
    let n = cond.n_persons;
    let k = cond.n_items;
    let (mean, sd) = (design.ability_mean, design.ability_sd);
    let (ar, br) = (design.a_range, design.b_range);
    let normal = |rng: &mut SimRng| mean + sd * rng.sample::<f64, _>(StandardNormal);
    match cond.generator {
        GeneratorKind::A1 | GeneratorKind::A2 => {
            let theta: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
            let a = (0..k).map(|_| uniform(rng, ar.min, ar.max)).collect();
            let b = (0..k).map(|_| uniform(rng, br.min, br.max)).collect();
            TrueParameters {
                theta,
                a,
                b,
                parameterization: Parameterization::SlopeDifficulty,
                rounded: false,
            }
        }
        GeneratorKind::A3 => {
            let a = (0..k).map(|_| round2(uniform(rng, ar.min, ar.max))).collect();
            let b = (0..k).map(|_| round2(uniform(rng, br.min, br.max))).collect();
            let theta = (0..n).map(|_| round2(normal(rng))).collect();
            TrueParameters {
                theta,
                a,
                b,
                parameterization: Parameterization::SlopeIntercept,
                rounded: true,
            }
        }
    }
}

/// Column-major fill: `prob(i, j)` for every cell, draws consumed column by
/// column and top to bottom inside a column.
fn fill_column_major(
    n: usize,
    k: usize,
    rng: &mut SimRng,
    mut prob: impl FnMut(usize, usize) -> f64,
) -> ResponseMatrix {
    let mut data = vec![0u8; n * k];
    for j in 0..k {
        for i in 0..n {
            data[i * k + j] = bernoulli(rng, prob(i, j)) as u8;
        }
    }
    ResponseMatrix {
        n_persons: n,
        n_items: k,
        data,
    }
}

/// A1 kernel: `P(i, j) = logistic(theta_i * (-b_j) * a[L mod K])` with `L`
/// the zero-based column-major index `j * N + i`. The slope vector recycles
/// down the flattened matrix rather than across items.
pub fn a1_probability(params: &TrueParameters, person: usize, item: usize) -> f64 {
    let n = params.n_persons();
    let k = params.n_items();
    let linear = item * n + person;
    let multiplier = params.a[linear % k];
    logistic(params.theta[person] * -params.b[item] * multiplier)
}

pub fn generate_a1(params: &TrueParameters, rng: &mut SimRng) -> Result<ResponseMatrix> {
    params.check(Parameterization::SlopeDifficulty)?;
    Ok(fill_column_major(params.n_persons(), params.n_items(), rng, |i, j| {
        a1_probability(params, i, j)
    }))
}

pub fn generate_a2(params: &TrueParameters, rng: &mut SimRng) -> Result<ResponseMatrix> {
    params.check(Parameterization::SlopeDifficulty)?;
    Ok(fill_column_major(params.n_persons(), params.n_items(), rng, |i, j| {
        irf_2pl(params.theta[i], params.a[j], params.b[j])
    }))
}

pub fn generate_a3(params: &TrueParameters, rng: &mut SimRng) -> Result<ResponseMatrix> {
    params.check(Parameterization::SlopeIntercept)?;
    Ok(fill_column_major(params.n_persons(), params.n_items(), rng, |i, j| {
        logistic(params.a[j] * params.theta[i] + params.b[j])
    }))
}

pub fn generate(
    kind: GeneratorKind,
    params: &TrueParameters,
    rng: &mut SimRng,
) -> Result<ResponseMatrix> {
    match kind {
        GeneratorKind::A1 => generate_a1(params, rng),
        GeneratorKind::A2 => generate_a2(params, rng),
        GeneratorKind::A3 => generate_a3(params, rng),
    }
}

/// Draw parameters and responses for one condition from a single seed.
pub fn simulate_dataset(
    cond: &Condition,
    design: &SimulationDesign,
    seed: u64,
) -> Result<(TrueParameters, ResponseMatrix)> {
    let mut rng = rng_from_seed(seed);
    let params = draw_true_parameters(cond, design, &mut rng);
    let data = generate(cond.generator, &params, &mut rng)?;
    Ok((params, data))
}
