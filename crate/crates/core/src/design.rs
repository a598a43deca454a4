//! Simulation grid: the design, its conditions, and per-replication seeds.
//!
//! A design is the cross product of generator kinds, test lengths and sample
//! sizes. Every replication of every condition gets its own seed, derived by
//! hashing rather than drawn from a shared stream, so replications can be run
//! in any order (or in parallel) and still see the same random numbers.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IrtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "2PL")]
    TwoPL,
}

/// Data-generation algorithm.
///
/// * `A1` - vectorized logistic kernel `plogis(theta * -b * a)` with the
///   slope vector recycled down the flattened matrix.
/// * `A2` - item-by-item 2PL draw in slope-difficulty form.
/// * `A3` - slope-intercept draw with parameters rounded to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GeneratorKind {
    A1,
    A2,
    A3,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 3] = [GeneratorKind::A1, GeneratorKind::A2, GeneratorKind::A3];
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GeneratorKind::A1 => "A1",
            GeneratorKind::A2 => "A2",
            GeneratorKind::A3 => "A3",
        };
        f.write_str(s)
    }
}

impl FromStr for GeneratorKind {
    type Err = IrtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a1" => Ok(GeneratorKind::A1),
            "a2" => Ok(GeneratorKind::A2),
            "a3" => Ok(GeneratorKind::A3),
            other => Err(IrtError::Config(format!(
                "unknown generator '{other}' (expected a1, a2 or a3)"
            ))),
        }
    }
}

/// Closed real interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 2]", try_from = "[f64; 2]")]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() {
            return Err(IrtError::Config(format!(
                "interval bounds must be finite, got [{min}, {max}]"
            )));
        }
        if min > max {
            return Err(IrtError::Config(format!(
                "interval lower bound {min} exceeds upper bound {max}"
            )));
        }
        Ok(Interval { min, max })
    }

    /// Inclusive at both ends.
    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.min, i.max]
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = IrtError;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Interval::new(v[0], v[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub model: ModelKind,
    pub ability_mean: f64,
    pub ability_sd: f64,
    pub a_range: Interval,
    pub b_range: Interval,
    pub item_counts: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub master_seed: u64,
    pub generator_kinds: BTreeSet<GeneratorKind>,
}

pub const DEFAULT_MASTER_SEED: u64 = 123;

impl Default for SimulationDesign {
    /// Two test lengths, two sample sizes, 100 replications, theta ~ N(0, 1),
    /// a ~ U[1, 2], b ~ U[-2, 2], all three generators.
    fn default() -> Self {
        SimulationDesign {
            model: ModelKind::TwoPL,
            ability_mean: 0.0,
            ability_sd: 1.0,
            a_range: Interval { min: 1.0, max: 2.0 },
            b_range: Interval {
                min: -2.0,
                max: 2.0,
            },
            item_counts: vec![20, 40],
            sample_sizes: vec![500, 2000],
            replications: 100,
            master_seed: DEFAULT_MASTER_SEED,
            generator_kinds: GeneratorKind::ALL.into_iter().collect(),
        }
    }
}

impl SimulationDesign {
    pub fn validate(&self) -> Result<()> {
        Interval::new(self.a_range.min, self.a_range.max)?;
        Interval::new(self.b_range.min, self.b_range.max)?;
        if !(self.ability_sd > 0.0 && self.ability_sd.is_finite()) {
            return Err(IrtError::Config(format!(
                "ability sd must be positive, got {}",
                self.ability_sd
            )));
        }
        if !self.ability_mean.is_finite() {
            return Err(IrtError::Config("ability mean must be finite".into()));
        }
        if self.replications < 1 {
            return Err(IrtError::Config("replications must be at least 1".into()));
        }
        if self.item_counts.is_empty() {
            return Err(IrtError::Config("item count list is empty".into()));
        }
        if self.sample_sizes.is_empty() {
            return Err(IrtError::Config("sample size list is empty".into()));
        }
        if self.generator_kinds.is_empty() {
            return Err(IrtError::Config("generator list is empty".into()));
        }
        if let Some(k) = self.item_counts.iter().find(|&&k| k < 2) {
            return Err(IrtError::Config(format!("item count {k} is below 2")));
        }
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n < 2) {
            return Err(IrtError::Config(format!("sample size {n} is below 2")));
        }
        Ok(())
    }

    /// Number of datasets the design produces.
    pub fn total_datasets(&self) -> usize {
        self.generator_kinds.len()
            * dedup_sorted(&self.item_counts).len()
            * dedup_sorted(&self.sample_sizes).len()
            * self.replications
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("design serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub generator: GeneratorKind,
    pub n_items: usize,
    pub n_persons: usize,
    pub condition_id: String,
}

impl Condition {
    pub fn new(generator: GeneratorKind, n_items: usize, n_persons: usize) -> Self {
        Condition {
            generator,
            n_items,
            n_persons,
            condition_id: condition_id(generator, n_items, n_persons),
        }
    }
}

/// `"<generator>-k<K>-n<N>"`, e.g. `A3-k20-n500`.
pub fn condition_id(generator: GeneratorKind, n_items: usize, n_persons: usize) -> String {
    format!("{generator}-k{n_items}-n{n_persons}")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReplicationKey {
    pub condition_id: String,
    pub rep_index: usize,
    pub seed: u64,
}

impl ReplicationKey {
    pub fn new(master_seed: u64, condition_id: &str, rep_index: usize) -> Self {
        ReplicationKey {
            condition_id: condition_id.to_string(),
            rep_index,
            seed: derive_seed(master_seed, condition_id, rep_index),
        }
    }
}

fn dedup_sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Cross product generator × items × samples, sorted by (generator, K, N).
/// Duplicate levels collapse.
pub fn enumerate_conditions(design: &SimulationDesign) -> Result<Vec<Condition>> {
    design.validate()?;
    let items = dedup_sorted(&design.item_counts);
    let samples = dedup_sorted(&design.sample_sizes);
    let mut out = Vec::with_capacity(design.generator_kinds.len() * items.len() * samples.len());
    for &generator in &design.generator_kinds {
        for &k in &items {
            for &n in &samples {
                out.push(Condition::new(generator, k, n));
            }
        }
    }
    Ok(out)
}

/// All replication keys of the design, condition-major.
pub fn replication_keys(design: &SimulationDesign) -> Result<Vec<(Condition, ReplicationKey)>> {
    let conditions = enumerate_conditions(design)?;
    let mut keys = Vec::with_capacity(conditions.len() * design.replications);
    for cond in conditions {
        for rep in 0..design.replications {
            let key = ReplicationKey::new(design.master_seed, &cond.condition_id, rep);
            keys.push((cond.clone(), key));
        }
    }
    Ok(keys)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-replication seed.
///
/// `mix64(mix64(mix64(master) ^ fnv1a(condition_id)) ^ rep_index)` where
/// `mix64` is the SplitMix64 finalizer and `fnv1a` the 64-bit FNV-1a hash of
/// the UTF-8 bytes of the condition id.
pub fn derive_seed(master_seed: u64, condition_id: &str, rep_index: usize) -> u64 {
    let mut h = FNV_OFFSET;
    for &byte in condition_id.as_bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(FNV_PRIME);
    }
    mix64(mix64(mix64(master_seed) ^ h) ^ rep_index as u64)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AbilityConfig {
    mean: Option<f64>,
    sd: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignConfig {
    model: Option<String>,
    ability: Option<AbilityConfig>,
    a_range: Option<[f64; 2]>,
    b_range: Option<[f64; 2]>,
    items: Option<Vec<usize>>,
    samples: Option<Vec<usize>>,
    replications: Option<usize>,
    seed: Option<u64>,
    generators: Option<Vec<String>>,
}

/// Parses a JSON design config. Every key is optional; missing keys take the
/// defaults of [`SimulationDesign::default`]. Blank input is the default design.
pub fn parse_design(config_text: &str) -> Result<SimulationDesign> {
    let cfg: DesignConfig = if config_text.trim().is_empty() {
        DesignConfig::default()
    } else {
        serde_json::from_str(config_text)
            .map_err(|e| IrtError::Config(format!("malformed design config: {e}")))?
    };
    let mut design = SimulationDesign::default();
    if let Some(model) = cfg.model {
        match model.trim().to_ascii_uppercase().as_str() {
            "2PL" => design.model = ModelKind::TwoPL,
            other => {
                return Err(IrtError::Config(format!(
                    "unsupported model '{other}' (only 2PL generation is supported)"
                )))
            }
        }
    }
    if let Some(ability) = cfg.ability {
        if let Some(m) = ability.mean {
            design.ability_mean = m;
        }
        if let Some(sd) = ability.sd {
            design.ability_sd = sd;
        }
    }
    if let Some([lo, hi]) = cfg.a_range {
        design.a_range = Interval::new(lo, hi).map_err(|e| prefix(e, "a_range"))?;
    }
    if let Some([lo, hi]) = cfg.b_range {
        design.b_range = Interval::new(lo, hi).map_err(|e| prefix(e, "b_range"))?;
    }
    if let Some(items) = cfg.items {
        design.item_counts = items;
    }
    if let Some(samples) = cfg.samples {
        design.sample_sizes = samples;
    }
    if let Some(r) = cfg.replications {
        design.replications = r;
    }
    if let Some(seed) = cfg.seed {
        design.master_seed = seed;
    }
    if let Some(gens) = cfg.generators {
        design.generator_kinds = gens
            .iter()
            .map(|g| g.parse())
            .collect::<Result<BTreeSet<_>>>()?;
    }
    design.validate()?;
    Ok(design)
}

fn prefix(e: IrtError, key: &str) -> IrtError {
    match e {
        IrtError::Config(msg) => IrtError::Config(format!("{key}: {msg}")),
        other => other,
    }
}
