//! Synthetic least-squares workloads with prescribed per-partition smoothness,
//! and the worker/group storage layout.
//!
//! Each partition holds a Gaussian design matrix rescaled so that the loss
//! `||X_s θ - y_s||²` is exactly `L_s`-smooth, with noiseless targets
//! `y_s = X_s θ*`. The global optimum therefore has zero loss.

use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const POWER_TOLERANCE: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;
const MAX_RETRIES: usize = 5;
const RANK_TOLERANCE: f64 = 1e-12;

/// A design matrix with its target vector. Used both for whole partitions and
/// for the batches a group splits its data into.
#[derive(Clone, Debug, PartialEq)]
pub struct DataBlock {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl DataBlock {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn dimension(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `range` of this block as a new block.
    pub fn slice_rows(&self, range: Range<usize>) -> DataBlock {
        let n = range.len();
        DataBlock {
            x: self.x.rows(range.start, n).into_owned(),
            y: self.y.rows(range.start, n).into_owned(),
        }
    }

    /// Vertical concatenation of blocks sharing a dimension.
    pub fn stack<'a>(blocks: impl IntoIterator<Item = &'a DataBlock>) -> Result<DataBlock> {
        let blocks: Vec<&DataBlock> = blocks.into_iter().collect();
        let first = blocks.first().ok_or_else(|| Error::domain("cannot stack zero blocks"))?;
        let d = first.dimension();
        let n: usize = blocks.iter().map(|b| b.rows()).sum();
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        let mut row = 0;
        for b in &blocks {
            if b.dimension() != d {
                return Err(Error::Dimension {
                    expected: d,
                    found: b.dimension(),
                });
            }
            x.rows_mut(row, b.rows()).copy_from(&b.x);
            y.rows_mut(row, b.rows()).copy_from(&b.y);
            row += b.rows();
        }
        Ok(DataBlock { x, y })
    }
}

#[derive(Clone, Debug)]
pub struct Partition {
    /// 1-based partition index.
    pub index: usize,
    pub data: DataBlock,
    /// Smoothness constant of `||X_s θ - y_s||²`, i.e. `2 λ_max(X_sᵀX_s)`.
    pub smoothness: f64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub partitions: Vec<Partition>,
    pub theta_star: DVector<f64>,
    /// Smoothness of the total loss, `2 λ_max(Σ X_sᵀX_s)`.
    pub smoothness: f64,
    /// PL / strong convexity constant, `2 λ_min(Σ X_sᵀX_s)`.
    pub pl_constant: f64,
    /// Loss at `theta_star`; zero because targets are noiseless.
    pub optimal_loss: f64,
}

impl Dataset {
    pub fn dimension(&self) -> usize {
        self.theta_star.len()
    }

    pub fn partition_count(&self) -> usize {
        self.partitions.len()
    }

    pub fn condition_number(&self) -> f64 {
        self.smoothness / self.pl_constant
    }

    pub fn partition_smoothness(&self) -> Vec<f64> {
        self.partitions.iter().map(|p| p.smoothness).collect()
    }

    /// Writes one headerless CSV per partition (`partition_<s>.csv`): `n_s`
    /// rows, `d + 1` columns, the last column holding the target.
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for p in &self.partitions {
            let path = dir.join(format!("partition_{}.csv", p.index));
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
            for i in 0..p.data.rows() {
                let mut row: Vec<String> = p.data.x.row(i).iter().map(|v| format!("{v:e}")).collect();
                row.push(format!("{:e}", p.data.y[i]));
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// The smoothness law used in the reference experiments,
/// `L_s = (1.3^(s-1) + 1)²` for `s = 1..=count`.
pub fn geometric_smoothness(count: usize) -> Vec<f64> {
    (0..count)
        .map(|s| {
            let base = 1.3f64.powi(s as i32) + 1.0;
            base * base
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SmoothnessLaw {
    /// `"geometric"`: `(1.3^(s-1) + 1)²`.
    Named(String),
    Explicit(Vec<f64>),
}

/// The `[dataset]` table of an experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub dimension: usize,
    pub rows_per_partition: usize,
    /// Number of partitions; required for the `"geometric"` law, and must match the
    /// list length when given alongside an explicit law.
    #[serde(default)]
    pub partitions: Option<usize>,
    pub smoothness: SmoothnessLaw,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetConfig {
    pub fn smoothness_targets(&self) -> Result<Vec<f64>> {
        let targets = match &self.smoothness {
            SmoothnessLaw::Named(name) if name == "geometric" => {
                let count = self
                    .partitions
                    .ok_or_else(|| Error::config("smoothness = \"geometric\" requires `partitions`"))?;
                geometric_smoothness(count)
            }
            SmoothnessLaw::Named(name) => return Err(Error::config(format!("unknown smoothness law {name:?}"))),
            SmoothnessLaw::Explicit(list) => {
                if let Some(count) = self.partitions {
                    if count != list.len() {
                        return Err(Error::config(format!(
                            "partitions = {count} but {} smoothness values given",
                            list.len()
                        )));
                    }
                }
                list.clone()
            }
        };
        Ok(targets)
    }

    pub fn generate(&self) -> Result<Dataset> {
        generate_dataset(self.dimension, self.rows_per_partition, &self.smoothness_targets()?, self.seed)
    }
}

/// Generates `targets.len()` partitions of `rows` × `dimension` Gaussian rows,
/// each rescaled to the requested smoothness.
///
/// Regenerates with a derived seed (at most five times) when the stacked
/// design is numerically rank deficient.
pub fn generate_dataset(dimension: usize, rows: usize, targets: &[f64], seed: u64) -> Result<Dataset> {
    if dimension == 0 || rows == 0 || targets.is_empty() {
        return Err(Error::config("dimension, rows and partition count must be positive"));
    }
    if targets.len() * rows <= dimension {
        return Err(Error::config(format!(
            "S * n = {} must exceed the dimension {dimension}",
            targets.len() * rows
        )));
    }
    if let Some(bad) = targets.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::config(format!("smoothness targets must be positive, got {bad}")));
    }

    let mut ratio = 0.0;
    for attempt in 0..=MAX_RETRIES {
        let attempt_seed = seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed);
        let theta_star = DVector::from_fn(dimension, |_, _| rng.sample::<f64, _>(StandardNormal));

        let mut partitions = Vec::with_capacity(targets.len());
        let mut gram = DMatrix::zeros(dimension, dimension);
        for (s, &target) in targets.iter().enumerate() {
            let raw = DMatrix::from_fn(rows, dimension, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = rescale_to_smoothness(&raw, target)?;
            let y = &x * &theta_star;
            gram += x.tr_mul(&x);
            partitions.push(Partition {
                index: s + 1,
                data: DataBlock { x, y },
                smoothness: target,
            });
        }

        let smoothness = 2.0 * dominant_eigenvalue(&gram, attempt_seed);
        let pl_constant = 2.0 * SymmetricEigen::new(gram).eigenvalues.min();
        ratio = pl_constant / smoothness;
        if ratio >= RANK_TOLERANCE {
            return Ok(Dataset {
                partitions,
                theta_star,
                smoothness,
                pl_constant,
                optimal_loss: 0.0,
            });
        }
        log::warn!("dataset attempt {attempt} rank deficient (mu/L = {ratio:e}), regenerating");
    }
    Err(Error::Regeneration {
        attempts: MAX_RETRIES + 1,
        ratio,
    })
}

/// Returns `c·X` with `c` chosen so that `2 λ_max((cX)ᵀ(cX)) = target`.
pub fn rescale_to_smoothness(x: &DMatrix<f64>, target: f64) -> Result<DMatrix<f64>> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::domain(format!("target smoothness must be positive, got {target}")));
    }
    if x.iter().all(|v| *v == 0.0) {
        return Err(Error::UndefinedScale);
    }
    let lambda = dominant_eigenvalue(&x.tr_mul(x), 0x5EED);
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::UndefinedScale);
    }
    Ok(x * (target / (2.0 * lambda)).sqrt())
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from a start vector derived from `seed`.
pub fn dominant_eigenvalue(a: &DMatrix<f64>, seed: u64) -> f64 {
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(n, |_, _| rng.random_range(0.5..1.5));
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = a * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= POWER_TOLERANCE * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Worker → batch storage map for `M` workers in groups of `M_G`.
///
/// Worker `m` (0-based) belongs to group `m / M_G` and, with local index
/// `k = m mod M_G`, stores batches `(k + i) mod M_G` for `i < r_G`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub workers: usize,
    pub group_size: usize,
    pub groups: usize,
    pub redundancy: usize,
    pub group_redundancy: usize,
    storage: Vec<Vec<usize>>,
}

impl Assignment {
    pub fn group_of(&self, worker: usize) -> usize {
        worker / self.group_size
    }

    pub fn workers_in(&self, group: usize) -> Range<usize> {
        group * self.group_size..(group + 1) * self.group_size
    }

    /// Batch indices (within the worker's group) stored at `worker`, in coding order.
    pub fn stored_batches(&self, worker: usize) -> &[usize] {
        &self.storage[worker]
    }

    /// Whether every worker holds its group's whole partition, so no coding
    /// is needed.
    pub fn is_fully_replicated(&self) -> bool {
        self.group_redundancy == self.group_size
    }
}

pub fn build_assignment(workers: usize, group_size: usize, redundancy: usize) -> Result<Assignment> {
    if workers == 0 {
        return Err(Error::config("M must be positive"));
    }
    if group_size == 0 || !workers.is_multiple_of(group_size) {
        return Err(Error::config(format!(
            "M_G = {group_size} must be an integer divisor of M = {workers}"
        )));
    }
    if redundancy == 0 || redundancy > workers {
        return Err(Error::config(format!("r = {redundancy} must satisfy 1 <= r <= M = {workers}")));
    }
    let group_redundancy = redundancy.min(group_size);
    let storage = (0..workers)
        .map(|m| {
            let local = m % group_size;
            (0..group_redundancy).map(|i| (local + i) % group_size).collect()
        })
        .collect();
    Ok(Assignment {
        workers,
        group_size,
        groups: workers / group_size,
        redundancy,
        group_redundancy,
        storage,
    })
}

/// The data held by one worker group.
#[derive(Clone, Debug)]
pub struct GroupData {
    /// 0-based indices into `Dataset::partitions`.
    pub partitions: Range<usize>,
    /// Sum of the constituent partitions' smoothness constants.
    pub smoothness: f64,
    /// The group's data split row-wise into `M_G` batches.
    pub batches: Vec<DataBlock>,
}

/// Splits the dataset's partitions contiguously across `groups` groups and
/// each group's rows into `group_size` near-equal batches.
pub fn group_data(dataset: &Dataset, groups: usize, group_size: usize) -> Result<Vec<GroupData>> {
    let s = dataset.partition_count();
    if groups == 0 || groups > s {
        return Err(Error::config(format!("G = {groups} groups need 1 <= G <= S = {s} partitions")));
    }
    (0..groups)
        .map(|g| {
            let range = (g * s / groups)..((g + 1) * s / groups);
            let parts = &dataset.partitions[range.clone()];
            let stacked = DataBlock::stack(parts.iter().map(|p| &p.data))?;
            let n = stacked.rows();
            if n < group_size {
                return Err(Error::config(format!(
                    "group {g} has {n} rows, fewer than M_G = {group_size} batches"
                )));
            }
            let batches = (0..group_size)
                .map(|j| stacked.slice_rows((j * n / group_size)..((j + 1) * n / group_size)))
                .collect();
            Ok(GroupData {
                partitions: range,
                smoothness: parts.iter().map(|p| p.smoothness).sum(),
                batches,
            })
        })
        .collect()
}
