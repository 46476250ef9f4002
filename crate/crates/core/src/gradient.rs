//! Loss and gradient evaluation for the quadratic workload.
//!
//! Losses are unnormalized sums, `L_s(θ) = ||X_s θ - y_s||²`, so the partial
//! gradient is `2 X_sᵀ(X_s θ - y_s)`.

use nalgebra::DVector;

use crate::dataset::{DataBlock, Dataset};
use crate::error::{Error, Result};

/// A model parameter vector with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(DVector<f64>);

impl ParamVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(Error::NonFinite("parameter vector"))
        }
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(DVector::zeros(dimension))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(values))
    }
}

fn check_dim(block: &DataBlock, theta: &DVector<f64>) -> Result<()> {
    if block.dimension() != theta.len() {
        return Err(Error::Dimension {
            expected: block.dimension(),
            found: theta.len(),
        });
    }
    Ok(())
}

/// `2 Xᵀ(Xθ - y)` for one partition or batch.
pub fn partial_gradient(block: &DataBlock, theta: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(block, theta)?;
    let residual = &block.x * theta - &block.y;
    Ok(block.x.tr_mul(&residual) * 2.0)
}

/// `||Xθ - y||²` for one partition or batch.
pub fn block_loss(block: &DataBlock, theta: &DVector<f64>) -> Result<f64> {
    check_dim(block, theta)?;
    Ok((&block.x * theta - &block.y).norm_squared())
}

/// Pairwise (cascade) summation of equally sized vectors.
pub fn pairwise_sum(vectors: &[DVector<f64>]) -> Option<DVector<f64>> {
    match vectors {
        [] => None,
        [v] => Some(v.clone()),
        _ => {
            let (left, right) = vectors.split_at(vectors.len() / 2);
            Some(pairwise_sum(left)? + pairwise_sum(right)?)
        }
    }
}

fn pairwise_scalar(values: &[f64]) -> f64 {
    match values {
        [] => 0.0,
        [v] => *v,
        _ => {
            let (l, r) = values.split_at(values.len() / 2);
            pairwise_scalar(l) + pairwise_scalar(r)
        }
    }
}

/// Exact gradient of the total loss, `Σ_s ∇L_s(θ)`.
pub fn full_gradient(dataset: &Dataset, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let parts = dataset
        .partitions
        .iter()
        .map(|p| partial_gradient(&p.data, theta))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&parts).unwrap_or_else(|| DVector::zeros(theta.len())))
}

pub fn total_loss(dataset: &Dataset, theta: &DVector<f64>) -> Result<f64> {
    let losses = dataset
        .partitions
        .iter()
        .map(|p| block_loss(&p.data, theta))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_scalar(&losses))
}

/// `L(θ) - L(θ*)`.
pub fn optimality_gap(dataset: &Dataset, theta: &DVector<f64>) -> Result<f64> {
    Ok(total_loss(dataset, theta)? - dataset.optimal_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, geometric_smoothness, group_data};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// Central differences of the block loss.
    fn fd_gradient(block: &DataBlock, theta: &DVector<f64>) -> DVector<f64> {
        let h = 1e-5;
        DVector::from_fn(theta.len(), |i, _| {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += h;
            minus[i] -= h;
            (block_loss(block, &plus).unwrap() - block_loss(block, &minus).unwrap()) / (2.0 * h)
        })
    }

    fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / a.norm().max(b.norm())
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let ds = generate_dataset(4, 10, &[1.0, 3.0], 2).unwrap();
        for p in &ds.partitions {
            assert_eq!(partial_gradient(&p.data, &ds.theta_star).unwrap(), DVector::zeros(4));
        }
        assert_eq!(total_loss(&ds, &ds.theta_star).unwrap(), 0.0);
        assert_eq!(optimality_gap(&ds, &ds.theta_star).unwrap(), 0.0);
    }

    #[test]
    fn identity_block() {
        let block = DataBlock::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let g = partial_gradient(&block, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(g, DVector::from_vec(vec![2.0, 4.0]));
        assert_eq!(block_loss(&block, &DVector::from_vec(vec![1.0, 1.0])).unwrap(), 2.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = DMatrix::from_fn(20, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = random_vec(&mut rng, 20);
        let block = DataBlock::new(x, y).unwrap();
        for _ in 0..10 {
            let theta = random_vec(&mut rng, 5);
            let g = partial_gradient(&block, &theta).unwrap();
            assert!(rel_err(&g, &fd_gradient(&block, &theta)) < 1e-5);
        }
    }

    #[test]
    fn dataset_gradients_match_finite_differences() {
        let ds = generate_dataset(6, 15, &geometric_smoothness(3), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let theta = random_vec(&mut rng, 6);
            for p in &ds.partitions {
                let g = partial_gradient(&p.data, &theta).unwrap();
                assert!(rel_err(&g, &fd_gradient(&p.data, &theta)) < 1e-5);
            }
        }
    }

    #[test]
    fn smoothness_and_pl_inequalities_hold() {
        let ds = generate_dataset(5, 12, &[2.0, 3.0, 7.0], 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = random_vec(&mut rng, 5);
            let b = random_vec(&mut rng, 5);
            for p in &ds.partitions {
                let lhs = (partial_gradient(&p.data, &a).unwrap() - partial_gradient(&p.data, &b).unwrap()).norm();
                assert!(lhs <= p.smoothness * (&a - &b).norm() * (1.0 + 1e-9));
            }
            let gap = optimality_gap(&ds, &a).unwrap();
            let g = full_gradient(&ds, &a).unwrap();
            assert!(2.0 * ds.pl_constant * gap <= g.norm_squared() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn gradient_is_additive_over_batches_and_partitions() {
        let ds = generate_dataset(7, 12, &[1.0, 2.0, 4.0, 8.0], 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta = random_vec(&mut rng, 7);
        for group in group_data(&ds, 2, 3).unwrap() {
            let batches: Vec<_> = group.batches.iter().map(|b| partial_gradient(b, &theta).unwrap()).collect();
            let direct: Vec<_> = ds.partitions[group.partitions.clone()]
                .iter()
                .map(|p| partial_gradient(&p.data, &theta).unwrap())
                .collect();
            let a = pairwise_sum(&batches).unwrap();
            let b = pairwise_sum(&direct).unwrap();
            assert!(rel_err(&a, &b) < 1e-12);
        }
        let total: DVector<f64> = ds
            .partitions
            .iter()
            .map(|p| partial_gradient(&p.data, &theta).unwrap())
            .fold(DVector::zeros(7), |acc, g| acc + g);
        assert!(rel_err(&total, &full_gradient(&ds, &theta).unwrap()) < 1e-12);
    }

    #[test]
    fn total_loss_equals_sum_of_partition_losses() {
        let ds = generate_dataset(8, 20, &geometric_smoothness(5), 9).unwrap();
        let zero = DVector::zeros(8);
        let oracle: f64 = ds.partitions.iter().map(|p| p.data.y.norm_squared()).sum();
        assert_relative_eq!(total_loss(&ds, &zero).unwrap(), oracle, max_relative = 1e-13);
    }

    #[test]
    fn exact_gd_decreases_gap_monotonically() {
        let ds = generate_dataset(10, 30, &geometric_smoothness(4), 13).unwrap();
        let alpha = 1.0 / (2.0 * ds.smoothness);
        let mut theta = DVector::zeros(10);
        let mut prev = optimality_gap(&ds, &theta).unwrap();
        for _ in 0..100 {
            theta -= full_gradient(&ds, &theta).unwrap() * alpha;
            let gap = optimality_gap(&ds, &theta).unwrap();
            assert!(gap >= 0.0 && gap <= prev);
            prev = gap;
        }
    }

    #[test]
    fn dimension_mismatch_and_non_finite() {
        let block = DataBlock::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert!(matches!(
            partial_gradient(&block, &DVector::zeros(3)),
            Err(Error::Dimension { expected: 2, found: 3 })
        ));
        assert!(ParamVector::try_from(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::try_from(vec![1.0, 2.0]).is_ok());
        assert!(DataBlock::new(DMatrix::identity(2, 2), DVector::zeros(3)).is_err());
    }
}
