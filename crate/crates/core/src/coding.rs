//! Gradient coding inside a worker group.
//!
//! Worker `k` of a group of `M_G` stores batches `k, k+1, …, k+r_G-1`
//! (mod `M_G`) and uploads `f_k = Σ_j B[k,j] g_j`. The all-ones vector must lie
//! in the row span of every `F = M_G - r_G + 1` rows of `B`, so the group
//! gradient `Σ_j g_j` is recoverable from any `F` uploads.
//!
//! Codes are built by drawing a random `(r_G - 1) × M_G` matrix `H` with
//! `H·1 = 0` and choosing each row of `B` on its cyclic support inside the null
//! space of `H`. Every `F` rows then span `null(H)`, which contains `1`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ATTEMPTS: usize = 16;
const EXHAUSTIVE_LIMIT: usize = 20_000;
const SAMPLED_SUBSETS: usize = 2048;
const RESIDUAL_TOLERANCE: f64 = 1e-9;
/// Rejects codes whose decoding would amplify rounding beyond this factor.
const MAX_AMPLIFICATION: f64 = 1e5;
// Accepted, with a warning, when no attempt reaches `MAX_AMPLIFICATION`.
const HARD_AMPLIFICATION: f64 = 1e9;

#[derive(Clone, Debug, PartialEq)]
pub struct EncodingMatrix {
    coefficients: DMatrix<f64>,
    redundancy: usize,
    threshold: usize,
}

impl EncodingMatrix {
    pub fn group_size(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn redundancy(&self) -> usize {
        self.redundancy
    }

    /// Minimum number of uploads needed to decode, `M_G - r_G + 1`.
    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// Columns worker `k` may combine, in the order `encode` expects its inputs.
    pub fn support(&self, worker: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.group_size();
        (0..self.redundancy).map(move |i| (worker + i) % n)
    }

    /// Wraps a hand-built matrix after checking its support and decodability.
    pub fn from_rows(coefficients: DMatrix<f64>, redundancy: usize) -> Result<Self> {
        let n = coefficients.nrows();
        if coefficients.ncols() != n || redundancy == 0 || redundancy > n {
            return Err(Error::domain(format!(
                "need a square matrix and 1 <= r_G <= M_G, got {}x{} with r_G = {redundancy}",
                n,
                coefficients.ncols()
            )));
        }
        let code = Self {
            coefficients,
            redundancy,
            threshold: n - redundancy + 1,
        };
        for k in 0..n {
            let support: Vec<usize> = code.support(k).collect();
            if (0..n).any(|j| !support.contains(&j) && code.coefficients[(k, j)] != 0.0) {
                return Err(Error::domain(format!("row {k} has entries outside its cyclic support")));
            }
        }
        code.verify(&mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(code)
    }

    /// `f_k = Σ_i B[k, (k+i) mod M_G] g_i` where `batch_gradients[i]` is the
    /// gradient of the worker's `i`-th stored batch.
    pub fn encode(&self, worker: usize, batch_gradients: &[DVector<f64>]) -> Result<DVector<f64>> {
        if worker >= self.group_size() {
            return Err(Error::domain(format!("worker {worker} outside group of {}", self.group_size())));
        }
        if batch_gradients.len() != self.redundancy {
            return Err(Error::MissingGradient(format!(
                "worker {worker}: {} batch gradients supplied, {} stored",
                batch_gradients.len(),
                self.redundancy
            )));
        }
        // Accumulate in ascending column order so workers sharing a support
        // (full replication) produce bitwise-identical sums.
        let mut terms: Vec<(usize, &DVector<f64>)> = self.support(worker).zip(batch_gradients).collect();
        terms.sort_unstable_by_key(|&(col, _)| col);
        let mut out = DVector::zeros(batch_gradients[0].len());
        for (col, g) in terms {
            out.axpy(self.coefficients[(worker, col)], g, 1.0);
        }
        Ok(out)
    }

    /// Coefficients `a` with `aᵀ B_U = 1ᵀ` for the rows `workers`; the
    /// minimum-norm solution when more than enough rows are given.
    pub fn decoding_coefficients(&self, workers: &[usize]) -> Result<DVector<f64>> {
        let n = self.group_size();
        let decode_err = || Error::Decode { workers: workers.to_vec() };
        if workers.len() < self.threshold || workers.iter().any(|&w| w >= n) {
            return Err(decode_err());
        }
        let mut bt = DMatrix::zeros(n, workers.len());
        for (c, &w) in workers.iter().enumerate() {
            bt.set_column(c, &self.coefficients.row(w).transpose());
        }
        let ones = DVector::from_element(n, 1.0);
        let svd = bt.clone().svd(true, true);
        let cutoff = 1e-12 * svd.singular_values.max();
        let a = svd.solve(&ones, cutoff).map_err(|_| decode_err())?;
        let residual = (&bt * &a - &ones).amax();
        let scale = 1.0 + a.amax() * self.coefficients.amax();
        if !residual.is_finite() || residual > RESIDUAL_TOLERANCE * scale {
            return Err(decode_err());
        }
        Ok(a)
    }

    /// Recovers the group gradient from the uploads of `workers`.
    pub fn decode(&self, workers: &[usize], encoded: &[DVector<f64>]) -> Result<DVector<f64>> {
        if workers.len() != encoded.len() || encoded.is_empty() {
            return Err(Error::Decode { workers: workers.to_vec() });
        }
        if self.redundancy == self.group_size() {
            // every worker holds the whole group partition
            return Ok(encoded[0].clone());
        }
        let a = self.decoding_coefficients(workers)?;
        Ok(Self::combine(&a, encoded))
    }

    /// `Σ_k a_k f_k`, the decode step once coefficients are known.
    pub fn combine(coefficients: &DVector<f64>, encoded: &[DVector<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(encoded[0].len());
        for (coef, f) in coefficients.iter().zip(encoded) {
            out.axpy(*coef, f, 1.0);
        }
        out
    }

    /// Worst `max|a| * max|B|` over every threshold-sized subset when there
    /// are at most `EXHAUSTIVE_LIMIT` of them, otherwise over a random sample.
    fn verify(&self, rng: &mut ChaCha8Rng) -> Result<f64> {
        let n = self.group_size();
        let f = self.threshold;
        let scale = self.coefficients.amax();
        let mut worst = 0.0_f64;
        let mut check = |subset: &[usize]| -> Result<()> {
            let a = self.decoding_coefficients(subset)?;
            worst = worst.max(a.amax() * scale);
            Ok(())
        };
        if binomial(n, f) <= EXHAUSTIVE_LIMIT as f64 {
            for subset in subsets(n, f) {
                check(&subset)?;
            }
        } else {
            for _ in 0..SAMPLED_SUBSETS {
                let mut all: Vec<usize> = (0..n).collect();
                for i in 0..f {
                    let j = rng.random_range(i..n);
                    all.swap(i, j);
                }
                let mut subset = all[..f].to_vec();
                subset.sort_unstable();
                check(&subset)?;
            }
        }
        Ok(worst)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for row in self.coefficients.row_iter() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k.min(n - k)).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

fn nonzero_uniform(rng: &mut ChaCha8Rng) -> f64 {
    let magnitude = rng.random_range(0.1..=1.0);
    if rng.random_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

fn random_code(n: usize, redundancy: usize, rng: &mut ChaCha8Rng) -> Option<DMatrix<f64>> {
    let s = redundancy - 1;
    let mut h = DMatrix::from_fn(s, n, |_, _| nonzero_uniform(rng));
    for i in 0..s {
        let partial: f64 = h.row(i).iter().take(n - 1).sum();
        h[(i, n - 1)] = -partial;
    }
    let mut b = DMatrix::zeros(n, n);
    for k in 0..n {
        let others: Vec<usize> = (1..redundancy).map(|i| (k + i) % n).collect();
        let mut sub = DMatrix::zeros(s, s);
        for (c, &col) in others.iter().enumerate() {
            sub.set_column(c, &h.column(col));
        }
        let rhs = -h.column(k).into_owned();
        let z = sub.lu().solve(&rhs)?;
        b[(k, k)] = 1.0;
        for (c, &col) in others.iter().enumerate() {
            b[(k, col)] = z[c];
        }
    }
    b.iter().all(|v| v.is_finite()).then_some(b)
}

/// Builds a seeded random code for a group of `group_size` workers with
/// per-group redundancy `redundancy`.
///
/// `r_G = M_G` gives the all-ones code (any single worker suffices) and
/// `r_G = 1` the identity (all workers are needed).
pub fn build_encoding_matrix(group_size: usize, redundancy: usize, seed: u64) -> Result<EncodingMatrix> {
    if group_size == 0 || redundancy == 0 || redundancy > group_size {
        return Err(Error::domain(format!(
            "need 1 <= r_G <= M_G, got r_G = {redundancy}, M_G = {group_size}"
        )));
    }
    let threshold = group_size - redundancy + 1;
    if redundancy == group_size {
        return Ok(EncodingMatrix {
            coefficients: DMatrix::from_element(group_size, group_size, 1.0),
            redundancy,
            threshold,
        });
    }
    if redundancy == 1 {
        return Ok(EncodingMatrix {
            coefficients: DMatrix::identity(group_size, group_size),
            redundancy,
            threshold,
        });
    }
    // Keep the best-conditioned candidate; stop early once one is good enough.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, EncodingMatrix)> = None;
    for attempt in 0..MAX_ATTEMPTS {
        let Some(coefficients) = random_code(group_size, redundancy, &mut rng) else {
            continue;
        };
        let code = EncodingMatrix {
            coefficients,
            redundancy,
            threshold,
        };
        match code.verify(&mut rng) {
            Ok(worst) if worst <= MAX_AMPLIFICATION => return Ok(code),
            Ok(worst) => {
                log::debug!("code attempt {attempt}: amplification {worst:.3e}");
                if best.as_ref().is_none_or(|(b, _)| worst < *b) {
                    best = Some((worst, code));
                }
            }
            Err(e) => log::debug!("code attempt {attempt} rejected: {e}"),
        }
    }
    match best {
        Some((worst, code)) if worst <= HARD_AMPLIFICATION => {
            log::warn!("M_G = {group_size}, r_G = {redundancy}: best code amplifies decoding by {worst:.3e}");
            Ok(code)
        }
        _ => Err(Error::CodeConstruction {
            group_size,
            redundancy,
            attempts: MAX_ATTEMPTS,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// The three-worker, redundancy-two code with rows (½,1,0), (0,1,-1), (½,0,1).
    fn three_worker_code() -> EncodingMatrix {
        let b = DMatrix::from_row_slice(3, 3, &[0.5, 1.0, 0.0, 0.0, 1.0, -1.0, 0.5, 0.0, 1.0]);
        EncodingMatrix::from_rows(b, 2).unwrap()
    }

    fn encode_all(code: &EncodingMatrix, batch: &[DVector<f64>]) -> Vec<DVector<f64>> {
        (0..code.group_size())
            .map(|k| {
                let stored: Vec<_> = code.support(k).map(|j| batch[j].clone()).collect();
                code.encode(k, &stored).unwrap()
            })
            .collect()
    }

    #[test]
    fn hand_built_code_decodes_with_expected_coefficients() {
        let code = three_worker_code();
        assert_eq!(code.threshold(), 2);
        let a = code.decoding_coefficients(&[0, 2]).unwrap();
        assert!((a - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-12);
        let a = code.decoding_coefficients(&[0, 1]).unwrap();
        assert!((a - DVector::from_vec(vec![2.0, -1.0])).amax() < 1e-12);
    }

    #[test]
    fn hand_built_code_recovers_group_gradient() {
        let code = three_worker_code();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g: Vec<_> = (0..3).map(|_| random_vec(&mut rng, 4)).collect();
        let sum = &g[0] + &g[1] + &g[2];
        let f = encode_all(&code, &g);
        let direct = &f[0] + &f[2];
        assert!((direct - &sum).amax() < 1e-12);
        for subset in subsets(3, 2) {
            let enc: Vec<_> = subset.iter().map(|&k| f[k].clone()).collect();
            let decoded = code.decode(&subset, &enc).unwrap();
            assert!((decoded - &sum).norm() / sum.norm() < 1e-12);
        }
    }

    #[test]
    fn encode_is_the_row_combination() {
        let code = three_worker_code();
        let g1 = DVector::from_vec(vec![1.0, 0.0]);
        let g2 = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(
            code.encode(0, &[g1.clone(), g2.clone()]).unwrap(),
            DVector::from_vec(vec![0.5, 1.0])
        );
        assert!(matches!(code.encode(0, &[g1]), Err(Error::MissingGradient(_))));
    }

    #[test]
    fn trivial_codes() {
        let single = build_encoding_matrix(1, 1, 0).unwrap();
        assert_eq!(single.coefficients(), &DMatrix::from_element(1, 1, 1.0));
        assert_eq!(single.threshold(), 1);

        let full = build_encoding_matrix(4, 4, 0).unwrap();
        assert_eq!(full.threshold(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g: Vec<_> = (0..4).map(|_| random_vec(&mut rng, 3)).collect();
        let f = encode_all(&full, &g);
        let sum = g.iter().fold(DVector::zeros(3), |acc, v| acc + v);
        assert!((&f[2] - &sum).amax() < 1e-12);
        assert_eq!(full.decode(&[2], &[f[2].clone()]).unwrap(), f[2]);
    }

    #[test]
    fn random_code_has_cyclic_support() {
        let code = build_encoding_matrix(5, 3, 9).unwrap();
        for k in 0..5 {
            let support: Vec<_> = code.support(k).collect();
            for j in 0..5 {
                let v = code.coefficients()[(k, j)];
                assert_eq!(v != 0.0, support.contains(&j), "row {k} col {j}");
            }
        }
    }

    #[test]
    fn exhaustive_decode_small_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for n in 1..=8 {
            for r in 1..=n {
                let code = build_encoding_matrix(n, r, 1000 + (n * 10 + r) as u64).unwrap();
                let g: Vec<_> = (0..n).map(|_| random_vec(&mut rng, 6)).collect();
                let sum = g.iter().fold(DVector::zeros(6), |acc, v| acc + v);
                let f = encode_all(&code, &g);
                for subset in subsets(n, n - r + 1) {
                    let enc: Vec<_> = subset.iter().map(|&k| f[k].clone()).collect();
                    let decoded = code.decode(&subset, &enc).unwrap();
                    assert!((decoded - &sum).norm() <= 1e-9 * sum.norm(), "n={n} r={r} {subset:?}");
                }
            }
        }
    }

    #[test]
    fn larger_groups_use_sampled_verification() {
        let code = build_encoding_matrix(16, 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g: Vec<_> = (0..16).map(|_| random_vec(&mut rng, 3)).collect();
        let sum = g.iter().fold(DVector::zeros(3), |acc, v| acc + v);
        let f = encode_all(&code, &g);
        let subset: Vec<usize> = (3..16).collect();
        let enc: Vec<_> = subset.iter().map(|&k| f[k].clone()).collect();
        assert!((code.decode(&subset, &enc).unwrap() - &sum).norm() <= 1e-9 * sum.norm());
    }

    #[test]
    fn more_than_threshold_uploads_decode() {
        let code = build_encoding_matrix(6, 3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g: Vec<_> = (0..6).map(|_| random_vec(&mut rng, 3)).collect();
        let sum = g.iter().fold(DVector::zeros(3), |acc, v| acc + v);
        let f = encode_all(&code, &g);
        let subset = vec![0, 1, 3, 4, 5];
        let enc: Vec<_> = subset.iter().map(|&k| f[k].clone()).collect();
        assert!((code.decode(&subset, &enc).unwrap() - &sum).norm() <= 1e-9 * sum.norm());
    }

    #[test]
    fn too_few_uploads_is_a_decode_error() {
        let code = build_encoding_matrix(4, 2, 1).unwrap();
        let v = DVector::zeros(2);
        match code.decode(&[0, 3], &[v.clone(), v]) {
            Err(Error::Decode { workers }) => assert_eq!(workers, vec![0, 3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn from_rows_rejects_bad_support_and_undecodable() {
        let off_support = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0]);
        assert!(EncodingMatrix::from_rows(off_support, 2).is_err());
        let undecodable = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(EncodingMatrix::from_rows(undecodable, 2).is_err());
    }

    #[test]
    fn subsets_enumeration() {
        assert_eq!(subsets(4, 2).len(), 6);
        assert_eq!(subsets(3, 3), vec![vec![0, 1, 2]]);
        assert!(subsets(2, 3).is_empty());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn any_surviving_subset_recovers_the_sum(
            n in 2usize..16,
            r_frac in 0.0f64..1.0,
            extra in 0usize..3,
            seed in 0u64..10_000,
        ) {
            let r = 1 + ((n - 1) as f64 * r_frac) as usize;
            let code = build_encoding_matrix(n, r, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<_> = (0..n).map(|_| random_vec(&mut rng, 4)).collect();
            let sum = g.iter().fold(DVector::zeros(4), |acc, v| acc + v);
            let f = encode_all(&code, &g);
            let mut order: Vec<usize> = (0..n).collect();
            for i in 0..n {
                let j = rng.random_range(i..n);
                order.swap(i, j);
            }
            let mut subset = order[..(code.threshold() + extra).min(n)].to_vec();
            subset.sort_unstable();
            let enc: Vec<_> = subset.iter().map(|&k| f[k].clone()).collect();
            let decoded = code.decode(&subset, &enc).unwrap();
            proptest::prop_assert!((decoded - &sum).norm() <= 1e-8 * sum.norm());
        }
    }
}
