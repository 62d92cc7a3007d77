//! Synthetic RPCA problem generation and column partitioning.
//!
//! A problem is a low-rank matrix `L0 = U0 V0^T` with Gaussian factors plus
//! a sparse corruption `S0` whose nonzeros sit at `floor(s*m*n)` cells chosen
//! without replacement, each valued at +-sqrt(m*n). Generation is fully
//! determined by one 64-bit seed.

use crate::error::{Error, Result};
use crate::matrix::{svd_lowrank, DenseMatrix};
use crate::rng::SplitMix64;

/// A generated RPCA instance together with its ground truth.
#[derive(Debug, Clone)]
pub struct RpcaProblem {
    pub m: usize,
    pub n: usize,
    pub true_rank: usize,
    pub sparsity: f64,
    pub seed: u64,
    /// Observed matrix `M = L0 + S0`.
    pub observed: DenseMatrix,
    /// Ground-truth low-rank part.
    pub truth_low_rank: DenseMatrix,
    /// Ground-truth sparse part.
    pub truth_sparse: DenseMatrix,
    /// Generating factors of the low-rank part, when known
    /// (`truth_low_rank = factors.0 * factors.1^T`). Problems loaded from
    /// files whose low-rank part cannot be re-derived carry `None`.
    pub factors: Option<(DenseMatrix, DenseMatrix)>,
}

/// Contiguous column split of a problem across `client_count` clients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub client_count: usize,
    /// Half-open `[start, end)` column intervals, one per client, in order.
    pub col_ranges: Vec<(usize, usize)>,
}

impl RpcaProblem {
    /// Number of sparse nonzeros implied by the generation parameters.
    pub fn sparse_count(m: usize, n: usize, s: f64) -> usize {
        (s * (m * n) as f64).floor() as usize
    }

    /// Construct from explicit parts; used by tests and file loading.
    /// Verifies `observed = truth_low_rank + truth_sparse` entrywise (the
    /// sum recomputed here must be bit-identical).
    pub fn from_parts(
        true_rank: usize,
        sparsity: f64,
        seed: u64,
        truth_low_rank: DenseMatrix,
        truth_sparse: DenseMatrix,
        factors: Option<(DenseMatrix, DenseMatrix)>,
    ) -> Result<Self> {
        let observed = truth_low_rank.add(&truth_sparse)?;
        Ok(Self {
            m: observed.rows(),
            n: observed.cols(),
            true_rank,
            sparsity,
            seed,
            observed,
            truth_low_rank,
            truth_sparse,
            factors,
        })
    }
}

/// Generate a synthetic problem. `L0`'s factors have i.i.d. standard normal
/// entries; the sparse support is a seeded partial Fisher-Yates draw over
/// the `m*n` cells with independent uniform signs.
pub fn generate(m: usize, n: usize, r: usize, s: f64, seed: u64) -> Result<RpcaProblem> {
    if m == 0 || n == 0 {
        return Err(Error::param("m/n", "dimensions must be positive".to_string()));
    }
    if r == 0 || r > m.min(n) {
        return Err(Error::param(
            "rank",
            format!("must satisfy 0 < r <= min(m, n) = {}", m.min(n)),
        ));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::param("sparsity", format!("{s} not in (0, 1)")));
    }
    let cells = (m as u64).checked_mul(n as u64).filter(|&c| c <= u32::MAX as u64);
    let Some(cells) = cells else {
        return Err(Error::param("m/n", "m*n too large".to_string()));
    };

    let mut rng = SplitMix64::new(seed);
    let u0 = DenseMatrix::gaussian(m, r, 1.0, &mut rng);
    let v0 = DenseMatrix::gaussian(n, r, 1.0, &mut rng);
    let low_rank = u0.matmul_nt(&v0)?;

    let count = RpcaProblem::sparse_count(m, n, s);
    let mut index: Vec<u32> = (0..cells as u32).collect();
    for i in 0..count {
        let j = i as u64 + rng.next_below(cells - i as u64);
        index.swap(i, j as usize);
    }
    let magnitude = ((m * n) as f64).sqrt();
    let mut sparse = DenseMatrix::zeros(m, n);
    for &cell in &index[..count] {
        let i = cell as usize / n;
        let j = cell as usize % n;
        let sign = if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
        sparse[(i, j)] = sign * magnitude;
    }

    let observed = low_rank.add(&sparse)?;
    Ok(RpcaProblem {
        m,
        n,
        true_rank: r,
        sparsity: s,
        seed,
        observed,
        truth_low_rank: low_rank,
        truth_sparse: sparse,
        factors: Some((u0, v0)),
    })
}

/// Split the problem's columns into `client_count` near-even contiguous
/// blocks; the first `n mod E` clients get the wider blocks.
pub fn partition(problem: &RpcaProblem, client_count: usize) -> Result<Partition> {
    partition_columns(problem.n, client_count)
}

pub fn partition_columns(n: usize, client_count: usize) -> Result<Partition> {
    if client_count == 0 || client_count > n {
        return Err(Error::param(
            "clients",
            format!("must satisfy 1 <= E <= n = {n}, got {client_count}"),
        ));
    }
    let wide = n % client_count;
    let base = n / client_count;
    let mut col_ranges = Vec::with_capacity(client_count);
    let mut start = 0;
    for i in 0..client_count {
        let width = if i < wide { base + 1 } else { base };
        col_ranges.push((start, start + width));
        start += width;
    }
    Ok(Partition {
        client_count,
        col_ranges,
    })
}

/// Incoherence diagnostic for the ground-truth low-rank part.
#[derive(Debug, Clone)]
pub struct IncoherenceReport {
    /// max_i of the squared row norms of the left singular-vector factor.
    pub max_row_leverage_u: f64,
    /// Same for the right factor.
    pub max_row_leverage_v: f64,
    /// Entrywise max magnitude of the product of the singular-vector factors.
    pub uv_inf: f64,
    pub satisfied: bool,
}

/// Check the three incoherence inequalities of the rank-r SVD of `L0` at a
/// given delta:
///
/// ```text
/// max_i ||U^T e_i||^2 <= delta*r/m
/// max_i ||V^T e_i||^2 <= delta*r/n
/// ||U V^T||_inf       <= sqrt(delta*r/(m*n))
/// ```
///
/// Works from the stored generating factors; a problem without factors is
/// reported degenerate rather than guessed at.
pub fn incoherence_check(problem: &RpcaProblem, delta: f64) -> Result<IncoherenceReport> {
    if delta <= 0.0 {
        return Err(Error::param("delta", format!("{delta} must be positive")));
    }
    let Some((fu, fv)) = &problem.factors else {
        return Err(Error::Degenerate(
            "problem carries no low-rank factors".to_string(),
        ));
    };
    let r = problem.true_rank;
    let svd = svd_lowrank(fu, fv)?;
    let sigma_top = svd.sigma[0];
    let sigma_r = svd.sigma[r - 1];
    if sigma_top <= 0.0 || sigma_r <= 1e-12 * sigma_top {
        return Err(Error::Degenerate(format!(
            "rank-deficient low-rank part: sigma_{r} = {sigma_r:e}"
        )));
    }

    let max_row_leverage = |vectors: &DenseMatrix| -> f64 {
        (0..vectors.rows())
            .map(|i| {
                vectors.row(i)[..r]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    };
    let left = svd.u.column_block(0, r)?;
    let right = svd.v.column_block(0, r)?;
    let max_row_leverage_u = max_row_leverage(&left);
    let max_row_leverage_v = max_row_leverage(&right);
    let uv_inf = left.matmul_nt(&right)?.max_abs();

    let m = problem.m as f64;
    let n = problem.n as f64;
    let rr = r as f64;
    let satisfied = max_row_leverage_u <= delta * rr / m
        && max_row_leverage_v <= delta * rr / n
        && uv_inf <= (delta * rr / (m * n)).sqrt();
    Ok(IncoherenceReport {
        max_row_leverage_u,
        max_row_leverage_v,
        uv_inf,
        satisfied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_problem_counts_and_magnitude() {
        // floor(0.25 * 16) = 4 nonzeros of magnitude sqrt(16) = 4.
        let p = generate(4, 4, 1, 0.25, 7).unwrap();
        let nonzeros: Vec<f64> = p
            .truth_sparse
            .data()
            .iter()
            .copied()
            .filter(|&x| x != 0.0)
            .collect();
        assert_eq!(nonzeros.len(), 4);
        for x in nonzeros {
            assert_eq!(x.abs(), 4.0);
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = generate(12, 9, 3, 0.1, 99).unwrap();
        let b = generate(12, 9, 3, 0.1, 99).unwrap();
        assert_eq!(a.observed, b.observed);
        assert_eq!(a.truth_low_rank, b.truth_low_rank);
        assert_eq!(a.truth_sparse, b.truth_sparse);
    }

    #[test]
    fn observed_is_exact_sum() {
        let p = generate(10, 14, 2, 0.2, 5).unwrap();
        let recomputed = p.truth_low_rank.add(&p.truth_sparse).unwrap();
        assert_eq!(p.observed, recomputed);
    }

    #[test]
    fn parameter_validation() {
        assert!(generate(4, 4, 0, 0.1, 1).is_err());
        assert!(generate(4, 4, 5, 0.1, 1).is_err());
        assert!(generate(4, 4, 2, 0.0, 1).is_err());
        assert!(generate(4, 4, 2, 1.5, 1).is_err());
        assert!(generate(0, 4, 1, 0.1, 1).is_err());
    }

    #[test]
    fn partition_even_split() {
        let p = generate(3, 10, 1, 0.1, 1).unwrap();
        let part = partition(&p, 2).unwrap();
        assert_eq!(part.col_ranges, vec![(0, 5), (5, 10)]);
    }

    #[test]
    fn partition_remainder_first() {
        let part = partition_columns(10, 3).unwrap();
        assert_eq!(part.col_ranges, vec![(0, 4), (4, 7), (7, 10)]);
    }

    #[test]
    fn partition_singleton_columns() {
        let part = partition_columns(10, 10).unwrap();
        assert_eq!(part.col_ranges.len(), 10);
        for (i, &(a, b)) in part.col_ranges.iter().enumerate() {
            assert_eq!((a, b), (i, i + 1));
        }
    }

    #[test]
    fn partition_bounds_checked() {
        assert!(partition_columns(10, 0).is_err());
        assert!(partition_columns(10, 11).is_err());
    }

    #[test]
    fn incoherence_spiky_matrix_fails() {
        // A single nonzero entry is maximally coherent: leverage 1 on one row.
        let mut fu = DenseMatrix::zeros(8, 1);
        fu[(0, 0)] = 3.0;
        let mut fv = DenseMatrix::zeros(6, 1);
        fv[(0, 0)] = 2.0;
        let low = fu.matmul_nt(&fv).unwrap();
        let p = RpcaProblem::from_parts(
            1,
            0.1,
            0,
            low,
            DenseMatrix::zeros(8, 6),
            Some((fu, fv)),
        )
        .unwrap();
        let report = incoherence_check(&p, 0.5).unwrap();
        assert!(!report.satisfied);
        assert!((report.max_row_leverage_u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn incoherence_flat_matrix_exact_leverage() {
        // c * ones(m, n) has singular vectors 1/sqrt(m), 1/sqrt(n): row
        // leverages are exactly r/m and r/n and delta >= 1 accepts.
        let (m, n) = (10, 5);
        let fu = DenseMatrix::from_fn(m, 1, |_, _| 2.0);
        let fv = DenseMatrix::from_fn(n, 1, |_, _| 1.0);
        let low = fu.matmul_nt(&fv).unwrap();
        let p = RpcaProblem::from_parts(
            1,
            0.1,
            0,
            low,
            DenseMatrix::zeros(m, n),
            Some((fu, fv)),
        )
        .unwrap();
        let report = incoherence_check(&p, 1.000001).unwrap();
        assert!((report.max_row_leverage_u - 1.0 / m as f64).abs() < 1e-12);
        assert!((report.max_row_leverage_v - 1.0 / n as f64).abs() < 1e-12);
        // The leverages sit exactly at the delta = 1 boundary, so any
        // delta above 1 accepts.
        assert!(report.satisfied);
        assert!(!incoherence_check(&p, 0.5).unwrap().satisfied);
    }

    #[test]
    fn incoherence_degenerate_rank() {
        let fu = DenseMatrix::zeros(6, 2);
        let fv = DenseMatrix::zeros(5, 2);
        let p = RpcaProblem::from_parts(
            2,
            0.1,
            0,
            DenseMatrix::zeros(6, 5),
            DenseMatrix::zeros(6, 5),
            Some((fu, fv)),
        )
        .unwrap();
        assert!(matches!(
            incoherence_check(&p, 5.0),
            Err(Error::Degenerate(_))
        ));
    }
}
