//! Recovery metrics and the experiment harnesses built on them.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{singular_values_lowrank, DenseMatrix, DENSE_SVD_LIMIT};
use crate::problem::{generate, RpcaProblem};
use crate::rng::SplitMix64;
use crate::runtime::{run, Hyperparams, RunTrace};

/// Relative squared recovery error
/// `(||L - L0||_F^2 + ||S - S0||_F^2) / (||L0||_F^2 + ||S0||_F^2)`.
pub fn relative_error(
    low_rank: &DenseMatrix,
    sparse: &DenseMatrix,
    truth: &RpcaProblem,
) -> Result<f64> {
    if low_rank.rows() != truth.m
        || low_rank.cols() != truth.n
        || sparse.rows() != truth.m
        || sparse.cols() != truth.n
    {
        return Err(Error::shape(
            "relative_error",
            format!(
                "recovery {}x{} / {}x{} vs truth {}x{}",
                low_rank.rows(),
                low_rank.cols(),
                sparse.rows(),
                sparse.cols(),
                truth.m,
                truth.n
            ),
        ));
    }
    let denom =
        truth.truth_low_rank.frobenius_norm_sq() + truth.truth_sparse.frobenius_norm_sq();
    if denom == 0.0 {
        return Err(Error::Degenerate("all-zero ground truth".to_string()));
    }
    let num = low_rank.sub(&truth.truth_low_rank)?.frobenius_norm_sq()
        + sparse.sub(&truth.truth_sparse)?.frobenius_norm_sq();
    Ok(num / denom)
}

/// Top-r singular values of the ground-truth low-rank part, from the stored
/// factors when available, otherwise by dense SVD at oracle scale.
pub fn truth_singular_values(truth: &RpcaProblem) -> Result<Vec<f64>> {
    let r = truth.true_rank;
    if let Some((fu, fv)) = &truth.factors {
        return singular_values_lowrank(fu, fv);
    }
    if truth.m.min(truth.n) > DENSE_SVD_LIMIT {
        return Err(Error::SizeLimit {
            min_dim: truth.m.min(truth.n),
            limit: DENSE_SVD_LIMIT,
        });
    }
    let mut sigma = truth.truth_low_rank.jacobi_svd()?.sigma;
    sigma.truncate(r);
    Ok(sigma)
}

/// Singular-value comparison between a recovered factorization and the
/// ground truth.
#[derive(Debug, Clone)]
pub struct SvReport {
    /// `max_{i<=r} |sigma_i(rec) - sigma_i(truth)| / sigma_r(truth)`.
    pub sv_rel_error: f64,
    /// All p singular values of the recovery, descending.
    pub sv_recovered: Vec<f64>,
    /// Top-r singular values of the truth, descending.
    pub sv_truth: Vec<f64>,
    /// `sigma_{r+1} / sigma_r` of the recovery; 0 when p = r.
    pub rank_gap_ratio: f64,
}

/// Compare the spectrum of `u * v^T` against the ground truth's top r.
/// The factor width p must be at least the true rank.
pub fn sv_error(u: &DenseMatrix, v: &DenseMatrix, truth: &RpcaProblem) -> Result<SvReport> {
    let p = u.cols();
    let r = truth.true_rank;
    if r > p {
        return Err(Error::param(
            "rank_bound",
            format!("true rank {r} exceeds factor width {p}"),
        ));
    }
    let sv_recovered = singular_values_lowrank(u, v)?;
    let sv_truth = truth_singular_values(truth)?;
    let sigma_r = sv_truth[r - 1];
    if sigma_r <= 0.0 {
        return Err(Error::Degenerate(format!(
            "truth sigma_{r} is zero; singular-value error undefined"
        )));
    }
    let sv_rel_error = (0..r)
        .map(|i| (sv_recovered[i] - sv_truth[i]).abs() / sigma_r)
        .fold(0.0, f64::max);
    let rank_gap_ratio = if p > r {
        sv_recovered[r] / sv_recovered[r - 1]
    } else {
        0.0
    };
    Ok(SvReport {
        sv_rel_error,
        sv_recovered,
        sv_truth,
        rank_gap_ratio,
    })
}

/// Combined evaluation of a recovered `(L, S, U, V)` against the truth.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rel_error: f64,
    pub sv_rel_error: f64,
    pub sv_recovered: Vec<f64>,
    pub sv_truth: Vec<f64>,
    pub rank_gap_ratio: f64,
}

pub fn evaluate(
    low_rank: &DenseMatrix,
    sparse: &DenseMatrix,
    u: &DenseMatrix,
    v: &DenseMatrix,
    truth: &RpcaProblem,
) -> Result<EvalReport> {
    let rel_error = relative_error(low_rank, sparse, truth)?;
    let sv = sv_error(u, v, truth)?;
    Ok(EvalReport {
        rel_error,
        sv_rel_error: sv.sv_rel_error,
        sv_recovered: sv.sv_recovered,
        sv_truth: sv.sv_truth,
        rank_gap_ratio: sv.rank_gap_ratio,
    })
}

/// CSV body for a singular-value report: `i,sigma_recovered,sigma_truth`.
pub fn sv_report_csv(report: &SvReport) -> String {
    let mut out = String::from("i,sigma_recovered,sigma_truth\n");
    let rows = report.sv_recovered.len().max(report.sv_truth.len());
    for i in 0..rows {
        let rec = report
            .sv_recovered
            .get(i)
            .map(|x| x.to_string())
            .unwrap_or_default();
        let tru = report
            .sv_truth
            .get(i)
            .map(|x| x.to_string())
            .unwrap_or_default();
        out.push_str(&format!("{i},{rec},{tru}\n"));
    }
    out
}

/// One cell of the sparsity/rank sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub sparsity: f64,
    pub rank: usize,
    /// Relative error of the cell's run; NaN when the run failed.
    pub rel_error: f64,
    pub seed: u64,
    pub failure: Option<String>,
}

/// Row-major grid of sweep results: sparsity varies over rows, rank over
/// columns.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub s_grid: Vec<f64>,
    pub r_grid: Vec<usize>,
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, s_index: usize, r_index: usize) -> &SweepCell {
        &self.cells[s_index * self.r_grid.len() + r_index]
    }

    /// CSV body: `s,r,err,seed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,r,err,seed\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.sparsity, c.rank, c.rel_error, c.seed
            ));
        }
        out
    }
}

/// The default 6 x 4 sweep grid: sparsity 0.05..0.30, rank fraction
/// 0.05..0.20 of n.
pub fn default_grids(n: usize) -> (Vec<f64>, Vec<usize>) {
    let s_grid = (1..=6).map(|i| i as f64 * 0.05).collect();
    let r_grid = (1..=4)
        .map(|i| ((i as f64 * 0.05 * n as f64).round() as usize).max(1))
        .collect();
    (s_grid, r_grid)
}

/// Run one full recovery per `(s, r)` cell with fresh per-cell seeds and
/// collect the error surface. Cells run in parallel; each cell's run is
/// forced single-threaded so the parallelism lives at one level.
///
/// Each cell gets its own generated problem, so the rank bound and the
/// scale-aware lambda are re-derived per cell; the remaining fields of
/// `hp_base` apply unchanged.
pub fn phase_sweep(
    m: usize,
    n: usize,
    s_grid: &[f64],
    r_grid: &[usize],
    hp_base: &Hyperparams,
) -> Result<SweepGrid> {
    for &s in s_grid {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::param("s_grid", format!("{s} not in (0, 1)")));
        }
    }
    for &r in r_grid {
        if r == 0 || r >= m.min(n) {
            return Err(Error::param(
                "r_grid",
                format!("{r} not in (0, min(m, n))"),
            ));
        }
    }
    let jobs: Vec<(usize, f64, usize)> = s_grid
        .iter()
        .enumerate()
        .flat_map(|(si, &s)| {
            r_grid
                .iter()
                .enumerate()
                .map(move |(ri, &r)| (si * r_grid.len() + ri, s, r))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(hp_base.workers)
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;

    let cells: Vec<SweepCell> = pool.install(|| {
        jobs.par_iter()
            .map(|&(idx, s, r)| {
                let seed = SplitMix64::derive(hp_base.seed, 0x5EED + idx as u64).next_u64();
                let mut hp = hp_base.clone();
                hp.rank_bound = r;
                hp.seed = seed;
                hp.workers = 1;
                let outcome = generate(m, n, r, s, seed).and_then(|problem| {
                    hp.lambda = crate::runtime::default_lambda(&problem.observed);
                    let out = run(&problem, &hp)?;
                    relative_error(
                        &out.recovered_low_rank()?,
                        &out.stacked_sparse()?,
                        &problem,
                    )
                });
                match outcome {
                    Ok(err) => SweepCell {
                        sparsity: s,
                        rank: r,
                        rel_error: err,
                        seed,
                        failure: None,
                    },
                    Err(e) => SweepCell {
                        sparsity: s,
                        rank: r,
                        rel_error: f64::NAN,
                        seed,
                        failure: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });

    Ok(SweepGrid {
        s_grid: s_grid.to_vec(),
        r_grid: r_grid.to_vec(),
        cells,
    })
}

/// Traces of runs that differ only in the local iteration count K.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub local_iters: usize,
    pub trace: RunTrace,
}

/// Re-run the same problem and seed for every K in `k_values`.
pub fn k_ablation(
    problem: &RpcaProblem,
    hp_base: &Hyperparams,
    k_values: &[usize],
) -> Result<Vec<AblationRun>> {
    let mut out = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let mut hp = hp_base.clone();
        hp.local_iters = k;
        let result = run(problem, &hp)?;
        out.push(AblationRun {
            local_iters: k,
            trace: result.trace,
        });
    }
    Ok(out)
}

/// First round index whose relative error falls below `threshold`.
pub fn rounds_to_error(trace: &RunTrace, threshold: f64) -> Option<usize> {
    trace
        .records
        .iter()
        .find(|r| r.rel_error.is_some_and(|e| e < threshold))
        .map(|r| r.round)
}

/// Mean relative error over the final `window` rounds; the run's error
/// floor.
pub fn error_floor(trace: &RunTrace, window: usize) -> Option<f64> {
    let tail: Vec<f64> = trace
        .records
        .iter()
        .rev()
        .take(window)
        .filter_map(|r| r.rel_error)
        .collect();
    if tail.is_empty() {
        return None;
    }
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}
