//! Round-synchronous consensus driver.
//!
//! Each round the server broadcasts the shared left factor `U` to every
//! client, the clients run K local iterations concurrently, and the server
//! averages the returned copies in fixed client order. Fixed-order
//! aggregation makes traces bit-identical across worker-pool sizes. The
//! only payloads crossing the server boundary are m x p factor matrices;
//! every transfer is logged and metered.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::problem::{partition, RpcaProblem};
use crate::rng::SplitMix64;
use crate::solver::{
    grad_u_at_inner_opt, local_round, solve_inner, ClientState, InnerSolveConfig,
};

const BYTES_PER_ENTRY: u64 = 8;

/// Learning-rate schedule for the local `U` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum EtaSchedule {
    /// Constant rate.
    Fixed(f64),
    /// `eta0 / sqrt(t + 1)` at round t.
    SqrtDecay(f64),
    /// `c / sqrt(K * T)`, constant over the run.
    KtFixed(f64),
}

impl EtaSchedule {
    pub fn eta_at(&self, round: usize, local_iters: usize, rounds: usize) -> f64 {
        match *self {
            EtaSchedule::Fixed(eta) => eta,
            EtaSchedule::SqrtDecay(eta0) => eta0 / ((round + 1) as f64).sqrt(),
            EtaSchedule::KtFixed(c) => c / ((local_iters * rounds) as f64).sqrt(),
        }
    }

    fn base(&self) -> f64 {
        match *self {
            EtaSchedule::Fixed(x) | EtaSchedule::SqrtDecay(x) | EtaSchedule::KtFixed(x) => x,
        }
    }
}

/// Step-solver tuning carried inside [`Hyperparams`]; rho and lambda live at
/// the top level so there is a single source of truth for them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InnerTuning {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "default_warm_start")]
    pub warm_start: bool,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iters() -> usize {
    500
}

fn default_warm_start() -> bool {
    true
}

impl Default for InnerTuning {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iters: default_max_iters(),
            step_size: None,
            warm_start: default_warm_start(),
        }
    }
}

/// Full configuration of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperparams {
    pub rho: f64,
    pub lambda: f64,
    /// Factor width p (an upper bound on the rank to recover).
    pub rank_bound: usize,
    /// Client count E.
    pub clients: usize,
    /// Local iterations per round, K.
    pub local_iters: usize,
    /// Communication rounds, T.
    pub rounds: usize,
    pub eta: EtaSchedule,
    #[serde(default)]
    pub inner: InnerTuning,
    pub seed: u64,
    /// Multiplier on the N(0, 1/p) initialization of `U`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Worker threads for the client pool; 0 picks the machine default.
    /// Has no effect on results, only on wall time.
    #[serde(default)]
    pub workers: usize,
}

fn default_init_scale() -> f64 {
    1.0
}

/// Data-driven default for the l1 weight: half the median absolute entry
/// of the observed matrix. The median ignores gross corruptions on up to
/// half the cells and tracks the entry scale of the low-rank part, which
/// keeps the Huber quadratic zone engaged on the honest residuals; the
/// factor 1/2 keeps runs with slack in the rank bound from spending the
/// extra directions on corrupted cells. Falls back to `1/sqrt(max(m, n))`
/// for degenerate (mostly zero) inputs.
pub fn default_lambda(observed: &DenseMatrix) -> f64 {
    let mut mags: Vec<f64> = observed.data().iter().map(|x| x.abs()).collect();
    if mags.is_empty() {
        return 1.0;
    }
    let mid = mags.len() / 2;
    let (_, median, _) = mags.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite"));
    if *median > 0.0 {
        0.5 * *median
    } else {
        1.0 / (observed.rows().max(observed.cols()) as f64).sqrt()
    }
}

impl Hyperparams {
    /// Defaults for a concrete problem: `rho = 1`, the scale-aware
    /// [`default_lambda`], and a decaying learning rate.
    pub fn recommended(problem: &RpcaProblem, rank_bound: usize) -> Self {
        Self {
            rho: 1.0,
            lambda: default_lambda(&problem.observed),
            rank_bound,
            clients: 1,
            local_iters: 2,
            rounds: 50,
            eta: EtaSchedule::SqrtDecay(0.05),
            inner: InnerTuning::default(),
            seed: 0,
            init_scale: 1.0,
            workers: 0,
        }
    }

    pub fn inner_cfg(&self) -> InnerSolveConfig {
        InnerSolveConfig {
            rho: self.rho,
            lambda: self.lambda,
            tol: self.inner.tol,
            max_iters: self.inner.max_iters,
            step_size: self.inner.step_size,
            warm_start: self.inner.warm_start,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.inner_cfg().validate()?;
        if self.rank_bound == 0 {
            return Err(Error::param("rank_bound", "must be at least 1".to_string()));
        }
        if self.local_iters == 0 {
            return Err(Error::param("local_iters", "must be at least 1".to_string()));
        }
        if self.rounds == 0 {
            return Err(Error::param("rounds", "must be at least 1".to_string()));
        }
        if self.clients == 0 || self.clients > n {
            return Err(Error::param(
                "clients",
                format!("must satisfy 1 <= E <= n = {n}, got {}", self.clients),
            ));
        }
        let base = self.eta.base();
        if !(base >= 0.0 && base.is_finite()) {
            return Err(Error::param("eta", format!("{base} must be non-negative")));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::param(
                "init_scale",
                format!("{} must be positive", self.init_scale),
            ));
        }
        Ok(())
    }
}

/// Direction of a logged server transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferDirection {
    Broadcast,
    Collect,
}

/// Shape record of one payload crossing the server boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferRecord {
    pub round: usize,
    pub direction: TransferDirection,
    pub rows: usize,
    pub cols: usize,
}

/// Server-side state: the consensus factor plus communication bookkeeping.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub u: DenseMatrix,
    pub round: usize,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Shape log of everything the server sent or received. The privacy
    /// property test checks no payload other than m x p factors shows up.
    pub transfer_log: Vec<TransferRecord>,
}

/// Initialize the server factor with i.i.d. N(0, 1/p) entries so that
/// `||U0||_F^2` concentrates near m regardless of the width p.
pub fn init_server(m: usize, rank_bound: usize, seed: u64) -> ServerState {
    let mut rng = SplitMix64::derive(seed, 0);
    let stddev = 1.0 / (rank_bound as f64).sqrt();
    ServerState {
        u: DenseMatrix::gaussian(m, rank_bound, stddev, &mut rng),
        round: 0,
        bytes_sent: 0,
        bytes_received: 0,
        transfer_log: Vec::new(),
    }
}

/// The only message type a server ever sends: the round tag plus the
/// consensus factor.
#[derive(Debug, Clone)]
pub struct BroadcastMessage {
    pub round: usize,
    pub factor: DenseMatrix,
}

/// Hand a broadcast to a client, enforcing the round barrier: a client that
/// has completed `k` rounds only accepts the round-`k` broadcast.
pub fn deliver_broadcast(client: &mut ClientState, msg: &BroadcastMessage) -> Result<()> {
    if msg.round != client.rounds_completed {
        return Err(Error::RoundMismatch {
            client: client.id,
            expected: client.rounds_completed,
            got: msg.round,
        });
    }
    client.left_factor = msg.factor.clone();
    Ok(())
}

/// Entrywise mean in fixed index order (index 0 first), so results do not
/// depend on scheduling.
pub fn aggregate(factors: &[DenseMatrix]) -> Result<DenseMatrix> {
    let refs: Vec<&DenseMatrix> = factors.iter().collect();
    aggregate_refs(&refs)
}

pub fn aggregate_refs(factors: &[&DenseMatrix]) -> Result<DenseMatrix> {
    let first = factors
        .first()
        .ok_or_else(|| Error::shape("aggregate", "empty input".to_string()))?;
    let mut sum = DenseMatrix::zeros(first.rows(), first.cols());
    for f in factors {
        sum.axpy(1.0, f)?;
    }
    Ok(sum.scaled(1.0 / factors.len() as f64))
}

/// Bytes moved through the server per round: broadcast plus collection of
/// one m x p matrix per client at 8 bytes per entry.
pub fn comm_cost(hp: &Hyperparams, m: usize) -> u64 {
    2 * hp.clients as u64 * m as u64 * hp.rank_bound as u64 * BYTES_PER_ENTRY
}

/// One row of the run trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub eta: f64,
    /// Global objective at the round's aggregated factor.
    pub objective: f64,
    /// Frobenius norm of the summed client gradients at the broadcast
    /// factor (exact up to the inner tolerance).
    pub grad_norm: f64,
    /// Relative recovery error when the ground truth is known.
    pub rel_error: Option<f64>,
    /// Largest inner-solver iteration count any client used this round.
    pub inner_iters: usize,
    pub bytes: u64,
    pub wall_ms: f64,
}

/// Per-round records of a completed run.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub records: Vec<RoundRecord>,
}

pub const TRACE_HEADER: &str = "round,eta,objective,grad_norm,rel_error,inner_iters,bytes,wall_ms";

impl RunTrace {
    /// Render as CSV. `comments` are emitted first as `# ` lines (the CLI
    /// echoes the effective config there). Wall time is the one
    /// nondeterministic column, so callers comparing traces byte-for-byte
    /// set `include_wall` to false.
    pub fn to_csv(&self, comments: &[String], include_wall: bool) -> String {
        let mut out = String::new();
        for c in comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        let header = if include_wall {
            TRACE_HEADER
        } else {
            TRACE_HEADER.trim_end_matches(",wall_ms")
        };
        out.push_str(header);
        out.push('\n');
        for r in &self.records {
            let rel = r.rel_error.map(|e| e.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                r.round, r.eta, r.objective, r.grad_norm, rel, r.inner_iters, r.bytes
            ));
            if include_wall {
                out.push_str(&format!(",{}", r.wall_ms));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(
        &self,
        path: &std::path::Path,
        comments: &[String],
        include_wall: bool,
    ) -> Result<()> {
        std::fs::write(path, self.to_csv(comments, include_wall)).map_err(|e| Error::io(path, e))
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub trace: RunTrace,
}

impl RunOutput {
    /// Right factors of all clients stacked into one n x p matrix.
    pub fn stacked_right_factor(&self) -> Result<DenseMatrix> {
        let parts: Vec<&DenseMatrix> = self.clients.iter().map(|c| &c.right_factor).collect();
        DenseMatrix::concat_rows(&parts)
    }

    /// Sparse parts stacked into one m x n matrix.
    pub fn stacked_sparse(&self) -> Result<DenseMatrix> {
        let parts: Vec<&DenseMatrix> = self.clients.iter().map(|c| &c.sparse).collect();
        DenseMatrix::concat_cols(&parts)
    }

    /// Recovered low-rank matrix `U V^T` over all clients.
    pub fn recovered_low_rank(&self) -> Result<DenseMatrix> {
        self.server.u.matmul_nt(&self.stacked_right_factor()?)
    }
}

/// Execute T rounds of broadcast / concurrent local work / aggregation.
pub fn run(problem: &RpcaProblem, hp: &Hyperparams) -> Result<RunOutput> {
    hp.validate(problem.n)?;
    let part = partition(problem, hp.clients)?;
    let (m, p) = (problem.m, hp.rank_bound);

    let mut server = init_server(m, p, hp.seed);
    if hp.init_scale != 1.0 {
        server.u = server.u.scaled(hp.init_scale);
    }

    let v_stddev = 1.0 / (p as f64).sqrt();
    let mut clients = Vec::with_capacity(hp.clients);
    let mut truth_low_blocks = Vec::with_capacity(hp.clients);
    let mut truth_sparse_blocks = Vec::with_capacity(hp.clients);
    for (id, &(start, end)) in part.col_ranges.iter().enumerate() {
        let block = problem.observed.column_block(start, end)?;
        let mut crng = SplitMix64::derive(hp.seed, 1 + id as u64);
        let v0 = DenseMatrix::gaussian(end - start, p, v_stddev, &mut crng);
        clients.push(ClientState::new(
            id,
            block,
            problem.n,
            server.u.clone(),
            v0,
        )?);
        truth_low_blocks.push(problem.truth_low_rank.column_block(start, end)?);
        truth_sparse_blocks.push(problem.truth_sparse.column_block(start, end)?);
    }
    let truth_denom =
        problem.truth_low_rank.frobenius_norm_sq() + problem.truth_sparse.frobenius_norm_sq();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(hp.workers)
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;

    let inner_cfg = hp.inner_cfg();
    let bytes_per_side = hp.clients as u64 * (m * p) as u64 * BYTES_PER_ENTRY;
    let mut trace = RunTrace::default();

    for round in 0..hp.rounds {
        let started = Instant::now();
        let eta = hp.eta.eta_at(round, hp.local_iters, hp.rounds);

        for client in clients.iter_mut() {
            let msg = BroadcastMessage {
                round,
                factor: server.u.clone(),
            };
            deliver_broadcast(client, &msg)?;
            server.transfer_log.push(TransferRecord {
                round,
                direction: TransferDirection::Broadcast,
                rows: msg.factor.rows(),
                cols: msg.factor.cols(),
            });
        }
        server.bytes_sent += bytes_per_side;

        let local_iters = hp.local_iters;
        let results: Vec<_> = pool.install(|| {
            clients
                .par_iter_mut()
                .map(|client| local_round(client, &inner_cfg, eta, local_iters))
                .collect()
        });

        let mut grad_sum = DenseMatrix::zeros(m, p);
        let mut max_inner = 0;
        for stats in results {
            let stats = stats?;
            grad_sum.axpy(1.0, &stats.round_start_grad)?;
            max_inner = max_inner.max(stats.max_inner_iters);
        }

        for client in clients.iter() {
            server.transfer_log.push(TransferRecord {
                round,
                direction: TransferDirection::Collect,
                rows: client.left_factor.rows(),
                cols: client.left_factor.cols(),
            });
            if !client.left_factor.all_finite() {
                return Err(Error::Divergence {
                    round,
                    client: client.id,
                });
            }
        }
        server.bytes_received += bytes_per_side;

        let factors: Vec<&DenseMatrix> = clients.iter().map(|c| &c.left_factor).collect();
        server.u = aggregate_refs(&factors)?;
        server.round = round + 1;
        for client in clients.iter_mut() {
            client.rounds_completed = round + 1;
        }

        let (objective, rel_error) = round_metrics(
            &server.u,
            &clients,
            &truth_low_blocks,
            &truth_sparse_blocks,
            truth_denom,
            hp.rho,
            hp.lambda,
        )?;

        trace.records.push(RoundRecord {
            round,
            eta,
            objective,
            grad_norm: grad_sum.frobenius_norm(),
            rel_error,
            inner_iters: max_inner,
            bytes: 2 * bytes_per_side,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }

    Ok(RunOutput {
        server,
        clients,
        trace,
    })
}

/// Global objective and relative recovery error at the aggregated factor.
fn round_metrics(
    server_u: &DenseMatrix,
    clients: &[ClientState],
    truth_low_blocks: &[DenseMatrix],
    truth_sparse_blocks: &[DenseMatrix],
    truth_denom: f64,
    rho: f64,
    lambda: f64,
) -> Result<(f64, Option<f64>)> {
    let mut objective = 0.5 * rho * server_u.frobenius_norm_sq();
    let mut err_num = 0.0;
    for (client, (low, sparse)) in clients
        .iter()
        .zip(truth_low_blocks.iter().zip(truth_sparse_blocks))
    {
        let fit = server_u.matmul_nt(&client.right_factor)?;
        let residual = fit.add(&client.sparse)?.sub(&client.observed)?;
        objective += 0.5 * residual.frobenius_norm_sq()
            + 0.5 * rho * client.right_factor.frobenius_norm_sq()
            + lambda * client.sparse.l1_norm();
        err_num += fit.sub(low)?.frobenius_norm_sq();
        err_num += client.sparse.sub(sparse)?.frobenius_norm_sq();
    }
    let rel_error = (truth_denom > 0.0).then(|| err_num / truth_denom);
    Ok((objective, rel_error))
}

/// Warnings from the hyperparameter validator. These never stop a run; the
/// CLI prints them before executing.
#[derive(Debug, Clone, PartialEq)]
pub enum HyperparamWarning {
    /// `rho^2 > lambda^2 m n` violates the necessary condition for reaching
    /// a global optimum.
    NecessaryConditionViolated { rho: f64, lambda: f64, mn: f64 },
    /// A fixed learning rate at or above the inverse of the measured
    /// smoothness estimate can diverge.
    EtaAboveSmoothness { eta: f64, l_est: f64 },
}

impl std::fmt::Display for HyperparamWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HyperparamWarning::NecessaryConditionViolated { rho, lambda, mn } => write!(
                f,
                "necessary-condition violated: rho^2 = {:e} > lambda^2*m*n = {:e}",
                rho * rho,
                lambda * lambda * mn
            ),
            HyperparamWarning::EtaAboveSmoothness { eta, l_est } => write!(
                f,
                "fixed eta = {eta} is not below 1/L_est = {:e}; the run may diverge",
                1.0 / l_est
            ),
        }
    }
}

/// Static checks that need only the problem dimensions.
pub fn validate_hyperparams(hp: &Hyperparams, m: usize, n: usize) -> Vec<HyperparamWarning> {
    let mut warnings = Vec::new();
    let mn = (m as f64) * (n as f64);
    if hp.rho * hp.rho > hp.lambda * hp.lambda * mn {
        warnings.push(HyperparamWarning::NecessaryConditionViolated {
            rho: hp.rho,
            lambda: hp.lambda,
            mn,
        });
    }
    warnings
}

/// Empirical smoothness estimate of the global objective's gradient, taken
/// as the largest difference ratio over a few random probe pairs near the
/// initialization scale.
pub fn estimate_smoothness(
    problem: &RpcaProblem,
    hp: &Hyperparams,
    probes: usize,
) -> Result<f64> {
    let part = partition(problem, hp.clients)?;
    let p = hp.rank_bound;
    let mut cfg = hp.inner_cfg();
    cfg.tol = cfg.tol.min(1e-10);
    cfg.max_iters = cfg.max_iters.max(20_000);
    cfg.warm_start = false;

    let grad_at = |u: &DenseMatrix| -> Result<DenseMatrix> {
        let mut total = DenseMatrix::zeros(problem.m, p);
        for (id, &(start, end)) in part.col_ranges.iter().enumerate() {
            let block = problem.observed.column_block(start, end)?;
            let state = ClientState::new(
                id,
                block,
                problem.n,
                u.clone(),
                DenseMatrix::zeros(end - start, p),
            )?;
            let sol = solve_inner(&state, &cfg)?;
            let g = grad_u_at_inner_opt(&state, &sol.right_factor, &sol.sparse, hp.rho)?;
            total.axpy(1.0, &g)?;
        }
        Ok(total)
    };

    let stddev = hp.init_scale / (p as f64).sqrt();
    let mut rng = SplitMix64::derive(hp.seed, 0xE57);
    let mut l_est: f64 = 0.0;
    for _ in 0..probes.max(1) {
        let ua = DenseMatrix::gaussian(problem.m, p, stddev, &mut rng);
        let mut ub = ua.clone();
        ub.axpy(0.05 * stddev, &DenseMatrix::gaussian(problem.m, p, 1.0, &mut rng))?;
        let delta_u = ub.sub(&ua)?.frobenius_norm();
        if delta_u == 0.0 {
            continue;
        }
        let delta_g = grad_at(&ub)?.sub(&grad_at(&ua)?)?.frobenius_norm();
        l_est = l_est.max(delta_g / delta_u);
    }
    Ok(l_est)
}

/// Dimension checks plus the measured learning-rate check for fixed
/// schedules.
pub fn validate_with_problem(problem: &RpcaProblem, hp: &Hyperparams) -> Result<Vec<HyperparamWarning>> {
    let mut warnings = validate_hyperparams(hp, problem.m, problem.n);
    if let EtaSchedule::Fixed(eta) = hp.eta {
        let l_est = estimate_smoothness(problem, hp, 3)?;
        if l_est > 0.0 && eta >= 1.0 / l_est {
            warnings.push(HyperparamWarning::EtaAboveSmoothness { eta, l_est });
        }
    }
    Ok(warnings)
}
