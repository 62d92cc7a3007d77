//! Everything one client computes inside a round.
//!
//! At a fixed left factor `U`, minimizing the local objective over the
//! sparse part has the closed form of entrywise soft thresholding, which
//! partially-minimizes the quadratic into a Huber loss of the residual.
//! The remaining problem in the right factor `V`,
//!
//! ```text
//! h(V) = rho/2 ||V||_F^2 + Huber_lambda(M - U V^T)
//! ```
//!
//! is strongly convex and smooth, so plain gradient descent with step
//! `1/(rho + ||U||_F^2)` converges linearly. One local iteration is: solve
//! for `(V, S)`, then take one gradient step on the client's copy of `U`
//! using the partially-minimized (Danskin) gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Huber loss of a scalar: quadratic inside `[-lambda, lambda]`, linear
/// outside, continuously differentiable at the knots.
pub fn huber(x: f64, lambda: f64) -> f64 {
    debug_assert!(lambda > 0.0);
    if x > lambda {
        lambda * x - 0.5 * lambda * lambda
    } else if x < -lambda {
        -lambda * x - 0.5 * lambda * lambda
    } else {
        0.5 * x * x
    }
}

/// Derivative of the Huber loss: the residual clamped to `[-lambda, lambda]`.
pub fn huber_deriv(x: f64, lambda: f64) -> f64 {
    x.clamp(-lambda, lambda)
}

/// Entrywise Huber loss summed over a matrix.
pub fn huber_matrix(a: &DenseMatrix, lambda: f64) -> f64 {
    a.data().iter().map(|&x| huber(x, lambda)).sum()
}

/// Entrywise shrinkage `sign(x) * max(|x| - lambda, 0)`; the closed-form
/// minimizer of `1/2 (r - s)^2 + lambda |s|`.
pub fn soft_threshold(residual: &DenseMatrix, lambda: f64) -> DenseMatrix {
    debug_assert!(lambda > 0.0);
    let mut out = residual.clone();
    for i in 0..out.rows() {
        for x in out.row_mut(i) {
            let shrunk = x.abs() - lambda;
            *x = if shrunk > 0.0 { x.signum() * shrunk } else { 0.0 };
        }
    }
    out
}

/// One client's private data and current iterates.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// This client's column block of the observed matrix (m x n_i).
    pub observed: DenseMatrix,
    /// Local copy of the consensus left factor (m x p).
    pub left_factor: DenseMatrix,
    /// Private right factor (n_i x p).
    pub right_factor: DenseMatrix,
    /// Private sparse part (m x n_i).
    pub sparse: DenseMatrix,
    /// Total column count n across all clients.
    pub total_cols: usize,
    /// Rounds this client has completed; doubles as the expected round tag.
    pub rounds_completed: usize,
}

impl ClientState {
    pub fn new(
        id: usize,
        observed: DenseMatrix,
        total_cols: usize,
        left_factor: DenseMatrix,
        right_factor: DenseMatrix,
    ) -> Result<Self> {
        if left_factor.rows() != observed.rows() {
            return Err(Error::shape(
                "ClientState::new",
                format!(
                    "left factor rows {} vs observed rows {}",
                    left_factor.rows(),
                    observed.rows()
                ),
            ));
        }
        if right_factor.rows() != observed.cols() || right_factor.cols() != left_factor.cols() {
            return Err(Error::shape(
                "ClientState::new",
                format!(
                    "right factor {}x{} vs observed cols {} and width {}",
                    right_factor.rows(),
                    right_factor.cols(),
                    observed.cols(),
                    left_factor.cols()
                ),
            ));
        }
        let sparse = DenseMatrix::zeros(observed.rows(), observed.cols());
        Ok(Self {
            id,
            observed,
            left_factor,
            right_factor,
            sparse,
            total_cols,
            rounds_completed: 0,
        })
    }

    /// Columns this client owns.
    pub fn cols(&self) -> usize {
        self.observed.cols()
    }

    /// Shared factor width p.
    pub fn width(&self) -> usize {
        self.left_factor.cols()
    }
}

/// Settings for the inner convex solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InnerSolveConfig {
    pub rho: f64,
    pub lambda: f64,
    /// Stop once `||grad h||_F <= tol * max(1, ||V||_F)`.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Fixed step override; `None` uses `1/(rho + ||U||_F^2)`.
    #[serde(default)]
    pub step_size: Option<f64>,
    /// Keep `V_i, S_i` across solves and rounds (the algorithm's default);
    /// disable to restart every solve from zero for ablations.
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

impl InnerSolveConfig {
    pub fn new(rho: f64, lambda: f64) -> Self {
        Self {
            rho,
            lambda,
            tol: default_tol(),
            max_iters: default_max_iters(),
            step_size: None,
            warm_start: default_warm_start(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::param("rho", format!("{} must be positive", self.rho)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(
                "lambda",
                format!("{} must be positive", self.lambda),
            ));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::param("tol", format!("{} must be positive", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1".to_string()));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::param(
                    "step_size",
                    format!("{s} must be positive"),
                ));
            }
        }
        Ok(())
    }
}

/// Value and exact gradient of the partially-minimized inner objective
/// `h(V) = rho/2 ||V||_F^2 + Huber_lambda(M - U V^T)`.
///
/// The chain rule through the residual gives
/// `grad = rho V - Huber'(M - U V^T)^T U`.
pub fn h_value_and_grad(
    v: &DenseMatrix,
    u: &DenseMatrix,
    observed: &DenseMatrix,
    rho: f64,
    lambda: f64,
) -> Result<(f64, DenseMatrix)> {
    if v.rows() != observed.cols() || v.cols() != u.cols() || u.rows() != observed.rows() {
        return Err(Error::shape(
            "h_value_and_grad",
            format!(
                "V {}x{}, U {}x{}, M {}x{}",
                v.rows(),
                v.cols(),
                u.rows(),
                u.cols(),
                observed.rows(),
                observed.cols()
            ),
        ));
    }
    let mut residual = observed.sub(&u.matmul_nt(v)?)?;
    let mut value = 0.5 * rho * v.frobenius_norm_sq();
    for i in 0..residual.rows() {
        for x in residual.row_mut(i) {
            value += huber(*x, lambda);
            *x = huber_deriv(*x, lambda);
        }
    }
    // residual now holds Huber'(M - U V^T)
    let mut grad = v.scaled(rho);
    grad.axpy(-1.0, &residual.matmul_tn(u)?)?;
    Ok((value, grad))
}

/// Result of one inner convex solve.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub right_factor: DenseMatrix,
    pub sparse: DenseMatrix,
    pub iters: usize,
    /// False when the iteration cap was reached before the gradient
    /// tolerance; the best iterate is still returned and the caller decides.
    pub converged: bool,
}

/// Minimize `h` by gradient descent from the client's current right factor
/// (or from zero when warm starts are disabled), then recover the sparse
/// part by soft thresholding the final residual.
pub fn solve_inner(state: &ClientState, cfg: &InnerSolveConfig) -> Result<InnerSolution> {
    solve_inner_impl(state, cfg, None)
}

/// Same as [`solve_inner`] but records `h` at every visited iterate,
/// including the starting point. Used by convergence diagnostics.
pub fn solve_inner_traced(
    state: &ClientState,
    cfg: &InnerSolveConfig,
) -> Result<(InnerSolution, Vec<f64>)> {
    let mut values = Vec::new();
    let sol = solve_inner_impl(state, cfg, Some(&mut values))?;
    Ok((sol, values))
}

fn solve_inner_impl(
    state: &ClientState,
    cfg: &InnerSolveConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<InnerSolution> {
    cfg.validate()?;
    let u = &state.left_factor;
    let step = match cfg.step_size {
        Some(s) => s,
        None => 1.0 / (cfg.rho + u.frobenius_norm_sq()),
    };
    let mut v = if cfg.warm_start {
        state.right_factor.clone()
    } else {
        DenseMatrix::zeros(state.cols(), state.width())
    };
    let mut iters = 0;
    let mut converged = false;
    loop {
        let (value, grad) = h_value_and_grad(&v, u, &state.observed, cfg.rho, cfg.lambda)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(value);
        }
        if grad.frobenius_norm() <= cfg.tol * v.frobenius_norm().max(1.0) {
            converged = true;
            break;
        }
        if iters >= cfg.max_iters {
            break;
        }
        v.axpy(-step, &grad)?;
        iters += 1;
    }
    let residual = state.observed.sub(&u.matmul_nt(&v)?)?;
    let sparse = soft_threshold(&residual, cfg.lambda);
    Ok(InnerSolution {
        right_factor: v,
        sparse,
        iters,
        converged,
    })
}

/// Local objective under consensus:
/// `1/2 ||U V^T + S - M||_F^2 + rho/2 ||V||_F^2 + lambda ||S||_1
///  + (n_i rho / 2n) ||U||_F^2`.
pub fn local_objective(state: &ClientState, rho: f64, lambda: f64) -> Result<f64> {
    let mut fit = state.left_factor.matmul_nt(&state.right_factor)?;
    fit = fit.add(&state.sparse)?.sub(&state.observed)?;
    let share = state.cols() as f64 / state.total_cols as f64;
    Ok(0.5 * fit.frobenius_norm_sq()
        + 0.5 * rho * state.right_factor.frobenius_norm_sq()
        + lambda * state.sparse.l1_norm()
        + 0.5 * rho * share * state.left_factor.frobenius_norm_sq())
}

/// Gradient of the partially-minimized local objective `g_i` at the
/// client's current `U`, valid when `(v_star, s_star)` solve the inner
/// problem: `(U V*^T + S* - M) V* + (rho n_i / n) U`.
pub fn grad_u_at_inner_opt(
    state: &ClientState,
    v_star: &DenseMatrix,
    s_star: &DenseMatrix,
    rho: f64,
) -> Result<DenseMatrix> {
    let residual = state
        .left_factor
        .matmul_nt(v_star)?
        .add(s_star)?
        .sub(&state.observed)?;
    let mut grad = residual.matmul(v_star)?;
    let share = state.cols() as f64 / state.total_cols as f64;
    grad.axpy(rho * share, &state.left_factor)?;
    Ok(grad)
}

/// Statistics from one client round.
#[derive(Debug, Clone)]
pub struct LocalRoundStats {
    /// Largest inner iteration count over the K local steps.
    pub max_inner_iters: usize,
    pub all_converged: bool,
    /// Danskin gradient at the broadcast `U`, i.e. at local step k = 0.
    /// Summing this over clients gives the exact global gradient at the
    /// round's consensus point.
    pub round_start_grad: DenseMatrix,
}

/// Run K local iterations: each solves the inner problem at the current
/// local `U` and then takes one gradient step on `U`. `V_i` and `S_i` warm
/// start across iterations and across rounds.
pub fn local_round(
    state: &mut ClientState,
    cfg: &InnerSolveConfig,
    eta: f64,
    local_iters: usize,
) -> Result<LocalRoundStats> {
    if local_iters == 0 {
        return Err(Error::param("K", "must be at least 1".to_string()));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::param("eta", format!("{eta} must be non-negative")));
    }
    let mut stats = LocalRoundStats {
        max_inner_iters: 0,
        all_converged: true,
        round_start_grad: DenseMatrix::zeros(0, 0),
    };
    for k in 0..local_iters {
        let sol = solve_inner(state, cfg)?;
        stats.max_inner_iters = stats.max_inner_iters.max(sol.iters);
        stats.all_converged &= sol.converged;
        state.right_factor = sol.right_factor;
        state.sparse = sol.sparse;
        let grad = grad_u_at_inner_opt(state, &state.right_factor, &state.sparse, cfg.rho)?;
        if k == 0 {
            stats.round_start_grad = grad.clone();
        }
        state.left_factor.axpy(-eta, &grad)?;
    }
    Ok(stats)
}
