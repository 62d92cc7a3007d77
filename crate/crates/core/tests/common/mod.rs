//! Independent oracles shared by the integration suites.
//!
//! Everything here re-derives results along a different algorithmic path
//! than the library: eigenvalues of the Gram matrix instead of one-sided
//! Jacobi on the factors, exact alternating minimization instead of inner
//! gradient descent, and plain centralized gradient descent instead of the
//! round-synchronous driver.
#![allow(dead_code)]

use dcf_pca::matrix::DenseMatrix;
use dcf_pca::rng::SplitMix64;

/// Eigenvalues of a symmetric matrix by the classic two-sided cyclic
/// Jacobi iteration, descending.
pub fn sym_jacobi_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "symmetric input required");
    let mut w = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(w[(p, q)].abs());
            }
        }
        if off < 1e-14 * (1.0 + w_diag_max(&w)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = w[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let akp = w[(k, p)];
                    let akq = w[(k, q)];
                    w[(k, p)] = c * akp - s * akq;
                    w[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = w[(p, k)];
                    let aqk = w[(q, k)];
                    w[(p, k)] = c * apk - s * aqk;
                    w[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| w[(i, i)]).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eig
}

fn w_diag_max(w: &DenseMatrix) -> f64 {
    (0..w.rows()).map(|i| w[(i, i)].abs()).fold(0.0, f64::max)
}

/// Singular values of `a` as square roots of the Gram matrix eigenvalues,
/// descending. Independent of the library's SVD path.
pub fn svd_values_gram(a: &DenseMatrix) -> Vec<f64> {
    let gram = if a.rows() >= a.cols() {
        a.matmul_tn(a).unwrap()
    } else {
        a.matmul_nt(a).unwrap()
    };
    sym_jacobi_eigenvalues(&gram)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

/// Solve `G x = b` for symmetric positive definite G via Cholesky.
pub fn cholesky_solve(g: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = g.rows();
    assert_eq!(n, g.cols());
    assert_eq!(n, b.len());
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = g[(i, j)];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                assert!(sum > 0.0, "matrix not positive definite");
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

fn shrink(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Raw inner objective `1/2 ||U V^T + S - M||_F^2 + rho/2 ||V||_F^2
/// + lambda ||S||_1`, written out independently.
pub fn inner_objective(
    observed: &DenseMatrix,
    u: &DenseMatrix,
    v: &DenseMatrix,
    s: &DenseMatrix,
    rho: f64,
    lambda: f64,
) -> f64 {
    let fit = u.matmul_nt(v).unwrap();
    let mut quad = 0.0;
    let mut l1 = 0.0;
    for i in 0..observed.rows() {
        for j in 0..observed.cols() {
            let r = fit[(i, j)] + s[(i, j)] - observed[(i, j)];
            quad += r * r;
            l1 += s[(i, j)].abs();
        }
    }
    0.5 * quad + 0.5 * rho * v.frobenius_norm_sq() + lambda * l1
}

/// Exact alternating minimization for the inner problem: ridge solve for V
/// (normal equations via Cholesky), closed-form shrinkage for S, iterated
/// until the stationarity residual on V drops below `tol`.
/// Returns `(V, S, objective)`.
pub fn alt_min_inner(
    observed: &DenseMatrix,
    u: &DenseMatrix,
    rho: f64,
    lambda: f64,
    tol: f64,
) -> (DenseMatrix, DenseMatrix, f64) {
    let (m, cols) = (observed.rows(), observed.cols());
    let p = u.cols();
    let mut gram = u.matmul_tn(u).unwrap();
    for i in 0..p {
        gram[(i, i)] += rho;
    }
    let mut v = DenseMatrix::zeros(cols, p);
    let mut s = DenseMatrix::zeros(m, cols);
    for _iter in 0..500_000 {
        // V-step: rows of V solve G v = U^T (M - S) e_j.
        let rhs = observed.sub(&s).unwrap().matmul_tn(u).unwrap();
        for j in 0..cols {
            let x = cholesky_solve(&gram, rhs.row(j));
            v.row_mut(j).copy_from_slice(&x);
        }
        // S-step: entrywise shrinkage of the residual.
        let fit = u.matmul_nt(&v).unwrap();
        for i in 0..m {
            for j in 0..cols {
                s[(i, j)] = shrink(observed[(i, j)] - fit[(i, j)], lambda);
            }
        }
        // Stationarity of the partially minimized objective in V.
        let mut grad = v.scaled(rho);
        let mut clamped = observed.sub(&fit).unwrap();
        for i in 0..m {
            for x in clamped.row_mut(i) {
                *x = x.clamp(-lambda, lambda);
            }
        }
        grad.axpy(-1.0, &clamped.matmul_tn(u).unwrap()).unwrap();
        if grad.frobenius_norm() <= tol * v.frobenius_norm().max(1.0) {
            break;
        }
    }
    let obj = inner_objective(observed, u, &v, &s, rho, lambda);
    (v, s, obj)
}

/// `g(U)` for one data block: the inner-minimized objective plus the
/// block's share of the `U` regularizer.
pub fn g_value_oracle(
    observed: &DenseMatrix,
    u: &DenseMatrix,
    rho: f64,
    lambda: f64,
    share: f64,
    tol: f64,
) -> f64 {
    let (_, _, obj) = alt_min_inner(observed, u, rho, lambda, tol);
    obj + 0.5 * rho * share * u.frobenius_norm_sq()
}

/// One centralized gradient-descent step on `g`: solve the inner problem
/// exactly, apply the partially-minimized gradient.
pub fn centralized_gd_step(
    observed: &DenseMatrix,
    u: &DenseMatrix,
    rho: f64,
    lambda: f64,
    eta: f64,
    tol: f64,
) -> DenseMatrix {
    let (v, s, _) = alt_min_inner(observed, u, rho, lambda, tol);
    let residual = u
        .matmul_nt(&v)
        .unwrap()
        .add(&s)
        .unwrap()
        .sub(observed)
        .unwrap();
    let mut grad = residual.matmul(&v).unwrap();
    grad.axpy(rho, u).unwrap();
    let mut next = u.clone();
    next.axpy(-eta, &grad).unwrap();
    next
}

/// Least-squares line fit, returning `(slope, intercept, r_squared)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn gaussian(rows: usize, cols: usize, stddev: f64, seed: u64) -> DenseMatrix {
    let mut rng = SplitMix64::derive(seed, 0x0AC1E);
    DenseMatrix::gaussian(rows, cols, stddev, &mut rng)
}
