//! Dense row-major matrices and the few decompositions the solver needs.
//!
//! Everything is computed in f64 with no external numeric dependency.
//! The SVD is one-sided Jacobi, which is accurate and entirely adequate at
//! the sizes this crate decomposes (cores of width `p`, dense oracles up to
//! 500 on a side). Finiteness is validated at construction and file input;
//! the consensus runtime additionally scans iterates every round so that a
//! diverging run is reported with its round and client instead of panicking
//! mid-operation.

use std::fmt::Write as _;
use std::ops::{Index, IndexMut};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Largest side for which the dense Jacobi SVD path is allowed.
pub const DENSE_SVD_LIMIT: usize = 500;

const JACOBI_MAX_SWEEPS: usize = 60;
const JACOBI_TOL: f64 = 1e-15;

/// Row-major dense real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Build from row-major data; rejects length mismatches and non-finite
    /// entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "DenseMatrix::new",
                format!("{}x{} needs {} entries, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("DenseMatrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// i.i.d. N(0, stddev^2) entries drawn row-major from `rng`.
    pub fn gaussian(rows: usize, cols: usize, stddev: f64, rng: &mut SplitMix64) -> Self {
        Self::from_fn(rows, cols, |_, _| stddev * rng.next_gaussian())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    fn require_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(())
    }

    /// Standard product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{}x{} * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`; rows of both operands are contiguous, so this is the
    /// cheap orientation for factor products like `U V^T`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_nt",
                format!(
                    "{}x{} * ({}x{})^T",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        Ok(out)
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape(
                "matmul_tn",
                format!(
                    "({}x{})^T * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let b_row = other.row(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.require_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.require_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    /// `self += alpha * other`, shapes must match.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.require_same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Copy of the column block `[start, end)` into contiguous storage.
    pub fn column_block(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.cols {
            return Err(Error::shape(
                "column_block",
                format!("[{start}, {end}) of {} columns", self.cols),
            ));
        }
        let width = end - start;
        let mut out = Self::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..end]);
        }
        Ok(out)
    }

    /// Stack matrices left to right; all must share a row count.
    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let rows = parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "empty input".to_string()))?
            .rows;
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::shape("concat_cols", "row counts differ".to_string()));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for p in parts {
                out.row_mut(i)[offset..offset + p.cols].copy_from_slice(p.row(i));
                offset += p.cols;
            }
        }
        Ok(out)
    }

    /// Stack matrices top to bottom; all must share a column count.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let cols = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "empty input".to_string()))?
            .cols;
        if parts.iter().any(|p| p.cols != cols) {
            return Err(Error::shape(
                "concat_rows",
                "column counts differ".to_string(),
            ));
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self { rows, cols, data })
    }

    /// Thin Householder QR: `self = Q R` with Q (rows x cols) having
    /// orthonormal columns and R (cols x cols) upper triangular.
    /// Requires rows >= cols.
    pub fn qr_thin(&self) -> Result<(Self, Self)> {
        let (m, n) = (self.rows, self.cols);
        if m < n {
            return Err(Error::shape("qr_thin", format!("{m}x{n} has rows < cols")));
        }
        let mut work = self.clone();
        // Reflectors v_k live over rows k..m; beta_k = 2 / ||v_k||^2.
        let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n);
        for k in 0..n {
            let mut norm_sq = 0.0;
            for i in k..m {
                let x = work[(i, k)];
                norm_sq += x * x;
            }
            let norm = norm_sq.sqrt();
            if norm == 0.0 {
                reflectors.push((Vec::new(), 0.0));
                continue;
            }
            let x0 = work[(k, k)];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let mut v = Vec::with_capacity(m - k);
            v.push(x0 - alpha);
            for i in k + 1..m {
                v.push(work[(i, k)]);
            }
            let v_norm_sq: f64 = v.iter().map(|x| x * x).sum();
            if v_norm_sq == 0.0 {
                reflectors.push((Vec::new(), 0.0));
                continue;
            }
            let beta = 2.0 / v_norm_sq;
            for j in k..n {
                let mut dot = 0.0;
                for (idx, vi) in v.iter().enumerate() {
                    dot += vi * work[(k + idx, j)];
                }
                let c = beta * dot;
                for (idx, vi) in v.iter().enumerate() {
                    work[(k + idx, j)] -= c * vi;
                }
            }
            reflectors.push((v, beta));
        }
        let mut r = Self::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                r[(i, j)] = work[(i, j)];
            }
        }
        // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I.
        let mut q = Self::zeros(m, n);
        for j in 0..n {
            q[(j, j)] = 1.0;
        }
        for k in (0..n).rev() {
            let (v, beta) = &reflectors[k];
            if v.is_empty() {
                continue;
            }
            for j in 0..n {
                let mut dot = 0.0;
                for (idx, vi) in v.iter().enumerate() {
                    dot += vi * q[(k + idx, j)];
                }
                let c = beta * dot;
                for (idx, vi) in v.iter().enumerate() {
                    q[(k + idx, j)] -= c * vi;
                }
            }
        }
        Ok((q, r))
    }

    /// Full thin SVD `self = U diag(sigma) V^T` by one-sided Jacobi.
    /// Singular values are returned in descending order; columns of U
    /// belonging to zero singular values are left as zeros.
    pub fn jacobi_svd(&self) -> Result<Svd> {
        if self.rows < self.cols {
            let svd = self.transpose().jacobi_svd()?;
            return Ok(Svd {
                u: svd.v,
                sigma: svd.sigma,
                v: svd.u,
            });
        }
        let (m, n) = (self.rows, self.cols);
        // Rows of `wt` are the columns of self, so every rotation touches
        // contiguous memory.
        let mut wt = self.transpose();
        let mut vt = Self::identity(n);
        let mut converged = false;
        for _sweep in 0..JACOBI_MAX_SWEEPS {
            let mut rotated = false;
            for i in 0..n.saturating_sub(1) {
                for j in i + 1..n {
                    let (wi, wj) = two_rows_mut(&mut wt.data, m, i, j);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (a, b) in wi.iter().zip(wj.iter()) {
                        alpha += a * a;
                        beta += b * b;
                        gamma += a * b;
                    }
                    if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    rotate_rows(wi, wj, c, s);
                    let (vi, vj) = two_rows_mut(&mut vt.data, n, i, j);
                    rotate_rows(vi, vj, c, s);
                }
            }
            if !rotated {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::SvdNoConvergence {
                sweeps: JACOBI_MAX_SWEEPS,
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        let norms: Vec<f64> = (0..n)
            .map(|k| wt.row(k).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));
        let mut u = Self::zeros(m, n);
        let mut v = Self::zeros(n, n);
        let mut sigma = Vec::with_capacity(n);
        for (slot, &k) in order.iter().enumerate() {
            let s = norms[k];
            sigma.push(s);
            if s > 0.0 {
                for r in 0..m {
                    u[(r, slot)] = wt[(k, r)] / s;
                }
            }
            for r in 0..n {
                v[(r, slot)] = vt[(k, r)];
            }
        }
        Ok(Svd { u, sigma, v })
    }

    /// Write in the "DMAT v1" text format: a `rows cols` header line, then
    /// one line per row of space-separated values. The default float
    /// formatting is shortest-round-trip, so read-back is bit exact.
    pub fn write_dmat(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.rows, self.cols);
        for i in 0..self.rows {
            let row = self.row(i);
            for (j, x) in row.iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{x}");
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_dmat(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                detail: "empty file".to_string(),
            })?;
        let mut dims = header.split_whitespace();
        let parse_dim = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                detail: format!("bad header line: {header:?}"),
            })
        };
        let rows = parse_dim(dims.next())?;
        let cols = parse_dim(dims.next())?;
        let mut data = Vec::with_capacity(rows * cols);
        for (i, line) in lines.enumerate() {
            if i >= rows && line.trim().is_empty() {
                continue;
            }
            for tok in line.split_whitespace() {
                let x: f64 = tok.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    detail: format!("bad value {tok:?} on row {i}"),
                })?;
                data.push(x);
            }
        }
        if data.len() != rows * cols {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: format!("expected {} values, found {}", rows * cols, data.len()),
            });
        }
        Self::new(rows, cols, data)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Thin SVD result, `a = u * diag(sigma) * v^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

fn two_rows_mut(data: &mut [f64], width: usize, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i < j);
    let (head, tail) = data.split_at_mut(j * width);
    (&mut head[i * width..(i + 1) * width], &mut tail[..width])
}

fn rotate_rows(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let xi = *x;
        let yi = *y;
        *x = c * xi - s * yi;
        *y = s * xi + c * yi;
    }
}

/// Singular values of the product `u * v^T` without forming it.
///
/// Both factors must have the same width p with p <= min(rows). QR-factor
/// each side and take the Jacobi SVD of the p x p core, which carries all
/// the spectral content of the product.
pub fn singular_values_lowrank(u: &DenseMatrix, v: &DenseMatrix) -> Result<Vec<f64>> {
    if u.cols() != v.cols() {
        return Err(Error::shape(
            "singular_values_lowrank",
            format!("factor widths {} vs {}", u.cols(), v.cols()),
        ));
    }
    let p = u.cols();
    if p > u.rows().min(v.rows()) {
        return Err(Error::shape(
            "singular_values_lowrank",
            format!(
                "width {} exceeds min dimension {}",
                p,
                u.rows().min(v.rows())
            ),
        ));
    }
    let (_, ru) = u.qr_thin()?;
    let (_, rv) = v.qr_thin()?;
    let core = ru.matmul_nt(&rv)?;
    Ok(core.jacobi_svd()?.sigma)
}

/// Rank-p SVD of the product `u * v^T`, returning the left and right
/// singular-vector factors alongside the values. Used by the incoherence
/// diagnostic, which needs subspaces and not just the spectrum.
pub fn svd_lowrank(u: &DenseMatrix, v: &DenseMatrix) -> Result<Svd> {
    if u.cols() != v.cols() {
        return Err(Error::shape(
            "svd_lowrank",
            format!("factor widths {} vs {}", u.cols(), v.cols()),
        ));
    }
    let (qu, ru) = u.qr_thin()?;
    let (qv, rv) = v.qr_thin()?;
    let core = ru.matmul_nt(&rv)?;
    let svd = core.jacobi_svd()?;
    Ok(Svd {
        u: qu.matmul(&svd.u)?,
        sigma: svd.sigma,
        v: qv.matmul(&svd.v)?,
    })
}

/// Nuclear norm (sum of singular values) via the dense Jacobi SVD.
/// Oracle-scale only: the smaller dimension must not exceed
/// [`DENSE_SVD_LIMIT`].
pub fn nuclear_norm_small(a: &DenseMatrix) -> Result<f64> {
    let min_dim = a.rows().min(a.cols());
    if min_dim > DENSE_SVD_LIMIT {
        return Err(Error::SizeLimit {
            min_dim,
            limit: DENSE_SVD_LIMIT,
        });
    }
    Ok(a.jacobi_svd()?.sigma.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, vals: &[f64]) -> DenseMatrix {
        DenseMatrix::new(rows, cols, vals.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_left() {
        let a = mat(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let i3 = DenseMatrix::identity(3);
        assert_eq!(i3.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_annihilator() {
        let a = mat(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        let z = DenseMatrix::zeros(3, 4);
        let prod = a.matmul(&z).unwrap();
        assert_eq!(prod, DenseMatrix::zeros(2, 4));
    }

    #[test]
    fn matmul_two_by_two() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let i = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.matmul(&i).unwrap(), a);
    }

    #[test]
    fn matmul_shape_error() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            a.matmul(&b),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = SplitMix64::new(5);
        let a = DenseMatrix::gaussian(4, 6, 1.0, &mut rng);
        let b = DenseMatrix::gaussian(5, 6, 1.0, &mut rng);
        let direct = a.matmul(&b.transpose()).unwrap();
        let nt = a.matmul_nt(&b).unwrap();
        let diff = direct.sub(&nt).unwrap().max_abs();
        assert!(diff < 1e-12);

        let c = DenseMatrix::gaussian(4, 3, 1.0, &mut rng);
        let tn = a.matmul_tn(&c).unwrap();
        let direct_tn = a.transpose().matmul(&c).unwrap();
        assert!(tn.sub(&direct_tn).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn frobenius_zero_and_345() {
        assert_eq!(DenseMatrix::zeros(4, 7).frobenius_norm(), 0.0);
        let a = mat(1, 2, &[3.0, 4.0]);
        assert_eq!(a.frobenius_norm(), 5.0);
    }

    #[test]
    fn l1_zero_and_hand_sum() {
        assert_eq!(DenseMatrix::zeros(2, 2).l1_norm(), 0.0);
        let a = mat(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        assert_eq!(a.l1_norm(), 6.0);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn qr_reconstructs_and_is_orthonormal() {
        let mut rng = SplitMix64::new(9);
        let a = DenseMatrix::gaussian(8, 3, 1.0, &mut rng);
        let (q, r) = a.qr_thin().unwrap();
        let qr = q.matmul(&r).unwrap();
        assert!(qr.sub(&a).unwrap().max_abs() < 1e-12);
        let qtq = q.matmul_tn(&q).unwrap();
        assert!(qtq.sub(&DenseMatrix::identity(3)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn jacobi_svd_reconstructs() {
        let mut rng = SplitMix64::new(13);
        for (m, n) in [(6, 4), (4, 6), (5, 5)] {
            let a = DenseMatrix::gaussian(m, n, 1.0, &mut rng);
            let svd = a.jacobi_svd().unwrap();
            let k = m.min(n);
            assert_eq!(svd.sigma.len(), k);
            let mut us = svd.u.clone();
            for i in 0..us.rows() {
                for j in 0..k {
                    us[(i, j)] *= svd.sigma[j];
                }
            }
            let rebuilt = us.matmul_nt(&svd.v).unwrap();
            assert!(rebuilt.sub(&a).unwrap().max_abs() < 1e-10);
            for w in svd.sigma.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn lowrank_rank_one_outer_product() {
        // u = 2*e1 in R^4, v = 3*e1 in R^5 -> the product has one singular
        // value, 6.
        let mut u = DenseMatrix::zeros(4, 1);
        u[(0, 0)] = 2.0;
        let mut v = DenseMatrix::zeros(5, 1);
        v[(0, 0)] = 3.0;
        let sv = singular_values_lowrank(&u, &v).unwrap();
        assert_eq!(sv.len(), 1);
        assert!((sv[0] - 6.0).abs() < 1e-14);
    }

    #[test]
    fn lowrank_diagonal_core() {
        // Orthonormal factors carrying a diagonal core (5, 2).
        let mut u = DenseMatrix::zeros(6, 2);
        u[(0, 0)] = 5.0;
        u[(1, 1)] = 2.0;
        let mut v = DenseMatrix::zeros(7, 2);
        v[(0, 0)] = 1.0;
        v[(1, 1)] = 1.0;
        let sv = singular_values_lowrank(&u, &v).unwrap();
        assert!((sv[0] - 5.0).abs() < 1e-14);
        assert!((sv[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lowrank_width_error() {
        let u = DenseMatrix::zeros(3, 4);
        let v = DenseMatrix::zeros(5, 4);
        assert!(singular_values_lowrank(&u, &v).is_err());
    }

    #[test]
    fn nuclear_norm_identity_and_diag() {
        assert!((nuclear_norm_small(&DenseMatrix::identity(3)).unwrap() - 3.0).abs() < 1e-14);
        let d = mat(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        assert!((nuclear_norm_small(&d).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn nuclear_norm_size_limit() {
        let big = DenseMatrix::zeros(DENSE_SVD_LIMIT + 1, DENSE_SVD_LIMIT + 1);
        assert!(matches!(
            nuclear_norm_small(&big),
            Err(Error::SizeLimit { .. })
        ));
    }

    #[test]
    fn dmat_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.dmat");
        let mut rng = SplitMix64::new(3);
        let a = DenseMatrix::gaussian(5, 3, 1.0, &mut rng);
        a.write_dmat(&path).unwrap();
        let b = DenseMatrix::read_dmat(&path).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dmat_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dmat");
        std::fs::write(&path, "2 2\n1.0 2.0\n3.0\n").unwrap();
        assert!(matches!(
            DenseMatrix::read_dmat(&path),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn column_block_copies() {
        let a = mat(2, 4, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let b = a.column_block(1, 3).unwrap();
        assert_eq!(b, mat(2, 2, &[1.0, 2.0, 5.0, 6.0]));
    }

    #[test]
    fn concat_restores_blocks() {
        let a = mat(2, 4, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let left = a.column_block(0, 2).unwrap();
        let right = a.column_block(2, 4).unwrap();
        assert_eq!(DenseMatrix::concat_cols(&[&left, &right]).unwrap(), a);
    }
}
