//! Sparse row storage and ILU(0)-preconditioned Krylov iterations.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{HeisError, Result};

const DOT_CHUNK: usize = 4096;

/// Compressed sparse rows with sorted, duplicate-free columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for (c, v) in row {
                if c == last {
                    *vals.last_mut().expect("entry pushed") += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = c;
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut s = 0.0;
            for k in a..b {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        });
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        y
    }
}

/// Chunked dot product; the summation order is fixed, so results do not depend on
/// the thread count.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let parts: Vec<f64> = a
        .par_chunks(DOT_CHUNK)
        .zip(b.par_chunks(DOT_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    parts.iter().sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Incomplete LU factorization with the sparsity of the matrix.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: Csr,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.cols[k] == i {
                    *d = k;
                }
            }
            if *d == usize::MAX {
                return Err(HeisError::Singular);
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (a0, a1) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in a0..a1 {
                pos[lu.cols[k]] = k;
            }
            for k in a0..a1 {
                let c = lu.cols[k];
                if c >= i {
                    break;
                }
                let pivot = lu.vals[diag[c]];
                if pivot == 0.0 {
                    return Err(HeisError::Singular);
                }
                let f = lu.vals[k] / pivot;
                lu.vals[k] = f;
                for m in diag[c] + 1..lu.row_ptr[c + 1] {
                    let p = pos[lu.cols[m]];
                    if p != usize::MAX {
                        lu.vals[p] -= f * lu.vals[m];
                    }
                }
            }
            for k in a0..a1 {
                pos[lu.cols[k]] = usize::MAX;
            }
            if lu.vals[diag[i]] == 0.0 || !lu.vals[diag[i]].is_finite() {
                return Err(HeisError::Singular);
            }
        }
        Ok(Self { lu, diag })
    }

    /// `z = (LU)⁻¹ r`.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = r[i];
            for k in lu.row_ptr[i]..self.diag[i] {
                s -= lu.vals[k] * z[lu.cols[k]];
            }
            z[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = z[i];
            for k in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.vals[k] * z[lu.cols[k]];
            }
            z[i] = s / lu.vals[self.diag[i]];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// `‖b − Ax‖ / ‖b‖`, or `‖Ax‖` when `b = 0`.
    pub residual: f64,
    pub method: &'static str,
}

fn relative_residual(a: &Csr, x: &[f64], b: &[f64], bn: f64) -> f64 {
    let ax = a.mul(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    norm(&r) / if bn > 0.0 { bn } else { 1.0 }
}

fn bicgstab(a: &Csr, m: &Ilu0, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> (usize, bool) {
    let n = a.n;
    let bn = norm(b).max(f64::MIN_POSITIVE);
    let mut r: Vec<f64> = b.iter().zip(a.mul(x)).map(|(p, q)| p - q).collect();
    if norm(&r) <= tol * bn {
        return (0, true);
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return (it, false);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut()
            .zip(&r)
            .zip(&v)
            .for_each(|((pi, ri), vi)| *pi = ri + beta * (*pi - omega * vi));
        m.apply(&p, &mut y);
        a.mul_into(&y, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 || !denom.is_finite() {
            return (it, false);
        }
        alpha = rho / denom;
        s.par_iter_mut()
            .zip(&r)
            .zip(&v)
            .for_each(|((si, ri), vi)| *si = ri - alpha * vi);
        if norm(&s) / bn <= tol {
            x.par_iter_mut().zip(&y).for_each(|(xi, yi)| *xi += alpha * yi);
            return (it, true);
        }
        m.apply(&s, &mut z);
        a.mul_into(&z, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return (it, false);
        }
        omega = dot(&t, &s) / tt;
        x.par_iter_mut()
            .zip(&y)
            .zip(&z)
            .for_each(|((xi, yi), zi)| *xi += alpha * yi + omega * zi);
        r.par_iter_mut()
            .zip(&s)
            .zip(&t)
            .for_each(|((ri, si), ti)| *ri = si - omega * ti);
        if norm(&r) / bn <= tol {
            return (it, true);
        }
        if omega == 0.0 {
            return (it, false);
        }
    }
    (max_iter, false)
}

fn gmres(a: &Csr, m: &Ilu0, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize, restart: usize) -> (usize, bool) {
    let n = a.n;
    let bn = norm(b).max(f64::MIN_POSITIVE);
    let mut total = 0;
    let mut w = vec![0.0; n];
    let mut zt = vec![0.0; n];
    while total < max_iter {
        let r: Vec<f64> = b.iter().zip(a.mul(x)).map(|(p, q)| p - q).collect();
        let beta = norm(&r);
        if beta / bn <= tol {
            return (total, true);
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            total += 1;
            m.apply(&basis[k], &mut zt);
            a.mul_into(&zt, &mut w);
            for (j, vj) in basis.iter().enumerate() {
                let hij = dot(&w, vj);
                hess[j][k] = hij;
                w.par_iter_mut().zip(vj).for_each(|(wi, vi)| *wi -= hij * vi);
            }
            let hn = norm(&w);
            hess[k + 1][k] = hn;
            for j in 0..k {
                let tmp = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = tmp;
            }
            let den = (hess[k][k] * hess[k][k] + hess[k + 1][k] * hess[k + 1][k]).sqrt();
            if den == 0.0 {
                return (total, false);
            }
            cs[k] = hess[k][k] / den;
            sn[k] = hess[k + 1][k] / den;
            hess[k][k] = den;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if g[k + 1].abs() / bn <= tol || hn == 0.0 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut yv = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hess[i][j] * yv[j];
            }
            yv[i] = s / hess[i][i];
        }
        let mut update = vec![0.0; n];
        for (j, yj) in yv.iter().enumerate() {
            update.par_iter_mut().zip(&basis[j]).for_each(|(u, v)| *u += yj * v);
        }
        m.apply(&update, &mut zt);
        x.par_iter_mut().zip(&zt).for_each(|(xi, zi)| *xi += zi);
    }
    let r = relative_residual(a, x, b, bn);
    (total, r <= tol)
}

/// Solves `Ax = b` to relative residual `tol`: BiCGSTAB first, restarted GMRES on
/// breakdown or stagnation.
pub fn solve(a: &Csr, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    let m = Ilu0::new(a)?;
    solve_with(a, &m, b, x0, tol, max_iter)
}

/// [`solve`] with a precomputed preconditioner.
pub fn solve_with(a: &Csr, m: &Ilu0, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.n;
    if b.len() != n {
        return Err(HeisError::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let bn = norm(b);
    if bn == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                residual: 0.0,
                method: "trivial",
            },
        ));
    }
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let (it, ok) = bicgstab(a, m, b, &mut x, tol, max_iter);
    let res = relative_residual(a, &x, b, bn);
    if ok && res <= tol * 10.0 && res.is_finite() {
        return Ok((
            x,
            SolveStats {
                iterations: it,
                residual: res,
                method: "bicgstab+ilu0",
            },
        ));
    }
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let (it2, _) = gmres(a, m, b, &mut x, tol, max_iter, 60);
    let res = relative_residual(a, &x, b, bn);
    if !(res <= tol * 10.0) {
        return Err(HeisError::Solver(format!(
            "no convergence: relative residual {res:e} after {} iterations",
            it + it2
        )));
    }
    Ok((
        x,
        SolveStats {
            iterations: it + it2,
            residual: res,
            method: "gmres+ilu0",
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> Csr {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                }
                r
            })
            .collect();
        Csr::from_rows(n, rows)
    }

    #[test]
    fn duplicates_are_merged() {
        let a = Csr::from_rows(2, vec![vec![(1, 1.0), (0, 2.0), (1, 3.0)], vec![(1, 1.0)]]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.row(0).collect::<Vec<_>>(), vec![(0, 2.0), (1, 4.0)]);
    }

    #[test]
    fn ilu_is_exact_for_tridiagonal() {
        let a = laplace_1d(50);
        let m = Ilu0::new(&a).unwrap();
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul(&x);
        let mut z = vec![0.0; 50];
        m.apply(&b, &mut z);
        assert!(z.iter().zip(&x).all(|(p, q)| (p - q).abs() < 1e-10));
    }

    #[test]
    fn krylov_solves_nonsymmetric_system() {
        let n = 400;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 4.0)];
                for (d, v) in [(1, -1.5), (20, -0.8)] {
                    if i >= d {
                        r.push((i - d, v));
                    }
                    if i + d < n {
                        r.push((i + d, -0.5));
                    }
                }
                r
            })
            .collect();
        let a = Csr::from_rows(n, rows);
        let x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64).cos()).collect();
        let b = a.mul(&x);
        let (sol, stats) = solve(&a, &b, None, 1e-12, 1000).unwrap();
        assert!(stats.residual <= 1e-11);
        assert!(sol.iter().zip(&x).all(|(p, q)| (p - q).abs() < 1e-9));
        let m = Ilu0::new(&a).unwrap();
        let mut y = vec![0.0; n];
        let (_, ok) = gmres(&a, &m, &b, &mut y, 1e-12, 1000, 10);
        assert!(ok);
    }

    #[test]
    fn dot_is_order_stable() {
        let a: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        assert_eq!(dot(&a, &a), dot(&a, &a));
    }
}
