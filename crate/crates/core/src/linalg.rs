//! Sparse kernels shared by assembly and the implicit stepper.

use nalgebra::DVector;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CscMatrix, CsrMatrix};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Above this size the Newton systems are solved with Jacobi-preconditioned CG
/// instead of a sparse Cholesky factorization.
pub const DIRECT_SOLVE_LIMIT: usize = 20_000;

pub fn spmv(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    spmv_into(a, x, &mut y);
    y
}

pub fn spmv_into(a: &CsrMatrix<f64>, x: &DVector<f64>, y: &mut DVector<f64>) {
    let (offsets, cols, vals) = (a.row_offsets(), a.col_indices(), a.values());
    for i in 0..a.nrows() {
        let mut acc = 0.0;
        for k in offsets[i]..offsets[i + 1] {
            acc += vals[k] * x[cols[k]];
        }
        y[i] = acc;
    }
}

/// `x^T A x`.
pub fn quad_form(a: &CsrMatrix<f64>, x: &DVector<f64>) -> f64 {
    let (offsets, cols, vals) = (a.row_offsets(), a.col_indices(), a.values());
    let mut total = 0.0;
    for i in 0..a.nrows() {
        let mut acc = 0.0;
        for k in offsets[i]..offsets[i + 1] {
            acc += vals[k] * x[cols[k]];
        }
        total += x[i] * acc;
    }
    total
}

pub fn row_sums(a: &CsrMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.nrows(), a.row_iter().map(|r| r.values().iter().sum()))
}

/// Largest absolute entry of `A - A^T`.
pub fn asymmetry(a: &CsrMatrix<f64>) -> f64 {
    let t = a.transpose();
    let mut worst: f64 = 0.0;
    for (row_a, row_t) in a.row_iter().zip(t.row_iter()) {
        let (ca, va) = (row_a.col_indices(), row_a.values());
        let (ct, vt) = (row_t.col_indices(), row_t.values());
        let (mut i, mut j) = (0, 0);
        while i < ca.len() || j < ct.len() {
            let (x, y) = match (ca.get(i), ct.get(j)) {
                (Some(&p), Some(&q)) if p == q => {
                    i += 1;
                    j += 1;
                    (va[i - 1], vt[j - 1])
                }
                (Some(&p), Some(&q)) if p < q => {
                    i += 1;
                    (va[i - 1], 0.0)
                }
                (Some(_), None) => {
                    i += 1;
                    (va[i - 1], 0.0)
                }
                _ => {
                    j += 1;
                    (0.0, vt[j - 1])
                }
            };
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Restricts a node-indexed matrix to the rows and columns listed in `keep`.
/// `map[node]` gives the new index of a kept node.
pub fn restrict(a: &CsrMatrix<f64>, keep: &[usize], map: &[Option<usize>]) -> CsrMatrix<f64> {
    let mut offsets = Vec::with_capacity(keep.len() + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    offsets.push(0);
    for &node in keep {
        let row = a.row(node);
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            if let Some(j) = map[c] {
                cols.push(j);
                vals.push(v);
            }
        }
        offsets.push(cols.len());
    }
    CsrMatrix::try_from_csr_data(keep.len(), keep.len(), offsets, cols, vals)
        .expect("restriction preserves sorted columns")
}

/// Coordinate-triplet CSV (`row,col,value`) of the stored entries.
pub fn triplet_csv(a: &CsrMatrix<f64>) -> String {
    let mut out = String::from("row,col,value\n");
    for (i, j, v) in a.triplet_iter() {
        let _ = writeln!(out, "{i},{j},{v}");
    }
    out
}

/// Solver for the symmetric systems `(s*M + K/s + diag(d)) x = b` that arise
/// in every implicit step. The union sparsity pattern of `M`, `K` and the
/// diagonal is computed once; the numeric factorization is redone on demand
/// and cached while `(s, d)` do not change.
pub struct ShiftedSystem {
    n: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    mass_vals: Vec<f64>,
    stiff_vals: Vec<f64>,
    diag_pos: Vec<usize>,
    factor: Option<CscCholesky<f64>>,
    cached_key: Option<(f64, Vec<f64>)>,
    values: Vec<f64>,
    cg_tol: f64,
}

impl ShiftedSystem {
    pub fn new(mass: &CsrMatrix<f64>, stiff: &CsrMatrix<f64>) -> Self {
        let n = mass.nrows();
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut mass_vals = Vec::new();
        let mut stiff_vals = Vec::new();
        let mut diag_pos = vec![0; n];
        for i in 0..n {
            let (rm, rk) = (mass.row(i), stiff.row(i));
            let mut merged: Vec<(usize, f64, f64)> = Vec::with_capacity(rm.nnz() + rk.nnz() + 1);
            merged.extend(rm.col_indices().iter().zip(rm.values()).map(|(&c, &v)| (c, v, 0.0)));
            merged.extend(rk.col_indices().iter().zip(rk.values()).map(|(&c, &v)| (c, 0.0, v)));
            merged.push((i, 0.0, 0.0));
            merged.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < merged.len() {
                let col = merged[k].0;
                let (mut m, mut s) = (0.0, 0.0);
                while k < merged.len() && merged[k].0 == col {
                    m += merged[k].1;
                    s += merged[k].2;
                    k += 1;
                }
                if col == i {
                    diag_pos[i] = indices.len();
                }
                indices.push(col);
                mass_vals.push(m);
                stiff_vals.push(s);
            }
            offsets.push(indices.len());
        }
        let nnz = indices.len();
        ShiftedSystem {
            n,
            offsets,
            indices,
            mass_vals,
            stiff_vals,
            diag_pos,
            factor: None,
            cached_key: None,
            values: vec![0.0; nnz],
            cg_tol: 1e-12,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Relative residual target of the iterative path.
    pub fn set_cg_tolerance(&mut self, tol: f64) {
        self.cg_tol = tol;
    }

    fn fill_values(&mut self, shift: f64, diag: &[f64]) {
        for k in 0..self.values.len() {
            self.values[k] = shift * self.mass_vals[k] + self.stiff_vals[k] / shift;
        }
        for (i, &d) in diag.iter().enumerate() {
            self.values[self.diag_pos[i]] += d;
        }
    }

    /// Solves `(shift*M + K/shift + diag(d)) x = b`.
    pub fn solve(&mut self, shift: f64, diag: &[f64], b: &DVector<f64>) -> Result<DVector<f64>> {
        if self.n > DIRECT_SOLVE_LIMIT {
            self.fill_values(shift, diag);
            return self.solve_cg(b);
        }
        let fresh = match &self.cached_key {
            Some((s, d)) => *s != shift || d.as_slice() != diag,
            None => true,
        };
        if fresh {
            self.fill_values(shift, diag);
            let result = match self.factor.as_mut() {
                Some(f) => f.refactor(&self.values),
                None => {
                    let csc = CscMatrix::try_from_csc_data(
                        self.n,
                        self.n,
                        self.offsets.clone(),
                        self.indices.clone(),
                        self.values.clone(),
                    )
                    .expect("valid pattern");
                    CscCholesky::factor(&csc).map(|f| self.factor = Some(f))
                }
            };
            if result.is_err() {
                self.cached_key = None;
                return Err(Error::DegenerateSystem(
                    "Newton matrix is not positive definite".into(),
                ));
            }
            self.cached_key = Some((shift, diag.to_vec()));
        }
        let f = self.factor.as_ref().expect("factor present after refactor");
        let x = f.solve(b);
        Ok(DVector::from_column_slice(x.as_slice()))
    }

    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.offsets[i]..self.offsets[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[i] = acc;
        }
    }

    fn solve_cg(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let inv_diag: Vec<f64> = self.diag_pos.iter().map(|&p| 1.0 / self.values[p]).collect();
        if inv_diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::DegenerateSystem("nonpositive diagonal in CG".into()));
        }
        let bnorm = b.norm();
        let mut x = DVector::zeros(self.n);
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.clone();
        let mut z = r.component_mul(&DVector::from_column_slice(&inv_diag));
        let mut p = z.clone();
        let mut ap = DVector::zeros(self.n);
        let mut rz = r.dot(&z);
        for _ in 0..10 * self.n.max(100) {
            self.apply(&p, &mut ap);
            let pap = p.dot(&ap);
            if !(pap > 0.0) {
                return Err(Error::DegenerateSystem("CG curvature breakdown".into()));
            }
            let alpha = rz / pap;
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            if r.norm() <= self.cg_tol * bnorm {
                return Ok(x);
            }
            for i in 0..self.n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = r.dot(&z);
            p *= rz_new / rz;
            p += &z;
            rz = rz_new;
        }
        Err(Error::DegenerateSystem("CG did not converge".into()))
    }
}
