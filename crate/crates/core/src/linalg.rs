//! Dense real linear algebra: row-major matrices, row normalization, scaled
//! Gram matrices and a cyclic Jacobi eigensolver for symmetric matrices.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RfrError, Result};

/// Rows with an L2 norm below this are treated as zero.
pub const ZERO_ROW_NORM: f64 = 1e-12;
/// Largest matrix order accepted by [`sym_eigen`].
pub const MAX_EIGEN_DIM: usize = 512;
/// Symmetry tolerance for [`sym_eigen`] inputs, relative to the largest entry (at least 1).
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Negative eigenvalues of a PSD matrix down to this value are rounding noise.
pub const PSD_TOL: f64 = 1e-10;

const JACOBI_REL_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, rejecting length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(RfrError::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(RfrError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
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
            m.data[i * n + i] = 1.0;
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

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(RfrError::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero width
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(RfrError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(RfrError::Dimension(format!(
                "cannot multiply {}x{} by transpose of {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self::from_fn(self.rows, other.rows, |i, j| {
            dot(self.row(i), other.row(j))
        }))
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(RfrError::Dimension(format!(
                "cannot multiply transpose of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(RfrError::Dimension(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Largest `|a_ij - a_ji|`; infinite for non-square matrices.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Copies the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(RfrError::Dimension(format!(
                "cannot stack {} columns on {}",
                other.cols, self.cols
            )));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    /// Parses the CSV matrix format: a `rows,cols` header line followed by
    /// `rows` lines of `cols` comma-separated values.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(RfrError::Parse {
            line: 1,
            msg: "missing `rows,cols` header".into(),
        })?;
        let dims: Vec<&str> = header.split(',').map(str::trim).collect();
        let parse_dim = |s: &str| {
            s.parse::<usize>().map_err(|_| RfrError::Parse {
                line: hline,
                msg: format!("header must be `rows,cols`, found {header:?}"),
            })
        };
        if dims.len() != 2 {
            return Err(RfrError::Parse {
                line: hline,
                msg: format!("header must be `rows,cols`, found {header:?}"),
            });
        }
        let (rows, cols) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
        let mut data = Vec::with_capacity(rows * cols);
        let mut seen = 0;
        for (lineno, line) in lines {
            if seen == rows {
                return Err(RfrError::Parse {
                    line: lineno,
                    msg: format!("more than the declared {rows} rows"),
                });
            }
            let before = data.len();
            for (j, field) in line.split(',').enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| RfrError::Parse {
                    line: lineno,
                    msg: format!("column {}: cannot parse {:?} as a number", j + 1, field.trim()),
                })?;
                if !v.is_finite() {
                    return Err(RfrError::Parse {
                        line: lineno,
                        msg: format!("column {}: non-finite value", j + 1),
                    });
                }
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(RfrError::Parse {
                    line: lineno,
                    msg: format!("expected {cols} values, found {}", data.len() - before),
                });
            }
            seen += 1;
        }
        if seen != rows {
            return Err(RfrError::Parse {
                line: text.lines().count() + 1,
                msg: format!("expected {rows} rows, found {seen}"),
            });
        }
        Self::new(rows, cols, data)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("{},{}\n", self.rows, self.cols);
        for r in self.row_iter() {
            for (j, v) in r.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                // `{}` prints the shortest representation that round-trips
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RfrError::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| RfrError::io(path, e))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending order.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    eigenvectors: DenseMatrix,
}

impl Spectrum {
    /// Raw eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvalues with small negative rounding noise clamped to zero.
    pub fn psd_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|v| v.max(0.0)).collect()
    }

    /// Columns are unit eigenvectors matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DenseMatrix {
        &self.eigenvectors
    }

    pub fn source_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Builds a spectrum from known eigenvalues (e.g. for metric evaluation
    /// on a hand-specified distribution). Eigenvectors are the standard basis.
    pub fn from_eigenvalues(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        let n = values.len();
        Self {
            eigenvalues: values,
            eigenvectors: DenseMatrix::identity(n),
        }
    }

    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let w: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += v.get(i, k) * w[k] * v.get(j, k);
                }
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
        out
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.reconstruct_with(|l| l)
    }
}

/// Scales every row to unit L2 norm.
pub fn row_normalize(h: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(row_normalize_with_norms(h)?.0)
}

/// Row normalization that also returns the original row norms.
pub fn row_normalize_with_norms(h: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let mut out = h.clone();
    let mut norms = Vec::with_capacity(h.rows());
    for i in 0..h.rows() {
        let n = norm(h.row(i));
        if !(n >= ZERO_ROW_NORM) {
            return Err(RfrError::ZeroRow(i));
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// `C = HᵀH / N` for row-normalized `H`.
pub fn gram_scaled(h_norm: &DenseMatrix) -> Result<DenseMatrix> {
    let n = h_norm.rows();
    if n < 2 {
        return Err(RfrError::Dimension(format!(
            "Gram matrix needs at least 2 rows, got {n}"
        )));
    }
    let d = h_norm.cols();
    let mut c = DenseMatrix::zeros(d, d);
    for r in h_norm.row_iter() {
        for i in 0..d {
            let ri = r[i];
            if ri == 0.0 {
                continue;
            }
            for j in i..d {
                c.data[i * d + j] += ri * r[j];
            }
        }
    }
    let inv = 1.0 / n as f64;
    for i in 0..d {
        for j in i..d {
            let v = c.data[i * d + j] * inv;
            c.data[i * d + j] = v;
            c.data[j * d + i] = v;
        }
    }
    Ok(c)
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
///
/// Sweeps over all `(p, q)` pairs until the off-diagonal Frobenius norm drops
/// below `1e-12 · ‖A‖_F`, for at most 100 sweeps. Eigenvectors are returned
/// as columns with their largest-magnitude component made positive.
pub fn sym_eigen(a: &DenseMatrix) -> Result<Spectrum> {
    let n = a.rows();
    if a.cols() != n {
        return Err(RfrError::Dimension(format!(
            "eigen-decomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if n > MAX_EIGEN_DIM {
        return Err(RfrError::Dimension(format!(
            "matrix order {n} exceeds {MAX_EIGEN_DIM}"
        )));
    }
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL * a.max_abs().max(1.0) {
        return Err(RfrError::NotSymmetric(asym));
    }

    // symmetrize so rounding-level asymmetry does not bias the rotations
    let mut m = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)));
    // rows of `vt` are the eigenvector estimates (Vᵀ), so rotations touch contiguous memory
    let mut vt = DenseMatrix::identity(n);
    let target = JACOBI_REL_TOL * m.frobenius_norm();

    let mut converged = false;
    for _ in 0..=JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&m) <= target {
            converged = true;
            break;
        }
        let a = m.data_mut();
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A' = Jᵀ A J touches rows and columns p, q; symmetry lets us
                // compute each pair once and mirror it
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let np = c * akp - s * akq;
                    let nq = s * akp + c * akq;
                    a[k * n + p] = np;
                    a[p * n + k] = np;
                    a[k * n + q] = nq;
                    a[q * n + k] = nq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                let v = vt.data_mut();
                let (head, tail) = v.split_at_mut(q * n);
                let rp = &mut head[p * n..(p + 1) * n];
                let rq = &mut tail[..n];
                for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
                    let (vp, vq) = (*x, *y);
                    *x = c * vp - s * vq;
                    *y = s * vp + c * vq;
                }
            }
        }
    }
    if !converged {
        return Err(RfrError::NoConvergence(JACOBI_MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vecs = DenseMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let row = vt.row(src);
        let mut best = 0.0f64;
        for &x in row {
            if x.abs() > best.abs() {
                best = x;
            }
        }
        let sign = if best < 0.0 { -1.0 } else { 1.0 };
        for (k, &x) in row.iter().enumerate() {
            vecs.set(k, col, sign * x);
        }
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors: vecs,
    })
}

fn off_diagonal_norm(m: &DenseMatrix) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m.get(i, j) * m.get(i, j);
            }
        }
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut r = rng::seeded(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng::normal(&mut r))
    }

    fn random_orthogonal(n: usize, seed: u64) -> DenseMatrix {
        // Gram-Schmidt on a Gaussian matrix
        let g = random(n, n, seed);
        let mut q: Vec<Vec<f64>> = Vec::new();
        for i in 0..n {
            let mut v = g.row(i).to_vec();
            for u in &q {
                let p = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
            let nv = norm(&v);
            v.iter_mut().for_each(|a| *a /= nv);
            q.push(v);
        }
        DenseMatrix::from_rows(&q).unwrap()
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(matches!(
            DenseMatrix::new(2, 2, vec![1.0; 3]),
            Err(RfrError::Dimension(_))
        ));
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(RfrError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn normalize_pythagorean_row() {
        let h = DenseMatrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let n = row_normalize(&h).unwrap();
        assert!((n.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((n.get(0, 1) - 0.8).abs() < 1e-15);
        let e = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(row_normalize(&e).unwrap(), e);
    }

    #[test]
    fn normalize_random_rows_are_unit() {
        let h = random(16, 8, 3);
        let n = row_normalize(&h).unwrap();
        for i in 0..16 {
            let s: f64 = n.row(i).iter().map(|v| v * v).sum();
            assert!((s.sqrt() - 1.0).abs() < 1e-12);
            // direction preserved: positive multiple of the input row
            let c = dot(n.row(i), h.row(i));
            assert!((c - norm(h.row(i))).abs() < 1e-12 * norm(h.row(i)));
        }
    }

    #[test]
    fn normalize_zero_row_errors() {
        let h = DenseMatrix::from_rows(&[[1.0, 1.0], [0.0, 1e-13]]).unwrap();
        assert!(matches!(row_normalize(&h), Err(RfrError::ZeroRow(1))));
    }

    #[test]
    fn gram_of_standard_basis_is_scaled_identity() {
        let c = gram_scaled(&DenseMatrix::identity(4)).unwrap();
        assert_eq!(c, DenseMatrix::identity(4).scale(0.25));
    }

    #[test]
    fn gram_of_repeated_row_is_rank_one() {
        let h = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0]; 5]).unwrap();
        let c = gram_scaled(&h).unwrap();
        let mut expected = DenseMatrix::zeros(3, 3);
        expected.set(0, 0, 1.0);
        assert_eq!(c, expected);
    }

    #[test]
    fn gram_trace_is_one() {
        let h = row_normalize(&random(64, 8, 11)).unwrap();
        let c = gram_scaled(&h).unwrap();
        let mut t = 0.0;
        for i in 0..8 {
            t += c.get(i, i);
        }
        assert!((t - 1.0).abs() < 1e-10);
        assert_eq!(c.asymmetry(), 0.0);
    }

    #[test]
    fn gram_needs_two_rows() {
        let h = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(gram_scaled(&h), Err(RfrError::Dimension(_))));
    }

    #[test]
    fn eigen_classic_two_by_two() {
        let a = DenseMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let s = sym_eigen(&a).unwrap();
        assert!((s.eigenvalues()[0] - 3.0).abs() < 1e-14);
        assert!((s.eigenvalues()[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_scaled_identity() {
        let s = sym_eigen(&DenseMatrix::identity(8).scale(0.125)).unwrap();
        assert!(s.eigenvalues().iter().all(|&l| l == 0.125));
    }

    #[test]
    fn eigen_rejects_asymmetric_and_rectangular() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&a), Err(RfrError::NotSymmetric(_))));
        assert!(matches!(
            sym_eigen(&DenseMatrix::zeros(2, 3)),
            Err(RfrError::Dimension(_))
        ));
        assert!(matches!(
            sym_eigen(&DenseMatrix::zeros(513, 513)),
            Err(RfrError::Dimension(_))
        ));
    }

    #[test]
    fn eigen_zero_matrix() {
        let s = sym_eigen(&DenseMatrix::zeros(3, 3)).unwrap();
        assert_eq!(s.eigenvalues(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn eigen_random_symmetric_pairs_and_reconstruction() {
        let g = random(32, 32, 5);
        let a = g.add(&g.transpose()).unwrap();
        let s = sym_eigen(&a).unwrap();
        let v = s.eigenvectors();
        for k in 0..32 {
            let col = v.column(k);
            let av: Vec<f64> = (0..32).map(|i| dot(a.row(i), &col)).collect();
            for i in 0..32 {
                assert!((av[i] - s.eigenvalues()[k] * col[i]).abs() < 1e-8);
            }
        }
        let err = s.reconstruct().sub(&a).unwrap().frobenius_norm();
        assert!(err <= 1e-8 * a.frobenius_norm());
        let vtv = v.matmul_tn(v).unwrap();
        assert!(vtv.sub(&DenseMatrix::identity(32)).unwrap().frobenius_norm() < 1e-8);
        assert!(s.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigen_recovers_planted_spectrum() {
        let q = random_orthogonal(12, 9);
        let lambda: Vec<f64> = (0..12).map(|i| (i as f64 - 4.0) * 0.7).collect();
        let a = q
            .matmul(&DenseMatrix::diagonal(&lambda))
            .unwrap()
            .matmul_nt(&q)
            .unwrap();
        // rounding in the product leaves ~1e-16 asymmetry
        let a = DenseMatrix::from_fn(12, 12, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)));
        let s = sym_eigen(&a).unwrap();
        let mut expected = lambda.clone();
        expected.sort_by(|a, b| b.total_cmp(a));
        for (got, want) in s.eigenvalues().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let m = random(3, 4, 1);
        let back = DenseMatrix::from_csv_str(&m.to_csv_string()).unwrap();
        assert_eq!(m, back);

        let err = DenseMatrix::from_csv_str("2,2\n1,2\n3,x\n").unwrap_err();
        assert!(matches!(err, RfrError::Parse { line: 3, .. }), "{err}");
        let err = DenseMatrix::from_csv_str("2,2\n1,2,3\n3,4\n").unwrap_err();
        assert!(matches!(err, RfrError::Parse { line: 2, .. }));
        let err = DenseMatrix::from_csv_str("2,2\n1,2\n").unwrap_err();
        assert!(matches!(err, RfrError::Parse { .. }));
        let err = DenseMatrix::from_csv_str("two,2\n").unwrap_err();
        assert!(matches!(err, RfrError::Parse { line: 1, .. }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn gram_eigenvalues_on_simplex(seed in 0u64..10_000, n in 2usize..40, d in 1usize..12) {
                let h = row_normalize(&random(n, d, seed)).unwrap();
                let s = sym_eigen(&gram_scaled(&h).unwrap()).unwrap();
                let sum: f64 = s.eigenvalues().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-10);
                prop_assert!(s.eigenvalues().iter().all(|&l| l >= -PSD_TOL));
            }

            #[test]
            fn gram_row_permutation_invariant(seed in 0u64..10_000, n in 2usize..30) {
                let h = row_normalize(&random(n, 5, seed)).unwrap();
                let mut perm: Vec<usize> = (0..n).rev().collect();
                perm.rotate_left(seed as usize % n);
                let c1 = gram_scaled(&h).unwrap();
                let c2 = gram_scaled(&h.select_rows(&perm)).unwrap();
                prop_assert!(c1.sub(&c2).unwrap().max_abs() < 1e-14);
            }
        }
    }
}
