//! Dense activation-matrix primitives.
//!
//! Everything is stored row-major in `f64`: rows are data examples, columns
//! are neurons. Means and norms are always accumulated in double precision,
//! even when the source activations were single precision.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Centered Frobenius norms below this are treated as zero variation.
pub const DEGENERATE_THRESHOLD: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 80;

/// A dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
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

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Selects the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
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

    /// `selfᵀ · other`, without materialising the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot form AᵀB for A {}x{} and B {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for i in 0..self.rows {
            let b_row = other.row(i);
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot form ABᵀ for A {}x{} and B {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        for m in &mut means {
            *m /= n;
        }
        means
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// An n×p matrix of layer activations over n data examples.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActivationMatrix {
    layer_name: String,
    data: Matrix,
    centered: bool,
    normalized: bool,
}

impl ActivationMatrix {
    /// Wraps a matrix, checking that it is non-empty and finite.
    pub fn new(layer_name: impl Into<String>, data: Matrix) -> Result<Self> {
        let layer_name = layer_name.into();
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::InvalidInput(format!(
                "layer `{layer_name}` is empty ({}x{})",
                data.rows(),
                data.cols()
            )));
        }
        if !data.is_finite() {
            return Err(Error::InvalidInput(format!("layer `{layer_name}` has non-finite entries")));
        }
        Ok(Self { layer_name, data, centered: false, normalized: false })
    }

    pub fn from_vec(layer_name: impl Into<String>, n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(layer_name, Matrix::from_vec(n, p, data)?)
    }

    /// Flattens per-example tensors (e.g. convolutional feature maps stored
    /// as `n` contiguous row-major blocks) into an n×p matrix.
    pub fn from_flattened(layer_name: impl Into<String>, n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() % n != 0 {
            return Err(Error::Shape(format!("{} values do not split into {n} examples", data.len())));
        }
        let p = data.len() / n;
        Self::from_vec(layer_name, n, p, data)
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.layer_name = name.into();
        self
    }

    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn p(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Subtracts the column means (`M − 1ₙ ⊗ x̄`).
pub fn center_columns(m: &ActivationMatrix) -> Result<ActivationMatrix> {
    if !m.data.is_finite() {
        return Err(Error::InvalidInput(format!("layer `{}` has non-finite entries", m.layer_name)));
    }
    let means = m.data.column_means();
    let mut out = m.data.clone();
    for i in 0..out.rows() {
        for (v, mean) in out.row_mut(i).iter_mut().zip(&means) {
            *v -= mean;
        }
    }
    Ok(ActivationMatrix { layer_name: m.layer_name.clone(), data: out, centered: true, normalized: false })
}

/// Centers and scales to unit Frobenius norm.
pub fn procrustes_normalize(m: &ActivationMatrix) -> Result<ActivationMatrix> {
    let centered = center_columns(m)?;
    let norm = frobenius_norm(&centered.data)?;
    if norm < DEGENERATE_THRESHOLD {
        return Err(Error::Degenerate(m.layer_name.clone()));
    }
    let data = centered.data.scale(1.0 / norm);
    Ok(ActivationMatrix { layer_name: m.layer_name.clone(), data, centered: true, normalized: true })
}

pub fn frobenius_norm(m: &Matrix) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::InvalidInput("Frobenius norm of a non-finite matrix".into()));
    }
    Ok(libm::sqrt(m.as_slice().iter().map(|v| v * v).sum::<f64>()))
}

/// Sum of singular values.
pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Singular values in descending order, via one-sided (Hestenes) Jacobi on
/// the orientation whose column count is `min(rows, cols)`.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_finite() {
        return Err(Error::InvalidInput("SVD of a non-finite matrix".into()));
    }
    let (rows, cols) = (m.rows(), m.cols());
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    // Column-major working copy: `k` columns of length `len`.
    let (k, len) = if cols <= rows { (cols, rows) } else { (rows, cols) };
    let mut a = vec![0.0; k * len];
    if cols <= rows {
        for i in 0..rows {
            for j in 0..cols {
                a[j * len + i] = m[(i, j)];
            }
        }
    } else {
        a.copy_from_slice(m.as_slice());
    }

    let tol = f64::EPSILON * len as f64;
    // Columns this small relative to the whole matrix contribute nothing
    // measurable and only chase rounding noise.
    let total: f64 = a.iter().map(|v| v * v).sum();
    let negligible = total * (f64::EPSILON * f64::EPSILON);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let (head, tail) = a.split_at_mut(q * len);
                let cp = &mut head[p * len..(p + 1) * len];
                let cq = &mut tail[..len];
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if alpha <= negligible || beta <= negligible || libm::fabs(gamma) <= tol * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical { rows, cols });
    }
    let mut sv: Vec<f64> = a.chunks_exact(len).map(|c| libm::sqrt(dot(c, c))).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(rows: &[&[f64]]) -> ActivationMatrix {
        ActivationMatrix::new("t", Matrix::from_rows(rows)).unwrap()
    }

    #[test]
    fn centering_single_column() {
        let c = center_columns(&act(&[&[1.0], &[2.0], &[3.0]])).unwrap();
        assert_eq!(c.matrix().as_slice(), &[-1.0, 0.0, 1.0]);
        assert!(c.is_centered());
    }

    #[test]
    fn centering_constant_matrix_is_zero() {
        let c = center_columns(&act(&[&[5.0, 5.0], &[5.0, 5.0]])).unwrap();
        assert!(c.matrix().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_single_column() {
        let c = procrustes_normalize(&act(&[&[-1.0], &[0.0], &[1.0]])).unwrap();
        let r = 1.0 / 2f64.sqrt();
        for (got, want) in c.matrix().as_slice().iter().zip([-r, 0.0, r]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(c.is_normalized() && c.is_centered());
    }

    #[test]
    fn normalize_rejects_constant_columns() {
        let err = procrustes_normalize(&act(&[&[2.0, 1.0], &[2.0, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(ActivationMatrix::new("x", Matrix::from_rows(&[[f64::NAN]])).is_err());
        assert!(frobenius_norm(&Matrix::from_rows(&[[f64::INFINITY]])).is_err());
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::from_rows(&[[3.0, 4.0]])).unwrap(), 5.0);
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 2)).unwrap(), 0.0);
        assert!((frobenius_norm(&Matrix::identity(2)).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn nuclear_examples() {
        let d = Matrix::from_rows(&[[3.0, 0.0], [0.0, 4.0]]);
        assert!((nuclear_norm(&d).unwrap() - 7.0).abs() < 1e-14);
        assert!((nuclear_norm(&Matrix::identity(3)).unwrap() - 3.0).abs() < 1e-14);
        assert!((nuclear_norm(&Matrix::from_rows(&[[-2.0, 0.0, 0.0]])).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(nuclear_norm(&Matrix::zeros(4, 3)).unwrap(), 0.0);
    }

    #[test]
    fn wide_and_tall_agree() {
        let m = Matrix::from_fn(3, 7, |i, j| ((i * 7 + j) as f64 * 0.37).sin());
        let a = singular_values(&m).unwrap();
        let b = singular_values(&m.transpose()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn flattening_is_row_major_per_example() {
        let a = ActivationMatrix::from_flattened("conv", 2, (0..8).map(f64::from).collect()).unwrap();
        assert_eq!((a.n(), a.p()), (2, 4));
        assert_eq!(a.matrix().row(1), &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_fn(4, 3, |i, j| (i as f64) - 2.0 * j as f64 + 0.5);
        let b = Matrix::from_fn(4, 2, |i, j| (i * j) as f64 + 1.0);
        let direct = a.transpose().matmul(&b).unwrap();
        assert_eq!(a.t_matmul(&b).unwrap(), direct);
        assert_eq!(b.transpose().matmul_t(&a.transpose()).unwrap(), b.transpose().matmul(&a).unwrap());
        assert!(a.matmul(&b).is_err());
    }
}
