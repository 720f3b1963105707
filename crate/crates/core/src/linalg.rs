//! Dense row-major vectors and matrices over `f64`.
//!
//! Everything here is a pure function. Higher layers keep their hot loops on
//! slices through the `pub(crate)` helpers at the bottom of the file.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, non-empty real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("vector"));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("vector entry {x}")));
        }
        Ok(Vector(data))
    }

    /// Wraps data already known to be finite (results of arithmetic on
    /// finite inputs). Debug builds still check.
    pub(crate) fn from_vec(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        debug_assert!(data.iter().all(|x| x.is_finite()), "non-finite entry");
        Vector(data)
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Vector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector::from_vec(self.0.iter().map(|x| x * s).collect())
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        check_dims(self.dim(), other.dim())?;
        Ok(Vector::from_vec(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn hadamard(&self, other: &Vector) -> Result<Vector> {
        check_dims(self.dim(), other.dim())?;
        Ok(Vector::from_vec(
            self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect(),
        ))
    }

    /// Unit-norm copy.
    pub fn normalized(&self) -> Result<Vector> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(self.scale(1.0 / n))
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("matrix"));
        }
        if data.len() != rows * cols {
            return Err(Error::dims(rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub(crate) fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::from_vec(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(d: &Vector) -> Self {
        let n = d.dim();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = d[i];
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|x| x * s).collect(),
        )
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix::from_vec(self.cols, self.rows, out)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_dims(self.cols, other.rows)?;
        let (n, m, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let orow = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), orow);
            }
        }
        Ok(Matrix::from_vec(n, p, out))
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        Err(Error::dims(expected, actual))
    } else {
        Ok(())
    }
}

pub fn dot(a: &Vector, b: &Vector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(dot_slice(a.as_slice(), b.as_slice()))
}

pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot_slice(a.as_slice(), b.as_slice()) / (na * nb))
}

pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    check_dims(m.cols, v.dim())?;
    let mut out = vec![0.0; m.rows];
    matvec_into(&m.data, m.cols, v.as_slice(), &mut out);
    Ok(Vector::from_vec(out))
}

/// `‖M‖_F / √valid_elements`, so operators with different numbers of
/// meaningful entries (dense vs. diagonal) are comparable.
pub fn frobenius_norm_normalized(m: &Matrix, valid_elements: usize) -> Result<f64> {
    if valid_elements == 0 {
        return Err(Error::invalid("valid_elements must be positive"));
    }
    Ok(m.frobenius_norm() / (valid_elements as f64).sqrt())
}

/// Population variance.
pub fn variance(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("variance of empty list"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Ok(xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
}

pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("mean of empty list"));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Solves `A·X = B` for symmetric positive definite `A` by Cholesky.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dims(n, a.cols()));
    }
    if b.rows() != n {
        return Err(Error::dims(n, b.rows()));
    }
    // lower factor, row-major
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = a.get(i, j) - dot_slice(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::invalid("matrix is not positive definite"));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let m = b.cols();
    let mut x = b.as_slice().to_vec();
    for c in 0..m {
        for i in 0..n {
            let mut s = x[i * m + c];
            for k in 0..i {
                s -= l[i * n + k] * x[k * m + c];
            }
            x[i * m + c] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i * m + c];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k * m + c];
            }
            x[i * m + c] = s / l[i * n + i];
        }
    }
    Ok(Matrix::from_vec(n, m, x))
}

// Slice kernels.

pub(crate) fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot_slice(a, a).sqrt()
}

/// `y += a·x`
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out = M·v` for row-major `M` with `cols` columns.
pub(crate) fn matvec_into(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o = dot_slice(row, v);
    }
}

/// `out = Mᵀ·v` for row-major `M` with `cols` columns.
pub(crate) fn matvec_t_into(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (row, &vi) in m.chunks_exact(cols).zip(v) {
        axpy(vi, row, out);
    }
}

/// `M += a · x yᵀ` for row-major `M` (rows = x.len(), cols = y.len()).
pub(crate) fn add_outer(a: f64, x: &[f64], y: &[f64], m: &mut [f64]) {
    for (row, &xi) in m.chunks_exact_mut(y.len()).zip(x) {
        if xi != 0.0 {
            axpy(a * xi, y, row);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_spd_recovers_solution() {
        let g = Matrix::new(3, 3, vec![2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]).unwrap();
        let x = Matrix::new(3, 2, vec![1.0, -1.0, 2.0, 0.5, -3.0, 0.0]).unwrap();
        let b = g.matmul(&x).unwrap();
        let got = solve_spd(&g, &b).unwrap();
        for (p, q) in got.as_slice().iter().zip(x.as_slice()) {
            assert!((p - q).abs() < 1e-12);
        }
        let neg = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(solve_spd(&neg, &Matrix::identity(2)).is_err());
    }
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        v(&(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(dot(&v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(), 11.0);
        assert!(matches!(
            dot(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dot_self_is_sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_vec(&mut rng, 37);
        let mut acc = 0.0;
        for i in 0..a.dim() {
            acc += a[i].powi(2);
        }
        assert!((dot(&a, &a).unwrap() - acc).abs() < 1e-12);
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -2.0, 5.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&a, &a.scale(-1.0)).unwrap() + 1.0).abs() < 1e-15);
        let c = cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&Vector::zeros(2), &a.scale(1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&Vector::zeros(3), &a),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn matvec_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_vec(&mut rng, 5);
        assert_eq!(matvec(&Matrix::identity(5), &x).unwrap(), x);
        let y = matvec(&Matrix::identity(5).scale(2.0), &x).unwrap();
        for i in 0..5 {
            assert_eq!(y[i], 2.0 * x[i]);
        }

        let (r, c) = (4, 7);
        let data: Vec<f64> = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = Matrix::new(r, c, data.clone()).unwrap();
        let x = random_vec(&mut rng, c);
        let got = matvec(&m, &x).unwrap();
        for i in 0..r {
            let mut s = 0.0;
            for j in 0..c {
                s += data[i * c + j] * x[j];
            }
            assert!((got[i] - s).abs() < 1e-12);
        }
        assert!(matvec(&m, &random_vec(&mut rng, 3)).is_err());
    }

    #[test]
    fn frobenius_examples() {
        let n = 6;
        let i = Matrix::identity(n);
        assert!((frobenius_norm_normalized(&i, n).unwrap() - 1.0).abs() < 1e-15);
        assert!(
            (frobenius_norm_normalized(&i, n * n).unwrap() - 1.0 / (n as f64).sqrt()).abs()
                < 1e-15
        );
        let hc = v(&[0.5, -1.0, 2.0, 0.0, 3.0, 1.0]);
        let got = frobenius_norm_normalized(&Matrix::diag(&hc), n).unwrap();
        assert!((got - hc.norm() / (n as f64).sqrt()).abs() < 1e-15);
        assert!(frobenius_norm_normalized(&i, 0).is_err());
        assert_eq!(frobenius_norm_normalized(&Matrix::zeros(3, 3), 9).unwrap(), 0.0);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance(&[4.0, 4.0, 4.0]).unwrap(), 0.0);
        assert_eq!(variance(&[0.0, 2.0]).unwrap(), 1.0);
        assert!(variance(&[]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..101).map(|_| rng.random_range(-10.0..10.0)).collect();
        // one-pass oracle: E[x²] − E[x]²
        let n = xs.len() as f64;
        let m1 = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n;
        assert!((variance(&xs).unwrap() - (m2 - m1 * m1)).abs() < 1e-9);
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = a.matmul(&a.transpose()).unwrap();
        assert_eq!(p.as_slice(), &[14.0, 32.0, 32.0, 77.0]);
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(a in arb_vec(8), b in arb_vec(8), s in 0.01f64..100.0) {
            let (a, b) = (v(&a), v(&b));
            prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            let sab = cosine_similarity(&a.scale(s), &b).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((ab - sab).abs() < 1e-12);
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn matvec_distributes(m in arb_vec(20), u in arb_vec(5), w in arb_vec(5)) {
            let m = Matrix::new(4, 5, m).unwrap();
            let (u, w) = (v(&u), v(&w));
            let lhs = matvec(&m, &u.add(&w).unwrap()).unwrap();
            let rhs = matvec(&m, &u).unwrap().add(&matvec(&m, &w).unwrap()).unwrap();
            for i in 0..4 {
                prop_assert!((lhs[i] - rhs[i]).abs() < 1e-10);
            }
        }

        #[test]
        fn frobenius_zero_iff_zero(m in arb_vec(9), k in 1usize..20) {
            let mat = Matrix::new(3, 3, m.clone()).unwrap();
            let f = frobenius_norm_normalized(&mat, k).unwrap();
            prop_assert!(f >= 0.0);
            prop_assert_eq!(f == 0.0, m.iter().all(|x| *x == 0.0));
        }
    }
}
