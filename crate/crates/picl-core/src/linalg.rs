//! Dense vector/matrix arithmetic, L2 normalization and cosine similarity.
//!
//! All numeric state in the engine is 64-bit floats: desk-scale workloads
//! gain determinism and gradient-check precision, so there is no mixed
//! precision anywhere.

use crate::error::{PiclError, Result};

/// Dense real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|x| x * s).collect())
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        check_same_dim(self, other)?;
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(PiclError::ShapeMismatch("ragged rows".into()));
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self · v`.
    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if v.dim() != self.cols {
            return Err(PiclError::ShapeMismatch(format!(
                "matvec: {}x{} with vector of dim {}",
                self.rows,
                self.cols,
                v.dim()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot_slices(self.row(i), v.as_slice());
        }
        Ok(Vector(out))
    }

    /// `selfᵀ · v`.
    pub fn matvec_t(&self, v: &Vector) -> Result<Vector> {
        if v.dim() != self.rows {
            return Err(PiclError::ShapeMismatch(format!(
                "matvec_t: {}x{} with vector of dim {}",
                self.rows,
                self.cols,
                v.dim()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.get(i, j) * vi;
            }
        }
        Ok(Vector(out))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(PiclError::ShapeMismatch(format!(
                "matmul: {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// `self += alpha · (a ⊗ b)` — rank-one accumulation used by backprop.
    pub fn add_outer(&mut self, alpha: f64, a: &Vector, b: &Vector) -> Result<()> {
        if a.dim() != self.rows || b.dim() != self.cols {
            return Err(PiclError::ShapeMismatch(format!(
                "add_outer: {}x{} with {} ⊗ {}",
                self.rows,
                self.cols,
                a.dim(),
                b.dim()
            )));
        }
        for i in 0..self.rows {
            let ai = alpha * a[i];
            for j in 0..self.cols {
                self.data[i * self.cols + j] += ai * b[j];
            }
        }
        Ok(())
    }
}

/// Outer product `a ⊗ b`.
pub fn outer(a: &Vector, b: &Vector) -> Matrix {
    let mut m = Matrix::zeros(a.dim(), b.dim());
    m.add_outer(1.0, a, b).expect("shapes match by construction");
    m
}

/// `y += alpha · x`.
pub fn axpy(alpha: f64, x: &Vector, y: &mut Vector) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(PiclError::ShapeMismatch(format!(
            "axpy: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    for (yi, xi) in y.0.iter_mut().zip(&x.0) {
        *yi += alpha * xi;
    }
    Ok(())
}

pub fn dot(a: &Vector, b: &Vector) -> Result<f64> {
    check_same_dim(a, b)?;
    Ok(dot_slices(a.as_slice(), b.as_slice()))
}

fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_same_dim(a: &Vector, b: &Vector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(PiclError::ShapeMismatch(format!(
            "vector dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Norm below which a vector is treated as zero for normalization purposes.
pub const NORM_EPS: f64 = 1e-300;

/// Scale `v` to unit Euclidean norm. Zero-norm input is a degenerate-input
/// error rather than a silent NaN.
pub fn l2_normalize(v: &Vector) -> Result<Vector> {
    let n = v.norm();
    if !(n > NORM_EPS) || !n.is_finite() {
        return Err(PiclError::DegenerateInput(format!(
            "cannot normalize vector with norm {n}"
        )));
    }
    Ok(v.scale(1.0 / n))
}

/// Cosine similarity, clamped to [-1, 1] so downstream code never sees
/// rounding excursions outside the valid range.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    check_same_dim(a, b)?;
    let na = a.norm();
    let nb = b.norm();
    if !(na > NORM_EPS) || !(nb > NORM_EPS) {
        return Err(PiclError::DegenerateInput(
            "cosine of zero-norm vector".into(),
        ));
    }
    Ok((dot_slices(a.as_slice(), b.as_slice()) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_345_triangle() {
        let v = l2_normalize(&Vector(vec![3.0, 4.0])).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15);
        assert!((v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_already_unit() {
        let v = l2_normalize(&Vector(vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(v.0, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_zero_is_error() {
        assert!(matches!(
            l2_normalize(&Vector(vec![0.0, 0.0])),
            Err(PiclError::DegenerateInput(_))
        ));
    }

    #[test]
    fn cosine_trivial_cases() {
        let e0 = Vector(vec![1.0, 0.0]);
        let e1 = Vector(vec![0.0, 1.0]);
        let neg = Vector(vec![-1.0, 0.0]);
        assert_eq!(cosine(&e0, &e0).unwrap(), 1.0);
        assert_eq!(cosine(&e0, &e1).unwrap(), 0.0);
        assert_eq!(cosine(&e0, &neg).unwrap(), -1.0);
        assert!(cosine(&e0, &Vector(vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn matvec_identity_and_zero() {
        let v = Vector(vec![2.0, -3.0, 5.0]);
        let id = Matrix::identity(3);
        assert_eq!(id.matvec(&v).unwrap(), v);
        let z = Matrix::zeros(3, 3);
        assert_eq!(z.matvec(&v).unwrap(), Vector::zeros(3));
    }

    #[test]
    fn matvec_direct_arithmetic() {
        let m = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = m.matvec(&Vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(out.0, vec![3.0, 7.0]);
    }

    #[test]
    fn matvec_shape_mismatch() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(
            m.matvec(&Vector(vec![1.0, 2.0])),
            Err(PiclError::ShapeMismatch(_))
        ));
        assert!(matches!(
            m.matmul(&Matrix::zeros(2, 2)),
            Err(PiclError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn matmul_against_hand_product() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(vec![vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_slice(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn outer_and_axpy() {
        let m = outer(&Vector(vec![1.0, 2.0]), &Vector(vec![3.0, 4.0]));
        assert_eq!(m.as_slice(), &[3.0, 4.0, 6.0, 8.0]);
        let mut y = Vector(vec![1.0, 1.0]);
        axpy(2.0, &Vector(vec![10.0, 20.0]), &mut y).unwrap();
        assert_eq!(y.0, vec![21.0, 41.0]);
    }

    fn arb_vec(max_dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 1..=max_dim)
            .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6)
    }

    proptest! {
        #[test]
        fn normalize_idempotent(v in arb_vec(8)) {
            let v = Vector(v);
            let once = l2_normalize(&v).unwrap();
            let twice = l2_normalize(&once).unwrap();
            prop_assert!((once.norm() - 1.0).abs() < 1e-12);
            for (a, b) in once.0.iter().zip(&twice.0) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_symmetry_and_scaling(a in arb_vec(8), s in 0.01f64..50.0) {
            let b: Vec<f64> = a.iter().map(|x| x * 0.5 + 1.0).collect();
            let va = Vector(a.clone());
            let vb = Vector(b);
            if vb.norm() > 1e-6 {
                prop_assert_eq!(cosine(&va, &vb).unwrap(), cosine(&vb, &va).unwrap());
            }
            let scaled = va.scale(s);
            prop_assert!((cosine(&va, &scaled).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cosine_of_unit_vectors_is_dot(
            (a, b) in (1usize..=8).prop_flat_map(|dim| {
                let v = || prop::collection::vec(-100.0f64..100.0, dim..=dim)
                    .prop_filter("nonzero", |v| {
                        v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6
                    });
                (v(), v())
            })
        ) {
            let ua = l2_normalize(&Vector(a)).unwrap();
            let ub = l2_normalize(&Vector(b)).unwrap();
            let c = cosine(&ua, &ub).unwrap();
            let d = dot(&ua, &ub).unwrap().clamp(-1.0, 1.0);
            prop_assert!((c - d).abs() < 1e-12);
        }
    }
}
