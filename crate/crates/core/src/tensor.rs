//! Dense row-major `f64` arrays of rank 1 to 3 plus the handful of kernels
//! the recurrent cells need.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_rank(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::param(format!(
            "tensor rank must be 1..=3, got shape {shape:?}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_rank(shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "Tensor::new",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid rank; shapes here are always program constants.
    pub fn zeros(shape: &[usize]) -> Self {
        check_rank(shape).expect("invalid tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    op: "Tensor::from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(&[rows.len(), cols], data)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a matrix; 1 for a vector.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Dimension {
                op: "index",
                left: self.shape.clone(),
                right: index.to_vec(),
            });
        }
        let mut off = 0;
        for (&i, &dim) in index.iter().zip(&self.shape) {
            if i >= dim {
                return Err(Error::Dimension {
                    op: "index",
                    left: self.shape.clone(),
                    right: index.to_vec(),
                });
            }
            off = off * dim + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    /// Row `i` of a matrix (or the `i`-th leading slice of a rank-3 tensor).
    pub fn row(&self, i: usize) -> &[f64] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let dst = &mut out.data[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[p * n..(p + 1) * n];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Dimension {
                op: "transpose",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(out)
    }

    /// Euclidean norm of the flattened data.
    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op: "add_assign",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Euclidean norm, rescaled by the largest magnitude so that exploding
/// activations do not overflow to infinity before the square root.
pub fn l2_norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    if !scale.is_finite() {
        return if v.iter().any(|x| x.is_nan()) {
            f64::NAN
        } else {
            f64::INFINITY
        };
    }
    let sum: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * sum.sqrt()
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// I.i.d. uniform entries in `[lo, hi)`.
pub fn uniform_init(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
    if !(lo < hi) {
        return Err(Error::param(format!(
            "uniform_init requires lo < hi, got [{lo}, {hi})"
        )));
    }
    let mut t = Tensor::new(shape, vec![0.0; shape.iter().product()])?;
    for v in t.data_mut() {
        *v = rng.uniform_range(lo, hi);
    }
    Ok(t)
}

pub fn identity_init(n: usize) -> Tensor {
    assert!(n >= 1, "identity_init needs n >= 1");
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        t.data[i * n + i] = 1.0;
    }
    t
}

/// `out += x · W` for a row vector `x` and a row-major matrix `W`.
/// Zero entries of `x` are skipped, which makes one-hot inputs cheap.
pub(crate) fn vecmat_acc(x: &[f64], w: &Tensor, out: &mut [f64]) {
    let cols = w.cols();
    debug_assert_eq!(x.len(), w.rows());
    debug_assert_eq!(out.len(), cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w.data[i * cols..(i + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
}

/// `out += W · y` (column-vector product).
pub(crate) fn matvec_acc(w: &Tensor, y: &[f64], out: &mut [f64]) {
    let cols = w.cols();
    debug_assert_eq!(y.len(), cols);
    debug_assert_eq!(out.len(), w.rows());
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w.data[i * cols..(i + 1) * cols];
        *o += row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `W += x yᵀ`, skipping zero entries of `x`.
pub(crate) fn outer_acc(w: &mut Tensor, x: &[f64], y: &[f64]) {
    let cols = w.cols();
    debug_assert_eq!(x.len(), w.rows());
    debug_assert_eq!(y.len(), cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &mut w.data[i * cols..(i + 1) * cols];
        for (r, &yv) in row.iter_mut().zip(y) {
            *r += xi * yv;
        }
    }
}
