//! Eigenvalues of a real square matrix (Householder Hessenberg reduction
//! followed by Francis double-shift QR) and an LU determinant used to
//! cross-check them.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

fn square_dim(a: &Tensor, op: &'static str) -> Result<usize> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::Dimension {
            op,
            left: a.shape().to_vec(),
            right: vec![],
        });
    }
    Ok(a.shape()[0])
}

/// Row-major dense matrix scratch space.
struct Mat {
    n: usize,
    a: Vec<f64>,
}

impl Mat {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }
    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.a[i * self.n + j]
    }
}

/// Reduce `h` in place to upper Hessenberg form by orthogonal similarity.
fn hessenberg(h: &mut Mat) {
    let n = h.n;
    if n < 3 {
        return;
    }
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h.at(i, m - 1).abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut norm_sq = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h.at(i, m - 1) / scale;
            norm_sq += ort[i] * ort[i];
        }
        let mut g = norm_sq.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        let hh = norm_sq - ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h.at(i, j);
            }
            f /= hh;
            for i in m..=high {
                *h.at_mut(i, j) -= f * ort[i];
            }
        }
        for i in 0..=high {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * h.at(i, j);
            }
            f /= hh;
            for j in m..=high {
                *h.at_mut(i, j) -= f * ort[j];
            }
        }
        ort[m] *= scale;
        *h.at_mut(m, m - 1) = scale * g;
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix, eigenvalues only.
fn hessenberg_qr(h: &mut Mat) -> Result<Vec<Eigenvalue>> {
    let nn = h.n;
    let mut d = vec![0.0; nn];
    let mut e = vec![0.0; nn];
    let eps = f64::EPSILON;
    let max_iter = 30 * nn;

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h.at(i, j).abs();
        }
    }

    let mut n = nn as isize - 1;
    let mut exshift = 0.0;
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut x, mut y, mut w);
    let mut iter = 0usize;
    let mut total_iter = 0usize;

    while n >= 0 {
        let nu = n as usize;
        // find a negligible subdiagonal element
        let mut l = nu;
        while l > 0 {
            s = h.at(l - 1, l - 1).abs() + h.at(l, l).abs();
            if s == 0.0 {
                s = norm;
            }
            if h.at(l, l - 1).abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            d[nu] = h.at(nu, nu) + exshift;
            e[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            w = h.at(nu, nu - 1) * h.at(nu - 1, nu);
            p = (h.at(nu - 1, nu - 1) - h.at(nu, nu)) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            x = h.at(nu, nu) + exshift;
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                d[nu - 1] = x + z;
                d[nu] = d[nu - 1];
                if z != 0.0 {
                    d[nu] = x - w / z;
                }
                e[nu - 1] = 0.0;
                e[nu] = 0.0;
            } else {
                d[nu - 1] = x + p;
                d[nu] = x + p;
                e[nu - 1] = z;
                e[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            if total_iter >= max_iter {
                return Err(Error::Numerical(format!(
                    "QR iteration did not converge: {total_iter} iterations (cap {max_iter}), \
                     {} of {nn} eigenvalues unresolved, active window rows {l}..={nu}",
                    nu + 1
                )));
            }
            x = h.at(nu, nu);
            y = h.at(nu - 1, nu - 1);
            w = h.at(nu, nu - 1) * h.at(nu - 1, nu);

            // exceptional shifts
            if iter == 10 {
                exshift += x;
                for i in 0..=nu {
                    *h.at_mut(i, i) -= x;
                }
                s = h.at(nu, nu - 1).abs() + h.at(nu - 1, nu - 2).abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        *h.at_mut(i, i) -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            total_iter += 1;

            // look for two consecutive small subdiagonal elements
            let mut m = nu - 2;
            loop {
                z = h.at(m, m);
                r = x - z;
                s = y - z;
                p = (r * s - w) / h.at(m + 1, m) + h.at(m, m + 1);
                q = h.at(m + 1, m + 1) - z - r - s;
                r = h.at(m + 2, m + 1);
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let lhs = h.at(m, m - 1).abs() * (q.abs() + r.abs());
                let rhs = eps
                    * (p.abs()
                        * (h.at(m - 1, m - 1).abs() + z.abs() + h.at(m + 1, m + 1).abs()));
                if lhs < rhs {
                    break;
                }
                m -= 1;
            }

            for i in m + 2..=nu {
                *h.at_mut(i, i - 2) = 0.0;
                if i > m + 2 {
                    *h.at_mut(i, i - 3) = 0.0;
                }
            }

            // double QR step on rows l..=n, columns m..=n
            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h.at(k, k - 1);
                    q = h.at(k + 1, k - 1);
                    r = if notlast { h.at(k + 2, k - 1) } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        *h.at_mut(k, k - 1) = -s * x;
                    } else if l != m {
                        *h.at_mut(k, k - 1) = -h.at(k, k - 1);
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = h.at(k, j) + q * h.at(k + 1, j);
                        if notlast {
                            p += r * h.at(k + 2, j);
                            *h.at_mut(k + 2, j) -= p * z;
                        }
                        *h.at_mut(k, j) -= p * x;
                        *h.at_mut(k + 1, j) -= p * y;
                    }
                    for i in 0..=nu.min(k + 3) {
                        p = x * h.at(i, k) + y * h.at(i, k + 1);
                        if notlast {
                            p += z * h.at(i, k + 2);
                            *h.at_mut(i, k + 2) -= p * r;
                        }
                        *h.at_mut(i, k) -= p;
                        *h.at_mut(i, k + 1) -= p * q;
                    }
                }
            }
        }
    }

    Ok(d.into_iter()
        .zip(e)
        .map(|(re, im)| Eigenvalue { re, im })
        .collect())
}

/// All eigenvalues of a real square matrix, complex pairs included, in the
/// order the QR deflation produced them.
pub fn eigenvalues(a: &Tensor) -> Result<Vec<Eigenvalue>> {
    let n = square_dim(a, "eigenvalues")?;
    if !a.is_finite() {
        return Err(Error::param("eigenvalues: matrix has non-finite entries"));
    }
    let mut h = Mat {
        n,
        a: a.data().to_vec(),
    };
    hessenberg(&mut h);
    hessenberg_qr(&mut h)
}

/// Determinant by LU factorisation with partial pivoting.
pub fn determinant(a: &Tensor) -> Result<f64> {
    let n = square_dim(a, "determinant")?;
    let mut m = Mat {
        n,
        a: a.data().to_vec(),
    };
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m.at(i, col).abs().total_cmp(&m.at(j, col).abs()))
            .unwrap();
        if m.at(pivot, col) == 0.0 {
            return Ok(0.0);
        }
        if pivot != col {
            for j in 0..n {
                m.a.swap(pivot * n + j, col * n + j);
            }
            det = -det;
        }
        let diag = m.at(col, col);
        det *= diag;
        for i in col + 1..n {
            let factor = m.at(i, col) / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col + 1..n {
                let v = m.at(col, j);
                *m.at_mut(i, j) -= factor * v;
            }
        }
    }
    Ok(det)
}

pub fn trace(a: &Tensor) -> Result<f64> {
    let n = square_dim(a, "trace")?;
    Ok((0..n).map(|i| a.data()[i * n + i]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{identity_init, uniform_init};

    fn sorted_moduli(a: &Tensor) -> Vec<f64> {
        let mut m: Vec<f64> = eigenvalues(a).unwrap().iter().map(|e| e.modulus()).collect();
        m.sort_by(|a, b| b.total_cmp(a));
        m
    }

    #[test]
    fn identity_moduli_are_one() {
        for n in [1, 2, 3, 10] {
            for m in sorted_moduli(&identity_init(n)) {
                assert!((m - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_matrix() {
        let a = Tensor::from_rows(&[&[3.0, 0.0, 0.0], &[0.0, -2.0, 0.0], &[0.0, 0.0, 0.5]])
            .unwrap();
        let m = sorted_moduli(&a);
        for (got, want) in m.iter().zip([3.0, 2.0, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_is_a_unit_complex_pair() {
        let th: f64 = 0.7;
        let a = Tensor::from_rows(&[&[th.cos(), -th.sin()], &[th.sin(), th.cos()]]).unwrap();
        let ev = eigenvalues(&a).unwrap();
        // characteristic polynomial λ² − 2cosθ λ + 1 ⇒ λ = cosθ ± i sinθ
        assert_eq!(ev.len(), 2);
        for e in &ev {
            assert!((e.modulus() - 1.0).abs() < 1e-12);
            assert!((e.re - th.cos()).abs() < 1e-12);
            assert!((e.im.abs() - th.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn companion_matrix_roots() {
        // x^3 - 6x^2 + 11x - 6 = (x-1)(x-2)(x-3)
        let a = Tensor::from_rows(&[&[6.0, -11.0, 6.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]])
            .unwrap();
        let m = sorted_moduli(&a);
        for (got, want) in m.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-9, "{m:?}");
        }
    }

    #[test]
    fn random_trace_and_determinant() {
        let mut rng = Rng::new(44);
        for n in [2, 5, 16, 40] {
            let a = uniform_init(&mut rng, &[n, n], -1.0, 1.0).unwrap();
            let ev = eigenvalues(&a).unwrap();
            let sum_re: f64 = ev.iter().map(|e| e.re).sum();
            let sum_im: f64 = ev.iter().map(|e| e.im).sum();
            let tr = trace(&a).unwrap();
            assert!((sum_re - tr).abs() < 1e-9 * n as f64, "n={n}");
            assert!(sum_im.abs() < 1e-9 * n as f64);
            let prod: f64 = ev.iter().map(|e| e.modulus()).product();
            let det = determinant(&a).unwrap().abs();
            assert!((prod - det).abs() <= 1e-8 * det, "n={n} {prod} {det}");
        }
    }

    #[test]
    fn determinant_by_hand() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert!((determinant(&a).unwrap() + 2.0).abs() < 1e-14);
        let singular = Tensor::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap();
        assert_eq!(determinant(&singular).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_square_and_non_finite() {
        assert!(eigenvalues(&Tensor::zeros(&[2, 3])).is_err());
        let mut a = identity_init(2);
        a.set(&[0, 1], f64::NAN).unwrap();
        assert!(eigenvalues(&a).is_err());
    }
}
