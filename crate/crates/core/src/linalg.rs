//! Small dense linear algebra: LU with partial pivoting, Cholesky, and a
//! Jacobi eigensolver for symmetric matrices.
//!
//! Matrices are row-major `Vec<T>` slabs. Everything here is sized for
//! desk-scale grids (a few hundred rows), where dense factorizations are
//! simpler and plenty fast.

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("matrix is singular to working precision (pivot {pivot_row})")]
pub struct Singular {
    pub pivot_row: usize,
}

/// LU factorization with partial pivoting, stored in-place.
pub struct LuFactors<T> {
    lu: Vec<T>,
    perm: Vec<usize>,
    n: usize,
}

impl<T: Real> LuFactors<T> {
    pub fn factor(mut a: Vec<T>, n: usize) -> Result<Self, Singular> {
        assert_eq!(a.len(), n * n, "matrix shape");
        let mut perm: Vec<usize> = (0..n).collect();
        // Scale-aware zero-pivot threshold.
        let scale = a.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        let tiny = scale * T::epsilon() * T::cast_usize(n.max(1));
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for r in (k + 1)..n {
                let v = a[r * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= tiny {
                return Err(Singular { pivot_row: k });
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            for r in (k + 1)..n {
                let f = a[r * n + k] / pivot;
                a[r * n + k] = f;
                for c in (k + 1)..n {
                    let akc = a[k * n + c];
                    a[r * n + c] = a[r * n + c] - f * akc;
                }
            }
        }
        Ok(Self { lu: a, perm, n })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(b.len(), n, "rhs length");
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 1..n {
            let mut acc = x[r];
            for c in 0..r {
                acc = acc - self.lu[r * n + c] * x[c];
            }
            x[r] = acc;
        }
        for r in (0..n).rev() {
            let mut acc = x[r];
            for c in (r + 1)..n {
                acc = acc - self.lu[r * n + c] * x[c];
            }
            x[r] = acc / self.lu[r * n + r];
        }
        x
    }
}

/// One-shot dense solve of `a x = b`.
pub fn lu_solve<T: Real>(a: Vec<T>, n: usize, b: &[T]) -> Result<Vec<T>, Singular> {
    Ok(LuFactors::factor(a, n)?.solve(b))
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    assert_eq!(a.len(), n * n, "matrix shape");
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum = sum - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= T::zero() {
                    return None;
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors (column `k` of `vecs` pairs with
/// `vals[k]`). Deterministic sweep order.
pub fn sym_eig<T: Real>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n, "matrix shape");
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let half = T::cast_from(0.5);
    for _sweep in 0..64 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= T::epsilon() * T::cast_usize(n * n.max(1)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) * half / apq;
                let t = if tau >= T::zero() {
                    T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| m[i * n + i]).collect();
    (vals, v)
}
