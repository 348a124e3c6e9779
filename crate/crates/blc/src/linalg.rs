//! Dense factorization backend (f64).
//!
//! Thin bridge between row-major [`Tensor`] matrices and nalgebra's SVD and
//! symmetric eigendecomposition. Everything here applies the same sign
//! convention: within each extracted column, the entry of largest magnitude
//! (lowest index on ties) is made nonnegative.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    assert_eq!(t.order(), 2, "expected a matrix");
    DMatrix::from_row_slice(t.nrows(), t.ncols(), t.data())
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Tensor {
    Tensor::from_fn(&[m.nrows(), m.ncols()], |idx| m[(idx[0], idx[1])])
}

/// Thin SVD `A = U · diag(s) · Vᵀ` with singular values descending and the
/// deterministic column-sign convention applied to `U` (rows of `Vt` are
/// flipped in tandem so the product is unchanged).
pub struct Svd {
    pub u: Tensor,
    pub singular_values: Vec<f64>,
    pub vt: Tensor,
}

pub fn svd(a: &Tensor) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Argument("svd input contains non-finite values".into()));
    }
    let m = to_dmatrix(a);
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested vt");
    let k = svd.singular_values.len();

    // nalgebra returns singular values sorted descending; keep a stable
    // re-sort anyway so the ordering contract never depends on the backend.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap()
            .then(i.cmp(&j))
    });

    let mut u_out = Tensor::zeros(&[a.nrows(), k]);
    let mut vt_out = Tensor::zeros(&[k, a.ncols()]);
    let mut sv = Vec::with_capacity(k);
    for (col, &src) in order.iter().enumerate() {
        sv.push(svd.singular_values[src]);
        let flip = column_sign(&(0..a.nrows()).map(|r| u[(r, src)]).collect::<Vec<_>>());
        for r in 0..a.nrows() {
            u_out.set(&[r, col], flip * u[(r, src)]);
        }
        for c in 0..a.ncols() {
            vt_out.set(&[col, c], flip * vt[(src, c)]);
        }
    }
    Ok(Svd {
        u: u_out,
        singular_values: sv,
        vt: vt_out,
    })
}

/// Sign factor that makes the largest-magnitude entry nonnegative.
pub fn column_sign(col: &[f64]) -> f64 {
    let mut best = 0usize;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
pub fn symmetric_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    if !a.is_finite() {
        return Err(Error::Argument("eigen input contains non-finite values".into()));
    }
    let m = to_dmatrix(a);
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut vals = Vec::with_capacity(n);
    let mut vecs = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        vals.push(eig.eigenvalues[src]);
        let raw: Vec<f64> = (0..n).map(|r| eig.eigenvectors[(r, src)]).collect();
        let flip = column_sign(&raw);
        for r in 0..n {
            vecs.set(&[r, col], flip * raw[r]);
        }
    }
    Ok((vals, vecs))
}

/// Least-squares solve of `U · X = B` via the SVD pseudoinverse.
///
/// Returns the min-norm solution and whether `U` was rank-deficient at the
/// relative threshold `max(m, n) · eps · σ_max`.
pub fn lstsq(u: &Tensor, b: &Tensor) -> Result<(Tensor, bool)> {
    if u.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "lstsq: {} rows vs {} rows",
            u.nrows(),
            b.nrows()
        )));
    }
    let f = svd(u)?;
    let smax = f.singular_values.first().copied().unwrap_or(0.0);
    let tol = (u.nrows().max(u.ncols()) as f64) * f64::EPSILON * smax;
    let k = f.singular_values.len();
    let mut rank_deficient = false;

    // X = V · diag(1/s) · Uᵀ · B, zeroing tiny singular values.
    let utb = f.u.transposed().matmul(b)?;
    let mut scaled = utb.clone();
    for r in 0..k {
        let s = f.singular_values[r];
        let inv = if s > tol {
            1.0 / s
        } else {
            rank_deficient = true;
            0.0
        };
        for c in 0..scaled.ncols() {
            let v = scaled.get(&[r, c]) * inv;
            scaled.set(&[r, c], v);
        }
    }
    let x = f.vt.transposed().matmul(&scaled)?;
    Ok((x, rank_deficient))
}

/// Inverse square root of a symmetric positive-definite matrix.
pub fn inv_sqrt_spd(a: &Tensor) -> Result<Tensor> {
    let (vals, vecs) = symmetric_eigen(a)?;
    let n = vals.len();
    let mut mid = Tensor::zeros(&[n, n]);
    for i in 0..n {
        if vals[i] <= 0.0 {
            return Err(Error::Argument(format!(
                "matrix is not positive definite (eigenvalue {:.3e})",
                vals[i]
            )));
        }
        mid.set(&[i, i], 1.0 / vals[i].sqrt());
    }
    vecs.matmul(&mid)?.matmul(&vecs.transposed())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn svd_reconstructs_and_orders() {
        let mut rng = crate::rng::stream(3, 7);
        for _ in 0..20 {
            let m = rng.gen_range(2..7);
            let n = rng.gen_range(2..7);
            let a = Tensor::from_fn(&[m, n], |_| rng.gen_range(-1.0..1.0));
            let f = svd(&a).unwrap();
            for w in f.singular_values.windows(2) {
                assert!(w[0] >= w[1]);
            }
            let mut sig = Tensor::zeros(&[f.singular_values.len(), f.singular_values.len()]);
            for (i, &s) in f.singular_values.iter().enumerate() {
                sig.set(&[i, i], s);
            }
            let recon = f.u.matmul(&sig).unwrap().matmul(&f.vt).unwrap();
            assert!(recon.max_abs_diff(&a).unwrap() <= 1e-12);
            // Orthonormal columns.
            let gram = f.u.transposed().matmul(&f.u).unwrap();
            let eye = Tensor::eye(gram.nrows());
            assert!(gram.max_abs_diff(&eye).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn lstsq_exact_for_square_full_rank() {
        let mut rng = crate::rng::stream(5, 7);
        let u = Tensor::from_fn(&[4, 4], |_| rng.gen_range(-1.0..1.0));
        let x_true = Tensor::from_fn(&[4, 3], |_| rng.gen_range(-1.0..1.0));
        let b = u.matmul(&x_true).unwrap();
        let (x, deficient) = lstsq(&u, &b).unwrap();
        assert!(!deficient);
        assert!(x.max_abs_diff(&x_true).unwrap() <= 1e-10);
    }

    #[test]
    fn lstsq_flags_duplicated_column() {
        let u = Tensor::from_vec(&[3, 2], vec![1.0, 1.0, 2.0, 2.0, -1.0, -1.0]).unwrap();
        let b = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, -1.0]).unwrap();
        let (_, deficient) = lstsq(&u, &b).unwrap();
        assert!(deficient);
    }

    #[test]
    fn inv_sqrt_squares_back() {
        let mut rng = crate::rng::stream(9, 7);
        let a = Tensor::from_fn(&[4, 4], |_| rng.gen_range(-1.0..1.0));
        let spd = a.matmul(&a.transposed()).unwrap().add(&Tensor::eye(4)).unwrap();
        let inv_sqrt = inv_sqrt_spd(&spd).unwrap();
        let should_be_inv = inv_sqrt.matmul(&inv_sqrt).unwrap();
        let prod = should_be_inv.matmul(&spd).unwrap();
        assert!(prod.max_abs_diff(&Tensor::eye(4)).unwrap() <= 1e-10);
    }
}
