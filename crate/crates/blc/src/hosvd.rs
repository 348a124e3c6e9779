//! Higher-order SVD over dense tensors of order 2–4.
//!
//! Each mode factor holds the left singular vectors of that mode's unfolding
//! (descending singular values, thin). Multiplying the core back along every
//! mode reproduces the input to float precision; truncating retained ranks
//! gives the usual non-increasing reconstruction-error sweep.

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{mode_unfold, Tensor};

#[derive(Debug, Clone)]
pub struct Hosvd {
    /// Core tensor, shape `k_0 × … × k_{d-1}` with `k_n` the retained rank of
    /// mode `n` (thin: `k_n = min(extent_n, prod of the others)`).
    pub core: Tensor,
    /// Per-mode factors with orthonormal columns, shape `extent_n × k_n`.
    pub factors: Vec<Tensor>,
    /// Singular values of each mode unfolding, descending.
    pub mode_singular_values: Vec<Vec<f64>>,
}

/// Multiply tensor `t` along `mode` by the matrix `m` (shape `r × s` where
/// `s` is the extent of that mode). The result keeps the mode in place with
/// extent `r`.
pub fn mode_multiply(t: &Tensor, m: &Tensor, mode: usize) -> Result<Tensor> {
    if mode >= t.order() {
        return Err(Error::Argument(format!(
            "mode {} out of range for order-{} tensor",
            mode,
            t.order()
        )));
    }
    let s = t.shape()[mode];
    if m.order() != 2 || m.ncols() != s {
        return Err(Error::Dimension(format!(
            "mode_multiply: matrix {:?} against extent {}",
            m.shape(),
            s
        )));
    }
    let r = m.nrows();
    let mut shape = t.shape().to_vec();
    shape[mode] = r;
    let in_strides = t.strides();

    let mut out = Tensor::zeros(&shape);
    let out_strides = out.strides();
    let total = out.len();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..total {
        let mut rem = flat;
        for i in (0..shape.len()).rev() {
            idx[i] = rem % shape[i];
            rem /= shape[i];
        }
        let mut base = 0usize;
        for (d, &x) in idx.iter().enumerate() {
            if d != mode {
                base += x * in_strides[d];
            }
        }
        let rr = idx[mode];
        let mut acc = 0.0;
        for ss in 0..s {
            acc += m.get(&[rr, ss]) * t.data()[base + ss * in_strides[mode]];
        }
        let mut off = 0usize;
        for (d, &x) in idx.iter().enumerate() {
            off += x * out_strides[d];
        }
        out.data_mut()[off] = acc;
    }
    Ok(out)
}

/// Keep the first `len` slices along `axis`.
fn slice_axis(t: &Tensor, axis: usize, len: usize) -> Tensor {
    let mut shape = t.shape().to_vec();
    assert!(len >= 1 && len <= shape[axis]);
    shape[axis] = len;
    Tensor::from_fn(&shape, |idx| t.get(idx))
}

pub fn hosvd(t: &Tensor) -> Result<Hosvd> {
    if t.order() < 2 || t.order() > 4 {
        return Err(Error::Argument(format!(
            "hosvd expects order 2-4, got {}",
            t.order()
        )));
    }
    if !t.is_finite() {
        return Err(Error::Argument("hosvd input contains non-finite values".into()));
    }
    let mut factors = Vec::with_capacity(t.order());
    let mut mode_singular_values = Vec::with_capacity(t.order());
    for n in 0..t.order() {
        let unfolding = mode_unfold(t, n)?;
        let f = linalg::svd(&unfolding)?;
        factors.push(f.u);
        mode_singular_values.push(f.singular_values);
    }
    let mut core = t.clone();
    for (n, factor) in factors.iter().enumerate() {
        core = mode_multiply(&core, &factor.transposed(), n)?;
    }
    Ok(Hosvd {
        core,
        factors,
        mode_singular_values,
    })
}

impl Hosvd {
    /// Full reconstruction: core multiplied along every mode by its factor.
    pub fn reconstruct(&self) -> Result<Tensor> {
        let mut t = self.core.clone();
        for (n, factor) in self.factors.iter().enumerate() {
            t = mode_multiply(&t, factor, n)?;
        }
        Ok(t)
    }

    /// Best-effort truncated reconstruction keeping `ranks[n]` components of
    /// mode `n` (clamped to the available rank).
    pub fn reconstruct_truncated(&self, ranks: &[usize]) -> Result<Tensor> {
        if ranks.len() != self.core.order() {
            return Err(Error::Argument(format!(
                "expected {} ranks, got {}",
                self.core.order(),
                ranks.len()
            )));
        }
        let mut t = self.core.clone();
        let mut trunc_factors = Vec::with_capacity(self.factors.len());
        for (n, factor) in self.factors.iter().enumerate() {
            let k = ranks[n].clamp(1, factor.ncols());
            t = slice_axis(&t, n, k);
            trunc_factors.push(slice_axis(factor, 1, k));
        }
        for (n, factor) in trunc_factors.iter().enumerate() {
            t = mode_multiply(&t, factor, n)?;
        }
        Ok(t)
    }
}
