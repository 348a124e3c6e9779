//! Dense tensors up to order 4 and the generalized tensor inner product.
//!
//! Axes are zero-based everywhere in this API. The common notation `·_jk`
//! (contract axis j of the left tensor with axis k of the right tensor) uses
//! 1-based subscripts, so its `·₁₂` is `(0, 1)` here.
//!
//! Contraction sums run over the contracted index in ascending order, which
//! makes results bit-reproducible across implementations at a fixed dtype.

use std::fmt;

use crate::error::{Error, Result};

/// Element dtype of a tensor. 64-bit is the default throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DType {
    F32,
    F64,
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F32 => write!(f, "f32"),
            DType::F64 => write!(f, "f64"),
        }
    }
}

/// Scalar types a [`Tensor`] can carry.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const DTYPE: DType;
    const BYTES: usize;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, buf: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    const BYTES: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    const BYTES: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Dense row-major tensor of order 0–4.
///
/// Order 0 (a scalar) only ever appears as a contraction result; constructors
/// for stored tensors accept orders 1–4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Element = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    /// A zero tensor. Extents must be positive and the order at most 4.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::check_shape(shape).expect("invalid tensor shape");
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    /// Build from a row-major flat vector.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::check_shape(shape)?;
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::Length(format!(
                "data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Build by evaluating `f` at every multi-index, row-major.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for flat in 0..t.data.len() {
            t.decode(flat, &mut idx);
            t.data[flat] = f(&idx);
        }
        t
    }

    /// Identity matrix as an order-2 tensor.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    fn check_shape(shape: &[usize]) -> Result<()> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::Argument(format!(
                "tensor order must be 1-4, got {}",
                shape.len()
            )));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Argument(format!("zero extent in shape {:?}", shape)));
        }
        Ok(())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    fn decode(&self, mut flat: usize, idx: &mut [usize]) {
        for i in (0..self.shape.len()).rev() {
            idx[i] = flat % self.shape[i];
            flat /= self.shape[i];
        }
    }

    fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut f = 0usize;
        for (i, &x) in idx.iter().enumerate() {
            debug_assert!(x < self.shape[i]);
            f = f * self.shape[i] + x;
        }
        f
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.flat(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let f = self.flat(idx);
        self.data[f] = v;
    }

    /// Extract the single value of an order-0 contraction result.
    pub fn scalar(&self) -> Option<T> {
        if self.shape.is_empty() {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    pub fn frobenius_norm(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shape {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        Ok(self.sub(other)?.max_abs())
    }

    /// Reorder axes: `perm[d]` names the source axis that becomes axis `d`.
    pub fn permute_axes(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.shape.len() {
            return Err(Error::Argument(format!(
                "permutation {:?} does not match order {}",
                perm,
                self.order()
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::Argument(format!("invalid permutation {:?}", perm)));
            }
            seen[p] = true;
        }
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides = self.strides();
        let mut out = Tensor::zeros(&new_shape);
        let mut idx = vec![0usize; new_shape.len()];
        for flat in 0..out.data.len() {
            out.decode(flat, &mut idx);
            let mut src = 0usize;
            for (d, &p) in perm.iter().enumerate() {
                src += idx[d] * src_strides[p];
            }
            out.data[flat] = self.data[src];
        }
        out
            .into_result()
    }

    fn into_result(self) -> Result<Self> {
        Ok(self)
    }

    /// Convert the element type (exact when widening f32 → f64).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

/// Generalized tensor inner product: contract axis `j` of `u` with axis `k`
/// of `v`.
///
/// The result's axes are u's surviving axes in their original order followed
/// by v's surviving axes in their original order; its order is
/// `order(u) + order(v) - 2`. Contracting two vectors yields an order-0
/// tensor (read it with [`Tensor::scalar`]).
pub fn tensor_inner<T: Element>(
    u: &Tensor<T>,
    v: &Tensor<T>,
    j: usize,
    k: usize,
) -> Result<Tensor<T>> {
    if j >= u.order() {
        return Err(Error::Argument(format!(
            "axis {} out of range for order-{} left tensor",
            j,
            u.order()
        )));
    }
    if k >= v.order() {
        return Err(Error::Argument(format!(
            "axis {} out of range for order-{} right tensor",
            k,
            v.order()
        )));
    }
    let n = u.shape[j];
    if n != v.shape[k] {
        return Err(Error::Dimension(format!(
            "contracted extents differ: left axis {} has {}, right axis {} has {}",
            j, u.shape[j], k, v.shape[k]
        )));
    }

    let u_strides = u.strides();
    let v_strides = v.strides();
    let u_surv: Vec<usize> = (0..u.order()).filter(|&a| a != j).collect();
    let v_surv: Vec<usize> = (0..v.order()).filter(|&a| a != k).collect();

    let mut out_shape: Vec<usize> = u_surv.iter().map(|&a| u.shape[a]).collect();
    out_shape.extend(v_surv.iter().map(|&a| v.shape[a]));

    let out_len: usize = out_shape.iter().product::<usize>().max(1);
    let mut out_data = vec![T::zero(); out_len];

    let su = u_strides[j];
    let sv = v_strides[k];

    // Enumerate output multi-indices without allocating per element.
    let mut idx = vec![0usize; out_shape.len()];
    for (flat, slot) in out_data.iter_mut().enumerate() {
        let mut rem = flat;
        for i in (0..out_shape.len()).rev() {
            idx[i] = rem % out_shape[i];
            rem /= out_shape[i];
        }
        let mut u_base = 0usize;
        for (d, &a) in u_surv.iter().enumerate() {
            u_base += idx[d] * u_strides[a];
        }
        let mut v_base = 0usize;
        for (d, &a) in v_surv.iter().enumerate() {
            v_base += idx[u_surv.len() + d] * v_strides[a];
        }
        // Ascending contracted index; fixed so results are reproducible.
        let mut acc = T::zero();
        for beta in 0..n {
            acc = acc + u.data[u_base + beta * su] * v.data[v_base + beta * sv];
        }
        *slot = acc;
    }

    Ok(Tensor {
        shape: out_shape,
        data: out_data,
    })
}

/// Mode-`n` unfolding: rows indexed by axis `n`, columns enumerating the
/// remaining axes in ascending axis order, row-major.
pub fn mode_unfold<T: Element>(t: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    if t.order() < 2 {
        return Err(Error::Argument(format!(
            "mode_unfold needs order >= 2, got {}",
            t.order()
        )));
    }
    if n >= t.order() {
        return Err(Error::Argument(format!(
            "axis {} out of range for order-{} tensor",
            n,
            t.order()
        )));
    }
    let rows = t.shape[n];
    let rest: Vec<usize> = (0..t.order()).filter(|&a| a != n).collect();
    let cols: usize = rest.iter().map(|&a| t.shape[a]).product();
    let strides = t.strides();

    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let base = r * strides[n];
        for c in 0..cols {
            // Decode the column into the remaining axes, ascending, row-major.
            let mut rem = c;
            let mut off = base;
            for &a in rest.iter().rev() {
                off += (rem % t.shape[a]) * strides[a];
                rem /= t.shape[a];
            }
            out.data[r * cols + c] = t.data[off];
        }
    }
    Ok(out)
}

// ── Dense matrix/vector helpers over order-1/2 tensors ─────────────────────

impl<T: Element> Tensor<T> {
    pub fn nrows(&self) -> usize {
        assert_eq!(self.order(), 2, "nrows on non-matrix");
        self.shape[0]
    }

    pub fn ncols(&self) -> usize {
        assert_eq!(self.order(), 2, "ncols on non-matrix");
        self.shape[1]
    }

    /// Matrix transpose (order 2 only).
    pub fn transposed(&self) -> Self {
        assert_eq!(self.order(), 2, "transpose on non-matrix");
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        out
    }

    /// Matrix product `self · rhs` with a fixed ascending inner loop.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.order() != 2 || rhs.order() != 2 {
            return Err(Error::Dimension("matmul expects two matrices".into()));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                m, k, k2, n
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for jj in 0..n {
                let mut acc = T::zero();
                for kk in 0..k {
                    acc = acc + self.data[i * k + kk] * rhs.data[kk * n + jj];
                }
                out.data[i * n + jj] = acc;
            }
        }
        Ok(out)
    }

    /// Matrix–vector product.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if self.order() != 2 {
            return Err(Error::Dimension("matvec expects a matrix".into()));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        if x.len() != n {
            return Err(Error::Dimension(format!(
                "matvec {}x{} by vector of length {}",
                m,
                n,
                x.len()
            )));
        }
        let mut out = vec![T::zero(); m];
        for i in 0..m {
            let mut acc = T::zero();
            for jj in 0..n {
                acc = acc + self.data[i * n + jj] * x[jj];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    pub fn row(&self, i: usize) -> &[T] {
        assert_eq!(self.order(), 2);
        let n = self.shape[1];
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        assert_eq!(self.order(), 2);
        let n = self.shape[1];
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        assert_eq!(self.order(), 2);
        (0..self.shape[0]).map(|i| self.data[i * self.shape[1] + j]).collect()
    }
}
