//! Bilinear MLP layers and their third-order tensor form.
//!
//! A bilinear layer computes `(W1 x) ⊙ (W2 x)`. The same map is the quadratic
//! form `x ·₍₀,₁₎ B ·₍₁,₀₎ x` of the order-3 tensor `B[i][j][k] =
//! W1[i][j] · W2[i][k]`, equivalently `B = W1 ·₍₀,₁₎ Z ·₍₁,₀₎ W2` with `Z`
//! the superdiagonal tensor. The elementwise formula is the definition here;
//! the contraction route is kept as an independent cross-check.
//!
//! Canonical `B` axis order is `(output i, left-input j, right-input k)`.
//! The raw contraction route produces axes `(j, i, k)` because the inner
//! product orders the left tensor's surviving axes first, so it needs a
//! `(1, 0, 2)` permutation to reach canonical order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{tensor_inner, Element, Tensor};

/// Element count above which dense `B` construction is refused.
pub const DEFAULT_MATERIALIZATION_LIMIT: usize = 1 << 26;

/// Paired weight matrices of a bilinear layer, both `m × n`.
#[derive(Debug, Clone)]
pub struct BilinearLayer<T: Element = f64> {
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
    /// Footnote variant: the modifier is `W1 x + 1` instead of `W1 x`.
    pub one_plus_modifier: bool,
    pub b1: Option<Vec<T>>,
    pub b2: Option<Vec<T>>,
}

impl<T: Element> BilinearLayer<T> {
    pub fn new(w1: Tensor<T>, w2: Tensor<T>) -> Result<Self> {
        if w1.order() != 2 || w2.order() != 2 || w1.shape() != w2.shape() {
            return Err(Error::Dimension(format!(
                "bilinear weights must be matrices of equal shape, got {:?} and {:?}",
                w1.shape(),
                w2.shape()
            )));
        }
        Ok(BilinearLayer {
            w1,
            w2,
            one_plus_modifier: false,
            b1: None,
            b2: None,
        })
    }

    pub fn with_one_plus(mut self, on: bool) -> Self {
        self.one_plus_modifier = on;
        self
    }

    pub fn with_biases(mut self, b1: Vec<T>, b2: Vec<T>) -> Result<Self> {
        if b1.len() != self.hidden_dim() || b2.len() != self.hidden_dim() {
            return Err(Error::Dimension(format!(
                "bias length {} / {} does not match hidden dim {}",
                b1.len(),
                b2.len(),
                self.hidden_dim()
            )));
        }
        self.b1 = Some(b1);
        self.b2 = Some(b2);
        Ok(self)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    /// True when the layer is exactly `(W1 x) ⊙ (W2 x)`: no biases, default
    /// modifier. Tensor-form analyses require at least the bias-free part.
    pub fn is_plain(&self) -> bool {
        !self.one_plus_modifier && self.b1.is_none() && self.b2.is_none()
    }

    pub fn is_bias_free(&self) -> bool {
        self.b1.is_none() && self.b2.is_none()
    }

    /// `(W1 x [+1] [+b1]) ⊙ (W2 x [+b2])`.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input length {} does not match layer input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut g = self.w1.matvec(x)?;
        let h = self.w2.matvec(x)?;
        if self.one_plus_modifier {
            for v in &mut g {
                *v = *v + T::one();
            }
        }
        if let Some(b1) = &self.b1 {
            for (v, &b) in g.iter_mut().zip(b1) {
                *v = *v + b;
            }
        }
        let mut out: Vec<T> = g.iter().zip(&h).map(|(&a, &b)| a * b).collect();
        if let Some(b2) = &self.b2 {
            for (i, v) in out.iter_mut().enumerate() {
                *v = g[i] * (h[i] + b2[i]);
            }
        }
        Ok(out)
    }
}

/// The superdiagonal order-3 tensor: 1 where `i = j = k`, 0 otherwise.
pub fn build_z<T: Element>(m: usize) -> Tensor<T> {
    let mut z = Tensor::zeros(&[m, m, m]);
    let stride = m * m + m + 1;
    for i in 0..m {
        z.data_mut()[i * stride] = T::one();
    }
    z
}

/// Which of the two contractions of `x · B · y` runs first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractionOrder {
    /// Contract the left input over axis j first, then the right input.
    LeftFirst,
    /// Contract the right input over axis k first, then the left input.
    RightFirst,
}

/// A bilinear layer's order-3 tensor, either materialized or kept factored
/// as its weight pair. Factored is the working representation; Dense exists
/// for coefficient-level analyses.
#[derive(Debug, Clone)]
pub struct ThirdOrderForm<T: Element = f64> {
    repr: Repr<T>,
    materialization_limit: usize,
}

#[derive(Debug, Clone)]
enum Repr<T: Element> {
    Dense(Tensor<T>),
    Factored { w1: Tensor<T>, w2: Tensor<T> },
}

impl<T: Element> ThirdOrderForm<T> {
    /// Factored form referencing the layer's weights. Requires a bias-free
    /// layer; for the one-plus variant this tensor covers the quadratic part
    /// and the linear remainder `W2 x` is the caller's to report separately.
    pub fn factored(layer: &BilinearLayer<T>) -> Result<Self> {
        if !layer.is_bias_free() {
            return Err(Error::Argument(
                "tensor-form analysis requires a bias-free layer".into(),
            ));
        }
        Ok(ThirdOrderForm {
            repr: Repr::Factored {
                w1: layer.w1.clone(),
                w2: layer.w2.clone(),
            },
            materialization_limit: DEFAULT_MATERIALIZATION_LIMIT,
        })
    }

    pub fn from_dense(b: Tensor<T>) -> Result<Self> {
        if b.order() != 3 || b.shape()[1] != b.shape()[2] {
            return Err(Error::Dimension(format!(
                "dense B must be m x n x n, got {:?}",
                b.shape()
            )));
        }
        Ok(ThirdOrderForm {
            repr: Repr::Dense(b),
            materialization_limit: DEFAULT_MATERIALIZATION_LIMIT,
        })
    }

    pub fn with_materialization_limit(mut self, limit: usize) -> Self {
        self.materialization_limit = limit;
        self
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.repr, Repr::Dense(_))
    }

    pub fn output_dim(&self) -> usize {
        match &self.repr {
            Repr::Dense(b) => b.shape()[0],
            Repr::Factored { w1, .. } => w1.nrows(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.repr {
            Repr::Dense(b) => b.shape()[1],
            Repr::Factored { w1, .. } => w1.ncols(),
        }
    }

    /// The dense tensor, materializing a factored form if within the limit.
    pub fn dense_tensor(&self) -> Result<Tensor<T>> {
        match &self.repr {
            Repr::Dense(b) => Ok(b.clone()),
            Repr::Factored { w1, w2 } => {
                let elems = w1.nrows() * w1.ncols() * w2.ncols();
                if elems > self.materialization_limit {
                    return Err(Error::Capacity(format!(
                        "dense B would hold {} elements (limit {}); keep the factored form",
                        elems, self.materialization_limit
                    )));
                }
                Ok(dense_b(w1, w2))
            }
        }
    }

    /// `x ·₍₀,₁₎ B ·₍₁,₀₎ y`, left contraction first.
    pub fn apply(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        self.apply_ordered(x, y, ContractionOrder::LeftFirst)
    }

    /// The quadratic form with an explicit contraction order.
    ///
    /// On the factored form the two orders perform the same multiplies and
    /// agree bit for bit. On the dense form they group the double sum
    /// differently, so they agree only to float reassociation error.
    pub fn apply_ordered(&self, x: &[T], y: &[T], order: ContractionOrder) -> Result<Vec<T>> {
        let n = self.input_dim();
        if x.len() != n || y.len() != n {
            return Err(Error::Dimension(format!(
                "inputs of length {} / {} against input dim {}",
                x.len(),
                y.len(),
                n
            )));
        }
        match &self.repr {
            Repr::Factored { w1, w2 } => {
                let (g, h) = match order {
                    ContractionOrder::LeftFirst => (w1.matvec(x)?, w2.matvec(y)?),
                    ContractionOrder::RightFirst => {
                        let h = w2.matvec(y)?;
                        (w1.matvec(x)?, h)
                    }
                };
                Ok(g.iter().zip(&h).map(|(&a, &b)| a * b).collect())
            }
            Repr::Dense(b) => {
                let xt = Tensor::from_vec(&[n], x.to_vec())?;
                let yt = Tensor::from_vec(&[n], y.to_vec())?;
                let out = match order {
                    ContractionOrder::LeftFirst => {
                        let r = tensor_inner(&xt, b, 0, 1)?;
                        tensor_inner(&r, &yt, 1, 0)?
                    }
                    ContractionOrder::RightFirst => {
                        let s = tensor_inner(b, &yt, 2, 0)?;
                        tensor_inner(&xt, &s, 0, 1)?
                    }
                };
                Ok(out.into_data())
            }
        }
    }
}

fn dense_b<T: Element>(w1: &Tensor<T>, w2: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (w1.nrows(), w1.ncols());
    let mut b = Tensor::zeros(&[m, n, n]);
    for i in 0..m {
        for j in 0..n {
            let left = w1.get(&[i, j]);
            for k in 0..n {
                b.data_mut()[(i * n + j) * n + k] = left * w2.get(&[i, k]);
            }
        }
    }
    b
}

/// Materialize `B[i][j][k] = W1[i][j] · W2[i][k]` for a bias-free layer.
pub fn build_b<T: Element>(layer: &BilinearLayer<T>) -> Result<ThirdOrderForm<T>> {
    build_b_with_limit(layer, DEFAULT_MATERIALIZATION_LIMIT)
}

pub fn build_b_with_limit<T: Element>(
    layer: &BilinearLayer<T>,
    limit: usize,
) -> Result<ThirdOrderForm<T>> {
    if !layer.is_bias_free() {
        return Err(Error::Argument(
            "tensor-form analysis requires a bias-free layer".into(),
        ));
    }
    let (m, n) = (layer.hidden_dim(), layer.input_dim());
    let elems = m * n * n;
    if elems > limit {
        return Err(Error::Capacity(format!(
            "dense B would hold {} elements (limit {}); keep the factored form",
            elems, limit
        )));
    }
    Ok(ThirdOrderForm {
        repr: Repr::Dense(dense_b(&layer.w1, &layer.w2)),
        materialization_limit: limit,
    })
}

/// The contraction route `W1 ·₍₀,₁₎ Z ·₍₁,₀₎ W2`, permuted back to canonical
/// `(i, j, k)` axis order. Bitwise equal to [`build_b`] because every sum in
/// the route has a single nonzero term.
pub fn build_b_via_contraction<T: Element>(layer: &BilinearLayer<T>) -> Result<Tensor<T>> {
    let z = build_z::<T>(layer.hidden_dim());
    let partial = tensor_inner(&layer.w1, &z, 0, 1)?; // axes (j, i, k)
    let raw = tensor_inner(&partial, &layer.w2, 1, 0)?; // still (j, i, k)
    raw.permute_axes(&[1, 0, 2])
}

/// `apply_quadratic` of the spec: the quadratic form of a third-order form.
pub fn apply_quadratic<T: Element>(
    bform: &ThirdOrderForm<T>,
    x: &[T],
    y: &[T],
) -> Result<Vec<T>> {
    bform.apply(x, y)
}

/// A dictionary of feature directions (rows of `directions`) with sparse
/// nonnegative coefficients.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    directions: Tensor,
    coefficients: Vec<f64>,
    normalized: bool,
}

impl FeatureSet {
    /// Rows must have unit Euclidean norm (to 1e-9) and coefficients must be
    /// nonnegative.
    pub fn new(directions: Tensor, coefficients: Vec<f64>) -> Result<Self> {
        for i in 0..directions.nrows() {
            let norm: f64 = directions.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Argument(format!(
                    "feature row {} has norm {:.6}, expected 1 (use new_unnormalized to opt out)",
                    i, norm
                )));
            }
        }
        Self::build(directions, coefficients, true)
    }

    /// Same but with the unit-norm requirement explicitly waived.
    pub fn new_unnormalized(directions: Tensor, coefficients: Vec<f64>) -> Result<Self> {
        Self::build(directions, coefficients, false)
    }

    fn build(directions: Tensor, coefficients: Vec<f64>, normalized: bool) -> Result<Self> {
        if directions.order() != 2 {
            return Err(Error::Dimension("feature directions must be a matrix".into()));
        }
        if coefficients.len() != directions.nrows() {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} features",
                coefficients.len(),
                directions.nrows()
            )));
        }
        if coefficients.iter().any(|&a| a < 0.0 || !a.is_finite()) {
            return Err(Error::Argument("coefficients must be finite and >= 0".into()));
        }
        Ok(FeatureSet {
            directions,
            coefficients,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        self.directions.row(i)
    }

    pub fn directions(&self) -> &Tensor {
        &self.directions
    }

    pub fn coefficient(&self, i: usize) -> f64 {
        self.coefficients[i]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Indices with nonzero coefficient.
    pub fn active(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.coefficients[i] != 0.0).collect()
    }

    /// `x = Σ aᵢ dᵢ`.
    pub fn combine(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for i in 0..self.len() {
            let a = self.coefficients[i];
            if a == 0.0 {
                continue;
            }
            for (slot, &d) in x.iter_mut().zip(self.direction(i)) {
                *slot += a * d;
            }
        }
        x
    }
}

/// Pairwise interaction table: `(i, j) → aᵢ aⱼ (dᵢ · B · dⱼ)` over active
/// features, assembled in ascending `(i, j)` order. Summing every entry
/// reproduces the layer output on `x = Σ aᵢ dᵢ`.
pub fn pairwise_decompose(
    bform: &ThirdOrderForm,
    features: &FeatureSet,
) -> Result<BTreeMap<(usize, usize), Vec<f64>>> {
    if features.dim() != bform.input_dim() {
        return Err(Error::Dimension(format!(
            "feature dim {} does not match form input dim {}",
            features.dim(),
            bform.input_dim()
        )));
    }
    let active = features.active();
    let mut table = BTreeMap::new();
    for &i in &active {
        for &j in &active {
            let raw = bform.apply(features.direction(i), features.direction(j))?;
            let scale = features.coefficient(i) * features.coefficient(j);
            table.insert((i, j), raw.into_iter().map(|v| scale * v).collect());
        }
    }
    Ok(table)
}
