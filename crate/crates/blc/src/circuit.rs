//! A minimal one-layer transformer (attention heads + bilinear MLP, no layer
//! norm) and its exact path expansion into labeled terms.
//!
//! The expansion treats each attention pattern `A^h` as a fixed linear
//! operator computed once from the forward pass: `A^h` mixes positions, the
//! weight products mix features. With the bilinear MLP written as a
//! third-order form, the transformer output is a finite sum of labeled terms
//! (direct pathway, per-head OV pathways, and one term per ordered pair of
//! residual components through the MLP) which reproduces the forward logits.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// One attention head. `w_q`, `w_k`, `w_v` are `d_head × d_model`;
/// `w_o` is `d_model × d_head`.
#[derive(Debug, Clone)]
pub struct AttentionHead<T: Element = f64> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
}

/// Bilinear MLP weights: `w_i1`, `w_i2` are `d_mlp × d_model`,
/// `w_om` is `d_model × d_mlp`.
#[derive(Debug, Clone)]
pub struct MlpWeights<T: Element = f64> {
    pub w_i1: Tensor<T>,
    pub w_i2: Tensor<T>,
    pub w_om: Tensor<T>,
}

/// Embedding, attention heads, bilinear MLP, unembedding. No layer norm
/// anywhere; the path expansion is exact only without it.
#[derive(Debug, Clone)]
pub struct ToyTransformer<T: Element = f64> {
    /// `d_model × n_vocab`.
    pub w_e: Tensor<T>,
    /// `n_vocab × d_model`.
    pub w_u: Tensor<T>,
    pub heads: Vec<AttentionHead<T>>,
    pub mlp: MlpWeights<T>,
    /// Divide attention logits by `sqrt(d_head)` before the softmax.
    pub qk_scale: bool,
    /// Optional `n_ctx_max × d_model` positional embedding.
    pub positional: Option<Tensor<T>>,
}

fn rand_mat<T: Element>(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-1.0..1.0) * scale))
}

#[derive(Debug, Clone, Copy)]
pub struct TransformerDims {
    pub n_vocab: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
}

/// A labeled residual-stream component (`n_ctx × d_model`).
#[derive(Debug, Clone)]
pub struct PathComponent<T: Element = f64> {
    pub label: ComponentLabel,
    pub values: Tensor<T>,
}

/// A labeled pre-unembedding MLP summand (`n_ctx × d_model`).
#[derive(Debug, Clone)]
pub struct MlpTermGroup<T: Element = f64> {
    pub left: ComponentLabel,
    pub right: ComponentLabel,
    pub values: Tensor<T>,
}

/// A labeled logit contribution (`n_ctx × n_vocab`). All contributions of a
/// full expansion sum to the forward-pass logits.
#[derive(Debug, Clone)]
pub struct TermContribution<T: Element = f64> {
    pub label: TermLabel,
    pub logits: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ComponentLabel {
    Direct,
    Positional,
    Head(usize),
}

impl fmt::Display for ComponentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentLabel::Direct => write!(f, "direct"),
            ComponentLabel::Positional => write!(f, "positional"),
            ComponentLabel::Head(h) => write!(f, "head:{h}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermLabel {
    EmbedUnembed,
    Positional,
    Head(usize),
    Mlp(ComponentLabel, ComponentLabel),
}

impl fmt::Display for TermLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TermLabel::EmbedUnembed => write!(f, "embed-unembed"),
            TermLabel::Positional => write!(f, "positional"),
            TermLabel::Head(h) => write!(f, "head:{h}"),
            TermLabel::Mlp(l, r) => write!(f, "mlp:{l}×{r}"),
        }
    }
}

/// Everything the forward pass produces, kept so the expansion reuses the
/// exact same intermediate values.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Element = f64> {
    /// `W_E t`, without positional embedding.
    pub embedded: Tensor<T>,
    /// Positional rows for this context length, when configured.
    pub positional: Option<Tensor<T>>,
    /// Per-head attention patterns (`n_ctx × n_ctx`).
    pub attention: Vec<Tensor<T>>,
    /// Per-head outputs in the residual stream (`n_ctx × d_model`).
    pub head_outputs: Vec<Tensor<T>>,
    /// Residual stream entering the MLP.
    pub x1: Tensor<T>,
    /// `F(x1)`.
    pub mlp_output: Tensor<T>,
    /// `n_ctx × n_vocab` logits.
    pub logits: Tensor<T>,
}

impl<T: Element> ToyTransformer<T> {
    pub fn n_vocab(&self) -> usize {
        self.w_e.ncols()
    }

    pub fn d_model(&self) -> usize {
        self.w_e.nrows()
    }

    pub fn d_mlp(&self) -> usize {
        self.mlp.w_i1.nrows()
    }

    pub fn d_head(&self) -> usize {
        self.heads.first().map(|h| h.w_q.nrows()).unwrap_or(0)
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    /// Check that every weight shape lines up.
    pub fn validate(&self) -> Result<()> {
        let d = self.d_model();
        if self.w_u.ncols() != d {
            return Err(Error::Dimension(format!(
                "unembedding expects {} columns, got {}",
                d,
                self.w_u.ncols()
            )));
        }
        if self.w_u.nrows() != self.n_vocab() {
            return Err(Error::Dimension("unembedding rows must match vocab".into()));
        }
        for (i, h) in self.heads.iter().enumerate() {
            let dh = h.w_q.nrows();
            let ok = h.w_q.shape() == [dh, d]
                && h.w_k.shape() == [dh, d]
                && h.w_v.shape() == [dh, d]
                && h.w_o.shape() == [d, dh];
            if !ok {
                return Err(Error::Dimension(format!("head {i} has inconsistent shapes")));
            }
        }
        let dm = self.d_mlp();
        if self.mlp.w_i1.shape() != [dm, d]
            || self.mlp.w_i2.shape() != [dm, d]
            || self.mlp.w_om.shape() != [d, dm]
        {
            return Err(Error::Dimension("mlp weight shapes are inconsistent".into()));
        }
        if let Some(p) = &self.positional {
            if p.ncols() != d {
                return Err(Error::Dimension("positional embedding width != d_model".into()));
            }
        }
        Ok(())
    }

    /// Seeded random model; weights scaled by `1/sqrt(d_model)`.
    pub fn random(dims: TransformerDims, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (dims.d_model as f64).sqrt();
        let w_e = rand_mat(&[dims.d_model, dims.n_vocab], scale, rng);
        let w_u = rand_mat(&[dims.n_vocab, dims.d_model], scale, rng);
        let heads = (0..dims.n_heads)
            .map(|_| AttentionHead {
                w_q: rand_mat(&[dims.d_head, dims.d_model], scale, rng),
                w_k: rand_mat(&[dims.d_head, dims.d_model], scale, rng),
                w_v: rand_mat(&[dims.d_head, dims.d_model], scale, rng),
                w_o: rand_mat(&[dims.d_model, dims.d_head], scale, rng),
            })
            .collect();
        let mlp = MlpWeights {
            w_i1: rand_mat(&[dims.d_mlp, dims.d_model], scale, rng),
            w_i2: rand_mat(&[dims.d_mlp, dims.d_model], scale, rng),
            w_om: rand_mat(&[dims.d_model, dims.d_mlp], scale, rng),
        };
        ToyTransformer {
            w_e,
            w_u,
            heads,
            mlp,
            qk_scale: true,
            positional: None,
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Argument("empty token sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.n_vocab()) {
            return Err(Error::Argument(format!(
                "token id {} out of range for vocab {}",
                bad,
                self.n_vocab()
            )));
        }
        if let Some(p) = &self.positional {
            if tokens.len() > p.nrows() {
                return Err(Error::Argument(format!(
                    "context length {} exceeds positional table {}",
                    tokens.len(),
                    p.nrows()
                )));
            }
        }
        Ok(())
    }

    /// Token embeddings `W_E t` as rows, without the positional term.
    pub fn embed(&self, tokens: &[usize]) -> Result<Tensor<T>> {
        self.check_tokens(tokens)?;
        let d = self.d_model();
        let mut x = Tensor::zeros(&[tokens.len(), d]);
        for (p, &t) in tokens.iter().enumerate() {
            for r in 0..d {
                x.data_mut()[p * d + r] = self.w_e.get(&[r, t]);
            }
        }
        Ok(x)
    }

    fn positional_rows(&self, n_ctx: usize) -> Option<Tensor<T>> {
        self.positional.as_ref().map(|p| {
            Tensor::from_fn(&[n_ctx, self.d_model()], |idx| p.get(&[idx[0], idx[1]]))
        })
    }

    /// Residual stream entering attention: embeddings plus positional rows.
    fn x0(&self, tokens: &[usize]) -> Result<Tensor<T>> {
        let embedded = self.embed(tokens)?;
        match self.positional_rows(tokens.len()) {
            Some(p) => embedded.add(&p),
            None => Ok(embedded),
        }
    }

    /// Causal softmax attention pattern of head `h`. Rows sum to 1; entries
    /// above the diagonal are exactly zero.
    pub fn attention_pattern(&self, tokens: &[usize], h: usize) -> Result<Tensor<T>> {
        if h >= self.heads.len() {
            return Err(Error::Argument(format!(
                "head index {} out of range for {} heads",
                h,
                self.heads.len()
            )));
        }
        let x0 = self.x0(tokens)?;
        Ok(self.attention_from_x0(&x0, h))
    }

    fn attention_from_x0(&self, x0: &Tensor<T>, h: usize) -> Tensor<T> {
        let head = &self.heads[h];
        let n_ctx = x0.nrows();
        let q = x0.matmul(&head.w_q.transposed()).expect("shapes validated");
        let k = x0.matmul(&head.w_k.transposed()).expect("shapes validated");
        let scale = if self.qk_scale {
            T::from_f64(1.0 / (head.w_q.nrows() as f64).sqrt())
        } else {
            T::one()
        };
        let mut a = Tensor::zeros(&[n_ctx, n_ctx]);
        for p in 0..n_ctx {
            // Scores over the causal prefix 0..=p, max-shifted for stability.
            let mut scores = Vec::with_capacity(p + 1);
            for qq in 0..=p {
                let mut s = T::zero();
                for e in 0..q.ncols() {
                    s = s + q.get(&[p, e]) * k.get(&[qq, e]);
                }
                scores.push(s * scale);
            }
            let max = scores.iter().fold(scores[0], |m, &v| if v > m { v } else { m });
            let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
            let total = exps.iter().fold(T::zero(), |acc, &e| acc + e);
            for (qq, &e) in exps.iter().enumerate() {
                a.set(&[p, qq], e / total);
            }
        }
        a
    }

    /// Full forward pass, keeping every intermediate for reuse by the
    /// expansion routines.
    pub fn trace(&self, tokens: &[usize]) -> Result<ForwardTrace<T>> {
        self.validate()?;
        let embedded = self.embed(tokens)?;
        let positional = self.positional_rows(tokens.len());
        let x0 = match &positional {
            Some(p) => embedded.add(p)?,
            None => embedded.clone(),
        };

        let mut attention = Vec::with_capacity(self.heads.len());
        let mut head_outputs = Vec::with_capacity(self.heads.len());
        let mut x1 = x0.clone();
        for (h, head) in self.heads.iter().enumerate() {
            let a = self.attention_from_x0(&x0, h);
            let v = x0.matmul(&head.w_v.transposed())?;
            let out = a.matmul(&v)?.matmul(&head.w_o.transposed())?;
            x1 = x1.add(&out)?;
            attention.push(a);
            head_outputs.push(out);
        }

        let mlp_output = self.mlp_forward(&x1)?;
        let logits = x1.add(&mlp_output)?.matmul(&self.w_u.transposed())?;
        Ok(ForwardTrace {
            embedded,
            positional,
            attention,
            head_outputs,
            x1,
            mlp_output,
            logits,
        })
    }

    /// `F(x) = W_Om ((W_I1 x) ⊙ (W_I2 x))` applied per row.
    pub fn mlp_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = x.matmul(&self.mlp.w_i1.transposed())?;
        let h = x.matmul(&self.mlp.w_i2.transposed())?;
        let gate = g.zip_mul(&h)?;
        gate.matmul(&self.mlp.w_om.transposed())
    }

    /// `n_ctx × n_vocab` logits.
    pub fn forward(&self, tokens: &[usize]) -> Result<Tensor<T>> {
        Ok(self.trace(tokens)?.logits)
    }

    /// Labeled components of `x1`: the direct embedding path, the positional
    /// rows when configured, and one component per head. Summing them in
    /// order reproduces `x1` exactly (same additions as the forward pass).
    pub fn residual_components(&self, tokens: &[usize]) -> Result<Vec<PathComponent<T>>> {
        let trace = self.trace(tokens)?;
        Ok(Self::components_from_trace(&trace))
    }

    fn components_from_trace(trace: &ForwardTrace<T>) -> Vec<PathComponent<T>> {
        let mut out = vec![PathComponent {
            label: ComponentLabel::Direct,
            values: trace.embedded.clone(),
        }];
        if let Some(p) = &trace.positional {
            out.push(PathComponent {
                label: ComponentLabel::Positional,
                values: p.clone(),
            });
        }
        for (h, values) in trace.head_outputs.iter().enumerate() {
            out.push(PathComponent {
                label: ComponentLabel::Head(h),
                values: values.clone(),
            });
        }
        out
    }

    /// Distribute the bilinear MLP over residual components: one term per
    /// ordered component pair, `W_Om ((W_I1 c_L) ⊙ (W_I2 c_R))` per position.
    ///
    /// `residual` is the stream the components claim to decompose; they must
    /// sum to it within 1e-6 max-abs. The groups sum to `F(residual)`.
    pub fn mlp_term_groups(
        &self,
        components: &[PathComponent<T>],
        residual: &Tensor<T>,
    ) -> Result<Vec<MlpTermGroup<T>>> {
        if self.mlp.w_i1.nrows() != self.mlp.w_i2.nrows() {
            return Err(Error::Dimension("mlp input matrices disagree".into()));
        }
        let mut sum = Tensor::zeros(residual.shape());
        for c in components {
            sum = sum.add(&c.values)?;
        }
        let gap = sum.max_abs_diff(residual)?.to_f64();
        if gap > 1e-6 {
            return Err(Error::Consistency(format!(
                "components sum differs from the residual stream by {:.3e}",
                gap
            )));
        }

        // Pre-multiply each component through both input matrices once.
        let lefts: Vec<Tensor<T>> = components
            .iter()
            .map(|c| c.values.matmul(&self.mlp.w_i1.transposed()))
            .collect::<Result<_>>()?;
        let rights: Vec<Tensor<T>> = components
            .iter()
            .map(|c| c.values.matmul(&self.mlp.w_i2.transposed()))
            .collect::<Result<_>>()?;

        let mut groups = Vec::with_capacity(components.len() * components.len());
        for (li, lc) in components.iter().enumerate() {
            for (ri, rc) in components.iter().enumerate() {
                let gate = lefts[li].zip_mul(&rights[ri])?;
                groups.push(MlpTermGroup {
                    left: lc.label,
                    right: rc.label,
                    values: gate.matmul(&self.mlp.w_om.transposed())?,
                });
            }
        }
        Ok(groups)
    }

    /// The complete labeled expansion: direct pathway, per-head pathways,
    /// and every MLP component pair, all unembedded into logit space.
    /// The elementwise sum reproduces `forward(tokens)` within 1e-8.
    pub fn full_expansion(&self, tokens: &[usize]) -> Result<Vec<TermContribution<T>>> {
        let trace = self.trace(tokens)?;
        let components = Self::components_from_trace(&trace);
        let groups = self.mlp_term_groups(&components, &trace.x1)?;
        let wu_t = self.w_u.transposed();

        let mut terms = vec![TermContribution {
            label: TermLabel::EmbedUnembed,
            logits: trace.embedded.matmul(&wu_t)?,
        }];
        if let Some(p) = &trace.positional {
            terms.push(TermContribution {
                label: TermLabel::Positional,
                logits: p.matmul(&wu_t)?,
            });
        }
        for (h, out) in trace.head_outputs.iter().enumerate() {
            terms.push(TermContribution {
                label: TermLabel::Head(h),
                logits: out.matmul(&wu_t)?,
            });
        }
        for g in &groups {
            terms.push(TermContribution {
                label: TermLabel::Mlp(g.left, g.right),
                logits: g.values.matmul(&wu_t)?,
            });
        }
        Ok(terms)
    }
}

impl<T: Element> Tensor<T> {
    fn zip_mul(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "elementwise product of {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Tensor::from_vec(
            self.shape(),
            self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect(),
        )
    }
}

/// Per-term norms and the share of the total logit norm.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TermNorm {
    pub label: String,
    pub frobenius: f64,
    pub max_abs: f64,
    pub share: f64,
}

/// Summarize an expansion: Frobenius norm, max-abs, and each term's share of
/// the summed-logits norm. Empty input gives an empty report.
pub fn term_norm_report<T: Element>(terms: &[TermContribution<T>]) -> Vec<TermNorm> {
    if terms.is_empty() {
        return Vec::new();
    }
    let mut total = Tensor::zeros(terms[0].logits.shape());
    for t in terms {
        total = total.add(&t.logits).expect("uniform term shapes");
    }
    let denom = total.frobenius_norm().to_f64();
    terms
        .iter()
        .map(|t| {
            let fro = t.logits.frobenius_norm().to_f64();
            TermNorm {
                label: t.label.to_string(),
                frobenius: fro,
                max_abs: t.logits.max_abs().to_f64(),
                share: if denom > 0.0 { fro / denom } else { 0.0 },
            }
        })
        .collect()
}

/// Sum of an expansion's logit terms.
pub fn sum_terms<T: Element>(terms: &[TermContribution<T>]) -> Result<Tensor<T>> {
    if terms.is_empty() {
        return Err(Error::Argument("no terms to sum".into()));
    }
    let mut total = Tensor::zeros(terms[0].logits.shape());
    for t in terms {
        total = total.add(&t.logits)?;
    }
    Ok(total)
}

// ── Materialized vocab-space route ──────────────────────────────────────────

/// One-hot token matrix (`n_ctx × n_vocab`).
pub fn one_hot_tokens<T: Element>(tokens: &[usize], n_vocab: usize) -> Result<Tensor<T>> {
    if let Some(&bad) = tokens.iter().find(|&&t| t >= n_vocab) {
        return Err(Error::Argument(format!(
            "token id {bad} out of range for vocab {n_vocab}"
        )));
    }
    let mut t = Tensor::zeros(&[tokens.len(), n_vocab]);
    for (p, &tok) in tokens.iter().enumerate() {
        t.set(&[p, tok], T::one());
    }
    Ok(t)
}

/// `W_U W_E`: the direct-pathway operator on one-hot tokens.
pub fn direct_logit_operator<T: Element>(model: &ToyTransformer<T>) -> Result<Tensor<T>> {
    model.w_u.matmul(&model.w_e)
}

/// `W_U W_OV^h W_E` for head `h`.
pub fn head_logit_operator<T: Element>(model: &ToyTransformer<T>, h: usize) -> Result<Tensor<T>> {
    let head = model
        .heads
        .get(h)
        .ok_or_else(|| Error::Argument(format!("head index {h} out of range")))?;
    let w_ov = head.w_o.matmul(&head.w_v)?;
    model.w_u.matmul(&w_ov)?.matmul(&model.w_e)
}

/// Apply a vocab-space logit operator to a (possibly soft) token matrix,
/// optionally mixing positions with a fixed attention pattern first.
pub fn apply_token_operator<T: Element>(
    op: &Tensor<T>,
    attention: Option<&Tensor<T>>,
    soft_tokens: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mixed = match attention {
        Some(a) => a.matmul(soft_tokens)?,
        None => soft_tokens.clone(),
    };
    mixed.matmul(&op.transposed())
}

/// The expansion computed through explicit vocab-space tensors instead of
/// distributing over residual components: each MLP summand class becomes a
/// dense `d_mlp × n_vocab × n_vocab` third-order form built from its path
/// matrices, contracted against (attention-mixed) one-hot tokens.
///
/// Guarded by `vocab_limit` because the dense forms grow with `n_vocab²`;
/// positional embeddings are not expressible as token operators and are
/// rejected.
pub fn materialized_expansion<T: Element>(
    model: &ToyTransformer<T>,
    tokens: &[usize],
    vocab_limit: usize,
) -> Result<Vec<TermContribution<T>>> {
    if model.positional.is_some() {
        return Err(Error::Argument(
            "materialized expansion does not support positional embeddings".into(),
        ));
    }
    if model.n_vocab() > vocab_limit {
        return Err(Error::Capacity(format!(
            "vocab {} exceeds the materialization guard {}",
            model.n_vocab(),
            vocab_limit
        )));
    }
    let trace = model.trace(tokens)?;
    let onehot = one_hot_tokens::<T>(tokens, model.n_vocab())?;

    let mut terms = vec![TermContribution {
        label: TermLabel::EmbedUnembed,
        logits: apply_token_operator(&direct_logit_operator(model)?, None, &onehot)?,
    }];
    for h in 0..model.n_heads() {
        terms.push(TermContribution {
            label: TermLabel::Head(h),
            logits: apply_token_operator(
                &head_logit_operator(model, h)?,
                Some(&trace.attention[h]),
                &onehot,
            )?,
        });
    }

    // Path matrices into each MLP input: vocab space on the right.
    let mut left_paths = vec![(ComponentLabel::Direct, model.mlp.w_i1.matmul(&model.w_e)?)];
    let mut right_paths = vec![(ComponentLabel::Direct, model.mlp.w_i2.matmul(&model.w_e)?)];
    for (h, head) in model.heads.iter().enumerate() {
        let w_ov = head.w_o.matmul(&head.w_v)?;
        left_paths.push((
            ComponentLabel::Head(h),
            model.mlp.w_i1.matmul(&w_ov)?.matmul(&model.w_e)?,
        ));
        right_paths.push((
            ComponentLabel::Head(h),
            model.mlp.w_i2.matmul(&w_ov)?.matmul(&model.w_e)?,
        ));
    }
    let mixed_tokens = |label: ComponentLabel| -> Result<Tensor<T>> {
        match label {
            ComponentLabel::Direct => Ok(onehot.clone()),
            ComponentLabel::Head(h) => trace.attention[h].matmul(&onehot),
            ComponentLabel::Positional => unreachable!("rejected above"),
        }
    };

    let unembed_mlp = model.w_u.matmul(&model.mlp.w_om)?; // n_vocab × d_mlp
    let n_ctx = tokens.len();
    for (ll, lmat) in &left_paths {
        for (rl, rmat) in &right_paths {
            let layer = crate::bilinear::BilinearLayer::new(lmat.clone(), rmat.clone())?;
            let form = crate::bilinear::build_b(&layer)?;
            let xl = mixed_tokens(*ll)?;
            let xr = mixed_tokens(*rl)?;
            let mut pre = Tensor::<T>::zeros(&[n_ctx, model.d_mlp()]);
            for p in 0..n_ctx {
                let v = form.apply(xl.row(p), xr.row(p))?;
                pre.row_mut(p).copy_from_slice(&v);
            }
            terms.push(TermContribution {
                label: TermLabel::Mlp(*ll, *rl),
                logits: pre.matmul(&unembed_mlp.transposed())?,
            });
        }
    }
    Ok(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(seed: u64, heads: usize) -> ToyTransformer {
        let mut rng = crate::rng::stream(seed, 51);
        ToyTransformer::random(
            TransformerDims {
                n_vocab: 11,
                d_model: 8,
                d_head: 4,
                n_heads: heads,
                d_mlp: 16,
            },
            &mut rng,
        )
    }

    #[test]
    fn single_position_attention_is_one() {
        let model = tiny(1, 2);
        let a = model.attention_pattern(&[3], 0).unwrap();
        assert_eq!(a.shape(), &[1, 1]);
        assert_eq!(a.get(&[0, 0]), 1.0);
    }

    #[test]
    fn zero_qk_gives_uniform_prefix_rows() {
        let mut model = tiny(2, 1);
        model.heads[0].w_q = Tensor::zeros(&[4, 8]);
        model.heads[0].w_k = Tensor::zeros(&[4, 8]);
        let a = model.attention_pattern(&[1, 2, 3, 4], 0).unwrap();
        for p in 0..4 {
            for q in 0..4 {
                let expect = if q <= p { 1.0 / (p as f64 + 1.0) } else { 0.0 };
                assert!((a.get(&[p, q]) - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn two_token_rank_one_qk_hand_case() {
        // d_model = 2, vocab = 2, one head with rank-1 W_QK; the second row of
        // the pattern must equal the softmax of the two hand-computed logits.
        let w_e = Tensor::from_vec(&[2, 2], vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        let head = AttentionHead {
            w_q: Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap(),
            w_k: Tensor::from_vec(&[1, 2], vec![3.0, -1.0]).unwrap(),
            w_v: Tensor::zeros(&[1, 2]),
            w_o: Tensor::zeros(&[2, 1]),
        };
        let model: ToyTransformer = ToyTransformer {
            w_e,
            w_u: Tensor::zeros(&[2, 2]),
            heads: vec![head],
            mlp: MlpWeights {
                w_i1: Tensor::zeros(&[2, 2]),
                w_i2: Tensor::zeros(&[2, 2]),
                w_om: Tensor::zeros(&[2, 2]),
            },
            qk_scale: false,
            positional: None,
        };
        // Embeddings: token 0 -> (1,0), token 1 -> (0.5,1).
        // q_1 = q(x_1) = 1*0.5 + 2*1 = 2.5 ; k_0 = 3*1 - 1*0 = 3 ; k_1 = 3*0.5 - 1 = 0.5
        let a = model.attention_pattern(&[0, 1], 0).unwrap();
        let (s0, s1): (f64, f64) = (2.5 * 3.0, 2.5 * 0.5);
        let m = s0.max(s1);
        let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
        assert!((a.get(&[1, 0]) - e0 / (e0 + e1)).abs() <= 1e-12);
        assert!((a.get(&[1, 1]) - e1 / (e0 + e1)).abs() <= 1e-12);
    }

    #[test]
    fn rows_sum_to_one_and_causal() {
        let model = tiny(3, 3);
        for h in 0..3 {
            let a = model.attention_pattern(&[0, 5, 10, 2, 7], h).unwrap();
            for p in 0..5 {
                let sum: f64 = (0..5).map(|q| a.get(&[p, q])).sum();
                assert!((sum - 1.0).abs() <= 1e-12);
                for q in (p + 1)..5 {
                    assert_eq!(a.get(&[p, q]), 0.0);
                }
            }
        }
    }

    #[test]
    fn invalid_head_and_token_are_argument_errors() {
        let model = tiny(4, 1);
        assert!(matches!(
            model.attention_pattern(&[0], 5),
            Err(Error::Argument(_))
        ));
        assert!(matches!(model.forward(&[99]), Err(Error::Argument(_))));
    }

    #[test]
    fn forward_reduces_to_direct_pathway_when_rest_is_zero() {
        let mut model = tiny(5, 1);
        for h in &mut model.heads {
            h.w_q = Tensor::zeros(&[4, 8]);
            h.w_k = Tensor::zeros(&[4, 8]);
            h.w_v = Tensor::zeros(&[4, 8]);
            h.w_o = Tensor::zeros(&[8, 4]);
        }
        model.mlp.w_om = Tensor::zeros(&[8, 16]);
        let tokens = [1, 4, 9];
        let logits = model.forward(&tokens).unwrap();
        let direct = direct_logit_operator(&model).unwrap();
        for (p, &t) in tokens.iter().enumerate() {
            for v in 0..model.n_vocab() {
                assert!((logits.get(&[p, v]) - direct.get(&[v, t])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_mlp_matches_attention_only_model() {
        let mut model = tiny(6, 2);
        model.mlp.w_om = Tensor::zeros(&[8, 16]);
        let tokens = [3, 1, 8, 2];
        let logits = model.forward(&tokens).unwrap();
        let trace = model.trace(&tokens).unwrap();
        let attn_only = trace.x1.matmul(&model.w_u.transposed()).unwrap();
        assert!(logits.max_abs_diff(&attn_only).unwrap() <= 1e-12);
    }

    #[test]
    fn residual_components_sum_to_x1() {
        let model = tiny(7, 2);
        let tokens = [0, 3, 6, 9, 1];
        let trace = model.trace(&tokens).unwrap();
        let comps = model.residual_components(&tokens).unwrap();
        assert_eq!(comps.len(), 3);
        let mut sum = Tensor::zeros(trace.x1.shape());
        for c in &comps {
            sum = sum.add(&c.values).unwrap();
        }
        assert!(sum.max_abs_diff(&trace.x1).unwrap() <= 1e-12);
    }

    #[test]
    fn no_heads_single_direct_component() {
        let model = tiny(8, 0);
        let comps = model.residual_components(&[2, 5]).unwrap();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].label, ComponentLabel::Direct);
        let x0 = model.embed(&[2, 5]).unwrap();
        assert_eq!(comps[0].values, x0);
    }

    #[test]
    fn zero_value_heads_give_zero_components() {
        let mut model = tiny(9, 2);
        for h in &mut model.heads {
            h.w_v = Tensor::zeros(&[4, 8]);
        }
        let comps = model.residual_components(&[1, 2, 3]).unwrap();
        for c in comps.iter().filter(|c| matches!(c.label, ComponentLabel::Head(_))) {
            assert_eq!(c.values.max_abs(), 0.0);
        }
    }

    #[test]
    fn mlp_groups_no_heads_is_single_direct_pair() {
        let model = tiny(10, 0);
        let tokens = [4, 7, 1];
        let trace = model.trace(&tokens).unwrap();
        let comps = model.residual_components(&tokens).unwrap();
        let groups = model.mlp_term_groups(&comps, &trace.x1).unwrap();
        assert_eq!(groups.len(), 1);
        let direct_f = model.mlp_forward(&model.embed(&tokens).unwrap()).unwrap();
        assert!(groups[0].values.max_abs_diff(&direct_f).unwrap() <= 1e-12);
    }

    #[test]
    fn mlp_groups_zero_w_i1_all_zero() {
        let mut model = tiny(11, 1);
        model.mlp.w_i1 = Tensor::zeros(&[16, 8]);
        let tokens = [4, 7];
        let trace = model.trace(&tokens).unwrap();
        let comps = model.residual_components(&tokens).unwrap();
        for g in model.mlp_term_groups(&comps, &trace.x1).unwrap() {
            assert_eq!(g.values.max_abs(), 0.0);
        }
    }

    #[test]
    fn mlp_groups_one_head_four_groups_summing_to_f() {
        let model = tiny(12, 1);
        let tokens = [4, 7, 2, 9, 0];
        let trace = model.trace(&tokens).unwrap();
        let comps = model.residual_components(&tokens).unwrap();
        let groups = model.mlp_term_groups(&comps, &trace.x1).unwrap();
        assert_eq!(groups.len(), 4);
        let mut sum = Tensor::zeros(trace.mlp_output.shape());
        for g in &groups {
            sum = sum.add(&g.values).unwrap();
        }
        assert!(sum.max_abs_diff(&trace.mlp_output).unwrap() <= 1e-9);
    }

    #[test]
    fn inconsistent_components_rejected() {
        let model = tiny(13, 1);
        let tokens = [4, 7];
        let trace = model.trace(&tokens).unwrap();
        let mut comps = model.residual_components(&tokens).unwrap();
        comps[0].values = comps[0].values.scale(2.0);
        assert!(matches!(
            model.mlp_term_groups(&comps, &trace.x1),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn expansion_sums_to_forward() {
        for seed in 0..5 {
            let model = tiny(100 + seed, 2);
            let tokens = [1, 5, 3, 10, 7];
            let logits = model.forward(&tokens).unwrap();
            let terms = model.full_expansion(&tokens).unwrap();
            // direct + 2 heads + 9 mlp pairs
            assert_eq!(terms.len(), 1 + 2 + 9);
            let total = sum_terms(&terms).unwrap();
            assert!(total.max_abs_diff(&logits).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn trivial_expansion_is_one_hot() {
        let d = 2;
        let model: ToyTransformer = ToyTransformer {
            w_e: Tensor::eye(d),
            w_u: Tensor::eye(d),
            heads: vec![],
            mlp: MlpWeights {
                w_i1: Tensor::zeros(&[2, d]),
                w_i2: Tensor::zeros(&[2, d]),
                w_om: Tensor::zeros(&[d, 2]),
            },
            qk_scale: true,
            positional: None,
        };
        let terms = model.full_expansion(&[1, 0]).unwrap();
        let direct = &terms[0];
        assert_eq!(direct.label, TermLabel::EmbedUnembed);
        assert_eq!(direct.logits.get(&[0, 1]), 1.0);
        assert_eq!(direct.logits.get(&[1, 0]), 1.0);
        for t in &terms[1..] {
            assert_eq!(t.logits.max_abs(), 0.0);
        }
    }

    #[test]
    fn zero_mlp_output_leaves_two_nonzero_labels() {
        let mut model = tiny(14, 1);
        model.mlp.w_om = Tensor::zeros(&[8, 16]);
        let terms = model.full_expansion(&[3, 6, 9]).unwrap();
        let nonzero: Vec<String> = terms
            .iter()
            .filter(|t| t.logits.max_abs() > 0.0)
            .map(|t| t.label.to_string())
            .collect();
        assert_eq!(nonzero, vec!["embed-unembed".to_string(), "head:0".to_string()]);
    }

    #[test]
    fn norm_report_shares() {
        let model = tiny(15, 1);
        let terms = model.full_expansion(&[2, 4, 6]).unwrap();
        let report = term_norm_report(&terms);
        assert_eq!(report.len(), terms.len());
        let single = term_norm_report(&terms[..1]);
        assert!((single[0].share - 1.0).abs() <= 1e-12);
        // Recompute shares from raw terms.
        let denom = sum_terms(&terms).unwrap().frobenius_norm();
        for (r, t) in report.iter().zip(&terms) {
            let expect = t.logits.frobenius_norm() / denom;
            assert!((r.share - expect).abs() <= 1e-12);
        }
        assert!(term_norm_report::<f64>(&[]).is_empty());
    }

    #[test]
    fn materialized_route_agrees() {
        let model = tiny(16, 2);
        let tokens = [1, 5, 3, 10, 7];
        let distributed = model.full_expansion(&tokens).unwrap();
        let materialized = materialized_expansion(&model, &tokens, 64).unwrap();
        assert_eq!(distributed.len(), materialized.len());
        for (d, m) in distributed.iter().zip(&materialized) {
            assert_eq!(d.label.to_string(), m.label.to_string());
            assert!(d.logits.max_abs_diff(&m.logits).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn materialized_route_respects_vocab_guard() {
        let model = tiny(17, 1);
        assert!(matches!(
            materialized_expansion(&model, &[1, 2], 8),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn non_mlp_terms_linear_in_tokens_with_frozen_attention() {
        let model = tiny(18, 1);
        let tokens_a = [1, 5, 3];
        let tokens_b = [6, 2, 9];
        let trace = model.trace(&tokens_a).unwrap();
        let ta = one_hot_tokens::<f64>(&tokens_a, model.n_vocab()).unwrap();
        let tb = one_hot_tokens::<f64>(&tokens_b, model.n_vocab()).unwrap();
        let tsum = ta.add(&tb).unwrap();
        for (op, attn) in [
            (direct_logit_operator(&model).unwrap(), None),
            (head_logit_operator(&model, 0).unwrap(), Some(&trace.attention[0])),
        ] {
            let fa = apply_token_operator(&op, attn, &ta).unwrap();
            let fb = apply_token_operator(&op, attn, &tb).unwrap();
            let fsum = apply_token_operator(&op, attn, &tsum).unwrap();
            assert!(fa.add(&fb).unwrap().max_abs_diff(&fsum).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn positional_enters_as_component_and_expansion_still_sums() {
        let mut model = tiny(19, 1);
        let mut rng = crate::rng::stream(19, 52);
        model.positional = Some(Tensor::from_fn(&[8, 8], |_| rng.gen_range(-0.2..0.2)));
        let tokens = [1, 2, 3, 4];
        let comps = model.residual_components(&tokens).unwrap();
        assert_eq!(comps.len(), 3); // direct, positional, head:0
        assert!(comps.iter().any(|c| c.label == ComponentLabel::Positional));
        let logits = model.forward(&tokens).unwrap();
        let terms = model.full_expansion(&tokens).unwrap();
        // direct + positional + head + 9 mlp pairs
        assert_eq!(terms.len(), 2 + 1 + 9);
        let total = sum_terms(&terms).unwrap();
        assert!(total.max_abs_diff(&logits).unwrap() <= 1e-8);
    }
}
