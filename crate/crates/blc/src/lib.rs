//! Bilinear MLP layers as third-order tensors.
//!
//! A bilinear layer `(W1 x) ⊙ (W2 x)` has no elementwise activation, so it is
//! exactly the quadratic form of an order-3 tensor. This crate implements
//! that correspondence and what it buys:
//!
//! - [`tensor`]: dense tensors (order 1–4), the generalized tensor inner
//!   product, mode unfoldings; [`hosvd`] for the higher-order SVD.
//! - [`bilinear`]: bilinear layers, the superdiagonal `Z` tensor, dense and
//!   factored third-order forms, pairwise feature decomposition.
//! - [`circuit`]: a one-layer attention + bilinear-MLP transformer (no layer
//!   norm) and its exact path expansion into labeled logit terms.
//! - [`analysis`]: modifier vectors, SVD/ICA feature bases, modification and
//!   contribution rankings.
//! - [`train`]: a small deterministic training harness (manual gradients,
//!   Adam) for bilinear / relu / swiglu layers and the toy transformer.
//! - [`persist`]: the `BLT1` tensor container and hashed checkpoint
//!   manifests.
//! - [`cli`]: the `blc` command implementations (train / verify / expand /
//!   analyze) with reproducible JSON reports.
//!
//! See `examples/` for one runnable walkthrough per capability.

pub mod bilinear;
pub mod circuit;
pub mod error;
pub mod hosvd;
pub mod linalg;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{mode_unfold, tensor_inner, DType, Element, Tensor};
