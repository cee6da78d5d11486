//! Propositional-logic corpus generation and activation-patching workbench.
//!
//! The crate builds aligned clean/corrupt prompt pairs from Boolean-algebra
//! rule templates, runs three-pass activation patching against any model that
//! implements [`HookedModel`], and reduces the resulting logit-difference grids
//! into stage-wise summaries and attention-head labels.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! pin the common instantiations.

pub mod dataset;
pub mod error;
pub mod heads;
pub mod logic;
pub mod metrics;
pub mod model;
pub mod patch;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use model::{ActivationCache, ActivationSite, HookedModel, Intervention, InterventionMode};
pub use scalar::{Precision, Scalar};

pub type ToyModel32 = model::ToyModel<f32>;
pub type ToyModel64 = model::ToyModel<f64>;
pub type SweepGrid32 = patch::SweepGrid<f32>;
pub type SweepGrid64 = patch::SweepGrid<f64>;
pub type PatchResult64 = patch::PatchResult<f64>;
pub type AttentionMatrix64 = heads::AttentionMatrix<f64>;
pub type ActivationCache64 = model::ActivationCache<f64>;
