#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN
//! Diffusion-within-Gibbs (DiG) posterior sampling for Bayesian linear
//! signal component decomposition.
//!
//! The observation model is `y = Σ_k H_k s_k + v` with `v ~ N(0, σ_v² I)` and
//! mutually independent components `s_k`. Each Gibbs conditional is reduced to
//! a *denoising posterior* `p(s | s + η n = z)`, which is sampled either
//! exactly (Gaussian and Gaussian-mixture priors) or by a warm-started
//! reverse-time diffusion driven by a denoiser. Components whose sensing
//! operator is not the identity are handled through a relaxed model with an
//! auxiliary variable `u_k = s_k + v_k`, `v_k ~ N(0, η_k² I)`.
//!
//! Module map:
//!
//! - [`model`]: sensing operators, priors, components, the mixture model and
//!   its validation, plus the TOML model description.
//! - [`schedule`]: diffusion noise schedules and cosine annealing schedules.
//! - [`denoise`]: the [`Denoiser`](denoise::Denoiser) trait, exact MMSE
//!   denoisers, MAP denoisers, Tweedie scores and the subprocess hook.
//! - [`diffusion`]: Euler–Maruyama simulation of the reverse SDE.
//! - [`sampler`]: the DiG sampler and the proximal-split baseline.
//! - [`oracle`]: exact Gaussian / relaxed / mixture posteriors and
//!   sample-discrepancy metrics.
//! - [`bench`]: synthetic heartbeat/motion generators and the RSE benchmark.

pub mod bench;
pub mod denoise;
pub mod diffusion;
mod error;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
