//! Denoisers `D(z; η) ≈ E[s | s + η n = z]` and the samplers built on them.
//!
//! A denoiser is a pure map. Analytic priors (Gaussian, Gaussian mixture) also
//! know their exact denoising posterior and advertise it through
//! [`Denoiser::has_exact_conditional_sampler`]; everything else is sampled by
//! simulating the reverse diffusion (see [`crate::diffusion`]).

mod external;
mod map;

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, RngCore};

use crate::linalg::{log_gaussian_density, psd_sqrt, sample_with_factor, softmax_log_weights, spd_cholesky};
use crate::model::{GaussianPrior, GmmPrior, Prior};
use crate::{Error, Result};

pub use external::{read_record, write_record, ExternalDenoiser};
pub use map::{
    map_denoise_fourier_l1, map_denoise_smooth, FourierL1Denoiser, SmoothMapDenoiser,
};

pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;

    /// Estimate of the clean signal from `z = s + η n`.
    fn denoise(&self, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>>;

    /// Noise levels on which the denoiser is trusted; callers clamp into it.
    fn eta_range(&self) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }

    fn has_exact_conditional_sampler(&self) -> bool {
        false
    }

    /// Exact draw from `p(s | s + η n = z)`, when available.
    fn sample_conditional(
        &self,
        _z: &DVector<f64>,
        _eta: f64,
        _rng: &mut dyn RngCore,
    ) -> Result<DVector<f64>> {
        Err(Error::Denoiser(
            "this denoiser has no exact conditional sampler".into(),
        ))
    }
}

pub(crate) fn check_input(dim: usize, z: &DVector<f64>, eta: f64) -> Result<()> {
    if z.len() != dim {
        return Err(Error::Dimension(format!(
            "denoiser expects length {dim}, got {}",
            z.len()
        )));
    }
    if !(eta > 0.0) || eta.is_nan() {
        return Err(Error::Parameter {
            name: "eta",
            msg: format!("noise level must be positive, got {eta}"),
        });
    }
    Ok(())
}

/// Clamps a requested noise level into the denoiser's declared range.
pub fn clamp_eta(den: &dyn Denoiser, eta: f64) -> f64 {
    let (lo, hi) = den.eta_range();
    eta.clamp(lo.max(f64::MIN_POSITIVE), hi)
}

/// Builds the analytic denoiser implied by a prior.
pub fn denoiser_for(prior: &Prior, dim: usize) -> Result<Arc<dyn Denoiser>> {
    Ok(match prior {
        Prior::Gaussian(g) => Arc::new(GaussianDenoiser::new(g.clone())?),
        Prior::GaussianMixture(g) => Arc::new(GmmDenoiser::new(g.clone())?),
        Prior::SmoothnessMap { lambda } => Arc::new(SmoothMapDenoiser::new(*lambda, dim)),
        Prior::FourierSparsityMap { lambda } => Arc::new(FourierL1Denoiser::new(*lambda, dim)),
        Prior::External(d) => d.clone(),
    })
}

/// Exact MMSE denoiser for `N(ξ, Γ)`.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    prior: GaussianPrior,
}

/// Gaussian denoising posterior `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianDenoiser {
    pub fn new(prior: GaussianPrior) -> Result<Self> {
        spd_cholesky(&prior.cov, "prior covariance")?;
        Ok(Self { prior })
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    fn noisy_chol(&self, eta: f64) -> Result<Cholesky<f64, Dyn>> {
        let d = self.prior.dim();
        let a = &self.prior.cov + DMatrix::identity(d, d) * (eta * eta);
        Cholesky::new(a).ok_or_else(|| Error::Numerical("Γ + η²I is not positive definite".into()))
    }

    /// Mean and covariance of `p(s | s + η n = z)`.
    pub fn conditional(&self, z: &DVector<f64>, eta: f64) -> Result<GaussianConditional> {
        check_input(self.prior.dim(), z, eta)?;
        let ch = self.noisy_chol(eta)?;
        let gamma = &self.prior.cov;
        let mean = &self.prior.mean + gamma * ch.solve(&(z - &self.prior.mean));
        let cov = gamma - gamma * ch.solve(gamma);
        Ok(GaussianConditional { mean, cov })
    }
}

impl Denoiser for GaussianDenoiser {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn denoise(&self, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
        check_input(self.prior.dim(), z, eta)?;
        let ch = self.noisy_chol(eta)?;
        Ok(&self.prior.mean + &self.prior.cov * ch.solve(&(z - &self.prior.mean)))
    }

    fn has_exact_conditional_sampler(&self) -> bool {
        true
    }

    fn sample_conditional(
        &self,
        z: &DVector<f64>,
        eta: f64,
        rng: &mut dyn RngCore,
    ) -> Result<DVector<f64>> {
        let c = self.conditional(z, eta)?;
        Ok(sample_with_factor(&c.mean, &psd_sqrt(&c.cov), rng))
    }
}

/// Exact MMSE denoiser for a Gaussian mixture prior.
#[derive(Debug, Clone)]
pub struct GmmDenoiser {
    prior: GmmPrior,
}

/// Mixture-of-Gaussians denoising posterior.
#[derive(Debug, Clone)]
pub struct MixtureConditional {
    pub responsibilities: Vec<f64>,
    pub components: Vec<GaussianConditional>,
}

impl MixtureConditional {
    pub fn mean(&self) -> DVector<f64> {
        let d = self.components[0].mean.len();
        self.responsibilities
            .iter()
            .zip(&self.components)
            .fold(DVector::zeros(d), |acc, (r, c)| acc + &c.mean * *r)
    }
}

impl GmmDenoiser {
    pub fn new(prior: GmmPrior) -> Result<Self> {
        let checked = GmmPrior::new(prior.weights, prior.means, prior.covs)?;
        Ok(Self { prior: checked })
    }

    pub fn prior(&self) -> &GmmPrior {
        &self.prior
    }

    /// Responsibilities `r_j ∝ w_j N(z; μ_j, Σ_j + η² I)` (log-space) and the
    /// per-component Gaussian conditionals.
    pub fn conditional(&self, z: &DVector<f64>, eta: f64) -> Result<MixtureConditional> {
        check_input(self.prior.dim(), z, eta)?;
        let d = self.prior.dim();
        let mut log_w = Vec::with_capacity(self.prior.weights.len());
        let mut components = Vec::with_capacity(self.prior.weights.len());
        for ((w, mu), sigma) in self.prior.weights.iter().zip(&self.prior.means).zip(&self.prior.covs) {
            let a = sigma + DMatrix::identity(d, d) * (eta * eta);
            let ch = Cholesky::new(a)
                .ok_or_else(|| Error::Numerical("Σ_j + η²I is not positive definite".into()))?;
            log_w.push(w.ln() + log_gaussian_density(z, mu, &ch));
            let mean = mu + sigma * ch.solve(&(z - mu));
            let cov = sigma - sigma * ch.solve(sigma);
            components.push(GaussianConditional { mean, cov });
        }
        Ok(MixtureConditional {
            responsibilities: softmax_log_weights(&log_w)?,
            components,
        })
    }
}

impl Denoiser for GmmDenoiser {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn denoise(&self, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
        Ok(self.conditional(z, eta)?.mean())
    }

    fn has_exact_conditional_sampler(&self) -> bool {
        true
    }

    fn sample_conditional(
        &self,
        z: &DVector<f64>,
        eta: f64,
        rng: &mut dyn RngCore,
    ) -> Result<DVector<f64>> {
        let c = self.conditional(z, eta)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = c.responsibilities.len() - 1;
        for (j, r) in c.responsibilities.iter().enumerate() {
            acc += r;
            if u < acc {
                pick = j;
                break;
            }
        }
        let comp = &c.components[pick];
        Ok(sample_with_factor(&comp.mean, &psd_sqrt(&comp.cov), rng))
    }
}

/// Hides the exact sampler of the wrapped denoiser so that conditional draws go
/// through the reverse diffusion.
pub struct ScoreOnly(pub Arc<dyn Denoiser>);

impl Denoiser for ScoreOnly {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn denoise(&self, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
        self.0.denoise(z, eta)
    }

    fn eta_range(&self) -> (f64, f64) {
        self.0.eta_range()
    }
}

/// Product-prior denoiser acting blockwise on a stacked vector.
pub struct BlockDenoiser {
    blocks: Vec<Arc<dyn Denoiser>>,
    dims: Vec<usize>,
}

impl BlockDenoiser {
    pub fn new(blocks: Vec<Arc<dyn Denoiser>>) -> Self {
        let dims = blocks.iter().map(|b| b.dim()).collect();
        Self { blocks, dims }
    }

    fn map_blocks<F>(&self, z: &DVector<f64>, mut f: F) -> Result<DVector<f64>>
    where
        F: FnMut(&dyn Denoiser, &DVector<f64>) -> Result<DVector<f64>>,
    {
        let parts = crate::linalg::split(z, &self.dims);
        let out: Result<Vec<DVector<f64>>> = self
            .blocks
            .iter()
            .zip(&parts)
            .map(|(b, p)| f(b.as_ref(), p))
            .collect();
        Ok(crate::linalg::concat(&out?))
    }
}

impl Denoiser for BlockDenoiser {
    fn dim(&self) -> usize {
        self.dims.iter().sum()
    }

    fn denoise(&self, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
        check_input(self.dim(), z, eta)?;
        self.map_blocks(z, |b, p| b.denoise(p, clamp_eta(b, eta)))
    }

    fn eta_range(&self) -> (f64, f64) {
        self.blocks.iter().fold((0.0, f64::INFINITY), |(lo, hi), b| {
            let (l, h) = b.eta_range();
            (lo.max(l), hi.min(h))
        })
    }

    fn has_exact_conditional_sampler(&self) -> bool {
        self.blocks.iter().all(|b| b.has_exact_conditional_sampler())
    }

    fn sample_conditional(
        &self,
        z: &DVector<f64>,
        eta: f64,
        rng: &mut dyn RngCore,
    ) -> Result<DVector<f64>> {
        check_input(self.dim(), z, eta)?;
        self.map_blocks(z, |b, p| b.sample_conditional(p, eta, rng))
    }
}

/// `E[s | s + η n = z]` for a Gaussian prior.
pub fn mmse_denoise_gaussian(prior: &GaussianPrior, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    GaussianDenoiser::new(prior.clone())?.denoise(z, eta)
}

/// `E[s | s + η n = z]` for a Gaussian mixture prior.
pub fn mmse_denoise_gmm(prior: &GmmPrior, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    GmmDenoiser::new(prior.clone())?.denoise(z, eta)
}

/// Tweedie score `(D(z; η) − z) / η²`, equal to `∇ log p_η(z)` when `D` is the
/// exact MMSE denoiser.
pub fn tweedie_score(den: &dyn Denoiser, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    let d = den.denoise(z, eta)?;
    Ok((d - z) / (eta * eta))
}

/// Exact draw from the denoising posterior of an analytic prior.
pub fn exact_conditional_sample(
    prior: &Prior,
    z: &DVector<f64>,
    eta: f64,
    rng: &mut dyn RngCore,
) -> Result<DVector<f64>> {
    match prior {
        Prior::Gaussian(g) => GaussianDenoiser::new(g.clone())?.sample_conditional(z, eta, rng),
        Prior::GaussianMixture(g) => GmmDenoiser::new(g.clone())?.sample_conditional(z, eta, rng),
        other => Err(Error::Denoiser(format!(
            "no exact conditional sampler for a {} prior",
            other.name()
        ))),
    }
}
