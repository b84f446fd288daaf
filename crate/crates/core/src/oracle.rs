//! Exact posteriors for analytic models and sample-discrepancy metrics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::denoise::{GaussianConditional, GmmDenoiser, MixtureConditional};
use crate::linalg::{block_diag, concat, psd_sqrt, spd_cholesky, symmetrize};
use crate::model::{GaussianPrior, MixtureModel, Prior};
use crate::rng::{standard_normal_vec, stream_rng};
use crate::{Error, Result};

/// A Gaussian law over a stacked vector with a block partition.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Block lengths, in stacking order.
    pub partition: Vec<usize>,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Offset of block `k`.
    pub fn offset(&self, k: usize) -> usize {
        self.partition[..k].iter().sum()
    }

    pub fn block_mean(&self, k: usize) -> DVector<f64> {
        self.mean.rows(self.offset(k), self.partition[k]).into_owned()
    }

    /// Marginal over the first `blocks` blocks.
    pub fn leading_marginal(&self, blocks: usize) -> GaussianPosterior {
        let n: usize = self.partition[..blocks].iter().sum();
        GaussianPosterior {
            mean: self.mean.rows(0, n).into_owned(),
            cov: self.cov.view((0, 0), (n, n)).into_owned(),
            partition: self.partition[..blocks].to_vec(),
        }
    }

    /// Reusable exact sampler.
    pub fn sampler(&self) -> GaussianSampler {
        GaussianSampler {
            mean: self.mean.clone(),
            factor: psd_sqrt(&self.cov),
        }
    }

    /// `n` draws on random stream `(seed, 0)`.
    pub fn draws(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let s = self.sampler();
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| s.sample(&mut rng)).collect()
    }
}

pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        &self.mean + &self.factor * standard_normal_vec(self.mean.len(), rng)
    }
}

/// Conditions `w ~ N(m, P)` on `y = G w + v`, `v ~ N(0, R)`.
fn condition(m: &DVector<f64>, p: &DMatrix<f64>, g: &DMatrix<f64>, r: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let pg = p * g.transpose();
    let s = symmetrize(&(g * &pg + r));
    let ch = spd_cholesky(&s, "observation covariance")?;
    let mean = m + &pg * ch.solve(&(y - g * m));
    let cov = symmetrize(&(p - &pg * ch.solve(&pg.transpose())));
    Ok((mean, cov))
}

fn gaussian_priors(model: &MixtureModel) -> Result<Vec<&GaussianPrior>> {
    model
        .components
        .iter()
        .enumerate()
        .map(|(k, c)| {
            c.prior.as_gaussian().ok_or_else(|| {
                Error::NoOracle(format!("component {k} has a {} prior", c.prior.name()))
            })
        })
        .collect()
}

fn check_y(model: &MixtureModel, y: &DVector<f64>) -> Result<()> {
    if y.len() != model.obs_dim {
        return Err(Error::Dimension(format!(
            "observation has length {}, model expects {}",
            y.len(),
            model.obs_dim
        )));
    }
    Ok(())
}

/// Exact `p(s_{1:K} | y)` for all-Gaussian priors.
pub fn gaussian_posterior_exact(model: &MixtureModel, y: &DVector<f64>) -> Result<GaussianPosterior> {
    let priors = gaussian_priors(model)?;
    check_y(model, y)?;
    let m = concat(&priors.iter().map(|p| p.mean.clone()).collect::<Vec<_>>());
    let p = block_diag(&priors.iter().map(|p| &p.cov).collect::<Vec<_>>());
    let h = model.stacked_sensing();
    let r = DMatrix::identity(model.obs_dim, model.obs_dim) * (model.sigma_v * model.sigma_v);
    let (mean, cov) = condition(&m, &p, &h, &r, y)?;
    Ok(GaussianPosterior {
        mean,
        cov,
        partition: model.dims(),
    })
}

/// Exact posterior of the relaxed model over `(s_1, …, s_K, u_𝓗)`, where
/// `u_k = s_k + N(0, η_k² I)` for `k ∈ 𝓗` and
/// `y = Σ_{k∉𝓗} s_k + Σ_{k∈𝓗} H_k u_k + v`.
///
/// `etas[k]` must be positive on `𝓗` and is ignored elsewhere. The `u`
/// blocks follow the `s` blocks in increasing `k`.
pub fn relaxed_posterior_exact(model: &MixtureModel, y: &DVector<f64>, etas: &[f64]) -> Result<GaussianPosterior> {
    let priors = gaussian_priors(model)?;
    check_y(model, y)?;
    if etas.len() != model.num_components() {
        return Err(Error::Dimension("one eta per component required".into()));
    }
    let relaxed = model.relaxed_indices();
    for &k in &relaxed {
        if !(etas[k] > 0.0) {
            return Err(Error::Parameter {
                name: "eta",
                msg: format!("relaxed component {k} needs eta > 0"),
            });
        }
    }
    let dims = model.dims();
    let ns = model.total_dim();
    let nu: usize = relaxed.iter().map(|&k| dims[k]).sum();
    let n = ns + nu;
    let s_off: Vec<usize> = (0..dims.len()).map(|k| dims[..k].iter().sum()).collect();

    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    let mut g = DMatrix::zeros(model.obs_dim, n);
    for (k, p) in priors.iter().enumerate() {
        let (o, d) = (s_off[k], dims[k]);
        mean.rows_mut(o, d).copy_from(&p.mean);
        cov.view_mut((o, o), (d, d)).copy_from(&p.cov);
    }
    let mut uo = ns;
    let mut partition = dims.clone();
    for (k, c) in model.components.iter().enumerate() {
        let (o, d) = (s_off[k], dims[k]);
        if c.is_relaxed() {
            let gam = &priors[k].cov;
            mean.rows_mut(uo, d).copy_from(&priors[k].mean);
            cov.view_mut((uo, o), (d, d)).copy_from(gam);
            cov.view_mut((o, uo), (d, d)).copy_from(gam);
            cov.view_mut((uo, uo), (d, d))
                .copy_from(&(gam + DMatrix::identity(d, d) * (etas[k] * etas[k])));
            g.view_mut((0, uo), (model.obs_dim, d)).copy_from(&c.sensing.to_dense());
            partition.push(d);
            uo += d;
        } else {
            g.view_mut((0, o), (model.obs_dim, d)).copy_from(&c.sensing.to_dense());
        }
    }
    let r = DMatrix::identity(model.obs_dim, model.obs_dim) * (model.sigma_v * model.sigma_v);
    let (mean, cov) = condition(&mean, &cov, &g, &r, y)?;
    Ok(GaussianPosterior { mean, cov, partition })
}

/// Exact posterior of the model in which every component is perturbed by
/// `N(0, η² I)` before sensing, i.e. `y = H (s + η n) + v`; the target of
/// the proximal-split sampler.
pub fn split_posterior_exact(model: &MixtureModel, y: &DVector<f64>, eta: f64) -> Result<GaussianPosterior> {
    let priors = gaussian_priors(model)?;
    check_y(model, y)?;
    let m = concat(&priors.iter().map(|p| p.mean.clone()).collect::<Vec<_>>());
    let p = block_diag(&priors.iter().map(|p| &p.cov).collect::<Vec<_>>());
    let h = model.stacked_sensing();
    let r = DMatrix::identity(model.obs_dim, model.obs_dim) * (model.sigma_v * model.sigma_v)
        + &h * h.transpose() * (eta * eta);
    let (mean, cov) = condition(&m, &p, &h, &r, y)?;
    Ok(GaussianPosterior {
        mean,
        cov,
        partition: model.dims(),
    })
}

/// Exact posterior of a single identity-sensed component with a
/// Gaussian-mixture prior: a denoising posterior at level `σ_v`.
pub fn gmm_posterior_exact(model: &MixtureModel, y: &DVector<f64>) -> Result<MixtureConditional> {
    check_y(model, y)?;
    match model.components.as_slice() {
        [c] if c.sensing.is_identity() => match &c.prior {
            Prior::GaussianMixture(g) => GmmDenoiser::new(g.clone())?.conditional(y, model.sigma_v),
            Prior::Gaussian(g) => {
                let m = crate::model::GmmPrior::new(vec![1.0], vec![g.mean.clone()], vec![g.cov.clone()])?;
                GmmDenoiser::new(m)?.conditional(y, model.sigma_v)
            }
            p => Err(Error::NoOracle(format!("{} prior has no closed-form posterior", p.name()))),
        },
        _ => Err(Error::NoOracle(
            "mixture oracle needs a single identity-sensed component".into(),
        )),
    }
}

impl MixtureConditional {
    /// Exact draw: component by responsibility, then its Gaussian.
    pub fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (j, r) in self.responsibilities.iter().enumerate() {
            acc += r;
            if u < acc {
                pick = j;
                break;
            }
        }
        let GaussianConditional { mean, cov } = &self.components[pick];
        mean + psd_sqrt(cov) * standard_normal_vec(mean.len(), rng)
    }
}

/// Sample mean and (unbiased) covariance.
pub fn sample_moments(samples: &[DVector<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::Dimension("samples have different lengths".into()));
    }
    let mean = samples.iter().fold(DVector::zeros(d), |a, s| a + s) / n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = s - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    Ok((mean, cov / denom))
}

/// Pairwise Euclidean distances of the pooled set `a ∪ b`.
fn pooled_distances(pool: &[&DVector<f64>]) -> Vec<f64> {
    let n = pool.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| (pool[i] - pool[j]).norm()).collect())
        .collect();
    rows.into_iter().flatten().collect()
}

/// V-statistic energy distance from a pooled distance matrix and labels.
fn energy_from_matrix(dist: &[f64], n: usize, in_a: &[bool]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        for j in 0..n {
            match (in_a[i], in_a[j]) {
                (true, true) => aa += row[j],
                (false, false) => bb += row[j],
                (true, false) => ab += row[j],
                (false, true) => {}
            }
        }
    }
    let na = in_a.iter().filter(|&&x| x).count() as f64;
    let nb = n as f64 - na;
    2.0 * ab / (na * nb) - aa / (na * na) - bb / (nb * nb)
}

/// `2 E‖X − Y‖ − E‖X − X'‖ − E‖Y − Y'‖` with V-statistic averages.
pub fn energy_distance(a: &[DVector<f64>], b: &[DVector<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    let pool: Vec<&DVector<f64>> = a.iter().chain(b).collect();
    let n = pool.len();
    let dist = pooled_distances(&pool);
    let labels: Vec<bool> = (0..n).map(|i| i < a.len()).collect();
    Ok(energy_from_matrix(&dist, n, &labels))
}

/// Energy distance with the 95% quantile of its permutation distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTest {
    pub statistic: f64,
    pub band95: f64,
}

impl EnergyTest {
    pub fn inside_band(&self) -> bool {
        self.statistic <= self.band95
    }
}

/// Permutation calibration of the energy distance between `a` and `b`.
pub fn energy_permutation_test(a: &[DVector<f64>], b: &[DVector<f64>], permutations: usize, seed: u64) -> Result<EnergyTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    let pool: Vec<&DVector<f64>> = a.iter().chain(b).collect();
    let n = pool.len();
    let dist = pooled_distances(&pool);
    let labels: Vec<bool> = (0..n).map(|i| i < a.len()).collect();
    let statistic = energy_from_matrix(&dist, n, &labels);
    let mut perms: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(seed, p as u64);
            let mut l = labels.clone();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                l.swap(i, j);
            }
            energy_from_matrix(&dist, n, &l)
        })
        .collect();
    perms.sort_by(f64::total_cmp);
    let idx = ((0.95 * permutations as f64).ceil() as usize).clamp(1, permutations.max(1)) - 1;
    let band95 = perms.get(idx).copied().unwrap_or(f64::INFINITY);
    Ok(EnergyTest { statistic, band95 })
}

/// Reference law for [`discrepancy`].
pub enum Reference<'a> {
    Gaussian(&'a GaussianPosterior),
    Samples(&'a [DVector<f64>]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscrepancyReport {
    /// `‖m̂ − m*‖ / ‖m*‖`.
    pub mean_err: f64,
    /// `‖Ĉ − C*‖_F / ‖C*‖_F`.
    pub cov_err: f64,
    pub energy_distance: f64,
    /// 95% permutation band of the energy distance.
    pub energy_band95: f64,
}

/// Permutations used by [`discrepancy`].
pub const DISCREPANCY_PERMUTATIONS: usize = 200;

/// Moment errors and energy distance of `samples` against `reference`.
/// Gaussian references are represented by as many fresh draws as there are
/// samples, on random stream `(seed, 0)`.
pub fn discrepancy(samples: &[DVector<f64>], reference: Reference<'_>, seed: u64) -> Result<DiscrepancyReport> {
    let (m_hat, c_hat) = sample_moments(samples)?;
    let fresh;
    let (m_ref, c_ref, ref_draws): (DVector<f64>, DMatrix<f64>, &[DVector<f64>]) = match reference {
        Reference::Gaussian(g) => {
            fresh = g.draws(samples.len(), seed);
            (g.mean.clone(), g.cov.clone(), &fresh)
        }
        Reference::Samples(s) => {
            let (m, c) = sample_moments(s)?;
            (m, c, s)
        }
    };
    if m_ref.len() != m_hat.len() {
        return Err(Error::Dimension("sample and reference dimensions differ".into()));
    }
    let test = energy_permutation_test(samples, ref_draws, DISCREPANCY_PERMUTATIONS, seed ^ 0x5eed)?;
    Ok(DiscrepancyReport {
        mean_err: (&m_hat - &m_ref).norm() / m_ref.norm(),
        cov_err: (&c_hat - &c_ref).norm() / c_ref.norm(),
        energy_distance: test.statistic,
        energy_band95: test.band95,
    })
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `E[s | y]` for a scalar Gaussian-mixture prior observed as `y = s + σ n`,
/// by adaptive Simpson on `[c ± 10 sd]` around the prior's extreme modes.
pub fn quadrature_posterior_mean(weights: &[f64], means: &[f64], vars: &[f64], y: f64, sigma: f64) -> f64 {
    let pdf = |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let joint = |s: f64| -> f64 {
        let prior: f64 = (0..weights.len()).map(|j| weights[j] * pdf(s, means[j], vars[j])).sum();
        prior * pdf(y, s, sigma * sigma)
    };
    let sd = vars.iter().fold(0.0f64, |a, v| a.max(v.sqrt()));
    let lo = means.iter().fold(f64::INFINITY, |a, &m| a.min(m)) - 10.0 * sd;
    let hi = means.iter().fold(f64::NEG_INFINITY, |a, &m| a.max(m)) + 10.0 * sd;
    let num = adaptive_simpson(&|s| s * joint(s), lo, hi, 1e-12);
    let den = adaptive_simpson(&joint, lo, hi, 1e-12);
    num / den
}
