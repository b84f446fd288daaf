//! The Diffusion-within-Gibbs sampler and the proximal-split baseline.
//!
//! One DiG sweep visits `k = 1..K` in order. For a component with
//! non-identity sensing (`k ∈ 𝓗`) it first redraws the auxiliary variable
//! `u_k` from its Gaussian conditional, then draws `s_k` from the denoising
//! posterior at level `η_k` with observation `u_k`. Identity-sensed
//! components draw `s_k` from the denoising posterior at level `σ_v` with the
//! residual as observation.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::RngCore;
use rayon::prelude::*;

use crate::denoise::{BlockDenoiser, Denoiser, GaussianConditional};
use crate::diffusion::{denoising_posterior_sample, SdeSolverConfig};
use crate::linalg::{concat, spd_cholesky, split};
use crate::model::{MixtureModel, Prior, SensingOp};
use crate::rng::{standard_normal_vec, stream_rng, ChainRng};
use crate::schedule::{AnnealSchedule, NoiseSchedule};
use crate::{Error, Result};

/// Relative tolerance for "the schedule ends at the nominal value".
const TERMINAL_TOL: f64 = 1e-12;

/// State of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub s: Vec<DVector<f64>>,
    /// `u_k` for `k ∈ 𝓗`, `None` elsewhere.
    pub u: Vec<Option<DVector<f64>>>,
    /// Completed sweeps.
    pub iter: usize,
    pub rng: ChainRng,
}

impl ChainState {
    /// State with the given components and `u_k = s_k` on `𝓗`.
    pub fn new(model: &MixtureModel, s: Vec<DVector<f64>>, rng: ChainRng) -> Result<Self> {
        model.check_components(&s)?;
        let u = model
            .components
            .iter()
            .zip(&s)
            .map(|(c, sk)| c.is_relaxed().then(|| sk.clone()))
            .collect();
        Ok(Self { s, u, iter: 0, rng })
    }

    /// State with explicit auxiliary variables.
    pub fn with_aux(
        model: &MixtureModel,
        s: Vec<DVector<f64>>,
        u: Vec<Option<DVector<f64>>>,
        rng: ChainRng,
    ) -> Result<Self> {
        model.check_components(&s)?;
        if u.len() != s.len() {
            return Err(Error::Dimension("one auxiliary slot per component required".into()));
        }
        for (k, (c, uk)) in model.components.iter().zip(&u).enumerate() {
            match (c.is_relaxed(), uk) {
                (true, Some(v)) if v.len() == c.dim => {}
                (false, None) => {}
                _ => {
                    return Err(Error::Dimension(format!(
                        "auxiliary variable of component {k} does not match its sensing kind"
                    )))
                }
            }
        }
        Ok(Self { s, u, iter: 0, rng })
    }

    pub fn stacked(&self) -> DVector<f64> {
        concat(&self.s)
    }
}

/// DiG parameters.
#[derive(Debug, Clone)]
pub struct DigConfig {
    pub sweeps: usize,
    pub anneal_sigma: AnnealSchedule,
    /// Per component; `Some` only on `𝓗`.
    pub anneal_eta: Vec<Option<AnnealSchedule>>,
    pub solver: SdeSolverConfig,
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

impl DigConfig {
    /// Nominal parameters at every sweep (no annealing).
    pub fn new(model: &MixtureModel, sweeps: usize) -> Self {
        Self {
            sweeps,
            anneal_sigma: AnnealSchedule::constant(model.sigma_v, sweeps),
            anneal_eta: model
                .components
                .iter()
                .map(|c| c.is_relaxed().then(|| AnnealSchedule::constant(c.relax_eta, sweeps)))
                .collect(),
            solver: SdeSolverConfig::default(),
            schedule: NoiseSchedule::default(),
            seed: 0,
        }
    }

    /// Anneals `σ_v` from `sigma_max` down to its nominal value.
    pub fn with_sigma_annealing(mut self, sigma_max: f64) -> Result<Self> {
        let a = self.anneal_sigma;
        self.anneal_sigma = AnnealSchedule::new(sigma_max, a.v_min, self.sweeps)?
            .with_eps(a.eps)
            .with_plateau(a.plateau);
        Ok(self)
    }

    /// Anneals `η_k` from `eta_max` down to its nominal value.
    pub fn with_eta_annealing(mut self, k: usize, eta_max: f64) -> Result<Self> {
        let slot = self.anneal_eta.get_mut(k).and_then(|s| s.as_mut()).ok_or(Error::Parameter {
            name: "eta_max",
            msg: format!("component {k} has no relaxation level to anneal"),
        })?;
        *slot = AnnealSchedule::new(eta_max, slot.v_min, self.sweeps)?
            .with_eps(slot.eps)
            .with_plateau(slot.plateau);
        Ok(self)
    }

    /// Sets the cosine offset `ε` on every schedule.
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.anneal_sigma.eps = eps;
        for a in self.anneal_eta.iter_mut().flatten() {
            a.eps = eps;
        }
        self
    }

    /// Freezes every schedule at its final value for the last `plateau` sweeps.
    pub fn with_plateau(mut self, plateau: usize) -> Self {
        self.anneal_sigma.plateau = plateau;
        for a in self.anneal_eta.iter_mut().flatten() {
            a.plateau = plateau;
        }
        self
    }

    pub fn with_solver(mut self, solver: SdeSolverConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_schedule(mut self, schedule: NoiseSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks that every schedule terminates at the model's nominal values.
    pub fn validate(&self, model: &MixtureModel) -> Result<()> {
        if self.sweeps == 0 {
            return Err(Error::Parameter {
                name: "sweeps",
                msg: "need at least one sweep".into(),
            });
        }
        self.solver.validate()?;
        self.schedule.validate()?;
        let nominal = |v: f64, target: f64| (v - target).abs() <= TERMINAL_TOL * target;
        self.anneal_sigma.validate()?;
        if !nominal(self.anneal_sigma.v_min, model.sigma_v) {
            return Err(Error::Parameter {
                name: "anneal_sigma",
                msg: format!(
                    "must end at sigma_v = {}, ends at {}",
                    model.sigma_v, self.anneal_sigma.v_min
                ),
            });
        }
        if self.anneal_eta.len() != model.num_components() {
            return Err(Error::Dimension("one eta schedule slot per component required".into()));
        }
        for (k, (c, a)) in model.components.iter().zip(&self.anneal_eta).enumerate() {
            match (c.is_relaxed(), a) {
                (true, Some(a)) => {
                    a.validate()?;
                    if !nominal(a.v_min, c.relax_eta) {
                        return Err(Error::Parameter {
                            name: "anneal_eta",
                            msg: format!("component {k} must end at eta = {}", c.relax_eta),
                        });
                    }
                }
                (false, None) => {}
                _ => {
                    return Err(Error::Parameter {
                        name: "anneal_eta",
                        msg: format!("component {k}: schedule present exactly on relaxed components"),
                    })
                }
            }
        }
        Ok(())
    }

    /// Effective `σ_v` at sweep `i` (1-based).
    pub fn sigma_at(&self, i: usize) -> f64 {
        self.anneal_sigma.value(i)
    }

    /// Effective `η_k` at sweep `i` (1-based); 0 off `𝓗`.
    pub fn eta_at(&self, k: usize, i: usize) -> f64 {
        self.anneal_eta[k].map_or(0.0, |a| a.value(i))
    }
}

/// Factorized precision `Σ_k⁻¹ = H_kᵀH_k/σ² + I/η²` of the `u_k` conditional.
#[derive(Clone)]
enum UFactor {
    /// `H_k = c I`; the precision is a multiple of the identity.
    Scalar(f64),
    Dense(Cholesky<f64, Dyn>),
}

impl UFactor {
    fn new(h: &SensingOp, sigma: f64, eta: f64) -> Result<Self> {
        let (s2, e2) = (sigma * sigma, eta * eta);
        match h {
            SensingOp::Identity { .. } => Ok(UFactor::Scalar(1.0 / s2 + 1.0 / e2)),
            SensingOp::Scaled { c, .. } => Ok(UFactor::Scalar(c * c / s2 + 1.0 / e2)),
            SensingOp::Dense(m) => {
                let d = m.ncols();
                let p = m.tr_mul(m) / s2 + DMatrix::identity(d, d) / e2;
                Ok(UFactor::Dense(spd_cholesky(&p, "auxiliary precision")?))
            }
        }
    }

    /// `(mean, draw)` of `N(P⁻¹ b, P⁻¹)`.
    fn draw(&self, b: &DVector<f64>, rng: &mut dyn RngCore) -> (DVector<f64>, DVector<f64>) {
        let eps = standard_normal_vec(b.len(), rng);
        match self {
            UFactor::Scalar(p) => {
                let mean = b / *p;
                let x = &mean + eps / p.sqrt();
                (mean, x)
            }
            UFactor::Dense(ch) => {
                let mean = ch.solve(b);
                let dev = ch
                    .l_dirty()
                    .tr_solve_lower_triangular(&eps)
                    .expect("Cholesky factor has a positive diagonal");
                let x = &mean + dev;
                (mean, x)
            }
        }
    }

    fn mean(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            UFactor::Scalar(p) => b / *p,
            UFactor::Dense(ch) => ch.solve(b),
        }
    }

    fn cov(&self, d: usize) -> DMatrix<f64> {
        match self {
            UFactor::Scalar(p) => DMatrix::identity(d, d) / *p,
            UFactor::Dense(ch) => ch.inverse(),
        }
    }
}

/// `y − Σ_{j∉𝓗, j≠k} s_j − Σ_{j∈𝓗, j≠k} H_j u_j`.
pub fn residual(model: &MixtureModel, y: &DVector<f64>, state: &ChainState, k: usize) -> DVector<f64> {
    let mut r = y.clone();
    for (j, c) in model.components.iter().enumerate() {
        if j == k {
            continue;
        }
        match &state.u[j] {
            Some(uj) => r -= c.sensing.apply(uj),
            None => r -= &state.s[j],
        }
    }
    r
}

fn u_rhs(model: &MixtureModel, k: usize, r: &DVector<f64>, s_k: &DVector<f64>, sigma: f64, eta: f64) -> DVector<f64> {
    model.components[k].sensing.apply_transpose(r) / (sigma * sigma) + s_k / (eta * eta)
}

fn require_relaxed(model: &MixtureModel, k: usize) -> Result<()> {
    match model.components.get(k) {
        Some(c) if c.is_relaxed() => Ok(()),
        _ => Err(Error::Parameter {
            name: "k",
            msg: format!("component {k} has identity sensing and no auxiliary variable"),
        }),
    }
}

/// Mean and covariance of `p(u_k | s_k, r)` at levels `(σ, η)`:
/// `Σ = (HᵀH/σ² + I/η²)⁻¹`, `μ = Σ (Hᵀ r/σ² + s_k/η²)`.
pub fn u_conditional(
    model: &MixtureModel,
    k: usize,
    r: &DVector<f64>,
    s_k: &DVector<f64>,
    sigma: f64,
    eta: f64,
) -> Result<GaussianConditional> {
    require_relaxed(model, k)?;
    let f = UFactor::new(&model.components[k].sensing, sigma, eta)?;
    let b = u_rhs(model, k, r, s_k, sigma, eta);
    Ok(GaussianConditional {
        mean: f.mean(&b),
        cov: f.cov(s_k.len()),
    })
}

/// Draws `u_k` from its conditional; the state is left unchanged apart from
/// its random stream.
pub fn update_u(
    model: &MixtureModel,
    y: &DVector<f64>,
    state: &mut ChainState,
    k: usize,
    sigma: f64,
    eta: f64,
) -> Result<DVector<f64>> {
    require_relaxed(model, k)?;
    let f = UFactor::new(&model.components[k].sensing, sigma, eta)?;
    let r = residual(model, y, state, k);
    let b = u_rhs(model, k, &r, &state.s[k], sigma, eta);
    Ok(f.draw(&b, &mut state.rng).1)
}

/// Draws `s_k` from the denoising posterior: at level `η` with observation
/// `u_k` on `𝓗`, at level `σ` with the residual otherwise.
#[allow(clippy::too_many_arguments)]
pub fn update_s(
    model: &MixtureModel,
    y: &DVector<f64>,
    state: &mut ChainState,
    k: usize,
    sigma: f64,
    eta: f64,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    solver: &SdeSolverConfig,
) -> Result<DVector<f64>> {
    match state.u[k].clone() {
        Some(uk) => denoising_posterior_sample(den, sched, solver, &uk, eta, &mut state.rng),
        None => {
            let r = residual(model, y, state, k);
            denoising_posterior_sample(den, sched, solver, &r, sigma, &mut state.rng)
        }
    }
}

/// Approximate posterior mean `s_k = ξ_k + Γ_k H_kᵀ Γ_y⁻¹ (y − Σ_j H_j ξ_j)`
/// with `Γ_y = Σ_j H_j Γ_j H_jᵀ + σ_v² I`.
pub fn initial_components(
    model: &MixtureModel,
    y: &DVector<f64>,
    hints: &[(DVector<f64>, DMatrix<f64>)],
) -> Result<Vec<DVector<f64>>> {
    if hints.len() != model.num_components() {
        return Err(Error::Dimension("one moment hint per component required".into()));
    }
    let m = model.obs_dim;
    let mut gamma_y = DMatrix::identity(m, m) * (model.sigma_v * model.sigma_v);
    let mut innovation = y.clone();
    let mut hs = Vec::with_capacity(hints.len());
    for (c, (xi, g)) in model.components.iter().zip(hints) {
        if xi.len() != c.dim || g.nrows() != c.dim || g.ncols() != c.dim {
            return Err(Error::Dimension("moment hint dimensions differ from the component".into()));
        }
        spd_cholesky(g, "moment hint covariance")?;
        let h = c.sensing.to_dense();
        gamma_y += &h * g * h.transpose();
        innovation -= &h * xi;
        hs.push(h);
    }
    let ch = spd_cholesky(&crate::linalg::symmetrize(&gamma_y), "observation covariance")?;
    let w = ch.solve(&innovation);
    Ok(hints
        .iter()
        .zip(&hs)
        .map(|((xi, g), h)| xi + g * h.tr_mul(&w))
        .collect())
}

/// Chain state at the approximate posterior mean, `u = s` on `𝓗`.
pub fn initialize(
    model: &MixtureModel,
    y: &DVector<f64>,
    hints: &[(DVector<f64>, DMatrix<f64>)],
    rng: ChainRng,
) -> Result<ChainState> {
    ChainState::new(model, initial_components(model, y, hints)?, rng)
}

/// First two moments of each prior, for initialization. Components without
/// analytic moments get `N(0, init_var[k] I)`.
pub fn moment_hints(model: &MixtureModel, init_var: &[f64]) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    model
        .components
        .iter()
        .enumerate()
        .map(|(k, c)| match &c.prior {
            Prior::Gaussian(g) => (g.mean.clone(), g.cov.clone()),
            Prior::GaussianMixture(g) => {
                let mean = g
                    .weights
                    .iter()
                    .zip(&g.means)
                    .fold(DVector::zeros(c.dim), |a, (w, m)| a + m * *w);
                let mut cov = DMatrix::zeros(c.dim, c.dim);
                for ((w, m), s) in g.weights.iter().zip(&g.means).zip(&g.covs) {
                    let dm = m - &mean;
                    cov += (s + &dm * dm.transpose()) * *w;
                }
                (mean, cov)
            }
            _ => {
                let v = init_var.get(k).copied().unwrap_or(1.0);
                (DVector::zeros(c.dim), DMatrix::identity(c.dim, c.dim) * v)
            }
        })
        .collect()
}

/// Effective parameters and cached factorizations for one sweep.
struct Level {
    sigma: f64,
    eta: Vec<f64>,
    ufac: Vec<Option<UFactor>>,
}

/// A DiG sampler bound to a model, an observation and a configuration.
/// Shared read-only across chains.
pub struct DigSampler<'a> {
    model: &'a MixtureModel,
    y: &'a DVector<f64>,
    cfg: &'a DigConfig,
    denoisers: Vec<Arc<dyn Denoiser>>,
    /// `levels[i - 1]` serves sweep `i`.
    levels: Vec<Arc<Level>>,
}

impl<'a> DigSampler<'a> {
    pub fn new(
        model: &'a MixtureModel,
        y: &'a DVector<f64>,
        cfg: &'a DigConfig,
        denoisers: Vec<Arc<dyn Denoiser>>,
    ) -> Result<Self> {
        crate::model::validate_model(model)?;
        cfg.validate(model)?;
        if y.len() != model.obs_dim {
            return Err(Error::Dimension(format!(
                "observation has length {}, model expects {}",
                y.len(),
                model.obs_dim
            )));
        }
        if denoisers.len() != model.num_components() {
            return Err(Error::Dimension("one denoiser per component required".into()));
        }
        for (k, (d, c)) in denoisers.iter().zip(&model.components).enumerate() {
            if d.dim() != c.dim {
                return Err(Error::Dimension(format!("denoiser {k} has the wrong dimension")));
            }
        }
        let mut levels: Vec<Arc<Level>> = Vec::with_capacity(cfg.sweeps);
        for i in 1..=cfg.sweeps {
            let sigma = cfg.sigma_at(i);
            let eta: Vec<f64> = (0..model.num_components()).map(|k| cfg.eta_at(k, i)).collect();
            if let Some(prev) = levels.last() {
                if prev.sigma == sigma && prev.eta == eta {
                    levels.push(prev.clone());
                    continue;
                }
            }
            let ufac = model
                .components
                .iter()
                .zip(&eta)
                .map(|(c, &e)| c.is_relaxed().then(|| UFactor::new(&c.sensing, sigma, e)).transpose())
                .collect::<Result<Vec<_>>>()?;
            levels.push(Arc::new(Level { sigma, eta, ufac }));
        }
        Ok(Self {
            model,
            y,
            cfg,
            denoisers,
            levels,
        })
    }

    /// Builds the analytic denoiser of every component's prior.
    pub fn with_prior_denoisers(model: &'a MixtureModel, y: &'a DVector<f64>, cfg: &'a DigConfig) -> Result<Self> {
        let dens = model
            .components
            .iter()
            .map(|c| crate::denoise::denoiser_for(&c.prior, c.dim))
            .collect::<Result<Vec<_>>>()?;
        Self::new(model, y, cfg, dens)
    }

    pub fn config(&self) -> &DigConfig {
        self.cfg
    }

    /// One sweep over `k = 1..K` at the parameters of sweep `state.iter + 1`
    /// (the final level once the schedule is exhausted).
    pub fn sweep(&self, state: &mut ChainState) -> Result<()> {
        let level = &self.levels[state.iter.min(self.levels.len() - 1)];
        for k in 0..self.model.num_components() {
            let c = &self.model.components[k];
            let r = residual(self.model, self.y, state, k);
            let den = self.denoisers[k].as_ref();
            let (z, noise) = match &level.ufac[k] {
                Some(f) => {
                    let eta = level.eta[k];
                    let b = u_rhs(self.model, k, &r, &state.s[k], level.sigma, eta);
                    let u = f.draw(&b, &mut state.rng).1;
                    state.u[k] = Some(u.clone());
                    (u, eta)
                }
                None => {
                    debug_assert!(!c.is_relaxed());
                    (r, level.sigma)
                }
            };
            state.s[k] = denoising_posterior_sample(
                den,
                &self.cfg.schedule,
                &self.cfg.solver,
                &z,
                noise,
                &mut state.rng,
            )?;
        }
        state.iter += 1;
        Ok(())
    }

    /// Runs the remaining sweeps of `state`.
    pub fn run(&self, mut state: ChainState) -> Result<ChainState> {
        while state.iter < self.cfg.sweeps {
            self.sweep(&mut state)?;
        }
        Ok(state)
    }

    /// Runs `chains` independent chains in parallel from the same starting
    /// components; chain `c` uses random stream `c` of the configured seed.
    pub fn run_chains(&self, chains: usize, start: &[DVector<f64>]) -> Result<Vec<ChainState>> {
        (0..chains)
            .into_par_iter()
            .map(|c| {
                let st = ChainState::new(self.model, start.to_vec(), stream_rng(self.cfg.seed, c as u64))?;
                self.run(st)
            })
            .collect()
    }
}

/// Runs DiG from `init` for `cfg.sweeps` sweeps.
pub fn dig_run(
    model: &MixtureModel,
    y: &DVector<f64>,
    cfg: &DigConfig,
    denoisers: Vec<Arc<dyn Denoiser>>,
    init: ChainState,
) -> Result<ChainState> {
    DigSampler::new(model, y, cfg, denoisers)?.run(init)
}

/// `‖y − Σ_k H_k s_k‖`.
pub fn misfit(model: &MixtureModel, y: &DVector<f64>, s: &[DVector<f64>]) -> Result<f64> {
    Ok((y - model.forward(s)?).norm())
}

/// Averages posterior samples. With `misfit_filter`, only samples whose
/// misfit is at or below the average misfit are kept.
pub fn posterior_mean(
    model: &MixtureModel,
    y: &DVector<f64>,
    samples: &[Vec<DVector<f64>>],
    misfit_filter: bool,
) -> Result<Vec<DVector<f64>>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let keep: Vec<&Vec<DVector<f64>>> = if misfit_filter {
        let mis = samples
            .iter()
            .map(|s| misfit(model, y, s))
            .collect::<Result<Vec<_>>>()?;
        let avg = mis.iter().sum::<f64>() / mis.len() as f64;
        samples.iter().zip(&mis).filter(|(_, &m)| m <= avg).map(|(s, _)| s).collect()
    } else {
        samples.iter().collect()
    };
    let n = keep.len() as f64;
    let mut mean: Vec<DVector<f64>> = model.dims().iter().map(|&d| DVector::zeros(d)).collect();
    for s in keep {
        model.check_components(s)?;
        for (m, sk) in mean.iter_mut().zip(s) {
            *m += sk;
        }
    }
    Ok(mean.into_iter().map(|m| m / n).collect())
}

/// Factorization of `HᵀH/σ² + I/η²` over the stacked variable.
enum SplitFactor {
    /// Every `H_k = c_k I` with a common dimension: one `K × K` precision
    /// shared by all coordinates.
    PerCoordinate { coef: Vec<f64>, chol: Cholesky<f64, Dyn> },
    Dense(Cholesky<f64, Dyn>),
}

/// The proximal-split baseline on the stacked variable `s = (s_1, …, s_K)`:
/// alternately `z ~ N(Σ(Hᵀy/σ² + s/η²), Σ)` and `s ~ p(s | s + η n = z)`.
/// It targets the posterior of the model in which every component is
/// perturbed by `N(0, η² I)`.
pub struct ProximalSplit<'a> {
    model: &'a MixtureModel,
    y: &'a DVector<f64>,
    cfg: &'a DigConfig,
    stacked: Arc<dyn Denoiser>,
    eta: f64,
    factors: Vec<(f64, Arc<SplitFactor>)>,
}

impl<'a> ProximalSplit<'a> {
    pub fn new(
        model: &'a MixtureModel,
        y: &'a DVector<f64>,
        cfg: &'a DigConfig,
        stacked: Arc<dyn Denoiser>,
        eta: f64,
    ) -> Result<Self> {
        crate::model::validate_model(model)?;
        if cfg.sweeps == 0 {
            return Err(Error::Parameter {
                name: "sweeps",
                msg: "need at least one sweep".into(),
            });
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Parameter {
                name: "eta",
                msg: format!("must be positive, got {eta}"),
            });
        }
        if stacked.dim() != model.total_dim() {
            return Err(Error::Dimension("stacked denoiser dimension differs from the model".into()));
        }
        let per_coord: Option<Vec<f64>> = model
            .components
            .iter()
            .map(|c| match c.sensing {
                SensingOp::Identity { dim } if dim == model.obs_dim => Some(1.0),
                SensingOp::Scaled { c, dim } if dim == model.obs_dim => Some(c),
                _ => None,
            })
            .collect();
        let h = per_coord.is_none().then(|| model.stacked_sensing());
        let mut factors: Vec<(f64, Arc<SplitFactor>)> = Vec::new();
        for i in 1..=cfg.sweeps {
            let sigma = cfg.sigma_at(i);
            if let Some((s, f)) = factors.last() {
                if *s == sigma {
                    factors.push((sigma, f.clone()));
                    continue;
                }
            }
            let (s2, e2) = (sigma * sigma, eta * eta);
            let f = match (&per_coord, &h) {
                (Some(coef), _) => {
                    let c = DVector::from_column_slice(coef);
                    let k = coef.len();
                    let p = &c * c.transpose() / s2 + DMatrix::identity(k, k) / e2;
                    SplitFactor::PerCoordinate {
                        coef: coef.clone(),
                        chol: spd_cholesky(&p, "split precision")?,
                    }
                }
                (None, Some(h)) => {
                    let d = h.ncols();
                    let p = h.tr_mul(h) / s2 + DMatrix::identity(d, d) / e2;
                    SplitFactor::Dense(spd_cholesky(&crate::linalg::symmetrize(&p), "split precision")?)
                }
                (None, None) => unreachable!(),
            };
            factors.push((sigma, Arc::new(f)));
        }
        Ok(Self {
            model,
            y,
            cfg,
            stacked,
            eta,
            factors,
        })
    }

    /// Stacked denoiser from each component's prior.
    pub fn with_prior_denoisers(
        model: &'a MixtureModel,
        y: &'a DVector<f64>,
        cfg: &'a DigConfig,
        eta: f64,
    ) -> Result<Self> {
        let blocks = model
            .components
            .iter()
            .map(|c| crate::denoise::denoiser_for(&c.prior, c.dim))
            .collect::<Result<Vec<_>>>()?;
        Self::new(model, y, cfg, Arc::new(BlockDenoiser::new(blocks)), eta)
    }

    fn gaussian_step(&self, sweep: usize, s: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        let (sigma, f) = &self.factors[sweep];
        let (s2, e2) = (sigma * sigma, self.eta * self.eta);
        match f.as_ref() {
            SplitFactor::PerCoordinate { coef, chol } => {
                let kk = coef.len();
                let m = self.model.obs_dim;
                let mut out = DVector::zeros(s.len());
                let l = chol.l_dirty();
                let mut b = DVector::zeros(kk);
                for j in 0..m {
                    for (k, c) in coef.iter().enumerate() {
                        b[k] = c * self.y[j] / s2 + s[k * m + j] / e2;
                    }
                    let mean = chol.solve(&b);
                    let eps = standard_normal_vec(kk, rng);
                    let dev = l.tr_solve_lower_triangular(&eps).expect("positive diagonal");
                    for k in 0..kk {
                        out[k * m + j] = mean[k] + dev[k];
                    }
                }
                out
            }
            SplitFactor::Dense(chol) => {
                let h = self.model.stacked_sensing();
                let b = h.tr_mul(self.y) / s2 + s / e2;
                let mean = chol.solve(&b);
                let eps = standard_normal_vec(s.len(), rng);
                mean + chol.l_dirty().tr_solve_lower_triangular(&eps).expect("positive diagonal")
            }
        }
    }

    /// Runs `cfg.sweeps` iterations from the stacked vector `init`.
    pub fn run(&self, init: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        if init.len() != self.model.total_dim() {
            return Err(Error::Dimension("initial stacked vector has the wrong length".into()));
        }
        let mut s = init.clone();
        for i in 0..self.cfg.sweeps {
            let z = self.gaussian_step(i, &s, rng);
            s = denoising_posterior_sample(
                self.stacked.as_ref(),
                &self.cfg.schedule,
                &self.cfg.solver,
                &z,
                self.eta,
                rng,
            )?;
        }
        Ok(s)
    }

    /// Parallel chains; chain `c` uses random stream `c` of the seed.
    pub fn run_chains(&self, chains: usize, init: &DVector<f64>) -> Result<Vec<Vec<DVector<f64>>>> {
        let dims = self.model.dims();
        (0..chains)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(self.cfg.seed, c as u64);
                Ok(split(&self.run(init, &mut rng)?, &dims))
            })
            .collect()
    }
}

/// Runs the proximal-split baseline from `init`.
pub fn proximal_split_run(
    model: &MixtureModel,
    y: &DVector<f64>,
    cfg: &DigConfig,
    stacked: Arc<dyn Denoiser>,
    eta: f64,
    init: &DVector<f64>,
    rng: &mut dyn RngCore,
) -> Result<DVector<f64>> {
    ProximalSplit::new(model, y, cfg, stacked, eta)?.run(init, rng)
}
