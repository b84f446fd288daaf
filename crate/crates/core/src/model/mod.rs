//! Observation model `y = Σ_k H_k s_k + v`, its components and priors.

pub mod config;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::denoise::Denoiser;
use crate::linalg::{block_diag, spd_cholesky};
use crate::rng::{standard_normal_vec, stream_rng};
use crate::{Error, Result};

/// Tolerance on `Σ w_j = 1` for mixture weights.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Known linear map `H_k` from a component's space (dimension `d`) to the
/// observation space (dimension `m`).
///
/// Identity is a structural property, never a numerical test on a matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum SensingOp {
    Identity { dim: usize },
    Dense(DMatrix<f64>),
    /// `c · I`; requires `m = d`.
    Scaled { c: f64, dim: usize },
}

impl SensingOp {
    pub fn identity(dim: usize) -> Self {
        SensingOp::Identity { dim }
    }

    pub fn scaled(c: f64, dim: usize) -> Self {
        SensingOp::Scaled { c, dim }
    }

    pub fn dense(h: DMatrix<f64>) -> Self {
        SensingOp::Dense(h)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, SensingOp::Identity { .. })
    }

    /// Output dimension `m`.
    pub fn out_dim(&self) -> usize {
        match self {
            SensingOp::Identity { dim } | SensingOp::Scaled { dim, .. } => *dim,
            SensingOp::Dense(h) => h.nrows(),
        }
    }

    /// Input dimension `d`.
    pub fn in_dim(&self) -> usize {
        match self {
            SensingOp::Identity { dim } | SensingOp::Scaled { dim, .. } => *dim,
            SensingOp::Dense(h) => h.ncols(),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            SensingOp::Identity { .. } => x.clone(),
            SensingOp::Scaled { c, .. } => x * *c,
            SensingOp::Dense(h) => h * x,
        }
    }

    pub fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            SensingOp::Identity { .. } => y.clone(),
            SensingOp::Scaled { c, .. } => y * *c,
            SensingOp::Dense(h) => h.tr_mul(y),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SensingOp::Identity { dim } => DMatrix::identity(*dim, *dim),
            SensingOp::Scaled { c, dim } => DMatrix::identity(*dim, *dim) * *c,
            SensingOp::Dense(h) => h.clone(),
        }
    }

    /// `Hᵀ H`.
    pub fn gram(&self) -> DMatrix<f64> {
        match self {
            SensingOp::Identity { dim } => DMatrix::identity(*dim, *dim),
            SensingOp::Scaled { c, dim } => DMatrix::identity(*dim, *dim) * (c * c),
            SensingOp::Dense(h) => h.tr_mul(h),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "gaussian prior: mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        spd_cholesky(&cov, "prior covariance")?;
        Ok(Self { mean, cov })
    }

    /// `N(0, γ I)`.
    pub fn isotropic(dim: usize, gamma: f64) -> Result<Self> {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim) * gamma)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self> {
        let p = Self { weights, means, covs };
        let mut v = Vec::new();
        p.check(None, &mut v);
        match v.is_empty() {
            true => Ok(p),
            false => Err(Error::InvalidModel(ValidationReport { violations: v })),
        }
    }

    /// One-dimensional mixture from scalar parameters.
    pub fn scalar(weights: &[f64], means: &[f64], variances: &[f64]) -> Result<Self> {
        Self::new(
            weights.to_vec(),
            means.iter().map(|&m| DVector::from_element(1, m)).collect(),
            variances.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    fn check(&self, component: Option<usize>, out: &mut Vec<Violation>) {
        let mut push = |rule: String| out.push(Violation { component, rule });
        let j = self.weights.len();
        if j == 0 {
            push("mixture has no components".into());
            return;
        }
        if self.means.len() != j || self.covs.len() != j {
            push(format!(
                "mixture has {j} weights but {} means and {} covariances",
                self.means.len(),
                self.covs.len()
            ));
            return;
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > SIMPLEX_TOL {
            push(format!("weights not simplex (sum {total})"));
        }
        let d = self.dim();
        for (i, (m, c)) in self.means.iter().zip(&self.covs).enumerate() {
            if m.len() != d || c.nrows() != d || c.ncols() != d {
                push(format!("mixture component {i} has inconsistent dimensions"));
            } else if let Err(e) = spd_cholesky(c, "mixture covariance") {
                push(format!("mixture component {i}: {e}"));
            }
        }
    }
}

/// Prior knowledge for one component.
#[derive(Clone)]
pub enum Prior {
    Gaussian(GaussianPrior),
    GaussianMixture(GmmPrior),
    /// Penalty `λ ‖D s‖²` with `D` the forward-difference operator.
    SmoothnessMap { lambda: f64 },
    /// Penalty `λ ‖F s‖₁` with `F` the unitary DFT.
    FourierSparsityMap { lambda: f64 },
    /// Externally supplied denoiser (learned elsewhere).
    External(Arc<dyn Denoiser>),
}

impl fmt::Debug for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Gaussian(g) => f.debug_tuple("Gaussian").field(g).finish(),
            Prior::GaussianMixture(g) => f.debug_tuple("GaussianMixture").field(g).finish(),
            Prior::SmoothnessMap { lambda } => {
                f.debug_struct("SmoothnessMap").field("lambda", lambda).finish()
            }
            Prior::FourierSparsityMap { lambda } => f
                .debug_struct("FourierSparsityMap")
                .field("lambda", lambda)
                .finish(),
            Prior::External(d) => write!(f, "External(dim={})", d.dim()),
        }
    }
}

impl Prior {
    pub fn as_gaussian(&self) -> Option<&GaussianPrior> {
        match self {
            Prior::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Prior::Gaussian(_) => "gaussian",
            Prior::GaussianMixture(_) => "gmm",
            Prior::SmoothnessMap { .. } => "smooth",
            Prior::FourierSparsityMap { .. } => "fourier-l1",
            Prior::External(_) => "external",
        }
    }
}

/// One latent component `s_k`.
#[derive(Debug, Clone)]
pub struct ComponentSpec {
    pub dim: usize,
    pub sensing: SensingOp,
    pub prior: Prior,
    /// Relaxation level `η_k`; positive exactly when the sensing operator is
    /// not the identity.
    pub relax_eta: f64,
}

impl ComponentSpec {
    pub fn new(dim: usize, sensing: SensingOp, prior: Prior, relax_eta: f64) -> Self {
        Self {
            dim,
            sensing,
            prior,
            relax_eta,
        }
    }

    /// Identity-sensed component without relaxation.
    pub fn identity(dim: usize, prior: Prior) -> Self {
        Self::new(dim, SensingOp::identity(dim), prior, 0.0)
    }

    /// Whether this component carries an auxiliary variable.
    pub fn is_relaxed(&self) -> bool {
        !self.sensing.is_identity()
    }

    fn check(&self, k: usize, obs_dim: usize, out: &mut Vec<Violation>) {
        let mut push = |rule: String| {
            out.push(Violation {
                component: Some(k),
                rule,
            })
        };
        if self.dim == 0 {
            push("dimension must be positive".into());
        }
        if self.sensing.in_dim() != self.dim {
            push(format!(
                "sensing input dimension {} differs from component dimension {}",
                self.sensing.in_dim(),
                self.dim
            ));
        }
        if self.sensing.out_dim() != obs_dim {
            push(format!(
                "sensing output dimension {} differs from observation dimension {obs_dim}",
                self.sensing.out_dim()
            ));
        }
        match &self.sensing {
            SensingOp::Dense(h) if h.iter().any(|x| !x.is_finite()) => {
                push("dense sensing matrix has non-finite entries".into())
            }
            SensingOp::Scaled { c, .. } if !c.is_finite() => {
                push("scaled sensing factor is not finite".into())
            }
            _ => {}
        }
        if !(self.relax_eta >= 0.0 && self.relax_eta.is_finite()) {
            push(format!("relax_eta must be finite and >= 0, got {}", self.relax_eta));
        } else if self.sensing.is_identity() && self.relax_eta != 0.0 {
            push("relaxation not allowed for identity sensing (relax_eta must be 0)".into());
        } else if !self.sensing.is_identity() && self.relax_eta == 0.0 {
            push("relaxation required: non-identity sensing needs relax_eta > 0".into());
        }
        match &self.prior {
            Prior::Gaussian(g) => {
                if g.mean.len() != self.dim || g.cov.nrows() != self.dim || g.cov.ncols() != self.dim {
                    push(format!("gaussian prior dimension differs from {}", self.dim));
                } else if let Err(e) = spd_cholesky(&g.cov, "prior covariance") {
                    push(e.to_string());
                }
            }
            Prior::GaussianMixture(g) => {
                let before = out.len();
                g.check(Some(k), out);
                if out.len() == before && g.dim() != self.dim {
                    out.push(Violation {
                        component: Some(k),
                        rule: format!("mixture prior dimension {} differs from {}", g.dim(), self.dim),
                    });
                }
            }
            Prior::SmoothnessMap { lambda } | Prior::FourierSparsityMap { lambda } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    push(format!("lambda must be positive, got {lambda}"));
                }
            }
            Prior::External(d) => {
                if d.dim() != self.dim {
                    push(format!("external denoiser dimension {} differs from {}", d.dim(), self.dim));
                }
            }
        }
    }
}

/// The full observation model.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    pub components: Vec<ComponentSpec>,
    pub sigma_v: f64,
    pub obs_dim: usize,
}

/// A realization `y̆` of the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: DVector<f64>,
}

impl Observation {
    pub fn new(y: DVector<f64>) -> Self {
        Self { y }
    }

    pub fn check(&self, model: &MixtureModel) -> Result<()> {
        if self.y.len() != model.obs_dim {
            return Err(Error::Dimension(format!(
                "observation has length {} but the model expects {}",
                self.y.len(),
                model.obs_dim
            )));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("observation has non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub component: Option<usize>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.component {
            Some(k) => write!(f, "component {k}: {}", self.rule),
            None => write!(f, "model: {}", self.rule),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.rule.contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl MixtureModel {
    pub fn new(components: Vec<ComponentSpec>, sigma_v: f64, obs_dim: usize) -> Result<Self> {
        let m = Self {
            components,
            sigma_v,
            obs_dim,
        };
        validate_model(&m)?;
        Ok(m)
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.components.iter().map(|c| c.dim).sum()
    }

    /// Indices whose sensing operator is not the identity.
    pub fn relaxed_indices(&self) -> Vec<usize> {
        (0..self.components.len())
            .filter(|&k| self.components[k].is_relaxed())
            .collect()
    }

    /// `Σ_k H_k s_k`.
    pub fn forward(&self, s: &[DVector<f64>]) -> Result<DVector<f64>> {
        self.check_components(s)?;
        let mut out = DVector::zeros(self.obs_dim);
        for (c, sk) in self.components.iter().zip(s) {
            out += c.sensing.apply(sk);
        }
        Ok(out)
    }

    /// The stacked operator `[H_1 ⋯ H_K]`.
    pub fn stacked_sensing(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.obs_dim, self.total_dim());
        let mut off = 0;
        for c in &self.components {
            h.view_mut((0, off), (self.obs_dim, c.dim))
                .copy_from(&c.sensing.to_dense());
            off += c.dim;
        }
        h
    }

    pub fn check_components(&self, s: &[DVector<f64>]) -> Result<()> {
        if s.len() != self.components.len() {
            return Err(Error::Dimension(format!(
                "expected {} component vectors, got {}",
                self.components.len(),
                s.len()
            )));
        }
        for (k, (c, sk)) in self.components.iter().zip(s).enumerate() {
            if sk.len() != c.dim {
                return Err(Error::Dimension(format!(
                    "component {k} has length {} but dimension {}",
                    sk.len(),
                    c.dim
                )));
            }
        }
        Ok(())
    }

    /// Whether every prior is Gaussian.
    pub fn all_gaussian(&self) -> bool {
        self.components.iter().all(|c| c.prior.as_gaussian().is_some())
    }
}

/// Checks every model invariant and reports all violations at once.
pub fn validate_model(model: &MixtureModel) -> Result<()> {
    let mut v = Vec::new();
    if model.components.is_empty() {
        v.push(Violation {
            component: None,
            rule: "model needs at least one component".into(),
        });
    }
    if !(model.sigma_v > 0.0 && model.sigma_v.is_finite()) {
        v.push(Violation {
            component: None,
            rule: format!("sigma_v must be positive and finite, got {}", model.sigma_v),
        });
    }
    if model.obs_dim == 0 {
        v.push(Violation {
            component: None,
            rule: "observation dimension must be positive".into(),
        });
    }
    for (k, c) in model.components.iter().enumerate() {
        c.check(k, model.obs_dim, &mut v);
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidModel(ValidationReport { violations: v }))
    }
}

/// Draws `y = Σ H_k s̆_k + v`, `v ~ N(0, σ_v² I)`, deterministically from `seed`.
pub fn simulate_observation(
    model: &MixtureModel,
    true_components: &[DVector<f64>],
    seed: u64,
) -> Result<Observation> {
    let clean = model.forward(true_components)?;
    let mut rng = stream_rng(seed, 0);
    let noise = standard_normal_vec(model.obs_dim, &mut rng) * model.sigma_v;
    Ok(Observation::new(clean + noise))
}

/// Merges several components into one with block sensing `[H_a H_b ⋯]`.
///
/// The product prior is only representable when every part is Gaussian.
/// The stacked operator is never the identity, so `relax_eta` must be positive.
pub fn stack_components(parts: &[ComponentSpec], relax_eta: f64) -> Result<ComponentSpec> {
    if parts.is_empty() {
        return Err(Error::Dimension("nothing to stack".into()));
    }
    let m = parts[0].sensing.out_dim();
    if parts.iter().any(|p| p.sensing.out_dim() != m) {
        return Err(Error::Dimension("stacked parts have different output dimensions".into()));
    }
    let dim: usize = parts.iter().map(|p| p.dim).sum();
    let mut h = DMatrix::zeros(m, dim);
    let mut off = 0;
    for p in parts {
        h.view_mut((0, off), (m, p.dim)).copy_from(&p.sensing.to_dense());
        off += p.dim;
    }
    let gaussians: Option<Vec<&GaussianPrior>> = parts.iter().map(|p| p.prior.as_gaussian()).collect();
    let Some(gaussians) = gaussians else {
        return Err(Error::Parameter {
            name: "prior",
            msg: "stacking needs Gaussian priors on every part".into(),
        });
    };
    let means: Vec<DVector<f64>> = gaussians.iter().map(|g| g.mean.clone()).collect();
    let covs: Vec<&DMatrix<f64>> = gaussians.iter().map(|g| &g.cov).collect();
    let prior = GaussianPrior::new(crate::linalg::concat(&means), block_diag(&covs))?;
    Ok(ComponentSpec::new(
        dim,
        SensingOp::Dense(h),
        Prior::Gaussian(prior),
        relax_eta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(d: usize) -> Prior {
        Prior::Gaussian(GaussianPrior::isotropic(d, 1.0).unwrap())
    }

    #[test]
    fn valid_single_component() {
        let m = MixtureModel::new(vec![ComponentSpec::identity(2, gauss(2))], 1.0, 2);
        assert!(m.is_ok());
    }

    #[test]
    fn dense_without_relaxation_is_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let c = ComponentSpec::new(2, SensingOp::dense(h), gauss(2), 0.0);
        let err = MixtureModel::new(vec![c], 1.0, 2).unwrap_err();
        match err {
            Error::InvalidModel(r) => {
                assert!(r.mentions("relaxation required"));
                assert_eq!(r.violations[0].component, Some(0));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn identity_with_relaxation_is_rejected() {
        let c = ComponentSpec::new(2, SensingOp::identity(2), gauss(2), 0.1);
        assert!(MixtureModel::new(vec![c], 1.0, 2).is_err());
    }

    #[test]
    fn mixture_weights_must_be_simplex() {
        let p = GmmPrior {
            weights: vec![0.5, 0.6],
            means: vec![DVector::zeros(1), DVector::zeros(1)],
            covs: vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        };
        let c = ComponentSpec::identity(1, Prior::GaussianMixture(p));
        let err = MixtureModel::new(vec![c], 1.0, 1).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(ref r) if r.mentions("weights not simplex")));
        assert!(GmmPrior::scalar(&[0.5, 0.6], &[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn reports_every_violation() {
        let bad_cov = GaussianPrior {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        };
        let comps = vec![
            ComponentSpec::identity(2, Prior::Gaussian(bad_cov)),
            ComponentSpec::identity(3, gauss(3)),
        ];
        match MixtureModel::new(comps, -1.0, 2).unwrap_err() {
            Error::InvalidModel(r) => {
                assert!(r.violations.iter().any(|v| v.component.is_none()));
                assert!(r.violations.iter().any(|v| v.component == Some(0)));
                assert!(r.violations.iter().any(|v| v.component == Some(1)));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn relaxed_set_matches_sensing_kinds() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let comps = vec![
            ComponentSpec::identity(2, gauss(2)),
            ComponentSpec::new(2, SensingOp::dense(h), gauss(2), 0.1),
            ComponentSpec::new(2, SensingOp::scaled(1.0, 2), gauss(2), 0.2),
        ];
        let m = MixtureModel::new(comps, 1.0, 2).unwrap();
        assert_eq!(m.relaxed_indices(), vec![1, 2]);
    }

    #[test]
    fn dense_adjoint_identity() {
        let h = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
        let op = SensingOp::dense(h);
        let x = DVector::from_fn(4, |i, _| i as f64 - 1.5);
        let y = DVector::from_fn(3, |i, _| 2.0 * i as f64 + 0.5);
        let lhs = op.apply(&x).dot(&y);
        let rhs = x.dot(&op.apply_transpose(&y));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn simulate_zero_noise_limit() {
        let m = MixtureModel::new(vec![ComponentSpec::identity(2, gauss(2))], 1e-300, 2).unwrap();
        let s = DVector::from_vec(vec![1.0, 2.0]);
        let y = simulate_observation(&m, std::slice::from_ref(&s), 3).unwrap();
        assert!((y.y - s).amax() < 1e-200);

        let comps = vec![
            ComponentSpec::identity(2, gauss(2)),
            ComponentSpec::new(2, SensingOp::scaled(2.0, 2), gauss(2), 0.1),
        ];
        let m = MixtureModel::new(comps, 1e-300, 2).unwrap();
        let y = simulate_observation(
            &m,
            &[DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])],
            3,
        )
        .unwrap();
        assert!((y.y - DVector::from_vec(vec![1.0, 2.0])).amax() < 1e-200);
    }

    #[test]
    fn simulate_noise_variance() {
        let d = 10_000;
        let m = MixtureModel::new(vec![ComponentSpec::identity(d, Prior::SmoothnessMap { lambda: 1.0 })], 1.0, d)
            .unwrap();
        let s = DVector::from_fn(d, |i, _| (i as f64 * 0.01).sin());
        let y = simulate_observation(&m, std::slice::from_ref(&s), 11).unwrap();
        let r = &y.y - &s;
        let mean = r.mean();
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d as f64 - 1.0);
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
        let again = simulate_observation(&m, std::slice::from_ref(&s), 11).unwrap();
        assert_eq!(y, again);
    }

    #[test]
    fn simulate_rejects_wrong_dims() {
        let m = MixtureModel::new(vec![ComponentSpec::identity(2, gauss(2))], 1.0, 2).unwrap();
        assert!(matches!(
            simulate_observation(&m, &[DVector::zeros(3)], 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn stacking_gaussian_parts() {
        let a = ComponentSpec::identity(2, gauss(2));
        let b = ComponentSpec::new(2, SensingOp::scaled(2.0, 2), gauss(2), 0.1);
        let st = stack_components(&[a.clone(), b], 0.05).unwrap();
        assert_eq!(st.dim, 4);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(st.sensing.apply(&x), DVector::from_vec(vec![7.0, 10.0]));
        assert!(st.is_relaxed());
        let c = ComponentSpec::identity(2, Prior::SmoothnessMap { lambda: 1.0 });
        assert!(stack_components(&[a, c], 0.1).is_err());
    }
}
