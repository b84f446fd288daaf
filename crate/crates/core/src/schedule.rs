//! Diffusion noise schedules and cosine annealing schedules.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default `ε` of the cosine annealing profile.
pub const DEFAULT_ANNEAL_EPS: f64 = 0.008;

/// Diffusion rate `g(t)` of the forward SDE `dx = g(t) dw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `g(t) = g0`, so `σ(t) = g0 √t`.
    Constant { g0: f64 },
    /// `g(t) = α^t`, so `σ(t)² = (α^{2t} − 1) / (2 ln α)`.
    Exponential { alpha: f64 },
}

/// Noise schedule on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(rename = "t_max")]
    pub t_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Exponential { alpha: 15.0 },
            t_max: 1.0,
        }
    }
}

impl NoiseSchedule {
    pub fn constant(g0: f64, t_max: f64) -> Result<Self> {
        Self::new(NoiseKind::Constant { g0 }, t_max)
    }

    pub fn exponential(alpha: f64, t_max: f64) -> Result<Self> {
        Self::new(NoiseKind::Exponential { alpha }, t_max)
    }

    pub fn new(kind: NoiseKind, t_max: f64) -> Result<Self> {
        let s = Self { kind, t_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::Parameter {
                name: "t_max",
                msg: format!("must be positive and finite, got {}", self.t_max),
            });
        }
        match self.kind {
            NoiseKind::Constant { g0 } if !(g0 > 0.0 && g0.is_finite()) => Err(Error::Parameter {
                name: "g0",
                msg: format!("must be positive, got {g0}"),
            }),
            NoiseKind::Exponential { alpha } if !(alpha > 1.0 && alpha.is_finite()) => {
                Err(Error::Parameter {
                    name: "alpha",
                    msg: format!("must exceed 1, got {alpha}"),
                })
            }
            _ => Ok(()),
        }
    }

    pub fn g(&self, t: f64) -> f64 {
        match self.kind {
            NoiseKind::Constant { g0 } => g0,
            NoiseKind::Exponential { alpha } => alpha.powf(t),
        }
    }

    fn sigma_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            NoiseKind::Constant { g0 } => g0 * t.sqrt(),
            NoiseKind::Exponential { alpha } => {
                let la = alpha.ln();
                ((2.0 * t * la).exp_m1() / (2.0 * la)).sqrt()
            }
        }
    }

    /// `σ(t) = √(∫₀ᵗ g(s)² ds)`.
    pub fn sigma(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::TimeOutOfRange { t, t_max: self.t_max });
        }
        Ok(self.sigma_unchecked(t))
    }

    /// `σ(T)`, the largest noise level the diffusion can represent.
    pub fn sigma_max(&self) -> f64 {
        self.sigma_unchecked(self.t_max)
    }

    /// `σ⁻¹(η)`.
    pub fn t_of_sigma(&self, eta: f64) -> Result<f64> {
        let sigma_max = self.sigma_max();
        if eta.is_nan() || eta < 0.0 {
            return Err(Error::Parameter {
                name: "eta",
                msg: format!("noise level must be nonnegative, got {eta}"),
            });
        }
        if eta > sigma_max * (1.0 + 1e-12) {
            return Err(Error::NoiseAboveTerminal { eta, sigma_max });
        }
        let t = match self.kind {
            NoiseKind::Constant { g0 } => (eta / g0).powi(2),
            NoiseKind::Exponential { alpha } => {
                let la = alpha.ln();
                (2.0 * eta * eta * la).ln_1p() / (2.0 * la)
            }
        };
        Ok(t.min(self.t_max))
    }
}

/// Cosine-shaped decay from `v_max` to `v_min` over `n` iterations.
///
/// The value is `v_min` exactly for every `i >= n - plateau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub v_max: f64,
    pub v_min: f64,
    pub n: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub plateau: usize,
}

fn default_eps() -> f64 {
    DEFAULT_ANNEAL_EPS
}

impl AnnealSchedule {
    pub fn new(v_max: f64, v_min: f64, n: usize) -> Result<Self> {
        let s = Self {
            v_max,
            v_min,
            n,
            eps: DEFAULT_ANNEAL_EPS,
            plateau: 0,
        };
        s.validate()?;
        Ok(s)
    }

    /// No annealing: the value is `v` at every iteration.
    pub fn constant(v: f64, n: usize) -> Self {
        Self {
            v_max: v,
            v_min: v,
            n,
            eps: DEFAULT_ANNEAL_EPS,
            plateau: 0,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_plateau(mut self, plateau: usize) -> Self {
        self.plateau = plateau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_min > 0.0 && self.v_max >= self.v_min && self.v_max.is_finite()) {
            return Err(Error::Parameter {
                name: "anneal",
                msg: format!(
                    "require v_max >= v_min > 0, got v_max={} v_min={}",
                    self.v_max, self.v_min
                ),
            });
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Parameter {
                name: "eps",
                msg: format!("must be nonnegative, got {}", self.eps),
            });
        }
        if self.plateau > self.n {
            return Err(Error::Parameter {
                name: "plateau",
                msg: format!("plateau {} exceeds iteration count {}", self.plateau, self.n),
            });
        }
        Ok(())
    }

    /// First iteration at which the value is frozen at `v_min`.
    pub fn frozen_from(&self) -> usize {
        self.n - self.plateau
    }

    pub fn value(&self, i: usize) -> f64 {
        let n_eff = self.frozen_from();
        if i >= n_eff || self.v_max == self.v_min {
            return self.v_min;
        }
        let frac = (i as f64 / n_eff as f64 + self.eps) / (1.0 + self.eps);
        let c = (frac * std::f64::consts::FRAC_PI_2).cos();
        (self.v_min + (self.v_max - self.v_min) * c * c).max(self.v_min)
    }
}
