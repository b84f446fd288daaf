//! TOML model description.
//!
//! ```toml
//! sigma_v = 0.5
//!
//! [schedule]            # optional; default exponential, alpha = 15, t_max = 1
//! kind = "exponential"
//! alpha = 15.0
//! t_max = 1.0
//!
//! [sampler]             # optional
//! sweeps = 50
//! steps = 200
//! grid = "uniform-sigma"   # uniform-t | uniform-sigma | geometric-sigma
//! rho = 1.0                # geometric-sigma only
//! anneal_sigma_max = 1.5   # omit to disable annealing of sigma_v
//! eps = 0.008
//! plateau = 0
//! misfit_filter = false
//!
//! [[components]]
//! dim = 4
//! relax_eta = 0.0          # > 0 exactly when sensing is not identity
//! eta_max = 0.3            # optional annealing start for relax_eta
//! init_var = 1.0           # initialization variance for non-Gaussian priors
//! sensing = { kind = "identity" }         # or scaled (c), dense (file | rows)
//! prior = { kind = "gaussian", mean = 0.0, var = 1.0 }
//!
//! [observation]
//! y = [0.1, 0.2, 0.3, 0.4]  # or file = "y.csv"
//!
//! [truth]                   # optional, enables RSE in summaries
//! components = [[...], [...]]
//! ```
//!
//! Priors: `gaussian` (`mean` scalar or list, one of `var`, `cov`,
//! `cov_file`), `gmm` (`weights`, `means`, one of `vars`, `covs`), `smooth`
//! and `fourier-l1` (`lambda`), `external` (`program`, `args`, `eta_min`,
//! `eta_max`). File paths are relative to the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::{ComponentSpec, GaussianPrior, GmmPrior, MixtureModel, Observation, Prior, SensingOp};
use crate::denoise::ExternalDenoiser;
use crate::diffusion::{GridRule, SdeSolverConfig};
use crate::schedule::{NoiseSchedule, DEFAULT_ANNEAL_EPS};
use crate::{Error, Result};

/// Sampler settings read from `[sampler]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSettings {
    pub sweeps: usize,
    pub solver: SdeSolverConfig,
    pub anneal_sigma_max: Option<f64>,
    pub eps: f64,
    pub plateau: usize,
    pub misfit_filter: bool,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            sweeps: 50,
            solver: SdeSolverConfig::default(),
            anneal_sigma_max: None,
            eps: DEFAULT_ANNEAL_EPS,
            plateau: 0,
            misfit_filter: false,
        }
    }
}

/// A fully parsed run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: MixtureModel,
    pub observation: Observation,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerSettings,
    /// Annealing start for each relaxation level; `None` disables it.
    pub eta_max: Vec<Option<f64>>,
    /// Initialization variance for components without Gaussian moments.
    pub init_var: Vec<f64>,
    pub truth: Option<Vec<DVector<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    sigma_v: f64,
    #[serde(default)]
    schedule: Option<NoiseSchedule>,
    #[serde(default)]
    sampler: Option<RawSampler>,
    components: Vec<RawComponent>,
    observation: RawObservation,
    #[serde(default)]
    truth: Option<RawTruth>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampler {
    sweeps: Option<usize>,
    steps: Option<usize>,
    grid: Option<String>,
    rho: Option<f64>,
    anneal_sigma_max: Option<f64>,
    eps: Option<f64>,
    plateau: Option<usize>,
    misfit_filter: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComponent {
    dim: usize,
    #[serde(default)]
    relax_eta: f64,
    eta_max: Option<f64>,
    init_var: Option<f64>,
    sensing: RawSensing,
    prior: RawPrior,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum RawSensing {
    Identity,
    Scaled { c: f64 },
    Dense { file: Option<String>, rows: Option<Vec<Vec<f64>>> },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScalarOrVec {
    Scalar(f64),
    Vec(Vec<f64>),
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum RawPrior {
    Gaussian {
        mean: Option<ScalarOrVec>,
        var: Option<f64>,
        cov: Option<Vec<Vec<f64>>>,
        cov_file: Option<String>,
    },
    Gmm {
        weights: Vec<f64>,
        means: Vec<ScalarOrVec>,
        vars: Option<Vec<f64>>,
        covs: Option<Vec<Vec<Vec<f64>>>>,
    },
    Smooth { lambda: f64 },
    FourierL1 { lambda: f64 },
    External {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        eta_min: Option<f64>,
        eta_max: Option<f64>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObservation {
    y: Option<Vec<f64>>,
    file: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTruth {
    components: Vec<Vec<f64>>,
}

fn cfg_err(key: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

/// Best-effort key extraction from a TOML error message.
pub fn toml_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let key = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".to_string());
    cfg_err(key, e.to_string().trim().to_string())
}

/// Reads a comma-separated numeric matrix, one row per line.
pub fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| cfg_err(path.display().to_string(), e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| cfg_err(path.display().to_string(), e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| cfg_err(path.display().to_string(), format!("row {}: {e}", rows.len())))?;
        rows.push(row);
    }
    rows_to_matrix(&rows, &path.display().to_string())
}

fn rows_to_matrix(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if nr == 0 || nc == 0 {
        return Err(cfg_err(key, "matrix is empty"));
    }
    if rows.iter().any(|r| r.len() != nc) {
        return Err(cfg_err(key, "rows have different lengths"));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn vector_of(v: &ScalarOrVec, dim: usize, key: &str) -> Result<DVector<f64>> {
    match v {
        ScalarOrVec::Scalar(x) => Ok(DVector::from_element(dim, *x)),
        ScalarOrVec::Vec(xs) if xs.len() == dim => Ok(DVector::from_column_slice(xs)),
        ScalarOrVec::Vec(xs) => Err(cfg_err(key, format!("expected {dim} values, got {}", xs.len()))),
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Parses a config; relative file paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(toml_error)?;
        let resolve = |f: &str| -> PathBuf { base.join(f) };

        if !(raw.sigma_v > 0.0 && raw.sigma_v.is_finite()) {
            return Err(cfg_err("sigma_v", format!("must be positive, got {}", raw.sigma_v)));
        }
        if raw.components.is_empty() {
            return Err(cfg_err("components", "at least one component is required"));
        }

        let y = match (&raw.observation.y, &raw.observation.file) {
            (Some(y), None) => DVector::from_column_slice(y),
            (None, Some(f)) => {
                let m = read_csv_matrix(&resolve(f))?;
                DVector::from_iterator(m.len(), m.transpose().iter().copied())
            }
            _ => return Err(cfg_err("observation", "give exactly one of `y` or `file`")),
        };
        let obs_dim = y.len();

        let mut components = Vec::new();
        let mut eta_max = Vec::new();
        let mut init_var = Vec::new();
        for (k, c) in raw.components.iter().enumerate() {
            let key = |field: &str| format!("components[{k}].{field}");
            let d = c.dim;
            let sensing = match &c.sensing {
                RawSensing::Identity => SensingOp::identity(d),
                RawSensing::Scaled { c } => SensingOp::scaled(*c, d),
                RawSensing::Dense { file, rows } => SensingOp::dense(match (file, rows) {
                    (Some(f), None) => read_csv_matrix(&resolve(f))?,
                    (None, Some(r)) => rows_to_matrix(r, &key("sensing.rows"))?,
                    _ => return Err(cfg_err(key("sensing"), "dense sensing needs exactly one of `file` or `rows`")),
                }),
            };
            let prior = match &c.prior {
                RawPrior::Gaussian { mean, var, cov, cov_file } => {
                    let mean = match mean {
                        Some(m) => vector_of(m, d, &key("prior.mean"))?,
                        None => DVector::zeros(d),
                    };
                    let cov = match (var, cov, cov_file) {
                        (Some(v), None, None) => DMatrix::identity(d, d) * *v,
                        (None, Some(rows), None) => rows_to_matrix(rows, &key("prior.cov"))?,
                        (None, None, Some(f)) => read_csv_matrix(&resolve(f))?,
                        _ => {
                            return Err(cfg_err(
                                key("prior"),
                                "gaussian prior needs exactly one of `var`, `cov`, `cov_file`",
                            ))
                        }
                    };
                    if cov.nrows() != d || cov.ncols() != d {
                        return Err(cfg_err(key("prior.cov"), format!("expected {d}x{d}")));
                    }
                    Prior::Gaussian(
                        GaussianPrior::new(mean, cov).map_err(|e| cfg_err(key("prior.cov"), e.to_string()))?,
                    )
                }
                RawPrior::Gmm { weights, means, vars, covs } => {
                    let means = means
                        .iter()
                        .map(|m| vector_of(m, d, &key("prior.means")))
                        .collect::<Result<Vec<_>>>()?;
                    let covs = match (vars, covs) {
                        (Some(v), None) => v.iter().map(|x| DMatrix::identity(d, d) * *x).collect(),
                        (None, Some(c)) => c
                            .iter()
                            .map(|r| rows_to_matrix(r, &key("prior.covs")))
                            .collect::<Result<Vec<_>>>()?,
                        _ => return Err(cfg_err(key("prior"), "gmm prior needs exactly one of `vars`, `covs`")),
                    };
                    Prior::GaussianMixture(
                        GmmPrior::new(weights.clone(), means, covs)
                            .map_err(|e| cfg_err(key("prior"), e.to_string()))?,
                    )
                }
                RawPrior::Smooth { lambda } => Prior::SmoothnessMap { lambda: *lambda },
                RawPrior::FourierL1 { lambda } => Prior::FourierSparsityMap { lambda: *lambda },
                RawPrior::External {
                    program,
                    args,
                    eta_min,
                    eta_max,
                } => {
                    let den = ExternalDenoiser::spawn(program, args, d)
                        .map_err(|e| cfg_err(key("prior.program"), e.to_string()))?
                        .with_eta_range(eta_min.unwrap_or(0.0), eta_max.unwrap_or(f64::INFINITY));
                    Prior::External(Arc::new(den))
                }
            };
            if let Some(e) = c.eta_max {
                if !(e >= c.relax_eta && c.relax_eta > 0.0) {
                    return Err(cfg_err(key("eta_max"), "needs relax_eta > 0 and eta_max >= relax_eta"));
                }
            }
            eta_max.push(c.eta_max);
            let iv = c.init_var.unwrap_or(1.0);
            if !(iv > 0.0) {
                return Err(cfg_err(key("init_var"), "must be positive"));
            }
            init_var.push(iv);
            components.push(ComponentSpec::new(d, sensing, prior, c.relax_eta));
        }

        let model = MixtureModel::new(components, raw.sigma_v, obs_dim).map_err(|e| match e {
            Error::InvalidModel(r) => {
                let key = r.violations[0]
                    .component
                    .map_or("model".to_string(), |k| format!("components[{k}]"));
                cfg_err(key, r.to_string())
            }
            e => e,
        })?;

        let schedule = raw.schedule.unwrap_or_default();
        schedule.validate().map_err(|e| cfg_err("schedule", e.to_string()))?;

        let mut sampler = SamplerSettings::default();
        if let Some(s) = raw.sampler {
            if let Some(n) = s.sweeps {
                sampler.sweeps = n;
            }
            if let Some(m) = s.steps {
                sampler.solver.steps = m;
            }
            sampler.solver.grid = match s.grid.as_deref() {
                None | Some("uniform-sigma") => GridRule::UniformSigma,
                Some("uniform-t") => GridRule::UniformT,
                Some("geometric-sigma") => GridRule::GeometricSigma {
                    rho: s.rho.unwrap_or(1.0),
                },
                Some(other) => {
                    return Err(cfg_err(
                        "sampler.grid",
                        format!("unknown grid `{other}`; expected uniform-t, uniform-sigma or geometric-sigma"),
                    ))
                }
            };
            sampler.anneal_sigma_max = s.anneal_sigma_max;
            sampler.eps = s.eps.unwrap_or(DEFAULT_ANNEAL_EPS);
            sampler.plateau = s.plateau.unwrap_or(0);
            sampler.misfit_filter = s.misfit_filter.unwrap_or(false);
        }
        if sampler.sweeps == 0 {
            return Err(cfg_err("sampler.sweeps", "must be at least 1"));
        }
        sampler
            .solver
            .validate()
            .map_err(|e| cfg_err("sampler.steps", e.to_string()))?;
        if let Some(m) = sampler.anneal_sigma_max {
            if !(m >= model.sigma_v) {
                return Err(cfg_err("sampler.anneal_sigma_max", "must be >= sigma_v"));
            }
        }
        if sampler.plateau > sampler.sweeps {
            return Err(cfg_err("sampler.plateau", "exceeds sweeps"));
        }

        let truth = match raw.truth {
            None => None,
            Some(t) => {
                let v: Vec<DVector<f64>> = t.components.iter().map(|c| DVector::from_column_slice(c)).collect();
                model
                    .check_components(&v)
                    .map_err(|e| cfg_err("truth.components", e.to_string()))?;
                Some(v)
            }
        };

        Ok(Self {
            model,
            observation: Observation::new(y),
            schedule,
            sampler,
            eta_max,
            init_var,
            truth,
        })
    }
}
