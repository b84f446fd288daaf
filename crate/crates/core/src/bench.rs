//! Synthetic heartbeat/motion separation benchmark.
//!
//! A unit-RMS heartbeat surrogate `s₁` (harmonic, band-limited) is mixed with
//! a unit-RMS motion artifact `s₂` (integrated piecewise-constant velocity)
//! and white noise at prescribed SIR/SNR levels, then separated with DiG or
//! the proximal-split baseline using MAP denoisers: Fourier-ℓ₁ for the
//! heartbeat and smoothness for the motion.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::denoise::{BlockDenoiser, Denoiser, FourierL1Denoiser, SmoothMapDenoiser};
use crate::diffusion::{GridRule, SdeSolverConfig};
use crate::linalg::{concat, split};
use crate::model::{ComponentSpec, MixtureModel, Prior};
use crate::rng::{standard_normal_vec, stream_rng, substream_rng};
use crate::sampler::{posterior_mean, ChainState, DigConfig, DigSampler, ProximalSplit};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

/// The nine (SIR, SNR) conditions, in dB.
pub const DEFAULT_GRID: [(f64, f64); 9] = [
    (-20.1, 13.2),
    (-20.1, -0.8),
    (-20.1, -6.8),
    (-26.1, 13.2),
    (-26.1, -0.8),
    (-26.1, -6.8),
    (-40.1, 13.2),
    (-40.1, -0.8),
    (-40.1, -6.8),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeartbeatGenConfig {
    pub length: usize,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Range of the fundamental, in Hz.
    pub fundamental: (f64, f64),
    pub harmonics: usize,
    /// Amplitude ratio between consecutive harmonics.
    pub harmonic_decay: f64,
    /// Passband, in Hz.
    pub band: (f64, f64),
    /// Relative standard deviation of the per-beat amplitude.
    pub jitter: f64,
}

impl Default for HeartbeatGenConfig {
    fn default() -> Self {
        Self {
            length: 1000,
            dt: 0.01,
            fundamental: (1.0, 1.5),
            harmonics: 3,
            harmonic_decay: 0.5,
            band: (0.8, 3.0),
            jitter: 0.15,
        }
    }
}

impl HeartbeatGenConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = 0.5 / self.dt;
        let bad = |msg: String| Err(Error::Parameter { name: "heartbeat", msg });
        if self.length == 0 || !(self.dt > 0.0) {
            return bad("length and dt must be positive".into());
        }
        if !(0.0 < self.band.0 && self.band.0 < self.band.1 && self.band.1 < nyquist) {
            return bad(format!("band {:?} must lie inside (0, {nyquist})", self.band));
        }
        if !(0.0 < self.fundamental.0 && self.fundamental.0 <= self.fundamental.1) {
            return bad("fundamental range must be positive and ordered".into());
        }
        if self.harmonics == 0 || !(self.jitter >= 0.0) || !(self.harmonic_decay > 0.0) {
            return bad("need at least one harmonic, jitter >= 0, decay > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionGenConfig {
    pub length: usize,
    pub dt: f64,
    /// Inclusive range of the number of constant-velocity segments.
    pub segments: (usize, usize),
    /// Velocities are drawn uniformly from `[-max_velocity, max_velocity]`.
    pub max_velocity: f64,
    /// Width of the sigmoidal velocity transitions, in seconds.
    pub transition: f64,
}

impl Default for MotionGenConfig {
    fn default() -> Self {
        Self {
            length: 1000,
            dt: 0.01,
            segments: (2, 5),
            max_velocity: 1.0,
            transition: 0.4,
        }
    }
}

impl MotionGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0
            || !(self.dt > 0.0)
            || self.segments.0 == 0
            || self.segments.0 > self.segments.1
            || !(self.max_velocity > 0.0)
            || !(self.transition > 0.0)
        {
            return Err(Error::Parameter {
                name: "motion",
                msg: "invalid motion generator settings".into(),
            });
        }
        Ok(())
    }
}

fn unit_rms(mut x: DVector<f64>) -> DVector<f64> {
    let rms = (x.norm_squared() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x /= rms;
    }
    x
}

/// Zeroes every DFT bin whose frequency lies outside `[lo, hi]` Hz.
pub fn bandpass(x: &DVector<f64>, dt: f64, lo: f64, hi: f64) -> DVector<f64> {
    let n = x.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 / (n as f64 * dt);
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    DVector::from_iterator(n, buf.iter().map(|c| c.re / n as f64))
}

/// Fraction of DFT power (excluding DC) in bins with frequency in `[lo, hi]` Hz.
pub fn spectral_fraction(x: &DVector<f64>, dt: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (mut inside, mut total) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().skip(1) {
        let f = k.min(n - k) as f64 / (n as f64 * dt);
        let p = c.norm_sqr();
        total += p;
        if (lo..=hi).contains(&f) {
            inside += p;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

/// Harmonic heartbeat surrogate with per-beat amplitude jitter, bandpassed
/// and normalized to unit RMS.
pub fn gen_heartbeat(cfg: &HeartbeatGenConfig, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
    cfg.validate()?;
    let (lo, hi) = cfg.fundamental;
    let f0 = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let phase0: f64 = rng.random_range(0.0..1.0);
    let phases: Vec<f64> = (0..cfg.harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let beats = (cfg.length as f64 * cfg.dt * f0).ceil() as usize + 2;
    let amps: Vec<f64> = (0..beats)
        .map(|_| {
            let g: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            (1.0 + cfg.jitter * g).max(0.1)
        })
        .collect();
    let x = DVector::from_fn(cfg.length, |i, _| {
        let t = i as f64 * cfg.dt;
        let beat = (f0 * t + phase0).floor() as usize;
        let wave: f64 = (0..cfg.harmonics)
            .map(|h| {
                let hf = (h + 1) as f64;
                cfg.harmonic_decay.powi(h as i32) * (2.0 * PI * hf * f0 * t + phases[h]).cos()
            })
            .sum();
        amps[beat.min(beats - 1)] * wave
    });
    Ok(unit_rms(bandpass(&x, cfg.dt, cfg.band.0, cfg.band.1)))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Motion artifact: piecewise-constant velocity with sigmoidal transitions,
/// integrated, mean-removed and normalized to unit RMS.
pub fn gen_motion(cfg: &MotionGenConfig, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
    cfg.validate()?;
    let n_seg = rng.random_range(cfg.segments.0..=cfg.segments.1);
    let duration = cfg.length as f64 * cfg.dt;
    let mut bounds: Vec<f64> = (1..n_seg).map(|_| rng.random_range(0.0..duration)).collect();
    bounds.sort_by(f64::total_cmp);
    let vel: Vec<f64> = (0..n_seg)
        .map(|_| rng.random_range(-cfg.max_velocity..=cfg.max_velocity))
        .collect();
    let velocity = |t: f64| -> f64 {
        let mut v = vel[0];
        for (j, b) in bounds.iter().enumerate() {
            v += (vel[j + 1] - vel[j]) * logistic((t - b) / cfg.transition);
        }
        v
    };
    let mut pos = DVector::zeros(cfg.length);
    let mut acc = 0.0;
    for i in 0..cfg.length {
        acc += velocity(i as f64 * cfg.dt) * cfg.dt;
        pos[i] = acc;
    }
    let mean = pos.mean();
    pos.add_scalar_mut(-mean);
    Ok(unit_rms(pos))
}

/// A mixed instance.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub y: DVector<f64>,
    pub s1: DVector<f64>,
    pub s2: DVector<f64>,
    pub noise: DVector<f64>,
    /// Standard deviation of the noise law, `√power(v)`.
    pub sigma_v: f64,
}

fn power(x: &DVector<f64>) -> f64 {
    x.norm_squared() / x.len() as f64
}

/// Scales `s₂` and fresh white noise so that `power(s₁)/power(s₂)` is
/// `10^{SIR/10}` and `power(s₁)/power(v)` is `10^{SNR/10}`; `s₁` is kept
/// unchanged. `snr_db = ∞` gives no noise.
pub fn mix_at_levels(s1: &DVector<f64>, s2: &DVector<f64>, sir_db: f64, snr_db: f64, rng: &mut dyn RngCore) -> Result<Mixture> {
    if s1.len() != s2.len() {
        return Err(Error::Dimension("heartbeat and motion lengths differ".into()));
    }
    let (p1, p2) = (power(s1), power(s2));
    if !(p1 > 0.0 && p2 > 0.0) {
        return Err(Error::Parameter {
            name: "signal",
            msg: "signals must have positive power".into(),
        });
    }
    let s2 = s2 * (p1 / (p2 * 10f64.powf(sir_db / 10.0))).sqrt();
    let pv = p1 / 10f64.powf(snr_db / 10.0);
    let noise = if pv > 0.0 {
        let n = standard_normal_vec(s1.len(), rng);
        let pn = power(&n);
        n * (pv / pn).sqrt()
    } else {
        DVector::zeros(s1.len())
    };
    Ok(Mixture {
        y: s1 + &s2 + &noise,
        s1: s1.clone(),
        s2,
        noise,
        sigma_v: pv.sqrt(),
    })
}

/// `Σ‖ŝ − s‖² / Σ‖s‖²` over instances.
pub fn rse(estimates: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::EmptySamples);
    }
    if estimates.len() != truths.len() {
        return Err(Error::Dimension("estimate and truth counts differ".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (e, t) in estimates.iter().zip(truths) {
        if e.len() != t.len() {
            return Err(Error::Dimension("estimate and truth lengths differ".into()));
        }
        num += (e - t).norm_squared();
        den += t.norm_squared();
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dig,
    Proxsplit,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Dig, Method::Proxsplit];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dig => "dig",
            Method::Proxsplit => "proxsplit",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Config {
            key: "methods".into(),
            msg: format!(
                "unknown method `{s}`; valid methods: {}",
                Method::ALL.map(|m| m.name()).join(", ")
            ),
        })
    }
}

/// Benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub instances: usize,
    /// `(SIR, SNR)` pairs in dB.
    pub grid: Vec<(f64, f64)>,
    pub chains: usize,
    pub sweeps: usize,
    pub steps: usize,
    /// `σ_v` is annealed from `anneal_factor · σ_v` down to `σ_v`.
    pub anneal_factor: f64,
    /// Weight `λ` of the motion penalty `λ ‖D s‖²`.
    pub smooth_lambda: f64,
    /// Fourier-ℓ₁ weight for the unit-power heartbeat.
    pub fourier_lambda: f64,
    /// Relaxation level of the proximal-split baseline, relative to `σ_v`.
    pub split_eta_factor: f64,
    pub misfit_filter: bool,
    pub heartbeat: HeartbeatGenConfig,
    pub motion: MotionGenConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            grid: DEFAULT_GRID.to_vec(),
            chains: 5,
            sweeps: 25,
            steps: 100,
            anneal_factor: 2.0,
            smooth_lambda: 20.0,
            fourier_lambda: 2.0,
            split_eta_factor: 1.0,
            misfit_filter: false,
            heartbeat: HeartbeatGenConfig::default(),
            motion: MotionGenConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.heartbeat.validate()?;
        self.motion.validate()?;
        if self.heartbeat.length != self.motion.length {
            return Err(Error::Config {
                key: "motion.length".into(),
                msg: "heartbeat and motion lengths differ".into(),
            });
        }
        let positive = [
            ("instances", self.instances as f64),
            ("chains", self.chains as f64),
            ("sweeps", self.sweeps as f64),
            ("steps", self.steps as f64),
            ("smooth_lambda", self.smooth_lambda),
            ("fourier_lambda", self.fourier_lambda),
            ("split_eta_factor", self.split_eta_factor),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    key: key.into(),
                    msg: "must be positive".into(),
                });
            }
        }
        if !(self.anneal_factor >= 1.0) {
            return Err(Error::Config {
                key: "anneal_factor".into(),
                msg: "must be >= 1".into(),
            });
        }
        if self.grid.is_empty() {
            return Err(Error::Config {
                key: "grid".into(),
                msg: "needs at least one (SIR, SNR) pair".into(),
            });
        }
        Ok(())
    }
}

/// One generated instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub sir_db: f64,
    pub snr_db: f64,
    pub mixture: Mixture,
}

/// Instance `i` of grid point `p`, generated on stream `(p, i)` of `seed`.
pub fn gen_instance(cfg: &BenchConfig, point: usize, index: usize, seed: u64) -> Result<Instance> {
    let (sir_db, snr_db) = cfg.grid[point];
    let mut rng = substream_rng(seed, point as u32, index as u32);
    let s1 = gen_heartbeat(&cfg.heartbeat, &mut rng)?;
    let s2 = gen_motion(&cfg.motion, &mut rng)?;
    let mixture = mix_at_levels(&s1, &s2, sir_db, snr_db, &mut rng)?;
    Ok(Instance { sir_db, snr_db, mixture })
}

/// Smallest `T ≥ 1` whose exponential schedule (`α = 15`) reaches `level`.
pub fn schedule_for(level: f64) -> Result<NoiseSchedule> {
    let alpha: f64 = 15.0;
    let la = alpha.ln();
    let t = (2.0 * level * level * la).ln_1p() / (2.0 * la);
    NoiseSchedule::exponential(alpha, t.max(1.0) * (1.0 + 1e-9))
}

/// Two-component model for an instance: Fourier-ℓ₁ heartbeat and smooth
/// motion, both identity-sensed.
pub fn instance_model(cfg: &BenchConfig, inst: &Instance) -> Result<MixtureModel> {
    let d = inst.mixture.y.len();
    MixtureModel::new(
        vec![
            ComponentSpec::identity(d, Prior::FourierSparsityMap { lambda: cfg.fourier_lambda }),
            ComponentSpec::identity(d, Prior::SmoothnessMap { lambda: cfg.smooth_lambda }),
        ],
        inst.mixture.sigma_v,
        d,
    )
}

fn denoisers(cfg: &BenchConfig, model: &MixtureModel) -> Vec<Arc<dyn Denoiser>> {
    let d = model.obs_dim;
    let lambda = |k: usize| match model.components[k].prior {
        Prior::FourierSparsityMap { lambda } | Prior::SmoothnessMap { lambda } => lambda,
        _ => unreachable!("bench model uses MAP priors"),
    };
    let _ = cfg;
    vec![
        Arc::new(FourierL1Denoiser::new(lambda(0), d)),
        Arc::new(SmoothMapDenoiser::new(lambda(1), d)),
    ]
}

/// Estimate of `(s₁, s₂)` for one instance. Runs sequentially; chains use
/// streams of `seed`.
pub fn separate(cfg: &BenchConfig, inst: &Instance, method: Method, seed: u64) -> Result<Vec<DVector<f64>>> {
    let model = instance_model(cfg, inst)?;
    let y = &inst.mixture.y;
    let sigma_v = model.sigma_v;
    let solver = SdeSolverConfig::new(cfg.steps, GridRule::UniformSigma);
    let start = vec![DVector::zeros(y.len()), y.clone()];
    let samples: Vec<Vec<DVector<f64>>> = match method {
        Method::Dig => {
            let dig = DigConfig::new(&model, cfg.sweeps)
                .with_sigma_annealing(cfg.anneal_factor * sigma_v)?
                .with_solver(solver)
                .with_schedule(schedule_for(cfg.anneal_factor * sigma_v)?)
                .with_seed(seed);
            let sampler = DigSampler::new(&model, y, &dig, denoisers(cfg, &model))?;
            (0..cfg.chains)
                .map(|c| {
                    let st = ChainState::new(&model, start.clone(), stream_rng(seed, c as u64))?;
                    Ok(sampler.run(st)?.s)
                })
                .collect::<Result<_>>()?
        }
        Method::Proxsplit => {
            let eta = cfg.split_eta_factor * sigma_v;
            let dig = DigConfig::new(&model, cfg.sweeps)
                .with_sigma_annealing(cfg.anneal_factor * sigma_v)?
                .with_solver(solver)
                .with_schedule(schedule_for(eta)?)
                .with_seed(seed);
            let stacked: Arc<dyn Denoiser> = Arc::new(BlockDenoiser::new(denoisers(cfg, &model)));
            let split_sampler = ProximalSplit::new(&model, y, &dig, stacked, eta)?;
            let init = concat(&start);
            (0..cfg.chains)
                .map(|c| {
                    let mut rng = stream_rng(seed, c as u64);
                    Ok(split(&split_sampler.run(&init, &mut rng)?, &model.dims()))
                })
                .collect::<Result<_>>()?
        }
    };
    posterior_mean(&model, y, &samples, cfg.misfit_filter)
}

/// One row of the result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub sir_db: f64,
    pub snr_db: f64,
    pub method: Method,
    pub instances: usize,
    /// RSE of the heartbeat estimate.
    pub rse_s1: f64,
    /// RSE of the motion estimate.
    pub rse_s2: f64,
}

/// Runs every method on every grid point; instances run in parallel.
/// Rows are ordered by grid point, then by method.
pub fn run_bench(cfg: &BenchConfig, methods: &[Method], seed: u64) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for p in 0..cfg.grid.len() {
        let instances = (0..cfg.instances)
            .into_par_iter()
            .map(|i| gen_instance(cfg, p, i, seed))
            .collect::<Result<Vec<_>>>()?;
        for &method in methods {
            let est = instances
                .par_iter()
                .enumerate()
                .map(|(i, inst)| {
                    let chain_seed = seed ^ ((p as u64) << 40) ^ ((i as u64) << 16) ^ 0xD16;
                    separate(cfg, inst, method, chain_seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let e1: Vec<_> = est.iter().map(|e| e[0].clone()).collect();
            let e2: Vec<_> = est.iter().map(|e| e[1].clone()).collect();
            let t1: Vec<_> = instances.iter().map(|x| x.mixture.s1.clone()).collect();
            let t2: Vec<_> = instances.iter().map(|x| x.mixture.s2.clone()).collect();
            rows.push(BenchRow {
                sir_db: cfg.grid[p].0,
                snr_db: cfg.grid[p].1,
                method,
                instances: cfg.instances,
                rse_s1: rse(&e1, &t1)?,
                rse_s2: rse(&e2, &t2)?,
            });
        }
    }
    Ok(rows)
}
