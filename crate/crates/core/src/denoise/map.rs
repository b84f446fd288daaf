//! MAP denoisers `argmin_s ½η⁻²‖z − s‖² + f(s)` for convex penalties `f`.

use std::sync::Arc;

use nalgebra::DVector;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{check_input, Denoiser};
use crate::Result;

/// Penalty `λ ‖D s‖²` with forward differences and no wraparound.
///
/// The minimizer solves `(I + 2λη² DᵀD) s = z`, a tridiagonal system.
#[derive(Debug, Clone)]
pub struct SmoothMapDenoiser {
    lambda: f64,
    dim: usize,
}

impl SmoothMapDenoiser {
    pub fn new(lambda: f64, dim: usize) -> Self {
        Self { lambda, dim }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Denoiser for SmoothMapDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise(&self, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
        check_input(self.dim, z, eta)?;
        Ok(solve_smooth(z, 2.0 * self.lambda * eta * eta))
    }
}

/// Thomas algorithm for `(I + κ DᵀD) s = z`.
fn solve_smooth(z: &DVector<f64>, kappa: f64) -> DVector<f64> {
    let n = z.len();
    if n < 2 || kappa == 0.0 {
        return z.clone();
    }
    let diag = |i: usize| {
        let degree = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
        1.0 + kappa * degree
    };
    let off = -kappa;
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    c_prime[0] = off / diag(0);
    d_prime[0] = z[0] / diag(0);
    for i in 1..n {
        let denom = diag(i) - off * c_prime[i - 1];
        c_prime[i] = off / denom;
        d_prime[i] = (z[i] - off * d_prime[i - 1]) / denom;
    }
    let mut s = DVector::zeros(n);
    s[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        s[i] = d_prime[i] - c_prime[i] * s[i + 1];
    }
    s
}

/// Penalty `λ ‖F s‖₁` with `F` the unitary DFT; the minimizer is complex
/// soft-thresholding of the spectrum at `λη²`.
#[derive(Clone)]
pub struct FourierL1Denoiser {
    lambda: f64,
    dim: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FourierL1Denoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierL1Denoiser")
            .field("lambda", &self.lambda)
            .field("dim", &self.dim)
            .finish()
    }
}

impl FourierL1Denoiser {
    pub fn new(lambda: f64, dim: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            lambda,
            dim,
            forward: planner.plan_fft_forward(dim.max(1)),
            inverse: planner.plan_fft_inverse(dim.max(1)),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Denoiser for FourierL1Denoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise(&self, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
        check_input(self.dim, z, eta)?;
        let n = self.dim;
        let norm = 1.0 / (n as f64).sqrt();
        let mut buf: Vec<Complex<f64>> = z.iter().map(|&x| Complex::new(x * norm, 0.0)).collect();
        self.forward.process(&mut buf);
        let tau = self.lambda * eta * eta;
        for c in buf.iter_mut() {
            let mag = c.norm();
            *c = if mag > tau { *c * (1.0 - tau / mag) } else { Complex::new(0.0, 0.0) };
        }
        self.inverse.process(&mut buf);
        Ok(DVector::from_iterator(n, buf.iter().map(|c| c.re * norm)))
    }
}

pub fn map_denoise_smooth(lambda: f64, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    SmoothMapDenoiser::new(lambda, z.len()).denoise(z, eta)
}

pub fn map_denoise_fourier_l1(lambda: f64, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    FourierL1Denoiser::new(lambda, z.len()).denoise(z, eta)
}
