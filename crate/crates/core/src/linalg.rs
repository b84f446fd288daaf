//! Small dense linear-algebra helpers shared by the denoisers, the sampler and
//! the oracles. All solves go through a Cholesky factorization; nothing here
//! forms an explicit inverse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::RngCore;

use crate::rng::standard_normal_vec;
use crate::{Error, Result};

/// Maximum tolerated `|a_ij - a_ji|`, relative to `max(1, max |a_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factorization with the SPD checks used throughout the crate:
/// square, finite, symmetric within [`SYMMETRY_TOL`], and factorizable.
pub fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::NotSpd(format!(
            "{what}: not square ({}x{})",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotSpd(format!("{what}: non-finite entry")));
    }
    let scale = m.amax().max(1.0);
    let defect = symmetry_defect(m);
    if defect > SYMMETRY_TOL * scale {
        return Err(Error::NotSpd(format!(
            "{what}: symmetry defect {defect:e}"
        )));
    }
    Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::NotSpd(format!("{what}: Cholesky factorization failed")))
}

/// A factor `L` with `L Lᵀ = m` for a symmetric positive semidefinite `m`.
///
/// Tries Cholesky first and falls back to a clamped eigendecomposition, which
/// handles covariances that are singular to working precision.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if let Some(ch) = Cholesky::new(sym.clone()) {
        return ch.l();
    }
    let eig = sym.symmetric_eigen();
    let scales = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut factor = eig.eigenvectors;
    for (j, s) in scales.iter().enumerate() {
        factor.column_mut(j).scale_mut(*s);
    }
    factor
}

/// `mean + factor · ε` with `ε ~ N(0, I)`.
pub fn sample_with_factor<R: RngCore + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let eps = standard_normal_vec(factor.ncols(), rng);
    mean + factor * eps
}

/// Log-density of `N(mean, Σ)` at `x`, given the Cholesky factor of `Σ`.
pub fn log_gaussian_density(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    chol: &Cholesky<f64, Dyn>,
) -> f64 {
    let diff = x - mean;
    let l = chol.l_dirty();
    let w = l
        .solve_lower_triangular(&diff)
        .expect("Cholesky factor has a nonzero diagonal");
    let log_det: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (x.len() as f64 * LN_2PI + log_det + w.norm_squared())
}

/// Normalizes log-weights into probabilities with max-subtraction.
pub fn softmax_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical(
            "all mixture responsibilities underflowed".into(),
        ));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

pub fn log_sum_exp(log_w: &[f64]) -> f64 {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + log_w.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn concat(parts: &[DVector<f64>]) -> DVector<f64> {
    let n = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut off = 0;
    for p in parts {
        out.rows_mut(off, p.len()).copy_from(p);
        off += p.len();
    }
    out
}

pub fn split(v: &DVector<f64>, dims: &[usize]) -> Vec<DVector<f64>> {
    let mut off = 0;
    dims.iter()
        .map(|&d| {
            let part = v.rows(off, d).into_owned();
            off += d;
            part
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(spd_cholesky(&asym, "a").is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(spd_cholesky(&indef, "b").is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(spd_cholesky(&ok, "c").is_ok());
    }

    #[test]
    fn psd_sqrt_handles_singular() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        let f = psd_sqrt(&m);
        assert!((&f * f.transpose() - &m).amax() < 1e-10);
    }

    #[test]
    fn log_density_matches_scalar_formula() {
        let cov = DMatrix::from_element(1, 1, 4.0);
        let ch = spd_cholesky(&cov, "cov").unwrap();
        let x = DVector::from_element(1, 1.0);
        let m = DVector::from_element(1, -1.0);
        let expected = -0.5 * ((2.0 * std::f64::consts::PI * 4.0).ln() + 4.0 / 4.0);
        assert!((log_gaussian_density(&x, &m, &ch) - expected).abs() < 1e-14);
    }

    #[test]
    fn softmax_survives_tiny_log_weights() {
        let w = softmax_log_weights(&[-1e4, -1e4 - 2.0_f64.ln()]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(softmax_log_weights(&[f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn sample_with_factor_is_deterministic() {
        let m = DVector::from_vec(vec![1.0, 2.0]);
        let f = DMatrix::identity(2, 2);
        let a = sample_with_factor(&m, &f, &mut stream_rng(1, 0));
        let b = sample_with_factor(&m, &f, &mut stream_rng(1, 0));
        assert_eq!(a, b);
    }
}
