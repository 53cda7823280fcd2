//! Gaussian random fields on the periodic unit interval, sampled spectrally.

use super::{Fft, Grid1D};
use crate::error::{Error, Result};
use crate::rng::Rng;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Covariance `scale * (-Laplacian + shift I)^{-power}` on periodic (0, 1).
///
/// In the real Fourier basis `{sqrt(2) cos(2 pi k x), sqrt(2) sin(2 pi k x)}`
/// the eigenvalues are `lambda_k = scale * (4 pi^2 k^2 + shift)^{-power}`,
/// and a draw is `sum_{k>=1} sqrt(lambda_k) (xi_k sqrt(2) cos + eta_k sqrt(2) sin)`
/// with i.i.d. standard normal coefficients and a zeroed mean mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrfSpec {
    pub scale: f64,
    pub shift: f64,
    pub power: f64,
}

impl GrfSpec {
    pub fn new(scale: f64, shift: f64, power: f64) -> Result<GrfSpec> {
        if scale < 0.0 {
            return Err(Error::InvalidArgument(format!("GRF scale must be >= 0, got {scale}")));
        }
        if shift <= 0.0 {
            return Err(Error::InvalidArgument(format!("GRF shift must be > 0, got {shift}")));
        }
        if power <= 0.5 {
            return Err(Error::InvalidArgument(format!(
                "GRF power must exceed 1/2 for a trace-class covariance in 1D, got {power}"
            )));
        }
        Ok(GrfSpec { scale, shift, power })
    }

    /// Spectrum of the Burgers benchmark: `N(0, 625 (-Lap + 25 I)^{-2})`.
    pub fn burgers() -> GrfSpec {
        GrfSpec { scale: 625.0, shift: 25.0, power: 2.0 }
    }

    /// Spectrum of the KdV benchmark: `N(0, 7^4 (-Lap + 7^2 I)^{-2.5})`.
    pub fn kdv() -> GrfSpec {
        GrfSpec { scale: 2401.0, shift: 49.0, power: 2.5 }
    }

    pub fn eigenvalue(&self, k: usize) -> f64 {
        let w = 2.0 * PI * k as f64;
        self.scale * (w * w + self.shift).powf(-self.power)
    }

    /// Pointwise variance of a draw on an `n`-point grid:
    /// `sum_{k=1}^{n/2-1} 2 lambda_k`.
    pub fn pointwise_variance(&self, n: usize) -> f64 {
        (1..n / 2).map(|k| 2.0 * self.eigenvalue(k)).sum()
    }
}

/// Draw one real periodic field on the grid via an inverse FFT with
/// Hermitian-symmetric coefficients. Modes `k = 1 .. n/2-1` are populated;
/// the mean mode and the Nyquist mode are zero.
pub fn grf_sample(spec: &GrfSpec, grid: Grid1D, rng: &mut Rng) -> Vec<f64> {
    let n = grid.n();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..n / 2 {
        let amp = (spec.eigenvalue(k) / 2.0).sqrt();
        let xi = rng.gaussian(1.0);
        let eta = rng.gaussian(1.0);
        // c_k = sqrt(lambda_k / 2) (xi - i eta) gives
        // sqrt(2 lambda_k) (xi cos + eta sin) after the inverse transform.
        let c = Complex64::new(amp * xi, -amp * eta);
        coeffs[k] = c * n as f64;
        coeffs[n - k] = c.conj() * n as f64;
    }
    let plan = Fft::new(n).expect("grid size is a power of two");
    plan.inverse(&mut coeffs);
    coeffs.into_iter().map(|v| v.re).collect()
}
