//! Fourier-domain utilities and the benchmark dataset generators.

mod burgers;
mod dataset;
mod fft;
mod grf;
mod kdv;

pub use burgers::{burgers_solve, BurgersParams};
pub use dataset::{generate_dataset, subsample, Dataset, PdeKind, SolverParams};
pub use fft::{dft, Direction, Fft};
pub use grf::{grf_sample, GrfSpec};
pub use kdv::{kdv_solve, KdvParams};

use crate::error::{Error, Result};

/// Uniform periodic grid on the unit interval: points `x_j = j / n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid1D {
    n: usize,
}

impl Grid1D {
    pub fn new(n: usize) -> Result<Grid1D> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "grid size must be a power of two >= 2, got {n}"
            )));
        }
        Ok(Grid1D { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| j as f64 / self.n as f64).collect()
    }
}

/// Signed integer wavenumber for FFT bin `k` of an `n`-point transform
/// (Nyquist bin maps to `n/2`).
pub(crate) fn signed_freq(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
