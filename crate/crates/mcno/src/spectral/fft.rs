//! Iterative radix-2 FFT with precomputed twiddle factors.
//!
//! Conventions: forward `X_k = sum_j x_j e^{-2 pi i jk/n}`, inverse
//! `x_j = (1/n) sum_k X_k e^{+2 pi i jk/n}`, so a round trip is the
//! identity.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::TAU;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Reusable transform of a fixed power-of-two length.
#[derive(Clone, Debug)]
pub struct Fft {
    n: usize,
    /// Forward twiddles e^{-2 pi i t / n} for t in 0..n/2.
    twiddles: Vec<Complex64>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Fft> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "FFT length must be a power of two, got {n}"
            )));
        }
        let twiddles = (0..n / 2)
            .map(|t| Complex64::from_polar(1.0, -TAU * t as f64 / n as f64))
            .collect();
        Ok(Fft { n, twiddles })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.process(data, Direction::Forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.process(data, Direction::Inverse);
    }

    pub fn process(&self, data: &mut [Complex64], direction: Direction) {
        assert_eq!(data.len(), self.n, "buffer length mismatch");
        let n = self.n;
        if n == 1 {
            return;
        }
        // Bit-reversal permutation.
        let shift = usize::BITS - n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> shift;
            if i < j {
                data.swap(i, j);
            }
        }
        // Butterflies.
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * step];
                    if direction == Direction::Inverse {
                        w = w.conj();
                    }
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            len *= 2;
        }
        if direction == Direction::Inverse {
            let inv = 1.0 / n as f64;
            for v in data.iter_mut() {
                *v *= inv;
            }
        }
    }

    /// Spectral derivative of a real periodic field on the unit interval:
    /// multiply bin `k` by `i 2 pi k` (signed), zeroing the Nyquist bin so
    /// the result stays real.
    pub fn spectral_derivative(&self, field: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            if k == n / 2 {
                *v = Complex64::new(0.0, 0.0);
            } else {
                let freq = super::signed_freq(k, n) as f64;
                *v *= Complex64::new(0.0, TAU * freq);
            }
        }
        self.inverse(&mut buf);
        buf.into_iter().map(|v| v.re).collect()
    }
}

/// One-off discrete Fourier transform (power-of-two length).
pub fn dft(x: &[Complex64], direction: Direction) -> Result<Vec<Complex64>> {
    let plan = Fft::new(x.len())?;
    let mut data = x.to_vec();
    plan.process(&mut data, direction);
    Ok(data)
}
