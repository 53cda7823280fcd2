//! Split-step pseudo-spectral solver for the viscous Burgers equation
//! `u_t + (u^2/2)_x = nu u_xx` on the periodic unit interval, integrated to
//! t = 1.
//!
//! Each step advances the conservative nonlinear term with one forward Euler
//! substep (flux derivative evaluated spectrally) and then applies the heat
//! semigroup exactly in Fourier space via the multiplier
//! `exp(-nu (2 pi k)^2 dt)`.

use super::{signed_freq, Fft};
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::TAU;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BurgersParams {
    pub viscosity: f64,
    /// Forward-Euler substep for the advection term; final time is 1.
    pub dt: f64,
    /// Advective stability allowance in `dt <= cfl_safety * h / max|u|`.
    /// The exact diffusion step damps the high modes an explicit advection
    /// substep would amplify, which is what the value above 1 reflects.
    pub cfl_safety: f64,
}

impl BurgersParams {
    pub fn new(viscosity: f64, dt: f64) -> Result<BurgersParams> {
        if viscosity <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "viscosity must be > 0, got {viscosity}"
            )));
        }
        if dt <= 0.0 || dt > 1.0 {
            return Err(Error::InvalidArgument(format!("dt must be in (0, 1], got {dt}")));
        }
        Ok(BurgersParams {
            viscosity,
            dt,
            cfl_safety: 2.0,
        })
    }
}

impl Default for BurgersParams {
    /// Benchmark defaults: nu = 0.1, dt = 1e-4.
    fn default() -> Self {
        BurgersParams {
            viscosity: 0.1,
            dt: 1e-4,
            cfl_safety: 2.0,
        }
    }
}

/// Integrate to t = 1 and return the final field.
pub fn burgers_solve(u0: &[f64], params: &BurgersParams) -> Result<Vec<f64>> {
    let n = u0.len();
    if !n.is_power_of_two() || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid size must be a power of two >= 2, got {n}"
        )));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "burgers_solve initial condition".into() });
    }
    let dt = params.dt;
    let steps = (1.0 / dt).round() as usize;
    let h = 1.0 / n as f64;
    let plan = Fft::new(n)?;

    // Heat multiplier and spectral-derivative symbol per bin.
    let mut heat = vec![0.0f64; n];
    let mut ik = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n {
        let freq = signed_freq(k, n) as f64;
        let w = TAU * freq;
        heat[k] = (-params.viscosity * w * w * dt).exp();
        ik[k] = if k == n / 2 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, w)
        };
    }

    let mut u = u0.to_vec();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for step in 0..steps {
        let max_abs_u = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !max_abs_u.is_finite() || max_abs_u > 1e8 {
            return Err(Error::BlowUp { step, total: steps, max_abs_u });
        }
        if max_abs_u > 0.0 {
            let limit = params.cfl_safety * h / max_abs_u;
            if dt > limit {
                return Err(Error::CflViolation { dt, limit, max_abs_u });
            }
        }

        // Forward Euler on the conservative flux: u <- u - dt * d/dx (u^2/2).
        for (b, &v) in buf.iter_mut().zip(u.iter()) {
            *b = Complex64::new(0.5 * v * v, 0.0);
        }
        plan.forward(&mut buf);
        for (b, &sym) in buf.iter_mut().zip(ik.iter()) {
            *b *= sym;
        }
        plan.inverse(&mut buf);
        for (v, b) in u.iter_mut().zip(buf.iter()) {
            *v -= dt * b.re;
        }

        // Exact diffusion in Fourier space.
        for (b, &v) in buf.iter_mut().zip(u.iter()) {
            *b = Complex64::new(v, 0.0);
        }
        plan.forward(&mut buf);
        for (b, &m) in buf.iter_mut().zip(heat.iter()) {
            *b *= m;
        }
        plan.inverse(&mut buf);
        for (v, b) in u.iter_mut().zip(buf.iter()) {
            *v = b.re;
        }
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "burgers_solve final field".into() });
    }
    Ok(u)
}
