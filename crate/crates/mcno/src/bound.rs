//! Empirical verification of the fixed-grid Monte Carlo estimator's bias
//! and high-probability deviation bounds, using analytic kernels with
//! declared regularity constants and a quadrature oracle.
//!
//! For a kernel-times-test-function product `g(x, y) = kappa(x, y) v(y)` on
//! the unit cube, three quantities are compared per probe point `x`:
//!
//! - the reference integral `int g(x, y) dy` (refined midpoint quadrature);
//! - the full-grid Riemann sum `(1/N_grid) sum_j g(x, y_j)` over cell
//!   centers, which is the estimator's expectation;
//! - the Monte Carlo estimate `(1/N) sum_i g(x, y_{s_i})` over grid points
//!   drawn uniformly.
//!
//! The sup over probes of `|estimate - integral|` is then checked against
//! the closed-form estimation error bound. Two printed versions of that
//! bound exist (the theorem statement and the appendix derivation); they
//! disagree by a factor C on the bias term and exactly 2 on the deviation
//! term, so both are computed and reported side by side.

use crate::error::{Error, Result};
use crate::rng::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelId {
    /// `g = 1`: zero bias, zero deviation.
    Const,
    /// `g = y`: midpoint quadrature is exact.
    LinearY,
    /// `g = y^2`: hand-checkable bias.
    QuadY,
    /// `kappa = exp(-(x-y)^2)`, `v = sin(2 pi y)`.
    Gauss,
    /// `kappa = |x - y - 0.3|`, `v = cos(2 pi y)`: Lipschitz but kinked.
    AbsDiff,
    /// 2-D: `kappa = exp(-|x-y|^2)`, `v = sin(2 pi y1) cos(2 pi y2)`.
    Gauss2,
}

impl std::str::FromStr for KernelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<KernelId> {
        match s {
            "const" => Ok(KernelId::Const),
            "linear-y" => Ok(KernelId::LinearY),
            "quad-y" => Ok(KernelId::QuadY),
            "gauss" => Ok(KernelId::Gauss),
            "absdiff" => Ok(KernelId::AbsDiff),
            "gauss2" => Ok(KernelId::Gauss2),
            other => Err(Error::InvalidArgument(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Closed-form kernel with declared constants: `C` bounds `|g|`, `L` the
/// Lipschitz constant of `y -> g(x, y)`, `L_x` the Lipschitz constant of
/// `x -> g(x, y)`. Construction validates the declarations against sampled
/// sups and difference quotients on a 2^14-point grid.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AnalyticKernel {
    pub id: KernelId,
    pub d: usize,
    pub c: f64,
    pub l: f64,
    pub l_x: f64,
}

impl AnalyticKernel {
    pub fn new(id: KernelId) -> Result<AnalyticKernel> {
        let (d, c, l, l_x) = match id {
            KernelId::Const => (1, 1.0, 1.0, 1.0),
            KernelId::LinearY => (1, 1.0, 1.0, 1.0),
            KernelId::QuadY => (1, 1.0, 2.0, 1.0),
            KernelId::Gauss => (1, 1.0, 7.5, 1.0),
            KernelId::AbsDiff => (1, 1.3, 9.5, 1.0),
            KernelId::Gauss2 => (2, 1.0, 8.0, 1.0),
        };
        AnalyticKernel::with_constants(id, d, c, l, l_x)
    }

    /// Construct with explicit declarations (the validation-failure tests
    /// use deliberately wrong values).
    pub fn with_constants(id: KernelId, d: usize, c: f64, l: f64, l_x: f64) -> Result<AnalyticKernel> {
        if !(1..=2).contains(&d) {
            return Err(Error::InvalidArgument(format!("dimension must be 1 or 2, got {d}")));
        }
        let kernel = AnalyticKernel { id, d, c, l, l_x };
        kernel.validate_constants()?;
        Ok(kernel)
    }

    /// `kappa(x, y) v(y)`; `x` and `y` have `d` components.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        use std::f64::consts::TAU;
        match self.id {
            KernelId::Const => 1.0,
            KernelId::LinearY => y[0],
            KernelId::QuadY => y[0] * y[0],
            KernelId::Gauss => {
                let r = x[0] - y[0];
                (-r * r).exp() * (TAU * y[0]).sin()
            }
            KernelId::AbsDiff => (x[0] - y[0] - 0.3).abs() * (TAU * y[0]).cos(),
            KernelId::Gauss2 => {
                let r0 = x[0] - y[0];
                let r1 = x[1] - y[1];
                (-(r0 * r0 + r1 * r1)).exp() * (TAU * y[0]).sin() * (TAU * y[1]).cos()
            }
        }
    }

    fn validate_constants(&self) -> Result<()> {
        let per_axis = if self.d == 1 { 1 << 14 } else { 1 << 7 };
        let h = 1.0 / per_axis as f64;
        let probe_axis = if self.d == 1 { 16usize } else { 8 };
        let probes = grid_points(self.d, probe_axis);
        let ys = grid_points(self.d, per_axis);
        let mut sup: f64 = 0.0;
        let mut quot_y: f64 = 0.0;
        for x in &probes {
            for y in &ys {
                let g = self.eval(x, y);
                sup = sup.max(g.abs());
                for axis in 0..self.d {
                    let mut y2 = y.clone();
                    y2[axis] = (y2[axis] + h).min(1.0 - 1e-12);
                    let step = y2[axis] - y[axis];
                    if step > 0.0 {
                        quot_y = quot_y.max((self.eval(x, &y2) - g).abs() / step);
                    }
                }
            }
        }
        // Same sampling with the roles of x and y swapped.
        let mut quot_x: f64 = 0.0;
        let xs = grid_points(self.d, if self.d == 1 { 1 << 10 } else { 1 << 5 });
        let hx = 1.0 / (if self.d == 1 { 1usize << 10 } else { 1 << 5 }) as f64;
        for y in &probes {
            for x in &xs {
                let g = self.eval(x, y);
                for axis in 0..self.d {
                    let mut x2 = x.clone();
                    x2[axis] = (x2[axis] + hx).min(1.0 - 1e-12);
                    let step = x2[axis] - x[axis];
                    if step > 0.0 {
                        quot_x = quot_x.max((self.eval(&x2, y) - g).abs() / step);
                    }
                }
            }
        }
        // Difference quotients at kinks can overshoot the true constant by
        // pure roundoff; allow that much and no more.
        let slack = |declared: f64| declared * (1.0 + 1e-9) + 1e-12;
        if sup > slack(self.c) {
            return Err(Error::ConstantViolated { name: "C", declared: self.c, observed: sup });
        }
        if quot_y > slack(self.l) {
            return Err(Error::ConstantViolated { name: "L", declared: self.l, observed: quot_y });
        }
        if quot_x > slack(self.l_x) {
            return Err(Error::ConstantViolated { name: "L_x", declared: self.l_x, observed: quot_x });
        }
        Ok(())
    }
}

/// Row-major uniform grid of `per_axis^d` probe points `i / per_axis`.
fn grid_points(d: usize, per_axis: usize) -> Vec<Vec<f64>> {
    match d {
        1 => (0..per_axis).map(|i| vec![i as f64 / per_axis as f64]).collect(),
        2 => {
            let mut out = Vec::with_capacity(per_axis * per_axis);
            for i in 0..per_axis {
                for j in 0..per_axis {
                    out.push(vec![i as f64 / per_axis as f64, j as f64 / per_axis as f64]);
                }
            }
            out
        }
        _ => unreachable!("dimension checked at construction"),
    }
}

/// Probe grid used for the sup over x.
pub fn probe_grid(d: usize, per_axis: usize) -> Vec<Vec<f64>> {
    grid_points(d, per_axis)
}

/// Cell center of linear index `j` on an `m^d` grid: `(idx + 1/2) / m` per
/// axis, row-major.
fn cell_center(d: usize, m: usize, j: usize) -> Vec<f64> {
    match d {
        1 => vec![(j as f64 + 0.5) / m as f64],
        2 => {
            let (i, k) = (j / m, j % m);
            vec![(i as f64 + 0.5) / m as f64, (k as f64 + 0.5) / m as f64]
        }
        _ => unreachable!(),
    }
}

fn side_of(d: usize, n_grid: usize) -> Result<usize> {
    match d {
        1 => Ok(n_grid),
        2 => {
            let m = (n_grid as f64).sqrt().round() as usize;
            if m * m != n_grid {
                return Err(Error::InvalidArgument(format!(
                    "N_grid = {n_grid} is not a perfect square (d = 2)"
                )));
            }
            Ok(m)
        }
        _ => unreachable!(),
    }
}

/// Midpoint quadrature of `y -> g(x, y)` per probe, refined once; errors if
/// the refinement moves any value beyond the convergence tolerance
/// (1e-8 in 1D; 1e-4 in 2D, where the affordable grid is coarser).
pub fn reference_integral(kernel: &AnalyticKernel, probe_xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let (base_axis, tol) = match kernel.d {
        1 => (1 << 16, 1e-8),
        _ => (1 << 9, 1e-4),
    };
    let coarse = midpoint(kernel, probe_xs, base_axis);
    let fine = midpoint(kernel, probe_xs, base_axis * 2);
    for (a, b) in coarse.iter().zip(&fine) {
        let delta = (a - b).abs();
        if delta >= tol {
            return Err(Error::QuadratureNotConverged { delta, tol });
        }
    }
    Ok(fine)
}

fn midpoint(kernel: &AnalyticKernel, probe_xs: &[Vec<f64>], per_axis: usize) -> Vec<f64> {
    let total = per_axis.pow(kernel.d as u32);
    probe_xs
        .iter()
        .map(|x| {
            let mut acc = 0.0;
            for j in 0..total {
                acc += kernel.eval(x, &cell_center(kernel.d, per_axis, j));
            }
            acc / total as f64
        })
        .collect()
}

/// `(1/N_grid) sum_j g(x, y_j)` over the cell-center grid: the estimator's
/// expectation under uniform sampling.
pub fn riemann_grid_sum(kernel: &AnalyticKernel, probe_xs: &[Vec<f64>], n_grid: usize) -> Result<Vec<f64>> {
    if n_grid < 2 {
        return Err(Error::InvalidArgument(format!("N_grid must be >= 2, got {n_grid}")));
    }
    let m = side_of(kernel.d, n_grid)?;
    Ok(probe_xs
        .iter()
        .map(|x| {
            let mut acc = 0.0;
            for j in 0..n_grid {
                acc += kernel.eval(x, &cell_center(kernel.d, m, j));
            }
            acc / n_grid as f64
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Replacement {
    /// Matches the model's one-time sampling; exhaustive draws reproduce
    /// the Riemann sum bitwise.
    Without,
    /// Independent draws, matching the concentration step of the proof.
    With,
}

impl std::str::FromStr for Replacement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Replacement> {
        match s {
            "without" => Ok(Replacement::Without),
            "with" => Ok(Replacement::With),
            other => Err(Error::InvalidArgument(format!("unknown replacement mode `{other}`"))),
        }
    }
}

/// Monte Carlo estimate per probe from `n` grid points drawn uniformly.
pub fn mc_estimate(
    kernel: &AnalyticKernel,
    probe_xs: &[Vec<f64>],
    n_grid: usize,
    n: usize,
    rng: &mut Rng,
    replacement: Replacement,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let m = side_of(kernel.d, n_grid)?;
    let indices: Vec<usize> = match replacement {
        Replacement::Without => {
            if n > n_grid {
                return Err(Error::TooManySamples { requested: n, available: n_grid });
            }
            rng.sample_without_replacement(n_grid, n)
        }
        Replacement::With => (0..n).map(|_| rng.below(n_grid as u64) as usize).collect(),
    };
    Ok(probe_xs
        .iter()
        .map(|x| {
            let mut acc = 0.0;
            for &j in &indices {
                acc += kernel.eval(x, &cell_center(kernel.d, m, j));
            }
            acc / n as f64
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundVersion {
    /// As printed in the theorem statement: bias `C (sqrt(d)/2) Vol L
    /// N_grid^{-1/d}`, deviation `(3/2) C sqrt(2 (d ln N_grid + ln(2/delta)) / N)`.
    Theorem,
    /// As derived in the appendix: bias without the leading `C`, deviation
    /// with `3C` (exactly twice the theorem's deviation term).
    Appendix,
}

/// Bias and deviation terms of the estimation error bound.
#[allow(clippy::too_many_arguments)]
pub fn theorem_bound_parts(
    c: f64,
    l: f64,
    d: usize,
    vol: f64,
    n_grid: usize,
    n: usize,
    delta: f64,
    version: BoundVersion,
) -> Result<(f64, f64)> {
    if delta <= 0.0 || delta >= 1.0 {
        return Err(Error::InvalidArgument(format!("delta must be in (0, 1), got {delta}")));
    }
    if c <= 0.0 || l <= 0.0 || vol <= 0.0 || d == 0 || n_grid < 2 || n == 0 {
        return Err(Error::InvalidArgument("bound inputs must be positive".into()));
    }
    let df = d as f64;
    let half_diag = df.sqrt() / 2.0;
    let spacing = (n_grid as f64).powf(-1.0 / df);
    let log_term = df * (n_grid as f64).ln() + (2.0 / delta).ln();
    let (bias, deviation) = match version {
        BoundVersion::Theorem => (
            c * half_diag * vol * l * spacing,
            1.5 * c * (2.0 * log_term / n as f64).sqrt(),
        ),
        BoundVersion::Appendix => (
            half_diag * vol * l * spacing,
            3.0 * c * (2.0 * log_term / n as f64).sqrt(),
        ),
    };
    Ok((bias, deviation))
}

/// Total estimation error bound (bias + deviation).
#[allow(clippy::too_many_arguments)]
pub fn theorem_bound(
    c: f64,
    l: f64,
    d: usize,
    vol: f64,
    n_grid: usize,
    n: usize,
    delta: f64,
    version: BoundVersion,
) -> Result<f64> {
    let (bias, deviation) = theorem_bound_parts(c, l, d, vol, n_grid, n, delta, version)?;
    Ok(bias + deviation)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub kernel: KernelId,
    pub n_grid: Vec<usize>,
    pub n: Vec<usize>,
    pub delta: f64,
    /// Independent draws per (N_grid, N) pair; at least 100 so coverage
    /// fractions are meaningful.
    pub trials: usize,
    /// Probe points per axis for the sup over x.
    pub probes_per_axis: usize,
    pub seed: u64,
    pub replacement: Replacement,
    pub jobs: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            kernel: KernelId::Gauss,
            n_grid: vec![16, 64, 256, 1024],
            n: vec![25, 50, 100, 200, 400],
            delta: 0.05,
            trials: 200,
            probes_per_axis: 256,
            seed: 0,
            replacement: Replacement::Without,
            jobs: 1,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta <= 0.0 || self.delta >= 1.0 {
            return Err(Error::InvalidField {
                field: "delta".into(),
                reason: "must be in (0, 1)".into(),
            });
        }
        if self.trials < 100 {
            return Err(Error::InvalidField {
                field: "trials".into(),
                reason: "need at least 100 trials for coverage statistics".into(),
            });
        }
        if self.n_grid.is_empty() || self.n.is_empty() {
            return Err(Error::InvalidField {
                field: "n_grid/n".into(),
                reason: "must be non-empty".into(),
            });
        }
        if self.probes_per_axis < 2 {
            return Err(Error::InvalidField {
                field: "probes_per_axis".into(),
                reason: "need at least 2 probes".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BiasStats {
    pub n_grid: usize,
    /// `sup_x |riemann - integral|`.
    pub bias_sup: f64,
    pub bias_term_theorem: f64,
    pub bias_term_appendix: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PairStats {
    pub n_grid: usize,
    pub n: usize,
    /// Fraction of trials with sup total error within the theorem bound.
    pub coverage: f64,
    /// (1 - delta)-quantile of the sup total error.
    pub sup_error_quantile: f64,
    /// (1 - delta)-quantile of the pure deviation `sup |mc - riemann|`.
    pub deviation_quantile: f64,
    pub mean_sup_error: f64,
    pub max_sup_error: f64,
    pub bound_theorem: f64,
    pub bound_appendix: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SlopeFit {
    pub n_grid: usize,
    /// Least-squares slope of `ln(deviation quantile)` against `ln N`.
    pub slope: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundReport {
    pub kernel: AnalyticKernel,
    pub config: TrialConfig,
    pub bias: Vec<BiasStats>,
    pub pairs: Vec<PairStats>,
    pub slopes: Vec<SlopeFit>,
    /// Lipschitz bound on the sup gap left by probing: `L_x / probes_per_axis`.
    pub probe_sup_gap: f64,
}

impl BoundReport {
    pub fn min_coverage(&self) -> f64 {
        self.pairs.iter().map(|p| p.coverage).fold(1.0, f64::min)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Run the full trial harness: bias per grid size, deviation and coverage
/// per (N_grid, N) pair with N <= N_grid, and the concentration-rate slope
/// per grid size. Per-trial sub-seeds keep the result independent of `jobs`.
pub fn run_trials(config: &TrialConfig) -> Result<BoundReport> {
    config.validate()?;
    let kernel = AnalyticKernel::new(config.kernel)?;
    let probes = grid_points(kernel.d, config.probes_per_axis);
    let reference = reference_integral(&kernel, &probes)?;

    let mut bias = Vec::new();
    let mut riemanns = Vec::new();
    for &n_grid in &config.n_grid {
        let riemann = riemann_grid_sum(&kernel, &probes, n_grid)?;
        let bias_sup = riemann
            .iter()
            .zip(&reference)
            .map(|(r, i)| (r - i).abs())
            .fold(0.0, f64::max);
        // The bias terms do not depend on N; any valid N works here.
        let (bt, _) = theorem_bound_parts(
            kernel.c, kernel.l, kernel.d, 1.0, n_grid, 1, config.delta, BoundVersion::Theorem,
        )?;
        let (ba, _) = theorem_bound_parts(
            kernel.c, kernel.l, kernel.d, 1.0, n_grid, 1, config.delta, BoundVersion::Appendix,
        )?;
        bias.push(BiasStats {
            n_grid,
            bias_sup,
            bias_term_theorem: bt,
            bias_term_appendix: ba,
        });
        riemanns.push(riemann);
    }

    let master = Rng::new(config.seed).split("trials");
    let mut pairs = Vec::new();
    let mut pair_counter = 0u64;
    for (gi, &n_grid) in config.n_grid.iter().enumerate() {
        for &n in &config.n {
            if n > n_grid {
                continue;
            }
            let pair_rng = master.split_index(pair_counter);
            pair_counter += 1;
            let riemann = &riemanns[gi];
            let run_trial = |t: usize| -> Result<(f64, f64)> {
                let mut rng = pair_rng.split_index(t as u64);
                let est = mc_estimate(&kernel, &probes, n_grid, n, &mut rng, config.replacement)?;
                let mut sup_total: f64 = 0.0;
                let mut sup_dev: f64 = 0.0;
                for ((e, i), r) in est.iter().zip(&reference).zip(riemann) {
                    sup_total = sup_total.max((e - i).abs());
                    sup_dev = sup_dev.max((e - r).abs());
                }
                Ok((sup_total, sup_dev))
            };
            let results: Vec<(f64, f64)> = if config.jobs > 1 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(config.jobs)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
                pool.install(|| {
                    (0..config.trials).into_par_iter().map(run_trial).collect::<Result<Vec<_>>>()
                })?
            } else {
                (0..config.trials).map(run_trial).collect::<Result<Vec<_>>>()?
            };

            let bound_theorem = theorem_bound(
                kernel.c, kernel.l, kernel.d, 1.0, n_grid, n, config.delta, BoundVersion::Theorem,
            )?;
            let bound_appendix = theorem_bound(
                kernel.c, kernel.l, kernel.d, 1.0, n_grid, n, config.delta, BoundVersion::Appendix,
            )?;
            let covered = results.iter().filter(|(total, _)| *total <= bound_theorem).count();
            let mut totals: Vec<f64> = results.iter().map(|(t, _)| *t).collect();
            let mut devs: Vec<f64> = results.iter().map(|(_, d)| *d).collect();
            totals.sort_by(|a, b| a.partial_cmp(b).expect("finite sup errors"));
            devs.sort_by(|a, b| a.partial_cmp(b).expect("finite sup errors"));
            pairs.push(PairStats {
                n_grid,
                n,
                coverage: covered as f64 / config.trials as f64,
                sup_error_quantile: quantile(&totals, 1.0 - config.delta),
                deviation_quantile: quantile(&devs, 1.0 - config.delta),
                mean_sup_error: totals.iter().sum::<f64>() / totals.len() as f64,
                max_sup_error: *totals.last().expect("at least one trial"),
                bound_theorem,
                bound_appendix,
            });
        }
    }

    let mut slopes = Vec::new();
    for &n_grid in &config.n_grid {
        let points: Vec<(f64, f64)> = pairs
            .iter()
            .filter(|p| p.n_grid == n_grid && p.deviation_quantile > 0.0)
            .map(|p| ((p.n as f64).ln(), p.deviation_quantile.ln()))
            .collect();
        if points.len() >= 2 {
            let count = points.len() as f64;
            let sx: f64 = points.iter().map(|(x, _)| x).sum();
            let sy: f64 = points.iter().map(|(_, y)| y).sum();
            let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
            let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
            let slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
            slopes.push(SlopeFit { n_grid, slope });
        }
    }

    Ok(BoundReport {
        kernel,
        config: config.clone(),
        bias,
        pairs,
        slopes,
        probe_sup_gap: kernel.l_x / config.probes_per_axis as f64,
    })
}
