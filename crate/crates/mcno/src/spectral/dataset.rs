//! Benchmark dataset generation: GRF initial conditions solved at high
//! resolution, then subsampled.

use super::{burgers_solve, grf_sample, kdv_solve, BurgersParams, Grid1D, GrfSpec, KdvParams};
use crate::error::{Error, Result};
use crate::rng::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeKind {
    Burgers,
    Kdv,
}

impl PdeKind {
    pub fn grf_spec(&self) -> GrfSpec {
        match self {
            PdeKind::Burgers => GrfSpec::burgers(),
            PdeKind::Kdv => GrfSpec::kdv(),
        }
    }

    /// Benchmark high-resolution solve grid.
    pub fn default_hi_res(&self) -> usize {
        match self {
            PdeKind::Burgers => 8192,
            PdeKind::Kdv => 1024,
        }
    }

    /// Benchmark table resolutions.
    pub fn default_resolutions(&self) -> Vec<usize> {
        match self {
            PdeKind::Burgers => vec![256, 512, 1024, 2048, 4096, 8192],
            PdeKind::Kdv => vec![128, 256, 512, 1024],
        }
    }
}

impl std::fmt::Display for PdeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PdeKind::Burgers => write!(f, "burgers"),
            PdeKind::Kdv => write!(f, "kdv"),
        }
    }
}

/// Solver settings recorded alongside the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SolverParams {
    Burgers { viscosity: f64, dt: f64, hi_res: usize },
    Kdv { dt: f64, hi_res: usize, dealias_fraction: f64 },
}

impl SolverParams {
    pub fn burgers_default() -> SolverParams {
        let p = BurgersParams::default();
        SolverParams::Burgers { viscosity: p.viscosity, dt: p.dt, hi_res: 8192 }
    }

    pub fn kdv_default() -> SolverParams {
        let p = KdvParams::default();
        SolverParams::Kdv { dt: p.dt, hi_res: 1024, dealias_fraction: p.dealias_fraction }
    }

    pub fn hi_res(&self) -> usize {
        match *self {
            SolverParams::Burgers { hi_res, .. } => hi_res,
            SolverParams::Kdv { hi_res, .. } => hi_res,
        }
    }

    pub fn pde(&self) -> PdeKind {
        match self {
            SolverParams::Burgers { .. } => PdeKind::Burgers,
            SolverParams::Kdv { .. } => PdeKind::Kdv,
        }
    }
}

/// Paired input/output functions `(a_j, u_j)` on a uniform grid, stored
/// row-major `[n_samples, resolution]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub pde: PdeKind,
    pub resolution: usize,
    pub n_samples: usize,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
    pub seed: u64,
    pub solver: SolverParams,
}

impl Dataset {
    pub fn input(&self, sample: usize) -> &[f64] {
        &self.inputs[sample * self.resolution..(sample + 1) * self.resolution]
    }

    pub fn output(&self, sample: usize) -> &[f64] {
        &self.outputs[sample * self.resolution..(sample + 1) * self.resolution]
    }

    /// Rows `start..start + count` as a new dataset (train/test split).
    pub fn slice(&self, start: usize, count: usize) -> Result<Dataset> {
        if start + count > self.n_samples {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} exceeds {} samples",
                start + count,
                self.n_samples
            )));
        }
        let s = self.resolution;
        Ok(Dataset {
            pde: self.pde,
            resolution: s,
            n_samples: count,
            inputs: self.inputs[start * s..(start + count) * s].to_vec(),
            outputs: self.outputs[start * s..(start + count) * s].to_vec(),
            seed: self.seed,
            solver: self.solver,
        })
    }

    /// Keep every `factor`-th grid point of every sample.
    pub fn subsample_to(&self, resolution: usize) -> Result<Dataset> {
        if resolution == 0 || self.resolution % resolution != 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution {resolution} does not divide {}",
                self.resolution
            )));
        }
        let factor = self.resolution / resolution;
        let take = |rows: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(self.n_samples * resolution);
            for i in 0..self.n_samples {
                let row = &rows[i * self.resolution..(i + 1) * self.resolution];
                out.extend(subsample(row, factor).expect("factor divides"));
            }
            out
        };
        Ok(Dataset {
            pde: self.pde,
            resolution,
            n_samples: self.n_samples,
            inputs: take(&self.inputs),
            outputs: take(&self.outputs),
            seed: self.seed,
            solver: self.solver,
        })
    }
}

/// Keep every `factor`-th point starting at index 0.
pub fn subsample(field: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || field.len() % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "subsample factor {factor} does not divide length {}",
            field.len()
        )));
    }
    Ok(field.iter().step_by(factor).copied().collect())
}

fn solve_one(pde: PdeKind, solver: &SolverParams, u0: &[f64]) -> Result<Vec<f64>> {
    match (pde, solver) {
        (PdeKind::Burgers, SolverParams::Burgers { viscosity, dt, .. }) => {
            burgers_solve(u0, &BurgersParams::new(*viscosity, *dt)?)
        }
        (PdeKind::Kdv, SolverParams::Kdv { dt, dealias_fraction, .. }) => {
            let mut p = KdvParams::new(*dt)?;
            p.dealias_fraction = *dealias_fraction;
            kdv_solve(u0, &p)
        }
        _ => Err(Error::InvalidArgument("solver params do not match pde".into())),
    }
}

/// Draw `n_samples` initial conditions, solve at the high resolution, and
/// emit one dataset per requested resolution (each dividing the solve grid).
///
/// Per-sample sub-seeds derive from `seed` and the sample index, so the
/// result is byte-identical regardless of `jobs`.
pub fn generate_dataset(
    solver: &SolverParams,
    n_samples: usize,
    resolutions: &[usize],
    seed: u64,
    jobs: usize,
) -> Result<Vec<Dataset>> {
    let pde = solver.pde();
    let hi_res = solver.hi_res();
    let grid = Grid1D::new(hi_res)?;
    if n_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    for &r in resolutions {
        if r == 0 || hi_res % r != 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution {r} does not divide the solve grid {hi_res}"
            )));
        }
    }
    let spec = pde.grf_spec();
    let master = Rng::new(seed).split("data");

    let run = |i: usize| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rng = master.split_index(i as u64);
        let u0 = grf_sample(&spec, grid, &mut rng);
        let u1 = solve_one(pde, solver, &u0).map_err(|e| Error::SampleFailed {
            sample: i,
            source: Box::new(e),
        })?;
        Ok((u0, u1))
    };

    let pairs: Vec<(Vec<f64>, Vec<f64>)> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| (0..n_samples).into_par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        (0..n_samples).map(run).collect::<Result<Vec<_>>>()?
    };

    let mut out = Vec::with_capacity(resolutions.len());
    for &r in resolutions {
        let factor = hi_res / r;
        let mut inputs = Vec::with_capacity(n_samples * r);
        let mut outputs = Vec::with_capacity(n_samples * r);
        for (u0, u1) in &pairs {
            inputs.extend(subsample(u0, factor)?);
            outputs.extend(subsample(u1, factor)?);
        }
        out.push(Dataset {
            pde,
            resolution: r,
            n_samples,
            inputs,
            outputs,
            seed,
            solver: *solver,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_basics() {
        assert_eq!(subsample(&[1.0, 2.0, 3.0, 4.0], 1).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(subsample(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.0, 3.0]);
        assert!(subsample(&[1.0, 2.0, 3.0], 2).is_err());
    }

    // Composition law: subsampling by m1 then m2 equals subsampling by m1*m2.
    #[test]
    fn subsample_composes() {
        let field: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let once = subsample(&subsample(&field, 2).unwrap(), 4).unwrap();
        let direct = subsample(&field, 8).unwrap();
        assert_eq!(once, direct);
    }

    fn tiny_burgers() -> SolverParams {
        SolverParams::Burgers { viscosity: 0.1, dt: 1e-3, hi_res: 256 }
    }

    #[test]
    fn generation_is_deterministic_and_parallel_invariant() {
        let a = generate_dataset(&tiny_burgers(), 3, &[128, 256], 42, 1).unwrap();
        let b = generate_dataset(&tiny_burgers(), 3, &[128, 256], 42, 2).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.inputs.iter().zip(&y.inputs).all(|(u, v)| u.to_bits() == v.to_bits()));
            assert!(x.outputs.iter().zip(&y.outputs).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        // Different seed, different data.
        let c = generate_dataset(&tiny_burgers(), 3, &[128], 43, 1).unwrap();
        assert_ne!(a[0].inputs, c[0].inputs);
    }

    #[test]
    fn subsampled_rows_match_hi_res_rows() {
        let sets = generate_dataset(&tiny_burgers(), 2, &[64, 256], 7, 1).unwrap();
        let coarse = &sets[0];
        let fine = &sets[1];
        for s in 0..2 {
            for j in 0..64 {
                assert_eq!(coarse.input(s)[j], fine.input(s)[j * 4]);
                assert_eq!(coarse.output(s)[j], fine.output(s)[j * 4]);
            }
        }
    }

    #[test]
    fn bad_resolution_rejected() {
        assert!(generate_dataset(&tiny_burgers(), 1, &[100], 0, 1).is_err());
    }

    #[test]
    fn defaults_match_benchmark_tables() {
        assert_eq!(PdeKind::Burgers.default_hi_res(), 8192);
        assert_eq!(PdeKind::Burgers.default_resolutions(), vec![256, 512, 1024, 2048, 4096, 8192]);
        assert_eq!(PdeKind::Kdv.default_hi_res(), 1024);
        assert_eq!(PdeKind::Kdv.default_resolutions(), vec![128, 256, 512, 1024]);
    }

    #[test]
    fn slice_splits_rows() {
        let sets = generate_dataset(&tiny_burgers(), 4, &[64], 9, 1).unwrap();
        let ds = &sets[0];
        let train = ds.slice(0, 3).unwrap();
        let test = ds.slice(3, 1).unwrap();
        assert_eq!(train.n_samples, 3);
        assert_eq!(test.input(0), ds.input(3));
        assert!(ds.slice(2, 3).is_err());
    }
}
