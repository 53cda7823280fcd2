//! The Monte Carlo-type neural operator: lifting, iterated Monte Carlo
//! kernel layers over a fixed sample set, and pointwise projection.
//!
//! Each layer computes `relu(W v + b + k)` where the kernel term `k` comes
//! from the learned per-sample tensors `phi_i` applied to the latent
//! features at the sampled grid points. Two readings of the kernel term are
//! implemented behind [`KernelVariant`]:
//!
//! - `Global`: the literal Monte Carlo average `(1/N) sum_i phi_i v(y_i)`,
//!   a single vector broadcast to every grid point;
//! - `Interp` (default): the per-sample values `phi_i v(y_i)` treated as the
//!   operator's evaluations at the sampled locations and mapped onto the
//!   full grid by periodic linear interpolation.
//!
//! Sampling happens once, before training; evaluation on a different grid
//! keeps the fixed fractional sample coordinates and reads the latent
//! features there by interpolation, so one trained model serves any
//! resolution.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{
    add, broadcast_to_grid, gather_points, interp1d_with_plan, pointwise_linear,
    reduce_mean_samples, relu, reshape, sample_mix, scale, InterpPlan, Tape, Tensor,
};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelVariant {
    /// Broadcast the Monte Carlo average (constant in x).
    Global,
    /// Interpolate the per-sample kernel values onto the grid.
    Interp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MCNOConfig {
    /// Latent channel width.
    pub d_v: usize,
    pub n_layers: usize,
    /// Number of grid points sampled once before training.
    pub n_samples: usize,
    pub kernel_variant: KernelVariant,
    pub activation: Activation,
    /// Append the x coordinate as a second input channel to the lift.
    pub include_coordinate: bool,
    /// Hidden width of the two-stage projection.
    pub d_proj: usize,
    /// Give the per-layer local map an additive bias.
    pub layer_bias: bool,
}

impl Default for MCNOConfig {
    fn default() -> Self {
        MCNOConfig {
            d_v: 64,
            n_layers: 4,
            n_samples: 100,
            kernel_variant: KernelVariant::Interp,
            activation: Activation::Relu,
            include_coordinate: true,
            d_proj: 128,
            layer_bias: true,
        }
    }
}

impl MCNOConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_v < 1 {
            return Err(Error::InvalidField { field: "d_v".into(), reason: "must be >= 1".into() });
        }
        if self.n_layers < 1 {
            return Err(Error::InvalidField {
                field: "n_layers".into(),
                reason: "must be >= 1".into(),
            });
        }
        if self.n_samples < 2 {
            return Err(Error::InvalidField {
                field: "n_samples".into(),
                reason: "must be >= 2".into(),
            });
        }
        if self.d_proj < 1 {
            return Err(Error::InvalidField {
                field: "d_proj".into(),
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        if self.include_coordinate {
            2
        } else {
            1
        }
    }
}

/// The grid points sampled once before training: strictly increasing
/// indices into the training grid and the matching fractional coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    indices: Vec<usize>,
    coords: Vec<f64>,
}

impl SampleSet {
    /// Uniform draw without replacement (partial Fisher-Yates), sorted.
    pub fn draw(grid_size: usize, n: usize, rng: &mut Rng) -> Result<SampleSet> {
        if n > grid_size {
            return Err(Error::TooManySamples { requested: n, available: grid_size });
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
        }
        let indices = rng.sample_without_replacement(grid_size, n);
        Ok(SampleSet::from_indices(indices, grid_size).expect("draw respects invariants"))
    }

    pub fn from_indices(indices: Vec<usize>, grid_size: usize) -> Result<SampleSet> {
        if indices.len() < 2 {
            return Err(Error::InvalidArgument("sample set needs at least 2 indices".into()));
        }
        for (pos, w) in indices.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::NotStrictlyIncreasing { position: pos + 1 });
            }
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= grid_size) {
            return Err(Error::IndexOutOfRange { index: bad, extent: grid_size });
        }
        let coords = indices.iter().map(|&i| i as f64 / grid_size as f64).collect();
        Ok(SampleSet { indices, coords })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Uniform sample draw, exposed stand-alone for the sampling statistics
/// tests.
pub fn draw_samples(grid_size: usize, n: usize, rng: &mut Rng) -> Result<SampleSet> {
    SampleSet::draw(grid_size, n, rng)
}

/// A weight matrix with bias, applied pointwise per grid location.
#[derive(Clone, Debug)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Affine {
        let stddev = 1.0 / (fan_in as f64).sqrt();
        Affine {
            weight: Tensor::gaussian(&[fan_in, fan_out], stddev, rng).expect("valid shape"),
            bias: Tensor::zeros(&[fan_out]).expect("valid shape"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelLayer {
    pub local: Affine,
    /// `[N, d_v, d_v]`: one learnable mixing matrix per sample index.
    pub phi: Tensor,
}

#[derive(Clone, Debug)]
pub struct MCNOModel {
    pub config: MCNOConfig,
    /// Grid size the sample indices refer to.
    pub grid_size: usize,
    pub samples: SampleSet,
    pub lift: Affine,
    pub layers: Vec<KernelLayer>,
    pub proj_hidden: Affine,
    pub proj_out: Affine,
    /// Fixed (non-learnable) factor applied to the projected output.
    /// Training sets it to the RMS of the training targets so the learnable
    /// head works at unit scale regardless of how strongly the solution
    /// operator damps its input; the relative L2 metric is invariant to it.
    pub output_scale: f64,
}

enum SampleAccess {
    /// Exact gather by index (training grid).
    Gather,
    /// Periodic interpolation of the latent field at the stored coordinates
    /// (any evaluation grid).
    Interp(Arc<InterpPlan>),
}

impl MCNOModel {
    /// Fresh model: weights Gaussian with stddev `1/sqrt(fan_in)` per map,
    /// `phi` entries Gaussian with stddev `1/(d_v sqrt(N))` so the kernel
    /// term has unit-order output at init, biases zero, sample set drawn
    /// once. Weights and samples come from fixed labeled sub-streams of the
    /// master generator.
    pub fn init(config: MCNOConfig, grid_size: usize, master: &Rng) -> Result<MCNOModel> {
        config.validate()?;
        let mut wrng = master.split("weights");
        let mut srng = master.split("samples");
        let samples = SampleSet::draw(grid_size, config.n_samples, &mut srng)?;

        let lift = Affine::init(config.d_in(), config.d_v, &mut wrng);
        let phi_stddev = 1.0 / (config.d_v as f64 * (config.n_samples as f64).sqrt());
        let layers = (0..config.n_layers)
            .map(|_| KernelLayer {
                local: Affine::init(config.d_v, config.d_v, &mut wrng),
                phi: Tensor::gaussian(
                    &[config.n_samples, config.d_v, config.d_v],
                    phi_stddev,
                    &mut wrng,
                )
                .expect("valid shape"),
            })
            .collect();
        let proj_hidden = Affine::init(config.d_v, config.d_proj, &mut wrng);
        let proj_out = Affine::init(config.d_proj, 1, &mut wrng);

        Ok(MCNOModel {
            config,
            grid_size,
            samples,
            lift,
            layers,
            proj_hidden,
            proj_out,
            output_scale: 1.0,
        })
    }

    /// Parameters in canonical order (checkpoint layout, optimizer slots).
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("lift.weight".into(), &self.lift.weight),
            ("lift.bias".into(), &self.lift.bias),
        ];
        for (t, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{t}.weight"), &layer.local.weight));
            if self.config.layer_bias {
                out.push((format!("layer{t}.bias"), &layer.local.bias));
            }
            out.push((format!("layer{t}.phi"), &layer.phi));
        }
        out.push(("proj_hidden.weight".into(), &self.proj_hidden.weight));
        out.push(("proj_hidden.bias".into(), &self.proj_hidden.bias));
        out.push(("proj_out.weight".into(), &self.proj_out.weight));
        out.push(("proj_out.bias".into(), &self.proj_out.bias));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let layer_bias = self.config.layer_bias;
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("lift.weight".into(), &mut self.lift.weight),
            ("lift.bias".into(), &mut self.lift.bias),
        ];
        for (t, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{t}.weight"), &mut layer.local.weight));
            if layer_bias {
                out.push((format!("layer{t}.bias"), &mut layer.local.bias));
            }
            out.push((format!("layer{t}.phi"), &mut layer.phi));
        }
        out.push(("proj_hidden.weight".into(), &mut self.proj_hidden.weight));
        out.push(("proj_hidden.bias".into(), &mut self.proj_hidden.bias));
        out.push(("proj_out.weight".into(), &mut self.proj_out.weight));
        out.push(("proj_out.bias".into(), &mut self.proj_out.bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Clone with every parameter registered on the tape, so a forward pass
    /// records gradients for all of them.
    pub fn tracked(&self, tape: &mut Tape) -> MCNOModel {
        let mut clone = self.clone();
        for (_, p) in clone.named_params_mut() {
            *p = tape.watch(p);
        }
        clone
    }

    /// Clone with parameters replaced in canonical order (gradient checks).
    pub fn replace_params(&self, params: &[Tensor]) -> Result<MCNOModel> {
        let mut clone = self.clone();
        let slots = clone.named_params_mut();
        if slots.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                params.len()
            )));
        }
        for ((name, slot), value) in slots.into_iter().zip(params) {
            if slot.shape() != value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "replace_params",
                    detail: format!("{name}: {:?} vs {:?}", slot.shape(), value.shape()),
                });
            }
            *slot = value.clone();
        }
        Ok(clone)
    }

    /// Input channels for the lift: the raw function values, plus the grid
    /// coordinate when configured. Untracked (gradients flow to parameters
    /// only).
    fn lift_input(&self, a: &Tensor) -> Result<Tensor> {
        let (bsz, grid) = (a.shape()[0], a.shape()[1]);
        let d_in = self.config.d_in();
        let ad = a.data();
        let mut vals = vec![0.0; bsz * grid * d_in];
        for b in 0..bsz {
            for g in 0..grid {
                vals[(b * grid + g) * d_in] = ad[b * grid + g];
                if d_in == 2 {
                    vals[(b * grid + g) * d_in + 1] = g as f64 / grid as f64;
                }
            }
        }
        Tensor::from_values(&[bsz, grid, d_in], vals)
    }

    fn layer_forward(
        &self,
        tape: &mut Tape,
        t: usize,
        v: &Tensor,
        access: &SampleAccess,
        kernel_plan: Option<&Arc<InterpPlan>>,
        activate: bool,
    ) -> Result<Tensor> {
        let grid = v.shape()[1];
        let layer = &self.layers[t];
        let vs = match access {
            SampleAccess::Gather => gather_points(tape, v, self.samples.indices())?,
            SampleAccess::Interp(plan) => interp1d_with_plan(tape, v, plan)?,
        };
        let z = sample_mix(tape, &layer.phi, &vs)?;
        let kernel_term = match self.config.kernel_variant {
            KernelVariant::Global => {
                let mean = reduce_mean_samples(tape, &z)?;
                broadcast_to_grid(tape, &mean, grid)?
            }
            KernelVariant::Interp => {
                let plan = kernel_plan.expect("interp variant carries a kernel plan");
                interp1d_with_plan(tape, &z, plan)?
            }
        };
        let local = pointwise_linear(tape, v, &layer.local.weight, &layer.local.bias)?;
        let summed = add(tape, &local, &kernel_term)?;
        if activate {
            relu(tape, &summed)
        } else {
            Ok(summed)
        }
    }

    /// One kernel layer on the training grid, activation included:
    /// `relu(W v + b + k)`.
    pub fn kernel_layer(&self, tape: &mut Tape, t: usize, v: &Tensor) -> Result<Tensor> {
        if v.shape().len() != 3 || v.shape()[1] != self.grid_size {
            return Err(Error::ShapeMismatch {
                op: "kernel_layer",
                detail: format!(
                    "expected [B, {}, {}], got {:?}",
                    self.grid_size,
                    self.config.d_v,
                    v.shape()
                ),
            });
        }
        let kernel_plan = self.kernel_plan_for_grid(self.grid_size)?;
        self.layer_forward(tape, t, v, &SampleAccess::Gather, kernel_plan.as_ref(), true)
    }

    fn kernel_plan_for_grid(&self, grid: usize) -> Result<Option<Arc<InterpPlan>>> {
        match self.config.kernel_variant {
            KernelVariant::Global => Ok(None),
            KernelVariant::Interp => {
                let xq: Vec<f64> = (0..grid).map(|g| g as f64 / grid as f64).collect();
                Ok(Some(Arc::new(InterpPlan::new(self.samples.coords(), &xq)?)))
            }
        }
    }

    fn run(&self, tape: &mut Tape, a: &Tensor, access: SampleAccess) -> Result<Tensor> {
        if a.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!("expected [B, G], got {:?}", a.shape()),
            });
        }
        if !a.is_finite() {
            return Err(Error::NonFinite { context: "forward input".into() });
        }
        let (bsz, grid) = (a.shape()[0], a.shape()[1]);
        let kernel_plan = self.kernel_plan_for_grid(grid)?;
        let x = self.lift_input(a)?;
        let mut v = pointwise_linear(tape, &x, &self.lift.weight, &self.lift.bias)?;
        for t in 0..self.config.n_layers {
            let activate = t + 1 < self.config.n_layers;
            v = self.layer_forward(tape, t, &v, &access, kernel_plan.as_ref(), activate)?;
        }
        let hidden = pointwise_linear(tape, &v, &self.proj_hidden.weight, &self.proj_hidden.bias)?;
        let hidden = relu(tape, &hidden)?;
        let out = pointwise_linear(tape, &hidden, &self.proj_out.weight, &self.proj_out.bias)?;
        let out = reshape(tape, &out, &[bsz, grid])?;
        if self.output_scale == 1.0 {
            Ok(out)
        } else {
            scale(tape, &out, self.output_scale)
        }
    }

    /// Forward pass on the training grid (exact gather at the sampled
    /// indices). Input `[B, G]`, output `[B, G]`.
    pub fn forward(&self, tape: &mut Tape, a: &Tensor) -> Result<Tensor> {
        if a.shape().len() == 2 && a.shape()[1] != self.grid_size {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!(
                    "input grid {} differs from training grid {}; use forward_at_resolution",
                    a.shape()[1],
                    self.grid_size
                ),
            });
        }
        self.run(tape, a, SampleAccess::Gather)
    }

    /// Forward pass on an arbitrary grid: the fixed fractional sample
    /// coordinates are read from the latent field by periodic linear
    /// interpolation; everything else is resolution-agnostic.
    pub fn forward_at_resolution(&self, tape: &mut Tape, a: &Tensor) -> Result<Tensor> {
        if a.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "forward_at_resolution",
                detail: format!("expected [B, G'], got {:?}", a.shape()),
            });
        }
        let grid = a.shape()[1];
        let xs: Vec<f64> = (0..grid).map(|g| g as f64 / grid as f64).collect();
        let plan = Arc::new(InterpPlan::new(&xs, self.samples.coords())?);
        self.run(tape, a, SampleAccess::Interp(plan))
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, a: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        if a.shape().len() == 2 && a.shape()[1] == self.grid_size {
            self.forward(&mut tape, a)
        } else {
            self.forward_at_resolution(&mut tape, a)
        }
    }
}

/// Finite-difference sweep over every parameter of a 4-layer model
/// (B = 2, G = 64, d_v = 8, N = 8) against the tape gradients.
///
/// The model, input, and loss target all derive from `seed`. ReLU kinks make
/// individual seeds unusable when a preactivation falls inside the FD
/// window; the default harnesses use seed 1, which is clear of kinks for
/// both kernel variants at h = 1e-6.
pub fn full_model_fd_check(
    variant: KernelVariant,
    seed: u64,
    h: f64,
    tol: f64,
) -> Result<crate::tensor::GradCheckReport> {
    let config = MCNOConfig {
        d_v: 8,
        n_samples: 8,
        kernel_variant: variant,
        ..MCNOConfig::default()
    };
    let master = Rng::new(seed);
    let model = MCNOModel::init(config, 64, &master)?;
    let mut rng = Rng::new(seed.wrapping_mul(31).wrapping_add(7));
    let a = Tensor::from_values(&[2, 64], (0..128).map(|_| rng.uniform() * 2.0 - 1.0).collect())?;
    let truth =
        Tensor::from_values(&[2, 64], (0..128).map(|_| rng.uniform() * 2.0 - 1.0).collect())?;
    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    crate::tensor::grad_check(
        &format!("mcno_forward_{}", match variant {
            KernelVariant::Global => "global",
            KernelVariant::Interp => "interp",
        }),
        move |tape, p| {
            let m = model.replace_params(p)?;
            let pred = m.forward(tape, &a)?;
            crate::tensor::rel_l2_loss(tape, &pred, &truth)
        },
        &params,
        h,
        tol,
        seed,
    )
}
