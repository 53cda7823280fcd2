//! Central finite-difference verification of tape gradients.

use super::{ops, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Outcome of one finite-difference sweep.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub coords_checked: usize,
    /// Max relative error among coordinates outside the absolute-error
    /// fallback regime.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub tol: f64,
    pub pass: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} {:>4} coords  max rel err {:.3e}  max abs err {:.3e}  {}",
            self.name,
            self.coords_checked,
            self.max_rel_err,
            self.max_abs_err,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

/// Compare tape gradients of a scalar-valued builder against central
/// differences `(f(p+h) - f(p-h)) / 2h`.
///
/// All coordinates are checked for tensors with at most 64 entries; larger
/// tensors get 64 distinct randomly chosen coordinates. A coordinate passes
/// if the absolute error is below 1e-8 (near-zero fallback) or the relative
/// error is below `tol`.
pub fn grad_check<F>(
    name: &str,
    build: F,
    params: &[Tensor],
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    assert!(h > 0.0, "step size must be positive");
    let mut tape = Tape::new();
    let tracked: Vec<Tensor> = params.iter().map(|p| tape.watch(p)).collect();
    let loss = build(&mut tape, &tracked)?;
    let loss_value = loss.scalar()?;
    if !loss_value.is_finite() {
        return Err(Error::NonFinite {
            context: format!("grad_check `{name}` loss"),
        });
    }
    let mut grads = tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = tracked
        .iter()
        .map(|t| grads.take(t).expect("watched leaf has a gradient buffer"))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let value = build(&mut t, perturbed)?.scalar()?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: format!("grad_check `{name}` perturbed loss"),
            });
        }
        Ok(value)
    };

    let rng = Rng::new(seed).split("gradcheck-coords");
    let mut coords_checked = 0;
    let mut max_rel_err: f64 = 0.0;
    let mut max_abs_err: f64 = 0.0;
    let mut pass = true;

    let mut work: Vec<Tensor> = params.iter().map(Tensor::detach).collect();
    for (ti, param) in params.iter().enumerate() {
        let numel = param.numel();
        let coords: Vec<usize> = if numel <= 64 {
            (0..numel).collect()
        } else {
            rng.split_index(ti as u64).sample_without_replacement(numel, 64)
        };
        for &ci in &coords {
            let base = param.data()[ci];
            work[ti].data_mut()[ci] = base + h;
            let f_plus = eval(&work)?;
            work[ti].data_mut()[ci] = base - h;
            let f_minus = eval(&work)?;
            work[ti].data_mut()[ci] = base;

            let fd = (f_plus - f_minus) / (2.0 * h);
            let ad = analytic[ti][ci];
            let abs_err = (ad - fd).abs();
            max_abs_err = max_abs_err.max(abs_err);
            coords_checked += 1;
            if abs_err <= 1e-8 {
                continue;
            }
            let rel = abs_err / ad.abs().max(fd.abs());
            max_rel_err = max_rel_err.max(rel);
            if rel >= tol {
                pass = false;
            }
        }
    }

    Ok(GradCheckReport {
        name: name.to_string(),
        coords_checked,
        max_rel_err,
        max_abs_err,
        tol,
        pass,
    })
}

fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect();
    Tensor::from_values(shape, values).expect("valid shape")
}

/// Finite-difference sweep over every differentiable op, each wrapped in a
/// relative-L2 loss against a fixed random target so the chain rule is
/// exercised end to end.
pub fn op_suite(seed: u64, h: f64, tol: f64) -> Result<Vec<GradCheckReport>> {
    let mut rng = Rng::new(seed).split("op-suite");
    let mut reports = Vec::new();

    {
        let x = rand_tensor(&[2, 5, 3], &mut rng);
        let w = rand_tensor(&[3, 4], &mut rng);
        let b = rand_tensor(&[4], &mut rng);
        let target = rand_tensor(&[2, 20], &mut rng);
        reports.push(grad_check(
            "pointwise_linear",
            move |tape, p| {
                let out = ops::pointwise_linear(tape, &p[0], &p[1], &p[2])?;
                let flat = ops::reshape(tape, &out, &[2, 20])?;
                ops::rel_l2_loss(tape, &flat, &target)
            },
            &[x, w, b],
            h,
            tol,
            seed,
        )?);
    }
    {
        let phi = rand_tensor(&[6, 3, 3], &mut rng);
        let vs = rand_tensor(&[2, 6, 3], &mut rng);
        let target = rand_tensor(&[2, 18], &mut rng);
        reports.push(grad_check(
            "sample_mix",
            move |tape, p| {
                let out = ops::sample_mix(tape, &p[0], &p[1])?;
                let flat = ops::reshape(tape, &out, &[2, 18])?;
                ops::rel_l2_loss(tape, &flat, &target)
            },
            &[phi, vs],
            h,
            tol,
            seed,
        )?);
    }
    {
        let v = rand_tensor(&[2, 8, 3], &mut rng);
        let target = rand_tensor(&[2, 9], &mut rng);
        reports.push(grad_check(
            "gather_points",
            move |tape, p| {
                let out = ops::gather_points(tape, &p[0], &[0, 3, 5])?;
                let flat = ops::reshape(tape, &out, &[2, 9])?;
                ops::rel_l2_loss(tape, &flat, &target)
            },
            &[v],
            h,
            tol,
            seed,
        )?);
    }
    {
        let z = rand_tensor(&[2, 7, 4], &mut rng);
        let target = rand_tensor(&[2, 4], &mut rng);
        reports.push(grad_check(
            "reduce_mean_samples",
            move |tape, p| {
                let out = ops::reduce_mean_samples(tape, &p[0])?;
                ops::rel_l2_loss(tape, &out, &target)
            },
            &[z],
            h,
            tol,
            seed,
        )?);
    }
    {
        let k = rand_tensor(&[2, 3], &mut rng);
        let target = rand_tensor(&[2, 15], &mut rng);
        reports.push(grad_check(
            "broadcast_to_grid",
            move |tape, p| {
                let out = ops::broadcast_to_grid(tape, &p[0], 5)?;
                let flat = ops::reshape(tape, &out, &[2, 15])?;
                ops::rel_l2_loss(tape, &flat, &target)
            },
            &[k],
            h,
            tol,
            seed,
        )?);
    }
    {
        let z = rand_tensor(&[2, 5, 3], &mut rng);
        let xs = [0.05, 0.22, 0.47, 0.71, 0.9];
        let xq: Vec<f64> = (0..9).map(|i| i as f64 / 9.0).collect();
        let target = rand_tensor(&[2, 27], &mut rng);
        reports.push(grad_check(
            "interp1d_periodic",
            move |tape, p| {
                let out = ops::interp1d_periodic(tape, &p[0], &xs, &xq)?;
                let flat = ops::reshape(tape, &out, &[2, 27])?;
                ops::rel_l2_loss(tape, &flat, &target)
            },
            &[z],
            h,
            tol,
            seed,
        )?);
    }
    {
        let x = rand_tensor(&[3, 8], &mut rng);
        let target = rand_tensor(&[3, 8], &mut rng);
        reports.push(grad_check(
            "relu",
            move |tape, p| {
                let out = ops::relu(tape, &p[0])?;
                ops::rel_l2_loss(tape, &out, &target)
            },
            &[x],
            h,
            tol,
            seed,
        )?);
    }
    {
        let a = rand_tensor(&[4, 6], &mut rng);
        let b = rand_tensor(&[4, 6], &mut rng);
        let target = rand_tensor(&[4, 6], &mut rng);
        reports.push(grad_check(
            "add",
            move |tape, p| {
                let out = ops::add(tape, &p[0], &p[1])?;
                ops::rel_l2_loss(tape, &out, &target)
            },
            &[a, b],
            h,
            tol,
            seed,
        )?);
    }
    {
        let x = rand_tensor(&[5, 4], &mut rng);
        reports.push(grad_check(
            "scale_sum_reshape",
            move |tape, p| {
                let r = ops::reshape(tape, &p[0], &[2, 10])?;
                let s = ops::sum_all(tape, &r)?;
                ops::scale(tape, &s, 0.37)
            },
            &[x],
            h,
            tol,
            seed,
        )?);
    }
    {
        let pred = rand_tensor(&[2, 6], &mut rng);
        let target = rand_tensor(&[2, 6], &mut rng);
        reports.push(grad_check(
            "rel_l2_loss",
            move |tape, p| ops::rel_l2_loss(tape, &p[0], &target),
            &[pred],
            h,
            tol,
            seed,
        )?);
    }

    Ok(reports)
}
