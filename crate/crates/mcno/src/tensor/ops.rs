//! The closed op set: forward kernels, shape checks, and tape recording.

use super::tape::{Record, Saved, Tape};
use super::Tensor;
use crate::error::{Error, Result};
use std::sync::Arc;

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("expected rank {rank}, got shape {:?}", t.shape()),
        });
    }
    Ok(())
}

/// `out[b,g,:] = weight^T x[b,g,:] + bias`, independently per grid point.
/// Implements the lifting map, the per-layer local linear map, and both
/// projection stages.
pub fn pointwise_linear(tape: &mut Tape, x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank("pointwise_linear", x, 3)?;
    expect_rank("pointwise_linear", weight, 2)?;
    expect_rank("pointwise_linear", bias, 1)?;
    let (bsz, grid, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (win, cout) = (weight.shape()[0], weight.shape()[1]);
    if win != cin || bias.shape()[0] != cout {
        return Err(Error::ShapeMismatch {
            op: "pointwise_linear",
            detail: format!(
                "x {:?} weight {:?} bias {:?}",
                x.shape(),
                weight.shape(),
                bias.shape()
            ),
        });
    }
    let rows = bsz * grid;
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![0.0; rows * cout];
    for r in 0..rows {
        let xrow = &xd[r * cin..(r + 1) * cin];
        let orow = &mut out[r * cout..(r + 1) * cout];
        orow.copy_from_slice(bd);
        for ci in 0..cin {
            let xv = xrow[ci];
            let wrow = &wd[ci * cout..(ci + 1) * cout];
            for co in 0..cout {
                orow[co] += xv * wrow[co];
            }
        }
    }
    tape.count_pointwise((rows * cout * (2 * cin + 1)) as u64);
    let shape = vec![bsz, grid, cout];
    if x.node().is_some() || weight.node().is_some() || bias.node().is_some() {
        let id = tape.alloc_node(out.len());
        let t = Tensor::tracked(shape, out, id);
        tape.push(Record::PointwiseLinear {
            x: Saved::of(x),
            w: Saved::of(weight),
            b_node: bias.node(),
            out: id,
            dims: (rows, cin, cout),
        });
        Ok(t)
    } else {
        Tensor::from_values(&shape, out)
    }
}

/// Per-sample channel mixing: `out[b,i,:] = phi[i] . vs[b,i,:]`.
/// This is the learned kernel applied to the latent features at the sampled
/// points; it aggregates spatial and channel information in one step.
pub fn sample_mix(tape: &mut Tape, phi: &Tensor, vs: &Tensor) -> Result<Tensor> {
    expect_rank("sample_mix", phi, 3)?;
    expect_rank("sample_mix", vs, 3)?;
    let (n, co_, ci_) = (phi.shape()[0], phi.shape()[1], phi.shape()[2]);
    let (bsz, nv, c) = (vs.shape()[0], vs.shape()[1], vs.shape()[2]);
    if co_ != ci_ || co_ != c || n != nv {
        return Err(Error::ShapeMismatch {
            op: "sample_mix",
            detail: format!("phi {:?} vs {:?}", phi.shape(), vs.shape()),
        });
    }
    let pd = phi.data();
    let vd = vs.data();
    let mut out = vec![0.0; bsz * n * c];
    for b in 0..bsz {
        for i in 0..n {
            let vrow = &vd[(b * n + i) * c..(b * n + i + 1) * c];
            let block = &pd[i * c * c..(i + 1) * c * c];
            let orow = &mut out[(b * n + i) * c..(b * n + i + 1) * c];
            for co in 0..c {
                let prow = &block[co * c..(co + 1) * c];
                let mut acc = 0.0;
                for ci in 0..c {
                    acc += prow[ci] * vrow[ci];
                }
                orow[co] = acc;
            }
        }
    }
    tape.count_sample((2 * bsz * n * c * c) as u64);
    let shape = vec![bsz, n, c];
    if phi.node().is_some() || vs.node().is_some() {
        let id = tape.alloc_node(out.len());
        let t = Tensor::tracked(shape, out, id);
        tape.push(Record::SampleMix {
            phi: Saved::of(phi),
            vs: Saved::of(vs),
            out: id,
            dims: (bsz, n, c),
        });
        Ok(t)
    } else {
        Tensor::from_values(&shape, out)
    }
}

/// `out[b,i,:] = v[b,idx[i],:]` for a strictly increasing index list.
pub fn gather_points(tape: &mut Tape, v: &Tensor, idx: &[usize]) -> Result<Tensor> {
    expect_rank("gather_points", v, 3)?;
    let (bsz, grid, c) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    if idx.is_empty() {
        return Err(Error::InvalidArgument("gather_points: empty index list".into()));
    }
    for (pos, win) in idx.windows(2).enumerate() {
        if win[1] <= win[0] {
            return Err(Error::NotStrictlyIncreasing { position: pos + 1 });
        }
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= grid) {
        return Err(Error::IndexOutOfRange { index: bad, extent: grid });
    }
    let n = idx.len();
    let vd = v.data();
    let mut out = vec![0.0; bsz * n * c];
    for b in 0..bsz {
        for (i, &src) in idx.iter().enumerate() {
            out[(b * n + i) * c..(b * n + i + 1) * c]
                .copy_from_slice(&vd[(b * grid + src) * c..(b * grid + src + 1) * c]);
        }
    }
    tape.count_sample((bsz * n * c) as u64);
    let shape = vec![bsz, n, c];
    if let Some(v_node) = v.node() {
        let id = tape.alloc_node(out.len());
        let t = Tensor::tracked(shape, out, id);
        tape.push(Record::GatherPoints {
            v_node,
            idx: Arc::new(idx.to_vec()),
            out: id,
            dims: (bsz, grid, c),
        });
        Ok(t)
    } else {
        Tensor::from_values(&shape, out)
    }
}

/// Monte Carlo average over the sample axis: `out[b,:] = (1/N) sum_i z[b,i,:]`.
pub fn reduce_mean_samples(tape: &mut Tape, z: &Tensor) -> Result<Tensor> {
    expect_rank("reduce_mean_samples", z, 3)?;
    let (bsz, n, c) = (z.shape()[0], z.shape()[1], z.shape()[2]);
    let zd = z.data();
    let inv = 1.0 / n as f64;
    let mut out = vec![0.0; bsz * c];
    for b in 0..bsz {
        let orow = &mut out[b * c..(b + 1) * c];
        for i in 0..n {
            let zrow = &zd[(b * n + i) * c..(b * n + i + 1) * c];
            for ch in 0..c {
                orow[ch] += zrow[ch];
            }
        }
        for v in orow.iter_mut() {
            *v *= inv;
        }
    }
    tape.count_sample((bsz * n * c + bsz * c) as u64);
    let shape = vec![bsz, c];
    if let Some(z_node) = z.node() {
        let id = tape.alloc_node(out.len());
        let t = Tensor::tracked(shape, out, id);
        tape.push(Record::ReduceMeanSamples {
            z_node,
            out: id,
            dims: (bsz, n, c),
        });
        Ok(t)
    } else {
        Tensor::from_values(&shape, out)
    }
}

/// Replicate `k[b,:]` at every grid point: the x-independent kernel term of
/// the literal Monte Carlo average.
pub fn broadcast_to_grid(tape: &mut Tape, k: &Tensor, grid: usize) -> Result<Tensor> {
    expect_rank("broadcast_to_grid", k, 2)?;
    if grid == 0 {
        return Err(Error::InvalidArgument("broadcast_to_grid: grid must be >= 1".into()));
    }
    let (bsz, c) = (k.shape()[0], k.shape()[1]);
    let kd = k.data();
    let mut out = vec![0.0; bsz * grid * c];
    for b in 0..bsz {
        let krow = &kd[b * c..(b + 1) * c];
        for g in 0..grid {
            out[(b * grid + g) * c..(b * grid + g + 1) * c].copy_from_slice(krow);
        }
    }
    tape.count_grid((bsz * grid * c) as u64);
    let shape = vec![bsz, grid, c];
    if let Some(k_node) = k.node() {
        let id = tape.alloc_node(out.len());
        let t = Tensor::tracked(shape, out, id);
        tape.push(Record::BroadcastToGrid {
            k_node,
            out: id,
            dims: (bsz, grid, c),
        });
        Ok(t)
    } else {
        Tensor::from_values(&shape, out)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct InterpEntry {
    pub lo: u32,
    pub hi: u32,
    pub weight: f64,
}

/// Precomputed periodic piecewise-linear interpolation from nodes `xs` to
/// queries `xq`, both in `[0, 1)`. The segment from `xs[N-1]` to `xs[0]+1`
/// wraps around the domain.
#[derive(Debug)]
pub struct InterpPlan {
    n_nodes: usize,
    entries: Vec<InterpEntry>,
}

impl InterpPlan {
    pub fn new(xs: &[f64], xq: &[f64]) -> Result<InterpPlan> {
        if xs.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "interpolation needs at least 2 nodes, got {}",
                xs.len()
            )));
        }
        for (pos, win) in xs.windows(2).enumerate() {
            if win[1] <= win[0] {
                return Err(Error::NotStrictlyIncreasing { position: pos + 1 });
            }
        }
        for &x in xs.iter().chain(xq) {
            if !(0.0..1.0).contains(&x) {
                return Err(Error::CoordinateOutOfDomain { value: x });
            }
        }
        let n = xs.len();
        let wrap_span = xs[0] + 1.0 - xs[n - 1];
        let entries = xq
            .iter()
            .map(|&q| {
                let i = xs.partition_point(|&x| x <= q);
                if i == 0 {
                    // Left of the first node: on the wrapped segment.
                    let t = q + 1.0 - xs[n - 1];
                    InterpEntry { lo: (n - 1) as u32, hi: 0, weight: t / wrap_span }
                } else if i == n {
                    let t = q - xs[n - 1];
                    InterpEntry { lo: (n - 1) as u32, hi: 0, weight: t / wrap_span }
                } else {
                    let span = xs[i] - xs[i - 1];
                    InterpEntry {
                        lo: (i - 1) as u32,
                        hi: i as u32,
                        weight: (q - xs[i - 1]) / span,
                    }
                }
            })
            .collect();
        Ok(InterpPlan { n_nodes: n, entries })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_queries(&self) -> usize {
        self.entries.len()
    }

    pub(crate) fn entries(&self) -> &[InterpEntry] {
        &self.entries
    }
}

/// Periodic linear interpolation of per-node values `z[B,N,C]` at query
/// coordinates; linear in `z`, with the transpose as backward rule.
pub fn interp1d_periodic(tape: &mut Tape, z: &Tensor, xs: &[f64], xq: &[f64]) -> Result<Tensor> {
    let plan = Arc::new(InterpPlan::new(xs, xq)?);
    interp1d_with_plan(tape, z, &plan)
}

/// [`interp1d_periodic`] with a reusable plan (same node/query coordinates
/// across layers or batches).
pub fn interp1d_with_plan(tape: &mut Tape, z: &Tensor, plan: &Arc<InterpPlan>) -> Result<Tensor> {
    expect_rank("interp1d_periodic", z, 3)?;
    let (bsz, n, c) = (z.shape()[0], z.shape()[1], z.shape()[2]);
    if n != plan.n_nodes {
        return Err(Error::ShapeMismatch {
            op: "interp1d_periodic",
            detail: format!("z has {n} nodes, plan expects {}", plan.n_nodes),
        });
    }
    let q = plan.entries.len();
    let zd = z.data();
    let mut out = vec![0.0; bsz * q * c];
    for b in 0..bsz {
        for (qi, e) in plan.entries.iter().enumerate() {
            let lo = &zd[(b * n + e.lo as usize) * c..(b * n + e.lo as usize + 1) * c];
            let hi = &zd[(b * n + e.hi as usize) * c..(b * n + e.hi as usize + 1) * c];
            let orow = &mut out[(b * q + qi) * c..(b * q + qi + 1) * c];
            let w = e.weight;
            for ch in 0..c {
                orow[ch] = (1.0 - w) * lo[ch] + w * hi[ch];
            }
        }
    }
    tape.count_grid((3 * bsz * q * c) as u64);
    let shape = vec![bsz, q, c];
    if let Some(z_node) = z.node() {
        let id = tape.alloc_node(out.len());
        let t = Tensor::tracked(shape, out, id);
        tape.push(Record::Interp1d {
            z_node,
            plan: Arc::clone(plan),
            out: id,
            dims: (bsz, c),
        });
        Ok(t)
    } else {
        Tensor::from_values(&shape, out)
    }
}

/// Elementwise `max(x, 0)`; backward uses subgradient 0 at the kink.
pub fn relu(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let out: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    tape.count_pointwise(x.numel() as u64);
    if x.node().is_some() {
        let id = tape.alloc_node(out.len());
        let t = Tensor::tracked(x.shape().to_vec(), out, id);
        tape.push(Record::Relu { x: Saved::of(x), out: id });
        Ok(t)
    } else {
        Tensor::from_values(x.shape(), out)
    }
}

/// Elementwise sum of two same-shape tensors.
pub fn add(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "add",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    tape.count_pointwise(a.numel() as u64);
    if a.node().is_some() || b.node().is_some() {
        let id = tape.alloc_node(out.len());
        let t = Tensor::tracked(a.shape().to_vec(), out, id);
        tape.push(Record::Add {
            a_node: a.node(),
            b_node: b.node(),
            out: id,
            numel: a.numel(),
        });
        Ok(t)
    } else {
        Tensor::from_values(a.shape(), out)
    }
}

/// Same data, new shape (extent product must match).
pub fn reshape(tape: &mut Tape, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if shape.is_empty() || n != x.numel() {
        return Err(Error::ShapeMismatch {
            op: "reshape",
            detail: format!("{:?} -> {:?}", x.shape(), shape),
        });
    }
    if let Some(x_node) = x.node() {
        let id = tape.alloc_node(n);
        let t = Tensor::tracked(shape.to_vec(), x.data().to_vec(), id);
        tape.push(Record::Reshape { x_node, out: id });
        Ok(t)
    } else {
        Tensor::from_values(shape, x.data().to_vec())
    }
}

/// Sum of all entries, as a `[1]` tensor.
pub fn sum_all(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let s: f64 = x.data().iter().sum();
    tape.count_pointwise(x.numel() as u64);
    if let Some(x_node) = x.node() {
        let id = tape.alloc_node(1);
        let t = Tensor::tracked(vec![1], vec![s], id);
        tape.push(Record::SumAll { x_node, out: id, numel: x.numel() });
        Ok(t)
    } else {
        Tensor::from_values(&[1], vec![s])
    }
}

/// Multiply every entry by a constant.
pub fn scale(tape: &mut Tape, x: &Tensor, factor: f64) -> Result<Tensor> {
    let out: Vec<f64> = x.data().iter().map(|&v| factor * v).collect();
    tape.count_pointwise(x.numel() as u64);
    if let Some(x_node) = x.node() {
        let id = tape.alloc_node(out.len());
        let t = Tensor::tracked(x.shape().to_vec(), out, id);
        tape.push(Record::Scale { x_node, factor, out: id });
        Ok(t)
    } else {
        Tensor::from_values(x.shape(), out)
    }
}

/// Mean over the batch of `||pred_b - truth_b||_2 / ||truth_b||_2`.
/// Differentiable in `pred`; the gradient does not flow into `truth`.
pub fn rel_l2_loss(tape: &mut Tape, pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
    expect_rank("rel_l2_loss", pred, 2)?;
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            op: "rel_l2_loss",
            detail: format!("{:?} vs {:?}", pred.shape(), truth.shape()),
        });
    }
    let (bsz, grid) = (pred.shape()[0], pred.shape()[1]);
    let pd = pred.data();
    let td = truth.data();
    let mut norms = Vec::with_capacity(bsz);
    let mut acc = 0.0;
    for b in 0..bsz {
        let mut diff_sq = 0.0;
        let mut truth_sq = 0.0;
        for g in 0..grid {
            let k = b * grid + g;
            let d = pd[k] - td[k];
            diff_sq += d * d;
            truth_sq += td[k] * td[k];
        }
        if truth_sq == 0.0 {
            return Err(Error::ZeroNormTruth { row: b });
        }
        let diff_norm = diff_sq.sqrt();
        let truth_norm = truth_sq.sqrt();
        norms.push((diff_norm, truth_norm));
        acc += diff_norm / truth_norm;
    }
    let loss = acc / bsz as f64;
    tape.count_pointwise((4 * bsz * grid) as u64);
    if pred.node().is_some() {
        let id = tape.alloc_node(1);
        let t = Tensor::tracked(vec![1], vec![loss], id);
        tape.push(Record::RelL2 {
            pred: Saved::of(pred),
            truth: truth.share_data(),
            out: id,
            dims: (bsz, grid),
            norms,
        });
        Ok(t)
    } else {
        Tensor::from_values(&[1], vec![loss])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn rand_vals(n: usize, rng: &mut Rng) -> Vec<f64> {
        (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn pointwise_linear_identity_case() {
        let mut tape = Tape::new();
        let x = Tensor::from_values(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_values(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        let out = pointwise_linear(&mut tape, &x, &w, &b).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn pointwise_linear_bias_shift() {
        let mut tape = Tape::new();
        let x = Tensor::from_values(&[1, 1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_values(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::constant(&[2], 10.0).unwrap();
        let out = pointwise_linear(&mut tape, &x, &w, &b).unwrap();
        assert_eq!(out.data(), &[11.0, 12.0]);
    }

    // Brute-force triple-loop oracle.
    #[test]
    fn pointwise_linear_matches_loop_oracle() {
        let mut rng = Rng::new(17);
        let (bsz, g, cin, cout) = (3, 5, 4, 6);
        let x = Tensor::from_values(&[bsz, g, cin], rand_vals(bsz * g * cin, &mut rng)).unwrap();
        let w = Tensor::from_values(&[cin, cout], rand_vals(cin * cout, &mut rng)).unwrap();
        let b = Tensor::from_values(&[cout], rand_vals(cout, &mut rng)).unwrap();
        let mut tape = Tape::new();
        let out = pointwise_linear(&mut tape, &x, &w, &b).unwrap();

        let mut oracle = vec![0.0; bsz * g * cout];
        for bi in 0..bsz {
            for gi in 0..g {
                for co in 0..cout {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        acc += x.data()[(bi * g + gi) * cin + ci] * w.data()[ci * cout + co];
                    }
                    oracle[(bi * g + gi) * cout + co] = acc;
                }
            }
        }
        assert!(max_abs_diff(out.data(), &oracle) < 1e-12);
    }

    #[test]
    fn sample_mix_identity_and_doubling() {
        let mut rng = Rng::new(5);
        let (bsz, n, c) = (2, 4, 3);
        let vs = Tensor::from_values(&[bsz, n, c], rand_vals(bsz * n * c, &mut rng)).unwrap();
        let mut eye = vec![0.0; n * c * c];
        for i in 0..n {
            for ch in 0..c {
                eye[i * c * c + ch * c + ch] = 1.0;
            }
        }
        let phi = Tensor::from_values(&[n, c, c], eye.clone()).unwrap();
        let mut tape = Tape::new();
        let out = sample_mix(&mut tape, &phi, &vs).unwrap();
        assert_eq!(out.data(), vs.data());

        let phi2 = Tensor::from_values(&[n, c, c], eye.iter().map(|v| 2.0 * v).collect()).unwrap();
        let out2 = sample_mix(&mut tape, &phi2, &vs).unwrap();
        let doubled: Vec<f64> = vs.data().iter().map(|v| 2.0 * v).collect();
        assert!(max_abs_diff(out2.data(), &doubled) < 1e-15);
    }

    // Per-index matrix-vector oracle.
    #[test]
    fn sample_mix_matches_matvec_oracle() {
        let mut rng = Rng::new(23);
        let (bsz, n, c) = (2, 5, 4);
        let phi = Tensor::from_values(&[n, c, c], rand_vals(n * c * c, &mut rng)).unwrap();
        let vs = Tensor::from_values(&[bsz, n, c], rand_vals(bsz * n * c, &mut rng)).unwrap();
        let mut tape = Tape::new();
        let out = sample_mix(&mut tape, &phi, &vs).unwrap();

        let mut oracle = vec![0.0; bsz * n * c];
        for b in 0..bsz {
            for i in 0..n {
                for co in 0..c {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        acc += phi.data()[i * c * c + co * c + ci] * vs.data()[(b * n + i) * c + ci];
                    }
                    oracle[(b * n + i) * c + co] = acc;
                }
            }
        }
        assert!(max_abs_diff(out.data(), &oracle) < 1e-12);
    }

    #[test]
    fn gather_identity_and_values() {
        let mut tape = Tape::new();
        let g = 10;
        let vals: Vec<f64> = (0..g).map(|i| i as f64).collect();
        let v = Tensor::from_values(&[1, g, 1], vals).unwrap();
        let all: Vec<usize> = (0..g).collect();
        let out = gather_points(&mut tape, &v, &all).unwrap();
        assert_eq!(out.data(), v.data());
        let out = gather_points(&mut tape, &v, &[0, 5, 9]).unwrap();
        assert_eq!(out.data(), &[0.0, 5.0, 9.0]);
    }

    #[test]
    fn gather_rejects_bad_indices() {
        let mut tape = Tape::new();
        let v = Tensor::zeros(&[1, 4, 1]).unwrap();
        assert!(matches!(
            gather_points(&mut tape, &v, &[0, 4]),
            Err(Error::IndexOutOfRange { index: 4, extent: 4 })
        ));
        assert!(matches!(
            gather_points(&mut tape, &v, &[2, 2]),
            Err(Error::NotStrictlyIncreasing { .. })
        ));
        assert!(matches!(
            gather_points(&mut tape, &v, &[3, 1]),
            Err(Error::NotStrictlyIncreasing { .. })
        ));
    }

    #[test]
    fn gather_matches_loop_oracle() {
        let mut rng = Rng::new(31);
        let (bsz, g, c) = (3, 12, 2);
        let v = Tensor::from_values(&[bsz, g, c], rand_vals(bsz * g * c, &mut rng)).unwrap();
        let idx = [1, 4, 7, 11];
        let mut tape = Tape::new();
        let out = gather_points(&mut tape, &v, &idx).unwrap();
        for b in 0..bsz {
            for (i, &src) in idx.iter().enumerate() {
                for ch in 0..c {
                    assert_eq!(
                        out.data()[(b * idx.len() + i) * c + ch],
                        v.data()[(b * g + src) * c + ch]
                    );
                }
            }
        }
    }

    #[test]
    fn reduce_mean_constant_and_pair() {
        let mut tape = Tape::new();
        let z = Tensor::constant(&[2, 5, 3], 0.7).unwrap();
        let out = reduce_mean_samples(&mut tape, &z).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));

        let z = Tensor::from_values(&[1, 2, 1], vec![1.0, 3.0]).unwrap();
        let out = reduce_mean_samples(&mut tape, &z).unwrap();
        assert_eq!(out.data(), &[2.0]);
    }

    #[test]
    fn reduce_mean_matches_loop_oracle() {
        let mut rng = Rng::new(41);
        let (bsz, n, c) = (2, 7, 3);
        let z = Tensor::from_values(&[bsz, n, c], rand_vals(bsz * n * c, &mut rng)).unwrap();
        let mut tape = Tape::new();
        let out = reduce_mean_samples(&mut tape, &z).unwrap();
        for b in 0..bsz {
            for ch in 0..c {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += z.data()[(b * n + i) * c + ch];
                }
                assert!((out.data()[b * c + ch] - acc / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interp_reproduces_nodes() {
        let mut tape = Tape::new();
        let xs = [0.0, 0.25, 0.5, 0.75];
        let z = Tensor::from_values(&[1, 4, 1], vec![3.0, -1.0, 2.0, 0.5]).unwrap();
        let out = interp1d_periodic(&mut tape, &z, &xs, &xs).unwrap();
        assert_eq!(out.data(), z.data());
    }

    #[test]
    fn interp_linear_segment_midpoint() {
        let mut tape = Tape::new();
        let z = Tensor::from_values(&[1, 2, 1], vec![0.0, 2.0]).unwrap();
        let out = interp1d_periodic(&mut tape, &z, &[0.0, 0.5], &[0.25]).unwrap();
        assert_eq!(out.data(), &[1.0]);
    }

    // Hand evaluation of the wrapped segment from (0.75, 3) to (1.25, 1).
    #[test]
    fn interp_periodic_wrap_segment() {
        let mut tape = Tape::new();
        let z = Tensor::from_values(&[1, 2, 1], vec![1.0, 3.0]).unwrap();
        let out = interp1d_periodic(&mut tape, &z, &[0.25, 0.75], &[0.0]).unwrap();
        assert!((out.data()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn interp_rejects_bad_coordinates() {
        let mut tape = Tape::new();
        let z = Tensor::zeros(&[1, 2, 1]).unwrap();
        assert!(matches!(
            interp1d_periodic(&mut tape, &z, &[0.5, 0.25], &[0.1]),
            Err(Error::NotStrictlyIncreasing { .. })
        ));
        assert!(matches!(
            interp1d_periodic(&mut tape, &z, &[0.0, 1.0], &[0.1]),
            Err(Error::CoordinateOutOfDomain { .. })
        ));
        assert!(matches!(
            interp1d_periodic(&mut tape, &z, &[0.0, 0.5], &[-0.2]),
            Err(Error::CoordinateOutOfDomain { .. })
        ));
    }

    #[test]
    fn relu_and_add_basics() {
        let mut tape = Tape::new();
        let x = Tensor::from_values(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let out = relu(&mut tape, &x).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);

        let z = Tensor::zeros(&[3]).unwrap();
        let out = add(&mut tape, &x, &z).unwrap();
        assert_eq!(out.data(), x.data());
        assert!(add(&mut tape, &x, &Tensor::zeros(&[4]).unwrap()).is_err());
    }

    #[test]
    fn relu_backward_subgradient() {
        let mut tape = Tape::new();
        let x = Tensor::from_values(&[2], vec![-1.0, 0.5]).unwrap();
        let tx = tape.watch(&x);
        let y = relu(&mut tape, &tx).unwrap();
        let loss = sum_all(&mut tape, &y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&tx).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = Tensor::from_values(&[3], vec![0.3, -0.2, 0.9]).unwrap();
        let tx = tape.watch(&x);
        let loss = sum_all(&mut tape, &tx).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&tx).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn rel_l2_basics() {
        let mut tape = Tape::new();
        let t = Tensor::from_values(&[1, 3], vec![1.0, 2.0, -2.0]).unwrap();
        let loss = rel_l2_loss(&mut tape, &t, &t).unwrap();
        assert_eq!(loss.scalar().unwrap(), 0.0);

        let zero = Tensor::zeros(&[1, 3]).unwrap();
        let loss = rel_l2_loss(&mut tape, &zero, &t).unwrap();
        assert_eq!(loss.scalar().unwrap(), 1.0);

        assert!(matches!(
            rel_l2_loss(&mut tape, &t, &zero),
            Err(Error::ZeroNormTruth { row: 0 })
        ));
    }

    // Direct arithmetic: ||pred - truth|| = 5, ||truth|| = 4.
    #[test]
    fn rel_l2_three_four_five() {
        let mut tape = Tape::new();
        let pred = Tensor::from_values(&[1, 2], vec![3.0, 0.0]).unwrap();
        let truth = Tensor::from_values(&[1, 2], vec![0.0, 4.0]).unwrap();
        let loss = rel_l2_loss(&mut tape, &pred, &truth).unwrap();
        assert!((loss.scalar().unwrap() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn rel_l2_gradient_zero_at_minimum() {
        let mut tape = Tape::new();
        let t = Tensor::from_values(&[2, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let tx = tape.watch(&t);
        let loss = rel_l2_loss(&mut tape, &tx, &t).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&tx).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn backward_requires_scalar_tracked_loss() {
        let mut tape = Tape::new();
        let x = Tensor::zeros(&[3]).unwrap();
        let tx = tape.watch(&x);
        assert!(matches!(
            tape.backward(&tx),
            Err(Error::NonScalarLoss { .. })
        ));
        let tape = Tape::new();
        let untracked = Tensor::zeros(&[1]).unwrap();
        assert!(tape.backward(&untracked).is_err());
    }

    // Adjoint consistency: <A z, w> == <z, A^T w>, where A^T w is produced by
    // the recorded backward rule. The cotangent w is injected by choosing a
    // rel_l2 truth t = Az - w, whose gradient at Az is w / (||w|| ||t||).
    #[test]
    fn interp_adjoint_consistency() {
        let mut rng = Rng::new(77);
        let (bsz, n, c, q) = (2, 6, 3, 11);
        let xs: Vec<f64> = {
            let mut raw: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            raw.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(raw.windows(2).all(|p| p[1] > p[0]));
            raw
        };
        let xq: Vec<f64> = (0..q).map(|i| i as f64 / q as f64).collect();
        let z = Tensor::from_values(&[bsz, n, c], rand_vals(bsz * n * c, &mut rng)).unwrap();
        let w = rand_vals(bsz * q * c, &mut rng);

        let mut tape = Tape::new();
        let tz = tape.watch(&z);
        let az = interp1d_periodic(&mut tape, &tz, &xs, &xq).unwrap();
        let forward_inner: f64 = az.data().iter().zip(&w).map(|(a, b)| a * b).sum();

        let flat_len = bsz * q * c;
        let truth_vals: Vec<f64> = az.data().iter().zip(&w).map(|(a, b)| a - b).collect();
        let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let t_norm = truth_vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        let truth = Tensor::from_values(&[1, flat_len], truth_vals).unwrap();
        let flat = reshape(&mut tape, &az, &[1, flat_len]).unwrap();
        let loss = rel_l2_loss(&mut tape, &flat, &truth).unwrap();
        let grads = tape.backward(&loss).unwrap();
        // grad_z = A^T w / (||w|| ||t||)
        let backward_inner: f64 = z
            .data()
            .iter()
            .zip(grads.get(&tz).unwrap())
            .map(|(zi, gi)| zi * gi * w_norm * t_norm)
            .sum();
        assert!(
            (forward_inner - backward_inner).abs() < 1e-12,
            "<Az,w> = {forward_inner}, <z,A^T w> = {backward_inner}"
        );
    }

    proptest! {
        // Linearity of every linear op: f(ax + by) = a f(x) + b f(y).
        #[test]
        fn linear_ops_are_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut rng = Rng::new(seed);
            let (bsz, g, c, n) = (2, 8, 3, 4);
            let x = Tensor::from_values(&[bsz, g, c], rand_vals(bsz * g * c, &mut rng)).unwrap();
            let y = Tensor::from_values(&[bsz, g, c], rand_vals(bsz * g * c, &mut rng)).unwrap();
            let combo = Tensor::from_values(
                &[bsz, g, c],
                x.data().iter().zip(y.data()).map(|(&u, &v)| a * u + b * v).collect(),
            ).unwrap();
            let w = Tensor::from_values(&[c, c], rand_vals(c * c, &mut rng)).unwrap();
            let zero_bias = Tensor::zeros(&[c]).unwrap();
            let idx = [0usize, 2, 5, 7];
            let xs = [0.1, 0.3, 0.6, 0.8];
            let xq: Vec<f64> = (0..g).map(|i| i as f64 / g as f64).collect();
            let phi = Tensor::from_values(&[n, c, c], rand_vals(n * c * c, &mut rng)).unwrap();

            let mut tape = Tape::new();
            let apply = |tape: &mut Tape, t: &Tensor| -> Vec<f64> {
                let lin = pointwise_linear(tape, t, &w, &zero_bias).unwrap();
                let gathered = gather_points(tape, &lin, &idx).unwrap();
                let mixed = sample_mix(tape, &phi, &gathered).unwrap();
                let mean = reduce_mean_samples(tape, &mixed).unwrap();
                let interp = interp1d_periodic(tape, &mixed, &xs, &xq).unwrap();
                mean.data().iter().chain(interp.data()).copied().collect()
            };
            let fx = apply(&mut tape, &x);
            let fy = apply(&mut tape, &y);
            let fc = apply(&mut tape, &combo);
            for ((u, v), w_) in fx.iter().zip(&fy).zip(&fc) {
                let expect = a * u + b * v;
                prop_assert!((w_ - expect).abs() < 1e-10, "expect {expect}, got {w_}");
            }
        }

        // Round trip: reshape twice restores bits.
        #[test]
        fn reshape_round_trip(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let x = Tensor::from_values(&[3, 4], rand_vals(12, &mut rng)).unwrap();
            let mut tape = Tape::new();
            let r = reshape(&mut tape, &x, &[2, 6]).unwrap();
            let back = reshape(&mut tape, &r, &[3, 4]).unwrap();
            prop_assert_eq!(back.data(), x.data());
        }
    }
}
