//! Reverse-mode tape: recorded operations and the backward sweep.

use super::ops::InterpPlan;
use super::{NodeId, Tensor};
use crate::error::{Error, Result};
use std::sync::Arc;

/// Input captured by a record: the node (if tracked) and the forward value
/// when the backward rule needs it. Buffers are shared, not copied.
#[derive(Debug)]
pub(crate) struct Saved {
    pub node: Option<NodeId>,
    pub data: Arc<Vec<f64>>,
}

impl Saved {
    pub fn of(t: &Tensor) -> Saved {
        Saved {
            node: t.node(),
            data: t.share_data(),
        }
    }
}

#[derive(Debug)]
pub(crate) enum Record {
    PointwiseLinear {
        x: Saved,
        w: Saved,
        b_node: Option<NodeId>,
        out: NodeId,
        /// (batch*grid, c_in, c_out)
        dims: (usize, usize, usize),
    },
    SampleMix {
        phi: Saved,
        vs: Saved,
        out: NodeId,
        /// (batch, n_samples, channels)
        dims: (usize, usize, usize),
    },
    GatherPoints {
        v_node: NodeId,
        idx: Arc<Vec<usize>>,
        out: NodeId,
        /// (batch, grid, channels)
        dims: (usize, usize, usize),
    },
    ReduceMeanSamples {
        z_node: NodeId,
        out: NodeId,
        /// (batch, n_samples, channels)
        dims: (usize, usize, usize),
    },
    BroadcastToGrid {
        k_node: NodeId,
        out: NodeId,
        /// (batch, grid, channels)
        dims: (usize, usize, usize),
    },
    Interp1d {
        z_node: NodeId,
        plan: Arc<InterpPlan>,
        out: NodeId,
        /// (batch, channels)
        dims: (usize, usize),
    },
    Relu {
        x: Saved,
        out: NodeId,
    },
    Add {
        a_node: Option<NodeId>,
        b_node: Option<NodeId>,
        out: NodeId,
        numel: usize,
    },
    Reshape {
        x_node: NodeId,
        out: NodeId,
    },
    SumAll {
        x_node: NodeId,
        out: NodeId,
        numel: usize,
    },
    Scale {
        x_node: NodeId,
        factor: f64,
        out: NodeId,
    },
    RelL2 {
        pred: Saved,
        truth: Arc<Vec<f64>>,
        out: NodeId,
        /// (batch, grid)
        dims: (usize, usize),
        /// per-row (diff_norm, truth_norm)
        norms: Vec<(f64, f64)>,
    },
}

/// Arithmetic-operation counters, grouped by the complexity claim they
/// substantiate: sample interactions scale with N, grid reconstruction with
/// the grid size, pointwise maps with grid x channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCounters {
    pub sample_interaction: u64,
    pub grid_reconstruction: u64,
    pub pointwise: u64,
}

impl FlopCounters {
    pub fn total(&self) -> u64 {
        self.sample_interaction + self.grid_reconstruction + self.pointwise
    }
}

/// Per-forward-pass recording of operations; single-writer.
///
/// Built fresh for each forward pass, consumed by [`Tape::backward`], and
/// freed afterwards. Operations record themselves only when at least one
/// input is tracked; flop counters run unconditionally.
#[derive(Debug, Default)]
pub struct Tape {
    node_numel: Vec<usize>,
    watched: Vec<NodeId>,
    records: Vec<Record>,
    counters: FlopCounters,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Register a leaf whose gradient should be produced by backward.
    pub fn watch(&mut self, t: &Tensor) -> Tensor {
        let id = self.alloc_node(t.numel());
        self.watched.push(id);
        t.with_node(id)
    }

    pub fn flops(&self) -> FlopCounters {
        self.counters
    }

    pub fn reset_flops(&mut self) {
        self.counters = FlopCounters::default();
    }

    pub(crate) fn alloc_node(&mut self, numel: usize) -> NodeId {
        self.node_numel.push(numel);
        self.node_numel.len() - 1
    }

    pub(crate) fn push(&mut self, record: Record) {
        self.records.push(record);
    }

    pub(crate) fn count_sample(&mut self, n: u64) {
        self.counters.sample_interaction += n;
    }

    pub(crate) fn count_grid(&mut self, n: u64) {
        self.counters.grid_reconstruction += n;
    }

    pub(crate) fn count_pointwise(&mut self, n: u64) {
        self.counters.pointwise += n;
    }

    /// Reverse sweep from a scalar loss. Consumes the tape; gradients for
    /// every watched leaf are materialized (zeros if the leaf did not reach
    /// the loss), gradients of untracked constants are absent.
    pub fn backward(mut self, loss: &Tensor) -> Result<Gradients> {
        let loss_node = loss.node().ok_or_else(|| {
            Error::InvalidArgument("loss tensor is not tracked on this tape".into())
        })?;
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.node_numel.len()];
        grads[loss_node] = Some(vec![1.0]);

        for record in self.records.drain(..).rev() {
            step_backward(record, &mut grads);
        }

        for &leaf in &self.watched {
            if grads[leaf].is_none() {
                grads[leaf] = Some(vec![0.0; self.node_numel[leaf]]);
            }
        }
        Ok(Gradients { bufs: grads })
    }
}

/// Gradient buffers keyed by node id, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a tracked tensor, if one was accumulated.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        t.node()
            .and_then(|id| self.bufs.get(id))
            .and_then(|b| b.as_deref())
    }

    pub fn take(&mut self, t: &Tensor) -> Option<Vec<f64>> {
        t.node().and_then(|id| self.bufs.get_mut(id)).and_then(Option::take)
    }
}

fn accumulate(
    grads: &mut [Option<Vec<f64>>],
    node: Option<NodeId>,
    numel: usize,
    add: impl FnOnce(&mut [f64]),
) {
    if let Some(id) = node {
        let buf = grads[id].get_or_insert_with(|| vec![0.0; numel]);
        add(buf);
    }
}

fn step_backward(record: Record, grads: &mut [Option<Vec<f64>>]) {
    match record {
        Record::PointwiseLinear { x, w, b_node, out, dims } => {
            let (rows, cin, cout) = dims;
            let Some(g) = grads[out].take() else { return };
            accumulate(grads, x.node, rows * cin, |gx| {
                for r in 0..rows {
                    let grow = &g[r * cout..(r + 1) * cout];
                    let gxrow = &mut gx[r * cin..(r + 1) * cin];
                    for ci in 0..cin {
                        let wrow = &w.data[ci * cout..(ci + 1) * cout];
                        let mut acc = 0.0;
                        for co in 0..cout {
                            acc += grow[co] * wrow[co];
                        }
                        gxrow[ci] += acc;
                    }
                }
            });
            accumulate(grads, w.node, cin * cout, |gw| {
                for r in 0..rows {
                    let xrow = &x.data[r * cin..(r + 1) * cin];
                    let grow = &g[r * cout..(r + 1) * cout];
                    for ci in 0..cin {
                        let xv = xrow[ci];
                        let gwrow = &mut gw[ci * cout..(ci + 1) * cout];
                        for co in 0..cout {
                            gwrow[co] += xv * grow[co];
                        }
                    }
                }
            });
            accumulate(grads, b_node, cout, |gb| {
                for r in 0..rows {
                    let grow = &g[r * cout..(r + 1) * cout];
                    for co in 0..cout {
                        gb[co] += grow[co];
                    }
                }
            });
        }
        Record::SampleMix { phi, vs, out, dims } => {
            let (bsz, n, c) = dims;
            let Some(g) = grads[out].take() else { return };
            accumulate(grads, phi.node, n * c * c, |gphi| {
                for b in 0..bsz {
                    for i in 0..n {
                        let grow = &g[(b * n + i) * c..(b * n + i + 1) * c];
                        let vrow = &vs.data[(b * n + i) * c..(b * n + i + 1) * c];
                        let gblock = &mut gphi[i * c * c..(i + 1) * c * c];
                        for co in 0..c {
                            let gv = grow[co];
                            let dst = &mut gblock[co * c..(co + 1) * c];
                            for ci in 0..c {
                                dst[ci] += gv * vrow[ci];
                            }
                        }
                    }
                }
            });
            accumulate(grads, vs.node, bsz * n * c, |gvs| {
                for b in 0..bsz {
                    for i in 0..n {
                        let grow = &g[(b * n + i) * c..(b * n + i + 1) * c];
                        let block = &phi.data[i * c * c..(i + 1) * c * c];
                        let dst = &mut gvs[(b * n + i) * c..(b * n + i + 1) * c];
                        for co in 0..c {
                            let gv = grow[co];
                            let prow = &block[co * c..(co + 1) * c];
                            for ci in 0..c {
                                dst[ci] += gv * prow[ci];
                            }
                        }
                    }
                }
            });
        }
        Record::GatherPoints { v_node, idx, out, dims } => {
            let (bsz, grid, c) = dims;
            let n = idx.len();
            let Some(g) = grads[out].take() else { return };
            accumulate(grads, Some(v_node), bsz * grid * c, |gv| {
                for b in 0..bsz {
                    for (i, &src) in idx.iter().enumerate() {
                        let grow = &g[(b * n + i) * c..(b * n + i + 1) * c];
                        let dst = &mut gv[(b * grid + src) * c..(b * grid + src + 1) * c];
                        for ch in 0..c {
                            dst[ch] += grow[ch];
                        }
                    }
                }
            });
        }
        Record::ReduceMeanSamples { z_node, out, dims } => {
            let (bsz, n, c) = dims;
            let Some(g) = grads[out].take() else { return };
            let inv = 1.0 / n as f64;
            accumulate(grads, Some(z_node), bsz * n * c, |gz| {
                for b in 0..bsz {
                    let grow = &g[b * c..(b + 1) * c];
                    for i in 0..n {
                        let dst = &mut gz[(b * n + i) * c..(b * n + i + 1) * c];
                        for ch in 0..c {
                            dst[ch] += grow[ch] * inv;
                        }
                    }
                }
            });
        }
        Record::BroadcastToGrid { k_node, out, dims } => {
            let (bsz, grid, c) = dims;
            let Some(g) = grads[out].take() else { return };
            accumulate(grads, Some(k_node), bsz * c, |gk| {
                for b in 0..bsz {
                    let dst = &mut gk[b * c..(b + 1) * c];
                    for gpt in 0..grid {
                        let grow = &g[(b * grid + gpt) * c..(b * grid + gpt + 1) * c];
                        for ch in 0..c {
                            dst[ch] += grow[ch];
                        }
                    }
                }
            });
        }
        Record::Interp1d { z_node, plan, out, dims } => {
            let (bsz, c) = dims;
            let n = plan.n_nodes();
            let q = plan.n_queries();
            let Some(g) = grads[out].take() else { return };
            accumulate(grads, Some(z_node), bsz * n * c, |gz| {
                for b in 0..bsz {
                    for (qi, e) in plan.entries().iter().enumerate() {
                        let grow = &g[(b * q + qi) * c..(b * q + qi + 1) * c];
                        let (lo, hi, w) = (e.lo as usize, e.hi as usize, e.weight);
                        for ch in 0..c {
                            gz[(b * n + lo) * c + ch] += (1.0 - w) * grow[ch];
                            gz[(b * n + hi) * c + ch] += w * grow[ch];
                        }
                    }
                }
            });
        }
        Record::Relu { x, out } => {
            let Some(g) = grads[out].take() else { return };
            // Subgradient 0 at the kink.
            accumulate(grads, x.node, x.data.len(), |gx| {
                for (dst, (&xv, &gv)) in gx.iter_mut().zip(x.data.iter().zip(&g)) {
                    if xv > 0.0 {
                        *dst += gv;
                    }
                }
            });
        }
        Record::Add { a_node, b_node, out, numel } => {
            let Some(g) = grads[out].take() else { return };
            accumulate(grads, a_node, numel, |ga| {
                for (dst, &gv) in ga.iter_mut().zip(&g) {
                    *dst += gv;
                }
            });
            accumulate(grads, b_node, numel, |gb| {
                for (dst, &gv) in gb.iter_mut().zip(&g) {
                    *dst += gv;
                }
            });
        }
        Record::Reshape { x_node, out } => {
            let Some(g) = grads[out].take() else { return };
            let numel = g.len();
            accumulate(grads, Some(x_node), numel, |gx| {
                for (dst, &gv) in gx.iter_mut().zip(&g) {
                    *dst += gv;
                }
            });
        }
        Record::SumAll { x_node, out, numel } => {
            let Some(g) = grads[out].take() else { return };
            let gv = g[0];
            accumulate(grads, Some(x_node), numel, |gx| {
                for dst in gx.iter_mut() {
                    *dst += gv;
                }
            });
        }
        Record::Scale { x_node, factor, out } => {
            let Some(g) = grads[out].take() else { return };
            let numel = g.len();
            accumulate(grads, Some(x_node), numel, |gx| {
                for (dst, &gv) in gx.iter_mut().zip(&g) {
                    *dst += factor * gv;
                }
            });
        }
        Record::RelL2 { pred, truth, out, dims, norms } => {
            let (bsz, grid) = dims;
            let Some(g) = grads[out].take() else { return };
            let upstream = g[0] / bsz as f64;
            accumulate(grads, pred.node, bsz * grid, |gp| {
                for b in 0..bsz {
                    let (diff_norm, truth_norm) = norms[b];
                    if diff_norm == 0.0 {
                        continue; // exact minimum: zero subgradient
                    }
                    let scale = upstream / (diff_norm * truth_norm);
                    for gpt in 0..grid {
                        let k = b * grid + gpt;
                        gp[k] += scale * (pred.data[k] - truth[k]);
                    }
                }
            });
        }
    }
}
