//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! The op set is deliberately closed: exactly the operations the Monte
//! Carlo kernel layers need (pointwise affine maps, per-sample channel
//! mixing, gather, sample averaging, periodic linear interpolation, ReLU,
//! addition, relative-L2 loss) plus a couple of reductions used by tests.
//! Tensors are immutable values; gradient tracking attaches a node id that
//! refers into a [`Tape`] built per forward pass and consumed by
//! [`Tape::backward`].

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, op_suite, GradCheckReport};
pub use ops::{
    add, broadcast_to_grid, gather_points, interp1d_periodic, interp1d_with_plan,
    pointwise_linear, reduce_mean_samples, rel_l2_loss, relu, reshape, sample_mix, scale,
    sum_all, InterpPlan,
};
pub use tape::{FlopCounters, Gradients, Tape};

use crate::error::{Error, Result};
use crate::rng::Rng;
use std::sync::Arc;

/// Node identifier on a [`Tape`].
pub type NodeId = usize;

/// Dense row-major tensor of 64-bit floats.
///
/// Cloning is cheap (the buffer is shared); writable access goes through
/// [`Tensor::data_mut`], which copies on write and is only meant for
/// untracked tensors (optimizer updates, test fixtures).
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidArgument("tensor shape must not be empty".into()));
    }
    if let Some(&bad) = shape.iter().find(|&&e| e == 0) {
        return Err(Error::InvalidArgument(format!(
            "tensor extents must be >= 1, got {bad} in {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; n]),
            node: None,
        })
    }

    pub fn constant(shape: &[usize], value: f64) -> Result<Tensor> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
            node: None,
        })
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if values.len() != n {
            return Err(Error::ShapeMismatch {
                op: "from_values",
                detail: format!("shape {shape:?} needs {n} values, got {}", values.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(values),
            node: None,
        })
    }

    /// I.i.d. Gaussian entries with the given standard deviation.
    pub fn gaussian(shape: &[usize], stddev: f64, rng: &mut Rng) -> Result<Tensor> {
        let n = check_shape(shape)?;
        let values = (0..n).map(|_| rng.gaussian(stddev)).collect();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(values),
            node: None,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copy-on-write mutable access to the buffer. Panics on tracked
    /// tensors: recorded values must stay immutable for backward.
    pub fn data_mut(&mut self) -> &mut [f64] {
        assert!(self.node.is_none(), "cannot mutate a tracked tensor");
        let buf: &mut Vec<f64> = Arc::make_mut(&mut self.data);
        buf
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// Same buffer, no gradient tracking.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// The single value of a one-element tensor.
    pub fn scalar(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "scalar",
                detail: format!("expected one element, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    pub(crate) fn share_data(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn tracked(shape: Vec<usize>, data: Vec<f64>, node: NodeId) -> Tensor {
        Tensor {
            shape,
            data: Arc::new(data),
            node: Some(node),
        }
    }

    pub(crate) fn with_node(&self, node: NodeId) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: Some(node),
        }
    }
}
