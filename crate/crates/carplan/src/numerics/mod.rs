//! Dense double-precision tensors with reverse-mode differentiation.
//!
//! Everything the planner computes runs through [`Tape`]: forward ops record
//! enough state to replay the chain rule backward, and [`grad_check`] provides
//! an independent central finite-difference oracle over any scalar loss.

mod attention;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;

pub use attention::{
    linear as linear_op, mlp2, multi_head_attention, multi_head_attention_detailed,
    AttentionWeights, MhaOutput,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{compare_gradients, grad_check, GradCheckReport};
pub use params::{Binding, ParamId, ParamStore};
pub use tape::{Gradients, Tape, ValueId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite loss encountered: {0}")]
    NonFiniteLoss(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense row-major tensor. `grad` is populated by the optimizer path only for
/// parameters; plain values leave it `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length must equal product of shape extents"
        );
        Tensor { shape, data, grad: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], grad: None }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count when viewed as a matrix (1 for vectors/scalars).
    pub fn rows(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[0]
        }
    }

    /// Column count when viewed as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_data_invariant() {
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]);
        assert_eq!(t.numel(), 6);
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    #[should_panic]
    fn tensor_rejects_length_mismatch() {
        let _ = Tensor::new(vec![2, 3], vec![0.0; 5]);
    }
}
