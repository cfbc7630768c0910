//! Dense tensors and a tape-based reverse-mode differentiation graph.
//!
//! Every model computation is recorded on a [`Graph`] as it is evaluated.
//! A graph is built fresh per example (sequence and record counts vary),
//! and [`Graph::backward`] walks the tape in reverse to produce gradients
//! for every parameter and differentiable leaf that was touched.
//!
//! The element type is generic over [`Real`]: training and decoding run in
//! `f32`, gradient checks in `f64`.

mod gradcheck;
mod graph;
mod params;
#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, ParamGrads, Unary, Var, NLL_FLOOR};
pub use params::{ParamId, ParamStore};

use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssign};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floating point element type usable in a [`Graph`].
pub trait Real:
    Float + NumAssign + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range for {op} with bound {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("softmax mask leaves no position unmasked")]
    InvalidMask,
    #[error("{0}")]
    Contract(String),
    #[error("loss became non-finite while perturbing {param}[{index}]")]
    NonFinite { param: String, index: usize },
}

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(x: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Converts element precision (used to lift `f32` parameters into `f64`
    /// for gradient checks, and to store checkpoints).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }
}
