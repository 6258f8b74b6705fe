//! Dense `f64` tensors and a tape-based reverse-mode autodiff engine.
//!
//! Images use batch × channel × height × width ordering and all storage is
//! row-major. A [`Graph`] records every operation executed on [`Var`]
//! handles; [`Graph::backward`] replays the recorded backward rules in
//! reverse order.

mod conv;
mod gradcheck;
mod graph;

pub use conv::{conv2d_forward, conv_transpose2d_forward, ConvGeometry};
pub use gradcheck::{grad_check, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{BackwardRule, Graph, Var};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms in losses.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "gradient of length {} for tensor of shape {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// Adds `grad` into the accumulated gradient.
    pub fn accumulate_grad(&mut self, grad: &[f64]) -> Result<()> {
        match &mut self.grad {
            Some(g) if g.len() == grad.len() => {
                g.iter_mut().zip(grad).for_each(|(a, b)| *a += b);
                Ok(())
            }
            Some(_) => Err(Error::InvalidShape("gradient length mismatch".into())),
            None => self.set_grad(grad.to_vec()),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} to {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Single element of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::InvalidShape(format!(
                "dot of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Sample `index` along the leading (batch) axis.
    pub fn batch_item(&self, index: usize) -> Result<Tensor> {
        let (&b, rest) = self
            .shape
            .split_first()
            .ok_or_else(|| Error::InvalidShape("batch_item on scalar".into()))?;
        if index >= b {
            return Err(Error::InvalidShape(format!(
                "batch index {index} out of range {b}"
            )));
        }
        let per: usize = rest.iter().product();
        Tensor::new(rest, self.data[index * per..(index + 1) * per].to_vec())
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("cannot stack an empty list".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::InvalidShape(format!(
                    "stack of {:?} and {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Tensor::new(&shape, data)
    }
}
