use serde::{Deserialize, Serialize};

use crate::rng::CounterRng;
use crate::{NdError, Result};

/// A dense row-major tensor of 64-bit floats.
///
/// Scalars carry the empty shape `[]`. The invariant
/// `product(shape) == data.len()` holds for every constructed value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default)]
    requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, checking that the element count matches the shape.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NdError::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    /// A scalar with the empty shape.
    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![], data: vec![x], requires_grad: false }
    }

    /// A 1-D tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data, requires_grad: false }
    }

    /// A 2-D tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel], requires_grad: false }
    }

    /// Constant-filled tensor of the given shape.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel], requires_grad: false }
    }

    /// Tensor with entries drawn from `N(0, std^2)`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut CounterRng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| std * rng.normal()).collect();
        Tensor { shape: shape.to_vec(), data, requires_grad: false }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Extracts the single element of a scalar-sized tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(NdError::Contract(format!("item() on tensor of shape {:?}", self.shape)))
        }
    }

    /// Number of rows when interpreted as a 2-D tensor.
    pub fn rows(&self) -> Result<usize> {
        self.dim2().map(|(r, _)| r)
    }

    /// Number of columns when interpreted as a 2-D tensor.
    pub fn cols(&self) -> Result<usize> {
        self.dim2().map(|(_, c)| c)
    }

    /// `(rows, cols)` of a 2-D tensor, rejecting other ranks.
    pub fn dim2(&self) -> Result<(usize, usize)> {
        if self.shape.len() == 2 {
            Ok((self.shape[0], self.shape[1]))
        } else {
            Err(NdError::Contract(format!("expected 2-D tensor, got shape {:?}", self.shape)))
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    /// Builder-style variant of [`set_requires_grad`](Self::set_requires_grad).
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
