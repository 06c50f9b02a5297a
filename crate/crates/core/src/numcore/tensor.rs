use crate::error::{Error, Result};

/// Dense row-major `f64` array with a same-shaped gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::contract(format!("invalid tensor shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![values.len()],
            });
        }
        Ok(Tensor {
            grad: vec![0.0; n],
            shape,
            values,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; n]).expect("zeros: valid shape")
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v]).expect("scalar")
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged rows"));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.requires_grad = on;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// `(rows, cols)` for a matrix; a vector of length `n` is `(1, n)`.
    pub fn dims2(&self) -> (usize, usize) {
        dims2(&self.shape)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        let (_, c) = self.dims2();
        self.values[row * c + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.values[row * c..(row + 1) * c]
    }
}

pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => {
            let c = *shape.last().unwrap_or(&1);
            (shape.iter().product::<usize>() / c.max(1), c)
        }
    }
}
