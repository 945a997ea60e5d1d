use crate::error::{AglaError, Result};
use crate::scalar::Scalar;

/// Dense row-major array with an optional gradient buffer.
///
/// Tensors are plain values: they carry no tape linkage. A forward pass
/// copies them onto a [`Tape`](super::Tape) and gradients come back through
/// [`Gradients::accumulate_into`](super::Gradients::accumulate_into).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_shape(op: &'static str, shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(AglaError::dim(op, format!("shape {shape:?} has a zero or missing dimension")));
    }
    if numel(shape) != len {
        return Err(AglaError::dim(
            op,
            format!("shape {shape:?} needs {} elements, got {len}", numel(shape)),
        ));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        check_shape("tensor", &shape, data.len())?;
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// A trainable tensor: `requires_grad` set, gradient buffer zeroed.
    pub fn param(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let mut t = Self::new(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        assert!(n > 0, "zero-sized tensor");
        Tensor {
            shape,
            data: vec![S::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds a `[rows, cols]` matrix; every row must have the same length.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AglaError::dim("from_rows", "ragged rows"));
        }
        let data: Vec<S> = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count of a matrix view (rank-1 tensors are a single row).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if on {
            self.grad.get_or_insert_with(|| vec![S::zero(); self.data.len()]);
        } else {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Vec<S> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![S::zero(); n])
    }

    /// Same values, no gradient tracking.
    pub fn detached(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self.grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Widens a `[rows, cols]` matrix to `[rows, cols + extra.len() / rows]`,
    /// appending `extra` (row-major, `rows x added`) as new right-hand columns.
    pub(crate) fn append_columns(&mut self, extra: &[S], added: usize) {
        let rows = self.rows();
        let cols = self.cols();
        debug_assert_eq!(extra.len(), rows * added);
        let mut data = Vec::with_capacity(rows * (cols + added));
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * cols..(r + 1) * cols]);
            data.extend_from_slice(&extra[r * added..(r + 1) * added]);
        }
        self.data = data;
        self.shape = if self.shape.len() == 1 {
            vec![cols + added]
        } else {
            vec![rows, cols + added]
        };
        if self.requires_grad {
            self.grad = Some(vec![S::zero(); self.data.len()]);
        }
    }
}
