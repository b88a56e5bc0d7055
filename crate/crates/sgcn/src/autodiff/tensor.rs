//! Dense tensor value type shared by the tape and the parameter store.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::autodiff::TapeError;
use crate::scalar::Scalar;

/// Dense numeric array with a shape, a value buffer and a lazily allocated
/// gradient buffer of identical shape.
///
/// Values sit behind an `Arc`, so registering a tensor on a tape or taking a
/// parameter snapshot never copies the buffer; mutation goes through
/// copy-on-write ([`Tensor::values_mut`]).
#[derive(Debug, Clone)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Arc<Vec<S>>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

/// Gradient accumulated for one tape variable.
///
/// Row-sparse buffers come from embedding lookups, where a pass touches a
/// handful of rows of a large table.
#[derive(Debug, Clone)]
pub enum GradBuf<S> {
    Dense(Vec<S>),
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<S>>,
    },
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self, TapeError> {
        let expected = shape.iter().product::<usize>();
        if expected != values.len() {
            return Err(TapeError::BadBuffer {
                shape,
                expected,
                actual: values.len(),
            });
        }
        Ok(Tensor {
            shape,
            values: Arc::new(values),
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: Arc::new(vec![S::zero(); n]),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![],
            values: Arc::new(vec![value]),
            requires_grad: false,
            grad: None,
        }
    }

    pub(crate) fn from_arc(shape: Vec<usize>, values: Arc<Vec<S>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub(crate) fn values_arc(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.values)
    }

    /// Copy-on-write access to the value buffer. Tapes hold clones of this
    /// Arc, so editing a tensor never rewrites values a recorded pass saw.
    pub fn values_mut(&mut self) -> &mut [S] {
        if Arc::strong_count(&self.values) > 1 {
            self.values = Arc::new(self.values.as_ref().clone());
        }
        Arc::get_mut(&mut self.values).expect("buffer is unique after copy-on-write")
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Row-major element access for rank-2 tensors.
    pub fn at(&self, row: usize, col: usize) -> S {
        debug_assert_eq!(self.shape.len(), 2);
        self.values[row * self.shape[1] + col]
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut [S] {
        let n = self.numel();
        self.grad.get_or_insert_with(|| vec![S::zero(); n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    /// In-place `θ ← θ − step·grad`, then grad ← 0. A tensor that never
    /// received a gradient is left untouched. Goes through copy-on-write, so
    /// values a recorded tape saw stay intact.
    pub fn apply_grad_step(&mut self, step: S) {
        if self.grad.is_none() {
            return;
        }
        if Arc::strong_count(&self.values) > 1 {
            self.values = Arc::new(self.values.as_ref().clone());
        }
        let values = Arc::get_mut(&mut self.values).expect("buffer is unique after copy-on-write");
        let grad = self.grad.as_mut().expect("checked above");
        for (v, g) in values.iter_mut().zip(grad.iter_mut()) {
            *v -= step * *g;
            *g = S::zero();
        }
    }

    pub fn accumulate_grad(&mut self, contribution: &GradBuf<S>) {
        match contribution {
            GradBuf::Dense(d) => {
                debug_assert_eq!(d.len(), self.numel());
                let g = self.grad_mut();
                for (gi, di) in g.iter_mut().zip(d.iter()) {
                    *gi += *di;
                }
            }
            GradBuf::Rows { width, rows } => {
                let g = self.grad_mut();
                for (row, vals) in rows {
                    let base = row * width;
                    for (j, v) in vals.iter().enumerate() {
                        g[base + j] += *v;
                    }
                }
            }
        }
    }
}

impl<S: Scalar> GradBuf<S> {
    /// Placeholder slot; the first `add_dense` fixes its length.
    pub(crate) fn empty() -> Self {
        GradBuf::Dense(Vec::new())
    }

    pub fn to_dense(&self, numel: usize) -> Vec<S> {
        match self {
            GradBuf::Dense(d) if d.is_empty() && numel > 0 => vec![S::zero(); numel],
            GradBuf::Dense(d) => d.clone(),
            GradBuf::Rows { width, rows } => {
                let mut out = vec![S::zero(); numel];
                for (row, vals) in rows {
                    out[row * width..row * width + width].copy_from_slice(vals);
                }
                out
            }
        }
    }

    pub(crate) fn add_dense(&mut self, contribution: &[S]) {
        match self {
            GradBuf::Dense(d) if d.is_empty() => *d = contribution.to_vec(),
            GradBuf::Dense(d) => {
                debug_assert_eq!(d.len(), contribution.len());
                for (a, b) in d.iter_mut().zip(contribution.iter()) {
                    *a += *b;
                }
            }
            GradBuf::Rows { .. } => {
                let mut dense = self.to_dense(contribution.len());
                for (a, b) in dense.iter_mut().zip(contribution.iter()) {
                    *a += *b;
                }
                *self = GradBuf::Dense(dense);
            }
        }
    }

    pub(crate) fn add_row(&mut self, width: usize, row: usize, contribution: &[S]) {
        match self {
            GradBuf::Dense(d) => {
                let base = row * width;
                for (j, v) in contribution.iter().enumerate() {
                    d[base + j] += *v;
                }
            }
            GradBuf::Rows { rows, .. } => {
                let slot = rows
                    .entry(row)
                    .or_insert_with(|| vec![S::zero(); width]);
                for (a, b) in slot.iter_mut().zip(contribution.iter()) {
                    *a += *b;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_buffer_length() {
        let err = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        match err {
            TapeError::BadBuffer {
                expected, actual, ..
            } => {
                assert_eq!(expected, 6);
                assert_eq!(actual, 5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn grad_allocates_lazily_with_matching_shape() {
        let mut t = Tensor::<f32>::zeros(vec![2, 2]);
        assert!(t.grad().is_none());
        t.grad_mut()[3] = 1.5;
        assert_eq!(t.grad().unwrap().len(), t.numel());
    }

    #[test]
    fn sparse_rows_accumulate_into_dense_grad() {
        let mut t = Tensor::<f64>::zeros(vec![4, 2]);
        let mut rows = BTreeMap::new();
        rows.insert(1usize, vec![1.0, 2.0]);
        rows.insert(3usize, vec![0.5, 0.5]);
        t.accumulate_grad(&GradBuf::Rows { width: 2, rows });
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn scalar_tensor_is_rank_zero() {
        let t = Tensor::<f64>::scalar(3.0);
        assert!(t.shape().is_empty());
        assert_eq!(t.numel(), 1);
    }
}
