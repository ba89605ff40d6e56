//! Minimal differentiable-array engine.
//!
//! Learnable state lives in [`DiffTensor`]s owned by models. A forward pass
//! binds those tensors onto a fresh [`Tape`], records coarse operations
//! (convolution, dense, pointwise maps, reductions), and a single
//! [`Tape::backward`] replays the adjoints in reverse recording order.
//! Gradients are then accumulated back into the owning tensors with
//! [`Tape::write_grads`] and consumed by [`Adam`].

mod adam;
mod gradcheck;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_gradients, GradCheck};
pub use tape::{Padding, Tape, Var};

use rand::Rng as _;

use crate::error::{CdnetError, Result};

/// An n-dimensional row-major array with a same-shape gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

impl DiffTensor {
    /// A trainable tensor. Fails when the shape does not describe `values`.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        check_shape("DiffTensor::new", shape, values.len())?;
        let n = values.len();
        Ok(Self {
            shape: shape.to_vec(),
            values,
            grad: vec![0.0; n],
            requires_grad: true,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
            requires_grad: true,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
            grad: vec![0.0],
            requires_grad: true,
        }
    }

    /// Uniform(-s, s) initialization with `s = sqrt(1 / fan_in)`.
    pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut crate::rng::Rng) -> Self {
        let s = (1.0 / fan_in.max(1) as f64).sqrt();
        let mut t = Self::zeros(shape);
        for v in &mut t.values {
            *v = rng.random_range(-s..s);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
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

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    /// Order-sensitive hash of the exact bit patterns of the values.
    pub fn checksum(&self) -> u64 {
        checksum_bits(self.values.iter().copied())
    }
}

/// FNV-1a over the raw bits of a sequence of floats.
pub fn checksum_bits(values: impl IntoIterator<Item = f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

pub(crate) fn check_shape(op: &'static str, shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(CdnetError::Shape {
            op,
            detail: format!("shape {shape:?} must be a non-empty list of positive sizes"),
        });
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(CdnetError::Shape {
            op,
            detail: format!("shape {shape:?} holds {n} values but {len} were given"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(DiffTensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(DiffTensor::new(&[0], vec![]).is_err());
        let t = DiffTensor::new(&[2, 3], vec![0.5; 6]).unwrap();
        assert_eq!(t.grad().len(), 6);
    }

    #[test]
    fn uniform_init_respects_bound() {
        let mut rng = crate::rng::seeded(3);
        let t = DiffTensor::uniform(&[4, 25], 25, &mut rng);
        assert!(t.values().iter().all(|v| v.abs() < 0.2));
        assert!(t.values().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn checksum_tracks_bits() {
        let a = DiffTensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let b = DiffTensor::new(&[2], vec![-0.0, 1.0]).unwrap();
        assert_ne!(a.checksum(), b.checksum());
        assert_eq!(a.checksum(), a.clone().checksum());
    }
}
