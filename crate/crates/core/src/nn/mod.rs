//! Dense-network substrate: layers with cached activations, hand-derived
//! reverse-mode gradients, Adam, and structured-text checkpoints.
//!
//! Gradients are accumulated into a model-shaped buffer (a zeroed clone of
//! the network), so every architecture exposes its parameters uniformly
//! through [`Parameters`].

mod adam;
mod checkpoint;
mod layers;
mod serde_arrays;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use layers::{relu, relu_backward, Dense, Init, Mlp, MlpTape, ResMlp, ResMlpTape, ResidualBlock, ResidualTape};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Uniform access to every trainable scalar of a model, in a fixed order.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |p| out.extend_from_slice(p));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if n != flat.len() {
            return Err(Error::Shape {
                context: "flat parameters",
                expected: n,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        self.visit_mut(&mut |p| {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        });
        Ok(())
    }

    fn fill_zero(&mut self) {
        self.visit_mut(&mut |p| p.fill(0.0));
    }

    /// Zeroed copy, used as a gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |p| ok &= p.iter().all(|v| v.is_finite()));
        ok
    }

    /// Order-sensitive hash of the parameter bits; tapes record it so that a
    /// backward pass against modified parameters is refused.
    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        self.visit(&mut |p| {
            for v in p {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(7);
            }
            h ^= p.len() as u64;
        });
        h
    }
}

/// A differentiable map on row-major batches (one sample per row).
pub trait Network: Parameters {
    type Tape;

    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Self::Tape)>;

    /// Propagates `dy` back through the cached activations. Parameter
    /// gradients are added into `grads` when given; the input gradient is
    /// returned.
    fn backward(&self, tape: &Self::Tape, dy: &Array2<f64>, grads: Option<&mut Self>) -> Result<Array2<f64>>
    where
        Self: Sized;

    fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.0)
    }
}

pub(crate) fn check_input(context: &'static str, expected: usize, x: &Array2<f64>) -> Result<()> {
    crate::error::ensure_len(context, expected, x.ncols())
}
