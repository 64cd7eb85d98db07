//! Small fully connected scalar-output network with tanh hidden layers.
//!
//! Parameters live in one flat vector (per layer: row-major weights, then
//! biases) so that optimizers and the anchor penalty work on plain slices.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Mlp<T> {
    /// Layer widths from input to output; the last entry is always 1.
    sizes: Vec<usize>,
    params: Vec<T>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Scalar> Mlp<T> {
    /// `input → hidden... → 1`.
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let sizes = Self::layout(input, hidden);
        let n = param_count(&sizes);
        Self {
            sizes,
            params: vec![T::zero(); n],
        }
    }

    /// Gaussian weights with variance `1/fan_in`, zero biases.
    pub fn random(input: usize, hidden: &[usize], rng: &mut RngStream) -> Self {
        let mut net = Self::zeros(input, hidden);
        let mut offset = 0;
        for w in net.sizes.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = T::lit(rng.normal() * scale);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn from_params(input: usize, hidden: &[usize], params: Vec<T>) -> Result<Self> {
        let sizes = Self::layout(input, hidden);
        if params.len() != param_count(&sizes) {
            return input_err(format!(
                "expected {} parameters, got {}",
                param_count(&sizes),
                params.len()
            ));
        }
        Ok(Self { sizes, params })
    }

    fn layout(input: usize, hidden: &[usize]) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.sizes[0] {
            return input_err(format!(
                "network expects {} inputs, got {}",
                self.sizes[0],
                x.len()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<T> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[T]) -> T {
        let mut tape = Tape::default();
        self.forward_tape(x, &mut tape)
    }

    /// Forward pass that keeps every layer's activations in `tape`.
    pub(crate) fn forward_tape(&self, x: &[T], tape: &mut Tape<T>) -> T {
        let n_layers = self.sizes.len() - 1;
        tape.acts.resize_with(n_layers + 1, Vec::new);
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(x);
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let (done, rest) = tape.acts.split_at_mut(l + 1);
            let (prev, next) = (&done[l], &mut rest[0]);
            next.clear();
            let last = l + 1 == n_layers;
            for o in 0..fan_out {
                let z = crate::scalar::dot(&weights[o * fan_in..(o + 1) * fan_in], prev) + bias[o];
                next.push(if last { z } else { z.tanh() });
            }
            offset += fan_in * fan_out + fan_out;
        }
        tape.acts[n_layers][0]
    }

    /// Adds `scale · ∂output/∂params` into `grad`, using the activations of
    /// the latest [`Mlp::forward_tape`] call on `tape`.
    pub(crate) fn backward_tape(&self, tape: &mut Tape<T>, scale: T, grad: &mut [T]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut end = self.params.len();
        // delta holds ∂out/∂z for the current layer
        tape.delta.clear();
        tape.delta.push(scale);
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = end - fan_in * fan_out - fan_out;
            end = off;
            let input = &tape.acts[l];
            for o in 0..fan_out {
                let d = tape.delta[o];
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g = *g + d * a;
                }
                grad[off + fan_in * fan_out + o] = grad[off + fan_in * fan_out + o] + d;
            }
            if l > 0 {
                let weights = &self.params[off..off + fan_in * fan_out];
                tape.spare.clear();
                tape.spare.resize(fan_in, T::zero());
                for o in 0..fan_out {
                    let d = tape.delta[o];
                    for (b, &w) in tape.spare.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                        *b = *b + w * d;
                    }
                }
                // input[i] = tanh(z) from the previous layer
                for (b, &a) in tape.spare.iter_mut().zip(input) {
                    *b = *b * (T::one() - a * a);
                }
                std::mem::swap(&mut tape.delta, &mut tape.spare);
            }
        }
    }

    /// Returns the output and adds `scale · ∂output/∂params` into `grad`.
    #[cfg(test)]
    pub(crate) fn accumulate_grad(&self, x: &[T], scale: T, grad: &mut [T]) -> T {
        let mut tape = Tape::default();
        let out = self.forward_tape(x, &mut tape);
        self.backward_tape(&mut tape, scale, grad);
        out
    }
}

/// Reusable activation buffers for one forward/backward pass.
#[derive(Debug)]
pub(crate) struct Tape<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    spare: Vec<T>,
}

impl<T> Default for Tape<T> {
    fn default() -> Self {
        Self {
            acts: Vec::new(),
            delta: Vec::new(),
            spare: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::<f64>::zeros(4, &[3, 3]);
        assert_eq!(net.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap(), 0.0);
        assert_eq!(net.params().len(), 4 * 3 + 3 + 3 * 3 + 3 + 3 + 1);
    }

    #[test]
    fn linear_network_is_a_dot_product() {
        let net = Mlp::<f64>::from_params(3, &[], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        assert!((net.forward(&[1.0, 1.0, 1.0]).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let net = Mlp::<f64>::zeros(4, &[2]);
        assert!(net.forward(&[1.0]).is_err());
        assert!(Mlp::<f64>::from_params(4, &[2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = RngStream::root(5);
        for trial in 0..20 {
            let mut net = Mlp::<f64>::random(5, &[4, 3], &mut rng);
            for p in net.params_mut() {
                *p += 0.1 * rng.normal();
            }
            let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let mut grad = vec![0.0; net.params().len()];
            net.accumulate_grad(&x, 1.0, &mut grad);
            let eps = 1e-6;
            for i in 0..grad.len() {
                let mut plus = net.clone();
                plus.params_mut()[i] += eps;
                let mut minus = net.clone();
                minus.params_mut()[i] -= eps;
                let fd = (plus.forward(&x).unwrap() - minus.forward(&x).unwrap()) / (2.0 * eps);
                let denom = fd.abs().max(grad[i].abs()).max(1e-8);
                assert!(
                    (fd - grad[i]).abs() / denom < 1e-5 || (fd - grad[i]).abs() < 1e-9,
                    "trial {trial} param {i}: fd {fd} vs {}",
                    grad[i]
                );
            }
        }
    }
}
