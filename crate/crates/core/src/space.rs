//! Contexts, responses, and the fixed joint feature map `φ(x, y)`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{input_err, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// A prompt/context vector of fixed dimension `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ContextVec<T>(Vec<T>);

impl<T: Scalar> ContextVec<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return input_err("context contains a non-finite entry");
        }
        Ok(Self(values))
    }

    /// Standard-normal context of dimension `d`.
    pub fn sample(d: usize, rng: &mut RngStream) -> Self {
        Self((0..d).map(|_| T::lit(rng.normal())).collect())
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// One element of the response universe together with its cached joint features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ResponseRef<T> {
    pub action_id: usize,
    pub features: Vec<T>,
}

impl<T: Scalar> ResponseRef<T> {
    pub fn new(action_id: usize, features: Vec<T>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return input_err("response features contain a non-finite entry");
        }
        Ok(Self {
            action_id,
            features,
        })
    }
}

/// Dimensions of the synthetic testbed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    /// Context dimension `d`.
    pub context_dim: usize,
    /// Joint feature dimension `p`.
    pub feature_dim: usize,
    /// Size of the response universe `N_A`.
    pub n_actions: usize,
    pub embed_dim: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        Self {
            context_dim: 8,
            feature_dim: 32,
            n_actions: 32,
            embed_dim: 8,
        }
    }
}

/// `φ(x, a) = tanh(W · [x; e_a] + b)` with `W`, `b`, `e_a` drawn once from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureMap<T> {
    seed: u64,
    dims: FeatureDims,
    /// Row-major `p × (d + embed_dim)`.
    weights: Vec<T>,
    bias: Vec<T>,
    /// Row-major `N_A × embed_dim`.
    embeddings: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(dims: FeatureDims, seed: u64) -> Result<Self> {
        if dims.context_dim == 0 || dims.feature_dim == 0 || dims.n_actions == 0 {
            return input_err("feature map dimensions must be positive");
        }
        let mut rng = RngStream::root(seed).child("feature-map");
        let fan_in = dims.context_dim + dims.embed_dim;
        let scale = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..dims.feature_dim * fan_in)
            .map(|_| T::lit(rng.normal() * scale))
            .collect();
        let bias = (0..dims.feature_dim)
            .map(|_| T::lit(0.1 * rng.normal()))
            .collect();
        let embeddings = (0..dims.n_actions * dims.embed_dim)
            .map(|_| T::lit(rng.normal()))
            .collect();
        Ok(Self {
            seed,
            dims,
            weights,
            bias,
            embeddings,
        })
    }

    pub fn dims(&self) -> FeatureDims {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Short hex digest identifying `(dims, seed)`; stored in checkpoints.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for v in [
            self.dims.context_dim,
            self.dims.feature_dim,
            self.dims.n_actions,
            self.dims.embed_dim,
        ] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(std::any::type_name::<T>().as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn apply(&self, x: &ContextVec<T>, action_id: usize) -> Result<Vec<T>> {
        let d = self.dims.context_dim;
        if x.dim() != d {
            return input_err(format!("context has dimension {}, expected {d}", x.dim()));
        }
        if action_id >= self.dims.n_actions {
            return input_err(format!(
                "action {action_id} outside universe of {}",
                self.dims.n_actions
            ));
        }
        let e = self.dims.embed_dim;
        let fan_in = d + e;
        let emb = &self.embeddings[action_id * e..(action_id + 1) * e];
        let out = (0..self.dims.feature_dim)
            .map(|row| {
                let w = &self.weights[row * fan_in..(row + 1) * fan_in];
                let mut z = self.bias[row];
                for (wi, xi) in w[..d].iter().zip(x.values()) {
                    z = z + *wi * *xi;
                }
                for (wi, ei) in w[d..].iter().zip(emb) {
                    z = z + *wi * *ei;
                }
                z.tanh()
            })
            .collect();
        Ok(out)
    }

    pub fn response(&self, x: &ContextVec<T>, action_id: usize) -> Result<ResponseRef<T>> {
        Ok(ResponseRef {
            action_id,
            features: self.apply(x, action_id)?,
        })
    }

    /// Features of every action in the universe for one context.
    pub fn universe(&self, x: &ContextVec<T>) -> Result<Universe<T>> {
        let responses = (0..self.dims.n_actions)
            .map(|a| self.response(x, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Universe {
            context: x.clone(),
            responses,
        })
    }
}

/// A context together with the joint features of every action in the universe.
#[derive(Clone, Debug, PartialEq)]
pub struct Universe<T> {
    pub context: ContextVec<T>,
    /// Indexed by `action_id`.
    pub responses: Vec<ResponseRef<T>>,
}

impl<T: Scalar> Universe<T> {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn get(&self, action_id: usize) -> Result<&ResponseRef<T>> {
        self.responses.get(action_id).ok_or_else(|| {
            crate::Error::Input(format!(
                "action {action_id} outside universe of {}",
                self.responses.len()
            ))
        })
    }
}
