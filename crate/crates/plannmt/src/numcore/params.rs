use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::NumError;

/// Weight init range. Biases start at zero so early softmaxes stay near-uniform.
pub const INIT_RANGE: f64 = 0.08;

/// Named parameter tensors for one model.
///
/// Names are unique and shapes are fixed once a parameter is added. Iteration
/// is in name order, so anything that walks the store (updates, checkpointing,
/// gradient checks) is deterministic.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore {
            entries: BTreeMap::new(),
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<(), NumError> {
        if self.entries.contains_key(name) {
            return Err(NumError::DuplicateParam { name: name.into() });
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    /// Add a weight tensor initialized uniform(-INIT_RANGE, INIT_RANGE).
    pub fn add_uniform(&mut self, name: &str, shape: &[usize]) -> Result<(), NumError> {
        let t = Tensor::uniform(shape, -INIT_RANGE, INIT_RANGE, &mut self.rng);
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<(), NumError> {
        self.add(name, Tensor::zeros(shape))
    }

    /// `{prefix}.w` ([out, in], uniform) and `{prefix}.b` ([out], zeros).
    pub fn add_affine(&mut self, prefix: &str, in_dim: usize, out_dim: usize) -> Result<(), NumError> {
        self.add_uniform(&format!("{prefix}.w"), &[out_dim, in_dim])?;
        self.add_zeros(&format!("{prefix}.b"), &[out_dim])
    }

    /// LSTM cell parameters: `{prefix}.wx` [4H, in], `{prefix}.wh` [4H, H],
    /// `{prefix}.b` [4H] zeros. Gate order within the 4H axis: input, forget,
    /// candidate, output.
    pub fn add_lstm(&mut self, prefix: &str, in_dim: usize, hidden: usize) -> Result<(), NumError> {
        self.add_uniform(&format!("{prefix}.wx"), &[4 * hidden, in_dim])?;
        self.add_uniform(&format!("{prefix}.wh"), &[4 * hidden, hidden])?;
        self.add_zeros(&format!("{prefix}.b"), &[4 * hidden])
    }

    pub fn add_embedding(&mut self, name: &str, vocab: usize, dim: usize) -> Result<(), NumError> {
        self.add_uniform(name, &[vocab, dim])
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NumError> {
        self.entries
            .get(name)
            .ok_or_else(|| NumError::UnknownParam { name: name.into() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NumError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| NumError::UnknownParam { name: name.into() })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar entries across all parameters.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// Name-ordered iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }
}

/// Gradient (or velocity) tensors keyed by parameter name, shape-aligned with
/// the ParamStore they came from.
#[derive(Debug, Clone, Default)]
pub struct GradMap {
    map: BTreeMap<String, Tensor>,
}

impl GradMap {
    pub fn zeros_like(store: &ParamStore) -> Self {
        let map = store
            .iter()
            .map(|(name, t)| (name.clone(), Tensor::zeros(t.shape())))
            .collect();
        GradMap { map }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NumError> {
        self.map
            .get(name)
            .ok_or_else(|| NumError::UnknownParam { name: name.into() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NumError> {
        self.map
            .get_mut(name)
            .ok_or_else(|| NumError::UnknownParam { name: name.into() })
    }

    pub fn insert(&mut self, name: String, t: Tensor) {
        self.map.insert(name, t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// L2 norm over every entry of every tensor.
    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Scale all tensors in place.
    pub fn scale(&mut self, k: f64) {
        for t in self.map.values_mut() {
            for v in t.data_mut() {
                *v *= k;
            }
        }
    }

    /// Rescale so the global norm does not exceed `max_norm`; returns the
    /// pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}
