//! Named parameter storage.
//!
//! Initial values come from a ChaCha stream keyed by the store seed and the
//! parameter name, so a parameter's starting value does not depend on when
//! it was created (growing at iteration k or after a resume gives the same
//! tensor).

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tch::{Kind, Tensor};

use crate::{CoreError, Result};

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the store seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub struct ParamStore {
    seed: u64,
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            params: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(CoreError::Config(format!("parameter {name} registered twice")));
        }
        self.params.insert(name.to_string(), t.set_requires_grad(true));
        Ok(())
    }

    /// Registers an `N(0, 1)` parameter.
    pub fn normal(&mut self, name: &str, shape: &[i64]) -> Result<()> {
        let n: i64 = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
        let data: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        self.insert(name, Tensor::from_slice(&data).view(shape))
    }

    pub fn zeros(&mut self, name: &str, shape: &[i64]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape, (Kind::Float, tch::Device::Cpu)))
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> i64 {
        self.params.values().map(|t| t.numel() as i64).sum()
    }

    /// Overwrites a parameter's values; the shape must match.
    pub fn assign(&mut self, name: &str, value: &Tensor) -> Result<()> {
        let t = self
            .params
            .get_mut(name)
            .ok_or_else(|| CoreError::Checkpoint(format!("unknown parameter {name}")))?;
        if t.size() != value.size() {
            return Err(CoreError::Checkpoint(format!(
                "parameter {name}: shape {:?} vs stored {:?}",
                value.size(),
                t.size()
            )));
        }
        tch::no_grad(|| t.copy_(value));
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    /// Deep copy with fresh leaf tensors.
    pub fn duplicate(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.detach().copy().set_requires_grad(true)))
            .collect();
        Self { seed: self.seed, params }
    }
}
