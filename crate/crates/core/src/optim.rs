//! Adam with per-parameter step counts and inspectable moments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tch::Tensor;

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

pub struct Adam {
    pub config: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments> {
        &self.state
    }

    pub fn insert_moments(&mut self, name: &str, moments: Moments) {
        self.state.insert(name.to_string(), moments);
    }

    /// Updates every named parameter that has a gradient. Parameters without
    /// one (not reached by the loss) are left alone, step count included.
    pub fn step(&mut self, store: &ParamStore, names: &[String]) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let _guard = tch::no_grad_guard();
        for name in names {
            let p = store.get(name);
            let g = p.grad();
            if !g.defined() {
                continue;
            }
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: p.zeros_like(),
                v: p.zeros_like(),
                step: 0,
            });
            st.step += 1;
            let _ = st.m.lerp_(&g, 1.0 - beta1);
            let _ = st.v.g_mul_scalar_(beta2).g_add_(&(g.square() * (1.0 - beta2)));
            let bc1 = 1.0 - beta1.powi(st.step as i32);
            let bc2 = 1.0 - beta2.powi(st.step as i32);
            let mut denom = &st.v / bc2;
            let _ = denom.sqrt_().g_add_scalar_(eps);
            let mut update = &st.m / denom;
            let _ = update.g_mul_scalar_(lr / bc1);
            let mut target = p.shallow_clone();
            let _ = target.f_sub_(&update).expect("in-place update");
        }
    }
}
