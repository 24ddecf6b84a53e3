use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction and per-parameter step counters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Adam {
        Adam { config, state: BTreeMap::new() }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Step count of a parameter (0 if it never received a gradient).
    pub fn steps(&self, name: &str) -> u64 {
        self.state.get(name).map_or(0, |m| m.step)
    }

    /// Names of the parameters that have optimizer state.
    pub fn tracked(&self) -> impl Iterator<Item = &str> {
        self.state.keys().map(String::as_str)
    }

    /// Applies one update to every parameter that has a gradient, replacing
    /// the leaves in `store`. Parameters without gradients are skipped.
    /// Returns the number of parameters updated.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<usize> {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let mut updates: Vec<(String, Tensor)> = Vec::new();
        for (name, p) in store.iter() {
            let Some(g) = p.grad() else { continue };
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at index {i} of parameter {name}",
                    g[i]
                )));
            }
            let st = self.state.entry(name.to_string()).or_insert_with(|| Moments {
                step: 0,
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            st.step += 1;
            let bc1 = 1.0 - beta1.powi(st.step as i32);
            let bc2 = 1.0 - beta2.powi(st.step as i32);
            let mut data = p.to_vec();
            for (i, (&gi, w)) in g.iter().zip(data.iter_mut()).enumerate() {
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * gi;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * gi * gi;
                let mh = st.m[i] / bc1;
                let vh = st.v[i] / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
            updates.push((name.to_string(), Tensor::parameter(p.shape(), data)?));
        }
        let n = updates.len();
        for (name, t) in updates {
            store.replace(&name, t);
        }
        Ok(n)
    }

    pub fn save(&self, c: &mut Container, prefix: &str) {
        c.put_real(
            format!("{prefix}hyper"),
            &[4],
            &[self.config.lr, self.config.beta1, self.config.beta2, self.config.eps],
        );
        for (name, st) in &self.state {
            c.put_index(format!("{prefix}step.{name}"), &[st.step as i64]);
            c.put_real(format!("{prefix}m.{name}"), &[st.m.len()], &st.m);
            c.put_real(format!("{prefix}v.{name}"), &[st.v.len()], &st.v);
        }
    }

    pub fn load(c: &Container, prefix: &str) -> Result<Adam> {
        let (_, h) = c.real(&format!("{prefix}hyper"))?;
        if h.len() != 4 {
            return Err(Error::Checkpoint("optimizer hyperparameters malformed".into()));
        }
        let config = AdamConfig { lr: h[0], beta1: h[1], beta2: h[2], eps: h[3] };
        let step_prefix = format!("{prefix}step.");
        let mut state = BTreeMap::new();
        for key in c.keys() {
            let Some(name) = key.strip_prefix(&step_prefix) else { continue };
            let step = c.index(key)?.first().copied().unwrap_or(0) as u64;
            let (_, m) = c.real(&format!("{prefix}m.{name}"))?;
            let (_, v) = c.real(&format!("{prefix}v.{name}"))?;
            state.insert(name.to_string(), Moments { step, m: m.to_vec(), v: v.to_vec() });
        }
        Ok(Adam { config, state })
    }
}
