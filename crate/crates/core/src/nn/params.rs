use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named trainable leaves plus non-trainable state vectors (power-iteration
/// estimates), kept in name order so iteration is deterministic.
#[derive(Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<()> {
        self.params.insert(name.into(), Tensor::parameter(shape, data)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    /// The parameter leaf when `trainable`, otherwise a detached constant.
    pub fn fetch(&self, name: &str, trainable: bool) -> Result<Tensor> {
        let t = self.get(name)?;
        Ok(if trainable { t.clone() } else { t.detach() })
    }

    pub(crate) fn replace(&mut self, name: &str, tensor: Tensor) {
        debug_assert!(self.params.contains_key(name));
        self.params.insert(name.to_string(), tensor);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.params.values().for_each(Tensor::zero_grad);
    }

    pub fn buffer(&self, name: &str) -> Result<&[f64]> {
        self.buffers
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("unknown state buffer {name}")))
    }

    pub fn set_buffer(&mut self, name: impl Into<String>, data: Vec<f64>) {
        self.buffers.insert(name.into(), data);
    }

    /// Hash over every parameter's name and exact bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, t) in &self.params {
            name.hash(&mut h);
            t.shape().hash(&mut h);
            t.data().iter().for_each(|v| v.to_bits().hash(&mut h));
        }
        h.finish()
    }

    pub fn save(&self, c: &mut Container, prefix: &str) {
        for (name, t) in &self.params {
            c.put_tensor(format!("{prefix}param.{name}"), t);
        }
        for (name, b) in &self.buffers {
            c.put_real(format!("{prefix}buffer.{name}"), &[b.len()], b);
        }
    }

    /// Overwrites every parameter and buffer already present in this store
    /// with the container's values. Shapes must match exactly.
    pub fn load(&mut self, c: &Container, prefix: &str) -> Result<()> {
        let names: Vec<String> = self.params.keys().cloned().collect();
        for name in names {
            let (shape, data) = c.real(&format!("{prefix}param.{name}"))?;
            let current = &self.params[&name];
            if shape != current.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {prefix}{name} has shape {shape:?} in checkpoint, {:?} in model",
                    current.shape()
                )));
            }
            self.params.insert(name, Tensor::parameter(shape, data.to_vec())?);
        }
        let names: Vec<String> = self.buffers.keys().cloned().collect();
        for name in names {
            let (_, data) = c.real(&format!("{prefix}buffer.{name}"))?;
            if data.len() != self.buffers[&name].len() {
                return Err(Error::Checkpoint(format!("buffer {prefix}{name} has wrong length")));
            }
            self.buffers.insert(name, data.to_vec());
        }
        Ok(())
    }
}

/// How a forward pass treats parameters and power-iteration state.
pub struct Pass {
    trainable: bool,
    advance: bool,
    updates: Vec<(String, Vec<f64>)>,
}

impl Pass {
    /// Parameters track gradients; spectral-norm vectors advance.
    pub fn train() -> Pass {
        Pass { trainable: true, advance: true, updates: Vec::new() }
    }

    /// Parameters are constants and state is left untouched. Gradients still
    /// flow through to the inputs.
    pub fn frozen() -> Pass {
        Pass { trainable: false, advance: false, updates: Vec::new() }
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub(crate) fn record(&mut self, name: &str, u: Vec<f64>) {
        if self.advance {
            self.updates.push((name.to_string(), u));
        }
    }

    /// Writes recorded state advances back into `store`.
    pub fn commit(self, store: &mut ParamStore) {
        for (name, u) in self.updates {
            store.set_buffer(name, u);
        }
    }
}
