use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{config, Error, Result};
use crate::tensor::Tensor;

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Copies every tensor onto `tape` as a leaf.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect()
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (n, t) in self.names.iter().zip(&self.tensors) {
            t.write_ft1(&dir.join(format!("{n}.ft1")))?;
        }
        Ok(())
    }

    /// Replaces every tensor with the same-named FT1 file from `dir`.
    pub fn load_dir(&mut self, dir: &Path) -> Result<()> {
        let mut loaded = HashMap::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            let path = dir.join(format!("{n}.ft1"));
            let v = Tensor::read_ft1(&path)?;
            if v.shape() != t.shape() {
                return Err(Error::Format {
                    path,
                    reason: format!("expected shape {:?}, found {:?}", t.shape(), v.shape()),
                });
            }
            loaded.insert(n.clone(), v);
        }
        for (n, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            *t = loaded.remove(n).expect("loaded above");
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        match self.names.iter().position(|n| n == name) {
            Some(i) => Ok(i),
            None => config(format!("no parameter named `{name}`")),
        }
    }
}

/// Kaiming-uniform (fan-in, ReLU gain): `U(-√(6/fan_in), √(6/fan_in))`.
pub(crate) fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape product")
}
