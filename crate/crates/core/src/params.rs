//! Named parameter storage.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Normalization running statistic; updated from batch statistics only.
    RunningStat,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Ordered collection of named weight arrays. Insertion order is the
/// canonical order for checkpoints and optimizer state.
#[derive(Clone, Debug)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn insert(&mut self, name: String, kind: ParamKind, value: Tensor) -> String {
        assert!(
            !self.index.contains_key(&name),
            "parameter `{name}` registered twice"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.clone(),
            kind,
            value,
        });
        name
    }

    /// Registers a convolution kernel `out × in × k × k` drawn from
    /// `N(0, 2 / fan_in)`.
    pub fn conv_weight(&mut self, name: String, out_c: usize, in_c: usize, k: usize) -> String {
        let fan_in = (in_c * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let data = (0..out_c * in_c * k * k)
            .map(|_| normal.sample(&mut self.rng))
            .collect();
        let t = Tensor::from_vec([out_c, in_c, k, k], data).expect("sized");
        self.insert(name, ParamKind::Trainable, t)
    }

    pub fn constant(&mut self, name: String, len: usize, value: f64) -> String {
        self.insert(name, ParamKind::Trainable, Tensor::full([1, len, 1, 1], value))
    }

    pub fn running(&mut self, name: String, len: usize, value: f64) -> String {
        self.insert(name, ParamKind::RunningStat, Tensor::full([1, len, 1, 1], value))
    }

    /// Rebuilds a store from stored entries, e.g. a checkpoint.
    pub fn from_entries(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut store = Self::new(0);
        for e in entries {
            if store.contains(&e.name) {
                return Err(Error::Checkpoint(format!("parameter `{}` appears twice", e.name)));
            }
            store.insert(e.name, e.kind, e.value);
        }
        Ok(store)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].value)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].value),
            None => Err(Error::Config(format!("no parameter named `{name}`"))),
        }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar trainable weights.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}
