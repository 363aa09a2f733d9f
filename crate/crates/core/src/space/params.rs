use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Copies every parameter of `other` whose name and shape match here.
    /// Returns the number copied.
    pub fn copy_matching_from(&mut self, other: &ParamStore) -> usize {
        let mut n = 0;
        for (name, v) in other.names.iter().zip(&other.values) {
            if let Some(&i) = self.index.get(name) {
                if self.values[i].shape() == v.shape() {
                    self.values[i] = v.clone();
                    n += 1;
                }
            }
        }
        n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Decay applied to the previous running estimate on each update.
pub const RUNNING_MOMENTUM: f64 = 0.9;

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn update(&mut self, mean: &[f64], var: &[f64]) {
        let m = RUNNING_MOMENTUM;
        for (r, b) in self.mean.iter_mut().zip(mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.var.iter_mut().zip(var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

/// Which statistics normalization layers use.
#[derive(Clone, Copy, Debug)]
pub enum NormMode<'a> {
    /// Batch statistics, nothing recorded (search networks).
    Batch,
    /// Batch statistics, recorded for a running-average update (training).
    BatchRecord,
    /// Stored running statistics (evaluation of trained networks).
    Running(&'a [RunningStats]),
}

/// Forward-pass context: the tape plus lazily loaded parameter leaves.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    loaded: Vec<Option<Var>>,
    pub(crate) norm: NormMode<'a>,
    pub(crate) recorded: Vec<(usize, Vec<f64>, Vec<f64>)>,
    pub(crate) noise: ChaCha8Rng,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, norm: NormMode<'a>) -> Self {
        Ctx {
            tape: Tape::new(),
            store,
            loaded: vec![None; store.len()],
            norm,
            recorded: Vec::new(),
            noise: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Seeds the generator used for op-output noise injection.
    pub fn with_noise_seed(mut self, seed: u64) -> Self {
        self.noise = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.loaded[id.0] {
            return v;
        }
        let v = self.tape.param(self.store.get(id).clone());
        self.loaded[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Gradients aligned with the store; `None` for parameters the pass never touched.
    pub fn param_grads(&self) -> Vec<Option<Tensor>> {
        self.loaded
            .iter()
            .map(|v| v.and_then(|v| self.tape.grad(v).cloned()))
            .collect()
    }

    /// Batch statistics recorded in `BatchRecord` mode: `(running index, mean, var)`.
    pub fn recorded_stats(&self) -> &[(usize, Vec<f64>, Vec<f64>)] {
        &self.recorded
    }
}
