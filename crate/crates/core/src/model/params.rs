use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{cast, Element, RunningStats, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform { fan_in: usize },
    Zeros,
    Ones,
}

/// Parameter layout collected while the architecture is assembled.
#[derive(Default)]
pub(crate) struct Registry {
    pub params: Vec<(String, Vec<usize>, Init)>,
    pub stats: Vec<(String, usize)>,
}

impl Registry {
    pub fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        debug_assert!(self.params.iter().all(|(n, _, _)| *n != name), "duplicate {name}");
        self.params.push((name, shape, init));
        ParamId(self.params.len() - 1)
    }

    pub fn stats(&mut self, name: String, channels: usize) -> StatsId {
        self.stats.push((name, channels));
        StatsId(self.stats.len() - 1)
    }
}

/// Named trainable tensors in canonical (registration) order.
#[derive(Clone, Debug)]
pub struct ParamStore<E: Element = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
}

impl<E: Element> ParamStore<E> {
    pub(crate) fn initialize(registry: &Registry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(registry.params.len());
        let mut tensors = Vec::with_capacity(registry.params.len());
        for (name, shape, init) in &registry.params {
            let n: usize = shape.iter().product();
            let data = match *init {
                Init::KaimingUniform { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| cast(rng.gen_range(-bound..bound))).collect()
                }
                Init::Zeros => vec![E::zero(); n],
                Init::Ones => vec![E::one(); n],
            };
            names.push(name.clone());
            tensors.push(Tensor::new(shape.clone(), data).expect("registered shape"));
        }
        Self { names, tensors }
    }

    /// A store holding exactly the given tensors (names must be unique).
    pub fn from_named(entries: Vec<(String, Tensor<E>)>) -> Self {
        let (names, tensors): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len(), "duplicate parameter names");
        Self { names, tensors }
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

    pub fn tensors(&self) -> &[Tensor<E>] {
        &self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<E> {
        &self.tensors[id.0]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<E>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    /// Mutable values of parameter `index`.
    pub fn values_mut(&mut self, index: usize) -> &mut [E] {
        self.tensors[index].data_mut()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

/// Batch-norm running statistics, one entry per normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsStore<E: Element = f32> {
    names: Vec<String>,
    stats: Vec<RunningStats<E>>,
}

impl<E: Element> StatsStore<E> {
    pub(crate) fn initialize(registry: &Registry) -> Self {
        Self {
            names: registry.stats.iter().map(|(n, _)| n.clone()).collect(),
            stats: registry.stats.iter().map(|&(_, c)| RunningStats::new(c)).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn get(&self, index: usize) -> &RunningStats<E> {
        &self.stats[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut RunningStats<E> {
        &mut self.stats[index]
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [RunningStats<E>] {
        &mut self.stats
    }

    pub fn cast<F: Element>(&self) -> StatsStore<F> {
        StatsStore {
            names: self.names.clone(),
            stats: self.stats.iter().map(RunningStats::cast).collect(),
        }
    }
}
