use std::cell::RefCell;
use std::collections::HashMap;

use rand::RngCore;
use rand_distr::{Distribution, Normal, Uniform};

use crate::{Array, Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    /// Updated by the optimizer.
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Entry<T> {
    pub name: String,
    pub kind: EntryKind,
    pub value: Array<T>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("duplicate parameter name `{0}`")]
    Duplicate(String),
    #[error("missing parameter `{0}`")]
    Missing(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

/// Named weights and buffers of one network.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: EntryKind, value: Array<T>) -> Result<ParamId, StoreError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(StoreError::Duplicate(name));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(Entry { name, kind, value });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &Entry<T> {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Array<T>> {
        self.id(name).map(|id| self.get(id))
    }

    /// # Panics
    /// Panics on a shape change; weights never change shape after construction.
    pub fn set(&mut self, id: ParamId, value: Array<T>) {
        let e = &mut self.entries[id.0];
        assert_eq!(e.value.shape(), value.shape(), "shape change for `{}`", e.name);
        e.value = value;
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.entries[id.0].value
    }

    pub fn set_by_name(&mut self, name: &str, value: Array<T>) -> Result<(), StoreError> {
        let id = self.id(name).ok_or_else(|| StoreError::Missing(name.to_string()))?;
        let expected = self.get(id).shape().to_vec();
        if expected != value.shape() {
            return Err(StoreError::Shape { name: name.to_string(), expected, found: value.shape().to_vec() });
        }
        self.set(id, value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Entry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, e)| e.kind == EntryKind::Trainable).map(|(id, _)| id).collect()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == EntryKind::Trainable).map(|e| e.value.len()).sum()
    }

    /// Number of scalars including buffers.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), kind: e.kind, value: e.value.cast() })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Copy every value from `other`, matched by name.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<(), StoreError> {
        for e in &other.entries {
            self.set_by_name(&e.name, e.value.clone())?;
        }
        for e in &self.entries {
            if other.id(&e.name).is_none() {
                return Err(StoreError::Missing(e.name.clone()));
            }
        }
        Ok(())
    }
}

/// Weight initializers.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// He/Kaiming normal with ReLU gain: `N(0, 2 / fan_in)`.
    KaimingNormal { fan_in: usize },
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual bias init.
    FanInUniform { fan_in: usize },
}

impl Init {
    fn sample<T: Float>(self, shape: &[usize], rng: &mut dyn RngCore) -> Array<T> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match self {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::FanInUniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        };
        Array::from_vec(shape.to_vec(), values.into_iter().map(T::of_f64).collect())
    }
}

/// Registers named parameters under a dotted path prefix.
pub struct ParamBuilder<'a, T: Float> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut dyn RngCore,
    prefix: String,
}

impl<'a, T: Float> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut dyn RngCore) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    /// Child builder for `prefix.name`.
    pub fn pp(&mut self, name: impl AsRef<str>) -> ParamBuilder<'_, T> {
        let prefix = self.path(name.as_ref());
        ParamBuilder { store: self.store, rng: self.rng, prefix }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// # Panics
    /// Panics on duplicate names, which indicates a model-construction bug.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        self.add(name, shape, init, EntryKind::Trainable)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        self.add(name, shape, init, EntryKind::Buffer)
    }

    fn add(&mut self, name: &str, shape: &[usize], init: Init, kind: EntryKind) -> ParamId {
        let value = init.sample::<T>(shape, self.rng);
        let path = self.path(name);
        self.store.insert(path, kind, value).unwrap_or_else(|e| panic!("{e}"))
    }
}

/// Forward-pass context: where weights come from, whether gradients should
/// reach them, and train/eval behaviour of normalization layers.
pub struct Ctx<'s, T: Float> {
    store: &'s ParamStore<T>,
    train: bool,
    track_params: bool,
    stat_updates: RefCell<Vec<(ParamId, Array<T>)>>,
}

impl<'s, T: Float> Ctx<'s, T> {
    /// Eval mode, no parameter gradients.
    pub fn inference(store: &'s ParamStore<T>) -> Self {
        Self::new(store, false, false)
    }

    /// Train mode with parameter gradients.
    pub fn training(store: &'s ParamStore<T>) -> Self {
        Self::new(store, true, true)
    }

    pub fn new(store: &'s ParamStore<T>, train: bool, track_params: bool) -> Self {
        Self { store, train, track_params, stat_updates: RefCell::new(Vec::new()) }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn tracks_params(&self) -> bool {
        self.track_params
    }

    pub fn param(&self, id: ParamId) -> Tensor<T> {
        let tracked = self.track_params && self.store.entry(id).kind == EntryKind::Trainable;
        Tensor::param_leaf(self.store.get(id).clone(), id, tracked)
    }

    /// Queue a buffer update (e.g. running statistics) to apply after the step.
    pub fn record_buffer(&self, id: ParamId, value: Array<T>) {
        self.stat_updates.borrow_mut().push((id, value));
    }

    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Array<T>)> {
        std::mem::take(&mut *self.stat_updates.borrow_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn builder_paths_and_duplicates() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let id = b.pp("fpn").pp("lateral0").param("weight", &[4, 2, 1, 1], Init::KaimingNormal { fan_in: 2 });
        b.buffer("stat", &[3], Init::Ones);
        assert_eq!(store.entry(id).name, "fpn.lateral0.weight");
        assert_eq!(store.num_trainable(), 8);
        assert_eq!(store.num_scalars(), 11);
        assert!(store.insert("stat", EntryKind::Buffer, Array::zeros(vec![1])).is_err());
    }

    #[test]
    fn buffers_never_track_gradients() {
        let mut store = ParamStore::<f64>::new();
        let w = store.insert("w", EntryKind::Trainable, Array::zeros(vec![1])).unwrap();
        let b = store.insert("b", EntryKind::Buffer, Array::zeros(vec![1])).unwrap();
        let ctx = Ctx::training(&store);
        assert!(ctx.param(w).requires_grad());
        assert!(!ctx.param(b).requires_grad());
        assert!(!Ctx::inference(&store).param(w).requires_grad());
    }
}
