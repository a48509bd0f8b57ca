use crate::{Array, Float, Gradients, ParamId, ParamStore, StoreError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept in `f64` regardless of the
/// parameter precision.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Option<Vec<f64>>>,
    v: Vec<Option<Vec<f64>>>,
}

/// Optimizer state keyed by parameter name, for checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update with learning rate `lr` to every trainable entry that
    /// has a gradient.
    pub fn step<T: Float>(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        let mut ids: Vec<(ParamId, &Array<T>)> = grads.params().collect();
        ids.sort_by_key(|(id, _)| *id);
        for (id, g) in ids {
            let i = id.index();
            let n = g.len();
            let m = self.m[i].get_or_insert_with(|| vec![0.0; n]);
            let v = self.v[i].get_or_insert_with(|| vec![0.0; n]);
            let p = store.value_mut(id).data_mut();
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.as_f64();
                *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g;
                *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g;
                let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + self.cfg.eps);
                *p = T::of_f64(p.as_f64() - update);
            }
        }
    }

    pub fn export<T: Float>(&self, store: &ParamStore<T>) -> AdamState {
        let moments = self
            .m
            .iter()
            .zip(&self.v)
            .enumerate()
            .filter_map(|(i, (m, v))| {
                let (m, v) = (m.as_ref()?, v.as_ref()?);
                let name = store.iter().nth(i).map(|(_, e)| e.name.clone())?;
                Some((name, m.clone(), v.clone()))
            })
            .collect();
        AdamState { step: self.step, moments }
    }

    pub fn import<T: Float>(cfg: AdamConfig, store: &ParamStore<T>, state: &AdamState) -> Result<Self, StoreError> {
        let mut opt = Self::new(cfg);
        opt.step = state.step;
        opt.m.resize(store.len(), None);
        opt.v.resize(store.len(), None);
        for (name, m, v) in &state.moments {
            let id = store.id(name).ok_or_else(|| StoreError::Missing(name.clone()))?;
            let expected = store.get(id).shape().to_vec();
            if m.len() != store.get(id).len() || v.len() != m.len() {
                return Err(StoreError::Shape { name: name.clone(), expected, found: vec![m.len()] });
            }
            opt.m[id.index()] = Some(m.clone());
            opt.v[id.index()] = Some(v.clone());
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ops, Ctx, EntryKind};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", EntryKind::Trainable, Array::from_vec(vec![2], vec![1.0, -2.0])).unwrap();
        let grads = {
            let ctx = Ctx::training(&store);
            ops::sum_all(&ops::sqr(&ctx.param(id))).backward()
        };
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &grads, 0.1);
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 1.9).abs() < 1e-6, "{w:?}");
    }

    #[test]
    fn state_round_trip_continues_identically() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", EntryKind::Trainable, Array::from_vec(vec![3], vec![1.0, 2.0, 3.0])).unwrap();
        let run = |store: &mut ParamStore<f64>, adam: &mut Adam| {
            let grads = {
                let ctx = Ctx::training(store);
                ops::sum_all(&ops::sqr(&ctx.param(id))).backward()
            };
            adam.step(store, &grads, 0.01);
        };
        let mut a = Adam::new(AdamConfig::default());
        run(&mut store, &mut a);
        let mut store2 = store.clone();
        let mut b = Adam::import(AdamConfig::default(), &store2, &a.export(&store)).unwrap();
        run(&mut store, &mut a);
        run(&mut store2, &mut b);
        assert_eq!(store.get(id), store2.get(id));
    }
}
