use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Param<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
}

/// Named trainable parameters with gradient accumulators, plus named
/// non-trainable buffers (batch-norm running statistics, optimizer state).
#[derive(Debug, Clone)]
pub struct ParamStore<T = f64> {
    params: Vec<Param<T>>,
    buffers: Vec<(String, Tensor<T>)>,
    names: HashMap<String, Slot>,
    seed: u64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Param(usize),
    Buffer(usize),
}

impl<T: Real> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn claim(&mut self, name: &str, slot: Slot) -> Result<()> {
        if self.names.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        self.names.insert(name.to_string(), slot);
        Ok(())
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        let id = self.params.len();
        self.claim(name, Slot::Param(id))?;
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(ParamId(id))
    }

    /// Adds a parameter drawn from `U(-√(1/fan_in), √(1/fan_in))` using the store's seeded stream.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::of(self.rng.random_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<BufferId> {
        let id = self.buffers.len();
        self.claim(name, Slot::Buffer(id))?;
        self.buffers.push((name.to_string(), value));
        Ok(BufferId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        match self.names.get(name) {
            Some(Slot::Param(i)) => Some(ParamId(*i)),
            _ => None,
        }
    }

    pub fn buffer_id(&self, name: &str) -> Option<BufferId> {
        match self.names.get(name) {
            Some(Slot::Buffer(i)) => Some(BufferId(*i)),
            _ => None,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor<T>) {
        self.params[id.0].grad.add_assign(g);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].1
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0].1
    }

    pub fn buffer_name(&self, id: BufferId) -> &str {
        &self.buffers[id.0].0
    }

    pub fn buffer_ids(&self) -> impl Iterator<Item = BufferId> {
        (0..self.buffers.len()).map(BufferId)
    }

    /// Exact equality of every value, gradient and buffer.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let bits = |t: &Tensor<T>| t.data().iter().map(|v| v.f64().to_bits()).collect::<Vec<_>>();
        self.params.len() == other.params.len()
            && self.buffers.len() == other.buffers.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && bits(&a.value) == bits(&b.value)
                    && bits(&a.grad) == bits(&b.grad)
            })
            && self
                .buffers
                .iter()
                .zip(&other.buffers)
                .all(|(a, b)| a.0 == b.0 && bits(&a.1) == bits(&b.1))
    }
}

/// Plain stochastic gradient descent: `p ← p − lr·g`, then gradients are zeroed.
pub fn sgd_step<T: Real>(store: &mut ParamStore<T>, lr: f64) -> Result<()> {
    Sgd::new(lr, 0.0)?.step(store)
}

/// SGD with optional heavy-ball momentum (`v ← μv + g`, `p ← p − lr·v`).
///
/// Velocities live in the store as `velocity/<param>` buffers so they travel
/// with checkpoints.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self { lr, momentum })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let lr = T::of(self.lr);
        let mu = T::of(self.momentum);
        for i in 0..store.params.len() {
            if self.momentum > 0.0 {
                let name = format!("velocity/{}", store.params[i].name);
                let vid = match store.buffer_id(&name) {
                    Some(v) => v,
                    None => store.add_buffer(&name, Tensor::zeros(store.params[i].value.shape()))?,
                };
                let grad = store.params[i].grad.clone();
                let vel = store.buffer_mut(vid);
                for (v, &g) in vel.data_mut().iter_mut().zip(grad.data()) {
                    *v = mu * *v + g;
                }
                let vel = vel.clone();
                let p = &mut store.params[i];
                for (w, &v) in p.value.data_mut().iter_mut().zip(vel.data()) {
                    *w = *w - lr * v;
                }
            } else {
                let p = &mut store.params[i];
                for (w, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                    *w = *w - lr * g;
                }
            }
        }
        store.zero_grad();
        Ok(())
    }
}
