//! Named parameter storage, deterministic initialization, and the
//! convolution layer that every network component is built from.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{config_err, Result};
use crate::tensor::{ConvSpec, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, uniquely named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Element = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(config_err!("duplicate parameter name {name:?}"));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Total scalar count.
    pub fn numel(&self) -> u64 {
        self.entries.iter().map(|(_, t)| t.numel() as u64).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Exchanges the values of two same-shaped parameters.
    pub fn swap(&mut self, a: ParamId, b: ParamId) -> Result<()> {
        if self.get(a).shape() != self.get(b).shape() {
            return Err(config_err!(
                "cannot swap {:?} and {:?}: shapes differ",
                self.name(a),
                self.name(b)
            ));
        }
        if a != b {
            let (lo, hi) = (a.0.min(b.0), a.0.max(b.0));
            let (left, right) = self.entries.split_at_mut(hi);
            std::mem::swap(&mut left[lo].1, &mut right[0].1);
        }
        Ok(())
    }

    /// Registers every parameter as a gradient-tracking leaf of `graph`.
    pub fn bind<'p>(&'p self, graph: &mut Graph<'p, T>) -> Bound {
        self.bind_with(graph, true)
    }

    /// Like [`bind`](Self::bind), with parameters frozen (inference).
    pub fn bind_frozen<'p>(&'p self, graph: &mut Graph<'p, T>) -> Bound {
        self.bind_with(graph, false)
    }

    fn bind_with<'p>(&'p self, graph: &mut Graph<'p, T>, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(_, t)| graph.leaf_ref(t, requires_grad))
                .collect(),
        }
    }
}

/// Graph handles for a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles for parameters already placed in a graph, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn param_of(&self, var: Var) -> Option<ParamId> {
        self.vars.iter().position(|&v| v == var).map(ParamId)
    }

    /// Per-parameter gradients aligned with the store order.
    pub fn gradients<T: Element>(&self, graph: &Graph<'_, T>, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.wrt(graph, v)).collect()
    }
}

/// Scale of the zero-mean Gaussian used for a layer's weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gain {
    /// std = sqrt(2 / fan_in), for layers followed by ReLU.
    Relu,
    /// std = sqrt(1 / fan_in), for linear outputs.
    Linear,
}

/// Seeded parameter factory. Parameters are drawn in creation order, so a
/// fixed seed and architecture give bit-identical stores.
pub struct Initializer<'s, T: Element> {
    pub store: &'s mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'s, T: Element> Initializer<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn gaussian(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let normal = Normal::new(0.0, std).map_err(|e| config_err!("bad init std {std}: {e}"))?;
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f(normal.sample(rng)));
        self.store.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.add(name, Tensor::zeros(shape))
    }

    pub fn conv(&mut self, name: &str, spec: ConvSpec, gain: Gain) -> Result<Conv> {
        spec.validate()?;
        let fan_in = (spec.in_channels * spec.kernel.0 * spec.kernel.1) as f64;
        let std = match gain {
            Gain::Relu => (2.0 / fan_in).sqrt(),
            Gain::Linear => (1.0 / fan_in).sqrt(),
        };
        let weight = self.gaussian(&format!("{name}.weight"), &spec.weight_shape(), std)?;
        let bias = if spec.has_bias {
            Some(self.zeros(&format!("{name}.bias"), &[spec.out_channels])?)
        } else {
            None
        };
        Ok(Conv { spec, weight, bias })
    }
}

/// One convolution layer bound to parameters in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.weight), self.bias.map(|b| p.var(b)), &self.spec)
    }

    /// Convolution followed by ReLU.
    pub fn forward_relu<T: Element>(&self, g: &mut Graph<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(g, p, x)?;
        g.relu(y)
    }

    pub fn param_count(&self) -> u64 {
        self.spec.param_count()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        std::iter::once(self.weight).chain(self.bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(&[1])).unwrap();
        assert!(s.add("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn initialization_is_deterministic() {
        let build = |seed| {
            let mut s = ParamStore::<f32>::new();
            let mut init = Initializer::new(&mut s, seed);
            init.conv("c1", ConvSpec::same(3, 8, 3), Gain::Relu).unwrap();
            init.conv("c2", ConvSpec::same(8, 1, 1), Gain::Linear).unwrap();
            s
        };
        assert_eq!(build(3), build(3));
        assert_ne!(build(3), build(4));
        let s = build(3);
        assert_eq!(s.numel(), 3 * 8 * 9 + 8 + 8 + 1);
        assert!(s.by_name("c1.bias").unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_std_tracks_fan_in() {
        let mut s = ParamStore::<f64>::new();
        let mut init = Initializer::new(&mut s, 1);
        let c = init.conv("big", ConvSpec::same(64, 64, 3), Gain::Relu).unwrap();
        let w = s.get(c.weight);
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.numel() as f64;
        let expected = 2.0 / (64.0 * 9.0);
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn swap_exchanges_values() {
        let mut s = ParamStore::<f32>::new();
        let a = s.add("a", Tensor::full(&[2], 1.0)).unwrap();
        let b = s.add("b", Tensor::full(&[2], 2.0)).unwrap();
        let c = s.add("c", Tensor::full(&[3], 2.0)).unwrap();
        s.swap(a, b).unwrap();
        assert_eq!(s.get(a).data(), &[2.0, 2.0]);
        assert_eq!(s.name(a), "a");
        assert!(s.swap(a, c).is_err());
    }
}
