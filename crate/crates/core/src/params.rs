//! Named parameter storage and its binding into a [`Graph`].

use indexmap::IndexMap;

use crate::autodiff::{Graph, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanInUniform {
        fan_in: usize,
    },
    Normal {
        std: f64,
    },
    Zeros,
    Ones,
}

/// A named tensor slot derived from a model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Buffers (batch-norm running statistics) are stored and checkpointed
    /// but never receive gradients.
    pub trainable: bool,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> Self {
        Self {
            name: name.into(),
            shape,
            init: Init::FanInUniform { fan_in },
            trainable: true,
        }
    }

    pub fn constant(name: impl Into<String>, shape: Vec<usize>, init: Init) -> Self {
        Self {
            name: name.into(),
            shape,
            init,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: Vec<usize>, init: Init) -> Self {
        Self {
            name: name.into(),
            shape,
            init,
            trainable: false,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn materialize<T: Scalar>(&self, rng: &mut Rng) -> Tensor<T> {
        match self.init {
            Init::FanInUniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(self.shape.clone(), |_| {
                    T::of(rng.uniform_range(-bound, bound))
                })
            }
            Init::Normal { std } => {
                Tensor::from_fn(self.shape.clone(), |_| T::of(std * rng.normal()))
            }
            Init::Zeros => Tensor::zeros(self.shape.clone()),
            Init::Ones => Tensor::ones(self.shape.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar> {
    tensors: IndexMap<String, Tensor<T>>,
    trainable: Vec<bool>,
}

impl<T: Scalar> ParamStore<T> {
    /// Materializes every spec in order from one seeded stream.
    pub fn from_specs(specs: &[ParamSpec], rng: &mut Rng) -> Self {
        let mut tensors = IndexMap::with_capacity(specs.len());
        let mut trainable = Vec::with_capacity(specs.len());
        for s in specs {
            tensors.insert(s.name.clone(), s.materialize(rng));
            trainable.push(s.trainable);
        }
        Self { tensors, trainable }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// `(name, tensor, trainable)` triples in definition order.
    pub fn iter_with_flags(&self) -> impl Iterator<Item = (&str, &Tensor<T>, bool)> {
        self.tensors
            .iter()
            .zip(&self.trainable)
            .map(|((k, v), &t)| (k.as_str(), v, t))
    }

    pub fn trainable_count(&self) -> usize {
        self.iter_with_flags()
            .filter(|(_, _, t)| *t)
            .map(|(_, v, _)| v.len())
            .sum()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>, bool)> {
        self.tensors
            .iter_mut()
            .zip(&self.trainable)
            .map(|((k, v), &t)| (k.as_str(), v, t))
    }

    /// Adds every trainable tensor to `g`, as differentiable leaves when
    /// `differentiable`, otherwise as constants.
    pub fn bind(&self, g: &mut Graph<T>, differentiable: bool) -> Bindings {
        let mut vars = IndexMap::with_capacity(self.tensors.len());
        for (name, t, trainable) in self.iter_with_flags() {
            if !trainable {
                continue;
            }
            let v = if differentiable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            };
            vars.insert(name.to_string(), v);
        }
        Bindings { vars }
    }
}

/// Graph handles for the trainable tensors of a [`ParamStore`].
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound; specs and forward disagree"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }
}
