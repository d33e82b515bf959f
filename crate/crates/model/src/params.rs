//! Named, ordered parameter storage shared by the generator and the target
//! CNN.
//!
//! Parameters live outside any tape; each forward pass binds them as leaves
//! and reads gradients back through the returned [`Bound`] handles. Iteration
//! follows insertion order everywhere, so optimizer reductions and checkpoint
//! layout are deterministic.

use hypergen_tensor::{Real, Tape, Tensor, Tid};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::ModelError;

/// Handle to one named parameter; stable for the life of the set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered parameter registry.
pub struct ParamSet<S: Real> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
}

impl<S: Real> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Registers a parameter; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {:?}",
            name
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<S>> {
        self.values.iter_mut()
    }

    /// Overwrites a parameter by name, keeping its shape. Used by checkpoint
    /// restore.
    pub fn set(&mut self, name: &str, value: Tensor<S>) -> Result<(), ModelError> {
        let id = self
            .id(name)
            .ok_or_else(|| ModelError::checkpoint(format!("unknown parameter {:?}", name)))?;
        if self.values[id.0].shape() != value.shape() {
            return Err(ModelError::checkpoint(format!(
                "parameter {:?} has shape {:?}, checkpoint holds {:?}",
                name,
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Registers every parameter on a tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        self.bind_with(tape, true)
    }

    /// Registers every parameter as a constant: same handles, no gradients.
    /// Evaluation passes use this to keep backward sweeps off the books.
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> Bound {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape<S>, requires_grad: bool) -> Bound {
        Bound {
            tids: self
                .values
                .iter()
                .map(|v| tape.leaf(v.clone(), requires_grad))
                .collect(),
        }
    }
}

/// Tape ids of one binding of a [`ParamSet`], parallel to insertion order.
pub struct Bound {
    tids: Vec<Tid>,
}

impl Bound {
    pub fn tid(&self, id: ParamId) -> Tid {
        self.tids[id.0]
    }

    pub fn tids(&self) -> &[Tid] {
        &self.tids
    }
}

/// Mutable RNG-driven initializers. Sampling always happens in f64 so f32 and
/// f64 instantiations of the same model start from the same point (up to
/// rounding).
pub fn normal_init<S: Real, R: Rng>(rng: &mut R, shape: Vec<usize>, std: f64) -> Tensor<S> {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            S::from_f64(z * std)
        })
        .collect();
    Tensor::new(shape, data).expect("init shape")
}

/// He initialization for weights feeding ReLU stacks: std = sqrt(2 / fan_in).
pub fn he_init<S: Real, R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor<S> {
    normal_init(rng, shape, (2.0 / fan_in as f64).sqrt())
}
