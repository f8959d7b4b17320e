use crate::error::{Error, Result};
use crate::tensor::{RngStream, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.position(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, value));
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.entries[i].1)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.position(name)?;
        Some(&mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Total number of scalar values over all parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Replaces every tensor with the equally named one from `other`.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<()> {
        if other.len() != self.entries.len() {
            return Err(Error::InvalidSpec(format!(
                "expected {} parameters, got {}",
                self.entries.len(),
                other.len()
            )));
        }
        for (name, t) in other {
            let slot = self
                .by_name_mut(name)
                .ok_or_else(|| Error::InvalidSpec(format!("unknown parameter {name}")))?;
            if slot.shape() != t.shape() {
                return Err(Error::shape(
                    "load_params",
                    format!("{name}: {:?} vs {:?}", slot.shape(), t.shape()),
                ));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (n, t) in &mut self.entries {
            if n.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// A tape with every parameter of a store bound as a differentiable leaf.
pub struct Graph {
    pub tape: Tape,
    params: Vec<Var>,
}

impl Graph {
    pub fn new(store: &ParamStore) -> Self {
        let mut tape = Tape::new();
        let params = store
            .entries
            .iter()
            .map(|(_, t)| tape.param(t.clone()))
            .collect();
        Graph { tape, params }
    }

    /// Binds parameters as constants: forward-only evaluation.
    pub fn frozen(store: &ParamStore) -> Self {
        let mut tape = Tape::new();
        let params = store
            .entries
            .iter()
            .map(|(_, t)| tape.constant(t.clone()))
            .collect();
        Graph { tape, params }
    }

    /// Wraps an existing tape whose leaves `params` follow store order.
    pub fn from_parts(tape: Tape, params: Vec<Var>) -> Self {
        Graph { tape, params }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// Runs backward from `loss` and returns one gradient per parameter, in
    /// store order (zeros for parameters the loss does not touch).
    pub fn backward(&mut self, loss: Var) -> Result<Vec<Tensor>> {
        self.tape.backward(loss)?;
        Ok(self
            .params
            .iter()
            .map(|&v| {
                self.tape
                    .grad(v)
                    .unwrap_or_else(|| Tensor::zeros(self.tape.shape(v).to_vec()))
            })
            .collect())
    }
}

/// Glorot-uniform draw: U(-b, b) with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut RngStream,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}
