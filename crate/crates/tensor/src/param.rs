use std::collections::HashMap;

use rand::Rng;

use crate::{Real, Result, Shape, Tensor, TensorError};

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub id: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub(crate) velocity: Tensor,
}

impl Parameter {
    fn new(id: String, value: Tensor) -> Self {
        let shape = value.shape();
        Parameter {
            id,
            value,
            grad: Tensor::zeros(shape),
            velocity: Tensor::zeros(shape),
        }
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, id: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(TensorError::DuplicateParameter(id));
        }
        let pid = ParamId(self.params.len());
        self.index.insert(id.clone(), pid.0);
        self.params.push(Parameter::new(id, value));
        Ok(pid)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Overwrites values of parameters that exist in both sets with equal
    /// shapes. Returns the number of parameters copied.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(q) = other.find(&p.id).map(|i| other.get(i)) {
                if q.value.shape() == p.value.shape() {
                    p.value = q.value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Replaces the value of `name`; the shape must match.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(TensorError::shape(
                "set_value",
                format!("`{name}` is {}, got {}", p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }
}

/// Glorot/Xavier uniform initialization: `U(−a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`, where the fans include the kernel
/// area. `transposed` swaps the channel axes when computing fans.
pub fn glorot_uniform(shape: Shape, transposed: bool, rng: &mut impl Rng) -> Tensor {
    let area = shape.h * shape.w;
    let (outs, ins) = if transposed {
        (shape.c, shape.n)
    } else {
        (shape.n, shape.c)
    };
    let fan_in = (ins * area).max(1) as f64;
    let fan_out = (outs * area).max(1) as f64;
    let limit = (6.0 / (fan_in + fan_out)).sqrt();
    let data = (0..shape.numel())
        .map(|_| rng.gen_range(-limit..limit) as Real)
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// He/Kaiming uniform initialization for layers followed by a ReLU:
/// `U(−a, a)` with `a = sqrt(6 / fan_in)`.
pub fn he_uniform(shape: Shape, transposed: bool, rng: &mut impl Rng) -> Tensor {
    let ins = if transposed { shape.n } else { shape.c };
    let fan_in = (ins * shape.h * shape.w).max(1) as f64;
    let limit = (6.0 / fan_in).sqrt();
    let data = (0..shape.numel())
        .map(|_| rng.gen_range(-limit..limit) as Real)
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
