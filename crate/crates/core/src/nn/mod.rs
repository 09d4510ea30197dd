//! Layers built on the tape.
//!
//! Every block is generic over its parameter handle. Models store blocks
//! with [`ParamId`]s pointing into a [`ParamStore`]; before a forward pass the
//! store is bound to a tape and each block is rebound to the resulting
//! [`Var`]s. Tests can skip the store and build `Block<Var>` directly from
//! hand-made leaves.

mod attention;
mod ecnet;
mod ffn;
mod fusion;
mod mfnet;
mod positional;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use attention::Mhsa;
pub use ecnet::{DsConv, EcBlock};
pub use ffn::{Activation, Ffn};
pub use fusion::{Fusion, FusionFlags};
pub use mfnet::{ConvLayer, DenseBlock, MultiscaleStem, STEM_KERNELS};
pub use positional::{add_positional, sinusoidal_table, PositionalConfig, PositionalKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered, named collection of learnable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.entries.push((name.into(), tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every parameter as a gradient-tracking leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.entries
                .iter()
                .map(|(_, t)| tape.param(t.clone()))
                .collect(),
        )
    }

    /// Replaces values from `other`, which must have identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Usage("parameter stores differ in length".into()));
        }
        for ((n, t), (m, u)) in self.entries.iter_mut().zip(&other.entries) {
            if n != m || t.shape() != u.shape() {
                return Err(Error::dim("copy_values_from", t.shape(), u.shape()));
            }
            t.data_mut().copy_from_slice(u.data());
        }
        Ok(())
    }
}

/// Parameter leaves of one tape, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps tape handles given in store order, e.g. leaves created by hand.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Maps a block's parameter handles to another handle type.
pub trait Rebind {
    type Output;
    fn rebind(&self, bound: &Bound) -> Self::Output;
}

/// Glorot-uniform tensor: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches generated length")
}

/// Dropout source for one forward pass. `None` rng means inference.
pub struct DropoutCtx<'a> {
    p: f64,
    rng: Option<&'a mut dyn RngCore>,
}

impl<'a> DropoutCtx<'a> {
    pub fn eval() -> Self {
        DropoutCtx { p: 0.0, rng: None }
    }

    pub fn training(p: f64, rng: &'a mut dyn RngCore) -> Self {
        DropoutCtx { p, rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => tape.dropout(x, self.p, true, rng),
            None => Ok(x),
        }
    }
}
