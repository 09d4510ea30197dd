use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, Bound, ParamId, ParamStore, Rebind};
use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Position-wise feed-forward: `act(x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ffn<P> {
    pub w1: P,
    pub b1: P,
    pub w2: P,
    pub b2: P,
    pub activation: Activation,
}

impl Ffn<ParamId> {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        Ffn {
            w1: store.add(
                format!("{prefix}.w1"),
                glorot_uniform(rng, &[d_model, d_ff], d_model, d_ff),
            ),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[d_ff])),
            w2: store.add(
                format!("{prefix}.w2"),
                glorot_uniform(rng, &[d_ff, d_model], d_ff, d_model),
            ),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[d_model])),
            activation: Activation::Relu,
        }
    }
}

impl Rebind for Ffn<ParamId> {
    type Output = Ffn<Var>;
    fn rebind(&self, b: &Bound) -> Ffn<Var> {
        Ffn {
            w1: b.var(self.w1),
            b1: b.var(self.b1),
            w2: b.var(self.w2),
            b2: b.var(self.b2),
            activation: self.activation,
        }
    }
}

impl Ffn<Var> {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.linear(x, self.w1, Some(self.b1))?;
        let h = self.activation.apply(tape, h);
        tape.linear(h, self.w2, Some(self.b2))
    }
}
