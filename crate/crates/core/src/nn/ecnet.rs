use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    add_positional, glorot_uniform, Bound, DropoutCtx, Ffn, Mhsa, ParamId, ParamStore,
    PositionalConfig, Rebind,
};
use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Depthwise `[C×K]` kernels, pointwise `[C×C]` mixing and a bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DsConv<P> {
    pub depth: P,
    pub point: P,
    pub bias: P,
}

impl DsConv<ParamId> {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        DsConv {
            depth: store.add(
                format!("{prefix}.depth"),
                glorot_uniform(rng, &[channels, kernel], kernel, kernel),
            ),
            point: store.add(
                format!("{prefix}.point"),
                glorot_uniform(rng, &[channels, channels], channels, channels),
            ),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[channels])),
        }
    }
}

impl Rebind for DsConv<ParamId> {
    type Output = DsConv<Var>;
    fn rebind(&self, b: &Bound) -> DsConv<Var> {
        DsConv {
            depth: b.var(self.depth),
            point: b.var(self.point),
            bias: b.var(self.bias),
        }
    }
}

impl DsConv<Var> {
    /// Operates on `[C×T]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.depthwise_separable_conv1d(x, self.depth, self.point, Some(self.bias))
    }
}

/// Attention → FFN → depthwise-separable conv → FFN, each stage wrapped in
/// a dropout-then-residual connection. Shape-preserving on `[T×D]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EcBlock<P> {
    pub attention: Mhsa<P>,
    pub ffn1: Ffn<P>,
    pub conv: DsConv<P>,
    pub ffn2: Ffn<P>,
}

impl EcBlock<ParamId> {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        conv_kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EcBlock {
            attention: Mhsa::init(store, &format!("{prefix}.attn"), d_model, heads, rng)?,
            ffn1: Ffn::init(store, &format!("{prefix}.ffn1"), d_model, d_ff, rng),
            conv: DsConv::init(store, &format!("{prefix}.conv"), d_model, conv_kernel, rng),
            ffn2: Ffn::init(store, &format!("{prefix}.ffn2"), d_model, d_ff, rng),
        })
    }
}

impl Rebind for EcBlock<ParamId> {
    type Output = EcBlock<Var>;
    fn rebind(&self, b: &Bound) -> EcBlock<Var> {
        EcBlock {
            attention: self.attention.rebind(b),
            ffn1: self.ffn1.rebind(b),
            conv: self.conv.rebind(b),
            ffn2: self.ffn2.rebind(b),
        }
    }
}

impl EcBlock<Var> {
    /// `positional` is applied to the attention input only; pass `None` for
    /// every block but the first of a stack.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        positional: Option<&PositionalConfig>,
        dropout: &mut DropoutCtx<'_>,
    ) -> Result<Var> {
        let attn_in = match positional {
            Some(cfg) => add_positional(tape, x, cfg)?,
            None => x,
        };
        let a = self.attention.forward(tape, attn_in)?;
        let a = dropout.apply(tape, a)?;
        let y1 = tape.add(x, a)?;

        let f = self.ffn1.forward(tape, y1)?;
        let f = dropout.apply(tape, f)?;
        let y2 = tape.add(y1, f)?;

        let channels = tape.transpose(y2)?;
        let c = self.conv.forward(tape, channels)?;
        let c = tape.transpose(c)?;
        let c = dropout.apply(tape, c)?;
        let y3 = tape.add(y2, c)?;

        let f = self.ffn2.forward(tape, y3)?;
        let f = dropout.apply(tape, f)?;
        tape.add(y3, f)
    }
}
