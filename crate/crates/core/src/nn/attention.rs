use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, Bound, ParamId, ParamStore, Rebind};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Multi-head self-attention with bias-free Q/K/V/output projections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mhsa<P> {
    pub wq: P,
    pub wk: P,
    pub wv: P,
    pub wo: P,
    pub heads: usize,
}

impl Mhsa<ParamId> {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} not divisible by heads {heads}"
            )));
        }
        let mut w = |name: &str| {
            let t = glorot_uniform(rng, &[d_model, d_model], d_model, d_model);
            store.add(format!("{prefix}.{name}"), t)
        };
        Ok(Mhsa {
            wq: w("wq"),
            wk: w("wk"),
            wv: w("wv"),
            wo: w("wo"),
            heads,
        })
    }
}

impl Rebind for Mhsa<ParamId> {
    type Output = Mhsa<Var>;
    fn rebind(&self, b: &Bound) -> Mhsa<Var> {
        Mhsa {
            wq: b.var(self.wq),
            wk: b.var(self.wk),
            wv: b.var(self.wv),
            wo: b.var(self.wo),
            heads: self.heads,
        }
    }
}

impl Mhsa<Var> {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.forward_with_attention(tape, x).map(|(y, _)| y)
    }

    /// Forward pass that also returns each head's `[T×T]` attention matrix.
    pub fn forward_with_attention(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<Var>)> {
        let d_model = tape.shape(self.wq)[0];
        if tape.shape(x).len() != 2 || tape.shape(x)[1] != d_model {
            return Err(Error::dim("mhsa", tape.shape(x), tape.shape(self.wq)));
        }
        if self.heads == 0 || d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} not divisible by heads {}",
                self.heads
            )));
        }
        let dk = d_model / self.heads;
        let q = tape.matmul(x, self.wq)?;
        let k = tape.matmul(x, self.wk)?;
        let v = tape.matmul(x, self.wv)?;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dk, dk)?;
            let kh = tape.slice_cols(k, h * dk, dk)?;
            let vh = tape.slice_cols(v, h * dk, dk)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let a = tape.softmax_lastdim(scores)?;
            outs.push(tape.matmul(a, vh)?);
            attn.push(a);
        }
        let heads = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat(&outs, 1)?
        };
        Ok((tape.matmul(heads, self.wo)?, attn))
    }
}
