use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    add_positional, glorot_uniform, Bound, Mhsa, ParamId, ParamStore, PositionalConfig, Rebind,
};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Which optional fusion stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionFlags {
    pub positional: Option<PositionalConfig>,
    pub attention: bool,
}

/// Feature-concatenates path outputs, projects them back to `D` columns,
/// optionally adds positions and self-attends, then mean-pools over time.
///
/// With `n` paths the projection is `[n·D × D]`; the attention block is
/// absent when the variant drops fusion attention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fusion<P> {
    pub wf: P,
    pub attention: Option<Mhsa<P>>,
}

impl Fusion<ParamId> {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        paths: usize,
        d_model: usize,
        heads: usize,
        with_attention: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = paths * d_model;
        let wf = store.add(
            format!("{prefix}.wf"),
            glorot_uniform(rng, &[fan_in, d_model], fan_in, d_model),
        );
        let attention = if with_attention {
            Some(Mhsa::init(
                store,
                &format!("{prefix}.attn"),
                d_model,
                heads,
                rng,
            )?)
        } else {
            None
        };
        Ok(Fusion { wf, attention })
    }
}

impl Rebind for Fusion<ParamId> {
    type Output = Fusion<Var>;
    fn rebind(&self, b: &Bound) -> Fusion<Var> {
        Fusion {
            wf: b.var(self.wf),
            attention: self.attention.as_ref().map(|a| a.rebind(b)),
        }
    }
}

impl Fusion<Var> {
    /// Fuses `[T×D]` path outputs into a `[D]` vector.
    pub fn forward(&self, tape: &mut Tape, paths: &[Var], flags: &FusionFlags) -> Result<Var> {
        let first = *paths.first().ok_or(Error::EmptyInput { op: "fuse" })?;
        for &p in &paths[1..] {
            if tape.shape(p) != tape.shape(first) {
                return Err(Error::dim("fuse", tape.shape(first), tape.shape(p)));
            }
        }
        let cat = if paths.len() == 1 {
            first
        } else {
            tape.concat(paths, 1)?
        };
        let mut h = tape.matmul(cat, self.wf)?;
        if let Some(cfg) = &flags.positional {
            h = add_positional(tape, h, cfg)?;
        }
        if flags.attention {
            let attn = self
                .attention
                .as_ref()
                .ok_or_else(|| Error::Config("fusion attention requested but not built".into()))?;
            h = attn.forward(tape, h)?;
        }
        tape.mean_rows(h)
    }
}
