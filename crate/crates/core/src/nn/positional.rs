use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalKind {
    #[default]
    Sinusoidal,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalConfig {
    pub kind: PositionalKind,
    pub max_len: usize,
}

/// `[T×D]` sinusoidal table: even column `2i` holds `sin(t / 10000^(2i/D))`,
/// odd column `2i+1` holds the matching cosine.
pub fn sinusoidal_table(t_len: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; t_len * d_model];
    for t in 0..t_len {
        for col in 0..d_model {
            let pair = (col / 2 * 2) as f64;
            let angle = t as f64 / 10000f64.powf(pair / d_model as f64);
            data[t * d_model + col] = if col % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            };
        }
    }
    Tensor::new(vec![t_len, d_model], data).expect("table shape")
}

pub fn add_positional(tape: &mut Tape, x: Var, cfg: &PositionalConfig) -> Result<Var> {
    let &[t_len, d_model] = tape.shape(x) else {
        return Err(Error::dim(
            "add_positional",
            tape.shape(x),
            &[cfg.max_len, 0],
        ));
    };
    if t_len > cfg.max_len {
        return Err(Error::Config(format!(
            "sequence length {t_len} exceeds positional max_len {}",
            cfg.max_len
        )));
    }
    match cfg.kind {
        PositionalKind::None => Ok(x),
        PositionalKind::Sinusoidal => {
            let pe = tape.constant(sinusoidal_table(t_len, d_model));
            tape.add(x, pe)
        }
    }
}
