//! The assembled dual-path network.
//!
//! ```text
//!   window ─┬─ stem ─ dense ─ 1×1 bridge ─ᵀ─ O¹ [T×D] ─┐
//!           │                                           ├─ fuse ─ head ─ ŷ
//!           └─ embed ─ EC block × n ──────── O² [T×D] ─┘
//! ```
//!
//! Ablation variants drop a path, drop fusion stages, or chain the two paths
//! in series.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    glorot_uniform, Bound, ConvLayer, DenseBlock, DropoutCtx, EcBlock, Fusion, FusionFlags,
    MultiscaleStem, ParamId, ParamStore, PositionalConfig, PositionalKind, Rebind,
};
use crate::seed;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Channels per multiscale stem branch.
    pub stem_branch_channels: usize,
    /// Channels after the stem's 1×1 compression.
    pub stem_out_channels: usize,
    pub dense_layers: usize,
    pub growth: usize,
    pub ec_blocks: usize,
    /// Depthwise kernel width inside encoder blocks.
    pub ec_kernel: usize,
    pub dropout_p: f64,
    pub window: usize,
    pub positional: PositionalKind,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            heads: 4,
            d_ff: 64,
            stem_branch_channels: 8,
            stem_out_channels: 16,
            dense_layers: 4,
            growth: 8,
            ec_blocks: 2,
            ec_kernel: 3,
            dropout_p: 0.3,
            window: 16,
            positional: PositionalKind::Sinusoidal,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("stem_branch_channels", self.stem_branch_channels),
            ("stem_out_channels", self.stem_out_channels),
            ("dense_layers", self.dense_layers),
            ("growth", self.growth),
            ("ec_blocks", self.ec_blocks),
            ("window", self.window),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model % heads == 0 violated ({} % {})",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "0 <= dropout_p < 1 violated ({})",
                self.dropout_p
            )));
        }
        if self.ec_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "ec_kernel {} must be odd",
                self.ec_kernel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Full,
    NoPe,
    NoPeNoAttn,
    NoMfnet,
    NoEcnet,
    Series,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::Full,
        ModelVariant::NoPe,
        ModelVariant::NoPeNoAttn,
        ModelVariant::NoMfnet,
        ModelVariant::NoEcnet,
        ModelVariant::Series,
    ];

    /// Ablation-table row order, full model last.
    pub const TABLE_ORDER: [ModelVariant; 6] = [
        ModelVariant::NoPe,
        ModelVariant::NoPeNoAttn,
        ModelVariant::NoMfnet,
        ModelVariant::NoEcnet,
        ModelVariant::Series,
        ModelVariant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::NoPe => "no_pe",
            ModelVariant::NoPeNoAttn => "no_pe_no_attn",
            ModelVariant::NoMfnet => "no_mfnet",
            ModelVariant::NoEcnet => "no_ecnet",
            ModelVariant::Series => "series",
        }
    }

    fn uses_mfnet(self) -> bool {
        self != ModelVariant::NoMfnet
    }

    fn uses_ecnet(self) -> bool {
        self != ModelVariant::NoEcnet
    }

    fn fusion_attention(self) -> bool {
        self != ModelVariant::NoPeNoAttn
    }

    fn drops_positional(self) -> bool {
        matches!(self, ModelVariant::NoPe | ModelVariant::NoPeNoAttn)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Lookup {
                id: s.to_string(),
                available: ModelVariant::ALL.iter().map(|v| v.to_string()).collect(),
            })
    }
}

/// Multiscale path: stem, dense block and the 1×1 bridge to `D` channels.
#[derive(Debug, Clone)]
struct MfNet<P> {
    stem: MultiscaleStem<P>,
    dense: DenseBlock<P>,
    bridge: ConvLayer<P>,
}

impl Rebind for MfNet<ParamId> {
    type Output = MfNet<Var>;
    fn rebind(&self, b: &Bound) -> MfNet<Var> {
        MfNet {
            stem: self.stem.rebind(b),
            dense: self.dense.rebind(b),
            bridge: self.bridge.rebind(b),
        }
    }
}

impl MfNet<Var> {
    /// `[1×T]` to `[T×D]`.
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = self.stem.forward(tape, x)?;
        let d = self.dense.forward(tape, s)?;
        let b = self.bridge.forward(tape, d)?;
        tape.transpose(b)
    }
}

/// Encoder path. `embed` lifts the scalar series to `D` features and is
/// absent in the series variant, whose encoder consumes MF-Net output.
#[derive(Debug, Clone)]
struct EcNet<P> {
    embed: Option<(P, P)>,
    blocks: Vec<EcBlock<P>>,
}

impl Rebind for EcNet<ParamId> {
    type Output = EcNet<Var>;
    fn rebind(&self, b: &Bound) -> EcNet<Var> {
        EcNet {
            embed: self.embed.map(|(w, c)| (b.var(w), b.var(c))),
            blocks: self.blocks.iter().map(|blk| blk.rebind(b)).collect(),
        }
    }
}

impl EcNet<Var> {
    fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        positional: &PositionalConfig,
        dropout: &mut DropoutCtx<'_>,
    ) -> Result<Var> {
        let mut h = match self.embed {
            Some((w, b)) => tape.linear(x, w, Some(b))?,
            None => x,
        };
        for (i, block) in self.blocks.iter().enumerate() {
            let pe = (i == 0).then_some(positional);
            h = block.forward(tape, h, pe, dropout)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
struct Layout {
    mf: Option<MfNet<ParamId>>,
    ec: Option<EcNet<ParamId>>,
    fusion: Option<Fusion<ParamId>>,
    head_w: ParamId,
    head_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    variant: ModelVariant,
    params: ParamStore,
    layout: Layout,
}

impl Model {
    /// Builds and initializes a model. Initialization draws only from the
    /// init stream of `config.seed`.
    pub fn build(config: &ModelConfig, variant: ModelVariant) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = seed::seed_everything(c.seed).init;
        let mut store = ParamStore::new();

        let mf = if variant.uses_mfnet() {
            let stem = MultiscaleStem::init(
                &mut store,
                "mf.stem",
                1,
                c.stem_branch_channels,
                c.stem_out_channels,
                &mut rng,
            );
            let dense = DenseBlock::init(
                &mut store,
                "mf.dense",
                c.stem_out_channels,
                c.dense_layers,
                c.growth,
                &mut rng,
            )?;
            let dense_out = DenseBlock::<ParamId>::output_channels(
                c.stem_out_channels,
                c.dense_layers,
                c.growth,
            );
            let bridge = ConvLayer::init(
                &mut store,
                "mf.bridge",
                (c.d_model, dense_out, 1),
                true,
                &mut rng,
            );
            Some(MfNet {
                stem,
                dense,
                bridge,
            })
        } else {
            None
        };

        let ec = if variant.uses_ecnet() {
            let embed = (variant != ModelVariant::Series).then(|| {
                let w = store.add(
                    "ec.embed.w",
                    glorot_uniform(&mut rng, &[1, c.d_model], 1, c.d_model),
                );
                let b = store.add("ec.embed.b", Tensor::zeros(&[c.d_model]));
                (w, b)
            });
            let blocks = (0..c.ec_blocks)
                .map(|i| {
                    EcBlock::init(
                        &mut store,
                        &format!("ec.block{i}"),
                        c.d_model,
                        c.heads,
                        c.d_ff,
                        c.ec_kernel,
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            // Without normalization layers each residual branch adds variance
            // to the stream; shrinking branch outputs keeps the sum near unit
            // scale at init. Zero weights still give the identity.
            let gain = 1.0 / ((4 * c.ec_blocks.max(1)) as f64).sqrt();
            for b in &blocks {
                for id in [b.attention.wo, b.ffn1.w2, b.ffn2.w2, b.conv.point] {
                    store
                        .get_mut(id)
                        .data_mut()
                        .iter_mut()
                        .for_each(|v| *v *= gain);
                }
            }
            Some(EcNet { embed, blocks })
        } else {
            None
        };

        let fusion = if variant == ModelVariant::Series {
            None
        } else {
            let paths = usize::from(mf.is_some()) + usize::from(ec.is_some());
            Some(Fusion::init(
                &mut store,
                "fusion",
                paths,
                c.d_model,
                c.heads,
                variant.fusion_attention(),
                &mut rng,
            )?)
        };

        let head_w = store.add(
            "head.w",
            glorot_uniform(&mut rng, &[c.d_model, 1], c.d_model, 1),
        );
        let head_b = store.add("head.b", Tensor::zeros(&[1]));

        Ok(Model {
            config: config.clone(),
            variant,
            params: store,
            layout: Layout {
                mf,
                ec,
                fusion,
                head_w,
                head_b,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn window(&self) -> usize {
        self.config.window
    }

    fn positional(&self) -> PositionalConfig {
        let kind = if self.variant.drops_positional() {
            PositionalKind::None
        } else {
            self.config.positional
        };
        PositionalConfig {
            kind,
            max_len: self.config.window,
        }
    }

    /// Records a forward pass for one window and returns a `[1]` prediction.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        window: &[f64],
        dropout: &mut DropoutCtx<'_>,
    ) -> Result<Var> {
        let t = self.config.window;
        if window.len() != t {
            return Err(Error::dim("forward", &[t], &[window.len()]));
        }
        let pos = self.positional();
        let mf = self.layout.mf.as_ref().map(|m| m.rebind(bound));
        let ec = self.layout.ec.as_ref().map(|e| e.rebind(bound));

        let pooled = if self.variant == ModelVariant::Series {
            let (mf, ec) = (mf.expect("series has mf"), ec.expect("series has ec"));
            let x = tape.constant(Tensor::new(vec![1, t], window.to_vec())?);
            let o1 = mf.forward(tape, x)?;
            let o2 = ec.forward(tape, o1, &pos, dropout)?;
            tape.mean_rows(o2)?
        } else {
            let mut paths = Vec::with_capacity(2);
            if let Some(mf) = &mf {
                let x = tape.constant(Tensor::new(vec![1, t], window.to_vec())?);
                paths.push(mf.forward(tape, x)?);
            }
            if let Some(ec) = &ec {
                let x = tape.constant(Tensor::new(vec![t, 1], window.to_vec())?);
                paths.push(ec.forward(tape, x, &pos, dropout)?);
            }
            let fusion = self
                .layout
                .fusion
                .as_ref()
                .expect("parallel variants have fusion")
                .rebind(bound);
            let flags = FusionFlags {
                positional: self.variant.fusion_attention().then_some(pos),
                attention: self.variant.fusion_attention(),
            };
            fusion.forward(tape, &paths, &flags)?
        };
        let pooled = tape.reshape(pooled, &[1, self.config.d_model])?;
        let y = tape.linear(
            pooled,
            bound.var(self.layout.head_w),
            Some(bound.var(self.layout.head_b)),
        )?;
        tape.reshape(y, &[1])
    }

    /// Inference-mode prediction for one window.
    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let y = self.forward(&mut tape, &bound, window, &mut DropoutCtx::eval())?;
        tape.value(y).item()
    }

    /// Inference-mode predictions for many windows, binding parameters once
    /// per chunk.
    pub fn predict_batch(&self, windows: &[Vec<f64>]) -> Result<Vec<f64>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(CHUNK) {
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape);
            for w in chunk {
                let y = self.forward(&mut tape, &bound, w, &mut DropoutCtx::eval())?;
                out.push(tape.value(y).item()?);
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            variant: self.variant,
            seed: self.config.seed,
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(name, t)| {
                    (
                        name.to_string(),
                        StoredTensor {
                            shape: t.shape().to_vec(),
                            data: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.seed != ck.config.seed {
            return Err(Error::Format(
                "checkpoint seed disagrees with config".into(),
            ));
        }
        let mut model = Model::build(&ck.config, ck.variant)?;
        if model.params.len() != ck.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model expects {}",
                ck.params.len(),
                model.params.len()
            )));
        }
        for i in 0..model.params.len() {
            let id = ParamId(i);
            let name = model.params.name(id).to_string();
            let stored = ck
                .params
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing tensor '{name}'")))?;
            let t = model.params.get_mut(id);
            if stored.shape != t.shape() || stored.data.len() != t.len() {
                return Err(Error::Format(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    stored.shape,
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(&stored.data);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Model::from_checkpoint(&ck)
    }
}

pub const CHECKPOINT_FORMAT: &str = "mdfa-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized model: config, variant, seed and named flat parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub variant: ModelVariant,
    pub seed: u64,
    pub config: ModelConfig,
    pub params: BTreeMap<String, StoredTensor>,
}
