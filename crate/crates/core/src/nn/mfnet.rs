use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, Bound, ParamId, ParamStore, Rebind};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Kernel widths of the parallel stem branches.
pub const STEM_KERNELS: [usize; 4] = [1, 3, 5, 7];

/// Same-length 1-D convolution with optional bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvLayer<P> {
    pub kernel: P,
    pub bias: Option<P>,
}

impl ConvLayer<ParamId> {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        (c_out, c_in, k): (usize, usize, usize),
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let kernel = store.add(
            format!("{name}.kernel"),
            glorot_uniform(rng, &[c_out, c_in, k], c_in * k, c_out * k),
        );
        let bias = with_bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        ConvLayer { kernel, bias }
    }
}

impl Rebind for ConvLayer<ParamId> {
    type Output = ConvLayer<Var>;
    fn rebind(&self, b: &Bound) -> ConvLayer<Var> {
        ConvLayer {
            kernel: b.var(self.kernel),
            bias: self.bias.map(|p| b.var(p)),
        }
    }
}

impl ConvLayer<Var> {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.conv1d_same(x, self.kernel, self.bias)
    }
}

/// Parallel k ∈ {1,3,5,7} convolutions with ReLU, channel-concatenated and
/// compressed by a bias-free 1×1 projection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiscaleStem<P> {
    pub branches: Vec<ConvLayer<P>>,
    pub proj: P,
}

impl MultiscaleStem<ParamId> {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        branch_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let branches = STEM_KERNELS
            .iter()
            .map(|&k| {
                ConvLayer::init(
                    store,
                    &format!("{prefix}.k{k}"),
                    (branch_channels, c_in, k),
                    true,
                    rng,
                )
            })
            .collect();
        let cat = STEM_KERNELS.len() * branch_channels;
        let proj = store.add(
            format!("{prefix}.proj"),
            glorot_uniform(rng, &[out_channels, cat, 1], cat, out_channels),
        );
        MultiscaleStem { branches, proj }
    }
}

impl Rebind for MultiscaleStem<ParamId> {
    type Output = MultiscaleStem<Var>;
    fn rebind(&self, b: &Bound) -> MultiscaleStem<Var> {
        MultiscaleStem {
            branches: self.branches.iter().map(|l| l.rebind(b)).collect(),
            proj: b.var(self.proj),
        }
    }
}

impl MultiscaleStem<Var> {
    /// `x[Cin×T]` to `[Cs×T]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let y = branch.forward(tape, x)?;
            if let Some(&first) = outs.first() {
                if tape.shape(y) != tape.shape(first) {
                    return Err(Error::dim(
                        "multiscale_stem",
                        tape.shape(first),
                        tape.shape(y),
                    ));
                }
            }
            outs.push(tape.relu(y));
        }
        let cat = tape.concat_channels(&outs)?;
        tape.conv1d_same(cat, self.proj, None)
    }
}

/// Densely connected stack: layer ℓ sees the input and all earlier layer
/// outputs, and the block emits all of them concatenated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseBlock<P> {
    pub layers: Vec<ConvLayer<P>>,
}

impl DenseBlock<ParamId> {
    pub const KERNEL: usize = 3;

    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        layers: usize,
        growth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 || growth == 0 {
            return Err(Error::Config(format!(
                "dense block needs layers >= 1 and growth >= 1 (got {layers}, {growth})"
            )));
        }
        let layers = (0..layers)
            .map(|l| {
                ConvLayer::init(
                    store,
                    &format!("{prefix}.layer{l}"),
                    (growth, c_in + l * growth, Self::KERNEL),
                    true,
                    rng,
                )
            })
            .collect();
        Ok(DenseBlock { layers })
    }
}

impl<P> DenseBlock<P> {
    pub fn output_channels(c_in: usize, layers: usize, growth: usize) -> usize {
        c_in + layers * growth
    }
}

impl Rebind for DenseBlock<ParamId> {
    type Output = DenseBlock<Var>;
    fn rebind(&self, b: &Bound) -> DenseBlock<Var> {
        DenseBlock {
            layers: self.layers.iter().map(|l| l.rebind(b)).collect(),
        }
    }
}

impl DenseBlock<Var> {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut features = vec![x];
        for layer in &self.layers {
            let input = if features.len() == 1 {
                x
            } else {
                tape.concat_channels(&features)?
            };
            let y = layer.forward(tape, input)?;
            features.push(tape.relu(y));
        }
        tape.concat_channels(&features)
    }
}
