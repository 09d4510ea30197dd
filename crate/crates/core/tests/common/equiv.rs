//! Tape forward passes against the loop oracles on random small instances.

use mdfa_core::nn::{
    Bound, DenseBlock, DropoutCtx, DsConv, EcBlock, Ffn, Fusion, FusionFlags, Mhsa, MultiscaleStem,
    ParamStore, PositionalConfig, PositionalKind, Rebind,
};
use mdfa_core::{Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::oracle::{self, FfnParams, MhsaParams, Rows};
use super::{rand_tensor, rng};

pub const TOL: f64 = 1e-10;

pub const BLOCKS: &[&str] = &[
    "conv1d_same",
    "depthwise_separable_conv1d",
    "mhsa",
    "dense_block",
    "fuse",
    "multiscale_stem",
    "ffn",
    "ec_block",
];

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
}

fn bind(store: &ParamStore, tape: &mut Tape) -> Bound {
    store.bind(tape)
}

fn mhsa_params<'a>(store: &'a ParamStore, m: &Mhsa<mdfa_core::nn::ParamId>) -> MhsaParams<'a> {
    MhsaParams {
        wq: store.get(m.wq),
        wk: store.get(m.wk),
        wv: store.get(m.wv),
        wo: store.get(m.wo),
        heads: m.heads,
    }
}

fn ffn_params<'a>(store: &'a ParamStore, f: &Ffn<mdfa_core::nn::ParamId>) -> FfnParams<'a> {
    FfnParams {
        w1: store.get(f.w1),
        b1: store.get(f.b1),
        w2: store.get(f.w2),
        b2: store.get(f.b2),
    }
}

fn d_and_heads(rng: &mut ChaCha8Rng) -> (usize, usize) {
    let heads = rng.random_range(1..=2);
    let d = heads * rng.random_range(1..=8 / heads);
    (d, heads)
}

/// Max abs deviation of one random instance.
pub fn instance(block: &str, rng: &mut ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let (got, want): (Vec<f64>, Vec<f64>) = match block {
        "conv1d_same" => {
            let (cin, cout, t) = (
                rng.random_range(1..=8),
                rng.random_range(1..=8),
                rng.random_range(1..=8),
            );
            let ks = [1, 3, 5, 7][rng.random_range(0..4)];
            let x = rand_tensor(rng, &[cin, t], 1.0);
            let k = rand_tensor(rng, &[cout, cin, ks], 1.0);
            let b = rand_tensor(rng, &[cout], 1.0);
            let (xv, kv, bv) = (
                tape.leaf(x.clone()),
                tape.leaf(k.clone()),
                tape.leaf(b.clone()),
            );
            let y = tape.conv1d_same(xv, kv, Some(bv)).unwrap();
            let want = oracle::conv1d(&oracle::rows(&x), &k, Some(b.data()));
            (tape.value(y).data().to_vec(), oracle::flat(&want))
        }
        "depthwise_separable_conv1d" => {
            let (c, t) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let ks = [1, 3, 5, 7][rng.random_range(0..4)];
            let x = rand_tensor(rng, &[c, t], 1.0);
            let mut store = ParamStore::new();
            let conv = DsConv::init(&mut store, "c", c, ks, rng);
            randomize(&mut store, rng);
            let b = bind(&store, &mut tape);
            let xv = tape.leaf(x.clone());
            let y = conv.rebind(&b).forward(&mut tape, xv).unwrap();
            let want = oracle::dsconv(
                &oracle::rows(&x),
                store.get(conv.depth),
                store.get(conv.point),
                Some(store.get(conv.bias).data()),
            );
            (tape.value(y).data().to_vec(), oracle::flat(&want))
        }
        "mhsa" => {
            let (d, heads) = d_and_heads(rng);
            let t = rng.random_range(1..=8);
            let x = rand_tensor(rng, &[t, d], 1.0);
            let mut store = ParamStore::new();
            let m = Mhsa::init(&mut store, "a", d, heads, rng).unwrap();
            randomize(&mut store, rng);
            let b = bind(&store, &mut tape);
            let xv = tape.leaf(x.clone());
            let y = m.rebind(&b).forward(&mut tape, xv).unwrap();
            let want = mhsa_params(&store, &m).apply(&oracle::rows(&x));
            (tape.value(y).data().to_vec(), oracle::flat(&want))
        }
        "dense_block" => {
            let (c, t) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let (layers, growth) = (rng.random_range(1..=4), rng.random_range(1..=8));
            let x = rand_tensor(rng, &[c, t], 1.0);
            let mut store = ParamStore::new();
            let blk = DenseBlock::init(&mut store, "d", c, layers, growth, rng).unwrap();
            randomize(&mut store, rng);
            let b = bind(&store, &mut tape);
            let xv = tape.leaf(x.clone());
            let y = blk.rebind(&b).forward(&mut tape, xv).unwrap();
            let params: Vec<(&Tensor, &Tensor)> = blk
                .layers
                .iter()
                .map(|l| (store.get(l.kernel), store.get(l.bias.unwrap())))
                .collect();
            let want = oracle::dense_block(&oracle::rows(&x), &params);
            (tape.value(y).data().to_vec(), oracle::flat(&want))
        }
        "fuse" => {
            let (d, heads) = d_and_heads(rng);
            let t = rng.random_range(1..=8);
            let n_paths = rng.random_range(1..=2);
            let with_attention = rng.random_bool(0.7);
            let with_pe = rng.random_bool(0.5);
            let paths: Vec<Tensor> = (0..n_paths)
                .map(|_| rand_tensor(rng, &[t, d], 1.0))
                .collect();
            let mut store = ParamStore::new();
            let f = Fusion::init(&mut store, "f", n_paths, d, heads, with_attention, rng).unwrap();
            randomize(&mut store, rng);
            let b = bind(&store, &mut tape);
            let vars: Vec<_> = paths.iter().map(|p| tape.leaf(p.clone())).collect();
            let flags = FusionFlags {
                positional: with_pe.then_some(PositionalConfig {
                    kind: PositionalKind::Sinusoidal,
                    max_len: 8,
                }),
                attention: with_attention,
            };
            let y = f.rebind(&b).forward(&mut tape, &vars, &flags).unwrap();
            let attn = f.attention.as_ref().map(|m| mhsa_params(&store, m));
            let path_rows: Vec<Rows> = paths.iter().map(oracle::rows).collect();
            let want = oracle::fuse(&path_rows, store.get(f.wf), with_pe, attn.as_ref());
            (tape.value(y).data().to_vec(), want)
        }
        "multiscale_stem" => {
            let (c, t) = (rng.random_range(1..=3), rng.random_range(1..=8));
            let (bc, oc) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let x = rand_tensor(rng, &[c, t], 1.0);
            let mut store = ParamStore::new();
            let s = MultiscaleStem::init(&mut store, "s", c, bc, oc, rng);
            randomize(&mut store, rng);
            let b = bind(&store, &mut tape);
            let xv = tape.leaf(x.clone());
            let y = s.rebind(&b).forward(&mut tape, xv).unwrap();
            let branches: Vec<(&Tensor, &Tensor)> = s
                .branches
                .iter()
                .map(|l| (store.get(l.kernel), store.get(l.bias.unwrap())))
                .collect();
            let want = oracle::stem(&oracle::rows(&x), &branches, store.get(s.proj));
            (tape.value(y).data().to_vec(), oracle::flat(&want))
        }
        "ffn" => {
            let (d, ff, t) = (
                rng.random_range(1..=8),
                rng.random_range(1..=8),
                rng.random_range(1..=8),
            );
            let x = rand_tensor(rng, &[t, d], 1.0);
            let mut store = ParamStore::new();
            let f = Ffn::init(&mut store, "f", d, ff, rng);
            randomize(&mut store, rng);
            let b = bind(&store, &mut tape);
            let xv = tape.leaf(x.clone());
            let y = f.rebind(&b).forward(&mut tape, xv).unwrap();
            let want = ffn_params(&store, &f).apply(&oracle::rows(&x));
            (tape.value(y).data().to_vec(), oracle::flat(&want))
        }
        "ec_block" => {
            let (d, heads) = d_and_heads(rng);
            let (ff, t) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let ks = [1, 3, 5][rng.random_range(0..3)];
            let with_pe = rng.random_bool(0.5);
            let x = rand_tensor(rng, &[t, d], 1.0);
            let mut store = ParamStore::new();
            let blk = EcBlock::init(&mut store, "e", d, heads, ff, ks, rng).unwrap();
            randomize(&mut store, rng);
            let b = bind(&store, &mut tape);
            let xv = tape.leaf(x.clone());
            let pe = PositionalConfig {
                kind: PositionalKind::Sinusoidal,
                max_len: 8,
            };
            let y = blk
                .rebind(&b)
                .forward(
                    &mut tape,
                    xv,
                    with_pe.then_some(&pe),
                    &mut DropoutCtx::eval(),
                )
                .unwrap();
            let want = oracle::ec_block(
                &oracle::rows(&x),
                &mhsa_params(&store, &blk.attention),
                &ffn_params(&store, &blk.ffn1),
                (
                    store.get(blk.conv.depth),
                    store.get(blk.conv.point),
                    store.get(blk.conv.bias),
                ),
                &ffn_params(&store, &blk.ffn2),
                with_pe,
            );
            (tape.value(y).data().to_vec(), oracle::flat(&want))
        }
        other => panic!("no oracle for '{other}'"),
    };
    assert_eq!(got.len(), want.len(), "{block}: output size");
    super::max_abs_diff(&got, &want)
}

/// Worst deviation over `instances` random draws; error if above [`TOL`].
pub fn check_block(block: &str, instances: usize, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let dev = instance(block, &mut r);
        if !(dev <= TOL) {
            return Err(format!("{block} instance {k}: deviation {dev:e}"));
        }
        worst = worst.max(dev);
    }
    Ok(worst)
}
