//! Straight-loop reference implementations, written without reference to
//! the tape kernels. Matrices are row vectors (`Vec<Vec<f64>>`).

use mdfa_core::Tensor;

pub type Rows = Vec<Vec<f64>>;

pub fn rows(t: &Tensor) -> Rows {
    let &[r, c] = t.shape() else {
        panic!("expected a matrix, got {:?}", t.shape())
    };
    (0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].to_vec())
        .collect()
}

pub fn flat(m: &Rows) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

fn k3(k: &Tensor, o: usize, c: usize, j: usize) -> f64 {
    let s = k.shape();
    k.data()[(o * s[1] + c) * s[2] + j]
}

/// Same-padded cross-correlation, `x[Cin×T]`, `k[Cout×Cin×K]`.
pub fn conv1d(x: &Rows, k: &Tensor, b: Option<&[f64]>) -> Rows {
    let (cout, cin, ks) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    assert_eq!(x.len(), cin);
    let t = x[0].len() as isize;
    let half = (ks / 2) as isize;
    (0..cout)
        .map(|o| {
            (0..t)
                .map(|s| {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for c in 0..cin {
                        for j in 0..ks {
                            let src = s + j as isize - half;
                            if (0..t).contains(&src) {
                                acc += k3(k, o, c, j) * x[c][src as usize];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Depthwise conv as a full conv with a channel-diagonal kernel, then the
/// pointwise mix as a width-1 conv.
pub fn dsconv(x: &Rows, depth: &Tensor, point: &Tensor, b: Option<&[f64]>) -> Rows {
    let (c, ks) = (depth.shape()[0], depth.shape()[1]);
    let mut diag = vec![0.0; c * c * ks];
    for ch in 0..c {
        for j in 0..ks {
            diag[(ch * c + ch) * ks + j] = depth.data()[ch * ks + j];
        }
    }
    let diag = Tensor::new(vec![c, c, ks], diag).unwrap();
    let mid = conv1d(x, &diag, None);
    let point3 = Tensor::new(vec![c, c, 1], point.data().to_vec()).unwrap();
    conv1d(&mid, &point3, b)
}

pub fn matmul(a: &Rows, b: &Rows) -> Rows {
    let inner = b.len();
    let n = b[0].len();
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            (0..n)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &Rows) -> Rows {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

pub fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn add_bias(a: &Rows, b: &[f64]) -> Rows {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn relu(a: &Rows) -> Rows {
    a.iter()
        .map(|r| r.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect())
        .collect()
}

pub fn softmax_row(r: &[f64]) -> Vec<f64> {
    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn mean_rows(a: &Rows) -> Vec<f64> {
    let n = a.len() as f64;
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect()
}

pub fn positional(t: usize, d: usize) -> Rows {
    (0..t)
        .map(|pos| {
            (0..d)
                .map(|col| {
                    let i = col / 2;
                    let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
                    if col % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
                .collect()
        })
        .collect()
}

/// `x[T×D]`; per-head scaled dot-product attention with explicit loops.
pub fn mhsa(x: &Rows, wq: &Tensor, wk: &Tensor, wv: &Tensor, wo: &Tensor, heads: usize) -> Rows {
    let (q, k, v) = (
        matmul(x, &rows(wq)),
        matmul(x, &rows(wk)),
        matmul(x, &rows(wv)),
    );
    let t = x.len();
    let d = q[0].len();
    let dk = d / heads;
    let mut cat = vec![vec![0.0; d]; t];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        for i in 0..t {
            let scores: Vec<f64> = (0..t)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let a = softmax_row(&scores);
            for c in cols.clone() {
                cat[i][c] = (0..t).map(|j| a[j] * v[j][c]).sum();
            }
        }
    }
    matmul(&cat, &rows(wo))
}

pub fn ffn(x: &Rows, w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor) -> Rows {
    let h = relu(&add_bias(&matmul(x, &rows(w1)), b1.data()));
    add_bias(&matmul(&h, &rows(w2)), b2.data())
}

/// `layers[l] = (kernel, bias)`; each layer sees every earlier feature map.
pub fn dense_block(x: &Rows, layers: &[(&Tensor, &Tensor)]) -> Rows {
    let mut feats = x.clone();
    for (k, b) in layers {
        let y = relu(&conv1d(&feats, k, Some(b.data())));
        feats.extend(y);
    }
    feats
}

pub fn stem(x: &Rows, branches: &[(&Tensor, &Tensor)], proj: &Tensor) -> Rows {
    let mut cat = Rows::new();
    for (k, b) in branches {
        cat.extend(relu(&conv1d(x, k, Some(b.data()))));
    }
    conv1d(&cat, proj, None)
}

pub struct MhsaParams<'a> {
    pub wq: &'a Tensor,
    pub wk: &'a Tensor,
    pub wv: &'a Tensor,
    pub wo: &'a Tensor,
    pub heads: usize,
}

impl MhsaParams<'_> {
    pub fn apply(&self, x: &Rows) -> Rows {
        mhsa(x, self.wq, self.wk, self.wv, self.wo, self.heads)
    }
}

pub struct FfnParams<'a> {
    pub w1: &'a Tensor,
    pub b1: &'a Tensor,
    pub w2: &'a Tensor,
    pub b2: &'a Tensor,
}

impl FfnParams<'_> {
    pub fn apply(&self, x: &Rows) -> Rows {
        ffn(x, self.w1, self.b1, self.w2, self.b2)
    }
}

/// Inference-mode encoder block on `x[T×D]`.
pub fn ec_block(
    x: &Rows,
    attn: &MhsaParams,
    ffn1: &FfnParams,
    conv: (&Tensor, &Tensor, &Tensor),
    ffn2: &FfnParams,
    with_positional: bool,
) -> Rows {
    let attn_in = if with_positional {
        add(x, &positional(x.len(), x[0].len()))
    } else {
        x.clone()
    };
    let y1 = add(x, &attn.apply(&attn_in));
    let y2 = add(&y1, &ffn1.apply(&y1));
    let c = transpose(&dsconv(
        &transpose(&y2),
        conv.0,
        conv.1,
        Some(conv.2.data()),
    ));
    let y3 = add(&y2, &c);
    add(&y3, &ffn2.apply(&y3))
}

/// Column-concatenate paths, project, optionally add positions and attend,
/// then average over time.
pub fn fuse(
    paths: &[Rows],
    wf: &Tensor,
    with_positional: bool,
    attn: Option<&MhsaParams>,
) -> Vec<f64> {
    let cat: Rows = (0..paths[0].len())
        .map(|i| paths.iter().flat_map(|p| p[i].iter().copied()).collect())
        .collect();
    let mut h = matmul(&cat, &rows(wf));
    if with_positional {
        h = add(&h, &positional(h.len(), h[0].len()));
    }
    if let Some(a) = attn {
        h = a.apply(&h);
    }
    mean_rows(&h)
}
