//! Central finite-difference gradient checks for every tape operation.

use mdfa_core::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rand_away_from_zero, rand_tensor};

pub const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Differentiable inputs plus a closure recording the op on them.
pub struct Case {
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

pub const OPS: &[&str] = &[
    "linear",
    "linear_no_bias",
    "matmul",
    "transpose",
    "conv1d_same",
    "depthwise_separable_conv1d",
    "softmax_lastdim",
    "relu",
    "dropout",
    "mse_loss",
    "concat_rows",
    "concat_cols",
    "concat_channels",
    "slice_cols",
    "add",
    "scale",
    "mean_rows",
    "sum",
    "reshape",
];

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=4)
}

fn odd_kernel(rng: &mut ChaCha8Rng) -> usize {
    [1, 3, 5][rng.random_range(0..3)]
}

pub fn make_case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    let r = |rng: &mut ChaCha8Rng, shape: &[usize]| rand_tensor(rng, shape, 1.0);
    match op {
        "linear" => {
            let (n, i, o) = (dim(rng), dim(rng), dim(rng));
            Case {
                inputs: vec![r(rng, &[n, i]), r(rng, &[i, o]), r(rng, &[o])],
                build: Box::new(|t, v| t.linear(v[0], v[1], Some(v[2]))),
            }
        }
        "linear_no_bias" => {
            let (n, i, o) = (dim(rng), dim(rng), dim(rng));
            Case {
                inputs: vec![r(rng, &[n, i]), r(rng, &[i, o])],
                build: Box::new(|t, v| t.linear(v[0], v[1], None)),
            }
        }
        "matmul" => {
            let (m, k, n) = (dim(rng), dim(rng), dim(rng));
            Case {
                inputs: vec![r(rng, &[m, k]), r(rng, &[k, n])],
                build: Box::new(|t, v| t.matmul(v[0], v[1])),
            }
        }
        "transpose" => {
            let (a, b) = (dim(rng), dim(rng));
            Case {
                inputs: vec![r(rng, &[a, b])],
                build: Box::new(|t, v| t.transpose(v[0])),
            }
        }
        "conv1d_same" => {
            let (cin, cout, len, k) = (dim(rng), dim(rng), dim(rng) + 2, odd_kernel(rng));
            Case {
                inputs: vec![
                    r(rng, &[cin, len]),
                    r(rng, &[cout, cin, k]),
                    r(rng, &[cout]),
                ],
                build: Box::new(|t, v| t.conv1d_same(v[0], v[1], Some(v[2]))),
            }
        }
        "depthwise_separable_conv1d" => {
            let (c, len, k) = (dim(rng), dim(rng) + 2, odd_kernel(rng));
            Case {
                inputs: vec![
                    r(rng, &[c, len]),
                    r(rng, &[c, k]),
                    r(rng, &[c, c]),
                    r(rng, &[c]),
                ],
                build: Box::new(|t, v| t.depthwise_separable_conv1d(v[0], v[1], v[2], Some(v[3]))),
            }
        }
        "softmax_lastdim" => {
            let (a, b) = (dim(rng), dim(rng) + 1);
            Case {
                inputs: vec![rand_tensor(rng, &[a, b], 3.0)],
                build: Box::new(|t, v| t.softmax_lastdim(v[0])),
            }
        }
        "relu" => {
            let (a, b) = (dim(rng), dim(rng));
            Case {
                inputs: vec![rand_away_from_zero(rng, &[a, b])],
                build: Box::new(|t, v| Ok(t.relu(v[0]))),
            }
        }
        "dropout" => {
            let (a, b) = (dim(rng), dim(rng));
            let p = rng.random_range(0.1..0.7);
            let mask_seed: u64 = rng.random();
            Case {
                inputs: vec![r(rng, &[a, b])],
                // Same mask on every rebuild.
                build: Box::new(move |t, v| {
                    let mut m = ChaCha8Rng::seed_from_u64(mask_seed);
                    t.dropout(v[0], p, true, &mut m)
                }),
            }
        }
        "mse_loss" => {
            let n = dim(rng) + 1;
            Case {
                inputs: vec![r(rng, &[n]), r(rng, &[n])],
                build: Box::new(|t, v| t.mse_loss(v[0], v[1])),
            }
        }
        "concat_rows" => {
            let c = dim(rng);
            let (a, b) = (dim(rng), dim(rng));
            Case {
                inputs: vec![r(rng, &[a, c]), r(rng, &[b, c])],
                build: Box::new(|t, v| t.concat(&[v[0], v[1]], 0)),
            }
        }
        "concat_cols" => {
            let rows = dim(rng);
            let (a, b, c) = (dim(rng), dim(rng), dim(rng));
            Case {
                inputs: vec![r(rng, &[rows, a]), r(rng, &[rows, b]), r(rng, &[rows, c])],
                build: Box::new(|t, v| t.concat(&[v[0], v[1], v[2]], 1)),
            }
        }
        "concat_channels" => {
            let len = dim(rng);
            let (a, b) = (dim(rng), dim(rng));
            Case {
                inputs: vec![r(rng, &[a, len]), r(rng, &[b, len])],
                build: Box::new(|t, v| t.concat_channels(&[v[0], v[1]])),
            }
        }
        "slice_cols" => {
            let (rows, cols) = (dim(rng), dim(rng) + 1);
            let start = rng.random_range(0..cols);
            let len = rng.random_range(1..=cols - start);
            Case {
                inputs: vec![r(rng, &[rows, cols])],
                build: Box::new(move |t, v| t.slice_cols(v[0], start, len)),
            }
        }
        "add" => {
            let (a, b) = (dim(rng), dim(rng));
            Case {
                inputs: vec![r(rng, &[a, b]), r(rng, &[a, b])],
                build: Box::new(|t, v| t.add(v[0], v[1])),
            }
        }
        "scale" => {
            let (a, b) = (dim(rng), dim(rng));
            let f = rng.random_range(-2.0..2.0);
            Case {
                inputs: vec![r(rng, &[a, b])],
                build: Box::new(move |t, v| Ok(t.scale(v[0], f))),
            }
        }
        "mean_rows" => {
            let (a, b) = (dim(rng), dim(rng));
            Case {
                inputs: vec![r(rng, &[a, b])],
                build: Box::new(|t, v| t.mean_rows(v[0])),
            }
        }
        "sum" => {
            let (a, b) = (dim(rng), dim(rng));
            Case {
                inputs: vec![r(rng, &[a, b])],
                build: Box::new(|t, v| Ok(t.sum(v[0]))),
            }
        }
        "reshape" => {
            let (a, b) = (dim(rng), dim(rng));
            Case {
                inputs: vec![r(rng, &[a, b])],
                build: Box::new(move |t, v| t.reshape(v[0], &[b, a])),
            }
        }
        other => panic!("no finite-difference case for '{other}'"),
    }
}

/// Scalar objective: MSE of the op output against a fixed random target,
/// so every output element gets a distinct upstream gradient.
fn objective(tape: &mut Tape, out: Var, target_seed: u64) -> Result<Var> {
    let n = tape.value(out).len();
    let mut rng = ChaCha8Rng::seed_from_u64(target_seed);
    let target = tape.constant(rand_tensor(&mut rng, &[n], 1.0));
    let flat = tape.reshape(out, &[n])?;
    tape.mse_loss(flat, target)
}

fn loss_value(case: &Case, inputs: &[Tensor], target_seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars).expect("op builds");
    let loss = objective(&mut tape, out, target_seed).expect("objective builds");
    tape.value(loss).item().unwrap()
}

/// Compares tape gradients with central differences for every input
/// element. Returns the number of scalar comparisons.
pub fn check_case(case: &Case, target_seed: u64) -> std::result::Result<usize, String> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars).map_err(|e| e.to_string())?;
    let loss = objective(&mut tape, out, target_seed).map_err(|e| e.to_string())?;
    tape.backward(loss).map_err(|e| e.to_string())?;

    let mut checked = 0;
    for (i, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).ok_or("leaf without gradient")?.to_vec();
        for j in 0..case.inputs[i].len() {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[j] += EPS;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[j] -= EPS;
            let numeric = (loss_value(case, &plus, target_seed)
                - loss_value(case, &minus, target_seed))
                / (2.0 * EPS);
            let a = analytic[j];
            let tol = ABS_TOL + REL_TOL * a.abs().max(numeric.abs());
            if (a - numeric).abs() > tol {
                return Err(format!(
                    "input {i} element {j}: analytic {a:e} vs numeric {numeric:e}"
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Runs `instances` random cases of `op`.
pub fn check_op(op: &str, instances: usize, seed: u64) -> std::result::Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0;
    for k in 0..instances {
        let case = make_case(op, &mut rng);
        total += check_case(&case, seed ^ (k as u64 + 1))
            .map_err(|e| format!("{op} instance {k}: {e}"))?;
    }
    Ok(total)
}
