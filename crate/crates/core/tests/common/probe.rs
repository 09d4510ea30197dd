//! Convex probe: one linear layer fitted to noiseless linear data with
//! Adam and MSE.

use mdfa_core::train::{adam_step, AdamConfig, AdamState};
use mdfa_core::{Tape, Tensor};
use rand::seq::SliceRandom;

pub struct ProbeResult {
    /// Full-data MSE after each epoch.
    pub mse: Vec<f64>,
    pub seconds: f64,
}

pub fn convex_probe(seed: u64, epochs: usize) -> ProbeResult {
    let (n, d_in, d_out, batch) = (256, 4, 2, 32);
    let mut rng = super::rng(seed);
    let w_true = super::rand_tensor(&mut rng, &[d_in, d_out], 1.0);
    let b_true = super::rand_tensor(&mut rng, &[d_out], 0.5);
    let x = super::rand_tensor(&mut rng, &[n, d_in], 1.0);
    let y = {
        let mut tape = Tape::new();
        let (xv, w, b) = (
            tape.constant(x.clone()),
            tape.constant(w_true),
            tape.constant(b_true),
        );
        let y = tape.linear(xv, w, Some(b)).unwrap();
        tape.value(y).clone()
    };
    let mut params = vec![
        super::rand_tensor(&mut rng, &[d_in, d_out], 0.5),
        Tensor::zeros(&[d_out]),
    ];
    let mut state = AdamState::new(&params);
    let cfg = AdamConfig::default();
    let rows = |t: &Tensor, idx: &[usize]| {
        let w = t.shape()[1];
        let data = idx
            .iter()
            .flat_map(|&i| t.data()[i * w..(i + 1) * w].to_vec())
            .collect();
        Tensor::new(vec![idx.len(), w], data).unwrap()
    };
    let full_mse = |params: &[Tensor]| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.constant(params[0].clone());
        let b = tape.constant(params[1].clone());
        let p = tape.linear(xv, w, Some(b)).unwrap();
        let t = tape.constant(y.clone());
        let l = tape.mse_loss(p, t).unwrap();
        tape.value(l).item().unwrap()
    };

    let started = std::time::Instant::now();
    let mut order: Vec<usize> = (0..n).collect();
    let mut mse = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(batch) {
            let mut tape = Tape::new();
            let xv = tape.constant(rows(&x, idx));
            let t = tape.constant(rows(&y, idx));
            let w = tape.param(params[0].clone());
            let b = tape.param(params[1].clone());
            let p = tape.linear(xv, w, Some(b)).unwrap();
            let l = tape.mse_loss(p, t).unwrap();
            tape.backward(l).unwrap();
            let gw = tape.grad(w).unwrap().to_vec();
            let gb = tape.grad(b).unwrap().to_vec();
            adam_step(params.iter_mut(), &[&gw, &gb], &mut state, &cfg).unwrap();
        }
        mse.push(full_mse(&params));
    }
    ProbeResult {
        mse,
        seconds: started.elapsed().as_secs_f64(),
    }
}
