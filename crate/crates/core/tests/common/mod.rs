#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topexpert::autodiff::{ParamStore, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor for gradients that are essentially zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < 1e-9 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest relative error between backward-pass gradients and central differences
/// for a scalar function of free input tensors.
pub fn check_inputs<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let eval = |ins: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vs);
        t.value(out).item()
    };
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let zeros = Tensor::zeros(input.shape());
        let analytic = grads.wrt(vars[k]).unwrap_or(&zeros);
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Same check over every entry of every parameter in a store.
/// Returns (worst relative error, parameter name where it occurred).
pub fn check_params<F>(store: &ParamStore, f: F) -> (f64, String)
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    let grads = tape.backward(loss).unwrap();
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    grads.accumulate(&mut with_grads);
    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let out = f(&mut t, s);
        t.value(out).item()
    };
    let mut worst = (0.0, String::new());
    let mut probe = store.clone();
    for id in store.ids() {
        for j in 0..store.value(id).numel() {
            let orig = store.value(id).data()[j];
            probe.value_mut(id).data_mut()[j] = orig + FD_STEP;
            let up = eval(&probe);
            probe.value_mut(id).data_mut()[j] = orig - FD_STEP;
            let down = eval(&probe);
            probe.value_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(with_grads.grad(id).data()[j], numeric);
            if e > worst.0 {
                worst = (e, store.name(id).to_string());
            }
        }
    }
    worst
}

/// Small, fast trainer configuration; off-grid sizes are allowed.
pub fn tiny_config(combiner: topexpert::experts::CombinerKind) -> topexpert::trainer::TrainConfig {
    topexpert::trainer::TrainConfig {
        combiner,
        hidden: 16,
        layers: 2,
        gate_hidden: 16,
        d_z: 4,
        k: 3,
        max_epochs: 5,
        batch_size: 16,
        unsafe_hparams: true,
        ..Default::default()
    }
}

/// Interleaved split: every `k`-th record (offset 0) is validation, offset 1 is test.
pub fn interleaved_split(n: usize, k: usize) -> topexpert::scaffold::SplitAssignment {
    let mut s = topexpert::scaffold::SplitAssignment::default();
    for i in 0..n {
        match i % k {
            0 => s.valid.push(i),
            1 => s.test.push(i),
            _ => s.train.push(i),
        }
    }
    s
}
