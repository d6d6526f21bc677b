#![allow(dead_code)]

use abd_core::autodiff::{Real, Tape, Var};
use abd_core::nets::{Bound, Params};

/// Central-difference check of `loss` with respect to every parameter
/// tensor. Returns the worst per-tensor relative error (norm-wise).
pub fn gradient_check(
    params: &Params<f64>,
    h: f64,
    loss: impl for<'t> Fn(&'t Tape<f64>, &Bound<'t, f64>) -> Var<'t, f64>,
) -> (f64, String) {
    let tape = Tape::<f64>::new();
    let bound = params.bind(&tape, true);
    let l = loss(&tape, &bound);
    let grads = tape.backward(l).unwrap();
    let mut worst = (0.0, String::new());
    for (k, name) in params.names().iter().enumerate() {
        let analytic = grads.get(bound.vars()[k]).to_f64();
        let n = params.tensors()[k].numel();
        let mut numeric = vec![0.0; n];
        for e in 0..n {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[k].data_mut()[e] += delta;
                let tape = Tape::<f64>::new();
                let bound = p.bind(&tape, false);
                loss(&tape, &bound).item()
            };
            numeric[e] = (eval(h) - eval(-h)) / (2.0 * h);
        }
        let err = rel_err(&analytic, &numeric);
        if err > worst.0 {
            worst = (err, name.clone());
        }
    }
    worst
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn bits<T: Real>(x: T) -> u64 {
    x.as_f64().to_bits()
}
