use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::INITIAL_LOG_STD;
use crate::autodiff::{Real, Tensor};

/// `[rows, cols]` matrix with orthonormal rows or columns (whichever is
/// shorter), times `gain`.
pub fn orthogonal<T: Real>(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Tensor<T> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let data = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| T::lit(gain * m[(i, j)])).collect();
    Tensor::new(&[rows, cols], data).expect("shape matches")
}

pub(super) fn init_tensor<T: Real>(name: &str, shape: &[usize], d: usize, rng: &mut impl Rng) -> Tensor<T> {
    let last = name.rsplit('.').next().unwrap_or(name);
    if name == "log_std" {
        return Tensor::full(shape, T::lit(INITIAL_LOG_STD));
    }
    if name.starts_with("base.") || shape.len() == 1 {
        return Tensor::zeros(shape);
    }
    if name.starts_with("basis.") {
        return orthogonal(d, d, 1.0 / (d as f64).sqrt(), rng);
    }
    if name.starts_with("mix.") {
        // same map as an orthonormal basis scaled by 1/√d: W Wᵀ = I/d
        return Tensor::identity(d).scale(T::lit(1.0 / d as f64));
    }
    let gain = match last {
        "w2" => 0.01,
        _ if name == "mlp.2.w" => 0.01,
        _ => 1.0,
    };
    orthogonal(shape[0], shape[1], gain, rng)
}
