//! Test-only oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use rand::Rng;
use seisbert::numerics::{rng, Real, Tape, Tensor, Var};

/// A scalar-valued function of several tensors, evaluable at any precision.
pub trait ScalarFn {
    fn eval<'t, F: Real>(&self, tape: &'t Tape<F>, inputs: &[Var<'t, F>]) -> Var<'t, F>;
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng::normal(rng) * scale).collect();
    Tensor::new(shape, data).unwrap()
}

fn eval_f64(f: &impl ScalarFn, inputs: &[Tensor<f64>]) -> f64 {
    let tape = Tape::<f64>::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    f.eval(&tape, &vars).item()
}

/// Central differences in 64-bit arithmetic.
pub fn finite_difference(f: &impl ScalarFn, inputs: &[Tensor<f64>], h: f64) -> Vec<Tensor<f64>> {
    let mut out = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let mut grad = Tensor::zeros(input.shape());
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            grad.data_mut()[i] = (eval_f64(f, &plus) - eval_f64(f, &minus)) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

pub fn analytic<F: Real>(f: &impl ScalarFn, inputs: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let tape = Tape::<F>::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.var(t.cast::<F>())).collect();
    let loss = f.eval(&tape, &vars);
    let grads = tape.backward(loss).unwrap();
    vars.iter().map(|v| grads.get(*v).unwrap().cast::<f64>()).collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖b‖, 1e-8)` over all inputs.
pub fn relative_error(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.data().iter().zip(y.data()) {
            num += (p - q) * (p - q);
            den += q * q;
        }
    }
    num.sqrt() / den.sqrt().max(1e-8)
}

/// Worst relative error of the 32- and 64-bit analytic gradients against the
/// finite-difference oracle.
pub fn grad_check(f: &impl ScalarFn, inputs: &[Tensor<f64>]) -> (f64, f64) {
    let fd = finite_difference(f, inputs, 1e-5);
    let g32 = analytic::<f32>(f, inputs);
    let g64 = analytic::<f64>(f, inputs);
    (relative_error(&g32, &fd), relative_error(&g64, &fd))
}

/// Contract a tensor-valued output to a scalar with fixed pseudo-random weights.
pub fn contract<'t, F: Real>(out: Var<'t, F>, seed: u64) -> Var<'t, F> {
    let shape = out.shape();
    let mut r = rng::seeded(seed);
    let w = random_tensor(&mut r, &shape, 1.0).cast::<F>();
    let w = out.tape().constant(w);
    out.mul(w).unwrap().sum()
}

pub mod cases;
pub mod reference;
