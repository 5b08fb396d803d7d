//! Plain (non-recording) tensor kernels. The tape in [`super::autodiff`]
//! calls into these for its forward passes; analysis code uses them
//! directly.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

/// Which operand of a binary op is broadcast over the other's leading axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// rhs shape is a proper suffix of lhs shape.
    Rhs,
    /// lhs shape is a proper suffix of rhs shape.
    Lhs,
}

pub(crate) fn broadcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b.len() < a.len() && a.ends_with(b) {
        Ok(Broadcast::Rhs)
    } else if a.len() < b.len() && b.ends_with(a) {
        Ok(Broadcast::Lhs)
    } else {
        Err(Error::shape(op, a, b))
    }
}

/// Elementwise binary op broadcasting the shorter operand over leading axes.
pub fn zip_broadcast<F: Real>(
    op: &'static str,
    a: &Tensor<F>,
    b: &Tensor<F>,
    f: impl Fn(F, F) -> F,
) -> Result<Tensor<F>> {
    let out = match broadcast_kind(op, a.shape(), b.shape())? {
        Broadcast::Same => {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape(), data)?
        }
        Broadcast::Rhs => {
            let n = b.numel();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data()[i % n]))
                .collect();
            Tensor::new(a.shape(), data)?
        }
        Broadcast::Lhs => {
            let n = a.numel();
            let data = b
                .data()
                .iter()
                .enumerate()
                .map(|(i, &y)| f(a.data()[i % n], y))
                .collect();
            Tensor::new(b.shape(), data)?
        }
    };
    Ok(out)
}

/// `a[m×k] · b[k×n]`, optionally reading either operand transposed.
pub fn matmul_t<F: Real>(
    a: &Tensor<F>,
    trans_a: bool,
    b: &Tensor<F>,
    trans_b: bool,
) -> Result<Tensor<F>> {
    let (ar, ac) = a.dims2().map_err(|_| Error::shape("matmul", a.shape(), b.shape()))?;
    let (br, bc) = b.dims2().map_err(|_| Error::shape("matmul", a.shape(), b.shape()))?;
    let (m, k, rsa, csa) = if trans_a {
        (ac, ar, 1, ac as isize)
    } else {
        (ar, ac, ac as isize, 1)
    };
    let (k2, n, rsb, csb) = if trans_b {
        (bc, br, 1, bc as isize)
    } else {
        (br, bc, bc as isize, 1)
    };
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![F::zero(); m * n];
    F::gemm(
        m,
        k,
        n,
        F::one(),
        a.data(),
        rsa,
        csa,
        b.data(),
        rsb,
        csb,
        F::zero(),
        &mut out,
        n as isize,
        1,
    );
    Tensor::new([m, n], out)
}

pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    matmul_t(a, false, b, false)
}

/// Accumulating GEMM on raw row-major buffers: `c += op(a) · op(b)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    trans_a: bool,
    b: &[F],
    trans_b: bool,
    c: &mut [F],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    F::gemm(
        m,
        k,
        n,
        F::one(),
        a,
        rsa,
        csa,
        b,
        rsb,
        csb,
        F::one(),
        c,
        n as isize,
        1,
    );
}

pub fn transpose<F: Real>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let (r, c) = a.dims2()?;
    let mut out = vec![F::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data()[i * c + j];
        }
    }
    Tensor::new([c, r], out)
}

/// (outer, len, inner) decomposition of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Range(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Numerically stable softmax along `axis` (max subtracted per lane).
pub fn softmax<F: Real>(x: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    if !x.all_finite() {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![F::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = F::neg_infinity();
            for j in 0..len {
                max = max.max(src[base + j * inner]);
            }
            let mut total = F::zero();
            for j in 0..len {
                let e = (src[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                total = total + e;
            }
            for j in 0..len {
                out[base + j * inner] = out[base + j * inner] / total;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Layer-norm statistics per last-axis row: normalized values and 1/std.
pub(crate) fn layer_norm_stats<F: Real>(x: &[F], cols: usize, eps: F) -> (Vec<F>, Vec<F>) {
    let rows = x.len() / cols;
    let n = F::from_f64(cols as f64);
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<F>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for (h, &v) in xhat[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *h = (v - mean) * rs;
        }
    }
    (xhat, rstd)
}

pub fn layer_norm<F: Real>(
    x: &Tensor<F>,
    gain: &Tensor<F>,
    bias: &Tensor<F>,
    eps: F,
) -> Result<Tensor<F>> {
    let cols = *x.shape().last().unwrap_or(&0);
    if gain.numel() != cols || bias.numel() != cols {
        return Err(Error::shape("layer_norm", x.shape(), gain.shape()));
    }
    let (xhat, _) = layer_norm_stats(x.data(), cols, eps);
    let data = xhat
        .iter()
        .enumerate()
        .map(|(i, &h)| h * gain.data()[i % cols] + bias.data()[i % cols])
        .collect();
    Tensor::new(x.shape(), data)
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu_scalar<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5);
    half * x * (F::one() + (x * F::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad_scalar<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5);
    let cdf = half * (F::one() + (x * F::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * F::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

pub fn gelu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(gelu_scalar)
}

pub fn sigmoid_scalar<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn sigmoid<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(sigmoid_scalar)
}

pub fn slice<F: Real>(x: &Tensor<F>, axis: usize, start: usize, len: usize) -> Result<Tensor<F>> {
    let (outer, full, inner) = axis_split(x.shape(), axis)?;
    if len == 0 || start + len > full {
        return Err(Error::Range(format!(
            "slice [{start}, {}) outside axis {axis} of {:?}",
            start + len,
            x.shape()
        )));
    }
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * full * inner + start * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(shape, out)
}

pub fn concat<F: Real>(parts: &[&Tensor<F>], axis: usize) -> Result<Tensor<F>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::contract("concat of zero tensors"))?;
    let (outer, _, inner) = axis_split(first.shape(), axis)?;
    let mut total = 0;
    for p in parts {
        let ok = p.ndim() == first.ndim()
            && p
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(Error::shape("concat", first.shape(), p.shape()));
        }
        total += p.shape()[axis];
    }
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, out)
}
