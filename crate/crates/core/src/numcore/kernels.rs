//! Slice-level routines shared by the tape and by tape-free inference paths.

use super::Real;

/// `out[m×n] (+)= op(a)[m×k] · op(b)[k×n]`.
///
/// With `trans_a`, `a` is stored as `k×m`; with `trans_b`, `b` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<F: Real>(
    a: &[F],
    b: &[F],
    out: &mut [F],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "lhs length");
    assert_eq!(b.len(), k * n, "rhs length");
    assert_eq!(out.len(), m * n, "output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = F::zero());
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: lengths were checked above and the strides describe exactly the
    // row-major (or transposed row-major) layouts of `a`, `b` and `out`.
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numerically stable softmax of one row. Masked-out entries (`false`) get
/// probability zero. A row with every entry masked is left all-zero.
pub fn softmax_row<F: Real>(input: &[F], out: &mut [F], mask: Option<&[bool]>) {
    let allowed = |j: usize| mask.map_or(true, |m| m[j]);
    let mut max = F::neg_infinity();
    for (j, &v) in input.iter().enumerate() {
        if allowed(j) && v > max {
            max = v;
        }
    }
    if max == F::neg_infinity() {
        out.iter_mut().for_each(|v| *v = F::zero());
        return;
    }
    let mut total = F::zero();
    for (j, (o, &v)) in out.iter_mut().zip(input).enumerate() {
        *o = if allowed(j) { (v - max).exp() } else { F::zero() };
        total += *o;
    }
    let inv = F::one() / total;
    out.iter_mut().for_each(|v| *v *= inv);
}

/// Normalizes one row to zero mean and unit variance; returns `1/sqrt(var + eps)`.
pub fn normalize_row<F: Real>(input: &[F], out: &mut [F], eps: F) -> F {
    let n = F::from_usize(input.len()).unwrap();
    let mean = input.iter().copied().sum::<F>() / n;
    let var = input.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let rstd = F::one() / (var + eps).sqrt();
    for (o, &v) in out.iter_mut().zip(input) {
        *o = (v - mean) * rstd;
    }
    rstd
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<F: Real>(x: F) -> F {
    let u = F::c(GELU_C) * (x + F::c(GELU_A) * x * x * x);
    F::c(0.5) * x * (F::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<F: Real>(x: F) -> F {
    let u = F::c(GELU_C) * (x + F::c(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = F::c(GELU_C) * (F::one() + F::c(3.0 * GELU_A) * x * x);
    F::c(0.5) * (F::one() + t) + F::c(0.5) * x * (F::one() - t * t) * du
}

/// Transformer sinusoid encoding of a (possibly fractional) position:
/// `v[2k] = sin(pos / 10000^(2k/d))`, `v[2k+1] = cos(pos / 10000^(2k/d))`.
/// For odd `d` the last channel carries only the sine term.
pub fn sinusoid(pos: f64, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    let mut k = 0;
    while 2 * k < d {
        let freq = 10000f64.powf(-(2.0 * k as f64) / d as f64);
        v[2 * k] = (pos * freq).sin();
        if 2 * k + 1 < d {
            v[2 * k + 1] = (pos * freq).cos();
        }
        k += 1;
    }
    v
}

/// Direct 1-d convolution over time with zero padding at the tail.
///
/// `x` is `n × c_in` (one row per frame), `weight` is laid out
/// `[c_out][c_in][kernel]`, output row `i` covers frames `i·stride ..`.
pub fn conv1d(
    x: &[f64],
    n: usize,
    c_in: usize,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    assert_eq!(weight.len(), c_out * c_in * kernel);
    let frame = |t: usize, c: usize| if t < n { x[t * c_in + c] } else { 0.0 };
    let n_out = n.div_ceil(stride);
    let mut out = vec![0.0; n_out * c_out];
    for i in 0..n_out {
        for o in 0..c_out {
            let mut acc = bias[o];
            for c in 0..c_in {
                for k in 0..kernel {
                    acc += weight[(o * c_in + c) * kernel + k] * frame(i * stride + k, c);
                }
            }
            out[i * c_out + o] = acc;
        }
    }
    out
}

pub fn all_finite<F: Real>(data: &[F]) -> bool {
    data.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_transposes_agree_with_loops() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let mut plain = vec![0.0; 8];
        matmul(&a, &b, &mut plain, 2, 3, 4, false, false, false);
        for i in 0..2 {
            for j in 0..4 {
                let expect: f64 = (0..3).map(|r| a[i * 3 + r] * b[r * 4 + j]).sum();
                assert!((plain[i * 4 + j] - expect).abs() < 1e-14);
            }
        }
        // a^T stored as 3x2, b^T stored as 4x3
        let at: Vec<f64> = (0..6).map(|idx| a[(idx % 2) * 3 + idx / 2]).collect();
        let bt: Vec<f64> = (0..12).map(|idx| b[(idx % 3) * 4 + idx / 3]).collect();
        let mut tt = vec![0.0; 8];
        matmul(&at, &bt, &mut tt, 2, 3, 4, true, true, false);
        for (x, y) in plain.iter().zip(&tt) {
            assert!((x - y).abs() < 1e-14);
        }
        matmul(&at, &bt, &mut tt, 2, 3, 4, true, true, true);
        for (x, y) in plain.iter().zip(&tt) {
            assert!((2.0 * x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let mut out = [0.0f64; 3];
        softmax_row(&[1.0, 5.0, 1.0], &mut out, Some(&[true, false, true]));
        assert_eq!(out, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn sinusoid_odd_width_ends_with_sine() {
        let v = sinusoid(2.0, 3);
        assert_eq!(v.len(), 3);
        assert!((v[0] - 2f64.sin()).abs() < 1e-15);
        assert!((v[1] - 2f64.cos()).abs() < 1e-15);
        let freq = 10000f64.powf(-2.0 / 3.0);
        assert!((v[2] - (2.0 * freq).sin()).abs() < 1e-15);
    }

    #[test]
    fn gelu_grad_matches_difference_quotient() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
