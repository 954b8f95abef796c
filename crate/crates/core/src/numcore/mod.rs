//! Dense row-major numerics with a reverse-mode tape.
//!
//! Everything the connectors and the frozen stand-ins compute is expressed in
//! terms of the primitives recorded by [`Tape`]. Element type is generic over
//! [`Real`]: `f64` is the training/verification precision, `f32` is available
//! when speed matters more than gradient-check accuracy.

pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub use gradcheck::{gradcheck, GradcheckReport};
pub use layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
pub use optim::{warmup_cosine_lr, warmup_lr, Adam, AdamConfig};
pub use params::{Bound, GradBuffer, Init, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Order-preserving parallel map on the current rayon pool. Callers reduce
/// the results sequentially, so sums do not depend on the thread count.
pub fn par_map<T, R, Fun>(items: &[T], f: Fun) -> crate::Result<Vec<R>>
where
    T: Sync,
    R: Send,
    Fun: Fn(&T) -> crate::Result<R> + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Floating point element type usable by the tape.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const BITS: u32;

    /// Converts an `f64` literal into this type.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal fits")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    /// `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
    ///
    /// # Safety
    /// Strides and dimensions must describe valid, in-bounds views of the
    /// pointers, as required by `matrixmultiply`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f64 {
    const BITS: u32 = 64;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f32 {
    const BITS: u32 = 32;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
