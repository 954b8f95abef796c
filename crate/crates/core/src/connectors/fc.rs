use rand::Rng;

use super::{FeatureSequence, HiddenSequence};
use crate::error::{Error, Result};
use crate::numcore::{Bound, Linear, ParamStore, Real, Tape, Tensor, Var};

/// Stacks `m` adjacent frames into one row: row `i` holds frames
/// `i·m .. i·m+m-1`, a short final group is zero-padded to `m` frames.
pub fn stack_frames<F: Real>(x: &FeatureSequence<F>, m: usize) -> Result<HiddenSequence<F>> {
    if m == 0 {
        return Err(Error::Config("stacking factor must be >= 1".into()));
    }
    if x.n_x() == 0 {
        return Err(Error::EmptyInput("stack_frames"));
    }
    let n_h = x.n_x().div_ceil(m);
    let mut data = x.data().to_vec();
    data.resize(n_h * m * x.d_x(), F::zero());
    Ok(HiddenSequence(Tensor::matrix(n_h, m * x.d_x(), data)?))
}

/// Tape form of [`stack_frames`]: zero-pad then reinterpret row-major data.
pub fn stack_frames_var<F: Real>(tape: &mut Tape<F>, x: Var, m: usize) -> Result<Var> {
    if m == 0 {
        return Err(Error::Config("stacking factor must be >= 1".into()));
    }
    let (n_x, d_x) = tape.shape(x);
    let n_h = n_x.div_ceil(m);
    let padded = tape.pad_rows(x, n_h * m)?;
    tape.reshape(padded, n_h, m * d_x)
}

/// `T = Linear(ReLU(Linear(H)))` over stacked frames.
#[derive(Clone, Debug)]
pub struct FcConnector {
    pub stack: usize,
    pub first: Linear,
    pub second: Linear,
}

impl FcConnector {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        d_x: usize,
        d_t: usize,
        stack: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            stack,
            first: Linear::new(store, "fc.first", stack * d_x, hidden, rng)?,
            second: Linear::new(store, "fc.second", hidden, d_t, rng)?,
        })
    }

    pub fn param_count(d_x: usize, d_t: usize, stack: usize, hidden: usize) -> usize {
        Linear::param_count(stack * d_x, hidden) + Linear::param_count(hidden, d_t)
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Var> {
        let (_, d_x) = tape.shape(x);
        if d_x * self.stack != self.first.d_in {
            return Err(Error::dim("fc_connector", &[d_x * self.stack], &[self.first.d_in]));
        }
        let h = stack_frames_var(tape, x, self.stack)?;
        self.forward_hidden(tape, bound, h)
    }

    /// Applies the MLP to already-stacked rows.
    pub fn forward_hidden<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, h: Var) -> Result<Var> {
        let z = self.first.forward(tape, bound, h)?;
        let z = tape.relu(z)?;
        self.second.forward(tape, bound, z)
    }
}
