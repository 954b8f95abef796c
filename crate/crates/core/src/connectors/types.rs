use crate::error::{Error, Result};
use crate::numcore::{ParamId, Real, Tape, Tensor, Var};

/// Encoder output `X`, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<F: Real = f64> {
    frames: usize,
    dim: usize,
    data: Vec<F>,
    pub frame_rate_hz: f64,
}

impl<F: Real> FeatureSequence<F> {
    pub fn new(frames: usize, dim: usize, data: Vec<F>, frame_rate_hz: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if data.len() != frames * dim {
            return Err(Error::dim("feature_sequence", &[frames, dim], &[data.len()]));
        }
        Ok(Self {
            frames,
            dim,
            data,
            frame_rate_hz,
        })
    }

    pub fn empty(dim: usize, frame_rate_hz: f64) -> Self {
        Self {
            frames: 0,
            dim,
            data: Vec::new(),
            frame_rate_hz,
        }
    }

    pub fn n_x(&self) -> usize {
        self.frames
    }

    pub fn d_x(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames as f64 / self.frame_rate_hz
    }

    /// Concatenates along time.
    pub fn concat(parts: &[&FeatureSequence<F>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyInput("feature concat"))?;
        let mut data = Vec::new();
        let mut frames = 0;
        for p in parts {
            if p.dim != first.dim {
                return Err(Error::dim("feature concat", &[first.dim], &[p.dim]));
            }
            frames += p.frames;
            data.extend_from_slice(&p.data);
        }
        Self::new(frames, first.dim, data, first.frame_rate_hz)
    }

    /// Rows `start..start+len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            frames: len,
            dim: self.dim,
            data: self.data[start * self.dim..(start + len) * self.dim].to_vec(),
            frame_rate_hz: self.frame_rate_hz,
        }
    }

    pub fn to_var(&self, tape: &mut Tape<F>, requires_grad: bool) -> Result<Var> {
        if self.frames == 0 {
            return Err(Error::EmptyInput("feature sequence has no frames"));
        }
        tape.input(self.frames, self.dim, self.data.clone(), requires_grad)
    }

    pub fn to_tensor(&self) -> Result<Tensor<F>> {
        if self.frames == 0 {
            return Err(Error::EmptyInput("feature sequence has no frames"));
        }
        Tensor::matrix(self.frames, self.dim, self.data.clone())
    }

    pub fn cast<G: Real>(&self) -> FeatureSequence<G> {
        FeatureSequence {
            frames: self.frames,
            dim: self.dim,
            data: self.data.iter().map(|v| G::c(v.f64())).collect(),
            frame_rate_hz: self.frame_rate_hz,
        }
    }
}

/// Connector hidden states `H` (`n_h × d_h`).
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSequence<F: Real = f64>(pub Tensor<F>);

impl<F: Real> HiddenSequence<F> {
    pub fn n_h(&self) -> usize {
        self.0.rows()
    }

    pub fn d_h(&self) -> usize {
        self.0.cols()
    }
}

/// Connector output `T_speech` (`n_t × d_t`).
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechTokens<F: Real = f64>(Tensor<F>);

impl<F: Real> SpeechTokens<F> {
    pub fn new(t: Tensor<F>) -> Result<Self> {
        if t.shape().len() != 2 {
            return Err(Error::dim("speech_tokens", t.shape(), &[0, 0]));
        }
        Ok(Self(t))
    }

    pub fn n_t(&self) -> usize {
        self.0.rows()
    }

    pub fn d_t(&self) -> usize {
        self.0.cols()
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.0
    }
}

/// Handle to the trainable query matrix `Q` (`n_q × d_q`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuerySet {
    pub id: ParamId,
    pub n_q: usize,
    pub d_q: usize,
}
