use std::io::{Read, Write};

use super::Real;
use crate::error::{Error, Result};

/// Magic prefix of the flat binary tensor format.
pub const TENSOR_MAGIC: &[u8; 8] = b"BKTENSR1";

/// Dense row-major tensor.
///
/// A frozen tensor refuses `set_requires_grad(true)`; this is how frozen
/// endpoints and checkpoint blobs flagged as frozen are protected.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F: Real = f64> {
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    frozen: bool,
    grad: Option<Vec<F>>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            frozen: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![F::zero(); numel]).expect("valid shape")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Format("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = F::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Rows of the tensor viewed as a matrix; a vector is one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            r => self.shape[..r - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols() + j]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) -> Result<()> {
        if on && self.frozen {
            return Err(Error::Frozen(format!("{:?}", self.shape)));
        }
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the tensor frozen and drops any gradient state.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.requires_grad = false;
        self.grad = None;
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut Option<Vec<F>> {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn all_finite(&self) -> bool {
        super::kernels::all_finite(&self.data)
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::c(v.f64())).collect(),
            requires_grad: self.requires_grad,
            frozen: self.frozen,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| G::c(v.f64())).collect()),
        }
    }

    /// Writes `BKTENSR1`, u32 rank, u64 dims, then little-endian f64 payload.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.f64().to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.shape.len() + 8 * self.data.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Format("bad tensor magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let rank = u32::from_le_bytes(b4) as usize;
        if rank > 16 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut b8 = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut b8)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        let mut payload = vec![0u8; numel * 8];
        r.read_exact(&mut payload)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| F::c(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_mismatched_payload() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn frozen_tensor_refuses_grad() {
        let mut t = Tensor::<f64>::zeros(&[2, 2]);
        t.freeze();
        assert!(matches!(t.set_requires_grad(true), Err(Error::Frozen(_))));
        assert!(t.set_requires_grad(false).is_ok());
    }

    #[test]
    fn binary_layout_is_documented_one() {
        let t = Tensor::<f64>::matrix(1, 2, vec![1.0, -2.5]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..8], b"BKTENSR1");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &1u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &2u64.to_le_bytes());
        assert_eq!(&bytes[28..36], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[36..44], &(-2.5f64).to_le_bytes());
        assert_eq!(bytes.len(), 44);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let bytes = Tensor::<f64>::zeros(&[3, 3]).to_bytes();
        assert!(Tensor::<f64>::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn serialization_round_trips(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64 - 500.0) / 7.0)
                .collect();
            let t = Tensor::matrix(rows, cols, data).unwrap();
            let back = Tensor::<f64>::read_from(&mut t.to_bytes().as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
