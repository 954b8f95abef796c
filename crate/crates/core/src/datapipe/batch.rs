use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Sample indices for one step, with each row's target mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// Target counts per row (transcript length plus EOS).
    pub lengths: Vec<usize>,
}

impl Batch {
    /// Rows are padded to the longest target sequence in the batch.
    pub fn padded_len(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }

    pub fn mask(&self) -> Vec<Vec<bool>> {
        let n = self.padded_len();
        self.lengths.iter().map(|&l| (0..n).map(|i| i < l).collect()).collect()
    }

    pub fn target_count(&self) -> usize {
        self.lengths.iter().sum()
    }
}

/// One shuffled epoch of batches over samples with the given transcript
/// lengths. The last batch may be short.
pub fn make_batches<R: Rng + ?Sized>(transcript_lens: &[usize], batch_size: usize, rng: &mut R) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..transcript_lens.len()).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .map(|c| Batch {
            indices: c.to_vec(),
            lengths: c.iter().map(|&i| transcript_lens[i] + 1).collect(),
        })
        .collect())
}

/// Endless stream of batches, reshuffled at every epoch boundary.
pub struct BatchStream<R: Rng> {
    lens: Vec<usize>,
    batch_size: usize,
    rng: R,
    pending: std::vec::IntoIter<Batch>,
    pub epoch: usize,
}

impl<R: Rng> BatchStream<R> {
    pub fn new(transcript_lens: Vec<usize>, batch_size: usize, rng: R) -> Result<Self> {
        if transcript_lens.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(Self {
            lens: transcript_lens,
            batch_size,
            rng,
            pending: Vec::new().into_iter(),
            epoch: 0,
        })
    }
}

impl<R: Rng> Iterator for BatchStream<R> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if let Some(b) = self.pending.next() {
            return Some(b);
        }
        let batches = make_batches(&self.lens, self.batch_size, &mut self.rng).ok()?;
        self.epoch += 1;
        self.pending = batches.into_iter();
        self.pending.next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_batches_follow_the_shuffle() {
        let lens = vec![3; 10];
        let batches = make_batches(&lens, 1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut order: Vec<usize> = (0..10).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(batches.iter().map(|b| b.indices[0]).collect::<Vec<_>>(), order);
    }

    #[test]
    fn same_seed_same_batches() {
        let lens: Vec<usize> = (0..37).map(|i| i % 12 + 1).collect();
        let a: Vec<Batch> = BatchStream::new(lens.clone(), 8, ChaCha8Rng::seed_from_u64(9)).unwrap().take(20).collect();
        let b: Vec<Batch> = BatchStream::new(lens, 8, ChaCha8Rng::seed_from_u64(9)).unwrap().take(20).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn epochs_cover_every_sample_once() {
        let lens = vec![1; 23];
        let mut s = BatchStream::new(lens, 5, ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next().unwrap().indices).collect();
        seen.sort();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        assert_eq!(s.epoch, 1);
        s.next();
        assert_eq!(s.epoch, 2);
    }

    #[test]
    fn mask_pads_to_longest() {
        let b = Batch {
            indices: vec![0, 1],
            lengths: vec![2, 4],
        };
        assert_eq!(b.mask(), vec![vec![true, true, false, false], vec![true; 4]]);
        assert_eq!(b.target_count(), 6);
    }
}
