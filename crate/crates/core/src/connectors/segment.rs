use super::{FeatureSequence, QFormer};
use crate::error::{Error, Result};
use crate::numcore::{kernels, Bound, Real, Tape, Var};

/// Splits `x` into `ceil(n_x/L)` contiguous segments of exactly `L` frames;
/// the last one is zero-padded.
pub fn segment_split<F: Real>(x: &FeatureSequence<F>, len: usize) -> Result<Vec<FeatureSequence<F>>> {
    if len == 0 {
        return Err(Error::Config("segment length must be >= 1".into()));
    }
    if x.n_x() == 0 {
        return Err(Error::EmptyInput("segment_split"));
    }
    let n = x.n_x().div_ceil(len);
    let mut data = x.data().to_vec();
    data.resize(n * len * x.d_x(), F::zero());
    data.chunks_exact(len * x.d_x())
        .map(|c| FeatureSequence::new(len, x.d_x(), c.to_vec(), x.frame_rate_hz))
        .collect()
}

pub fn segment_split_var<F: Real>(tape: &mut Tape<F>, x: Var, len: usize) -> Result<Vec<Var>> {
    if len == 0 {
        return Err(Error::Config("segment length must be >= 1".into()));
    }
    let (n_x, _) = tape.shape(x);
    if n_x == 0 {
        return Err(Error::EmptyInput("segment_split"));
    }
    let n = n_x.div_ceil(len);
    let padded = if n * len == n_x { x } else { tape.pad_rows(x, n * len)? };
    (0..n).map(|i| tape.slice_rows(padded, i * len, len)).collect()
}

/// Sinusoid embedding of segment `i` (1-based) at position `i - 1`.
pub fn segment_pe(i: usize, d_x: usize) -> Result<Vec<f64>> {
    if i == 0 {
        return Err(Error::Config("segment indices start at 1".into()));
    }
    Ok(kernels::sinusoid((i - 1) as f64, d_x))
}

/// One shared [`QFormer`] applied to each length-`L` segment (plus its
/// segment embedding), outputs concatenated in order.
#[derive(Clone, Debug)]
pub struct SegQFormer {
    pub qformer: QFormer,
    pub segment_len: usize,
    pub segment_pe: bool,
}

impl SegQFormer {
    pub fn new(qformer: QFormer, segment_len: usize, segment_pe: bool) -> Result<Self> {
        if segment_len == 0 {
            return Err(Error::Config("segment length must be >= 1".into()));
        }
        Ok(Self {
            qformer,
            segment_len,
            segment_pe,
        })
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Var> {
        let (_, d_x) = tape.shape(x);
        let segments = segment_split_var(tape, x, self.segment_len)?;
        let mut outs = Vec::with_capacity(segments.len());
        for (i, seg) in segments.into_iter().enumerate() {
            let seg = if self.segment_pe {
                let pe = segment_pe(i + 1, d_x)?.into_iter().map(F::c).collect();
                let pe = tape.constant(1, d_x, pe)?;
                tape.add_row(seg, pe)?
            } else {
                seg
            };
            outs.push(self.qformer.forward(tape, bound, seg)?);
        }
        if outs.len() == 1 {
            return Ok(outs[0]);
        }
        tape.concat_rows(&outs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectors::QformerSpec;
    use crate::numcore::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(n: usize, d: usize) -> FeatureSequence<f64> {
        FeatureSequence::new(n, d, (0..n * d).map(|v| v as f64 + 1.0).collect(), 10.0).unwrap()
    }

    #[test]
    fn split_counts_and_padding() {
        assert_eq!(segment_split(&seq(3000, 1), 1500).unwrap().len(), 2);
        assert_eq!(segment_split(&seq(1500, 1), 1500).unwrap().len(), 1);
        let s = segment_split(&seq(1501, 2), 1500).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].row(0), &[3001.0, 3002.0]);
        assert!(s[1].data()[2..].iter().all(|&v| v == 0.0));
        assert_eq!(s[1].n_x(), 1500);
    }

    #[test]
    fn tape_split_matches_eager() {
        let x = seq(7, 2);
        let mut tape = Tape::new();
        let v = x.to_var(&mut tape, false).unwrap();
        let parts = segment_split_var(&mut tape, v, 3).unwrap();
        let eager = segment_split(&x, 3).unwrap();
        assert_eq!(parts.len(), eager.len());
        for (p, e) in parts.iter().zip(&eager) {
            assert_eq!(tape.value(*p), e.data());
        }
    }

    #[test]
    fn pe_values() {
        let p1 = segment_pe(1, 6).unwrap();
        assert_eq!(p1, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let p2 = segment_pe(2, 4).unwrap();
        let f = 10000f64.powf(-0.5);
        let expect = [1f64.sin(), 1f64.cos(), f.sin(), f.cos()];
        for (a, b) in p2.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(segment_pe(0, 4).is_err());
        for i in 1..50 {
            assert!(segment_pe(i, 7).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
    }

    fn build(pe: bool) -> (ParamStore<f64>, SegQFormer) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let spec = QformerSpec {
            n_queries: 3,
            d_query: 4,
            n_blocks: 2,
            n_heads: 2,
        };
        let qf = QFormer::new(&mut store, "qf", 4, 5, &spec, &mut rng).unwrap();
        (store, SegQFormer::new(qf, 4, pe).unwrap())
    }

    fn forward(store: &ParamStore<f64>, m: &SegQFormer, data: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.input(data.len() / 4, 4, data.to_vec(), false).unwrap();
        let out = m.forward(&mut tape, &b, x).unwrap();
        tape.value(out).to_vec()
    }

    #[test]
    fn single_segment_is_plain_qformer_with_first_pe() {
        let (store, seg) = build(true);
        let data: Vec<f64> = (0..16).map(|v| (v as f64 * 0.7).sin()).collect();
        let a = forward(&store, &seg, &data);
        let shifted: Vec<f64> = data
            .chunks(4)
            .flat_map(|r| r.iter().zip([0.0, 1.0, 0.0, 1.0]).map(|(x, p)| x + p).collect::<Vec<_>>())
            .collect();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.input(4, 4, shifted, false).unwrap();
        let out = seg.qformer.forward(&mut tape, &b, x).unwrap();
        assert_eq!(a.len(), 15);
        for (x, y) in a.iter().zip(tape.value(out)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_segments_swaps_blocks_without_pe() {
        let (store, seg) = build(false);
        let s1: Vec<f64> = (0..16).map(|v| (v as f64).sin()).collect();
        let s2: Vec<f64> = (0..16).map(|v| (v as f64 * 0.3).cos()).collect();
        let a = forward(&store, &seg, &[s1.clone(), s2.clone()].concat());
        let b = forward(&store, &seg, &[s2, s1].concat());
        assert_eq!(a[..15], b[15..]);
        assert_eq!(a[15..], b[..15]);

        let (store, seg) = build(true);
        let s1: Vec<f64> = (0..16).map(|v| (v as f64).sin()).collect();
        let s2: Vec<f64> = (0..16).map(|v| (v as f64 * 0.3).cos()).collect();
        let a = forward(&store, &seg, &[s1.clone(), s2.clone()].concat());
        let b = forward(&store, &seg, &[s2, s1].concat());
        assert_ne!(a[..15], b[15..]);
    }

    #[test]
    fn output_length_law() {
        let (store, seg) = build(true);
        for n in [1usize, 4, 5, 9, 12] {
            let data: Vec<f64> = (0..n * 4).map(|v| v as f64 * 0.01).collect();
            assert_eq!(forward(&store, &seg, &data).len(), n.div_ceil(4) * 3 * 5);
        }
    }
}
