//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use super::{Bound, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct BlockError {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockError>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() <= tol
    }
}

/// `|g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8)
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences `(f(x+eps) − f(x−eps)) / 2eps` for every trainable entry.
pub fn gradcheck<Fun>(store: &mut ParamStore<f64>, eps: f64, f: Fun) -> Result<GradcheckReport>
where
    Fun: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new().with_finite_checks(true);
        let bound = store.bind(&mut tape);
        let out = f(&mut tape, &bound)?;
        if tape.shape(out) != (1, 1) {
            return Err(Error::dim("gradcheck", &[tape.shape(out).0, tape.shape(out).1], &[1, 1]));
        }
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new().with_finite_checks(true);
    let bound = store.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    tape.backward(out)?;
    let analytic = store.collect_grads(&tape, &bound);
    drop(tape);

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut blocks = Vec::new();
    for id in ids {
        if !store.get(id).requires_grad() {
            continue;
        }
        let n = store.get(id).numel();
        let ad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let mut worst = 0.0f64;
        for i in 0..n {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store);
            store.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            let fd = (plus? - minus?) / (2.0 * eps);
            worst = worst.max(relative_error(ad[i], fd));
        }
        blocks.push(BlockError {
            name: store.name(id).to_string(),
            elements: n,
            max_rel_err: worst,
        });
    }
    Ok(GradcheckReport { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Init, Tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares_is_exact() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        let report = gradcheck(&mut store, 1e-5, |t, b| {
            let sq = t.mul(b[x], b[x])?;
            t.sum(sq)
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-8, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_gradient_both_ways() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::matrix(1, 3, vec![0.3, -1.0, 4.0]).unwrap()).unwrap();
        let report = gradcheck(&mut store, 1e-5, |t, b| {
            let z = t.scale(b[x], 0.0)?;
            t.sum(z)
        })
        .unwrap();
        assert_eq!(report.max_rel_err(), 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at exactly 0 has a kink; central differences see slope 1/2, the
        // tape uses 0.
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::matrix(1, 1, vec![0.0]).unwrap()).unwrap();
        let report = gradcheck(&mut store, 1e-5, |t, b| {
            let r = t.relu(b[x])?;
            t.sum(r)
        })
        .unwrap();
        assert!(!report.passes(1e-4));
    }

    #[test]
    fn non_finite_intermediate_names_the_op() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::matrix(1, 1, vec![f64::MAX]).unwrap()).unwrap();
        let err = gradcheck(&mut store, 1e-5, |t, b| {
            let y = t.scale(b[x], 4.0)?;
            t.sum(y)
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "scale" }));
    }

    fn weighted_sum(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
        let (r, c) = t.shape(y);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = t.constant(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let p = t.mul(y, w)?;
        t.sum(p)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        /// Every primitive's backward agrees with central differences on
        /// random small shapes. Rows of width 2 are avoided: layer norm of two
        /// entries is ±1 up to eps and its gradient is pure roundoff.
        #[test]
        fn primitives_match_finite_differences(seed in 0u64..1000, m in 1usize..4, k in 1usize..4, n in 3usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new();
            let a = store.init("a", m, k, Init::Normal(1.0), &mut rng).unwrap();
            let b = store.init("b", k, n, Init::Normal(1.0), &mut rng).unwrap();
            let c = store.init("c", m, n, Init::Normal(1.0), &mut rng).unwrap();
            let row = store.init("row", 1, n, Init::Normal(1.0), &mut rng).unwrap();
            let gain = store.init("gain", 1, n, Init::Normal(1.0), &mut rng).unwrap();
            let table = store.init("table", 5, n, Init::Normal(1.0), &mut rng).unwrap();
            let report = gradcheck(&mut store, 1e-5, |t, bd| {
                let ab = t.matmul(bd[a], bd[b])?;
                let abt = t.matmul_nt(bd[c], ab)?; // m×m
                let abt = t.transpose(abt)?;
                let s = t.softmax_rows(abt)?;
                let back = t.matmul(s, bd[c])?; // m×n
                let sum = t.add(back, ab)?;
                let diff = t.sub(sum, bd[c])?;
                let biased = t.add_row(diff, bd[row])?;
                let ln = t.layernorm(biased, bd[gain], bd[row], 1e-5)?;
                let g = t.gelu(ln)?;
                let prod = t.mul(g, ab)?;
                let scaled = t.scale(prod, 0.7)?;
                let emb = t.gather_rows(bd[table], &[4, 0, 4])?;
                let stacked = t.concat_rows(&[scaled, emb])?;
                let part = t.slice_rows(stacked, 1, m + 1)?;
                let left = t.slice_cols(part, 0, 1)?;
                let right = t.slice_cols(part, 1, n - 1)?;
                let wide = t.concat_cols(&[right, left, right])?;
                let logits = t.slice_cols(wide, 0, n)?;
                let targets: Vec<usize> = (0..m + 1).map(|i| i % n).collect();
                let weights = vec![0.5; m + 1];
                let ce = t.cross_entropy(logits, &targets, &weights)?;
                let tail = weighted_sum(t, wide, seed)?;
                let r = t.relu(wide)?;
                let rs = weighted_sum(t, r, seed + 1)?;
                let total = t.add(ce, tail)?;
                t.add(total, rs)
            }).unwrap();
            prop_assert!(report.passes(1e-4), "{:?}", report);
        }
    }
}
