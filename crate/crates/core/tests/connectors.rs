use bridgekit::connectors::{
    linear_as_conv_kernel, stack_frames, Connector, ConnectorConfig, ConnectorSpec, FcConnector, FeatureSequence,
    QformerSpec,
};
use bridgekit::numcore::{gradcheck, kernels, Linear, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_seq(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureSequence<f64> {
    FeatureSequence::new(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(), 10.0).unwrap()
}

fn qf_spec(n_queries: usize, d_query: usize) -> QformerSpec {
    QformerSpec {
        n_queries,
        d_query,
        n_blocks: 2,
        n_heads: 2,
    }
}

fn all_specs() -> Vec<ConnectorSpec> {
    vec![
        ConnectorSpec::Fc { stack: 3, hidden: 6 },
        ConnectorSpec::Ca { downsample: 3, n_heads: 2 },
        ConnectorSpec::Qf(qf_spec(3, 8)),
        ConnectorSpec::SegQf {
            qformer: qf_spec(3, 8),
            segment_len: 4,
            segment_pe: true,
        },
    ]
}

fn frozen_embeddings(rng: &mut ChaCha8Rng, v: usize, d: usize) -> Tensor<f64> {
    let mut e = Tensor::matrix(v, d, (0..v * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    e.freeze();
    e
}

#[test]
fn every_connector_passes_gradcheck() {
    for seed in 0..3u64 {
        for spec in all_specs() {
            let cfg = ConnectorConfig { d_x: 8, d_t: 6, spec };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new();
            let conn = Connector::new(&cfg, &mut store, &mut rng).unwrap();
            let x = random_seq(&mut rng, 11, 8);
            let e = frozen_embeddings(&mut rng, 5, 6);
            let n_t = cfg.output_len(11);
            let w: Vec<f64> = (0..n_t * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let report = gradcheck(&mut store, 1e-5, |tape, bound| {
                let xv = x.to_var(tape, false)?;
                let ev = tape.leaf(&e);
                let out = conn.forward(tape, bound, xv, Some(ev))?;
                let wv = tape.constant(n_t, 6, w.clone())?;
                let prod = tape.mul(out, wv)?;
                tape.sum(prod)
            })
            .unwrap();
            assert!(report.passes(1e-4), "{:?} seed {seed}: {:#?}", cfg.kind(), report);
        }
    }
}

#[test]
fn text_embeddings_never_receive_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = ConnectorConfig {
        d_x: 4,
        d_t: 6,
        spec: ConnectorSpec::Ca { downsample: 2, n_heads: 2 },
    };
    let mut store = ParamStore::<f64>::new();
    let conn = Connector::new(&cfg, &mut store, &mut rng).unwrap();
    let e = frozen_embeddings(&mut rng, 7, 6);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let ev = tape.leaf(&e);
    let x = random_seq(&mut rng, 5, 4).to_var(&mut tape, false).unwrap();
    let out = conn.forward(&mut tape, &bound, x, Some(ev)).unwrap();
    let loss = tape.sum(out).unwrap();
    tape.backward(loss).unwrap();
    assert!(tape.grad(ev).is_none());
    let grads = store.collect_grads(&tape, &bound);
    assert!(grads.max_abs() > 0.0);
}

#[test]
fn ca_requires_text_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = ConnectorConfig {
        d_x: 4,
        d_t: 6,
        spec: ConnectorSpec::Ca { downsample: 2, n_heads: 2 },
    };
    let mut store = ParamStore::<f64>::new();
    let conn = Connector::new(&cfg, &mut store, &mut rng).unwrap();
    let x = random_seq(&mut rng, 5, 4);
    assert!(conn.encode(&store, &x, None).is_err());
}

#[test]
fn encode_matches_declared_output_len() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for spec in all_specs() {
        let cfg = ConnectorConfig { d_x: 8, d_t: 6, spec };
        let mut store = ParamStore::<f64>::new();
        let conn = Connector::new(&cfg, &mut store, &mut rng).unwrap();
        let e = frozen_embeddings(&mut rng, 5, 6);
        for n in [1, 7, 13] {
            let tokens = conn.encode(&store, &random_seq(&mut rng, n, 8), Some(&e)).unwrap();
            assert_eq!(tokens.n_t(), cfg.output_len(n));
            assert_eq!(tokens.d_t(), 6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn qformer_length_is_fixed(n_x in 1usize..=40, n_q in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ConnectorConfig { d_x: 4, d_t: 5, spec: ConnectorSpec::Qf(qf_spec(n_q, 4)) };
        let mut store = ParamStore::<f64>::new();
        let conn = Connector::new(&cfg, &mut store, &mut rng).unwrap();
        let tokens = conn.encode(&store, &random_seq(&mut rng, n_x, 4), None).unwrap();
        prop_assert_eq!(tokens.n_t(), n_q);
    }

    #[test]
    fn seg_qformer_length_law(n_x in 1usize..=40, len in 1usize..12, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ConnectorConfig {
            d_x: 4,
            d_t: 5,
            spec: ConnectorSpec::SegQf { qformer: qf_spec(2, 4), segment_len: len, segment_pe: true },
        };
        let mut store = ParamStore::<f64>::new();
        let conn = Connector::new(&cfg, &mut store, &mut rng).unwrap();
        let tokens = conn.encode(&store, &random_seq(&mut rng, n_x, 4), None).unwrap();
        prop_assert_eq!(tokens.n_t(), n_x.div_ceil(len) * 2);
    }

    #[test]
    fn fc_tokens_depend_only_on_their_window(
        n_x in 1usize..30, m in 1usize..5, frame in 0usize..30, seed in 0u64..1000,
    ) {
        let frame = frame % n_x;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let fc = FcConnector::new(&mut store, 3, 4, m, 5, &mut rng).unwrap();
        let conn = Connector::Fc(fc);
        let x = random_seq(&mut rng, n_x, 3);
        let mut data = x.data().to_vec();
        data[frame * 3 + 1] += 0.75;
        let y = FeatureSequence::new(n_x, 3, data, 10.0).unwrap();
        let a = conn.encode(&store, &x, None).unwrap();
        let b = conn.encode(&store, &y, None).unwrap();
        for i in 0..a.n_t() {
            if i != frame / m {
                prop_assert_eq!(a.tensor().row(i), b.tensor().row(i));
            }
        }
    }

    #[test]
    fn stacking_plus_linear_is_a_strided_convolution(
        n_x in 1usize..40, d_x in 1usize..5, m in 1usize..6, c_out in 1usize..6, seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", m * d_x, c_out, &mut rng).unwrap();
        store.get_mut(lin.bias).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let x = random_seq(&mut rng, n_x, d_x);
        let h = stack_frames(&x, m).unwrap();
        let via_linear = lin.apply(&store, h.0.data(), h.n_h());
        let kernel = linear_as_conv_kernel(&store, &lin, d_x, m);
        let via_conv = kernels::conv1d(x.data(), n_x, d_x, &kernel, store.get(lin.bias).data(), c_out, m, m);
        prop_assert_eq!(via_linear.len(), via_conv.len());
        for (a, b) in via_linear.iter().zip(&via_conv) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}
