use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn spec(d: usize, heads: usize) -> DecoderLayerSpec {
    DecoderLayerSpec {
        d_model: d,
        heads,
        ff_dim: 2 * d,
        dropout_rate: 0.0,
    }
}

#[test]
fn softmax_uniform_and_single_survivor() {
    let p = masked_softmax(&[0.0f64, 0.0, 0.0], &[true; 3]).unwrap();
    for v in &p {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let p = masked_softmax(&[5.0, -2.0, 7.0], &[false, true, false]).unwrap();
    assert_eq!(p, vec![0.0, 1.0, 0.0]);
}

#[test]
fn softmax_two_logits_matches_formula() {
    let p = masked_softmax(&[1.0f64, 2.0], &[true, true]).unwrap();
    let e1 = 1f64.exp();
    let e2 = 2f64.exp();
    assert!((p[0] - e1 / (e1 + e2)).abs() < 1e-15);
    assert!((p[0] - 0.26894).abs() < 1e-5);
    assert!((p[1] - 0.73106).abs() < 1e-5);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn softmax_all_masked_is_an_error() {
    let err = masked_softmax(&[1.0, 2.0], &[false, false]).unwrap_err();
    assert!(matches!(err, Error::EmptyAttentionRow { .. }));
    assert_eq!(err.to_string(), "empty attention row 0");
}

#[test]
fn softmax_is_stable_for_large_logits() {
    let p = masked_softmax(&[1000.0f64, 1001.0, -1000.0], &[true; 3]).unwrap();
    assert!(p.iter().all(|v| v.is_finite()));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn cross_entropy_examples() {
    let (loss, grad) = binary_cross_entropy_from_logits([0.0f64, 0.0], true);
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(grad, [0.5, -0.5]);
    let (loss, _) = binary_cross_entropy_from_logits([-10.0f64, 10.0], true);
    // ln(1 + e^-20)
    assert!((loss - 2.061_153_620_314_381e-9).abs() < 1e-20);
    let (_, grad) = binary_cross_entropy_from_logits([0.0f64, 0.0], false);
    assert_eq!(grad, [-0.5, 0.5]);
}

fn identity_attention_store(d: usize) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    for w in ["wq", "wk", "wv", "wo"] {
        store.insert(format!("att.{w}"), Matrix::identity(d)).unwrap();
    }
    for b in ["bq", "bv", "bo"] {
        store.insert(format!("att.{b}"), Matrix::zeros(1, d)).unwrap();
    }
    store
}

#[test]
fn attention_single_key_returns_value_row() {
    let store = identity_attention_store(4);
    let mut g = Graph::new(&store);
    let q = g.constant(Matrix::row_vector(&[0.3, -0.1, 0.2, 0.9]));
    let v = g.constant(Matrix::row_vector(&[1.0, 2.0, 3.0, 4.0]));
    let out = multi_head_attention(&mut g, q, v, v, &AttentionMask::full(1, 1), "att", 2).unwrap();
    assert_eq!(g.value(out).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn attention_rejects_mismatched_shapes() {
    let store = identity_attention_store(4);
    let mut g = Graph::new(&store);
    let q = g.constant(Matrix::zeros(2, 4));
    let kv = g.constant(Matrix::zeros(3, 4));
    let err = multi_head_attention(&mut g, q, kv, kv, &AttentionMask::full(2, 2), "att", 2);
    assert!(matches!(err, Err(Error::Shape(_))));
}

fn random_attention_store(d: usize, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    register_attention(&mut store, "att", d, rng).unwrap();
    store
}

#[test]
fn attention_ignores_fully_masked_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = 8;
    let store = random_attention_store(d, &mut rng);
    let q = random_matrix(3, d, &mut rng);
    let kv = random_matrix(5, d, &mut rng);
    let mask = AttentionMask::from_key_validity(3, &[true, false, true, true, false]).unwrap();
    let run = |kv: &Matrix<f64>| {
        let mut g = Graph::new(&store);
        let qn = g.constant(q.clone());
        let kn = g.constant(kv.clone());
        let out = multi_head_attention(&mut g, qn, kn, kn, &mask, "att", 2).unwrap();
        g.value(out).clone()
    };
    let base = run(&kv);
    let mut perturbed = kv.clone();
    for c in 0..d {
        perturbed.set(1, c, 1e6 * (c as f64 + 1.0));
        perturbed.set(4, c, -3.0e3);
    }
    assert_eq!(base, run(&perturbed));
}

/// Hand-rolled per-head attention over plain vectors.
fn attention_oracle(store: &ParamStore<f64>, q: &Matrix<f64>, kv: &Matrix<f64>, heads: usize) -> Vec<Vec<f64>> {
    let p = |n: &str| store.get(&format!("att.{n}")).unwrap().clone();
    let (wq, bq, wk, wv, bv, wo, bo) = (p("wq"), p("bq"), p("wk"), p("wv"), p("bv"), p("wo"), p("bo"));
    let d = q.cols();
    let dh = d / heads;
    let proj = |x: &[f64], w: &Matrix<f64>, b: Option<&Matrix<f64>>| -> Vec<f64> {
        (0..d)
            .map(|j| {
                let mut s = b.map_or(0.0, |b| b.get(0, j));
                for (i, xi) in x.iter().enumerate() {
                    s += xi * w.get(i, j);
                }
                s
            })
            .collect()
    };
    let qs: Vec<Vec<f64>> = (0..q.rows()).map(|r| proj(q.row(r), &wq, Some(&bq))).collect();
    let ks: Vec<Vec<f64>> = (0..kv.rows()).map(|r| proj(kv.row(r), &wk, None)).collect();
    let vs: Vec<Vec<f64>> = (0..kv.rows()).map(|r| proj(kv.row(r), &wv, Some(&bv))).collect();
    let mut out = Vec::new();
    for qi in &qs {
        let mut merged = vec![0.0; d];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let logits: Vec<f64> = ks
                .iter()
                .map(|k| cols.clone().map(|c| qi[c] * k[c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols {
                merged[c] = e.iter().zip(&vs).map(|(w, v)| w / z * v[c]).sum();
            }
        }
        out.push(proj(&merged, &wo, Some(&bo)));
    }
    out
}

#[test]
fn attention_matches_per_head_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 6;
    let store = random_attention_store(d, &mut rng);
    let q = random_matrix(2, d, &mut rng);
    let kv = random_matrix(3, d, &mut rng);
    let mut g = Graph::new(&store);
    let qn = g.constant(q.clone());
    let kn = g.constant(kv.clone());
    let out = multi_head_attention(&mut g, qn, kn, kn, &AttentionMask::full(2, 3), "att", 3).unwrap();
    let expected = attention_oracle(&store, &q, &kv, 3);
    for (r, row) in expected.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            assert!((g.value(out).get(r, c) - v).abs() < 1e-12);
        }
    }
}

fn layer_store(spec: &DecoderLayerSpec, seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    spec.register(&mut store, "layer", &mut rng).unwrap();
    store
}

#[test]
fn decoder_layer_without_memory_skips_cross_attention() {
    let spec = spec(8, 2);
    let store = layer_store(&spec, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_matrix(4, 8, &mut rng);
    let mut g = Graph::new(&store);
    let xn = g.constant(x);
    let out = transformer_decoder_layer(&mut g, xn, None, &AttentionMask::causal(4), &spec, "layer", &mut ForwardMode::inference()).unwrap();
    let target = g.constant(Matrix::zeros(4, 8));
    let diff = g.add(out, target).unwrap();
    let loss_rows = g.slice_cols(diff, 0, 2).unwrap();
    let loss = g.cross_entropy(loss_rows, &[Some(0), Some(1), Some(1), Some(0)]).unwrap().unwrap();
    let grads = g.backward(loss).unwrap();
    let cross = store.id("layer.cross_attn.wq").unwrap();
    assert!(grads.get(cross).is_none());
    assert!(grads.get(store.id("layer.self_attn.wq").unwrap()).is_some());
}

#[test]
fn decoder_layer_inference_is_deterministic_and_causal() {
    let spec = DecoderLayerSpec {
        dropout_rate: 0.3,
        ..spec(8, 4)
    };
    let store = layer_store(&spec, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_matrix(6, 8, &mut rng);
    let mem = random_matrix(3, 8, &mut rng);
    let mask = AttentionMask::causal(6);
    let cross = AttentionMask::full(6, 3);
    let run = |x: &Matrix<f64>| {
        let mut g = Graph::new(&store);
        let xn = g.constant(x.clone());
        let mn = g.constant(mem.clone());
        let out = transformer_decoder_layer(&mut g, xn, Some((mn, &cross)), &mask, &spec, "layer", &mut ForwardMode::inference()).unwrap();
        g.value(out).clone()
    };
    let a = run(&x);
    assert_eq!(a, run(&x));
    for t in 0..5 {
        let mut p = x.clone();
        for r in t + 1..6 {
            for c in 0..8 {
                p.set(r, c, rng.gen_range(-50.0..50.0));
            }
        }
        let b = run(&p);
        for r in 0..=t {
            assert_eq!(a.row(r), b.row(r), "row {r} changed when rows > {t} were perturbed");
        }
    }
}

#[test]
fn dropout_only_in_train_mode() {
    let spec = DecoderLayerSpec {
        dropout_rate: 0.5,
        ..spec(8, 2)
    };
    let store = layer_store(&spec, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_matrix(3, 8, &mut rng);
    let run = |mut mode: ForwardMode| {
        let mut g = Graph::new(&store);
        let xn = g.constant(x.clone());
        let out = transformer_decoder_layer(&mut g, xn, None, &AttentionMask::causal(3), &spec, "layer", &mut mode).unwrap();
        g.value(out).clone()
    };
    let inf = run(ForwardMode::inference());
    assert_ne!(inf, run(ForwardMode::train(1)));
    assert_eq!(run(ForwardMode::train(1)), run(ForwardMode::train(1)));
}

#[test]
fn gradient_check_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    store.insert("p", random_matrix(4, 5, &mut rng)).unwrap();
    store.insert("q", random_matrix(1, 3, &mut rng)).unwrap();
    let loss_fn = |s: &ParamStore<f64>| {
        let mut loss = 0.0;
        let mut grads = Vec::new();
        for p in s.iter() {
            loss += 0.5 * p.value.as_slice().iter().map(|v| v * v).sum::<f64>();
            grads.push(Some(p.value.clone()));
        }
        Ok((loss, Gradients::from_vec(grads)))
    };
    let report = gradient_check(loss_fn, &mut store, 1e-5, 50, 1).unwrap();
    assert_eq!(report.checked, 50);
    assert!(report.max_rel_error < 1e-8, "{report:?}");
}

#[test]
fn gradient_check_decoder_layer_with_cross_entropy() {
    let spec = spec(8, 2);
    let mut store = layer_store(&spec, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    store.insert("head.w", random_matrix(8, 2, &mut rng)).unwrap();
    store.insert("head.b", random_matrix(1, 2, &mut rng)).unwrap();
    let x = random_matrix(5, 8, &mut rng);
    let mem = random_matrix(4, 8, &mut rng);
    let self_mask = AttentionMask::causal_with_validity(&[false, true, true, true, true]);
    let cross = AttentionMask::from_key_validity(5, &[true, true, false, true]).unwrap();
    let targets = [None, Some(1), Some(0), Some(1), Some(1)];
    let loss_fn = |s: &ParamStore<f64>| {
        let mut g = Graph::new(s);
        let xn = g.constant(x.clone());
        let mn = g.constant(mem.clone());
        let h = transformer_decoder_layer(&mut g, xn, Some((mn, &cross)), &self_mask, &spec, "layer", &mut ForwardMode::inference())?;
        let logits = linear(&mut g, h, "head")?;
        let loss = g.cross_entropy(logits, &targets)?.unwrap();
        Ok((g.value(loss).get(0, 0), g.backward(loss)?))
    };
    let report = gradient_check(loss_fn, &mut store, 1e-5, 300, 2).unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn gradient_check_rejects_non_finite_loss() {
    let mut store = ParamStore::new();
    store.insert("p", Matrix::filled(1, 1, 1.0)).unwrap();
    let err = gradient_check(|_| Ok((f64::NAN, Gradients::empty(1))), &mut store, 1e-5, 1, 0);
    assert!(matches!(err, Err(Error::NonFinite(_))));
}

#[test]
fn f32_layer_runs() {
    let spec = spec(8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f32>::new();
    spec.register(&mut store, "layer", &mut rng).unwrap();
    let mut g = Graph::new(&store);
    let xn = g.constant(Matrix::filled(3, 8, 0.5f32));
    let out = transformer_decoder_layer(&mut g, xn, None, &AttentionMask::causal(3), &spec, "layer", &mut ForwardMode::inference()).unwrap();
    assert!(g.value(out).is_finite());
}
