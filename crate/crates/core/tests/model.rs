//! Model-level contracts: gradients, composition, attention, causality and padding.

use dcan::model::{
    classify_pool, label_attention, model_forward, receptive_field, residual_block, Activation, Dcan, LevelParams,
    ModelConfig, ParamVars, Pooling,
};
use dcan::model::forward::{LevelVars, WnConvVars};
use dcan::numcore::{grad_check_many, sigmoid, RngStream, Tape, Tensor, Var};
use dcan::textpipe::PAD_ID;
use proptest::prelude::*;

fn tiny_config(vocab: usize, m: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(vocab, m);
    cfg.embed_dim = 5;
    cfg.num_levels = 2;
    cfg.channels = vec![4, 3];
    cfg.projection_dim = 3;
    cfg.dropout = 0.0;
    cfg
}

fn random(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.symmetric(1.0)).collect()).unwrap()
}

/// Rebuilds the structured parameter vars from a flat list in `ParamVars::ordered` order.
fn vars_from(flat: &[Var], template: &ParamVars) -> ParamVars {
    let mut it = flat.iter().copied();
    let mut next = || it.next().unwrap();
    let embedding = next();
    let levels = template
        .levels
        .iter()
        .map(|l| {
            let mut lv = *l;
            for c in [&mut lv.conv1, &mut lv.conv2] {
                c.direction = next();
                c.gain = next();
                c.bias = c.bias.map(|_| next());
            }
            lv.projection = l.projection.map(|_| next());
            lv
        })
        .collect();
    ParamVars {
        embedding,
        levels,
        query: next(),
        classifier_weight: next(),
        classifier_bias: next(),
    }
}

/// Biases start at zero; random values exercise their gradients and the manual reference.
fn randomize_biases(model: &mut Dcan, seed: u64) {
    let mut rng = RngStream::new(seed ^ 0xb1a5);
    for l in &mut model.params.levels {
        for c in [&mut l.conv1, &mut l.conv2] {
            if let Some(b) = &mut c.bias {
                b.data_mut().iter_mut().for_each(|v| *v = rng.symmetric(0.3));
            }
        }
    }
}

fn full_model_grad_error(activation: Activation, pooling: Pooling, conv_bias: bool, seed: u64) -> f64 {
    let mut cfg = tiny_config(9, 3);
    cfg.conv_bias = conv_bias;
    cfg.activation = activation;
    cfg.pooling = pooling;
    let mut model = Dcan::new(cfg.clone(), seed).unwrap();
    randomize_biases(&mut model, seed);
    let inputs: Vec<Tensor> = model.params.named().into_iter().map(|(_, t)| t.clone()).collect();
    let mut scratch = Tape::new();
    let template = ParamVars::record(&mut scratch, &model.params);
    let ids = [3, 1, 4, 1, 5, 8, 2, 6];
    let targets = [0.9, 0.05, 0.4];
    grad_check_many(
        |tape, vars| {
            let pv = vars_from(vars, &template);
            let mut rng = RngStream::new(0);
            let out = model_forward(tape, &ids, None, &pv, &cfg, false, &mut rng)?;
            tape.bce_with_logits(out.logits, &targets)
        },
        &inputs,
        1e-6,
    )
    .unwrap()
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for (act, pool, bias) in [
        (Activation::Tanh, Pooling::Max, true),
        (Activation::Tanh, Pooling::Mean, true),
        (Activation::Relu, Pooling::Max, true),
        (Activation::Relu, Pooling::Mean, false),
    ] {
        let err = full_model_grad_error(act, pool, bias, 7);
        assert!(err < 1e-4, "{act:?}/{pool:?}/bias={bias}: {err}");
    }
}

#[test]
fn residual_block_gradients() {
    let mut cfg = tiny_config(9, 2);
    cfg.activation = Activation::Tanh;
    let mut model = Dcan::new(cfg.clone(), 3).unwrap();
    randomize_biases(&mut model, 3);
    let lp = &model.params.levels[0];
    let mut rng = RngStream::new(5);
    let x = random(&[6, cfg.embed_dim], &mut rng);
    let inputs = vec![
        x,
        lp.conv1.direction.clone(),
        lp.conv1.gain.clone(),
        lp.conv1.bias.clone().unwrap(),
        lp.conv2.direction.clone(),
        lp.conv2.gain.clone(),
        lp.conv2.bias.clone().unwrap(),
        lp.projection.clone().unwrap(),
    ];
    let err = grad_check_many(
        |tape, v| {
            let conv = |i: usize| WnConvVars {
                direction: v[i],
                gain: v[i + 1],
                bias: Some(v[i + 2]),
            };
            let lv = LevelVars {
                conv1: conv(1),
                conv2: conv(4),
                projection: Some(v[7]),
            };
            residual_block(tape, v[0], 0, &lv, &cfg, false, &mut RngStream::new(0))
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

/// Reference residual block written out by hand with plain loops.
fn manual_block(x: &Tensor, lp: &LevelParams, dilation: usize) -> Vec<f64> {
    let (n, _) = x.dims2().unwrap();
    let conv = |input: &[f64], c_in: usize, wn: &dcan::model::WnConv| -> (Vec<f64>, usize) {
        let (dir, gain) = (&wn.direction, &wn.gain);
        let (c_out, k) = (dir.shape()[0], dir.shape()[2]);
        let per = c_in * k;
        let mut out = vec![0.0; n * c_out];
        for o in 0..c_out {
            let v = &dir.data()[o * per..(o + 1) * per];
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            for s in 0..n {
                let mut acc = wn.bias.as_ref().map_or(0.0, |b| b.data()[o]);
                for c in 0..c_in {
                    for i in 0..k {
                        if s >= dilation * i {
                            acc += gain.data()[o] * v[c * k + i] / norm * input[(s - dilation * i) * c_in + c];
                        }
                    }
                }
                out[s * c_out + o] = acc.max(0.0);
            }
        }
        (out, c_out)
    };
    let c_in = x.shape()[1];
    let (a, c_out) = conv(x.data(), c_in, &lp.conv1);
    let (b, _) = conv(&a, c_out, &lp.conv2);
    let mut out = vec![0.0; n * c_out];
    for s in 0..n {
        for o in 0..c_out {
            let skip = match &lp.projection {
                Some(p) => (0..c_in).map(|c| x.at(s, c) * p.at(c, o)).sum(),
                None => x.at(s, o),
            };
            out[s * c_out + o] = (skip + b[s * c_out + o]).max(0.0);
        }
    }
    out
}

#[test]
fn residual_block_matches_manual_composition() {
    let cfg = tiny_config(9, 2);
    let mut model = Dcan::new(cfg.clone(), 11).unwrap();
    randomize_biases(&mut model, 11);
    let mut rng = RngStream::new(8);
    let mut h = random(&[10, cfg.embed_dim], &mut rng);
    for (level, lp) in model.params.levels.iter().enumerate() {
        let mut tape = Tape::new();
        let pv = ParamVars::record(&mut tape, &model.params);
        let x = tape.leaf(&h);
        let y = residual_block(&mut tape, x, level, &pv.levels[level], &cfg, false, &mut rng).unwrap();
        let got = tape.value(y).clone();
        let want = manual_block(&h, lp, cfg.dilation(level));
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        h = got;
    }
}

#[test]
fn zero_filters_reduce_block_to_activated_identity() {
    let mut cfg = tiny_config(9, 2);
    cfg.channels = vec![5, 5];
    cfg.activation = Activation::Tanh;
    let mut model = Dcan::new(cfg.clone(), 2).unwrap();
    for l in &mut model.params.levels {
        l.conv2.gain.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }
    let x = random(&[7, 5], &mut RngStream::new(1));
    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, &model.params);
    let xv = tape.leaf(&x);
    let y = residual_block(&mut tape, xv, 1, &pv.levels[1], &cfg, false, &mut RngStream::new(0)).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(x.data()) {
        assert!((a - b.tanh()).abs() < 1e-15);
    }
}

#[test]
fn attention_picks_matching_rows() {
    let mut tape = Tape::new();
    let h = tape.leaf(&Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let u = tape.leaf(&Tensor::from_rows(&[vec![10.0, 0.0], vec![0.0, 10.0]]).unwrap());
    let (a, v) = label_attention(&mut tape, h, u, None).unwrap();
    let a = tape.value(a);
    let expected = 1.0 / (1.0 + (-10.0f64).exp());
    assert!((a.at(0, 0) - expected).abs() < 1e-12);
    assert!((a.at(1, 1) - expected).abs() < 1e-12);
    assert!((a.at(0, 0) - 0.99995).abs() < 1e-5);
    let v = tape.value(v);
    assert!((v.at(0, 0) - expected).abs() < 1e-12);
    assert!((v.at(0, 1) - (1.0 - expected)).abs() < 1e-12);
}

#[test]
fn zero_query_gives_uniform_attention() {
    let mut tape = Tape::new();
    let h = tape.leaf(&random(&[5, 3], &mut RngStream::new(2)));
    let u = tape.leaf(&Tensor::zeros(&[3, 2]));
    let (a, _) = label_attention(&mut tape, h, u, None).unwrap();
    assert!(tape.value(a).data().iter().all(|&w| (w - 0.2).abs() < 1e-15));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attended_rows_are_convex_combinations(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = RngStream::new(seed);
        let n = rng.between(1, 20);
        let h_dim = rng.between(1, 5);
        let m = rng.between(1, 4);
        let h = random(&[n, h_dim], &mut rng);
        let u = Tensor::new(&[h_dim, m], (0..h_dim * m).map(|_| rng.symmetric(scale)).collect()).unwrap();
        let mut tape = Tape::new();
        let hv = tape.leaf(&h);
        let uv = tape.leaf(&u);
        let (a, v) = label_attention(&mut tape, hv, uv, None).unwrap();
        let a = tape.value(a).clone();
        let v = tape.value(v);
        for j in 0..m {
            let total: f64 = (0..n).map(|s| a.at(s, j)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for c in 0..h_dim {
                let lo = (0..n).map(|s| h.at(s, c)).fold(f64::INFINITY, f64::min);
                let hi = (0..n).map(|s| h.at(s, c)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v.at(j, c) >= lo - 1e-12 && v.at(j, c) <= hi + 1e-12);
                let mix: f64 = (0..n).map(|s| a.at(s, j) * h.at(s, c)).sum();
                prop_assert!((v.at(j, c) - mix).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bias_shift_moves_single_width_logits(seed in any::<u64>(), c in -5.0f64..5.0) {
        let mut rng = RngStream::new(seed);
        let v = random(&[3, 4], &mut rng);
        let w = random(&[1, 4], &mut rng);
        let b = random(&[1, 1], &mut rng);
        let shifted = Tensor::new(&[1, 1], vec![b.data()[0] + c]).unwrap();
        let mut tape = Tape::new();
        let (vv, wv, bv, sv) = (tape.leaf(&v), tape.leaf(&w), tape.leaf(&b), tape.leaf(&shifted));
        let (l0, _) = classify_pool(&mut tape, vv, wv, bv, Pooling::Max).unwrap();
        let (l1, _) = classify_pool(&mut tape, vv, wv, sv, Pooling::Max).unwrap();
        for (a, b) in tape.value(l0).data().iter().zip(tape.value(l1).data()) {
            prop_assert!((b - a - c).abs() < 1e-12);
        }
    }
}

#[test]
fn classify_pool_worked_example() {
    let mut tape = Tape::new();
    let v = tape.leaf(&Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap());
    let w = tape.leaf(&Tensor::from_rows(&[vec![1.0, 1.0], vec![-1.0, 0.0]]).unwrap());
    let b = tape.leaf(&Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
    let (logits, probs) = classify_pool(&mut tape, v, w, b, Pooling::Max).unwrap();
    assert_eq!(tape.value(logits).data(), &[2.0]);
    assert!((tape.value(probs).data()[0] - 0.8808).abs() < 1e-4);
    assert!((tape.value(probs).data()[0] - sigmoid(2.0)).abs() < 1e-15);
    let (logits, _) = classify_pool(&mut tape, v, w, b, Pooling::Mean).unwrap();
    assert_eq!(tape.value(logits).data(), &[0.5]);
}

#[test]
fn predictions_are_deterministic_probabilities() {
    let cfg = tiny_config(12, 4);
    let a = Dcan::new(cfg.clone(), 42).unwrap();
    let b = Dcan::new(cfg, 42).unwrap();
    assert_eq!(a, b);
    let ids = [2, 3, 11, 5, 7];
    let p = a.predict(&ids, None).unwrap();
    assert_eq!(p, b.predict(&ids, None).unwrap());
    assert_eq!(p.len(), 4);
    assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
}

#[test]
fn permuting_label_parameters_permutes_outputs() {
    let cfg = tiny_config(12, 4);
    let model = Dcan::new(cfg, 9).unwrap();
    let perm = [2, 0, 3, 1];
    let mut permuted = model.clone();
    let (h, m) = model.params.query.dims2().unwrap();
    for r in 0..h {
        for (j, &src) in perm.iter().enumerate() {
            permuted.params.query.data_mut()[r * m + j] = model.params.query.at(r, src);
        }
    }
    let ids = [4, 9, 2, 2, 10, 3];
    let p = model.predict(&ids, None).unwrap();
    let q = permuted.predict(&ids, None).unwrap();
    for (j, &src) in perm.iter().enumerate() {
        assert_eq!(q[j], p[src]);
    }
}

#[test]
fn appended_padding_does_not_change_probabilities() {
    let cfg = tiny_config(12, 3);
    let model = Dcan::new(cfg, 4).unwrap();
    let mut rng = RngStream::new(6);
    for _ in 0..20 {
        let n = rng.between(1, 15);
        let ids: Vec<usize> = (0..n).map(|_| rng.between(1, 11)).collect();
        let base = model.predict(&ids, None).unwrap();
        let pad = rng.between(1, 10);
        let mut padded = ids.clone();
        padded.extend(std::iter::repeat_n(PAD_ID, pad));
        let mask: Vec<bool> = (0..padded.len()).map(|i| i < n).collect();
        let got = model.predict(&padded, Some(&mask)).unwrap();
        for (a, b) in base.iter().zip(&got) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

/// Largest `t - s` such that perturbing input row `s` changes output row `t`.
fn farthest_influence(cfg: &ModelConfig, n: usize) -> usize {
    let mut model = Dcan::new(cfg.clone(), 1).unwrap();
    for l in &mut model.params.levels {
        for c in [&mut l.conv1, &mut l.conv2] {
            c.gain.data_mut().iter_mut().for_each(|g| *g = 1.0);
        }
    }
    let mut rng = RngStream::new(3);
    let x = Tensor::new(&[n, cfg.embed_dim], (0..n * cfg.embed_dim).map(|_| 0.5 + rng.uniform()).collect()).unwrap();
    let run = |x: &Tensor| -> Tensor {
        let mut tape = Tape::new();
        let pv = ParamVars::record(&mut tape, &model.params);
        let mut h = tape.leaf(x);
        for (l, lv) in pv.levels.iter().enumerate() {
            h = residual_block(&mut tape, h, l, lv, cfg, false, &mut RngStream::new(0)).unwrap();
        }
        tape.value(h).clone()
    };
    let base = run(&x);
    let mut bumped = x.clone();
    bumped.data_mut().iter_mut().take(cfg.embed_dim).for_each(|v| *v += 1.0);
    let moved = run(&bumped);
    let mut farthest = 0;
    for t in 0..n {
        if base.row(t) != moved.row(t) {
            farthest = t;
        }
    }
    farthest
}

#[test]
fn causal_cone_matches_receptive_field() {
    for kc in [2, 3, 5] {
        for levels in 1..=5 {
            let mut cfg = tiny_config(4, 1);
            cfg.kernel_size = kc;
            cfg.num_levels = levels;
            cfg.channels = vec![3; levels];
            cfg.embed_dim = 3;
            cfg.activation = Activation::Tanh;
            let rf = receptive_field(&cfg);
            let far = farthest_influence(&cfg, rf + 8);
            assert_eq!(far + 1, rf, "kc={kc} L={levels}");
        }
    }
}

#[test]
fn outputs_never_depend_on_later_tokens() {
    let cfg = tiny_config(12, 2);
    let model = Dcan::new(cfg.clone(), 5).unwrap();
    let ids = [3, 4, 5, 6, 7, 8, 9];
    let hidden = |ids: &[usize]| {
        let mut tape = Tape::new();
        let pv = ParamVars::record(&mut tape, &model.params);
        let out = model_forward(&mut tape, ids, None, &pv, &cfg, false, &mut RngStream::new(0)).unwrap();
        tape.value(out.hidden).clone()
    };
    let base = hidden(&ids);
    for t in 0..ids.len() {
        let mut changed = ids;
        changed[t] = 11;
        let moved = hidden(&changed);
        for s in 0..t {
            assert_eq!(base.row(s), moved.row(s));
        }
    }
}
