use nalgebra::DMatrix;
use neurogpt::encoder::TokenSequence;
use neurogpt::gpt::{
    self, build_masked_batch, causal_reconstruction_loss, decode_batch, project_tokens, DecoderConfig, MaskedBatch,
    MASK_TOKEN,
};
use neurogpt::model::{pretrain_forward, ArchConfig};
use neurogpt::tensor::gradcheck::check_params;
use neurogpt::tensor::{Float, Graph, ParamStore, Tensor};
use neurogpt::Error;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk(layers: usize, heads: usize) -> DecoderConfig {
    DecoderConfig {
        model_dim: 16,
        n_layers: layers,
        n_heads: heads,
        ff_mult: 4,
        max_positions: 12,
    }
}

fn store<F: Float>(cfg: &DecoderConfig, e: usize, seed: u64) -> ParamStore<F> {
    let mut s = ParamStore::new();
    gpt::init_params(&mut s, cfg, e, &mut ChaCha8Rng::seed_from_u64(seed));
    s
}

fn tokens<F: Float>(n: usize, e: usize, rng: &mut ChaCha8Rng) -> TokenSequence<F> {
    TokenSequence {
        tokens: Tensor::from_fn(&[n, e], |_| F::of(rng.random_range(-1.0..1.0))),
        pad_mask: vec![true; n],
    }
}

fn mask_of<F: Float>(e: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::from_fn(&[e], |_| F::of(rng.random_range(-1.0..1.0)))
}

fn loop_loss(pred: &[f64], target: &[f64], k: usize, e: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..k {
        let mut sq = 0.0;
        for j in 0..e {
            let d = pred[i * e + j] - target[i * e + j];
            sq += d * d;
        }
        total += sq;
    }
    total / k as f64
}

#[test]
fn masked_batch_structure_for_every_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = 5;
    for n in 2..=32 {
        let toks = tokens::<f64>(n, e, &mut rng);
        let m = mask_of::<f64>(e, &mut rng);
        let b = build_masked_batch(&toks, &m).unwrap();
        assert_eq!(b.sequences.shape(), &[n - 1, n, e]);
        assert_eq!(b.targets.shape(), &[n - 1, e]);
        assert_eq!(b.mask_pos, (1..n).collect::<Vec<_>>());
        for c in 0..n - 1 {
            let k = c + 1;
            let mut real = 0;
            let mut zeros = 0;
            for j in 0..n {
                let row = &b.sequences.data()[(c * n + j) * e..(c * n + j + 1) * e];
                if j < k {
                    assert_eq!(row, toks.tokens.row(j));
                    real += 1;
                } else if j == k {
                    assert_eq!(row, m.data());
                } else {
                    assert!(row.iter().all(|&v| v == 0.0));
                    zeros += 1;
                }
                assert_eq!(b.attn_mask[c][j], j <= k);
            }
            assert_eq!((real, zeros), (k, n - 1 - k));
            assert_eq!(b.targets.row(c), toks.tokens.row(k));
        }
    }
}

#[test]
fn four_tokens_give_three_copies() {
    let toks = TokenSequence {
        tokens: Tensor::<f64>::from_f64(&[4, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
        pad_mask: vec![true; 4],
    };
    let b = build_masked_batch(&toks, &Tensor::from_f64(&[1], &[9.0]).unwrap()).unwrap();
    let expect = [1.0, 9.0, 0.0, 0.0, 1.0, 2.0, 9.0, 0.0, 1.0, 2.0, 3.0, 9.0];
    assert_eq!(b.sequences.data(), &expect);
    assert_eq!(b.targets.data(), &[2.0, 3.0, 4.0]);

    let two = TokenSequence {
        tokens: Tensor::<f64>::from_f64(&[2, 1], &[1.0, 2.0]).unwrap(),
        pad_mask: vec![true; 2],
    };
    let b = build_masked_batch(&two, &Tensor::from_f64(&[1], &[9.0]).unwrap()).unwrap();
    assert_eq!(b.sequences.data(), &[1.0, 9.0]);
}

#[test]
fn padded_positions_are_never_masked() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut toks = tokens::<f64>(6, 3, &mut rng);
    toks.pad_mask = vec![true, true, true, false, false, false];
    let b = build_masked_batch(&toks, &mask_of(3, &mut rng)).unwrap();
    assert_eq!(b.mask_pos, vec![1, 2]);
    assert_eq!(b.attn_mask[1], vec![true, true, true, false, false, false]);

    toks.pad_mask = vec![true, false, true, false, false, false];
    assert!(matches!(
        build_masked_batch(&toks, &mask_of(3, &mut rng)),
        Err(Error::Parameter(_))
    ));
    toks.pad_mask = vec![true, false, false, false, false, false];
    assert!(matches!(
        build_masked_batch(&toks, &mask_of(3, &mut rng)),
        Err(Error::LossUndefined(_))
    ));
}

#[test]
fn hand_evaluated_loss() {
    let pred = Tensor::<f64>::from_f64(&[1, 2], &[1.0, 1.0]).unwrap();
    let target = Tensor::<f64>::zeros(&[1, 2]);
    assert_eq!(causal_reconstruction_loss(&pred, &target).unwrap(), 2.0);
    assert_eq!(causal_reconstruction_loss(&pred, &pred).unwrap(), 0.0);
    assert!(matches!(
        causal_reconstruction_loss(&pred, &Tensor::zeros(&[2, 2])),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn loss_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (k, e) = (4, 8);
    let p = Tensor::<f64>::from_fn(&[k, e], |_| rng.random_range(-3.0..3.0));
    let t = Tensor::<f64>::from_fn(&[k, e], |_| rng.random_range(-3.0..3.0));
    let got = causal_reconstruction_loss(&p, &t).unwrap();
    let want = loop_loss(p.data(), t.data(), k, e);
    assert!((got - want).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_quadratic_in_targets(n in 2usize..17, e in 1usize..33, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::<f64>::from_fn(&[n - 1, e], |_| rng.random_range(-2.0..2.0));
        let zero = Tensor::zeros(&[n - 1, e]);
        let l1 = causal_reconstruction_loss(&zero, &t).unwrap();
        let l2 = causal_reconstruction_loss(&zero, &t.map(|v| v * 2.0)).unwrap();
        prop_assert_eq!(l2, 4.0 * l1);
        let want = loop_loss(&vec![0.0; (n - 1) * e], t.data(), n - 1, e);
        prop_assert!((l1 - want).abs() < 1e-10);
    }
}

fn predictions(store: &ParamStore<f32>, cfg: &DecoderConfig, b: &MaskedBatch<f32>) -> Tensor<f32> {
    decode_batch(store, cfg, b).unwrap()
}

#[test]
fn prediction_ignores_content_after_mask() {
    let cfg = desk(2, 2);
    let e = 12;
    let n = 8;
    let s = store::<f32>(&cfg, e, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let toks = tokens::<f32>(n, e, &mut rng);
    let batch = build_masked_batch(&toks, &s.get(MASK_TOKEN).unwrap().value).unwrap();
    let base = predictions(&s, &cfg, &batch);
    for c in 0..n - 1 {
        let k = c + 1;
        for _ in 0..10 {
            // overwrite the zeroed suffix of copy c directly
            let mut data = batch.sequences.data().to_vec();
            for j in k + 1..n {
                for x in &mut data[(c * n + j) * e..(c * n + j + 1) * e] {
                    *x = rng.random_range(-5.0..5.0);
                }
            }
            let pert = MaskedBatch {
                sequences: Tensor::new(batch.sequences.shape(), data).unwrap(),
                ..batch.clone()
            };
            assert_eq!(predictions(&s, &cfg, &pert).row(c), base.row(c));

            // perturb the original tokens after k and rebuild
            let mut t2 = toks.clone();
            let mut data = t2.tokens.data().to_vec();
            for x in &mut data[(k + 1) * e..] {
                *x += rng.random_range(-5.0..5.0);
            }
            t2.tokens = Tensor::new(&[n, e], data).unwrap();
            let b2 = build_masked_batch(&t2, &s.get(MASK_TOKEN).unwrap().value).unwrap();
            let diff = predictions(&s, &cfg, &b2)
                .row(c)
                .iter()
                .zip(base.row(c))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max);
            assert!(diff < 1e-6);
        }
    }
}

#[test]
fn trailing_padding_is_inert() {
    let cfg = desk(2, 2);
    let e = 12;
    let s = store::<f32>(&cfg, e, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mask = s.get(MASK_TOKEN).unwrap().value.clone();
    for n in 2..8 {
        let toks = tokens::<f32>(n, e, &mut rng);
        let short = predictions(&s, &cfg, &build_masked_batch(&toks, &mask).unwrap());
        for extra in 1..=12 - n {
            let mut data = toks.tokens.data().to_vec();
            data.resize((n + extra) * e, 0.0);
            let padded = TokenSequence {
                tokens: Tensor::new(&[n + extra, e], data).unwrap(),
                pad_mask: (0..n + extra).map(|j| j < n).collect(),
            };
            let long = predictions(&s, &cfg, &build_masked_batch(&padded, &mask).unwrap());
            assert_eq!(long.shape(), short.shape());
            assert!(long.max_abs_diff(&short) < 1e-6, "n={n} extra={extra}");
        }
    }
}

fn ln(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| (v - mean) / (var + 1e-6).sqrt() * g + b)
        .collect()
}

fn lin(x: &[f64], s: &ParamStore<f64>, prefix: &str) -> Vec<f64> {
    let w = &s.get(&format!("{prefix}.weight")).unwrap().value;
    let b = s.get(&format!("{prefix}.bias")).unwrap().value.data();
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    (0..dout)
        .map(|o| b[o] + (0..din).map(|i| x[i] * w.data()[i * dout + o]).sum::<f64>())
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// One block, one head, written out position by position.
fn brute_force(s: &ParamStore<f64>, seq: &[Vec<f64>], keys: &[bool], read: usize) -> Vec<f64> {
    let p = |n: &str| s.get(n).unwrap().value.data().to_vec();
    let pos = &s.get("gpt.pos").unwrap().value;
    let h: Vec<Vec<f64>> = seq
        .iter()
        .enumerate()
        .map(|(i, x)| lin(x, s, "gpt.in_proj").iter().zip(pos.row(i)).map(|(a, b)| a + b).collect())
        .collect();
    let a_in: Vec<Vec<f64>> = h.iter().map(|x| ln(x, &p("gpt.blocks.0.ln1.gamma"), &p("gpt.blocks.0.ln1.beta"))).collect();
    let q: Vec<_> = a_in.iter().map(|x| lin(x, s, "gpt.blocks.0.attn.wq")).collect();
    let k: Vec<_> = a_in.iter().map(|x| lin(x, s, "gpt.blocks.0.attn.wk")).collect();
    let v: Vec<_> = a_in.iter().map(|x| lin(x, s, "gpt.blocks.0.attn.wv")).collect();
    let d = q[0].len();
    let i = read;
    let allowed: Vec<usize> = (0..=i).filter(|&j| keys[j]).collect();
    let scores: Vec<f64> = allowed
        .iter()
        .map(|&j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
        .collect();
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut att = vec![0.0; d];
    for (wj, &j) in w.iter().zip(&allowed) {
        for c in 0..d {
            att[c] += wj / z * v[j][c];
        }
    }
    let att = lin(&att, s, "gpt.blocks.0.attn.wo");
    let x: Vec<f64> = h[i].iter().zip(&att).map(|(a, b)| a + b).collect();
    let f = ln(&x, &p("gpt.blocks.0.ln2.gamma"), &p("gpt.blocks.0.ln2.beta"));
    let f: Vec<f64> = lin(&f, s, "gpt.blocks.0.ff.w1").into_iter().map(gelu).collect();
    let f = lin(&f, s, "gpt.blocks.0.ff.w2");
    let x: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + b).collect();
    let x = ln(&x, &p("gpt.ln_f.gamma"), &p("gpt.ln_f.beta"));
    lin(&x, s, "gpt.out_proj")
}

#[test]
fn single_block_matches_brute_force() {
    let cfg = desk(1, 1);
    let e = 6;
    let n = 5;
    let mut s = store::<f64>(&cfg, e, 7);
    // non-trivial norms and biases so every term is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let names: Vec<String> = s.names().map(String::from).collect();
    for name in names {
        let p = s.get_mut(&name).unwrap();
        let noise: Vec<f64> = (0..p.value.numel()).map(|_| rng.random_range(-0.3..0.3)).collect();
        let data = p.value.data().iter().zip(&noise).map(|(v, n)| v + n).collect();
        p.value = Tensor::new(p.value.shape(), data).unwrap();
    }
    let toks = tokens::<f64>(n, e, &mut rng);
    let batch = build_masked_batch(&toks, &s.get(MASK_TOKEN).unwrap().value).unwrap();
    let out = decode_batch(&s, &cfg, &batch).unwrap();
    for c in 0..n - 1 {
        let seq: Vec<Vec<f64>> = (0..n)
            .map(|j| batch.sequences.data()[(c * n + j) * e..(c * n + j + 1) * e].to_vec())
            .collect();
        let want = brute_force(&s, &seq, &batch.attn_mask[c], batch.mask_pos[c]);
        for (a, b) in out.row(c).iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "copy {c}: {a} vs {b}");
        }
    }
}

#[test]
fn projection_is_a_shared_linear_map() {
    let cfg = desk(1, 1);
    let e = 10;
    let s = store::<f64>(&cfg, e, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let zero = Tensor::<f64>::zeros(&[3, e]);
    let out = project_tokens(&s, &zero).unwrap();
    let bias = s.get("gpt.in_proj.bias").unwrap().value.data();
    for i in 0..3 {
        assert_eq!(out.row(i), bias);
    }

    let x = Tensor::<f64>::from_fn(&[4, e], |_| rng.random_range(-1.0..1.0));
    let w = &s.get("gpt.in_proj.weight").unwrap().value;
    let xm = DMatrix::from_row_slice(4, e, x.data());
    let wm = DMatrix::from_row_slice(e, 16, w.data());
    let mut want = xm * wm;
    for mut row in want.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    let got = project_tokens(&s, &x).unwrap();
    for i in 0..4 {
        for j in 0..16 {
            assert!((got.at(&[i, j]) - want[(i, j)]).abs() < 1e-12);
        }
    }

    let mut id = store::<f64>(&desk(1, 1), 16, 11);
    id.insert("gpt.in_proj.weight", Tensor::eye(16));
    id.insert("gpt.in_proj.bias", Tensor::zeros(&[16]));
    let x = Tensor::<f64>::from_fn(&[3, 16], |_| rng.random_range(-1.0..1.0));
    assert_eq!(project_tokens(&id, &x).unwrap(), x);
    assert!(matches!(
        project_tokens(&id, &Tensor::zeros(&[3, 15])),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn decoder_config_checks() {
    assert!(desk(1, 3).validate(4).is_err());
    assert!(desk(1, 2).validate(13).is_err());
    desk(1, 2).validate(12).unwrap();
    let d = DecoderConfig::default();
    assert_eq!((d.model_dim, d.n_layers), (1024, 6));
}

fn tiny_arch() -> ArchConfig {
    let mut a = ArchConfig::default();
    a.n_channels = 3;
    a.chunk.n_chunks = 3;
    a.chunk.chunk_len_s = 0.1;
    a.encoder.temporal_kernel = 5;
    a.encoder.n_filters = 4;
    a.encoder.pool_len = 6;
    a.encoder.pool_stride = 3;
    a.encoder.n_attn_layers = 1;
    a.encoder.n_heads = 2;
    a.encoder.token_dim = 8;
    a.decoder = DecoderConfig {
        model_dim: 8,
        n_layers: 1,
        n_heads: 2,
        ff_mult: 2,
        max_positions: 3,
    };
    a
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let arch = tiny_arch();
    let store = arch.init_params::<f64>(12).unwrap();
    let t = arch.chunk_len();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = Tensor::from_fn(&[2 * 3, 3, t], |_| rng.random_range(-1.0..1.0));
    let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
        let xv = g.input(x.clone());
        Ok(pretrain_forward(g, s, &arch, xv, &[3, 2], false)?.loss)
    };
    let reports = check_params(&store, 1e-5, 12, |_| true, f).unwrap();
    assert!(reports.iter().any(|r| r.name == MASK_TOKEN));
    for r in &reports {
        assert!(r.passes(1e-4, 1e-8), "{}: {:.3e}", r.name, r.rel_err);
    }

    // detaching targets only removes the target path into the encoder
    let grads = |detach: bool| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let loss = pretrain_forward(&mut g, &store, &arch, xv, &[3, 2], detach).unwrap().loss;
        let gr = g.backward(loss).unwrap();
        store.names().map(|n| (n.to_string(), gr.param(n).cloned())).collect::<Vec<_>>()
    };
    for ((name, a), (_, b)) in grads(false).into_iter().zip(grads(true)) {
        if name.starts_with("gpt.") {
            assert_eq!(a, b, "{name}");
        } else if !name.ends_with("wk.bias") {
            assert_ne!(a, b, "{name}");
        }
    }
}
