use super::*;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.gen_range(-1.0..1.0))
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.gen_range(-1.0..1.0))
}

fn tiny(seed: u64) -> FusionParams {
    let mut c = FusionConfig::new(3, 8, 4);
    c.n_heads = 2;
    let mut p = FusionParams::init(c, seed).unwrap();
    // non-trivial running statistics and affine parameters
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for rs in &mut p.running {
        rs.mean = rand_vec(&mut rng, 8) * 0.3;
        rs.var = rand_vec(&mut rng, 8).mapv(|v| 0.5 + v.abs());
    }
    for name in NORM_LAYERS {
        *p.get_mut(&format!("{name}.gamma")) += &(rand_mat(&mut rng, 1, 8) * 0.2);
        *p.get_mut(&format!("{name}.beta")) += &(rand_mat(&mut rng, 1, 8) * 0.2);
    }
    p
}

fn sample(rng: &mut ChaCha8Rng, t: usize, f: usize, dt: usize, label: f64) -> Sample {
    Sample {
        id: "s".into(),
        ts: rand_mat(rng, t, f),
        note: rand_vec(rng, dt),
        rag: rand_vec(rng, dt),
        label,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-gate scalar recomputation of the recurrence.
fn gru_oracle(ts: &Array2<f64>, p: &FusionParams) -> Vec<Vec<f64>> {
    let d = p.config.d;
    let w = |n: &str| p.get(n).clone();
    let (wir, wiz, win) = (w("gru.w_ir"), w("gru.w_iz"), w("gru.w_in"));
    let (whr, whz, whn) = (w("gru.w_hr"), w("gru.w_hz"), w("gru.w_hn"));
    let (bir, biz, bin) = (w("gru.b_ir"), w("gru.b_iz"), w("gru.b_in"));
    let (bhr, bhz, bhn) = (w("gru.b_hr"), w("gru.b_hz"), w("gru.b_hn"));
    let mut h = vec![0.0; d];
    let mut out = Vec::new();
    for x in ts.rows() {
        let mut next = vec![0.0; d];
        for j in 0..d {
            let mut r = bir[[0, j]] + bhr[[0, j]];
            let mut z = biz[[0, j]] + bhz[[0, j]];
            let mut nx = bin[[0, j]];
            let mut nh = bhn[[0, j]];
            for (i, xi) in x.iter().enumerate() {
                r += xi * wir[[i, j]];
                z += xi * wiz[[i, j]];
                nx += xi * win[[i, j]];
            }
            for (k, hk) in h.iter().enumerate() {
                r += hk * whr[[k, j]];
                z += hk * whz[[k, j]];
                nh += hk * whn[[k, j]];
            }
            let (r, z) = (sigmoid(r), sigmoid(z));
            let n = (nx + r * nh).tanh();
            next[j] = (1.0 - z) * n + z * h[j];
        }
        h = next;
        out.push(h.clone());
    }
    out
}

#[test]
fn gru_zero_fixed_point() {
    let mut p = tiny(0);
    for (name, t) in p.names.clone().iter().zip(p.tensors.iter_mut()) {
        if name.starts_with("gru.") {
            t.fill(0.0);
        }
    }
    let (states, pooled) = encode_timeseries(&Array2::zeros((4, 3)), &p).unwrap();
    assert!(states.iter().chain(pooled.iter()).all(|v| *v == 0.0));
}

#[test]
fn gru_shapes_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..10 {
        let p = tiny(seed);
        let ts = rand_mat(&mut rng, 5, 3);
        let (states, pooled) = encode_timeseries(&ts, &p).unwrap();
        assert_eq!(states.dim(), (5, 8));
        assert_eq!(pooled.len(), 8);
        let oracle = gru_oracle(&ts, &p);
        for (t, row) in oracle.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((states[[t, j]] - v).abs() < 1e-10);
            }
        }
        assert_eq!(pooled, states.row(4));
    }
    let p = tiny(0);
    assert!(encode_timeseries(&array![[f64::NAN, 0.0, 0.0]], &p).is_err());
    assert!(encode_timeseries(&Array2::zeros((2, 4)), &p).is_err());
}

#[test]
fn padded_batch_matches_single_encodings() {
    let p = tiny(1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = sample(&mut rng, 2, 3, 4, 1.0);
    let b = sample(&mut rng, 5, 3, 4, 0.0);
    let out = forward_batch(&p, &Batch::new(&[&a, &b]).unwrap(), Mode::Eval).unwrap();
    let ya = forward_one(&a, &p).unwrap().y_hat;
    let yb = forward_one(&b, &p).unwrap().y_hat;
    assert!((out.y_hat[0] - ya).abs() < 1e-12);
    assert!((out.y_hat[1] - yb).abs() < 1e-12);
    // padded visits of the short sample receive zero attention
    let w = out.attn_ts.unwrap();
    for t in 2..5 {
        for h in 0..2 {
            assert_eq!(w[[0, t * 2 + h]], 0.0);
        }
    }
}

#[test]
fn text_fusion_examples() {
    let mut p = tiny(2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (note, rag) = (rand_vec(&mut rng, 4), rand_vec(&mut rng, 4));
    p.get_mut("text_proj.w_note").fill(0.0);
    p.get_mut("text_proj.w_rag").fill(0.0);
    let b = p.get("text_proj.b").row(0).to_owned();
    assert_eq!(fuse_text(&note, &rag, &p).unwrap(), b);

    // identity blocks with d = 2 d_text
    p.get_mut("text_proj.b").fill(0.0);
    for i in 0..4 {
        p.get_mut("text_proj.w_note")[[i, i]] = 1.0;
        p.get_mut("text_proj.w_rag")[[i, 4 + i]] = 1.0;
    }
    let h = fuse_text(&note, &rag, &p).unwrap();
    let expected: Vec<f64> = note.iter().chain(rag.iter()).copied().collect();
    assert_eq!(h.to_vec(), expected);

    let p = tiny(3);
    let h = fuse_text(&note, &rag, &p).unwrap();
    let concat: Vec<f64> = note.iter().chain(rag.iter()).copied().collect();
    for j in 0..8 {
        let mut acc = p.get("text_proj.b")[[0, j]];
        for (i, x) in concat.iter().enumerate() {
            let w = if i < 4 {
                p.get("text_proj.w_note")[[i, j]]
            } else {
                p.get("text_proj.w_rag")[[i - 4, j]]
            };
            acc += x * w;
        }
        assert!((h[j] - acc).abs() < 1e-12);
    }
    assert!(fuse_text(&rand_vec(&mut rng, 3), &rag, &p).is_err());
}

fn norm_oracle(x: &[f64], p: &FusionParams, layer: &str) -> Vec<f64> {
    let rs = &p.running[NORM_LAYERS.iter().position(|n| *n == layer).unwrap()];
    let g = p.get(&format!("{layer}.gamma"));
    let b = p.get(&format!("{layer}.beta"));
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - rs.mean[j]) / (rs.var[j] + 1e-5).sqrt() * g[[0, j]] + b[[0, j]])
        .collect()
}

/// Index-by-index attention, residual, normalization and feed-forward.
fn branch_oracle(
    prefix: &str,
    query: &Array1<f64>,
    keys: &Array2<f64>,
    p: &FusionParams,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let c = p.config;
    let (d, nh, dk) = (c.d, c.n_heads, c.d_k());
    let mv = |v: &[f64], w: &Array2<f64>| -> Vec<f64> {
        (0..w.ncols())
            .map(|j| v.iter().enumerate().map(|(i, x)| x * w[[i, j]]).sum())
            .collect()
    };
    let q = mv(query.as_slice().unwrap(), p.get(&format!("{prefix}.w_q")));
    let ks: Vec<Vec<f64>> = keys
        .rows()
        .into_iter()
        .map(|r| mv(&r.to_vec(), p.get(&format!("{prefix}.w_k"))))
        .collect();
    let vs: Vec<Vec<f64>> = keys
        .rows()
        .into_iter()
        .map(|r| mv(&r.to_vec(), p.get(&format!("{prefix}.w_v"))))
        .collect();
    let mut att = vec![0.0; d];
    let mut weights = vec![vec![0.0; nh]; keys.nrows()];
    for h in 0..nh {
        let scores: Vec<f64> = ks
            .iter()
            .map(|k| (h * dk..(h + 1) * dk).map(|j| q[j] * k[j]).sum::<f64>() / (dk as f64).sqrt())
            .collect();
        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for (t, et) in e.iter().enumerate() {
            weights[t][h] = et / z;
            for j in h * dk..(h + 1) * dk {
                att[j] += et / z * vs[t][j];
            }
        }
    }
    let res: Vec<f64> = att.iter().zip(query.iter()).map(|(a, q)| a + q).collect();
    let u = norm_oracle(&res, p, &format!("{prefix}.norm1"));
    let b1 = p.get(&format!("{prefix}.ff.b1"));
    let f1: Vec<f64> = mv(&u, p.get(&format!("{prefix}.ff.w1")))
        .iter()
        .enumerate()
        .map(|(j, v)| (v + b1[[0, j]]).max(0.0))
        .collect();
    let b2 = p.get(&format!("{prefix}.ff.b2"));
    let f2 = mv(&f1, p.get(&format!("{prefix}.ff.w2")));
    let res2: Vec<f64> = (0..d).map(|j| u[j] + f2[j] + b2[[0, j]]).collect();
    (norm_oracle(&res2, p, &format!("{prefix}.norm2")), weights)
}

#[test]
fn attention_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for seed in 0..10 {
        let p = tiny(seed);
        let states = rand_mat(&mut rng, 4, 8);
        let seq = rand_mat(&mut rng, 2, 8);
        let (tp, xp) = (rand_vec(&mut rng, 8), rand_vec(&mut rng, 8));
        let out = cross_attend(&states, &tp, &seq, &xp, &p).unwrap();
        let (z_ts, w_ts) = branch_oracle("ts", &xp, &states, &p);
        let (z_text, w_text) = branch_oracle("text", &tp, &seq, &p);
        for j in 0..8 {
            assert!((out.z_ts[j] - z_ts[j]).abs() < 1e-8);
            assert!((out.z_text[j] - z_text[j]).abs() < 1e-8);
        }
        for t in 0..4 {
            for h in 0..2 {
                assert!((out.attn_ts[[t, h]] - w_ts[t][h]).abs() < 1e-12);
            }
        }
        for t in 0..2 {
            for h in 0..2 {
                assert!((out.attn_text[[t, h]] - w_text[t][h]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_key_and_identical_keys() {
    let p = tiny(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let states = rand_mat(&mut rng, 3, 8);
    let seq = rand_mat(&mut rng, 1, 8);
    let (tp, xp) = (rand_vec(&mut rng, 8), rand_vec(&mut rng, 8));
    let out = cross_attend(&states, &tp, &seq, &xp, &p).unwrap();
    assert!(out.attn_text.iter().all(|w| *w == 1.0));

    // identical visit rows: attention output is W_v row whatever the query
    let row = rand_vec(&mut rng, 8);
    let same = Array2::from_shape_fn((4, 8), |(_, j)| row[j]);
    let a = cross_attend(&same, &tp, &seq, &xp, &p).unwrap();
    let b = cross_attend(&same, &tp, &seq, &rand_vec(&mut rng, 8), &p).unwrap();
    for w in a.attn_ts.iter().chain(b.attn_ts.iter()) {
        assert!((w - 0.25).abs() < 1e-12);
    }
    let wv = row.dot(p.get("ts.w_v"));
    let (z_oracle, _) = branch_oracle(
        "ts",
        &xp,
        &Array2::from_shape_fn((1, 8), |(_, j)| row[j]),
        &p,
    );
    for j in 0..8 {
        assert!((a.z_ts[j] - z_oracle[j]).abs() < 1e-10, "{wv}");
    }
}

#[test]
fn text_row_order_does_not_matter() {
    let mut c = FusionConfig::new(3, 8, 4);
    c.n_heads = 2;
    let p = FusionParams::init(c, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let seq = rand_mat(&mut rng, 3, 8);
    let perm = ndarray::stack(Axis(0), &[seq.row(2), seq.row(0), seq.row(1)]).unwrap();
    let states = rand_mat(&mut rng, 4, 8);
    let (tp, xp) = (rand_vec(&mut rng, 8), rand_vec(&mut rng, 8));
    let a = cross_attend(&states, &tp, &seq, &xp, &p).unwrap();
    let b = cross_attend(&states, &tp, &perm, &xp, &p).unwrap();
    for j in 0..8 {
        assert!((a.z_text[j] - b.z_text[j]).abs() < 1e-12);
    }
}

#[test]
fn head_examples() {
    let mut p = tiny(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (a, b) = (rand_vec(&mut rng, 8), rand_vec(&mut rng, 8));
    let e1 = fuse_and_predict(&a, &b, &p, Mode::Eval).unwrap();
    assert_eq!(e1, fuse_and_predict(&a, &b, &p, Mode::Eval).unwrap());
    let t1 = fuse_and_predict(&a, &b, &p, Mode::Train { seed: 3 }).unwrap();
    assert_eq!(
        t1,
        fuse_and_predict(&a, &b, &p, Mode::Train { seed: 3 }).unwrap()
    );
    assert!(e1 > 0.0 && e1 < 1.0);
    for n in ["head.w1", "head.b1", "head.w2", "head.b2"] {
        p.get_mut(n).fill(0.0);
    }
    assert_eq!(fuse_and_predict(&a, &b, &p, Mode::Eval).unwrap(), 0.5);
}

#[test]
fn bce_examples() {
    assert!(bce_loss(&[1.0 - 1e-7], &[1.0]) < 2e-7);
    assert!((bce_loss(&[0.5], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(bce_loss(&[0.0], &[1.0]).is_finite());
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let p: Vec<f64> = (0..64).map(|_| rng.gen_range(0.001..0.999)).collect();
    let y: Vec<f64> = (0..64).map(|_| f64::from(rng.gen_bool(0.5))).collect();
    let mut naive = 0.0;
    for i in 0..64 {
        naive += if y[i] == 1.0 {
            -p[i].ln()
        } else {
            -(1.0 - p[i]).ln()
        };
    }
    assert!((bce_loss(&p, &y) - naive / 64.0).abs() < 1e-12);
}

fn batch_of(rng: &mut ChaCha8Rng, n: usize, p: &FusionParams) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            sample(
                rng,
                3 + i % 3,
                p.config.n_features,
                p.config.d_text,
                (i % 2) as f64,
            )
        })
        .collect()
}

/// Max relative error of analytic against central-difference gradients.
fn gradient_error(p: &FusionParams, samples: &[Sample], mode: Mode) -> f64 {
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::new(&refs).unwrap();
    let g = gradients(p, &batch, mode).unwrap();
    let loss = |q: &FusionParams| gradients(q, &batch, mode).unwrap().loss;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut q = p.clone();
    for (ti, t) in p.tensors.iter().enumerate() {
        for idx in ndarray::indices(t.raw_dim()) {
            let orig = t[idx];
            q.tensors[ti][idx] = orig + h;
            let up = loss(&q);
            q.tensors[ti][idx] = orig - h;
            let down = loss(&q);
            q.tensors[ti][idx] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = g.tensors[ti][idx];
            let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..2 {
        let p = tiny(seed);
        let samples = batch_of(&mut rng, 4, &p);
        for mode in [Mode::Eval, Mode::Train { seed: 5 }] {
            let e = gradient_error(&p, &samples, mode);
            assert!(e < 1e-4, "seed {seed} {mode:?}: {e}");
        }
    }
}

#[test]
fn gradients_for_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let kinds = [
        FusionKind::Cross,
        FusionKind::TsQueryOnly,
        FusionKind::TextQueryOnly,
        FusionKind::SelfAttention,
        FusionKind::Concat,
    ];
    for (i, fusion) in kinds.into_iter().enumerate() {
        for m in [
            Modalities::ALL,
            Modalities::TS_ONLY,
            Modalities::NOTE_ONLY,
            Modalities::TS_RAG,
        ] {
            let mut c = FusionConfig::new(3, 4, 3);
            c.n_heads = 2;
            c.modalities = m;
            c.fusion = fusion;
            let p = FusionParams::init(c, i as u64).unwrap();
            let samples = batch_of(&mut rng, 3, &p);
            let e = gradient_error(&p, &samples, Mode::Train { seed: 1 });
            assert!(e < 1e-4, "{fusion:?} {m:?}: {e}");
        }
    }
}

#[test]
fn stationary_head_bias() {
    let mut p = tiny(8);
    for n in ["head.w1", "head.b1", "head.w2", "head.b2"] {
        p.get_mut(n).fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples = batch_of(&mut rng, 4, &p);
    let refs: Vec<&Sample> = samples.iter().collect();
    let g = gradients(&p, &Batch::new(&refs).unwrap(), Mode::Eval).unwrap();
    assert!(g.tensors[p.index("head.b2")][[0, 0]].abs() < 1e-12);
}

#[test]
fn duplicated_sample_has_same_gradient() {
    let p = tiny(9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = sample(&mut rng, 4, 3, 4, 1.0);
    let one = gradients(&p, &Batch::new(&[&s]).unwrap(), Mode::Eval).unwrap();
    let two = gradients(&p, &Batch::new(&[&s, &s]).unwrap(), Mode::Eval).unwrap();
    for (a, b) in one.tensors.iter().zip(&two.tensors) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn single_modality_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut c = FusionConfig::new(3, 8, 4);
    c.modalities = Modalities::TS_ONLY;
    let p = FusionParams::init(c, 0).unwrap();
    let s = sample(&mut rng, 3, 3, 4, 1.0);
    let out = forward_one(&s, &p).unwrap();
    assert_eq!(out.z_ts, out.h_ts.clone().unwrap());
    assert!(out.z_text.iter().all(|v| *v == 0.0));
    // text inputs are ignored entirely
    let mut s2 = s.clone();
    s2.note.fill(100.0);
    assert_eq!(forward_one(&s2, &p).unwrap().y_hat, out.y_hat);

    c.modalities = Modalities::NOTE_ONLY;
    let p = FusionParams::init(c, 0).unwrap();
    let out = forward_one(&s, &p).unwrap();
    assert!(out.z_ts.iter().all(|v| *v == 0.0));
    assert_eq!(out.text_seq.unwrap().nrows(), 1);
    let mut s3 = s.clone();
    s3.ts.fill(50.0);
    assert_eq!(forward_one(&s3, &p).unwrap().y_hat, out.y_hat);
}

#[test]
fn concat_skips_attention() {
    let mut c = FusionConfig::new(3, 8, 4);
    c.n_heads = 2;
    c.fusion = FusionKind::Concat;
    let p = FusionParams::init(c, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let s = sample(&mut rng, 5, 3, 4, 1.0);
    let out = forward_one(&s, &p).unwrap();
    let (_, pooled) = encode_timeseries(&s.ts, &p).unwrap();
    let h_text = fuse_text(&s.note, &s.rag, &p).unwrap();
    let direct = fuse_and_predict(&pooled, &h_text, &p, Mode::Eval).unwrap();
    assert!(
        (out.y_hat - direct).abs() < 1e-12,
        "{} vs {direct}",
        out.y_hat
    );
    let refs = [&s];
    let batch = forward_batch(&p, &Batch::new(&refs).unwrap(), Mode::Eval).unwrap();
    assert!(batch.attn_ts.is_none() && batch.attn_text.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_weights_are_distributions(seed in 0u64..10_000, t in 1usize..7, b in 1usize..5) {
        let p = tiny(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<Sample> = (0..b).map(|i| sample(&mut rng, 1 + (t + i) % t.max(1), 3, 4, 0.0)).collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let out = forward_batch(&p, &Batch::new(&refs).unwrap(), Mode::Train { seed }).unwrap();
        for w in [out.attn_ts.unwrap(), out.attn_text.unwrap()] {
            prop_assert!(w.iter().all(|v| *v >= 0.0));
            for row in w.rows() {
                for h in 0..2 {
                    let s: f64 = (h..row.len()).step_by(2).map(|j| row[j]).sum();
                    prop_assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
        prop_assert!(out.y_hat.iter().all(|y| *y > 0.0 && *y < 1.0));
    }

    #[test]
    fn eval_forward_is_pure(seed in 0u64..1000) {
        let p = tiny(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample(&mut rng, 4, 3, 4, 0.0);
        let a = forward_one(&s, &p).unwrap().y_hat;
        let b = forward_one(&s, &p).unwrap().y_hat;
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}
