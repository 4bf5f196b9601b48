mod common;

use common::{assert_all_close, rng, tensor};
use ctxfusion::head::{
    argmax_label, predict, predict_sentiment, rnn_integrate, HeadParams, FC_B, FC_W, OUT_B, OUT_W,
    RNN_B, RNN_WH, RNN_WX,
};
use ctxfusion::ingest::{split, synth_generate, SynthStructure};
use ctxfusion::numerics::{Mode, ParamStore, Tape, Tensor};
use ctxfusion::train::{predict_dataset, train, TrainConfig};
use proptest::prelude::*;

const E: usize = 16;
const K: usize = 4;
const H: usize = 30;
const POOLED: usize = 32;
const FC: usize = 100;

fn head_store(seed: u64, scale: f64) -> ParamStore<f64> {
    let mut r = rng(seed);
    let mut s = ParamStore::new();
    s.insert(RNN_WX, tensor(&mut r, &[E, H], scale)).unwrap();
    s.insert(RNN_WH, tensor(&mut r, &[H, H], scale)).unwrap();
    s.insert(RNN_B, tensor(&mut r, &[H], scale)).unwrap();
    s.insert(FC_W, tensor(&mut r, &[H + POOLED, FC], scale)).unwrap();
    s.insert(FC_B, tensor(&mut r, &[FC], scale)).unwrap();
    s.insert(OUT_W, tensor(&mut r, &[FC, 2], scale)).unwrap();
    s.insert(OUT_B, tensor(&mut r, &[2], scale)).unwrap();
    s
}

fn bind(s: &ParamStore<f64>, dropout: f64) -> HeadParams {
    HeadParams::bind(s, E, H, POOLED, FC, dropout).unwrap()
}

fn probs(s: &ParamStore<f64>, caps: &Tensor<f64>, f: &Tensor<f64>, mode: Mode, seed: u64) -> Vec<f64> {
    let p = bind(s, 0.5);
    let mut t = Tape::new(s);
    let c = t.input(caps.clone()).unwrap();
    let fv = t.input(f.clone()).unwrap();
    let out = predict(&mut t, c, fv, &p, mode, &mut common::rng(seed)).unwrap();
    t.data(out).to_vec()
}

fn w<'a>(s: &'a ParamStore<f64>, name: &str) -> &'a [f64] {
    s.value(s.id(name).unwrap()).data()
}

#[test]
fn zero_recurrence_gives_zero_state() {
    let mut s = head_store(1, 0.3);
    for name in [RNN_WX, RNN_WH, RNN_B] {
        let id = s.id(name).unwrap();
        s.value_mut(id).data_mut().fill(0.0);
    }
    let p = bind(&s, 0.0);
    let mut t = Tape::new(&s);
    let caps = t.input(tensor(&mut rng(2), &[K, E], 1.0)).unwrap();
    let h = rnn_integrate(&mut t, caps, &p).unwrap();
    assert_eq!(t.data(h), vec![0.0; H].as_slice());
}

#[test]
fn single_capsule_is_one_tanh_step() {
    let s = head_store(3, 0.3);
    let p = bind(&s, 0.0);
    let x = common::rand_vec(&mut rng(4), E, 1.0);
    let mut t = Tape::new(&s);
    let caps = t.input(Tensor::new(vec![1, E], x.clone()).unwrap()).unwrap();
    let h = rnn_integrate(&mut t, caps, &p).unwrap();
    let want: Vec<f64> = common::affine(&x, w(&s, RNN_WX), w(&s, RNN_B)).iter().map(|v| v.tanh()).collect();
    assert_all_close(t.data(h), &want, 1e-12, "one step");
}

#[test]
fn recurrence_matches_loop_oracle() {
    for inst in 0..20u64 {
        let s = head_store(9 + inst, 0.3);
        let p = bind(&s, 0.0);
        let caps = common::rand_vec(&mut rng(90 + inst), K * E, 1.0);
        let mut t = Tape::new(&s);
        let cv = t.input(Tensor::new(vec![K, E], caps.clone()).unwrap()).unwrap();
        let h = rnn_integrate(&mut t, cv, &p).unwrap();
        let want = common::rnn(&caps, E, w(&s, RNN_WX), w(&s, RNN_WH), w(&s, RNN_B));
        assert_all_close(t.data(h), &want, 1e-9, "hidden state");
    }
}

#[test]
fn zero_output_layer_is_uniform() {
    let mut s = head_store(5, 0.3);
    for name in [OUT_W, OUT_B] {
        let id = s.id(name).unwrap();
        s.value_mut(id).data_mut().fill(0.0);
    }
    let mut r = rng(6);
    let p = probs(&s, &tensor(&mut r, &[K, E], 1.0), &tensor(&mut r, &[POOLED], 1.0), Mode::Eval, 0);
    assert_eq!(p, vec![0.5, 0.5]);
}

#[test]
fn eval_mode_ignores_the_rng() {
    let s = head_store(7, 0.3);
    let mut r = rng(8);
    let (c, f) = (tensor(&mut r, &[K, E], 1.0), tensor(&mut r, &[POOLED], 1.0));
    let a = probs(&s, &c, &f, Mode::Eval, 1);
    let b = probs(&s, &c, &f, Mode::Eval, 2);
    assert_eq!(a, b);
    let t1 = probs(&s, &c, &f, Mode::Train, 1);
    let t2 = probs(&s, &c, &f, Mode::Train, 2);
    assert_ne!(t1, t2, "dropout should change train-mode outputs");
}

#[test]
fn probabilities_are_a_distribution_over_many_instances() {
    for i in 0..1000u64 {
        let s = head_store(i, 0.1 + (i % 5) as f64);
        let mut r = rng(i + 7000);
        let scale = [0.0, 0.5, 5.0, 50.0][(i % 4) as usize];
        let mode = if i % 2 == 0 { Mode::Eval } else { Mode::Train };
        let (c, f) = if scale == 0.0 {
            (Tensor::zeros(&[K, E]), Tensor::zeros(&[POOLED]))
        } else {
            (tensor(&mut r, &[K, E], scale), tensor(&mut r, &[POOLED], scale))
        };
        let p = probs(&s, &c, &f, mode, i);
        assert!(p.iter().all(|&x| x.is_finite() && (0.0..=1.0).contains(&x)), "instance {i}: {p:?}");
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9, "instance {i}");
    }
}

#[test]
fn exact_ties_go_to_the_first_class() {
    assert_eq!(argmax_label(&[0.5f64, 0.5]), 0);
    assert_eq!(argmax_label(&[0.4f64, 0.6]), 1);
    assert_eq!(argmax_label(&[0.6f32, 0.4]), 0);
}

#[test]
fn shifting_both_output_biases_changes_nothing() {
    let s = head_store(12, 0.3);
    let mut shifted = s.clone();
    let id = shifted.id(OUT_B).unwrap();
    shifted.value_mut(id).data_mut().iter_mut().for_each(|b| *b += 3.25);
    let mut r = rng(13);
    let (c, f) = (tensor(&mut r, &[K, E], 1.0), tensor(&mut r, &[POOLED], 1.0));
    assert_all_close(&probs(&shifted, &c, &f, Mode::Eval, 0), &probs(&s, &c, &f, Mode::Eval, 0), 1e-12, "probs");
}

#[test]
fn single_record_and_dataset_paths_agree() {
    let ds = synth_generate(200, 8, 8, SynthStructure::Xor, 0.3, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        primary_dim: 8,
        output_dim: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let (tr, va, te) = split(&ds, &cfg.split, cfg.seed).unwrap();
    let out = train(&cfg, &tr, &va).unwrap();
    let batch = predict_dataset(&out.model, &out.params, &te).unwrap();
    for (rec, &want) in te.records.iter().zip(&batch) {
        let (label, p) = predict_sentiment(&out.model, &out.params, rec).unwrap();
        assert_eq!(label, want, "record {}", rec.id);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        assert_eq!(label, argmax_label(&p));
    }
}

proptest! {
    #[test]
    fn argmax_agrees_with_comparison(a in 0.0f64..1.0) {
        let p = [a, 1.0 - a];
        prop_assert_eq!(argmax_label(&p), u8::from(p[1] > p[0]));
    }
}
