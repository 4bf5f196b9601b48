mod common;

use ctxfusion::featurize::{MockProvider, PromptTemplate};
use ctxfusion::ingest::{split, synth_generate, Dataset, SampleRecord, SynthStructure};
use ctxfusion::model::Init;
use ctxfusion::train::{
    evaluate, init_params, run_ablation, train, AblationMode, Metrics, TextSource, TrainConfig,
};
use proptest::prelude::*;
use rand::Rng;

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        primary_capsules: 4,
        primary_dim: 8,
        output_capsules: 2,
        output_dim: 8,
        fc_units: 16,
        rnn_units: 8,
        seed,
        ..TrainConfig::default()
    }
}

fn tiny_data(structure: SynthStructure, seed: u64) -> Dataset {
    synth_generate(120, 8, 8, structure, 0.3, seed).unwrap()
}

#[test]
fn init_is_deterministic_with_zero_biases_and_identity_refine() {
    let cfg = TrainConfig { ablation_mode: AblationMode::TextPromptFinetune, ..TrainConfig::default() };
    let arch = cfg.architecture(24, 20).unwrap();
    let a = init_params::<f64>(&arch, 11).unwrap();
    let b = init_params::<f64>(&arch, 11).unwrap();
    let c = init_params::<f64>(&arch, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), arch.param_specs().len());
    for spec in arch.param_specs() {
        let value = a.value(a.id(&spec.name).unwrap());
        assert_eq!(value.shape(), spec.shape.as_slice());
        match spec.init {
            Init::Zeros => assert!(value.data().iter().all(|&x| x == 0.0), "{}", spec.name),
            Init::Identity => {
                let n = spec.shape[0];
                for (k, &x) in value.data().iter().enumerate() {
                    assert_eq!(x, f64::from(u8::from(k / n == k % n)));
                }
            }
            Init::Glorot { .. } => {}
        }
    }
}

#[test]
fn glorot_statistics_on_a_large_matrix() {
    let cfg = TrainConfig { primary_capsules: 8, primary_dim: 16, ..TrainConfig::default() };
    let arch = cfg.architecture(768, 20).unwrap();
    let store = init_params::<f64>(&arch, 5).unwrap();
    let w = store.value(store.id("adapter.text.w").unwrap());
    assert_eq!(w.shape(), &[768, 128]);
    let a = (6.0f64 / (768.0 + 128.0)).sqrt();
    let n = w.len() as f64;
    assert!(w.data().iter().all(|x| x.abs() <= a));
    let mean = w.data().iter().sum::<f64>() / n;
    let se = a / 3f64.sqrt() / n.sqrt();
    assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3 SE {}", 3.0 * se);
    let var = w.data().iter().map(|x| x * x).sum::<f64>() / n;
    assert!((var - a * a / 3.0).abs() < 0.05 * a * a / 3.0);
}

#[test]
fn zero_learning_rate_freezes_parameters_and_loss() {
    let ds = tiny_data(SynthStructure::Xor, 1);
    let cfg = TrainConfig { learning_rate: 0.0, ..tiny_config(1) };
    let (tr, va, _) = split(&ds, &cfg.split, cfg.seed).unwrap();
    let out = train(&cfg, &tr, &va).unwrap();
    for (a, b) in out.params.entries().iter().zip(out.initial.entries()) {
        let bits = |t: &ctxfusion::numerics::Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value), "{}", a.name);
    }
    let losses: Vec<f64> = out.history.iter().map(|h| h.train_loss).collect();
    assert!(losses.windows(2).all(|w| w[0] == w[1]), "{losses:?}");
}

#[test]
fn history_is_a_function_of_config_and_data() {
    let ds = tiny_data(SynthStructure::Xor, 2);
    let cfg = tiny_config(2);
    let (tr, va, _) = split(&ds, &cfg.split, cfg.seed).unwrap();
    let a = train(&cfg, &tr, &va).unwrap();
    let b = train(&cfg, &tr, &va).unwrap();
    assert_eq!(a.history.len(), cfg.epochs);
    assert_eq!(serde_json::to_string(&a.history).unwrap(), serde_json::to_string(&b.history).unwrap());
    assert_eq!(a.params.entries().iter().map(|e| &e.value).collect::<Vec<_>>(), b.params.entries().iter().map(|e| &e.value).collect::<Vec<_>>());
    let c = train(&TrainConfig { seed: 3, ..cfg }, &tr, &va).unwrap();
    let w = |s: &ctxfusion::numerics::ParamStore<f32>| s.value(s.id("head.out.w").unwrap()).clone();
    assert_ne!(w(&a.params), w(&c.params));
}

#[test]
fn empty_or_mismatched_data_is_rejected() {
    let ds = tiny_data(SynthStructure::Xor, 4);
    let cfg = tiny_config(4);
    let (tr, va, _) = split(&ds, &cfg.split, cfg.seed).unwrap();
    let out = train(&cfg, &tr, &va).unwrap();
    let wide = synth_generate(20, 9, 8, SynthStructure::Xor, 0.3, 4).unwrap();
    assert!(evaluate(&out.model, &out.params, &wide).is_err());
    assert!(train(&cfg, &wide, &va).is_err());
    let empty = Dataset { records: vec![], ..va.clone() };
    assert!(evaluate(&out.model, &out.params, &empty).is_err());
    assert!(train(&cfg, &empty, &va).is_err());
}

#[test]
fn non_finite_inputs_abort_with_location() {
    let ds = tiny_data(SynthStructure::Xor, 6);
    let cfg = TrainConfig { learning_rate: 1e300, ..tiny_config(6) };
    let (tr, va, _) = split(&ds, &cfg.split, cfg.seed).unwrap();
    let err = train(&cfg, &tr, &va).err().expect("huge learning rate should diverge");
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(err.to_string().contains("epoch"), "{err}");
}

#[test]
fn evaluate_matches_confusion_oracle_on_random_pairs() {
    let mut r = common::rng(99);
    let pred: Vec<u8> = (0..1000).map(|_| r.gen_range(0..2)).collect();
    let actual: Vec<u8> = (0..1000).map(|_| r.gen_range(0..2)).collect();
    let m = Metrics::from_predictions(&pred, &actual).unwrap();
    let [tp, fp, fn_, tn] = common::confusion(&pred, &actual);
    assert_eq!((m.tp, m.fp, m.fn_, m.tn), (tp, fp, fn_, tn));
    assert_eq!(ctxfusion::train::confusion(&pred, &actual).unwrap(), [tp, fp, fn_, tn]);
}

#[test]
fn evaluate_counts_agree_with_per_record_predictions() {
    let ds = tiny_data(SynthStructure::UnimodalText, 8);
    let cfg = tiny_config(8);
    let (tr, va, te) = split(&ds, &cfg.split, cfg.seed).unwrap();
    let out = train(&cfg, &tr, &va).unwrap();
    let m = evaluate(&out.model, &out.params, &te).unwrap();
    let pred: Vec<u8> = te
        .records
        .iter()
        .map(|r| ctxfusion::head::predict_sentiment(&out.model, &out.params, r).unwrap().0)
        .collect();
    let actual: Vec<u8> = te.records.iter().map(|r| r.label).collect();
    let [tp, fp, fn_, tn] = common::confusion(&pred, &actual);
    assert_eq!((m.tp, m.fp, m.fn_, m.tn), (tp, fp, fn_, tn));
}

#[test]
fn metric_spot_values() {
    let m = Metrics::from_counts(3, 1, 1, 5).unwrap();
    assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (75.0, 75.0, 75.0, 80.0));
    let all = Metrics::from_predictions(&[1, 0, 1], &[1, 0, 1]).unwrap();
    assert_eq!((all.accuracy, all.recall, all.f1), (100.0, 100.0, 100.0));
    let none = Metrics::from_counts(0, 0, 0, 7).unwrap();
    assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    assert!(none.precision_degenerate && none.recall_degenerate);
    let json = serde_json::to_string(&Metrics::from_counts(1, 1, 1, 0).unwrap()).unwrap();
    assert!(json.contains("\"accuracy\":33.33"), "{json}");
    assert!(json.contains("\"fn\":1"), "{json}");
}

fn ablation_data(n: usize, seed: u64) -> Dataset {
    let ds = synth_generate(n, 8, 8, SynthStructure::UnimodalText, 0.3, seed).unwrap();
    let records = ds
        .records
        .into_iter()
        .map(|r| SampleRecord { raw_text: Some(format!("post {} says {}", r.id, r.label)), ..r })
        .collect();
    Dataset::new(ds.name, records).unwrap()
}

#[test]
fn ablation_reports_six_labelled_rows() {
    let ds = ablation_data(60, 10);
    let cfg = TrainConfig { epochs: 2, ..tiny_config(10) };
    let (report, history) = run_ablation(&cfg, &ds, None).unwrap();
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(
        labels,
        [
            "Text Only (Simple GPT)",
            "Text Only (GPT, Single Prompt)",
            "Text Only (GPT, Prompt with Varied Text)",
            "Text Only (GPT, Prompt and Fine-Tuning)",
            "Image Only (CNN)",
            "Contextual-Attention (Ours)",
        ]
    );
    assert_eq!(history.len(), 2);
    assert!(report.rows.iter().all(|r| r.test.is_some() && r.validation.is_some()));
    assert_eq!(report.row(AblationMode::TextSimple).unwrap().test, report.row(AblationMode::TextPrompt).unwrap().test);
}

#[test]
fn ablation_with_text_source_refeaturizes_each_mode() {
    let ds = ablation_data(60, 12);
    let provider = MockProvider::new(12).unwrap();
    let src = TextSource { provider: &provider, template: PromptTemplate::default() };
    let cfg = TrainConfig { epochs: 1, ..tiny_config(12) };
    let (report, _) = run_ablation(&cfg, &ds, Some(&src)).unwrap();
    assert_eq!(report.rows.len(), 6);
    let (a, _) = run_ablation(&cfg, &ds, Some(&src)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&report).unwrap());
    let bare = Dataset::new(
        "bare",
        ds.records.iter().cloned().map(|r| SampleRecord { raw_text: None, ..r }).collect(),
    )
    .unwrap();
    assert!(run_ablation(&cfg, &bare, Some(&src)).is_err());
}

#[test]
fn config_round_trips_through_json() {
    let cfg = TrainConfig { seed: 42, ablation_mode: AblationMode::ImageOnly, ..TrainConfig::default() };
    let json = serde_json::to_string_pretty(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
    assert!(json.contains("\"ablation_mode\": \"image-only\""));
    assert!(json.contains("\"loss\": \"cross_entropy\""));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"learning_rate": 0.01, "batch_size": 64}"#).unwrap();
    let loaded = TrainConfig::from_json_file(&path).unwrap();
    assert_eq!((loaded.learning_rate, loaded.batch_size, loaded.epochs), (0.01, 64, 100));
    std::fs::write(&path, r#"{"batch_size": 0}"#).unwrap();
    assert!(TrainConfig::from_json_file(&path).is_err());
}

proptest! {
    #[test]
    fn metric_identities_hold(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
        prop_assume!(tp + fp + fn_ + tn > 0);
        let m = Metrics::from_counts(tp, fp, fn_, tn).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        let total = (tp + fp + fn_ + tn) as f64;
        prop_assert!(close(m.accuracy, 100.0 * (tp + tn) as f64 / total));
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        prop_assert!(close(m.precision, 100.0 * p));
        prop_assert!(close(m.recall, 100.0 * r));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        prop_assert!(close(m.f1, 100.0 * f1));
        let json: serde_json::Value = serde_json::to_value(&m).unwrap();
        prop_assert_eq!(json["accuracy"].as_f64().unwrap(), (m.accuracy * 100.0).round() / 100.0);
        prop_assert_eq!(json["tp"].as_u64().unwrap(), tp);
        prop_assert_eq!(m.precision_degenerate, tp + fp == 0);
        prop_assert_eq!(m.recall_degenerate, tp + fn_ == 0);
        prop_assert!((0.0..=100.0).contains(&m.f1));
    }
}
