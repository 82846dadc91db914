//! End-to-end pipeline behavior on synthetic corpora: objective reductions,
//! determinism, noise invariance, and the method identities that make the
//! baselines comparable.

use std::collections::BTreeSet;

use odda_core::augment::identity_augment;
use odda_core::data::split_dev;
use odda_core::losses::{BaselineConfig, BaselineMode};
use odda_core::rng::SeededRng;
use odda_core::synth::SynthSpec;
use odda_core::trainer::{
    evaluate, run_experiment, run_single, train_student, train_teacher, AugmenterKind, Method,
    ModelConfig, PipelineInputs, RunConfig, TrainConfig,
};
use odda_core::{Architecture, Classifier, Dataset};

fn small_model() -> ModelConfig {
    ModelConfig {
        arch: Architecture::Mlp1,
        hash_bits: 12,
        ngram_max: 1,
        hidden: 16,
        dropout_rate: 0.1,
    }
}

fn base_config(method: Method) -> RunConfig {
    RunConfig {
        method,
        augmenter: AugmenterKind::Eda,
        train: TrainConfig {
            teacher_steps: 150,
            student_steps: 150,
            batch_size: 16,
            lr: 0.3,
            model: small_model(),
            k: 3,
            dev_fraction: 0.15,
            eval_interval: 25,
            ..Default::default()
        },
        ..Default::default()
    }
}

struct Bench {
    train: Dataset,
    test: Dataset,
    lexicon: odda_core::Lexicon,
    stopwords: BTreeSet<String>,
}

impl Bench {
    fn new(spec: SynthSpec) -> Self {
        let out = spec.generate().unwrap();
        Self {
            train: out.train,
            test: out.test,
            lexicon: out.lexicon,
            stopwords: BTreeSet::new(),
        }
    }

    fn inputs(&self) -> PipelineInputs<'_> {
        PipelineInputs {
            train: &self.train,
            test: &self.test,
            lexicon: &self.lexicon,
            stopwords: &self.stopwords,
            external_aug: None,
        }
    }
}

fn default_bench() -> Bench {
    Bench::new(SynthSpec { n_train: 160, n_test: 160, seed: 99, ..Default::default() })
}

#[test]
fn teacher_reaches_high_f1_on_separable_data() {
    // disjoint vocabularies at full signal strength are separable by
    // construction (each text's tokens all name its class)
    let spec =
        SynthSpec { n_train: 200, n_test: 200, signal_strength: 1.0, seed: 5, ..Default::default() };
    let bench = Bench::new(spec);
    let cfg = TrainConfig {
        teacher_steps: 500,
        student_steps: 1,
        eval_interval: 1,
        batch_size: 16,
        lr: 0.3,
        model: ModelConfig { arch: Architecture::Linear, hidden: 0, ..small_model() },
        dev_fraction: 0.2,
        ..Default::default()
    };
    let out = train_teacher(&bench.train, &cfg).unwrap();
    assert!(
        out.best_dev.unwrap() >= 0.95,
        "teacher should separate the separable set, got {:?}",
        out.best_dev
    );
    let test_metrics = evaluate(&out.model, &bench.test).unwrap();
    assert!(test_metrics.accuracy >= 0.99, "test accuracy {}", test_metrics.accuracy);
}

#[test]
fn odda_metrics_are_bit_identical_across_label_noise() {
    let bench = default_bench();
    let mut cfg = base_config(Method::OddaBoth);
    cfg.train.student_steps = 100;
    let mut reference = None;
    for p_n in [0.0, 0.1, 0.3, 0.5] {
        cfg.noise.p_n = p_n;
        let out = run_single(&cfg, &bench.inputs(), 7).unwrap();
        let bits = (out.metrics.macro_f1.to_bits(), out.metrics.accuracy.to_bits());
        match reference {
            None => reference = Some(bits),
            Some(r) => assert_eq!(bits, r, "p_n={p_n} must not change the joint objective"),
        }
    }
}

#[test]
fn changing_only_the_noise_seed_changes_nothing_for_odda() {
    let bench = default_bench();
    let mut cfg = base_config(Method::OddaBoth);
    cfg.train.student_steps = 75;
    cfg.noise.p_n = 0.3;
    cfg.noise.seed = Some(111);
    let a = run_single(&cfg, &bench.inputs(), 3).unwrap();
    cfg.noise.seed = Some(222);
    let b = run_single(&cfg, &bench.inputs(), 3).unwrap();
    assert_eq!(a.metrics.macro_f1.to_bits(), b.metrics.macro_f1.to_bits());
}

#[test]
fn changing_only_the_dropout_seed_changes_masks_not_augmentation() {
    let bench = default_bench();
    let mut cfg = base_config(Method::OddaBoth);
    cfg.train.student_steps = 75;
    let a = run_single(&cfg, &bench.inputs(), 3).unwrap();
    cfg.train.dropout_seed = Some(12345);
    let b = run_single(&cfg, &bench.inputs(), 3).unwrap();
    // same seed, so augmentation and batches agree; only SR masks moved
    let differs = a
        .model
        .blocks()
        .iter()
        .zip(b.model.blocks())
        .any(|((_, x), (_, y))| x != &y);
    assert!(differs, "different dropout streams should land on different parameters");
}

#[test]
fn alpha_zero_empty_pool_reduces_to_supervised_per_step() {
    let bench = default_bench();
    let rng = SeededRng::new(11);
    let (train, dev) = split_dev(&bench.train, 0.15, &rng).unwrap();

    let mut odda_cfg = base_config(Method::OddaBoth).train;
    odda_cfg.seed = 11;
    odda_cfg.batch_size = 20;
    odda_cfg.k = 4; // 4 originals per mixed batch
    odda_cfg.sr.alpha = 0.0;
    odda_cfg.student_steps = 60;
    odda_cfg.eval_interval = 20;

    let mut sup_cfg = odda_cfg.clone();
    sup_cfg.batch_size = 4; // matches the mixed batches' original share

    let teacher = train_teacher(&bench.train, &odda_cfg).unwrap().model;
    let empty = Dataset { label_names: bench.train.label_names.clone(), examples: vec![] };
    let odda = train_student(Method::OddaBoth, &train, &dev, &empty, &teacher, &odda_cfg).unwrap();
    let sup = train_student(Method::Supervised, &train, &dev, &empty, &teacher, &sup_cfg).unwrap();

    assert_eq!(odda.log.len(), sup.log.len());
    for (a, b) in odda.log.iter().zip(&sup.log) {
        assert!(
            (a.total - b.total).abs() <= 1e-12,
            "step {}: joint {} vs supervised {}",
            a.step,
            a.total,
            b.total
        );
    }
    assert!(!odda.warnings.is_empty(), "empty pool should be warned about");
}

#[test]
fn consistency_with_zero_coefficient_matches_supervised() {
    let bench = default_bench();
    let mut cons = base_config(Method::Consistency);
    cons.train.student_steps = 80;
    cons.train.baseline = Some(BaselineConfig {
        mode: BaselineMode::Consistency,
        alpha_c: 0.0,
        ..Default::default()
    });
    let mut sup = base_config(Method::Supervised);
    sup.train.student_steps = 80;

    let a = run_single(&cons, &bench.inputs(), 5).unwrap();
    let b = run_single(&sup, &bench.inputs(), 5).unwrap();
    assert_eq!(a.metrics.macro_f1.to_bits(), b.metrics.macro_f1.to_bits());
    assert_eq!(a.metrics.accuracy.to_bits(), b.metrics.accuracy.to_bits());
}

#[test]
fn glitter_with_identity_selection_equals_plain_eda() {
    let bench = default_bench();
    let mut glitter = base_config(Method::Glitter);
    glitter.train.student_steps = 80;
    glitter.train.baseline = Some(BaselineConfig {
        mode: BaselineMode::Glitter,
        pool_k: 3,
        select_k: 3,
        ..Default::default()
    });
    let mut eda = base_config(Method::Eda);
    eda.train.student_steps = 80;

    let a = run_single(&glitter, &bench.inputs(), 9).unwrap();
    let b = run_single(&eda, &bench.inputs(), 9).unwrap();
    assert_eq!(a.metrics.macro_f1.to_bits(), b.metrics.macro_f1.to_bits());
}

#[test]
fn reweight_with_huge_lambda_tracks_plain_eda() {
    let bench = default_bench();
    let mut rw = base_config(Method::Reweight);
    rw.train.student_steps = 100;
    rw.train.baseline = Some(BaselineConfig {
        mode: BaselineMode::Reweight,
        lambda: 1e6,
        ..Default::default()
    });
    let mut eda = base_config(Method::Eda);
    eda.train.student_steps = 100;

    let a = run_single(&rw, &bench.inputs(), 4).unwrap();
    let b = run_single(&eda, &bench.inputs(), 4).unwrap();
    assert!(
        (a.metrics.macro_f1 - b.metrics.macro_f1).abs() <= 0.02,
        "near-uniform weights should track unweighted training: {} vs {}",
        a.metrics.macro_f1,
        b.metrics.macro_f1
    );
}

#[test]
fn run_experiment_is_deterministic_with_exact_stats() {
    let bench = default_bench();
    let mut cfg = base_config(Method::Eda);
    cfg.train.student_steps = 60;
    cfg.train.teacher_steps = 60;
    let seeds = [1u64, 2, 3];
    let a = run_experiment(&cfg, &bench.inputs(), &seeds).unwrap();
    let b = run_experiment(&cfg, &bench.inputs(), &seeds).unwrap();
    assert_eq!(a.f1, b.f1);
    let mean = a.f1.values.iter().sum::<f64>() / 3.0;
    assert!((a.f1.mean - mean).abs() <= 1e-12);
    let var = a.f1.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
    assert!((a.f1.std - var.sqrt()).abs() <= 1e-12);

    let single = run_experiment(&cfg, &bench.inputs(), &[1]).unwrap();
    assert_eq!(single.f1.mean, single.f1.values[0]);
    assert_eq!(single.f1.std, 0.0);
}

#[test]
fn student_eval_cadence_and_best_checkpoint() {
    let bench = default_bench();
    let mut cfg = base_config(Method::OddaBoth);
    cfg.train.student_steps = 100;
    cfg.train.eval_interval = 20;
    let out = run_single(&cfg, &bench.inputs(), 2).unwrap();
    let eval_steps: Vec<usize> =
        out.student_log.iter().filter(|r| r.dev_macro_f1.is_some()).map(|r| r.step).collect();
    assert!(!eval_steps.is_empty());
    assert!(eval_steps.iter().all(|s| s % 20 == 0));
    let max = out
        .student_log
        .iter()
        .filter_map(|r| r.dev_macro_f1)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_dev.unwrap(), max);
}

#[test]
fn external_augmenter_roundtrip_and_missing_file() {
    let bench = default_bench();
    let mut cfg = base_config(Method::Eda);
    cfg.train.student_steps = 40;
    cfg.augmenter = AugmenterKind::External;
    assert!(run_single(&cfg, &bench.inputs(), 1).is_err());

    let external = identity_augment(&bench.train, 3);
    let inputs = PipelineInputs { external_aug: Some(&external), ..bench.inputs() };
    let out = run_single(&cfg, &inputs, 1).unwrap();
    assert!(out.metrics.macro_f1.is_finite());
}

#[test]
fn iterative_teacher_swaps_without_breaking_noise_invariance() {
    let bench = default_bench();
    let mut cfg = base_config(Method::OddaBoth);
    cfg.train.student_steps = 80;
    cfg.train.iterative_teacher = true;
    cfg.noise.p_n = 0.0;
    let a = run_single(&cfg, &bench.inputs(), 6).unwrap();
    cfg.noise.p_n = 0.5;
    let b = run_single(&cfg, &bench.inputs(), 6).unwrap();
    assert_eq!(a.metrics.macro_f1.to_bits(), b.metrics.macro_f1.to_bits());
}

#[test]
fn evaluate_known_confusions() {
    // a constant class-0 predictor on a balanced binary set:
    // accuracy 1/2, macro-F1 = (2/3 + 0) / 2 = 1/3
    let bench = default_bench();
    let rng = SeededRng::new(0);
    let mut model = Classifier::new(Architecture::Linear, 12, 1, 2, 0, 0.0, &rng).unwrap();
    {
        let mut blocks = model.blocks_mut();
        blocks[1].1[0] = 1.0; // bias toward class 0
    }
    let m = evaluate(&model, &bench.test).unwrap();
    assert!((m.accuracy - 0.5).abs() < 1e-12);
    assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    let again = evaluate(&model, &bench.test).unwrap();
    assert_eq!(m.macro_f1.to_bits(), again.macro_f1.to_bits(), "no dropout at eval");

    // a hand-built token-class mapping is a perfect model at signal 1.0
    let spec = SynthSpec { signal_strength: 1.0, vocab_per_class: 4, seed: 8, ..Default::default() };
    let out = spec.generate().unwrap();
    let mut model = Classifier::new(Architecture::Linear, 12, 1, 2, 0, 0.0, &rng).unwrap();
    {
        let mut blocks = model.blocks_mut();
        for c in 0..2 {
            for i in 0..4 {
                let fv = model_featurize_token(c, i);
                blocks[0].1[fv as usize * 2 + c] = 5.0;
            }
        }
    }
    let m = evaluate(&model, &out.test).unwrap();
    assert_eq!(m.macro_f1, 1.0);
    assert_eq!(m.accuracy, 1.0);
    assert!(m.per_class_f1.iter().all(|&f| f == 1.0));
}

fn model_featurize_token(class: usize, index: usize) -> u32 {
    let token = format!("sig{class}w{index}");
    let fv = odda_core::features::featurize(&token, 12, 1).unwrap();
    fv.pairs()[0].0
}


#[test]
fn filtering_modes_run_with_larger_pools() {
    let bench = default_bench();
    for (method, mode) in [
        (Method::SmallLoss, BaselineMode::SmallLoss),
        (Method::EpidaStub, BaselineMode::EpidaStub),
    ] {
        let mut cfg = base_config(method);
        cfg.train.student_steps = 50;
        cfg.train.teacher_steps = 50;
        cfg.train.baseline =
            Some(BaselineConfig { mode, pool_k: 6, select_k: 3, ..Default::default() });
        let out = run_single(&cfg, &bench.inputs(), 1).unwrap();
        assert!(
            (0.0..=1.0).contains(&out.metrics.macro_f1),
            "{method}: f1 {}",
            out.metrics.macro_f1
        );
    }
}

#[test]
fn consistency_requires_origin_mapping() {
    let bench = default_bench();
    let rng = SeededRng::new(1);
    let (train, dev) = split_dev(&bench.train, 0.15, &rng).unwrap();
    let mut cfg = base_config(Method::Consistency).train;
    cfg.baseline = Some(BaselineConfig {
        mode: BaselineMode::Consistency,
        ..Default::default()
    });
    let teacher = train_teacher(&bench.train, &cfg).unwrap().model;
    // an augmented pool without origin ids (e.g. a sentence-level generator)
    let mut unmapped = identity_augment(&train, 2);
    for ex in unmapped.examples.iter_mut() {
        ex.origin_id = None;
    }
    let err =
        train_student(Method::Consistency, &train, &dev, &unmapped, &teacher, &cfg).unwrap_err();
    assert!(err.to_string().contains("origin_id"), "got: {err}");
}

#[test]
fn per_seed_failures_name_the_seed() {
    let bench = default_bench();
    let mut cfg = base_config(Method::Eda);
    cfg.subsample_fraction = 0.004; // keeps one example, fewer than the classes
    let err = run_experiment(&cfg, &bench.inputs(), &[41]).unwrap_err();
    assert!(err.to_string().contains("seed 41"), "got: {err}");
}

