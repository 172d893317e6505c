use tnlogic::tasks::data::{generate_digit_task, generate_sequence_task, DigitTaskParams, SequenceTaskParams};
use tnlogic::tasks::digits::{evaluate_properties, joint_runs, pipeline_runs, DigitModels, Oracle};
use tnlogic::tasks::metrics::{violations, SpanCounts};
use tnlogic::tasks::tagging::tagger_runs;
use tnlogic::tasks::{ExperimentConfig, Mlp, SeedRun, TaskKind};
use tnlogic::TNorm;

fn digits(n_labeled: usize, n_pairs: usize, sigma: f64) -> tnlogic::tasks::SyntheticDigitDataset {
    generate_digit_task(DigitTaskParams {
        n_labeled,
        n_pairs,
        sigma,
        ..DigitTaskParams::default()
    })
    .unwrap()
}

fn small_cfg() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seeds: vec![7],
        property_repeats: 3,
        ..ExperimentConfig::default()
    };
    c.model.digit_hidden = vec![16];
    c.model.operator_hidden = vec![32];
    c.optimizer.epochs = 3;
    c
}

fn metric(run: &SeedRun, name: &str) -> f64 {
    run.metrics.named().into_iter().find(|(k, _)| *k == name).unwrap().1
}

#[test]
fn noiseless_digits_are_learned_under_every_family() {
    // One labeled atom per step, so the clamped Łukasiewicz conjunction
    // is never saturated.
    let ds = digits(1000, 1000, 0.0);
    let mut cfg = small_cfg();
    cfg.lambda = 0.0;
    cfg.optimizer.batch_size = 1;
    cfg.optimizer.lr = 1e-2;
    cfg.optimizer.epochs = 2;
    for family in TNorm::ALL.into_iter().filter(|f| f.is_subdifferentiable()) {
        let run = &joint_runs(&ds, &cfg, family).unwrap()[0];
        assert_eq!(metric(run, "digit_accuracy"), 1.0, "{family}");
    }
}

#[test]
fn noiseless_pipeline_operator_accuracy_equals_coherence() {
    let ds = digits(1000, 1000, 0.0);
    let mut cfg = small_cfg();
    cfg.optimizer.lr = 1e-2;
    let run = &pipeline_runs(&ds, &cfg, TNorm::SProduct).unwrap()[0];
    assert_eq!(metric(run, "digit_accuracy"), 1.0);
    assert_eq!(metric(run, "operator_accuracy"), metric(run, "coherence_fraction"));
    assert!(metric(run, "operator_accuracy") > 0.2);
}

#[test]
fn pipeline_ignores_lambda_and_product_variant() {
    let ds = digits(200, 300, 0.5);
    let mut cfg = small_cfg();
    let a = pipeline_runs(&ds, &cfg, TNorm::SProduct).unwrap();
    cfg.lambda = 0.25;
    let b = pipeline_runs(&ds, &cfg, TNorm::RProduct).unwrap();
    assert_eq!(a[0].models, b[0].models);
    assert_eq!(a[0].metrics, b[0].metrics);
}

#[test]
fn unconstrained_operator_heads_stay_at_chance() {
    let ds = digits(500, 500, 0.5);
    let mut cfg = small_cfg();
    cfg.lambda = 0.0;
    cfg.seeds = vec![0, 20, 50];
    for run in joint_runs(&ds, &cfg, TNorm::RProduct).unwrap() {
        for k in ["sum_accuracy", "prod_accuracy"] {
            let v = metric(&run, k);
            assert!((0.0..0.2).contains(&v), "{k} = {v}");
        }
    }
}

#[test]
fn strict_lukasiewicz_is_flagged_on_the_first_step() {
    let ds = digits(200, 64, 0.5);
    let mut cfg = small_cfg();
    cfg.optimizer.epochs = 1;
    let strict = &joint_runs(&ds, &cfg, TNorm::Lukasiewicz).unwrap()[0];
    assert!(strict.metrics.zero_gradient_on_first_step);
    let relaxed = &joint_runs(&ds, &cfg, TNorm::LukasiewiczRelaxed).unwrap()[0];
    assert!(!relaxed.metrics.zero_gradient_on_first_step);
}

#[test]
fn godel_warm_start_freezes_digit_after_warmup() {
    let ds = digits(200, 128, 0.5);
    let mut cfg = small_cfg();
    cfg.optimizer.epochs = 1;
    let warm = joint_runs(&ds, &cfg, TNorm::RProduct).unwrap();
    cfg.optimizer.epochs = 2;
    cfg.warm_start.warm_start_epochs = 1;
    let godel = joint_runs(&ds, &cfg, TNorm::SGodel).unwrap();
    assert_eq!(godel[0].models[0], warm[0].models[0]);
    assert_ne!(godel[0].models[1], warm[0].models[1]);
}

#[test]
fn training_is_deterministic_across_pool_sizes() {
    let ds = digits(200, 128, 0.5);
    let mut cfg = small_cfg();
    cfg.seeds = vec![1, 2, 3];
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| joint_runs(&ds, &cfg, TNorm::SProduct).unwrap())
    };
    let (a, b) = (run(1), run(3));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.models, y.models);
        assert_eq!(x.metrics, y.metrics);
    }
    assert_eq!(a.iter().map(|r| r.metrics.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[test]
fn oracle_satisfies_all_properties() {
    let ds = digits(100, 10, 0.0);
    for repeats in [1, 6] {
        let p = evaluate_properties(&Oracle, &ds.eval_digits, &ds.eval_pairs, 0, repeats).unwrap();
        assert_eq!((p.commutativity, p.associativity, p.distributivity), (1.0, 1.0, 1.0));
    }
}

#[test]
fn symmetric_heads_commute() {
    let ds = digits(100, 10, 0.5);
    let mut models = DigitModels::new(32, &small_cfg(), 4);
    let symmetrize = |m: &mut Mlp| {
        let w = &mut m.layers[0].w;
        for r in 0..w.rows {
            for c in 0..32 {
                w.data[r * 64 + 32 + c] = w.data[r * 64 + c];
            }
        }
    };
    symmetrize(&mut models.sum);
    symmetrize(&mut models.prod);
    let p = evaluate_properties(&models, &ds.eval_digits, &ds.eval_pairs, 0, 6).unwrap();
    assert_eq!(p.commutativity, 1.0);
}

#[test]
fn repeats_only_affect_resampled_properties() {
    let ds = digits(300, 300, 0.5);
    let run = &joint_runs(&ds, &small_cfg(), TNorm::RProduct).unwrap()[0];
    let models = DigitModels {
        digit: run.models[0].clone(),
        sum: run.models[1].clone(),
        prod: run.models[2].clone(),
    };
    let one = evaluate_properties(&models, &ds.eval_digits, &ds.eval_pairs, 5, 1).unwrap();
    let six = evaluate_properties(&models, &ds.eval_digits, &ds.eval_pairs, 5, 6).unwrap();
    assert_eq!(one.commutativity, six.commutativity);
    for p in [one, six] {
        for v in [p.associativity, p.distributivity] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    let again = evaluate_properties(&models, &ds.eval_digits, &ds.eval_pairs, 5, 6).unwrap();
    assert_eq!(six, again);
}

#[test]
fn gold_tags_score_perfectly() {
    let ds = generate_sequence_task(SequenceTaskParams::default()).unwrap();
    let mut counts = SpanCounts::default();
    for s in ds.train.iter().chain(&ds.eval) {
        counts.add(&s.tags, &s.tags);
        assert_eq!(violations(&s.tags).0, 0);
    }
    assert_eq!(counts.f1(), 1.0);
}

#[test]
fn tagger_learns_and_rejects_rgodel() {
    let ds = generate_sequence_task(SequenceTaskParams {
        n_train: 200,
        n_eval: 100,
        ..SequenceTaskParams::default()
    })
    .unwrap();
    let mut cfg = ExperimentConfig {
        task: TaskKind::Tagging,
        seeds: vec![0],
        ..ExperimentConfig::default()
    };
    cfg.tagging.fraction = 0.5;
    cfg.optimizer.lr = 1e-2;
    cfg.optimizer.epochs = 10;
    let run = &tagger_runs(&ds, &cfg, TNorm::RProduct, true).unwrap()[0];
    assert!(metric(run, "f1") > 0.3);
    assert!(tagger_runs(&ds, &cfg, TNorm::RGodel, true).is_err());
}
