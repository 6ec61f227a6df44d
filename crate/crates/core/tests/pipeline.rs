//! Data, training, persistence and retrieval wired together on a tiny set.

use siamese_core::config::RunConfig;
use siamese_core::dataio::SyntheticSpec;
use siamese_core::index::{build_index, embeddings_tsv, parse_embeddings_tsv, query_top_n};
use siamese_core::multiscale::MultiScaleConfig;
use siamese_core::pairs::Embedder;
use siamese_core::trainer::{
    evaluate_accuracy_at_1, fit, load_model, read_run_log, save_model, MiningMode, RunArtifacts,
};

fn small_run(mode: MiningMode) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.data = siamese_core::config::DataSource::Synthetic {
        spec: SyntheticSpec {
            num_classes: 3,
            per_class: 20,
            channels: 3,
            height: 8,
            width: 8,
            noise_sigma: 0.1,
        },
        seed: 5,
    };
    cfg.train.num_epochs = 3;
    cfg.train.mode = mode;
    cfg.train.mining.batch_size = 12;
    cfg.train.validation_pairs = 32;
    cfg.train.checkpoint_every = 1;
    cfg
}

fn model_cfg() -> MultiScaleConfig {
    let mut m = MultiScaleConfig::desk(&[3, 8, 8], 4);
    m.branch_dims = vec![8, 6, 4];
    m.joint_dim = 8;
    m
}

#[test]
fn train_persist_and_retrieve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(MiningMode::Opms);
    let data = cfg.data.load().unwrap();
    let (train_raw, held_raw) = cfg.split_data(&data).unwrap();
    let held_raw = held_raw.unwrap();

    let mut artifacts = RunArtifacts::create(dir.path(), 1, None).unwrap();
    let fitted = fit(
        &train_raw,
        Some(&held_raw),
        model_cfg(),
        &cfg.train,
        &mut artifacts,
    )
    .unwrap();
    drop(artifacts);

    let log = read_run_log(&dir.path().join("run_log.jsonl")).unwrap();
    assert_eq!(log.len(), 3);
    assert_eq!(
        log.iter().map(|r| r.lambda).collect::<Vec<_>>(),
        vec![1.0 / 3.0, 2.0 / 3.0, 1.0]
    );
    for e in 1..=3 {
        assert!(dir.path().join(format!("epoch-{e:04}.simn")).exists());
    }

    let path = dir.path().join("model.simn");
    save_model(&path, &fitted.model, Some(&fitted.stats)).unwrap();
    let (model, stats) = load_model(&path).unwrap();
    assert_eq!(stats.as_ref(), Some(&fitted.stats));

    let train = fitted.stats.apply(&train_raw).unwrap();
    let held = fitted.stats.apply(&held_raw).unwrap();
    let index = build_index(&model, &train).unwrap();
    for s in train.samples.iter().take(5) {
        let top = query_top_n(&index, &model.embed_eval(&s.image).unwrap(), 1).unwrap();
        assert_eq!(top[0].id, s.id);
        assert!(top[0].distance < 1e-12);
    }
    let reparsed = parse_embeddings_tsv(&embeddings_tsv(&index)).unwrap();
    assert_eq!(reparsed.len(), index.len());

    let acc = evaluate_accuracy_at_1(&model, &held, &train).unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn naive_and_opms_share_the_data_path() {
    let cfg = small_run(MiningMode::Naive);
    let data = cfg.data.load().unwrap();
    let (train_raw, _) = cfg.split_data(&data).unwrap();
    let mut train_cfg = cfg.train.clone();
    train_cfg.naive_budget = Some(vec![40, 40, 40]);
    let fitted = fit(
        &train_raw,
        None,
        model_cfg(),
        &train_cfg,
        &mut siamese_core::trainer::NoObserver,
    )
    .unwrap();
    let counts: Vec<usize> = fitted
        .outcome
        .reports
        .iter()
        .map(|r| r.pairs_trained())
        .collect();
    assert_eq!(counts, vec![40, 40, 40]);
    assert!(fitted
        .outcome
        .reports
        .iter()
        .all(|r| r.validation_loss.is_none()));
}
