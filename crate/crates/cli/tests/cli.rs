use std::path::Path;
use std::process::{Command, Output};

use siamese_core::index::read_embeddings_tsv;
use siamese_core::trainer::read_run_log;

fn siamese(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siamese"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, classes: &str, per_class: &str, seed: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = siamese(&[
        "gen-data",
        "--classes",
        classes,
        "--per-class",
        per_class,
        "--size",
        "8",
        "--sigma",
        "0.1",
        "--seed",
        seed,
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

/// Tiny training run; returns the run directory.
fn train_small(dir: &Path, data: &Path, mode: &str) -> std::path::PathBuf {
    let run = dir.join(format!("run-{mode}"));
    let cfg = dir.join("small.json");
    std::fs::write(
        &cfg,
        r#"{"train": {"num_epochs": 4, "validation_pairs": 64, "mining": {"batch_size": 16}}}"#,
    )
    .unwrap();
    let o = siamese(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(data),
        "--out",
        p(&run),
        "--mode",
        mode,
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(
        text.lines().filter(|l| l.starts_with("epoch")).count(),
        4,
        "{text}"
    );
    run
}

#[test]
fn gen_data_rejects_single_class() {
    let dir = tempfile::tempdir().unwrap();
    let o = siamese(&[
        "gen-data",
        "--classes",
        "1",
        "--out",
        p(&dir.path().join("x.simd")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("x.simd").exists());
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    let o = siamese(&["train", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochz"));
}

#[test]
fn print_config_round_trips() {
    let o = siamese(&["train", "--preset", "paper", "--print-config"]);
    assert!(o.status.success());
    let cfg = siamese_core::config::RunConfig::from_json(&stdout(&o)).unwrap();
    assert_eq!(cfg, siamese_core::config::RunConfig::paper());
}

#[test]
fn missing_cifar_directory_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = siamese(&[
        "import-cifar",
        "--dir",
        p(dir.path()),
        "--out-train",
        p(&dir.path().join("a")),
        "--out-test",
        p(&dir.path().join("b")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data_batch_1.bin"));
}

#[test]
fn train_eval_query_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "data.simd", "3", "12", "0");
    let run = train_small(dir.path(), &data, "naive");
    for f in [
        "model.simn",
        "run_log.jsonl",
        "config.json",
        "train.simd",
        "validation.simd",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = read_run_log(&run.join("run_log.jsonl")).unwrap();
    assert_eq!(
        log.iter().map(|r| r.epoch).collect::<Vec<_>>(),
        vec![1, 2, 3, 4]
    );
    let model = run.join("model.simn");

    let o = siamese(&[
        "eval",
        "--model",
        p(&model),
        "--repository-data",
        p(&run.join("train.simd")),
        "--query-data",
        p(&run.join("validation.simd")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o);
    let acc: f64 = line
        .trim()
        .strip_prefix("accuracy@1 ")
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // A query set that overlaps the repository is rejected.
    let o = siamese(&[
        "eval",
        "--model",
        p(&model),
        "--repository-data",
        p(&data),
        "--query-data",
        p(&data),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let q = [
        "query",
        "--model",
        p(&model),
        "--index-data",
        p(&data),
        "--image-id",
        "5",
        "--top-n",
        "4",
    ];
    let a = siamese(&q);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let rows: Vec<String> = stdout(&a).lines().skip(1).map(String::from).collect();
    assert_eq!(rows.len(), 4);
    assert!(
        rows[0].starts_with("1\t5\t"),
        "query image ranks first: {rows:?}"
    );
    assert_eq!(stdout(&siamese(&q)), stdout(&a));

    let mut zero = q;
    zero[8] = "0";
    assert_eq!(siamese(&zero).status.code(), Some(2));
    let mut missing = q;
    missing[6] = "999999";
    assert_eq!(siamese(&missing).status.code(), Some(2));

    let tsv = dir.path().join("emb.tsv");
    let o = siamese(&[
        "export-embeddings",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--out",
        p(&tsv),
    ]);
    assert!(o.status.success());
    let index = read_embeddings_tsv(&tsv).unwrap();
    assert_eq!(index.len(), 36);
    for (_, _, e) in index.rows() {
        let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}

#[test]
fn naive_budget_from_run_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "data.simd", "3", "12", "1");
    let opms = train_small(dir.path(), &data, "opms");
    let opms_log = read_run_log(&opms.join("run_log.jsonl")).unwrap();

    let run = dir.path().join("matched");
    let o = siamese(&[
        "train",
        "--config",
        p(&dir.path().join("small.json")),
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--mode",
        "naive",
        "--seed",
        "3",
        "--naive-budget",
        p(&opms.join("run_log.jsonl")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let naive_log = read_run_log(&run.join("run_log.jsonl")).unwrap();
    let counts = |l: &[siamese_core::trainer::EpochReport]| {
        l.iter().map(|r| r.pairs_trained()).collect::<Vec<_>>()
    };
    assert_eq!(counts(&naive_log), counts(&opms_log));
}

#[test]
fn desk_training_lowers_validation_loss() {
    // Naive mode: under the unit-margin prune, mined runs keep no loss-bearing
    // negatives and their validation loss is not expected to fall.
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("desk");
    let o = siamese(&[
        "train",
        "--preset",
        "desk",
        "--mode",
        "naive",
        "--epochs",
        "4",
        "--out",
        p(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = read_run_log(&run.join("run_log.jsonl")).unwrap();
    let first = log.first().unwrap().validation_loss.unwrap();
    let last = log.last().unwrap().validation_loss.unwrap();
    assert!(last < first, "{first} -> {last}");
    let text = stdout(&o);
    let acc: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("held-out accuracy@1 "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc >= 0.9, "{acc}");
}

#[test]
fn grad_check_passes_on_desk() {
    let o = siamese(&["grad-check", "--preset", "desk", "--coordinates", "48"]);
    let text = stdout(&o);
    assert!(o.status.success(), "{text}");
    assert!(text.trim_end().ends_with("PASS"), "{text}");
}

#[test]
fn gen_data_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.simd");
    let b = dir.path().join("b.simd");
    for out in [&a, &b] {
        assert!(siamese(&["gen-data", "--seed", "9", "--out", p(out)])
            .status
            .success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let data = siamese_core::dataio::load_dataset(&a).unwrap();
    assert_eq!(data.len(), 800);
    assert_eq!(data.image_shape(), Some(&[3, 16, 16][..]));
}

#[test]
fn malformed_json_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"num_epochs": }"#).unwrap();
    let o = siamese(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn self_match_and_small_export() {
    let dir = tempfile::tempdir().unwrap();
    let full =
        siamese_core::dataio::load_dataset(&gen(dir.path(), "full.simd", "3", "2", "4")).unwrap();
    let picked: Vec<_> = full.samples.iter().step_by(2).cloned().collect();
    let (id, label) = (picked[0].id, picked[0].label);
    let three = siamese_core::dataio::Dataset::new(picked, 3, None, "test").unwrap();
    let data = dir.path().join("three.simd");
    siamese_core::dataio::save_dataset(&three, &data).unwrap();
    let model = dir.path().join("m.simn");
    let cfg = siamese_core::config::RunConfig::desk().model_for(&[3, 8, 8]);
    let m = siamese_core::multiscale::MultiScaleModel::build(
        cfg,
        &mut siamese_core::numerics::Rng::new(0),
    )
    .unwrap();
    siamese_core::trainer::save_model(&model, &m, None).unwrap();

    let o = siamese(&[
        "query",
        "--model",
        p(&model),
        "--index-data",
        p(&data),
        "--image-id",
        &id.to_string(),
        "--top-n",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = stdout(&o).lines().nth(1).unwrap().to_string();
    assert_eq!(first, format!("1\t{id}\t{label}\t0.00000000"));

    let tsv = dir.path().join("e.tsv");
    assert!(siamese(&[
        "export-embeddings",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--out",
        p(&tsv)
    ])
    .status
    .success());
    assert_eq!(std::fs::read_to_string(&tsv).unwrap().lines().count(), 4);
}

#[test]
fn untrained_model_on_noise_is_near_chance() {
    use siamese_core::dataio::{load_dataset, save_dataset, split};
    use siamese_core::numerics::Rng;

    let dir = tempfile::tempdir().unwrap();
    // Noise far above the template contrast leaves the labels uninformative.
    let data = dir.path().join("noise.simd");
    let o = siamese(&[
        "gen-data",
        "--classes",
        "10",
        "--per-class",
        "40",
        "--size",
        "8",
        "--sigma",
        "100",
        "--out",
        p(&data),
    ]);
    assert!(o.status.success());
    let parts = split(
        &load_dataset(&data).unwrap(),
        &[0.5, 0.5],
        true,
        &mut Rng::new(1),
    )
    .unwrap();
    let (repo, queries) = (dir.path().join("repo.simd"), dir.path().join("q.simd"));
    save_dataset(&parts[0], &repo).unwrap();
    save_dataset(&parts[1], &queries).unwrap();

    let model = dir.path().join("m.simn");
    let cfg = siamese_core::config::RunConfig::desk().model_for(&[3, 8, 8]);
    let m = siamese_core::multiscale::MultiScaleModel::build(cfg, &mut Rng::new(0)).unwrap();
    siamese_core::trainer::save_model(&model, &m, None).unwrap();

    let o = siamese(&[
        "eval",
        "--model",
        p(&model),
        "--repository-data",
        p(&repo),
        "--query-data",
        p(&queries),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let acc: f64 = stdout(&o)
        .trim()
        .strip_prefix("accuracy@1 ")
        .unwrap()
        .parse()
        .unwrap();
    // 200 queries: chance 0.1, binomial sd about 0.021.
    assert!((0.03..=0.17).contains(&acc), "{acc}");
}
