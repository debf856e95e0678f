use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use celab::pipeline::{reproduce, sha256_hex, Manifest, ReproduceConfig, MANIFEST};
use celab::Error;

fn mnist(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/mnist")
        .join(file)
}

fn small_config(seed: u64) -> ReproduceConfig {
    let mut c = ReproduceConfig::new(
        seed,
        mnist("digits-images-idx3-ubyte.gz"),
        mnist("digits-labels-idx1-ubyte.gz"),
    );
    c.pairs = 150;
    c.test_count = 30;
    c.ce_train.epochs = 1;
    c.ce_train.batch_size = 32;
    c.mnist_train.epochs = 1;
    c.mnist_train.batch_size = 64;
    c.mnist_limit = Some(200);
    c.tsne.perplexity = 10.0;
    c.tsne.iterations = 150;
    c.tsne_sample = Some(60);
    c
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST)).unwrap()).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

const ALL_STAGES: [&str; 7] = ["data", "train-ce", "train-mnist", "embed", "classify", "tsne", "report"];

#[test]
fn run_records_every_output_with_its_digest() {
    let dir = tempfile::tempdir().unwrap();
    let summary = reproduce(dir.path(), &small_config(3), false).unwrap();
    assert!(summary.skipped.is_empty());
    assert_eq!(summary.methods.len(), 4);
    assert!(summary.methods.iter().all(|m| m.predictions.len() == 30));
    assert!(summary.purity.values().all(|p| (0.0..=1.0).contains(p)));

    let m = manifest(dir.path());
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ALL_STAGES);
    for stage in &m.stages {
        assert!(!stage.outputs.is_empty());
        for (file, digest) in &stage.outputs {
            assert_eq!(&sha256_hex(&fs::read(dir.path().join(file)).unwrap()), digest, "{file}");
        }
    }
    for file in [
        "checkpoints/ce.cepn",
        "checkpoints/mnist.cepn",
        "methods.json",
        "tsne_ce.svg",
        "tsne_mnist.csv",
        "report.txt",
    ] {
        assert!(dir.path().join(file).is_file(), "{file}");
    }
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("cluster purity"));
    assert!(!snapshot(dir.path()).keys().any(|k| k.ends_with(".partial")));
}

#[test]
fn resume_reuses_intact_stages_and_reruns_from_the_first_damaged_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(4);
    reproduce(dir.path(), &config, false).unwrap();
    let before = snapshot(dir.path());

    let again = reproduce(dir.path(), &config, true).unwrap();
    assert_eq!(again.skipped, ALL_STAGES);
    assert_eq!(snapshot(dir.path()), before);

    fs::write(dir.path().join("tsne_ce.csv"), "tampered\n").unwrap();
    let repaired = reproduce(dir.path(), &config, true).unwrap();
    assert_eq!(repaired.skipped, ALL_STAGES[..5]);
    assert_eq!(snapshot(dir.path()), before);

    let mut changed = config.clone();
    changed.k = 3;
    let rerun = reproduce(dir.path(), &changed, true).unwrap();
    assert!(rerun.skipped.is_empty());
    assert_eq!(manifest(dir.path()).config, changed);
}

#[test]
fn failing_stage_is_named_and_earlier_stages_stay_committed() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(5);
    config.mnist_images = dir.path().join("missing-images.gz");
    let err = reproduce(dir.path(), &config, false).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(*stage, "train-mnist"),
        other => panic!("expected a stage error, got {other:?}"),
    }
    assert!(err.to_string().contains("missing-images.gz"), "{err}");
    let names: Vec<String> = manifest(dir.path()).stages.into_iter().map(|s| s.name).collect();
    assert_eq!(names, ["data", "train-ce"]);

    fs::copy(mnist("digits-images-idx3-ubyte.gz"), &config.mnist_images).unwrap();
    let resumed = reproduce(dir.path(), &config, true).unwrap();
    assert_eq!(resumed.skipped, ["data", "train-ce"]);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    reproduce(a.path(), &small_config(7), false).unwrap();
    reproduce(b.path(), &small_config(7), false).unwrap();
    assert_eq!(snapshot(a.path()), snapshot(b.path()));

    let c = tempfile::tempdir().unwrap();
    reproduce(c.path(), &small_config(8), false).unwrap();
    assert_ne!(snapshot(a.path())["pairs.tsv"], snapshot(c.path())["pairs.tsv"]);
}

#[test]
fn invalid_configs_are_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(1);
    config.test_count = 150;
    assert!(matches!(
        reproduce(dir.path(), &config, false),
        Err(Error::InvalidArgument(_))
    ));
    config.test_count = 30;
    config.ce_train.batch_size = 0;
    assert!(reproduce(dir.path(), &config, false).is_err());
    assert!(!dir.path().join(MANIFEST).exists());
}
