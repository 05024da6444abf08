//! End-to-end checks of the command-line surface: the frozen accountant
//! line, exit codes, and a miniature partition -> pretrain -> train ->
//! generate -> evaluate -> audit round trip on a synthetic fixture.

use std::fs;
use std::path::{Path, PathBuf};

use dp2vae::data::idx::{write_idx_images, write_idx_labels};
use dp2vae::data::{synthetic, Checkpoint, LabeledDataset, Provenance};
use dp2vae::training::Stage2State;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = dp2vae_cli::run_with_output(args.iter().copied(), &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

/// Writes an n-record 28x28 fixture as an IDX pair, returning the two paths.
fn write_fixture(dir: &Path, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let data = synthetic::make_dataset(n, seed);
    let images = dir.join(format!("train-images-{n}.idx"));
    let labels = dir.join(format!("train-labels-{n}.idx"));
    write_idx_images(&images, n, data.height(), data.width(), data.pixels()).unwrap();
    write_idx_labels(&labels, data.labels()).unwrap();
    (images, labels)
}

#[test]
fn accountant_prints_the_frozen_oracle_line() {
    let (code, out, _) = run(&[
        "dp2vae",
        "accountant",
        "--K",
        "1",
        "--sigma",
        "2",
        "--T",
        "1",
        "--delta",
        "1e-5",
    ]);
    assert_eq!(code, 0);
    assert_eq!(out, "epsilon=5.302585092994046 delta=0.00001 alpha=6\n");
}

#[test]
fn accountant_batch_mode_requires_a_subset_size() {
    let (code, _, err) = run(&["dp2vae", "accountant", "--amplification", "batch"]);
    assert_eq!(code, 2);
    assert!(err.contains("subset-size"), "{err}");

    let (code, out, _) = run(&[
        "dp2vae",
        "accountant",
        "--amplification",
        "batch",
        "--subset-size",
        "64",
        "--B",
        "32",
        "--sigma",
        "2",
        "--T",
        "1",
    ]);
    assert_eq!(code, 0, "{out}");
    assert!(out.starts_with("epsilon="), "{out}");
}

#[test]
fn negative_sigma_is_a_usage_error_naming_sigma() {
    let (code, _, err) = run(&["dp2vae", "accountant", "--sigma", "-1"]);
    assert_eq!(code, 2);
    assert!(err.contains("sigma"), "{err}");
}

#[test]
fn unknown_config_key_is_a_usage_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "sigm = 2\n").unwrap();
    let (code, _, err) = run(&[
        "dp2vae",
        "accountant",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("sigm"), "{err}");
}

#[test]
fn malformed_idx_input_exits_with_the_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("garbage.idx");
    fs::write(&images, b"not an idx file at all").unwrap();
    let labels = dir.path().join("labels.idx");
    write_idx_labels(&labels, &[0, 1, 2]).unwrap();
    let (code, _, err) = run(&[
        "dp2vae",
        "partition",
        "--images",
        images.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn missing_required_inputs_are_usage_errors() {
    let (code, _, err) = run(&["dp2vae", "partition"]);
    assert_eq!(code, 2);
    assert!(err.contains("images"), "{err}");
}

/// The whole pipeline at toy scale, driven purely through the CLI surface.
#[test]
fn mini_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap().to_string();
    let (images, labels) = write_fixture(dir.path(), 60, 7);
    let (test_images, test_labels) = write_fixture(dir.path(), 40, 8);
    let images = images.to_str().unwrap().to_string();
    let labels = labels.to_str().unwrap().to_string();

    let (code, _, err) = run(&[
        "dp2vae", "partition", "--images", &images, "--labels", &labels, "--out", &out_s,
        "--k", "3", "--seed", "5",
    ]);
    assert_eq!(code, 0, "partition failed: {err}");
    assert!(out.join("partition.txt").exists());

    let (code, _, err) = run(&[
        "dp2vae", "pretrain", "--images", &images, "--labels", &labels, "--out", &out_s,
        "--k", "3", "--seed", "5", "--batch-size", "8", "--pretrain-steps", "6",
        "--latent-dim", "4",
    ]);
    assert_eq!(code, 0, "pretrain failed: {err}");
    assert!(out.join("pool.ckpt").exists());
    let summary = fs::read_to_string(out.join("stage1-summary.csv")).unwrap();
    assert!(summary.contains("k,subset_size"), "{summary}");
    // One data row per encoder.
    assert_eq!(summary.lines().filter(|l| !l.starts_with('#')).count(), 4);

    let (code, stdout, err) = run(&[
        "dp2vae", "train", "--images", &images, "--labels", &labels, "--out", &out_s,
        "--seed", "5", "--batch-size", "8", "--steps", "10", "--sigma", "2",
    ]);
    assert_eq!(code, 0, "train failed: {err}");
    assert!(stdout.contains("epsilon="), "{stdout}");
    assert!(out.join("decoder.ckpt").exists());
    assert!(out.join("epsilon-report.txt").exists());
    let metrics = fs::read_to_string(out.join("stage2-metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().filter(|l| l.starts_with("2,")).count(),
        10,
        "{metrics}"
    );

    let (code, _, err) = run(&[
        "dp2vae", "generate", "--out", &out_s, "--seed", "5", "--per-class", "6",
    ]);
    assert_eq!(code, 0, "generate failed: {err}");
    let syn = LabeledDataset::from_idx_pair(
        &out.join("synthetic-images.idx"),
        &out.join("synthetic-labels.idx"),
        Provenance::Synthetic,
    )
    .unwrap();
    assert_eq!(syn.len(), 60);
    assert_eq!(syn.image_dim(), 784);
    let meta = fs::read_to_string(out.join("synthetic-meta.txt")).unwrap();
    assert!(meta.contains("epsilon = "), "{meta}");

    let (code, stdout, err) = run(&[
        "dp2vae", "evaluate", "--out", &out_s, "--seed", "5",
        "--real-images", test_images.to_str().unwrap(),
        "--real-labels", test_labels.to_str().unwrap(),
        "--features", "pca", "--feature-dim", "8", "--classifier", "logreg",
        "--runs", "2",
    ]);
    assert_eq!(code, 0, "evaluate failed: {err}");
    assert!(stdout.contains("frechet distance"), "{stdout}");
    assert!(stdout.contains("logreg accuracy"), "{stdout}");
    let csv = fs::read_to_string(out.join("evaluation.csv")).unwrap();
    assert!(csv.contains("frechet_pca"), "{csv}");
    assert!(csv.contains("mean_accuracy_logreg"), "{csv}");

    let (code, stdout, err) = run(&[
        "dp2vae", "audit", "--images", &images, "--labels", &labels, "--out", &out_s,
        "--seed", "5", "--batch-size", "8", "--sigma", "2", "--alpha", "4",
        "--trials", "5",
    ]);
    assert_eq!(code, 0, "audit failed: {err}");
    assert!(stdout.contains("max divergence"), "{stdout}");
    let report = fs::read_to_string(out.join("audit-report.txt")).unwrap();
    assert!(report.contains("violations = 0"), "{report}");
}

/// Interrupting stage 2 at a checkpoint and resuming matches the
/// uninterrupted run bitwise, and conflicting resume flags are rejected.
#[test]
fn train_resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = write_fixture(dir.path(), 30, 3);
    let images = images.to_str().unwrap().to_string();
    let labels = labels.to_str().unwrap().to_string();

    let prepare = |out: &Path| {
        let out_s = out.to_str().unwrap();
        let (code, _, err) = run(&[
            "dp2vae", "partition", "--images", &images, "--labels", &labels, "--out", out_s,
            "--k", "2", "--seed", "9",
        ]);
        assert_eq!(code, 0, "{err}");
        let (code, _, err) = run(&[
            "dp2vae", "pretrain", "--images", &images, "--labels", &labels, "--out", out_s,
            "--k", "2", "--seed", "9", "--batch-size", "4", "--pretrain-steps", "3",
            "--latent-dim", "4",
        ]);
        assert_eq!(code, 0, "{err}");
    };

    let one = dir.path().join("one");
    prepare(&one);
    let (code, _, err) = run(&[
        "dp2vae", "train", "--images", &images, "--labels", &labels,
        "--out", one.to_str().unwrap(), "--seed", "9", "--batch-size", "4",
        "--steps", "8", "--sigma", "2",
    ]);
    assert_eq!(code, 0, "{err}");

    let two = dir.path().join("two");
    prepare(&two);
    let (code, _, err) = run(&[
        "dp2vae", "train", "--images", &images, "--labels", &labels,
        "--out", two.to_str().unwrap(), "--seed", "9", "--batch-size", "4",
        "--steps", "5", "--sigma", "2",
    ]);
    assert_eq!(code, 0, "{err}");

    // A conflicting hyperparameter on resume is a usage error.
    let resume = two.join("decoder.ckpt").to_str().unwrap().to_string();
    let (code, _, err) = run(&[
        "dp2vae", "train", "--images", &images, "--labels", &labels,
        "--out", two.to_str().unwrap(), "--resume", &resume, "--steps", "8",
        "--sigma", "4",
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("sigma"), "{err}");

    let (code, _, err) = run(&[
        "dp2vae", "train", "--images", &images, "--labels", &labels,
        "--out", two.to_str().unwrap(), "--resume", &resume, "--steps", "8",
    ]);
    assert_eq!(code, 0, "{err}");

    let load = |path: &Path| -> Stage2State {
        Stage2State::from_checkpoint(&Checkpoint::load(path).unwrap()).unwrap()
    };
    let a = load(&one.join("decoder.ckpt"));
    let b = load(&two.join("decoder.ckpt"));
    assert_eq!(a.step, 8);
    assert_eq!(b.step, 8);
    let bits = |s: &Stage2State| -> Vec<u64> {
        s.decoder.params().0.iter().map(|p| p.to_bits()).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.spend.epsilon.to_bits(), b.spend.epsilon.to_bits());
}

/// Same seed, same artifacts; different seed, different samples.
#[test]
fn generation_is_deterministic_in_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = write_fixture(dir.path(), 30, 4);
    let images = images.to_str().unwrap().to_string();
    let labels = labels.to_str().unwrap().to_string();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap().to_string();

    for args in [
        vec!["dp2vae", "partition", "--images", &images, "--labels", &labels, "--out", &out_s,
             "--k", "2", "--seed", "6"],
        vec!["dp2vae", "pretrain", "--images", &images, "--labels", &labels, "--out", &out_s,
             "--k", "2", "--seed", "6", "--batch-size", "4", "--pretrain-steps", "3",
             "--latent-dim", "4"],
        vec!["dp2vae", "train", "--images", &images, "--labels", &labels, "--out", &out_s,
             "--seed", "6", "--batch-size", "4", "--steps", "4", "--sigma", "2"],
    ] {
        let (code, _, err) = run(&args.iter().map(|s| &**s).collect::<Vec<_>>());
        assert_eq!(code, 0, "{err}");
    }

    let gen = |seed: &str, tag: &str| -> Vec<u8> {
        let img = out.join(format!("syn-{tag}.idx"));
        let lab = out.join(format!("syn-labels-{tag}.idx"));
        let (code, _, err) = run(&[
            "dp2vae", "generate", "--out", &out_s, "--seed", seed, "--per-class", "3",
            "--synthetic-images", img.to_str().unwrap(),
            "--synthetic-labels", lab.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        fs::read(&img).unwrap()
    };
    let a = gen("6", "a");
    let b = gen("6", "b");
    let c = gen("7", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}
