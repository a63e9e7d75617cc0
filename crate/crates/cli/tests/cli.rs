use std::path::Path;
use std::process::{Command, Output};

use psbc::data::{
    load_model, write_idx_images, write_idx_labels, IdxImages, MNIST_TEST_IMAGES,
    MNIST_TEST_LABELS, MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS,
};

fn psbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psbc"))
        .args(args)
        .env_remove("PSBC_DATA_DIR")
        .output()
        .expect("run psbc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Digit `d` lights up column band `d` of a 28x28 image, plus deterministic noise.
fn image(d: u8, k: usize) -> Vec<u8> {
    (0..784)
        .map(|i| {
            let band = (i % 28) / 3;
            let noise = ((i * 31 + k * 17) % 40) as u8;
            if band == d as usize {
                200 + noise / 2
            } else {
                noise
            }
        })
        .collect()
}

fn write_fixture(dir: &Path, per_digit_train: usize, per_digit_test: usize) {
    let make = |per: usize, offset: usize| {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for k in 0..per {
            for d in 0..10u8 {
                pixels.extend(image(d, k + offset));
                labels.push(d);
            }
        }
        (
            IdxImages {
                count: labels.len(),
                rows: 28,
                cols: 28,
                pixels,
            },
            labels,
        )
    };
    let (im, lb) = make(per_digit_train, 0);
    write_idx_images(&dir.join(MNIST_TRAIN_IMAGES), &im).unwrap();
    write_idx_labels(&dir.join(MNIST_TRAIN_LABELS), &lb).unwrap();
    let (im, lb) = make(per_digit_test, 1000);
    write_idx_images(&dir.join(MNIST_TEST_IMAGES), &im).unwrap();
    write_idx_labels(&dir.join(MNIST_TEST_LABELS), &lb).unwrap();
}

#[test]
fn simulate_writes_one_row_per_layer() {
    let o = psbc(&["simulate", "--alpha", "step", "--nu", "20", "--nt", "300"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows.len(), 301);
    assert!(rows.iter().all(|r| r.split(',').count() == 20));
    let first: Vec<f64> = rows[0].split(',').map(|v| v.parse().unwrap()).collect();
    let expected = 0.5 - 0.5 * (std::f64::consts::PI * (2.0 * 0.025 - 1.0)).sin();
    assert!((first[0] - expected).abs() < 1e-15);
}

#[test]
fn simulate_rejects_unknown_profile() {
    let o = psbc(&["simulate", "--alpha", "wiggle"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_exit_codes() {
    let o = psbc(&["verify", "--suite", "solver"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("PASS solver"));

    let o = psbc(&["verify", "--suite", "polynomial"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("FAIL polynomial"));

    let o = psbc(&["verify", "--suite", "nonsense"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_digits_and_missing_data() {
    for digits in ["3,3", "1,10", "7"] {
        let o = psbc(&["train", "--digits", digits, "--out", "unused"]);
        assert_eq!(o.status.code(), Some(1), "{digits}");
    }
    let o = psbc(&["train", "--digits", "0,1", "--out", "unused"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("PSBC_DATA_DIR"));

    let empty = tempfile::tempdir().unwrap();
    let o = psbc(&["ingest", "--data-dir", empty.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ingest_counts() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 4, 2);
    let o = psbc(&["ingest", "--data-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("train-development records: 40"));
    assert!(out.contains("digit 7: 4 train-development, 2 test"));
}

#[test]
fn train_writes_loadable_model_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 40, 10);
    let data = dir.path().to_str().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = psbc(&[
            "train",
            "--digits",
            "0,1",
            "--data-dir",
            data,
            "--epochs",
            "4",
            "--batch-size",
            "8",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (out, stdout(&o))
    };
    let (a, out_a) = run("a.psbc");
    let (b, out_b) = run("b.psbc");
    assert_eq!(out_a, out_b);
    assert!(
        out_a.contains("test accuracy 1.000000 on 20 records"),
        "{out_a}"
    );
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let model = load_model(&a).unwrap();
    assert_eq!(model.hp().n_u, 784);
    assert!(model.normalization().is_some());

    let history = std::fs::read_to_string(dir.path().join("a.psbc.history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(
        lines[0],
        "epoch,cost,accuracy,dt_u,dt_p,diam_alpha,diam_beta"
    );
    assert_eq!(lines.len(), 5);
}

#[test]
fn multiclass_trains_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 12, 3);
    let models = dir.path().join("models");
    let report = dir.path().join("report.txt");
    let o = psbc(&[
        "multiclass",
        "--train",
        "--data-dir",
        dir.path().to_str().unwrap(),
        "--epochs",
        "3",
        "--npt",
        "28",
        "--models",
        models.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(&models).unwrap().count(), 45);
    assert!(stdout(&o).contains("on 30 records"));
    assert!(report.exists());
    let cm = std::fs::read_to_string(dir.path().join("report.confusion.csv")).unwrap();
    assert_eq!(cm.lines().count(), 11);
}
