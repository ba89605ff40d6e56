use std::process::Command;

use cdnet::classifier::{accuracy, TrainConfig};
use cdnet::dataio::Dataset;
use cdnet::eval::{run_baseline, run_cdnet};
use cdnet::reverse::ChainTrainConfig;
use cdnet::simgen::{generate_sim_dataset, SimConfig};

fn easy(seed: u64) -> Dataset {
    generate_sim_dataset(&SimConfig {
        noise_level: 0,
        similarity_level: 0,
        n_per_class: 24,
        length: 48,
        seed,
        ..SimConfig::default()
    })
    .unwrap()
    .dataset
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs_pretrain: 60,
        epochs_finetune: 30,
        chain: ChainTrainConfig {
            epochs: 100,
            ..ChainTrainConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn both_methods_separate_well_separated_classes() {
    let config = small_config();
    for seed in 0..3 {
        let data = easy(seed);
        let base = run_baseline(&data, &config, seed).unwrap();
        let cdnet = run_cdnet(&data, &config, seed).unwrap().classifier;
        let (b, c) = (
            accuracy(&base, &data.test).unwrap(),
            accuracy(&cdnet, &data.test).unwrap(),
        );
        assert!(b >= 0.9 && c >= 0.9, "seed {seed}: baseline {b}, cdnet {c}");
    }
}

#[test]
fn pretraining_lowers_the_composite_and_moves_the_weights() {
    let data = easy(3);
    let run = run_cdnet(&data, &small_config(), 1).unwrap();
    let totals: Vec<f64> = run.pretrain_log.iter().map(|r| r.l_total).collect();
    let decile = (totals.len() / 10).max(1);
    let head: f64 = totals[..decile].iter().sum::<f64>() / decile as f64;
    let tail: f64 = totals[totals.len() - decile..].iter().sum::<f64>() / decile as f64;
    assert!(tail < head, "first decile {head}, last decile {tail}");
    assert!(
        run.weights.log_sigmas().iter().any(|s| s.abs() > 1e-3),
        "{:?}",
        run.weights.log_sigmas()
    );
    assert!(run.finetune_log.last() <= run.finetune_log.first());
    assert!(accuracy(&run.classifier, &data.train).unwrap() >= 0.9);
}

#[test]
fn zero_learning_rate_leaves_every_parameter_alone() {
    let data = easy(4);
    let config = TrainConfig {
        learning_rate: 0.0,
        epochs_pretrain: 3,
        epochs_finetune: 2,
        ..small_config()
    };
    let untouched = run_cdnet(
        &data,
        &TrainConfig {
            epochs_pretrain: 1,
            epochs_finetune: 1,
            ..config.clone()
        },
        2,
    )
    .unwrap();
    let run = run_cdnet(&data, &config, 2).unwrap();
    let values = |ts: &[cdnet::tensor::DiffTensor]| -> Vec<f64> {
        ts.iter().flat_map(|t| t.values().to_vec()).collect()
    };
    assert_eq!(
        values(&run.classifier.body),
        values(&untouched.classifier.body)
    );
    assert_eq!(
        values(&run.classifier.head),
        values(&untouched.classifier.head)
    );
    assert_eq!(run.weights.log_sigmas(), [0.0; 3]);
    assert_eq!(run.pretrain_log.len(), 3);
}

#[test]
fn cli_runs_the_staged_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let data_dir = dir.path().join("data");
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"epochs_pretrain": 2, "epochs_finetune": 2, "chain_epochs": 3, "batch_size": 4,
            "n_per_class": 10, "length": 24, "similarity_level": 0}"#,
    )
    .unwrap();
    let cdnet = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_cdnet"))
            .arg("--run-dir")
            .arg(&run_dir)
            .arg("--config")
            .arg(&config)
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    let data = data_dir.to_str().unwrap();
    let sim = cdnet(&["simulate", "--out", data]);
    let name = sim
        .split_whitespace()
        .nth(1)
        .unwrap()
        .trim_end_matches(':')
        .to_string();
    let source = [
        "--data-dir",
        data,
        "--dataset",
        name.as_str(),
        "--no-normalize",
    ];
    cdnet(&[&["train-chains"][..], &source].concat());
    cdnet(&[&["pretrain"][..], &source].concat());
    cdnet(&[&["finetune"][..], &source].concat());
    let report = cdnet(&[&["evaluate"][..], &source].concat());
    assert!(report.contains("accuracy"), "{report}");
    for file in [
        "chains.ckpt",
        "pretrain_log.csv",
        "model.ckpt",
        "evaluation.json",
    ] {
        assert!(run_dir.join(file).exists(), "missing {file}");
    }

    let bad = Command::new(env!("CARGO_BIN_EXE_cdnet"))
        .args(["--run-dir", run_dir.to_str().unwrap(), "rank", "--results"])
        .arg(dir.path().join("absent.csv"))
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
