//! End-to-end runs of the `nearood` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nearood::bench::{generate, LabeledDataset};
use nearood::cli::{ExperimentSummary, PipelineConfig, ScoreFile};
use nearood::gaussian::{FeatureSet, GaussianOodModel, ScoreMethod};
use nearood::metrics::{evaluate, EvalReport};

const SMALL: &str = r#"
seed = 4
folds = 3

[bench]
samples_per_class = 40

[train.baseline]
epsilon = 0.0
epochs = 3

[train.smoothed]
epochs = 3

[metrics]
bins = 12
"#;

fn nearood(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nearood"))
        .current_dir(dir)
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = nearood(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn generate_writes_a_lossless_dataset() {
    let dir = workdir();
    let stdout = ok(
        dir.path(),
        &["--config", "small.toml", "generate", "--out", "d.csv"],
    );
    assert!(stdout.contains("class 7: 40"));
    assert!(stdout.contains("OOD: 160"));
    let loaded = LabeledDataset::load(&dir.path().join("d.csv")).unwrap();
    let config = PipelineConfig::from_toml(SMALL).unwrap();
    let direct = generate(&config.effective_bench()).unwrap();
    assert_eq!(loaded.inputs, direct.inputs);
    assert_eq!(loaded.labels, direct.labels);
    assert_eq!(loaded.len(), 8 * 40 + 4 * 40);
}

#[test]
fn generate_is_byte_identical_across_processes() {
    let dir = workdir();
    ok(
        dir.path(),
        &["--config", "small.toml", "generate", "--out", "a.csv"],
    );
    ok(
        dir.path(),
        &["--config", "small.toml", "generate", "--out", "b.csv"],
    );
    ok(
        dir.path(),
        &[
            "--config",
            "small.toml",
            "--seed",
            "5",
            "generate",
            "--out",
            "c.csv",
        ],
    );
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
}

#[test]
fn generate_defaults_into_the_workspace() {
    let dir = workdir();
    ok(
        dir.path(),
        &["--config", "small.toml", "--workspace", "ws", "generate"],
    );
    assert!(dir.path().join("ws/dataset-seed4.csv").exists());
}

#[test]
fn malformed_config_exits_2_and_names_the_field() {
    let dir = workdir();
    fs::write(
        dir.path().join("bad.toml"),
        "[bench]\nsamples_per_klass = 3\n",
    )
    .unwrap();
    let out = nearood(dir.path(), &["--config", "bad.toml", "generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("samples_per_klass"));

    fs::write(
        dir.path().join("bad2.toml"),
        "[train.smoothed]\nepsilon = 1.5\n",
    )
    .unwrap();
    let out = nearood(dir.path(), &["--config", "bad2.toml", "generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));

    let out = nearood(dir.path(), &["--config", "missing.toml", "generate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_exits_3() {
    let dir = workdir();
    let out = nearood(
        dir.path(),
        &["train", "--data", "nope.csv", "--out", "p.json"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn divergent_training_exits_4() {
    let dir = workdir();
    let cfg = format!("{SMALL}\n[train.smoothed.adam]\nbeta1 = 0.9\nbeta2 = 0.999\neps = 1e-300\n");
    let cfg = cfg.replace(
        "[train.smoothed]\nepochs = 3",
        "[train.smoothed]\nepochs = 3\nlearning_rate = 1e300",
    );
    fs::write(dir.path().join("wild.toml"), cfg).unwrap();
    ok(
        dir.path(),
        &["--config", "wild.toml", "generate", "--out", "d.csv"],
    );
    let out = nearood(
        dir.path(),
        &[
            "--config",
            "wild.toml",
            "train",
            "--data",
            "d.csv",
            "--out",
            "p.json",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Artifacts {
    dir: tempfile::TempDir,
}

impl Artifacts {
    fn path(&self, f: &str) -> PathBuf {
        self.dir.path().join(f)
    }
}

/// generate → train → fit (with features) → score (MD, RMD).
fn pipeline() -> Artifacts {
    let dir = workdir();
    let p = dir.path();
    let c = ["--config", "small.toml"];
    ok(p, &[&c[..], &["generate", "--out", "d.csv"]].concat());
    ok(
        p,
        &[&c[..], &["train", "--data", "d.csv", "--out", "p.json"]].concat(),
    );
    ok(
        p,
        &[
            &c[..],
            &[
                "fit",
                "--params",
                "p.json",
                "--data",
                "d.csv",
                "--out",
                "m.json",
                "--features-out",
                "f.csv",
            ],
        ]
        .concat(),
    );
    ok(
        p,
        &[
            &c[..],
            &[
                "score",
                "--model",
                "m.json",
                "--features",
                "f.csv",
                "--method",
                "MD",
                "--out",
                "md.csv",
            ],
        ]
        .concat(),
    );
    ok(
        p,
        &[
            &c[..],
            &[
                "score",
                "--model",
                "m.json",
                "--params",
                "p.json",
                "--data",
                "d.csv",
                "--method",
                "rmd",
                "--threshold",
                "-3.5",
                "--out",
                "rmd.csv",
            ],
        ]
        .concat(),
    );
    Artifacts { dir }
}

#[test]
fn scores_equal_direct_library_calls() {
    let a = pipeline();
    let model = GaussianOodModel::load(&a.path("m.json")).unwrap();
    let features = FeatureSet::load(&a.path("f.csv")).unwrap();
    assert_eq!(features.source_tag, "label-smoothed");

    let md = ScoreFile::load(&a.path("md.csv")).unwrap();
    assert_eq!(md.rows.len(), features.len());
    assert!(
        md.rows.iter().all(|r| r.accepted),
        "default threshold is -inf"
    );
    let direct = model.score_md(&features).unwrap().scores;
    assert_eq!(md.rows.iter().map(|r| r.score).collect::<Vec<_>>(), direct);
    assert_eq!(
        md.rows.iter().map(|r| r.label).collect::<Vec<_>>(),
        features.labels
    );

    let rmd = ScoreFile::load(&a.path("rmd.csv")).unwrap();
    let direct = model.score(&features, ScoreMethod::Rmd).unwrap().scores;
    for (row, s) in rmd.rows.iter().zip(&direct) {
        assert_eq!(row.score, *s);
        assert_eq!(row.accepted, *s >= -3.5);
    }
}

#[test]
fn eval_density_and_project_consume_earlier_artifacts() {
    let a = pipeline();
    let p = a.dir.path();
    let table = ok(
        p,
        &[
            "eval",
            "--scores",
            "rmd.csv",
            "--target-tpr",
            "0.9",
            "--out",
            "r.json",
        ],
    );
    assert!(table.contains("RMD"));
    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(a.path("r.json")).unwrap()).unwrap();
    let (id, ood) = ScoreFile::load(&a.path("rmd.csv")).unwrap().split_scores();
    assert_eq!(
        report,
        evaluate("RMD", "label-smoothed", &id, &ood, 0.9).unwrap()
    );

    ok(
        p,
        &[
            "density", "--scores", "md.csv", "--bins", "7", "--out", "den.csv",
        ],
    );
    let den = fs::read_to_string(a.path("den.csv")).unwrap();
    assert!(den.starts_with("# nearood-density/1\n# method=MD\n"));
    assert_eq!(den.lines().filter(|l| !l.starts_with('#')).count(), 1 + 7);

    ok(
        p,
        &[
            "project",
            "--params",
            "p.json",
            "--data",
            "d.csv",
            "--classes",
            "1,3,5",
            "--out",
            "proj.csv",
        ],
    );
    let proj = fs::read_to_string(a.path("proj.csv")).unwrap();
    assert!(proj.contains("# classes=1,3,5"));
    assert_eq!(
        proj.lines().filter(|l| !l.starts_with('#')).count(),
        1 + 3 * 40
    );
    ok(
        p,
        &[
            "project",
            "--params",
            "p.json",
            "--data",
            "d.csv",
            "--templates",
            "means",
            "--out",
            "proj-means.csv",
        ],
    );

    let out = nearood(
        p,
        &[
            "project",
            "--params",
            "p.json",
            "--data",
            "d.csv",
            "--classes",
            "1,1,5",
            "--out",
            "x.csv",
        ],
    );
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn score_rejects_mismatched_features() {
    let a = pipeline();
    let other = FeatureSet::new(nearood::Matrix::zeros(3, 5), vec![None; 3], 8, "x").unwrap();
    other.save(&a.path("wrong.csv")).unwrap();
    let out = nearood(
        a.dir.path(),
        &[
            "score",
            "--model",
            "m.json",
            "--features",
            "wrong.csv",
            "--out",
            "s.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));
}

fn run_dir(ws: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(ws)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(dirs.len(), 1);
    dirs.pop().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(tree(&path));
        } else {
            out.push((
                path.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&path).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

#[test]
fn run_experiment_is_deterministic_and_complete() {
    // two sibling directories with the same relative workspace
    let dir = tempfile::tempdir().unwrap();
    let (p, q) = (dir.path().join("one"), dir.path().join("two"));
    for d in [&p, &q] {
        fs::create_dir(d).unwrap();
        fs::write(d.join("small.toml"), SMALL).unwrap();
    }
    let stdout = ok(
        &p,
        &[
            "--config",
            "small.toml",
            "--workspace",
            "ws",
            "run-experiment",
        ],
    );
    for m in ["MD", "RMD", "MD-LS", "RMD-LS"] {
        assert!(
            stdout.lines().any(|l| l.starts_with(&format!("{m} "))),
            "{m} missing from\n{stdout}"
        );
    }
    ok(
        &q,
        &[
            "--config",
            "small.toml",
            "--workspace",
            "ws",
            "run-experiment",
        ],
    );
    let (a, b) = (run_dir(&p.join("ws")), run_dir(&q.join("ws")));
    assert_eq!(a.file_name(), b.file_name());
    let files = tree(&a);
    assert_eq!(files, tree(&b));
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    for expected in [
        "config.toml",
        "dataset.csv",
        "report.json",
        "table1.txt",
        "table2.txt",
        "projection-baseline.csv",
        "projection-smoothed.csv",
        "density-md.csv",
        "density-rmd.csv",
        "density-md-ls.csv",
        "density-rmd-ls.csv",
        "fold-00.json",
        "fold-02.json",
    ] {
        assert!(names.contains(&expected), "{expected} missing");
    }

    let summary: ExperimentSummary =
        serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(summary.aggregate.len(), 4);
    assert_eq!(summary.per_fold.len(), 3);
    for (m, agg) in summary.aggregate.iter().enumerate() {
        let mean = |get: fn(&EvalReport) -> f64| {
            summary
                .per_fold
                .iter()
                .map(|f| get(&f.reports[m]))
                .sum::<f64>()
                / 3.0
        };
        assert!((agg.auroc - mean(|r| r.auroc)).abs() < 1e-12);
        assert!((agg.aupr_in - mean(|r| r.aupr_in)).abs() < 1e-12);
        assert!((agg.aupr_out - mean(|r| r.aupr_out)).abs() < 1e-12);
        assert!((agg.precision_at_tpr - mean(|r| r.precision_at_tpr)).abs() < 1e-12);
        assert!((agg.f1_at_tpr - mean(|r| r.f1_at_tpr)).abs() < 1e-12);
        assert!(agg.id_accuracy.is_some());
    }
    // the stored config reproduces the run
    let stored = PipelineConfig::load(&a.join("config.toml")).unwrap();
    assert_eq!(stored.hash(), summary.config_hash);
    assert_eq!(stored.seed, 4);

    // the run directory's dataset is a valid input for the other subcommands
    ok(
        &a,
        &[
            "train",
            "--data",
            "dataset.csv",
            "--variant",
            "baseline",
            "--out",
            "../p.json",
        ],
    );
}
