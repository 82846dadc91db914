//! Black-box checks of the `odda` binary: command surfaces, output tree,
//! exit codes, and cross-command consistency.

use std::path::{Path, PathBuf};
use std::process::Output;

fn odda(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_odda"))
        .args(args)
        .env("ODDA_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = odda(args);
    assert!(
        out.status.success(),
        "odda {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Workbench {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workbench {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let gen = root.join("gen").to_string_lossy().into_owned();
        ok(&[
            "gen-synthetic",
            "--out",
            &gen,
            "--set",
            "synth.n_train=100",
            "--set",
            "synth.n_test=100",
            "--set",
            "synth.seed=3",
        ]);
        Self { _dir: dir, root }
    }

    fn path(&self, s: &str) -> String {
        self.root.join(s).to_string_lossy().into_owned()
    }

    fn data_args(&self) -> Vec<String> {
        vec![
            "--set".into(),
            format!("data.train_path={}", self.path("gen/train.jsonl")),
            "--set".into(),
            format!("data.test_path={}", self.path("gen/test.jsonl")),
            "--set".into(),
            format!("data.lexicon_path={}", self.path("gen/lexicon.tsv")),
            "--set".into(),
            "train.teacher_steps=40".into(),
            "--set".into(),
            "train.student_steps=40".into(),
            "--set".into(),
            "train.eval_interval=20".into(),
            "--set".into(),
            r#"train.model={"arch":"mlp1","hash_bits":12,"ngram_max":1,"hidden":8,"dropout_rate":0.1}"#
                .into(),
        ]
    }

    fn run(&self, head: &[&str]) {
        let mut args: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        args.extend(self.data_args());
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_eval_roundtrip_matches_report() {
    let wb = Workbench::new();
    wb.run(&["train", "--out", &wb.path("tr"), "--seeds", "1"]);
    let report = read_json(&wb.root.join("tr/report.json"));
    let trained_f1 = report["per_seed"][0]["macro_f1"].as_f64().unwrap();

    ok(&[
        "eval",
        "--out",
        &wb.path("ev"),
        "--set",
        &format!("data.checkpoint_path={}", wb.path("tr/checkpoints/seed_1.ckpt")),
        "--set",
        &format!("data.test_path={}", wb.path("gen/test.jsonl")),
    ]);
    let eval_report = read_json(&wb.root.join("ev/report.json"));
    let eval_f1 = eval_report["metrics"]["macro_f1"].as_f64().unwrap();
    assert_eq!(
        trained_f1.to_bits(),
        eval_f1.to_bits(),
        "eval on the saved checkpoint must reproduce the training-run metric"
    );
}

#[test]
fn ablate_single_cell_equals_plain_train() {
    let wb = Workbench::new();
    wb.run(&["train", "--out", &wb.path("tr"), "--seeds", "1,2"]);
    // one-cell grid at the training defaults (tau=1, alpha=10, m=2)
    wb.run(&[
        "ablate",
        "--out",
        &wb.path("ab"),
        "--seeds",
        "1,2",
        "--taus",
        "1",
        "--alphas",
        "10",
        "--ms",
        "2",
    ]);
    let train_mean = read_json(&wb.root.join("tr/report.json"))["f1"]["mean"].as_f64().unwrap();
    let ablate = read_json(&wb.root.join("ab/report.json"));
    let cell = &ablate["cells"][0];
    assert_eq!(cell["best"], serde_json::json!(true));
    let cell_mean = cell["report"]["mean"].as_f64().unwrap();
    assert_eq!(train_mean.to_bits(), cell_mean.to_bits());
    // the CSV parses back to the same statistics
    let csv = std::fs::read_to_string(wb.root.join("ab/table.csv")).unwrap();
    let cells = odda_core::report::parse_ablate_csv(&csv, "odda_both", "macro_f1").unwrap();
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0].report.mean.to_bits(), cell_mean.to_bits());
}

#[test]
fn sweep_single_noise_level_single_column() {
    let wb = Workbench::new();
    wb.run(&[
        "sweep-noise",
        "--out",
        &wb.path("sw"),
        "--seeds",
        "1",
        "--p-n",
        "0",
        "--methods",
        "eda,odda_both",
    ]);
    let csv = std::fs::read_to_string(wb.root.join("sw/table.csv")).unwrap();
    let table = odda_core::report::SweepTable::parse_csv(&csv).unwrap();
    assert_eq!(table.p_n_values, vec![0.0]);
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows.iter().all(|r| r.means.len() == 1));
}

#[test]
fn exit_codes_distinguish_failure_categories() {
    let wb = Workbench::new();
    // config error: unknown key
    let out = odda(&["train", "--out", &wb.path("x1"), "--set", "train.bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
    // config error: unknown sweep method
    let out = odda(&["sweep-noise", "--out", &wb.path("x2"), "--methods", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    // data error: missing input file
    let out = odda(&[
        "train",
        "--out",
        &wb.path("x3"),
        "--set",
        "data.train_path=/no/such/file.tsv",
        "--set",
        "data.test_path=/no/such/file.tsv",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn augment_all_zero_probabilities_copies_texts() {
    let wb = Workbench::new();
    let mut args: Vec<String> = vec![
        "augment".into(),
        "--out".into(),
        wb.path("aug"),
        "--set".into(),
        "eda.p_sr=0".into(),
        "--set".into(),
        "eda.p_ri=0".into(),
        "--set".into(),
        "eda.p_rs=0".into(),
        "--set".into(),
        "eda.p_rd=0".into(),
        "--set".into(),
        "eda.k=2".into(),
    ];
    args.extend(wb.data_args());
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let originals: Vec<String> = std::fs::read_to_string(wb.root.join("gen/train.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["text"]
            .as_str()
            .unwrap()
            .to_string())
        .collect();
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(wb.root.join("aug/augmented.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), originals.len() * 2);
    for row in &lines {
        let origin = row["origin_id"].as_u64().unwrap() as usize;
        assert_eq!(row["text"].as_str().unwrap(), originals[origin]);
    }
}

#[test]
fn remaining_commands_replay_from_manifests() {
    let wb = Workbench::new();
    // augment
    let mut args: Vec<String> =
        vec!["augment".into(), "--out".into(), wb.path("a1"), "--set".into(), "eda.k=2".into()];
    args.extend(wb.data_args());
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&["augment", "--out", &wb.path("a2"), "--config", &wb.path("a1/manifest.json")]);
    assert_eq!(
        std::fs::read(wb.root.join("a1/augmented.jsonl")).unwrap(),
        std::fs::read(wb.root.join("a2/augmented.jsonl")).unwrap()
    );

    // ablate (timings.json is expected to differ; report and table must not)
    wb.run(&[
        "ablate",
        "--out",
        &wb.path("ab1"),
        "--seeds",
        "1",
        "--taus",
        "1,2",
        "--alphas",
        "10",
        "--ms",
        "2",
    ]);
    ok(&["ablate", "--out", &wb.path("ab2"), "--config", &wb.path("ab1/manifest.json")]);
    assert_eq!(
        std::fs::read(wb.root.join("ab1/report.json")).unwrap(),
        std::fs::read(wb.root.join("ab2/report.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(wb.root.join("ab1/table.csv")).unwrap(),
        std::fs::read(wb.root.join("ab2/table.csv")).unwrap()
    );

    // eval
    wb.run(&["train", "--out", &wb.path("tr"), "--seeds", "1"]);
    ok(&[
        "eval",
        "--out",
        &wb.path("e1"),
        "--set",
        &format!("data.checkpoint_path={}", wb.path("tr/checkpoints/seed_1.ckpt")),
        "--set",
        &format!("data.test_path={}", wb.path("gen/test.jsonl")),
    ]);
    ok(&["eval", "--out", &wb.path("e2"), "--config", &wb.path("e1/manifest.json")]);
    assert_eq!(
        std::fs::read(wb.root.join("e1/report.json")).unwrap(),
        std::fs::read(wb.root.join("e2/report.json")).unwrap()
    );
}

#[test]
fn ablate_reports_all_dropout_pass_counts_with_runtimes() {
    let wb = Workbench::new();
    wb.run(&[
        "ablate",
        "--out",
        &wb.path("abm"),
        "--seeds",
        "1",
        "--taus",
        "1",
        "--alphas",
        "10",
        "--ms",
        "2,3",
    ]);
    let report = read_json(&wb.root.join("abm/report.json"));
    let ms: Vec<u64> = report["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["m"].as_u64().unwrap())
        .collect();
    assert_eq!(ms, vec![2, 3], "both dropout-pass counts get a row");
    let timings = read_json(&wb.root.join("abm/timings.json"));
    let entries = timings.as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert!(entries.iter().all(|t| t["seconds"].as_f64().unwrap() >= 0.0));
}
