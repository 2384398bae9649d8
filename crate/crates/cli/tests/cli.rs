use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jpsh::data_io::{save_features, save_labels, FeatureFormat, FeatureSet};
use jpsh::synthetic::{gaussian_mixture, MixtureSpec};

fn jpsh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jpsh"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// A 4-component mixture as CSV plus labels.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fs = gaussian_mixture(&MixtureSpec {
            n: 240,
            dim: 6,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        save_features(dir.path().join("data.csv"), &fs, FeatureFormat::Csv).unwrap();
        save_labels(dir.path().join("labels.txt"), fs.labels().unwrap()).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let data = self.path("data.csv");
        let out = self.path(out);
        let mut args = vec!["train", "--data", s(&data), "--out", s(&out), "--bits", "8", "--m", "6", "--k", "3", "--psi", "2"];
        args.extend_from_slice(extra);
        jpsh(&args)
    }

    fn eval(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let data = self.path("data.csv");
        let labels = self.path("labels.txt");
        let out = self.path(out);
        let mut args = vec![
            cmd, "--data", s(&data), "--labels", s(&labels), "--out", s(&out), "--m", "6", "--k", "3", "--psi", "2",
            "--bits", "8",
        ];
        args.extend_from_slice(extra);
        let cfg = self.path("split.toml");
        std::fs::write(&cfg, "[split]\ntest_per_class = 10\n").unwrap();
        args.extend_from_slice(&["--config", s(&cfg)]);
        jpsh(&args)
    }
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_writes_model_trace_and_manifest() {
    let fx = Fixture::new();
    let out = fx.train("run", &[]);
    assert_ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("final objective"));
    assert!(stdout.contains("network lasso"));
    for f in ["model.jpshm", "trace.csv", "manifest.toml"] {
        assert!(fx.path("run").join(f).exists(), "{f} missing");
    }
    let trace = std::fs::read_to_string(fx.path("run/trace.csv")).unwrap();
    assert!(trace.starts_with("iter,objective,term1"));
    let manifest = std::fs::read_to_string(fx.path("run/manifest.toml")).unwrap();
    assert!(manifest.contains("bits = 8"));
}

#[test]
fn training_is_byte_deterministic() {
    let fx = Fixture::new();
    assert_ok(&fx.train("a", &["--seed", "3"]));
    assert_ok(&fx.train("b", &["--seed", "3"]));
    let read = |p: &str| std::fs::read(fx.path(p)).unwrap();
    assert_eq!(read("a/model.jpshm"), read("b/model.jpshm"));
    assert_eq!(read("a/trace.csv"), read("b/trace.csv"));
    assert_ok(&fx.train("c", &["--seed", "4"]));
    assert_ne!(read("a/model.jpshm"), read("c/model.jpshm"));
}

#[test]
fn rerunning_the_manifest_reproduces_outputs() {
    let fx = Fixture::new();
    assert_ok(&fx.eval("eval", "first", &["--methods", "jpsh,lsh", "--seeds", "0,1"]));
    let manifest = fx.path("first/manifest.toml");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let second = fx.path("second");
    let rewritten = text.replace(s(&fx.path("first")), s(&second));
    let cfg = fx.path("rerun.toml");
    std::fs::write(&cfg, rewritten).unwrap();
    assert_ok(&jpsh(&["eval", "--config", s(&cfg)]));
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(fx.path("first/report.json")), read(second.join("report.json")));
    for entry in std::fs::read_dir(fx.path("first/curves")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(read(fx.path("first/curves").join(&name)), read(second.join("curves").join(&name)));
    }
}

#[test]
fn missing_data_file_exits_2_naming_the_path() {
    let fx = Fixture::new();
    let out = jpsh(&["train", "--data", "/nonexistent/features.csv", "--out", s(&fx.path("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/features.csv"));
}

#[test]
fn unknown_config_key_exits_2() {
    let fx = Fixture::new();
    let cfg = fx.path("bad.toml");
    std::fs::write(&cfg, "[hyper]\nlambda4 = 2.0\n").unwrap();
    let out = jpsh(&["train", "--config", s(&cfg), "--data", s(&fx.path("data.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda4"));
}

#[test]
fn singular_pairwise_system_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // fewer samples than features, no row penalty: XXᵀ is singular
    let fs = gaussian_mixture(&MixtureSpec {
        n: 12,
        dim: 30,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let data = dir.path().join("wide.csv");
    save_features(&data, &fs, FeatureFormat::Csv).unwrap();
    let out = jpsh(&[
        "train", "--data", s(&data), "--out", s(&dir.path().join("o")), "--method", "jsh-only", "--l3", "0", "--m",
        "3", "--k", "2", "--psi", "1", "--bits", "4",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn empty_test_set_exits_4() {
    let fx = Fixture::new();
    let empty = fx.path("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let empty_labels = fx.path("empty_labels.txt");
    std::fs::write(&empty_labels, "").unwrap();
    let out = fx.eval("eval", "e", &["--test-data", s(&empty), "--test-labels", s(&empty_labels)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

fn search_lines(out: &Output) -> Vec<(String, u32)> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| {
            let (id, d) = l.split_once('\t').expect("id<TAB>distance");
            (id.to_string(), d.parse().unwrap())
        })
        .collect()
}

#[test]
fn encode_then_search() {
    let fx = Fixture::new();
    assert_ok(&fx.train("m", &[]));
    let model = fx.path("m/model.jpshm");
    let codes = fx.path("db.codes");
    assert_ok(&jpsh(&["encode", "--model", s(&model), "--data", s(&fx.path("data.csv")), "--out", s(&codes)]));
    assert!(fx.path("db.codes.ids").exists());

    // sample 17 as the query
    let all = jpsh::data_io::load_features(fx.path("data.csv"), FeatureFormat::Csv).unwrap();
    let q = FeatureSet::from_rows(&[all.sample(17).to_vec()]).unwrap();
    let query = fx.path("q.csv");
    save_features(&query, &q, FeatureFormat::Csv).unwrap();

    let ranked = jpsh(&["search", "--model", s(&model), "--db", s(&codes), "--query", s(&query), "--top-n", "15"]);
    assert_ok(&ranked);
    let lines = search_lines(&ranked);
    assert_eq!(lines.len(), 15);
    assert_eq!(lines[0].1, 0);
    assert!(lines.iter().any(|(id, d)| id == "17" && *d == 0));
    assert!(lines.windows(2).all(|w| w[0].1 <= w[1].1));
    let again = jpsh(&["search", "--model", s(&model), "--db", s(&codes), "--query", s(&query), "--top-n", "15"]);
    assert_eq!(again.stdout, ranked.stdout);

    let within = jpsh(&["search", "--model", s(&model), "--db", s(&codes), "--query", s(&query), "--radius", "2"]);
    assert_ok(&within);
    let lines = search_lines(&within);
    assert!(!lines.is_empty());
    assert!(lines.iter().all(|(_, d)| *d <= 2));

    let neither = jpsh(&["search", "--model", s(&model), "--db", s(&codes), "--query", s(&query)]);
    assert_eq!(neither.status.code(), Some(2));
}

#[test]
fn ablate_report_matches_schema() {
    let fx = Fixture::new();
    let out = fx.eval("ablate", "abl", &[]);
    assert_ok(&out);
    let table = String::from_utf8(out.stdout).unwrap();
    for m in ["jsh-only", "psh-only", "jpsh"] {
        assert!(table.contains(m), "{table}");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fx.path("abl/report.json")).unwrap()).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 3);
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/eval_report.schema.json");
    let schema: serde_json::Value = serde_json::from_slice(&std::fs::read(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    let mut broken = report.clone();
    broken["cells"][0]["map_mean"] = serde_json::json!(1.5);
    assert!(!validator.is_valid(&broken));
    assert!(fx.path("abl/curves/jpsh-8bits-seed0.csv").exists());
}

#[test]
fn eval_of_saved_model() {
    let fx = Fixture::new();
    assert_ok(&fx.train("lsh", &["--method", "lsh"]));
    let out = fx.eval("eval", "ev", &["--model", s(&fx.path("lsh/model.jpshm"))]);
    assert_ok(&out);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fx.path("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report["cells"][0]["method"], "lsh");
    let csv = std::fs::read_to_string(fx.path("ev/curves/lsh-8bits.csv")).unwrap();
    assert!(csv.starts_with("N,precision,recall\n"));
}
