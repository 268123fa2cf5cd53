use std::path::Path;
use std::process::{Command, Output};

fn markdown(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_markdown")).current_dir(dir).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const CONFIG: &str = r#"
schema_version = 1
seed = 5

[targets]
stock_value = 150000.0
stock_depth = 0.3

[world]
products = 800
history_weeks = 40

[region]
folds = 3

[experiment]
seeds = 2
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    ok(&markdown(dir.path(), &["--config", "run.toml", "generate", "--catalogue", "cat.csv", "--history", "hist.csv"]));
    dir
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let dir = workspace();
    let d = dir.path();
    let cfg = ["--config", "run.toml"];
    let run = |args: &[&str]| ok(&markdown(d, &[&cfg[..], args].concat()));

    let summary: serde_json::Value = serde_json::from_str(&run(&["ingest", "--catalogue", "cat.csv", "--out", "cat.json"])).unwrap();
    assert_eq!(summary["summary"]["products"], 800);
    assert_eq!(summary["seed"], 5);

    run(&["solve", "--catalogue", "cat.csv", "--out", "a.csv", "--report", "a.json"]);
    run(&["solve", "--catalogue", "cat.json", "--out", "b.csv", "--report", "b.json"]);
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());
    assert!(String::from_utf8(a).unwrap().starts_with("product_id,depth,discounted_price\n"));

    run(&["fit", "--history", "hist.csv", "--out", "model.json"]);
    let table = run(&["validate", "--history", "hist.csv", "--out", "region.json"]);
    assert!(table.starts_with("depth,G1,G2,G3,G4"));

    let opt = ["optimize", "--catalogue", "cat.csv", "--model", "model.json", "--region", "region.json"];
    run(&[&opt[..], &["--out", "e1.csv", "--report", "r1.json"]].concat());
    run(&[&opt[..], &["--out", "e2.csv", "--report", "r2.json"]].concat());
    assert_eq!(std::fs::read(d.join("e1.csv")).unwrap(), std::fs::read(d.join("e2.csv")).unwrap());
    assert_eq!(std::fs::read(d.join("r1.json")).unwrap(), std::fs::read(d.join("r2.json")).unwrap());

    // a different seed is allowed to change the event
    let seeded = ok(&markdown(d, &["--config", "run.toml", "--seed", "6", "solve", "--catalogue", "cat.csv"]));
    assert!(seeded.contains("\"seed\": 6"));

    let x1 = run(&["experiment", "run", "--out", "x1.json"]);
    let x2 = run(&["experiment", "run", "--out", "x2.json"]);
    assert_eq!(x1, x2);
    let x: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("x1.json")).unwrap()).unwrap();
    assert_eq!(x["reports"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let dir = workspace();
    let d = dir.path();

    assert_eq!(markdown(d, &["--help"]).status.code(), Some(0));
    assert_eq!(markdown(d, &["--version"]).status.code(), Some(0));
    assert_eq!(markdown(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(markdown(d, &["solve"]).status.code(), Some(2));
    assert_eq!(markdown(d, &["--seed", "x", "solve", "--catalogue", "cat.csv"]).status.code(), Some(2));

    // malformed row: domain error naming the line
    let text = std::fs::read_to_string(d.join("cat.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<&str> = lines[4].split(',').collect();
    cells[2] = "-3x";
    lines[4] = cells.join(",");
    std::fs::write(d.join("bad.csv"), lines.join("\n")).unwrap();
    let out = markdown(d, &["ingest", "--catalogue", "bad.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5"), "{err}");

    // no targets section
    let out = markdown(d, &["solve", "--catalogue", "cat.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("targets"));

    // unknown config key
    std::fs::write(d.join("typo.toml"), "schema_version = 1\nsede = 3\n").unwrap();
    assert_eq!(markdown(d, &["--config", "typo.toml", "ingest", "--catalogue", "cat.csv"]).status.code(), Some(1));

    // target depth beyond every allowed depth
    std::fs::write(d.join("deep.toml"), CONFIG.replace("stock_depth = 0.3", "stock_depth = 0.95")).unwrap();
    assert_eq!(markdown(d, &["--config", "deep.toml", "solve", "--catalogue", "cat.csv"]).status.code(), Some(1));

    assert_eq!(markdown(d, &["ingest", "--catalogue", "missing.csv"]).status.code(), Some(1));
}
