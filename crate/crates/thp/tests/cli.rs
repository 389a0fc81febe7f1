use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use thp::archive::{load_model, save_model, Manifest, LOSS_LOG_FILE, MANIFEST_FILE, PARAMS_FILE};
use thp::dataset::{read_dataset, write_dataset};
use thp::error::ThpError;
use thp_core::model::ModelConfig;
use thp_core::train::TrainConfig;
use thp_core::{Error as CoreError, Event, EventSequence, Thp};

const SIM: &str = r#"
K = 2
mu = [0.3, 0.2]
alpha = [[0.3, 0.1], [0.2, 0.3]]
beta = [[1.0, 1.0], [1.0, 1.0]]
T = 20.0
n_sequences = 12
seed = 5
"#;

const TRAIN: &str = r#"{
  "model": {"d_model": 8, "d_k": 4, "d_v": 4, "d_hidden": 8, "n_layers": 1},
  "epochs": 2,
  "batch_size": 4,
  "seed": 3,
  "dev_fraction": 0.25
}"#;

fn thp(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_thp"));
    cmd.args(args).env_remove("THP_SEED");
    if let Some(s) = seed {
        cmd.env("THP_SEED", s);
    }
    cmd.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("sim.toml"), SIM).unwrap();
        fs::write(dir.path().join("train.json"), TRAIN).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn simulate(&self, out: &str, seed: Option<&str>) -> Output {
        let (cfg, out) = (self.path("sim.toml"), self.path(out));
        thp(&["simulate", "--config", s(&cfg), "--out", s(&out)], seed)
    }

    fn train(&self, data: &str, out: &str) -> Output {
        let (data, cfg, out) = (self.path(data), self.path("train.json"), self.path(out));
        thp(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)], None)
    }
}

#[test]
fn simulate_is_seeded() {
    let w = Workspace::new();
    assert!(w.simulate("a.jsonl", None).status.success());
    assert!(w.simulate("b.jsonl", None).status.success());
    assert!(w.simulate("c.jsonl", Some("99")).status.success());
    let a = fs::read(w.path("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(w.path("b.jsonl")).unwrap());
    assert_ne!(a, fs::read(w.path("c.jsonl")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 12);
}

#[test]
fn train_eval_and_dump() {
    let w = Workspace::new();
    assert!(w.simulate("data.jsonl", None).status.success());
    let o = w.train("data.jsonl", "model");
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [PARAMS_FILE, MANIFEST_FILE, LOSS_LOG_FILE] {
        assert!(w.path("model").join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(w.path("model").join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 2);

    let (data, model) = (w.path("data.jsonl"), w.path("model"));
    let o = thp(&["eval", "--data", s(&data), "--model", s(&model)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["prediction"], "heads");
    assert_eq!(report["num_sequences"], 12);
    assert!(report["per_event_ll"].as_f64().unwrap().is_finite());
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let o = thp(
        &["eval", "--data", s(&data), "--model", s(&model), "--density-prediction", "--resample", "5"],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["prediction"], "density");
    assert_eq!(report["resampled"]["resamples"], 5);

    let out = w.path("attn.json");
    let o = thp(
        &["attention-dump", "--data", s(&data), "--model", s(&model), "--seq", "3", "--out", s(&out)],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dump: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let len = dump["length"].as_u64().unwrap() as usize;
    let heads = dump["layers"][0]["heads"].as_array().unwrap();
    assert_eq!(heads.len(), 2);
    for row in heads[0].as_array().unwrap().iter().take(len) {
        let sum: f64 = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    let o = thp(
        &["attention-dump", "--data", s(&data), "--model", s(&model), "--seq", "40", "--out", s(&out)],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn structured_train_with_graph() {
    let w = Workspace::new();
    let graph = r#"{"num_vertices": 3, "edges": [[0, 1], [1, 2]]}"#;
    let sim = SIM.replace("T = 20.0", "T = 10.0");
    fs::write(w.path("sim.toml"), format!("{sim}graph = {{ num_vertices = 3, edges = [[0, 1], [1, 2]] }}\n")).unwrap();
    fs::write(w.path("graph.json"), graph).unwrap();
    let o = w.simulate("data.jsonl", None);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(w.path("data.jsonl")).unwrap();
    assert!(text.contains("\"v\""));

    let (data, g, cfg, out) = (w.path("data.jsonl"), w.path("graph.json"), w.path("train.json"), w.path("m"));
    let o = thp(
        &["train", "--data", s(&data), "--graph", s(&g), "--config", s(&cfg), "--out", s(&out)],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let (model, _) = load_model(&out).unwrap();
    assert_eq!(model.config.num_vertices, Some(3));
    assert!(!model.omegas().is_empty());
    let o = thp(&["eval", "--data", s(&data), "--model", s(&out)], None);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(thp(&[], None).status.code(), Some(1));
    assert_eq!(thp(&["simulate", "--bogus"], None).status.code(), Some(1));
    assert_eq!(thp(&["--help"], None).status.code(), Some(0));
    let w = Workspace::new();
    assert_eq!(w.simulate("x.jsonl", Some("not-a-number")).status.code(), Some(1));
    fs::write(w.path("sim.toml"), format!("{SIM}\nextra_key = 1\n")).unwrap();
    assert_eq!(w.simulate("x.jsonl", None).status.code(), Some(1));
}

#[test]
fn bad_data_exits_two_with_location() {
    let w = Workspace::new();
    let cases = [
        (
            "{\"events\": [{\"t\": 1.0, \"k\": 0}, {\"t\": 2.0, \"k\": 0}]}\n{\"events\": [{\"t\": 2.0, \"k\": 0}, {\"t\": 1.5, \"k\": 1}]}\n",
            ["line 2", "sequence 1"],
        ),
        ("{\"events\": [{\"t\": 1.0, \"k\": 0}, {\"t\": 2.0, \"k\": 0}]}\n\n{\"events\": [{\"t\": 1.0,\n", ["line 3", ""]),
        (
            "{\"events\": [{\"t\": 1.0, \"k\": 0, \"v\": 1}, {\"t\": 2.0, \"k\": 0}]}\n",
            ["line 1", "vertex ids"],
        ),
    ];
    for (i, (text, needles)) in cases.iter().enumerate() {
        let name = format!("bad{i}.jsonl");
        fs::write(w.path(&name), text).unwrap();
        let o = w.train(&name, "m");
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", stderr(&o));
        for n in needles {
            assert!(stderr(&o).contains(n), "case {i}: {n:?} missing from {}", stderr(&o));
        }
    }
    let missing = w.path("nope.jsonl");
    let model = w.path("m");
    assert_eq!(thp(&["eval", "--data", s(&missing), "--model", s(&model)], None).status.code(), Some(2));
}

#[test]
fn numerical_failures_map_to_three() {
    let e = ThpError::Core(CoreError::Divergence { context: "x".into() });
    assert_eq!(e.exit_code(), 3);
    let e = ThpError::Core(CoreError::NonFinite { op: "log" });
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn dataset_round_trip() {
    let mut seqs = Vec::new();
    for i in 0..100 {
        let events = (0..(2 + i % 7))
            .map(|j| {
                let t = 0.1 * i as f64 + 1.0 / 3.0 * (j + 1) as f64;
                if i % 2 == 0 {
                    Event::new(t, j % 3)
                } else {
                    Event::with_vertex(t, j % 3, (i + j) % 4)
                }
            })
            .collect();
        seqs.push(EventSequence::new(events).unwrap());
    }
    let mut buf = Vec::new();
    write_dataset(&mut buf, &seqs).unwrap();
    let back = read_dataset(Cursor::new(buf), Path::new("mem")).unwrap();
    assert_eq!(back, seqs);
}

#[test]
fn archive_round_trip() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ModelConfig::desk(3);
    cfg.num_vertices = Some(4);
    let model = Thp::new(cfg, 17).unwrap();
    let manifest = Manifest::new(&model, TrainConfig::default(), 0.75, 4, Some(-1.25));
    save_model(dir.path(), &model, &manifest).unwrap();
    let (back, m) = load_model(dir.path()).unwrap();
    assert_eq!(m, manifest);
    assert_eq!(back.config, model.config);
    for (a, b) in back.store.tensors().iter().zip(model.store.tensors()) {
        let bits = |t: &thp_core::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }

    let params = dir.path().join(PARAMS_FILE);
    let mut bytes = fs::read(&params).unwrap();
    bytes.pop();
    fs::write(&params, bytes).unwrap();
    assert!(matches!(load_model(dir.path()), Err(ThpError::Archive { .. })));
}
