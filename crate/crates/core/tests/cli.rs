use std::path::Path;
use std::process::{Command, Output};

use audiosheet::harness::{ExperimentConfig, Report, CSV_HEADER};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_audiosheet")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "\
seed = 5
pool_size = 40
data.train_pieces = 14
data.test_pieces = 6
data.notes_per_piece = 8
model.base_channels = 4
model.hidden = 16
train.epochs = 1
train.batch_size = 16
";

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let o = run(&["synth", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn dump_config_round_trips() {
    let o = run(&["--dump-config", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, ExperimentConfig { seed: 9, ..ExperimentConfig::default() });
}

#[test]
fn bad_config_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.toml");
    std::fs::write(&c, "data.no_such_key = 1\n").unwrap();
    assert_eq!(run(&["--config", s(&c), "--dump-config"]).status.code(), Some(1));
}

#[test]
fn synth_writes_one_folder_per_piece() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = run(&["synth", "--pieces", "20", "--seed", "1", "--notes", "6", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let n = std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().join("piece.json").is_file()).count();
    assert_eq!(n, 20);
}

#[test]
fn train_embed_retrieve_identify_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let ok = |args: &[&str]| {
        let o = run(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    let (data, conf) = (p("d"), p("c.toml"));
    std::fs::write(&conf, SMALL).unwrap();
    ok(&["synth", "--pieces", "6", "--notes", "8", "--out", &data]);
    ok(&["--config", &conf, "train", "--data", &data, "--out", &p("m.ckpt")]);
    ok(&["--config", &conf, "pretrain", "--data", &data, "--modality", "sheet", "--epochs", "1", "--out", &p("s.enc")]);
    ok(&["--config", &conf, "finetune", "--data", &data, "--sheet-encoder", &p("s.enc"), "--out", &p("f.ckpt")]);
    for m in ["sheet", "audio"] {
        ok(&["embed", "--checkpoint", &p("m.ckpt"), "--data", &data, "--modality", m, "--out", &p(&format!("{m}.bin"))]);
    }
    ok(&["retrieve", "--index", &p("sheet.bin"), "--queries", &p("audio.bin"), "--k", "25", "--out", &p("r.json")]);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(p("r.json")).unwrap()).unwrap();
    let hits = r.as_array().unwrap();
    assert_eq!(hits.len(), 48);
    assert_eq!(hits[0]["result"]["candidates"].as_array().unwrap().len(), 25);

    ok(&["identify", "--checkpoint", &p("m.ckpt"), "--data", &data, "--out", &p("id.json")]);
    let id: serde_json::Value = serde_json::from_slice(&std::fs::read(p("id.json")).unwrap()).unwrap();
    let results = id.as_array().unwrap();
    assert_eq!(results.len(), 12);
    for key in ["query_id", "method", "ranking", "rank_of_truth"] {
        assert!(results[0].get(key).is_some(), "{key}");
    }
}

#[test]
fn study_table1_writes_five_row_csv_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.toml");
    std::fs::write(&c, SMALL).unwrap();
    let out = dir.path().join("runs");
    let missing = run(&["study", "table1", "--config", s(&c), "--out", s(&out), "--no-train"]);
    assert_eq!(missing.status.code(), Some(1));

    let o = run(&["study", "table1", "--config", s(&c), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("table1.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config: "));
    assert_eq!(lines[1], CSV_HEADER.join(","));
    assert_eq!(lines.len(), 2 + 5);
    let from_csv = Report::load(out.join("table1.csv")).unwrap();
    assert_eq!(from_csv, Report::load(out.join("table1.json")).unwrap());

    let r = run(&["study", "table1", "--replay", s(&out.join("table1.json"))]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let cached = run(&["study", "table1", "--config", s(&c), "--out", s(&out), "--no-train"]);
    assert_eq!(cached.status.code(), Some(0));
    assert_eq!(Report::load(out.join("table1.json")).unwrap().rows, from_csv.rows);
}
