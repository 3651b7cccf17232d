use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
kitchen_horizon = 30
[actor]
hidden = [16]
[critic]
hidden = [16]
[modelfree]
iterations = 2
sp_episodes = 1
xp_episodes = 1
mp_episodes = 1
[xpm]
real_step_budget = 300
warmup_episodes = 2
plateau_rounds = 0
sp_starts = 4
xp_starts = 4
inner_steps = 1
[wm]
pretrain_updates = 3
scripted_episodes = 2
random_episodes = 1
batch_rows = 4
seq_len = 8
anchor_rows = 2
[wm.shape]
deter = 16
hidden = 16
layers = 1
head_layers = 1
"#;

fn xpm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xpm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

fn train(dir: &Path, name: &str, env: &str, method: &str, agents: usize, seed: u64) -> PathBuf {
    let cfg = tiny_config(dir);
    let out = dir.join(name);
    let o = xpm(&[
        "train",
        "--env",
        env,
        "--method",
        method,
        "--agents",
        &agents.to_string(),
        "--seed",
        &seed.to_string(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn read(p: PathBuf) -> String {
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn training_is_deterministic_per_seed() {
    let d = tempfile::tempdir().unwrap();
    let a = train(d.path(), "a", "mppmr", "xpm-sim", 2, 4);
    let b = train(d.path(), "b", "mppmr", "xpm-sim", 2, 4);
    let c = train(d.path(), "c", "mppmr", "xpm-sim", 2, 5);
    let m = |r: &Path| read(r.join("archive").join("manifest.json"));
    assert_eq!(m(&a), m(&b));
    assert_eq!(read(a.join("metrics.csv")), read(b.join("metrics.csv")));
    assert_eq!(fs::read(a.join("archive/agent1_actor.bin")).unwrap(), fs::read(b.join("archive/agent1_actor.bin")).unwrap());
    assert_ne!(fs::read(a.join("archive/agent1_actor.bin")).unwrap(), fs::read(c.join("archive/agent1_actor.bin")).unwrap());
}

#[test]
fn single_agent_matrix() {
    let d = tempfile::tempdir().unwrap();
    let run = train(d.path(), "run", "mppmr", "lipo", 1, 0);
    let out = d.path().join("eval");
    let o = xpm(&["eval", run.to_str().unwrap(), "--kind", "matrix", "--episodes", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(out.join("matrix.csv"));
    assert_eq!(csv.lines().count(), 1, "{csv}");
    assert_eq!(csv.trim().split(',').count(), 1);
    assert!(out.join("matrix.svg").exists() && out.join("matrix_manifest.json").exists());
}

#[test]
fn conventions_have_a_row_per_agent() {
    let d = tempfile::tempdir().unwrap();
    let run = train(d.path(), "run", "mppmr", "comedi", 2, 0);
    let out = d.path().join("eval");
    let o = xpm(&["eval", run.to_str().unwrap(), "--kind", "conventions", "--episodes", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(out.join("conventions.csv"));
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("l0,l1,"), "{header}");
    let rows: Vec<usize> = lines.map(|l| l.split(',').map(|c| c.parse::<usize>().unwrap()).sum()).collect();
    assert_eq!(rows, vec![3, 3]);
}

#[test]
fn scaling_report_accumulates_real_steps() {
    let d = tempfile::tempdir().unwrap();
    let a = train(d.path(), "lipo", "mppmr", "lipo", 3, 0);
    let b = train(d.path(), "wm", "minikitchen:cramped_room", "xpm-wm", 2, 0);
    let out = d.path().join("scaling");
    let o = xpm(&["scaling-report", a.to_str().unwrap(), b.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("scaling.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    // a zero point plus one row per trained agent
    assert_eq!(rows.len(), 4 + 3);
    assert!(out.join("scaling.svg").exists());
}

#[test]
fn bad_input_exits_with_two() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("x");
    let o = d.path().to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--method", "lipo", "--agents", "0", "--out", o],
        vec!["train", "--method", "xpm-wm", "--agents", "2", "--out", o],
        vec!["train", "--method", "lipo", "--agents", "2", "--env", "chess", "--out", o],
        vec!["train", "--method", "lipo", "--agents", "2", "--workers", "4", "--out", o],
        vec!["train", "--method", "nope", "--agents", "2", "--out", o],
    ];
    for c in cases {
        let r = xpm(&c);
        assert_eq!(r.status.code(), Some(2), "{c:?}: {}", String::from_utf8_lossy(&r.stderr));
    }
    let run = train(d.path(), "wm", "minikitchen:cramped_room", "xpm-wm", 1, 0);
    let r = xpm(&["eval", run.to_str().unwrap(), "--kind", "sabotage", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn broken_archive_exits_with_one() {
    let d = tempfile::tempdir().unwrap();
    let run = train(d.path(), "run", "mppmr", "lipo", 1, 0);
    fs::write(run.join("archive/agent0_actor.bin"), b"xx").unwrap();
    let out = d.path().join("eval");
    let r = xpm(&["eval", run.to_str().unwrap(), "--kind", "matrix", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("truncated"));
}
