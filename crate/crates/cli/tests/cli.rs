use std::path::Path;
use std::process::{Command, Output};

fn lqetc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqetc"))
        .args(args)
        .env_remove("LQETC_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn gains_of_reference_example() {
    let o = lqetc(&["gains", "--config", "paper-example"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("K = -0.8233"), "{out}");
    assert!(out.contains("L = 0.4476"), "{out}");
}

#[test]
fn gains_json_keeps_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gains.json");
    let o = lqetc(&["gains", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let k = v[0]["K"][0][0].as_f64().unwrap();
    assert!((k + 0.823346).abs() < 1e-6, "{k}");
}

#[test]
fn equal_priorities_split_evenly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tune.toml", "[priorities]\nmethod = \"equal\"\nm = 4\n");
    let o = lqetc(&["tune", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let p: Vec<f64> = out
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(p.len(), 4);
    for x in p {
        assert!((x - 0.25).abs() < 1e-12);
    }
}

#[test]
fn explicit_priorities_are_proportional() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tune.toml", "[priorities]\nmethod = \"explicit\"\nc = [1.0, 3.0]\n");
    let o = lqetc(&["tune", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "loop,c,p_star\n0,1,0.25\n1,3,0.75\n");
}

#[test]
fn simulation_is_reproducible_for_a_fixed_seed() {
    let args = ["simulate", "--runs", "1", "--horizon", "100", "--seed", "7"];
    let a = lqetc(&args);
    let b = lqetc(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let c = lqetc(&["simulate", "--runs", "1", "--horizon", "100", "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn seed_falls_back_to_environment() {
    let run = |seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_lqetc"))
            .args(["simulate", "--runs", "1", "--horizon", "100", "--config", "paper-example"])
            .env("LQETC_SEED", seed)
            .output()
            .unwrap()
    };
    let flag = lqetc(&["simulate", "--runs", "1", "--horizon", "100", "--seed", "7"]);
    assert_eq!(run("7").stdout, flag.stdout);
}

#[test]
fn out_of_range_probability_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "[[loop]]\npolicy = \"pst\"\np = 1.3\npreset = \"paper-example\"\n",
    );
    let o = lqetc(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "typo.toml",
        "sed = 3\n[simulation]\nhorizn = 10\n[[loop]]\npolicy = \"pst\"\np = 0.5\npreset = \"paper-example\"\ngain = 1\n",
    );
    let o = lqetc(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for key in ["sed", "simulation.horizn", "gain"] {
        assert!(err.contains(key), "{key} missing from: {err}");
    }
}

#[test]
fn missing_matrices_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.toml", "[[loop]]\npolicy = \"pst\"\np = 0.5\nA = 0.9\n");
    let o = lqetc(&["gains", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing required keys"), "{}", stderr(&o));
}

#[test]
fn unstable_plant_warns_but_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "u.toml",
        "[[loop]]\npolicy = \"pst\"\np = 0.05\nA = 1.2\nB = 1\nC = 1.5\nW = 1\nV = 1.5\nQ = 1\nR = 0.1\n",
    );
    let o = lqetc(&["check", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn empty_grid_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "empty.toml",
        "[sweep]\ngrid_p = []\ngrid_q = [1.0]\npolicies = [\"pst\"]\n[[loop]]\npolicy = \"pst\"\np = 0.5\npreset = \"paper-example\"\n",
    );
    let o = lqetc(&["simulate", "--config", &cfg, "--runs", "1", "--horizon", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(stdout(&o).starts_with("policy,p,q,"));
}

#[test]
fn manifest_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.csv");
    let o = lqetc(&[
        "simulate", "--runs", "2", "--horizon", "200", "--seed", "11", "--policy", "cett",
        "--out", first.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = dir.path().join("a.csv.manifest.json");
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["master_seed"], 11);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config_digest"].as_str().unwrap().len(), 64);

    let second = dir.path().join("b.csv");
    let o = lqetc(&[
        "simulate", "--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(first).unwrap(), std::fs::read(second).unwrap());
    let m2: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("b.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(m["config_digest"], m2["config_digest"]);
}

#[test]
fn sweep_flags_produce_one_row_per_point() {
    let o = lqetc(&[
        "simulate", "--runs", "1", "--horizon", "100", "--seed", "3", "--grid-p", "0.2,0.6",
        "--grid-q", "0.5,1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1 + 4);
}

#[test]
fn cost_grid_marks_divergent_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "u.toml",
        "[[loop]]\npolicy = \"pst\"\np = 0.5\nA = 1.2\nB = 1\nC = 1.5\nW = 1\nV = 1.5\nQ = 1\nR = 0.1\n",
    );
    let o = lqetc(&["cost", "--config", &cfg, "--grid-p", "0.1,0.9", "--grid-q", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert!(rows[0].ends_with(",inf"), "{out}");
    assert!(!rows[1].ends_with(",inf"), "{out}");
}

#[test]
fn diverging_simulation_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "d.toml",
        "[simulation]\ndivergence_threshold = 1e3\n[[loop]]\npolicy = \"pst\"\np = 0.02\nA = 1.5\nB = 1\nC = 1.5\nW = 1\nV = 1.5\nQ = 1\nR = 0.1\n",
    );
    let o = lqetc(&["simulate", "--config", &cfg, "--runs", "1", "--horizon", "2000", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn bad_flag_value_is_a_usage_error() {
    let o = lqetc(&["simulate", "--policy", "sometimes"]);
    assert_eq!(o.status.code(), Some(2));
}
