use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mmforge::automaton::{decision_points, deserialize, serialize, MachineBuilder, StateId};
use mmforge::envs::SyntheticSpec;
use tempfile::TempDir;

fn mmforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmforge"))
        .args(args)
        .env_remove("MMFORGE_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mmforge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn redundant_spec(dir: &TempDir) -> String {
    let mm = MachineBuilder::new(2, 2)
        .auto_state(0, 0)
        .auto_state(1, 1)
        .auto_state(2, 1)
        .auto_state(3, 0)
        .auto_obs(0)
        .auto_obs(1)
        .auto_obs(2)
        .trans(0, 0, 1, 3)
        .trans(0, 1, 2, 2)
        .trans(1, 2, 3, 3)
        .trans(2, 2, 3, 2)
        .trans(3, 2, 0, 5)
        .build()
        .unwrap();
    let mut spec = SyntheticSpec::new(mm, 9);
    spec.redundant.insert(StateId(0));
    let p = path(dir, "redundant.spec");
    fs::write(&p, spec.to_text()).unwrap();
    p
}

fn machine_only(spec: &str, dir: &TempDir) -> String {
    let text = fs::read_to_string(spec).unwrap();
    let mm = SyntheticSpec::parse(&text).unwrap().machine;
    let p = path(dir, "machine.mm");
    fs::write(&p, serialize(&mm)).unwrap();
    p
}

fn parse_dot(file: &str) {
    let text = fs::read_to_string(file).unwrap();
    dot_parser::ast::Graph::try_from(text.as_str()).unwrap_or_else(|e| panic!("{file}: {e}"));
}

#[test]
fn missing_env_is_a_usage_error() {
    let out = mmforge(&["prune", "--machine", "m.mm", "--out", "p.mm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--env"));
}

#[test]
fn unreadable_input_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let out = mmforge(&["minimize", "--machine", &path(&dir, "absent.mm"), "--out", &path(&dir, "o.mm")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn minimizing_a_single_state_machine_is_identity() {
    let dir = TempDir::new().unwrap();
    let mm = MachineBuilder::new(1, 1).auto_state(0, 0).auto_obs(0).trans(0, 0, 0, 4).build().unwrap();
    let input = path(&dir, "one.mm");
    fs::write(&input, serialize(&mm)).unwrap();
    let output = path(&dir, "min.mm");
    ok(&["minimize", "--machine", &input, "--out", &output]);
    assert_eq!(fs::read_to_string(&output).unwrap(), serialize(&mm));
}

#[test]
fn prune_removes_the_redundant_branch() {
    let dir = TempDir::new().unwrap();
    let spec = redundant_spec(&dir);
    let machine = machine_only(&spec, &dir);
    let out = path(&dir, "pruned.mm");
    let log = path(&dir, "prune.json");
    let env = format!("synthetic:{spec}");
    let class = ok(&[
        "prune", "--machine", &machine, "--env", &env, "--tolerance", "0",
        "--tolerance-floor", "0", "--out", &out, "--log", &log,
    ]);
    assert_eq!(class.trim(), "PrunedOpenLoop");
    let pruned = deserialize(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(decision_points(&pruned).is_empty());
    let log: serde_json::Value = serde_json::from_str(&fs::read_to_string(&log).unwrap()).unwrap();
    assert_eq!(log["baseline_return"], 9.0);

    let stats: serde_json::Value =
        serde_json::from_str(&ok(&["stats", "--machine", &machine, "--pruned", &out])).unwrap();
    assert_eq!(stats["class"], "PrunedOpenLoop");
    let eval: serde_json::Value = serde_json::from_str(&ok(&[
        "eval", "--machine", &out, "--env", &env, "--episodes", "5",
    ]))
    .unwrap();
    assert_eq!(eval["mean"], 9.0);
}

#[test]
fn exported_dot_parses() {
    let dir = TempDir::new().unwrap();
    let machine = machine_only(&redundant_spec(&dir), &dir);
    let dot = path(&dir, "m.dot");
    ok(&["export-dot", "--machine", &machine, "--out", &dot]);
    parse_dot(&dot);
}

#[test]
fn pipeline_artifacts_feed_the_other_commands() {
    let dir = TempDir::new().unwrap();
    let out_dir = path(&dir, "run");
    ok(&[
        "pipeline", "--env", "parity", "--seed", "3", "--out-dir", &out_dir,
        "--set", "clone_epochs=2", "--set", "clone_dagger_rounds=0",
        "--set", "qbn_episodes=4", "--set", "qbn_epochs=3",
        "--set", "finetune=false", "--set", "trace_episodes=6",
        "--set", "eval_episodes=4",
    ]);
    let run = |f: &str| Path::new(&out_dir).join(f).to_string_lossy().into_owned();
    for f in ["machine.dot", "pruned.dot", "reduced.dot"] {
        parse_dot(&run(f));
    }
    let table = fs::read_to_string(run("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);

    let net = ["--policy", &run("policy.ckpt"), "--qbn-h", &run("qbn_h.ckpt"), "--qbn-o", &run("qbn_o.ckpt")];
    let traces = path(&dir, "traces.jsonl");
    ok(&[&["trace"][..], &net, &["--env", "parity", "--episodes", "6", "--out", &traces]].concat());
    assert_eq!(fs::read_to_string(&traces).unwrap().lines().count(), 6);

    let machine = path(&dir, "machine.mm");
    ok(&["extract", "--traces", &run("traces.jsonl"), "--out", &machine]);
    assert!(fs::read_to_string(&machine).unwrap() == fs::read_to_string(run("machine.mm")).unwrap());

    let reduced = path(&dir, "reduced.json");
    let reduced_dot = path(&dir, "reduced.dot");
    ok(&["reduce", "--machine", &machine, "--traces", &traces, "--out", &reduced, "--dot", &reduced_dot]);
    parse_dot(&reduced_dot);

    let eval: serde_json::Value = serde_json::from_str(&ok(
        &[&["eval", "--machine", &machine], &net[..], &["--env", "parity", "--episodes", "4"]].concat(),
    ))
    .unwrap();
    assert!(eval["mean"].is_number());

}

#[test]
fn attend_ranks_features_of_differing_observations() {
    use mmforge::neural::{write_checkpoint, Parameterized};
    use mmforge::qbn::{Qbn, QbnKind};

    let dir = TempDir::new().unwrap();
    let mut q = Qbn::new(3, 4, QbnKind::Observation, 11).unwrap();
    // Sharpen the bottleneck layer so the untrained encoder leaves zero.
    for w in q.params_mut()[4].data_mut() {
        *w *= 20.0;
    }
    let ckpt = path(&dir, "qbn_o.ckpt");
    write_checkpoint(fs::File::create(&ckpt).unwrap(), &q.to_checkpoint()).unwrap();
    let code = |x: &[f64]| q.encode(x).unwrap().0;
    let o1 = [0.0, 0.0, 0.0];
    let o2 = (1..200)
        .map(|k| {
            let t = k as f64 * 0.37;
            [3.0 * t.sin(), 3.0 * (1.7 * t).cos(), 3.0 * (2.3 * t).sin()]
        })
        .find(|o| code(o) != code(&o1))
        .expect("some observation changes the code");
    let (a, b) = (path(&dir, "a.json"), path(&dir, "b.json"));
    fs::write(&a, serde_json::to_string(&o1).unwrap()).unwrap();
    fs::write(&b, serde_json::to_string(&o2).unwrap()).unwrap();
    let (map, csv) = (path(&dir, "attn.json"), path(&dir, "attn.csv"));
    ok(&[
        "attend", "--qbn-o", &ckpt, "--obs-a", &a, "--obs-b", &b, "--steps", "32",
        "--out", &map, "--csv", &csv,
    ]);
    let csv = fs::read_to_string(&csv).unwrap();
    assert_eq!(csv.lines().next(), Some("rank,feature,attribution"));
    assert_eq!(csv.lines().count(), 4);
    let map: serde_json::Value = serde_json::from_str(&fs::read_to_string(&map).unwrap()).unwrap();
    assert_eq!(map["steps"], 32);
}
