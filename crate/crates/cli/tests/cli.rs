#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::SystemTime;

use common::copy_fixture;

fn stepline(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepline"))
        .current_dir(dir)
        .args(args)
        .env_remove("STEPLINE_HOSTNAME")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Every file under `dir` with its modification time and contents.
fn snapshot(dir: &Path) -> BTreeMap<String, (SystemTime, Vec<u8>)> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let e = e.unwrap();
            if e.file_type().unwrap().is_dir() {
                stack.push(e.path());
            } else {
                let m = e.metadata().unwrap().modified().unwrap();
                out.insert(e.path().display().to_string(), (m, fs::read(e.path()).unwrap()));
            }
        }
    }
    out
}

#[test]
fn status_writes_nothing() {
    let dir = copy_fixture("small");
    assert!(stepline(dir.path(), &["run"]).status.success());
    fs::write(dir.path().join("raw/s1.txt"), "changed\n").unwrap();
    let before = snapshot(dir.path());
    let out = stepline(dir.path(), &["status"]);
    assert!(out.status.success());
    assert_eq!(snapshot(dir.path()), before);
    let text = stdout(&out);
    assert!(text.contains("01_filter:s1  stale (input changed: raw/s1.txt)"), "{text}");
    assert!(text.contains("01_filter:s2  up-to-date"), "{text}");
}

#[test]
fn held_lock_fails_fast() {
    let dir = copy_fixture("small");
    fs::create_dir_all(dir.path().join(".stepline")).unwrap();
    let lock = fs::File::create(dir.path().join(".stepline/lock")).unwrap();
    lock.try_lock().unwrap();
    let out = stepline(dir.path(), &["run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("holds"));
    // read-only commands do not need the lock
    assert!(stepline(dir.path(), &["status"]).status.success());
    drop(lock);
    assert!(stepline(dir.path(), &["run"]).status.success());
}

#[test]
fn selection_intersects_tasks_and_recordings() {
    let dir = copy_fixture("small");
    let out = stepline(
        dir.path(),
        &["run", "--task", "01_filter", "--task", "02_epochs", "--recording", "s2"],
    );
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("2 executed, 0 up to date"), "{}", stdout(&out));

    let out = stepline(dir.path(), &["list", "--instances", "--task", "06_grand"]);
    assert_eq!(stdout(&out).lines().count(), 1);
    // aggregate instances belong to no recording
    let out = stepline(dir.path(), &["list", "--instances", "--recording", "s1"]);
    assert_eq!(stdout(&out).lines().count(), 5);

    assert_eq!(stepline(dir.path(), &["run", "--task", "nope"]).status.code(), Some(2));
    assert_eq!(stepline(dir.path(), &["run", "--recording", "s9"]).status.code(), Some(2));
}

#[test]
fn forget_reruns_selected_instances() {
    let dir = copy_fixture("small");
    assert!(stepline(dir.path(), &["run"]).status.success());
    let out = stepline(dir.path(), &["forget", "--task", "05_tfr", "--recording", "s3"]);
    assert_eq!(stdout(&out), "1 forgotten\n");
    let out = stepline(dir.path(), &["run", "--dry-run"]);
    assert_eq!(
        stdout(&out),
        "05_tfr:s3\tnever-run\n07_stats\tupstream\n2 to run, 15 up to date\n"
    );
}

const HOSTED: &str = r#"
[pipeline]
name = "hosted"
recordings = ["a"]

[params]
level = 1

[host."cluster".params]
level = 9

[[task]]
name = "write"
kind = "per_recording"
command = "echo {param:level} > {recording}.out"
targets = ["{recording}.out"]
params = ["level"]
no_report = true
"#;

#[test]
fn hostname_override_selects_parameter_overlay() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pipeline.toml"), HOSTED).unwrap();
    assert!(stepline(dir.path(), &["run"]).status.success());
    assert_eq!(fs::read_to_string(dir.path().join("a.out")).unwrap(), "1\n");
    let out = Command::new(env!("CARGO_BIN_EXE_stepline"))
        .current_dir(dir.path())
        .arg("run")
        .env("STEPLINE_HOSTNAME", "cluster")
        .output()
        .unwrap();
    assert!(stdout(&out).starts_with("1 executed"));
    assert_eq!(fs::read_to_string(dir.path().join("a.out")).unwrap(), "9\n");
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(stepline(dir.path(), &["run"]).status.code(), Some(2));
    fs::write(dir.path().join("pipeline.toml"), "[pipeline\n").unwrap();
    let out = stepline(dir.path(), &["status"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim().lines().count(), 1);
    assert_eq!(stepline(dir.path(), &["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(stepline(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn graph_to_file_and_instances() {
    let dir = copy_fixture("small");
    let out = stepline(dir.path(), &["graph", "-o", "g.dot"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let dot = fs::read_to_string(dir.path().join("g.dot")).unwrap();
    assert!(dot.contains("\"03_ica\" [label=\"03_ica ×3\", shape=box3d];"));
    let inst = stdout(&stepline(dir.path(), &["graph", "--instances"]));
    assert!(inst.contains("\"03_ica:s2\" -> \"04_evoked:s2\";"));
}

#[test]
fn report_command_writes_requested_scopes() {
    let dir = copy_fixture("small");
    let out = stepline(dir.path(), &["report", "--recording", "s2", "--report-dir", "html"]);
    assert!(out.status.success());
    let mut names: Vec<String> = fs::read_dir(dir.path().join("html"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["aggregate.html", "s2.html"]);
    // nothing has run yet, so every figure is a placeholder
    let html = fs::read_to_string(dir.path().join("html/s2.html")).unwrap();
    assert!(!html.contains("<img"));
    assert_eq!(html.matches("class=\"placeholder\"").count(), 5);
}
