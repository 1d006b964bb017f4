use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const HEATCOOL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/examples/heatcool");
const INVALID: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/invalid");

fn broom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_broom")).args(args).output().unwrap()
}

fn model() -> String {
    format!("{HEATCOOL}/heatcool.broom")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn validate_heatcool_is_silent() {
    let o = broom(&["validate", &model()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty() && o.stderr.is_empty(), "{}", text(&o.stderr));
}

#[test]
fn validate_reports_each_negative_fixture() {
    for (file, diag) in [
        ("multi_inherit", "E_MULTI_INHERIT"),
        ("override", "E_OVERRIDE"),
        ("chan_dangling", "E_CHAN_DANGLING"),
        ("port_incompat", "E_PORT_INCOMPAT"),
        ("contain_cycle", "E_CONTAIN_CYCLE"),
        ("algebraic_loop", "E_ALGEBRAIC_LOOP"),
        ("unbound", "E_UNBOUND"),
    ] {
        let path = format!("{INVALID}/{file}.broom");
        let o = broom(&["validate", &path]);
        assert_eq!(code(&o), 1, "{file}");
        let err = text(&o.stderr);
        assert!(err.starts_with(&format!("{diag} {path}:")), "{err}");
        assert!(o.stdout.is_empty());
    }
}

#[test]
fn sim_twice_gives_identical_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ndjson");
    let b = dir.path().join("b.ndjson");
    let stim = format!("{HEATCOOL}/s5_panel_display.stimuli.json");
    for out in [&a, &b] {
        let o = broom(&["sim", &model(), "--duration", "20", "--dt", "0.01", "--stimuli", &stim, "--trace", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
        assert!(o.stdout.is_empty());
    }
    let (x, y) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(x.len() > 100_000);
    assert_eq!(x, y);
}

#[test]
fn sim_writes_pure_ndjson_to_stdout() {
    let o = broom(&["sim", &model(), "--duration", "0.5", "--snapshot-every", "10"]);
    assert_eq!(code(&o), 0);
    for line in text(&o.stdout).lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn runtime_error_exits_3_and_keeps_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(
        dir.path(),
        "z.broom",
        "model Z {
          protocol Go { message go(); }
          actor Root { provides p: Go; attr n: int = 1;
            machine { states s; initial s; s -> s on go / { n := n - 1; n := 6 / n; }; } }
          root Root }",
    );
    let s = write(dir.path(), "s.json", r#"[{"at_tick": 3, "target": "root", "port": "p", "name": "go"}]"#);
    let t = dir.path().join("t.ndjson");
    let o = broom(&["sim", m.to_str().unwrap(), "--stimuli", s.to_str().unwrap(), "--trace", t.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(text(&o.stderr).contains("division by zero"));
    assert!(fs::read_to_string(&t).unwrap().lines().last().unwrap().contains("\"runtime_error\""));
}

#[test]
fn rehearse_fixture_package_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let o = broom(&["rehearse", &model(), "--package", &format!("{HEATCOOL}/package.json"), "--report", report.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(report).unwrap()).unwrap();
    assert_eq!(r["passed"], true);
    let names: Vec<&str> = r["scenarios"].as_array().unwrap().iter().map(|s| s["scenario"].as_str().unwrap()).collect();
    assert_eq!(names, ["S1 regulation", "S3 setpoint change", "S2 disturbance", "S5 panel display", "S4 fan operation"]);
}

#[test]
fn failing_rehearsal_exits_2_and_names_the_arrow() {
    let dir = tempfile::tempdir().unwrap();
    let s1 = fs::read_to_string(format!("{HEATCOOL}/s1_regulation.json")).unwrap();
    // the sensor reads the aggregate instead of the inside air
    let bad = s1.replace(r#""from": "root.system.sensor", "to": "root.inside""#, r#""from": "root.system.sensor", "to": "root.system.aggregate""#);
    assert_ne!(bad, s1);
    write(dir.path(), "s1.json", &bad);
    fs::copy(format!("{HEATCOOL}/s1_regulation.stimuli.json"), dir.path().join("s1.stimuli.json")).unwrap();
    let pkg = write(
        dir.path(),
        "p.json",
        r#"{"name": "bad", "dt": 0.01, "scenarios": [{"file": "s1.json", "priority": "feasibility", "stimuli": "s1.stimuli.json", "duration": 5.0}]}"#,
    );
    let o = broom(&["rehearse", &model(), "--package", pkg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["passed"], false);
    let s = &r["scenarios"][0];
    assert_eq!(s["divergent_arrow"]["to"], "root.system.aggregate");
    assert_eq!(s["verdict"]["divergence"]["arrow"], 2);
    assert!(text(&o.stderr).contains("arrow 2 root.system.sensor -> root.system.aggregate value"), "{}", text(&o.stderr));
}

#[test]
fn codegen_writes_sources() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let o = broom(&["codegen", &model(), "-o", out.to_str().unwrap(), "--trace-shim", "--duration", "2"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    for f in ["model.h", "model.c", "trace_shim.c", "SCHEDULE.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let plain = dir.path().join("plain");
    assert_eq!(code(&broom(&["codegen", &model(), "-o", plain.to_str().unwrap()])), 0);
    assert!(!plain.join("trace_shim.c").exists());
}

#[test]
fn codegen_into_a_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = write(dir.path(), "f", "");
    let o = broom(&["codegen", &model(), "-o", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(text(&o.stderr).starts_with("E_IO"));
}

#[test]
fn fmt_is_canonical_and_write_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.broom", "model M { actor   R { attr x : int = 1 ; } root R }");
    let o = broom(&["fmt", p.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let canonical = text(&o.stdout);
    assert_ne!(canonical, fs::read_to_string(&p).unwrap());
    assert_eq!(code(&broom(&["fmt", "--write", p.to_str().unwrap()])), 0);
    assert_eq!(fs::read_to_string(&p).unwrap(), canonical);
    assert_eq!(text(&broom(&["fmt", p.to_str().unwrap()]).stdout), canonical);
}

#[test]
fn argument_and_io_errors_exit_4() {
    let m = model();
    for args in [
        vec!["sim", "x.broom", "--no-such-flag"],
        vec!["frobnicate"],
        vec!["sim", &m, "--dt", "-1"],
        vec!["validate", "/nonexistent/m.broom"],
        vec!["rehearse", &m, "--package", "/nonexistent/p.json"],
        vec!["serve", &m, "--port", "1", "--speed", "0"],
    ] {
        let o = broom(&args);
        assert_eq!(code(&o), 4, "{args:?}: {}", text(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    let o = broom(&["sim", &model(), "--bogus"]);
    assert!(text(&o.stderr).contains("Usage"));
}

#[test]
fn version_is_semantic() {
    let o = broom(&["--version"]);
    assert_eq!(code(&o), 0);
    let v = text(&o.stdout);
    let v = v.trim().strip_prefix("broom ").unwrap();
    assert_eq!(v.split('.').filter(|p| p.parse::<u32>().is_ok()).count(), 3, "{v}");
}

#[test]
fn serve_announces_its_endpoint() {
    use std::io::{BufRead, BufReader};
    let mut child = Command::new(env!("CARGO_BIN_EXE_broom"))
        .args(["serve", &model(), "--port", "0", "--paused"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(line.starts_with("serving ws://127.0.0.1:") && line.trim_end().ends_with("/experiment"), "{line}");
}
