use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_todsim"))
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Fixture scenario cut down to `secs` seconds, written into `dir`.
fn short_scenario(dir: &Path, fixture: &str, secs: f64) -> PathBuf {
    let text = std::fs::read_to_string(repo(&format!("scenarios/{fixture}"))).unwrap();
    let text: String = text
        .lines()
        .map(|l| {
            if l.starts_with("duration") {
                format!("duration = {secs}")
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let p = dir.join(fixture);
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn kv<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

/// Asserts a failed run with the documented error line.
fn assert_error(o: &Output, kind: &str) {
    assert!(!o.status.success(), "expected failure: {}", stdout(o));
    let err = stderr(o);
    let line = err.lines().last().unwrap_or_default();
    assert!(line.starts_with(&format!("error kind={kind} message=\"")), "{err}");
    assert!(line.ends_with('"'), "{err}");
}

#[test]
fn simulate_writes_outputs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path(), "free_motion_b.toml", 2.0);
    let run = |out: &str| {
        let o = bin().arg("simulate").arg(&sc).arg("--out").arg(dir.path().join(out)).output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        o
    };
    let o = run("a");
    let text = stdout(&o);
    assert_eq!(kv(&text, "rows"), Some("2001"));
    assert_eq!(kv(&text, "all_finite"), Some("true"));
    for f in ["trace.csv", "metrics.txt", "scenario.toml"] {
        assert!(dir.path().join("a").join(f).is_file(), "{f}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("a/metrics.txt")).unwrap();
    assert!(text.starts_with(&metrics));
    run("b");
    let a = std::fs::read(dir.path().join("a/trace.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/trace.csv")).unwrap();
    assert!(a == b, "traces differ between identical runs");
}

#[test]
fn audit_passes_on_fresh_trace_and_flags_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path(), "free_motion_a.toml", 2.0);
    let out = dir.path().join("run");
    assert!(bin().arg("simulate").arg(&sc).arg("--out").arg(&out).output().unwrap().status.success());

    let o = bin().arg("audit").arg(out.join("trace.csv")).output().unwrap();
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert_eq!(kv(&stdout(&o), "passed"), Some("true"));
    assert_eq!(kv(&stdout(&o), "tod_argmax_violations"), Some("0"));

    // Move every grant to slave 1: some arbitration instants no longer
    // pick the largest weighted error.
    let mut rdr = csv::Reader::from_path(out.join("trace.csv")).unwrap();
    let head = rdr.headers().unwrap().clone();
    let gi = head.iter().position(|h| h == "granted").unwrap();
    let ti = head.iter().position(|h| h == "tod").unwrap();
    let tampered = dir.path().join("tampered");
    std::fs::create_dir(&tampered).unwrap();
    std::fs::copy(out.join("scenario.toml"), tampered.join("scenario.toml")).unwrap();
    let mut w = csv::Writer::from_path(tampered.join("trace.csv")).unwrap();
    w.write_record(&head).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let mut fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if fields[ti] == "1" {
            fields[gi] = "1".into();
        }
        w.write_record(&fields).unwrap();
    }
    w.flush().unwrap();
    let o = bin()
        .arg("audit")
        .arg(tampered.join("trace.csv"))
        .arg("--no-lyapunov")
        .output()
        .unwrap();
    assert_error(&o, "audit_failed");
    assert_eq!(kv(&stdout(&o), "passed"), Some("false"));
    assert_ne!(kv(&stdout(&o), "tod_argmax_violations"), Some("0"));
}

#[test]
fn audit_needs_matching_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path(), "free_motion_a.toml", 0.5);
    let out = dir.path().join("run");
    assert!(bin().arg("simulate").arg(&sc).arg("--out").arg(&out).output().unwrap().status.success());
    std::fs::remove_file(out.join("scenario.toml")).unwrap();
    let o = bin().arg("audit").arg(out.join("trace.csv")).output().unwrap();
    assert_error(&o, "io");
    let o = bin()
        .arg("audit")
        .arg(out.join("trace.csv"))
        .arg("--scenario")
        .arg(&sc)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn verify_lmi_reports_and_bisects() {
    let o = bin()
        .args(["verify-lmi", "--bisect"])
        .arg(repo("problems/default_gains.toml"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("verdict: FEASIBLE"));
    assert_eq!(kv(&text, "feasible"), Some("true"));
    for i in 1..=3 {
        let lam: f64 = kv(&text, &format!("xi_{i}_lambda_max")).unwrap().parse().unwrap();
        assert!(lam < 0.0);
        assert!(kv(&text, &format!("omega_{i}_lambda_max")).is_some());
    }
    let h: f64 = kv(&text, "h_star").unwrap().parse().unwrap();
    assert!(h >= 0.01, "h* = {h} below the certified h");
    let again = bin()
        .args(["verify-lmi", "--bisect"])
        .arg(repo("problems/default_gains.toml"))
        .output()
        .unwrap();
    assert_eq!(kv(&stdout(&again), "h_star"), kv(&text, "h_star"));
}

#[test]
fn verify_lmi_accepts_scenarios_and_reports_infeasibility() {
    let o = bin().arg("verify-lmi").arg(repo("scenarios/free_motion_b.toml")).output().unwrap();
    assert!(o.status.success());
    assert_eq!(kv(&stdout(&o), "scheme"), Some("B"));
    assert!(kv(&stdout(&o), "pi_1_lambda_max").is_some());

    let o = bin().arg("verify-lmi").arg(repo("problems/gain_violation.toml")).output().unwrap();
    assert!(o.status.success());
    assert_eq!(kv(&stdout(&o), "gain_conditions"), Some("false"));
    assert_eq!(kv(&stdout(&o), "feasible"), Some("false"));
    assert!(kv(&stdout(&o), "h_star").is_none());
}

#[test]
fn compare_reports_both_arbiters() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path(), "free_motion_a.toml", 1.0);
    let o = bin()
        .arg("compare")
        .arg(&sc)
        .args(["--schedulers", "tod,rr", "--out"])
        .arg(dir.path().join("cmp"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(kv(&text, "tod.final_sync_error").is_some());
    assert!(kv(&text, "rr.final_sync_error").is_some());
    assert!(dir.path().join("cmp/rr/trace.csv").is_file());
    assert!(dir.path().join("cmp/comparison.txt").is_file());

    let o = bin().arg("compare").arg(&sc).args(["--schedulers", "tod,fifo"]).output().unwrap();
    assert_error(&o, "usage");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn input_errors_are_machine_parsable() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().args(["simulate", "/nonexistent/scenario.toml"]).output().unwrap();
    assert_error(&o, "io");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "scheme = \"A\"\nduration = 1.0\nbogus_key = 3\n").unwrap();
    let o = bin().arg("simulate").arg(&bad).output().unwrap();
    assert_error(&o, "parse");

    let text = std::fs::read_to_string(repo("scenarios/free_motion_a.toml"))
        .unwrap()
        .replacen("offset = [0.6, 0.0]", "offset = [0.9, 0.0]", 1);
    let unbalanced = dir.path().join("unbalanced.toml");
    std::fs::write(&unbalanced, text).unwrap();
    let o = bin().arg("simulate").arg(&unbalanced).output().unwrap();
    assert_error(&o, "invalid_input");

    let o = bin().arg("frobnicate").output().unwrap();
    assert_error(&o, "usage");
    assert_eq!(o.status.code(), Some(2));

    let o = bin().arg("--help").output().unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("verify-lmi"));
}

#[test]
fn serve_exposes_healthz_and_reports_bind_failures() {
    let mut child = bin()
        .args(["serve", "--bind", "127.0.0.1:0", "--speed", "2", "--publish-hz", "30"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let addr = first.strip_prefix("listening=http://").expect(&first).to_string();

    let mut tcp = std::net::TcpStream::connect(&addr).unwrap();
    tcp.write_all(b"GET /healthz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    tcp.read_to_string(&mut resp).unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"scheme\":\"A\""), "{resp}");
    assert!(resp.contains(&format!("\"version\":\"{}\"", env!("CARGO_PKG_VERSION"))));

    // Same port again: bind must fail cleanly.
    let o = bin().args(["serve", "--bind", &addr]).output().unwrap();
    assert_error(&o, "bind");

    let o = bin().args(["serve", "--bind", "127.0.0.1:0", "--speed", "0"]).output().unwrap();
    assert_error(&o, "usage");

    child.kill().unwrap();
    child.wait().unwrap();
}
