//! End-to-end tests of the `beam` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use beam_core::event::{decode, Event};
use beam_core::metrics::RunMetrics;
use beam_core::run::read_log;

fn beam() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_beam"));
    c.env_remove("BEAM_OUT");
    c
}

fn pilot(file: &str) -> PathBuf {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/pilot")).join(file)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn run_pilot(out: &Path, extra: &[&str]) -> Output {
    beam()
        .args(["run", "--model"])
        .arg(pilot("model.san"))
        .arg("--scenario")
        .arg(pilot("pilot.toml"))
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn validate_exit_codes() {
    let ok = beam().arg("validate").arg(pilot("model.san")).output().unwrap();
    assert_eq!(code(&ok), 0);
    assert!(ok.stdout.is_empty() && ok.stderr.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.san");
    std::fs::write(&bad, "PATTERNS { PATTERN P = a:A WITHIN 10 }\nGOAL G { ACTION x ON Missing NOTIFY ops \"hi\" }\n").unwrap();
    let o = beam().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(code(&o), 1);
    let diag = stderr(&o);
    assert!(diag.contains("Missing"), "{diag}");
    assert!(diag.lines().next().unwrap().starts_with(&format!("{}:2:", bad.display())), "{diag}");

    let o = beam().arg("validate").arg(dir.path().join("none.san")).output().unwrap();
    assert_eq!(code(&o), 2);
    let o = beam().arg("validate").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn run_writes_deterministic_logs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = run_pilot(&a, &["--auto-apply"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["events.log", "audit.log", "context.log", "metrics.json"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    // BEAM_OUT supplies the default output directory.
    let o = beam()
        .args(["run", "--auto-apply", "--model"])
        .arg(pilot("model.san"))
        .arg("--scenario")
        .arg(pilot("pilot.toml"))
        .env("BEAM_OUT", &b)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(read(&a.join("events.log")), read(&b.join("events.log")));
    assert_eq!(read(&a.join("audit.log")), read(&b.join("audit.log")));

    let o = beam().args(["run", "--model"]).arg(pilot("model.san")).arg("--scenario").arg(pilot("pilot.toml")).output().unwrap();
    assert_eq!(code(&o), 2, "missing --out is a usage error");

    let o = beam()
        .args(["run", "--model"])
        .arg(pilot("model.san"))
        .arg("--scenario")
        .arg(dir.path().join("none.toml"))
        .arg("--out")
        .arg(&a)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn replay_reproduces_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&run_pilot(&out, &[])), 0);
    let o = beam()
        .args(["replay", "--model"])
        .arg(pilot("model.san"))
        .arg("--log")
        .arg(out.join("events.log"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), read(&out.join("audit.log")));

    let check = |audit: &Path| {
        beam()
            .args(["replay", "--model"])
            .arg(pilot("model.san"))
            .arg("--log")
            .arg(out.join("events.log"))
            .arg("--check")
            .arg(audit)
            .output()
            .unwrap()
    };
    assert_eq!(code(&check(&out.join("audit.log"))), 0);
    let tampered = dir.path().join("tampered.log");
    std::fs::write(&tampered, read(&out.join("audit.log")).replacen("\"cep-1\"", "\"cep-9\"", 1)).unwrap();
    let o = check(&tampered);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("differs"));

    let corrupt = dir.path().join("corrupt.log");
    std::fs::write(&corrupt, "{\"id\":1}\n").unwrap();
    let o = beam().args(["replay", "--model"]).arg(pilot("model.san")).arg("--log").arg(&corrupt).output().unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 1"));
}

fn write_log(path: &Path, events: &[Event]) {
    let text: String = events.iter().map(|e| beam_core::event::encode(e) + "\n").collect();
    std::fs::write(path, text).unwrap();
}

#[test]
fn oracle_command() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.log");
    std::fs::write(&empty, "").unwrap();
    let seq = "PATTERN P = SEQ(a:A, b:B) WITHIN 100";
    let o = beam().args(["oracle", "--pattern", seq, "--log"]).arg(&empty).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());

    let log = dir.path().join("ab.log");
    write_log(
        &log,
        &[
            Event::simple("1", "A", "t", 10, "s"),
            Event::simple("2", "B", "t", 20, "s"),
        ],
    );
    let pfile = dir.path().join("p.pat");
    std::fs::write(&pfile, seq).unwrap();
    let o = beam().args(["oracle", "--pattern"]).arg(&pfile).arg("--log").arg(&log).output().unwrap();
    assert_eq!(code(&o), 0);
    let lines: Vec<Event> = stdout(&o).lines().map(|l| decode(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0].parents, ["1", "2"]);

    let o = beam().args(["oracle", "--pattern", "PATTERN P = SEQ(a:A WITHIN 1", "--log"]).arg(&log).output().unwrap();
    assert_eq!(code(&o), 1);

    // Differential: the oracle over the relevant slice of a live run finds
    // what the engine found.
    let out = dir.path().join("run");
    assert_eq!(code(&run_pilot(&out, &["--auto-apply"])), 0);
    let events = read_log(&read(&out.join("events.log"))).unwrap();
    let o = beam()
        .args(["oracle", "--pattern", "ExtraStopOpportunity", "--model"])
        .arg(pilot("model.san"))
        .arg("--log")
        .arg(out.join("events.log"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 1, "the full log is too large");
    assert!(stderr(&o).contains("at most 50"));

    let slice: Vec<Event> = events
        .iter()
        .filter(|e| e.etype == "ReturneeRequest" || e.etype == "TruckEnteredZone")
        .cloned()
        .collect();
    let slice_path = dir.path().join("slice.log");
    write_log(&slice_path, &slice);
    let o = beam()
        .args(["oracle", "--pattern", "ExtraStopOpportunity", "--model"])
        .arg(pilot("model.san"))
        .arg("--log")
        .arg(&slice_path)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let strip = |mut e: Event| {
        e.id.clear();
        e
    };
    let got: Vec<Event> = stdout(&o).lines().map(|l| strip(decode(l).unwrap())).collect();
    let live: Vec<Event> = events
        .iter()
        .filter(|e| e.etype == "ExtraStopOpportunity")
        .cloned()
        .map(strip)
        .collect();
    assert_eq!(got.len(), 1);
    assert_eq!(got, live);
}

#[test]
fn metrics_recount() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&run_pilot(&out, &["--auto-apply"])), 0);
    let o = beam().arg("metrics").arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 0);
    let m: RunMetrics = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(m.detections["ExtraStopOpportunity"], 1);
    assert_eq!(m.directives["command"]["commanded"], 1);
    assert_eq!(m, serde_json::from_str(&read(&out.join("metrics.json"))).unwrap());

    let empty = dir.path().join("empty");
    assert_eq!(code(&run_pilot(&empty, &["--ticks", "0"])), 0);
    let o = beam().arg("metrics").env("BEAM_OUT", &empty).output().unwrap();
    let m: RunMetrics = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(m, RunMetrics::default());

    let o = beam().arg("metrics").arg("--out").arg(dir.path().join("missing")).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn feed_renders_notifications() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&run_pilot(&out, &["--auto-apply"])), 0);
    let o = beam().arg("feed").arg("--log").arg(out.join("events.log")).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "[+04:00] warehouse_manager: extra stop at C3 added to the route of truck T1\n");
    let o = beam()
        .args(["feed", "--audience", "fleet_manager", "--log"])
        .arg(out.join("events.log"))
        .output()
        .unwrap();
    assert!(o.stdout.is_empty());
}
