use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

fn wot() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wot"));
    cmd.env_remove("WOT_SEED");
    cmd
}

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn wot")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn publish(out: &Path, mode: &str, group: &str) {
    let o = run(wot()
        .env("WOT_SEED", "7")
        .args(["publish", "--mode", mode, "--group", group])
        .arg("--catalog")
        .arg(demo().join("catalog"))
        .arg("--out")
        .arg(out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

struct Server {
    child: Child,
    addr: String,
    reader: BufReader<std::process::ChildStdout>,
}

impl Server {
    fn start(bundle: &Path, sessions: u32) -> Server {
        let mut child = wot()
            .args(["serve", "--listen", "127.0.0.1:0", "--max-sessions", &sessions.to_string()])
            .arg("--bundle")
            .arg(bundle)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut reader = BufReader::new(child.stdout.take().unwrap());
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").expect("listen line").to_string();
        Server { child, addr, reader }
    }

    fn finish(mut self) -> String {
        let mut rest = String::new();
        self.reader.read_to_string(&mut rest).unwrap();
        assert!(self.child.wait().unwrap().success());
        rest
    }
}

#[test]
fn publish_serve_buy_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    publish(&bundle, "p2", "rfc3526-2048");
    assert!(bundle.join("manifest.bin").exists());
    assert!(bundle.join("items/charlie.ct").exists());

    let server = Server::start(&bundle, 2);
    let out = dir.path().join("bought");
    let o = run(wot()
        .args(["buy", "--server", &server.addr, "--items", "alpha,charlie"])
        .arg("--out")
        .arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("paid T=4"));

    // Unknown id fails on the client before any OT message.
    let bad = run(wot()
        .args(["buy", "--server", &server.addr, "--items", "alpha,zulu"])
        .arg("--out")
        .arg(dir.path().join("bad")));
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("zulu"));

    let log = server.finish();
    for name in ["alpha.txt", "charlie.txt"] {
        let id = name.trim_end_matches(".txt");
        assert_eq!(
            std::fs::read(out.join(id)).unwrap(),
            std::fs::read(demo().join("catalog").join(name)).unwrap()
        );
    }
    assert!(!out.join("bravo").exists());

    assert!(log.contains("session 1: billed T=4"), "{log}");
    assert!(log.contains("sessions completed: 1  failed: 1"), "{log}");
    for line in log.lines().filter(|l| l.starts_with("session ")) {
        let (ordinal, billed) = line.split_once(": billed T=").expect("billing line shape");
        assert!(ordinal["session ".len()..].parse::<u64>().is_ok());
        assert!(billed.parse::<u64>().is_ok());
    }
    for id in ["alpha", "bravo", "charlie", "delta", "zulu"] {
        assert!(!log.contains(id), "server log mentions {id}");
    }
}

#[test]
fn buy_with_local_bundle_in_p1() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    publish(&bundle, "p1", "test-47");
    let server = Server::start(&bundle, 1);
    let out = dir.path().join("bought");
    let o = run(wot()
        .args(["buy", "--server", &server.addr, "--items", "delta"])
        .arg("--bundle")
        .arg(&bundle)
        .arg("--out")
        .arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("paid T=7"));
    assert!(server.finish().contains("billed T=7"));
    assert_eq!(
        std::fs::read(out.join("delta")).unwrap(),
        std::fs::read(demo().join("catalog/delta.txt")).unwrap()
    );
}

#[test]
fn serve_refuses_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    publish(dir.path(), "p2", "test-23");
    let o = run(wot()
        .env("WOT_SEED", "1")
        .args(["serve", "--listen", "127.0.0.1:0"])
        .arg("--bundle")
        .arg(dir.path()));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("WOT_SEED"));
}

#[test]
fn audit_exit_status() {
    let unsafe_ = run(wot().arg("audit").arg("--prices").arg(demo().join("powers.txt")));
    assert_eq!(unsafe_.status.code(), Some(2));
    assert!(stdout(&unsafe_).contains("fully leaking totals: 15"));
    assert!(stdout(&unsafe_).contains("verdict: UNSAFE"));

    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.txt");
    std::fs::write(&flat, "1\n1\n1\n1\n").unwrap();
    let ok = run(wot().arg("audit").arg("--prices").arg(&flat));
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("verdict: OK"));
    let strict = run(wot().args(["audit", "--min-ambiguity", "5", "--prices"]).arg(&flat));
    assert!(strict.status.success());
    assert!(stdout(&strict).contains("verdict: WARN"));
}

#[test]
fn reduce_reports_unit() {
    let o = run(wot().arg("reduce").arg("--prices").arg(demo().join("prices.txt")));
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("q=100"), "{text}");
    assert!(text.contains("reduced=[1,2,3,7]"), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.txt");
    std::fs::write(&p, "105\n190\n307\n689\n").unwrap();
    let o = run(wot().args(["reduce", "--q", "100", "--prices"]).arg(&p));
    assert!(o.status.success());
    assert!(stdout(&o).contains("reduced=[1,2,3,7]"));
}

#[test]
fn privacy_test_command() {
    let o = run(wot()
        .env("WOT_SEED", "3")
        .args(["privacy-test", "--weights", "1,2,3", "--choice-a", "0,1", "--choice-b", "2", "--sessions", "3000"]));
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("t_identical: true"));
    assert!(text.contains("verdict: PASS"));

    let refused = run(wot().args(["privacy-test", "--weights", "1,2,3", "--choice-a", "0", "--choice-b", "2", "--sessions", "10"]));
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("different totals"));
}

#[test]
fn bad_arguments_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(wot()
        .args(["publish", "--mode", "p3", "--lambda", "128"])
        .arg("--catalog")
        .arg(demo().join("catalog"))
        .arg("--out")
        .arg(dir.path()));
    assert!(!o.status.success());
    let o = run(wot()
        .args(["publish", "--mode", "p1", "--lambda", "192"])
        .arg("--catalog")
        .arg(demo().join("catalog"))
        .arg("--out")
        .arg(dir.path()));
    assert!(!o.status.success());
}
