use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_corridor-sim"))
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn scenario(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("walk.txt");
    std::fs::write(&p, "# one crossing\nwalker 1 800 point 1.5:0.6:5,1.5:12:16.4\n").unwrap();
    p
}

fn digest(stdout: &str) -> &str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("digest"))
        .map(str::trim)
        .expect("digest line")
}

#[test]
fn run_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path());
    let run = |seed: &str| ok(bin().args(["run", "--scenario"]).arg(&sc).args(["--seed", seed]).output().unwrap());
    let a = run("3");
    assert_eq!(digest(&a), digest(&run("3")));
    assert_ne!(digest(&a), digest(&run("4")));
    // last waypoint at 16.4 s: 18 s at 8 Hz
    assert!(a.contains("samples      17280"), "{a}");
}

#[test]
fn record_replay_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path());
    let a = dir.path().join("a.trace");
    let b = dir.path().join("b.trace");
    ok(bin().args(["run", "--truth", "--scenario"]).arg(&sc).arg("--record").arg(&a).output().unwrap());
    ok(bin().arg("replay").arg(&a).arg("--record").arg(&b).output().unwrap());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let e = ok(bin().arg("eval").arg(&a).output().unwrap());
    assert!(e.contains("position rmse"), "{e}");
    let kv: Vec<&str> = e.lines().filter(|l| l.contains('=')).collect();
    assert_eq!(kv.len(), 7, "{e}");
    let rmse: f64 = kv[2].strip_prefix("rmse_m=").unwrap().parse().unwrap();
    assert!(rmse < 0.3, "{rmse}");
}

#[test]
fn eval_without_truth_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path());
    let a = dir.path().join("a.trace");
    ok(bin().args(["run", "--scenario"]).arg(&sc).arg("--record").arg(&a).output().unwrap());
    let out = bin().arg("eval").arg(&a).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no ground truth"));
}

#[test]
fn bad_inputs_fail_with_messages() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "walker 1 800 hover 0:0:0,1:1:1\n").unwrap();
    let out = bin().args(["run", "--scenario"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let out = bin().args(["run", "--duration", "1", "--algorithm", "nope"]).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown algorithm"));

    let floor = dir.path().join("floor.cfg");
    std::fs::write(&floor, "tiles_x=5\ncolour=blue\n").unwrap();
    let out = bin().args(["run", "--duration", "1", "--floor"]).arg(&floor).output().unwrap();
    assert!(!out.status.success());

    let trunc = dir.path().join("t.trace");
    std::fs::write(&trunc, "version=1\n").unwrap();
    assert!(!bin().arg("replay").arg(&trunc).output().unwrap().status.success());
}

#[test]
fn custom_floor_and_800hz() {
    let dir = tempfile::tempdir().unwrap();
    let floor = dir.path().join("floor.cfg");
    std::fs::write(&floor, "tiles_x=5\ntiles_y=11\nradio.loss_prob=0.1\n").unwrap();
    let out = ok(bin()
        .args(["run", "--duration", "1", "--rate", "800", "--algorithm", "idle", "--floor"])
        .arg(&floor)
        .output()
        .unwrap());
    // 4 x 10 interior sensors
    assert!(out.contains("samples      32000"), "{out}");
}

#[test]
fn lists_algorithms() {
    let out = ok(bin().arg("algorithms").output().unwrap());
    assert!(out.lines().any(|l| l == "centroid-tracker"));
}

#[test]
fn serves_a_bounded_run() {
    use std::io::{BufRead, BufReader, Write};
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path());
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let child = bin()
        .args(["run", "--duration", "2", "--fast", "--paused", "--scenario"])
        .arg(&sc)
        .arg("--serve")
        .arg(format!("127.0.0.1:{port}"))
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let mut s = None;
    for _ in 0..100 {
        if let Ok(c) = std::net::TcpStream::connect(("127.0.0.1", port)) {
            s = Some(c);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    let mut s = s.expect("gateway up");
    s.set_read_timeout(Some(std::time::Duration::from_secs(20))).unwrap();
    let mut r = BufReader::new(s.try_clone().unwrap());
    s.write_all(b"{\"type\":\"HELLO\",\"req\":1,\"version\":1,\"role\":\"controller\"}\n").unwrap();
    s.write_all(b"{\"type\":\"SUBSCRIBE\",\"req\":2,\"topics\":[\"metrics\"]}\n").unwrap();
    s.write_all(b"{\"type\":\"RESUME\",\"req\":3}\n").unwrap();
    let mut saw_final = false;
    let mut line = String::new();
    while r.read_line(&mut line).unwrap_or(0) > 0 {
        if line.contains("\"final\":true") {
            saw_final = true;
            break;
        }
        line.clear();
    }
    assert!(saw_final);
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("samples      1920"));
}
