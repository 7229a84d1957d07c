use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::thread;
use std::time::Duration;

use tempfile::TempDir;

const SIM_HEADER_DEG3: &str = "time_s,direct_relations,known_depth_2,known_depth_3,handshake_bytes,sync_query_bytes,\
sync_response_bytes,total_bytes,sign_ops,verify_ops,repo_bytes_mean,repo_bytes_max,buffer_rejections,handshakes,\
syncs_completed,syncs_aborted";
const SIM_HEADER_DEG4: &str = "time_s,direct_relations,known_depth_2,known_depth_3,known_depth_4,handshake_bytes,\
sync_query_bytes,sync_response_bytes,total_bytes,sign_ops,verify_ops,repo_bytes_mean,repo_bytes_max,\
buffer_rejections,handshakes,syncs_completed,syncs_aborted";
const BENCH_HEADER: &str = "algorithm,repetitions,keygen_ms,sign_ms,verify_ms,valid_verified,invalid_rejected";

fn wotnet(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wotnet"));
    c.current_dir(dir).env("WOTNET_OUT_DIR", dir).env_remove("RUST_LOG");
    c
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn sim_csv(dir: &Path, extra: &[&str]) -> String {
    let out = run_ok(wotnet(dir).args(["sim", "--desk", "--nodes", "12", "--duration", "900", "--out", "-"]).args(extra));
    String::from_utf8(out.stdout).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn csv_headers_are_stable() {
    let dir = TempDir::new().unwrap();
    assert_eq!(sim_csv(dir.path(), &["--degree", "3"]).lines().next().unwrap(), SIM_HEADER_DEG3);
    assert_eq!(sim_csv(dir.path(), &["--degree", "1"]).lines().next().unwrap(), SIM_HEADER_DEG3);
    assert_eq!(sim_csv(dir.path(), &["--degree", "4"]).lines().next().unwrap(), SIM_HEADER_DEG4);
    let csv = dir.path().join("bench.csv");
    run_ok(wotnet(dir.path()).args(["bench", "--algo", "ecdsa-p256", "--reps", "1", "--csv"]).arg(&csv));
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), BENCH_HEADER);
    assert!(text.lines().nth(1).unwrap().ends_with(",1000,200"));
}

#[test]
fn lone_node_has_no_relations() {
    let dir = TempDir::new().unwrap();
    let out = run_ok(wotnet(dir.path()).args(["sim", "--desk", "--nodes", "1", "--duration", "600", "--seed", "3"]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("total 0 relations"), "{stdout}");
    // default file lands in the output directory
    let csv = fs::read_to_string(dir.path().join("sim_ecdsa-p256_deg3_n1_seed3.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 600 / 60 + 1);
    assert!(column(&csv, "direct_relations").iter().all(|v| *v == 0.0));
    assert!(column(&csv, "total_bytes").iter().all(|v| *v == 0.0));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = sim_csv(dir.path(), &["--seed", "1"]);
    let b = sim_csv(dir.path(), &["--seed", "1"]);
    assert_eq!(a, b);
    assert_ne!(a, sim_csv(dir.path(), &["--seed", "2"]));
}

#[test]
fn higher_degree_reports_more_relations() {
    let dir = TempDir::new().unwrap();
    let total = |deg: &str| {
        let out = run_ok(wotnet(dir.path()).args(["sim", "--desk", "--seed", "4", "--duration", "3600", "--degree", deg]));
        let s = String::from_utf8(out.stdout).unwrap();
        let n: u64 = s.split(" total ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
        n
    };
    assert!(total("3") > total("1"));
}

#[test]
fn batch_mode_matches_single_runs() {
    let dir = TempDir::new().unwrap();
    let batch = dir.path().join("batch");
    run_ok(wotnet(dir.path()).args(["sim", "--desk", "--nodes", "12", "--duration", "900", "--seeds", "1..3", "--out"]).arg(&batch));
    for seed in 1..=3 {
        let single = sim_csv(dir.path(), &["--seed", &seed.to_string()]);
        let file = fs::read_to_string(batch.join(format!("sim_ecdsa-p256_deg3_n1_seed{seed}.csv"))).unwrap();
        assert_eq!(single, file, "seed {seed}");
    }
}

#[test]
fn scenario_files_and_bad_input() {
    let dir = TempDir::new().unwrap();
    let scenario = dir.path().join("s.toml");
    fs::write(&scenario, "num_nodes = 6\nduration_s = 300\nwidth_m = 100.0\nheight_m = 100.0\n[trust]\nmaxdegree = 2\n").unwrap();
    let out = run_ok(wotnet(dir.path()).args(["sim", "--out", "-", "--scenario"]).arg(&scenario));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1 + 300 / 60 + 1);

    fs::write(&scenario, "num_nodez = 6\n").unwrap();
    let out = wotnet(dir.path()).args(["sim", "--scenario"]).arg(&scenario).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = wotnet(dir.path()).args(["sim", "--nodes", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = wotnet(dir.path()).args(["sim", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = wotnet(dir.path()).args(["sim", "--algo", "dsa"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = wotnet(dir.path()).args(["sim", "--calibration", "missing.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(wotnet(dir.path()).arg("--help").output().unwrap().status.success());
}

#[test]
fn calibration_file_drives_size_model_runs() {
    let dir = TempDir::new().unwrap();
    let cal = dir.path().join("cal.toml");
    run_ok(wotnet(dir.path()).args(["calibrate", "--out"]).arg(&cal));
    let with_file = sim_csv(dir.path(), &["--calibration", cal.to_str().unwrap()]);
    assert_eq!(with_file, sim_csv(dir.path(), &[]));
}

fn demo(dir: &Path, answers: &str, home: &str, peer: &str) -> Output {
    let mut child = wotnet(dir)
        .args(["demo", "--loopback", "--home", home, "--peer-home", peer])
        .env("WOTNET_PIN", "2468")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(answers.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn show(dir: &Path, repo: &str) -> String {
    String::from_utf8(run_ok(wotnet(dir).args(["repo", "show", repo])).stdout).unwrap()
}

#[test]
fn loopback_demo_establishes_trust_and_sub_keys() {
    let dir = TempDir::new().unwrap();
    let out = demo(dir.path(), "y\ny\n", "a", "b");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for (me, peer) in [("a", "b"), ("b", "a")] {
        let text = show(dir.path(), &format!("{me}/repo"));
        // owner block comes first: fingerprint, key id, level
        assert!(text.lines().nth(3).unwrap().contains("Ultimate, depth 0"), "{text}");
        let peer_fp = show(dir.path(), &format!("{peer}/repo")).lines().nth(1).unwrap().to_string();
        let peer_block = text.split(&peer_fp).nth(1).expect("peer listed");
        assert!(peer_block.contains("Trusted, depth 1"), "{text}");
        assert!(peer_block.contains("sub-key  demo-app"), "{text}");
        assert!(peer_block.contains("(valid)"));
    }
    let again = demo(dir.path(), "y\ny\n", "a", "b");
    assert!(again.status.success());
    let stdout = String::from_utf8(again.stdout).unwrap();
    assert_eq!(stdout.matches("sync merged 0 new items").count(), 2, "{stdout}");
}

#[test]
fn rejected_comparison_stores_nothing() {
    let dir = TempDir::new().unwrap();
    let out = demo(dir.path(), "n\ny\n", "a", "b");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rejected"));
    assert!(!dir.path().join("a/repo").exists());
    assert!(!dir.path().join("b/repo").exists());
}

#[test]
fn verify_pinpoints_a_tampered_file() {
    let dir = TempDir::new().unwrap();
    assert!(demo(dir.path(), "y\ny\n", "a", "b").status.success());
    let clean = run_ok(wotnet(dir.path()).args(["repo", "verify", "a/repo"]));
    let report = String::from_utf8(clean.stdout).unwrap();
    assert!(report.lines().count() >= 5 && !report.contains("FAIL"), "{report}");

    let repo = dir.path().join("a/repo");
    let cert = walk(&repo).into_iter().find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("cert_")).unwrap();
    let mut bytes = fs::read(&cert).unwrap();
    bytes[10] = if bytes[10] == b'A' { b'B' } else { b'A' };
    fs::write(&cert, bytes).unwrap();

    let out = wotnet(dir.path()).args(["repo", "verify", "a/repo"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let report = String::from_utf8(out.stdout).unwrap();
    let failing: Vec<&str> = report.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(failing.len(), 1, "{report}");
    let name = cert.file_name().unwrap().to_str().unwrap();
    assert!(failing[0].contains(name));
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn two_processes_over_tcp() {
    let dir = TempDir::new().unwrap();
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let addr = format!("127.0.0.1:{port}");
    let spawn = |args: &[&str]| {
        let mut child = wotnet(dir.path())
            .arg("demo")
            .args(args)
            .env("WOTNET_PIN", "1357")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(b"y\n").unwrap();
        child
    };
    let listener = spawn(&["--listen", &addr, "--home", "left"]);
    let mut connector = None;
    for _ in 0..100 {
        thread::sleep(Duration::from_millis(100));
        let c = spawn(&["--connect", &addr, "--home", "right"]).wait_with_output().unwrap();
        if c.status.success() {
            connector = Some(c);
            break;
        }
        let _ = fs::remove_dir_all(dir.path().join("right/repo"));
    }
    let connector = connector.expect("connector never succeeded");
    let listened = listener.wait_with_output().unwrap();
    assert!(listened.status.success(), "{}", String::from_utf8_lossy(&listened.stderr));
    for out in [&connector, &listened] {
        let s = String::from_utf8_lossy(&out.stdout);
        assert!(s.contains("peer is Trusted with 1 usable sub-key(s)"), "{s}");
    }
}
