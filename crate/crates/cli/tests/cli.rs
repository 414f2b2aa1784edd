use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_p2pscope"));
    cmd.env_remove("P2PSCOPE_CONFIG").env_remove("P2PSCOPE_STORE");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn p2pscope")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A port nothing listens on.
fn closed_port() -> u16 {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().port()
}

const SIM: &str = r#"
days = 2
probe_hours = [1, 13]
probe_kinds = ["tcp", "protocol"]

[sim]
seed = 11
network = "bitcoin"
peer_count = 120
reachable_fraction = 0.4
start_date = "2024-03-01"

[sim.churn]
leave_probability = 0.05
"#;

fn write_sim(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("sim.toml");
    fs::write(&p, format!("{extra}\n{SIM}")).unwrap();
    p
}

#[test]
fn unreachable_bootstrap_exits_with_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let networks = dir.path().join("networks.toml");
    fs::write(
        &networks,
        format!(
            "[[network]]\nname = \"lab\"\nfamily = \"bitcoin\"\nmagic = \"d9b4bef9\"\ndefault_ports = [8333]\nbootstrap = [\"127.0.0.1:{}\"]\n",
            closed_port()
        ),
    )
    .unwrap();
    let store = dir.path().join("store");
    let out = run(&[
        "--config",
        path(&networks),
        "--store",
        path(&store),
        "crawl",
        "lab",
        "--timeout-secs",
        "1",
        "--max-attempts",
        "1",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.lines().any(|l| l.starts_with("error AllBootstrapUnreachable")), "{stderr}");
    // nothing was sealed
    assert!(!store.join("lab").exists() || fs::read_dir(store.join("lab")).unwrap().next().is_none());
}

#[test]
fn unknown_network_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--store", path(&dir.path().join("s")), "fold", "no-such-net", "2024-01-01"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error UnknownNetwork"));
}

#[test]
fn simulate_is_deterministic_and_matches_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let sim = write_sim(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let summary = stdout_json(&run(&["simulate", path(&sim), "--out", path(out)]));
        assert_eq!(summary["matches_ground_truth"], Value::Bool(true));
        assert_eq!(summary["days"], 2);
    }
    for rel in ["report.json", "ground_truth.json", "series/active.csv", "series/retention.csv", "plots/ad-ratio.svg"] {
        let (x, y) = (fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap());
        assert!(!x.is_empty(), "{rel} empty");
        assert!(x == y, "{rel} differs between runs");
    }
}

#[test]
fn bundled_simulation_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/simulate.toml");
    let summary = stdout_json(&run(&["--sequential", "simulate", path(&cfg), "--out", path(dir.path())]));
    assert_eq!(summary["matches_ground_truth"], Value::Bool(true));
    assert_eq!(summary["days"], 3);
}

#[test]
fn single_as_day_has_full_concentration() {
    let dir = tempfile::tempdir().unwrap();
    let enrichment = dir.path().join("one-as.csv");
    fs::write(&enrichment, "prefix,country,continent,asn,category\n10.0.0.0/8,DE,eu,AS64500,hosting\n").unwrap();
    let sim = write_sim(dir.path(), &format!("enrichment = {:?}", path(&enrichment)));
    let out = dir.path().join("sim");
    stdout_json(&run(&["simulate", path(&sim), "--out", path(&out)]));
    let analysis = dir.path().join("analysis");
    let store = out.join("store");
    let args = [
        "--store",
        path(&store),
        "analyze",
        "hhi",
        "2024-03-01..2024-03-02",
        "--network",
        "bitcoin",
        "--enrichment",
        path(&enrichment),
        "--out",
        path(&analysis),
    ];
    let res = run(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let json: Value = serde_json::from_slice(&fs::read(analysis.join("hhi.json")).unwrap()).unwrap();
    let days = json["days"].as_array().unwrap();
    assert_eq!(days.len(), 2);
    for d in days {
        assert_eq!(d["hhi"].as_f64(), Some(1.0), "{d}");
    }
    let csv = fs::read_to_string(analysis.join("hhi.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("date,hhi"));
    assert!(fs::read_to_string(analysis.join("hhi.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn step_commands_build_a_day_from_a_simulated_network() {
    let dir = tempfile::tempdir().unwrap();
    // `--simnet` takes a bare network description
    let sim = dir.path().join("net.toml");
    fs::write(&sim, "seed = 11\nnetwork = \"bitcoin\"\npeer_count = 120\nreachable_fraction = 0.4\nstart_date = \"2024-03-01\"\n")
        .unwrap();
    let store = dir.path().join("store");
    let s = path(&store);
    let crawl = stdout_json(&run(&["--store", s, "crawl", "bitcoin", "--simnet", path(&sim)]));
    assert_eq!(crawl["date"], "2024-03-01");
    assert!(crawl["responded"].as_u64().unwrap() > 0);
    stdout_json(&run(&["--store", s, "probe", "bitcoin", "2024-03-01", "--simnet", path(&sim), "--hour", "3"]));
    let fold = run(&["--store", s, "fold", "bitcoin", "2024-03-01"]);
    assert!(fold.status.success(), "{}", String::from_utf8_lossy(&fold.stderr));
    // sealed artifacts refuse to be overwritten
    let again = run(&["--store", s, "crawl", "bitcoin", "--simnet", path(&sim)]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).starts_with("error DuplicateArtifact"));
}

#[test]
fn scan_classify_reads_a_capture_file() {
    let dir = tempfile::tempdir().unwrap();
    let capture = dir.path().join("scan.txt");
    // an HTTP 400 reply, a silent host and garbage
    let http = hex(b"HTTP/1.1 400 Bad Request\r\n\r\n");
    fs::write(&capture, format!("# success=3\n192.0.2.7 8333 {http}\n192.0.2.8 8333 -\n192.0.2.9 8333 deadbeef\n")).unwrap();
    let out = run(&["--store", path(&dir.path().join("s")), "scan-classify", "bitcoin", path(&capture), "--format", "json"]);
    let json = stdout_json(&out);
    assert_eq!(json["network"], "bitcoin");
    assert_eq!(json["success"], 3);
    assert_eq!(json["response"], 2);
    assert_eq!(json["http_400"], 1);
    assert_eq!(json["version_all"], 0);
    let text = run(&["--store", path(&dir.path().join("s")), "scan-classify", "bitcoin", path(&capture)]);
    assert!(text.status.success() && !text.stdout.is_empty());
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
