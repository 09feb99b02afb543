use std::process::Command;

use mcm_bench::{OutputFormat, PriceTable, RowStatus};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mcm-bench"))
}

const SMALL: [&str; 6] = ["--log2-paths", "7", "--steps", "3", "--replications", "2"];

#[test]
fn price_writes_the_requested_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"payoff": "max_call", "dim": 2, "method": "P2eq"}"#,
    )
    .unwrap();
    let out = dir.path().join("out.json");
    let status = bin()
        .args(["price", "--config"])
        .arg(&cfg)
        .args(SMALL)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let table = PriceTable::read(&out, OutputFormat::Json).unwrap();
    assert_eq!(table.len(), 1);
    let row = &table.rows[0];
    assert_eq!(
        (row.method.as_str(), row.payoff.as_str()),
        ("P2eq", "max_call")
    );
    assert_eq!((row.dim, row.steps, row.paths), (2, 3, 128));
}

#[test]
fn stdout_is_identical_across_thread_counts_except_runtime() {
    let run = |threads: &str| {
        let out = bin()
            .args(["price", "--dim", "3"])
            .args(SMALL)
            .env("MCM_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        PriceTable::from_csv_str(&String::from_utf8(out.stdout).unwrap()).unwrap()
    };
    assert_eq!(run("1").fingerprint(), run("3").fingerprint());
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| bin().args(args).output().unwrap().status.code();
    assert_eq!(
        code(&["price", "--payoff", "min_put", "--dim", "5"]),
        Some(1)
    );
    assert_eq!(code(&["price", "--steps", "0"]), Some(1));
    assert_eq!(code(&["price", "--method", "P7"]), Some(1));
    assert_eq!(
        code(&["price", "--config", "/nonexistent/run.json"]),
        Some(1)
    );
    assert_eq!(code(&["sweep", "--axes", "dim=1;dim=2"]), Some(1));
    assert_eq!(code(&["scaling", "--degrees", "0"]), Some(1));
    assert_eq!(code(&["--help"]), Some(0));
}

#[test]
fn sweep_records_failures_and_continues() {
    let out = bin()
        .args(["sweep", "--payoff", "min_put", "--axes", "dim=1,2"])
        .args(SMALL)
        .output()
        .unwrap();
    assert!(out.status.success());
    let t = PriceTable::from_csv_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let status: Vec<RowStatus> = t.rows.iter().map(|r| r.status).collect();
    assert_eq!(status, vec![RowStatus::Failed, RowStatus::Ok]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("failed"));
}

#[test]
fn scaling_prints_one_line_per_degree() {
    let out = bin()
        .args(["scaling", "--degrees", "1,2"])
        .args(SMALL)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "degree,runtime_ms,speedup,price");
    assert_eq!(lines.len(), 3);
    let price = |l: &str| l.rsplit(',').next().unwrap().to_string();
    assert_eq!(price(lines[1]), price(lines[2]));
}
