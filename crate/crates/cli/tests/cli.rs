use std::path::Path;
use std::process::{Command, Output};

fn esmclear(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esmclear"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn generate(dir: &Path, nodes: &str, seed: &str) {
    let out = esmclear(
        &[
            "gen",
            "--template",
            "three-region",
            "--nodes",
            nodes,
            "--prosumers",
            "5",
            "--seed",
            seed,
            "--out",
            "case.json",
        ],
        dir,
    );
    ok(&out);
}

#[test]
fn validate_generated_case() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "1", "0");
    ok(&esmclear(&["validate", "--case", "case.json"], dir.path()));
}

#[test]
fn same_seed_same_file() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "6", "9");
    let first = std::fs::read(dir.path().join("case.json")).unwrap();
    generate(dir.path(), "6", "9");
    assert_eq!(first, std::fs::read(dir.path().join("case.json")).unwrap());
}

#[test]
fn clear_writes_artifacts_within_band() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "6", "1");
    ok(&esmclear(
        &["clear", "--case", "case.json", "--out", "out"],
        dir.path(),
    ));
    let v = rows(&dir.path().join("out/voltages.csv"));
    assert_eq!(v[0], ["node", "v_pu_magnitude"]);
    for r in &v[1..] {
        let m: f64 = r[1].parse().unwrap();
        assert!((0.93 - 1e-8..=1.07 + 1e-8).contains(&m), "{r:?}");
    }
    let p = rows(&dir.path().join("out/prices.csv"));
    assert_eq!(p[0], ["node", "w0", "w", "X", "P"]);
    assert_eq!(p.len(), 7);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/result.json")).unwrap())
            .unwrap();
    assert!(json["timings"].is_object());
    assert_eq!(json["markets"].as_array().unwrap().len(), 6);
}

#[test]
fn clear_is_deterministic_apart_from_timings() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "5", "4");
    let mut results = Vec::new();
    for out in ["a", "b"] {
        ok(&esmclear(
            &[
                "clear",
                "--case",
                "case.json",
                "--out",
                out,
                "--workers",
                "1",
            ],
            dir.path(),
        ));
        let mut json: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(out).join("result.json")).unwrap(),
        )
        .unwrap();
        json.as_object_mut().unwrap().remove("timings");
        results.push(json.to_string());
    }
    assert_eq!(results[0], results[1]);
}

#[test]
fn compare_orders_costs() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "6", "2");
    ok(&esmclear(
        &[
            "compare",
            "--case",
            "case.json",
            "--modes",
            "ns,ls,gs",
            "--out",
            "cmp",
        ],
        dir.path(),
    ));
    let c = rows(&dir.path().join("cmp/costs.csv"));
    assert_eq!(c[0], ["mode", "total_cost", "average_cost", "load_kwh"]);
    let modes: Vec<&str> = c[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(modes, ["ns", "ls", "gs"]);
    let avg: Vec<f64> = c[1..].iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(
        avg[0] >= avg[1] - 1e-9 && avg[1] >= avg[2] - 1e-9,
        "{avg:?}"
    );
}

#[test]
fn bestresp_table() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "3", "5");
    ok(&esmclear(
        &[
            "bestresp",
            "--case",
            "case.json",
            "--lesm",
            "2",
            "--out",
            "br.csv",
        ],
        dir.path(),
    ));
    let t = rows(&dir.path().join("br.csv"));
    assert_eq!(t[0], ["w0", "X", "P"]);
    let x: Vec<f64> = t[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(x.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn bench_reports_three_phases() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "3", "5");
    let out = esmclear(
        &["bench", "--case", "case.json", "--repeat", "1"],
        dir.path(),
    );
    ok(&out);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for k in ["best_response_ms", "solve_ms", "verification_ms"] {
        assert!(json[k].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(esmclear(&["validate"], dir.path()).status.code(), Some(2));
    assert_eq!(esmclear(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(
        esmclear(&["validate", "--case", "missing.json"], dir.path())
            .status
            .code(),
        Some(1)
    );
    std::fs::write(dir.path().join("bad.json"), "{\"format_version\": 7}").unwrap();
    let out = esmclear(&["validate", "--case", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format_version"));
    generate(dir.path(), "2", "0");
    let out = esmclear(
        &[
            "bestresp",
            "--case",
            "case.json",
            "--lesm",
            "99",
            "--out",
            "x.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}
