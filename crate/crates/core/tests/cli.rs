use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cqd(args: &[&str], tb: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cqd"));
    cmd.args(args).env_remove("CQD_TB_DIR");
    if let Some(tb) = tb {
        cmd.env("CQD_TB_DIR", tb);
    }
    cmd.output().expect("run cqd")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn keys(v: &Value) -> Vec<&str> {
    let mut k: Vec<&str> = v.as_object().expect("object").keys().map(String::as_str).collect();
    k.sort_unstable();
    k
}

#[test]
fn chain_verify_mutate_stats() {
    let dir = tempfile::tempdir().unwrap();
    let tb = dir.path();
    let tbs = tb.to_str().unwrap();

    let o = cqd(&["chain", "--targets", "KRvK", "--out", tbs, "--workers", "1"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tb.join("manifest.json").exists());

    for mode in ["decomposed", "full", "quiet-only"] {
        let o = cqd(&["verify", "KRvK", "--mode", mode], Some(tb));
        assert_eq!(o.status.code(), Some(0));
        let r = stdout_json(&o);
        assert_eq!(
            keys(&r),
            [
                "consistency_checks_performed",
                "estimated_speedup",
                "fractions",
                "mode",
                "position_counts",
                "signature",
                "violations",
                "wall_time"
            ]
        );
        assert_eq!(keys(&r["violations"]), ["capture_v", "quiet_v", "terminal_v", "total_v"]);
        assert_eq!(keys(&r["fractions"]), ["capt_pct", "quiet_pct", "term_pct"]);
        assert_eq!(keys(&r["position_counts"]), ["capture", "invalid", "quiet", "terminal"]);
        assert_eq!(r["signature"], "KRvK");
        assert_eq!(r["violations"]["total_v"], 0);
    }

    let mutated = tb.join("mutated.cqdt");
    let o = cqd(
        &["mutate", "KRvK", "--flips", "5", "--seed", "7", "--out", mutated.to_str().unwrap()],
        Some(tb),
    );
    assert_eq!(o.status.code(), Some(0));
    let mut totals = Vec::new();
    for mode in ["decomposed", "full"] {
        let o = cqd(
            &["verify", "KRvK", "--mode", mode, "--table", mutated.to_str().unwrap(), "--show", "0"],
            Some(tb),
        );
        assert_eq!(o.status.code(), Some(1));
        totals.push(stdout_json(&o)["violations"]["total_v"].as_u64().unwrap());
    }
    assert_eq!(totals[0], totals[1]);
    assert!(totals[0] >= 1);

    let a = cqd(&["stats", "--format", "json"], Some(tb));
    let b = cqd(&["stats", "--format", "json"], Some(tb));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let s = stdout_json(&a);
    assert_eq!(keys(&s), ["aggregates", "rows"]);
    let names: Vec<&str> = s["rows"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["KvK", "KRvK"]);

    let t = cqd(&["stats", "--format", "json", "--timings"], Some(tb));
    assert!(stdout_json(&t).get("timings").is_some());

    let csv = cqd(&["stats", "--format", "csv"], Some(tb));
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("endgame,valid_positions,term_pct,capt_pct,quiet_pct,decomposed_v,full_v\n"));

    let md = cqd(&["report", "--tb", tbs], None);
    let text = String::from_utf8(md.stdout).unwrap();
    assert!(text.contains("| KRvK |"));
    assert!(text.contains("## Capture share by piece count"));
}

#[test]
fn gen_and_alldraw() {
    let dir = tempfile::tempdir().unwrap();
    let tb = dir.path();
    let o = cqd(&["gen", "KvK"], Some(tb));
    assert_eq!(o.status.code(), Some(0));
    let stats = stdout_json(&o);
    assert_eq!(stats["draws_by_default"], stats["quiet_count"]);
    assert!(tb.join("KvK.cqdt").exists());

    let o = cqd(&["gen", "KQvK"], Some(tb));
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout_json(&o)["passes"].as_u64().unwrap() > 2);

    let o = cqd(&["gen", "KQvKR"], Some(tb));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("KRvK"));

    let ad = tb.join("ad.cqdt");
    let o = cqd(&["alldraw", "KvK", "--out", ad.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0));
    let o = cqd(&["verify", "KvK", "--table", ad.to_str().unwrap()], Some(tb));
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cqd(&["bogus"], None).status.code(), Some(2));
    assert_eq!(cqd(&["verify", "KQvK"], None).status.code(), Some(2), "no --tb and no env");
    assert_eq!(cqd(&["gen", "KXvK", "--tb", "/nonexistent"], None).status.code(), Some(2));
    assert_eq!(cqd(&["verify", "KQvK", "--tb", "/nonexistent"], None).status.code(), Some(2));
    assert_eq!(
        cqd(&["chain", "--targets", "KPvKP", "--out", "/nonexistent/x"], None).status.code(),
        Some(2)
    );
    assert_eq!(cqd(&["--help"], None).status.code(), Some(0));
}
