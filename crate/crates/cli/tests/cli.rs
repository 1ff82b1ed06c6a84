use std::path::{Path, PathBuf};
use std::process::Command;

use aoii_core::cycle::symmetric_closed_form;
use serde_json::Value;

fn aoii(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_aoii")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run_ok(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = aoii(&args);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn optimize_then_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for family in ["eat", "st", "ps"] {
        let opt = write_config(
            d,
            &format!("opt_{family}.json"),
            &format!(
                r#"{{"$schema":"aoii-run/1","source":{{"kind":"ternary"}},"channel":{{"mu":1.0}},"budget":0.3,"family":"{family}"}}"#
            ),
        );
        let out = d.join(format!("opt_{family}"));
        run_ok("optimize", &opt, &out, &[]);
        let an = write_config(
            d,
            &format!("an_{family}.json"),
            &format!(
                r#"{{"$schema":"aoii-run/1","source":{{"kind":"ternary"}},"channel":{{"mu":1.0}},"policy_file":"opt_{family}/optimize.json"}}"#
            ),
        );
        let aout = d.join(format!("an_{family}"));
        run_ok("analyze", &an, &aout, &[]);
        let o = read_json(&out.join("optimize.json"));
        let a = read_json(&aout.join("analyze.json"));
        assert_eq!(o["policy"], a["policy"]);
        for key in ["maoii", "rate"] {
            let (x, y) = (f(&o[key]), f(&a[key]));
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{family} {key}: {x} vs {y}");
        }
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(
        d,
        "sweep.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"symmetric","n":4,"sigma":1.0},"channel":{"mu":2.0},
            "sweep":{"axis":"tau","range":{"start":0,"stop":2,"step":0.5},"families":["st","eat","esat"],"simulate":true},
            "simulation":{"cycles":2000,"seed":9}}"#,
    );
    run_ok("sweep", &cfg, &d.join("a"), &["--jobs", "1"]);
    run_ok("sweep", &cfg, &d.join("b"), &["--jobs", "4"]);
    for name in ["sweep.json", "sweep.csv"] {
        let x = std::fs::read(d.join("a").join(name)).unwrap();
        let y = std::fs::read(d.join("b").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let sim = write_config(
        d,
        "sim.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"ternary"},"channel":{"mu":1.0},"policy":{"eat":[0.5,1.0,"inf"]},
            "simulation":{"cycles":5000,"seed":4,"trace":true}}"#,
    );
    run_ok("simulate", &sim, &d.join("s1"), &[]);
    run_ok("simulate", &sim, &d.join("s2"), &[]);
    for name in ["simulate.json", "simulate.csv", "trace.csv"] {
        assert_eq!(std::fs::read(d.join("s1").join(name)).unwrap(), std::fs::read(d.join("s2").join(name)).unwrap());
    }
}

#[test]
fn malformed_matrix_reports_path_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"matrix","rows":[[-1,1],[1,"oops"]]},"channel":{"mu":1},"policy":{"st":1}}"#,
    );
    let o = aoii(&["analyze", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("source.rows[1][1]"), "{err}");

    let cfg = write_config(
        dir.path(),
        "rows.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"matrix","rows":[[-1,1],[1,-2]]},"channel":{"mu":1},"policy":{"st":1}}"#,
    );
    let o = aoii(&["analyze", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn esat_on_ten_states_is_refused_by_the_grid_cap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "esat.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"symmetric","n":10,"sigma":1.0},"channel":{"mu":1},"budget":0.3,"family":"esat"}"#,
    );
    let o = aoii(&["optimize", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cap"));
}

#[test]
fn unreachable_budget_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "inf.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"ternary"},"channel":{"mu":1},"budget":1e-9,"family":"eat"}"#,
    );
    let o = aoii(&["optimize", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn ternary_st_meets_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "st.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"ternary"},"channel":{"mu":1},"budget":0.25,"family":"st"}"#,
    );
    run_ok("optimize", &cfg, dir.path(), &["--format", "json"]);
    let o = read_json(&dir.path().join("optimize.json"));
    assert!((f(&o["rate"]) - 0.25).abs() <= 1e-3, "{}", o["rate"]);
    assert!(!dir.path().join("optimize.csv").exists());
    assert!(dir.path().join("optimize_timing.json").exists());
}

#[test]
fn symmetric_st_analyze_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    for (n, sigma, mu, tau) in [(3, 1.0, 1.0, 0.7), (6, 2.5, 0.5, 2.0), (12, 0.4, 10.0, 0.1)] {
        let cfg = write_config(
            dir.path(),
            "sym.json",
            &format!(
                r#"{{"$schema":"aoii-run/1","source":{{"kind":"symmetric","n":{n},"sigma":{sigma}}},"channel":{{"mu":{mu}}},"policy":{{"st":{tau}}}}}"#
            ),
        );
        run_ok("analyze", &cfg, dir.path(), &[]);
        let a = read_json(&dir.path().join("analyze.json"));
        let cf = symmetric_closed_form(n, sigma, mu, tau).unwrap();
        assert!((f(&a["maoii"]) - cf.maoii).abs() <= 1e-9 * cf.maoii, "n={n}: {} vs {}", a["maoii"], cf.maoii);
        assert!((f(&a["rate"]) - cf.rate).abs() <= 1e-9 * cf.rate, "n={n}: {} vs {}", a["rate"], cf.rate);
    }
}

#[test]
fn symmetric_tau_sweep_is_nondecreasing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"symmetric","n":20,"sigma":1.0},"channel":{"mu":1},
            "sweep":{"axis":"tau","range":{"start":0,"stop":5,"step":0.25}}}"#,
    );
    run_ok("sweep", &cfg, dir.path(), &["--emit-plot-script"]);
    let mut rdr = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 21);
    let m: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    for w in m.windows(2) {
        assert!(w[1] >= w[0] - 1e-12, "{w:?}");
    }
    assert!(dir.path().join("sweep.gp").exists());
    assert!(dir.path().join("sweep_timing.csv").exists());
}

#[test]
fn binary_eat_matches_esat() {
    let dir = tempfile::tempdir().unwrap();
    let mut vals = Vec::new();
    for family in ["eat", "esat"] {
        let cfg = write_config(
            dir.path(),
            "bin.json",
            &format!(
                r#"{{"$schema":"aoii-run/1","source":{{"kind":"binary","sigma1":1.0,"sigma2":3.0}},"channel":{{"mu":2}},"budget":0.4,"family":"{family}"}}"#
            ),
        );
        let out = dir.path().join(family);
        run_ok("optimize", &cfg, &out, &[]);
        vals.push(read_json(&out.join("optimize.json")));
    }
    let (e, s) = (&vals[0], &vals[1]);
    assert!((f(&e["maoii"]) - f(&s["maoii"])).abs() <= 1e-3, "{} vs {}", e["maoii"], s["maoii"]);
    // ESAT thresholds sit on a grid, so its rate may undershoot the budget.
    for v in &vals {
        assert!(f(&v["rate"]) <= 0.4 + 1e-3, "{}", v["rate"]);
    }

    let mut same = Vec::new();
    for pol in [r#"{"eat":[0.8,0.25]}"#, r#"{"esat":[[0,0.8],[0.25,0]]}"#] {
        let cfg = write_config(
            dir.path(),
            "bin_an.json",
            &format!(
                r#"{{"$schema":"aoii-run/1","source":{{"kind":"binary","sigma1":1.0,"sigma2":3.0}},"channel":{{"mu":2}},"policy":{pol}}}"#
            ),
        );
        run_ok("analyze", &cfg, dir.path(), &[]);
        same.push(read_json(&dir.path().join("analyze.json")));
    }
    for key in ["maoii", "rate"] {
        let (x, y) = (f(&same[0][key]), f(&same[1][key]));
        assert!((x - y).abs() <= 1e-12 * x, "{key}: {x} vs {y}");
    }
}

#[test]
fn simulate_requires_explicit_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "nopol.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"ternary"},"channel":{"mu":1},"budget":0.3,"family":"st"}"#,
    );
    let o = aoii(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("policy"));
}

#[test]
fn simulation_agrees_with_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sim.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"ternary"},"channel":{"mu":1},"policy":{"esat":[[0,0.5,1.5],[0.2,0,2.0],[1.0,0.3,0]]},
            "simulation":{"cycles":200000,"seed":17}}"#,
    );
    run_ok("simulate", &cfg, dir.path(), &["--seed", "23"]);
    let s = read_json(&dir.path().join("simulate.json"));
    assert_eq!(s["seed"], 23);
    let r = &s["result"];
    let a = &s["analytic"];
    assert!((f(&r["maoii_hat"]) - f(&a["maoii"])).abs() <= 4.0 * f(&r["stderr_maoii"]));
    assert!((f(&r["rate_hat"]) - f(&a["rate"])).abs() <= 4.0 * f(&r["stderr_rate"]));
}

#[test]
fn sweep_over_state_count_and_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "n.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"spread","n":3,"sigma_min":0.5,"sigma_max":2.0,"p_min":0.5,"p_max":1.5},
            "channel":{"mu":1},"budget":0.3,"sweep":{"axis":"n","values":[2,3,4],"families":["st","eat"]}}"#,
    );
    run_ok("sweep", &cfg, &dir.path().join("n"), &[]);
    let j = read_json(&dir.path().join("n").join("sweep.json"));
    let rows = j["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert_eq!(r["status"], "ok", "{r}");
        assert!((f(&r["rate"]) - 0.3).abs() <= 1e-3, "{r}");
    }

    let cfg = write_config(
        dir.path(),
        "b.json",
        r#"{"$schema":"aoii-run/1","source":{"kind":"ternary"},"channel":{"mu":1},
            "sweep":{"axis":"budget","values":[1e-9,0.3],"families":["st"]}}"#,
    );
    run_ok("sweep", &cfg, &dir.path().join("b"), &[]);
    let j = read_json(&dir.path().join("b").join("sweep.json"));
    let rows = j["rows"].as_array().unwrap();
    assert!(rows[0]["status"].as_str().unwrap().starts_with("error"));
    assert_eq!(rows[1]["status"], "ok");
}
