use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use approx::assert_relative_eq;
use dpchart_cli::sweep::{aggregate, run_grid, summarize, to_csv, SweepRow};
use dpchart_cli::{Overrides, RunConfig};
use dpchart_core::fixtures::{adult, adult_charts, adult_like};
use proptest::prelude::*;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpchart"))
}

fn bundled_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/adult_like.config.json")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The bundled config with a smaller input and the given overrides merged in.
fn small_config(dir: &Path, rows: usize, extra: Value) -> PathBuf {
    let csv = dir.join("small.csv");
    std::fs::write(&csv, adult_like(rows, 99).to_csv()).unwrap();
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(bundled_config()).unwrap()).unwrap();
    cfg["input"] = json!(csv);
    cfg.as_object_mut().unwrap().remove("schema");
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join(format!("config-{}.json", rand_suffix(&cfg)));
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

fn rand_suffix(v: &Value) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    v.to_string().hash(&mut h);
    h.finish()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn bundled_config_replays_the_fixture_patterns() {
    let p = RunConfig::load(&bundled_config()).unwrap().prepare().unwrap();
    assert_eq!(p.data, adult());
    let (charts, selections): (Vec<_>, Vec<_>) = adult_charts().into_iter().unzip();
    assert_eq!(p.charts, charts);
    let got: Vec<_> = p.catalog.patterns().iter().map(|c| (c.selection.clone(), c.weight)).collect();
    assert_eq!(got, selections.into_iter().map(|s| (s, 4.0)).collect::<Vec<_>>());
    assert_eq!((p.epsilons.clone(), p.seeds.clone(), p.k), (vec![2.0], vec![7], 2));
}

#[test]
fn synth_is_deterministic_under_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 300, json!({}));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(bin().args(["synth", "--config"]).arg(&cfg).args(["--seed", "7", "--out"]).arg(out));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let fa = files(&a);
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["marginals.json", "metrics.json", "network.json", "scheme.json", "synthetic.csv"]);
    assert_eq!(fa, files(&b));
    let metrics: Value = serde_json::from_slice(&fa[1].1).unwrap();
    assert_eq!(metrics["patterns"].as_array().unwrap().len(), 3);
}

#[test]
fn zero_weights_match_the_baseline_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let weighted = small_config(tmp.path(), 300, json!({}));
    let mut cfg: Value = serde_json::from_slice(&std::fs::read(&weighted).unwrap()).unwrap();
    for p in cfg["patterns"].as_array_mut().unwrap() {
        p["weight"] = json!(0.0);
    }
    let zero = tmp.path().join("zero.json");
    std::fs::write(&zero, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let (a, b) = (tmp.path().join("zero"), tmp.path().join("baseline"));
    assert!(run(bin().args(["synth", "--config"]).arg(&zero).arg("--out").arg(&a)).status.success());
    let o = run(bin().args(["synth", "--baseline", "--config"]).arg(&weighted).arg("--out").arg(&b));
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["synthetic.csv", "network.json", "marginals.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn oracle_outputs_are_marked_non_private() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 200, json!({}));
    let out = tmp.path().join("o");
    let o = run(bin().args(["synth", "--oracle", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success());
    assert!(stderr(&o).contains("NOT differentially private"));
    let scheme: Value = serde_json::from_slice(&std::fs::read(out.join("scheme.json")).unwrap()).unwrap();
    assert_eq!(scheme["private"], false);
}

#[test]
fn config_errors_exit_1_and_runtime_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 100, json!({ "epsilon": null }));
    let o = run(bin().args(["synth", "--config"]).arg(&cfg).arg("--out").arg(tmp.path().join("x")));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("\"epsilon\""), "{}", stderr(&o));

    let o = run(bin().args(["synth", "--epsilon", "1", "--out"]).arg(tmp.path().join("x")));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("\"input\""));

    for bad in [
        json!({ "epsilon": -1.0 }),
        json!({ "repeats": 0 }),
        json!({ "bogus": 1 }),
        json!({ "patterns": [{ "chart": "nope", "selection": { "kind": "bars", "bars": ["x"] } }] }),
    ] {
        let cfg = small_config(tmp.path(), 100, bad.clone());
        let o = run(bin().args(["sweep", "--config"]).arg(&cfg));
        assert_eq!(o.status.code(), Some(1), "{bad}: {}", stderr(&o));
    }
    assert_eq!(run(bin().args(["synth", "--no-such-flag"])).status.code(), Some(1));

    // The output directory cannot be created under a regular file.
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = small_config(tmp.path(), 100, json!({}));
    let o = run(bin().args(["synth", "--config"]).arg(&cfg).arg("--out").arg(blocker.join("out")));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sweep_counts_runs_and_conditions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 150, json!({ "n_out": 150 }));
    let out = tmp.path().join("one.csv");
    let o = run(bin().args(["sweep", "--repeats", "25", "--jobs", "4", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rows.headers().unwrap(), vec!["epsilon", "weight", "metric", "mean", "sd", "ci95", "n_runs"]);
    let records: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert!(!records.is_empty());
    let metrics: std::collections::BTreeSet<&str> = records.iter().map(|r| &r[2]).collect();
    assert_eq!(metrics.len(), records.len(), "one aggregated row per metric");
    assert!(records.iter().all(|r| &r[6] == "25" && &r[0] == "2"));
    assert!(metrics.contains("P0.ndcg"));

    let grid =
        small_config(tmp.path(), 120, json!({ "n_out": 120, "epsilon": [0.5, 2.0, 5.0], "weights": [0.0, 4.0] }));
    let o = run(bin().args(["sweep", "--repeats", "2", "--config"]).arg(&grid));
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rows = csv::Reader::from_reader(o.stdout.as_slice());
    let conditions: std::collections::BTreeSet<(String, String)> =
        rows.records().map(|r| r.unwrap()).map(|r| (r[0].to_string(), r[1].to_string())).collect();
    let want: std::collections::BTreeSet<(String, String)> =
        ["0.5", "2", "5"].iter().flat_map(|e| ["0", "4"].map(|w| (e.to_string(), w.to_string()))).collect();
    assert_eq!(conditions, want);
}

#[test]
fn sweep_aggregates_ignore_seed_order_and_job_count() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_config(tmp.path(), 120, json!({ "n_out": 120, "seeds": [4, 1, 9, 2], "weights": [0.0, 3.0] }));
    let b = small_config(tmp.path(), 120, json!({ "n_out": 120, "seeds": [9, 2, 4, 1], "weights": [0.0, 3.0] }));
    let pa = RunConfig::load(&a).unwrap().prepare().unwrap();
    let pb = RunConfig::load(&b).unwrap().prepare().unwrap();
    let ra = run_grid(&pa, 1).unwrap();
    let mut rb = run_grid(&pb, 4).unwrap();
    assert_eq!(to_csv(&aggregate(&pa, &ra)), to_csv(&aggregate(&pb, &rb)));
    rb.reverse();
    assert_eq!(aggregate(&pa, &ra), aggregate(&pb, &rb));
}

#[test]
fn overrides_take_precedence() {
    let mut c = RunConfig::load(&bundled_config()).unwrap();
    c.apply(&Overrides {
        epsilon: Some(vec![0.5, 1.0]),
        k: Some(3),
        repeats: Some(4),
        seed: Some(10),
        ..Default::default()
    });
    let p = c.prepare().unwrap();
    assert_eq!(p.epsilons, vec![0.5, 1.0]);
    assert_eq!(p.k, 3);
    assert_eq!(p.seeds, vec![10, 11, 12, 13]);
}

#[test]
fn ci95_uses_the_t_distribution() {
    // t(0.975, 24) from standard tables.
    let t24 = 2.063_898_561_628_021;
    let values: Vec<f64> = (0..25).map(|i| i as f64).collect();
    let (mean, sd, ci) = summarize(&values);
    assert_relative_eq!(mean, 12.0, epsilon = 1e-12);
    let sd_direct = ((0..25).map(|i| (i as f64 - 12.0).powi(2)).sum::<f64>() / 24.0).sqrt();
    assert_relative_eq!(sd.unwrap(), sd_direct, epsilon = 1e-12);
    assert_relative_eq!(ci.unwrap(), t24 * sd_direct / 5.0, epsilon = 1e-9);
    // Two runs: t(0.975, 1) = 12.706.
    let (_, sd, ci) = summarize(&[1.0, 3.0]);
    assert_relative_eq!(ci.unwrap(), 12.706_204_736_174_7 * sd.unwrap() / 2f64.sqrt(), epsilon = 1e-6);
    assert_eq!(summarize(&[5.0]), (5.0, None, None));
    let rows = to_csv(&[SweepRow {
        epsilon: 1.0,
        weight: None,
        metric: "m".into(),
        mean: 5.0,
        sd: None,
        ci95: None,
        n_runs: 1,
    }]);
    assert_eq!(rows.lines().nth(1), Some("1,,m,5,,,1"));
}

proptest! {
    #[test]
    fn summaries_are_permutation_invariant(mut v in prop::collection::vec(-1e6f64..1e6, 1..40), seed in any::<u64>()) {
        let base = summarize(&v);
        let n = v.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            v.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled = summarize(&v);
        prop_assert_eq!(base.0.to_bits(), shuffled.0.to_bits());
        prop_assert_eq!(base.1.map(f64::to_bits), shuffled.1.map(f64::to_bits));
    }
}

fn http(addr: &str, request: &str) -> String {
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[cfg(unix)]
#[test]
fn serve_prints_its_address_and_persists_on_sigint() {
    let tmp = tempfile::tempdir().unwrap();
    let state = tmp.path().join("state");
    let mut child = bin()
        .args(["serve", "--port", "0", "--state-dir"])
        .arg(&state)
        .env("DPCHART_LISTEN", "127.0.0.1:8080")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").expect("address line").to_string();
    assert!(!addr.ends_with(":0") && !addr.ends_with(":8080"), "{addr}");
    let reply = http(&addr, "POST /sessions HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
    assert!(reply.starts_with("HTTP/1.1 201"), "{reply}");
    Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(state.join("s1/session.json").exists());
}

#[test]
fn serve_fails_on_an_unusable_state_dir_or_busy_port() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = run(bin().args(["serve", "--port", "0", "--state-dir"]).arg(blocker.join("state")));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let ro = tmp.path().join("ro");
        std::fs::create_dir(&ro).unwrap();
        std::fs::set_permissions(&ro, std::fs::Permissions::from_mode(0o555)).unwrap();
        // Permission bits do not bind root; only check when they take effect.
        if std::fs::write(ro.join("probe"), b"").is_err() {
            let o = run(bin().args(["serve", "--port", "0", "--state-dir"]).arg(&ro));
            assert_eq!(o.status.code(), Some(1));
        }
    }

    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let o = run(bin().args(["serve", "--port", &port]).env("DPCHART_LISTEN", "127.0.0.1:0"));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
