//! End-to-end runs of the `celldense` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use celldense_cli::RunConfig;
use tempfile::TempDir;

const SMALL: &str = r#"
[scenario]
width = 30
height = 30

[[scenario.layers]]
tower_count = 5
sectors = 3
beamwidth = 2.0943951023931953
range = 15.0
azimuth_offset = 0.6283185307179586
min_spacing = 12.0

[[scenario.layers]]
tower_count = 8
sectors = 3
beamwidth = 2.0943951023931953
range = 6.0
azimuth_offset = 0.0
min_spacing = 7.0

[scenario.gtp]
clusters = 2
cluster_side = 5
cluster_intensity = 20
clutter_fraction = 0.05
clutter_intensity = 3
"#;

fn celldense(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_celldense"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = celldense(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    celldense(dir, args).status.code().expect("exited normally")
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, format!("{SMALL}\n{extra}")).unwrap();
    path
}

fn generate_small(tmp: &TempDir, extra: &str) -> PathBuf {
    let cfg = small_config(tmp.path(), extra);
    ok(tmp.path(), &["generate", "--config", cfg.to_str().unwrap(), "--out", "dump"]);
    tmp.path().join("dump")
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn csv_values(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn default_generate_places_115_towers_in_a_fresh_directory() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(tmp.path(), &["generate", "--out", "a/b/c"]);
    assert!(stdout.contains("115 towers"), "{stdout}");
    let towers = fs::read_to_string(tmp.path().join("a/b/c/towers.csv")).unwrap();
    assert_eq!(towers.lines().count(), 1 + 115);
    let echo = RunConfig::load(&tmp.path().join("a/b/c/config.toml")).unwrap();
    assert_eq!(echo, RunConfig::default());
}

#[test]
fn same_seed_gives_identical_dumps() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    for out in ["x", "y"] {
        ok(tmp.path(), &["generate", "--config", cfg, "--seed", "5", "--out", out]);
    }
    ok(tmp.path(), &["generate", "--config", cfg, "--seed", "6", "--out", "z"]);
    let (x, y, z) = (snapshot(&tmp.path().join("x")), snapshot(&tmp.path().join("y")), snapshot(&tmp.path().join("z")));
    assert_eq!(x, y);
    assert_ne!(x["gtp.csv"], z["gtp.csv"]);
}

#[test]
fn toy_prints_the_worked_example() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(tmp.path(), &["toy"]);
    assert!(stdout.contains("c = [40, 70], C = 110"), "{stdout}");
    assert!(stdout.contains("SB     u = [32, 38, 40]"), "{stdout}");
    assert!(stdout.contains("DF     u = [30.38462, 38.46154, 41.15385]"), "{stdout}");
    assert!(!tmp.path().join("out").exists(), "toy writes nothing without --out");
}

#[test]
fn toy_fixture_round_trips_through_estimate() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["toy", "--out", "toy"]);
    ok(tmp.path(), &["estimate", "--input", "toy", "--out", "est"]);
    let est = tmp.path().join("est");
    assert_eq!(csv_values(&est.join("estimate_sb.csv")), vec![32.0, 38.0, 40.0]);
    let df = csv_values(&est.join("estimate_df.csv"));
    for (got, want) in df.iter().zip([395.0 / 13.0, 500.0 / 13.0, 535.0 / 13.0]) {
        assert!((got - want).abs() < 1e-9, "{df:?}");
    }
    let report = json(&est.join("run_report.json"));
    assert_eq!(report["cells"], 2);
    assert_eq!(report["tiles"], 3);
}

#[test]
fn estimate_and_evaluate_on_a_small_scenario() {
    let tmp = TempDir::new().unwrap();
    let dump = generate_small(&tmp, "");
    let before = snapshot(&dump);
    ok(tmp.path(), &["estimate", "--input", "dump", "--out", "res"]);
    assert_eq!(snapshot(&dump), before, "estimate must not touch its inputs");

    let res = tmp.path().join("res");
    let gtp_total: f64 = csv_values(&dump.join("gtp.csv")).iter().sum();
    for name in ["sb", "em", "df"] {
        let total: f64 = csv_values(&res.join(format!("estimate_{name}.csv"))).iter().sum();
        assert!((total - gtp_total).abs() < 1e-6 * gtp_total, "{name}: {total} vs {gtp_total}");
    }
    let runs = json(&res.join("run_report.json"));
    assert_eq!(runs["runs"].as_array().unwrap().len(), 3);

    for f in ["config.toml", "gtp.csv"] {
        fs::copy(dump.join(f), res.join(f)).unwrap();
    }
    let stdout = ok(tmp.path(), &["evaluate", "--input", "res", "--out", "res"]);
    assert!(stdout.contains("flat"), "{stdout}");
    let report = json(&res.join("kwd_report.json"));
    let rows = report["rows"].as_array().unwrap();
    let kwd = |name: &str| rows.iter().find(|r| r["name"] == name).unwrap()["kwd"].as_f64().unwrap();
    assert_eq!(kwd("gtp"), 0.0);
    assert!(kwd("df") < kwd("flat") && kwd("em") < kwd("flat"));
    for name in ["gtp", "sb", "em", "df"] {
        let img = fs::read(res.join(format!("heatmap_{name}.pgm"))).unwrap();
        assert!(img.starts_with(b"P5\n30 30\n255\n"));
        assert_eq!(img.len(), 13 + 900);
        assert!(img.contains(&255));
    }
}

#[test]
fn evaluate_with_only_ground_truth() {
    let tmp = TempDir::new().unwrap();
    let dump = generate_small(&tmp, "[evaluation]\ninclude_flat = false\n");
    ok(tmp.path(), &["evaluate", "--input", "dump", "--out", "dump"]);
    let report = json(&dump.join("kwd_report.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["name"], "gtp");
    assert_eq!(rows[0]["kwd"].as_f64(), Some(0.0));
}

#[test]
fn df_operator_is_cached_across_runs() {
    let tmp = TempDir::new().unwrap();
    generate_small(&tmp, "[estimators]\nlist = [\"df\"]\ndf_cache = \"cache\"\n");
    let hit = |out: &str| {
        ok(tmp.path(), &["estimate", "--input", "dump", "--out", out]);
        json(&tmp.path().join(out).join("run_report.json"))["runs"][0]["df_cache_hit"].as_bool()
    };
    assert_eq!(hit("first"), Some(false));
    assert_eq!(hit("second"), Some(true));
    assert_eq!(
        fs::read(tmp.path().join("first/estimate_df.csv")).unwrap(),
        fs::read(tmp.path().join("second/estimate_df.csv")).unwrap()
    );
}

#[test]
fn bench_writes_the_full_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let stdout = ok(tmp.path(), &["bench", "--config", cfg.to_str().unwrap(), "--out", "bench"]);
    assert!(stdout.contains("Voronoi"), "{stdout}");
    let dir = tmp.path().join("bench");
    for f in ["towers.csv", "gtp.csv", "counts.csv", "run_report.json", "kwd_report.json", "kwd_table.txt"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    assert!(dir.join("heatmap_gtp.pgm").exists());
}

#[test]
fn printed_defaults_parse_back() {
    let tmp = TempDir::new().unwrap();
    let text = ok(tmp.path(), &["--print-defaults"]);
    assert_eq!(RunConfig::parse(&text).unwrap(), RunConfig::default());
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(tmp.path(), &[]), 2, "no command");

    let empty = tmp.path().join("empty.toml");
    fs::write(&empty, "[estimators]\nlist = []\n").unwrap();
    assert_eq!(code(tmp.path(), &["generate", "--config", empty.to_str().unwrap()]), 2);
    let typo = tmp.path().join("typo.toml");
    fs::write(&typo, "[scenario]\nsede = 1\n").unwrap();
    assert_eq!(code(tmp.path(), &["generate", "--config", typo.to_str().unwrap()]), 2);

    assert_eq!(code(tmp.path(), &["generate", "--config", "missing.toml"]), 4);
    assert_eq!(code(tmp.path(), &["estimate", "--input", "nowhere"]), 4);

    generate_small(&tmp, "[estimators]\nlist = [\"em\"]\n[estimators.em]\nmax_iters = 2\n");
    assert_eq!(code(tmp.path(), &["estimate", "--input", "dump", "--out", "capped"]), 3);
    assert!(tmp.path().join("capped/estimate_em.csv").exists(), "outputs precede the failure");
    assert_eq!(code(tmp.path(), &["estimate", "--input", "dump", "--out", "capped", "--allow-nonconverged"]), 0);
}
