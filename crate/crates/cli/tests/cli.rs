use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rrdps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrdps"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Non-comment CSV lines split into fields.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn column(table: &[Vec<String>], name: &str) -> Vec<f64> {
    let idx = table[0]
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    table[1..].iter().map(|r| r[idx].parse().unwrap()).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn rate_at_90_km_is_positive() {
    let out = rrdps(&["rate", "--length", "90"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("# rrdps "));
    assert!(text.contains("# seed: 1"));
    let r = column(&rows(&text), "R");
    assert!(r[0] > 0.0);
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"e_s": 0.9}"#);
    let out = rrdps(&["rate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("e_s"));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.json", r#"{"lenght_km": 90}"#);
    let out = rrdps(&["rate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lenght_km"));
}

#[test]
fn json_report_feeds_back_as_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = rrdps(&["rate", "--length", "42.5", "--mu", "0.047", "--json"]);
    assert!(out.status.success());
    let first: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(first["report"]["R"].as_f64().unwrap() > 0.0);
    let cfg = write(dir.path(), "report.json", &stdout(&out));
    let again = rrdps(&["rate", "--config", &cfg, "--json"]);
    assert!(again.status.success());
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"length_km": 10, "mu": 0.03}"#);
    let out = rrdps(&["rate", "--config", &cfg, "--length", "60", "--json"]);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["config"]["length_km"], 60.0);
    assert_eq!(doc["config"]["mu"], 0.03);
}

#[test]
fn require_key_exits_3_without_key() {
    let out = rrdps(&["rate", "--length", "400", "--require-key"]);
    assert_eq!(out.status.code(), Some(3));
    let ok = rrdps(&["rate", "--length", "50", "--require-key"]);
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn sweep_over_default_lengths() {
    let out = rrdps(&["sweep"]);
    assert!(out.status.success());
    let table = rows(&stdout(&out));
    assert_eq!(
        table[0].join(","),
        "length_km,mu_opt,v_th,eta,Q,e_b,e_src,R,R_per_pulse,R_ft"
    );
    let r = column(&table, "R");
    assert_eq!(r.len(), 6);
    assert!(r.iter().all(|&v| v > 0.0));
}

#[test]
fn empty_sweep_is_header_only() {
    let out = rrdps(&["sweep", "--lengths"]);
    assert!(out.status.success());
    assert_eq!(rows(&stdout(&out)).len(), 1);
}

#[test]
fn sweep_file_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = rrdps(&["sweep", "--lengths", "5,45,95", "--out", path.to_str().unwrap()]);
        assert!(out.status.success());
        assert!(out.stdout.is_empty());
    }
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn simulate_reports_alongside_model_and_is_reproducible() {
    let args = [
        "simulate",
        "--length",
        "50",
        "--mu",
        "0.05",
        "--packets",
        "1000000",
        "--seed",
        "11",
    ];
    let first = rrdps(&args);
    assert!(first.status.success());
    let second = rrdps(&[&args[..], &["--workers", "1"]].concat());
    let strip = |o: &Output| {
        stdout(o)
            .lines()
            .filter(|l| !l.starts_with("# config"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&first), strip(&second));

    let table = rows(&stdout(&first));
    for z in ["Q_z", "e_b_z"] {
        assert!(column(&table, z)[0].abs() <= 5.0, "{z}");
    }
}

#[test]
fn simulate_rejects_zero_packets() {
    let out = rrdps(&["simulate", "--packets", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("packets"));
}

#[test]
fn key_dump_writes_one_byte_per_bit() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("key");
    let out = rrdps(&["simulate", "--packets", "20000", "--key-dump", prefix.to_str().unwrap()]);
    assert!(out.status.success());
    let n = column(&rows(&stdout(&out)), "N")[0] as usize;
    let alice = fs::read(dir.path().join("key.alice")).unwrap();
    let bob = fs::read(dir.path().join("key.bob")).unwrap();
    assert_eq!((alice.len(), bob.len()), (n, n));
    assert!(alice.iter().chain(&bob).all(|&b| b <= 1));
}

fn summary(text: &str, key: &str) -> f64 {
    let prefix = format!("# summary.{key},");
    text.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn scheme_tables() {
    let simple = stdout(&rrdps(&["scheme", "--scheme", "simple-active"]));
    assert!((summary(&simple, "max_imbalance_db") - 2.4).abs() < 1e-9);

    let fmi = stdout(&rrdps(&["scheme", "--scheme", "fmi"]));
    assert!((summary(&fmi, "mean_il_db") - 5.60).abs() <= 0.05);
    let table = rows(&fmi);
    let (r, x, y) = (column(&table, "r"), column(&table, "x"), column(&table, "y"));
    assert_eq!(r.len(), 64);
    assert!(r.iter().zip(&x).zip(&y).all(|((r, x), y)| x - y == *r));
}

fn measured_table(rows: u32, il: f64) -> String {
    let mut text = String::from("# bench measurement\nr,long_IL_dB,short_IL_dB,e_s\n");
    for r in 1..=rows {
        text.push_str(&format!("{r},{il},{il},0.02\n"));
    }
    text
}

#[test]
fn measured_table_drives_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let table = write(dir.path(), "il.csv", &measured_table(64, 4.0));
    let out = rrdps(&["rate", "--length", "50", "--il-table", &table, "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let with: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let without: serde_json::Value =
        serde_json::from_slice(&rrdps(&["rate", "--length", "50", "--json"]).stdout).unwrap();
    // 1.6 dB less interferometer loss than the default.
    let ratio = with["report"]["eta"].as_f64().unwrap() / without["report"]["eta"].as_f64().unwrap();
    assert!((ratio - 10f64.powf(0.16)).abs() < 1e-9);

    let sim = rrdps(&["simulate", "--length", "50", "--packets", "50000", "--il-table", &table]);
    assert!(sim.status.success());
    let scheme = stdout(&rrdps(&["scheme", "--il-table", &table]));
    assert!((summary(&scheme, "mean_il_db") - 4.0).abs() < 1e-9);
}

#[test]
fn incomplete_measured_table_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let table = write(dir.path(), "il.csv", &measured_table(60, 4.0));
    let out = rrdps(&["rate", "--il-table", &table]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn max_distance_beyond_90_km() {
    let out = rrdps(&["maxdist"]);
    assert!(out.status.success());
    let reach = column(&rows(&stdout(&out)), "max_length_km")[0];
    assert!(reach >= 90.0);
}
