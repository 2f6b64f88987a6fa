use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mpcard"))
}

fn five_bus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/five_bus.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Five-bus config rewritten with a patch applied to its JSON.
fn patched_config(dir: &Path, patch: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(five_bus()).unwrap()).unwrap();
    v["network"] = "builtin:two_feeder_5bus".into();
    patch(&mut v);
    let p = dir.join("config.json");
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn run_is_byte_identical_across_repeats_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = five_bus();
    let o = run(&["run", "--config", path(&cfg), "--cardinality", "2,unconstrained", "--out", path(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["run", "--config", path(&cfg), "--cardinality", "2,unconstrained", "--out", path(&b), "--jobs", "1"]);
    assert_eq!(code(&o), 0);
    let (fa, fb) = (read_dir_bytes(&a), read_dir_bytes(&b));
    assert!(fa.iter().any(|(n, _)| n == "mission_n2.csv"));
    assert!(fa.iter().any(|(n, _)| n == "ec_histogram_unconstrained.svg"));
    assert_eq!(fa, fb);
}

#[test]
fn mission_csv_matches_summary_totals() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = five_bus();
    let o = run(&["run", "--config", path(&cfg), "--cardinality", "1,unconstrained", "--out", path(tmp.path())]);
    assert_eq!(code(&o), 0);
    let config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    let tau = config["synthetic"]["days"].as_u64().unwrap() * config["synthetic"]["steps_per_day"].as_u64().unwrap();
    let hours = 24.0 / config["synthetic"]["steps_per_day"].as_f64().unwrap();
    for label in ["n1", "unconstrained"] {
        let mut rdr = csv::Reader::from_path(tmp.path().join(format!("mission_{label}.csv"))).unwrap();
        let headers = rdr.headers().unwrap().clone();
        let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
        let (obj, ntwk, conv) = (col("obj"), col("ntwk_loss"), col("conv_loss"));
        let mut sums = [0.0; 3];
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec.unwrap();
            for (s, c) in sums.iter_mut().zip([obj, ntwk, conv]) {
                *s += rec[c].parse::<f64>().unwrap();
            }
            rows += 1;
        }
        assert_eq!(rows as u64, tau);
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join(format!("summary_{label}.json"))).unwrap()).unwrap();
        for (s, key) in sums.iter().zip(["total_loss_kwh", "network_loss_kwh", "converter_loss_kwh"]) {
            let total = summary[key].as_f64().unwrap();
            assert!((s * hours - total).abs() <= 1e-9 * total.abs().max(1.0), "{label} {key}");
        }
    }
}

#[test]
fn unknown_bus_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = patched_config(tmp.path(), |v| v["converter"]["pcc_buses"] = serde_json::json!(["3", "99"]));
    let o = run(&["run", "--config", path(&cfg), "--out", path(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("99"));
}

#[test]
fn empty_cardinality_list_warns_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["run", "--config", path(&five_bus()), "--cardinality", "", "--out", path(&out)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("warn"));
    assert!(!out.join("summary.json").exists());
}

#[test]
fn missing_network_file_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = patched_config(tmp.path(), |v| v["network"] = "no_such_network.json".into());
    let o = run(&["verify", "--config", path(&cfg)]);
    assert_eq!(code(&o), 2);
    let o = run(&["run", "--config", path(&tmp.path().join("absent.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn cardinality_above_terminal_count_is_rejected() {
    let o = run(&["run", "--config", path(&five_bus()), "--cardinality", "5", "--out", "/nonexistent/never"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_passes_and_catches_a_negated_loss_hessian() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = five_bus();
    let o = run(&["verify", "--config", path(&cfg), "--timesteps", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    let lin = tmp.path().join("lin");
    assert_eq!(code(&run(&["linearize", "--config", path(&cfg), "--out", path(&lin)])), 0);
    let text = std::fs::read_to_string(lin.join("Lambda.csv")).unwrap();
    let mut lines = text.lines();
    let mut negated = vec![lines.next().unwrap().to_string()];
    for line in lines {
        let mut cells = line.split(',');
        let name = cells.next().unwrap().to_string();
        let vals = cells.map(|c| (-c.parse::<f64>().unwrap()).to_string());
        negated.push(std::iter::once(name).chain(vals).collect::<Vec<_>>().join(","));
    }
    std::fs::write(lin.join("Lambda.csv"), negated.join("\n") + "\n").unwrap();
    let o = run(&["verify", "--config", path(&cfg), "--timesteps", "1", "--linearization", path(&lin)]);
    assert_eq!(code(&o), 1);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.lines().any(|l| l.contains("lambda_psd") && l.ends_with("FAIL")));
}

#[test]
fn ec_command_agrees_with_run() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["run", "--config", path(&five_bus()), "--cardinality", "2", "--out", path(tmp.path())]);
    assert_eq!(code(&o), 0);
    let csv_path = tmp.path().join("mission_n2.csv");
    let o = run(&["ec", path(&csv_path), "--s-total", "1000"]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["mismatched_rows"].as_array().unwrap().len(), 0);
    assert!(report["mec"].as_u64().unwrap() <= 2);
    let o = run(&["ec", path(&tmp.path().join("summary.json")), "--s-total", "1000"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn dump_ir_and_traces_are_written() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--config",
        path(&five_bus()),
        "--cardinality",
        "1",
        "--seed",
        "3",
        "--dump-ir",
        "--solver-trace",
        "--mip-trace",
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("diagnostics/n1");
    assert!(dir.join("ir_t00000.json").exists());
    assert!(dir.join("mip_t00000.csv").exists());
    let trace = std::fs::read_to_string(dir.join("solver_t00010.csv")).unwrap();
    assert!(trace.starts_with("iteration,"));
}
