//! End-to-end runs of the `hjbp` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[grid]
horizon = 2.0

[simulation]
n_paths = 300
seed = 11

[sweep]
cara_a = [4.0, 8.0]
dara_a0 = [5.0, 9.0]
"#;

fn hjbp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjbp")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn pipeline_writes_every_stage_with_headers_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    let first = hjbp(&["pipeline", "--config", &cfg, "--out", out_a.to_str().unwrap()]);
    assert!(first.status.success(), "{}", stderr(&first));
    for name in ["phi.csv", "value.csv", "weights.csv", "terminal_wealth.csv", "report.csv"] {
        let text = fs::read_to_string(out_a.join(name)).unwrap();
        let header: Vec<&str> = text.lines().take(3).collect();
        assert!(header[0].starts_with("# hjb-portfolio "), "{name}: {header:?}");
        assert!(header[1].starts_with("# config "), "{name}");
        assert_eq!(header[2], "# seed 11", "{name}");
    }
    let wealth = fs::read_to_string(out_a.join("terminal_wealth.csv")).unwrap();
    assert_eq!(wealth.lines().filter(|l| !l.starts_with('#')).count(), 300);

    let second = hjbp(&["pipeline", "--config", &cfg, "--out", out_b.to_str().unwrap(), "--no-cache"]);
    assert!(second.status.success());
    for name in ["phi.csv", "report.csv", "terminal_wealth.csv"] {
        assert_eq!(fs::read(out_a.join(name)).unwrap(), fs::read(out_b.join(name)).unwrap(), "{name}");
    }

    let cached = hjbp(&["pipeline", "--config", &cfg, "--out", out_a.to_str().unwrap()]);
    assert!(stderr(&cached).contains("alpha table loaded from cache"));
    assert!(stderr(&cached).contains("PDE solution(s) loaded from cache"));
    assert_eq!(fs::read(out_a.join("report.csv")).unwrap(), fs::read(out_b.join("report.csv")).unwrap());

    let reseeded = hjbp(&["pipeline", "--config", &cfg, "--out", out_b.to_str().unwrap(), "--seed", "12"]);
    assert!(reseeded.status.success());
    assert_ne!(fs::read(out_a.join("report.csv")).unwrap(), fs::read(out_b.join("report.csv")).unwrap());
}

#[test]
fn alpha_command_writes_table_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = hjbp(&["alpha", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("alpha_table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "phi,alpha,alpha_prime,theta_1,theta_2,theta_3,theta_4,theta_5,theta_6");
    assert_eq!(rows.len(), 3202);
    let plot = fs::read_to_string(out.join("alpha_plot.csv")).unwrap();
    assert!(plot.contains("phi,alpha,alpha_prime,alpha_second_diff\n"));
}

#[test]
fn report_reads_a_wealth_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("w.csv");
    let mut text = String::from("# sample\n");
    for i in 1..=100 {
        text.push_str(&format!("{i}\n"));
    }
    fs::write(&input, text).unwrap();
    let out = dir.path().join("rep");
    let o = hjbp(&["report", input.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(rep.contains("var_beta,5\n"));
    assert!(rep.contains("cvar_beta,3\n"));
}

#[test]
fn sweep_writes_tables_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("sweep");
    let o = hjbp(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cara = fs::read_to_string(out.join("sweep_cara.csv")).unwrap();
    assert_eq!(cara.lines().filter(|l| !l.starts_with('#')).count(), 3);
    let dara = fs::read_to_string(out.join("sweep_dara.csv")).unwrap();
    assert!(dara.contains("\n5,2,2,"));
    assert!(dara.contains("\n9,6,2,"));
    let checks = fs::read_to_string(out.join("sweep_checks.csv")).unwrap();
    assert!(checks.contains("matched_levels,0\n"));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();

    let bad = write_config(dir.path(), "[grid]\nspacing = 0.1\n");
    let o = hjbp(&["alpha", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let missing = dir.path().join("missing.toml");
    let o = hjbp(&["alpha", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let garbled = dir.path().join("garbled.csv");
    fs::write(&garbled, "1.0\n2.0\nthree\n").unwrap();
    let o = hjbp(&["report", garbled.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("garbled.csv:3:"), "{}", stderr(&o));

    let absent = dir.path().join("absent.csv");
    let o = hjbp(&["report", absent.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));

    // A covariance matrix that is not positive definite is a numeric failure.
    fs::write(dir.path().join("mu.csv"), "asset,mean_return\nA,0.1\nB,0.2\n").unwrap();
    fs::write(dir.path().join("sigma.csv"), ",A,B\nA,0.04,0.05\nB,0.05,0.04\n").unwrap();
    let cfg = write_config(dir.path(), "[market]\nmu = \"mu.csv\"\nsigma = \"sigma.csv\"\n");
    let o = hjbp(&["alpha", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = hjbp(&["alpha", "--out", blocker.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}
