use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ingarch::cli::{EXIT_CONFIG, EXIT_DOMAIN, EXIT_SINGULAR};

fn ingarch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ingarch"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn mean_sq(csv: &str) -> f64 {
    let xs: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .collect();
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}

#[test]
fn intercept_only_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("c.toml"),
        "seed = 5\nout = \"s.csv\"\n[model]\nomega = 2.0\nalpha = [0.0]\n[simulate]\nn = 3000\nburn_in = 0\n",
    )
    .unwrap();
    assert!(ingarch(dir, &["simulate", "--config", "c.toml"])
        .status
        .success());
    let series = fs::read_to_string(dir.join("s.csv")).unwrap();
    assert!(series.starts_with("t,x,v\n1,"));
    assert!(dir.join("s.csv.manifest.toml").exists());

    let out = ingarch(
        dir,
        &["estimate", "--input", "s.csv", "--p", "1", "--out", "f.csv"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fit = fs::read_to_string(dir.join("f.csv")).unwrap();
    let row: Vec<f64> = fit
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .take(3)
        .map(|x| x.parse().unwrap())
        .collect();
    // With alpha = 0 the intercept absorbs the mean of X^2 up to the slope term.
    let m = mean_sq(&series);
    assert!(
        (row[1] - m).abs() < 0.15 * m,
        "omega_hat {} vs mean {m}",
        row[1]
    );
    assert!(row[2].abs() < 0.1);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("c.toml"),
        "seed = 1\n[model]\nomega = 1.5\nalpha = [0.26]\n[simulate]\nn = 50\n",
    )
    .unwrap();
    ingarch(dir, &["simulate", "--config", "c.toml", "--out", "a.csv"]);
    ingarch(
        dir,
        &[
            "simulate", "--config", "c.toml", "--out", "b.csv", "--seed", "2",
        ],
    );
    ingarch(
        dir,
        &[
            "simulate", "--config", "c.toml", "--out", "c.csv", "--seed", "1",
        ],
    );
    let read = |f: &str| fs::read(dir.join(f)).unwrap();
    assert_ne!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.csv"), read("c.csv"));
    assert!(fs::read_to_string(dir.join("b.csv.manifest.toml"))
        .unwrap()
        .contains("seed = 2"));
}

#[test]
fn weights_prints_gamma_delta_kappa() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ingarch(tmp.path(), &["weights", "--c", "0.3", "--d", "0.3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("gamma = [0.5]")
            && text.contains("delta = [0.5]")
            && text.contains("kappa = 0.6")
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = ingarch(
        dir,
        &["simulate", "--config", "missing.toml", "--out", "x.csv"],
    );
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));

    fs::write(
        dir.join("bad.toml"),
        "seed = 1\n[model]\nomega = 1.5\nalpha = [0.26]\nlambda = 2\n",
    )
    .unwrap();
    let out = ingarch(dir, &["simulate", "--config", "bad.toml", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));

    fs::write(
        dir.join("dom.toml"),
        "seed = 1\n[model]\nomega = 3.5\nalpha = [0.5]\n[family]\nkind = \"binomial\"\nn = 2\n[simulate]\nn = 1000\n",
    )
    .unwrap();
    let out = ingarch(dir, &["simulate", "--config", "dom.toml", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(EXIT_DOMAIN));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t="));

    fs::write(
        dir.join("const.csv"),
        "t,x,v\n1,2,1\n2,-2,1\n3,2,1\n4,2,1\n5,-2,1\n",
    )
    .unwrap();
    let out = ingarch(
        dir,
        &[
            "estimate",
            "--input",
            "const.csv",
            "--p",
            "1",
            "--out",
            "f.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(EXIT_SINGULAR));

    let out = ingarch(dir, &["weights", "--c", "0.7", "--d", "0.5"]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn mixing_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("m.toml"),
        "seed = 3\n[model]\nomega = 1.5\nalpha = [0.26]\n[mixing]\nn_max = 8\nreps = 100\nburn_in = 100\n",
    )
    .unwrap();
    let out = ingarch(dir, &["mixing", "--config", "m.toml", "--out", "m.csv"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(dir.join("m.csv")).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(text
        .starts_with("n,analytic,emp_disagree,emp_disagree_se,emp_uncoupled,emp_uncoupled_se\n0,"));
}
