use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn write(dir: &TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn circlekam(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_circlekam"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Rows of one table in the CSV output, header first.
fn table(text: &str, name: &str) -> Vec<Vec<String>> {
    let marker = format!("# table: {name}");
    let mut lines = text.lines().skip_while(|l| *l != marker);
    lines.next().expect("table present");
    let body: String = lines
        .take_while(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(body.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn cell(rows: &[Vec<String>], row: usize, col: &str) -> String {
    let i = rows[0].iter().position(|c| c == col).expect("column");
    rows[row + 1][i].clone()
}

#[test]
fn rational_rotation_is_exact() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.toml",
        "[map]\nfamily = \"rotation\"\nrho = 0.25\n[estimate]\nn = 1000\n",
    );
    let out = circlekam(&["rotno-map"], &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("# circlekam-results v1\n"));
    let rows = table(&text, "rotation");
    assert_eq!(cell(&rows, 0, "value").parse::<f64>().unwrap(), 0.25);
    assert_eq!(cell(&rows, 0, "lo").parse::<f64>().unwrap(), 0.249);
}

#[test]
fn resonant_frequency_exits_three_naming_mode() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.toml",
        "[kam.problem]\nkind = \"circle\"\nmu = 0.5\neps = 1e-3\nmode = 2\nmatched = false\n",
    );
    let out = circlekam(&["kam"], &cfg);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("kind=resonance") && err.contains("k=2 "), "{err}");
}

#[test]
fn composition_matches_weighted_mean() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.toml",
        "seed = 5\n[compose]\nrhos = [0.1, 0.2]\nprobs = [0.3, 0.7]\na = 0.4\nn = 1000000\n",
    );
    let out = circlekam(&["compose"], &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = table(&stdout(&out), "composition");
    let v: f64 = cell(&rows, 0, "value").parse().unwrap();
    assert!((v - 0.17).abs() < 3e-3, "{v}");
}

#[test]
fn schema_errors_name_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", "[compose]\nrhos = [0.1]\nprobs = \"half\"\nn = 10\n");
    let out = circlekam(&["compose"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("path=compose.probs"), "{}", stderr(&out));

    let cfg = write(&dir, "d.toml", "[map]\nfamily = \"rotation\"\nrho = 0.1\nspeed = 3\n");
    let out = circlekam(&["rotno-map"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("speed"), "{}", stderr(&out));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.toml",
        "[compose]\nrhos = [0.1, 0.3]\nprobs = [0.5, 0.5]\na = 0.2\nn = 20000\nensemble = 3\n",
    );
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, jobs) in [(&a, "1"), (&b, "4")] {
        let out = circlekam(
            &[
                "compose",
                "--seed",
                "99",
                "--jobs",
                jobs,
                "--out",
                path.to_str().unwrap(),
            ],
            &cfg,
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let out = circlekam(&["compose"], &cfg);
    assert_eq!(out.status.code(), Some(2), "compose without any seed must be rejected");
}

#[test]
fn sweep_keeps_failed_points() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.toml",
        r#"
[sweep]
n = 2000
[sweep.map]
family = "arnold"
omega = 0.0
eps = 0.0
[sweep.axis1]
name = "omega"
lo = 0.0
hi = 1.0
count = 5
[sweep.axis2]
name = "eps"
lo = 0.0
hi = 1.2
count = 3
"#,
    );
    let out = circlekam(&["sweep"], &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = table(&stdout(&out), "sweep");
    assert_eq!(rows.len() - 1, 15);
    for r in 0..5 {
        // eps = 0 is the pure rotation
        let x: f64 = cell(&rows, r, "x1").parse().unwrap();
        let rho: f64 = cell(&rows, r, "rho").parse().unwrap();
        assert!((x - rho).abs() < 1e-12);
    }
    for r in 10..15 {
        assert!(cell(&rows, r, "status").starts_with("error"));
        assert_eq!(cell(&rows, r, "rho"), "");
    }
}

#[test]
fn exhausted_budget_exits_four() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.toml",
        "[dioph]\nmu = [0.6180339887498949, 0.4142135623730951]\nnu = 2.0\nk = 4000\nbudget = 1000\n",
    );
    let out = circlekam(&["dioph"], &cfg);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("kind=budget"));
}

#[test]
fn jsonl_rows_carry_schema() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", "[dioph]\nmu = [0.5]\nnu = 1.0\nk = 4\n");
    let out = circlekam(&["dioph", "--format", "jsonl"], &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let first: serde_json::Value = serde_json::from_str(stdout(&out).lines().next().unwrap()).unwrap();
    assert_eq!(first["schema"], "circlekam-results v1");
    assert_eq!(first["table"], "certificate");
    assert_eq!(first["c_best"], 0.0);
    assert_eq!(first["worst_k"], "2");
}

#[test]
fn circle_kam_converges_and_writes_series() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.toml",
        "[kam.problem]\nkind = \"circle\"\nmu = 0.6180339887498949\neps = 1e-3\n",
    );
    let out = circlekam(&["kam", "--verbose"], &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).lines().all(|l| l.starts_with("level=info")));
    let text = stdout(&out);
    let summary = table(&text, "summary");
    assert_eq!(cell(&summary, 0, "status"), "converged");
    assert!(cell(&summary, 0, "defect").parse::<f64>().unwrap() < 1e-10);
    let series = table(&text, "conjugacy");
    let mut tokens: Vec<String> = ["dim", "order", "value_dim"]
        .iter()
        .map(|c| cell(&series, 0, c))
        .collect();
    tokens.extend(cell(&series, 0, "coeffs").split(' ').map(str::to_string));
    let flat = circlekam_core::fourier::FlatSeries::from_tokens(&tokens).unwrap();
    assert_eq!(flat.dim, 1);
}

#[test]
fn missing_section_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", "seed = 1\n");
    let out = circlekam(&["rotno-ode"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("path=ode"), "{}", stderr(&out));
}

fn sweep_config(dir: &TempDir, omega_count: usize, eps: (f64, f64, usize)) -> std::path::PathBuf {
    let axis2 = if eps.2 > 1 {
        format!(
            "[sweep.axis2]\nname = \"eps\"\nlo = {:?}\nhi = {:?}\ncount = {}\n",
            eps.0, eps.1, eps.2
        )
    } else {
        String::new()
    };
    write(
        dir,
        "sweep.toml",
        &format!(
            "[sweep]\nn = 4000\n[sweep.map]\nfamily = \"arnold\"\nomega = 0.0\neps = {:?}\n\
             [sweep.axis1]\nname = \"omega\"\nlo = 0.0\nhi = 1.0\ncount = {omega_count}\n{axis2}",
            eps.0
        ),
    )
}

#[test]
fn uncoupled_sweep_is_the_diagonal() {
    let dir = TempDir::new().unwrap();
    let out = circlekam(&["sweep"], &sweep_config(&dir, 101, (0.0, 0.0, 1)));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = table(&stdout(&out), "sweep");
    assert_eq!(rows.len() - 1, 101);
    for r in 0..101 {
        let x: f64 = cell(&rows, r, "x1").parse().unwrap();
        let rho: f64 = cell(&rows, r, "rho").parse().unwrap();
        assert!((x - rho).abs() < 1e-12, "{x} {rho}");
        assert_eq!(cell(&rows, r, "i2"), "");
    }
}

#[test]
fn tongue_grid_locks_at_one_half() {
    let dir = TempDir::new().unwrap();
    let out = circlekam(&["sweep", "--jobs", "3"], &sweep_config(&dir, 101, (0.0, 1.0, 21)));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = table(&stdout(&out), "sweep");
    assert_eq!(rows.len() - 1, 101 * 21);
    // eps = 1 is not invertible: the last row of the grid fails but is kept
    assert!((2020..2121).all(|r| cell(&rows, r, "status").starts_with("error")));
    // eps = 0.5 is row 10; collect the omegas whose enclosure contains 1/2
    let locked: Vec<f64> = (0..101)
        .map(|i| 10 * 101 + i)
        .filter(|&r| {
            let lo: f64 = cell(&rows, r, "lo").parse().unwrap();
            let hi: f64 = cell(&rows, r, "hi").parse().unwrap();
            lo <= 0.5 && 0.5 <= hi
        })
        .map(|r| cell(&rows, r, "x1").parse().unwrap())
        .collect();
    assert_eq!(locked, vec![0.5]);

    // the grid step is coarser than the tongue, so resolve it with a finer sweep
    let fine = write(
        &dir,
        "fine.toml",
        "[sweep]\nn = 100000\n[sweep.map]\nfamily = \"arnold\"\nomega = 0.0\neps = 0.5\n\
         [sweep.axis1]\nname = \"omega\"\nlo = 0.49\nhi = 0.51\ncount = 21\n",
    );
    let out = circlekam(&["sweep"], &fine);
    let rows = table(&stdout(&out), "sweep");
    let locked: Vec<f64> = (0..21)
        .filter(|&r| {
            let lo: f64 = cell(&rows, r, "lo").parse().unwrap();
            let hi: f64 = cell(&rows, r, "hi").parse().unwrap();
            lo <= 0.5 && 0.5 <= hi
        })
        .map(|r| cell(&rows, r, "x1").parse().unwrap())
        .collect();
    assert!(locked.len() >= 3 && locked.contains(&0.5), "{locked:?}");
}
