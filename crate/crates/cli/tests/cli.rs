use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn agpucb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agpucb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = agpucb(args);
    assert!(
        out.status.success(),
        "agpucb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Header and rows of a CSV file with no quoting.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'), "{} has CR line endings", path.display());
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn run_is_deterministic_and_aggregate_is_the_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok(&[
            "run",
            "--runs",
            "3",
            "--horizon",
            "40",
            "--omega",
            "0.4",
            "--seed",
            "5",
            "--out",
            dir.to_str().unwrap(),
        ]);
    }
    for name in ["run_000.csv", "run_001.csv", "run_002.csv", "aggregate.csv", "distances.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    // The resolved configs differ only in the output directory.
    let cfg_a = fs::read_to_string(a.join("config.toml")).unwrap();
    let cfg_b = fs::read_to_string(b.join("config.toml")).unwrap();
    assert_eq!(
        cfg_a.replace(a.to_str().unwrap(), "OUT"),
        cfg_b.replace(b.to_str().unwrap(), "OUT")
    );

    let (h, rows) = read_csv(&a.join("run_000.csv"));
    assert_eq!(
        h,
        [
            "run_id", "k", "n", "t", "x_1", "x_2", "f_star", "f_x", "regret_inst", "regret_cum", "regret_avg", "uc_1",
            "uc_2", "feedback", "beta_n"
        ]
    );
    assert_eq!(rows.len(), 40);
    let inst = column(&h, &rows, "regret_inst");
    let cum = column(&h, &rows, "regret_cum");
    let mut sum = 0.0;
    for (i, c) in inst.iter().zip(&cum) {
        sum += i;
        assert!((sum - c).abs() <= 1e-12 * sum.abs().max(1.0));
    }

    let per_run: Vec<Vec<f64>> = (0..3)
        .map(|r| {
            let (h, rows) = read_csv(&a.join(format!("run_{r:03}.csv")));
            column(&h, &rows, "regret_avg")
        })
        .collect();
    let (h, rows) = read_csv(&a.join("aggregate.csv"));
    let agg = column(&h, &rows, "regret_avg");
    for (k, v) in agg.iter().enumerate() {
        let mean = per_run.iter().map(|r| r[k]).sum::<f64>() / 3.0;
        assert!((v - mean).abs() <= 1e-12, "step {k}: {v} vs {mean}");
    }

    // Cumulative distances scale decisions by 3.
    let (h, rows) = read_csv(&a.join("distances.csv"));
    let (rh, rrows) = read_csv(&a.join("run_000.csv"));
    let d1 = column(&h, &rows, "distance_1");
    let d2 = column(&h, &rows, "distance_2");
    let x1 = column(&rh, &rrows, "x_1");
    let x2 = column(&rh, &rrows, "x_2");
    for i in 0..d1.len() {
        assert!((d1[i] - 3.0 * x1[i]).abs() < 1e-12);
        assert!((d2[i] - 3.0 * (x1[i] + x2[i])).abs() < 1e-12);
    }
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[solver]\nalpha = -0.5\n").unwrap();
    let out = agpucb(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("solver"), "{err}");

    let out = agpucb(&["run", "--algorithm", "zero2", "--schedule", "every_q:4"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("feedback.schedule"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "horizon = 15\nruns = 4\n[objective]\nomega = 0.2\n").unwrap();
    let out = tmp.path().join("out");
    ok(&["run", "--config", cfg.to_str().unwrap(), "--runs", "2", "--out", out.to_str().unwrap()]);
    assert!(out.join("run_001.csv").exists());
    assert!(!out.join("run_002.csv").exists());
    let (_, rows) = read_csv(&out.join("aggregate.csv"));
    assert_eq!(rows.len(), 15);
    let written = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("omega = 0.2"), "{written}");
}

#[test]
fn sweep_writes_one_entry_per_cell_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let stdout = ok(&[
        "sweep",
        "--runs",
        "1",
        "--horizon",
        "20",
        "--omegas",
        "0,0.4",
        "--schedules",
        "every_step,every_q:4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("omega ")).count(), 4);
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    let entries = manifest["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 4);
    for e in entries {
        assert!(Path::new(e["aggregate"].as_str().unwrap()).exists());
        let artifacts = e["artifacts"].as_array().unwrap();
        assert_eq!(artifacts.len(), 4, "config, aggregate, distances and one run");
        for a in artifacts {
            assert!(Path::new(a.as_str().unwrap()).exists(), "missing {a}");
        }
    }
}

#[test]
fn bounds_prints_one_row_per_horizon() {
    let stdout = ok(&["bounds", "--horizons", "100,500"]);
    let mut lines = stdout.lines();
    assert_eq!(lines.next().unwrap(), "T,gamma_T,beta_T,learning,c2,g_t,bound");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], 100.0);
    assert!(rows[1][6] > rows[0][6], "bound grows with T");
}

#[test]
fn info_gain_starts_at_half_log_101() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("gain.csv");
    ok(&["info-gain", "--horizon", "50", "--out", path.to_str().unwrap()]);
    let (h, rows) = read_csv(&path);
    let g = column(&h, &rows, "gamma_T");
    assert_eq!(g.len(), 50);
    assert!((g[0] - 0.5 * 101f64.ln()).abs() < 1e-12);
    assert!(g.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn estimate_ab_reports_analytic_b() {
    let json = ok(&["estimate-ab", "--paths", "200", "--grid", "51", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["b"].as_f64().unwrap(), 2.0);
    assert!(v["a"].as_f64().unwrap() > 0.0);
    assert_eq!(v["table"].as_array().unwrap().len(), 12);

    let csv = ok(&["estimate-ab", "--paths", "200", "--grid", "51"]);
    assert!(csv.starts_with("coordinate,level,frequency,tail,ratio,a,b\n"));
    assert_eq!(csv.lines().count(), 13);
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|v| *v < x).clamp(1, xs.len() - 1);
    let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + w * (ys[i] - ys[i - 1])
}

#[test]
fn gp_dump_band_covers_feedback() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gp");
    let stdout = ok(&["gp-dump", "--omega", "0.4", "--steps", "25,400", "--out", out.to_str().unwrap()]);
    assert_eq!(stdout.lines().count(), 4);
    let (h, rows) = read_csv(&out.join("gp_run000_k0400.csv"));
    assert_eq!(h, ["user", "d", "mean", "lower", "upper", "latent_lower", "latent_upper"]);
    let (fh, frows) = read_csv(&out.join("feedback_run000_k0400.csv"));
    assert_eq!(fh, ["user", "d", "y"]);
    assert_eq!(frows.len(), 2 * 400);
    let user = column(&h, &rows, "user");
    let mut covered = 0;
    for u in [1.0, 2.0] {
        let pick = |name: &str| -> Vec<f64> {
            column(&h, &rows, name)
                .into_iter()
                .zip(&user)
                .filter(|(_, w)| **w == u)
                .map(|(v, _)| v)
                .collect()
        };
        let (d, lo, hi) = (pick("d"), pick("lower"), pick("upper"));
        for r in frows.iter().filter(|r| r[0].parse::<f64>().unwrap() == u) {
            let (x, y): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
            if interpolate(&d, &lo, x) <= y && y <= interpolate(&d, &hi, x) {
                covered += 1;
            }
        }
    }
    let frac = covered as f64 / frows.len() as f64;
    assert!(frac >= 0.6, "1σ band covers {frac:.3} of the feedback");
}

#[test]
fn unknown_schedule_is_rejected() {
    let out = agpucb(&["run", "--schedule", "sometimes"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sometimes"));
}
