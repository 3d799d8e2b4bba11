use std::path::Path;
use std::process::Command;

fn acgibbs(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_acgibbs")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn profile_table() {
    let out = acgibbs(&["profile", "--xmax", "3", "--samples", "7"]);
    assert!(out.starts_with("x,m,m',m''"));
    let x = column(&out, "x");
    let m = column(&out, "m");
    assert_eq!(x.len(), 7);
    for (x, m) in x.iter().zip(&m) {
        assert!((m - (x / 2f64.sqrt()).tanh()).abs() < 1e-12);
    }
}

#[test]
fn custom_potential_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("quartic.json");
    std::fs::write(&p, r#"{"coefficients": [0.25, 0.0, -0.5, 0.0, 0.25]}"#).unwrap();
    let out = acgibbs(&["profile", "--potential", p.to_str().unwrap(), "--samples", "3", "--xmax", "1"]);
    let m = column(&out, "m");
    assert!((m[2] - (1.0 / 2f64.sqrt()).tanh()).abs() < 1e-6);
}

#[test]
fn mesh_dump_is_matrix_market() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.mtx");
    let out = acgibbs(&["mesh", "--d", "1", "--L", "2", "--n", "4", "--dump-matrices", path.to_str().unwrap()]);
    let grid: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(grid["N"], 75);
    for file in [path.clone(), dir.path().join("grid_mass.mtx")] {
        let text = std::fs::read_to_string(&file).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "%%MatrixMarket matrix coordinate real symmetric");
        let dims: Vec<usize> = lines.next().unwrap().split(' ').map(|s| s.parse().unwrap()).collect();
        assert_eq!(&dims[..2], &[75, 75]);
        assert_eq!(lines.count(), dims[2]);
    }
}

fn write_profile_field(dir: &Path, shift: f64) -> String {
    // d = 0, L = 3, n = 4: nodes k / 4 for |k| <= 11
    let coeffs: Vec<f64> = (-11..=11)
        .map(|k| ((k as f64 * 0.25 - shift) / 2f64.sqrt()).tanh())
        .collect();
    let field = serde_json::json!({"d": 0, "L": 3.0, "n": 4, "coeffs": coeffs});
    let path = dir.join("field.json");
    std::fs::write(&path, field.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn energy_and_projection_of_a_profile() {
    let dir = tempfile::tempdir().unwrap();
    let field = write_profile_field(dir.path(), 0.3);
    let report: serde_json::Value = serde_json::from_str(&acgibbs(&["energy", "--field", &field])).unwrap();
    let free = report["free_energy"].as_f64().unwrap();
    assert!(free > -1e-9 && free < 0.05, "{free}");
    let proj: serde_json::Value = serde_json::from_str(&acgibbs(&["project", "--field", &field])).unwrap();
    assert!((proj["xi"].as_f64().unwrap() - 0.3).abs() < 0.05);
    assert!(proj["orth_residual"].as_f64().unwrap().abs() < 1e-10);
}

#[test]
fn landscape_columns() {
    let out = acgibbs(&["landscape", "--d", "0", "--L", "6", "--n", "8", "--delta", "0.1,0.2", "--trials", "2"]);
    assert!(out.starts_with("delta,c0_estimate,min_energy"));
    let c0 = column(&out, "c0_estimate");
    assert!(c0.iter().all(|c| *c > 0.5 && *c < 0.9), "{c0:?}");
}

#[test]
fn gaussian_checks() {
    let out = acgibbs(&["gaussian", "--check", "ratio21", "--eps", "0.5", "--L", "2", "--n", "4"]);
    let v = column(&out, "value")[0];
    let closed = -(75.0 / 2.0) * 0.5f64.ln() + 0.5 * (2.0 - 1.0);
    assert!((v - closed).abs() < 1e-8 * closed);
    let out = acgibbs(&["gaussian", "--check", "h1", "--samples", "2000"]);
    assert!(out.lines().nth(1).unwrap().ends_with("true"));
    let out = acgibbs(&["gaussian", "--measure", "nu1", "--samples", "5"]);
    assert_eq!(column(&out, "sup").len(), 5);
}

#[test]
fn mcmc_trace() {
    for method in ["mala", "ula"] {
        let out = acgibbs(&["mcmc", "--eps", "0.3", "--samples", "50", "--method", method, "--seed", "2"]);
        assert!(out.starts_with("iter,dist,energy,accept"));
        let dist = column(&out, "dist");
        assert_eq!(dist.len(), 50);
        assert!(dist.iter().all(|d| d.is_finite() && *d >= 0.0));
    }
}

#[test]
fn experiment_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"d": 0, "lambda": 0.3, "alpha": 0.2, "lambda1": 0.15, "delta": 0.3, "eps_list": [0.5, 0.3], "seed": 1, "samples": 500}"#,
    )
    .unwrap();
    let json = dir.path().join("report.json");
    let csv = dir.path().join("report.csv");
    acgibbs(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out",
        json.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert_eq!(report["provenance"]["seed"], 1);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("eps,L,n,N,delta,p_hat,ci_low,ci_high,eps_log_p,c0_delta_sq,pass"));
}

#[test]
fn invalid_schedule_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(
        &config,
        r#"{"d": 1, "lambda": 0.5, "alpha": 0.3, "lambda1": 0.1, "delta": 0.3, "eps_list": [0.5], "seed": 0}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_acgibbs"))
        .args(["experiment", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda + (d+1) alpha"));
}
