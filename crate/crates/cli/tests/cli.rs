use std::path::Path;
use std::process::{Command, Output};

fn ickan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ickan")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

const SMALL_FIT: [&str; 8] = ["--iterations", "200", "--validation", "2000", "--selection", "1000", "--eval-every", "50"];

fn small_fit(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["fit", "--dim", "3", "--family", "p1", "--adapt", "--layers", "2", "--neurons", "20", "--P", "20"];
    args.extend(SMALL_FIT);
    args.extend(["--out", out.to_str().unwrap()]);
    args.extend(extra);
    ickan(&args)
}

#[test]
fn fit_writes_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_fit(dir.path(), &["--runs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("fit.csv"));
    assert_eq!(header, ["method", "layers", "neurons", "P", "run", "iterations", "mse", "wall_seconds"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "P1-ICKAN adapt");
    assert!(dir.path().join("fit_run1.json").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "fit");
    assert_eq!(manifest["config"]["parameters"], 10940);
    assert_eq!(manifest["checkpoints"].as_array().unwrap().len(), 2);
    let hash = manifest["checkpoints"][0]["sha256"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
}

#[test]
fn same_seed_reproduces_the_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(small_fit(a.path(), &["--seed", "7"]).status.success());
    assert!(small_fit(b.path(), &["--seed", "7", "--parallel"]).status.success());
    let strip = |p: &Path| {
        let (h, rows) = read_csv(&p.join("fit.csv"));
        let wall = h.iter().position(|c| c == "wall_seconds").unwrap();
        rows.into_iter().map(|mut r| {
            r.remove(wall);
            r
        }).collect::<Vec<_>>()
    };
    assert_eq!(strip(a.path()), strip(b.path()));
    let ck = |p: &Path| std::fs::read(p.join("fit_run0.json")).unwrap();
    assert_eq!(ck(a.path()), ck(b.path()));
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# smaller run\nruns=3\nneurons=4\nadapt=false\n").unwrap();
    let o = small_fit(dir.path(), &["--runs", "1", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_csv(&dir.path().join("fit.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "P1-ICKAN");
    assert_eq!(rows[0][2], "4");
}

#[test]
fn invalid_configurations_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["fit", "--family", "nonsense", "--out", out],
        vec!["fit", "--lr", "-1", "--out", out],
        vec!["fit", "--neurons", "0", "--out", out],
        vec!["fit", "--runs", "0", "--out", out],
        vec!["wrong-convexity", "--dim", "3", "--out", out],
        vec!["ot", "--benchmark", "mixture", "--out", out],
        vec!["ot", "--family", "pickan", "--out", out],
        vec!["no-such-experiment"],
    ] {
        let o = ickan(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty(), "{args:?} printed no message");
    }
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "dim 3\n").unwrap();
    assert!(!ickan(&["fit", "--config", bad.to_str().unwrap(), "--out", out]).status.success());
}

#[test]
fn ot_table_has_uvp_columns_and_a_linear_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = ickan(&[
        "ot", "--benchmark", "tensorized", "--dim", "2", "--family", "cubic", "--P", "10",
        "--outer", "20", "--inner", "2", "--batch", "128", "--eval-every", "10", "--pretrain-steps", "50",
        "--test-size", "512", "--validation-size", "1024", "--slice-points", "11",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("ot.csv"));
    assert!(header.iter().any(|c| c == "best_uvp"));
    assert!(header.iter().any(|c| c == "final_uvp"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][1], "linear");
    for f in ["marginals.csv", "histograms.csv", "ot_trace.csv", "ot_slice_run0.csv", "ot_psi_run0.json", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let (_, slice) = read_csv(&dir.path().join("ot_slice_run0.csv"));
    assert_eq!(slice.len(), 22);
}

#[test]
fn oracle_prints_one_pass_line_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let o = ickan(&["oracle-maxaffine", "--dim", "2", "--trials", "20", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 20);
    assert!(!text.contains("FAIL"));
    assert!(text.contains("max sup error"));
}

#[test]
fn verify_passes_on_a_fresh_checkout() {
    let o = ickan(&["verify"]);
    let text = stdout(&o);
    assert!(o.status.success(), "{text}");
    assert!(text.lines().count() >= 10);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn corrupted_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_fit(dir.path(), &[]).status.success());
    let ck = dir.path().join("fit_run0.json");
    let o = ickan(&["verify", "--checkpoint", ck.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("PASS load"));
    let text = std::fs::read_to_string(&ck).unwrap();
    std::fs::write(&ck, &text[..text.len() / 3]).unwrap();
    let o = ickan(&["verify", "--checkpoint", ck.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("FAIL load"));
}

#[test]
fn small_experiments_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let quick = ["--iterations", "100", "--validation", "1000", "--selection", "500", "--eval-every", "50", "--out", out];
    let run = |head: &[&str]| {
        let args: Vec<&str> = head.iter().chain(quick.iter()).copied().collect();
        let o = ickan(&args);
        assert!(o.status.success(), "{head:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["wrong-convexity", "--dim", "1", "--points", "41"]);
    assert_eq!(read_csv(&dir.path().join("wrong_profile.csv")).1.len(), 41);
    run(&["wrong-convexity", "--dim", "2", "--points", "11"]);
    assert_eq!(read_csv(&dir.path().join("wrong_error_grid.csv")).1.len(), 121);
    run(&["lq", "--per-axis", "7"]);
    assert_eq!(read_csv(&dir.path().join("lq_grid_run0.csv")).1.len(), 49);
    run(&["pickan-fit", "--neurons", "6", "--P", "6", "--check-x", "4"]);
    assert_eq!(read_csv(&dir.path().join("pickan.csv")).1.len(), 1);
    run(&["appendix-1d", "--function", "4", "--P", "10", "--points", "21"]);
    assert_eq!(read_csv(&dir.path().join("appendix_f4_run0_vertices.csv")).1.len(), 11);
    assert_eq!(read_csv(&dir.path().join("appendix_f4_run0.csv")).1.len(), 21);
}
