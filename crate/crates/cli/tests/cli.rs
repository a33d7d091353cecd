use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use absorbkit::data_model::{load_feature_table, RoiRegistry};
use absorbkit::pipeline::{PipelineConfig, GRID_ROWS};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_absorbkit"));
    c.env("RUST_LOG", "warn");
    c
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn synth(dir: &Path) -> PathBuf {
    let spec = dir.join("gen.toml");
    fs::write(
        &spec,
        "n_subjects = 8\nn_features = 20\nn_informative = 3\neffect = 2.0\nconditions = [\"J1\", \"counting\"]\n\
         positive_conditions = [\"J1\"]\ncase_stage_runs = 6\ncase_control_runs = 6\n",
    )
    .unwrap();
    let data = dir.join("data");
    let o = bin().args(["synth", "--spec"]).arg(&spec).arg("--out").arg(&data).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    data
}

/// Shrinks the generated config so a run takes a second or two.
fn fast_config(data: &Path, edit: impl FnOnce(&mut PipelineConfig)) -> PathBuf {
    let path = data.join("config.toml");
    let mut cfg = PipelineConfig::load(&path).unwrap();
    cfg.paths.group_csv = "group.csv".into();
    cfg.paths.case_csv = "case.csv".into();
    cfg.paths.covariates_csv = Some("covariates.csv".into());
    cfg.paths.out_dir = "run".into();
    cfg.k = 4;
    cfg.contrasts = vec![absorbkit::pipeline::ContrastRef::Named("J1 vs counting".into())];
    cfg.permutation_iterations = 0;
    cfg.importance_repeats = 2;
    cfg.models.rf.n_trees = 10;
    cfg.models.mlp.hidden = vec![8];
    cfg.models.mlp.epochs = 20;
    cfg.models.svm.max_epochs = 100;
    edit(&mut cfg);
    let out = data.join("fast.toml");
    cfg.save(&out).unwrap();
    out
}

#[test]
fn synth_run_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    for f in ["group.csv", "case.csv", "covariates.csv", "truth.json", "config.toml"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    let cfg = fast_config(&data, |_| {});
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--seed", "7", "--permutations", "5", "--residualize"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = data.join("run");
    assert!(run.join("manifest.json").is_file());
    assert!(run.join("residual_vs_raw.json").is_file());
    assert!(run.join("J1_vs_counting/metrics_J1_vs_counting.json").is_file());

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 7);
    assert_eq!(manifest["config"]["permutation_iterations"], 5);

    let o = bin().args(["report", "--run"]).arg(&run).output().unwrap();
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let grid: Vec<&str> = text.lines().take(GRID_ROWS.len() + 1).collect();
    assert_eq!(grid[0], "Metric\tJ1 vs counting\tOverall");
    let labels: Vec<&str> = grid[1..].iter().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(labels, GRID_ROWS);
    assert!(text.contains("# residualized features"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin().args(["run", "--config"]).arg(tmp.path().join("absent.toml")).output().unwrap();
    assert_eq!(code(&o), 2);

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "K = 1\n[paths]\ngroup_csv = \"g.csv\"\ncase_csv = \"c.csv\"\nout_dir = \"o\"\n").unwrap();
    let o = bin().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(code(&o), 2);

    fs::write(&bad, "not = [valid").unwrap();
    let o = bin().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(code(&o), 2);

    let data = synth(tmp.path());
    let cfg = fast_config(&data, |_| {});
    let o = bin().args(["run", "--config"]).arg(&cfg).args(["--contrast", "J9 vs nothing"]).output().unwrap();
    assert_eq!(code(&o), 2);

    let o = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let cfg = fast_config(&data, |_| {});
    let group = data.join("group.csv");
    let text = fs::read_to_string(&group).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<&str> = lines[1].split(',').collect();
    let last = cells.len() - 1;
    cells[last] = "oops";
    lines[1] = cells.join(",");
    fs::write(&group, lines.join("\n")).unwrap();
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("run/manifest.json").is_file());

    let o = bin().args(["report", "--run"]).arg(tmp.path().join("nowhere")).output().unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn partial_failure_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    // the cohort has no memory rows, so the second contrast fails
    let cfg = fast_config(&data, |c| {
        c.contrasts = vec![
            absorbkit::pipeline::ContrastRef::Named("J1 vs counting".into()),
            absorbkit::pipeline::ContrastRef::Named("J1 vs memory".into()),
        ];
    });
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("run/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["contrasts"].as_array().unwrap().len(), 1);
    assert_eq!(summary["failed"][0]["contrast"], "J1 vs memory");
    let o = bin().args(["report", "--run"]).arg(data.join("run")).output().unwrap();
    assert!(String::from_utf8(o.stdout).unwrap().contains("# failed: J1 vs memory"));
}

fn write_volume(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let (x, y, z, t) = (4usize, 4, 4, 12);
    let mut vol = Vec::with_capacity(x * y * z * t * 8);
    let mut state = 12345u64;
    for _ in 0..x * y * z * t {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let v = (state >> 11) as f64 / (1u64 << 53) as f64;
        vol.extend_from_slice(&v.to_le_bytes());
    }
    let mut labels = Vec::with_capacity(x * y * z * 4);
    for i in 0..x {
        for _ in 0..y * z {
            let l: u32 = if i < 2 { 1 } else { 2 };
            labels.extend_from_slice(&l.to_le_bytes());
        }
    }
    let v = dir.join("v.bin");
    let l = dir.join("l.bin");
    let s = dir.join("v.json");
    fs::write(&v, vol).unwrap();
    fs::write(&l, labels).unwrap();
    fs::write(&s, r#"{"dims": [4, 4, 4, 12], "voxel_size_mm": [3.0, 3.0, 3.0]}"#).unwrap();
    (v, s, l)
}

#[test]
fn reho_writes_a_loadable_row() {
    let tmp = tempfile::tempdir().unwrap();
    let (v, s, l) = write_volume(tmp.path());
    let out = tmp.path().join("row.csv");
    let run = |extra: &[&str]| {
        bin()
            .args(["reho", "--volume"])
            .arg(&v)
            .arg("--sidecar")
            .arg(&s)
            .arg("--labels")
            .arg(&l)
            .arg("--out")
            .arg(&out)
            .args(extra)
            .output()
            .unwrap()
    };
    // most of the 498 ROIs are empty in this toy volume
    assert_eq!(code(&run(&[])), 3);
    let o = run(&["--allow-missing", "--subject", "s01", "--condition", "counting", "--run", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(&out).unwrap();
    let ds = load_feature_table::<f64>(&out, &RoiRegistry::standard()).unwrap();
    assert_eq!(ds.n_samples(), 1);
    assert_eq!(ds.n_features(), 2);
    assert_eq!(ds.meta()[0].sample_id, "v");
    assert_eq!(ds.meta()[0].run_id, 3);
    assert!(ds.features().iter().all(|v| v.is_finite()));

    assert_eq!(code(&run(&["--allow-missing", "--subject", "s01", "--condition", "counting", "--run", "3"])), 0);
    assert_eq!(fs::read(&out).unwrap(), first);

    assert_eq!(code(&run(&["--allow-missing", "--cluster", "8"])), 2);
    let o = bin()
        .args(["reho", "--volume"])
        .arg(&v)
        .arg("--sidecar")
        .arg(&s)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
