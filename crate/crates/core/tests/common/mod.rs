#![allow(dead_code)]

use std::path::{Path, PathBuf};

use absorbkit::pipeline::{generate_synthetic, write_synthetic, ContrastRef, GeneratorSpec, PipelineConfig, SyntheticFiles};

/// Small cohort on disk plus a config tuned to run in seconds.
pub struct Fixture {
    pub files: SyntheticFiles,
    pub cfg: PipelineConfig,
    pub informative: Vec<absorbkit::data_model::RoiId>,
}

pub fn small_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        seed,
        n_subjects: 8,
        n_features: 24,
        n_informative: 3,
        effect: 2.0,
        case_stage_runs: 8,
        case_control_runs: 6,
        ..GeneratorSpec::default()
    }
}

pub fn fast(cfg: &mut PipelineConfig) {
    cfg.k = 4;
    cfg.permutation_iterations = 0;
    cfg.importance_repeats = 2;
    cfg.models.rf.n_trees = 10;
    cfg.models.mlp.hidden = vec![8];
    cfg.models.mlp.epochs = 20;
    cfg.models.svm.max_epochs = 100;
    cfg.threads = Some(1);
}

pub fn fixture(dir: &Path, spec: &GeneratorSpec, contrasts: &[&str]) -> Fixture {
    let cohort = generate_synthetic::<f64>(spec).unwrap();
    let files = write_synthetic(spec, &cohort, dir).unwrap();
    let mut cfg = PipelineConfig::load(&files.config_toml).unwrap();
    fast(&mut cfg);
    cfg.contrasts = contrasts.iter().map(|c| ContrastRef::Named(c.to_string())).collect();
    Fixture {
        files,
        cfg,
        informative: cohort.informative,
    }
}

pub fn with_out(cfg: &PipelineConfig, out: PathBuf) -> PipelineConfig {
    let mut c = cfg.clone();
    c.paths.out_dir = out;
    c
}

pub fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&read(p)).unwrap()
}

pub fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}
