use std::path::{Path, PathBuf};
use std::process::ExitCode;

use absorbkit::data_model::{save_feature_table, Cohort, Condition, Dataset, RoiRegistry, SampleMeta};
use absorbkit::pipeline::{generate_synthetic, render_report, run_all, write_synthetic, GeneratorSpec, PipelineConfig};
use absorbkit::reho::{labels_path_for, load_labels, load_volume, reho_features, Cluster, RehoConfig};
use absorbkit::Error;
use clap::{Parser, Subcommand};
use ndarray::Array2;

#[derive(Parser)]
#[command(name = "absorbkit", version, about = "Rare-state decoding from ROI feature tables")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Group cross-validation, final ensemble and case test for every contrast.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to these contrasts (repeatable).
        #[arg(long = "contrast", value_name = "NAME")]
        contrasts: Vec<String>,
        #[arg(long, value_name = "N")]
        permutations: Option<usize>,
        #[arg(long)]
        residualize: bool,
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compute in single precision.
        #[arg(long)]
        f32: bool,
    },
    /// Writes a synthetic cohort plus a ready-to-run config.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// ReHo features for one volume, written as a one-row feature table.
    Reho {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 27)]
        cluster: usize,
        #[arg(long, default_value_t = 2.0)]
        fwhm: f64,
        /// Drop ROIs without voxels instead of failing.
        #[arg(long)]
        allow_missing: bool,
        #[arg(long)]
        sample_id: Option<String>,
        #[arg(long, default_value = "unknown")]
        subject: String,
        #[arg(long, default_value = "group")]
        cohort: String,
        #[arg(long, default_value = "J1")]
        condition: String,
        #[arg(long, default_value_t = 1)]
        run: u32,
    },
    /// Prints the metric grid of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

enum Failure {
    Config(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run {
            config,
            seed,
            contrasts,
            permutations,
            residualize,
            threads,
            out,
            f32,
        } => run(&config, seed, &contrasts, permutations, residualize, threads, out, f32),
        Cmd::Synth { spec, out, seed } => synth(spec.as_deref(), &out, seed).map(|_| ExitCode::SUCCESS),
        Cmd::Reho {
            volume,
            sidecar,
            labels,
            out,
            cluster,
            fwhm,
            allow_missing,
            sample_id,
            subject,
            cohort,
            condition,
            run,
        } => {
            let meta = (|| -> Result<SampleMeta, Failure> {
                Ok(SampleMeta {
                    sample_id: sample_id.unwrap_or_else(|| {
                        volume.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
                    }),
                    subject_id: subject,
                    cohort: cohort.parse::<Cohort>().map_err(Failure::Config)?,
                    condition: condition.parse::<Condition>().map_err(Failure::Config)?,
                    run_id: run,
                })
            })();
            let cfg = Cluster::from_size(cluster)
                .map(|cluster| RehoConfig {
                    cluster,
                    fwhm_mm: fwhm,
                    allow_missing_rois: allow_missing,
                })
                .ok_or_else(|| Failure::Config(format!("cluster size must be 7, 19 or 27, got {cluster}")));
            meta.and_then(|m| cfg.and_then(|c| reho(&volume, &sidecar, labels.as_deref(), &out, &c, m)))
                .map(|_| ExitCode::SUCCESS)
        }
        Cmd::Report { run } => render_report(&run)
            .map(|text| {
                print!("{text}");
                ExitCode::SUCCESS
            })
            .map_err(Failure::from),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            log::error!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(msg)) => {
            log::error!("{msg}");
            ExitCode::from(3)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &Path,
    seed: Option<u64>,
    contrasts: &[String],
    permutations: Option<usize>,
    residualize: bool,
    threads: Option<usize>,
    out: Option<PathBuf>,
    f32: bool,
) -> Result<ExitCode, Failure> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if !contrasts.is_empty() {
        cfg.restrict_contrasts(contrasts)?;
    }
    if let Some(n) = permutations {
        cfg.permutation_iterations = n;
    }
    if residualize {
        cfg.residualize = true;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    if let Some(o) = out {
        cfg.paths.out_dir = o;
    }
    let outcome = if f32 { run_all::<f32>(&cfg)? } else { run_all::<f64>(&cfg)? };
    let failures = outcome.failures();
    for f in &failures {
        log::warn!("{} ({}) failed: {}", f.contrast, f.variant.as_str(), f.error);
    }
    log::info!("wrote {}", cfg.paths.out_dir.join("manifest.json").display());
    Ok(if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    })
}

fn synth(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut spec = match spec {
        Some(p) => GeneratorSpec::load(p)?,
        None => GeneratorSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let cohort = generate_synthetic::<f64>(&spec)?;
    let files = write_synthetic(&spec, &cohort, out)?;
    log::info!(
        "{} group rows, {} case rows; config at {}",
        cohort.group.n_samples(),
        cohort.case.as_ref().map_or(0, |c| c.n_samples()),
        files.config_toml.display()
    );
    Ok(())
}

fn reho(
    volume: &Path,
    sidecar: &Path,
    labels: Option<&Path>,
    out: &Path,
    cfg: &RehoConfig,
    meta: SampleMeta,
) -> Result<(), Failure> {
    let registry = RoiRegistry::standard();
    let (vol, sc) = load_volume(volume, sidecar)?;
    let labels_path = labels_path_for(sidecar, &sc, labels)?;
    let [x, y, z, _] = sc.dims;
    let labels = load_labels(&labels_path, [x, y, z], &registry)?;
    let feats = reho_features(&vol, &labels, &registry, cfg)?;
    if feats.constant_voxels > 0 {
        log::warn!("{} in-mask voxels have constant time series", feats.constant_voxels);
    }
    let n = feats.values.len();
    let row = Array2::from_shape_vec((1, n), feats.values).expect("one row");
    let ds = Dataset::new(row, vec![meta], feats.roi_ids)?;
    save_feature_table(out, &ds)?;
    Ok(())
}
