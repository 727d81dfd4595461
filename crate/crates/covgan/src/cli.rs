//! `covgan` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use covgan_core::channel::{OfdmConfig, VirtualCovariance};
use covgan_core::dataset::{split_indices, DatasetRecord, GridConfig};
use covgan_core::gan::{GanSpec, GeneratorLoss, Predictor, ReconKind, TrainConfig, ZPolicy};
use covgan_core::scene::build_scene;
use serde_json::json;

use crate::build::{build_dataset, BuildSpec};
use crate::checkpoint::{read_checkpoint, Checkpoint, DataBinding};
use crate::config::read_scene_config;
use crate::eval::{
    curve_nmse_vs_size, is_non_increasing, knn_baseline_nmse, mean_baseline_nmse, policy_nmse, EvalReport, Stopwatch,
};
use crate::format::{read_dataset, write_dataset, Dataset, DatasetHeader};
use crate::image::{write_pgm, Plane};
use crate::io::atomic_write;
use crate::manifest::{manifest_path, RunManifest};
use crate::train::{run_training, DriverError, TrainOptions};

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config = 2,
    Compat = 3,
    Runtime = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ExitClass,
    pub message: String,
}

impl CliError {
    fn config(m: impl std::fmt::Display) -> Self {
        Self { class: ExitClass::Config, message: m.to_string() }
    }

    fn compat(m: impl std::fmt::Display) -> Self {
        Self { class: ExitClass::Compat, message: m.to_string() }
    }

    fn runtime(m: impl std::fmt::Display) -> Self {
        Self { class: ExitClass::Runtime, message: m.to_string() }
    }

    pub fn code(&self) -> i32 {
        self.class as i32
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Parser)]
#[command(name = "covgan", version, about = "Synthesize multi-basestation datasets and train covariance GANs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep a user grid through a scene and write a CCV1 dataset.
    BuildDataset(BuildArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a dataset and the baselines.
    Eval(EvalArgs),
    /// Write paired truth/prediction graymaps.
    ExportImages(ExportArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// `NXxNY`.
    #[arg(long, value_parser = parse_grid)]
    pub grid: (usize, usize),
    /// `x0,y0,x1,y1`; defaults to the street footprint.
    #[arg(long, value_parser = parse_bounds)]
    pub bounds: Option<[f64; 4]>,
    /// One-based.
    #[arg(long, default_value_t = 1)]
    pub target_bs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Antennas per basestation.
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    #[arg(long, default_value_t = 64)]
    pub subcarriers: usize,
    #[arg(long, default_value_t = 64)]
    pub taps: usize,
    #[arg(long, default_value_t = 2e-9)]
    pub sample_period: f64,
    /// Per-basestation pilot SNR; noiseless when absent.
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct SplitArgs {
    /// Fraction of records held out from training; 0 trains on everything.
    #[arg(long, default_value_t = 0.0)]
    pub holdout: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta1: f64,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub z_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub g_base: usize,
    #[arg(long, default_value_t = 64)]
    pub d_base: usize,
    #[arg(long, default_value_t = 128)]
    pub cond_dim: usize,
    /// Use the literal `ln(1 - D(G))` generator objective.
    #[arg(long)]
    pub saturating: bool,
    /// Weight of an optional reconstruction term; 0 trains adversarially only.
    #[arg(long, default_value_t = 0.0)]
    pub recon_weight: f64,
    #[arg(long, value_enum, default_value_t = Recon::Squared)]
    pub recon_kind: Recon,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Per-epoch JSON log; defaults to `<out>.log.json`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Recon {
    /// Mean squared pixel error.
    Squared,
    /// Per-sample error relative to the target's energy.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subset {
    All,
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Records scored; `test` requires a holdout.
    #[arg(long, value_enum, default_value_t = Subset::All)]
    pub subset: Subset,
    /// `zero`, `seeded:SEED` or `avg:N[:SEED]`.
    #[arg(long, default_value = "zero", value_parser = parse_policy)]
    pub z_policy: ZPolicy,
    #[arg(long, default_value_t = 1)]
    pub knn: usize,
    /// Training-set sizes for a retrained NMSE curve.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Epochs per curve run; defaults to the checkpoint's.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = Plane::Real)]
    pub plane: Plane,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value_t = Subset::All)]
    pub subset: Subset,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NXxNY, got `{s}`"))?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_bounds(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| String::from("expected x0,y0,x1,y1"))
}

fn parse_policy(s: &str) -> Result<ZPolicy, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.parse::<u64>().map_err(|e| format!("`{t}`: {e}"));
    match parts.as_slice() {
        ["zero"] => Ok(ZPolicy::FixedZero),
        ["seeded", seed] => Ok(ZPolicy::Seeded { seed: num(seed)? }),
        ["avg", n] => Ok(ZPolicy::Average { n: num(n)? as usize, seed: 0 }),
        ["avg", n, seed] => Ok(ZPolicy::Average { n: num(n)? as usize, seed: num(seed)? }),
        _ => Err(format!("unknown z policy `{s}`")),
    }
}

fn policy_json(p: ZPolicy) -> serde_json::Value {
    match p {
        ZPolicy::FixedZero => json!({"kind": "fixed_zero"}),
        ZPolicy::Seeded { seed } => json!({"kind": "seeded", "seed": seed}),
        ZPolicy::Average { n, seed } => json!({"kind": "average", "n": n, "seed": seed}),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::config(format!("dataset not found: {}", path.display())));
    }
    read_dataset(path, None).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::config(format!("checkpoint not found: {}", path.display())));
    }
    read_checkpoint(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Train and held-out records per the split flags.
fn split_records(
    records: &[DatasetRecord],
    split: &SplitArgs,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>), CliError> {
    if split.holdout == 0.0 {
        return Ok((records.to_vec(), Vec::new()));
    }
    let (tr, te) = split_indices(records.len(), 1.0 - split.holdout, split.split_seed).map_err(CliError::config)?;
    Ok((tr.iter().map(|&i| records[i].clone()).collect(), te.iter().map(|&i| records[i].clone()).collect()))
}

fn subset(records: &[DatasetRecord], split: &SplitArgs, which: Subset) -> Result<Vec<DatasetRecord>, CliError> {
    match which {
        Subset::All => Ok(records.to_vec()),
        Subset::Train => Ok(split_records(records, split)?.0),
        Subset::Test => {
            if split.holdout == 0.0 {
                return Err(CliError::config("--subset test needs --holdout > 0"));
            }
            Ok(split_records(records, split)?.1)
        }
    }
}

/// Checkpoint and dataset must describe the same tensors and normalization.
fn check_compat(ck: &Checkpoint, h: &DatasetHeader) -> Result<(), CliError> {
    let s = ck.spec;
    if (s.m, s.n_bs, s.k_sub) != (h.m, h.n_bs, h.k_sub) {
        return Err(CliError::compat(format!(
            "model expects M={} N={} K={}, dataset has M={} N={} K={}",
            s.m, s.n_bs, s.k_sub, h.m, h.n_bs, h.k_sub
        )));
    }
    if ck.data.norm_cov != h.norm_cov || ck.data.norm_sig != h.norm_sig {
        return Err(CliError::compat("normalization constants of checkpoint and dataset differ"));
    }
    if ck.data.scene_digest != h.scene_digest || ck.data.target_bs != h.target_bs {
        return Err(CliError::compat("checkpoint was trained on a different scene or target basestation"));
    }
    Ok(())
}

fn write_manifest(output: &Path, mut m: RunManifest, inputs: &[&Path]) -> Result<(), CliError> {
    for p in inputs.iter().copied().chain([output]) {
        m.digest_file(p).map_err(CliError::runtime)?;
    }
    m.write(&manifest_path(output)).map_err(CliError::runtime)
}

fn cmd_build(a: &BuildArgs) -> Result<(), CliError> {
    let cfg = read_scene_config(&a.scene).map_err(CliError::config)?;
    let scene = build_scene(cfg).map_err(CliError::config)?;
    let ofdm = OfdmConfig { k_subcarriers: a.subcarriers, d_taps: a.taps, sample_period_s: a.sample_period };
    ofdm.validate().map_err(CliError::config)?;
    let (nx, ny) = a.grid;
    let mut grid = GridConfig::street(&scene, nx, ny, a.seed);
    if let Some(b) = a.bounds {
        grid.bounds = b;
    }
    let spec = BuildSpec { grid, m: a.m, ofdm, target_bs: a.target_bs, snr_db: a.snr_db };
    let ds = build_dataset(&scene, &spec, a.workers).map_err(|e| match e {
        crate::build::BuildError::Dataset(covgan_core::dataset::DatasetError::Channel(_)) => CliError::runtime(e),
        _ => CliError::config(e),
    })?;
    write_dataset(&a.out, &ds).map_err(CliError::runtime)?;
    let manifest = RunManifest::new(
        "build-dataset",
        json!({
            "scene": crate::config::format_scene_config(scene.config()),
            "grid": {"nx": nx, "ny": ny, "bounds": grid.bounds},
            "target_bs": a.target_bs,
            "m": a.m,
            "subcarriers": a.subcarriers,
            "taps": a.taps,
            "sample_period_s": a.sample_period,
            "snr_db": a.snr_db,
            "workers": a.workers,
        }),
        vec![a.seed],
    );
    write_manifest(&a.out, manifest, &[&a.scene])?;
    println!("wrote {} records to {}", ds.records.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    if a.z_dim == 0 {
        return Err(CliError::config("--z-dim must be at least 1"));
    }
    let ds = load_dataset(&a.data)?;
    let h = &ds.header;
    let spec = GanSpec {
        g_base: a.g_base,
        d_base: a.d_base,
        cond_dim: a.cond_dim,
        ..GanSpec::new(h.m, h.n_bs, h.k_sub, a.z_dim)
    };
    spec.validate().map_err(CliError::config)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        beta1: a.beta1,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        generator_loss: if a.saturating { GeneratorLoss::Saturating } else { GeneratorLoss::NonSaturating },
        recon_weight: a.recon_weight,
        recon_kind: match a.recon_kind {
            Recon::Squared => ReconKind::Squared,
            Recon::Relative => ReconKind::Relative,
        },
        ..TrainConfig::default()
    };
    cfg.validate().map_err(CliError::config)?;
    let (train, val) = split_records(&ds.records, &a.split)?;
    let data = DataBinding::from_header(h);
    let opts = TrainOptions {
        data: data.clone(),
        checkpoint_every: Some(a.checkpoint_every.unwrap_or(a.epochs)),
        checkpoint_path: Some(a.out.clone()),
        validate_every: if val.is_empty() { 0 } else { 1 },
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut n = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        n.push(".log.json");
        a.out.with_file_name(n)
    });
    let result = run_training(&train, &val, spec, cfg, &opts, |e| {
        let val = e.val_nmse.map_or(String::new(), |v| format!(" val_nmse {v:.4}"));
        eprintln!("epoch {} loss_d {:.4} loss_g {:.4}{val} ({:.1}s)", e.epoch, e.loss_d, e.loss_g, e.wall_s);
    });
    let (_, log) = match result {
        Ok(r) => r,
        Err(DriverError::Aborted { source, last_checkpoint, log }) => {
            let _ = atomic_write(&log_path, &serde_json::to_vec_pretty(&log).unwrap_or_default());
            let kept = last_checkpoint.map_or("no checkpoint written".into(), |p| format!("last good checkpoint {}", p.display()));
            return Err(CliError::runtime(format!("{source}; {kept}")));
        }
        Err(e @ DriverError::Train(_)) => return Err(CliError::config(e)),
        Err(e) => return Err(CliError::runtime(e)),
    };
    atomic_write(&log_path, &serde_json::to_vec_pretty(&log).map_err(CliError::runtime)?).map_err(CliError::runtime)?;
    let manifest = RunManifest::new(
        "train",
        json!({
            "spec": crate::checkpoint::SpecRecord::from(spec),
            "train": crate::checkpoint::TrainRecord::from(cfg),
            "holdout": a.split.holdout,
            "split_seed": a.split.split_seed,
            "checkpoint_every": opts.checkpoint_every,
            "train_records": train.len(),
            "validation_records": val.len(),
        }),
        vec![a.seed, a.split.split_seed],
    );
    write_manifest(&a.out, manifest, &[&a.data])?;
    println!("trained {} epochs on {} records; checkpoint {}", log.entries.len(), train.len(), a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let clock = Stopwatch::start();
    let ck = load_checkpoint(&a.model)?;
    let ds = load_dataset(&a.data)?;
    check_compat(&ck, &ds.header)?;
    if a.knn == 0 {
        return Err(CliError::config("--knn must be at least 1"));
    }
    let norm = ds.header.norm_cov;
    let scored = subset(&ds.records, &a.split, a.subset)?;
    let (train, test) = split_records(&ds.records, &a.split)?;
    let reference = if test.is_empty() { &train } else { &test };
    let scored = if scored.is_empty() { reference.clone() } else { scored };
    let model = policy_nmse(&ck.gan.generator, &scored, norm, a.z_policy).map_err(CliError::runtime)?;
    let baseline_mean = mean_baseline_nmse(&train, &scored, norm).map_err(CliError::runtime)?;
    let baseline_knn = knn_baseline_nmse(&train, &scored, a.knn, norm).map_err(CliError::runtime)?;
    let mut sizes = Vec::new();
    if !a.sizes.is_empty() {
        if test.is_empty() {
            return Err(CliError::config("--sizes needs --holdout > 0 to score the curve"));
        }
        if let Some(&s) = a.sizes.iter().find(|&&s| s == 0 || s > train.len()) {
            return Err(CliError::config(format!("size {s} outside 1..={}", train.len())));
        }
        let cfg = TrainConfig { epochs: a.epochs.unwrap_or(ck.train.epochs), ..ck.train };
        sizes = curve_nmse_vs_size(&train, &test, &a.sizes, ck.spec, cfg, &a.seeds, &ck.data, |size, seed, v| {
            eprintln!("size {size} seed {seed}: test nmse {v:.4}")
        })
        .map_err(CliError::runtime)?;
    }
    let report = EvalReport {
        curve_monotone: (!sizes.is_empty()).then(|| is_non_increasing(&sizes)),
        model: Some(model),
        baseline_mean,
        baseline_knn: Some(baseline_knn),
        knn_k: a.knn,
        sizes,
        runtime_s: clock.seconds(),
    };
    let mut text = serde_json::to_vec_pretty(&report).map_err(CliError::runtime)?;
    text.push(b'\n');
    atomic_write(&a.out, &text).map_err(CliError::runtime)?;
    let manifest = RunManifest::new(
        "eval",
        json!({
            "subset": format!("{:?}", a.subset).to_lowercase(),
            "holdout": a.split.holdout,
            "split_seed": a.split.split_seed,
            "z_policy": policy_json(a.z_policy),
            "knn": a.knn,
            "sizes": a.sizes,
            "epochs": a.epochs,
        }),
        a.seeds.iter().copied().chain([a.split.split_seed]).collect(),
    );
    write_manifest(&a.out, manifest, &[&a.model, &a.data])?;
    let m = report.model.as_ref().expect("model scored");
    println!("model mean NMSE {:.6} (median {:.6})", m.mean, m.median);
    println!("baseline_mean NMSE {:.6}", report.baseline_mean.mean);
    if let Some(k) = &report.baseline_knn {
        println!("baseline_knn (k={}) NMSE {:.6}", a.knn, k.mean);
    }
    for p in &report.sizes {
        println!("size {}: median NMSE {:.6}", p.size, p.median);
    }
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.model)?;
    let ds = load_dataset(&a.data)?;
    check_compat(&ck, &ds.header)?;
    let records = subset(&ds.records, &a.split, a.subset)?;
    if a.count > records.len() {
        return Err(CliError::config(format!("--count {} exceeds the {} available records", a.count, records.len())));
    }
    if a.count == 0 {
        return Ok(());
    }
    std::fs::create_dir_all(&a.out).map_err(CliError::runtime)?;
    let norm = ds.header.norm_cov;
    let chosen = &records[..a.count];
    let sigs: Vec<&[f32]> = chosen.iter().map(|r| r.signature.as_slice()).collect();
    let preds = Predictor::new(&ck.gan.generator, norm).predict(&sigs, 0).map_err(CliError::runtime)?;
    let plane = match a.plane {
        Plane::Real => "real",
        Plane::Imag => "imag",
    };
    let mut written = Vec::new();
    for (i, (r, p)) in chosen.iter().zip(&preds).enumerate() {
        let truth = a.out.join(format!("sample{i:03}_truth_{plane}.pgm"));
        let pred = a.out.join(format!("sample{i:03}_pred_{plane}.pgm"));
        let t = VirtualCovariance { r_g: r.image.to_virtual(norm).r_g.hermitian_part() };
        write_pgm(&truth, &t, a.plane).map_err(CliError::runtime)?;
        write_pgm(&pred, p, a.plane).map_err(CliError::runtime)?;
        written.push(truth);
        written.push(pred);
    }
    let mut manifest = RunManifest::new(
        "export-images",
        json!({
            "count": a.count,
            "plane": plane,
            "subset": format!("{:?}", a.subset).to_lowercase(),
            "holdout": a.split.holdout,
            "split_seed": a.split.split_seed,
        }),
        vec![a.split.split_seed],
    );
    for p in [&a.model, &a.data].into_iter().chain(&written) {
        manifest.digest_file(p).map_err(CliError::runtime)?;
    }
    manifest.write(&manifest_path(&a.out)).map_err(CliError::runtime)?;
    println!("wrote {} images to {}", written.len(), a.out.display());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::BuildDataset(a) => cmd_build(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportImages(a) => cmd_export(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Usage errors map to [`ExitClass::Config`].
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return {
            let text = e.render().to_string();
            Err(CliError::config(text.trim_start_matches("error: ").trim_end()))
        },
    };
    execute(&cli)
}
