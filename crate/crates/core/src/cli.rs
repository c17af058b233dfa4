//! The `t2net` command line: dataset generation, training, evaluation,
//! ablation and error-map export.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{self, CheckpointError};
use crate::metrics::MetricReport;
use crate::model::{infer, T2NetParams, Variant};
use crate::mri::{generate_dataset, load_dataset, read_sample, GenConfig, MriError, SampleTriple};
use crate::pgm;
use crate::sidecar::KvDoc;
use crate::tensor::Tensor;
use crate::training::{evaluate, train_with, EvalReport, TrainConfig, TrainError};

#[derive(Debug, Parser)]
#[command(name = "t2net", version, about = "Joint MRI reconstruction and super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a phantom dataset.
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Print metrics of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train the three network variants on one dataset and compare them.
    Ablate(AblateArgs),
    /// Write input, outputs, target and error images of one sample.
    ErrorMap(ErrorMapArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub slices: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    #[arg(long, default_value_t = 6.0)]
    pub accel: f64,
    #[arg(long, default_value_t = 0.0625)]
    pub center_frac: f64,
    #[arg(long, default_value_t = 10)]
    pub ellipses: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reload every written file and check it against a fresh simulation.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `key: value` config file; missing keys use the desk defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Also write the metrics as a `key: value` record.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ErrorMapArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// A `.t2nt` sample file from a generated dataset.
    #[arg(long)]
    pub sample: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Artifact(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Artifact(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn artifact(context: impl std::fmt::Display) -> impl FnOnce(String) -> CliError {
    move |e| CliError::Artifact(format!("{context}: {e}"))
}

fn from_mri(path: &Path, e: MriError) -> CliError {
    match e {
        MriError::Dimension(_) | MriError::Parameter(_) => CliError::Usage(e.to_string()),
        other => CliError::Artifact(format!("{}: {other}", path.display())),
    }
}

fn from_train(e: TrainError) -> CliError {
    match e {
        TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        TrainError::Config(_) | TrainError::Dataset(_) | TrainError::Sidecar(_) | TrainError::Model(_) => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Artifact(other.to_string()),
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Artifact(e.to_string())
}

/// Creates the directory an output file will land in.
fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Artifact(format!("{}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

/// `PATH` with `suffix` appended to its file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn config_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".cfg")
}

pub fn log_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".log.csv")
}

fn print_config(out: &mut impl Write, doc: &KvDoc) -> Result<()> {
    write!(out, "# config\n{doc}").map_err(io_err)
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    let doc = match path {
        Some(p) => KvDoc::load(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => KvDoc::new(),
    };
    TrainConfig::from_doc(&doc).map_err(from_train)
}

fn load_data(dir: &Path) -> Result<Vec<SampleTriple>> {
    let (_, samples) = load_dataset(dir).map_err(|e| CliError::Artifact(format!("{}: {e}", dir.display())))?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("{} holds no samples", dir.display())));
    }
    Ok(samples)
}

/// Checkpoint arrays plus the training config stored next to them.
pub fn load_model(ckpt: &Path) -> Result<(T2NetParams, TrainConfig)> {
    let arrays = checkpoint::load(ckpt).map_err(|e: CheckpointError| artifact(ckpt.display())(e.to_string()))?;
    let cfg_path = config_path(ckpt);
    let doc = KvDoc::load(&cfg_path).map_err(|e| artifact(cfg_path.display())(e.to_string()))?;
    let cfg = TrainConfig::from_doc(&doc).map_err(|e| artifact(cfg_path.display())(e.to_string()))?;
    let params = T2NetParams::from_arrays(&cfg.model, &arrays).map_err(|e| artifact(ckpt.display())(e.to_string()))?;
    Ok((params, cfg))
}

pub fn save_model(ckpt: &Path, params: &T2NetParams, cfg: &TrainConfig) -> Result<()> {
    create_parent(ckpt)?;
    checkpoint::save(ckpt, &params.to_arrays()).map_err(io_err)?;
    cfg.to_doc().save(config_path(ckpt)).map_err(|e| CliError::Artifact(e.to_string()))
}

pub fn run(cli: &Cli, out: &mut impl Write) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Ablate(a) => ablate_cmd(a, out),
        Command::ErrorMap(a) => error_map_cmd(a, out),
    }
}

fn gen_data(a: &GenDataArgs, out: &mut impl Write) -> Result<()> {
    let cfg = GenConfig {
        slices: a.slices,
        size: a.size,
        scale: a.scale,
        acceleration: a.accel,
        center_fraction: a.center_frac,
        num_ellipses: a.ellipses,
        seed: a.seed,
    };
    let mut doc = KvDoc::new();
    doc.set("out", a.out.display())
        .set("slices", cfg.slices)
        .set("size", cfg.size)
        .set("scale", cfg.scale)
        .set("acceleration", cfg.acceleration)
        .set("center_fraction", cfg.center_fraction)
        .set("ellipses", cfg.num_ellipses)
        .set("seed", cfg.seed)
        .set("verify", a.verify);
    print_config(out, &doc)?;
    let manifest = generate_dataset(&a.out, &cfg).map_err(|e| from_mri(&a.out, e))?;
    writeln!(out, "wrote {} slices to {}", manifest.files.len(), a.out.display()).map_err(io_err)?;
    if a.verify {
        let (_, loaded) = load_dataset(&a.out).map_err(|e| from_mri(&a.out, e))?;
        let fresh = cfg.generate().map_err(|e| from_mri(&a.out, e))?;
        if loaded != fresh {
            return Err(CliError::Artifact("reloaded dataset differs from a fresh simulation".into()));
        }
        let mut worst = 0.0f32;
        if cfg.acceleration == 1.0 {
            for s in &loaded {
                let reference = if cfg.scale == 1 { &s.target_sr } else { &s.target_rec };
                for (x, y) in s.input_lr.data().iter().zip(reference.data()) {
                    worst = worst.max((x - y).abs());
                }
            }
            if worst > 1e-5 {
                return Err(CliError::Numeric(format!(
                    "fully sampled input deviates from its target by {worst:e}"
                )));
            }
        }
        writeln!(out, "verify: ok (max fully-sampled deviation {worst:e})").map_err(io_err)?;
    }
    Ok(())
}

fn train_cmd(a: &TrainArgs, out: &mut impl Write) -> Result<()> {
    let cfg = load_train_config(a.config.as_deref())?;
    let mut doc = cfg.to_doc();
    doc.set("data", a.data.display()).set("out", a.out.display());
    print_config(out, &doc)?;
    create_parent(&a.out)?;
    let data = load_data(&a.data)?;
    let report_every = (cfg.steps / 10).max(1);
    let (params, log) = train_with(&data, &cfg, |r| {
        if (r.step + 1) % report_every == 0 {
            eprintln!("step {:>6}  loss {:.6}", r.step + 1, r.total);
        }
    })
    .map_err(from_train)?;
    save_model(&a.out, &params, &cfg)?;
    std::fs::write(log_path(&a.out), log.to_csv()).map_err(io_err)?;
    if let (Some(first), Some(last)) = (log.steps.first(), log.steps.last()) {
        writeln!(out, "loss {:.6} -> {:.6} over {} steps", first.total, last.total, log.steps.len()).map_err(io_err)?;
    }
    writeln!(out, "wrote {}", a.out.display()).map_err(io_err)
}

fn metric_row(label: &str, m: Option<&MetricReport>) -> String {
    match m {
        Some(m) => format!("{label:<22}{:>10.4}{:>10.4}{:>12.6}", m.psnr_db, m.ssim, m.nmse),
        None => format!("{label:<22}{:>10}{:>10}{:>12}", "-", "-", "-"),
    }
}

/// The metric table printed by `eval`.
pub fn format_eval_table(r: &EvalReport) -> String {
    [
        format!("{:<22}{:>10}{:>10}{:>12}", "output", "psnr_db", "ssim", "nmse"),
        metric_row("sr", Some(&r.sr)),
        metric_row("rec", r.rec.as_ref()),
        metric_row("bicubic_baseline", Some(&r.bicubic)),
        metric_row("zero_filled_baseline", Some(&r.zero_filled)),
    ]
    .join("\n")
        + "\n"
}

fn report_doc(r: &EvalReport, dataset: &Path, cfg: &TrainConfig) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.set("dataset", dataset.display())
        .set("scale", cfg.model.scale)
        .set("variant", cfg.variant);
    let rows = [
        ("sr", Some(r.sr)),
        ("rec", r.rec),
        ("bicubic", Some(r.bicubic)),
        ("zero_filled", Some(r.zero_filled)),
    ];
    for (name, m) in rows {
        if let Some(m) = m {
            doc.set(&format!("{name}_psnr_db"), m.psnr_db)
                .set(&format!("{name}_ssim"), m.ssim)
                .set(&format!("{name}_nmse"), m.nmse);
        }
    }
    doc
}

fn eval_cmd(a: &EvalArgs, out: &mut impl Write) -> Result<()> {
    let (params, cfg) = load_model(&a.ckpt)?;
    let mut doc = cfg.to_doc();
    doc.set("data", a.data.display()).set("ckpt", a.ckpt.display());
    print_config(out, &doc)?;
    let data = load_data(&a.data)?;
    let report = evaluate(&params, &data, &cfg.model, cfg.variant).map_err(from_train)?;
    write!(out, "{}", format_eval_table(&report)).map_err(io_err)?;
    if let Some(path) = &a.report {
        create_parent(path)?;
        report_doc(&report, &a.data, &cfg)
            .save(path)
            .map_err(|e| CliError::Artifact(e.to_string()))?;
    }
    Ok(())
}

/// One row per variant: SR then Rec PSNR/SSIM/NMSE.
pub fn format_ablation(rows: &[(Variant, EvalReport)]) -> String {
    let mut s = format!(
        "{:<8}{:>10}{:>10}{:>12}{:>10}{:>10}{:>12}\n",
        "variant", "sr_psnr", "sr_ssim", "sr_nmse", "rec_psnr", "rec_ssim", "rec_nmse"
    );
    for (v, r) in rows {
        s.push_str(&format!("{:<8}{:>10.4}{:>10.4}{:>12.6}", v.to_string(), r.sr.psnr_db, r.sr.ssim, r.sr.nmse));
        match r.rec {
            Some(m) => s.push_str(&format!("{:>10.4}{:>10.4}{:>12.6}\n", m.psnr_db, m.ssim, m.nmse)),
            None => s.push_str(&format!("{:>10}{:>10}{:>12}\n", "-", "-", "-")),
        }
    }
    s
}

fn ablate_cmd(a: &AblateArgs, out: &mut impl Write) -> Result<()> {
    let base = load_train_config(a.config.as_deref())?;
    let mut doc = base.to_doc();
    doc.set("data", a.data.display())
        .set("variants", "no_rec,no_tt,full");
    print_config(out, &doc)?;
    let data = load_data(&a.data)?;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let cfg = TrainConfig { variant, ..base };
        eprintln!("training {variant}");
        let (params, _) = train_with(&data, &cfg, |_| {}).map_err(from_train)?;
        rows.push((variant, evaluate(&params, &data, &cfg.model, variant).map_err(from_train)?));
    }
    write!(out, "{}", format_ablation(&rows)).map_err(io_err)?;
    let psnr = |v: Variant| rows.iter().find(|(x, _)| *x == v).map(|(_, r)| r.sr.psnr_db).unwrap_or(f64::NAN);
    let (full, no_tt, no_rec) = (psnr(Variant::Full), psnr(Variant::NoTt), psnr(Variant::NoRec));
    writeln!(
        out,
        "# trend full >= no_tt >= no_rec: {}",
        if full >= no_tt && no_tt >= no_rec { "yes" } else { "no" }
    )
    .map_err(io_err)
}

/// Scale applied to `|x_sr - x|` before quantization, with the files written.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMaps {
    pub error_scale: f64,
    pub files: Vec<PathBuf>,
}

fn image_dims(t: &Tensor<f32>) -> (usize, usize) {
    let s = t.shape();
    (s[s.len() - 1], s[s.len() - 2])
}

/// Writes `PREFIX_{input,sr,rec,target,err}.pgm`. Images map `[0, 1]` to
/// `[0, 255]`; the error map is stretched so its maximum becomes 255.
pub fn write_error_maps(
    prefix: &Path,
    sample: &SampleTriple,
    x_sr: &Tensor<f32>,
    x_rec: Option<&Tensor<f32>>,
) -> std::io::Result<ErrorMaps> {
    if x_sr.shape() != sample.target_sr.shape() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("prediction {:?} vs target {:?}", x_sr.shape(), sample.target_sr.shape()),
        ));
    }
    let err: Vec<f32> = x_sr
        .data()
        .iter()
        .zip(sample.target_sr.data())
        .map(|(a, b)| (a - b).abs())
        .collect();
    let max = err.iter().copied().fold(0.0f32, f32::max) as f64;
    let error_scale = if max > 0.0 { 255.0 / max } else { 0.0 };

    let mut files = Vec::new();
    let mut emit = |name: &str, t: &Tensor<f32>, values: &[f32], scale: f64| -> std::io::Result<()> {
        let path = with_suffix(prefix, &format!("_{name}.pgm"));
        let (w, h) = image_dims(t);
        pgm::write(&path, w, h, &pgm::quantize(values, scale))?;
        files.push(path);
        Ok(())
    };
    emit("input", &sample.input_lr, sample.input_lr.data(), 255.0)?;
    emit("sr", x_sr, x_sr.data(), 255.0)?;
    if let Some(rec) = x_rec {
        emit("rec", rec, rec.data(), 255.0)?;
    }
    emit("target", &sample.target_sr, sample.target_sr.data(), 255.0)?;
    emit("err", &sample.target_sr, &err, error_scale)?;
    Ok(ErrorMaps { error_scale, files })
}

fn error_map_cmd(a: &ErrorMapArgs, out: &mut impl Write) -> Result<()> {
    let (params, cfg) = load_model(&a.ckpt)?;
    let mut doc = cfg.to_doc();
    doc.set("ckpt", a.ckpt.display())
        .set("sample", a.sample.display())
        .set("out", a.out.display());
    print_config(out, &doc)?;
    let sample = read_sample(&a.sample).map_err(|e| CliError::Artifact(format!("{}: {e}", a.sample.display())))?;
    if sample.scale != cfg.model.scale {
        return Err(CliError::Usage(format!(
            "sample scale {} does not match model scale {}",
            sample.scale, cfg.model.scale
        )));
    }
    let (x_sr, x_rec) = infer(&params, &cfg.model, cfg.variant, &sample.input_lr).map_err(|e| CliError::Usage(e.to_string()))?;
    create_parent(&a.out)?;
    let maps = write_error_maps(&a.out, &sample, &x_sr, x_rec.as_ref()).map_err(io_err)?;
    writeln!(out, "error scale: {:.6} (255 / max |x_sr - x|)", maps.error_scale).map_err(io_err)?;
    for f in &maps.files {
        writeln!(out, "wrote {}", f.display()).map_err(io_err)?;
    }
    Ok(())
}
