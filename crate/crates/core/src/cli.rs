//! The `rgmorph` command line.
//!
//! Every subcommand takes its settings from flags, falling back to an
//! optional `--config` file of `key=value` lines and then to built-in
//! defaults. Exit status is 0 on success, 2 on usage errors and 1 on
//! runtime failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::datapipe::{build_dataset, synth_raw, AugFactors, Dataset, Image, Split};
use crate::dnnae::{
    evaluate, train_with, write_metrics_csv, ArchSpec, DnnaeModel, LabeledImages, LossMode,
    Regularizer, TrainConfig,
};
use crate::error::Error;
use crate::gmm::{em_fit, gmm_sample, CovType, EmOptions};
use crate::persistence::{
    export_pgm, load_checkpoint, load_dataset, load_gmm, read_pgm, save_checkpoint, save_dataset,
    save_gmm, write_atomic,
};
use crate::rng::RngStream;
use crate::{Label, IMAGE_SIDE};

/// Keys accepted in a `--config` file.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "epochs",
    "batch_size",
    "code_len",
    "widths",
    "loss_mode",
    "regularizer",
    "keep_prob",
    "aug_factor_fri",
    "aug_factor_frii",
    "gmm_cov",
    "gmm_k",
    "data",
    "ckpt",
    "gmm",
    "out",
    "out_dir",
    "metrics",
];

pub const DEFAULT_SWEEP: &[usize] = &[16, 32, 64, 128, 256, 512];

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(
    name = "rgmorph",
    version,
    about = "Radio galaxy morphology generation"
)]
pub struct Cli {
    /// File of `key=value` settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic FRI/FRII dataset.
    Synth(SynthArgs),
    /// Build a dataset from PGM cutouts and a labels CSV.
    Prep(PrepArgs),
    /// Train the autoencoder.
    Train(TrainArgs),
    /// Write code vectors for one split as CSV.
    Encode(EncodeArgs),
    /// Fit a Gaussian mixture to one class's training codes.
    FitGmm(FitGmmArgs),
    /// Sample codes from a mixture and decode them into PGM images.
    Generate(GenerateArgs),
    /// Write originals and reconstructions as PGM images.
    Reconstruct(ReconstructArgs),
    /// Report losses and accuracy on a split as CSV.
    Eval(EvalArgs),
    /// Train one model per code length and report test losses.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Default)]
pub struct AugOpts {
    /// Stored copies per FRI source (1 = no augmentation).
    #[arg(long)]
    pub aug_factor_fri: Option<u32>,
    /// Stored copies per FRII source (1 = no augmentation).
    #[arg(long)]
    pub aug_factor_frii: Option<u32>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
    pub n_per_class: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub aug: AugOpts,
}

#[derive(Args, Debug)]
pub struct PrepArgs {
    /// Directory holding the PGM files named in the labels CSV.
    #[arg(long)]
    pub images: PathBuf,
    /// CSV with columns `filename,label`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub aug: AugOpts,
}

#[derive(Args, Debug, Default)]
pub struct ModelOpts {
    /// Encoder hidden widths, comma separated; the decoder mirrors them.
    #[arg(long)]
    pub widths: Option<String>,
    #[arg(long)]
    pub code_len: Option<usize>,
    /// `mse` or `mse_ce`.
    #[arg(long = "loss")]
    pub loss_mode: Option<String>,
    /// `bn`, `dropout` or `none`.
    #[arg(long = "reg")]
    pub regularizer: Option<String>,
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Continue from this checkpoint; its architecture wins over flags.
    #[arg(long, requires = "start_epoch")]
    pub resume: Option<PathBuf>,
    /// Epoch index the resumed run starts at; `--epochs` stays the total.
    #[arg(long)]
    pub start_epoch: Option<usize>,
    #[command(flatten)]
    pub model: ModelOpts,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "train", value_parser = parse_split)]
    pub split: Split,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitGmmArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_label)]
    pub class: Label,
    #[arg(long)]
    pub k: Option<usize>,
    /// `diag` or `full`.
    #[arg(long)]
    pub cov: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub gmm: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Class name used for output file names.
    #[arg(long, value_parser = parse_label)]
    pub class: Label,
    #[arg(short = 'n', long = "count", default_value_t = 8)]
    pub n: usize,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Maximum number of images.
    #[arg(long, default_value_t = 16)]
    pub limit: usize,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Code lengths to train, comma separated.
    #[arg(long)]
    pub code_lens: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOpts,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_label(s: &str) -> Result<Label, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn parse_loss_mode(s: &str) -> Result<LossMode, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "mse" => Ok(LossMode::MseOnly),
        "mse_ce" | "mse+ce" => Ok(LossMode::MsePlusCe),
        other => Err(format!(
            "unknown loss mode {other:?} (expected mse or mse_ce)"
        )),
    }
}

pub fn parse_regularizer(s: &str) -> Result<Regularizer, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "bn" => Ok(Regularizer::Bn),
        "dropout" => Ok(Regularizer::Dropout),
        "none" => Ok(Regularizer::None),
        other => Err(format!(
            "unknown regularizer {other:?} (expected bn, dropout or none)"
        )),
    }
}

pub fn parse_cov_type(s: &str) -> Result<CovType, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "diag" => Ok(CovType::Diag),
        "full" => Ok(CovType::Full),
        other => Err(format!(
            "unknown covariance type {other:?} (expected diag or full)"
        )),
    }
}

pub fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    let out: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad list entry {p:?}: {e}"))
        })
        .collect::<Result<_, _>>()?;
    if out.is_empty() || out.contains(&0) {
        return Err(format!("list {s:?} must hold positive integers"));
    }
    Ok(out)
}

fn parse_from_str<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse::<T>().map_err(|e| e.to_string())
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    /// Parse `key=value` lines; blank lines and `#` comments are ignored,
    /// unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got {raw:?}", i + 1))?;
            let key = k.trim().to_string();
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(format!("line {}: unknown key {key:?}", i + 1));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    pub fn get<T>(
        &self,
        key: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> CliResult<Option<T>> {
        debug_assert!(CONFIG_KEYS.contains(&key));
        self.values
            .get(key)
            .map(|v| parse(v).map_err(|e| usage(format!("config key {key}: {e}"))))
            .transpose()
    }

    /// Flag value, else config value, else `default`.
    fn pick<T>(
        &self,
        flag: Option<T>,
        key: &str,
        parse: impl Fn(&str) -> Result<T, String>,
        default: T,
    ) -> CliResult<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key, parse)?.unwrap_or(default)),
        }
    }

    fn path(&self, flag: Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
        match flag {
            Some(p) => Ok(p),
            None => self.get(key, |s| Ok(PathBuf::from(s)))?.ok_or_else(|| {
                usage(format!(
                    "missing --{} (or `{key}` in the config)",
                    key.replace('_', "-")
                ))
            }),
        }
    }

    fn path_or(&self, flag: Option<PathBuf>, key: &str, default: &str) -> CliResult<PathBuf> {
        self.pick(flag, key, |s| Ok(PathBuf::from(s)), PathBuf::from(default))
    }

    fn seed(&self, flag: Option<u64>) -> CliResult<u64> {
        self.pick(flag, "seed", parse_from_str, 0)
    }

    fn aug(&self, a: &AugOpts) -> CliResult<AugFactors> {
        let f = AugFactors {
            fri: self.pick(a.aug_factor_fri, "aug_factor_fri", parse_from_str, 1)?,
            frii: self.pick(a.aug_factor_frii, "aug_factor_frii", parse_from_str, 1)?,
        };
        if f.fri == 0 || f.frii == 0 {
            return Err(usage("augmentation factors must be at least 1"));
        }
        Ok(f)
    }
}

/// Fully resolved model and training settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSettings {
    pub arch: ArchSpec,
    pub train: TrainConfig,
}

fn resolve_model(cfg: &FileConfig, m: &ModelOpts) -> CliResult<ModelSettings> {
    let widths = match &m.widths {
        Some(s) => parse_list(s).map_err(usage)?,
        None => cfg
            .get("widths", parse_list)?
            .unwrap_or_else(|| vec![2048, 1024, 1024]),
    };
    let code_len = cfg.pick(m.code_len, "code_len", parse_from_str, 256)?;
    let regularizer = match &m.regularizer {
        Some(s) => parse_regularizer(s).map_err(usage)?,
        None => cfg
            .get("regularizer", parse_regularizer)?
            .unwrap_or(Regularizer::Bn),
    };
    let loss_mode = match &m.loss_mode {
        Some(s) => parse_loss_mode(s).map_err(usage)?,
        None => cfg
            .get("loss_mode", parse_loss_mode)?
            .unwrap_or(LossMode::MsePlusCe),
    };
    let keep_prob = cfg.pick(m.keep_prob, "keep_prob", parse_from_str, 0.5)?;
    let epochs = cfg.pick(m.epochs, "epochs", parse_from_str, 200)?;
    let batch_size = cfg.pick(m.batch_size, "batch_size", parse_from_str, 100)?;
    let seed = cfg.seed(m.seed)?;
    if code_len == 0 || epochs == 0 || batch_size == 0 {
        return Err(usage(
            "code length, epochs and batch size must be at least 1",
        ));
    }
    let mut arch = ArchSpec::symmetric(widths, code_len, regularizer);
    arch.keep_prob = keep_prob;
    arch.validate().map_err(|e| usage(e.to_string()))?;
    Ok(ModelSettings {
        arch,
        train: TrainConfig {
            epochs,
            batch_size,
            seed,
            loss_mode,
            ..TrainConfig::default()
        },
    })
}

/// Parse `args` (program name first), run the command, return the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("rgmorph: {e}");
            2
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("rgmorph: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(&cfg, a),
        Command::Prep(a) => cmd_prep(&cfg, a),
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Encode(a) => cmd_encode(&cfg, a),
        Command::FitGmm(a) => cmd_fit_gmm(&cfg, a),
        Command::Generate(a) => cmd_generate(&cfg, a),
        Command::Reconstruct(a) => cmd_reconstruct(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::Sweep(a) => cmd_sweep(&cfg, a),
    }
}

/// `n_per_class` raw synthetic sources of each class, FRI first.
pub fn synth_sources(n_per_class: usize, seed: u64) -> Vec<(Image, Label)> {
    let mut out = Vec::with_capacity(2 * n_per_class);
    for label in Label::ALL {
        let mut rng = RngStream::for_parts(seed, &[0x5717, label.index() as u64]);
        out.extend((0..n_per_class).map(|_| (synth_raw(label, &mut rng), label)));
    }
    out
}

fn cmd_synth(cfg: &FileConfig, a: SynthArgs) -> CliResult<()> {
    let out = cfg.path_or(a.out, "out", "data.rgds")?;
    let seed = cfg.seed(a.seed)?;
    let factors = cfg.aug(&a.aug)?;
    let ds = build_dataset(&synth_sources(a.n_per_class as usize, seed), factors, seed)?;
    save_dataset(&out, &ds)?;
    log::info!("wrote {} records to {}", ds.len(), out.display());
    Ok(())
}

fn cmd_prep(cfg: &FileConfig, a: PrepArgs) -> CliResult<()> {
    let out = cfg.path_or(a.out, "out", "data.rgds")?;
    let seed = cfg.seed(a.seed)?;
    let factors = cfg.aug(&a.aug)?;
    let mut reader = csv::Reader::from_path(&a.labels).map_err(|e| {
        CliError::Runtime(Error::validation(format!("{}: {e}", a.labels.display())))
    })?;
    let mut raw = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::validation(format!("{}: {e}", a.labels.display())))?;
        let (Some(file), Some(label)) = (row.get(0), row.get(1)) else {
            return Err(Error::validation(format!(
                "{}: rows need filename and label columns",
                a.labels.display()
            ))
            .into());
        };
        let label: Label = label.parse()?;
        raw.push((read_pgm(&a.images.join(file.trim()))?, label));
    }
    let ds = build_dataset(&raw, factors, seed)?;
    save_dataset(&out, &ds)?;
    log::info!("wrote {} records to {}", ds.len(), out.display());
    Ok(())
}

fn load_splits(path: &Path) -> CliResult<(LabeledImages, LabeledImages, LabeledImages)> {
    let ds = load_dataset(path)?;
    check_side(&ds)?;
    Ok((
        ds.subset(&[Split::Train]),
        ds.subset(&[Split::Val]),
        ds.subset(&[Split::Test]),
    ))
}

fn check_side(ds: &Dataset) -> CliResult<()> {
    if (ds.height as usize, ds.width as usize) != (IMAGE_SIDE, IMAGE_SIDE) {
        return Err(Error::validation(format!(
            "dataset images are {}x{}, expected {IMAGE_SIDE}x{IMAGE_SIDE}",
            ds.height, ds.width
        ))
        .into());
    }
    Ok(())
}

fn cmd_train(cfg: &FileConfig, a: TrainArgs) -> CliResult<()> {
    let data = cfg.path(a.data, "data")?;
    let out = cfg.path_or(a.out, "ckpt", "model.dnae")?;
    let metrics_path = cfg.path_or(a.metrics, "metrics", "metrics.csv")?;
    let settings = resolve_model(cfg, &a.model)?;
    let mut tc = settings.train;
    let mut model = match &a.resume {
        Some(p) => {
            let start = a.start_epoch.unwrap_or(0);
            if start >= tc.epochs {
                return Err(usage(format!(
                    "start epoch {start} must be below the total of {} epochs",
                    tc.epochs
                )));
            }
            tc.epochs -= start;
            tc.start_epoch = start;
            load_checkpoint(p)?
        }
        None => DnnaeModel::new(settings.arch, tc.seed)?,
    };
    let (train_set, val_set, _) = load_splits(&data)?;
    let history = train_with(&mut model, &train_set, &val_set, &tc, |_, _| Ok(()))?;
    save_checkpoint(&out, &model, true)?;
    write_metrics_csv(&metrics_path, &history)?;
    Ok(())
}

fn cmd_encode(cfg: &FileConfig, a: EncodeArgs) -> CliResult<()> {
    let model = load_checkpoint(&cfg.path(a.ckpt, "ckpt")?)?;
    let ds = load_dataset(&cfg.path(a.data, "data")?)?;
    check_side(&ds)?;
    let out = cfg.path_or(a.out, "out", "codes.csv")?;
    let chosen: Vec<_> = ds.samples.iter().filter(|s| s.split == a.split).collect();
    let codes = model.encode(&ds.subset(&[a.split]).pixels)?;
    let mut text = String::from("origin_id,aug_index,label");
    for j in 0..codes.ncols() {
        write!(text, ",c{j}").unwrap();
    }
    text.push('\n');
    for (s, row) in chosen.iter().zip(codes.rows()) {
        write!(text, "{},{},{}", s.origin_id, s.aug_index, s.label).unwrap();
        for v in row {
            write!(text, ",{v}").unwrap();
        }
        text.push('\n');
    }
    write_atomic(&out, text.as_bytes())?;
    Ok(())
}

fn cmd_fit_gmm(cfg: &FileConfig, a: FitGmmArgs) -> CliResult<()> {
    let model = load_checkpoint(&cfg.path(a.ckpt, "ckpt")?)?;
    let ds = load_dataset(&cfg.path(a.data, "data")?)?;
    check_side(&ds)?;
    let out = cfg.path_or(
        a.out,
        "gmm",
        &format!("{}.gmm1", a.class.name().to_ascii_lowercase()),
    )?;
    let k = cfg.pick(a.k, "gmm_k", parse_from_str, 3)?;
    let cov_type = match &a.cov {
        Some(s) => parse_cov_type(s).map_err(usage)?,
        None => cfg.get("gmm_cov", parse_cov_type)?.unwrap_or(CovType::Diag),
    };
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let set = ds.select(|s| s.split == Split::Train && s.label == a.class);
    let codes = model.encode(&set.pixels)?;
    let opts = EmOptions {
        seed: cfg.seed(a.seed)?,
        cov_type,
        ..EmOptions::default()
    };
    let fit = em_fit(&codes, k, &opts)?;
    log::info!(
        "{}: {} iterations, converged {}, mean log-likelihood {:.4}",
        a.class,
        fit.iterations,
        fit.converged,
        fit.log_lik_trace.last().copied().unwrap_or(f64::NAN)
    );
    save_gmm(&out, &fit.model)?;
    Ok(())
}

fn cmd_generate(cfg: &FileConfig, a: GenerateArgs) -> CliResult<()> {
    if a.n == 0 {
        return Err(usage("-n must be at least 1"));
    }
    let gmm = load_gmm(&cfg.path(a.gmm, "gmm")?)?;
    let model = load_checkpoint(&cfg.path(a.ckpt, "ckpt")?)?;
    let out_dir = cfg.path_or(a.out_dir, "out_dir", "generated")?;
    if gmm.dim() != model.arch.code_len {
        return Err(Error::shape(format!(
            "mixture has dimension {}, model code length is {}",
            gmm.dim(),
            model.arch.code_len
        ))
        .into());
    }
    let seed = cfg.seed(a.seed)?;
    let mut rng = RngStream::for_parts(seed, &[0x6E4, a.class.index() as u64]);
    let images = generate_images(&model, &gmm, a.n, &mut rng)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let stem = a.class.name().to_ascii_lowercase();
    for (i, img) in images.iter().enumerate() {
        export_pgm(img, &out_dir.join(format!("{stem}_{i:04}.pgm")))?;
    }
    Ok(())
}

/// Sample `n` codes, clamp them at zero (codes are ReLU outputs) and decode.
pub fn generate_images(
    model: &DnnaeModel,
    gmm: &crate::gmm::GmmModel,
    n: usize,
    rng: &mut RngStream,
) -> crate::Result<Vec<Image>> {
    let codes = gmm_sample(gmm, n, rng)?.mapv(|v| v.max(0.0));
    let recon = model.decode(&codes)?;
    Ok(rows_to_images(&recon))
}

fn rows_to_images(m: &crate::neural::Matrix) -> Vec<Image> {
    m.rows()
        .into_iter()
        .map(|r| {
            Image::from_shape_vec((IMAGE_SIDE, IMAGE_SIDE), r.to_vec())
                .expect("rows are IMAGE_SIDE squared long")
        })
        .collect()
}

fn cmd_reconstruct(cfg: &FileConfig, a: ReconstructArgs) -> CliResult<()> {
    let model = load_checkpoint(&cfg.path(a.ckpt, "ckpt")?)?;
    let ds = load_dataset(&cfg.path(a.data, "data")?)?;
    check_side(&ds)?;
    let out_dir = cfg.path_or(a.out_dir, "out_dir", "reconstructions")?;
    let set = ds.subset(&[a.split]);
    let n = set.len().min(a.limit);
    if n == 0 {
        return Err(Error::validation("no images to reconstruct").into());
    }
    let set = set.slice(0, n);
    let (recon, _) = model.infer(&set.pixels)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let originals = rows_to_images(&set.pixels);
    for (i, (orig, rec)) in originals.iter().zip(rows_to_images(&recon)).enumerate() {
        let stem = format!("{i:04}_{}", set.labels[i].name().to_ascii_lowercase());
        export_pgm(orig, &out_dir.join(format!("{stem}_orig.pgm")))?;
        export_pgm(&rec, &out_dir.join(format!("{stem}_recon.pgm")))?;
    }
    Ok(())
}

fn cmd_eval(cfg: &FileConfig, a: EvalArgs) -> CliResult<()> {
    let model = load_checkpoint(&cfg.path(a.ckpt, "ckpt")?)?;
    let ds = load_dataset(&cfg.path(a.data, "data")?)?;
    check_side(&ds)?;
    let out = cfg.path_or(a.out, "out", "eval.csv")?;
    let set = ds.subset(&[a.split]);
    let r = evaluate(&model, &set)?;
    let class = |l: Label| {
        r.per_class_mse
            .get(&l)
            .map(|v| v.to_string())
            .unwrap_or_default()
    };
    let text = format!(
        "split,n,mse,ce,combined,mse_fri,mse_frii,accuracy\n{:?},{},{},{},{},{},{},{}\n",
        a.split,
        set.len(),
        r.mse,
        r.ce,
        r.combined,
        class(Label::Fri),
        class(Label::Frii),
        r.accuracy
    )
    .to_ascii_lowercase();
    write_atomic(&out, text.as_bytes())?;
    Ok(())
}

fn cmd_sweep(cfg: &FileConfig, a: SweepArgs) -> CliResult<()> {
    let data = cfg.path(a.data, "data")?;
    let out = cfg.path_or(a.out, "out", "sweep.csv")?;
    let lens = match &a.code_lens {
        Some(s) => parse_list(s).map_err(usage)?,
        None => DEFAULT_SWEEP.to_vec(),
    };
    let settings = resolve_model(cfg, &a.model)?;
    let (train_set, val_set, test_set) = load_splits(&data)?;
    let mut text = String::from("code_len,test_mse,test_mse_fri,test_mse_frii\n");
    for &len in &lens {
        let mut arch = settings.arch.clone();
        arch.code_len = len;
        let mut model = DnnaeModel::new(arch, settings.train.seed)?;
        train_with(&mut model, &train_set, &val_set, &settings.train, |_, _| {
            Ok(())
        })?;
        let r = evaluate(&model, &test_set)?;
        let class = |l: Label| {
            r.per_class_mse
                .get(&l)
                .map(|v| v.to_string())
                .unwrap_or_default()
        };
        writeln!(
            text,
            "{len},{},{},{}",
            r.mse,
            class(Label::Fri),
            class(Label::Frii)
        )
        .unwrap();
        log::info!("code length {len}: test mse {:.4}", r.mse);
    }
    write_atomic(&out, text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_comments_and_rejects_unknown_keys() {
        let c = FileConfig::parse("# header\nseed = 4 # trailing\n\nepochs=3\n").unwrap();
        assert_eq!(c.get("seed", parse_from_str::<u64>).unwrap(), Some(4));
        assert_eq!(c.get("epochs", parse_from_str::<usize>).unwrap(), Some(3));
        assert!(FileConfig::parse("sead=4")
            .unwrap_err()
            .contains("unknown key"));
        assert!(FileConfig::parse("seed 4").is_err());
    }

    #[test]
    fn flags_override_config() {
        let c = FileConfig::parse("code_len=32\nepochs=7\nregularizer=bn").unwrap();
        let opts = ModelOpts {
            code_len: Some(16),
            widths: Some("8,4".into()),
            ..ModelOpts::default()
        };
        let s = resolve_model(&c, &opts).unwrap();
        assert_eq!(s.arch.code_len, 16);
        assert_eq!(s.train.epochs, 7);
        assert_eq!(s.arch.encoder_widths, vec![8, 4]);
        assert_eq!(s.arch.decoder_widths, vec![4, 8]);
    }

    #[test]
    fn enum_parsers() {
        assert_eq!(parse_loss_mode("mse_ce"), Ok(LossMode::MsePlusCe));
        assert_eq!(parse_loss_mode("MSE"), Ok(LossMode::MseOnly));
        assert_eq!(parse_regularizer("dropout"), Ok(Regularizer::Dropout));
        assert!(parse_regularizer("l2").is_err());
        assert_eq!(parse_list("16, 32"), Ok(vec![16, 32]));
        assert!(parse_list("16,0").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_cli(["rgmorph", "frobnicate"]), 2);
        assert_eq!(
            run_cli([
                "rgmorph", "generate", "--gmm", "x", "--ckpt", "y", "--class", "fri", "-n", "0"
            ]),
            2
        );
        assert_eq!(
            run_cli(["rgmorph", "train", "--widths", "8,x", "--data", "d"]),
            2
        );
    }

    #[test]
    fn missing_file_exits_1() {
        assert_eq!(
            run_cli([
                "rgmorph",
                "eval",
                "--ckpt",
                "/nonexistent/m.dnae",
                "--data",
                "d"
            ]),
            1
        );
    }
}
