//! The `ssvep` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssvep_core::nnet::{train_with, ModelConfig, TrainSet};
use ssvep_core::synthgen::generate_dataset;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{ConfigError, RunConfig};
use crate::datastore::{load_dataset, save_dataset, sha256_hex, validate_file, FormatError};
use crate::harness::{compare_reports, run_loso, write_reports, ClassifierReport, HarnessError, Method};
use crate::manifest::Manifest;
use crate::outputs::{embed, write_kernel_spectra, write_phase_report, write_tsne_points, OutputError};
use crate::pipeline::{looks_preprocessed, preprocess};

pub const SYNTH_FILE: &str = "synth.ssvepds";
pub const PREPROCESSED_FILE: &str = "preprocessed.ssvepds";
pub const MODEL_FILE: &str = "model.ssvepnn";

#[derive(Debug, Parser)]
#[command(name = "ssvep", version, about = "SSVEP decoding: synthesis, preprocessing, LOSO evaluation and analysis")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed applied to every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Root for relative dataset paths and default output directory.
    #[arg(long, global = true, env = "SSVEP_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    Kernels,
    Tsne,
    Phase,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic raw dataset.
    Synth,
    /// Band-pass, decimate and segment a raw dataset.
    Preprocess {
        input: PathBuf,
        /// Process input that already looks preprocessed.
        #[arg(long)]
        force: bool,
    },
    /// Train the network on a preprocessed dataset.
    Train {
        dataset: PathBuf,
        /// Leave this subject out of training.
        #[arg(long)]
        holdout: Option<usize>,
    },
    /// Leave-one-subject-out evaluation of the selected methods.
    Evaluate {
        dataset: PathBuf,
        /// Comma-separated subset of cnn, cca, combined_cca.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Tabulate saved reports against each other.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Kernel spectra, t-SNE of hidden activations, per-segment phase.
    Analyze {
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "phase")]
        what: Vec<What>,
    },
    /// Check a dataset file.
    Validate { file: PathBuf },
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl ToString) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }
}

fn core_code(e: &ssvep_core::Error) -> u8 {
    match e {
        ssvep_core::Error::Divergence { .. } | ssvep_core::Error::Degenerate(_) => 1,
        _ => 2,
    }
}

impl From<ssvep_core::Error> for CliError {
    fn from(e: ssvep_core::Error) -> Self {
        Self {
            code: core_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        Self::invalid(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::invalid(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::Core(c) => core_code(c),
            HarnessError::UnknownMethod(_) | HarnessError::Config(_) | HarnessError::Mismatch(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<OutputError> for CliError {
    fn from(e: OutputError) -> Self {
        match e {
            OutputError::Core(c) => c.into(),
            other => Self::runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e)
    }
}

struct Ctx {
    common: Common,
    config: RunConfig,
    threads: usize,
    started: Instant,
}

impl Ctx {
    fn input(&self, p: &Path) -> PathBuf {
        match &self.common.data_dir {
            Some(root) if p.is_relative() && !p.exists() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self
            .common
            .out
            .clone()
            .or_else(|| self.common.data_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn manifest(&self, command: &str, dir: &Path, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<(), CliError> {
        Manifest::new(command, &self.config, self.threads).finish(
            dir,
            inputs,
            outputs,
            self.started.elapsed().as_secs_f64(),
        )?;
        Ok(())
    }

    fn load(&self, p: &Path) -> Result<(PathBuf, ssvep_core::dataset::Dataset), CliError> {
        let path = self.input(p);
        let ds = load_dataset(&path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        Ok((path, ds))
    }

    /// Network configuration with the dataset's dimensions filled in.
    fn fit_network(&mut self, ds: &ssvep_core::dataset::Dataset) -> Result<ModelConfig, CliError> {
        let (c, t, _) = ds.layout().ok_or_else(|| CliError::invalid("dataset has no trials"))?;
        let net = ModelConfig {
            channels: c,
            samples: t,
            classes: ds.stimulus.len(),
            ..self.config.model.network.clone()
        };
        net.validate()?;
        self.config.model.network = net.clone();
        Ok(net)
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        config = config.with_seed(seed);
    }
    let threads = cli
        .common
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::invalid("--threads must be at least 1"));
    }
    let mut ctx = Ctx {
        common: cli.common,
        config,
        threads,
        started: Instant::now(),
    };
    match cli.command {
        Command::Synth => synth(&ctx),
        Command::Preprocess { input, force } => preprocess_cmd(&ctx, &input, force),
        Command::Train { dataset, holdout } => train_cmd(&mut ctx, &dataset, holdout),
        Command::Evaluate { dataset, methods } => evaluate(&mut ctx, &dataset, &methods),
        Command::Compare { reports } => compare(&ctx, &reports),
        Command::Analyze { dataset, model, what } => analyze(&ctx, dataset.as_deref(), model.as_deref(), &what),
        Command::Validate { file } => validate(&ctx, &file),
    }
}

fn synth(ctx: &Ctx) -> Result<(), CliError> {
    let ds = generate_dataset(&ctx.config.synth)?;
    let dir = ctx.out_dir()?;
    let path = dir.join(SYNTH_FILE);
    save_dataset(&ds, &path).map_err(CliError::runtime)?;
    ctx.manifest("synth", &dir, &[], std::slice::from_ref(&path))?;
    println!("wrote {} ({} trials)", path.display(), ds.len());
    Ok(())
}

fn preprocess_cmd(ctx: &Ctx, input: &Path, force: bool) -> Result<(), CliError> {
    let (in_path, ds) = ctx.load(input)?;
    if ds.is_empty() {
        eprintln!("warning: {} holds no trials", in_path.display());
    } else if looks_preprocessed(&ds, &ctx.config.signal) && !force {
        return Err(CliError::invalid(format!(
            "{} already holds segment-length trials; pass --force to process it again",
            in_path.display()
        )));
    }
    let out = preprocess(&ds, &ctx.config.signal)?;
    let dir = ctx.out_dir()?;
    let path = dir.join(PREPROCESSED_FILE);
    save_dataset(&out, &path).map_err(CliError::runtime)?;
    ctx.manifest("preprocess", &dir, &[in_path], std::slice::from_ref(&path))?;
    println!("wrote {} ({} segments)", path.display(), out.len());
    Ok(())
}

fn train_cmd(ctx: &mut Ctx, dataset: &Path, holdout: Option<usize>) -> Result<(), CliError> {
    let (in_path, mut ds) = ctx.load(dataset)?;
    if let Some(s) = holdout {
        ds.trials.retain(|t| t.subject != s);
    }
    let net = ctx.fit_network(&ds)?;
    let class_ids: Vec<usize> = ds.stimulus.class_ids().collect();
    let mut inputs = Vec::with_capacity(ds.len() * net.channels * net.samples);
    let mut labels = Vec::with_capacity(ds.len());
    for t in &ds.trials {
        inputs.extend_from_slice(&t.data);
        labels.push(
            class_ids
                .iter()
                .position(|&c| c == t.class_id)
                .ok_or(ssvep_core::Error::UnknownClass(t.class_id))?,
        );
    }
    let total = ctx.config.model.train.epochs;
    let outcome = train_with(
        &net,
        &ctx.config.model.train,
        TrainSet {
            inputs: &inputs,
            labels: &labels,
        },
        |epoch, loss| eprintln!("epoch {}/{total}: loss {loss:.5}", epoch + 1),
    )?;
    let dir = ctx.out_dir()?;
    let model_path = dir.join(MODEL_FILE);
    save_checkpoint(&outcome.model, &model_path).map_err(CliError::runtime)?;
    let curve_path = dir.join("loss_curve.csv");
    let mut curve = String::from("epoch,loss\n");
    for (i, l) in outcome.loss_curve.iter().enumerate() {
        curve.push_str(&format!("{},{}\n", i + 1, l));
    }
    fs::write(&curve_path, curve)?;
    ctx.manifest("train", &dir, &[in_path], &[model_path.clone(), curve_path])?;
    println!("wrote {}", model_path.display());
    Ok(())
}

fn evaluate(ctx: &mut Ctx, dataset: &Path, methods: &[String]) -> Result<(), CliError> {
    let methods = if methods.is_empty() {
        Method::parse_list(&ctx.config.harness.methods)?
    } else {
        Method::parse_list(methods)?
    };
    ctx.config.harness.methods = methods.iter().map(|m| m.name().to_string()).collect();
    let (in_path, ds) = ctx.load(dataset)?;
    ctx.fit_network(&ds)?;
    let digest = sha256_hex(&fs::read(&in_path)?);
    let reports = run_loso(&ds, &methods, &ctx.config, ctx.threads, Some(digest))?;
    let dir = ctx.out_dir()?;
    let written = write_reports(&dir, &reports)?;
    ctx.manifest("evaluate", &dir, &[in_path], &written)?;
    print!("{}", compare_reports(&reports)?.to_table());
    Ok(())
}

fn compare(ctx: &Ctx, paths: &[PathBuf]) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?;
        let r: ClassifierReport =
            serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?;
        reports.push(r);
    }
    let cmp = compare_reports(&reports)?;
    let dir = ctx.out_dir()?;
    let csv_path = dir.join("comparison.csv");
    fs::write(&csv_path, cmp.to_csv()?)?;
    let txt_path = dir.join("comparison.txt");
    fs::write(&txt_path, cmp.to_table())?;
    ctx.manifest("compare", &dir, paths, &[csv_path, txt_path])?;
    print!("{}", cmp.to_table());
    Ok(())
}

fn analyze(ctx: &Ctx, dataset: Option<&Path>, model: Option<&Path>, what: &[What]) -> Result<(), CliError> {
    let dir = ctx.out_dir()?;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let ds = match dataset {
        Some(p) => {
            let (path, ds) = ctx.load(p)?;
            inputs.push(path);
            Some(ds)
        }
        None => None,
    };
    let net = match model {
        Some(p) => {
            let path = ctx.input(p);
            let m = load_checkpoint(&path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
            inputs.push(path);
            Some(m)
        }
        None => None,
    };
    let need_ds = || ds.as_ref().ok_or_else(|| CliError::invalid("this analysis needs a dataset"));
    let need_model = || net.as_ref().ok_or_else(|| CliError::invalid("this analysis needs --model"));
    for w in what {
        match w {
            What::Kernels => {
                let m = need_model()?;
                let fs = ds.as_ref().and_then(|d| d.layout()).map_or(256.0, |l| l.2);
                let path = dir.join("kernels_spectrum.csv");
                write_kernel_spectra(m, fs, &path)?;
                outputs.push(path);
            }
            What::Tsne => {
                let (m, d) = (need_model()?, need_ds()?);
                let limit = ctx.config.analysis.max_points.unwrap_or(usize::MAX);
                let trials: Vec<_> = d.trials.iter().take(limit).collect();
                let e = embed(m, &trials, ctx.config.analysis.layer, &ctx.config.analysis.tsne)?;
                let path = dir.join("tsne_points.csv");
                write_tsne_points(&e, &path)?;
                outputs.push(path);
                println!("t-SNE: {} points, KL {:.4}", e.points.len(), e.kl);
            }
            What::Phase => {
                let path = dir.join("phase_amp.csv");
                write_phase_report(need_ds()?, &path)?;
                outputs.push(path);
            }
        }
    }
    ctx.manifest("analyze", &dir, &inputs, &outputs)?;
    for p in &outputs {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn validate(ctx: &Ctx, file: &Path) -> Result<(), CliError> {
    let path = ctx.input(file);
    let s = validate_file(&path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    println!(
        "{}: valid, {} trials x {} channels x {} samples, {} subjects, payload sha256 {}",
        path.display(),
        s.shape[0],
        s.shape[1],
        s.shape[2],
        s.subjects,
        s.payload_sha256
    );
    Ok(())
}
