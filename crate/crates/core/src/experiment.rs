//! Experiment orchestration: configuration, the per-factor training suite
//! and the `results.csv` / `summary.txt` reports.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::mnist_io::{self, LabeledDataset, Split};
use crate::network::{
    self, count_parameters, init_model, save_model, CheckpointRecord, MlpModel, TrainConfig,
    DEFAULT_BATCH_SIZE, DEFAULT_CHECKPOINTS, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE,
};
use crate::resample::{
    InterpolationKernel, ResampleSpec, Resampler, Window, DEFAULT_DECIMATION,
    DEFAULT_OVERSAMPLE_FACTORS, DEFAULT_TAPS_PER_PHASE,
};
use crate::spectral;
use crate::stats::{self, CorrelationResult, Pairing, SeriesDiagnostics};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CSV_HEADER: &str =
    "oversample_factor,epoch,test_error,crest_db_layer1,crest_db_layer2,crest_db_layer3";
const UNPACKED_LEN: usize = mnist_io::MNIST_SIDE * mnist_io::MNIST_SIDE;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub oversample_factors: Vec<usize>,
    pub epochs: usize,
    pub checkpoint_epochs: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    /// Decimation and kernel settings; `oversample_factor` is set per model.
    pub resample: ResampleSpec,
    pub dropout_rate: f64,
    pub pairing: Pairing,
    pub save_models: bool,
}

impl ExperimentConfig {
    /// The full-scale schedule: factors 1..16, 400 sweeps, five checkpoints.
    pub fn full_schedule(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            output_dir: PathBuf::from("results"),
            oversample_factors: DEFAULT_OVERSAMPLE_FACTORS.to_vec(),
            epochs: DEFAULT_EPOCHS,
            checkpoint_epochs: DEFAULT_CHECKPOINTS.to_vec(),
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            train_subset: None,
            test_subset: None,
            resample: ResampleSpec::default(),
            dropout_rate: 0.0,
            pairing: Pairing::default(),
            save_models: false,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            checkpoint_epochs: self.checkpoint_epochs.clone(),
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            dropout_rate: self.dropout_rate,
        }
    }

    /// Per-model seed; keeps each factor's initialization independent.
    pub fn model_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add(k as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.oversample_factors.is_empty() {
            return Err(Error::Config(
                "oversample: at least one factor is required".into(),
            ));
        }
        if self.oversample_factors.contains(&0) {
            return Err(Error::Config("oversample: factors must be >= 1".into()));
        }
        let mut sorted = self.oversample_factors.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.oversample_factors.len() {
            return Err(Error::Config("oversample: duplicate factor".into()));
        }
        let d = self.resample.decimation_factor;
        if d == 0 || !UNPACKED_LEN.is_multiple_of(d) {
            return Err(Error::Config(format!(
                "decimation: {d} does not divide {UNPACKED_LEN}"
            )));
        }
        self.resample.validate()?;
        self.train_config(self.seed)
            .validate()
            .map_err(|e| Error::Config(format!("training schedule: {}", e.root())))?;
        Ok(())
    }

    /// Every way this configuration departs from the full-scale replication.
    pub fn deviations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in &self.oversample_factors {
            if !DEFAULT_OVERSAMPLE_FACTORS.contains(k) {
                out.push(format!("oversample factor {k} is not one of 1,2,4,8,16"));
            }
        }
        if self.oversample_factors != DEFAULT_OVERSAMPLE_FACTORS {
            out.push(format!(
                "factor set {} differs from 1,2,4,8,16",
                join(&self.oversample_factors)
            ));
        }
        if self.epochs != DEFAULT_EPOCHS {
            out.push(format!(
                "{} epochs instead of {DEFAULT_EPOCHS}",
                self.epochs
            ));
        }
        if self.checkpoint_epochs != DEFAULT_CHECKPOINTS {
            out.push(format!(
                "checkpoints {} instead of 25,50,100,200,400",
                join(&self.checkpoint_epochs)
            ));
        }
        if let Some(n) = self.train_subset {
            out.push(format!("training subset of {n} samples (reduced scale)"));
        }
        if let Some(n) = self.test_subset {
            out.push(format!("test subset of {n} samples (reduced scale)"));
        }
        if self.resample.decimation_factor != DEFAULT_DECIMATION {
            out.push(format!("decimation by {}", self.resample.decimation_factor));
        }
        if self.dropout_rate > 0.0 {
            out.push(format!("dropout rate {}", self.dropout_rate));
        }
        out
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelArg {
    Sinc,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingArg {
    ModelAverage,
    Checkpoint,
}

impl From<PairingArg> for Pairing {
    fn from(p: PairingArg) -> Self {
        match p {
            PairingArg::ModelAverage => Pairing::PerModelAverage,
            PairingArg::Checkpoint => Pairing::PerCheckpoint,
        }
    }
}

/// Command-line surface. Flags override keys from `--config`.
#[derive(Debug, Parser)]
#[command(
    name = "oversample",
    about = "Train over-sampled sigmoid MLPs on decimated MNIST and report error and filter selectivity",
    allow_negative_numbers = true
)]
pub struct CliArgs {
    /// TOML file with the same keys as the long flags (underscored).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory containing the four decompressed MNIST IDX files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Where results.csv and summary.txt are written [default: results].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated over-sampling factors [default: 1,2,4,8,16].
    #[arg(long, value_delimiter = ',')]
    pub oversample: Option<Vec<usize>>,
    /// Full sweeps over the training set [default: 400].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma-separated evaluation epochs [default: 25,50,100,200,400].
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<usize>>,
    /// SGD learning rate [default: 0.1].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mini-batch size [default: 100].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Base seed; model k uses seed + k [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train on a seeded random subset of this many samples.
    #[arg(long)]
    pub train_subset: Option<usize>,
    /// Evaluate on a seeded random subset of this many samples.
    #[arg(long)]
    pub test_subset: Option<usize>,
    /// Interpolation kernel [default: sinc].
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Windowed-sinc taps per polyphase branch [default: 32].
    #[arg(long)]
    pub taps_per_phase: Option<usize>,
    /// Decimation factor applied to the 784-sample vectors [default: 16].
    #[arg(long)]
    pub decimation: Option<usize>,
    /// Decimate by plain striding, without the lowpass prefilter.
    #[arg(long)]
    pub no_antialias: bool,
    /// Inverted dropout rate on hidden layers [default: 0].
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Which averages feed the error/crest correlation [default: model-average].
    #[arg(long, value_enum)]
    pub pairing: Option<PairingArg>,
    /// Also write `model_k<k>.bin` for every trained model.
    #[arg(long)]
    pub save_models: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    oversample: Option<Vec<usize>>,
    epochs: Option<usize>,
    checkpoints: Option<Vec<usize>>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    train_subset: Option<usize>,
    test_subset: Option<usize>,
    kernel: Option<KernelArg>,
    taps_per_phase: Option<usize>,
    decimation: Option<usize>,
    no_antialias: Option<bool>,
    dropout: Option<f64>,
    pairing: Option<PairingArg>,
    save_models: Option<bool>,
}

fn read_config_file(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("config: cannot read {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| Error::Config(format!("config file {}: {}", path.display(), e.message())))
}

/// Resolves command-line arguments (including the program name) into a
/// validated configuration: defaults, then `--config` keys, then flags.
pub fn parse_config<I, T>(args: I) -> Result<ExperimentConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = CliArgs::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    let file = match &cli.config {
        Some(path) => read_config_file(path)?,
        None => FileConfig::default(),
    };
    let data_dir = cli
        .data_dir
        .or(file.data_dir)
        .ok_or_else(|| Error::Config("data_dir: required (--data-dir)".into()))?;
    let mut cfg = ExperimentConfig::full_schedule(data_dir);
    if let Some(v) = cli.out_dir.or(file.out_dir) {
        cfg.output_dir = v;
    }
    if let Some(v) = cli.oversample.or(file.oversample) {
        cfg.oversample_factors = v;
    }
    if let Some(v) = cli.epochs.or(file.epochs) {
        cfg.epochs = v;
    }
    if let Some(v) = cli.checkpoints.or(file.checkpoints) {
        cfg.checkpoint_epochs = v;
    }
    if let Some(v) = cli.lr.or(file.lr) {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!("lr: {v} must be a positive number")));
        }
        cfg.learning_rate = v;
    }
    if let Some(v) = cli.batch_size.or(file.batch_size) {
        cfg.batch_size = v;
    }
    if let Some(v) = cli.seed.or(file.seed) {
        cfg.seed = v;
    }
    cfg.train_subset = cli.train_subset.or(file.train_subset);
    cfg.test_subset = cli.test_subset.or(file.test_subset);
    let taps_per_phase = cli
        .taps_per_phase
        .or(file.taps_per_phase)
        .unwrap_or(DEFAULT_TAPS_PER_PHASE);
    cfg.resample.kernel = match cli.kernel.or(file.kernel).unwrap_or(KernelArg::Sinc) {
        KernelArg::Sinc => InterpolationKernel::WindowedSinc {
            taps_per_phase,
            window: Window::Hann,
        },
        KernelArg::Linear => InterpolationKernel::Linear,
    };
    if let Some(v) = cli.decimation.or(file.decimation) {
        cfg.resample.decimation_factor = v;
    }
    cfg.resample.antialias_decimation = !(cli.no_antialias || file.no_antialias.unwrap_or(false));
    if let Some(v) = cli.dropout.or(file.dropout) {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::Config(format!("dropout: {v} outside [0, 1)")));
        }
        cfg.dropout_rate = v;
    }
    if let Some(p) = cli.pairing.or(file.pairing) {
        cfg.pairing = p.into();
    }
    cfg.save_models = cli.save_models || file.save_models.unwrap_or(false);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct ModelSummary {
    pub oversample_factor: usize,
    pub parameters: usize,
    pub final_error: f64,
    pub diagnostics: SeriesDiagnostics,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Sorted by (factor, epoch).
    pub records: Vec<CheckpointRecord>,
    /// Undefined correlations carry the reason instead.
    pub correlation: std::result::Result<CorrelationResult, String>,
    pub models: Vec<ModelSummary>,
    pub trained: BTreeMap<usize, MlpModel>,
}

/// Preprocesses every 784-sample image vector for over-sampling factor `k`.
pub fn preprocess_dataset(data: &LabeledDataset, spec: &ResampleSpec) -> Result<LabeledDataset> {
    let resampler = Resampler::new(*spec)?;
    data.map_inputs(|v| resampler.preprocess(v))
}

fn maybe_subset(
    data: LabeledDataset,
    n: Option<usize>,
    seed: u64,
    name: &str,
) -> Result<LabeledDataset> {
    match n {
        Some(n) => {
            mnist_io::subset(&data, n, seed).map_err(|e| e.context(format!("{name} subset")))
        }
        None => Ok(data),
    }
}

/// Loads MNIST from `config.data_dir` and runs [`run_suite_on`].
pub fn run_suite(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let train = mnist_io::load_split(&config.data_dir, Split::Train)?;
    let test = mnist_io::load_split(&config.data_dir, Split::Test)?;
    run_suite_on(config, &train, &test)
}

/// Trains one model per over-sampling factor on already loaded 784-vector
/// datasets, then derives diagnostics and the error/crest correlation.
pub fn run_suite_on(
    config: &ExperimentConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<ExperimentReport> {
    config.validate()?;
    for (data, name) in [(train, "training"), (test, "test")] {
        if data.vector_length() != UNPACKED_LEN {
            return Err(Error::Shape(format!(
                "{name} vectors have length {}, expected {UNPACKED_LEN}",
                data.vector_length()
            )));
        }
    }
    let train = maybe_subset(train.clone(), config.train_subset, config.seed, "training")?;
    let test = maybe_subset(test.clone(), config.test_subset, config.seed, "test")?;

    let mut factors = config.oversample_factors.clone();
    factors.sort_unstable();
    let mut records = Vec::new();
    let mut models = Vec::new();
    let mut trained = BTreeMap::new();
    for &k in &factors {
        let ctx = |e: Error| e.context(format!("model k={k}"));
        let spec = ResampleSpec {
            oversample_factor: k,
            ..config.resample
        };
        let train_k = preprocess_dataset(&train, &spec).map_err(ctx)?;
        let test_k = preprocess_dataset(&test, &spec).map_err(ctx)?;
        let seed = config.model_seed(k);
        let mut model = init_model(k, seed).map_err(ctx)?;
        log::info!(
            "k={k}: {} parameters, {} training / {} test samples",
            count_parameters(&model),
            train_k.len(),
            test_k.len()
        );
        let recs = network::train_with_checkpoints(
            &mut model,
            &train_k,
            &test_k,
            &config.train_config(seed),
            k,
            spectral::all_layer_crest_db,
        )
        .map_err(ctx)?;
        let errors: Vec<f64> = recs.iter().map(|r| r.test_error).collect();
        models.push(ModelSummary {
            oversample_factor: k,
            parameters: count_parameters(&model),
            final_error: errors.last().copied().unwrap_or(f64::NAN),
            diagnostics: stats::series_diagnostics(&errors),
        });
        records.extend(recs);
        trained.insert(k, model);
    }
    let correlation =
        stats::correlate_error_vs_crest(&records, config.pairing).map_err(|e| e.to_string());
    Ok(ExperimentReport {
        config: config.clone(),
        records,
        correlation,
        models,
        trained,
    })
}

/// `%g`-style rendering with exactly `digits` significant digits.
pub fn format_significant(value: f64, digits: usize) -> String {
    if !value.is_finite() {
        return value.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, value);
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        sci
    } else {
        format!("{:.*}", (digits as i32 - 1 - exp) as usize, value)
    }
}

fn check_complete(report: &ExperimentReport) -> Result<()> {
    let expected = report.config.oversample_factors.len() * report.config.checkpoint_epochs.len();
    if report.records.len() != expected {
        return Err(Error::Shape(format!(
            "report holds {} records, expected {expected}",
            report.records.len()
        )));
    }
    Ok(())
}

pub fn render_csv(report: &ExperimentReport) -> Result<String> {
    check_complete(report)?;
    let mut rows: Vec<&CheckpointRecord> = report.records.iter().collect();
    rows.sort_by_key(|r| (r.oversample_factor, r.epoch));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let [g1, g2, g3] = r.mean_crest_db_per_layer;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.oversample_factor,
            r.epoch,
            format_significant(r.test_error, 9),
            format_significant(g1, 9),
            format_significant(g2, 9),
            format_significant(g3, 9)
        )
        .unwrap();
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    write_text(path, &render_csv(report)?)
}

fn kernel_description(spec: &ResampleSpec) -> String {
    match spec.kernel {
        InterpolationKernel::WindowedSinc { taps_per_phase, .. } => {
            format!("windowed-sinc (Hann, {taps_per_phase} taps per phase, per-phase unit gain)")
        }
        InterpolationKernel::Linear => "linear".to_string(),
    }
}

pub fn render_summary(report: &ExperimentReport) -> Result<String> {
    check_complete(report)?;
    let c = &report.config;
    let mut s = String::new();
    let w = &mut s;
    writeln!(w, "# over-sampling experiment summary").unwrap();
    writeln!(w, "\n[config]").unwrap();
    writeln!(w, "data_dir = {}", c.data_dir.display()).unwrap();
    writeln!(w, "oversample_factors = {}", join(&c.oversample_factors)).unwrap();
    writeln!(w, "epochs = {}", c.epochs).unwrap();
    writeln!(w, "checkpoints = {}", join(&c.checkpoint_epochs)).unwrap();
    writeln!(w, "learning_rate = {}", c.learning_rate).unwrap();
    writeln!(w, "batch_size = {}", c.batch_size).unwrap();
    writeln!(w, "optimizer = plain SGD (no momentum, no weight decay)").unwrap();
    writeln!(w, "loss = softmax cross-entropy (mean over batch)").unwrap();
    writeln!(w, "init = uniform(+-1/sqrt(fan_in)), zero biases").unwrap();
    writeln!(w, "seed = {} (model k uses seed + k)", c.seed).unwrap();
    let subset = |n: Option<usize>| n.map_or("full".to_string(), |n| n.to_string());
    writeln!(w, "train_subset = {}", subset(c.train_subset)).unwrap();
    writeln!(w, "test_subset = {}", subset(c.test_subset)).unwrap();
    writeln!(w, "normalization = per-image zero mean, before decimation").unwrap();
    writeln!(w, "decimation_factor = {}", c.resample.decimation_factor).unwrap();
    writeln!(
        w,
        "antialias_decimation = {}",
        c.resample.antialias_decimation
    )
    .unwrap();
    writeln!(w, "interpolation = {}", kernel_description(&c.resample)).unwrap();
    writeln!(w, "boundary = whole-sample symmetric reflection").unwrap();
    writeln!(w, "dropout_rate = {}", c.dropout_rate).unwrap();
    let deviations = c.deviations();
    if deviations.is_empty() {
        writeln!(w, "scale = full replication schedule").unwrap();
    } else {
        writeln!(w, "scale = reduced").unwrap();
        for d in deviations {
            writeln!(w, "deviation = {d}").unwrap();
        }
    }

    writeln!(w, "\n[spectral]").unwrap();
    writeln!(w, "conventions = {}", spectral::CONVENTIONS).unwrap();
    writeln!(w, "plotted_layer = 2").unwrap();

    writeln!(w, "\n[models]").unwrap();
    for m in &report.models {
        writeln!(
            w,
            "k={} parameters={} final_error={} monotone_nonincreasing={} overfit_rebound={}",
            m.oversample_factor,
            m.parameters,
            format_significant(m.final_error, 4),
            m.diagnostics.is_monotone_nonincreasing,
            format_significant(m.diagnostics.overfit_rebound, 4)
        )
        .unwrap();
    }

    writeln!(w, "\n[correlation]").unwrap();
    writeln!(w, "pairing = {}", c.pairing).unwrap();
    writeln!(w, "x = test error, y = mean layer-2 crest factor (dB)").unwrap();
    match &report.correlation {
        Ok(r) => {
            writeln!(w, "r = {}", format_significant(r.r, 4)).unwrap();
            writeln!(
                w,
                "p_two_tailed = {}",
                format_significant(r.p_two_tailed, 4)
            )
            .unwrap();
            writeln!(w, "n = {}", r.n).unwrap();
        }
        Err(reason) => writeln!(w, "undefined = {reason}").unwrap(),
    }
    Ok(s)
}

pub fn write_summary(report: &ExperimentReport, path: &Path) -> Result<()> {
    write_text(path, &render_summary(report)?)
}

/// Writes `results.csv`, `summary.txt` and, if requested, the model files
/// into `config.output_dir`. Returns the paths written.
pub fn write_outputs(report: &ExperimentReport) -> Result<Vec<PathBuf>> {
    let dir = &report.config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(RESULTS_FILE);
    let summary = dir.join(SUMMARY_FILE);
    write_csv(report, &csv)?;
    write_summary(report, &summary)?;
    let mut written = vec![csv, summary];
    if report.config.save_models {
        for (k, model) in &report.trained {
            let path = dir.join(format!("model_k{k}.bin"));
            fs::write(&path, save_model(model)).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
