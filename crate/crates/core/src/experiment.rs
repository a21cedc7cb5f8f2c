//! Config-driven experiments: data loading, training, metric and privacy
//! report emission, gradient-norm profiles and attack runs.
//!
//! Configs are flat TOML documents. Relative paths resolve against the
//! directory holding the config file. Nothing is written until the whole
//! config has been validated and the run has finished.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accountant::{
    clt_mu, framework_guarantee, gaussian_tradeoff, layerwise_effective_sigma, GuaranteeReport,
};
use crate::attack::{
    empirical_tradeoff, neighboring_pair, opposite_gradient_round, single_round_mech,
    verify_domination, ClippedSumMechanism, DominationVerdict, EmpiricalCurve,
};
use crate::clipping::{
    estimate_group_norms, ClipMode, ClipScope, ClipSpec, ConstantStrategy, LayerGroups,
};
use crate::data::{load_csv, load_mnist_idx, synth_blobs, Dataset, MNIST_MEAN, MNIST_STD};
use crate::engine::{dpsgd_from, InitScheme, NoiseConvention, TrainConfig, TrainData, TrainOutput};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayeredVector, ModelSpec};
use crate::sampling::{split_public, SamplingMode, SplitSpec};

/// Environment variable that may redirect output (the only one consulted).
pub const OUT_DIR_ENV: &str = "DPSGD_OUT_DIR";

pub const METRICS_FILE: &str = "metrics.csv";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const REPORT_FILE: &str = "privacy_report.json";
pub const NORMS_FILE: &str = "norms.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const ATTACK_REPORT_FILE: &str = "attack_report.json";

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "train_loss",
    "test_accuracy",
    "eta",
    "master_c",
    "c_min",
    "c_mean",
    "c_max",
    "mu",
];
pub const ROUNDS_HEADER: [&str; 8] = [
    "epoch",
    "round",
    "eta",
    "loss",
    "clip_constants",
    "noise_std",
    "pre_clip_norms",
    "post_clip_norms",
];
pub const NORMS_HEADER: [&str; 4] = ["epoch", "layer", "name", "norm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs,
    Mnist,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipModeName {
    Individual,
    Batch,
    General,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn holdout() -> f64 {
    0.2
}
fn public_fraction() -> f64 {
    0.1
}
fn relu() -> Activation {
    Activation::Relu
}
fn glorot() -> InitScheme {
    InitScheme::GlorotUniform
}
fn general_noise() -> NoiseConvention {
    NoiseConvention::General
}
fn shuffle() -> SamplingMode {
    SamplingMode::Shuffle
}
fn fixed() -> ConstantStrategy {
    ConstantStrategy::Fixed
}
fn full() -> ClipScope {
    ClipScope::Full
}

/// One training experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Seed of synthetic data and of the holdout split; defaults to `seed`.
    pub data_seed: Option<u64>,

    pub dataset: DataSource,
    pub blobs_n: Option<usize>,
    pub blobs_dim: Option<usize>,
    pub blobs_classes: Option<usize>,
    pub blobs_separation: Option<f64>,
    pub mnist_dir: Option<PathBuf>,
    /// Use only the first this many training images.
    pub mnist_train_limit: Option<usize>,
    pub mnist_test_limit: Option<usize>,
    pub csv_train: Option<PathBuf>,
    pub csv_test: Option<PathBuf>,
    /// Per-channel standardization; defaults to on for MNIST only.
    pub normalize: Option<bool>,
    /// Test share of datasets without an official test split.
    #[serde(default = "holdout")]
    pub holdout_fraction: f64,
    /// Share of the training data set aside as the public set `D_pub`.
    #[serde(default = "public_fraction")]
    pub public_fraction: f64,

    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "relu")]
    pub activation: Activation,
    #[serde(default)]
    pub batchnorm: bool,
    #[serde(default = "glorot")]
    pub init: InitScheme,

    pub epochs: usize,
    pub eta0: f64,
    #[serde(default = "unit")]
    pub eta_decay: f64,
    pub sigma: f64,
    #[serde(default = "general_noise")]
    pub noise: NoiseConvention,
    /// Samples per batch for individual and batch clipping.
    pub batch_size: Option<usize>,
    pub clip_mode: ClipModeName,
    /// `s` and `m` for general batch clipping.
    pub micro_batch_size: Option<usize>,
    pub micro_batches: Option<usize>,
    #[serde(default = "full")]
    pub clip_scope: ClipScope,
    #[serde(default = "fixed")]
    pub clip_strategy: ConstantStrategy,
    /// `inf` switches clipping off (requires `sigma = 0`).
    pub master_c: f64,
    #[serde(default = "unit")]
    pub c_decay: f64,
    pub clip_groups: Option<Vec<usize>>,
    #[serde(default = "shuffle")]
    pub sampling: SamplingMode,
    pub ss_rounds: Option<usize>,

    /// Neighboring datasets differ in this many samples.
    #[serde(default = "one")]
    pub group_size: usize,
    #[serde(default = "one")]
    pub eval_every: usize,
    pub out_dir: Option<PathBuf>,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::config(format!("field `{name}`: {msg}"))
}

fn required<T: Clone>(v: &Option<T>, name: &str, context: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| field(name, format!("required for {context}")))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::config(e.to_string().trim_end().to_string()))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Output directory: command line, then environment, then config, then
/// `out/<config stem>`.
fn output_dir(cli: Option<&Path>, config: Option<&Path>, base: &Path, stem: &str) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV) {
        return PathBuf::from(p);
    }
    match config {
        Some(p) => resolve(base, p),
        None => PathBuf::from("out").join(stem),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(e) = o.epochs {
            self.epochs = e;
        }
    }

    pub fn clip_spec(&self) -> Result<ClipSpec> {
        let mode = match self.clip_mode {
            ClipModeName::Individual => ClipMode::Individual,
            ClipModeName::Batch => ClipMode::Batch,
            ClipModeName::General => ClipMode::General {
                s: required(
                    &self.micro_batch_size,
                    "micro_batch_size",
                    "clip_mode = \"general\"",
                )?,
                m: required(
                    &self.micro_batches,
                    "micro_batches",
                    "clip_mode = \"general\"",
                )?,
            },
        };
        let groups = self
            .clip_groups
            .clone()
            .map(LayerGroups::new)
            .transpose()
            .map_err(|e| field("clip_groups", e))?;
        Ok(ClipSpec {
            mode,
            scope: self.clip_scope,
            master_c: self.master_c,
            c_decay: self.c_decay,
            strategy: self.clip_strategy,
            groups,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let clip = self.clip_spec()?;
        let batch_size = match self.clip_mode {
            ClipModeName::General => {
                let (s, m) = clip.mode.micro_batching(0);
                s * m
            }
            _ => required(
                &self.batch_size,
                "batch_size",
                "individual and batch clipping",
            )?,
        };
        Ok(TrainConfig {
            eta0: self.eta0,
            eta_decay: self.eta_decay,
            sigma: self.sigma,
            epochs: self.epochs,
            batch_size,
            clip,
            sampling: self.sampling,
            ss_rounds: self.ss_rounds,
            noise: self.noise,
            init: self.init,
            seed: self.seed,
        })
    }

    fn check_fields(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(field("holdout_fraction", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.public_fraction) {
            return Err(field("public_fraction", "must lie in [0, 1)"));
        }
        if self.group_size == 0 {
            return Err(field("group_size", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(field("eval_every", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(field("epochs", "must be at least 1"));
        }
        if !(self.eta0 > 0.0) {
            return Err(field("eta0", "must be positive"));
        }
        if !(self.eta_decay > 0.0 && self.eta_decay <= 1.0) {
            return Err(field("eta_decay", "must lie in (0, 1]"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(field("sigma", "must be finite and >= 0"));
        }
        if !(self.master_c > 0.0) {
            return Err(field("master_c", "must be positive"));
        }
        if self.sigma > 0.0 && !self.master_c.is_finite() {
            return Err(field("master_c", "must be finite when sigma > 0"));
        }
        if !(self.c_decay > 0.0 && self.c_decay <= 1.0) {
            return Err(field("c_decay", "must lie in (0, 1]"));
        }
        if self.clip_mode == ClipModeName::General && self.batch_size.is_some() {
            return Err(field(
                "batch_size",
                "general clipping takes micro_batch_size and micro_batches instead",
            ));
        }
        Ok(())
    }
}

/// Train, public and test sets of an experiment.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub public: Option<Dataset>,
    pub test: Dataset,
}

fn load_data(cfg: &ExperimentConfig, base: &Path) -> Result<Splits> {
    let data_seed = cfg.data_seed.unwrap_or(cfg.seed);
    let (mut full, mut test) = match cfg.dataset {
        DataSource::Blobs => {
            let ctx = "dataset = \"blobs\"";
            let d = synth_blobs(
                required(&cfg.blobs_n, "blobs_n", ctx)?,
                required(&cfg.blobs_dim, "blobs_dim", ctx)?,
                required(&cfg.blobs_classes, "blobs_classes", ctx)?,
                required(&cfg.blobs_separation, "blobs_separation", ctx)?,
                data_seed,
            )
            .map_err(|e| field("blobs_*", e))?;
            let (train, test) = d.holdout_split(cfg.holdout_fraction, data_seed)?;
            (train, test)
        }
        DataSource::Mnist => {
            let dir = resolve(
                base,
                &required(&cfg.mnist_dir, "mnist_dir", "dataset = \"mnist\"")?,
            );
            let train = load_mnist_idx(
                dir.join("train-images-idx3-ubyte"),
                dir.join("train-labels-idx1-ubyte"),
            )?;
            let test = load_mnist_idx(
                dir.join("t10k-images-idx3-ubyte"),
                dir.join("t10k-labels-idx1-ubyte"),
            )?;
            let train = match cfg.mnist_train_limit {
                Some(n) => train.take(n),
                None => train,
            };
            let test = match cfg.mnist_test_limit {
                Some(n) => test.take(n),
                None => test,
            };
            (train, test)
        }
        DataSource::Csv => {
            let train_path = resolve(
                base,
                &required(&cfg.csv_train, "csv_train", "dataset = \"csv\"")?,
            );
            let full = load_csv(&train_path)?;
            match &cfg.csv_test {
                Some(p) => (full, load_csv(resolve(base, p))?),
                None => full.holdout_split(cfg.holdout_fraction, data_seed)?,
            }
        }
    };
    let normalize = cfg.normalize.unwrap_or(cfg.dataset == DataSource::Mnist);
    if normalize {
        let (mean, std) = match cfg.dataset {
            DataSource::Mnist => (vec![MNIST_MEAN], vec![MNIST_STD]),
            _ => {
                let (m, s) = full.feature_moments();
                (
                    m,
                    s.into_iter()
                        .map(|s| if s > 0.0 { s } else { 1.0 })
                        .collect(),
                )
            }
        };
        full = full.normalize(&mean, &std)?;
        test = test.normalize(&mean, &std)?;
    }
    if test.feature_dim() != full.feature_dim() {
        return Err(Error::config(format!(
            "test features ({}) differ from training features ({})",
            test.feature_dim(),
            full.feature_dim()
        )));
    }
    let (train_idx, public_idx) = split_public(
        full.len(),
        &SplitSpec {
            public_fraction: cfg.public_fraction,
            seed: data_seed,
        },
    )?;
    let public = if public_idx.is_empty() {
        None
    } else {
        Some(full.subset(&public_idx)?)
    };
    Ok(Splits {
        train: full.subset(&train_idx)?,
        public,
        test,
    })
}

/// A validated experiment ready to run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub train: TrainConfig,
    pub model: ModelSpec,
    pub data: Splits,
    pub out_dir: PathBuf,
}

impl Prepared {
    pub fn train_data(&self) -> TrainData<'_> {
        let mut d = TrainData::new(&self.data.train)
            .test(&self.data.test)
            .eval_every(self.config.eval_every);
        if let Some(p) = &self.data.public {
            d = d.public(p);
        }
        d
    }

    pub fn initial_weights(&self) -> LayeredVector {
        match self.train.init {
            InitScheme::GlorotUniform => self.model.init(self.train.seed),
            InitScheme::Zeros => self.model.zeros(),
        }
    }
}

/// Loads data and checks every setting; writes nothing.
pub fn prepare(
    config: ExperimentConfig,
    base: &Path,
    overrides: &Overrides,
    stem: &str,
) -> Result<Prepared> {
    let mut config = config;
    config.apply(overrides);
    config.check_fields()?;
    let train = config.train_config()?;
    let data = load_data(&config, base)?;
    let classes = data.train.num_classes().max(data.test.num_classes());
    let model = ModelSpec::mlp(
        data.train.feature_dim(),
        &config.hidden,
        classes,
        config.activation,
        config.batchnorm,
    )
    .map_err(|e| field("hidden", e))?;
    train.validate(&model, data.train.len())?;
    if train.clip.strategy != ConstantStrategy::Fixed && data.public.is_none() {
        return Err(field(
            "public_fraction",
            "adaptive clipping constants need a public set",
        ));
    }
    let out_dir = output_dir(
        overrides.out_dir.as_deref(),
        config.out_dir.as_deref(),
        base,
        stem,
    );
    Ok(Prepared {
        config,
        train,
        model,
        data,
        out_dir,
    })
}

/// Reads and prepares the config at `path`.
pub fn prepare_path(path: &Path, overrides: &Overrides) -> Result<Prepared> {
    let text = read_text(path)?;
    let config = ExperimentConfig::from_toml_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    prepare(config, base, overrides, stem)
}

/// The `privacy_report.json` document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyReport {
    #[serde(flatten)]
    pub guarantee: GuaranteeReport,
    /// CLT estimate for individually clipped runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clt_mu: Option<f64>,
}

/// Guarantee of what was executed: `g`, `E`, clip groups, `σ`, scope.
pub fn privacy_report(
    out: &TrainOutput,
    group_size: usize,
    epochs_run: usize,
) -> Result<PrivacyReport> {
    let a = &out.accountant;
    let guarantee =
        framework_guarantee(group_size, epochs_run, a.sigma, a.clip_groups, a.layerwise)?;
    let individual = a.batch_size == a.micro_batches;
    let clt = if individual && a.sigma > 0.0 {
        let sigma = if a.layerwise {
            layerwise_effective_sigma(a.sigma, a.clip_groups)?
        } else {
            a.sigma
        };
        clt_mu(a.n_train, a.micro_batches, epochs_run, sigma).ok()
    } else {
        None
    };
    let mut guarantee = guarantee;
    guarantee.inputs.n = Some(a.n_train);
    guarantee.inputs.m = Some(a.micro_batches);
    Ok(PrivacyReport {
        guarantee,
        clt_mu: clt,
    })
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes<F>(header: &[&str], rows: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    rows(&mut w)?;
    w.into_inner().map_err(|e| Error::config(e.to_string()))
}

pub fn metrics_csv(out: &TrainOutput, group_size: usize) -> Result<Vec<u8>> {
    csv_bytes(&METRICS_HEADER, |w| {
        for rec in &out.epochs {
            let c = &rec.clip_constants;
            let mu = framework_guarantee(
                group_size,
                rec.epoch + 1,
                out.accountant.sigma,
                out.accountant.clip_groups,
                out.accountant.layerwise,
            )?
            .mu;
            w.write_record([
                rec.epoch.to_string(),
                rec.train_loss.to_string(),
                opt(rec.test_accuracy),
                rec.eta.to_string(),
                rec.master_c.to_string(),
                c.iter().copied().fold(f64::INFINITY, f64::min).to_string(),
                (c.iter().sum::<f64>() / c.len() as f64).to_string(),
                c.iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
                    .to_string(),
                mu.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn rounds_csv(out: &TrainOutput) -> Result<Vec<u8>> {
    csv_bytes(&ROUNDS_HEADER, |w| {
        for r in &out.rounds {
            w.write_record([
                r.epoch.to_string(),
                r.round.to_string(),
                r.eta.to_string(),
                r.loss.to_string(),
                join(&r.clip_constants),
                join(&r.noise_std),
                join(&r.pre_clip_norms),
                join(&r.post_clip_norms),
            ])?;
        }
        Ok(())
    })
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub output: TrainOutput,
    pub report: PrivacyReport,
    pub final_accuracy: Option<f64>,
}

/// Trains and writes `metrics.csv`, `rounds.csv` and `privacy_report.json`.
pub fn run_experiment(prepared: &Prepared) -> Result<RunSummary> {
    let output = dpsgd_from(
        &prepared.train,
        &prepared.model,
        prepared.train_data(),
        prepared.initial_weights(),
        |_, _| Ok(()),
    )?;
    let report = privacy_report(&output, prepared.config.group_size, prepared.train.epochs)?;
    let metrics = metrics_csv(&output, prepared.config.group_size)?;
    let rounds = rounds_csv(&output)?;
    let json = serde_json::to_vec_pretty(&report)?;
    create_dir(&prepared.out_dir)?;
    write_file(&prepared.out_dir, METRICS_FILE, &metrics)?;
    write_file(&prepared.out_dir, ROUNDS_FILE, &rounds)?;
    write_file(&prepared.out_dir, REPORT_FILE, &json)?;
    Ok(RunSummary {
        out_dir: prepared.out_dir.clone(),
        final_accuracy: output.epochs.last().and_then(|e| e.test_accuracy),
        output,
        report,
    })
}

/// Per-epoch, per-parameter-layer mean gradient norms on the public set
/// (rows `(epoch, layer, name, e_h)`), measured at the start of each epoch.
pub fn gradient_norm_profile(prepared: &Prepared) -> Result<Vec<(usize, usize, String, f64)>> {
    let public = prepared
        .data
        .public
        .as_ref()
        .ok_or_else(|| field("public_fraction", "the norm profile needs a public set"))?
        .as_batch()?;
    let layers = LayerGroups::identity(prepared.model.num_param_layers());
    let mut rows = Vec::new();
    dpsgd_from(
        &prepared.train,
        &prepared.model,
        prepared.train_data(),
        prepared.initial_weights(),
        |e, w| {
            let norms = estimate_group_norms(&prepared.model, w, &public, &layers)?;
            for (h, n) in norms.into_iter().enumerate() {
                rows.push((e, h, prepared.model.param_groups()[h].name.clone(), n));
            }
            Ok(())
        },
    )?;
    Ok(rows)
}

/// Runs [`gradient_norm_profile`] and writes `norms.csv`.
pub fn write_norm_profile(prepared: &Prepared) -> Result<PathBuf> {
    let rows = gradient_norm_profile(prepared)?;
    let bytes = csv_bytes(&NORMS_HEADER, |w| {
        for (e, h, name, n) in &rows {
            w.write_record([e.to_string(), h.to_string(), name.clone(), n.to_string()])?;
        }
        Ok(())
    })?;
    create_dir(&prepared.out_dir)?;
    write_file(&prepared.out_dir, NORMS_FILE, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMechanism {
    /// One clipped scalar per side, noise std `2Cσ`.
    Scalar,
    /// `groups` equal clip groups, each with noise std `2Cσ`.
    Layerwise,
    /// One engine round on a crafted worst-case linear model.
    Round,
}

fn trials_default() -> usize {
    100_000
}
fn micro_default() -> usize {
    4
}
fn magnitude_default() -> f64 {
    10.0
}

/// An attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub seed: u64,
    pub mechanism: AttackMechanism,
    pub sigma: f64,
    #[serde(default = "unit")]
    pub c: f64,
    /// Clip groups of the layerwise mechanism.
    pub groups: Option<usize>,
    /// Scope of the round mechanism (`full` or `layerwise`).
    #[serde(default = "full")]
    pub scope: ClipScope,
    #[serde(default = "micro_default")]
    pub micro_batches: usize,
    #[serde(default = "magnitude_default")]
    pub magnitude: f64,
    #[serde(default = "trials_default")]
    pub trials: usize,
    /// Theoretical curve `G_μ`; defaults to the accountant's value.
    pub theory_mu: Option<f64>,
    /// Domination slack; defaults to the DKW half-width.
    pub slack: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl AttackConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse_toml(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub mechanism: AttackMechanism,
    pub sigma: f64,
    pub trials: usize,
    pub sensitivity: f64,
    pub theory_mu: f64,
    pub sup_distance: f64,
    pub separation: f64,
    pub degenerate: bool,
    pub verdict: DominationVerdict,
}

#[derive(Debug, Clone)]
pub struct AttackSummary {
    pub out_dir: PathBuf,
    pub curve: EmpiricalCurve,
    pub report: AttackReport,
}

/// Runs the configured attack and returns the curve and its report.
pub fn attack(cfg: &AttackConfig) -> Result<(EmpiricalCurve, AttackReport)> {
    if !(cfg.sigma > 0.0 && cfg.sigma.is_finite()) {
        return Err(field(
            "sigma",
            "must be positive; without noise there is no privacy to test",
        ));
    }
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(field("c", "must be finite and positive"));
    }
    let (curve, sensitivity, groups) = match cfg.mechanism {
        AttackMechanism::Scalar => {
            let mech = ClippedSumMechanism::scalar(cfg.c, cfg.sigma);
            let d = [LayeredVector::from_layers([vec![-cfg.c]])];
            let (d, dp) = neighboring_pair(&d, 0, LayeredVector::from_layers([vec![cfg.c]]))?;
            (
                empirical_tradeoff(&mech, &d[..], &dp[..], cfg.trials, cfg.seed)?,
                2.0 * cfg.c,
                1,
            )
        }
        AttackMechanism::Layerwise => {
            let l = required(&cfg.groups, "groups", "mechanism = \"layerwise\"")?;
            if l == 0 {
                return Err(field("groups", "must be at least 1"));
            }
            let mech = ClippedSumMechanism::layerwise(&vec![cfg.c; l], cfg.sigma);
            let lo = LayeredVector::from_layers(vec![vec![-cfg.c]; l]);
            let hi = LayeredVector::from_layers(vec![vec![cfg.c]; l]);
            let (d, dp) = neighboring_pair(&[lo], 0, hi)?;
            let s = mech_sensitivity(&mech);
            (
                empirical_tradeoff(&mech, &d[..], &dp[..], cfg.trials, cfg.seed)?,
                s,
                l,
            )
        }
        AttackMechanism::Round => {
            if cfg.micro_batches == 0 {
                return Err(field("micro_batches", "must be at least 1"));
            }
            let (model, w, round, replacement) =
                opposite_gradient_round(cfg.micro_batches, cfg.magnitude)?;
            let train = TrainConfig {
                eta0: 1.0,
                eta_decay: 1.0,
                sigma: cfg.sigma,
                epochs: 1,
                batch_size: cfg.micro_batches,
                clip: ClipSpec {
                    mode: ClipMode::Individual,
                    scope: cfg.scope,
                    master_c: cfg.c,
                    c_decay: 1.0,
                    strategy: ConstantStrategy::Fixed,
                    groups: None,
                },
                sampling: SamplingMode::Shuffle,
                ss_rounds: None,
                noise: NoiseConvention::General,
                init: InitScheme::Zeros,
                seed: cfg.seed,
            };
            train.clip.validate()?;
            let mech = single_round_mech(&train, &model, &w, 0, None)?;
            let (d, dp) = mech.neighbors(&round, replacement)?;
            let groups = if cfg.scope == ClipScope::Layerwise {
                model.num_param_layers()
            } else {
                1
            };
            let s = crate::attack::Mechanism::sensitivity(&mech);
            (
                empirical_tradeoff(&mech, &d[..], &dp[..], cfg.trials, cfg.seed)?,
                s,
                groups,
            )
        }
    };
    let theory_mu = match cfg.theory_mu {
        Some(mu) => mu,
        None => (groups as f64).sqrt() / cfg.sigma,
    };
    let theory = gaussian_tradeoff(theory_mu)?;
    let report = AttackReport {
        mechanism: cfg.mechanism,
        sigma: cfg.sigma,
        trials: cfg.trials,
        sensitivity,
        theory_mu,
        sup_distance: curve.sup_distance(&theory),
        separation: curve.separation,
        degenerate: curve.degenerate,
        verdict: verify_domination(&curve, &theory, cfg.slack),
    };
    Ok((curve, report))
}

fn mech_sensitivity(m: &ClippedSumMechanism) -> f64 {
    crate::attack::Mechanism::sensitivity(m)
}

/// Reads an attack config, runs it and writes `curve.csv` and
/// `attack_report.json`.
pub fn run_attack_path(path: &Path, overrides: &Overrides) -> Result<AttackSummary> {
    let mut cfg = AttackConfig::from_toml_str(&read_text(path)?)?;
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("attack");
    let out_dir = output_dir(
        overrides.out_dir.as_deref(),
        cfg.out_dir.as_deref(),
        base,
        stem,
    );
    let (curve, report) = attack(&cfg)?;
    let mut bytes = Vec::new();
    curve.write_csv(&mut bytes)?;
    let json = serde_json::to_vec_pretty(&report)?;
    create_dir(&out_dir)?;
    write_file(&out_dir, CURVE_FILE, &bytes)?;
    write_file(&out_dir, ATTACK_REPORT_FILE, &json)?;
    Ok(AttackSummary {
        out_dir,
        curve,
        report,
    })
}
