//! Cross-validated experiments: the per-fold pipeline, ablations, the β
//! sweep, the relevant-label comparison, theory checks and CSV reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::complementary::{
    attach_relevant_subset, corrupt, ComplementaryDataset, CorruptionMode, CorruptionRecord,
};
use crate::dataset::{
    kfold_split, parse_multilabel_file, preprocess_topk_labels, sample_from_generative,
    FeatureScaling, FoldSplit, GenerativeSpec, LabelSubset, MultiLabelDataset,
};
use crate::error::{Error, Result};
use crate::linalg::{format_significant, Matrix};
use crate::loss::{batch_loss, ClampPolicy, SoftmaxCe};
use crate::metrics::{evaluate_all, MetricsReport, METRIC_NAMES};
use crate::model::LinearModel;
use crate::optim::{
    train_cl_predictor, train_clrl, train_mlcl, train_supervised, TrainConfig, LEARNING_RATE_GRID,
};
use crate::theory::{bound_grid, theorem1_trials, BoundCheck};
use crate::transition::{
    check_invertible, correct_transition, correlation_matrix, estimate_initial_s,
    CorrelationMatrix, InitialTransition, InvertibilityReport, TransitionMatrix,
};

/// Which supervision the classifier is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// One complementary label per instance.
    Complementary,
    /// One complementary label plus a known subset of relevant labels.
    ComplementaryRelevant,
    /// The full relevant label set.
    Supervised,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cl" => Ok(Regime::Complementary),
            "clrl" => Ok(Regime::ComplementaryRelevant),
            "supervised" => Ok(Regime::Supervised),
            other => Err(Error::Config(format!(
                "unknown regime {other:?} (expected cl, clrl or supervised)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransitionSource {
    /// Estimate per training fold from the complementary data.
    Estimate,
    /// Use a fixed matrix, loaded from a file or known in advance.
    Fixed(TransitionMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub mode: CorruptionMode,
    pub train: TrainConfig,
    /// `None` selects from the grid on a validation split.
    pub learning_rate: Option<f64>,
    pub folds: usize,
    pub max_labels: usize,
    pub no_correlation: bool,
    pub no_mse: bool,
    pub regime: Regime,
    pub transition: TransitionSource,
    pub normalize_features: bool,
    pub relevant_per_instance: usize,
    pub validation_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            mode: CorruptionMode::Uniform,
            train: TrainConfig::default(),
            learning_rate: None,
            folds: 10,
            max_labels: 15,
            no_correlation: false,
            no_mse: false,
            regime: Regime::Complementary,
            transition: TransitionSource::Estimate,
            normalize_features: false,
            relevant_per_instance: 1,
            validation_fraction: 0.1,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

pub fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value {value:?} for {key} (expected on or off)"
        ))),
    }
}

impl RunConfig {
    /// Sets one `key = value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "mode" => {
                self.mode = value
                    .parse()
                    .map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "seed" => self.train.seed = parse_value(key, value)?,
            "lr" | "learning_rate" => self.learning_rate = Some(parse_value(key, value)?),
            "epochs" => self.train.epochs = parse_value(key, value)?,
            "batch" | "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "beta" => self.train.beta = parse_value(key, value)?,
            "weight_decay" => self.train.weight_decay = parse_value(key, value)?,
            "folds" => self.folds = parse_value(key, value)?,
            "max_labels" => self.max_labels = parse_value(key, value)?,
            "no_correlation" => self.no_correlation = parse_switch(key, value)?,
            "no_mse" => self.no_mse = parse_switch(key, value)?,
            "regime" => self.regime = value.parse()?,
            "normalize_features" => self.normalize_features = parse_switch(key, value)?,
            "relevant_per_instance" => self.relevant_per_instance = parse_value(key, value)?,
            "validation_fraction" => self.validation_fraction = parse_value(key, value)?,
            "transition_in" => {
                self.transition = TransitionSource::Fixed(TransitionMatrix::read_csv(value)?)
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0) {
                return Err(Error::Config(format!(
                    "learning rate must be positive, got {lr}"
                )));
            }
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(
                "validation_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.regime == Regime::ComplementaryRelevant && self.relevant_per_instance == 0 {
            return Err(Error::Config(
                "clrl needs at least one relevant label per instance".into(),
            ));
        }
        if self.regime == Regime::Supervised
            && (self.no_correlation || self.no_mse || self.transition != TransitionSource::Estimate)
        {
            return Err(Error::Config(
                "supervised runs use no transition matrix; ablation flags do not apply".into(),
            ));
        }
        if self.no_correlation && matches!(self.transition, TransitionSource::Fixed(_)) {
            return Err(Error::Config(
                "no_correlation only applies to estimated transitions".into(),
            ));
        }
        Ok(())
    }

    fn effective_beta(&self) -> f64 {
        if self.no_mse {
            0.0
        } else {
            self.train.beta
        }
    }
}

/// Loads a dataset from `config.data` and applies rare-label filtering.
pub fn load_dataset(config: &RunConfig) -> Result<MultiLabelDataset> {
    let path = config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset path given".into()))?;
    let ds = parse_multilabel_file(path)?;
    preprocess_topk_labels(&ds, config.max_labels)
}

/// Splits `0..n` into a training part and a held-out part of about
/// `fraction·n`, drawing the same share from each stratum.
pub fn stratified_holdout(strata: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let groups = strata.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for (i, &g) in strata.iter().enumerate() {
        by_group[g].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for mut group in by_group {
        group.shuffle(&mut rng);
        let take = (group.len() as f64 * fraction).round() as usize;
        let take = take.min(group.len().saturating_sub(1));
        held.extend_from_slice(&group[..take]);
        train.extend_from_slice(&group[take..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

fn with_lr(cfg: &TrainConfig, lr: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        ..cfg.clone()
    }
}

fn score_all(
    model: &LinearModel,
    features: impl Iterator<Item = crate::dataset::SparseVec>,
) -> Result<Vec<Vec<f64>>> {
    features.map(|x| model.forward(&x)).collect()
}

/// Intermediate matrices of one transition estimate.
#[derive(Debug, Clone)]
pub struct TransitionEstimate {
    pub initial: InitialTransition,
    pub correlation: CorrelationMatrix,
    pub transition: TransitionMatrix,
    pub predictor: LinearModel,
    pub predictor_learning_rate: f64,
}

/// Trains the complementary-label predictor, averages it into `S`, computes
/// `C` and returns `T̂`. With `no_correlation` the correction uses the
/// identity, so `T̂` is `S` with its diagonal zeroed and rows renormalized.
///
/// When `learning_rate` is `None` the predictor's rate is chosen from the
/// grid by cross-entropy on a held-out tenth, stratified by complementary
/// label.
pub fn estimate_transition(
    cds: &ComplementaryDataset,
    cfg: &TrainConfig,
    learning_rate: Option<f64>,
    no_correlation: bool,
) -> Result<TransitionEstimate> {
    let lr = match learning_rate {
        Some(lr) => lr,
        None => select_predictor_rate(cds, cfg)?,
    };
    let predictor = train_cl_predictor(cds, &with_lr(cfg, lr))?.model;
    let initial = estimate_initial_s(cds, &predictor)?;
    let correlation = if no_correlation {
        CorrelationMatrix::identity(cds.num_labels())
    } else {
        correlation_matrix(cds)
    };
    let transition = correct_transition(&initial, &correlation)?;
    Ok(TransitionEstimate {
        initial,
        correlation,
        transition,
        predictor,
        predictor_learning_rate: lr,
    })
}

fn select_predictor_rate(cds: &ComplementaryDataset, cfg: &TrainConfig) -> Result<f64> {
    let cls: Vec<usize> = cds.instances().iter().map(|i| i.cl()).collect();
    let (fit, held) = stratified_holdout(&cls, 0.1, cfg.seed);
    if held.is_empty() {
        return Ok(cfg.learning_rate);
    }
    let fit_set = cds.subset(&fit);
    let held_set = cds.subset(&held);
    let objective = SoftmaxCe {
        data: &held_set,
        clamp: ClampPolicy::default(),
    };
    let all: Vec<usize> = (0..held_set.len()).collect();
    let mut best = (f64::INFINITY, LEARNING_RATE_GRID[0]);
    for &lr in &LEARNING_RATE_GRID {
        let model = train_cl_predictor(&fit_set, &with_lr(cfg, lr))?.model;
        let ce = batch_loss(&objective, &model, &all)?;
        if ce < best.0 {
            best = (ce, lr);
        }
    }
    Ok(best.1)
}

/// Everything one fold produced.
#[derive(Debug, Clone)]
pub struct FoldOutput {
    pub fold_index: usize,
    pub metrics: MetricsReport,
    pub transition: Option<TransitionMatrix>,
    pub model: LinearModel,
    pub learning_rate: f64,
}

struct PreparedFold {
    train: MultiLabelDataset,
    test: MultiLabelDataset,
    cds: ComplementaryDataset,
    record: CorruptionRecord,
}

fn prepare(split: &FoldSplit, config: &RunConfig, seed: u64) -> Result<PreparedFold> {
    let (train, test) = if config.normalize_features {
        let scaling = FeatureScaling::fit(&split.train);
        (scaling.apply(&split.train)?, scaling.apply(&split.test)?)
    } else {
        (split.train.clone(), split.test.clone())
    };
    let (mut cds, record) = corrupt(&train, config.mode, seed)?;
    if config.regime == Regime::ComplementaryRelevant {
        cds = attach_relevant_subset(&cds, &record, config.relevant_per_instance, seed)?;
    }
    Ok(PreparedFold {
        train,
        test,
        cds,
        record,
    })
}

enum Learner<'a> {
    Supervised(&'a MultiLabelDataset),
    Complementary {
        cds: &'a ComplementaryDataset,
        transition: &'a TransitionMatrix,
        relevant: bool,
    },
}

impl Learner<'_> {
    fn fit(&self, cfg: &TrainConfig, subset: Option<&[usize]>) -> Result<LinearModel> {
        match self {
            Learner::Supervised(ds) => {
                let owned;
                let data = match subset {
                    Some(idx) => {
                        owned = ds.subset(idx);
                        &owned
                    }
                    None => *ds,
                };
                Ok(train_supervised(data, cfg)?.model)
            }
            Learner::Complementary {
                cds,
                transition,
                relevant,
            } => {
                let owned;
                let data = match subset {
                    Some(idx) => {
                        owned = cds.subset(idx);
                        &owned
                    }
                    None => *cds,
                };
                if *relevant {
                    Ok(train_clrl(data, transition, cfg)?.model)
                } else {
                    Ok(train_mlcl(data, transition, cfg)?.model)
                }
            }
        }
    }
}

/// Picks the grid learning rate with the best validation average precision.
/// The validation labels are the training fold's ground truth.
fn select_rate(
    learner: &Learner<'_>,
    train: &MultiLabelDataset,
    strata: &[usize],
    cfg: &TrainConfig,
    fraction: f64,
) -> Result<f64> {
    let (fit, held) = stratified_holdout(strata, fraction, cfg.seed);
    if held.is_empty() {
        return Ok(cfg.learning_rate);
    }
    let held_set = train.subset(&held);
    let mut best = (f64::NEG_INFINITY, LEARNING_RATE_GRID[0]);
    for &lr in &LEARNING_RATE_GRID {
        let model = learner.fit(&with_lr(cfg, lr), Some(&fit))?;
        let scores = score_all(
            &model,
            held_set.instances().iter().map(|i| i.features.clone()),
        )?;
        let ap = evaluate_all(&scores, &held_set.truth())?.average_precision;
        info!("validation lr={lr}: average precision {ap:.4}");
        if ap > best.0 {
            best = (ap, lr);
        }
    }
    Ok(best.1)
}

/// Corrupts the training fold, estimates or takes the transition, trains the
/// classifier and evaluates it on the clean test fold. Nothing from the test
/// fold is read before evaluation.
pub fn run_fold(split: &FoldSplit, config: &RunConfig) -> Result<FoldOutput> {
    let seed = config.train.seed.wrapping_add(split.fold_index as u64);
    let cfg = TrainConfig {
        seed,
        beta: config.effective_beta(),
        ..config.train.clone()
    };
    let fold = prepare(split, config, seed)?;
    let transition = match (&config.regime, &config.transition) {
        (Regime::Supervised, _) => None,
        (_, TransitionSource::Fixed(t)) => Some(t.clone()),
        (_, TransitionSource::Estimate) => Some(
            estimate_transition(&fold.cds, &cfg, config.learning_rate, config.no_correlation)?
                .transition,
        ),
    };
    let learner = match (&config.regime, &transition) {
        (Regime::Supervised, _) => Learner::Supervised(&fold.train),
        (regime, Some(t)) => Learner::Complementary {
            cds: &fold.cds,
            transition: t,
            relevant: *regime == Regime::ComplementaryRelevant,
        },
        (_, None) => unreachable!("complementary regimes always have a transition"),
    };
    let strata: Vec<usize> = match config.regime {
        Regime::Supervised => vec![0; fold.train.len()],
        _ => fold.cds.instances().iter().map(|i| i.cl()).collect(),
    };
    let learning_rate = match config.learning_rate {
        Some(lr) => lr,
        None => select_rate(
            &learner,
            &fold.train,
            &strata,
            &cfg,
            config.validation_fraction,
        )?,
    };
    let model = learner.fit(&with_lr(&cfg, learning_rate), None)?;
    debug_assert_eq!(fold.record.truth().len(), fold.train.len());

    let scores = score_all(
        &model,
        fold.test.instances().iter().map(|i| i.features.clone()),
    )?;
    let metrics = evaluate_all(&scores, &fold.test.truth())?;
    info!(
        "fold {}: average precision {:.4}, lr {learning_rate}",
        split.fold_index, metrics.average_precision
    );
    Ok(FoldOutput {
        fold_index: split.fold_index,
        metrics,
        transition,
        model,
        learning_rate,
    })
}

/// Per-fold reports with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub folds: Vec<MetricsReport>,
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

impl AggregateReport {
    pub fn from_folds(folds: Vec<MetricsReport>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::InvalidArgument(
                "report needs at least one fold".into(),
            ));
        }
        let n = folds.len() as f64;
        let mut mean = [0.0; 5];
        for f in &folds {
            for (m, v) in mean.iter_mut().zip(f.values()) {
                *m += v / n;
            }
        }
        let mut std = [0.0; 5];
        if folds.len() > 1 {
            for f in &folds {
                for ((s, v), m) in std.iter_mut().zip(f.values()).zip(mean) {
                    *s += (v - m).powi(2);
                }
            }
            for s in std.iter_mut() {
                *s = (*s / (n - 1.0)).sqrt();
            }
        }
        Ok(AggregateReport { folds, mean, std })
    }

    pub fn mean_of(&self, metric: &str) -> Option<f64> {
        METRIC_NAMES
            .iter()
            .position(|&m| m == metric)
            .map(|i| self.mean[i])
    }

    pub fn average_precision(&self) -> f64 {
        self.mean[4]
    }

    pub fn ranking_loss(&self) -> f64 {
        self.mean[1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,std\n");
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            writeln!(
                out,
                "{name},{},{}",
                format_significant(self.mean[i], 12),
                format_significant(self.std[i], 12)
            )
            .unwrap();
        }
        out.push_str("fold,");
        out.push_str(&METRIC_NAMES.join(","));
        out.push_str(",n_evaluated\n");
        for (f, r) in self.folds.iter().enumerate() {
            let values: Vec<String> = r
                .values()
                .iter()
                .map(|&v| format_significant(v, 12))
                .collect();
            writeln!(out, "{f},{},{}", values.join(","), r.n_evaluated).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let expect = |line: Option<(usize, &str)>, want: &str| -> Result<()> {
            match line {
                Some((_, l)) if l == want => Ok(()),
                Some((n, l)) => Err(Error::parse(
                    n + 1,
                    format!("expected {want:?}, found {l:?}"),
                )),
                None => Err(Error::parse(0, format!("missing {want:?}"))),
            }
        };
        expect(lines.next(), "metric,mean,std")?;
        let mut mean = [0.0; 5];
        let mut std = [0.0; 5];
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(i + 2, "missing metric row"))?;
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 || parts[0] != *name {
                return Err(Error::parse(n + 1, format!("expected {name} row")));
            }
            mean[i] = parse_number(parts[1], n + 1)?;
            std[i] = parse_number(parts[2], n + 1)?;
        }
        let header = format!("fold,{},n_evaluated", METRIC_NAMES.join(","));
        expect(lines.next(), &header)?;
        let mut folds = Vec::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 7 {
                return Err(Error::parse(n + 1, "expected 7 columns"));
            }
            let v: Vec<f64> = parts[1..6]
                .iter()
                .map(|p| parse_number(p, n + 1))
                .collect::<Result<_>>()?;
            folds.push(MetricsReport {
                hamming_loss: v[0],
                ranking_loss: v[1],
                one_error: v[2],
                coverage: v[3],
                average_precision: v[4],
                n_evaluated: parts[6]
                    .parse()
                    .map_err(|_| Error::parse(n + 1, "invalid n_evaluated"))?,
            });
        }
        if folds.is_empty() {
            return Err(Error::parse(0, "no fold rows"));
        }
        Ok(AggregateReport { folds, mean, std })
    }
}

fn parse_number(s: &str, line: usize) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("invalid number {s:?}")))
}

pub fn write_report(report: &AggregateReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: AggregateReport,
    pub folds: Vec<FoldOutput>,
}

/// K-fold cross-validation on an already preprocessed dataset. Folds run
/// concurrently and are merged in fold order.
pub fn run_cv_on(ds: &MultiLabelDataset, config: &RunConfig) -> Result<CvOutcome> {
    config.validate()?;
    let splits = kfold_split(ds, config.folds, config.train.seed)?;
    let folds: Vec<FoldOutput> = splits
        .par_iter()
        .map(|split| {
            run_fold(split, config).map_err(|e| Error::Fold {
                fold: split.fold_index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let report = AggregateReport::from_folds(folds.iter().map(|f| f.metrics).collect())?;
    Ok(CvOutcome { report, folds })
}

pub fn run_cv(config: &RunConfig) -> Result<CvOutcome> {
    run_cv_on(&load_dataset(config)?, config)
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub full: AggregateReport,
    pub without_correlation: AggregateReport,
    pub without_mse: AggregateReport,
}

/// The full pipeline and the two single-component ablations on the same folds.
pub fn run_ablation_on(ds: &MultiLabelDataset, config: &RunConfig) -> Result<AblationOutcome> {
    let variant = |no_correlation, no_mse| RunConfig {
        no_correlation,
        no_mse,
        ..config.clone()
    };
    let configs = [
        variant(false, false),
        variant(true, false),
        variant(false, true),
    ];
    let mut reports: Vec<AggregateReport> = configs
        .par_iter()
        .map(|c| run_cv_on(ds, c).map(|o| o.report))
        .collect::<Result<_>>()?;
    let without_mse = reports.pop().expect("three reports");
    let without_correlation = reports.pop().expect("three reports");
    let full = reports.pop().expect("three reports");
    Ok(AblationOutcome {
        full,
        without_correlation,
        without_mse,
    })
}

impl AblationOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = format!("variant,{}\n", METRIC_NAMES.join(","));
        for (name, r) in [
            ("full", &self.full),
            ("without_correlation", &self.without_correlation),
            ("without_mse", &self.without_mse),
        ] {
            out.push_str(&summary_row(name, r));
        }
        out
    }
}

fn summary_row(name: &str, r: &AggregateReport) -> String {
    let values: Vec<String> = r.mean.iter().map(|&v| format_significant(v, 12)).collect();
    format!("{name},{}\n", values.join(","))
}

pub const PAPER_BETAS: [f64; 5] = [0.1, 0.3, 0.5, 0.8, 1.0];

#[derive(Debug, Clone)]
pub struct BetaSweep {
    pub rows: Vec<(f64, AggregateReport)>,
}

impl BetaSweep {
    pub fn to_csv(&self) -> String {
        let mut out = format!("beta,{}\n", METRIC_NAMES.join(","));
        for (beta, r) in &self.rows {
            out.push_str(&summary_row(&format_significant(*beta, 12), r));
        }
        out
    }
}

pub fn sweep_beta_on(
    ds: &MultiLabelDataset,
    config: &RunConfig,
    betas: &[f64],
) -> Result<BetaSweep> {
    if betas.is_empty() {
        return Err(Error::InvalidArgument("need at least one beta".into()));
    }
    let rows = betas
        .par_iter()
        .map(|&beta| {
            let mut c = config.clone();
            c.train.beta = beta;
            run_cv_on(ds, &c).map(|o| (beta, o.report))
        })
        .collect::<Result<_>>()?;
    Ok(BetaSweep { rows })
}

#[derive(Debug, Clone)]
pub struct ClrlComparison {
    pub clrl: AggregateReport,
    pub cl_only: AggregateReport,
    pub supervised: AggregateReport,
}

impl ClrlComparison {
    pub fn to_csv(&self) -> String {
        let mut out = format!("regime,{}\n", METRIC_NAMES.join(","));
        out.push_str(&summary_row("clrl", &self.clrl));
        out.push_str(&summary_row("cl", &self.cl_only));
        out.push_str(&summary_row("supervised", &self.supervised));
        out
    }
}

/// Complementary plus relevant labels against complementary-only and fully
/// supervised training on the same folds.
pub fn run_clrl_on(ds: &MultiLabelDataset, config: &RunConfig) -> Result<ClrlComparison> {
    let with_regime = |regime| RunConfig {
        regime,
        ..config.clone()
    };
    let supervised = RunConfig {
        regime: Regime::Supervised,
        transition: TransitionSource::Estimate,
        no_correlation: false,
        no_mse: false,
        ..config.clone()
    };
    let configs = [
        with_regime(Regime::ComplementaryRelevant),
        with_regime(Regime::Complementary),
        supervised,
    ];
    let mut reports: Vec<AggregateReport> = configs
        .par_iter()
        .map(|c| run_cv_on(ds, c).map(|o| o.report))
        .collect::<Result<_>>()?;
    let supervised = reports.pop().expect("three reports");
    let cl_only = reports.pop().expect("three reports");
    let clrl = reports.pop().expect("three reports");
    Ok(ClrlComparison {
        clrl,
        cl_only,
        supervised,
    })
}

/// Settings for the synthetic classifier-consistency experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyConfig {
    pub num_labels: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            num_labels: 5,
            n_train: 5000,
            n_test: 2000,
            dim: 10,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConsistencyOutcome {
    pub mlcl_hamming: f64,
    pub supervised_hamming: f64,
    pub invertibility: InvertibilityReport,
}

impl ConsistencyOutcome {
    pub fn gap(&self) -> f64 {
        (self.mlcl_hamming - self.supervised_hamming).abs()
    }
}

/// Mutually exclusive labels with uniform priors and a uniform complementary
/// label, so the true transition is the uniform off-diagonal matrix. An MLCL
/// model trained with that matrix is compared with a supervised twin.
pub fn run_consistency(config: &ConsistencyConfig) -> Result<ConsistencyOutcome> {
    let k = config.num_labels;
    let support: Vec<(LabelSubset, f64)> = (0..k)
        .map(|l| (LabelSubset::from_labels(&[l]), 1.0 / k as f64))
        .collect();
    let spec = GenerativeSpec::from_support(k, &support)?;
    let (train_ds, train_cds) = sample_from_generative(
        &spec,
        config.n_train + config.n_test,
        config.dim,
        config.seed,
    )?;
    let train_idx: Vec<usize> = (0..config.n_train).collect();
    let test_idx: Vec<usize> = (config.n_train..config.n_train + config.n_test).collect();
    let test = train_ds.subset(&test_idx);
    let supervised_train = train_ds.subset(&train_idx);
    let cds = train_cds.subset(&train_idx);

    let t = TransitionMatrix::uniform(k)?;
    let invertibility = check_invertible(t.matrix());
    let cfg = TrainConfig {
        seed: config.seed,
        ..config.train.clone()
    };
    let (mlcl, supervised) = rayon::join(
        || train_mlcl(&cds, &t, &cfg),
        || train_supervised(&supervised_train, &cfg),
    );
    let hamming = |model: &LinearModel| -> Result<f64> {
        let scores = score_all(model, test.instances().iter().map(|i| i.features.clone()))?;
        Ok(evaluate_all(&scores, &test.truth())?.hamming_loss)
    };
    Ok(ConsistencyOutcome {
        mlcl_hamming: hamming(&mlcl?.model)?,
        supervised_hamming: hamming(&supervised?.model)?,
        invertibility,
    })
}

#[derive(Debug, Clone)]
pub struct TheoryConfig {
    pub theorem1_trials: usize,
    pub theorem1_ks: Vec<usize>,
    pub seed: u64,
    pub consistency: Option<ConsistencyConfig>,
    pub consistency_tolerance: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            theorem1_trials: 100,
            theorem1_ks: vec![3, 4, 5],
            seed: 0,
            consistency: Some(ConsistencyConfig::default()),
            consistency_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The scenario does not meet the ordering the bound assumes.
    NotApplicable,
}

impl CheckStatus {
    fn name(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::NotApplicable => "premise_violated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow {
    pub id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub status: CheckStatus,
    /// Human-readable description of the scenario.
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct TheoryOutcome {
    pub rows: Vec<TheoryRow>,
}

impl TheoryOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,lhs,rhs,pass\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                r.id,
                format_significant(r.lhs, 12),
                format_significant(r.rhs, 12),
                r.status.name()
            )
            .unwrap();
        }
        out
    }

    pub fn first_failure(&self) -> Option<&TheoryRow> {
        self.rows.iter().find(|r| r.status == CheckStatus::Fail)
    }

    /// `Err` with the first failing scenario's dump if any check failed.
    pub fn into_result(self) -> Result<Self> {
        match self.first_failure() {
            Some(row) => Err(Error::TheoryCheck(format!(
                "{}: lhs {} < rhs {}; {}",
                row.id, row.lhs, row.rhs, row.detail
            ))),
            None => Ok(self),
        }
    }
}

fn bound_row(check: &BoundCheck) -> TheoryRow {
    let status = if !check.premise_holds {
        CheckStatus::NotApplicable
    } else if check.bound_holds {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    TheoryRow {
        id: format!("distortion_{}", check.id),
        lhs: check.distortion,
        rhs: check.bound,
        status,
        detail: format!(
            "m={}, xi={}, p={}, premise {}",
            check.m, check.xi, check.cl_probability, check.premise_holds
        ),
    }
}

/// Runs every theory check and returns all rows, failing or not. Use
/// [`TheoryOutcome::into_result`] to turn failures into an error.
pub fn run_theory(config: &TheoryConfig) -> Result<TheoryOutcome> {
    let mut rows = Vec::new();
    for trial in theorem1_trials(config.theorem1_trials, &config.theorem1_ks, config.seed)? {
        rows.push(TheoryRow {
            id: format!("theorem1_{}_k{}_j{}", trial.id, trial.k, trial.label),
            lhs: trial.gap.lhs,
            rhs: trial.gap.rhs,
            status: if trial.gap.holds {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: format!(
                "K={}, j={}, subset probabilities {:?}, posterior {:?}",
                trial.k,
                trial.label,
                trial.spec.subset_probs(),
                trial.posterior
            ),
        });
    }
    rows.extend(bound_grid()?.iter().map(bound_row));
    if let Some(cc) = &config.consistency {
        let outcome = run_consistency(cc)?;
        let ok =
            outcome.gap() < config.consistency_tolerance && !outcome.invertibility.near_singular;
        rows.push(TheoryRow {
            id: format!("consistency_k{}_n{}", cc.num_labels, cc.n_train),
            lhs: outcome.gap(),
            rhs: config.consistency_tolerance,
            status: if ok {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: format!(
                "mlcl hamming {}, supervised hamming {}, det {}",
                outcome.mlcl_hamming, outcome.supervised_hamming, outcome.invertibility.determinant
            ),
        });
    }
    Ok(TheoryOutcome { rows })
}

/// Writes a row-per-line matrix CSV with 12 significant digits.
pub fn write_matrix_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, crate::transition::matrix_to_csv(m)).map_err(|e| Error::io(path, e))
}
