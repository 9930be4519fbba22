use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use mlcl::complementary::{attach_relevant_subset, corrupt, parse_complementary_file};
use mlcl::dataset::{parse_libsvm_multilabel_str, parse_multilabel_file, preprocess_topk_labels};
use mlcl::experiment::{
    estimate_transition, load_dataset, parse_switch, run_ablation_on, run_clrl_on, run_cv_on,
    run_theory, sweep_beta_on, write_report, AggregateReport, ConsistencyConfig, Regime, RunConfig,
    TheoryConfig, TransitionSource, PAPER_BETAS,
};
use mlcl::metrics::evaluate_all;
use mlcl::model::LinearModel;
use mlcl::optim::{train_clrl, train_mlcl, train_supervised, TrainOutcome};
use mlcl::transition::TransitionMatrix;

#[derive(Parser)]
#[command(
    name = "mlcl",
    version,
    about = "Multi-labeled complementary-label learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replace ground-truth labels with one complementary label per instance.
    Corrupt {
        #[command(flatten)]
        common: Common,
        /// Also reveal this many relevant labels per instance.
        #[arg(long)]
        relevant: Option<usize>,
    },
    /// Estimate the transition matrix from a complementary dataset.
    EstimateT {
        #[command(flatten)]
        common: Common,
        /// Use the initial estimate without the correlation correction.
        #[arg(long)]
        no_correlation: bool,
    },
    /// Train a classifier and write its checkpoint to --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// cl and clrl read a complementary dataset, supervised a multi-label one.
        #[arg(long, default_value = "cl")]
        regime: String,
    },
    /// Evaluate a checkpoint on a multi-label dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Cross-validated run.
    Cv {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        regime: Option<String>,
    },
    /// Full pipeline against the without-correlation and without-MSE variants.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// One cross-validated run per trade-off value.
    SweepBeta {
        #[command(flatten)]
        common: Common,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
    },
    /// Complementary plus relevant labels against complementary-only and supervised training.
    Clrl {
        #[command(flatten)]
        common: Common,
    },
    /// Check the theoretical inequalities and run the consistency experiment.
    TheoryCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        skip_consistency: bool,
    },
    /// Convert a LIBSVM multi-label file to the canonical format.
    Convert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        labels: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    data: Option<PathBuf>,
    /// uniform or biased
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    max_labels: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    transition_in: Option<PathBuf>,
    #[arg(long)]
    transition_out: Option<PathBuf>,
    #[arg(long)]
    curve_out: Option<PathBuf>,
    /// on or off
    #[arg(long)]
    normalize_features: Option<String>,
    /// Flat `key = value` file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(m) = &self.mode {
            cfg.mode = m.parse()?;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = Some(lr);
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(b) = self.batch {
            cfg.train.batch_size = b;
        }
        if let Some(b) = self.beta {
            cfg.train.beta = b;
        }
        if let Some(f) = self.folds {
            cfg.folds = f;
        }
        if let Some(m) = self.max_labels {
            cfg.max_labels = m;
        }
        if let Some(v) = &self.normalize_features {
            cfg.normalize_features = parse_switch("--normalize-features", v)?;
        }
        if let Some(path) = &self.transition_in {
            cfg.transition = TransitionSource::Fixed(TransitionMatrix::read_csv(path)?);
        }
        Ok(cfg)
    }

    fn data(&self, cfg: &RunConfig) -> Result<PathBuf> {
        cfg.data.clone().context("--data is required")
    }

    fn out(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cv_config(common: &Common, regime: Option<&str>) -> Result<RunConfig> {
    let mut cfg = common.run_config()?;
    if let Some(r) = regime {
        cfg.regime = r.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn single_run_config(common: &Common) -> Result<RunConfig> {
    let cfg = common.run_config()?;
    if cfg.normalize_features {
        bail!("--normalize-features applies to cross-validated runs only");
    }
    cfg.train.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corrupt { common, relevant } => {
            let cfg = single_run_config(&common)?;
            let ds = parse_multilabel_file(common.data(&cfg)?)?;
            let (mut cds, record) = corrupt(&ds, cfg.mode, cfg.train.seed)?;
            if let Some(r) = relevant {
                cds = attach_relevant_subset(&cds, &record, r, cfg.train.seed)?;
            }
            cds.write_file(common.out()?)?;
            info!("wrote {} complementary instances", cds.len());
        }
        Command::EstimateT {
            common,
            no_correlation,
        } => {
            let cfg = single_run_config(&common)?;
            let cds = parse_complementary_file(common.data(&cfg)?)?;
            let est =
                estimate_transition(&cds, &train_config(&cfg), cfg.learning_rate, no_correlation)?;
            let out = common
                .transition_out
                .as_deref()
                .or(common.out.as_deref())
                .context("--transition-out is required")?;
            est.transition.write_csv(out)?;
            info!("predictor learning rate {}", est.predictor_learning_rate);
        }
        Command::Train { common, regime } => {
            let cfg = single_run_config(&common)?;
            let regime: Regime = regime.parse()?;
            let data = common.data(&cfg)?;
            let tc = train_config(&cfg);
            let outcome: TrainOutcome = if regime == Regime::Supervised {
                train_supervised(&parse_multilabel_file(&data)?, &tc)?
            } else {
                let cds = parse_complementary_file(&data)?;
                let t = match &cfg.transition {
                    TransitionSource::Fixed(t) => t.clone(),
                    TransitionSource::Estimate => {
                        estimate_transition(&cds, &tc, cfg.learning_rate, cfg.no_correlation)?
                            .transition
                    }
                };
                if let Some(path) = &common.transition_out {
                    t.write_csv(path)?;
                }
                match regime {
                    Regime::ComplementaryRelevant => train_clrl(&cds, &t, &tc)?,
                    _ => train_mlcl(&cds, &t, &tc)?,
                }
            };
            outcome.model.write_file(common.out()?)?;
            if let Some(path) = &common.curve_out {
                outcome.curve.write_csv(path)?;
            }
        }
        Command::Eval { common, model } => {
            let cfg = single_run_config(&common)?;
            let ds = parse_multilabel_file(common.data(&cfg)?)?;
            let model = LinearModel::read_file(&model)?;
            let scores = ds
                .instances()
                .iter()
                .map(|i| model.forward(&i.features))
                .collect::<mlcl::Result<Vec<_>>>()?;
            let report = AggregateReport::from_folds(vec![evaluate_all(&scores, &ds.truth())?])?;
            emit(&common, &report.to_csv())?;
        }
        Command::Cv { common, regime } => {
            let cfg = cv_config(&common, regime.as_deref())?;
            let outcome = run_cv_on(&load_dataset(&cfg)?, &cfg)?;
            if let Some(path) = &common.transition_out {
                if let Some(t) = outcome.folds.first().and_then(|f| f.transition.as_ref()) {
                    t.write_csv(path)?;
                }
            }
            match &common.out {
                Some(path) => write_report(&outcome.report, path)?,
                None => print!("{}", outcome.report.to_csv()),
            }
        }
        Command::Ablate { common } => {
            let cfg = cv_config(&common, None)?;
            let outcome = run_ablation_on(&load_dataset(&cfg)?, &cfg)?;
            emit(&common, &outcome.to_csv())?;
        }
        Command::SweepBeta { common, betas } => {
            let cfg = cv_config(&common, None)?;
            let betas = if betas.is_empty() {
                PAPER_BETAS.to_vec()
            } else {
                betas
            };
            let sweep = sweep_beta_on(&load_dataset(&cfg)?, &cfg, &betas)?;
            emit(&common, &sweep.to_csv())?;
        }
        Command::Clrl { common } => {
            let cfg = cv_config(&common, None)?;
            let cmp = run_clrl_on(&load_dataset(&cfg)?, &cfg)?;
            emit(&common, &cmp.to_csv())?;
        }
        Command::TheoryCheck {
            common,
            trials,
            skip_consistency,
        } => {
            let cfg = common.run_config()?;
            let consistency = (!skip_consistency).then(|| ConsistencyConfig {
                seed: cfg.train.seed,
                train: train_config(&cfg),
                ..ConsistencyConfig::default()
            });
            let outcome = run_theory(&TheoryConfig {
                theorem1_trials: trials,
                seed: cfg.train.seed,
                consistency,
                ..TheoryConfig::default()
            })?;
            emit(&common, &outcome.to_csv())?;
            outcome.into_result()?;
        }
        Command::Convert {
            common,
            labels,
            dim,
        } => {
            let input = common.data.as_deref().context("--data is required")?;
            let text = fs::read_to_string(input)
                .with_context(|| format!("reading {}", input.display()))?;
            let mut ds = parse_libsvm_multilabel_str(&text, labels, dim)?;
            if let Some(max) = common.max_labels {
                ds = preprocess_topk_labels(&ds, max)?;
            }
            ds.write_file(common.out()?)?;
            info!(
                "wrote {} instances, d={}, K={}",
                ds.len(),
                ds.dim(),
                ds.num_labels()
            );
        }
    }
    Ok(())
}

/// The training settings with the explicit learning rate applied.
fn train_config(cfg: &RunConfig) -> mlcl::optim::TrainConfig {
    let mut tc = cfg.train.clone();
    if let Some(lr) = cfg.learning_rate {
        tc.learning_rate = lr;
    }
    tc
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
