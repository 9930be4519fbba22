//! Adam with coupled L2 weight decay and the mini-batch training loops.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::complementary::ComplementaryDataset;
use crate::dataset::MultiLabelDataset;
use crate::error::{Error, Result};
use crate::linalg::format_significant;
use crate::loss::{batch_loss_and_grad, ClampPolicy, Clrl, Mlcl, Objective, SoftmaxCe, Supervised};
use crate::model::{init_linear, Head, LinearModel};
use crate::transition::TransitionMatrix;

pub const LEARNING_RATE_GRID: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            batch_size: 256,
            epochs: 200,
            beta: 1.0,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(
                "weight_decay must be nonnegative".into(),
            ));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidArgument("beta must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }
}

/// One Adam update with bias correction. Weight decay is added to the
/// gradient before the moment updates. A non-finite gradient leaves both
/// `params` and `state` untouched.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.first.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index, value });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.adam_beta1.powi(t);
    let c2 = 1.0 - cfg.adam_beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i] + cfg.weight_decay * params[i];
        state.first[i] = cfg.adam_beta1 * state.first[i] + (1.0 - cfg.adam_beta1) * g;
        state.second[i] = cfg.adam_beta2 * state.second[i] + (1.0 - cfg.adam_beta2) * g * g;
        let m_hat = state.first[i] / c1;
        let v_hat = state.second[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

/// Mean training loss of each epoch, weighted by batch size.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub epoch_losses: Vec<f64>,
}

impl TrainingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.epoch_losses.iter().enumerate() {
            writeln!(out, "{},{}", e + 1, format_significant(*l, 12)).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Fraction of epoch-to-epoch transitions that do not increase the loss.
    pub fn non_increasing_fraction(&self) -> f64 {
        let steps = self.epoch_losses.len().saturating_sub(1);
        if steps == 0 {
            return 1.0;
        }
        let ok = self
            .epoch_losses
            .windows(2)
            .filter(|w| w[1] <= w[0])
            .count();
        ok as f64 / steps as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LinearModel,
    pub curve: TrainingCurve,
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch Adam on `obj`, starting
/// from `model`. The last short batch of each epoch is kept.
pub fn train(
    obj: &dyn Objective,
    mut model: LinearModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.head() != obj.head() {
        return Err(Error::InvalidArgument(format!(
            "objective needs a {} head",
            obj.head().name()
        )));
    }
    let n = obj.len();
    let mut curve = TrainingCurve::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { model, curve });
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cannot train on an empty dataset".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut state = AdamState::new(model.params().len());
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = batch_loss_and_grad(obj, &model, batch)?;
            total += loss * batch.len() as f64;
            adam_step(model.params_mut(), &grad, &mut state, cfg)?;
        }
        curve.epoch_losses.push(total / n as f64);
    }
    Ok(TrainOutcome { model, curve })
}

fn initial(dim: usize, k: usize, head: Head, cfg: &TrainConfig) -> Result<LinearModel> {
    init_linear(dim, k, head, cfg.seed)
}

/// Softmax predictor of the complementary label, trained with cross-entropy.
pub fn train_cl_predictor(cds: &ComplementaryDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let obj = SoftmaxCe {
        data: cds,
        clamp: ClampPolicy::default(),
    };
    train(
        &obj,
        initial(cds.dim(), cds.num_labels(), Head::Softmax, cfg)?,
        cfg,
    )
}

/// Sigmoid multi-label classifier trained through `t` with the combined
/// complementary loss, weighted by `cfg.beta`.
pub fn train_mlcl(
    cds: &ComplementaryDataset,
    t: &TransitionMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_transition(cds.num_labels(), t)?;
    let obj = Mlcl {
        data: cds,
        transition: t,
        beta: cfg.beta,
        clamp: ClampPolicy::default(),
    };
    train(
        &obj,
        initial(cds.dim(), cds.num_labels(), Head::Sigmoid, cfg)?,
        cfg,
    )
}

pub fn train_supervised(ds: &MultiLabelDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let obj = Supervised {
        data: ds,
        clamp: ClampPolicy::default(),
    };
    train(
        &obj,
        initial(ds.dim(), ds.num_labels(), Head::Sigmoid, cfg)?,
        cfg,
    )
}

/// Requires every instance to carry a relevant label subset.
pub fn train_clrl(
    cds: &ComplementaryDataset,
    t: &TransitionMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_transition(cds.num_labels(), t)?;
    let obj = Clrl::new(cds, t, ClampPolicy::default())?;
    train(
        &obj,
        initial(cds.dim(), cds.num_labels(), Head::Sigmoid, cfg)?,
        cfg,
    )
}

fn check_transition(k: usize, t: &TransitionMatrix) -> Result<()> {
    if t.num_labels() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: t.num_labels(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_multilabel_str;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = vec![0.3, -1.2];
        let mut s = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, &cfg).unwrap();
        }
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        // With a constant gradient both bias-corrected moments equal g, so
        // every step is lr·g/(|g| + eps).
        let cfg = TrainConfig {
            weight_decay: 0.0,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        let g = [0.5, -2.0];
        for step in 1..=100 {
            let before = p.clone();
            adam_step(&mut p, &g, &mut s, &cfg).unwrap();
            for i in 0..2 {
                let want = cfg.learning_rate * g[i] / (g[i].abs() + cfg.adam_eps);
                assert!(((before[i] - p[i]) - want).abs() < 1e-15, "step {step}");
            }
        }
    }

    #[test]
    fn weight_decay_is_coupled() {
        // A single step from p with zero gradient equals a step with gradient wd·p.
        let cfg = TrainConfig::default();
        let mut a = vec![2.0];
        let mut sa = AdamState::new(1);
        adam_step(&mut a, &[0.0], &mut sa, &cfg).unwrap();
        let plain = TrainConfig {
            weight_decay: 0.0,
            ..cfg.clone()
        };
        let mut b = vec![2.0];
        let mut sb = AdamState::new(1);
        adam_step(&mut b, &[cfg.weight_decay * 2.0], &mut sb, &plain).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0, 2.0];
        let mut s = AdamState::new(2);
        let err = adam_step(&mut p, &[0.1, f64::NAN], &mut s, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1, .. }));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ds = parse_multilabel_str("2 2 3\n0 0:1\n1,2 1:1\n").unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train_supervised(&ds, &cfg).unwrap();
        assert_eq!(
            out.model,
            init_linear(2, 3, Head::Sigmoid, cfg.seed).unwrap()
        );
        assert!(out.curve.epoch_losses.is_empty());
    }

    #[test]
    fn single_instance_is_memorized() {
        let ds = parse_multilabel_str("1 2 3\n0,2 0:1 1:-0.5\n").unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-1,
            weight_decay: 0.0,
            epochs: 300,
            ..TrainConfig::default()
        };
        let out = train_supervised(&ds, &cfg).unwrap();
        assert!(*out.curve.epoch_losses.last().unwrap() < 1e-2);
        let f = out.model.forward(&ds.instances()[0].features).unwrap();
        assert!(f[0] > 0.99 && f[1] < 0.01 && f[2] > 0.99);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = parse_multilabel_str("4 2 3\n0 0:1\n1 1:1\n2 0:-1\n0,1 0:1 1:1\n").unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let a = train_supervised(&ds, &cfg).unwrap();
        let b = train_supervised(&ds, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn invalid_config_rejected() {
        let ds = parse_multilabel_str("1 1 3\n0 0:1\n").unwrap();
        for cfg in [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                beta: -1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(train_supervised(&ds, &cfg).is_err());
        }
    }

    #[test]
    fn clrl_requires_relevant_subsets() {
        let ds = parse_multilabel_str("2 1 3\n0 0:1\n1 0:-1\n").unwrap();
        let (cds, _) = crate::complementary::corrupt_uniform(&ds, 0).unwrap();
        let t = TransitionMatrix::uniform(3).unwrap();
        assert!(matches!(
            train_clrl(&cds, &t, &TrainConfig::default()),
            Err(Error::InvalidInstance { index: 0, .. })
        ));
    }
}
