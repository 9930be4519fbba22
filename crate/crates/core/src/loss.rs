//! Loss functions with analytic gradients with respect to the model scores,
//! the training objectives built from them, and a finite-difference checker.

use crate::complementary::ComplementaryDataset;
use crate::dataset::{MultiLabelDataset, SparseVec};
use crate::error::{Error, Result};
use crate::model::{backprop_head, Head, LinearModel};
use crate::transition::TransitionMatrix;

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Range that arguments of `log` are clamped into: `[ε, 1 − ε]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampPolicy {
    epsilon: f64,
}

impl ClampPolicy {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "clamp epsilon must lie in (0, 0.5), got {epsilon}"
            )));
        }
        Ok(ClampPolicy { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn clamp(&self, v: f64) -> (f64, bool) {
        let lo = self.epsilon;
        let hi = 1.0 - self.epsilon;
        if v < lo {
            (lo, false)
        } else if v > hi {
            (hi, false)
        } else {
            (v, true)
        }
    }
}

impl Default for ClampPolicy {
    fn default() -> Self {
        ClampPolicy {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// A loss value and its gradient with respect to the score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValue {
    fn add_scaled(mut self, other: &LossValue, scale: f64) -> LossValue {
        self.value += scale * other.value;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += scale * o;
        }
        self
    }
}

/// Elementwise binary cross-entropy of clamped `q` against `target`, with
/// the gradient with respect to the unclamped `q` (zero where clamped).
fn bce_terms(q: &[f64], target: impl Fn(usize) -> f64, clamp: ClampPolicy) -> LossValue {
    let mut value = 0.0;
    let grad = q
        .iter()
        .enumerate()
        .map(|(k, &qk)| {
            let t = target(k);
            let (c, inside) = clamp.clamp(qk);
            value -= t * c.ln() + (1.0 - t) * (1.0 - c).ln();
            if inside {
                -t / c + (1.0 - t) / (1.0 - c)
            } else {
                0.0
            }
        })
        .collect();
    LossValue { value, grad }
}

pub fn bce_supervised(f: &[f64], y: &[bool], clamp: ClampPolicy) -> LossValue {
    assert_eq!(f.len(), y.len());
    bce_terms(f, |k| f64::from(u8::from(y[k])), clamp)
}

fn one_hot(cl: usize) -> impl Fn(usize) -> f64 {
    move |k| if k == cl { 1.0 } else { 0.0 }
}

/// BCE between the complementary prediction `q = Tᵀf` and the one-hot
/// complementary label.
pub fn cl_bce(t: &TransitionMatrix, f: &[f64], cl: usize, clamp: ClampPolicy) -> LossValue {
    let q = t.apply(f);
    let dq = bce_terms(&q, one_hot(cl), clamp);
    LossValue {
        value: dq.value,
        grad: t.matrix().mul_vec(&dq.grad),
    }
}

/// `‖ȳ − Tᵀf‖²`.
pub fn cl_mse(t: &TransitionMatrix, f: &[f64], cl: usize) -> LossValue {
    let q = t.apply(f);
    let target = one_hot(cl);
    let residual: Vec<f64> = q.iter().enumerate().map(|(k, &v)| v - target(k)).collect();
    let value = residual.iter().map(|r| r * r).sum();
    let dq: Vec<f64> = residual.iter().map(|r| 2.0 * r).collect();
    LossValue {
        value,
        grad: t.matrix().mul_vec(&dq),
    }
}

pub fn mlcl_loss(
    t: &TransitionMatrix,
    f: &[f64],
    cl: usize,
    beta: f64,
    clamp: ClampPolicy,
) -> LossValue {
    let bce = cl_bce(t, f, cl, clamp);
    if beta == 0.0 {
        return bce;
    }
    bce.add_scaled(&cl_mse(t, f, cl), beta)
}

/// Complementary BCE plus `‖ỹ − f‖²` toward the known relevant labels.
pub fn clrl_loss(
    t: &TransitionMatrix,
    f: &[f64],
    cl: usize,
    relevant: &[bool],
    clamp: ClampPolicy,
) -> LossValue {
    assert_eq!(f.len(), relevant.len());
    let mut out = cl_bce(t, f, cl, clamp);
    for (k, (&fk, &rk)) in f.iter().zip(relevant).enumerate() {
        let r = fk - f64::from(u8::from(rk));
        out.value += r * r;
        out.grad[k] += 2.0 * r;
    }
    out
}

/// `−log f̄[cl]` for a softmax output `f̄`.
pub fn ce_softmax(fbar: &[f64], cl: usize, clamp: ClampPolicy) -> LossValue {
    let (c, inside) = clamp.clamp(fbar[cl]);
    let mut grad = vec![0.0; fbar.len()];
    if inside {
        grad[cl] = -1.0 / c;
    }
    LossValue {
        value: -c.ln(),
        grad,
    }
}

/// A per-instance loss over a fixed set of training instances.
pub trait Objective: Sync {
    fn head(&self) -> Head;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn dim(&self) -> usize;
    fn num_labels(&self) -> usize;
    fn features(&self, i: usize) -> &SparseVec;
    fn loss(&self, scores: &[f64], i: usize) -> LossValue;
}

pub struct Supervised<'a> {
    pub data: &'a MultiLabelDataset,
    pub clamp: ClampPolicy,
}

impl Objective for Supervised<'_> {
    fn head(&self) -> Head {
        Head::Sigmoid
    }
    fn len(&self) -> usize {
        self.data.len()
    }
    fn dim(&self) -> usize {
        self.data.dim()
    }
    fn num_labels(&self) -> usize {
        self.data.num_labels()
    }
    fn features(&self, i: usize) -> &SparseVec {
        &self.data.instances()[i].features
    }
    fn loss(&self, scores: &[f64], i: usize) -> LossValue {
        bce_supervised(scores, &self.data.instances()[i].labels, self.clamp)
    }
}

pub struct Mlcl<'a> {
    pub data: &'a ComplementaryDataset,
    pub transition: &'a TransitionMatrix,
    pub beta: f64,
    pub clamp: ClampPolicy,
}

impl Objective for Mlcl<'_> {
    fn head(&self) -> Head {
        Head::Sigmoid
    }
    fn len(&self) -> usize {
        self.data.len()
    }
    fn dim(&self) -> usize {
        self.data.dim()
    }
    fn num_labels(&self) -> usize {
        self.data.num_labels()
    }
    fn features(&self, i: usize) -> &SparseVec {
        &self.data.instances()[i].features
    }
    fn loss(&self, scores: &[f64], i: usize) -> LossValue {
        let cl = self.data.instances()[i].cl();
        mlcl_loss(self.transition, scores, cl, self.beta, self.clamp)
    }
}

pub struct Clrl<'a> {
    data: &'a ComplementaryDataset,
    transition: &'a TransitionMatrix,
    clamp: ClampPolicy,
}

impl<'a> Clrl<'a> {
    pub fn new(
        data: &'a ComplementaryDataset,
        transition: &'a TransitionMatrix,
        clamp: ClampPolicy,
    ) -> Result<Self> {
        if let Some(index) = data.instances().iter().position(|i| i.relevant().is_none()) {
            return Err(Error::InvalidInstance {
                index,
                message: "missing relevant label subset".into(),
            });
        }
        Ok(Clrl {
            data,
            transition,
            clamp,
        })
    }
}

impl Objective for Clrl<'_> {
    fn head(&self) -> Head {
        Head::Sigmoid
    }
    fn len(&self) -> usize {
        self.data.len()
    }
    fn dim(&self) -> usize {
        self.data.dim()
    }
    fn num_labels(&self) -> usize {
        self.data.num_labels()
    }
    fn features(&self, i: usize) -> &SparseVec {
        &self.data.instances()[i].features
    }
    fn loss(&self, scores: &[f64], i: usize) -> LossValue {
        let inst = &self.data.instances()[i];
        let relevant = inst.relevant().expect("checked at construction");
        clrl_loss(self.transition, scores, inst.cl(), relevant, self.clamp)
    }
}

/// Cross-entropy of a softmax predictor on the complementary labels.
pub struct SoftmaxCe<'a> {
    pub data: &'a ComplementaryDataset,
    pub clamp: ClampPolicy,
}

impl Objective for SoftmaxCe<'_> {
    fn head(&self) -> Head {
        Head::Softmax
    }
    fn len(&self) -> usize {
        self.data.len()
    }
    fn dim(&self) -> usize {
        self.data.dim()
    }
    fn num_labels(&self) -> usize {
        self.data.num_labels()
    }
    fn features(&self, i: usize) -> &SparseVec {
        &self.data.instances()[i].features
    }
    fn loss(&self, scores: &[f64], i: usize) -> LossValue {
        ce_softmax(scores, self.data.instances()[i].cl(), self.clamp)
    }
}

fn check_model(obj: &dyn Objective, model: &LinearModel) -> Result<()> {
    if model.head() != obj.head() {
        return Err(Error::InvalidArgument(format!(
            "objective needs a {} head, model has {}",
            obj.head().name(),
            model.head().name()
        )));
    }
    if model.num_labels() != obj.num_labels() {
        return Err(Error::DimensionMismatch {
            expected: obj.num_labels(),
            actual: model.num_labels(),
        });
    }
    if model.dim() < obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            actual: model.dim(),
        });
    }
    Ok(())
}

/// Mean loss over `batch`, without gradients.
pub fn batch_loss(obj: &dyn Objective, model: &LinearModel, batch: &[usize]) -> Result<f64> {
    check_model(obj, model)?;
    let mut total = 0.0;
    for &i in batch {
        let scores = model.forward(obj.features(i))?;
        total += obj.loss(&scores, i).value;
    }
    Ok(total / batch.len().max(1) as f64)
}

/// Mean loss over `batch` and its gradient with respect to the model
/// parameters, in the model's flat parameter layout.
pub fn batch_loss_and_grad(
    obj: &dyn Objective,
    model: &LinearModel,
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    check_model(obj, model)?;
    let mut grad = vec![0.0; model.params().len()];
    let mut total = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    for &i in batch {
        let x = obj.features(i);
        let scores = model.forward(x)?;
        let lv = obj.loss(&scores, i);
        total += lv.value;
        let logit_grad = backprop_head(model.head(), &scores, &lv.grad);
        model.accumulate_grad(x, &logit_grad, scale, &mut grad);
    }
    Ok((total * scale, grad))
}

pub const FINITE_DIFFERENCE_STEP: f64 = 1e-5;
pub const DEFAULT_GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

/// Compares `analytic` with central differences of the mean batch loss over
/// every parameter. Fails with the worst coordinate.
pub fn compare_gradients(
    obj: &dyn Objective,
    model: &LinearModel,
    batch: &[usize],
    analytic: &[f64],
    tolerance: f64,
) -> Result<GradientReport> {
    if analytic.len() != model.params().len() {
        return Err(Error::DimensionMismatch {
            expected: model.params().len(),
            actual: analytic.len(),
        });
    }
    let mut probe = model.clone();
    let mut report = GradientReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
    };
    for (p, &a) in analytic.iter().enumerate() {
        let original = probe.params()[p];
        probe.params_mut()[p] = original + FINITE_DIFFERENCE_STEP;
        let up = batch_loss(obj, &probe, batch)?;
        probe.params_mut()[p] = original - FINITE_DIFFERENCE_STEP;
        let down = batch_loss(obj, &probe, batch)?;
        probe.params_mut()[p] = original;
        let numeric = (up - down) / (2.0 * FINITE_DIFFERENCE_STEP);
        let err = relative_error(a, numeric);
        if err > report.max_relative_error || p == 0 {
            report = GradientReport {
                max_relative_error: err,
                worst_index: p,
                analytic: a,
                numeric,
            };
        }
    }
    if report.max_relative_error > tolerance {
        return Err(Error::GradientCheck {
            index: report.worst_index,
            analytic: report.analytic,
            numeric: report.numeric,
            relative_error: report.max_relative_error,
        });
    }
    Ok(report)
}

pub fn gradient_check(
    obj: &dyn Objective,
    model: &LinearModel,
    batch: &[usize],
    tolerance: f64,
) -> Result<GradientReport> {
    let (_, analytic) = batch_loss_and_grad(obj, model, batch)?;
    compare_gradients(obj, model, batch, &analytic, tolerance)
}
