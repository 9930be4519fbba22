//! Linear scoring model with a sigmoid or softmax output head.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::SparseVec;
use crate::error::{Error, Result};
use crate::linalg::format_significant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Independent per-label probabilities.
    Sigmoid,
    /// A distribution over labels.
    Softmax,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Sigmoid => "sigmoid",
            Head::Softmax => "softmax",
        }
    }
}

impl std::str::FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Head::Sigmoid),
            "softmax" => Ok(Head::Softmax),
            other => Err(Error::InvalidArgument(format!("unknown head {other:?}"))),
        }
    }
}

/// `f(x) = head(Wx + b)` with `W` of shape K×d.
///
/// Parameters live in one flat buffer: the K×d weights row-major, then the K
/// biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    dim: usize,
    k: usize,
    head: Head,
    params: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(dim: usize, k: usize, head: Head) -> Self {
        LinearModel {
            dim,
            k,
            head,
            params: vec![0.0; k * (dim + 1)],
        }
    }

    pub fn from_parts(weights: &[Vec<f64>], bias: &[f64], head: Head) -> Result<Self> {
        let k = bias.len();
        if weights.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: weights.len(),
            });
        }
        let dim = weights.first().map_or(0, Vec::len);
        let mut params = Vec::with_capacity(k * (dim + 1));
        for row in weights {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            params.extend_from_slice(row);
        }
        params.extend_from_slice(bias);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "model parameters must be finite".into(),
            ));
        }
        Ok(LinearModel {
            dim,
            k,
            head,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_labels(&self) -> usize {
        self.k
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weight_row(&self, label: usize) -> &[f64] {
        &self.params[label * self.dim..(label + 1) * self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.k * self.dim..]
    }

    pub fn weight_index(&self, label: usize, feature: usize) -> usize {
        label * self.dim + feature
    }

    pub fn bias_index(&self, label: usize) -> usize {
        self.k * self.dim + label
    }

    pub fn logits(&self, x: &SparseVec) -> Result<Vec<f64>> {
        if x.min_dim() > self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.min_dim(),
            });
        }
        let bias = self.bias();
        Ok((0..self.k)
            .map(|l| x.dot(self.weight_row(l)) + bias[l])
            .collect())
    }

    pub fn forward(&self, x: &SparseVec) -> Result<Vec<f64>> {
        Ok(activate(self.head, &self.logits(x)?))
    }

    /// Adds `g ⊗ [x, 1]` to a gradient buffer shaped like `params`, where `g`
    /// is the gradient with respect to the logits.
    pub(crate) fn accumulate_grad(
        &self,
        x: &SparseVec,
        logit_grad: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        let bias_start = self.k * self.dim;
        for (l, &g) in logit_grad.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let g = g * scale;
            let row = &mut out[l * self.dim..(l + 1) * self.dim];
            for (i, v) in x.iter() {
                row[i] += g * v;
            }
            out[bias_start + l] += g;
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {} {}", self.dim, self.k, self.head.name()).unwrap();
        for l in 0..self.k {
            let mut row: Vec<String> = self
                .weight_row(l)
                .iter()
                .map(|&w| format_significant(w, 17))
                .collect();
            row.push(format_significant(self.bias()[l], 17));
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::parse(1, "header must be \"d K head\""));
        }
        let dim: usize = parts[0]
            .parse()
            .map_err(|_| Error::parse(1, format!("invalid d {:?}", parts[0])))?;
        let k: usize = parts[1]
            .parse()
            .map_err(|_| Error::parse(1, format!("invalid K {:?}", parts[1])))?;
        let head: Head = parts[2]
            .parse()
            .map_err(|e: Error| Error::parse(1, e.to_string()))?;
        let mut weights = Vec::with_capacity(k);
        let mut bias = Vec::with_capacity(k);
        for l in 0..k {
            let line_no = l + 2;
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(line_no, "missing weight row"))?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(line_no, format!("invalid number {t:?}")))
                })
                .collect::<Result<_>>()?;
            if values.len() != dim + 1 {
                return Err(Error::parse(
                    line_no,
                    format!("expected {} values, found {}", dim + 1, values.len()),
                ));
            }
            bias.push(values[dim]);
            weights.push(values[..dim].to_vec());
        }
        if k == 0 {
            return Ok(LinearModel::zeros(dim, 0, head));
        }
        let mut model = LinearModel::from_parts(&weights, &bias, head)?;
        model.dim = dim;
        Ok(model)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LinearModel::from_text(&text)
    }
}

/// Weights drawn from `N(0, 1/d)`, biases zero.
pub fn init_linear(dim: usize, k: usize, head: Head, seed: u64) -> Result<LinearModel> {
    if dim == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "model needs d >= 1 and K >= 1, got d={dim}, K={k}"
        )));
    }
    let mut model = LinearModel::zeros(dim, k, head);
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive scale");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for w in &mut model.params[..k * dim] {
        *w = normal.sample(&mut rng);
    }
    Ok(model)
}

const SIGMOID_FLOOR: f64 = f64::MIN_POSITIVE;
const SIGMOID_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_FLOOR, SIGMOID_CEIL)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

pub fn activate(head: Head, logits: &[f64]) -> Vec<f64> {
    match head {
        Head::Sigmoid => logits.iter().map(|&z| sigmoid(z)).collect(),
        Head::Softmax => softmax(logits),
    }
}

/// Chains a gradient with respect to the scores back to the logits.
pub fn backprop_head(head: Head, scores: &[f64], score_grad: &[f64]) -> Vec<f64> {
    match head {
        Head::Sigmoid => scores
            .iter()
            .zip(score_grad)
            .map(|(&f, &g)| g * f * (1.0 - f))
            .collect(),
        Head::Softmax => {
            let inner: f64 = scores.iter().zip(score_grad).map(|(f, g)| f * g).sum();
            scores
                .iter()
                .zip(score_grad)
                .map(|(&f, &g)| f * (g - inner))
                .collect()
        }
    }
}

/// Labels whose score is strictly above 0.5.
pub fn predict_labels(scores: &[f64]) -> Vec<bool> {
    scores.iter().map(|&s| s > 0.5).collect()
}

/// Label indices by descending score, ties to the lower index.
pub fn rank_labels(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// 1-based rank of every label under [`rank_labels`].
pub fn label_ranks(scores: &[f64]) -> Vec<usize> {
    let mut ranks = vec![0; scores.len()];
    for (pos, label) in rank_labels(scores).into_iter().enumerate() {
        ranks[label] = pos + 1;
    }
    ranks
}
