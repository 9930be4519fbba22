//! Transition matrix estimation: the initial matrix `S` averaged from a
//! complementary-label predictor, the candidate co-occurrence matrix `C`, and
//! the corrected transition `T̂ = S·Cᵀ`.

use std::fs;
use std::path::Path;

use log::warn;

use crate::complementary::ComplementaryDataset;
use crate::error::{Error, Result};
use crate::linalg::{format_significant, Matrix};
use crate::model::{Head, LinearModel};

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// `S_kj ≈ p(ȳ^j = 1 | ŷ^k = 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialTransition(Matrix);

impl InitialTransition {
    pub fn new(m: Matrix) -> Result<Self> {
        check_square(&m)?;
        if m.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "S entries must lie in [0, 1]".into(),
            ));
        }
        Ok(InitialTransition(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// `C_kj`: fraction of instances with label k in the candidate set that also
/// have label j there.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(Matrix);

impl CorrelationMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        check_square(&m)?;
        if m.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "C entries must lie in [0, 1]".into(),
            ));
        }
        if (0..m.rows()).any(|i| m[(i, i)] != 1.0) {
            return Err(Error::InvalidArgument("C must have a unit diagonal".into()));
        }
        Ok(CorrelationMatrix(m))
    }

    pub fn identity(k: usize) -> Self {
        CorrelationMatrix(Matrix::identity(k))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Row-stochastic K×K matrix with zero diagonal; `T_kj = p(ȳ^j = 1 | y^k = 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(Matrix);

impl TransitionMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        check_square(&m)?;
        for i in 0..m.rows() {
            if m[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "T has nonzero diagonal at row {i}"
                )));
            }
            let row = m.row(i);
            if row.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "T row {i} has a negative entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("T row {i} sums to {sum}")));
            }
        }
        Ok(TransitionMatrix(m))
    }

    #[cfg(test)]
    pub(crate) fn new_unchecked(m: Matrix) -> Self {
        TransitionMatrix(m)
    }

    /// `1/(K−1)` everywhere off the diagonal.
    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "K must be at least 2, got {k}"
            )));
        }
        Ok(TransitionMatrix(uniform_off_diagonal(k)))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn num_labels(&self) -> usize {
        self.0.rows()
    }

    /// `Tᵀf`, the complementary prediction implied by label scores `f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.0.transpose_mul_vec(f)
    }

    /// K lines of K comma-separated values with 12 significant digits.
    pub fn to_csv(&self) -> String {
        matrix_to_csv(&self.0)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let m = matrix_from_csv(text)?;
        // Values were rounded to 12 digits; renormalize rows before validating.
        let mut m = m;
        for i in 0..m.rows() {
            let sum: f64 = m.row(i).iter().sum();
            if sum > 0.0 && (sum - 1.0).abs() < 1e-6 {
                for v in m.row_mut(i) {
                    *v /= sum;
                }
            }
        }
        TransitionMatrix::new(m)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TransitionMatrix::from_csv(&text)
    }
}

fn check_square(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            actual: m.cols(),
        });
    }
    Ok(())
}

fn uniform_off_diagonal(k: usize) -> Matrix {
    let mut m = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                m[(i, j)] = 1.0 / (k - 1) as f64;
            }
        }
    }
    m
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m
            .row(i)
            .iter()
            .map(|&v| format_significant(v, 12))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(n + 1, format!("invalid number {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return Err(Error::parse(
                    n + 1,
                    format!("expected {first} columns, found {}", row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(1, "empty matrix"));
    }
    let m = Matrix::from_rows(&rows);
    check_square(&m)?;
    Ok(m)
}

/// Candidate co-occurrence rates. Since every candidate set is all labels but
/// one, `|ŷ^k ∧ ŷ^j| = n − n_k − n_j` and `|ŷ^k| = n − n_k`, where `n_k` counts
/// complementary labels equal to k.
pub fn correlation_matrix(cds: &ComplementaryDataset) -> CorrelationMatrix {
    let k = cds.num_labels();
    let n = cds.len();
    let mut cl_count = vec![0usize; k];
    for inst in cds.instances() {
        cl_count[inst.cl()] += 1;
    }
    let mut m = Matrix::identity(k);
    for a in 0..k {
        let with_a = n - cl_count[a];
        if with_a == 0 {
            warn!("label {a} is never a candidate; using uniform correlation row");
            for b in (0..k).filter(|&b| b != a) {
                m[(a, b)] = (k - 1) as f64 / k as f64;
            }
            continue;
        }
        for b in (0..k).filter(|&b| b != a) {
            m[(a, b)] = (with_a - cl_count[b]) as f64 / with_a as f64;
        }
    }
    CorrelationMatrix(m)
}

/// Averages predicted complementary distributions by candidate label:
/// `S_k· = mean of scores[i] over {i : ȳ_i ≠ k}`.
pub fn estimate_initial_s_from_scores(
    cds: &ComplementaryDataset,
    scores: &[Vec<f64>],
) -> Result<InitialTransition> {
    let k = cds.num_labels();
    if scores.len() != cds.len() {
        return Err(Error::DimensionMismatch {
            expected: cds.len(),
            actual: scores.len(),
        });
    }
    let mut total = vec![0.0; k];
    let mut by_cl = vec![vec![0.0; k]; k];
    let mut cl_count = vec![0usize; k];
    for (inst, s) in cds.instances().iter().zip(scores) {
        if s.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: s.len(),
            });
        }
        for j in 0..k {
            total[j] += s[j];
            by_cl[inst.cl()][j] += s[j];
        }
        cl_count[inst.cl()] += 1;
    }
    let n = cds.len();
    let mut m = Matrix::zeros(k, k);
    for row in 0..k {
        let members = n - cl_count[row];
        if members == 0 {
            warn!("no instance has label {row} as a candidate; using a uniform S row");
            m.row_mut(row).fill(1.0 / k as f64);
            continue;
        }
        for j in 0..k {
            m[(row, j)] = ((total[j] - by_cl[row][j]) / members as f64).clamp(0.0, 1.0);
        }
    }
    InitialTransition::new(m)
}

/// Runs a softmax complementary-label predictor over `cds` and averages its
/// outputs into `S`.
pub fn estimate_initial_s(
    cds: &ComplementaryDataset,
    predictor: &LinearModel,
) -> Result<InitialTransition> {
    if predictor.head() != Head::Softmax {
        return Err(Error::InvalidArgument(
            "initial transition needs a softmax complementary-label predictor".into(),
        ));
    }
    let scores = cds
        .instances()
        .iter()
        .map(|i| predictor.forward(&i.features))
        .collect::<Result<Vec<_>>>()?;
    estimate_initial_s_from_scores(cds, &scores)
}

/// `M = S·Cᵀ`, then zero the diagonal and normalize each row.
pub fn correct_and_normalize(s: &Matrix, c: &Matrix) -> Result<TransitionMatrix> {
    check_square(s)?;
    if s.rows() != c.rows() || !c.is_square() {
        return Err(Error::DimensionMismatch {
            expected: s.rows(),
            actual: c.rows(),
        });
    }
    let k = s.rows();
    let mut m = s.mul_transpose(c);
    for row in 0..k {
        m[(row, row)] = 0.0;
        let sum: f64 = m.row(row).iter().sum();
        if !(sum > 1e-12) {
            warn!("transition row {row} has no off-diagonal mass; using uniform row");
            for j in 0..k {
                m[(row, j)] = if j == row { 0.0 } else { 1.0 / (k - 1) as f64 };
            }
            continue;
        }
        for v in m.row_mut(row) {
            *v /= sum;
        }
    }
    Ok(TransitionMatrix(m))
}

pub fn correct_transition(
    s: &InitialTransition,
    c: &CorrelationMatrix,
) -> Result<TransitionMatrix> {
    correct_and_normalize(s.matrix(), c.matrix())
}

const SINGULARITY_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct InvertibilityReport {
    pub determinant: f64,
    /// `σ_max / σ_min`; infinite when singular.
    pub condition_number: f64,
    /// True when `σ_min / σ_max` falls below `1e-8`.
    pub near_singular: bool,
}

impl InvertibilityReport {
    pub fn determinant_sign(&self) -> i8 {
        if self.determinant > 0.0 {
            1
        } else if self.determinant < 0.0 {
            -1
        } else {
            0
        }
    }
}

pub fn check_invertible(t: &Matrix) -> InvertibilityReport {
    let m = t.to_nalgebra();
    let determinant = m.determinant();
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    InvertibilityReport {
        determinant,
        condition_number: if ratio > 0.0 {
            1.0 / ratio
        } else {
            f64::INFINITY
        },
        near_singular: ratio < SINGULARITY_THRESHOLD,
    }
}
