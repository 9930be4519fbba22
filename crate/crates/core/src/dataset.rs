//! Multi-label datasets: the sparse text format, rare-label filtering, fold
//! splitting, feature standardization and a synthetic generative model.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::complementary::{ComplementaryDataset, ComplementaryInstance};
use crate::error::{Error, Result};

/// Sparse real vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVec {
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "feature indices must be strictly increasing".into(),
            ));
        }
        Ok(SparseVec { indices, values })
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .unzip();
        SparseVec { indices, values }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    /// One past the largest stored index, 0 when empty.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i as usize + 1)
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpace {
    k: usize,
    names: Option<Vec<String>>,
}

impl LabelSpace {
    pub fn new(k: usize) -> Result<Self> {
        if k <= 2 {
            return Err(Error::InvalidDataset(format!(
                "label space needs more than 2 labels, got {k}"
            )));
        }
        Ok(LabelSpace { k, names: None })
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        let mut space = LabelSpace::new(names.len())?;
        space.names = Some(names);
        Ok(space)
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub features: SparseVec,
    pub labels: Vec<bool>,
}

pub(crate) fn check_label_vector(labels: &[bool], k: usize, index: usize) -> Result<()> {
    if labels.len() != k {
        return Err(Error::InvalidInstance {
            index,
            message: format!("label vector has length {}, expected {k}", labels.len()),
        });
    }
    let count = labels.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(Error::InvalidInstance {
            index,
            message: "empty relevant label set".into(),
        });
    }
    if count == k {
        return Err(Error::InvalidInstance {
            index,
            message: "full relevant label set".into(),
        });
    }
    Ok(())
}

/// A fully labeled multi-label dataset. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelDataset {
    labels: LabelSpace,
    dim: usize,
    instances: Vec<Instance>,
}

impl MultiLabelDataset {
    /// Validates every instance: labels of length K, neither empty nor full,
    /// features inside `[0, dim)`.
    pub fn new(labels: LabelSpace, dim: usize, instances: Vec<Instance>) -> Result<Self> {
        for (index, inst) in instances.iter().enumerate() {
            check_label_vector(&inst.labels, labels.len(), index)?;
            if inst.features.min_dim() > dim {
                return Err(Error::InvalidInstance {
                    index,
                    message: format!(
                        "feature index {} out of range for dimension {dim}",
                        inst.features.min_dim() - 1
                    ),
                });
            }
        }
        Ok(MultiLabelDataset {
            labels,
            dim,
            instances,
        })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn truth(&self) -> Vec<Vec<bool>> {
        self.instances.iter().map(|i| i.labels.clone()).collect()
    }

    /// Number of instances carrying each label.
    pub fn label_frequencies(&self) -> Vec<usize> {
        let mut freq = vec![0; self.num_labels()];
        for inst in &self.instances {
            for (f, &b) in freq.iter_mut().zip(&inst.labels) {
                *f += b as usize;
            }
        }
        freq
    }

    pub fn subset(&self, indices: &[usize]) -> MultiLabelDataset {
        MultiLabelDataset {
            labels: self.labels.clone(),
            dim: self.dim,
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
        }
    }

    /// Serializes to the canonical sparse text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {} {}", self.len(), self.dim, self.num_labels()).unwrap();
        for inst in &self.instances {
            let labels: Vec<String> = inst
                .labels
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| i.to_string())
                .collect();
            out.push_str(&labels.join(","));
            write_features(&mut out, &inst.features);
            out.push('\n');
        }
        out
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn write_features(out: &mut String, features: &SparseVec) {
    for (i, v) in features.iter() {
        // `{}` on f64 is the shortest representation that round-trips.
        write!(out, " {i}:{v}").unwrap();
    }
}

pub(crate) struct Header {
    pub n: usize,
    pub dim: usize,
    pub k: usize,
}

pub(crate) fn parse_header(line: Option<&str>) -> Result<Header> {
    let line = line.ok_or_else(|| Error::parse(1, "missing header"))?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::parse(1, "header must be \"n d K\""));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(1, format!("invalid {what} in header: {s:?}")))
    };
    Ok(Header {
        n: num(parts[0], "n")?,
        dim: num(parts[1], "d")?,
        k: num(parts[2], "K")?,
    })
}

pub(crate) fn parse_label_list(s: &str, k: usize, line: usize) -> Result<Vec<bool>> {
    let mut labels = vec![false; k];
    if s.is_empty() {
        return Ok(labels);
    }
    for tok in s.split(',') {
        let idx: usize = tok
            .parse()
            .map_err(|_| Error::parse(line, format!("invalid label index {tok:?}")))?;
        if idx >= k {
            return Err(Error::parse(
                line,
                format!("label index {idx} out of range for K={k}"),
            ));
        }
        labels[idx] = true;
    }
    Ok(labels)
}

pub(crate) fn parse_features<'a>(
    tokens: impl Iterator<Item = &'a str>,
    dim: usize,
    line: usize,
) -> Result<SparseVec> {
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for tok in tokens {
        let (i, v) = tok
            .split_once(':')
            .ok_or_else(|| Error::parse(line, format!("expected idx:val, got {tok:?}")))?;
        let i: u32 = i
            .parse()
            .map_err(|_| Error::parse(line, format!("invalid feature index {i:?}")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| Error::parse(line, format!("invalid feature value {v:?}")))?;
        if i as usize >= dim {
            return Err(Error::parse(
                line,
                format!("feature index {i} out of range for d={dim}"),
            ));
        }
        if indices.last().is_some_and(|&last| last >= i) {
            return Err(Error::parse(
                line,
                "feature indices must be strictly increasing",
            ));
        }
        indices.push(i);
        values.push(v);
    }
    Ok(SparseVec { indices, values })
}

/// Splits a data line into its leading label field and the feature tokens.
/// A line starting with whitespace, or whose first token is a feature, has an
/// empty label field.
pub(crate) fn split_label_field(line: &str) -> (&str, std::str::SplitWhitespace<'_>) {
    if line.starts_with(char::is_whitespace) {
        return ("", line.split_whitespace());
    }
    match line.split_once(char::is_whitespace) {
        Some((head, rest)) if !head.contains(':') => (head, rest.split_whitespace()),
        Some(_) => ("", line.split_whitespace()),
        None if line.contains(':') => ("", line.split_whitespace()),
        None => (line, "".split_whitespace()),
    }
}

pub fn parse_multilabel_str(text: &str) -> Result<MultiLabelDataset> {
    let mut lines = text.lines();
    let header = parse_header(lines.next())?;
    let labels = LabelSpace::new(header.k).map_err(|e| Error::parse(1, e.to_string()))?;
    let mut instances = Vec::with_capacity(header.n);
    for (offset, raw) in lines.enumerate() {
        let line_no = offset + 2;
        if instances.len() == header.n {
            if raw.trim().is_empty() {
                continue;
            }
            return Err(Error::parse(
                line_no,
                "more instances than declared in header",
            ));
        }
        let (label_field, tokens) = split_label_field(raw);
        let y = parse_label_list(label_field, header.k, line_no)?;
        let features = parse_features(tokens, header.dim, line_no)?;
        check_label_vector(&y, header.k, instances.len())?;
        instances.push(Instance {
            features,
            labels: y,
        });
    }
    if instances.len() != header.n {
        return Err(Error::parse(
            instances.len() + 2,
            format!(
                "header declares {} instances, found {}",
                header.n,
                instances.len()
            ),
        ));
    }
    MultiLabelDataset::new(labels, header.dim, instances)
}

pub fn parse_multilabel_file(path: impl AsRef<Path>) -> Result<MultiLabelDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_multilabel_str(&text)
}

/// Reads the LIBSVM multi-label text format: `l1,l2 idx:val ...` per line
/// with 0-based labels and 1-based feature indices. `K` and `d` default to
/// the largest index seen. Instances whose label set is empty or full are
/// dropped with a warning.
pub fn parse_libsvm_multilabel_str(
    text: &str,
    num_labels: Option<usize>,
    dim: Option<usize>,
) -> Result<MultiLabelDataset> {
    type Row = (Vec<usize>, Vec<(u32, f64)>);
    let mut rows: Vec<Row> = Vec::new();
    for (offset, raw) in text.lines().enumerate() {
        let line_no = offset + 1;
        let line = raw.split('#').next().unwrap_or("").trim_end();
        if line.trim().is_empty() {
            continue;
        }
        let (label_field, tokens) = split_label_field(line);
        let labels = if label_field.is_empty() {
            Vec::new()
        } else {
            label_field
                .split(',')
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::parse(line_no, format!("invalid label {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        let mut features = Vec::new();
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(line_no, format!("expected idx:val, got {tok:?}")))?;
            let i: u32 = i
                .parse()
                .map_err(|_| Error::parse(line_no, format!("invalid feature index {i:?}")))?;
            if i == 0 {
                return Err(Error::parse(line_no, "feature indices are 1-based"));
            }
            let v: f64 = v
                .parse()
                .map_err(|_| Error::parse(line_no, format!("invalid feature value {v:?}")))?;
            features.push((i - 1, v));
        }
        features.sort_by_key(|&(i, _)| i);
        if features.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::parse(line_no, "duplicate feature index"));
        }
        rows.push((labels, features));
    }
    let seen_k = rows
        .iter()
        .flat_map(|(l, _)| l.iter())
        .max()
        .map_or(0, |&m| m + 1);
    let seen_d = rows
        .iter()
        .flat_map(|(_, f)| f.iter())
        .map(|&(i, _)| i as usize + 1)
        .max()
        .unwrap_or(0);
    let k = num_labels.unwrap_or(seen_k);
    let dim = dim.unwrap_or(seen_d);
    if seen_k > k {
        return Err(Error::InvalidDataset(format!(
            "label {} exceeds K={k}",
            seen_k - 1
        )));
    }
    if seen_d > dim {
        return Err(Error::InvalidDataset(format!(
            "feature {seen_d} exceeds d={dim}"
        )));
    }
    let space = LabelSpace::new(k)?;
    let mut instances = Vec::with_capacity(rows.len());
    let mut dropped = 0usize;
    for (labels, features) in rows {
        let mut y = vec![false; k];
        for l in labels {
            y[l] = true;
        }
        let count = y.iter().filter(|&&b| b).count();
        if count == 0 || count == k {
            dropped += 1;
            continue;
        }
        let (indices, values) = features.into_iter().unzip();
        instances.push(Instance {
            features: SparseVec { indices, values },
            labels: y,
        });
    }
    if dropped > 0 {
        warn!("dropped {dropped} instances with an empty or full label set");
    }
    MultiLabelDataset::new(space, dim, instances)
}

/// Keeps the `max_labels` most frequent labels (ties to the lower index),
/// drops instances whose retained label set is empty or full, and relabels
/// the survivors to `0..K'`.
pub fn preprocess_topk_labels(
    ds: &MultiLabelDataset,
    max_labels: usize,
) -> Result<MultiLabelDataset> {
    if max_labels < 3 {
        return Err(Error::InvalidArgument(format!(
            "max_labels must be at least 3, got {max_labels}"
        )));
    }
    if ds.num_labels() <= max_labels {
        return Ok(ds.clone());
    }
    let freq = ds.label_frequencies();
    let mut order: Vec<usize> = (0..ds.num_labels()).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order.into_iter().take(max_labels).collect();
    kept.sort_unstable();

    let instances: Vec<Instance> = ds
        .instances
        .iter()
        .filter_map(|inst| {
            let labels: Vec<bool> = kept.iter().map(|&k| inst.labels[k]).collect();
            let count = labels.iter().filter(|&&b| b).count();
            (count > 0 && count < kept.len()).then(|| Instance {
                features: inst.features.clone(),
                labels,
            })
        })
        .collect();

    let names = ds
        .labels
        .names()
        .map(|names| kept.iter().map(|&k| names[k].clone()).collect::<Vec<_>>());
    let mut space = LabelSpace::new(kept.len())?;
    space.names = names;
    let out = MultiLabelDataset::new(space, ds.dim, instances)?;
    let surviving = out.label_frequencies().iter().filter(|&&f| f > 0).count();
    if surviving < 3 {
        return Err(Error::InvalidDataset(format!(
            "only {surviving} labels survive preprocessing"
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub train: MultiLabelDataset,
    pub test: MultiLabelDataset,
    pub fold_index: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Partitions `0..n` into `k` folds of near-equal size after a seeded shuffle.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} instances into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

pub fn kfold_split(ds: &MultiLabelDataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let folds = kfold_indices(ds.len(), k, seed)?;
    let mut membership = vec![0usize; ds.len()];
    for (f, fold) in folds.iter().enumerate() {
        for &i in fold {
            membership[i] = f;
        }
    }
    Ok(folds
        .iter()
        .enumerate()
        .map(|(f, test_indices)| {
            let train_indices: Vec<usize> = (0..ds.len()).filter(|&i| membership[i] != f).collect();
            FoldSplit {
                train: ds.subset(&train_indices),
                test: ds.subset(test_indices),
                fold_index: f,
                train_indices,
                test_indices: test_indices.clone(),
            }
        })
        .collect())
}

/// Per-dimension z-score parameters fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaling {
    pub fn fit(ds: &MultiLabelDataset) -> Self {
        let d = ds.dim();
        let n = ds.len().max(1) as f64;
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        for inst in ds.instances() {
            for (i, v) in inst.features.iter() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt())
            .collect();
        FeatureScaling { mean, std }
    }

    fn is_scaled(&self, i: usize) -> bool {
        self.std[i] > 1e-12
    }

    pub fn transform(&self, x: &SparseVec) -> SparseVec {
        let mut dense = x.to_dense(self.mean.len());
        for (i, v) in dense.iter_mut().enumerate() {
            if self.is_scaled(i) {
                *v = (*v - self.mean[i]) / self.std[i];
            }
        }
        SparseVec::from_dense(&dense)
    }

    pub fn apply(&self, ds: &MultiLabelDataset) -> Result<MultiLabelDataset> {
        if ds.dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: ds.dim(),
            });
        }
        let instances = ds
            .instances()
            .iter()
            .map(|inst| Instance {
                features: self.transform(&inst.features),
                labels: inst.labels.clone(),
            })
            .collect();
        MultiLabelDataset::new(ds.labels.clone(), ds.dim, instances)
    }
}

/// Z-scores every feature dimension with the dataset's own statistics and
/// returns the scaling so it can be reapplied to held-out folds.
pub fn normalize_features(ds: &MultiLabelDataset) -> Result<(MultiLabelDataset, FeatureScaling)> {
    let scaling = FeatureScaling::fit(ds);
    Ok((scaling.apply(ds)?, scaling))
}

/// A label subset as a bitmask over at most 12 labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSubset(pub u32);

impl LabelSubset {
    pub fn from_labels(labels: &[usize]) -> Self {
        LabelSubset(labels.iter().fold(0, |m, &l| m | (1 << l)))
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        LabelSubset(
            mask.iter()
                .enumerate()
                .fold(0, |m, (l, &b)| if b { m | (1 << l) } else { m }),
        )
    }

    pub fn contains(self, label: usize) -> bool {
        self.0 & (1 << label) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn labels(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&l| self.contains(l))
    }

    pub fn to_mask(self, k: usize) -> Vec<bool> {
        (0..k).map(|l| self.contains(l)).collect()
    }

    /// Position in the binary-counting enumeration of nonempty proper subsets.
    pub fn ordinal(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_ordinal(ordinal: usize) -> Self {
        LabelSubset(ordinal as u32 + 1)
    }
}

pub const MAX_GENERATIVE_LABELS: usize = 12;

pub(crate) fn subset_count(k: usize) -> usize {
    (1usize << k) - 2
}

/// An explicit class-dependent generative model: a distribution over the
/// nonempty proper label subsets and, for each subset, a distribution of the
/// complementary label over the labels outside it.
///
/// Both tables are indexed by [`LabelSubset::ordinal`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeSpec {
    k: usize,
    subset_probs: Vec<f64>,
    cl_given_subset: Vec<Vec<f64>>,
}

const SPEC_TOLERANCE: f64 = 1e-9;

impl GenerativeSpec {
    pub fn new(k: usize, subset_probs: Vec<f64>, cl_given_subset: Vec<Vec<f64>>) -> Result<Self> {
        if !(3..=MAX_GENERATIVE_LABELS).contains(&k) {
            return Err(Error::InvalidSpec(format!(
                "K must lie in 3..={MAX_GENERATIVE_LABELS}, got {k}"
            )));
        }
        let m = subset_count(k);
        if subset_probs.len() != m || cl_given_subset.len() != m {
            return Err(Error::InvalidSpec(format!("expected {m} subsets")));
        }
        let total: f64 = subset_probs.iter().sum();
        if (total - 1.0).abs() > SPEC_TOLERANCE || subset_probs.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidSpec(format!(
                "subset probabilities must be nonnegative and sum to 1 (sum {total})"
            )));
        }
        for (ord, dist) in cl_given_subset.iter().enumerate() {
            let subset = LabelSubset::from_ordinal(ord);
            if dist.len() != k {
                return Err(Error::InvalidSpec(format!(
                    "complementary distribution for subset {ord} has length {}",
                    dist.len()
                )));
            }
            let sum: f64 = dist.iter().sum();
            if (sum - 1.0).abs() > SPEC_TOLERANCE || dist.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "complementary distribution for subset {ord} sums to {sum}"
                )));
            }
            if subset.labels().any(|l| dist[l] != 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "subset {ord} assigns complementary mass to one of its members"
                )));
            }
        }
        Ok(GenerativeSpec {
            k,
            subset_probs,
            cl_given_subset,
        })
    }

    /// Uniform complementary label over the labels outside each subset.
    pub fn with_uniform_cl(k: usize, subset_probs: Vec<f64>) -> Result<Self> {
        if !(3..=MAX_GENERATIVE_LABELS).contains(&k) {
            return Err(Error::InvalidSpec(format!(
                "K must lie in 3..={MAX_GENERATIVE_LABELS}, got {k}"
            )));
        }
        let cl = (0..subset_count(k))
            .map(|ord| uniform_outside(LabelSubset::from_ordinal(ord), k))
            .collect();
        GenerativeSpec::new(k, subset_probs, cl)
    }

    /// Builds a uniform-complementary spec from `(subset, probability)` pairs;
    /// unlisted subsets get probability 0.
    pub fn from_support(k: usize, support: &[(LabelSubset, f64)]) -> Result<Self> {
        if !(3..=MAX_GENERATIVE_LABELS).contains(&k) {
            return Err(Error::InvalidSpec(format!(
                "K must lie in 3..={MAX_GENERATIVE_LABELS}, got {k}"
            )));
        }
        let mut probs = vec![0.0; subset_count(k)];
        for &(s, p) in support {
            if s.is_empty() || s.len() >= k || s.0 >> k != 0 {
                return Err(Error::InvalidSpec(format!(
                    "{s:?} is not a nonempty proper subset"
                )));
            }
            probs[s.ordinal()] += p;
        }
        GenerativeSpec::with_uniform_cl(k, probs)
    }

    /// Random spec: Dirichlet(1) subset probabilities and Dirichlet(1)
    /// complementary distributions over each subset's complement.
    pub fn random(k: usize, seed: u64) -> Result<Self> {
        if !(3..=MAX_GENERATIVE_LABELS).contains(&k) {
            return Err(Error::InvalidSpec(format!(
                "K must lie in 3..={MAX_GENERATIVE_LABELS}, got {k}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = subset_count(k);
        let subset_probs = dirichlet_ones(m, &mut rng);
        let cl = (0..m)
            .map(|ord| {
                let subset = LabelSubset::from_ordinal(ord);
                let outside: Vec<usize> = (0..k).filter(|&l| !subset.contains(l)).collect();
                let w = dirichlet_ones(outside.len(), &mut rng);
                let mut dist = vec![0.0; k];
                for (&l, p) in outside.iter().zip(w) {
                    dist[l] = p;
                }
                dist
            })
            .collect();
        GenerativeSpec::new(k, subset_probs, cl)
    }

    pub fn num_labels(&self) -> usize {
        self.k
    }

    pub fn subset_prob(&self, s: LabelSubset) -> f64 {
        self.subset_probs[s.ordinal()]
    }

    pub fn subset_probs(&self) -> &[f64] {
        &self.subset_probs
    }

    /// `p(ȳ = l_j | Y = s)`.
    pub fn cl_prob(&self, s: LabelSubset, j: usize) -> f64 {
        self.cl_given_subset[s.ordinal()][j]
    }

    pub fn cl_distribution(&self, s: LabelSubset) -> &[f64] {
        &self.cl_given_subset[s.ordinal()]
    }

    pub fn subsets(&self) -> impl Iterator<Item = LabelSubset> {
        (0..subset_count(self.k)).map(LabelSubset::from_ordinal)
    }
}

fn uniform_outside(subset: LabelSubset, k: usize) -> Vec<f64> {
    let outside = k - subset.len();
    (0..k)
        .map(|l| {
            if subset.contains(l) {
                0.0
            } else {
                1.0 / outside as f64
            }
        })
        .collect()
}

fn dirichlet_ones(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x: f64| x / total).collect()
}

pub const DEFAULT_CLUSTER_SEPARATION: f64 = 4.0;

/// Draws `n` instances from `spec` with features of dimension `d`:
/// `Y ~ subset_probs`, `ȳ ~ cl_given_subset[Y]` and `x ~ N(center(Y), I)`.
///
/// Each label owns a prototype of norm `separation / √2` along mutually
/// orthogonal directions (random unit directions when `d < K`), and a
/// subset's center is the sum of its members' prototypes, so singleton
/// centers sit `separation` apart.
pub fn sample_from_generative_with(
    spec: &GenerativeSpec,
    n: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> Result<(MultiLabelDataset, ComplementaryDataset)> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    let k = spec.num_labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes = label_prototypes(k, d, separation / std::f64::consts::SQRT_2, &mut rng);

    let subset_dist =
        WeightedIndex::new(&spec.subset_probs).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let cl_dists: Vec<Option<WeightedIndex<f64>>> = spec
        .cl_given_subset
        .iter()
        .zip(&spec.subset_probs)
        .map(|(dist, &p)| {
            if p > 0.0 {
                WeightedIndex::new(dist).ok()
            } else {
                None
            }
        })
        .collect();

    let space = LabelSpace::new(k)?;
    let mut full = Vec::with_capacity(n);
    let mut comp = Vec::with_capacity(n);
    for _ in 0..n {
        let ord = subset_dist.sample(&mut rng);
        let subset = LabelSubset::from_ordinal(ord);
        let cl = cl_dists[ord]
            .as_ref()
            .expect("sampled subset has positive probability")
            .sample(&mut rng);
        let mut x = vec![0.0; d];
        for l in subset.labels() {
            for (xi, p) in x.iter_mut().zip(&prototypes[l]) {
                *xi += p;
            }
        }
        for xi in x.iter_mut() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *xi += noise;
        }
        let features = SparseVec::from_dense(&x);
        full.push(Instance {
            features: features.clone(),
            labels: subset.to_mask(k),
        });
        comp.push(ComplementaryInstance::new(features, cl, None));
    }
    let ds = MultiLabelDataset::new(space.clone(), d, full)?;
    let cds = ComplementaryDataset::new(space, d, comp)?;
    Ok((ds, cds))
}

pub fn sample_from_generative(
    spec: &GenerativeSpec,
    n: usize,
    d: usize,
    seed: u64,
) -> Result<(MultiLabelDataset, ComplementaryDataset)> {
    sample_from_generative_with(spec, n, d, DEFAULT_CLUSTER_SEPARATION, seed)
}

fn label_prototypes(k: usize, d: usize, norm: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if d >= k {
            // Gram-Schmidt against the previous prototypes.
            for prev in &out {
                let scale = dot(&v, prev) / dot(prev, prev);
                for (a, b) in v.iter_mut().zip(prev) {
                    *a -= scale * b;
                }
            }
        }
        let len = dot(&v, &v).sqrt().max(1e-12);
        for a in v.iter_mut() {
            *a *= norm / len;
        }
        out.push(v);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
