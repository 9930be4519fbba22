//! Complementary-label datasets and the samplers that corrupt fully labeled
//! data into them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    parse_features, parse_header, parse_label_list, write_features, LabelSpace, MultiLabelDataset,
    SparseVec,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ComplementaryInstance {
    pub features: SparseVec,
    cl: usize,
    relevant: Option<Vec<bool>>,
}

impl ComplementaryInstance {
    pub fn new(features: SparseVec, cl: usize, relevant: Option<Vec<bool>>) -> Self {
        ComplementaryInstance {
            features,
            cl,
            relevant,
        }
    }

    /// Index of the complementary label.
    pub fn cl(&self) -> usize {
        self.cl
    }

    /// Candidate vector: every label except the complementary one.
    pub fn candidate(&self, k: usize) -> Vec<bool> {
        (0..k).map(|l| l != self.cl).collect()
    }

    pub fn relevant(&self) -> Option<&[bool]> {
        self.relevant.as_deref()
    }

    /// One-hot encoding of the complementary label.
    pub fn cl_one_hot(&self, k: usize) -> Vec<f64> {
        (0..k)
            .map(|l| if l == self.cl { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Instances carrying a single complementary label and, optionally, a known
/// subset of their relevant labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementaryDataset {
    labels: LabelSpace,
    dim: usize,
    instances: Vec<ComplementaryInstance>,
}

impl ComplementaryDataset {
    pub fn new(
        labels: LabelSpace,
        dim: usize,
        instances: Vec<ComplementaryInstance>,
    ) -> Result<Self> {
        let k = labels.len();
        for (index, inst) in instances.iter().enumerate() {
            if inst.cl >= k {
                return Err(Error::InvalidInstance {
                    index,
                    message: format!("complementary label {} out of range for K={k}", inst.cl),
                });
            }
            if inst.features.min_dim() > dim {
                return Err(Error::InvalidInstance {
                    index,
                    message: format!("feature index out of range for dimension {dim}"),
                });
            }
            if let Some(rel) = &inst.relevant {
                if rel.len() != k {
                    return Err(Error::InvalidInstance {
                        index,
                        message: format!("relevant vector has length {}", rel.len()),
                    });
                }
                if rel[inst.cl] {
                    return Err(Error::InvalidInstance {
                        index,
                        message: "complementary label marked relevant".into(),
                    });
                }
                if !rel.iter().any(|&b| b) {
                    return Err(Error::InvalidInstance {
                        index,
                        message: "relevant subset is empty".into(),
                    });
                }
            }
        }
        Ok(ComplementaryDataset {
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

    pub fn instances(&self) -> &[ComplementaryInstance] {
        &self.instances
    }

    pub fn has_relevant_subsets(&self) -> bool {
        self.instances.iter().all(|i| i.relevant.is_some())
    }

    pub fn subset(&self, indices: &[usize]) -> ComplementaryDataset {
        ComplementaryDataset {
            labels: self.labels.clone(),
            dim: self.dim,
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
        }
    }

    /// Replaces the feature vectors, keeping labels. Used to apply feature
    /// scaling fitted elsewhere.
    pub fn with_features(&self, features: Vec<SparseVec>) -> Result<ComplementaryDataset> {
        if features.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: features.len(),
            });
        }
        let instances = self
            .instances
            .iter()
            .zip(features)
            .map(|(inst, features)| ComplementaryInstance {
                features,
                ..inst.clone()
            })
            .collect();
        ComplementaryDataset::new(self.labels.clone(), self.dim, instances)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {} {}", self.len(), self.dim, self.num_labels()).unwrap();
        for inst in &self.instances {
            write!(out, "{};", inst.cl).unwrap();
            if let Some(rel) = &inst.relevant {
                let idx: Vec<String> = rel
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(i, _)| i.to_string())
                    .collect();
                out.push_str(&idx.join(","));
            }
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

pub fn parse_complementary_str(text: &str) -> Result<ComplementaryDataset> {
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
        let (head, rest) = raw.split_once(char::is_whitespace).unwrap_or((raw, ""));
        let (cl, rel) = head
            .split_once(';')
            .ok_or_else(|| Error::parse(line_no, "expected \"<cl>;<rel>\" label field"))?;
        let cl: usize = cl
            .parse()
            .map_err(|_| Error::parse(line_no, format!("invalid complementary label {cl:?}")))?;
        if cl >= header.k {
            return Err(Error::parse(
                line_no,
                format!("complementary label {cl} out of range for K={}", header.k),
            ));
        }
        let relevant = if rel.is_empty() {
            None
        } else {
            Some(parse_label_list(rel, header.k, line_no)?)
        };
        let features = parse_features(rest.split_whitespace(), header.dim, line_no)?;
        instances.push(ComplementaryInstance::new(features, cl, relevant));
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
    ComplementaryDataset::new(labels, header.dim, instances)
}

pub fn parse_complementary_file(path: impl AsRef<Path>) -> Result<ComplementaryDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_complementary_str(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionMode {
    Uniform,
    Biased,
}

impl std::str::FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(CorruptionMode::Uniform),
            "biased" => Ok(CorruptionMode::Biased),
            other => Err(Error::InvalidArgument(format!(
                "unknown corruption mode {other:?} (expected uniform or biased)"
            ))),
        }
    }
}

impl std::fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorruptionMode::Uniform => "uniform",
            CorruptionMode::Biased => "biased",
        })
    }
}

/// How a complementary dataset was produced, with the ground truth it hides.
/// Only evaluation and the relevant-subset sampler read `truth`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionRecord {
    pub mode: CorruptionMode,
    pub seed: u64,
    truth: Vec<Vec<bool>>,
}

impl CorruptionRecord {
    pub fn truth(&self) -> &[Vec<bool>] {
        &self.truth
    }

    pub fn subset(&self, indices: &[usize]) -> CorruptionRecord {
        CorruptionRecord {
            mode: self.mode,
            seed: self.seed,
            truth: indices.iter().map(|&i| self.truth[i].clone()).collect(),
        }
    }
}

fn instance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn build(
    ds: &MultiLabelDataset,
    mode: CorruptionMode,
    seed: u64,
    mut pick: impl FnMut(usize, &[bool], &mut ChaCha8Rng) -> usize,
) -> Result<(ComplementaryDataset, CorruptionRecord)> {
    let instances = ds
        .instances()
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rng = instance_rng(seed, i);
            let cl = pick(i, &inst.labels, &mut rng);
            ComplementaryInstance::new(inst.features.clone(), cl, None)
        })
        .collect();
    let cds = ComplementaryDataset::new(ds.label_space().clone(), ds.dim(), instances)?;
    let record = CorruptionRecord {
        mode,
        seed,
        truth: ds.truth(),
    };
    Ok((cds, record))
}

/// Draws each complementary label uniformly from the instance's irrelevant
/// labels.
pub fn corrupt_uniform(
    ds: &MultiLabelDataset,
    seed: u64,
) -> Result<(ComplementaryDataset, CorruptionRecord)> {
    build(ds, CorruptionMode::Uniform, seed, |_, y, rng| {
        let outside: Vec<usize> = (0..y.len()).filter(|&l| !y[l]).collect();
        outside[rng.random_range(0..outside.len())]
    })
}

/// `rates[j][k] = |{i : y_i^j ∧ y_i^k}| / |{i : y_i^k}|`, 0 when label k never
/// occurs.
pub fn cooccurrence_rates(truth: &[Vec<bool>], k: usize) -> Vec<Vec<f64>> {
    let mut joint = vec![vec![0usize; k]; k];
    let mut count = vec![0usize; k];
    for y in truth {
        for a in (0..k).filter(|&a| y[a]) {
            count[a] += 1;
            for b in (0..k).filter(|&b| y[b]) {
                joint[a][b] += 1;
            }
        }
    }
    (0..k)
        .map(|j| {
            (0..k)
                .map(|c| {
                    if count[c] == 0 {
                        0.0
                    } else {
                        joint[j][c] as f64 / count[c] as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Selection weight of each irrelevant label: one minus its strongest
/// co-occurrence rate with any relevant label. Relevant labels get weight 0.
pub fn biased_weights(y: &[bool], rates: &[Vec<f64>]) -> Vec<f64> {
    (0..y.len())
        .map(|j| {
            if y[j] {
                return 0.0;
            }
            let strongest = (0..y.len())
                .filter(|&k| y[k])
                .map(|k| rates[j][k])
                .fold(0.0, f64::max);
            (1.0 - strongest).max(0.0)
        })
        .collect()
}

fn draw_biased(y: &[bool], rates: &[Vec<f64>], rng: &mut ChaCha8Rng) -> usize {
    let w = biased_weights(y, rates);
    match WeightedIndex::new(&w) {
        Ok(dist) => dist.sample(rng),
        Err(_) => {
            let outside: Vec<usize> = (0..y.len()).filter(|&l| !y[l]).collect();
            outside[rng.random_range(0..outside.len())]
        }
    }
}

/// Biased corruption using co-occurrence rates computed from `ds` itself. Pass
/// the training split so held-out instances never shape the sampler.
pub fn corrupt_biased(
    ds: &MultiLabelDataset,
    seed: u64,
) -> Result<(ComplementaryDataset, CorruptionRecord)> {
    let rates = cooccurrence_rates(&ds.truth(), ds.num_labels());
    corrupt_biased_with_rates(ds, &rates, seed)
}

pub fn corrupt_biased_with_rates(
    ds: &MultiLabelDataset,
    rates: &[Vec<f64>],
    seed: u64,
) -> Result<(ComplementaryDataset, CorruptionRecord)> {
    let k = ds.num_labels();
    if rates.len() != k || rates.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: rates.len(),
        });
    }
    build(ds, CorruptionMode::Biased, seed, |_, y, rng| {
        draw_biased(y, rates, rng)
    })
}

pub fn corrupt(
    ds: &MultiLabelDataset,
    mode: CorruptionMode,
    seed: u64,
) -> Result<(ComplementaryDataset, CorruptionRecord)> {
    match mode {
        CorruptionMode::Uniform => corrupt_uniform(ds, seed),
        CorruptionMode::Biased => corrupt_biased(ds, seed),
    }
}

/// Attaches to each instance a uniformly chosen size-`r` subset of its true
/// relevant labels.
pub fn attach_relevant_subset(
    cds: &ComplementaryDataset,
    record: &CorruptionRecord,
    r: usize,
    seed: u64,
) -> Result<ComplementaryDataset> {
    if r == 0 {
        return Err(Error::InvalidArgument("r must be at least 1".into()));
    }
    if record.truth.len() != cds.len() {
        return Err(Error::DimensionMismatch {
            expected: cds.len(),
            actual: record.truth.len(),
        });
    }
    let k = cds.num_labels();
    let mut instances = Vec::with_capacity(cds.len());
    for (i, (inst, y)) in cds.instances.iter().zip(&record.truth).enumerate() {
        let relevant: Vec<usize> = (0..k).filter(|&l| y[l]).collect();
        if relevant.len() < r {
            return Err(Error::InvalidInstance {
                index: i,
                message: format!("has {} relevant labels, fewer than r={r}", relevant.len()),
            });
        }
        let mut rng = instance_rng(seed, i);
        let mut rel = vec![false; k];
        for pos in index::sample(&mut rng, relevant.len(), r) {
            rel[relevant[pos]] = true;
        }
        instances.push(ComplementaryInstance::new(
            inst.features.clone(),
            inst.cl,
            Some(rel),
        ));
    }
    ComplementaryDataset::new(cds.labels.clone(), cds.dim, instances)
}
