//! Exact checks of the transition-matrix results on small label spaces.
//!
//! Everything here is arithmetic on explicit probability tables: subsets are
//! enumerated, conditionals are ratios of enumerated sums, and no sampling is
//! involved.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::dataset::{GenerativeSpec, LabelSubset, MAX_GENERATIVE_LABELS};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const PROBABILITY_TOLERANCE: f64 = 1e-9;
pub const THEOREM1_TOLERANCE: f64 = 1e-12;

/// All nonempty proper subsets of `K` labels in binary counting order.
pub fn enumerate_subsets(k: usize) -> Result<Vec<LabelSubset>> {
    if !(3..=MAX_GENERATIVE_LABELS).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "K must lie in 3..={MAX_GENERATIVE_LABELS}, got {k}"
        )));
    }
    Ok((1..(1u32 << k) - 1).map(LabelSubset).collect())
}

/// The (2^K−2)×K table `p(ȳ = l_j | Y = C)`, one row per subset.
#[derive(Debug, Clone, PartialEq)]
pub struct FullTransition {
    pub subsets: Vec<LabelSubset>,
    pub rows: Vec<Vec<f64>>,
}

pub fn full_transition(spec: &GenerativeSpec) -> FullTransition {
    let subsets: Vec<LabelSubset> = spec.subsets().collect();
    let rows = subsets
        .iter()
        .map(|&s| spec.cl_distribution(s).to_vec())
        .collect();
    FullTransition { subsets, rows }
}

fn check_posterior(spec: &GenerativeSpec, posterior: &[f64]) -> Result<()> {
    let m = spec.subset_probs().len();
    if posterior.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: posterior.len(),
        });
    }
    let sum: f64 = posterior.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE || posterior.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "posterior must be a distribution over subsets (sum {sum})"
        )));
    }
    Ok(())
}

fn check_label(spec: &GenerativeSpec, j: usize) -> Result<()> {
    if j >= spec.num_labels() {
        return Err(Error::InvalidArgument(format!(
            "label {j} out of range for K={}",
            spec.num_labels()
        )));
    }
    Ok(())
}

/// `p(ȳ = l_j | x) = Σ_{C ∌ l_j} p(ȳ = l_j | C) p(Y = C | x)`.
pub fn exact_cl_probability(spec: &GenerativeSpec, posterior: &[f64], j: usize) -> Result<f64> {
    check_posterior(spec, posterior)?;
    check_label(spec, j)?;
    Ok(spec
        .subsets()
        .zip(posterior)
        .filter(|(s, _)| !s.contains(j))
        .map(|(s, &p)| spec.cl_prob(s, j) * p)
        .sum())
}

/// `p(y^k = 1 | x)` for every label under a subset posterior.
pub fn label_marginals(k: usize, posterior: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (ord, &p) in posterior.iter().enumerate() {
        for l in LabelSubset::from_ordinal(ord).labels() {
            out[l] += p;
        }
    }
    out
}

/// `T_kj = p(ȳ = l_j | y^k = 1)` under the spec's prior. Rows of labels with
/// zero prior mass are zero.
pub fn spec_transition(spec: &GenerativeSpec) -> Matrix {
    let k = spec.num_labels();
    let mut joint = Matrix::zeros(k, k);
    let mut mass = vec![0.0; k];
    for s in spec.subsets() {
        let p = spec.subset_prob(s);
        if p == 0.0 {
            continue;
        }
        for row in s.labels() {
            mass[row] += p;
            for j in 0..k {
                joint[(row, j)] += p * spec.cl_prob(s, j);
            }
        }
    }
    for (row, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            for v in joint.row_mut(row) {
                *v /= m;
            }
        }
    }
    joint
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Gap {
    /// Exact `p(ȳ = l_j | x)`.
    pub lhs: f64,
    /// `Σ_{k≠j} T_kj p(y^k = 1 | x)`.
    pub rhs: f64,
    /// `lhs ≥ rhs − 1e-12`.
    pub holds: bool,
}

pub fn theorem1_gap(spec: &GenerativeSpec, posterior: &[f64], j: usize) -> Result<Theorem1Gap> {
    let lhs = exact_cl_probability(spec, posterior, j)?;
    let t = spec_transition(spec);
    let marginals = label_marginals(spec.num_labels(), posterior);
    let rhs = (0..spec.num_labels())
        .filter(|&k| k != j)
        .map(|k| t[(k, j)] * marginals[k])
        .sum();
    Ok(Theorem1Gap {
        lhs,
        rhs,
        holds: lhs >= rhs - THEOREM1_TOLERANCE,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Trial {
    pub id: usize,
    pub k: usize,
    pub label: usize,
    pub spec: GenerativeSpec,
    pub posterior: Vec<f64>,
    pub gap: Theorem1Gap,
}

/// Random specs and posteriors: trial `t` uses `K = ks[t % ks.len()]`, a
/// Dirichlet(1) spec seeded by `seed + t`, a Dirichlet(1) posterior, and
/// label `t % K`.
pub fn theorem1_trials(trials: usize, ks: &[usize], seed: u64) -> Result<Vec<Theorem1Trial>> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("need at least one K".into()));
    }
    (0..trials)
        .map(|t| {
            let k = ks[t % ks.len()];
            let spec = GenerativeSpec::random(k, seed.wrapping_add(t as u64))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            rng.set_stream(1);
            let draws: Vec<f64> = (0..spec.subset_probs().len())
                .map(|_| Exp1.sample(&mut rng))
                .collect();
            let total: f64 = draws.iter().sum();
            let posterior: Vec<f64> = draws.iter().map(|d| d / total).collect();
            let label = t % k;
            let gap = theorem1_gap(&spec, &posterior, label)?;
            Ok(Theorem1Trial {
                id: t,
                k,
                label,
                spec,
                posterior,
                gap,
            })
        })
        .collect()
}

/// The multi-class estimate read at anchor points: `Q_kj = p(ȳ = l_j | Y = {l_k})`.
pub fn anchor_q(spec: &GenerativeSpec) -> Result<Matrix> {
    let k = spec.num_labels();
    let missing: Vec<usize> = (0..k)
        .filter(|&l| spec.subset_prob(LabelSubset::from_labels(&[l])) <= 0.0)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAnchor(missing));
    }
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|l| {
            spec.cl_distribution(LabelSubset::from_labels(&[l]))
                .to_vec()
        })
        .collect();
    Ok(Matrix::from_rows(&rows))
}

/// `ℓ_j = Σ_k |T_kj − Q_kj|`.
pub fn distortion(t: &Matrix, q: &Matrix, j: usize) -> Result<f64> {
    if t.rows() != q.rows() || t.cols() != q.cols() {
        return Err(Error::DimensionMismatch {
            expected: t.rows(),
            actual: q.rows(),
        });
    }
    if j >= t.cols() {
        return Err(Error::InvalidArgument(format!("column {j} out of range")));
    }
    Ok((0..t.rows()).map(|k| (t[(k, j)] - q[(k, j)]).abs()).sum())
}

/// Joint distribution of the relevant set `Y ⊆ Z` (nonempty) of `m`
/// dependent labels and the event `ȳ = l_j`, at a fixed instance.
///
/// Both tables are indexed by `mask − 1` over the `m` dependent labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioJoint {
    m: usize,
    with_cl: Vec<f64>,
    without_cl: Vec<f64>,
}

impl ScenarioJoint {
    pub fn new(m: usize, with_cl: Vec<f64>, without_cl: Vec<f64>) -> Result<Self> {
        if !(2..MAX_GENERATIVE_LABELS).contains(&m) {
            return Err(Error::InvalidArgument(format!(
                "m must lie in 2..12, got {m}"
            )));
        }
        let states = (1usize << m) - 1;
        if with_cl.len() != states || without_cl.len() != states {
            return Err(Error::InvalidArgument(format!(
                "expected {states} states per table"
            )));
        }
        let total: f64 = with_cl.iter().chain(&without_cl).sum();
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE
            || with_cl.iter().chain(&without_cl).any(|&p| p < 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "scenario joint must be a distribution (sum {total})"
            )));
        }
        Ok(ScenarioJoint {
            m,
            with_cl,
            without_cl,
        })
    }

    /// Given `ȳ = l_j` (probability `p`), each dependent label is relevant
    /// independently with probability `xi`, conditioned on a nonempty set.
    /// Otherwise `Y` is a uniformly chosen single dependent label.
    pub fn exchangeable(m: usize, xi: f64, p: f64) -> Result<Self> {
        if !(xi > 0.0 && xi <= 1.0) || !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need xi, p in (0, 1], got xi={xi}, p={p}"
            )));
        }
        let states = (1usize << m) - 1;
        let nonempty = 1.0 - (1.0 - xi).powi(m as i32);
        let with_cl = (1..=states)
            .map(|mask| {
                let c = mask.count_ones() as i32;
                p * xi.powi(c) * (1.0 - xi).powi(m as i32 - c) / nonempty
            })
            .collect();
        let without_cl = (1..=states)
            .map(|mask| {
                if mask.count_ones() == 1 {
                    (1.0 - p) / m as f64
                } else {
                    0.0
                }
            })
            .collect();
        ScenarioJoint::new(m, with_cl, without_cl)
    }

    pub fn num_dependent(&self) -> usize {
        self.m
    }

    fn sum_where(&self, table: &[f64], superset_of: u32) -> f64 {
        table
            .iter()
            .enumerate()
            .filter(|(i, _)| (*i as u32 + 1) & superset_of == superset_of)
            .map(|(_, &p)| p)
            .sum()
    }

    /// `p(ȳ = l_j | x)`.
    pub fn cl_probability(&self) -> f64 {
        self.with_cl.iter().sum()
    }

    /// `p(y^{z_i} = 1 | x)`.
    pub fn marginal(&self, i: usize) -> f64 {
        let bit = 1 << i;
        self.sum_where(&self.with_cl, bit) + self.sum_where(&self.without_cl, bit)
    }

    /// `p(y^{z_target} = 1 | ȳ = l_j, y^{z_g} = 1 for g in given, x)`.
    pub fn conditional_given_cl(&self, target: usize, given: &[usize]) -> f64 {
        let given_mask = given.iter().fold(0u32, |m, &g| m | (1 << g));
        let denom = if given_mask == 0 {
            self.cl_probability()
        } else {
            self.sum_where(&self.with_cl, given_mask)
        };
        if denom == 0.0 {
            return 0.0;
        }
        self.sum_where(&self.with_cl, given_mask | (1 << target)) / denom
    }

    /// `p(ȳ = l_j | y^{z_i} = 1)` by direct enumeration.
    pub fn enumerated_transition(&self, i: usize) -> f64 {
        let bit = 1 << i;
        self.sum_where(&self.with_cl, bit) / self.marginal(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Two dependent labels.
    Pairwise,
    /// `m` dependent labels.
    Chain(usize),
}

/// The quantities entering the dependent-label transition formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremScenario {
    pub kind: ScenarioKind,
    pub num_labels: usize,
    pub dependent: Vec<usize>,
    pub complementary: usize,
    /// `p(ȳ = l_j | x)`.
    pub cl_probability: f64,
    /// `p(y^{z_i} = 1 | x)`.
    pub marginals: Vec<f64>,
    /// For each `z_i`, the chain `p(y^{o_t} = 1 | ȳ = l_j, y^{z_i} = 1, y^{o_1..o_{t−1}} = 1, x)`
    /// over the other dependent labels `o_1 < … < o_{m−1}`.
    pub chain_conditionals: Vec<Vec<f64>>,
    /// `p(y^{z_i} = 1 | ȳ = l_j, all other dependent labels relevant, x)`.
    pub leave_one_out: Vec<f64>,
}

impl TheoremScenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: ScenarioKind,
        num_labels: usize,
        dependent: Vec<usize>,
        complementary: usize,
        cl_probability: f64,
        marginals: Vec<f64>,
        chain_conditionals: Vec<Vec<f64>>,
        leave_one_out: Vec<f64>,
    ) -> Result<Self> {
        let m = dependent.len();
        match kind {
            ScenarioKind::Pairwise if m != 2 => {
                return Err(Error::InvalidArgument(
                    "pairwise scenario needs 2 labels".into(),
                ))
            }
            ScenarioKind::Chain(c) if c != m || c < 2 || c + 1 > num_labels => {
                return Err(Error::InvalidArgument(format!(
                    "chain scenario needs 2 <= m <= K-1 dependent labels, got m={c}, K={num_labels}"
                )))
            }
            _ => {}
        }
        if dependent.contains(&complementary) {
            return Err(Error::InvalidArgument(
                "complementary label must not be a dependent label".into(),
            ));
        }
        if dependent
            .iter()
            .chain([&complementary])
            .any(|&l| l >= num_labels)
        {
            return Err(Error::InvalidArgument("label index out of range".into()));
        }
        if marginals.len() != m
            || leave_one_out.len() != m
            || chain_conditionals.len() != m
            || chain_conditionals.iter().any(|c| c.len() != m - 1)
        {
            return Err(Error::InvalidArgument(
                "scenario tables have the wrong shape".into(),
            ));
        }
        let all = std::iter::once(&cl_probability)
            .chain(&marginals)
            .chain(&leave_one_out)
            .chain(chain_conditionals.iter().flatten());
        for &v in all {
            if !(v > 0.0 && v <= 1.0 + PROBABILITY_TOLERANCE) {
                return Err(Error::InvalidArgument(format!(
                    "scenario probabilities must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(TheoremScenario {
            kind,
            num_labels,
            dependent,
            complementary,
            cl_probability,
            marginals,
            chain_conditionals,
            leave_one_out,
        })
    }

    /// A two-label scenario from plug-in values: `conditionals[0]` is
    /// `p(y^{z_2} | ȳ^j, y^{z_1}, x)` and `conditionals[1]` is
    /// `p(y^{z_1} | ȳ^j, y^{z_2}, x)`. Labels are `z = (0, 1)`, `j = 2`, `K = 3`.
    pub fn pairwise(
        cl_probability: f64,
        conditionals: [f64; 2],
        marginals: [f64; 2],
    ) -> Result<Self> {
        TheoremScenario::new(
            ScenarioKind::Pairwise,
            3,
            vec![0, 1],
            2,
            cl_probability,
            marginals.to_vec(),
            vec![vec![conditionals[0]], vec![conditionals[1]]],
            vec![conditionals[1], conditionals[0]],
        )
    }

    /// Reads every quantity off an enumerated joint. Dependent labels are
    /// `0..m`, the complementary label is `m`.
    pub fn from_joint(
        joint: &ScenarioJoint,
        kind: ScenarioKind,
        num_labels: usize,
    ) -> Result<Self> {
        let m = joint.num_dependent();
        let marginals = (0..m).map(|i| joint.marginal(i)).collect();
        let chain_conditionals = (0..m)
            .map(|i| {
                let others: Vec<usize> = (0..m).filter(|&o| o != i).collect();
                (0..others.len())
                    .map(|t| {
                        let mut given = vec![i];
                        given.extend_from_slice(&others[..t]);
                        joint.conditional_given_cl(others[t], &given)
                    })
                    .collect()
            })
            .collect();
        let leave_one_out = (0..m)
            .map(|i| {
                let others: Vec<usize> = (0..m).filter(|&o| o != i).collect();
                joint.conditional_given_cl(i, &others)
            })
            .collect();
        TheoremScenario::new(
            kind,
            num_labels,
            (0..m).collect(),
            m,
            joint.cl_probability(),
            marginals,
            chain_conditionals,
            leave_one_out,
        )
    }

    pub fn num_dependent(&self) -> usize {
        self.dependent.len()
    }

    /// The largest leave-one-out conditional.
    pub fn xi(&self) -> f64 {
        self.leave_one_out.iter().copied().fold(0.0, f64::max)
    }

    /// Whether every factor in each formula denominator is at most `ξ`, the
    /// ordering the lower bounds rely on.
    pub fn ordering_premise_holds(&self) -> bool {
        let xi = self.xi() + PROBABILITY_TOLERANCE;
        self.marginals.iter().all(|&p| p <= xi)
            && self.chain_conditionals.iter().flatten().all(|&c| c <= xi)
    }

    /// `T_{z_i j} = p(ȳ^j | x) / (Π chain_i · p(y^{z_i} | x))` for every `z_i`.
    pub fn transition_formula(&self) -> Result<Vec<f64>> {
        self.chain_conditionals
            .iter()
            .zip(&self.marginals)
            .enumerate()
            .map(|(i, (chain, &marginal))| {
                let denom = chain.iter().product::<f64>() * marginal;
                if !(denom > 0.0) {
                    return Err(Error::TheoryCheck(format!(
                        "zero denominator for dependent label {}",
                        self.dependent[i]
                    )));
                }
                Ok(self.cl_probability / denom)
            })
            .collect()
    }

    /// K×K matrices for the distortion: `Q` is the anchor estimate, with
    /// `Q_{z_i j} = p(ȳ^j | x)` and uniform elsewhere; `T` equals `Q` except at
    /// `(z_i, j)` where it takes the dependent-label formula.
    pub fn transition_matrices(&self) -> Result<(Matrix, Matrix)> {
        let k = self.num_labels;
        let j = self.complementary;
        let mut q = Matrix::zeros(k, k);
        for a in 0..k {
            for b in (0..k).filter(|&b| b != a) {
                q[(a, b)] = 1.0 / (k - 1) as f64;
            }
        }
        for &z in &self.dependent {
            q[(z, j)] = self.cl_probability;
        }
        let mut t = q.clone();
        for (&z, tz) in self.dependent.iter().zip(self.transition_formula()?) {
            t[(z, j)] = tz;
        }
        Ok((t, q))
    }

    pub fn distortion(&self) -> Result<f64> {
        let (t, q) = self.transition_matrices()?;
        distortion(&t, &q, self.complementary)
    }
}

/// `(T_{z_1 j}, T_{z_2 j})` for a pairwise scenario.
pub fn pairwise_t_formula(sc: &TheoremScenario) -> Result<(f64, f64)> {
    if sc.kind != ScenarioKind::Pairwise {
        return Err(Error::InvalidArgument(
            "expected a pairwise scenario".into(),
        ));
    }
    let t = sc.transition_formula()?;
    Ok((t[0], t[1]))
}

/// `m(1/ξ^m − 1) p(ȳ^j | x)` with `m` the number of dependent labels.
pub fn corollary3_bound(sc: &TheoremScenario) -> Result<f64> {
    let xi = sc.xi();
    if !(xi > 0.0 && xi <= 1.0 + PROBABILITY_TOLERANCE) {
        return Err(Error::InvalidArgument(format!(
            "xi must lie in (0, 1], got {xi}"
        )));
    }
    let xi = xi.min(1.0);
    let m = sc.num_dependent();
    Ok(m as f64 * (xi.powi(-(m as i32)) - 1.0) * sc.cl_probability)
}

/// `2(1/ξ² − 1) p(ȳ^j | x)`.
pub fn theorem2_bound(sc: &TheoremScenario) -> Result<f64> {
    if sc.kind != ScenarioKind::Pairwise {
        return Err(Error::InvalidArgument(
            "expected a pairwise scenario".into(),
        ));
    }
    corollary3_bound(sc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub id: String,
    pub m: usize,
    pub xi: f64,
    pub cl_probability: f64,
    pub distortion: f64,
    pub bound: f64,
    pub premise_holds: bool,
    pub bound_holds: bool,
}

pub const GRID_XI: [f64; 8] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
pub const GRID_M: [usize; 3] = [2, 3, 4];
pub const GRID_P: [f64; 3] = [0.1, 0.3, 0.5];
const GRID_LABELS: usize = 5;

/// Evaluates distortion against the bound over the exchangeable scenario
/// grid. The joint's target `ξ` equals the scenario's computed `ξ`.
pub fn bound_grid() -> Result<Vec<BoundCheck>> {
    let mut out = Vec::new();
    for &m in &GRID_M {
        for &xi in &GRID_XI {
            for &p in &GRID_P {
                let joint = ScenarioJoint::exchangeable(m, xi, p)?;
                let kind = if m == 2 {
                    ScenarioKind::Pairwise
                } else {
                    ScenarioKind::Chain(m)
                };
                let sc = TheoremScenario::from_joint(&joint, kind, GRID_LABELS)?;
                let distortion = sc.distortion()?;
                let bound = corollary3_bound(&sc)?;
                out.push(BoundCheck {
                    id: format!("m{m}_xi{xi}_p{p}"),
                    m,
                    xi: sc.xi(),
                    cl_probability: sc.cl_probability,
                    distortion,
                    bound,
                    premise_holds: sc.ordering_premise_holds(),
                    bound_holds: distortion >= bound - 1e-12,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_spec(k: usize) -> GenerativeSpec {
        let m = (1 << k) - 2;
        GenerativeSpec::with_uniform_cl(k, vec![1.0 / m as f64; m]).unwrap()
    }

    #[test]
    fn subset_enumeration() {
        let s: Vec<Vec<usize>> = enumerate_subsets(3)
            .unwrap()
            .into_iter()
            .map(|s| s.labels().collect())
            .collect();
        assert_eq!(
            s,
            vec![
                vec![0],
                vec![1],
                vec![0, 1],
                vec![2],
                vec![0, 2],
                vec![1, 2]
            ]
        );
        assert_eq!(enumerate_subsets(4).unwrap().len(), 14);
        assert!(enumerate_subsets(13).is_err());
        assert!(enumerate_subsets(2).is_err());
    }

    #[test]
    fn full_transition_rows() {
        let ft = full_transition(&GenerativeSpec::random(4, 2).unwrap());
        for (s, row) in ft.subsets.iter().zip(&ft.rows) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.labels().all(|l| row[l] == 0.0));
        }
    }

    #[test]
    fn cl_probability_point_masses() {
        let spec = uniform_spec(4);
        let mut post = vec![0.0; 14];
        post[LabelSubset::from_labels(&[0]).ordinal()] = 1.0;
        for j in 1..4 {
            assert!((exact_cl_probability(&spec, &post, j).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(exact_cl_probability(&spec, &post, 0).unwrap(), 0.0);
    }

    #[test]
    fn cl_probability_mixed_k3() {
        // Posterior 0.5 on {l1}, 0.3 on {l2,l3}, 0.2 on {l1,l3}; uniform cl.
        let spec = uniform_spec(3);
        let mut post = vec![0.0; 6];
        post[LabelSubset::from_labels(&[0]).ordinal()] = 0.5;
        post[LabelSubset::from_labels(&[1, 2]).ordinal()] = 0.3;
        post[LabelSubset::from_labels(&[0, 2]).ordinal()] = 0.2;
        let got = exact_cl_probability(&spec, &post, 1).unwrap();
        assert!((got - (0.5 * 0.5 + 0.2)).abs() < 1e-15);
        let got = exact_cl_probability(&spec, &post, 0).unwrap();
        assert!((got - 0.3).abs() < 1e-15);
    }

    #[test]
    fn theorem1_tight_for_exclusive_labels() {
        let k = 4;
        let support: Vec<(LabelSubset, f64)> = (0..k)
            .map(|l| (LabelSubset::from_labels(&[l]), 0.25))
            .collect();
        let spec = GenerativeSpec::from_support(k, &support).unwrap();
        let mut post = vec![0.0; 14];
        post[LabelSubset::from_labels(&[1]).ordinal()] = 0.6;
        post[LabelSubset::from_labels(&[3]).ordinal()] = 0.4;
        for j in 0..k {
            let g = theorem1_gap(&spec, &post, j).unwrap();
            assert!((g.lhs - g.rhs).abs() < 1e-15, "{g:?}");
            assert!(g.holds);
        }
    }

    #[test]
    fn theorem1_fails_with_overlapping_subsets() {
        // Uniform spec on K=3, posterior equal to the prior, j = l3: lhs = 1/3,
        // while T_13 = T_23 = 1/2 and both marginals are 1/2, so rhs = 1/2.
        let spec = uniform_spec(3);
        let post = vec![1.0 / 6.0; 6];
        let g = theorem1_gap(&spec, &post, 2).unwrap();
        assert!((g.lhs - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.rhs - 0.5).abs() < 1e-15);
        assert!(!g.holds);
    }

    #[test]
    fn theorem1_rhs_positive_when_label_certain() {
        // All posterior mass on subsets containing l_j gives lhs = 0 while
        // the other labels' marginals keep rhs positive.
        let spec = uniform_spec(3);
        let mut post = vec![0.0; 6];
        post[LabelSubset::from_labels(&[0, 2]).ordinal()] = 1.0;
        let g = theorem1_gap(&spec, &post, 2).unwrap();
        assert_eq!(g.lhs, 0.0);
        assert!(g.rhs > 0.0);
    }

    #[test]
    fn anchor_q_reads_singleton_rows() {
        let spec = GenerativeSpec::random(4, 5).unwrap();
        let q = anchor_q(&spec).unwrap();
        for l in 0..4 {
            assert_eq!(
                q.row(l),
                spec.cl_distribution(LabelSubset::from_labels(&[l]))
            );
        }
        let q = anchor_q(&uniform_spec(4)).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let want = if a == b { 0.0 } else { 1.0 / 3.0 };
                assert!((q[(a, b)] - want).abs() < 1e-15);
            }
        }
        let no_l1 = GenerativeSpec::from_support(
            3,
            &[
                (LabelSubset::from_labels(&[1]), 0.5),
                (LabelSubset::from_labels(&[2]), 0.5),
            ],
        )
        .unwrap();
        match anchor_q(&no_l1) {
            Err(Error::MissingAnchor(labels)) => assert_eq!(labels, vec![0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn distortion_values() {
        let q = Matrix::from_rows(&[
            vec![0.0, 0.5, 0.5],
            vec![0.5, 0.0, 0.5],
            vec![0.5, 0.5, 0.0],
        ]);
        assert_eq!(distortion(&q, &q, 1).unwrap(), 0.0);
        let mut t = q.clone();
        t[(0, 2)] += 0.1;
        t[(1, 2)] -= 0.2;
        assert!((distortion(&t, &q, 2).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn pairwise_plug_in() {
        let sc = TheoremScenario::pairwise(0.1, [1.0, 1.0], [0.5, 0.5]).unwrap();
        let (a, b) = pairwise_t_formula(&sc).unwrap();
        assert!((a - 0.2).abs() < 1e-15 && (b - 0.2).abs() < 1e-15);
        let sc = TheoremScenario::pairwise(0.1, [1.0, 1.0], [1.0, 1.0]).unwrap();
        assert_eq!(pairwise_t_formula(&sc).unwrap(), (0.1, 0.1));
        assert!(TheoremScenario::pairwise(0.1, [0.0, 1.0], [1.0, 1.0]).is_err());
    }

    #[test]
    fn formula_matches_enumeration_when_cl_implies_full_set() {
        // ȳ = l_j occurs only with Y = Z, which is the situation the formula
        // is derived under.
        let with_cl = vec![0.0, 0.0, 0.15];
        let without_cl = vec![0.4, 0.3, 0.15];
        let joint = ScenarioJoint::new(2, with_cl, without_cl).unwrap();
        let sc = TheoremScenario::from_joint(&joint, ScenarioKind::Pairwise, 3).unwrap();
        let (a, b) = pairwise_t_formula(&sc).unwrap();
        assert!((a - joint.enumerated_transition(0)).abs() < 1e-15);
        assert!((b - joint.enumerated_transition(1)).abs() < 1e-15);
    }

    #[test]
    fn formula_differs_from_enumeration_otherwise() {
        let joint = ScenarioJoint::exchangeable(2, 0.5, 0.3).unwrap();
        let sc = TheoremScenario::from_joint(&joint, ScenarioKind::Pairwise, 3).unwrap();
        let (a, _) = pairwise_t_formula(&sc).unwrap();
        assert!((a - joint.enumerated_transition(0)).abs() > 1e-3);
    }

    #[test]
    fn exchangeable_joint_conditionals() {
        let joint = ScenarioJoint::exchangeable(3, 0.6, 0.2).unwrap();
        assert!((joint.cl_probability() - 0.2).abs() < 1e-15);
        assert!((joint.conditional_given_cl(2, &[0, 1]) - 0.6).abs() < 1e-12);
        assert!((joint.conditional_given_cl(1, &[0]) - 0.6).abs() < 1e-12);
        let sc = TheoremScenario::from_joint(&joint, ScenarioKind::Chain(3), 4).unwrap();
        assert!((sc.xi() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn chain_two_equals_pairwise_bound() {
        let joint = ScenarioJoint::exchangeable(2, 0.7, 0.3).unwrap();
        let pair = TheoremScenario::from_joint(&joint, ScenarioKind::Pairwise, 4).unwrap();
        let chain = TheoremScenario::from_joint(&joint, ScenarioKind::Chain(2), 4).unwrap();
        assert_eq!(
            theorem2_bound(&pair).unwrap(),
            corollary3_bound(&chain).unwrap()
        );
        let xi = pair.xi();
        let want = 2.0 * (1.0 / (xi * xi) - 1.0) * 0.3;
        assert!((theorem2_bound(&pair).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn bound_vanishes_at_xi_one() {
        let joint = ScenarioJoint::exchangeable(3, 1.0, 0.4).unwrap();
        let sc = TheoremScenario::from_joint(&joint, ScenarioKind::Chain(3), 5).unwrap();
        assert_eq!(corollary3_bound(&sc).unwrap(), 0.0);
        assert!(sc.distortion().unwrap() >= 0.0);
    }

    #[test]
    fn chain_kind_is_validated() {
        let joint = ScenarioJoint::exchangeable(3, 0.5, 0.4).unwrap();
        assert!(TheoremScenario::from_joint(&joint, ScenarioKind::Chain(3), 3).is_err());
        assert!(TheoremScenario::from_joint(&joint, ScenarioKind::Pairwise, 5).is_err());
    }

    #[test]
    fn low_xi_violates_ordering_premise() {
        let joint = ScenarioJoint::exchangeable(2, 0.3, 0.1).unwrap();
        let sc = TheoremScenario::from_joint(&joint, ScenarioKind::Pairwise, 4).unwrap();
        assert!(!sc.ordering_premise_holds());
        assert!(sc.distortion().unwrap() < corollary3_bound(&sc).unwrap());
    }

    #[test]
    fn bound_grows_with_m() {
        for &xi in &[0.3, 0.5, 0.9] {
            let b: Vec<f64> = (2..=4)
                .map(|m| {
                    let joint = ScenarioJoint::exchangeable(m, xi, 0.3).unwrap();
                    let sc =
                        TheoremScenario::from_joint(&joint, ScenarioKind::Chain(m), 5).unwrap();
                    corollary3_bound(&sc).unwrap()
                })
                .collect();
            assert!(b[0] < b[1] && b[1] < b[2], "{b:?}");
        }
    }
}
