//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria that need no external data gate the exit status, except the
//! Theorem 1 inequality, which does not hold in general and is reported only.
//! Dataset criteria read `scene.txt` and `yeast.txt` from `MLCL_DATA_DIR`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mlcl::complementary::CorruptionMode;
use mlcl::complementary::{ComplementaryDataset, ComplementaryInstance};
use mlcl::dataset::{
    parse_multilabel_file, preprocess_topk_labels, Instance, LabelSpace, MultiLabelDataset,
    SparseVec,
};
use mlcl::experiment::{
    run_ablation_on, run_clrl_on, run_consistency, run_cv_on, ConsistencyConfig, RunConfig,
};
use mlcl::linalg::Matrix;
use mlcl::loss::{
    bce_supervised, ce_softmax, cl_bce, cl_mse, clrl_loss, gradient_check, mlcl_loss, ClampPolicy,
    Clrl, LossValue, Mlcl, SoftmaxCe, Supervised, DEFAULT_GRADIENT_TOLERANCE,
    FINITE_DIFFERENCE_STEP,
};
use mlcl::metrics::evaluate_all;
use mlcl::model::{init_linear, Head};
use mlcl::theory::{
    bound_grid, corollary3_bound, theorem1_trials, theorem2_bound, ScenarioJoint, ScenarioKind,
    TheoremScenario,
};
use mlcl::transition::{correct_and_normalize, TransitionMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (u32, &'static str, bool, Box<dyn FnOnce() -> Outcome>);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn within_time(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn transition_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(3..=8);
        let s: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..k).map(|_| rng.random::<f64>()).collect())
            .collect();
        let c: Vec<Vec<f64>> = (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| if a == b { 1.0 } else { rng.random::<f64>() })
                    .collect()
            })
            .collect();
        let t = match correct_and_normalize(&Matrix::from_rows(&s), &Matrix::from_rows(&c)) {
            Ok(t) => t,
            Err(e) => return Outcome::new(false, format!("error {e}")),
        };
        let m = t.matrix();
        for a in 0..k {
            worst = worst.max(m[(a, a)].abs());
            worst = worst.max((m.row(a).iter().sum::<f64>() - 1.0).abs());
            if m.row(a).iter().any(|&v| v < 0.0) {
                return Outcome::new(false, "negative entry");
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst <= 1e-9 && within_time(elapsed, Duration::from_secs(1)),
        format!("max deviation {worst:.2e}, {elapsed:.2?}"),
    )
}

fn random_transition(k: usize, rng: &mut ChaCha8Rng) -> TransitionMatrix {
    let s: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..k).map(|_| rng.random::<f64>()).collect())
        .collect();
    let c: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| if a == b { 1.0 } else { rng.random::<f64>() })
                .collect()
        })
        .collect();
    correct_and_normalize(&Matrix::from_rows(&s), &Matrix::from_rows(&c)).unwrap()
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

/// Central differences of `loss` around `f`, compared with its analytic gradient.
fn score_gradient_error(f: &[f64], loss: impl Fn(&[f64]) -> LossValue) -> f64 {
    let analytic = loss(f).grad;
    let mut probe = f.to_vec();
    let mut worst = 0.0f64;
    for i in 0..f.len() {
        probe[i] = f[i] + FINITE_DIFFERENCE_STEP;
        let up = loss(&probe).value;
        probe[i] = f[i] - FINITE_DIFFERENCE_STEP;
        let down = loss(&probe).value;
        probe[i] = f[i];
        worst = worst.max(relative_error(
            analytic[i],
            (up - down) / (2.0 * FINITE_DIFFERENCE_STEP),
        ));
    }
    worst
}

fn away_from_clamp(q: &[f64]) -> bool {
    q.iter().all(|&v| v > 1e-3 && v < 1.0 - 1e-3)
}

fn random_instances(
    k: usize,
    d: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (MultiLabelDataset, ComplementaryDataset) {
    let mut full = Vec::new();
    let mut comp = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let features = SparseVec::from_dense(&x);
        let cl = rng.random_range(0..k);
        let mut labels = vec![false; k];
        let positive = (cl + 1 + rng.random_range(0..k - 1)) % k;
        labels[positive] = true;
        for (l, v) in labels.iter_mut().enumerate() {
            if l != cl && rng.random_bool(0.3) {
                *v = true;
            }
        }
        let mut relevant = vec![false; k];
        relevant[positive] = true;
        full.push(Instance {
            features: features.clone(),
            labels,
        });
        comp.push(ComplementaryInstance::new(features, cl, Some(relevant)));
    }
    let space = LabelSpace::new(k).unwrap();
    (
        MultiLabelDataset::new(space.clone(), d, full).unwrap(),
        ComplementaryDataset::new(space, d, comp).unwrap(),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let clamp = ClampPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let names = [
        "bce_supervised",
        "cl_bce",
        "cl_mse",
        "mlcl_loss",
        "clrl_loss",
        "ce_softmax",
    ];
    let mut worst = [0.0f64; 6];
    let mut evaluated = [0usize; 6];
    let mut attempts = 0;
    while evaluated.iter().any(|&c| c < 50) {
        attempts += 1;
        if attempts > 10_000 {
            return Outcome::new(false, "could not draw configurations away from the clamp");
        }
        let k = rng.random_range(3..=6);
        let t = random_transition(k, &mut rng);
        let f: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
        let cl = rng.random_range(0..k);
        let beta = rng.random_range(0.0..2.0);
        let y: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
        let total: f64 = f.iter().sum();
        let fbar: Vec<f64> = f.iter().map(|v| v / total).collect();
        if !away_from_clamp(&t.apply(&f)) {
            continue;
        }
        let errs = [
            score_gradient_error(&f, |g| bce_supervised(g, &y, clamp)),
            score_gradient_error(&f, |g| cl_bce(&t, g, cl, clamp)),
            score_gradient_error(&f, |g| cl_mse(&t, g, cl)),
            score_gradient_error(&f, |g| mlcl_loss(&t, g, cl, beta, clamp)),
            score_gradient_error(&f, |g| clrl_loss(&t, g, cl, &y, clamp)),
            score_gradient_error(&fbar, |g| ce_softmax(g, cl, clamp)),
        ];
        for i in 0..6 {
            if evaluated[i] < 50 {
                worst[i] = worst[i].max(errs[i]);
                evaluated[i] += 1;
            }
        }
    }

    // The same losses through the linear model and its output head.
    let mut model_worst = 0.0f64;
    for trial in 0..50u64 {
        let k = rng.random_range(3..=5);
        let d = rng.random_range(2..=5);
        let (ds, cds) = random_instances(k, d, 6, &mut rng);
        let t = random_transition(k, &mut rng);
        let batch: Vec<usize> = (0..6).collect();
        let sigmoid = init_linear(d, k, Head::Sigmoid, trial).unwrap();
        let softmax = init_linear(d, k, Head::Softmax, trial).unwrap();
        let clrl = Clrl::new(&cds, &t, clamp).unwrap();
        let checks = [
            gradient_check(
                &Supervised { data: &ds, clamp },
                &sigmoid,
                &batch,
                f64::INFINITY,
            ),
            gradient_check(
                &Mlcl {
                    data: &cds,
                    transition: &t,
                    beta: 0.7,
                    clamp,
                },
                &sigmoid,
                &batch,
                f64::INFINITY,
            ),
            gradient_check(&clrl, &sigmoid, &batch, f64::INFINITY),
            gradient_check(
                &SoftmaxCe { data: &cds, clamp },
                &softmax,
                &batch,
                f64::INFINITY,
            ),
        ];
        for c in checks {
            match c {
                Ok(r) => model_worst = model_worst.max(r.max_relative_error),
                Err(e) => return Outcome::new(false, format!("model check error {e}")),
            }
        }
    }
    let elapsed = start.elapsed();
    let summary: Vec<String> = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect();
    let pass = worst.iter().all(|&w| w <= DEFAULT_GRADIENT_TOLERANCE)
        && model_worst <= DEFAULT_GRADIENT_TOLERANCE
        && within_time(elapsed, Duration::from_secs(30));
    Outcome::new(
        pass,
        format!(
            "{}; through model {model_worst:.1e}; {elapsed:.2?}",
            summary.join(", ")
        ),
    )
}

/// Brute-force metrics for one instance: ranks by counting, pairs by enumeration.
fn brute_force_metrics(s: &[f64], y: &[bool]) -> [f64; 5] {
    let k = s.len();
    let rank = |l: usize| {
        1 + (0..k)
            .filter(|&o| s[o] > s[l] || (s[o] == s[l] && o < l))
            .count()
    };
    let hamming = (0..k).filter(|&l| (s[l] > 0.5) != y[l]).count() as f64 / k as f64;
    let rel: Vec<usize> = (0..k).filter(|&l| y[l]).collect();
    let irr: Vec<usize> = (0..k).filter(|&l| !y[l]).collect();
    let mut bad = 0usize;
    for &r in &rel {
        for &i in &irr {
            if rank(r) > rank(i) {
                bad += 1;
            }
        }
    }
    let ranking = bad as f64 / (rel.len() * irr.len()) as f64;
    let top = (0..k).find(|&l| rank(l) == 1).unwrap();
    let one_error = if y[top] { 0.0 } else { 1.0 };
    let coverage = (rel.iter().map(|&l| rank(l)).max().unwrap() - 1) as f64 / k as f64;
    let mut by_rank = rel.clone();
    by_rank.sort_by_key(|&l| rank(l));
    let mut ap = 0.0;
    for &r in &by_rank {
        let above = rel.iter().filter(|&&o| rank(o) <= rank(r)).count();
        ap += above as f64 / rank(r) as f64;
    }
    [hamming, ranking, one_error, coverage, ap / rel.len() as f64]
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..200 {
        let k = rng.random_range(3..=6);
        // Coarse scores so ties occur.
        let s: Vec<f64> = (0..k)
            .map(|_| rng.random_range(0..=10) as f64 / 10.0)
            .collect();
        let mut y: Vec<bool> = (0..k).map(|_| rng.random_bool(0.4)).collect();
        let pos = rng.random_range(0..k);
        let neg = (pos + 1 + rng.random_range(0..k - 1)) % k;
        y[pos] = true;
        y[neg] = false;
        let report = evaluate_all(std::slice::from_ref(&s), std::slice::from_ref(&y)).unwrap();
        if report.values() != brute_force_metrics(&s, &y) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        mismatches == 0 && within_time(elapsed, Duration::from_secs(5)),
        format!("{mismatches} mismatching instances of 200, {elapsed:.2?}"),
    )
}

fn theorem1() -> Outcome {
    let start = Instant::now();
    let trials = theorem1_trials(100, &[3, 4, 5], 4).unwrap();
    let failures: Vec<_> = trials.iter().filter(|t| !t.gap.holds).collect();
    let elapsed = start.elapsed();
    let worst = failures
        .iter()
        .map(|t| t.gap.rhs - t.gap.lhs)
        .fold(0.0f64, f64::max);
    Outcome::new(
        failures.is_empty() && within_time(elapsed, Duration::from_secs(10)),
        format!(
            "{} of {} violate lhs >= rhs, worst shortfall {worst:.3e}, {elapsed:.2?}",
            failures.len(),
            trials.len()
        ),
    )
}

fn distortion_bounds() -> Outcome {
    let start = Instant::now();
    let grid = bound_grid().unwrap();
    let applicable: Vec<_> = grid.iter().filter(|c| c.premise_holds).collect();
    let failing: Vec<&str> = applicable
        .iter()
        .filter(|c| !c.bound_holds)
        .map(|c| c.id.as_str())
        .collect();
    let mut pairwise_ok = true;
    for c in applicable.iter().filter(|c| c.m == 2) {
        let joint = ScenarioJoint::exchangeable(2, c.xi, c.cl_probability).unwrap();
        let sc = TheoremScenario::from_joint(&joint, ScenarioKind::Pairwise, 5).unwrap();
        let tight = theorem2_bound(&sc).unwrap();
        pairwise_ok &=
            c.distortion >= tight - 1e-12 && (tight - corollary3_bound(&sc).unwrap()).abs() < 1e-12;
    }
    let elapsed = start.elapsed();
    Outcome::new(
        !applicable.is_empty() && failing.is_empty() && pairwise_ok && within_time(elapsed, Duration::from_secs(10)),
        format!(
            "{} grid points satisfy the ordering premise, {} violate the bound {:?}; {} points outside the premise; {elapsed:.2?}",
            applicable.len(),
            failing.len(),
            failing,
            grid.len() - applicable.len()
        ),
    )
}

fn consistency() -> Outcome {
    let start = Instant::now();
    let outcome = run_consistency(&ConsistencyConfig::default()).unwrap();
    let elapsed = start.elapsed();
    Outcome::new(
        outcome.gap() <= 0.05
            && !outcome.invertibility.near_singular
            && within_time(elapsed, Duration::from_secs(120)),
        format!(
            "mlcl hamming {:.4}, supervised {:.4}, gap {:.4}, det {:.3e}, {elapsed:.2?}",
            outcome.mlcl_hamming,
            outcome.supervised_hamming,
            outcome.gap(),
            outcome.invertibility.determinant
        ),
    )
}

fn load(name: &str) -> Result<MultiLabelDataset, String> {
    let dir = std::env::var_os("MLCL_DATA_DIR").ok_or("MLCL_DATA_DIR is not set")?;
    let path = PathBuf::from(dir).join(format!("{name}.txt"));
    let ds = parse_multilabel_file(&path).map_err(|e| e.to_string())?;
    preprocess_topk_labels(&ds, 15).map_err(|e| e.to_string())
}

fn uniform_config() -> RunConfig {
    RunConfig {
        mode: CorruptionMode::Uniform,
        ..RunConfig::default()
    }
}

fn dataset_criterion(run: impl FnOnce() -> Result<Outcome, String>) -> Outcome {
    match run() {
        Ok(o) => o,
        Err(e) => Outcome::new(false, format!("not run: {e}")),
    }
}

fn yeast_uniform() -> Result<Outcome, String> {
    let ds = load("yeast")?;
    let start = Instant::now();
    let r = run_cv_on(&ds, &uniform_config())
        .map_err(|e| e.to_string())?
        .report;
    let elapsed = start.elapsed();
    let (ap, rl) = (r.average_precision(), r.ranking_loss());
    Ok(Outcome::new(
        (ap - 0.718).abs() <= 0.05
            && (rl - 0.211).abs() <= 0.05
            && within_time(elapsed, Duration::from_secs(600)),
        format!("average precision {ap:.3}, ranking loss {rl:.3}, {elapsed:.2?}"),
    ))
}

fn scene_uniform() -> Result<Outcome, String> {
    let ds = load("scene")?;
    let start = Instant::now();
    let r = run_cv_on(&ds, &uniform_config())
        .map_err(|e| e.to_string())?
        .report;
    let elapsed = start.elapsed();
    let ap = r.average_precision();
    Ok(Outcome::new(
        (ap - 0.699).abs() <= 0.05 && within_time(elapsed, Duration::from_secs(600)),
        format!("average precision {ap:.3}, {elapsed:.2?}"),
    ))
}

fn ablation_ordering() -> Result<Outcome, String> {
    let yeast = run_ablation_on(&load("yeast")?, &uniform_config()).map_err(|e| e.to_string())?;
    let scene = run_ablation_on(&load("scene")?, &uniform_config()).map_err(|e| e.to_string())?;
    let yeast_gap = yeast.full.average_precision() - yeast.without_correlation.average_precision();
    let scene_gap = scene.full.average_precision() - scene.without_mse.average_precision();
    Ok(Outcome::new(
        yeast_gap >= 0.15 && scene_gap >= 0.08,
        format!("yeast full minus without C {yeast_gap:.3}, scene full minus without MSE {scene_gap:.3}"),
    ))
}

fn clrl_dominance() -> Result<Outcome, String> {
    let scene = run_clrl_on(&load("scene")?, &uniform_config()).map_err(|e| e.to_string())?;
    let yeast = run_clrl_on(&load("yeast")?, &uniform_config()).map_err(|e| e.to_string())?;
    let lift = scene.clrl.average_precision() - scene.cl_only.average_precision();
    let to_supervised =
        (scene.clrl.average_precision() - scene.supervised.average_precision()).abs();
    let yeast_lift = yeast.clrl.average_precision() - yeast.cl_only.average_precision();
    Ok(Outcome::new(
        lift >= 0.1 && to_supervised <= 0.05 && yeast_lift > 0.0,
        format!(
            "scene clrl minus cl {lift:.3}, scene distance to supervised {to_supervised:.3}, yeast clrl minus cl {yeast_lift:.3}"
        ),
    ))
}

fn main() -> ExitCode {
    // (number, name, gates the exit status, check)
    let criteria: Vec<Criterion> = vec![
        (1, "transition algebra", true, Box::new(transition_algebra)),
        (
            2,
            "gradient correctness",
            true,
            Box::new(gradient_correctness),
        ),
        (
            3,
            "metric oracle equivalence",
            true,
            Box::new(metric_oracle),
        ),
        (4, "theorem 1 inequality", false, Box::new(theorem1)),
        (
            5,
            "distortion lower bounds",
            true,
            Box::new(distortion_bounds),
        ),
        (6, "classifier consistency", true, Box::new(consistency)),
        (
            7,
            "yeast uniform reproduction",
            false,
            Box::new(|| dataset_criterion(yeast_uniform)),
        ),
        (
            8,
            "scene uniform reproduction",
            false,
            Box::new(|| dataset_criterion(scene_uniform)),
        ),
        (
            9,
            "ablation ordering",
            false,
            Box::new(|| dataset_criterion(ablation_ordering)),
        ),
        (
            10,
            "clrl dominance",
            false,
            Box::new(|| dataset_criterion(clrl_dominance)),
        ),
    ];
    let mut gated_failures = 0;
    for (number, name, gates, check) in criteria {
        let outcome = check();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {number} ({name}): {}", outcome.detail);
        if gates && !outcome.pass {
            gated_failures += 1;
        }
    }
    if gated_failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
