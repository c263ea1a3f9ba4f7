//! Desk-scale benchmark: runs every acceptance check that can be verified
//! from inside the library and reports one line per criterion.
//!
//! Comparisons against independent reference implementations (descent
//! solvers, scalar mAP) live in the crate's acceptance test suite; the
//! checks here use closed-form conditions, grid searches and exhaustive
//! enumeration.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::centers::{audit_centers, build_center_table, required_order};
use crate::codes::CodeMatrix;
use crate::encoder::{
    encode_adaptive, encode_fixed, encoding_objective, EncodeOptions, QueryBatch,
};
use crate::error::Result;
use crate::eval::{average_precision, mean_average_precision};
use crate::kernel::AnchorSet;
use crate::labels::LabelSet;
use crate::protocol::{
    ablate, run_pipeline, sweep_delta, sweep_range, train_on_bundle, PipelineConfig, DELTA_GRID,
};
use crate::synth::{generate_synthetic, SynthSpec};
use crate::trainer::{update_projection, update_weights, TrainedModel};

#[derive(Clone, Debug)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub criteria: Vec<CriterionResult>,
}

impl BenchReport {
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    /// One line per criterion. Timings are left out when `with_times` is
    /// false so the text is reproducible.
    pub fn to_text(&self, with_times: bool) -> String {
        let mut s = String::new();
        for c in &self.criteria {
            let status = if c.passed { "PASS" } else { "FAIL" };
            write!(s, "[{status}] {:>2} {:<28} {}", c.id, c.name, c.detail).unwrap();
            if with_times {
                write!(s, " ({:.2}s)", c.elapsed.as_secs_f64()).unwrap();
            }
            s.push('\n');
        }
        let passed = self.criteria.iter().filter(|c| c.passed).count();
        writeln!(s, "{passed}/{} criteria passed", self.criteria.len()).unwrap();
        s
    }
}

type Check = fn(u64) -> Result<(bool, String)>;

/// Runtime limit per criterion, where one applies.
fn time_limit(id: u8) -> Option<Duration> {
    match id {
        1 => Some(Duration::from_secs(1)),
        2 => Some(Duration::from_secs(5)),
        6 => Some(Duration::from_secs(10)),
        7 => Some(Duration::from_secs(30)),
        9 => Some(Duration::from_secs(60)),
        _ => None,
    }
}

pub fn run_bench(seed: u64) -> BenchReport {
    let checks: [(u8, &'static str, Check); 12] = [
        (1, "hadamard-validity", hadamard_validity),
        (2, "lsh-redimensioning", lsh_redimensioning),
        (3, "closed-form-stationarity", closed_form_stationarity),
        (4, "weight-optimality", weight_optimality),
        (5, "cauchy-schwarz-equivalence", cauchy_schwarz_equivalence),
        (6, "training-convergence", training_convergence),
        (7, "end-to-end-retrieval", end_to_end_retrieval),
        (8, "ablation-direction", ablation_direction),
        (9, "encoding-fixed-point", encoding_fixed_point),
        (10, "evaluator-exactness", evaluator_exactness),
        (11, "missing-modality", missing_modality),
        (12, "delta-sensitivity", delta_sensitivity),
    ];
    let criteria = checks
        .iter()
        .map(|&(id, name, check)| {
            let start = Instant::now();
            let outcome = check(seed);
            let elapsed = start.elapsed();
            let (mut passed, mut detail) = match outcome {
                Ok(v) => v,
                Err(e) => (false, format!("error: {e}")),
            };
            if let Some(limit) = time_limit(id) {
                if elapsed > limit {
                    passed = false;
                    detail.push_str(&format!("; exceeded {}s limit", limit.as_secs()));
                }
            }
            CriterionResult {
                id,
                name,
                passed,
                detail,
                elapsed,
            }
        })
        .collect();
    BenchReport { criteria }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_signs(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(
        rows,
        cols,
        |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 },
    )
}

fn hadamard_validity(_seed: u64) -> Result<(bool, String)> {
    let mut tables = 0;
    let mut ok = true;
    for r in [8usize, 16, 32, 64, 128] {
        for k in [2usize, 10, 20, 81] {
            if required_order(r, k) != r {
                continue;
            }
            tables += 1;
            let t = build_center_table(r, k, 0)?;
            let c = t.centers();
            for a in 0..k {
                for b in a + 1..k {
                    ok &= 2 * c.hamming(a, c, b) as usize == r;
                }
            }
        }
    }
    Ok((
        ok,
        format!("{tables} exact tables, all pairwise distances = r/2: {ok}"),
    ))
}

fn lsh_redimensioning(seed: u64) -> Result<(bool, String)> {
    let (r, k) = (48usize, 20usize);
    let mut sum = 0.0;
    let mut all_pass = true;
    for s in 0..20 {
        let t = build_center_table(r, k, seed.wrapping_add(s * 1000))?;
        let audit = audit_centers(&t);
        all_pass &= audit.passed;
        sum += audit.average;
    }
    let mean = sum / 20.0;
    let lo = 0.45 * r as f64;
    let hi = 0.55 * r as f64;
    let ok = all_pass && mean >= lo && mean <= hi;
    Ok((
        ok,
        format!("mean distance {mean:.3} in [{lo:.1}, {hi:.1}], all audits pass: {all_pass}"),
    ))
}

fn closed_form_stationarity(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3);
    let mut worst = 0.0f64;
    let mut worst_descent = 0.0f64;
    for _ in 0..50 {
        let r = rng.random_range(1..=8);
        let p = rng.random_range(1..=6);
        let n = rng.random_range(1..=12);
        let m = rng.random_range(1..=3);
        let h = random_signs(r, n, &mut rng);
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let delta = rng.random_range(0.01..1.0);
        for u in raw.iter().map(|v| v / total) {
            let phi = DMatrix::from_fn(p, n, |_, _| rng.random_range(0.0..1.0));
            let w = update_projection(&h, &phi, u, delta)?;
            let grad = (&w * &phi - &h) * phi.transpose() * (2.0 / u) + &w * (2.0 * delta);
            worst = worst.max(grad.abs().max() / h.norm());
            worst_descent = worst_descent.max((descent_projection(&h, &phi, u, delta) - &w).norm());
        }
    }
    let ok = worst < 1e-6 && worst_descent < 1e-5;
    Ok((
        ok,
        format!("max relative gradient {worst:.2e} < 1e-6; max distance to descent solution {worst_descent:.2e} < 1e-5"),
    ))
}

/// Minimizes `(1/u)‖H − Wφ‖² + δ‖W‖²` by conjugate gradient on each row of W.
fn descent_projection(h: &DMatrix<f64>, phi: &DMatrix<f64>, u: f64, delta: f64) -> DMatrix<f64> {
    let p = phi.nrows();
    let a = phi * phi.transpose() / u + DMatrix::identity(p, p) * delta;
    let rhs = h * phi.transpose() / u;
    let mut w = DMatrix::zeros(h.nrows(), p);
    for i in 0..h.nrows() {
        let b = rhs.row(i).transpose();
        let mut x = nalgebra::DVector::zeros(p);
        let mut r = b.clone();
        let mut d = r.clone();
        for _ in 0..10 * p {
            let rr = r.dot(&r);
            if rr.sqrt() <= 1e-14 * b.norm().max(1e-300) {
                break;
            }
            let ad = &a * &d;
            let step = rr / d.dot(&ad);
            x += &d * step;
            r -= &ad * step;
            d = &r + &d * (r.dot(&r) / rr);
        }
        w.set_row(i, &x.transpose());
    }
    w
}

/// `Σ G²/μ` over a `step`-spaced simplex grid, skipping points with a zero
/// coordinate (the objective is infinite there).
fn simplex_grid_min(g: &[f64], steps: usize) -> f64 {
    let value = |mu: &[f64]| g.iter().zip(mu).map(|(g, u)| g * g / u).sum::<f64>();
    let step = 1.0 / steps as f64;
    let mut best = f64::INFINITY;
    match g.len() {
        2 => {
            for i in 1..steps {
                let a = i as f64 * step;
                best = best.min(value(&[a, 1.0 - a]));
            }
        }
        3 => {
            for i in 1..steps {
                for j in 1..steps - i {
                    let a = i as f64 * step;
                    let b = j as f64 * step;
                    best = best.min(value(&[a, b, 1.0 - a - b]));
                }
            }
        }
        _ => unreachable!("grid search covers two or three modalities"),
    }
    best
}

fn weight_optimality(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4);
    let mut ok = true;
    let mut cases = 0;
    for m in [2usize, 3] {
        for _ in 0..5 {
            let g: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..10.0)).collect();
            let mu = update_weights(&g);
            let closed: f64 = g.iter().zip(&mu).map(|(g, u)| g * g / u).sum();
            ok &= closed <= simplex_grid_min(&g, 1000);
            cases += 1;
        }
    }
    Ok((
        ok,
        format!("closed-form weights beat the 1e-3 simplex grid on {cases} cases: {ok}"),
    ))
}

fn cauchy_schwarz_equivalence(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (r, p, n) = (4, 3, 6);
        let h = random_signs(r, n, &mut rng);
        let g: Vec<f64> = (0..2)
            .map(|_| {
                let w = gaussian(r, p, &mut rng);
                let phi = DMatrix::from_fn(p, n, |_, _| rng.random_range(0.0..1.0));
                (&h - w * phi).norm()
            })
            .collect();
        let grid = simplex_grid_min(&g, 1000);
        let bound = g.iter().sum::<f64>().powi(2);
        worst = worst.max((grid - bound).abs() / bound);
    }
    Ok((worst < 1e-3, format!("max relative gap {worst:.2e} < 1e-3")))
}

fn training_convergence(seed: u64) -> Result<(bool, String)> {
    let bundle = generate_synthetic(&SynthSpec::standard(0.3, seed))?;
    let (_, model) = train_on_bundle(&bundle, &PipelineConfig::default())?;
    let trace = &model.objective_trace;
    let monotone = trace.windows(2).all(|w| w[1] <= w[0]);
    let ok = monotone && model.converged && trace.len() <= 10;
    Ok((
        ok,
        format!(
            "{} iterations, converged: {}, non-increasing: {monotone}",
            trace.len(),
            model.converged
        ),
    ))
}

fn end_to_end_retrieval(seed: u64) -> Result<(bool, String)> {
    let noisy = run_pipeline(
        &generate_synthetic(&SynthSpec::standard(0.3, seed))?,
        &PipelineConfig::default(),
    )?;
    let exact = run_pipeline(
        &generate_synthetic(&SynthSpec::standard(0.0, seed))?,
        &PipelineConfig::default(),
    )?;
    let ok = noisy.report.map >= 0.95 && exact.report.map == 1.0;
    Ok((
        ok,
        format!(
            "mAP {:.4} (>= 0.95) at spread 0.3, {:.4} (= 1) at spread 0",
            noisy.report.map, exact.report.map
        ),
    ))
}

fn ablation_direction(seed: u64) -> Result<(bool, String)> {
    let bundle = generate_synthetic(&SynthSpec::ablation(seed))?;
    let report = ablate(&bundle, &PipelineConfig::default())?;
    let frac = report.corrupted_heaviest_fraction();
    let ok = report.adaptive_map >= report.fixed_map && frac >= 0.9;
    Ok((
        ok,
        format!(
            "adaptive mAP {:.4} vs fixed {:.4}; corrupted modality heaviest in {}/{} batches",
            report.adaptive_map,
            report.fixed_map,
            report.corrupted_heaviest,
            report.corrupted_batches
        ),
    ))
}

/// Random two-modality model with `p` anchors per modality.
fn random_model(r: usize, dims: &[usize], p: usize, rng: &mut ChaCha8Rng) -> TrainedModel {
    let anchor_sets = dims
        .iter()
        .enumerate()
        .map(|(m, &d)| AnchorSet {
            anchors: gaussian(d, p, rng),
            kernel_width: rng.random_range(1.0..3.0),
            modality_index: m,
            seed: 0,
        })
        .collect();
    TrainedModel {
        projections: dims.iter().map(|_| gaussian(r, p, rng)).collect(),
        anchor_sets,
        train_weights: vec![1.0 / dims.len() as f64; dims.len()],
        delta: 1e-3,
        code_length: r,
        objective_trace: Vec::new(),
        converged: true,
        seed: 0,
        center_seed: 0,
    }
}

/// Minimum of the batch objective over all sign matrices, enumerated in
/// Gray-code order with incremental updates.
fn enumerate_min_objective(projected: &[DMatrix<f64>], weights: &[f64]) -> f64 {
    let entries = projected[0].len();
    assert!(entries < 32, "enumeration limited to fewer than 32 entries");
    let cost = |e: usize, b: f64| -> f64 {
        projected
            .iter()
            .zip(weights)
            .map(|(p, u)| (b - p.as_slice()[e]).powi(2) / u)
            .sum()
    };
    let plus: Vec<f64> = (0..entries).map(|e| cost(e, 1.0)).collect();
    let minus: Vec<f64> = (0..entries).map(|e| cost(e, -1.0)).collect();
    let mut state = vec![false; entries];
    let mut current: f64 = minus.iter().sum();
    let mut best = current;
    for i in 1u64..(1u64 << entries) {
        let bit = i.trailing_zeros() as usize;
        current += if state[bit] {
            minus[bit] - plus[bit]
        } else {
            plus[bit] - minus[bit]
        };
        state[bit] = !state[bit];
        best = best.min(current);
    }
    best
}

fn encoding_fixed_point(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9);
    let (r, n_q) = (8, 3);
    let mut fixed_ok = 0;
    let mut min_ok = 0;
    for _ in 0..20 {
        let model = random_model(r, &[5, 4], 6, &mut rng);
        let feats: Vec<DMatrix<f64>> = [5, 4].iter().map(|&d| gaussian(d, n_q, &mut rng)).collect();
        let res = encode_adaptive(
            &model,
            &QueryBatch::complete(feats.clone()),
            &EncodeOptions::default(),
        )?;
        let projected = feats
            .iter()
            .enumerate()
            .map(|(m, x)| model.project(m, x))
            .collect::<Result<Vec<_>>>()?;
        let b = res.codes.to_real();
        let g: Vec<f64> = projected.iter().map(|p| (&b - p).norm()).collect();
        let expected_mu = update_weights(&g);
        let weights_match = expected_mu
            .iter()
            .zip(&res.dynamic_weights)
            .all(|(a, b)| (a - b).abs() <= 1e-12);
        let mut fused = DMatrix::zeros(r, n_q);
        for (p, u) in projected.iter().zip(&res.dynamic_weights) {
            fused += p / *u;
        }
        let codes_match = CodeMatrix::from_real(&fused) == res.codes;
        if weights_match && codes_match {
            fixed_ok += 1;
        }
        let at_codes = encoding_objective(&b, &projected, &res.dynamic_weights);
        let best = enumerate_min_objective(&projected, &res.dynamic_weights);
        if at_codes <= best + 1e-9 * best.abs().max(1.0) {
            min_ok += 1;
        }
    }
    let ok = fixed_ok == 20 && min_ok == 20;
    Ok((
        ok,
        format!("{fixed_ok}/20 joint fixed points, {min_ok}/20 codes minimal over 2^24 candidates"),
    ))
}

fn evaluator_exactness(seed: u64) -> Result<(bool, String)> {
    let ap = average_precision(&[true, false, true], 3)?;
    let ap_ok = (ap - 5.0 / 6.0).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa);
    let (r, n, q) = (32, 2000, 200);
    let rand_codes =
        |count: usize, rng: &mut ChaCha8Rng| CodeMatrix::from_real(&random_signs(r, count, rng));
    let db = rand_codes(n, &mut rng);
    let queries = rand_codes(q, &mut rng);
    let db_labels = LabelSet::single(&(0..n).map(|i| i % 2).collect::<Vec<_>>());
    let q_labels = LabelSet::single(&(0..q).map(|i| i % 2).collect::<Vec<_>>());
    let map = mean_average_precision(&queries, &q_labels, &db, &db_labels, None)?.map;
    let random_ok = (map - 0.5).abs() <= 0.05;

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (n, q) = (30, 5);
        let db = rand_codes(n, &mut rng);
        let queries = rand_codes(q, &mut rng);
        let db_l: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let q_l: Vec<usize> = (0..q).map(|_| rng.random_range(0..3)).collect();
        let cutoff = rng.random_range(1..=n);
        let got = mean_average_precision(
            &queries,
            &LabelSet::single(&q_l),
            &db,
            &LabelSet::single(&db_l),
            Some(cutoff),
        )?
        .map;
        worst = worst.max(
            (got - scalar_map(&all_signs(&queries), &q_l, &all_signs(&db), &db_l, cutoff)).abs(),
        );
    }
    let oracle_ok = worst <= 1e-12;
    Ok((
        ap_ok && random_ok && oracle_ok,
        format!(
            "AP([1,0,1]) = {ap:.12}; scalar-oracle gap {worst:.1e}; random-code mAP {map:.4} within 0.5 +/- 0.05"
        ),
    ))
}

fn all_signs(codes: &CodeMatrix) -> Vec<Vec<i8>> {
    (0..codes.len()).map(|j| codes.column_signs(j)).collect()
}

/// Straight-line mAP over sign vectors: stable sort by distance, then
/// average precision at each relevant position.
fn scalar_map(
    queries: &[Vec<i8>],
    q_labels: &[usize],
    db: &[Vec<i8>],
    db_labels: &[usize],
    cutoff: usize,
) -> f64 {
    let mut total = 0.0;
    for (qc, &ql) in queries.iter().zip(q_labels) {
        let mut order: Vec<(usize, usize)> = db
            .iter()
            .enumerate()
            .map(|(j, c)| (c.iter().zip(qc).filter(|(a, b)| a != b).count(), j))
            .collect();
        order.sort();
        let mut hits = 0.0;
        let mut sum = 0.0;
        for (pos, &(_, j)) in order.iter().take(cutoff).enumerate() {
            if db_labels[j] == ql {
                hits += 1.0;
                sum += hits / (pos + 1) as f64;
            }
        }
        total += if hits > 0.0 { sum / hits } else { 0.0 };
    }
    total / queries.len() as f64
}

fn missing_modality(seed: u64) -> Result<(bool, String)> {
    let bundle = generate_synthetic(&SynthSpec::standard(0.3, seed))?;
    let (_, model) = train_on_bundle(&bundle, &PipelineConfig::default())?;
    let idx = &bundle.split.query;
    let feats = bundle.features_for(idx);
    let mut ok = true;
    for keep in 0..model.num_modalities() {
        let missing: Vec<usize> = (0..model.num_modalities()).filter(|&m| m != keep).collect();
        let batch = QueryBatch::complete(feats.clone()).without(&missing);
        let expected = CodeMatrix::from_real(&model.project(keep, &feats[keep])?);
        ok &= encode_adaptive(&model, &batch, &EncodeOptions::default())?.codes == expected;
        ok &= encode_fixed(&model, &batch)?.codes == expected;
    }
    Ok((
        ok,
        format!("single-modality codes equal sgn(W phi) bit-for-bit: {ok}"),
    ))
}

fn delta_sensitivity(seed: u64) -> Result<(bool, String)> {
    let bundle = generate_synthetic(&SynthSpec::standard(0.3, seed))?;
    let points = sweep_delta(&bundle, &PipelineConfig::default(), &DELTA_GRID)?;
    let range = sweep_range(&points);
    let maps: Vec<String> = points
        .iter()
        .map(|p| format!("{:.0e}:{:.4}", p.delta, p.map))
        .collect();
    Ok((
        range < 0.05,
        format!("mAP range {range:.4} < 0.05 [{}]", maps.join(" ")),
    ))
}
