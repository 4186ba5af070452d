//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each.
//!
//! `cargo test --release -p erosegm --test acceptance` runs all of them;
//! extra arguments select criteria by number, e.g. `-- 1 2 3`.

#[path = "../src/testutil.rs"]
mod testutil;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use erosegm::inference::{debiased_stat, variance_estimate, ThetaBar};
use erosegm::multitest::{fdp_power, holm, PvalueEntry, PvalueTable};
use erosegm::nblasso::{solve_penalized_quadratic, tau_and_row, LassoConfig, PenaltyVector};
use erosegm::obsmodel::{pairwise_counts, MaskedDataset, ObservationIndex, QuadCountCache, Sample};
use erosegm::psdproj::{
    eig_threshold, min_eigenvalue, project_psd_weighted, project_weighted_l1_ball_vec, weighted_sup_distance,
    ProjectionConfig,
};
use erosegm::simlab::*;
use erosegm::{unbiased_cov, EdgeTester, Error, PairwiseCovariance};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use testutil::{brute_count, dense_debiased, dense_variance_oracle, enumerate_lasso, random_masked, random_spd};

// Tolerances and sizes, pinned.
const ORACLE_REL_TOL: f64 = 1e-12;
const LASSO_TOL: f64 = 1e-8;
const ORACLE_INSTANCES: u64 = 100;
const PROJ_INPUTS: u64 = 50;
const PROJ_CANDIDATES: usize = 100_000;
const EIG_SLACK: f64 = 1e-8;
const KKT_TOL: f64 = 1e-8;
const REDUCTION_TOL: f64 = 1e-10;
const TYPE1_BAND: (f64, f64) = (0.02, 0.09);
const TYPE1_BUDGET: Duration = Duration::from_secs(600);
const FDR_MAX_MEAN_FDP: f64 = 0.15;
const FDR_MIN_F1: f64 = 0.75;
const FDR_BUDGET: Duration = Duration::from_secs(1800);
const FWER_SLACK: f64 = 0.03;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rel_close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * x.abs().max(y.abs()).max(f64::MIN_POSITIVE)
}

fn lasso_strict() -> LassoConfig {
    LassoConfig { tol: 1e-13, max_sweeps: 200_000 }
}

// ---------------------------------------------------------------------------

fn brute_cov(data: &MaskedDataset) -> DMatrix<f64> {
    let p = data.n_vars();
    DMatrix::from_fn(p, p, |j, k| {
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in data.samples() {
            let xj = s.iter().find(|&(v, _)| v == j);
            let xk = s.iter().find(|&(v, _)| v == k);
            if let (Some((_, a)), Some((_, b))) = (xj, xk) {
                sum += a * b;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    })
}

fn criterion_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut failures = Vec::new();
    let (mut n_stat, mut n_var, mut n_degenerate) = (0, 0, 0);
    for inst in 0..ORACLE_INSTANCES {
        let p = rng.random_range(3..=8);
        let n = rng.random_range(20..=80);
        let keep = rng.random_range(0.4..0.95);
        let data = random_masked(p, n, keep, 1000 + inst);
        let counts = pairwise_counts(&data);
        let cov = unbiased_cov(&data, &counts, false);

        let brute = brute_cov(&data);
        if (0..p).any(|j| (0..p).any(|k| !rel_close(cov.sigma_hat[(j, k)], brute[(j, k)], ORACLE_REL_TOL) && brute[(j, k)] != cov.sigma_hat[(j, k)])) {
            failures.push(format!("covariance #{inst}"));
        }

        let idx = ObservationIndex::new(&data);
        let cache = QuadCountCache::new(&idx, 64);
        let mut quad_ok = true;
        for j in 0..p {
            for k in 0..p {
                for j2 in 0..p {
                    for k2 in 0..p {
                        let b = brute_count(&data, &[j, k, j2, k2]);
                        quad_ok &= idx.quad_count(j, k, j2, k2) == b && cache.get(j, k, j2, k2) == b;
                    }
                }
            }
        }
        if !quad_ok {
            failures.push(format!("quadruple counts #{inst}"));
        }

        // fits from the actual pipeline, then the statistic and variance
        let Ok(tester) = EdgeTester::prepare(&data, 0.3, &ProjectionConfig::default(), &LassoConfig::default()) else {
            failures.push(format!("pipeline #{inst}"));
            continue;
        };
        let a = rng.random_range(0..p);
        let b = (a + rng.random_range(1..p)) % p;
        let (Ok(fit), Ok(row)) = (tester.node_fit(a), tester.debias_row(a, b)) else {
            n_degenerate += 1;
            continue;
        };
        let stat = debiased_stat(fit, &row, &cov.sigma_hat, a, b);
        let dense = dense_debiased(&cov.sigma_hat, &fit.theta, &row.row, a, b);
        n_stat += 1;
        if !rel_close(stat, dense, ORACLE_REL_TOL) && stat != dense {
            failures.push(format!("debiased statistic #{inst}: {stat} vs {dense}"));
        }
        let tb = ThetaBar::from_fit(fit, a);
        let oracle = dense_variance_oracle(&data, &cov.sigma_hat, &row.row, &tb.vec);
        match variance_estimate(&cov, &idx, &row, &tb) {
            Ok(v) => {
                n_var += 1;
                if !rel_close(v, oracle, ORACLE_REL_TOL) {
                    failures.push(format!("variance #{inst}: {v} vs {oracle}"));
                }
            }
            Err(Error::DegenerateVariance { value, .. }) => {
                n_degenerate += 1;
                if !(oracle <= 0.0 || rel_close(value, oracle, ORACLE_REL_TOL)) {
                    failures.push(format!("degenerate variance #{inst}"));
                }
            }
            Err(e) => failures.push(format!("variance #{inst}: {e}")),
        }
    }

    // penalized quadratic against sign-pattern enumeration, p <= 6
    let mut worst: f64 = 0.0;
    for inst in 0..ORACLE_INSTANCES {
        let p = rng.random_range(2..=6);
        let s = random_spd(p, &mut rng);
        let target = rng.random_range(0..p);
        let mut excluded = vec![target];
        if p > 3 && rng.random::<bool>() {
            excluded.push((target + 1) % p);
        }
        let lambdas: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..0.4)).collect();
        let pen = PenaltyVector { lambdas: lambdas.clone(), constant: 1.0, effective_counts: vec![1; p] };
        let fit = solve_penalized_quadratic(&s, target, &excluded, &pen, &lasso_strict()).unwrap();
        let oracle = enumerate_lasso(&s, target, &excluded, &lambdas);
        let err = (0..p).map(|j| (fit.theta[j] - oracle[j]).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        if err > LASSO_TOL {
            failures.push(format!("lasso #{inst}: error {err:.2e}"));
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!(
            "{ORACLE_INSTANCES} masked instances (p<=8): covariance, quadruple counts, {n_stat} statistics, {n_var} variances ({n_degenerate} degenerate, matched); lasso vs enumeration max error {worst:.1e}{}",
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    }
}

// ---------------------------------------------------------------------------

fn random_sym(p: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(p, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    (&m + m.transpose()) * (0.5 * scale)
}

fn criterion_projection() -> Outcome {
    let cfg = ProjectionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut failures = Vec::new();
    let mut worst_margin = f64::INFINITY;
    let mut nontrivial = 0;
    for inst in 0..PROJ_INPUTS {
        let data = random_masked(20, 40, 0.55, 2000 + inst);
        let counts = pairwise_counts(&data);
        let cov = unbiased_cov(&data, &counts, false);
        if min_eigenvalue(&cov.sigma_hat) < cfg.eps {
            nontrivial += 1;
        }
        let proj = project_psd_weighted(&cov, &cfg).unwrap();
        let lam = min_eigenvalue(&proj.sigma_tilde);
        if lam < cfg.eps - EIG_SLACK {
            failures.push(format!("input {inst}: λ_min {lam:.3e}"));
        }
        let obj = weighted_sup_distance(&cov, &proj.sigma_tilde);

        // feasible pool from thresholded perturbations of the target
        let pool: Vec<DMatrix<f64>> = (0..200)
            .map(|_| {
                let scale = 10f64.powf(rng.random_range(-3.0..0.0));
                eig_threshold(&(&cov.sigma_hat + random_sym(20, scale, &mut rng)), cfg.eps).unwrap()
            })
            .chain(std::iter::once(eig_threshold(&cov.sigma_hat, cfg.eps).unwrap()))
            .collect();
        let mut best = f64::INFINITY;
        for _ in 0..PROJ_CANDIDATES {
            // convex combinations of feasible points stay feasible
            let x = &pool[rng.random_range(0..pool.len())];
            let y = &pool[rng.random_range(0..pool.len())];
            let t: f64 = rng.random();
            let cand = x * t + y * (1.0 - t);
            best = best.min(weighted_sup_distance(&cov, &cand));
        }
        worst_margin = worst_margin.min(best - obj);
        if obj > best * (1.0 + 1e-9) {
            failures.push(format!("input {inst}: objective {obj:.6} > candidate {best:.6}"));
        }
    }

    // weighted l1-ball projection: KKT and sub-gradient conditions
    let mut kkt_worst: f64 = 0.0;
    for _ in 0..200 {
        let m = rng.random_range(1..60);
        let a: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let u: Vec<f64> = (0..m)
            .map(|_| if rng.random::<f64>() < 0.1 { f64::INFINITY } else { 1.0 / (rng.random_range(1..500) as f64).sqrt() })
            .collect();
        let radius = rng.random_range(0.01..2.0);
        let (d, c) = project_weighted_l1_ball_vec(&a, &u, radius).unwrap();
        let norm: f64 = (0..m).filter(|&i| u[i].is_finite()).map(|i| u[i] * d[i].abs()).sum();
        kkt_worst = kkt_worst.max((norm - radius).max(0.0));
        let inside: f64 = (0..m).filter(|&i| u[i].is_finite()).map(|i| u[i] * a[i].abs()).sum();
        for i in 0..m {
            if u[i].is_infinite() {
                kkt_worst = kkt_worst.max(d[i].abs());
                continue;
            }
            if inside <= radius && u.iter().all(|w| w.is_finite()) {
                kkt_worst = kkt_worst.max((d[i] - a[i]).abs());
                continue;
            }
            if d[i] != 0.0 {
                // a - δ = c u sgn(δ), sgn(δ) = sgn(a)
                kkt_worst = kkt_worst.max((a[i] - d[i] - c * u[i] * d[i].signum()).abs());
                if d[i].signum() != a[i].signum() {
                    kkt_worst = f64::INFINITY;
                }
            } else {
                kkt_worst = kkt_worst.max((a[i].abs() - c * u[i]).max(0.0));
            }
        }
        if inside > radius {
            kkt_worst = kkt_worst.max((norm - radius).abs());
        }
    }
    if kkt_worst > KKT_TOL {
        failures.push(format!("ball projection KKT violation {kkt_worst:.2e}"));
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!(
            "{PROJ_INPUTS} inputs 20x20 ({nontrivial} infeasible before projection); min(candidate - admm objective) = {worst_margin:.3e} over {PROJ_CANDIDATES} candidates each; ball KKT residual {kkt_worst:.1e}{}",
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    }
}

// ---------------------------------------------------------------------------

fn criterion_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let n = 37;
    let p = 5;
    let samples: Vec<Sample> = (0..n).map(|_| Sample::new((0..p).collect(), vec![0.0; p]).unwrap()).collect();
    let data = MaskedDataset::new(p, samples).unwrap();
    let counts = pairwise_counts(&data);
    let idx = ObservationIndex::new(&data);
    for _ in 0..50 {
        let theta_star = random_spd(p, &mut rng);
        let sigma = theta_star.clone().try_inverse().unwrap();
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let cov = PairwiseCovariance { sigma_hat: sigma.clone(), counts: counts.clone(), zero_count_pairs: vec![] };
        let a = rng.random_range(0..p);
        let b = (a + rng.random_range(1..p)) % p;
        let zero = PenaltyVector::uniform(p, 0.0);
        let fit_a = solve_penalized_quadratic(&sigma, a, &[a], &zero, &lasso_strict()).unwrap();
        let fit_ab = solve_penalized_quadratic(&sigma, b, &[a, b], &zero, &lasso_strict()).unwrap();
        let row = tau_and_row(&sigma, a, b, &fit_ab).unwrap();
        let v = variance_estimate(&cov, &idx, &row, &ThetaBar::from_fit(&fit_a, a)).unwrap();
        let (taa, tbb, tab) = (theta_star[(a, a)], theta_star[(b, b)], theta_star[(a, b)]);
        let expect = (taa * tbb - tab * tab) / (n as f64 * taa * taa);
        worst = worst.max((v - expect).abs() / expect);
    }
    Outcome {
        pass: worst <= REDUCTION_TOL,
        detail: format!("50 random 5-node precisions, n = {n}: max relative deviation {worst:.2e} (tol {REDUCTION_TOL:.0e})"),
    }
}

// ---------------------------------------------------------------------------

fn pairwise_spec(n1: usize, n2: usize, target: (usize, usize)) -> MeasurementSpec {
    MeasurementSpec {
        scenario: MeasurementScenario::PairwiseDesign { n1, n2, base: 50, target },
        n_total: 0,
        seed: 0,
    }
}

/// Stability-tuned penalty constant from one replicate, as used for a whole study.
fn tune_on_first_replicate(setup: &StudySetup, m: &MeasurementSpec, master: u64, projection: &ProjectionConfig) -> f64 {
    let data = setup.replicate_data(m, derive_seed(master, 0)).unwrap();
    let grid = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0];
    stability_select(&data, &grid, &StabilityConfig::default(), projection, &LassoConfig::default())
        .unwrap()
        .chosen_c
}

fn criterion_type1() -> Outcome {
    let start = Instant::now();
    // the second and fourth chain nodes, which are not adjacent
    let pair = (1, 3);
    let graph = GraphSpec { kind: GraphKind::Chain, p: 50, seed: 0 };
    let measurement = pairwise_spec(500, 500, pair);
    let projection = ProjectionConfig::default();
    let master = 4;
    let setup = StudySetup::new(&graph, &PrecisionSpec::default(), &measurement).unwrap();
    let c = tune_on_first_replicate(&setup, &measurement, master, &projection);
    let cfg = EdgeStudyConfig {
        graph,
        precision: PrecisionSpec::default(),
        measurement,
        pair,
        replicates: 200,
        master_seed: master,
        alpha: 0.05,
        penalty_c: c,
        projection,
        lasso: LassoConfig::default(),
    };
    let r = run_edge_study(&cfg).unwrap();
    let elapsed = start.elapsed();
    let in_band = (TYPE1_BAND.0..=TYPE1_BAND.1).contains(&r.rejection_rate);
    Outcome {
        pass: in_band && elapsed <= TYPE1_BUDGET && r.true_entry == 0.0,
        detail: format!(
            "chain p=50, n1=n2=500, null pair, C={c} (stability), {} of {} replicates rejected: rate {:.3} (band [{}, {}]), {} degenerate, {:.0}s",
            r.rejections, r.tested, r.rejection_rate, TYPE1_BAND.0, TYPE1_BAND.1, r.degenerate, elapsed.as_secs_f64()
        ),
    }
}

// ---------------------------------------------------------------------------

const POWER_SIGNALS: [f64; 4] = [0.0, 0.15, 0.3, 0.5];
const POWER_N2: [usize; 3] = [125, 250, 500];
const POWER_REPLICATES: usize = 30;

/// Non-decreasing sequence check allowing one drop within two standard errors.
fn monotone_with_slack(points: &[(f64, f64)], reps: usize) -> (bool, usize) {
    let mut drops = 0;
    for w in points.windows(2) {
        let (p0, p1) = (w[0].1, w[1].1);
        if p1 < p0 {
            let se = ((p0 * (1.0 - p0) + p1 * (1.0 - p1)) / reps as f64).sqrt();
            if p0 - p1 > 2.0 * se {
                return (false, drops + 1);
            }
            drops += 1;
        }
    }
    (drops <= 1, drops)
}

fn criterion_power() -> Outcome {
    let start = Instant::now();
    let pair = (1, 2);
    let graph = GraphSpec { kind: GraphKind::Chain, p: 200, seed: 0 };
    // capped iteration budget for the 200-node projection
    let projection = ProjectionConfig { max_iter: 100, ..ProjectionConfig::default() };
    let tune_m = pairwise_spec(250, 250, pair);
    let tune_setup = StudySetup::new(&graph, &PrecisionSpec::default(), &tune_m).unwrap();
    let c = tune_on_first_replicate(&tune_setup, &tune_m, 5, &projection);
    let mut all_ok = true;
    let mut lines = Vec::new();
    let mut pooled = Vec::new();
    for &n2 in &POWER_N2 {
        let mut curve = Vec::new();
        for (s, &signal) in POWER_SIGNALS.iter().enumerate() {
            let cfg = EdgeStudyConfig {
                graph: graph.clone(),
                precision: PrecisionSpec {
                    overrides: vec![EntryOverride { a: pair.0, b: pair.1, value: signal }],
                    ..PrecisionSpec::default()
                },
                measurement: pairwise_spec(n2, n2, pair),
                pair,
                replicates: POWER_REPLICATES,
                master_seed: 500 + s as u64,
                alpha: 0.05,
                penalty_c: c,
                projection,
                lasso: LassoConfig::default(),
            };
            let r = run_edge_study(&cfg).unwrap();
            let x = (n2 as f64).sqrt() * signal;
            curve.push((x, r.rejection_rate));
            pooled.push((x, r.rejection_rate));
        }
        let (ok, drops) = monotone_with_slack(&curve, POWER_REPLICATES);
        all_ok &= ok;
        lines.push(format!(
            "n2={n2}: {} ({drops} drop{})",
            curve.iter().map(|(x, p)| format!("{x:.1}->{p:.2}")).collect::<Vec<_>>().join(" "),
            if drops == 1 { "" } else { "s" }
        ));
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    Outcome {
        pass: all_ok,
        detail: format!(
            "chain p=200, C={c}, {POWER_REPLICATES} replicates per point, power vs sqrt(n2)*entry: {}; {:.0}s",
            lines.join("; "),
            start.elapsed().as_secs_f64()
        ),
    }
}

// ---------------------------------------------------------------------------

fn fdr_study_config() -> StudyConfig {
    StudyConfig {
        graph: GraphSpec { kind: GraphKind::Chain, p: 100, seed: 0 },
        precision: PrecisionSpec::default(),
        measurement: MeasurementSpec {
            scenario: MeasurementScenario::BlockProbs { probs: vec![0.1f64.sqrt(), 0.5f64.sqrt(), 0.9f64.sqrt()] },
            n_total: 800,
            seed: 0,
        },
        replicates: 20,
        master_seed: 6,
        alpha: 0.1,
        penalty: PenaltySetting::Stability {
            grid: vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
            config: StabilityConfig::default(),
        },
        projection: ProjectionConfig::default(),
        lasso: LassoConfig::default(),
    }
}

fn criterion_fdr() -> Outcome {
    let start = Instant::now();
    let report = run_study(&fdr_study_config()).unwrap();
    let elapsed = start.elapsed();
    let fdr = report.aggregate.iter().find(|a| a.method == "gijoe_fdr").unwrap();
    let others: Vec<String> = report
        .aggregate
        .iter()
        .map(|a| format!("{} F1 {:.3}", a.method, a.mean_f1))
        .collect();
    Outcome {
        pass: fdr.mean_fdp <= FDR_MAX_MEAN_FDP && fdr.mean_f1 >= FDR_MIN_F1 && elapsed <= FDR_BUDGET,
        detail: format!(
            "chain p=100, block probabilities, n=800, alpha=0.1, C={} (stability), 20 replicates: mean FDP {:.3} (<= {FDR_MAX_MEAN_FDP}), F1 {:.3} (>= {FDR_MIN_F1}); [{}]; {} untestable; {:.0}s",
            report.penalty_c,
            fdr.mean_fdp,
            fdr.mean_f1,
            others.join(", "),
            report.untestable,
            elapsed.as_secs_f64()
        ),
    }
}

// ---------------------------------------------------------------------------

fn criterion_fwer() -> Outcome {
    let p = 20;
    let n = 400;
    let alpha = 0.05;
    let reps = 500u64;
    let pattern = ObservationPattern { p, sets: vec![(0..p).collect(); n] };
    let sigma = DMatrix::<f64>::identity(p, p);
    let mut false_rejections = 0;
    let mut total_selected = 0;
    for r in 0..reps {
        let data = sample_data(&sigma, &pattern, derive_seed(7, r)).unwrap();
        let tester = EdgeTester::prepare(&data, 1.0, &ProjectionConfig::default(), &LassoConfig::default()).unwrap();
        let entries: Vec<PvalueEntry> = tester
            .test_all_pairs(alpha, false)
            .iter()
            .map(|o| PvalueEntry { a: o.a, b: o.b, p_value: o.p_value() })
            .collect();
        let sel = holm(&PvalueTable::new(entries).unwrap(), alpha).unwrap();
        total_selected += sel.len();
        let fdp = fdp_power(&sel, &BTreeSet::new());
        if !sel.is_empty() && fdp.fdp > 0.0 {
            false_rejections += 1;
        }
    }
    let fwer = false_rejections as f64 / reps as f64;
    Outcome {
        pass: fwer <= alpha + FWER_SLACK,
        detail: format!(
            "global null p={p}, n={n}, {reps} replicates: FWER {fwer:.3} (<= {:.2}), {total_selected} rejections in total",
            alpha + FWER_SLACK
        ),
    }
}

// ---------------------------------------------------------------------------

fn criterion_determinism() -> Outcome {
    let mut failures = Vec::new();
    let cfg = StudyConfig {
        graph: GraphSpec { kind: GraphKind::MultiStar { stars: 3 }, p: 30, seed: 3 },
        precision: PrecisionSpec { seed: 3, ..PrecisionSpec::default() },
        measurement: MeasurementSpec {
            scenario: MeasurementScenario::DegreeMissing { base: 0.815 },
            n_total: 400,
            seed: 0,
        },
        replicates: 3,
        master_seed: 8,
        alpha: 0.1,
        penalty: PenaltySetting::Fixed { c: 0.75 },
        projection: ProjectionConfig::default(),
        lasso: LassoConfig::default(),
    };
    let csv_bytes = |report: &StudyReport| {
        let mut buf = Vec::new();
        write_csv(&report.rows, &mut buf).unwrap();
        write_csv(&report.aggregate, &mut buf).unwrap();
        buf
    };
    let r1 = run_study(&cfg).unwrap();
    let r2 = run_study(&cfg).unwrap();
    if csv_bytes(&r1) != csv_bytes(&r2) {
        failures.push("study CSV differs between runs");
    }

    let setup = StudySetup::new(&cfg.graph, &cfg.precision, &cfg.measurement).unwrap();
    let d1 = setup.replicate_data(&cfg.measurement, 99).unwrap();
    let d2 = setup.replicate_data(&cfg.measurement, 99).unwrap();
    let mut b1 = Vec::new();
    let mut b2 = Vec::new();
    erosegm::obsmodel::write_masked_csv(&d1, &mut b1).unwrap();
    erosegm::obsmodel::write_masked_csv(&d2, &mut b2).unwrap();
    if b1 != b2 {
        failures.push("dataset export differs between runs");
    }

    let serial = run_graph(&d1, 0.75, 0.1, &cfg.projection, &cfg.lasso, false).unwrap();
    let parallel = run_graph(&d1, 0.75, 0.1, &cfg.projection, &cfg.lasso, true).unwrap();
    if serial.holm != parallel.holm || serial.fdr != parallel.fdr || serial.and != parallel.and || serial.or != parallel.or {
        failures.push("parallel and serial selections differ");
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!(
            "repeated study ({} CSV bytes), dataset export ({} bytes), parallel vs serial full-graph selections ({} Holm, {} FDR edges){}",
            csv_bytes(&r1).len(),
            b1.len(),
            serial.holm.len(),
            serial.fdr.len(),
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    }
}

// ---------------------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 8] = [
    (1, "oracle equivalence", criterion_oracles),
    (2, "projection suite", criterion_projection),
    (3, "equal-count variance reduction", criterion_reduction),
    (4, "type-I calibration", criterion_type1),
    (5, "power monotonicity", criterion_power),
    (6, "FDR control", criterion_fdr),
    (7, "Holm FWER", criterion_fwer),
    (8, "determinism", criterion_determinism),
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = std::panic::catch_unwind(run).unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
            ),
        });
        println!(
            "criterion {id} [{}] {name}: {} ({:.1}s)",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            start.elapsed().as_secs_f64()
        );
        if !out.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
