//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p shel --test acceptance -- 1 4 9`.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shel::data::{ObservedDataset, SpatialRef};
use shel::el::{
    log_el, solve_lambda, solve_lambda_residuals, ElConfig, EquationFamily, EstimatingEquations,
};
use shel::harness::{
    outlier_plan, run_study, study1_plan, study2_plan, study_datasets, ExperimentPlan,
};
use shel::io::{cmd_fit, cmd_loo, cmd_simulate, write_dataset, RunConfig};
use shel::linalg::sorted_symmetric_eigen;
use shel::mcmc::{run_chain, PilotConfig, SamplerConfig};
use shel::models::{BetaPrior, DataModel, ModelContext, ModelSpec, ProcessPrior, Structure};
use shel::spatial::{icar_precision, verify_theorem1, LatticeGraph, QPolicy};

/// Outcome of one criterion: pass flag and a one-line measurement.
type Outcome = (bool, String);

fn uniform_problem(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(5..=50);
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0 + 1.0)
        .collect()
}

/// Root of `Σ mᵢ / (1 + λ mᵢ) = 0` by bisection on the interval where every
/// denominator is positive; the function is strictly decreasing there.
fn bisection_lambda(m: &[f64]) -> f64 {
    let max = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = m.iter().cloned().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (-1.0 / max, -1.0 / min);
    let g = |l: f64| m.iter().map(|v| v / (1.0 + l * v)).sum::<f64>();
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let (mut worst_lambda, mut worst_w) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let z = uniform_problem(&mut rng);
        let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let theta = lo + rng.random_range(0.1..0.9) * (hi - lo);
        let m: Vec<f64> = z.iter().map(|v| v - theta).collect();
        let sol = solve_lambda_residuals(
            &DMatrix::from_row_slice(1, m.len(), &m),
            &ElConfig::default(),
        )
        .unwrap();
        let oracle = bisection_lambda(&m);
        worst_lambda = worst_lambda.max((sol.lambda[0] - oracle).abs());
        let n = m.len() as f64;
        let w = sol.weights.unwrap();
        for (wi, mi) in w.iter().zip(&m) {
            worst_w = worst_w.max((wi - 1.0 / (n * (1.0 + oracle * mi))).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst_lambda < 1e-6 && worst_w < 1e-6 && secs < 5.0,
        format!("100 problems, max |Δλ| {worst_lambda:.1e}, max |Δw| {worst_w:.1e}, {secs:.2} s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let eqs = EstimatingEquations::mean_only(EquationFamily::GaussianFh);
    let cfg = ElConfig::default();
    let (mut worst_peak, mut beaten) = (0.0f64, 0usize);
    for _ in 0..50 {
        let z = uniform_problem(&mut rng);
        let n = z.len();
        let eval = |t: f64| log_el(&solve_lambda(&z, &vec![t; n], &eqs, &cfg).unwrap());
        let mean = z.iter().sum::<f64>() / n as f64;
        let peak = eval(mean);
        let want = -(n as f64) * (n as f64).ln();
        worst_peak = worst_peak.max((peak - want).abs());
        let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        beaten += (0..=100)
            .map(|k| lo + (hi - lo) * k as f64 / 100.0)
            .filter(|&t| eval(t) > peak + 1e-12)
            .count();
    }
    (
        worst_peak < 1e-9 && beaten == 0,
        format!("50 datasets, max |log EL(z̄) + n log n| {worst_peak:.1e}, grid points above the peak {beaten}"),
    )
}

/// Erdős–Rényi graph conditioned on connectivity.
fn connected_er(n: usize, p: f64, rng: &mut ChaCha8Rng) -> LatticeGraph {
    loop {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((a, b));
                }
            }
        }
        let g = LatticeGraph::new(n, edges).unwrap();
        if g.is_connected() {
            return g;
        }
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut failures = 0;
    let mut min_eig = f64::INFINITY;
    for _ in 0..100 {
        let g = connected_er(20, 0.2, &mut rng);
        let x = DMatrix::from_fn(20, 3, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        match verify_theorem1(&g, &x) {
            Ok(r) if r.pd => min_eig = min_eig.min(r.min_eig),
            _ => failures += 1,
        }
    }
    (
        failures == 0,
        format!("100 connected ER(20, 0.2) graphs, failures {failures}, smallest eigenvalue {min_eig:.3e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut graphs: Vec<LatticeGraph> = (0..50).map(|_| connected_er(20, 0.2, &mut rng)).collect();
    graphs.push(LatticeGraph::grid(5, 6));
    graphs.push(LatticeGraph::path(7));
    let (mut worst_row, mut bad_nullity) = (0.0f64, 0);
    for g in &graphs {
        let q = icar_precision::<f64>(g).unwrap();
        worst_row = worst_row.max((&q * DVector::from_element(g.n(), 1.0)).amax());
        let (values, _) = sorted_symmetric_eigen(&q);
        let tol = 1e-9 * values[0];
        bad_nullity += (values.iter().filter(|v| v.abs() < tol).count() != 1) as usize;
    }
    let (path, _) = sorted_symmetric_eigen(&icar_precision::<f64>(&LatticeGraph::path(3)).unwrap());
    // characteristic polynomial of [[1,-1,0],[-1,2,-1],[0,-1,1]] is −λ(λ−1)(λ−3)
    let path_err = [3.0, 1.0, 0.0]
        .iter()
        .zip(path.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    (
        worst_row < 1e-10 && bad_nullity == 0 && path_err < 1e-9,
        format!(
            "{} graphs, max |Q·1| {worst_row:.1e}, nullity ≠ 1 on {bad_nullity}, 3-path eigenvalue error {path_err:.1e}",
            graphs.len()
        ),
    )
}

/// Batch-means standard error of the mean of `series`.
fn batch_se(series: &[f64], batches: usize) -> f64 {
    let len = series.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| series[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

fn criterion_5() -> Outcome {
    let n = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let x = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            1.0
        } else {
            i as f64 / n as f64 * 4.0 - 2.0
        }
    });
    let sigma2: Vec<f64> = (0..n).map(|i| 0.5 + (i % 5) as f64 * 0.25).collect();
    let z: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.7 * x[(i, 1)] + sigma2[i].sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let data = ObservedDataset {
        ids: (0..n).map(|i| i.to_string()).collect(),
        z: z.clone(),
        x: x.clone(),
        covariate_names: vec!["intercept".into(), "x1".into()],
        sigma2: Some(sigma2.clone()),
        offset: None,
        spatial: SpatialRef::None,
    };
    let (sd, prior_mean) = (2.0, [0.5, 0.0]);
    let spec = ModelSpec {
        name: "conjugate".into(),
        family: EquationFamily::GaussianFh,
        data_model: DataModel::Parametric,
        process: ProcessPrior::None,
        beta_prior: BetaPrior::Gaussian {
            sd,
            mean: Some(prior_mean.to_vec()),
        },
        basis: QPolicy::AllPositive,
        variance_equation: true,
    };

    // β | z ~ N(P⁻¹(X'D⁻¹z + μ/s²), P⁻¹) with P = X'D⁻¹X + I/s²
    let dinv = DMatrix::from_diagonal(&DVector::from_iterator(n, sigma2.iter().map(|s| 1.0 / s)));
    let precision = x.transpose() * &dinv * &x + DMatrix::identity(2, 2) / (sd * sd);
    let cov = precision.try_inverse().unwrap();
    let rhs = x.transpose() * &dinv * DVector::from_vec(z)
        + DVector::from_row_slice(&prior_mean) / (sd * sd);
    let mean = &cov * rhs;

    let start = Instant::now();
    let ctx = ModelContext::full(&spec, &data, ElConfig::default()).unwrap();
    let cfg = SamplerConfig {
        n_iter: 50_000,
        n_burn: 1_000,
        pilot: PilotConfig {
            enabled: true,
            iters: 2_000,
            inflation: None,
        },
        seed: 5,
        ..SamplerConfig::default()
    };
    let chain = run_chain(&ctx, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut worst = 0.0f64;
    for k in 0..2 {
        let draws = chain.column(&format!("beta{k}")).unwrap();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        worst = worst.max((m - mean[k]).abs() / batch_se(&draws, 50));
        let sq: Vec<f64> = draws.iter().map(|b| (b - mean[k]).powi(2)).collect();
        let v = sq.iter().sum::<f64>() / sq.len() as f64;
        worst = worst.max((v - cov[(k, k)]).abs() / batch_se(&sq, 50));
    }
    (
        worst < 3.0 && secs < 120.0,
        format!(
            "β means and variances within {worst:.2} MC SE of the analytic posterior, {secs:.1} s"
        ),
    )
}

fn study(plan: &ExperimentPlan, champion: &str, rival: &str, min_win: Option<f64>) -> Outcome {
    let start = Instant::now();
    let board = run_study(plan).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let a = board.mean_mspe(champion).unwrap_or(f64::INFINITY);
    let b = board.mean_mspe(rival).unwrap_or(f64::NAN);
    let win = board
        .win_rates
        .get(&format!("{champion}_vs_{rival}"))
        .copied()
        .unwrap_or(0.0);
    let pass = a < b && min_win.is_none_or(|w| win >= w);
    (
        pass,
        format!(
            "{} replicates, {champion} {a:.4} vs {rival} {b:.4}, win rate {:.0}%, {secs:.0} s",
            plan.n_replicates,
            100.0 * win
        ),
    )
}

fn criterion_6() -> Outcome {
    study(&study1_plan(20), "shel", "independence", Some(0.7))
}

fn criterion_7() -> Outcome {
    study(&study2_plan(20), "shel", "poisson_gp", None)
}

fn criterion_8() -> Outcome {
    study(&outlier_plan(10), "shel", "poisson_icar", Some(0.8))
}

fn snapshot(dir: &Path, files: &[String]) -> Vec<Vec<u8>> {
    files
        .iter()
        .map(|f| fs::read(dir.join(f)).unwrap())
        .collect()
}

fn twice(cfg: &RunConfig, files: &[String], run: impl Fn(&RunConfig)) -> bool {
    let out = cfg.out_dir();
    let mut snaps = Vec::new();
    for _ in 0..2 {
        run(cfg);
        snaps.push(snapshot(&out, files));
        fs::remove_dir_all(&out).unwrap();
    }
    snaps[0] == snaps[1]
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = study1_plan(2);
    plan.sampler.n_iter = 600;
    plan.sampler.n_burn = 100;
    plan.sampler.pilot.iters = 200;
    plan.folds = Some(vec![0, 7, 19]);
    let data = study_datasets(&plan).unwrap().remove(0);
    let mut cfg = RunConfig::from_plan(&plan);
    cfg.dataset = Some(write_dataset(&data, dir.path()).unwrap());
    let names: Vec<String> = cfg.models.iter().map(|m| m.name.clone()).collect();

    cfg.out = Some(dir.path().join("fit"));
    let fit_files: Vec<String> = names
        .iter()
        .flat_map(|m| {
            ["chain.csv", "chain.json", "summary.csv", "theta.csv"].map(|f| format!("{m}/{f}"))
        })
        .chain(["config.json".to_string()])
        .collect();
    let fit = twice(&cfg, &fit_files, |c| {
        cmd_fit(c).unwrap();
    });

    cfg.out = Some(dir.path().join("loo"));
    let loo_files: Vec<String> = names
        .iter()
        .map(|m| format!("loo_{m}.csv"))
        .chain([
            "mspe_report.json".to_string(),
            "scoreboard.json".to_string(),
        ])
        .collect();
    let loo = twice(&cfg, &loo_files, |c| {
        cmd_loo(c).unwrap();
    });

    cfg.dataset = None;
    cfg.out = Some(dir.path().join("simulate"));
    let sim_files = vec!["scoreboard.json".to_string(), "deviations.csv".to_string()];
    let sim = twice(&cfg, &sim_files, |c| {
        cmd_simulate(c).unwrap();
    });
    let verdict = |ok: bool| if ok { "identical" } else { "DIFFER" };
    (
        fit && loo && sim,
        format!(
            "fit {}, loo {}, simulate {}",
            verdict(fit),
            verdict(loo),
            verdict(sim)
        ),
    )
}

fn criterion_10() -> Outcome {
    let plan = study1_plan(1);
    let data = study_datasets(&plan).unwrap().remove(0);
    let sampler = SamplerConfig {
        audit_feasibility: true,
        ..plan.sampler.clone()
    };
    let (mut checked, mut passed) = (0, 0);
    for spec in &plan.roster {
        if spec.data_model != DataModel::EmpiricalLikelihood {
            continue;
        }
        let structure = Arc::new(Structure::build(spec, &data).unwrap());
        let folds = std::iter::once(vec![]).chain((0..data.n()).map(|i| vec![i]));
        for (k, held_out) in folds.enumerate() {
            let ctx =
                ModelContext::new(spec, &data, structure.clone(), &held_out, plan.el).unwrap();
            let chain = run_chain(
                &ctx,
                &SamplerConfig {
                    seed: k as u64,
                    ..sampler.clone()
                },
            )
            .unwrap();
            let audit = chain.audit.unwrap();
            checked += audit.checked;
            passed += audit.passed;
        }
    }
    (
        checked > 0 && passed == checked,
        format!("{passed} of {checked} recorded states pass the simplex check (full fit and every LOO fold)"),
    )
}

const CRITERIA: [(&str, fn() -> Outcome); 10] = [
    ("EL multiplier matches bisection oracle", criterion_1),
    ("profile EL peaks at -n log n", criterion_2),
    ("reduced ICAR precision is positive definite", criterion_3),
    ("ICAR row sums and nullity", criterion_4),
    ("sampler calibration on a conjugate model", criterion_5),
    ("lattice Fay-Herriot study", criterion_6),
    ("point-referenced Poisson study", criterion_7),
    ("outlier robustness", criterion_8),
    ("determinism of fit, loo and simulate", criterion_9),
    ("feasibility of every recorded state", criterion_10),
];

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (k, (label, run)) in CRITERIA.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let (pass, detail) = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        failed += !pass as usize;
        println!(
            "criterion {id:>2} {} {label}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
