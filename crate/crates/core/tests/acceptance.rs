//! Exit criteria. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test -p cloudsearch-core --test acceptance -- --nocapture`.

mod common;

use std::collections::HashSet;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cloudsearch_core::acquisition::{
    expected_improvement, lower_confidence_bound, probability_of_improvement, AcquisitionKind, AcquisitionSpec,
};
use cloudsearch_core::bench::{run_experiment, BackendSpec, ExperimentReport, ExperimentSpec};
use cloudsearch_core::catalog::{CloudConfiguration, ConfigurationSpace};
use cloudsearch_core::pareto::{front_area, pareto_front, FrontPoint};
use cloudsearch_core::search::{charge_curve, run_search, Budget, SearchPolicy, Selection};
use cloudsearch_core::surrogate::{
    gp_predict, log_marginal_likelihood_gradient, GpHyperparams, GpModel, Posterior, SurrogateKind,
};
use cloudsearch_core::synthcloud::{synth_space, AmdahlModel, SynthBackend};
use cloudsearch_core::trace::{Trace, TraceBackend};
use cloudsearch_core::ObservationMode;

fn verdict(name: &str, pass: bool, detail: &str) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

const REPETITIONS: usize = 50;
const NOISE_SIGMA: f64 = 0.05;

/// Five memory-bound workloads with sizeable serial fractions over the
/// 32 × 6 built-in grid: `(serial_fraction, comm_coeff_s, mem_req_gib, seed)`.
const SPACES: [(f64, f64, f64, u64); 5] = [
    (0.2, 100.0, 48.0, 0),
    (0.3, 1000.0, 48.0, 1),
    (0.15, 300.0, 32.0, 2),
    (0.25, 500.0, 64.0, 3),
    (0.2, 200.0, 48.0, 4),
];

fn space_model((serial_fraction, comm_coeff_s, mem_req_gib, seed): (f64, f64, f64, u64)) -> AmdahlModel {
    AmdahlModel {
        t1_s: 36_000.0,
        serial_fraction,
        comm_coeff_s,
        mem_req_gib,
        noise_sigma: NOISE_SIGMA,
        seed,
    }
}

fn experiment(params: (f64, f64, f64, u64), strategies: Vec<SearchPolicy>) -> ExperimentReport {
    let mut spec = ExperimentSpec::new(
        strategies,
        BackendSpec::Synth {
            model: space_model(params),
            catalog: None,
            sizes: None,
            pi_fraction: None,
        },
    );
    spec.repetitions = REPETITIONS;
    spec.budget = Budget {
        max_observations: 32,
        init_random: 8,
        mode: ObservationMode::Full,
    };
    spec.base_seed = 0;
    let report = run_experiment(&spec, Path::new(".")).unwrap();
    assert_eq!(report.space_size, 192);
    report
}

fn smbo(s: SurrogateKind, a: AcquisitionKind) -> SearchPolicy {
    SearchPolicy::smbo(s, AcquisitionSpec::new(a))
}

fn smbo_variants() -> Vec<SearchPolicy> {
    let mut v = Vec::new();
    for s in [SurrogateKind::Gp, SurrogateKind::Rf] {
        for a in [AcquisitionKind::Ei, AcquisitionKind::Mpi, AcquisitionKind::Lcb] {
            v.push(smbo(s, a));
        }
    }
    v
}

#[test]
fn smbo_beats_random() {
    let start = Instant::now();
    let mut factors = Vec::new();
    for params in SPACES {
        let r = experiment(
            params,
            vec![SearchPolicy::Random, smbo(SurrogateKind::Gp, AcquisitionKind::Ei)],
        );
        let random = r.final_geomean("random").unwrap();
        let gp = r.final_geomean("gp-ei").unwrap();
        factors.push((random, gp, random / gp));
    }
    let elapsed = start.elapsed();
    let never_worse = factors.iter().all(|(r, g, _)| g <= r);
    let strong = factors.iter().filter(|(_, _, f)| *f >= 1.2).count();
    let fast = elapsed < Duration::from_secs(300);
    let list: Vec<String> = factors.iter().map(|(_, _, f)| format!("{f:.3}")).collect();
    verdict(
        "smbo_beats_random",
        never_worse && strong >= 4 && fast,
        &format!(
            "GP-EI improvement over random per space [{}], {strong}/5 at >= 1.2x, {:.1}s",
            list.join(", "),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn smbo_near_optimal() {
    let mut worst = Vec::new();
    let mut misses = Vec::new();
    for (k, params) in SPACES.into_iter().enumerate() {
        let r = experiment(params, smbo_variants());
        for s in &r.strategies {
            let gap = s.gap_to_optimum.unwrap();
            if gap > 0.20 {
                misses.push(format!("space {k} {} {gap:.3}", s.name));
            }
        }
        let max = r
            .strategies
            .iter()
            .map(|s| s.gap_to_optimum.unwrap())
            .fold(0.0, f64::max);
        worst.push(format!("{max:.3}"));
    }
    verdict(
        "smbo_near_optimal",
        misses.is_empty(),
        &format!(
            "worst gap to the scan optimum per space [{}]; over 0.20: [{}]",
            worst.join(", "),
            misses.join("; ")
        ),
    );
}

#[test]
fn pi_search_cost_reduction() {
    let space = ConfigurationSpace::builtin();
    // Every configuration feasible, so each observation is billed at the PI rate.
    let model = AmdahlModel {
        mem_req_gib: 4.0,
        ..space_model(SPACES[0])
    };
    let rows = synth_space(&model, &space)
        .unwrap()
        .to_trace("cg", "D", 0.14, 4)
        .unwrap();
    let backend = TraceBackend::new(&Trace::from_rows(rows).unwrap(), space, None).unwrap();

    let mut policies = smbo_variants();
    policies.extend([SearchPolicy::Random, SearchPolicy::Grid]);
    let mut worst: f64 = 0.0;
    for (k, policy) in policies.iter().enumerate() {
        let budget = Budget {
            max_observations: 32,
            init_random: 8,
            mode: ObservationMode::Pi,
        };
        let run = run_search(policy, &backend, &budget, k as u64).unwrap();
        let full = charge_curve(&backend, &run.configs(), ObservationMode::Full).unwrap();
        let pi = charge_curve(&backend, &run.configs(), ObservationMode::Pi).unwrap();
        for (p, f) in pi.iter().zip(&full) {
            worst = worst.max(((p / f) - 0.14).abs() / 0.14);
        }
    }

    // Search-cost reduction of GP-EI with PI against random with full runs.
    let synth = SynthBackend::new(&space_model(SPACES[0]), &ConfigurationSpace::builtin())
        .unwrap()
        .with_pi_fraction(0.14)
        .unwrap();
    let full_budget = Budget {
        max_observations: 32,
        init_random: 8,
        mode: ObservationMode::Full,
    };
    let (mut random_charge, mut smbo_charge) = (0.0, 0.0);
    for seed in 0..10 {
        let r = run_search(&SearchPolicy::Random, &synth, &full_budget, seed).unwrap();
        random_charge += r.state.accumulated_charge_usd;
        let pi_budget = Budget {
            mode: ObservationMode::Pi,
            ..full_budget
        };
        let s = run_search(&smbo(SurrogateKind::Gp, AcquisitionKind::Ei), &synth, &pi_budget, seed).unwrap();
        smbo_charge += s.state.accumulated_charge_usd;
    }
    verdict(
        "pi_search_cost_reduction",
        worst <= 1e-9,
        &format!(
            "PI/full charge = 0.14 within {worst:.2e} relative ({:.2}x cheaper); GP-EI with PI spends {:.1}x less than random with full runs",
            1.0 / 0.14,
            random_charge / smbo_charge
        ),
    );
}

#[test]
fn gp_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_post: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let (pts, ys) = common::random_points(&mut rng, n);
        let h = common::random_hyperparams(&mut rng);
        let model = GpModel::with_hyperparams(&pts, &ys, h).unwrap();
        for _ in 0..5 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let got = gp_predict(&model, x);
            let (mean, sd) = common::gp_posterior(&pts, &ys, &h, model.jitter(), x);
            worst_post = worst_post.max((got.mean - mean).abs()).max((got.stddev - sd).abs());
        }
    }
    let mut worst_grad: f64 = 0.0;
    let step = 1e-5;
    for _ in 0..500 {
        let (pts, ys) = common::random_points(&mut rng, 5);
        let h = common::random_hyperparams(&mut rng);
        let (_, grad) = log_marginal_likelihood_gradient(&pts, &ys, &h).unwrap();
        let theta = h.to_log();
        for (k, g) in grad.iter().enumerate() {
            let (mut up, mut down) = (theta, theta);
            up[k] += step;
            down[k] -= step;
            let fd = (common::log_marginal_likelihood(&pts, &ys, &GpHyperparams::from_log(&up))
                - common::log_marginal_likelihood(&pts, &ys, &GpHyperparams::from_log(&down)))
                / (2.0 * step);
            worst_grad = worst_grad.max((g - fd).abs() / fd.abs().max(1e-4));
        }
    }
    verdict(
        "gp_correctness",
        worst_post <= 1e-8 && worst_grad <= 1e-4,
        &format!("posterior vs dense oracle {worst_post:.2e} (<= 1e-8); gradient vs central differences {worst_grad:.2e} relative (<= 1e-4)"),
    );
}

#[test]
fn acquisition_correctness() {
    let post = |mean, stddev| Posterior { mean, stddev };
    let hand = [
        (expected_improvement(&post(0.0, 1.0), 0.0, 0.0), 0.3989422804014327),
        (expected_improvement(&post(-1.0, 1.0), 0.0, 0.0), 1.0833154705876864),
        (expected_improvement(&post(0.3, 0.5), 0.0, 0.1), 0.060103616947382685),
        (expected_improvement(&post(1.0, 0.0), 1.0, 0.0), 0.0),
        (expected_improvement(&post(-1.0, 0.0), 0.0, 0.0), 1.0),
        (probability_of_improvement(&post(0.0, 1.0), 0.0, 0.0), 0.5),
        (
            probability_of_improvement(&post(-1.96, 1.0), 0.0, 0.0),
            0.9750021048517796,
        ),
        (
            probability_of_improvement(&post(2.0, 3.0), 1.0, 0.0),
            0.36944134018176367,
        ),
        (probability_of_improvement(&post(2.0, 0.0), 1.0, 0.0), 0.0),
        (lower_confidence_bound(&post(2.0, 1.0), 2.0), 0.0),
        (lower_confidence_bound(&post(3.0, 2.0), 0.0), 3.0),
        (lower_confidence_bound(&post(3.0, 0.0), 5.0), 3.0),
    ];
    let worst_hand = hand.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut violations = 0usize;
    for trial in 0..100_000 {
        let scale = 10f64.powi(rng.random_range(-6..4));
        let mean = rng.random_range(-1.0..1.0) * scale;
        let stddev = if trial % 10 == 0 {
            0.0
        } else {
            rng.random::<f64>() * scale
        };
        let best = rng.random_range(-1.0..1.0) * scale;
        let xi = if trial % 3 == 0 { 0.0 } else { rng.random::<f64>() * 0.1 };
        let p = post(mean, stddev);
        let ei = expected_improvement(&p, best, xi);
        let pi = probability_of_improvement(&p, best, xi);
        if !(ei >= 0.0 && ei.is_finite()) || !(0.0..=1.0).contains(&pi) {
            violations += 1;
        }
    }
    verdict(
        "acquisition_correctness",
        worst_hand <= 1e-6 && violations == 0,
        &format!("hand-derived values within {worst_hand:.1e}; {violations} violations of EI >= 0 or MPI in [0,1] over 100000 trials"),
    );
}

#[test]
fn pareto_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    let mut mismatched_sets = 0;
    for trial in 0..1000 {
        let coarse = trial % 4 == 0;
        let pts: Vec<FrontPoint> = (0..50)
            .map(|k| {
                let (r, c) = if coarse {
                    (
                        f64::from(rng.random_range(0..10u8)),
                        f64::from(rng.random_range(0..10u8)),
                    )
                } else {
                    (rng.random::<f64>(), rng.random::<f64>())
                };
                FrontPoint::new(CloudConfiguration::new(k / 6, 1 << (k % 6)), r, c)
            })
            .collect();
        let pairs: Vec<(f64, f64)> = pts.iter().map(|p| (p.runtime_s, p.cost_usd)).collect();
        let want: HashSet<CloudConfiguration> =
            common::dominance_front(&pairs, |i| (pts[i].config.vm_index, pts[i].config.n))
                .into_iter()
                .map(|i| pts[i].config)
                .collect();
        let got: HashSet<CloudConfiguration> = pareto_front(&pts).unwrap().points.iter().map(|p| p.config).collect();
        if got != want {
            mismatched_sets += 1;
        }
    }
    let mut worst_area: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=10);
        let front: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let mc = common::monte_carlo_area(&front, 1_000_000, &mut rng);
        worst_area = worst_area.max((front_area(&front) - mc).abs());
    }
    verdict(
        "pareto_correctness",
        mismatched_sets == 0 && worst_area <= 2e-3,
        &format!("{mismatched_sets}/1000 fronts differ from the dominance oracle; area vs Monte-Carlo worst {worst_area:.2e} (<= 2e-3)"),
    );
}

#[test]
fn search_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let mut policies = smbo_variants();
    policies.extend([SearchPolicy::Random, SearchPolicy::Grid]);
    let mut failures: Vec<String> = Vec::new();
    let mut with_infeasible = 0;
    let mut no_solution = 0;
    for run in 0..200 {
        let policy = policies[run % policies.len()];
        let model = AmdahlModel {
            serial_fraction: rng.random_range(0.0..0.4),
            comm_coeff_s: rng.random_range(0.0..1000.0),
            mem_req_gib: rng.random_range(4.0..200.0),
            seed: rng.random(),
            ..AmdahlModel::default()
        };
        let backend = SynthBackend::new(&model, &ConfigurationSpace::builtin()).unwrap();
        let max = rng.random_range(10..=40);
        let budget = Budget {
            max_observations: max,
            init_random: rng.random_range(1..=max.min(10)),
            mode: if run % 2 == 0 {
                ObservationMode::Full
            } else {
                ObservationMode::Pi
            },
        };
        let r = match run_search(&policy, &backend, &budget, rng.random()) {
            Ok(r) => r,
            Err(cloudsearch_core::Error::NoSolution { accumulated_charge_usd }) if accumulated_charge_usd > 0.0 => {
                no_solution += 1;
                continue;
            }
            Err(e) => {
                failures.push(format!("run {run}: {e}"));
                continue;
            }
        };
        let h = &r.state.history;
        let mut fail = |what: &str| failures.push(format!("run {run} ({policy}): {what}"));

        let distinct: HashSet<_> = h.iter().map(|o| o.config).collect();
        if distinct.len() != h.len() {
            fail("duplicate observation");
        }
        let best: Vec<f64> = r.best_cost_curve.iter().flatten().copied().collect();
        if best.windows(2).any(|w| w[1] > w[0]) {
            fail("best-cost curve increases");
        }
        if r.accumulated_charge_curve.windows(2).any(|w| w[1] <= w[0]) {
            fail("charge curve not strictly increasing");
        }
        let total: f64 = h.iter().map(|o| o.charged_cost_usd).sum();
        if (total - r.state.accumulated_charge_usd).abs() > 1e-9 * total {
            fail("accumulated charge differs from the sum of charges");
        }
        let infeasible = h.iter().filter(|o| !o.feasible).count();
        if infeasible > 0 {
            with_infeasible += 1;
            if h.iter().any(|o| !o.feasible && o.charged_cost_usd <= 0.0) {
                fail("infeasible observation not charged");
            }
        }
        if !r.best().feasible || r.state.best_so_far.as_ref().is_some_and(|b| !b.feasible) {
            fail("infeasible solution");
        }
        let feasible_min = h
            .iter()
            .filter(|o| o.feasible)
            .map(|o| o.objective_cost_usd)
            .fold(f64::INFINITY, f64::min);
        if r.best().objective_cost_usd != feasible_min {
            fail("solution is not the feasible minimum");
        }
        for (k, sel) in r.selections.iter().enumerate() {
            if let Selection::Model { training_points } = sel {
                let feasible_before = h[..k].iter().filter(|o| o.feasible).count();
                if *training_points != feasible_before {
                    fail("surrogate trained on infeasible data");
                }
            }
        }
    }
    verdict(
        "search_invariants",
        failures.is_empty(),
        &format!(
            "200 seeded runs ({with_infeasible} hit infeasible configurations, {no_solution} found none feasible), {} violations{}",
            failures.len(),
            failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()
        ),
    );
}
