//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use fedbilevel::fedcore::{
    aggregate_h, aggregate_q, effective_participation_weight, local_round,
    reweighted_objective_weights, server_step_shrofbo, server_step_simfbo, ClientRoundResult,
    LocalNoise,
};
use fedbilevel::oracle::{hypergrad_exact, phi_value, surrogate_hypergrad, vstar};
use fedbilevel::problem::{ClientData, SmoothnessConstants, WeightProfile};
use fedbilevel::runner::{run_on, running_min, sweep, write_metrics_csv, InstanceSource, SweepParam};
use fedbilevel::sampling::{plan_round, TauProfile};
use fedbilevel::{
    Algorithm, BilevelInstance, CoefficientSchedule, FedState, InstanceSpec, NoiseModel, RunConfig,
    StepSizes, WeightVector,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn synthetic(n: usize, d_x: usize, d_y: usize, heterogeneity: f64, seed: u64) -> BilevelInstance {
    let spec = InstanceSpec {
        n,
        d_x,
        d_y,
        mu_g_target: 1.0,
        l1_target: 4.0,
        heterogeneity,
        weight_profile: WeightProfile::Random,
    };
    fedbilevel::problem::make_synthetic_instance(&spec, seed).unwrap()
}

fn config(algorithm: Algorithm, steps: StepSizes, rounds: usize) -> RunConfig {
    let mut cfg = RunConfig::new(algorithm, InstanceSource::Canonical1d, steps);
    cfg.rounds = rounds;
    cfg
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Central differences of `Φ` computed here rather than by the library.
fn central_diff(inst: &BilevelInstance, w: &WeightVector, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        (phi_value(inst, w, &xp).unwrap() - phi_value(inst, w, &xm).unwrap()) / (2.0 * h)
    })
}

fn oracle_consistency() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_fd, mut worst_sur) = (0.0f64, 0.0f64);
    for k in 0..50 {
        let n = rng.random_range(1..=8);
        let d_x = rng.random_range(1..=8);
        let d_y = rng.random_range(1..=8);
        let inst = synthetic(n, d_x, d_y, rng.random(), 1000 + k);
        let w = WeightVector::of(&inst);
        let x = DVector::from_fn(d_x, |_, _| rng.random_range(-2.0..2.0));
        let exact = hypergrad_exact(&inst, &w, &x).unwrap();
        worst_fd = worst_fd.max(rel(&central_diff(&inst, &w, &x, 1e-4), &exact));
        let v = vstar(&inst, &w, &x).unwrap();
        // For quadratics the surrogate does not depend on y.
        let mut surrogate = DVector::zeros(d_x);
        for (i, cl) in inst.clients().iter().enumerate() {
            let wi = w.as_slice()[i];
            surrogate += (&cl.e * (&x - &cl.x_ref) - &cl.b * &v) * wi;
        }
        worst_sur = worst_sur.max(rel(&surrogate, &exact));
        worst_sur = worst_sur.max(rel(&surrogate_hypergrad(&inst, &w, &x, &v).unwrap(), &exact));
    }
    let elapsed = started.elapsed();
    check(
        worst_fd < 1e-6 && worst_sur < 1e-10 && elapsed < Duration::from_secs(5),
        format!(
            "50 instances, worst finite-diff rel err {worst_fd:.2e} (< 1e-6), worst surrogate rel err {worst_sur:.2e} (< 1e-10), {:.2}s (< 5s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn projection_and_local_bound() -> Outcome {
    let inst = synthetic(6, 4, 4, 0.6, 7);
    let schedule = CoefficientSchedule::geometric(0.25, 1.0, 0.7);
    let consts = SmoothnessConstants::of(&inst, 1.0).unwrap();
    let eta_v = 1.0 / (schedule.alpha_max * consts.l1);
    let mut cfg = config(
        Algorithm::SimFbo,
        StepSizes {
            eta_y: 0.1,
            eta_v,
            eta_x: 0.05,
            gamma_y: 0.1,
            gamma_v: 0.1,
            gamma_x: 0.05,
        },
        500,
    );
    cfg.participants = 3;
    cfg.tau = TauProfile::Uniform { lo: 1, hi: 10 };
    cfg.schedule = schedule;
    cfg.noise = NoiseModel::uniform(0.1);
    cfg.lf_cap = Some(1.0);
    cfg.x0 = Some(vec![3.0; 4]);
    cfg.seed = 11;
    let rep = run_on(&inst, &cfg, |_| {}).unwrap();
    let r = rep.final_state.r;
    let bound = (1.0 + schedule.alpha_max / schedule.alpha_min) * r;
    let worst_local = rep.rows.iter().map(|row| row.max_local_v_norm).fold(0.0, f64::max);
    let row_violations = rep.rows.iter().filter(|row| row.max_local_v_norm > bound).count();
    check(
        rep.projection_violations == 0 && rep.local_v_violations == 0 && row_violations == 0,
        format!(
            "500 noisy rounds, eta_v*alpha_max*L1 = {:.2}, r = {r:.3}, max local |v| = {worst_local:.3} <= {bound:.3}, violations: server {} local {}",
            eta_v * schedule.alpha_max * consts.l1,
            rep.projection_violations,
            rep.local_v_violations + row_violations
        ),
    )
}

fn homogeneity_equivalence() -> Outcome {
    let inst = synthetic(5, 3, 3, 0.8, 3);
    let n = inst.n();
    let p = WeightVector::of(&inst);
    let schedule = CoefficientSchedule::unit();
    let steps = StepSizes::uniform(0.05, 0.1);
    let tau = TauProfile::Fixed { tau: 4 };
    let consts = SmoothnessConstants::of(&inst, 10.0).unwrap();
    let noise = LocalNoise {
        model: NoiseModel::uniform(0.1),
        clip: consts.clip_bounds(),
        seed: 5,
    };
    let start = FedState::zeros(&inst, consts.radius()).unwrap();
    let (mut sim, mut shro) = (start.clone(), start);
    let mut worst = 0.0f64;
    for t in 0..200 {
        let plan = plan_round(n, n, t, &tau, 5).unwrap();
        let step = |state: &FedState| -> BTreeMap<usize, ClientRoundResult> {
            plan.selected
                .iter()
                .map(|&i| {
                    let res = local_round(&inst, i, state, plan.taus[i], &schedule, &steps, Some(&noise));
                    (i, res.unwrap())
                })
                .collect()
        };
        let p_tilde: BTreeMap<usize, f64> = plan
            .selected
            .iter()
            .map(|&i| (i, effective_participation_weight(p.as_slice()[i], n, n).unwrap()))
            .collect();
        let norms: Vec<f64> = plan.taus.iter().map(|&k| schedule.norm1(k)).collect();
        let (rho, _) = reweighted_objective_weights(p.as_slice(), &norms).unwrap();
        sim = server_step_simfbo(&sim, &step(&sim), &p_tilde, &steps).unwrap();
        shro = server_step_shrofbo(&shro, &step(&shro), &p_tilde, rho, &steps).unwrap();
        for (a, b) in [(&sim.x, &shro.x), (&sim.y, &shro.y), (&sim.v, &shro.v)] {
            worst = worst.max((a - b).amax());
        }
    }
    check(
        worst <= 1e-12,
        format!("200 noisy rounds, tau = 4, a = 1, P = n = {n}: max coordinate gap {worst:.2e} (<= 1e-12)"),
    )
}

fn crafted_two_client() -> BilevelInstance {
    let client = |x_ref: f64| ClientData {
        a: DMatrix::from_element(1, 1, 2.0),
        b: DMatrix::from_element(1, 1, 1.0),
        c: DVector::from_element(1, 0.0),
        d: DMatrix::from_element(1, 1, 1.0),
        y_ref: DVector::from_element(1, 1.0),
        e: DMatrix::from_element(1, 1, 1.0),
        x_ref: DVector::from_element(1, x_ref),
    };
    BilevelInstance::new(vec![0.5, 0.5], vec![client(2.0), client(-2.0)]).unwrap()
}

fn mismatch_and_correction() -> Outcome {
    let started = Instant::now();
    let inst = crafted_two_client();
    // By hand: y*(x) = -x/2, v*(x) = -(x/2 + 1)/2 and the hypergradient is
    // 1.25 x + 0.5 - Σ w_i x_ref_i. With w = (1/6, 5/6) from ‖a‖₁ = τ = (1, 5)
    // the w-stationary point is x̃ = (-4/3 - 0.5)/1.25.
    let x_tilde = (-4.0 / 3.0 - 0.5) / 1.25;
    let floor = (1.25 * x_tilde + 0.5f64).powi(2);
    let p = WeightVector::of(&inst);
    let oracle_floor = hypergrad_exact(&inst, &p, &DVector::from_element(1, x_tilde))
        .unwrap()
        .norm_squared();

    let mut cfg = config(Algorithm::SimFbo, StepSizes::uniform(1e-6, 0.1), 2000);
    cfg.participants = 2;
    cfg.tau = TauProfile::PerClient { taus: vec![1, 5] };
    let sim = run_on(&inst, &cfg, |_| {}).unwrap();
    cfg.algorithm = Algorithm::ShroFbo;
    let shro = run_on(&inst, &cfg, |_| {}).unwrap();
    let elapsed = started.elapsed();

    let sim_last = sim.rows.last().unwrap();
    let tail_min = sim.rows[1500..].iter().map(|r| r.grad_phi_sq).fold(f64::INFINITY, f64::min);
    let shro_last = shro.rows.last().unwrap();
    check(
        (oracle_floor - floor).abs() < 1e-12
            && sim_last.grad_phitilde_sq < 1e-10
            && tail_min > 0.5 * floor
            && shro_last.grad_phi_sq < 1e-10
            && elapsed < Duration::from_secs(10),
        format!(
            "SimFBO |grad Phi~|^2 = {:.2e}, |grad Phi|^2 plateau {tail_min:.4} vs floor {floor:.4}; ShroFBO |grad Phi|^2 = {:.2e}; {:.2}s (< 10s)",
            sim_last.grad_phitilde_sq,
            shro_last.grad_phi_sq,
            elapsed.as_secs_f64()
        ),
    )
}

/// All `k`-subsets of `0..n`, written out here rather than taken from the library.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = subsets(n - 1, k);
    for mut s in subsets(n - 1, k - 1) {
        s.push(n - 1);
        out.push(s);
    }
    out
}

fn unbiased_participation() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in 2..=6 {
        let inst = synthetic(n, 2, 3, 0.9, 40 + n as u64);
        let p = WeightVector::of(&inst);
        let consts = SmoothnessConstants::of(&inst, 10.0).unwrap();
        let noise = LocalNoise {
            model: NoiseModel::uniform(0.2),
            clip: consts.clip_bounds(),
            seed: 9,
        };
        let mut state = FedState::zeros(&inst, consts.radius()).unwrap();
        state.x = DVector::from_element(2, 0.5);
        let schedule = CoefficientSchedule::geometric(0.3, 1.0, 0.8);
        let steps = StepSizes::uniform(0.05, 0.1);
        let results: BTreeMap<usize, ClientRoundResult> = (0..n)
            .map(|i| {
                let res = local_round(&inst, i, &state, 1 + i % 4, &schedule, &steps, Some(&noise));
                (i, res.unwrap())
            })
            .collect();
        let full_weights: BTreeMap<usize, f64> =
            (0..n).map(|i| (i, effective_participation_weight(p.as_slice()[i], n, n).unwrap())).collect();
        let full_q = aggregate_q(&results, &full_weights).unwrap();
        let full_h = aggregate_h(&results, &full_weights).unwrap();
        for k in 1..=n {
            let all = subsets(n, k);
            let mut mean_q = [DVector::zeros(3), DVector::zeros(3), DVector::zeros(2)];
            let mut mean_h = mean_q.clone();
            for s in &all {
                let sub: BTreeMap<usize, ClientRoundResult> =
                    s.iter().map(|&i| (i, results[&i].clone())).collect();
                let pt: BTreeMap<usize, f64> = s
                    .iter()
                    .map(|&i| (i, effective_participation_weight(p.as_slice()[i], k, n).unwrap()))
                    .collect();
                let q = aggregate_q(&sub, &pt).unwrap();
                let h = aggregate_h(&sub, &pt).unwrap();
                for j in 0..3 {
                    mean_q[j] += &q[j] / all.len() as f64;
                    mean_h[j] += &h[j] / all.len() as f64;
                }
            }
            for j in 0..3 {
                worst = worst.max((&mean_q[j] - &full_q[j]).amax());
                worst = worst.max((&mean_h[j] - &full_h[j]).amax());
            }
            cases += 1;
        }
    }
    check(
        worst <= 1e-12,
        format!("{cases} (n, P) pairs with n <= 6, q and h: max gap {worst:.2e} (<= 1e-12)"),
    )
}

fn linear_speedup() -> Outcome {
    let started = Instant::now();
    let inst = synthetic(8, 5, 5, 0.5, 21);
    let mut cfg = config(Algorithm::SimFbo, StepSizes::uniform(0.05, 0.1), 500);
    cfg.tau = TauProfile::Fixed { tau: 2 };
    cfg.noise = NoiseModel::uniform(0.1);
    cfg.x0 = Some(vec![1.0; 5]);
    let seeds: Vec<u64> = (0..20).collect();
    let cells = sweep(&inst, &cfg, SweepParam::Participants, &[1.0, 2.0, 4.0, 8.0], &seeds).unwrap();
    let elapsed = started.elapsed();
    let medians: Vec<f64> = cells
        .iter()
        .map(|c| c.grad_phitilde_sq.map_or(f64::NAN, |q| q.median))
        .collect();
    let failures: usize = cells.iter().map(|c| c.failures()).sum();
    let monotone = medians.windows(2).all(|m| m[1] <= m[0]);
    check(
        failures == 0 && monotone && medians[3] <= 0.5 * medians[0] && elapsed < Duration::from_secs(120),
        format!(
            "median min |grad Phi~|^2 for P = 1, 2, 4, 8: {:.3e}, {:.3e}, {:.3e}, {:.3e}; {:.1}s (< 120s)",
            medians[0],
            medians[1],
            medians[2],
            medians[3],
            elapsed.as_secs_f64()
        ),
    )
}

fn convergence_sanity() -> Outcome {
    let inst = BilevelInstance::canonical_1d();
    let rep = run_on(&inst, &config(Algorithm::SimFbo, StepSizes::uniform(0.1, 0.5), 600), |_| {}).unwrap();
    let x = rep.final_state.x[0];
    let g = rep.rows.last().unwrap().grad_phi_sq;

    let mut noisy = config(Algorithm::ShroFbo, StepSizes::uniform(0.1, 0.2), 400);
    noisy.noise = NoiseModel::uniform(0.3);
    noisy.tau = TauProfile::Uniform { lo: 1, hi: 4 };
    let mut monotone = true;
    for seed in 0..5 {
        noisy.seed = seed;
        let rep = run_on(&inst, &noisy, |_| {}).unwrap();
        let m = running_min(&rep.rows, |r| r.grad_phi_sq);
        monotone &= m.windows(2).all(|w| w[1] <= w[0]) && *m.last().unwrap() == rep.min_grad_phi_sq;
    }
    check(
        (x + 2.0).abs() < 1e-5 && g < 1e-10 && monotone,
        format!("noiseless x = {x:.8} (target -2), |grad Phi|^2 = {g:.2e}; noisy running minimum nonincreasing: {monotone}"),
    )
}

fn determinism() -> Outcome {
    let inst = synthetic(8, 4, 4, 0.7, 13);
    let mut all_equal = true;
    for algorithm in [Algorithm::SimFbo, Algorithm::ShroFbo] {
        let mut cfg = config(algorithm, StepSizes::uniform(0.03, 0.1), 150);
        cfg.participants = 5;
        cfg.tau = TauProfile::Uniform { lo: 1, hi: 10 };
        cfg.noise = NoiseModel::uniform(0.1);
        cfg.seed = 99;
        let mut outputs = Vec::new();
        for workers in [Some(1), Some(1), Some(2), Some(8), None] {
            cfg.workers = workers;
            let rep = run_on(&inst, &cfg, |_| {}).unwrap();
            let mut bytes = Vec::new();
            write_metrics_csv(&mut bytes, &rep.rows).unwrap();
            outputs.push(bytes);
        }
        all_equal &= outputs.windows(2).all(|o| o[0] == o[1]);
    }
    check(
        all_equal,
        "SimFBO and ShroFBO, repeated runs with 1, 2, 8 and default workers: metrics CSVs byte-identical".to_string(),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 oracle consistency", oracle_consistency),
        ("2 projection and local v bound", projection_and_local_bound),
        ("3 homogeneity equivalence", homogeneity_equivalence),
        ("4 mismatch vs correction", mismatch_and_correction),
        ("5 unbiased partial participation", unbiased_participation),
        ("6 linear-speedup trend", linear_speedup),
        ("7 convergence sanity", convergence_sanity),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        let outcome = std::panic::catch_unwind(criterion)
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
