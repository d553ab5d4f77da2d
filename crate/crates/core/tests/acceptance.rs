//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use shadow_gm::activator::{picard_solve, picard_window, PicardOptions};
use shadow_gm::brownian::{generate_path, refine_path, PathSeed};
use shadow_gm::harness::checks::{history_distance, imex_reference, max_ratio_after_first};
use shadow_gm::harness::convergence::Reference;
use shadow_gm::harness::output::write_report;
use shadow_gm::harness::{
    convergence_study, run_ensemble, run_trajectory, EnsembleReport, InitialProfile, RunSpec, Scheme,
    TrajectoryStatus,
};
use shadow_gm::{ActivatorField, EllipticOperator, ModelParams, SpatialGrid};
use shadow_gm::operator::build_operator;

fn report(n: u32, ok: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
}

fn global_params() -> ModelParams {
    ModelParams {
        p: 2.0,
        q: 3.0,
        r: 6.0,
        s: 1.0,
        epsilon: 0.1,
        tau: 1.0,
        a: 0.5,
        b: 1.0,
        eta: 1.0,
    }
}

fn global_spec(horizon: f64, steps: usize, n_paths: usize) -> RunSpec {
    let grid = SpatialGrid::line(1.0, 64).unwrap();
    let a0 = InitialProfile::Cosine { sup: 2.0 }.build(&grid).unwrap();
    let mut spec = RunSpec::new(global_params(), grid, a0, 1.0, horizon, steps).unwrap();
    spec.scheme = Scheme::Transform;
    spec.n_paths = n_paths;
    spec.barrier = 3.0;
    spec.master_seed = 20_240_601;
    spec
}

/// The 10^3-path, T = 20 ensemble shared by criteria 1 to 3, run single-threaded.
fn global_ensemble() -> &'static (EnsembleReport, Duration) {
    static CELL: OnceLock<(EnsembleReport, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut spec = global_spec(20.0, 20_000, 1000);
        spec.workers = 1;
        assert!(spec.global_regime());
        let start = Instant::now();
        let rep = run_ensemble(&spec).unwrap();
        (rep, start.elapsed())
    })
}

#[test]
fn criterion_1_pathwise_lower_bound() {
    let (rep, elapsed) = global_ensemble();
    let stopped = rep.positivity_failure + rep.blow_up;
    let ok = rep.n_paths == 1000 && rep.lower_bound_violations == 0 && stopped == 0 && elapsed.as_secs() < 300;
    report(
        1,
        ok,
        format!(
            "violations={} min_margin={:e} runtime={:.1}s",
            rep.lower_bound_violations,
            rep.min_lower_bound_margin,
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_2_no_blow_up_in_global_regime() {
    let (rep, _) = global_ensemble();
    let c = rep.h_alpha_beta.expect("completed paths");
    let bounded = |f: fn(&shadow_gm::harness::ensemble::PathSummary) -> f64| rep.paths.iter().all(|p| f(p).is_finite());
    let sources_finite = bounded(|p| p.max_h_alpha_beta) && bounded(|p| p.max_g1_norm) && bounded(|p| p.max_g2_norm);
    // gamma^{-delta} with delta = 16 leaves f64 range on paths where gamma decays like the GBM
    let h_delta_overflow = rep.paths.iter().filter(|p| !p.h_delta_integral.is_finite()).count();
    let ok = rep.global_regime && rep.blow_up == 0 && rep.completed == 1000 && sources_finite && c.max.is_finite();
    report(
        2,
        ok,
        format!(
            "blow_up={} completed={} max_h_2_0={} g1_max={:?} g2_max={:?} h_delta_overflow_paths={h_delta_overflow}",
            rep.blow_up,
            rep.completed,
            c.max,
            rep.g1_norm.map(|s| s.max),
            rep.g2_norm.map(|s| s.max)
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_3_integrated_h_delta_bound() {
    let (rep, _) = global_ensemble();
    let ok = rep.restricted_paths > 0 && rep.lemma32_violations == 0 && rep.lemma32_unresolved == 0;
    report(
        3,
        ok,
        format!(
            "restricted={} violations={} unresolved={} min_margin={:?}",
            rep.restricted_paths, rep.lemma32_violations, rep.lemma32_unresolved, rep.min_lemma32_margin
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_4_picard_contraction() {
    let tol = 1e-7;
    let refine = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = SpatialGrid::line(1.0, 16).unwrap();
    let options = PicardOptions {
        tol,
        max_iterations: 50,
        history_nodes: 256,
    };
    let (mut worst_ratio, mut worst_distance) = (0.0f64, 0.0f64);
    for i in 0..50 {
        let p = rng.random_range(1.5..3.0);
        let r = rng.random_range(1.5..4.0);
        let s = rng.random_range(0.0..1.5);
        let kappa: f64 = (p - 1.0) / r;
        let q = (s + 1.0) * kappa * rng.random_range(1.2..3.0);
        let params = ModelParams {
            p,
            q,
            r,
            s,
            epsilon: rng.random_range(0.1..0.5),
            tau: 1.0,
            a: rng.random_range(0.0..1.0),
            b: rng.random_range(0.5..2.0),
            eta: 1.0,
        };
        params.validate().into_result().unwrap();
        let (c0, c1, c2) = (
            rng.random_range(0.5..1.5),
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.3),
        );
        let pi = std::f64::consts::PI;
        let a0 = ActivatorField::from_fn(&grid, |x| c0 + c1 * (pi * x[0]).cos() + c2 * (2.0 * pi * x[0]).cos()).unwrap();
        let barrier = rng.random_range(0.5..2.0);
        let gamma0 = rng.random_range(0.5..2.0);
        let window = picard_window(&a0, gamma0, barrier, &params).unwrap();
        let op = build_operator(&grid, &params).unwrap();
        let path = generate_path(window.t_hat, options.history_nodes * refine, PathSeed::new(44, i)).unwrap();
        let sol = picard_solve(&a0, gamma0, &path, &window, &op, &params, &options).unwrap();
        let (a_ref, g_ref) = imex_reference(&a0, gamma0, &path, &sol.times, refine, &op, &params).unwrap();
        worst_ratio = worst_ratio.max(max_ratio_after_first(&sol));
        worst_distance =
            worst_distance.max(history_distance(&sol.a_history, &sol.gamma_history, &a_ref, &g_ref));
    }
    let ok = worst_ratio <= 0.6 && worst_distance < 10.0 * tol;
    report(
        4,
        ok,
        format!("instances=50 tol={tol:e} max_ratio={worst_ratio:.3e} max_imex_distance={worst_distance:.3e}"),
    );
    assert!(ok);
}

fn gbm_spec(scheme: Scheme) -> RunSpec {
    let grid = SpatialGrid::line(1.0, 8).unwrap();
    let a0 = ActivatorField::zeros(&grid);
    let mut spec = RunSpec::new(global_params(), grid, a0, 1.0, 1.0, 16).unwrap();
    spec.scheme = scheme;
    spec.n_paths = 1000;
    spec.master_seed = 5;
    spec
}

#[test]
fn criterion_5_integrator_order() {
    let em = convergence_study(&gbm_spec(Scheme::Em), 5).unwrap();
    let tr = convergence_study(&gbm_spec(Scheme::Transform), 5).unwrap();
    let slope = em.slope.unwrap_or(f64::NAN);
    let worst = tr.errors.iter().copied().fold(0.0, f64::max);
    let ok = em.reference == Reference::Exact && (0.4..=0.6).contains(&slope) && worst <= 1e-10;
    report(
        5,
        ok,
        format!("em_slope={slope:.4} em_errors={:?} transform_max_error={worst:e}", em.errors),
    );
    assert!(ok);
}

/// `P(sup_{[0,1]} |B| >= a)` from the alternating theta series.
fn two_sided_exceedance(a: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let below: f64 = (0..50)
        .map(|k| {
            let m = (2 * k + 1) as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign / m * (-(m * m) * pi * pi / (8.0 * a * a)).exp()
        })
        .sum::<f64>()
        * 4.0
        / pi;
    1.0 - below
}

#[test]
fn criterion_6_stopping_time_statistics() {
    let n = 100_000u64;
    let mut one_sided = 0usize;
    let mut bad = [0usize; 3];
    for i in 0..n {
        let coarse = generate_path::<f64>(1.0, 1024, PathSeed::new(6, i)).unwrap();
        let path = refine_path(&coarse, 4).unwrap();
        let sup = path.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        one_sided += usize::from(sup >= 2.0);
        let b_star = *path.running_sup().last().unwrap();
        for (k, slot) in bad.iter_mut().enumerate() {
            *slot += usize::from(b_star >= (k + 1) as f64);
        }
    }
    let phi = Normal::new(0.0, 1.0).unwrap();
    let reflection = 2.0 * (1.0 - phi.cdf(2.0));
    let p_one = one_sided as f64 / n as f64;
    let p_bad: Vec<f64> = bad.iter().map(|&c| c as f64 / n as f64).collect();
    let exact_two = two_sided_exceedance(2.0);
    let ok = (p_one - reflection).abs() <= 0.005
        && (p_bad[1] - exact_two).abs() <= 0.005
        && p_bad[0] > p_bad[1]
        && p_bad[1] > p_bad[2];
    report(
        6,
        ok,
        format!(
            "P(sup B>=2)={p_one:.4} vs {reflection:.4}; P(sup|B|>=2)={:.4} vs {exact_two:.4}; P(E^c) K=1,2,3: {:.4} {:.4} {:.4}",
            p_bad[1], p_bad[0], p_bad[1], p_bad[2]
        ),
    );
    assert!(ok);
}

/// `exp(m)` by scaling and squaring of a truncated Taylor series.
fn expm(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let norm = m.iter().map(|row| row.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = 0.5f64.powi(squarings as i32);
    let a: Vec<Vec<f64>> = m.iter().map(|row| row.iter().map(|x| x * scale).collect()).collect();
    let identity: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut sum = identity.clone();
    let mut term = identity;
    for k in 1..=20 {
        term = matmul(&term, &a);
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x /= k as f64;
            }
        }
        for (s, t) in sum.iter_mut().zip(&term) {
            for (x, y) in s.iter_mut().zip(t) {
                *x += y;
            }
        }
    }
    for _ in 0..squarings {
        sum = matmul(&sum, &sum);
    }
    sum
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn criterion_7_semigroup() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = SpatialGrid::line(1.0, 16).unwrap();
    let mut worst_expm = 0.0f64;
    for _ in 0..20 {
        let op = EllipticOperator::new(&grid, rng.random_range(0.05..1.0), rng.random_range(0.0..2.0)).unwrap();
        let t = rng.random_range(0.01..2.0);
        let f: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m: Vec<Vec<f64>> = op.dense().iter().map(|row| row.iter().map(|x| -t * x).collect()).collect();
        let e = expm(&m);
        let oracle: Vec<f64> = e.iter().map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum()).collect();
        let got = op.apply_semigroup_raw(t, &f).unwrap();
        let diff: Vec<f64> = got.iter().zip(&oracle).map(|(a, b)| a - b).collect();
        worst_expm = worst_expm.max(sup(&diff) / sup(&oracle));
    }

    let mut contraction_failures = 0;
    for _ in 0..100 {
        let op = EllipticOperator::new(&grid, rng.random_range(0.05..1.0), rng.random_range(0.0..2.0)).unwrap();
        let t = rng.random_range(0.0..3.0);
        let f: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..5.0)).collect();
        let out = op.apply_semigroup_raw(t, &f).unwrap();
        if sup(&out) > sup(&f) + 1e-12 || out.iter().any(|&x| x < 0.0) {
            contraction_failures += 1;
        }
    }

    let mut worst_composition = 0.0f64;
    for _ in 0..20 {
        let op = EllipticOperator::new(&grid, rng.random_range(0.05..1.0), rng.random_range(0.0..2.0)).unwrap();
        let (t, s) = (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0));
        let f: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..2.0)).collect();
        let joint = op.apply_semigroup_raw(t + s, &f).unwrap();
        let split = op.apply_semigroup_raw(t, &op.apply_semigroup_raw(s, &f).unwrap()).unwrap();
        let diff: Vec<f64> = joint.iter().zip(&split).map(|(a, b)| a - b).collect();
        worst_composition = worst_composition.max(sup(&diff));
    }

    let ok = worst_expm <= 1e-6 && contraction_failures == 0 && worst_composition <= 1e-8;
    report(
        7,
        ok,
        format!(
            "expm_rel_error={worst_expm:.3e} contraction_failures={contraction_failures} composition_error={worst_composition:.3e}"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_8_deterministic_shadow_limit() {
    let params = ModelParams {
        p: 2.0,
        q: 2.0,
        r: 2.0,
        s: 1.0,
        epsilon: 1.0,
        tau: 0.5,
        a: 0.0,
        b: 0.1,
        eta: 0.0,
    };
    let grid = SpatialGrid::line(1.0, 16).unwrap();
    let a0 = ActivatorField::constant(&grid, 0.9).unwrap();
    let mut spec = RunSpec::new(params, grid, a0, 0.9, 50.0, 50_000).unwrap();
    spec.scheme = Scheme::Ode;
    let rec = run_trajectory(&spec, 0).unwrap();
    let last = rec.series.samples.last().unwrap();
    let gap = (last.gamma - last.mean_r.sqrt()).abs();
    // spatially constant equilibrium: A = gamma and A = A^2 + b
    let a_star = 0.5 * (1.0 + (1.0 - 4.0 * params.b).sqrt());
    let off = (last.gamma - a_star).abs();
    let ok = rec.status == TrajectoryStatus::Completed && gap < 1e-6 && off < 10.0 * spec.dt;
    report(
        8,
        ok,
        format!(
            "gamma(50)={} |gamma - mean(A^r)^(1/2)|={gap:.3e} |gamma - A*|={off:.3e}",
            last.gamma
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_9_reproducibility_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for workers in [1, 3] {
        let mut spec = global_spec(1.0, 1000, 24);
        spec.workers = workers;
        let rep = run_ensemble(&spec).unwrap();
        let sub = dir.path().join(format!("w{workers}"));
        let (txt, json) = write_report(&sub, "ensemble", &rep.to_key_value(), &rep.to_json()).unwrap();
        outputs.push((std::fs::read(txt).unwrap(), std::fs::read(json).unwrap()));
    }
    let ok = outputs[0] == outputs[1];
    report(9, ok, format!("report_bytes={}", outputs[0].0.len() + outputs[0].1.len()));
    assert!(ok);
}
