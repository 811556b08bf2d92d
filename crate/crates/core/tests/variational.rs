mod common;

use std::sync::OnceLock;

use common::{rel, root_system};
use irrsio::experiment::RootSystem;
use irrsio::geometry::{dot, Ball, Point};
use irrsio::kernels::EllipticKernel;
use irrsio::variational::{
    extended_inequality_scan, field_magnitudes, functional_f, minimize_f, pointwise_defects, variation_derivative_check,
    variation_g, varied, MinimizeOptions, MinimizerReport, NodeSystem,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Solved {
    root: RootSystem,
    rep: MinimizerReport,
}

const LAMBDA: f64 = 10.0;

fn solved() -> &'static Solved {
    static CELL: OnceLock<Solved> = OnceLock::new();
    CELL.get_or_init(|| {
        let root = root_system();
        let rep = minimize_f(&root.sys, LAMBDA, &MinimizeOptions::default()).unwrap();
        Solved { root, rep }
    })
}

fn random_admissible(rng: &mut ChaCha8Rng, sys: &NodeSystem) -> Vec<f64> {
    let g: Vec<f64> = (0..sys.len()).map(|_| rng.gen::<f64>().powi(3)).collect();
    let s = sys.total_mass() / sys.integral(&g);
    g.into_iter().map(|v| v * s).collect()
}

/// Argmin of `F` over `g₀` on the segment `w₀g₀ + w₁g₁ = S` by a dense scan
/// and ternary refinement around the best sample.
fn two_node_argmin(sys: &NodeSystem, lambda: f64) -> f64 {
    let w = sys.weights();
    let s = sys.total_mass();
    let f = |g0: f64| {
        let g1 = ((s - w[0] * g0) / w[1]).max(0.0);
        functional_f(&[g0, g1], sys, lambda).unwrap()
    };
    let top = s / w[0];
    let steps = 200_000;
    let h = top / steps as f64;
    let best = (0..=steps).min_by(|a, b| f(*a as f64 * h).total_cmp(&f(*b as f64 * h))).unwrap();
    let (mut lo, mut hi) = ((best as f64 - 1.0).max(0.0) * h, ((best + 1) as f64 * h).min(top));
    for _ in 0..200 {
        let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn two_node_minimizer_matches_the_scan() {
    let sys = NodeSystem::from_parts(
        2,
        vec![[0.0; 3], [1.0, 0.0, 0.0]],
        vec![0.6, 0.4],
        vec![[0.0; 3], [1.0, 0.5, 0.0], [-0.8, 0.3, 0.0], [0.0; 3]],
    )
    .unwrap();
    for lambda in [1e-3, 0.02, 0.1, 1.0] {
        let want = two_node_argmin(&sys, lambda);
        let rep = minimize_f(&sys, lambda, &MinimizeOptions::default()).unwrap();
        assert!((rep.b[0] - want).abs() < 1e-4, "λ {lambda}: {} vs {want}", rep.b[0]);
    }
}

fn three_node_system(seed: u64) -> NodeSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.3, 0.8, 0.0]];
    let w = vec![0.5, 0.3, 0.2];
    let mut kmat = vec![[0.0; 3]; 9];
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                kmat[3 * i + j] = [2.0 * rng.gen::<f64>() - 1.0, 2.0 * rng.gen::<f64>() - 1.0, 0.0];
            }
        }
    }
    NodeSystem::from_parts(2, pos, w, kmat).unwrap()
}

#[test]
fn three_node_minimum_matches_a_grid_search() {
    for seed in 0..4 {
        let sys = three_node_system(seed);
        let w = sys.weights().to_vec();
        for lambda in [0.01, 0.3] {
            // g2 = (1 − w0 g0 − w1 g1) / w2 on a fine grid of (g0, g1)
            let steps = 600;
            let mut brute = f64::INFINITY;
            for i in 0..=steps {
                for j in 0..=steps {
                    let g0 = i as f64 / steps as f64 / w[0];
                    let g1 = j as f64 / steps as f64 / w[1];
                    let rest = 1.0 - w[0] * g0 - w[1] * g1;
                    if rest < 0.0 {
                        continue;
                    }
                    brute = brute.min(functional_f(&[g0, g1, rest / w[2]], &sys, lambda).unwrap());
                }
            }
            let rep = minimize_f(&sys, lambda, &MinimizeOptions::default()).unwrap();
            assert!(rep.constraint_residual < 1e-12);
            assert!(rep.f_final <= brute * (1.0 + 1e-9), "seed {seed}, λ {lambda}: {} > {brute}", rep.f_final);
            assert!(rep.f_final >= brute * (1.0 - 2e-2), "seed {seed}, λ {lambda}: {} << {brute}", rep.f_final);
        }
    }
}

#[test]
fn minimizer_beats_random_admissible_densities() {
    let s = solved();
    let sys = &s.root.sys;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    assert!(s.rep.f_final < s.rep.f_init);
    for _ in 0..100 {
        let g = random_admissible(&mut rng, sys);
        assert!((sys.integral(&g) - sys.total_mass()).abs() < 1e-12);
        assert!(functional_f(&g, sys, LAMBDA).unwrap() >= s.rep.f_final);
    }
}

#[test]
fn minimizer_beats_nearby_densities() {
    let s = solved();
    let sys = &s.root.sys;
    let b = &s.rep.b;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let g = random_admissible(&mut rng, sys);
        for eta in [1e-3, 1e-2, 1e-1] {
            let mix: Vec<f64> = b.iter().zip(&g).map(|(b, g)| (1.0 - eta) * b + eta * g).collect();
            let f = functional_f(&mix, sys, LAMBDA).unwrap();
            assert!(f >= s.rep.f_final * (1.0 - 1e-6), "η = {eta}: {f} < {}", s.rep.f_final);
        }
    }
}

#[test]
fn reported_quantities_are_consistent() {
    let s = solved();
    let rep = &s.rep;
    let sys = &s.root.sys;
    assert_eq!(sys.len(), 256);
    assert!(rel(functional_f(&rep.b, sys, LAMBDA).unwrap(), rep.f_final) < 1e-14);
    assert!(rep.constraint_residual < 1e-10);
    assert_eq!(rep.sup_b, rep.b.iter().copied().fold(0.0, f64::max));
    assert!(rep.trace.windows(2).all(|w| w[1] <= w[0]));
    assert!(!rep.hypothesis_holds);
    let defects = pointwise_defects(&rep.b, sys, LAMBDA).unwrap();
    let active = rep.b.iter().zip(&defects).filter(|(b, _)| **b > 1e-6).map(|(_, d)| *d);
    assert_eq!(active.fold(f64::NEG_INFINITY, f64::max), rep.pointwise_defect);
}

#[test]
fn huge_lambda_keeps_the_flat_density() {
    let s = solved();
    let rep = minimize_f(&s.root.sys, 3e4, &MinimizeOptions::default()).unwrap();
    assert!(rep.hypothesis_holds);
    assert!(rep.b.iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert_eq!(rep.f_final, rep.f_init);
}

fn probe_balls(sys: &NodeSystem, count: usize, seed: u64) -> Vec<Ball> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let c = sys.positions()[rng.gen_range(0..sys.len())];
            let r = 10f64.powf(-3.0 + 2.5 * rng.gen::<f64>());
            Ball::new(c, r).unwrap()
        })
        .collect()
}

/// Lagrange interpolation through `(t_i, y_i)` evaluated at `t`.
fn lagrange(ts: &[f64], ys: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for (i, (ti, yi)) in ts.iter().zip(ys).enumerate() {
        let mut l = 1.0;
        for (j, tj) in ts.iter().enumerate() {
            if j != i {
                l *= (t - tj) / (ti - tj);
            }
        }
        acc += yi * l;
    }
    acc
}

#[test]
fn variation_is_a_cubic_in_t() {
    let s = solved();
    let sys = &s.root.sys;
    for ball in probe_balls(sys, 5, 1) {
        let ts = [0.0, 0.2, 0.5, 0.9];
        let ys: Vec<f64> = ts.iter().map(|t| variation_g(&s.rep.b, sys, LAMBDA, &ball, *t)).collect();
        for t in [0.1, 0.35, 0.7] {
            let got = variation_g(&s.rep.b, sys, LAMBDA, &ball, t);
            assert!(rel(got, lagrange(&ts, &ys, t)) < 1e-10);
        }
        let bt = varied(&s.rep.b, sys, &ball, 0.4);
        assert!((sys.integral(&bt) - sys.integral(&s.rep.b)).abs() < 1e-12 * sys.total_mass());
    }
}

#[test]
fn one_sided_quotients_at_the_minimizer_are_non_negative() {
    let s = solved();
    let sys = &s.root.sys;
    let mut checked = 0;
    for ball in probe_balls(sys, 20, 2) {
        let Ok(rep) = variation_derivative_check(&s.rep.b, sys, LAMBDA, &ball) else {
            continue;
        };
        checked += 1;
        let scale = rep.g0.abs();
        assert!((rep.quotient - rep.derivative).abs() < 1e-5 * scale, "{rep:?}");
        assert!(rep.derivative >= -1e-6 * scale, "{rep:?}");
    }
    assert!(checked >= 15);
}

#[test]
fn extended_scan_agrees_with_the_node_values() {
    // at the nodes |Tν|² + 4T*([Tν]ν) = 2p − |Tν|² with p the pointwise term
    let s = solved();
    let sys = &s.root.sys;
    let kern: &EllipticKernel = &s.root.inst.kern;
    let probes: Vec<Point> = sys.positions().iter().step_by(16).copied().collect();
    let scan = extended_inequality_scan(&s.rep.b, sys, kern, LAMBDA, &probes, 1.0).unwrap();
    let p = pointwise_defects(&s.rep.b, sys, LAMBDA).unwrap();
    let mags = field_magnitudes(&s.rep.b, sys);
    for (k, i) in (0..sys.len()).step_by(16).enumerate() {
        let pi = p[i] + 6.0 * LAMBDA;
        let want = 2.0 * pi - mags[i] * mags[i];
        assert!((scan.values[k] - want).abs() < 1e-9 * (1.0 + want.abs()), "node {i}");
    }
    assert_eq!(scan.reference, LAMBDA);
    assert_eq!(scan.max_value, scan.values[scan.argmax]);
    assert!(rel(scan.ratio, scan.max_value / LAMBDA) < 1e-15);
    let v = sys.apply(&s.rep.b);
    assert!(rel(dot(&v[0], &v[0]).sqrt(), mags[0]) < 1e-15);
}
