mod common;

use common::{cantor, rel};
use irrsio::geometry::{dist, dot, norm, Point};
use irrsio::kernels::{ConstantMatrix, EllipticKernel, MatrixField, SinField};
use irrsio::measure::{make_graph_measure, AtomicMeasure};
use irrsio::operator::{
    apply_t, apply_t_adjoint, apply_t_density, default_eps, harmonicity_check, operator_norm_estimate, VectorMeasure,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_measure(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> AtomicMeasure {
    let pos = (0..n)
        .map(|_| {
            let mut p = [0.0; 3];
            for c in p.iter_mut().take(dim) {
                *c = rng.gen::<f64>();
            }
            p
        })
        .collect();
    let w = (0..n).map(|_| 0.1 + rng.gen::<f64>()).collect();
    AtomicMeasure::new(dim, pos, w).unwrap()
}

fn sin_kernel(dim: usize) -> EllipticKernel {
    EllipticKernel::new(MatrixField::Sin(SinField::new(dim, 0.5, 0.3).unwrap()))
}

/// Dense `[K̃(x_i, x_j) √(w_i w_j)]` and its largest singular value.
fn svd_norm(mu: &AtomicMeasure, kern: &EllipticKernel, eps: f64) -> f64 {
    let (n, d) = (mu.len(), mu.dim());
    let mut m = DMatrix::<f64>::zeros(n * d, n);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (mu.position(i), mu.position(j));
            if dist(x, y) <= eps {
                continue;
            }
            let k = kern.eval(x, y).unwrap();
            let s = (mu.weight(i) * mu.weight(j)).sqrt();
            for c in 0..d {
                m[(i * d + c, j)] = k[c] * s;
            }
        }
    }
    m.singular_values().max()
}

#[test]
fn operator_is_linear_in_the_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mu = random_measure(&mut rng, 60, 2);
    let kern = sin_kernel(2);
    let f: Vec<f64> = (0..60).map(|_| rng.gen::<f64>() - 0.5).collect();
    let g: Vec<f64> = (0..60).map(|_| rng.gen::<f64>() - 0.5).collect();
    let h: Vec<f64> = f.iter().zip(&g).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
    let eps = default_eps(&mu);
    let targets = mu.positions();
    let tf = apply_t_density(&mu, &kern, &f, targets, eps).unwrap().values;
    let tg = apply_t_density(&mu, &kern, &g, targets, eps).unwrap().values;
    let th = apply_t_density(&mu, &kern, &h, targets, eps).unwrap().values;
    for i in 0..60 {
        for c in 0..2 {
            let want = 2.0 * tf[i][c] - 3.0 * tg[i][c];
            assert!((th[i][c] - want).abs() < 1e-10 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn truncation_drops_exactly_the_near_sources() {
    let mu = AtomicMeasure::new(2, vec![[0.0; 3], [0.1, 0.0, 0.0], [1.0, 0.0, 0.0]], vec![1.0, 1.0, 1.0]).unwrap();
    let kern = EllipticKernel::identity(2);
    let x = [0.0, 0.5, 0.0];
    let full = apply_t(&mu, &kern, &[x], 0.0).unwrap().values[0];
    let cut = apply_t(&mu, &kern, &[x], 0.6).unwrap().values[0];
    let far = kern.eval(&x, &[1.0, 0.0, 0.0]).unwrap();
    assert!(cut.iter().zip(&far).all(|(a, b)| (a - b).abs() < 1e-15));
    assert!(full != cut);
    assert!(apply_t(&mu, &kern, &[[0.0; 3]], 0.0).is_err());
}

#[test]
fn adjoint_identity_over_random_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..100 {
        let dim = 2 + trial % 2;
        let kern = if trial % 3 == 0 {
            EllipticKernel::identity(dim)
        } else {
            sin_kernel(dim)
        };
        let mu = random_measure(&mut rng, 20, dim);
        let src = random_measure(&mut rng, 15, dim);
        let vectors: Vec<Point> = (0..15)
            .map(|_| {
                let mut v = [0.0; 3];
                for c in v.iter_mut().take(dim) {
                    *c = rng.gen::<f64>() - 0.5;
                }
                v
            })
            .collect();
        let omega = VectorMeasure::new(dim, src.positions().to_vec(), vectors.clone()).unwrap();
        let f: Vec<f64> = (0..20).map(|_| rng.gen::<f64>() - 0.5).collect();
        let eps = 0.05 * rng.gen::<f64>();
        let tf = apply_t_density(&mu, &kern, &f, src.positions(), eps).unwrap().values;
        let lhs: f64 = tf.iter().zip(&vectors).map(|(t, v)| dot(t, v)).sum();
        let ts = apply_t_adjoint(&omega, &kern, mu.positions(), eps).unwrap().values;
        let rhs: f64 = (0..20).map(|k| f[k] * mu.weight(k) * ts[k]).sum();
        assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "trial {trial}: {lhs} vs {rhs}");
    }
}

#[test]
fn operator_norm_matches_singular_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (n, dim) in [(10, 2), (50, 2), (50, 3), (200, 2)] {
        let mu = random_measure(&mut rng, n, dim);
        let kern = sin_kernel(dim);
        let eps = default_eps(&mu);
        let est = operator_norm_estimate(&mu, &kern, eps).unwrap();
        let want = svd_norm(&mu, &kern, eps);
        assert!(rel(est, want) < 1e-4, "N = {n}: {est} vs {want}");
    }
}

#[test]
fn operator_norm_is_scale_invariant_for_n_dimensional_weights() {
    let mu = cantor(0.25, 3);
    let kern = EllipticKernel::identity(2);
    let eps = default_eps(&mu);
    let base = operator_norm_estimate(&mu, &kern, eps).unwrap();
    let t = 7.0;
    let pos = mu.positions().iter().map(|p| [p[0] * t, p[1] * t, 0.0]).collect();
    let w = mu.weights().iter().map(|w| w * t).collect();
    let big = AtomicMeasure::new(2, pos, w).unwrap();
    let scaled = operator_norm_estimate(&big, &kern, eps * t).unwrap();
    assert!(rel(scaled, base) < 1e-5, "{base} vs {scaled}");
}

#[test]
fn adjoint_is_harmonic_off_the_support() {
    let mu = make_graph_measure(40, 0.3, 2).unwrap();
    let omega = VectorMeasure::constant_direction(&mu, &[0.6, 0.8, 0.0]);
    let kern = EllipticKernel::new(MatrixField::Constant(ConstantMatrix::diag(&[2.0, 1.0]).unwrap()));
    let probe = [0.4, 0.9, 0.0];
    let mut prev = f64::INFINITY;
    for h in [1e-2, 5e-3, 2.5e-3] {
        let r = harmonicity_check(&omega, &kern, &probe, h).unwrap();
        assert!(r.normalized < prev, "h = {h}: {}", r.normalized);
        prev = r.normalized;
    }
    assert!(prev < 1e-3, "{prev}");
}

#[test]
fn indicator_density_is_the_restricted_measure() {
    let mu = cantor(0.25, 3);
    let kern = sin_kernel(2);
    let keep: Vec<usize> = (0..mu.len()).filter(|i| mu.position(*i)[0] < 0.5).collect();
    let f: Vec<f64> = (0..mu.len()).map(|i| if keep.contains(&i) { 1.0 } else { 0.0 }).collect();
    let sub_mu = mu.restrict(&keep).unwrap();
    let targets = [[0.5, 0.5, 0.0], [2.0, -1.0, 0.0]];
    let a = apply_t_density(&mu, &kern, &f, &targets, 0.0).unwrap().values;
    let b = apply_t(&sub_mu, &kern, &targets, 0.0).unwrap().values;
    for (u, v) in a.iter().zip(&b) {
        assert!(dist(u, v) < 1e-12 * (1.0 + norm(u)));
    }
}

#[test]
fn constant_field_adjoint_flips_the_sign() {
    // ⟨e, Tν(x)⟩ = −T*(νe)(x) for odd kernels
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..100 {
        let dim = 2 + trial % 2;
        let entries: Vec<f64> = (0..dim).map(|_| 1.0 + 3.0 * rng.gen::<f64>()).collect();
        let kern = EllipticKernel::new(MatrixField::Constant(ConstantMatrix::diag(&entries).unwrap()));
        let nu = random_measure(&mut rng, 30, dim);
        let mut e = [0.0; 3];
        for c in e.iter_mut().take(dim) {
            *c = rng.gen::<f64>() - 0.5;
        }
        let x = random_measure(&mut rng, 1, dim).position(0).to_owned();
        let t = apply_t(&nu, &kern, &[x], 0.0).unwrap().values[0];
        let omega = VectorMeasure::constant_direction(&nu, &e);
        let ts = apply_t_adjoint(&omega, &kern, &[x], 0.0).unwrap().values[0];
        let lhs = dot(&e, &t);
        assert!((lhs + ts).abs() <= 1e-12 * lhs.abs().max(1e-300), "trial {trial}: {lhs} vs {ts}");
    }
}
