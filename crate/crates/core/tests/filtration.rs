mod common;

use common::{brute_mass, cantor, two_plateau, Plateau};
use irrsio::filtration::{
    build_filtration, decompose_energy, inner_region, lattice_filtration, martingale_difference, select_finite_family,
    smoothed_measure, stopping_children, StoppingParams, DEFAULT_QUAD_2D,
};
use irrsio::geometry::dist;
use irrsio::lattice::{build_lattice, DmLattice};
use irrsio::measure::AtomicMeasure;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Strict descendants of `q` where `fire` holds and no cube strictly
/// between them and `q` fires, by scanning every cube.
fn maximal_by_scan<F: Fn(usize) -> bool>(lat: &DmLattice, q: usize, fire: F) -> Vec<usize> {
    let fires = |c: usize| lat.cube(c).doubling && fire(c);
    let mut out: Vec<usize> = lat
        .cubes()
        .iter()
        .map(|c| c.id)
        .filter(|&c| c != q && lat.is_descendant(c, q) && fires(c))
        .filter(|&c| {
            let mut up = lat.cube(c).parent;
            while let Some(a) = up {
                if a == q {
                    return true;
                }
                if fires(a) {
                    return false;
                }
                up = lat.cube(a).parent;
            }
            true
        })
        .collect();
    out.sort_unstable();
    out
}

fn scan_children(p: &Plateau, q: usize) -> (Vec<usize>, Vec<usize>) {
    let lat = &p.lat;
    let theta = |c: usize| lat.cube(c).mass / lat.cube(c).side_length > p.params.tau;
    let hd = maximal_by_scan(lat, q, theta);
    let low = |c: usize| {
        let cube = lat.cube(c);
        let r = p.params.a * 28.0 * cube.radius;
        brute_mass(&p.mu, &cube.center, r) / (2.0 * r) <= p.params.delta
    };
    let mut s1: Vec<usize> = hd.iter().flat_map(|&r| maximal_by_scan(lat, r, low)).collect();
    s1.sort_unstable();
    (hd, s1)
}

#[test]
fn stopping_children_match_a_full_scan() {
    let p = two_plateau();
    for node in p.filt.nodes().iter().filter(|n| n.generation <= 1) {
        let sc = stopping_children(&p.lat, node.cube, &p.params);
        let (hd, s1) = scan_children(&p, node.cube);
        assert_eq!(sc.hd, hd, "HD of cube {}", node.cube);
        assert_eq!(sc.sigma1, s1, "Σ₁ of cube {}", node.cube);
    }
}

#[test]
fn root_has_four_high_density_children() {
    let p = two_plateau();
    assert_eq!(p.filt.node(0).hd, vec![11, 12, 13, 14]);
    assert!(p.filt.generation_count() >= 2);
    for (g, ids) in p.filt.generations().iter().enumerate() {
        assert!(ids.iter().all(|&i| p.filt.node(i).generation == g));
    }
}

#[test]
fn generations_are_disjoint() {
    let p = two_plateau();
    assert!(p.filt.disjointness_violations(&p.lat, p.mu.len()).is_empty());
    let lf = lattice_filtration(&p.lat);
    assert!(lf.disjointness_violations(&p.lat, p.mu.len()).is_empty());
}

fn random_field(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
}

#[test]
fn energy_splits_exactly() {
    let p = two_plateau();
    let f = random_field(p.mu.len(), 4);
    let e = decompose_energy(&f, &p.filt, &p.lat, &p.mu);
    assert!(e.defect >= -1e-12);
    assert!((e.total + e.defect - e.norm2).abs() < 1e-12 * e.norm2);
    let lf = lattice_filtration(&p.lat);
    let full = decompose_energy(&f, &lf, &p.lat, &p.mu);
    assert!(full.defect.abs() < 1e-12 * full.norm2, "defect {}", full.defect);
    assert!((full.total - full.norm2).abs() < 1e-12 * full.norm2);
}

#[test]
fn exhaustive_differences_have_mean_zero_and_are_orthogonal() {
    let p = two_plateau();
    let lf = lattice_filtration(&p.lat);
    let f = random_field(p.mu.len(), 9);
    let w = p.mu.weights();
    let deltas: Vec<Vec<f64>> = lf
        .nodes()
        .iter()
        .filter(|n| n.expanded)
        .map(|n| martingale_difference(&f, n, &p.lat, &p.mu))
        .collect();
    for d in &deltas {
        let mean: f64 = d.iter().zip(w).map(|(a, w)| a * w).sum();
        assert!(mean.abs() < 1e-12);
    }
    for i in 0..deltas.len() {
        for j in i + 1..deltas.len() {
            let ip: f64 = (0..w.len()).map(|a| deltas[i][a] * deltas[j][a] * w[a]).sum();
            assert!(ip.abs() < 1e-13, "nodes {i} {j}: {ip}");
        }
    }
}

#[test]
fn stopping_difference_integrates_to_the_covered_part() {
    // ∫ Δ_Q f dμ = ∫_{∪Σ₁(Q)} f dμ − ∫_Q f dμ
    let p = two_plateau();
    let f = random_field(p.mu.len(), 10);
    let w = p.mu.weights();
    for node in p.filt.nodes().iter().filter(|n| n.expanded) {
        let d = martingale_difference(&f, node, &p.lat, &p.mu);
        let got: f64 = d.iter().zip(w).map(|(a, w)| a * w).sum();
        let over = |atoms: &[usize]| atoms.iter().map(|&a| f[a] * w[a]).sum::<f64>();
        let covered: f64 = node.sigma1.iter().map(|&s| over(&p.lat.cube(s).members)).sum();
        let want = covered - over(&p.lat.cube(node.cube).members);
        assert!((got - want).abs() < 1e-13, "cube {}: {got} vs {want}", node.cube);
    }
}

#[test]
fn raising_tau_shrinks_the_high_density_family() {
    let p = two_plateau();
    let lo = stopping_children(&p.lat, 0, &p.params).hd;
    let higher = StoppingParams::new(2.0 * p.params.tau, 1.8 * p.params.delta).unwrap();
    let hi = stopping_children(&p.lat, 0, &higher).hd;
    for r in &hi {
        assert!(lo.iter().any(|q| p.lat.is_descendant(*r, *q)), "cube {r}");
    }
    let mass = |v: &[usize]| v.iter().map(|c| p.lat.cube(*c).mass).sum::<f64>();
    assert!(mass(&hi) <= mass(&lo) + 1e-15);
}

#[test]
fn finite_family_captures_most_of_the_mass() {
    let p = two_plateau();
    for node in p.filt.nodes().iter().filter(|n| n.expanded && !n.sigma1.is_empty()) {
        let fam = select_finite_family(node, &p.lat, p.params.eps0).unwrap();
        let total = p.lat.cube(node.cube).mass;
        if !fam.shortfall {
            assert!(fam.mass >= 0.99 * total);
        }
        assert!(fam.cubes.iter().all(|c| node.sigma1.binary_search(c).is_ok()));
    }
}

#[test]
fn smoothed_cells_are_disjoint_and_keep_their_centroids() {
    let p = two_plateau();
    let fam = select_finite_family(p.filt.node(0), &p.lat, p.params.eps0).unwrap();
    let sigma = smoothed_measure(&fam.cubes, &p.lat, &p.mu, 0, p.params.kappa0, DEFAULT_QUAD_2D).unwrap();
    assert_eq!(sigma.as_measure().unwrap().len(), 256);
    for (i, a) in sigma.cells.iter().enumerate() {
        for b in &sigma.cells[i + 1..] {
            assert!(dist(&a.center, &b.center) >= a.radius + b.radius);
        }
        let m: f64 = a.weights.iter().sum();
        assert!((m - a.mass).abs() < 1e-14);
        for k in 0..2 {
            let first: f64 = a.nodes.iter().zip(&a.weights).map(|(x, w)| x[k] * w).sum();
            assert!((first - a.mass * a.center[k]).abs() < 1e-13);
        }
        assert!(a.nodes.iter().all(|x| dist(x, &a.center) < a.radius));
    }
    assert!(sigma.mass_ratio <= 1.0 + 1e-12);
}

#[test]
fn inner_region_is_everything_when_kappa_is_zero() {
    let mu: AtomicMeasure = cantor(0.25, 3);
    let lat = build_lattice(&mu, 2.0, 4.0, 12).unwrap();
    for q in lat.cubes() {
        assert_eq!(inner_region(&lat, &mu, q.id, 0.0), q.members);
    }
}

#[test]
fn filtration_is_deterministic() {
    let p = two_plateau();
    let again = build_filtration(&p.lat, &p.params, 6).unwrap();
    assert_eq!(again, p.filt);
}
