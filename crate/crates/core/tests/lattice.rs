mod common;

use common::{brute_mass, cantor};
use irrsio::geometry::dist;
use irrsio::lattice::{build_lattice, chain_decay_check, doubling_cover, small_boundary_report, DmLattice};
use irrsio::measure::{make_graph_measure, AtomicMeasure};

/// Partition, nesting, 5B-disjointness and containment by plain scans.
fn audit(lat: &DmLattice, mu: &AtomicMeasure) {
    let n = mu.len();
    for k in lat.k0()..=lat.k_max() {
        let ids = lat.level(k);
        let mut owner = vec![usize::MAX; n];
        for &id in ids {
            let q = lat.cube(id);
            assert_eq!(q.level, k);
            for &a in &q.members {
                assert_eq!(owner[a], usize::MAX, "atom {a} in two cubes at level {k}");
                owner[a] = id;
                assert!(dist(mu.position(a), &q.center) <= 28.0 * q.radius);
            }
            if let Some(p) = q.parent {
                let parent = lat.cube(p);
                assert_eq!(parent.level, k - 1);
                assert!(q.members.iter().all(|a| parent.members.binary_search(a).is_ok()));
            }
            for (a, x) in mu.positions().iter().enumerate() {
                if dist(x, &q.center) < q.radius {
                    assert!(q.members.binary_search(&a).is_ok());
                }
            }
        }
        assert!(owner.iter().all(|o| *o != usize::MAX), "level {k} misses atoms");
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let (qa, qb) = (lat.cube(a), lat.cube(b));
                assert!(dist(&qa.center, &qb.center) > 5.0 * (qa.radius + qb.radius));
            }
        }
    }
}

#[test]
fn cantor_lattice_satisfies_every_invariant() {
    let mu = cantor(0.25, 4);
    let lat = build_lattice(&mu, 2.0, 8.0, 5).unwrap();
    audit(&lat, &mu);
    assert!(lat.check_invariants(&mu).is_empty());
}

#[test]
fn graph_lattices_for_each_a0() {
    let mu = make_graph_measure(512, 0.5, 2).unwrap();
    for a0 in [4.0, 8.0, 16.0] {
        let lat = build_lattice(&mu, 2.0, a0, 12).unwrap();
        audit(&lat, &mu);
    }
}

#[test]
fn half_balls_meet_only_when_nested() {
    let mu = cantor(0.25, 4);
    let lat = build_lattice(&mu, 2.0, 4.0, 10).unwrap();
    let cubes = lat.cubes();
    for a in cubes {
        for b in cubes {
            if a.id >= b.id {
                continue;
            }
            if dist(&a.center, &b.center) < 0.5 * (a.radius + b.radius) {
                assert!(lat.is_descendant(a.id, b.id) || lat.is_descendant(b.id, a.id));
            }
        }
    }
}

#[test]
fn side_length_follows_the_level() {
    let mu = cantor(0.25, 3);
    let lat = build_lattice(&mu, 2.0, 8.0, 4).unwrap();
    for q in lat.cubes() {
        let r = 8f64.powi(-q.level);
        assert!((q.radius - r).abs() <= 1e-15 * r);
        assert!((q.side_length - 56.0 * 2.0 * r).abs() <= 1e-12 * q.side_length);
    }
}

#[test]
fn doubling_flags_match_ball_counts() {
    let mu = cantor(0.25, 4);
    for c0 in [8.0, 128.0] {
        let lat = build_lattice(&mu, c0, 8.0, 6).unwrap();
        for q in lat.cubes() {
            let want = brute_mass(&mu, &q.center, 100.0 * q.radius) <= c0 * brute_mass(&mu, &q.center, q.radius);
            assert_eq!(q.doubling, want, "cube {}", q.id);
        }
    }
}

#[test]
fn regular_cantor_doubles_once_c0_exceeds_the_hundredfold_growth() {
    // μ(B(x, 100r)) / μ(B(x, r)) ≈ 100 on a 1-regular set
    let mu = cantor(0.25, 4);
    let lat = build_lattice(&mu, 128.0, 8.0, 6).unwrap();
    for k in lat.k0()..=lat.k_max() {
        let ids = lat.level(k);
        let count = ids.iter().filter(|i| lat.cube(**i).doubling).count();
        assert!(2 * count >= ids.len(), "level {k}: {count} of {}", ids.len());
    }
}

#[test]
fn interior_collars_shrink() {
    let mu = cantor(0.25, 5);
    let lat = build_lattice(&mu, 2.0, 4.0, 10).unwrap();
    let q = lat.level(lat.k0() + 3)[1];
    let rows = small_boundary_report(&lat, &mu, q, 4, 2.0).unwrap();
    assert!(rows.windows(2).all(|w| w[1].mass <= w[0].mass));
    assert!(rows.last().unwrap().mass < rows[0].mass || rows[0].mass == 0.0);
}

#[test]
fn unequal_pair_chain_by_hand() {
    let mu = AtomicMeasure::new(2, vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![1.0, 10.0]).unwrap();
    let lat = build_lattice(&mu, 2.0, 4.0, 6).unwrap();
    let cover = doubling_cover(&lat, 0);
    assert!(cover.uncovered.is_empty());
    // the cube centered at the light atom with 100 r > 1 > r
    let light = lat
        .cubes()
        .iter()
        .find(|q| q.center_atom == 0 && 100.0 * q.radius > 1.0 && q.radius < 1.0)
        .unwrap()
        .id;
    assert!(!lat.cube(light).doubling);
    if let Some(child) = lat.cube(light).children.first().copied() {
        let rep = chain_decay_check(&lat, light, child).unwrap();
        let (cq, cr) = (lat.cube(light), lat.cube(child));
        let want = brute_mass(&mu, &cr.center, 100.0 * cr.radius) / brute_mass(&mu, &cq.center, 100.0 * cq.radius);
        assert!((rep.mass_ratio - want).abs() < 1e-15);
        assert_eq!(rep.gap, 0);
    }
}

#[test]
fn construction_is_deterministic() {
    let mu = make_graph_measure(300, 0.3, 2).unwrap();
    let a = build_lattice(&mu, 2.0, 4.0, 10).unwrap();
    let b = build_lattice(&mu, 2.0, 4.0, 10).unwrap();
    assert_eq!(a.dump(), b.dump());
}
