//! Density-driven stopping-time filtration `Σ`, martingale differences and
//! the localized measures `η` and `σ`.
//!
//! `HD(Q)` collects the maximal doubling strict descendants of `Q` with
//! `Θ_μ(R) > τ`; `LD(R)` the maximal doubling strict descendants of `R` with
//! `Θ_μ(A B_{R'}) ≤ δ`. Then `Σ₁(Q) = ∪_{R ∈ HD(Q)} LD(R)` and
//! `Σ_{k+1} = ∪_{Q ∈ Σ_k} Σ₁(Q)`.
//!
//! A node whose stopping rules were evaluated is *expanded*; its difference
//! follows the definition even when `Σ₁(Q)` is empty (the whole of `Q` is
//! then tail). Nodes of the last generation, and cubes without lattice
//! children, are not expanded and carry no difference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::Point;
use crate::kernels::EllipticKernel;
use crate::lattice::DmLattice;
use crate::measure::AtomicMeasure;
use crate::sum::Compensated;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingParams {
    pub tau: f64,
    pub delta: f64,
    #[serde(rename = "A", default = "default_a")]
    pub a: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    #[serde(default = "default_kappa0")]
    pub kappa0: f64,
}

fn default_a() -> f64 {
    20.0
}

fn default_eps0() -> f64 {
    0.01
}

fn default_kappa0() -> f64 {
    0.05
}

impl StoppingParams {
    pub fn new(tau: f64, delta: f64) -> Result<Self> {
        let p = Self {
            tau,
            delta,
            a: default_a(),
            eps0: default_eps0(),
            kappa0: default_kappa0(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.delta > 0.0) {
            return Err(invalid("tau and delta must be positive"));
        }
        if !(self.delta < self.tau) {
            return Err(invalid(format!(
                "delta ({}) must be below tau ({})",
                self.delta, self.tau
            )));
        }
        if !(self.a >= 2.0) {
            return Err(invalid(format!("A must be at least 2, got {}", self.a)));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return Err(invalid("eps0 must lie in (0, 1)"));
        }
        if !(self.kappa0 > 0.0 && self.kappa0 < 1.0) {
            return Err(invalid("kappa0 must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Thresholds read off the lattice.
    ///
    /// `τ` is half the median of `Θ_μ(Q)` over the doubling cubes of the
    /// first level (below the root) whose median exceeds twice that of the
    /// level just below the root; `δ = 0.9 τ`. Returns `None` when no level
    /// qualifies.
    pub fn calibrated(lat: &DmLattice) -> Option<Self> {
        let n = lat.n();
        let medians: Vec<f64> = (lat.k0() + 1..=lat.k_max())
            .filter_map(|k| {
                let mut th: Vec<f64> = lat
                    .level(k)
                    .iter()
                    .map(|&id| lat.cube(id))
                    .filter(|q| q.doubling)
                    .map(|q| q.theta(n))
                    .collect();
                if th.is_empty() {
                    return None;
                }
                th.sort_by(f64::total_cmp);
                Some(th[th.len() / 2])
            })
            .collect();
        let first = *medians.first()?;
        let high = *medians.iter().find(|m| **m > 2.0 * first)?;
        let tau = 0.5 * high;
        Self::new(tau, DELTA_FRACTION * tau).ok()
    }
}

/// `δ / τ` for [`StoppingParams::calibrated`].
pub const DELTA_FRACTION: f64 = 0.9;

/// `Θ_μ(B) = μ(B) / diam(B)^n` for the open ball `B(c, r)`.
pub fn ball_density(lat: &DmLattice, c: &Point, r: f64) -> f64 {
    lat.ball_mass(c, r) / (2.0 * r).powi(lat.n())
}

/// `Θ_μ(A B_R)` with `B_R = 28 B(R)`.
pub fn inflated_density(lat: &DmLattice, cube: usize, a: f64) -> f64 {
    let q = lat.cube(cube);
    ball_density(lat, &q.center, a * 28.0 * q.radius)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StoppingChildren {
    pub hd: Vec<usize>,
    pub sigma1: Vec<usize>,
    /// Cubes at the finest level reached without either condition firing.
    pub unstopped: Vec<usize>,
}

/// Maximal strict descendants of `q` satisfying `fire`, by a top-down scan.
fn maximal_descendants<F: Fn(usize) -> bool>(
    lat: &DmLattice,
    q: usize,
    fire: F,
    hits: &mut Vec<usize>,
    unstopped: &mut Vec<usize>,
) {
    let mut stack: Vec<usize> = lat.cube(q).children.iter().rev().copied().collect();
    if stack.is_empty() {
        unstopped.push(q);
    }
    while let Some(c) = stack.pop() {
        let cube = lat.cube(c);
        if cube.doubling && fire(c) {
            hits.push(c);
        } else if cube.children.is_empty() {
            unstopped.push(c);
        } else {
            stack.extend(cube.children.iter().rev());
        }
    }
}

/// `HD(Q)` and `Σ₁(Q)`.
pub fn stopping_children(lat: &DmLattice, q: usize, params: &StoppingParams) -> StoppingChildren {
    let n = lat.n();
    let mut out = StoppingChildren::default();
    maximal_descendants(
        lat,
        q,
        |c| lat.cube(c).theta(n) > params.tau,
        &mut out.hd,
        &mut out.unstopped,
    );
    for &r in &out.hd {
        maximal_descendants(
            lat,
            r,
            |c| inflated_density(lat, c, params.a) <= params.delta,
            &mut out.sigma1,
            &mut out.unstopped,
        );
    }
    out.hd.sort_unstable();
    out.sigma1.sort_unstable();
    out.unstopped.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiltrationNode {
    pub cube: usize,
    pub generation: usize,
    pub parent: Option<usize>,
    /// Stopping rules were evaluated on this node.
    pub expanded: bool,
    pub hd: Vec<usize>,
    /// `Σ₁(Q)` as cube ids; empty for leaves.
    pub sigma1: Vec<usize>,
    pub unstopped: Vec<usize>,
    /// Node ids of the `Σ₁(Q)` cubes.
    pub children: Vec<usize>,
}

impl FiltrationNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filtration {
    nodes: Vec<FiltrationNode>,
    generations: Vec<Vec<usize>>,
}

impl Filtration {
    pub fn nodes(&self) -> &[FiltrationNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &FiltrationNode {
        &self.nodes[id]
    }

    /// Node ids per generation; `generations()[0]` is the root alone.
    pub fn generations(&self) -> &[Vec<usize>] {
        &self.generations
    }

    pub fn generation_count(&self) -> usize {
        self.generations.len()
    }

    /// Generation-wise atom disjointness; returns offending cube pairs.
    pub fn disjointness_violations(&self, lat: &DmLattice, atom_count: usize) -> Vec<(usize, usize)> {
        let mut bad = Vec::new();
        for gen in &self.generations {
            let mut owner = vec![usize::MAX; atom_count];
            for &node in gen {
                let c = self.nodes[node].cube;
                for &a in &lat.cube(c).members {
                    if owner[a] != usize::MAX {
                        bad.push((owner[a], c));
                    }
                    owner[a] = c;
                }
            }
        }
        bad
    }

    fn from_children<F>(max_generations: usize, split: F) -> Self
    where
        F: Fn(usize) -> Option<StoppingChildren> + Sync,
    {
        let mut nodes = vec![FiltrationNode {
            cube: 0,
            generation: 0,
            parent: None,
            expanded: false,
            hd: Vec::new(),
            sigma1: Vec::new(),
            unstopped: Vec::new(),
            children: Vec::new(),
        }];
        let mut generations = vec![vec![0usize]];
        for g in 0..max_generations {
            let current = generations[g].clone();
            let splits: Vec<Option<StoppingChildren>> =
                current.par_iter().map(|&id| split(nodes[id].cube)).collect();
            let mut next = Vec::new();
            for (&id, sc) in current.iter().zip(splits) {
                let Some(sc) = sc else { continue };
                let mut kids = Vec::with_capacity(sc.sigma1.len());
                for &s in &sc.sigma1 {
                    let nid = nodes.len();
                    nodes.push(FiltrationNode {
                        cube: s,
                        generation: g + 1,
                        parent: Some(id),
                        expanded: false,
                        hd: Vec::new(),
                        sigma1: Vec::new(),
                        unstopped: Vec::new(),
                        children: Vec::new(),
                    });
                    kids.push(nid);
                }
                next.extend_from_slice(&kids);
                let node = &mut nodes[id];
                node.expanded = true;
                node.hd = sc.hd;
                node.sigma1 = sc.sigma1;
                node.unstopped = sc.unstopped;
                node.children = kids;
            }
            if next.is_empty() {
                break;
            }
            generations.push(next);
        }
        Self { nodes, generations }
    }
}

/// Breadth-first construction of `Σ` from the stopping rules.
pub fn build_filtration(
    lat: &DmLattice,
    params: &StoppingParams,
    max_generations: usize,
) -> Result<Filtration> {
    params.validate()?;
    Ok(Filtration::from_children(max_generations, |q| {
        Some(stopping_children(lat, q, params))
    }))
}

/// The filtration whose `Σ₁(Q)` is the set of lattice children of `Q`; it
/// resolves to single atoms when the lattice does.
pub fn lattice_filtration(lat: &DmLattice) -> Filtration {
    Filtration::from_children(lat.level_count(), |q| {
        let children = &lat.cube(q).children;
        (!children.is_empty()).then(|| StoppingChildren {
            hd: Vec::new(),
            sigma1: children.clone(),
            unstopped: Vec::new(),
        })
    })
}

/// `⟨f⟩_S` for each of the `c` components of `f`.
fn average(lat: &DmLattice, mu: &AtomicMeasure, cube: usize, f: &[Point], c: usize) -> Point {
    let q = lat.cube(cube);
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate().take(c) {
        let mut acc = Compensated::new();
        for &a in &q.members {
            acc.add(mu.weight(a) * f[a][k]);
        }
        *o = acc.value() / q.mass;
    }
    out
}

fn lift(f: &[f64]) -> Vec<Point> {
    f.iter().map(|v| [*v, 0.0, 0.0]).collect()
}

/// `Δ_Q f = Σ_{S ∈ Σ₁(Q)} ⟨f⟩_S χ_S − ⟨f⟩_Q χ_Q` as per-atom values (zero
/// outside `Q`, and identically zero on unexpanded nodes).
pub fn martingale_difference(
    f: &[f64],
    node: &FiltrationNode,
    lat: &DmLattice,
    mu: &AtomicMeasure,
) -> Vec<f64> {
    martingale_difference_vec(&lift(f), 1, node, lat, mu)
        .into_iter()
        .map(|p| p[0])
        .collect()
}

/// Component-wise [`martingale_difference`] for a field with `c` components.
pub fn martingale_difference_vec(
    f: &[Point],
    c: usize,
    node: &FiltrationNode,
    lat: &DmLattice,
    mu: &AtomicMeasure,
) -> Vec<Point> {
    let mut out = vec![[0.0; 3]; f.len()];
    if !node.expanded {
        return out;
    }
    let aq = average(lat, mu, node.cube, f, c);
    for &a in &lat.cube(node.cube).members {
        for k in 0..c {
            out[a][k] = -aq[k];
        }
    }
    for &s in &node.sigma1 {
        let as_ = average(lat, mu, s, f, c);
        for &a in &lat.cube(s).members {
            for k in 0..c {
                out[a][k] = as_[k] - aq[k];
            }
        }
    }
    out
}

/// `‖Δ_Q f‖²_{L²(μ)}` in closed form.
fn node_energy(f: &[Point], c: usize, node: &FiltrationNode, lat: &DmLattice, mu: &AtomicMeasure) -> f64 {
    if !node.expanded {
        return 0.0;
    }
    let aq = average(lat, mu, node.cube, f, c);
    let aq2: f64 = (0..c).map(|k| aq[k] * aq[k]).sum();
    let mut acc = Compensated::new();
    for &s in &node.sigma1 {
        let cs = lat.cube(s);
        let as_ = average(lat, mu, s, f, c);
        let d2: f64 = (0..c).map(|k| (as_[k] - aq[k]).powi(2)).sum();
        acc.add(cs.mass * d2);
    }
    acc.add(mu.mass_of(&tail_atoms(node, lat)) * aq2);
    acc.value()
}

/// Atoms of `Q` outside `∪Σ₁(Q)`.
pub fn tail_atoms(node: &FiltrationNode, lat: &DmLattice) -> Vec<usize> {
    let mut inside: Vec<usize> = node
        .sigma1
        .iter()
        .flat_map(|&s| lat.cube(s).members.iter().copied())
        .collect();
    inside.sort_unstable();
    lat.cube(node.cube)
        .members
        .iter()
        .copied()
        .filter(|a| inside.binary_search(a).is_err())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyDecomposition {
    /// `⟨f⟩²_root μ(root)`.
    pub mean_term: f64,
    /// `‖Δ_Q f‖²` per node id.
    pub node_energies: Vec<f64>,
    /// Mean term plus all node energies.
    pub total: f64,
    /// Energy not captured by the differences: variance left on leaves and
    /// on the unsplit tails.
    pub defect: f64,
    /// `‖f‖²_{L²(μ)}` by direct summation.
    pub norm2: f64,
}

/// Scalar [`decompose_energy_vec`].
pub fn decompose_energy(f: &[f64], filt: &Filtration, lat: &DmLattice, mu: &AtomicMeasure) -> EnergyDecomposition {
    decompose_energy_vec(&lift(f), 1, filt, lat, mu)
}

/// Mean term, per-node energies and the defect, each computed separately
/// so that `total + defect = ‖f‖²` is a check rather than a definition.
pub fn decompose_energy_vec(
    f: &[Point],
    c: usize,
    filt: &Filtration,
    lat: &DmLattice,
    mu: &AtomicMeasure,
) -> EnergyDecomposition {
    let root = lat.root();
    let ar = average(lat, mu, 0, f, c);
    let mean_term = root.mass * (0..c).map(|k| ar[k] * ar[k]).sum::<f64>();
    let node_energies: Vec<f64> = filt
        .nodes()
        .par_iter()
        .map(|node| node_energy(f, c, node, lat, mu))
        .collect();
    let defects: Vec<f64> = filt
        .nodes()
        .par_iter()
        .map(|node| {
            let aq = average(lat, mu, node.cube, f, c);
            if !node.expanded {
                // variance on the leaf
                let mut acc = Compensated::new();
                for &a in &lat.cube(node.cube).members {
                    for k in 0..c {
                        acc.add(mu.weight(a) * (f[a][k] - aq[k]).powi(2));
                    }
                }
                acc.value()
            } else {
                // ∫_U (f − a_Q)² − μ(U) a_Q² on the tail U
                let mut acc = Compensated::new();
                for a in tail_atoms(node, lat) {
                    for k in 0..c {
                        acc.add(mu.weight(a) * ((f[a][k] - aq[k]).powi(2) - aq[k] * aq[k]));
                    }
                }
                acc.value()
            }
        })
        .collect();
    let total = crate::sum::sum(std::iter::once(mean_term).chain(node_energies.iter().copied()));
    let defect = crate::sum::sum(defects);
    let norm2 = crate::sum::sum(
        f.iter()
            .zip(mu.weights())
            .map(|(v, w)| w * (0..c).map(|k| v[k] * v[k]).sum::<f64>()),
    );
    EnergyDecomposition {
        mean_term,
        node_energies,
        total,
        defect,
        norm2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEnergy {
    pub energy: f64,
    /// `energy / μ(Q)`.
    pub ratio: f64,
}

/// `‖Δ_Q(Tμ)‖²` given `Tμ` already evaluated on every atom.
pub fn delta_energy_from_field(
    node: &FiltrationNode,
    field: &[Point],
    lat: &DmLattice,
    mu: &AtomicMeasure,
) -> DeltaEnergy {
    let energy = node_energy(field, mu.dim(), node, lat, mu);
    DeltaEnergy {
        energy,
        ratio: energy / lat.cube(node.cube).mass,
    }
}

/// `‖Δ_Q(Tμ)‖²`, evaluating `T_ε μ` on the atoms of `Q` only.
pub fn delta_energy_of_t(
    node: &FiltrationNode,
    lat: &DmLattice,
    mu: &AtomicMeasure,
    kern: &EllipticKernel,
    eps: f64,
) -> Result<DeltaEnergy> {
    let members = &lat.cube(node.cube).members;
    let targets: Vec<Point> = members.iter().map(|&a| *mu.position(a)).collect();
    let values = crate::operator::apply_t(mu, kern, &targets, eps)?.values;
    let mut field = vec![[0.0; 3]; mu.len()];
    for (&a, v) in members.iter().zip(values) {
        field[a] = v;
    }
    Ok(delta_energy_from_field(node, &field, lat, mu))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteFamily {
    pub cubes: Vec<usize>,
    pub mass: f64,
    /// The whole of `Σ₁(Q)` falls short of `(1 − ε₀) μ(Q)`.
    pub shortfall: bool,
}

/// `Σ₁′(Q)`: largest-mass cubes of `Σ₁(Q)` until their union exceeds
/// `(1 − ε₀) μ(Q)`.
pub fn select_finite_family(node: &FiltrationNode, lat: &DmLattice, eps0: f64) -> Result<FiniteFamily> {
    if node.sigma1.is_empty() {
        return Err(invalid("Σ₁(Q) is empty"));
    }
    let mut order = node.sigma1.clone();
    order.sort_by(|a, b| lat.cube(*b).mass.total_cmp(&lat.cube(*a).mass).then(a.cmp(b)));
    let target = (1.0 - eps0) * lat.cube(node.cube).mass;
    let mut acc = Compensated::new();
    let mut cubes = Vec::new();
    for s in order {
        cubes.push(s);
        acc.add(lat.cube(s).mass);
        if acc.value() > target {
            break;
        }
    }
    let mass = acc.value();
    cubes.sort_unstable();
    Ok(FiniteFamily {
        cubes,
        mass,
        shortfall: !(mass > target),
    })
}

/// `I_κ₀(S) = {x ∈ S : dist(x, supp μ \ S) ≥ κ₀ ℓ(S)}`.
pub fn inner_region(lat: &DmLattice, mu: &AtomicMeasure, s: usize, kappa0: f64) -> Vec<usize> {
    let cube = lat.cube(s);
    let t = kappa0 * cube.side_length;
    let level = cube.level;
    cube.members
        .iter()
        .copied()
        .filter(|&x| {
            t == 0.0
                || lat
                    .atoms_within(mu.position(x), t)
                    .into_iter()
                    .all(|y| lat.cube_of(y, level) == Some(s))
        })
        .collect()
}

/// `(P_m(z), P_{m−1}(z))` by the three-term recurrence.
fn legendre(m: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=m {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// Gauss–Legendre nodes (ascending) and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, q) = legendre(m, z);
            let dz = p / (m as f64 * (z * p - q) / (z * z - 1.0));
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (p, q) = legendre(m, z);
        let dp = m as f64 * (z * p - q) / (z * z - 1.0);
        x[m - 1 - i] = z;
        w[m - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedCell {
    pub cube: usize,
    pub center: Point,
    /// Radius of `¼B(S)`.
    pub radius: f64,
    /// `μ(I_κ₀(S))`.
    pub mass: f64,
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMeasure {
    pub dim: usize,
    pub cells: Vec<SmoothedCell>,
    pub total_mass: f64,
    /// `σ(R^d) / μ(Q)`.
    pub mass_ratio: f64,
}

pub const DEFAULT_QUAD_2D: usize = 64;
pub const DEFAULT_QUAD_3D: usize = 216;

impl SmoothedMeasure {
    /// Cells from explicit balls and masses (used for small hand-built
    /// instances).
    pub fn from_balls(dim: usize, balls: &[(Point, f64, f64)], quad_per_cell: usize, reference_mass: f64) -> Result<Self> {
        let (rule, weights) = ball_rule(dim, quad_per_cell)?;
        let mut cells = Vec::with_capacity(balls.len());
        for (i, &(center, radius, mass)) in balls.iter().enumerate() {
            cells.push(make_cell(i, center, radius, mass, &rule, &weights));
        }
        let total_mass = crate::sum::sum(cells.iter().map(|c| c.mass));
        Ok(Self {
            dim,
            cells,
            total_mass,
            mass_ratio: total_mass / reference_mass,
        })
    }

    /// Quadrature nodes as an atomic measure.
    pub fn as_measure(&self) -> Result<AtomicMeasure> {
        let mut pos = Vec::new();
        let mut w = Vec::new();
        for c in &self.cells {
            for (p, q) in c.nodes.iter().zip(&c.weights) {
                if *q > 0.0 {
                    pos.push(*p);
                    w.push(*q);
                }
            }
        }
        AtomicMeasure::new(self.dim, pos, w)
    }

    /// Index of the cell owning each node of [`Self::as_measure`].
    pub fn node_cells(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.weights.iter().filter(|w| **w > 0.0).map(move |_| i))
            .collect()
    }
}

/// Unit-ball product rule: radial Gauss–Legendre times a uniform angular
/// grid (2D) or Gauss–Legendre in `cos θ` times uniform `φ` (3D).
fn ball_rule(dim: usize, quad_per_cell: usize) -> Result<(Vec<Point>, Vec<f64>)> {
    if quad_per_cell < 8 {
        return Err(invalid(format!(
            "quad_per_cell must be at least 8, got {quad_per_cell}"
        )));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    if dim == 2 {
        let nr = ((quad_per_cell as f64).sqrt() / 2.0).floor().max(2.0) as usize;
        let nt = quad_per_cell / nr;
        let (x, w) = gauss_legendre(nr);
        for (xi, wi) in x.iter().zip(&w) {
            let r = 0.5 * (xi + 1.0);
            for j in 0..nt {
                let t = two_pi * (j as f64 + 0.5) / nt as f64;
                nodes.push([r * t.cos(), r * t.sin(), 0.0]);
                weights.push(0.5 * wi * r * two_pi / nt as f64);
            }
        }
    } else {
        let m = (quad_per_cell as f64).cbrt().floor().max(2.0) as usize;
        let (x, w) = gauss_legendre(m);
        for (xr, wr) in x.iter().zip(&w) {
            let r = 0.5 * (xr + 1.0);
            for (ct, wt) in x.iter().zip(&w) {
                let st = (1.0 - ct * ct).sqrt();
                for j in 0..m {
                    let p = two_pi * (j as f64 + 0.5) / m as f64;
                    nodes.push([r * st * p.cos(), r * st * p.sin(), r * ct]);
                    weights.push(0.5 * wr * r * r * wt * two_pi / m as f64);
                }
            }
        }
    }
    Ok((nodes, weights))
}

fn make_cell(cube: usize, center: Point, radius: f64, mass: f64, rule: &[Point], weights: &[f64]) -> SmoothedCell {
    let total = crate::sum::sum(weights.iter().copied());
    SmoothedCell {
        cube,
        center,
        radius,
        mass,
        nodes: rule
            .iter()
            .map(|p| crate::geometry::add(&center, &crate::geometry::scale(p, radius)))
            .collect(),
        weights: weights.iter().map(|w| w / total * mass).collect(),
    }
}

/// `σ = Σ_{S ∈ Σ₁′(Q)} μ(I_κ₀(S)) / |¼B(S)| · L|_{¼B(S)}`, discretized.
pub fn smoothed_measure(
    family: &[usize],
    lat: &DmLattice,
    mu: &AtomicMeasure,
    q: usize,
    kappa0: f64,
    quad_per_cell: usize,
) -> Result<SmoothedMeasure> {
    let (rule, weights) = ball_rule(mu.dim(), quad_per_cell)?;
    let mut cells = Vec::with_capacity(family.len());
    for &s in family {
        let cube = lat.cube(s);
        let inner = inner_region(lat, mu, s, kappa0);
        let mass = mu.mass_of(&inner);
        if mass > 0.0 {
            cells.push(make_cell(s, cube.center, 0.25 * cube.radius, mass, &rule, &weights));
        }
    }
    let total_mass = crate::sum::sum(cells.iter().map(|c| c.mass));
    Ok(SmoothedMeasure {
        dim: mu.dim(),
        cells,
        total_mass,
        mass_ratio: total_mass / lat.cube(q).mass,
    })
}

/// Atoms of `η = χ̃_Q μ`, the union of the inner regions of the family.
pub fn eta_atoms(family: &[usize], lat: &DmLattice, mu: &AtomicMeasure, kappa0: f64) -> Vec<usize> {
    let mut out: Vec<usize> = family
        .iter()
        .flat_map(|&s| inner_region(lat, mu, s, kappa0))
        .collect();
    out.sort_unstable();
    out
}
