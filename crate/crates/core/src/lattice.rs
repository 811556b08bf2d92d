//! Nested cube lattices over the support of an atomic measure.
//!
//! Level `k` has radius `r_k = A₀^{-k}`. Its centers are a maximal
//! `10 r_k`-separated set of atoms obtained by extending the centers of
//! level `k − 1` greedily in ascending atom order. The finest level assigns
//! every atom to its nearest center; each coarser level collects whole finer
//! cubes by the nearest coarse center of their own center, which forces
//! nesting. For `A₀ ≥ 4` this gives
//!
//! * `5B(Q)` pairwise disjoint on each level,
//! * every atom of `B(Q)` belongs to `Q`,
//! * `Q ⊂ B(x_Q, 28 r_Q)`.

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::geometry::{dist, Ball, Point};
use crate::measure::AtomicMeasure;
use crate::spatial::{HashGrid, KdTree};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeParams {
    pub c0: f64,
    pub a0: f64,
    /// Number of levels below the root.
    pub depth: usize,
}

impl Default for LatticeParams {
    fn default() -> Self {
        Self {
            c0: 2.0,
            a0: 8.0,
            depth: 6,
        }
    }
}

impl LatticeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 1.0) {
            return Err(invalid(format!("C0 must exceed 1, got {}", self.c0)));
        }
        if !(self.a0 >= 4.0) || !self.a0.is_finite() {
            return Err(invalid(format!(
                "A0 must be at least 4 for nested cubes to stay inside 28B(Q), got {}",
                self.a0
            )));
        }
        if self.depth < 1 {
            return Err(invalid("depth must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmCube {
    pub id: usize,
    pub level: i32,
    pub center_atom: usize,
    pub center: Point,
    pub radius: f64,
    /// Member atoms, ascending.
    pub members: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub doubling: bool,
    /// `ℓ(Q) = 56 C₀ A₀^{-k}`.
    pub side_length: f64,
    /// `μ(Q)`.
    pub mass: f64,
}

impl DmCube {
    /// `B(Q) = B(x_Q, r_Q)`.
    pub fn ball(&self) -> Ball {
        Ball {
            center: self.center,
            radius: self.radius,
        }
    }

    /// `B_Q = 28 B(Q)`.
    pub fn big_ball(&self) -> Ball {
        self.ball().dilate(28.0)
    }

    /// `Θ_μ(Q) = μ(Q) / ℓ(Q)^n`.
    pub fn theta(&self, n: i32) -> f64 {
        self.mass / self.side_length.powi(n)
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct DmLattice {
    params: LatticeParams,
    dim: usize,
    k0: i32,
    cubes: Vec<DmCube>,
    levels: Vec<Vec<usize>>,
    /// `atom_cube[i][a]` is the level-`k0 + i` cube containing atom `a`.
    atom_cube: Vec<Vec<u32>>,
    truncated: bool,
    tree: KdTree,
}

/// `build_lattice`.
pub fn build_lattice(mu: &AtomicMeasure, c0: f64, a0: f64, depth: usize) -> Result<DmLattice> {
    DmLattice::build(mu, LatticeParams { c0, a0, depth })
}

impl DmLattice {
    pub fn build(mu: &AtomicMeasure, params: LatticeParams) -> Result<Self> {
        params.validate()?;
        let n_atoms = mu.len();
        if n_atoms == 0 {
            return Err(invalid("cannot build a lattice over an empty measure"));
        }
        let pos = mu.positions();
        let a0 = params.a0;
        let extent = mu.extent();
        let k0 = if extent > 0.0 {
            (-extent.ln() / a0.ln()).floor() as i32
        } else {
            0
        };
        // Past the first level whose 100-fold balls isolate every atom,
        // all cubes are doubling singletons; one more level is kept.
        let spacing = mu.min_spacing();
        let mut last = k0 + params.depth as i32;
        let mut truncated = false;
        if spacing.is_finite() {
            let mut k_res = k0;
            while 100.0 * a0.powi(-k_res) >= spacing {
                k_res += 1;
            }
            if last > k_res + 1 {
                last = k_res + 1;
                truncated = true;
            }
        }
        let n_levels = (last - k0 + 1) as usize;

        // Nested greedy nets.
        let root_atom = mu.nearest_atom(&mu.centroid());
        let mut centers: Vec<Vec<usize>> = vec![vec![root_atom]];
        for i in 1..n_levels {
            let r = a0.powi(-(k0 + i as i32));
            let sep = 10.0 * r;
            let mut grid = HashGrid::new(sep);
            let mut cur = centers[i - 1].clone();
            for &c in &cur {
                grid.insert(&pos[c], c);
            }
            for a in 0..n_atoms {
                if !grid.any_within_closed(&pos[a], sep, pos) {
                    grid.insert(&pos[a], a);
                    cur.push(a);
                }
            }
            centers.push(cur);
        }
        for c in centers.iter_mut() {
            c.sort_unstable();
        }

        // Bottom-up assignment.
        let mut atom_cube = vec![Vec::new(); n_levels];
        let mut level_members: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n_levels];
        let mut level_parent: Vec<Vec<usize>> = vec![Vec::new(); n_levels];
        {
            let fine = n_levels - 1;
            let cpos: Vec<Point> = centers[fine].iter().map(|&c| pos[c]).collect();
            let tree = KdTree::unweighted(&cpos);
            let mut members = vec![Vec::new(); cpos.len()];
            let mut ac = vec![0u32; n_atoms];
            for a in 0..n_atoms {
                let (j, _) = tree.nearest(&pos[a]).expect("nonempty centers");
                members[j].push(a);
                ac[a] = j as u32;
            }
            level_members[fine] = members;
            atom_cube[fine] = ac;
        }
        for i in (0..n_levels - 1).rev() {
            let cpos: Vec<Point> = centers[i].iter().map(|&c| pos[c]).collect();
            let tree = KdTree::unweighted(&cpos);
            let mut members = vec![Vec::new(); cpos.len()];
            let mut parents = Vec::with_capacity(centers[i + 1].len());
            for (j, &c) in centers[i + 1].iter().enumerate() {
                let (p, _) = tree.nearest(&pos[c]).expect("nonempty centers");
                parents.push(p);
                members[p].extend_from_slice(&level_members[i + 1][j]);
            }
            for m in members.iter_mut() {
                m.sort_unstable();
            }
            let mut ac = vec![0u32; n_atoms];
            for (j, m) in members.iter().enumerate() {
                for &a in m {
                    ac[a] = j as u32;
                }
            }
            level_parent[i + 1] = parents;
            level_members[i] = members;
            atom_cube[i] = ac;
        }

        // Global ids, coarse to fine.
        let mut offsets = vec![0usize; n_levels];
        for i in 1..n_levels {
            offsets[i] = offsets[i - 1] + centers[i - 1].len();
        }
        let mut cubes = Vec::new();
        let mut levels = Vec::with_capacity(n_levels);
        for i in 0..n_levels {
            let k = k0 + i as i32;
            let r = a0.powi(-k);
            let mut ids = Vec::with_capacity(centers[i].len());
            for (j, &c) in centers[i].iter().enumerate() {
                let id = offsets[i] + j;
                let members = std::mem::take(&mut level_members[i][j]);
                let mass = mu.mass_of(&members);
                cubes.push(DmCube {
                    id,
                    level: k,
                    center_atom: c,
                    center: pos[c],
                    radius: r,
                    members,
                    parent: (i > 0).then(|| offsets[i - 1] + level_parent[i][j]),
                    children: Vec::new(),
                    doubling: false,
                    side_length: 56.0 * params.c0 * r,
                    mass,
                });
                ids.push(id);
            }
            levels.push(ids);
        }
        for id in 0..cubes.len() {
            if let Some(p) = cubes[id].parent {
                cubes[p].children.push(id);
            }
        }
        for (i, ac) in atom_cube.iter_mut().enumerate() {
            for v in ac.iter_mut() {
                *v += offsets[i] as u32;
            }
        }
        let mut lat = Self {
            params,
            dim: mu.dim(),
            k0,
            cubes,
            levels,
            atom_cube,
            truncated,
            tree: KdTree::new(mu.positions(), mu.weights()),
        };
        lat.classify_doubling(mu);
        Ok(lat)
    }

    pub fn params(&self) -> &LatticeParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> i32 {
        self.dim as i32 - 1
    }

    /// Root level `k₀`.
    pub fn k0(&self) -> i32 {
        self.k0
    }

    /// Finest level present.
    pub fn k_max(&self) -> i32 {
        self.k0 + self.levels.len() as i32 - 1
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Whether the requested depth was cut short because every atom was
    /// already isolated.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn root(&self) -> &DmCube {
        &self.cubes[0]
    }

    pub fn cube(&self, id: usize) -> &DmCube {
        &self.cubes[id]
    }

    pub fn cubes(&self) -> &[DmCube] {
        &self.cubes
    }

    /// Cube ids at level `k`.
    pub fn level(&self, k: i32) -> &[usize] {
        let i = k - self.k0;
        if i < 0 || i as usize >= self.levels.len() {
            return &[];
        }
        &self.levels[i as usize]
    }

    /// The level-`k` cube containing `atom`.
    pub fn cube_of(&self, atom: usize, k: i32) -> Option<usize> {
        let i = k - self.k0;
        if i < 0 || i as usize >= self.levels.len() {
            return None;
        }
        Some(self.atom_cube[i as usize][atom] as usize)
    }

    /// `μ(B(c, r))`, open ball.
    pub fn ball_mass(&self, c: &Point, r: f64) -> f64 {
        self.tree.mass_within(c, r)
    }

    /// Atoms in the open ball `B(c, r)`, ascending.
    pub fn atoms_within(&self, c: &Point, r: f64) -> Vec<usize> {
        self.tree.within(c, r)
    }

    /// Whether `r` equals `q` or descends from it.
    pub fn is_descendant(&self, r: usize, q: usize) -> bool {
        let mut cur = Some(r);
        while let Some(c) = cur {
            if c == q {
                return true;
            }
            if self.cubes[c].level <= self.cubes[q].level {
                return false;
            }
            cur = self.cubes[c].parent;
        }
        false
    }

    /// `doubling := μ(100B(Q)) ≤ C₀ μ(B(Q))`.
    pub fn classify_doubling(&mut self, mu: &AtomicMeasure) {
        let tree = KdTree::new(mu.positions(), mu.weights());
        let c0 = self.params.c0;
        for q in self.cubes.iter_mut() {
            let big = tree.mass_within(&q.center, 100.0 * q.radius);
            let small = tree.mass_within(&q.center, q.radius);
            q.doubling = big <= c0 * small;
        }
    }

    /// Text dump, one cube per line: `id level parent center… r doubling n_members`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# id level parent center r doubling n_members");
        for q in &self.cubes {
            let parent = q.parent.map_or(-1, |p| p as i64);
            let _ = write!(out, "{} {} {}", q.id, q.level, parent);
            for c in &q.center[..self.dim] {
                let _ = write!(out, " {c:e}");
            }
            let _ = writeln!(
                out,
                " {:e} {} {}",
                q.radius,
                u8::from(q.doubling),
                q.members.len()
            );
        }
        out
    }

    /// Exhaustive check of the lattice invariants; returns violations.
    pub fn check_invariants(&self, mu: &AtomicMeasure) -> Vec<String> {
        let mut bad = Vec::new();
        let n = mu.len();
        for (i, ids) in self.levels.iter().enumerate() {
            let k = self.k0 + i as i32;
            let mut seen = vec![false; n];
            for &id in ids {
                let q = &self.cubes[id];
                for &a in &q.members {
                    if seen[a] {
                        bad.push(format!("atom {a} in two cubes at level {k}"));
                    }
                    seen[a] = true;
                    if dist(mu.position(a), &q.center) >= 28.0 * q.radius {
                        bad.push(format!("atom {a} outside 28B of cube {id}"));
                    }
                }
                for a in self.tree.within(&q.center, q.radius) {
                    if self.atom_cube[i][a] as usize != id {
                        bad.push(format!("atom {a} in B(Q) but not in cube {id}"));
                    }
                }
                if let Some(p) = q.parent {
                    let parent = &self.cubes[p];
                    if q.members.iter().any(|a| parent.members.binary_search(a).is_err()) {
                        bad.push(format!("cube {id} not nested in parent {p}"));
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                bad.push(format!("level {k} does not cover every atom"));
            }
            for (x, &p) in ids.iter().enumerate() {
                for &q in &ids[x + 1..] {
                    let (a, b) = (&self.cubes[p], &self.cubes[q]);
                    if dist(&a.center, &b.center) <= 5.0 * (a.radius + b.radius) {
                        bad.push(format!("5B(Q) overlap between cubes {p} and {q}"));
                    }
                }
            }
        }
        bad
    }
}

/// One row of the small-boundary report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryRow {
    pub l: usize,
    pub exterior_mass: f64,
    pub interior_mass: f64,
    /// `μ(N_l(Q))`.
    pub mass: f64,
    /// `θ^{-l} μ(90B(Q))`.
    pub reference: f64,
}

/// Masses of the collars
/// `N_l^ext(Q) = {x ∈ supp μ \ Q : dist(x, Q) < A₀^{-k-l}}` and
/// `N_l^int(Q) = {x ∈ Q : dist(x, supp μ \ Q) < A₀^{-k-l}}`.
pub fn small_boundary_report(
    lat: &DmLattice,
    mu: &AtomicMeasure,
    q: usize,
    l_max: usize,
    theta: f64,
) -> Result<Vec<BoundaryRow>> {
    if !(theta > 1.0) {
        return Err(invalid("reference decay base must exceed 1"));
    }
    let cube = lat.cube(q);
    let level_index = (cube.level - lat.k0) as usize;
    let in_q = |a: usize| lat.atom_cube[level_index][a] as usize == q;
    let m90 = lat.ball_mass(&cube.center, 90.0 * cube.radius);
    let mut rows = Vec::with_capacity(l_max + 1);
    for l in 0..=l_max {
        let t = lat.params.a0.powi(-(cube.level + l as i32));
        let mut interior = vec![false; mu.len()];
        let mut exterior = vec![false; mu.len()];
        for &x in &cube.members {
            lat.tree.for_each_within(mu.position(x), t, |y| {
                if !in_q(y) {
                    interior[x] = true;
                    exterior[y] = true;
                }
            });
        }
        let int_atoms: Vec<usize> = (0..mu.len()).filter(|a| interior[*a]).collect();
        let ext_atoms: Vec<usize> = (0..mu.len()).filter(|a| exterior[*a]).collect();
        let interior_mass = mu.mass_of(&int_atoms);
        let exterior_mass = mu.mass_of(&ext_atoms);
        rows.push(BoundaryRow {
            l,
            exterior_mass,
            interior_mass,
            mass: interior_mass + exterior_mass,
            reference: theta.powi(-(l as i32)) * m90,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DoublingCover {
    /// Maximal doubling descendants, in id order.
    pub cubes: Vec<usize>,
    /// Atoms whose chain stays non-doubling down to the finest level.
    pub uncovered: Vec<usize>,
}

/// Maximal doubling cubes inside `q` (including `q` itself when doubling).
pub fn doubling_cover(lat: &DmLattice, q: usize) -> DoublingCover {
    let mut cover = DoublingCover::default();
    let mut stack = vec![q];
    while let Some(c) = stack.pop() {
        let cube = lat.cube(c);
        if cube.doubling {
            cover.cubes.push(c);
        } else if cube.children.is_empty() {
            cover.uncovered.extend_from_slice(&cube.members);
        } else {
            stack.extend(cube.children.iter().rev());
        }
    }
    cover.cubes.sort_unstable();
    cover.uncovered.sort_unstable();
    cover
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainReport {
    /// `μ(100B(R)) / μ(100B(Q))`.
    pub mass_ratio: f64,
    /// `Θ_μ(100B(R)) / Θ_μ(100B(Q))`.
    pub density_ratio: f64,
    /// `J(R) − J(Q) − 1`.
    pub gap: i32,
    /// `A₀^{-10d·gap}`.
    pub mass_reference: f64,
    /// `(C₀A₀)^d A₀^{-9d·gap}`.
    pub density_reference: f64,
}

/// Decay along a chain `R ⊂ Q` whose strictly intermediate cubes are all
/// non-doubling.
pub fn chain_decay_check(lat: &DmLattice, q: usize, r: usize) -> Result<ChainReport> {
    if !lat.is_descendant(r, q) {
        return Err(invalid(format!("cube {r} is not contained in cube {q}")));
    }
    let mut cur = lat.cube(r).parent;
    if r != q {
        while let Some(c) = cur {
            if c == q {
                break;
            }
            if lat.cube(c).doubling {
                return Err(Error::InvalidParameter(format!(
                    "intermediate cube {c} between {r} and {q} is doubling"
                )));
            }
            cur = lat.cube(c).parent;
        }
    }
    let (cq, cr) = (lat.cube(q), lat.cube(r));
    let mq = lat.ball_mass(&cq.center, 100.0 * cq.radius);
    let mr = lat.ball_mass(&cr.center, 100.0 * cr.radius);
    let n = lat.n();
    let mass_ratio = mr / mq;
    let density_ratio = mass_ratio * (cq.radius / cr.radius).powi(n);
    let gap = cr.level - cq.level - 1;
    let d = lat.dim as f64;
    let a0 = lat.params.a0;
    Ok(ChainReport {
        mass_ratio,
        density_ratio,
        gap,
        mass_reference: a0.powf(-10.0 * d * gap as f64),
        density_reference: (lat.params.c0 * a0).powf(d) * a0.powf(-9.0 * d * gap as f64),
    })
}
