//! Finite weighted point sets and their densities.
//!
//! An [`AtomicMeasure`] lives in `R^d` with `d ∈ {2, 3}` and measures balls in
//! codimension one, i.e. densities are normalized by `(2r)^n` with `n = d − 1`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{dist, dist2, Ball, Point};
use crate::sum::{self, Compensated};

/// Largest number of Cantor generations accepted (4^12 atoms).
pub const MAX_CANTOR_GENERATIONS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    dim: usize,
    positions: Vec<Point>,
    weights: Vec<f64>,
    total_mass: f64,
}

impl AtomicMeasure {
    pub fn new(dim: usize, positions: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if positions.len() != weights.len() {
            return Err(invalid("positions and weights differ in length"));
        }
        if positions.is_empty() {
            return Err(invalid("a measure needs at least one atom"));
        }
        for (i, (p, w)) in positions.iter().zip(&weights).enumerate() {
            if !(*w > 0.0 && w.is_finite()) {
                return Err(invalid(format!("atom {i} has non-positive weight {w}")));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(invalid(format!("atom {i} has a non-finite coordinate")));
            }
            if dim == 2 && p[2] != 0.0 {
                return Err(invalid(format!("planar atom {i} has z = {}", p[2])));
            }
        }
        let total_mass = sum::sum(weights.iter().copied());
        Ok(Self {
            dim,
            positions,
            weights,
            total_mass,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Density exponent `n = d − 1`.
    pub fn n(&self) -> i32 {
        self.dim as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn position(&self, i: usize) -> &Point {
        &self.positions[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Sum of weights over the given atom indices.
    pub fn mass_of(&self, atoms: &[usize]) -> f64 {
        sum::sum(atoms.iter().map(|&i| self.weights[i]))
    }

    /// μ(B) for the open ball B.
    pub fn ball_mass(&self, ball: &Ball) -> f64 {
        let r2 = ball.radius * ball.radius;
        let mut acc = Compensated::new();
        for (p, w) in self.positions.iter().zip(&self.weights) {
            if dist2(p, &ball.center) < r2 {
                acc.add(*w);
            }
        }
        acc.value()
    }

    /// Θ_μ(B) = μ(B) / (2r)^n.
    pub fn density(&self, ball: &Ball) -> f64 {
        self.ball_mass(ball) / (2.0 * ball.radius).powi(self.n())
    }

    /// Densities on the geometric grid `r_min · 10^{k / per_decade} ≤ r_max`.
    pub fn density_profile(
        &self,
        x: &Point,
        r_min: f64,
        r_max: f64,
        per_decade: usize,
    ) -> Result<Vec<(f64, f64)>> {
        if !(r_min > 0.0 && r_min < r_max) {
            return Err(invalid(format!(
                "need 0 < r_min < r_max, got {r_min}, {r_max}"
            )));
        }
        if per_decade == 0 {
            return Err(invalid("per_decade must be at least 1"));
        }
        let steps = ((r_max / r_min).log10() * per_decade as f64 + 1e-9).floor() as usize;
        Ok((0..=steps)
            .map(|k| {
                let r = r_min * 10f64.powf(k as f64 / per_decade as f64);
                (r, self.density(&Ball { center: *x, radius: r }))
            })
            .collect())
    }

    /// Empirical growth constant `max μ(B(x, r)) / r^n` over sampled pairs,
    /// radii log-uniform in `[min_spacing / 2, diameter]`.
    pub fn growth_constant(&self, sample_count: usize, seed: u64) -> Result<f64> {
        let (lo, hi) = if self.len() == 1 {
            (1.0, 1.0)
        } else {
            (0.5 * self.min_spacing(), self.diameter())
        };
        self.growth_constant_in(sample_count, seed, lo, hi)
    }

    /// Same as [`growth_constant`](Self::growth_constant) on an explicit radius
    /// range. The first sample always uses `r_lo`.
    pub fn growth_constant_in(
        &self,
        sample_count: usize,
        seed: u64,
        r_lo: f64,
        r_hi: f64,
    ) -> Result<f64> {
        if sample_count == 0 {
            return Err(invalid("sample_count must be at least 1"));
        }
        if !(r_lo > 0.0 && r_lo <= r_hi) {
            return Err(invalid("need 0 < r_lo <= r_hi"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ratio = r_hi / r_lo;
        let pairs: Vec<(usize, f64)> = (0..sample_count)
            .map(|s| {
                let atom = rng.gen_range(0..self.len());
                let u = if s == 0 {
                    0.0
                } else {
                    (s as f64 + rng.gen::<f64>()) / sample_count as f64
                };
                (atom, r_lo * ratio.powf(u))
            })
            .collect();
        let n = self.n();
        let vals: Vec<f64> = pairs
            .par_iter()
            .map(|&(a, r)| {
                let b = Ball {
                    center: self.positions[a],
                    radius: r,
                };
                self.ball_mass(&b) / r.powi(n)
            })
            .collect();
        Ok(vals.into_iter().fold(0.0, f64::max))
    }

    pub fn diameter(&self) -> f64 {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let p = &self.positions[i];
                self.positions[i + 1..]
                    .iter()
                    .map(|q| dist2(p, q))
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
            .sqrt()
    }

    /// Smallest distance between distinct atoms (`+∞` for a single atom).
    pub fn min_spacing(&self) -> f64 {
        let tree = crate::spatial::KdTree::unweighted(&self.positions);
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                tree.nearest_except(&self.positions[i], Some(i))
                    .map_or(f64::INFINITY, |(_, d)| d)
            })
            .reduce(|| f64::INFINITY, f64::min)
    }

    /// Diagonal of the axis-aligned bounding box, an upper bound for the
    /// diameter.
    pub fn extent(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        crate::geometry::dist(&lo, &hi)
    }

    pub fn centroid(&self) -> Point {
        let mut acc = crate::sum::CompensatedVec::default();
        for (p, w) in self.positions.iter().zip(&self.weights) {
            acc.add_scaled(p, *w);
        }
        crate::geometry::scale(&acc.value(), 1.0 / self.total_mass)
    }

    /// Index of the atom nearest to `x` (lowest index on ties).
    pub fn nearest_atom(&self, x: &Point) -> usize {
        let mut best = (f64::INFINITY, 0usize);
        for (i, p) in self.positions.iter().enumerate() {
            let d = dist2(p, x);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// The measure `μ|_S` on the listed atoms, in the given order.
    pub fn restrict(&self, atoms: &[usize]) -> Result<AtomicMeasure> {
        AtomicMeasure::new(
            self.dim,
            atoms.iter().map(|&i| self.positions[i]).collect(),
            atoms.iter().map(|&i| self.weights[i]).collect(),
        )
    }

    /// Writes the text format `x y [z] weight`, one atom per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# atoms: {} dim: {}", self.len(), self.dim);
        for (p, w) in self.positions.iter().zip(&self.weights) {
            if self.dim == 2 {
                let _ = writeln!(out, "{:e} {:e} {:e}", p[0], p[1], w);
            } else {
                let _ = writeln!(out, "{:e} {:e} {:e} {:e}", p[0], p[1], p[2], w);
            }
        }
        out
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses the measure text format. `origin` labels error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut dim = None;
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<f64> = content
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(line_no, format!("bad number: {e}")))?;
            let d = match fields.len() {
                3 => 2,
                4 => 3,
                k => return Err(err(line_no, format!("expected 3 or 4 fields, got {k}"))),
            };
            match dim {
                None => dim = Some(d),
                Some(prev) if prev != d => {
                    return Err(err(
                        line_no,
                        format!("dimension {d} differs from earlier lines ({prev})"),
                    ))
                }
                _ => {}
            }
            let w = fields[d];
            if !(w > 0.0 && w.is_finite()) {
                return Err(err(line_no, format!("weight must be positive, got {w}")));
            }
            let mut p = [0.0; 3];
            p[..d].copy_from_slice(&fields[..d]);
            if p.iter().any(|c| !c.is_finite()) {
                return Err(err(line_no, "non-finite coordinate".into()));
            }
            positions.push(p);
            weights.push(w);
        }
        let dim = dim.ok_or_else(|| err(0, "no atoms found".into()))?;
        Self::new(dim, positions, weights)
    }
}

/// First ratio of [`RatioSchedule::two_plateau`].
pub const TWO_PLATEAU_GAP: f64 = 1e-4;

/// Contraction ratios of a four-corner Cantor construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSchedule {
    ratios: Vec<f64>,
    corners: usize,
}

impl RatioSchedule {
    pub fn new(ratios: Vec<f64>) -> Result<Self> {
        for (k, r) in ratios.iter().enumerate() {
            if !(*r > 0.0 && *r < 0.5) {
                return Err(invalid(format!(
                    "ratio {k} = {r} is outside (0, 1/2); cells would overlap"
                )));
            }
        }
        Ok(Self { ratios, corners: 4 })
    }

    pub fn uniform(ratio: f64, generations: usize) -> Result<Self> {
        Self::new(vec![ratio; generations])
    }

    /// One tiny contraction followed by quarter ratios: isolated clusters
    /// whose density sits far above the coarse-scale density.
    pub fn two_plateau(generations: usize) -> Result<Self> {
        let mut ratios = vec![TWO_PLATEAU_GAP];
        ratios.resize(generations.max(1), 0.25);
        Self::new(ratios)
    }

    /// Repeats `(ratio, count)` blocks until `generations` ratios are listed.
    pub fn blocks(blocks: &[(f64, usize)], generations: usize) -> Result<Self> {
        if blocks.iter().all(|b| b.1 == 0) {
            return Err(invalid("block lengths must not all be zero"));
        }
        let mut ratios = Vec::with_capacity(generations);
        'outer: loop {
            for &(r, len) in blocks {
                for _ in 0..len {
                    if ratios.len() == generations {
                        break 'outer;
                    }
                    ratios.push(r);
                }
            }
        }
        Self::new(ratios)
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn corners(&self) -> usize {
        self.corners
    }

    /// Side of a generation-`k` cell.
    pub fn side(&self, k: usize) -> f64 {
        self.ratios[..k].iter().product()
    }

    /// Similarity dimension `log 4 / log(1/r)` of a uniform schedule; for a
    /// mixed schedule, the averaged exponent over the listed generations.
    pub fn density_exponent(&self) -> f64 {
        let k = self.ratios.len() as f64;
        let log_side: f64 = self.ratios.iter().map(|r| r.ln()).sum();
        k * (self.corners as f64).ln() / -log_side
    }
}

/// Generation-`N` cell centers of the four-corner Cantor construction on the
/// unit square, each with weight `4^{-N}`. For `dim = 3` the square sits in
/// the `z = 0` plane.
pub fn make_cantor_measure(
    schedule: &RatioSchedule,
    generations: usize,
    dim: usize,
) -> Result<AtomicMeasure> {
    if generations == 0 {
        return Err(invalid("generations must be at least 1"));
    }
    if generations > MAX_CANTOR_GENERATIONS {
        return Err(invalid(format!(
            "{generations} generations exceed the limit of {MAX_CANTOR_GENERATIONS}"
        )));
    }
    if schedule.ratios.len() < generations {
        return Err(invalid(format!(
            "schedule lists {} ratios, {generations} generations requested",
            schedule.ratios.len()
        )));
    }
    let mut corners: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    let mut side = 1.0;
    for &r in &schedule.ratios[..generations] {
        let child = side * r;
        let offset = side - child;
        let mut next = Vec::with_capacity(corners.len() * 4);
        for c in &corners {
            for (dx, dy) in [(0.0, 0.0), (offset, 0.0), (0.0, offset), (offset, offset)] {
                next.push([c[0] + dx, c[1] + dy]);
            }
        }
        corners = next;
        side = child;
    }
    let w = 0.25f64.powi(generations as i32);
    let positions: Vec<Point> = corners
        .iter()
        .map(|c| [c[0] + 0.5 * side, c[1] + 0.5 * side, 0.0])
        .collect();
    let weights = vec![w; positions.len()];
    AtomicMeasure::new(dim, positions, weights)
}

/// Profile of the Lipschitz graph: a tent of height `slope / 2`.
fn tent(t: f64, slope: f64) -> f64 {
    slope * t.min(1.0 - t)
}

/// Equal-weight atoms on the graph of a tent over `[0, 1]` (a ridge over
/// `[0, 1]^2` when `dim = 3`, where `num_atoms` must be a perfect square).
/// The tent has constant `|f'|`, so uniform parameter spacing is uniform in
/// arc length (area), and the total mass is 1.
pub fn make_graph_measure(num_atoms: usize, lipschitz_slope: f64, dim: usize) -> Result<AtomicMeasure> {
    if num_atoms < 2 {
        return Err(invalid("graph measures need at least 2 atoms"));
    }
    if !(lipschitz_slope >= 0.0 && lipschitz_slope.is_finite()) {
        return Err(invalid("slope must be finite and non-negative"));
    }
    let positions: Vec<Point> = match dim {
        2 => (0..num_atoms)
            .map(|i| {
                let t = i as f64 / (num_atoms - 1) as f64;
                [t, tent(t, lipschitz_slope), 0.0]
            })
            .collect(),
        3 => {
            let m = (num_atoms as f64).sqrt().round() as usize;
            if m * m != num_atoms || m < 2 {
                return Err(invalid(format!(
                    "surface graphs need a square atom count, got {num_atoms}"
                )));
            }
            let mut pts = Vec::with_capacity(num_atoms);
            for j in 0..m {
                for i in 0..m {
                    let s = i as f64 / (m - 1) as f64;
                    let t = j as f64 / (m - 1) as f64;
                    pts.push([s, t, tent(s, lipschitz_slope)]);
                }
            }
            pts
        }
        _ => return Err(invalid(format!("dimension must be 2 or 3, got {dim}"))),
    };
    let weights = vec![1.0 / num_atoms as f64; num_atoms];
    AtomicMeasure::new(dim, positions, weights)
}

/// Distance from `x` to the nearest listed atom.
pub fn distance_to_set(mu: &AtomicMeasure, x: &Point, atoms: &[usize]) -> f64 {
    atoms
        .iter()
        .map(|&j| dist(x, mu.position(j)))
        .fold(f64::INFINITY, f64::min)
}
