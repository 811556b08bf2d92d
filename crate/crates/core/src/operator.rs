//! Dense evaluation of `T_ε`, its adjoint, the `L²(μ)` operator norm and a
//! finite-difference harmonicity audit.
//!
//! Every target is summed independently in ascending source order with
//! compensated accumulation, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{dist, dist2, dot, sub, Point};
use crate::kernels::{EllipticKernel, Freeze, FrozenMatrix};
use crate::measure::AtomicMeasure;
use crate::sum::{Compensated, CompensatedVec};

/// Which operator produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    T,
    TDensity,
    TAdjoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub points: Vec<Point>,
    pub values: Vec<Point>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSample {
    pub points: Vec<Point>,
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

/// Atoms carrying vector weights, e.g. `[Tν]ν` or `νe`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMeasure {
    dim: usize,
    positions: Vec<Point>,
    vectors: Vec<Point>,
}

impl VectorMeasure {
    pub fn new(dim: usize, positions: Vec<Point>, vectors: Vec<Point>) -> Result<Self> {
        if positions.len() != vectors.len() {
            return Err(invalid("positions and vectors differ in length"));
        }
        if positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite position"));
        }
        Ok(Self {
            dim,
            positions,
            vectors,
        })
    }

    /// `ν e` for a fixed vector `e`.
    pub fn constant_direction(nu: &AtomicMeasure, e: &Point) -> Self {
        Self {
            dim: nu.dim(),
            positions: nu.positions().to_vec(),
            vectors: nu.weights().iter().map(|w| crate::geometry::scale(e, *w)).collect(),
        }
    }

    /// `[f] ν` for a per-atom vector field `f`.
    pub fn weighted_field(nu: &AtomicMeasure, field: &[Point]) -> Result<Self> {
        if field.len() != nu.len() {
            return Err(invalid("field length differs from atom count"));
        }
        Ok(Self {
            dim: nu.dim(),
            positions: nu.positions().to_vec(),
            vectors: field
                .iter()
                .zip(nu.weights())
                .map(|(f, w)| crate::geometry::scale(f, *w))
                .collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    pub fn vectors(&self) -> &[Point] {
        &self.vectors
    }
}

/// Half the minimum inter-atom distance: truncation then removes only the
/// diagonal on atom targets.
pub fn default_eps(mu: &AtomicMeasure) -> f64 {
    let s = mu.min_spacing();
    if s.is_finite() {
        0.5 * s
    } else {
        0.0
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(invalid(format!("eps must be finite and non-negative, got {eps}")));
    }
    Ok(())
}

fn singular_pair(targets: &[Point], sources: &[Point], eps: f64) -> Result<()> {
    if eps > 0.0 {
        return Ok(());
    }
    let tree = crate::spatial::KdTree::unweighted(sources);
    for (t, x) in targets.iter().enumerate() {
        if let Some((j, d)) = tree.nearest(x) {
            if d == 0.0 {
                return Err(Error::Singular {
                    target: t,
                    source_index: j,
                    eps,
                });
            }
        }
    }
    Ok(())
}

/// `Σ_{|x − y_j| > ε} K̃(x, y_j) w_j` for every target `x`.
pub fn apply_weighted(
    positions: &[Point],
    weights: &[f64],
    kern: &EllipticKernel,
    targets: &[Point],
    eps: f64,
) -> Result<Vec<Point>> {
    check_eps(eps)?;
    singular_pair(targets, positions, eps)?;
    let eps2 = eps * eps;
    let per_source: Option<Vec<FrozenMatrix>> = match kern.freeze_mode() {
        Freeze::FirstArgument => None,
        Freeze::SecondArgument => Some(positions.iter().map(|y| kern.frozen_at(y)).collect()),
    };
    Ok(targets
        .par_iter()
        .map(|x| {
            let own = kern.frozen_at(x);
            let mut acc = CompensatedVec::default();
            for (j, (y, w)) in positions.iter().zip(weights).enumerate() {
                if dist2(x, y) <= eps2 || *w == 0.0 {
                    continue;
                }
                let m = per_source.as_ref().map_or(&own, |v| &v[j]);
                acc.add_scaled(&m.grad(&sub(x, y)), *w);
            }
            acc.value()
        })
        .collect())
}

/// `T_ε μ` at the targets.
pub fn apply_t(mu: &AtomicMeasure, kern: &EllipticKernel, targets: &[Point], eps: f64) -> Result<FieldSample> {
    let values = apply_weighted(mu.positions(), mu.weights(), kern, targets, eps)?;
    Ok(FieldSample {
        points: targets.to_vec(),
        values,
        provenance: Provenance::T,
    })
}

/// `T_ε (f μ)` at the targets.
pub fn apply_t_density(
    mu: &AtomicMeasure,
    kern: &EllipticKernel,
    f: &[f64],
    targets: &[Point],
    eps: f64,
) -> Result<FieldSample> {
    if f.len() != mu.len() {
        return Err(invalid(format!(
            "density has {} entries for {} atoms",
            f.len(),
            mu.len()
        )));
    }
    let w: Vec<f64> = mu.weights().iter().zip(f).map(|(w, f)| w * f).collect();
    let values = apply_weighted(mu.positions(), &w, kern, targets, eps)?;
    Ok(FieldSample {
        points: targets.to_vec(),
        values,
        provenance: Provenance::TDensity,
    })
}

/// `T*_ε ω(x) = Σ_{|x − y_j| > ε} K̃(y_j, x) · ω_j`.
pub fn apply_t_adjoint(
    omega: &VectorMeasure,
    kern: &EllipticKernel,
    targets: &[Point],
    eps: f64,
) -> Result<ScalarSample> {
    check_eps(eps)?;
    singular_pair(targets, omega.positions(), eps)?;
    let eps2 = eps * eps;
    let per_source: Option<Vec<FrozenMatrix>> = match kern.freeze_mode() {
        Freeze::FirstArgument => Some(omega.positions.iter().map(|y| kern.frozen_at(y)).collect()),
        Freeze::SecondArgument => None,
    };
    let values = targets
        .par_iter()
        .map(|x| {
            let own = kern.frozen_at(x);
            let mut acc = Compensated::new();
            for (j, (y, v)) in omega.positions.iter().zip(&omega.vectors).enumerate() {
                if dist2(x, y) <= eps2 {
                    continue;
                }
                let m = per_source.as_ref().map_or(&own, |f| &f[j]);
                acc.add(dot(&m.grad(&sub(y, x)), v));
            }
            acc.value()
        })
        .collect();
    Ok(ScalarSample {
        points: targets.to_vec(),
        values,
        provenance: Provenance::TAdjoint,
    })
}

/// Entries are stored when `d · N²` stays below this count.
const DENSE_LIMIT: usize = 20_000_000;
pub const NORM_TOLERANCE: f64 = 1e-6;
pub const NORM_MAX_ITERATIONS: usize = 10_000;

enum NormMatrix<'a> {
    Dense {
        n: usize,
        /// Row-major `(N·d) × N`; entry `(i·d + c, j)`.
        data: Vec<f64>,
        d: usize,
    },
    Implicit {
        pos: &'a [Point],
        sqrt_w: Vec<f64>,
        frozen: Vec<FrozenMatrix>,
        eps2: f64,
        d: usize,
    },
}

impl NormMatrix<'_> {
    /// `u = M v`, `u_i ∈ R^d`.
    fn apply(&self, v: &[f64]) -> Vec<Point> {
        match self {
            NormMatrix::Dense { n, data, d } => (0..*n)
                .into_par_iter()
                .map(|i| {
                    let mut out = [0.0; 3];
                    for (c, o) in out.iter_mut().enumerate().take(*d) {
                        let row = &data[(i * d + c) * n..(i * d + c + 1) * n];
                        *o = crate::sum::dot(row, v);
                    }
                    out
                })
                .collect(),
            NormMatrix::Implicit {
                pos,
                sqrt_w,
                frozen,
                eps2,
                ..
            } => (0..pos.len())
                .into_par_iter()
                .map(|i| {
                    let mut acc = CompensatedVec::default();
                    for j in 0..pos.len() {
                        if i == j || dist2(&pos[i], &pos[j]) <= *eps2 {
                            continue;
                        }
                        let k = frozen[i].grad(&sub(&pos[i], &pos[j]));
                        acc.add_scaled(&k, sqrt_w[i] * sqrt_w[j] * v[j]);
                    }
                    acc.value()
                })
                .collect(),
        }
    }

    /// `z = Mᵀ u`.
    fn apply_t(&self, u: &[Point]) -> Vec<f64> {
        match self {
            NormMatrix::Dense { n, data, d } => (0..*n)
                .into_par_iter()
                .map(|j| {
                    let mut acc = Compensated::new();
                    for (i, ui) in u.iter().enumerate() {
                        for c in 0..*d {
                            acc.add(data[(i * d + c) * n + j] * ui[c]);
                        }
                    }
                    acc.value()
                })
                .collect(),
            NormMatrix::Implicit {
                pos,
                sqrt_w,
                frozen,
                eps2,
                d,
            } => (0..pos.len())
                .into_par_iter()
                .map(|j| {
                    let mut acc = Compensated::new();
                    for i in 0..pos.len() {
                        if i == j || dist2(&pos[i], &pos[j]) <= *eps2 {
                            continue;
                        }
                        let k = frozen[i].grad(&sub(&pos[i], &pos[j]));
                        let s: f64 = (0..*d).map(|c| k[c] * u[i][c]).sum();
                        acc.add(s * sqrt_w[i] * sqrt_w[j]);
                    }
                    acc.value()
                })
                .collect(),
        }
    }
}

/// Largest singular value of `[K̃(x_i, x_j) √(w_i w_j)]_{|x_i − x_j| > ε}`,
/// the norm of `T_ε` on `L²(μ)`, by power iteration on the normal matrix.
pub fn operator_norm_estimate(mu: &AtomicMeasure, kern: &EllipticKernel, eps: f64) -> Result<f64> {
    if mu.len() < 2 {
        return Err(invalid("operator norm needs at least two atoms"));
    }
    if !(eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    let n = mu.len();
    let d = mu.dim();
    let pos = mu.positions();
    let sqrt_w: Vec<f64> = mu.weights().iter().map(|w| w.sqrt()).collect();
    let frozen: Vec<FrozenMatrix> = match kern.freeze_mode() {
        Freeze::FirstArgument => pos.iter().map(|x| kern.frozen_at(x)).collect(),
        Freeze::SecondArgument => {
            return Err(invalid("operator norm uses the first-argument freezing"));
        }
    };
    let eps2 = eps * eps;
    let matrix = if d * n * n <= DENSE_LIMIT {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut block = vec![0.0; d * n];
                for j in 0..n {
                    if i == j || dist2(&pos[i], &pos[j]) <= eps2 {
                        continue;
                    }
                    let k = frozen[i].grad(&sub(&pos[i], &pos[j]));
                    for c in 0..d {
                        block[c * n + j] = k[c] * sqrt_w[i] * sqrt_w[j];
                    }
                }
                block
            })
            .collect();
        NormMatrix::Dense {
            n,
            data: rows.concat(),
            d,
        }
    } else {
        NormMatrix::Implicit {
            pos,
            sqrt_w,
            frozen,
            eps2,
            d,
        }
    };
    power_iteration(&matrix, n)
}

fn power_iteration(m: &NormMatrix<'_>, n: usize) -> Result<f64> {
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut prev = f64::NAN;
    let mut gap = f64::INFINITY;
    for _ in 0..NORM_MAX_ITERATIONS {
        let u = m.apply(&v);
        // Rayleigh quotient of the normal matrix at the unit vector v
        let rayleigh = crate::sum::sum(u.iter().map(|x| dot(x, x)));
        if rayleigh == 0.0 {
            return Ok(0.0);
        }
        if prev.is_finite() {
            gap = (rayleigh - prev).abs() / rayleigh;
            if gap < NORM_TOLERANCE {
                return Ok(rayleigh.sqrt());
            }
        }
        prev = rayleigh;
        let z = m.apply_t(&u);
        let nz = crate::sum::dot(&z, &z).sqrt();
        if nz == 0.0 {
            return Ok(0.0);
        }
        for (vi, zi) in v.iter_mut().zip(&z) {
            *vi = zi / nz;
        }
    }
    Err(Error::NoConvergence {
        iterations: NORM_MAX_ITERATIONS,
        gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicityReport {
    /// `−div(A*(p) ∇ T*ω)(p)` by nested central differences.
    pub residual: f64,
    /// `|residual| · dist(p, supp ω)^d`.
    pub normalized: f64,
}

/// Finite-difference audit of `L*`-harmonicity of `T*ω` away from `supp ω`.
pub fn harmonicity_check(
    omega: &VectorMeasure,
    kern: &EllipticKernel,
    probe: &Point,
    h: f64,
) -> Result<HarmonicityReport> {
    if !(h > 0.0) {
        return Err(invalid("step must be positive"));
    }
    let d = kern.dim();
    let dist_supp = omega
        .positions
        .iter()
        .map(|y| dist(y, probe))
        .fold(f64::INFINITY, f64::min);
    if omega.is_empty() {
        return Ok(HarmonicityReport {
            residual: 0.0,
            normalized: 0.0,
        });
    }
    if dist_supp <= 10.0 * h {
        return Err(invalid(format!(
            "probe at distance {dist_supp} from the support; need more than {}",
            10.0 * h
        )));
    }
    let u = |x: &Point| -> Result<f64> { Ok(apply_t_adjoint(omega, kern, std::slice::from_ref(x), 0.0)?.values[0]) };
    let shift = |x: &Point, axis: usize, s: f64| {
        let mut y = *x;
        y[axis] += s;
        y
    };
    // flux component i at x: Σ_j a_ji(x) ∂_j u(x), A* = Aᵀ
    let flux = |x: &Point, i: usize| -> Result<f64> {
        let a = kern.field().eval(x);
        let mut acc = 0.0;
        for j in 0..d {
            let du = (u(&shift(x, j, h))? - u(&shift(x, j, -h))?) / (2.0 * h);
            acc += a.get(j, i) * du;
        }
        Ok(acc)
    };
    let mut div = 0.0;
    for i in 0..d {
        div += (flux(&shift(probe, i, h), i)? - flux(&shift(probe, i, -h), i)?) / (2.0 * h);
    }
    let residual = -div;
    Ok(HarmonicityReport {
        residual,
        normalized: residual.abs() * dist_supp.powi(d as i32),
    })
}
