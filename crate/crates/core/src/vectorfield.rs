//! Bump functions `φ_R`, the fields `g_R = A*∇φ_R` and `Ψ_Q`, the
//! reproducing-formula audit, the `HD₀`/`HD₁` selection and the numeric
//! chain that ends in the contradiction ratio.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::geometry::{dist, dot, norm, scale, sub, Ball, Point};
use crate::kernels::{EllipticKernel, MatrixField};
use crate::lattice::DmLattice;
use crate::measure::AtomicMeasure;
use crate::operator::{apply_t_adjoint, apply_weighted, VectorMeasure};
use crate::sum::Compensated;
use crate::variational::{holder_allowance, NodeSystem};

/// `max s'(t)` of the quintic step `s(t) = 10t³ − 15t⁴ + 6t⁵`.
pub const QUINTIC_SLOPE: f64 = 1.875;

/// Radial bump equal to 1 on `1.5 B_R` and 0 outside `2 B_R`, with a
/// quintic step across the annulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BumpField {
    pub cube: usize,
    pub center: Point,
    /// Radius of `1.5 B_R`.
    pub inner: f64,
    /// Radius of `2 B_R`.
    pub outer: f64,
    /// `ℓ(R)`.
    pub side_length: f64,
}

fn quintic(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

fn quintic_slope(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

impl BumpField {
    /// `B_R = B(center, big_radius)`.
    pub fn new(cube: usize, center: Point, big_radius: f64, side_length: f64) -> Result<Self> {
        if !(big_radius > 0.0 && big_radius.is_finite()) {
            return Err(invalid(format!("bump radius must be positive, got {big_radius}")));
        }
        Ok(Self {
            cube,
            center,
            inner: 1.5 * big_radius,
            outer: 2.0 * big_radius,
            side_length,
        })
    }

    pub fn width(&self) -> f64 {
        self.outer - self.inner
    }

    pub fn value(&self, x: &Point) -> f64 {
        let r = dist(x, &self.center);
        if r <= self.inner {
            1.0
        } else if r >= self.outer {
            0.0
        } else {
            1.0 - quintic((r - self.inner) / self.width())
        }
    }

    pub fn grad(&self, x: &Point) -> Point {
        let z = sub(x, &self.center);
        let r = norm(&z);
        if r <= self.inner || r >= self.outer {
            return [0.0; 3];
        }
        let ds = -quintic_slope((r - self.inner) / self.width()) / self.width();
        scale(&z, ds / r)
    }

    /// `‖∇φ_R‖∞` in closed form.
    pub fn gradient_bound(&self) -> f64 {
        QUINTIC_SLOPE / self.width()
    }

    /// `‖∇φ_R‖∞ ℓ(R)`.
    pub fn bump_constant(&self) -> f64 {
        self.gradient_bound() * self.side_length
    }
}

/// `φ_R` anchored at cube `r`.
pub fn bump(lat: &DmLattice, r: usize) -> BumpField {
    let q = lat.cube(r);
    BumpField::new(r, q.center, 28.0 * q.radius, q.side_length).expect("lattice radii are positive")
}

/// Vector field sampled on a regular volume grid, with the midpoint rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub dim: usize,
    /// Grid nodes carrying a nonzero value.
    pub nodes: Vec<Point>,
    pub values: Vec<Point>,
    pub cell_volume: f64,
    pub pitch: f64,
    /// Box `origin + [0, cells·pitch]^d`.
    pub origin: Point,
    pub cells: usize,
}

impl SampledField {
    /// Values times cell volume, as a vector measure.
    pub fn as_vector_measure(&self) -> Result<VectorMeasure> {
        VectorMeasure::new(
            self.dim,
            self.nodes.clone(),
            self.values.iter().map(|v| scale(v, self.cell_volume)).collect(),
        )
    }

    /// `∫ |g|`.
    pub fn l1(&self) -> f64 {
        crate::sum::sum(self.values.iter().map(norm)) * self.cell_volume
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().map(norm).fold(0.0, f64::max)
    }

    /// Distance from `x` to the nearest node of the full grid.
    pub fn grid_distance(&self, x: &Point) -> f64 {
        let mut s = 0.0;
        for k in 0..self.dim {
            let u = (x[k] - self.origin[k]) / self.pitch - 0.5;
            let i = u.round().clamp(0.0, (self.cells - 1) as f64);
            let d = (u - i) * self.pitch;
            s += d * d;
        }
        s.sqrt()
    }
}

/// Grid pitch as a fraction of the annulus width.
pub const DEFAULT_REFINE: usize = 8;

/// `g_R = A(x)ᵀ ∇φ_R(x)` at the cell centers of a grid over the box around
/// `2 B_R`, pitch at most `width / refine`.
pub fn g_field(field: &MatrixField, bump: &BumpField, refine: usize) -> Result<SampledField> {
    if refine == 0 {
        return Err(invalid("refine must be positive"));
    }
    let dim = field.dim();
    let side = 2.0 * bump.outer;
    let cells = (side / (bump.width() / refine as f64)).ceil() as usize;
    let pitch = side / cells as f64;
    let mut origin = [0.0; 3];
    for k in 0..dim {
        origin[k] = bump.center[k] - bump.outer;
    }
    let nz = if dim == 3 { cells } else { 1 };
    let samples: Vec<(Point, Point)> = (0..cells * cells * nz)
        .into_par_iter()
        .filter_map(|idx| {
            let i = idx % cells;
            let j = (idx / cells) % cells;
            let l = idx / (cells * cells);
            let mut x = [
                origin[0] + (i as f64 + 0.5) * pitch,
                origin[1] + (j as f64 + 0.5) * pitch,
                0.0,
            ];
            if dim == 3 {
                x[2] = origin[2] + (l as f64 + 0.5) * pitch;
            }
            let gphi = bump.grad(&x);
            if gphi == [0.0; 3] {
                return None;
            }
            let a = field.eval(&x);
            // A* ∇φ
            let mut v = [0.0; 3];
            for (r, vr) in v.iter_mut().enumerate().take(dim) {
                for (c, gc) in gphi.iter().enumerate().take(dim) {
                    *vr += a.get(c, r) * gc;
                }
            }
            Some((x, v))
        })
        .collect();
    let (nodes, values) = samples.into_iter().unzip();
    Ok(SampledField {
        dim,
        nodes,
        values,
        cell_volume: pitch.powi(dim as i32),
        pitch,
        origin,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproducingReport {
    pub values: Vec<f64>,
    pub targets: Vec<f64>,
    pub residual: f64,
    pub pitch: f64,
}

/// `max |T*[g_R dL](x) − φ_R(x)|` over the probes.
pub fn reproducing_check(
    kern: &EllipticKernel,
    bump: &BumpField,
    g: &SampledField,
    probes: &[Point],
) -> Result<ReproducingReport> {
    for (i, p) in probes.iter().enumerate() {
        let d = g.grid_distance(p);
        if d < 0.5 * g.pitch {
            return Err(invalid(format!(
                "probe {i} lies {d:e} from a grid node (half pitch {:e})",
                0.5 * g.pitch
            )));
        }
    }
    let values = if g.nodes.is_empty() {
        vec![0.0; probes.len()]
    } else {
        apply_t_adjoint(&g.as_vector_measure()?, kern, probes, 0.0)?.values
    };
    let targets: Vec<f64> = probes.iter().map(|p| bump.value(p)).collect();
    let residual = values
        .iter()
        .zip(&targets)
        .map(|(v, t)| (v - t).abs())
        .fold(0.0, f64::max);
    Ok(ReproducingReport {
        values,
        targets,
        residual,
        pitch: g.pitch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hd1Selection {
    pub hd0: Vec<usize>,
    pub hd1: Vec<usize>,
    /// `ν(1.5 B_R)` for every cube of `HD(Q)`, in input order.
    pub nu_masses: Vec<f64>,
    /// `ν(9 B_R) / ν(1.5 B_R)` for every cube of `HD₀(Q)`.
    pub growth: Vec<f64>,
    /// `Σ_{R ∈ HD₁} ν(1.5 B_R)`.
    pub captured_mass: f64,
}

fn nu_ball(nu: &AtomicMeasure, c: &Point, r: f64) -> f64 {
    nu.ball_mass(&Ball { center: *c, radius: r })
}

/// `HD₀(Q) = {R : ν(1.5 B_R) ≥ μ(R)/4}` and a greedy Vitali subfamily
/// with pairwise disjoint `3 B_R`, largest `ν(1.5 B_R)` first.
pub fn select_hd1(lat: &DmLattice, hd: &[usize], nu: &AtomicMeasure) -> Hd1Selection {
    let big = |r: usize| 28.0 * lat.cube(r).radius;
    let nu_masses: Vec<f64> = hd
        .iter()
        .map(|&r| nu_ball(nu, &lat.cube(r).center, 1.5 * big(r)))
        .collect();
    let hd0: Vec<usize> = hd
        .iter()
        .zip(&nu_masses)
        .filter(|(r, m)| **m >= 0.25 * lat.cube(**r).mass)
        .map(|(r, _)| *r)
        .collect();
    let mass_of = |r: usize| nu_masses[hd.iter().position(|x| *x == r).unwrap()];
    let growth = hd0
        .iter()
        .map(|&r| nu_ball(nu, &lat.cube(r).center, 9.0 * big(r)) / mass_of(r))
        .collect();
    let mut order = hd0.clone();
    order.sort_by(|a, b| mass_of(*b).total_cmp(&mass_of(*a)).then(a.cmp(b)));
    let mut kept: Vec<usize> = Vec::new();
    for r in order {
        let b = Ball {
            center: lat.cube(r).center,
            radius: 3.0 * big(r),
        };
        let clear = kept.iter().all(|&k| {
            b.disjoint(&Ball {
                center: lat.cube(k).center,
                radius: 3.0 * big(k),
            })
        });
        if clear {
            kept.push(r);
        }
    }
    let captured_mass = crate::sum::sum(kept.iter().map(|&r| mass_of(r)));
    kept.sort_unstable();
    Hd1Selection {
        hd0,
        hd1: kept,
        nu_masses,
        growth,
        captured_mass,
    }
}

/// `Ψ_Q = Σ_{R ∈ HD₁(Q)} g_R`, one sampled summand per cube.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiField {
    pub bumps: Vec<BumpField>,
    pub summands: Vec<SampledField>,
}

impl PsiField {
    pub fn build(lat: &DmLattice, field: &MatrixField, hd1: &[usize], refine: usize) -> Result<Self> {
        let bumps: Vec<BumpField> = hd1.iter().map(|&r| bump(lat, r)).collect();
        let summands = bumps
            .iter()
            .map(|b| g_field(field, b, refine))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bumps, summands })
    }

    /// All nodes with `Ψ_Q` values and cell volumes; the supports are
    /// disjoint, so summands never share a node.
    fn flat(&self) -> (Vec<Point>, Vec<Point>, Vec<f64>) {
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        let mut vol = Vec::new();
        for s in &self.summands {
            nodes.extend_from_slice(&s.nodes);
            values.extend_from_slice(&s.values);
            vol.extend(std::iter::repeat(s.cell_volume).take(s.nodes.len()));
        }
        (nodes, values, vol)
    }

    /// `∫ |Ψ_Q| dL`.
    pub fn l1(&self) -> f64 {
        crate::sum::sum(self.summands.iter().map(|s| s.l1()))
    }

    /// `Σ_R φ_R(x)`.
    pub fn bump_sum(&self, x: &Point) -> f64 {
        self.bumps.iter().map(|b| b.value(x)).sum()
    }

    /// `T(|Ψ_Q| dL)` at the targets.
    pub fn t_of_modulus(&self, kern: &EllipticKernel, targets: &[Point]) -> Result<Vec<Point>> {
        let (nodes, values, vol) = self.flat();
        if nodes.is_empty() {
            return Ok(vec![[0.0; 3]; targets.len()]);
        }
        let w: Vec<f64> = values.iter().zip(&vol).map(|(v, c)| norm(v) * c).collect();
        apply_weighted(&nodes, &w, kern, targets, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiEnergy {
    /// `∫ |T(|Ψ_Q| dL)|² dν`.
    pub integral: f64,
    /// `integral / μ(Q)`.
    pub ratio: f64,
}

/// `∫ |T(|Ψ_Q| dL)|² dν` and its ratio to `μ(Q)`.
pub fn psi_energy_check(psi: &PsiField, nu: &AtomicMeasure, kern: &EllipticKernel, mu_q: f64) -> Result<PsiEnergy> {
    let t = psi.t_of_modulus(kern, nu.positions())?;
    let integral = crate::sum::sum(t.iter().zip(nu.weights()).map(|(v, w)| dot(v, v) * w));
    Ok(PsiEnergy {
        integral,
        ratio: integral / mu_q,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContradictionReport {
    pub lambda: f64,
    pub mu_q: f64,
    pub side_length_q: f64,
    pub nu_mass: f64,
    pub hd_count: usize,
    pub hd0_count: usize,
    pub hd1_count: usize,
    /// `Σ_{HD₁} ν(1.5 B_R)`.
    pub captured_mass: f64,
    /// `Σ_{HD₁} ∫ φ_R dν`.
    pub bump_integral: f64,
    /// `∫ T*[Ψ_Q dL] dν`.
    pub reproduced: f64,
    /// `∫ Tν · Ψ_Q dL`.
    pub dual_pairing: f64,
    /// `∫ |Ψ_Q| dL`.
    pub psi_l1: f64,
    /// `∫ |Tν|² |Ψ_Q| dL`.
    pub weighted_energy: f64,
    /// `C ℓ(Q)^α`.
    pub allowance: f64,
    /// `(λ + C ℓ(Q)^α) ∫ |Ψ_Q| dL`.
    pub term_i: f64,
    /// `|∫ Tν · T(|Ψ_Q| dL) dν|`.
    pub term_ii: f64,
    /// `λ^{1/2} μ(Q)`.
    pub term_ii_reference: f64,
    /// `∫ |T(|Ψ_Q| dL)|² dν`.
    pub psi_energy: f64,
    /// `∫ |Tν|² dν`.
    pub nu_energy: f64,
    /// Left end of the chain: the captured mass.
    pub lhs: f64,
    /// Right end of the chain: `((I + II) ∫ |Ψ_Q|)^{1/2}`.
    pub rhs: f64,
    /// `μ(Q) / ((λ + C ℓ(Q)^α)^{1/4} μ(Q))`.
    pub contradiction_ratio: f64,
}

/// Inputs of [`contradiction_report`].
pub struct ChainInputs<'a> {
    pub lat: &'a DmLattice,
    pub kern: &'a EllipticKernel,
    /// The cube `Q` and its `HD(Q)`.
    pub q: usize,
    pub hd: &'a [usize],
    /// Nodes of `σ` with the minimizer `b`.
    pub sys: &'a NodeSystem,
    pub b: &'a [f64],
    pub lambda: f64,
    pub refine: usize,
}

/// Evaluates every link of the final chain for `ν = bσ`.
pub fn contradiction_report(inp: &ChainInputs) -> Result<ContradictionReport> {
    let ChainInputs {
        lat,
        kern,
        q,
        hd,
        sys,
        b,
        lambda,
        refine,
    } = *inp;
    if b.len() != sys.len() {
        return Err(invalid("b does not match the σ nodes"));
    }
    let cube = lat.cube(q);
    let mu_q = cube.mass;
    let ell = cube.side_length;
    let (pos, w): (Vec<Point>, Vec<f64>) = sys
        .positions()
        .iter()
        .zip(b.iter().zip(sys.weights()))
        .filter(|(_, (b, _))| **b > 0.0)
        .map(|(p, (b, w))| (*p, b * w))
        .unzip();
    let allowance = holder_allowance(kern.field(), ell);
    let contradiction_ratio = 1.0 / (lambda + allowance).powf(0.25);
    if pos.is_empty() {
        return Ok(ContradictionReport {
            lambda,
            mu_q,
            side_length_q: ell,
            nu_mass: 0.0,
            hd_count: hd.len(),
            hd0_count: 0,
            hd1_count: 0,
            captured_mass: 0.0,
            bump_integral: 0.0,
            reproduced: 0.0,
            dual_pairing: 0.0,
            psi_l1: 0.0,
            weighted_energy: 0.0,
            allowance,
            term_i: 0.0,
            term_ii: 0.0,
            term_ii_reference: lambda.sqrt() * mu_q,
            psi_energy: 0.0,
            nu_energy: 0.0,
            lhs: 0.0,
            rhs: 0.0,
            contradiction_ratio,
        });
    }
    let nu = AtomicMeasure::new(lat.dim(), pos, w)?;
    let sel = select_hd1(lat, hd, &nu);
    let psi = PsiField::build(lat, kern.field(), &sel.hd1, refine)?;
    let (nodes, values, vol) = psi.flat();

    // Tν on ν itself (self-excluded) and on the Ψ grid
    let self_ex = f64::MIN_POSITIVE;
    let tnu_nu = apply_weighted(nu.positions(), nu.weights(), kern, nu.positions(), self_ex)?;
    let tnu_grid = if nodes.is_empty() {
        Vec::new()
    } else {
        apply_weighted(nu.positions(), nu.weights(), kern, &nodes, 0.0)?
    };

    let bump_integral = crate::sum::sum(
        nu.positions()
            .iter()
            .zip(nu.weights())
            .map(|(x, w)| psi.bump_sum(x) * w),
    );
    let reproduced = if nodes.is_empty() {
        0.0
    } else {
        let om = VectorMeasure::new(
            lat.dim(),
            nodes.clone(),
            values.iter().zip(&vol).map(|(v, c)| scale(v, *c)).collect(),
        )?;
        let tstar = apply_t_adjoint(&om, kern, nu.positions(), 0.0)?.values;
        crate::sum::sum(tstar.iter().zip(nu.weights()).map(|(t, w)| t * w))
    };
    let mut dual = Compensated::new();
    let mut weighted = Compensated::new();
    for ((t, v), c) in tnu_grid.iter().zip(&values).zip(&vol) {
        dual.add(dot(t, v) * c);
        weighted.add(dot(t, t) * norm(v) * c);
    }
    let psi_l1 = psi.l1();
    let t_abs = psi.t_of_modulus(kern, nu.positions())?;
    let term_ii = crate::sum::sum(
        tnu_nu
            .iter()
            .zip(&t_abs)
            .zip(nu.weights())
            .map(|((a, b), w)| dot(a, b) * w),
    )
    .abs();
    let psi_energy = crate::sum::sum(t_abs.iter().zip(nu.weights()).map(|(v, w)| dot(v, v) * w));
    let nu_energy = crate::sum::sum(tnu_nu.iter().zip(nu.weights()).map(|(v, w)| dot(v, v) * w));
    let term_i = (lambda + allowance) * psi_l1;
    Ok(ContradictionReport {
        lambda,
        mu_q,
        side_length_q: ell,
        nu_mass: nu.total_mass(),
        hd_count: hd.len(),
        hd0_count: sel.hd0.len(),
        hd1_count: sel.hd1.len(),
        captured_mass: sel.captured_mass,
        bump_integral,
        reproduced,
        dual_pairing: dual.value(),
        psi_l1,
        weighted_energy: weighted.value(),
        allowance,
        term_i,
        term_ii,
        term_ii_reference: lambda.sqrt() * mu_q,
        psi_energy,
        nu_energy,
        lhs: sel.captured_mass,
        rhs: ((term_i + term_ii) * psi_l1).sqrt(),
        contradiction_ratio,
    })
}
