//! The functional `F(g) = λ ‖g‖∞ ‖σ‖ + ∫ |T(gσ)|² g dσ` on the admissible
//! class `{g ≥ 0, ∫ g dσ = ‖σ‖}`, its minimizer `b`, and the first-order
//! audits on `ν = bσ`.
//!
//! `g` lives on the quadrature nodes of `σ`. `T(gσ)` at a node skips the
//! node itself.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::filtration::SmoothedMeasure;
use crate::geometry::{dot, norm, Ball, Point};
use crate::kernels::{EllipticKernel, MatrixField};
use crate::sum::{Compensated, CompensatedVec};

/// Largest node count stored densely.
pub const MAX_NODES: usize = 4096;

/// Kernel entries `K̃(x_i, x_j)` between the nodes of `σ`, with zero
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSystem {
    dim: usize,
    positions: Vec<Point>,
    weights: Vec<f64>,
    kmat: Vec<Point>,
    total: f64,
}

impl NodeSystem {
    pub fn from_measure(sigma: &SmoothedMeasure, kern: &EllipticKernel) -> Result<Self> {
        let nu = sigma.as_measure()?;
        Self::from_nodes(nu.positions().to_vec(), nu.weights().to_vec(), kern)
    }

    pub fn from_nodes(positions: Vec<Point>, weights: Vec<f64>, kern: &EllipticKernel) -> Result<Self> {
        let n = positions.len();
        if n > MAX_NODES {
            return Err(invalid(format!(
                "{n} nodes exceed the dense limit of {MAX_NODES}"
            )));
        }
        let kmat: Vec<Point> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let frozen = kern.frozen_at(&positions[i]);
                let positions = &positions;
                (0..n).map(move |j| {
                    if i == j || positions[i] == positions[j] {
                        [0.0; 3]
                    } else {
                        frozen.grad(&crate::geometry::sub(&positions[i], &positions[j]))
                    }
                })
            })
            .collect();
        Self::from_parts(kern.dim(), positions, weights, kmat)
    }

    /// Hand-built system; `kmat[i * n + j]` is `K(x_i, x_j)`.
    pub fn from_parts(dim: usize, positions: Vec<Point>, weights: Vec<f64>, kmat: Vec<Point>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(invalid("σ has no nodes"));
        }
        if positions.len() != n || kmat.len() != n * n {
            return Err(invalid("node system sizes are inconsistent"));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(invalid("node weights must be positive"));
        }
        let total = crate::sum::sum(weights.iter().copied());
        Ok(Self {
            dim,
            positions,
            weights,
            kmat,
            total,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `‖σ‖`.
    pub fn total_mass(&self) -> f64 {
        self.total
    }

    fn k(&self, i: usize, j: usize) -> &Point {
        &self.kmat[i * self.len() + j]
    }

    /// `T(gσ)` at every node.
    pub fn apply(&self, g: &[f64]) -> Vec<Point> {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = CompensatedVec::default();
                for j in 0..n {
                    let s = g[j] * self.weights[j];
                    if s != 0.0 {
                        acc.add_scaled(self.k(i, j), s);
                    }
                }
                acc.value()
            })
            .collect()
    }

    /// `T*ω(x_k) = Σ_i K(x_i, x_k) · ω_i` for node vectors `ω`.
    pub fn adjoint(&self, omega: &[Point]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|k| {
                let mut acc = Compensated::new();
                for (i, o) in omega.iter().enumerate() {
                    acc.add(dot(self.k(i, k), o));
                }
                acc.value()
            })
            .collect()
    }

    /// `ν(B)` for `ν = gσ`.
    pub fn mass_in(&self, g: &[f64], ball: &Ball) -> f64 {
        crate::sum::sum(
            self.positions
                .iter()
                .zip(g.iter().zip(&self.weights))
                .filter(|(p, _)| ball.contains(p))
                .map(|(_, (g, w))| g * w),
        )
    }

    /// `∫ g dσ`.
    pub fn integral(&self, g: &[f64]) -> f64 {
        crate::sum::dot(g, &self.weights)
    }

    fn check(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.len() {
            return Err(invalid(format!(
                "g has {} values for {} nodes",
                g.len(),
                self.len()
            )));
        }
        if let Some(i) = g.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid(format!("g is negative or non-finite at node {i}")));
        }
        Ok(())
    }

    /// `∫ |T(gσ)|² g dσ` and its density gradient
    /// `p = |T(gσ)|² + 2 T*([T(gσ)] gσ)`.
    fn smooth_part(&self, g: &[f64]) -> (f64, Vec<f64>, Vec<Point>) {
        let v = self.apply(g);
        let phi = crate::sum::sum(
            v.iter()
                .zip(g.iter().zip(&self.weights))
                .map(|(v, (g, w))| dot(v, v) * g * w),
        );
        let omega: Vec<Point> = v
            .iter()
            .zip(g.iter().zip(&self.weights))
            .map(|(v, (g, w))| crate::geometry::scale(v, g * w))
            .collect();
        let adj = self.adjoint(&omega);
        let p = v.iter().zip(&adj).map(|(v, a)| dot(v, v) + 2.0 * a).collect();
        (phi, p, v)
    }

    fn smooth_value(&self, g: &[f64]) -> f64 {
        let v = self.apply(g);
        crate::sum::sum(
            v.iter()
                .zip(g.iter().zip(&self.weights))
                .map(|(v, (g, w))| dot(v, v) * g * w),
        )
    }
}

fn sup(g: &[f64]) -> f64 {
    g.iter().copied().fold(0.0, f64::max)
}

/// `F(g)`.
pub fn functional_f(g: &[f64], sys: &NodeSystem, lambda: f64) -> Result<f64> {
    sys.check(g)?;
    Ok(lambda * sup(g) * sys.total_mass() + sys.smooth_value(g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimizeOptions {
    /// Cap on projected-gradient steps over the whole run.
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Cap values `m = ‖g‖∞` scanned before refinement.
    #[serde(default = "default_grid")]
    pub cap_grid: usize,
    /// Stationarity tolerance of the inner solves, relative to `F(1)`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_budget() -> usize {
    200_000
}

fn default_grid() -> usize {
    24
}

fn default_tolerance() -> f64 {
    1e-10
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            budget: default_budget(),
            cap_grid: default_grid(),
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimizerReport {
    pub lambda: f64,
    /// The minimizer `b` on the nodes.
    pub b: Vec<f64>,
    pub f_init: f64,
    pub f_final: f64,
    pub sup_b: f64,
    /// `|∫ b dσ − ‖σ‖|`.
    pub constraint_residual: f64,
    /// `max(|Tν|² + 2T*([Tν]ν) − 6λ)` over nodes with `b > 1e−6`.
    pub pointwise_defect: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `∫ |Tσ|² dσ ≤ λ ‖σ‖`.
    pub hypothesis_holds: bool,
    /// Best `F` after each cap value tried.
    pub trace: Vec<f64>,
}

/// Weighted projection onto `{0 ≤ g ≤ m, Σ w g = s}`:
/// `g = clip(h − θ, 0, m)` with `θ` found by bisection.
fn project(h: &[f64], w: &[f64], m: f64, s: f64) -> Vec<f64> {
    let mass = |theta: f64| -> f64 {
        crate::sum::sum(h.iter().zip(w).map(|(h, w)| w * (h - theta).clamp(0.0, m)))
    };
    let hmax = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hmin = h.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (hmin - m, hmax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if mass(mid) > s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut g: Vec<f64> = h.iter().map(|h| (h - 0.5 * (lo + hi)).clamp(0.0, m)).collect();
    // remove the bisection remainder on the free nodes
    let free_mass: f64 = g
        .iter()
        .zip(w)
        .filter(|(g, _)| **g > 0.0 && **g < m)
        .map(|(_, w)| *w)
        .sum();
    if free_mass > 0.0 {
        let shift = (s - crate::sum::dot(&g, w)) / free_mass;
        for v in g.iter_mut() {
            if *v > 0.0 && *v < m {
                *v = (*v + shift).clamp(0.0, m);
            }
        }
    }
    g
}

struct Inner {
    g: Vec<f64>,
    phi: f64,
    steps: usize,
    stationary: bool,
}

/// Projected gradient with backtracking for the smooth part on the
/// capped class.
fn solve_capped(sys: &NodeSystem, m: f64, start: &[f64], tol: f64, max_steps: usize) -> Inner {
    let w = sys.weights();
    let s = sys.total_mass();
    let mut g = project(start, w, m, s);
    let (mut phi, mut p, _) = sys.smooth_part(&g);
    let pscale = p.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let mut step = 0.1 * m / pscale;
    let mut steps = 0;
    let mut stationary = false;
    while steps < max_steps && !stationary {
        steps += 1;
        let mut accepted = false;
        for _ in 0..60 {
            let h: Vec<f64> = g.iter().zip(&p).map(|(g, p)| g - step * p).collect();
            let cand = project(&h, w, m, s);
            let d: Vec<f64> = cand.iter().zip(&g).map(|(c, g)| c - g).collect();
            let lin = crate::sum::sum(d.iter().zip(&p).zip(w).map(|((d, p), w)| d * p * w));
            let d2 = crate::sum::sum(d.iter().zip(w).map(|(d, w)| d * d * w));
            if d2 == 0.0 {
                break;
            }
            let phi_c = sys.smooth_value(&cand);
            if phi_c <= phi + lin + d2 / (2.0 * step) {
                let gap = phi - phi_c;
                g = cand;
                (phi, p, _) = sys.smooth_part(&g);
                step *= 2.0;
                accepted = true;
                stationary = gap <= tol * phi.abs().max(f64::MIN_POSITIVE);
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            stationary = true;
        }
    }
    Inner {
        g,
        phi,
        steps,
        stationary,
    }
}

/// Minimizes `F` over the admissible class by scanning the cap
/// `m = ‖g‖∞`: for each `m` the smooth part is minimized over
/// `{0 ≤ g ≤ m, ∫ g dσ = ‖σ‖}` (from a warm start and from `g ≡ 1`), and
/// the best cap is refined by golden-section search. Returns the best
/// iterate seen.
pub fn minimize_f(sys: &NodeSystem, lambda: f64, opts: &MinimizeOptions) -> Result<MinimizerReport> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    if opts.cap_grid < 2 {
        return Err(invalid("cap_grid must be at least 2"));
    }
    let n = sys.len();
    let s = sys.total_mass();
    let ones = vec![1.0; n];
    let f_init = functional_f(&ones, sys, lambda)?;
    let phi1 = f_init - lambda * s;
    let wmin = sys.weights().iter().copied().fold(f64::INFINITY, f64::min);
    let m_hi = (f_init / (lambda * s)).min(s / wmin);
    let tol = opts.tolerance;

    let mut best_g = ones.clone();
    let mut best_f = f_init;
    let mut trace = vec![f_init];
    let mut used = 0usize;
    let mut all_stationary = true;

    let eval_cap = |m: f64, warm: &[f64], used: &mut usize| -> (f64, Vec<f64>, bool) {
        let left = opts.budget.saturating_sub(*used).max(1);
        let a = solve_capped(sys, m, warm, tol, left);
        *used += a.steps;
        let left = opts.budget.saturating_sub(*used).max(1);
        let b = solve_capped(sys, m, &ones, tol, left);
        *used += b.steps;
        let (inner, ok) = if a.phi <= b.phi { (a.g, a.stationary) } else { (b.g, b.stationary) };
        let f = lambda * sup(&inner) * s + sys.smooth_value(&inner);
        (f, inner, ok)
    };

    if m_hi > 1.0 && n > 1 {
        let k = opts.cap_grid;
        let caps: Vec<f64> = (0..k)
            .map(|i| 1.0 + (m_hi - 1.0) * (i as f64 / (k - 1) as f64))
            .collect();
        let mut values = Vec::with_capacity(k);
        let mut warm = ones.clone();
        for &m in &caps {
            let (f, g, ok) = eval_cap(m, &warm, &mut used);
            all_stationary &= ok;
            if f < best_f {
                best_f = f;
                best_g = g.clone();
            }
            trace.push(best_f);
            values.push(f);
            warm = g;
        }
        let i = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (mut a, mut b) = (caps[i.saturating_sub(1)], caps[(i + 1).min(k - 1)]);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let (mut fc, gc, _) = eval_cap(c, &best_g.clone(), &mut used);
        let (mut fd, gd, _) = eval_cap(d, &best_g.clone(), &mut used);
        for (f, g) in [(fc, gc), (fd, gd)] {
            if f < best_f {
                best_f = f;
                best_g = g;
            }
        }
        for _ in 0..40 {
            if b - a <= 1e-9 * m_hi || used >= opts.budget {
                break;
            }
            let (f, g, ok);
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                (f, g, ok) = eval_cap(c, &best_g.clone(), &mut used);
                fc = f;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                (f, g, ok) = eval_cap(d, &best_g.clone(), &mut used);
                fd = f;
            }
            all_stationary &= ok;
            if f < best_f {
                best_f = f;
                best_g = g;
            }
            trace.push(best_f);
        }
    }

    let f_final = functional_f(&best_g, sys, lambda)?;
    let (_, p, _) = sys.smooth_part(&best_g);
    let pointwise_defect = pointwise_max(&best_g, &p, lambda);
    Ok(MinimizerReport {
        lambda,
        sup_b: sup(&best_g),
        constraint_residual: (sys.integral(&best_g) - s).abs(),
        f_init,
        f_final,
        pointwise_defect,
        iterations: used,
        converged: all_stationary && used < opts.budget,
        hypothesis_holds: phi1 <= lambda * s,
        trace,
        b: best_g,
    })
}

fn pointwise_max(b: &[f64], p: &[f64], lambda: f64) -> f64 {
    b.iter()
        .zip(p)
        .filter(|(b, _)| **b > 1e-6)
        .map(|(_, p)| p - 6.0 * lambda)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `|Tν|² + 2T*([Tν]ν) − 6λ` at every node, for `ν = bσ`.
pub fn pointwise_defects(b: &[f64], sys: &NodeSystem, lambda: f64) -> Result<Vec<f64>> {
    sys.check(b)?;
    let (_, p, _) = sys.smooth_part(b);
    Ok(p.into_iter().map(|p| p - 6.0 * lambda).collect())
}

/// Maximum of [`pointwise_defects`] over nodes with `b > 1e−6`.
pub fn pointwise_inequality_test(b: &[f64], sys: &NodeSystem, lambda: f64) -> Result<f64> {
    let d = pointwise_defects(b, sys, lambda)?;
    Ok(b.iter()
        .zip(&d)
        .filter(|(b, _)| **b > 1e-6)
        .map(|(_, d)| *d)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `C ℓ(Q)^α` with `C` the Hölder constant of the field: the error term
/// coming from the asymmetry of the kernel, zero for constant fields.
pub fn holder_allowance(field: &MatrixField, ell_q: f64) -> f64 {
    field.holder_constant() * ell_q.powf(field.alpha())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtendedScan {
    /// `|Tν(x)|² + 4T*([Tν]ν)(x)` per probe.
    pub values: Vec<f64>,
    pub max_value: f64,
    pub argmax: usize,
    /// `λ + C ℓ(Q)^α`.
    pub reference: f64,
    pub ratio: f64,
}

/// Pairs closer than this are treated as the same point.
const SELF_EXCLUSION: f64 = f64::MIN_POSITIVE;

/// Scans `|Tν|² + 4T*([Tν]ν)` over arbitrary probes (report only).
pub fn extended_inequality_scan(
    b: &[f64],
    sys: &NodeSystem,
    kern: &EllipticKernel,
    lambda: f64,
    probes: &[Point],
    ell_q: f64,
) -> Result<ExtendedScan> {
    sys.check(b)?;
    if probes.is_empty() {
        return Err(invalid("no probes"));
    }
    let nu_w: Vec<f64> = b.iter().zip(sys.weights()).map(|(b, w)| b * w).collect();
    let tnu_nodes = sys.apply(b);
    let omega: Vec<Point> = tnu_nodes
        .iter()
        .zip(&nu_w)
        .map(|(v, w)| crate::geometry::scale(v, *w))
        .collect();
    let tnu = crate::operator::apply_weighted(sys.positions(), &nu_w, kern, probes, SELF_EXCLUSION)?;
    let om = crate::operator::VectorMeasure::new(sys.dim(), sys.positions().to_vec(), omega)?;
    let adj = crate::operator::apply_t_adjoint(&om, kern, probes, SELF_EXCLUSION)?.values;
    let values: Vec<f64> = tnu.iter().zip(&adj).map(|(v, a)| dot(v, v) + 4.0 * a).collect();
    let (argmax, max_value) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let reference = lambda + holder_allowance(kern.field(), ell_q);
    Ok(ExtendedScan {
        values,
        max_value,
        argmax,
        reference,
        ratio: max_value / reference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariationReport {
    pub g0: f64,
    /// One-sided difference quotient from `t ∈ {0, h, 2h}`.
    pub quotient: f64,
    /// `G′(0⁺)` in closed form.
    pub derivative: f64,
    pub nu_ball: f64,
}

/// Step of the difference quotient.
pub const VARIATION_STEP: f64 = 1e-4;

/// `b_t = b (1 − t χ_B) + t b ν(B)/‖ν‖`.
pub fn varied(b: &[f64], sys: &NodeSystem, ball: &Ball, t: f64) -> Vec<f64> {
    let nu_b = sys.mass_in(b, ball);
    let total = sys.integral(b);
    b.iter()
        .zip(sys.positions())
        .map(|(b, p)| {
            let chi = if ball.contains(p) { 1.0 } else { 0.0 };
            b * (1.0 - t * chi) + t * b * nu_b / total
        })
        .collect()
}

/// `G(t) = λ ‖b‖∞ (1 + t ν(B)/‖ν‖) ‖ν‖ + ∫ |Tν_t|² dν_t`.
pub fn variation_g(b: &[f64], sys: &NodeSystem, lambda: f64, ball: &Ball, t: f64) -> f64 {
    let total = sys.integral(b);
    let nu_b = sys.mass_in(b, ball);
    let bt = varied(b, sys, ball, t);
    lambda * sup(b) * (1.0 + t * nu_b / total) * total + sys.smooth_value(&bt)
}

/// `G′(0⁺)` for the variation of `b` on `ball`.
pub fn variation_derivative_check(b: &[f64], sys: &NodeSystem, lambda: f64, ball: &Ball) -> Result<VariationReport> {
    sys.check(b)?;
    let nu_b = sys.mass_in(b, ball);
    if nu_b <= 0.0 {
        return Err(invalid("ball misses the support of ν"));
    }
    let h = VARIATION_STEP;
    let g = [0.0, h, 2.0 * h].map(|t| variation_g(b, sys, lambda, ball, t));
    let quotient = (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h);
    let total = sys.integral(b);
    let (_, p, _) = sys.smooth_part(b);
    let mut acc = Compensated::new();
    for ((pk, bk), (w, x)) in p.iter().zip(b).zip(sys.weights().iter().zip(sys.positions())) {
        let chi = if ball.contains(x) { 1.0 } else { 0.0 };
        acc.add(pk * bk * w * (nu_b / total - chi));
    }
    let derivative = lambda * sup(b) * nu_b + acc.value();
    Ok(VariationReport {
        g0: g[0],
        quotient,
        derivative,
        nu_ball: nu_b,
    })
}

/// `|T(gσ)|` at the nodes, for reports.
pub fn field_magnitudes(g: &[f64], sys: &NodeSystem) -> Vec<f64> {
    sys.apply(g).iter().map(norm).collect()
}
