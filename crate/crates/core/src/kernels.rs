//! Fundamental solutions of `L_E u = −div(E ∇u)` for constant symmetric
//! matrices, frozen-coefficient kernels for Hölder matrix fields, and
//! numerical audits of their Calderón–Zygmund behaviour.
//!
//! Normalization (`L_E Θ = δ₀`):
//!
//! * `d = 3`: `Θ(x) = (4π √det E)^{-1} ⟨E^{-1}x, x⟩^{-1/2}`
//! * `d = 2`: `Θ(x) = −(2π √det E)^{-1} log ⟨E^{-1}x, x⟩^{1/2}`
//!
//! The constants are pinned by [`weak_form_check`], which integrates
//! `E∇Θ · ∇φ` against a bump and compares with `φ(0)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{add, norm, scale, sub, Point};
use crate::sum::Compensated;

pub type Mat = [[f64; 3]; 3];

/// Symmetric, uniformly elliptic constant matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantMatrix {
    dim: usize,
    a: Mat,
}

impl ConstantMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut a = [[0.0; 3]; 3];
        for (i, row) in a.iter_mut().enumerate().take(dim) {
            row[i] = 1.0;
        }
        Self { dim, a }
    }

    pub fn diag(entries: &[f64]) -> Result<Self> {
        let mut a = [[0.0; 3]; 3];
        for (i, e) in entries.iter().enumerate() {
            a[i][i] = *e;
        }
        Self::new(entries.len(), a)
    }

    /// Validates symmetry (to 1e−12) and positive definiteness.
    pub fn new(dim: usize, a: Mat) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(invalid(format!("matrix dimension must be 2 or 3, got {dim}")));
        }
        for i in 0..3 {
            for j in 0..3 {
                if (i >= dim || j >= dim) && a[i][j] != 0.0 {
                    return Err(invalid("entries outside the active block must be zero"));
                }
                let scale = a[i][j].abs().max(a[j][i].abs()).max(1.0);
                if (a[i][j] - a[j][i]).abs() > 1e-12 * scale {
                    return Err(invalid("matrix is not symmetric"));
                }
            }
        }
        let m = Self { dim, a };
        let (lo, _) = m.eigen_range();
        if !(lo > 0.0) {
            return Err(invalid(format!("matrix is not positive definite (λ_min = {lo})")));
        }
        Ok(m)
    }

    /// `(E + Eᵀ) / 2`.
    pub fn symmetrized(dim: usize, e: Mat) -> Result<Self> {
        let mut s = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] = 0.5 * (e[i][j] + e[j][i]);
            }
        }
        Self::new(dim, s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &Mat {
        &self.a
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn det(&self) -> f64 {
        let a = &self.a;
        if self.dim == 2 {
            a[0][0] * a[1][1] - a[0][1] * a[1][0]
        } else {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.a[i][i]).sum()
    }

    pub fn inverse(&self) -> Mat {
        let a = &self.a;
        let det = self.det();
        let mut inv = [[0.0; 3]; 3];
        if self.dim == 2 {
            inv[0][0] = a[1][1] / det;
            inv[1][1] = a[0][0] / det;
            inv[0][1] = -a[0][1] / det;
            inv[1][0] = -a[1][0] / det;
        } else {
            for i in 0..3 {
                for j in 0..3 {
                    let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                    let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                    inv[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / det;
                }
            }
        }
        inv
    }

    pub fn apply(&self, x: &Point) -> Point {
        mat_vec(&self.a, x)
    }

    /// Sorted eigenvalues of the active block (closed form).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let a = &self.a;
        if self.dim == 2 {
            let m = 0.5 * (a[0][0] + a[1][1]);
            let d = (0.25 * (a[0][0] - a[1][1]).powi(2) + a[0][1] * a[0][1]).sqrt();
            return vec![m - d, m + d];
        }
        let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let q = self.trace() / 3.0;
        if p1 == 0.0 {
            let mut ev = vec![a[0][0], a[1][1], a[2][2]];
            ev.sort_by(f64::total_cmp);
            return ev;
        }
        let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let mut b = *a;
        for (i, row) in b.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (a[i][j] - if i == j { q } else { 0.0 }) / p;
            }
        }
        let det_b = ConstantMatrix { dim: 3, a: b }.det();
        let r = (det_b / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
        let e2 = 3.0 * q - e1 - e3;
        let mut ev = vec![e1, e2, e3];
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn eigen_range(&self) -> (f64, f64) {
        let ev = self.eigenvalues();
        (ev[0], ev[ev.len() - 1])
    }

    /// Smallest Λ with spectrum inside `[Λ^{-1}, Λ]`.
    pub fn ellipticity(&self) -> f64 {
        let (lo, hi) = self.eigen_range();
        hi.max(1.0 / lo)
    }

    pub fn freeze(&self) -> FrozenMatrix {
        let c = if self.dim == 3 { 4.0 * PI } else { 2.0 * PI };
        FrozenMatrix {
            dim: self.dim,
            inv: self.inverse(),
            coef: 1.0 / (c * self.det().sqrt()),
        }
    }
}

#[inline]
fn mat_vec(a: &Mat, x: &Point) -> Point {
    [
        a[0][0] * x[0] + a[0][1] * x[1] + a[0][2] * x[2],
        a[1][0] * x[0] + a[1][1] * x[1] + a[1][2] * x[2],
        a[2][0] * x[0] + a[2][1] * x[1] + a[2][2] * x[2],
    ]
}

/// A constant matrix prepared for repeated kernel evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FrozenMatrix {
    dim: usize,
    inv: Mat,
    coef: f64,
}

impl FrozenMatrix {
    #[inline]
    pub fn value(&self, x: &Point) -> f64 {
        let q = crate::geometry::dot(&mat_vec(&self.inv, x), x);
        if self.dim == 3 {
            self.coef / q.sqrt()
        } else {
            -0.5 * self.coef * q.ln()
        }
    }

    #[inline]
    pub fn grad(&self, x: &Point) -> Point {
        let ex = mat_vec(&self.inv, x);
        let q = crate::geometry::dot(&ex, x);
        let f = if self.dim == 3 {
            -self.coef / (q * q.sqrt())
        } else {
            -self.coef / q
        };
        scale(&ex, f)
    }
}

fn check_nonzero(x: &Point) -> Result<()> {
    if x.iter().all(|c| *c == 0.0) {
        return Err(invalid("fundamental solution is singular at the origin"));
    }
    Ok(())
}

/// `Θ(x, 0; E)`.
pub fn fundamental_solution_const(e: &ConstantMatrix, x: &Point) -> Result<f64> {
    check_nonzero(x)?;
    Ok(e.freeze().value(x))
}

/// `∇₁Θ(x, 0; E)`, odd and homogeneous of degree `1 − d`.
pub fn grad1_fundamental_const(e: &ConstantMatrix, x: &Point) -> Result<Point> {
    check_nonzero(x)?;
    Ok(e.freeze().grad(x))
}

// ---------------------------------------------------------------------------
// Matrix fields

/// `A(x) = I + ε W(x) P` with `W` a lacunary sine sum of Hölder exponent α
/// (a single sine when α = 1) and `P` a fixed symmetric pattern with
/// spectral norm 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SinField {
    dim: usize,
    alpha: f64,
    epsilon: f64,
    direction: Point,
    pattern: Mat,
    terms: usize,
    norm: f64,
}

const LACUNARY_TERMS: usize = 20;

impl SinField {
    pub fn new(dim: usize, alpha: f64, epsilon: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(invalid("field dimension must be 2 or 3"));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid(format!("Hölder exponent must lie in (0, 1], got {alpha}")));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(invalid(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        // Unit spectral norm patterns (eigenvalues ±1, or ±1 and 0).
        let pattern = if dim == 2 {
            [[0.6, 0.8, 0.0], [0.8, -0.6, 0.0], [0.0, 0.0, 0.0]]
        } else {
            [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
        };
        let direction = if dim == 2 {
            [2.0, 1.3, 0.0]
        } else {
            [2.0, 1.3, 0.7]
        };
        let terms = if alpha < 1.0 { LACUNARY_TERMS } else { 1 };
        let norm = (0..terms).map(|k| 2f64.powf(-(k as f64) * alpha)).sum();
        Ok(Self {
            dim,
            alpha,
            epsilon,
            direction,
            pattern,
            terms,
            norm,
        })
    }

    /// Scalar profile in `[−1, 1]`.
    pub fn profile(&self, x: &Point) -> f64 {
        let t = crate::geometry::dot(&self.direction, x);
        let mut acc = Compensated::new();
        for k in 0..self.terms {
            let f = 2f64.powi(k as i32);
            acc.add(f.powf(-self.alpha) * (f * t + k as f64).sin());
        }
        acc.value() / self.norm
    }

    pub fn eval(&self, x: &Point) -> ConstantMatrix {
        let w = self.epsilon * self.profile(x);
        let mut a = [[0.0; 3]; 3];
        for i in 0..self.dim {
            for j in 0..self.dim {
                a[i][j] = w * self.pattern[i][j] + if i == j { 1.0 } else { 0.0 };
            }
        }
        ConstantMatrix { dim: self.dim, a }
    }

    /// Upper bound for `|a_ij(x) − a_ij(y)| / |x − y|^α`.
    pub fn holder_constant(&self) -> f64 {
        let u = norm(&self.direction);
        let pmax = self
            .pattern
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let cw = if self.terms == 1 {
            u
        } else {
            let a = self.alpha;
            u.powf(a) * 2f64.powf(a) * (1.0 / (1.0 - 2f64.powf(a - 1.0)) + 2.0 / (1.0 - 2f64.powf(-a)))
                / self.norm
        };
        self.epsilon * pmax * cw
    }

    /// Spectrum bound: eigenvalues lie in `[1 − ε, 1 + ε]`.
    pub fn ellipticity(&self) -> f64 {
        (1.0 + self.epsilon).max(1.0 / (1.0 - self.epsilon))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixField {
    Constant(ConstantMatrix),
    Sin(SinField),
}

impl MatrixField {
    pub fn identity(dim: usize) -> Self {
        MatrixField::Constant(ConstantMatrix::identity(dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            MatrixField::Constant(m) => m.dim(),
            MatrixField::Sin(s) => s.dim,
        }
    }

    pub fn eval(&self, x: &Point) -> ConstantMatrix {
        match self {
            MatrixField::Constant(m) => *m,
            MatrixField::Sin(s) => s.eval(x),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MatrixField::Constant(_))
    }

    /// Hölder exponent; constant fields report 1.
    pub fn alpha(&self) -> f64 {
        match self {
            MatrixField::Constant(_) => 1.0,
            MatrixField::Sin(s) => s.alpha,
        }
    }

    pub fn holder_constant(&self) -> f64 {
        match self {
            MatrixField::Constant(_) => 0.0,
            MatrixField::Sin(s) => s.holder_constant(),
        }
    }

    pub fn ellipticity(&self) -> f64 {
        match self {
            MatrixField::Constant(m) => m.ellipticity(),
            MatrixField::Sin(s) => s.ellipticity(),
        }
    }
}

/// Matrix-field section of an experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(rename = "type")]
    pub kind: FieldKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(rename = "Lambda", default = "default_lambda")]
    pub lambda: f64,
    /// Diagonal entries for `"diag"`; defaults to `(Λ, 1, …)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<f64>>,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_lambda() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Identity,
    Diag,
    SinPerturbation,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            kind: FieldKind::Identity,
            alpha: 1.0,
            epsilon: 0.0,
            lambda: 2.0,
            entries: None,
        }
    }
}

impl FieldSpec {
    pub fn build(&self, dim: usize) -> Result<MatrixField> {
        if !(self.lambda >= 1.0) {
            return Err(invalid(format!("Lambda must be at least 1, got {}", self.lambda)));
        }
        let field = match self.kind {
            FieldKind::Identity => MatrixField::identity(dim),
            FieldKind::Diag => {
                let entries = match &self.entries {
                    Some(e) => e.clone(),
                    None => {
                        let mut e = vec![1.0; dim];
                        e[0] = self.lambda;
                        e
                    }
                };
                if entries.len() != dim {
                    return Err(invalid(format!(
                        "diag field needs {dim} entries, got {}",
                        entries.len()
                    )));
                }
                MatrixField::Constant(ConstantMatrix::diag(&entries)?)
            }
            FieldKind::SinPerturbation => MatrixField::Sin(SinField::new(dim, self.alpha, self.epsilon)?),
        };
        if field.ellipticity() > self.lambda * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "field ellipticity {} exceeds Lambda = {}",
                field.ellipticity(),
                self.lambda
            )));
        }
        Ok(field)
    }
}

// ---------------------------------------------------------------------------
// Kernels

/// Where the coefficient matrix is frozen when evaluating `K̃(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freeze {
    /// `∇₁Θ(x − y, 0; A(x))`: the matrix of the first argument. This is the
    /// operator kernel used everywhere downstream.
    FirstArgument,
    /// `∇₁Θ(x − y, 0; A(y))`.
    SecondArgument,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticKernel {
    field: MatrixField,
    freeze: Freeze,
}

impl EllipticKernel {
    pub fn new(field: MatrixField) -> Self {
        Self {
            field,
            freeze: Freeze::FirstArgument,
        }
    }

    pub fn with_freeze(field: MatrixField, freeze: Freeze) -> Self {
        Self { field, freeze }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(MatrixField::identity(dim))
    }

    pub fn field(&self) -> &MatrixField {
        &self.field
    }

    pub fn freeze_mode(&self) -> Freeze {
        self.freeze
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    /// `n = d − 1`.
    pub fn n(&self) -> i32 {
        self.dim() as i32 - 1
    }

    /// Matrix frozen at `p`, ready for repeated gradients.
    #[inline]
    pub fn frozen_at(&self, p: &Point) -> FrozenMatrix {
        self.field.eval(p).freeze()
    }

    /// `K̃(x, y)`; `x = y` is rejected.
    pub fn eval(&self, x: &Point, y: &Point) -> Result<Point> {
        let z = sub(x, y);
        check_nonzero(&z)?;
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub fn eval_unchecked(&self, x: &Point, y: &Point) -> Point {
        let at = match self.freeze {
            Freeze::FirstArgument => x,
            Freeze::SecondArgument => y,
        };
        self.frozen_at(at).grad(&sub(x, y))
    }
}

/// `frozen_kernel` in functional form.
pub fn frozen_kernel(kern: &EllipticKernel, x: &Point, y: &Point) -> Result<Point> {
    kern.eval(x, y)
}

// ---------------------------------------------------------------------------
// Weak-form audit

/// Smooth test bump `φ(x) = amplitude · exp(−1 / (1 − |x|²/ρ²))` on `|x| < ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpSpec {
    pub radius: f64,
    pub amplitude: f64,
}

impl Default for BumpSpec {
    fn default() -> Self {
        Self {
            radius: 1.0,
            amplitude: 1.0,
        }
    }
}

impl BumpSpec {
    fn value(&self, x: &Point) -> f64 {
        let s = crate::geometry::dot(x, x) / (self.radius * self.radius);
        if s >= 1.0 {
            0.0
        } else {
            self.amplitude * (-1.0 / (1.0 - s)).exp()
        }
    }

    fn grad(&self, x: &Point) -> Point {
        let r2 = self.radius * self.radius;
        let s = crate::geometry::dot(x, x) / r2;
        if s >= 1.0 {
            return [0.0; 3];
        }
        let phi = self.amplitude * (-1.0 / (1.0 - s)).exp();
        let dphi_ds = -phi / ((1.0 - s) * (1.0 - s));
        scale(x, 2.0 * dphi_ds / r2)
    }
}

/// Midpoint grid on `[−ρ, ρ]^d` and the excluded ellipsoid
/// `⟨E^{-1}x, x⟩ < h²` with `h = exclusion_cells · cell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub cells_per_side: usize,
    pub exclusion_cells: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cells_per_side: 128,
            exclusion_cells: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakFormReport {
    /// `∫ E∇Θ · ∇φ` including the inner correction.
    pub integral: f64,
    pub phi0: f64,
    pub residual: f64,
}

/// Checks `∫ E∇Θ · ∇φ dx = φ(0)`.
///
/// The exterior of the ellipsoid is integrated by the midpoint rule. Inside
/// the ellipsoid, `∇φ(x) ≈ D²φ(0) x`, which gives the closed form
/// `−h² tr(E D²φ(0)) / (2d)`.
pub fn weak_form_check(e: &ConstantMatrix, bump: &BumpSpec, grid: &GridSpec) -> Result<WeakFormReport> {
    let d = e.dim();
    let m = grid.cells_per_side;
    if m < 16 || m % 2 != 0 {
        return Err(Error::CoarseQuadrature(format!(
            "need an even cell count of at least 16 per side, got {m}"
        )));
    }
    if grid.exclusion_cells < 2.0 {
        return Err(Error::CoarseQuadrature(
            "the excluded ellipsoid must span at least two cells".into(),
        ));
    }
    let rho = bump.radius;
    let cell = 2.0 * rho / m as f64;
    let h = grid.exclusion_cells * cell;
    if h > 0.5 * rho {
        return Err(Error::CoarseQuadrature(format!(
            "exclusion radius {h} is not small relative to the bump radius {rho}"
        )));
    }
    let frozen = e.freeze();
    let inv = e.inverse();
    let vol = cell.powi(d as i32);
    let coord = |i: usize| -rho + (i as f64 + 0.5) * cell;
    let mz = if d == 3 { m } else { 1 };
    let mut acc = Compensated::new();
    for k in 0..mz {
        let z = if d == 3 { coord(k) } else { 0.0 };
        let mut row = Compensated::new();
        for j in 0..m {
            for i in 0..m {
                let x = [coord(i), coord(j), z];
                let q = crate::geometry::dot(&mat_vec(&inv, &x), &x);
                if q < h * h {
                    continue;
                }
                let gphi = bump.grad(&x);
                if gphi == [0.0; 3] {
                    continue;
                }
                let flux = e.apply(&frozen.grad(&x));
                row.add(crate::geometry::dot(&flux, &gphi));
            }
        }
        acc.add(row.value());
    }
    let exterior = acc.value() * vol;
    // D²φ(0) = −2 amplitude e^{-1} / ρ² · I
    let hess_scale = -2.0 * bump.amplitude * (-1.0f64).exp() / (rho * rho);
    let inner = -h * h * hess_scale * e.trace() / (2.0 * d as f64);
    let integral = exterior + inner;
    let phi0 = bump.value(&[0.0; 3]);
    Ok(WeakFormReport {
        integral,
        phi0,
        residual: (integral - phi0).abs(),
    })
}

// ---------------------------------------------------------------------------
// Calderón–Zygmund audits

/// Random pairs `(x, y)` with `x` uniform in the unit cube (square) and
/// `|x − y|` log-uniform in `[r_min, r_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub pairs: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub seed: u64,
}

impl SampleSpec {
    fn validate(&self) -> Result<()> {
        if self.pairs < 10 {
            return Err(invalid(format!(
                "degenerate sample: {} pairs (need at least 10)",
                self.pairs
            )));
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            return Err(invalid("need 0 < r_min < r_max"));
        }
        Ok(())
    }

    fn draw(&self, dim: usize) -> Vec<(Point, Point, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.pairs)
            .map(|_| {
                let x = random_point(&mut rng, dim);
                let dir = random_unit(&mut rng, dim);
                let r = self.r_min * (self.r_max / self.r_min).powf(rng.gen::<f64>());
                (x, sub(&x, &scale(&dir, r)), r)
            })
            .collect()
    }
}

pub(crate) fn random_point<R: Rng>(rng: &mut R, dim: usize) -> Point {
    let mut p = [0.0; 3];
    for c in p.iter_mut().take(dim) {
        *c = rng.gen::<f64>();
    }
    p
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Point {
    loop {
        let mut p = [0.0; 3];
        for c in p.iter_mut().take(dim) {
            *c = 2.0 * rng.gen::<f64>() - 1.0;
        }
        let n = norm(&p);
        if n > 1e-3 && n <= 1.0 {
            return scale(&p, 1.0 / n);
        }
    }
}

/// Ordinary least squares `y ≈ slope · x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = crate::sum::sum(xs.iter().copied()) / n;
    let my = crate::sum::sum(ys.iter().copied()) / n;
    let sxy = crate::sum::sum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)));
    let sxx = crate::sum::sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CzReport {
    /// Fitted exponent of `|K(x, y)|` against `|x − y|`.
    pub slope: f64,
    /// `exp(intercept)` of the same fit.
    pub size_constant: f64,
    /// Smoothness exponent used, `min(α, 1/2)`.
    pub gamma: f64,
    /// Largest smoothness quotient
    /// `(|K(x,y) − K(x,y')| + |K(y,x) − K(y',x)|) |x − y|^{n+γ} / |y − y'|^γ`.
    pub smoothness_constant: f64,
}

pub fn cz_estimate_check(kern: &EllipticKernel, spec: &SampleSpec) -> Result<CzReport> {
    spec.validate()?;
    let dim = kern.dim();
    let n = kern.n() as f64;
    let gamma = kern.field().alpha().min(0.5);
    let pairs = spec.draw(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let mut xs = Vec::with_capacity(pairs.len());
    let mut ys = Vec::with_capacity(pairs.len());
    let mut smooth = 0.0f64;
    for (x, y, r) in &pairs {
        let k = kern.eval(x, y)?;
        xs.push(r.ln());
        ys.push(norm(&k).ln());
        let step = 0.5 * r * rng.gen_range(0.05..1.0);
        let y2 = add(y, &scale(&random_unit(&mut rng, dim), step));
        let k2 = kern.eval(x, &y2)?;
        let kt = kern.eval(y, x)?;
        let kt2 = kern.eval(&y2, x)?;
        let diff = norm(&sub(&k, &k2)) + norm(&sub(&kt, &kt2));
        smooth = smooth.max(diff * r.powf(n + gamma) / step.powf(gamma));
    }
    let (slope, intercept) = linear_fit(&xs, &ys);
    Ok(CzReport {
        slope,
        size_constant: intercept.exp(),
        gamma,
        smoothness_constant: smooth,
    })
}

/// `max |K(x, y)| · |x − y|^{(n−1)/2}` over the sample (far-field bound).
pub fn far_field_constant(kern: &EllipticKernel, spec: &SampleSpec) -> Result<f64> {
    spec.validate()?;
    let n = kern.n() as f64;
    let mut best = 0.0f64;
    for (x, y, r) in spec.draw(kern.dim()) {
        let k = kern.eval(&x, &y)?;
        best = best.max(norm(&k) * r.powf((n - 1.0) / 2.0));
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetrizationReport {
    /// Fitted exponent of `|K̃(x, y) + K̃(y, x)|` against `|x − y|`.
    pub slope: f64,
    pub constant: f64,
}

/// Regresses the antisymmetry defect of the frozen kernel.
pub fn symmetrization_check(kern: &EllipticKernel, spec: &SampleSpec) -> Result<SymmetrizationReport> {
    if kern.field().is_constant() {
        return Err(invalid(
            "constant fields give an identically zero antisymmetry defect",
        ));
    }
    spec.validate()?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, y, r) in spec.draw(kern.dim()) {
        let s = add(&kern.eval(&x, &y)?, &kern.eval(&y, &x)?);
        let m = norm(&s);
        if m > 0.0 {
            xs.push(r.ln());
            ys.push(m.ln());
        }
    }
    if xs.len() < 10 {
        return Err(invalid("too few non-degenerate pairs"));
    }
    let (slope, intercept) = linear_fit(&xs, &ys);
    Ok(SymmetrizationReport {
        slope,
        constant: intercept.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize) -> ConstantMatrix {
        ConstantMatrix::identity(dim)
    }

    #[test]
    fn laplace_value_in_space() {
        let v = fundamental_solution_const(&unit(3), &[1.0, 0.0, 0.0]).unwrap();
        assert!((v - 1.0 / (4.0 * PI)).abs() < 1e-15);
        let v2 = fundamental_solution_const(&unit(3), &[0.0, 2.0, 0.0]).unwrap();
        assert!((v2 - 0.5 * v).abs() < 1e-15);
    }

    #[test]
    fn anisotropic_level_sets() {
        let e = ConstantMatrix::diag(&[4.0, 1.0, 1.0]).unwrap();
        let a = fundamental_solution_const(&e, &[2.0, 0.0, 0.0]).unwrap();
        let b = fundamental_solution_const(&e, &[0.0, 1.0, 0.0]).unwrap();
        assert!((a - b).abs() < 1e-15);
        // ⟨E^{-1}x, x⟩ = 1/4 for x = (1,0,0) and 4 for (0,2,0)
        let c = fundamental_solution_const(&e, &[1.0, 0.0, 0.0]).unwrap();
        let d = fundamental_solution_const(&e, &[0.0, 2.0, 0.0]).unwrap();
        assert!((c / d - 4.0).abs() < 1e-12);
    }

    #[test]
    fn origin_is_rejected() {
        assert!(fundamental_solution_const(&unit(2), &[0.0; 3]).is_err());
        assert!(grad1_fundamental_const(&unit(3), &[0.0; 3]).is_err());
        let k = EllipticKernel::identity(2);
        assert!(k.eval(&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn gradient_points_inward() {
        let x = [0.3, -0.4, 1.2];
        let g = grad1_fundamental_const(&unit(3), &x).unwrap();
        let r = norm(&x);
        for i in 0..3 {
            assert!((g[i] + x[i] / (4.0 * PI * r * r * r)).abs() < 1e-15);
        }
    }

    #[test]
    fn matrix_validation() {
        let bad = [[1.0, 0.5, 0.0], [0.4, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(ConstantMatrix::new(3, bad).is_err());
        let sym = ConstantMatrix::symmetrized(3, bad).unwrap();
        assert_eq!(sym.get(0, 1), 0.45);
        assert!(ConstantMatrix::diag(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn inverse_and_eigenvalues() {
        let a = [[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.0]];
        let m = ConstantMatrix::new(3, a).unwrap();
        let inv = m.inverse();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i][k] * inv[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
        let ev = m.eigenvalues();
        let tr: f64 = ev.iter().sum();
        let det: f64 = ev.iter().product();
        assert!((tr - m.trace()).abs() < 1e-12);
        assert!((det - m.det()).abs() < 1e-12);
    }

    #[test]
    fn field_spec_defaults() {
        let spec: FieldSpec = serde_json::from_str(r#"{"type": "diag", "Lambda": 2}"#).unwrap();
        match spec.build(3).unwrap() {
            MatrixField::Constant(m) => assert_eq!(m.get(0, 0), 2.0),
            _ => panic!("expected a constant field"),
        }
        let sin: FieldSpec =
            serde_json::from_str(r#"{"type": "sin_perturbation", "alpha": 0.5, "epsilon": 0.3, "Lambda": 2}"#)
                .unwrap();
        let f = sin.build(2).unwrap();
        assert!(!f.is_constant());
        assert!(f.ellipticity() <= 2.0);
        let tight: FieldSpec =
            serde_json::from_str(r#"{"type": "sin_perturbation", "epsilon": 0.3, "Lambda": 1.1}"#).unwrap();
        assert!(tight.build(2).is_err());
    }

    #[test]
    fn sin_field_respects_holder_bound() {
        for alpha in [0.5, 1.0] {
            let f = SinField::new(3, alpha, 0.3).unwrap();
            let c = f.holder_constant();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..2000 {
                let x = random_point(&mut rng, 3);
                let r = 10f64.powf(-4.0 * rng.gen::<f64>());
                let y = add(&x, &scale(&random_unit(&mut rng, 3), r));
                let (ax, ay) = (f.eval(&x), f.eval(&y));
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((ax.get(i, j) - ay.get(i, j)).abs() <= c * r.powf(alpha) * (1.0 + 1e-9));
                    }
                }
                let (lo, hi) = ax.eigen_range();
                assert!(lo >= 1.0 / f.ellipticity() - 1e-12 && hi <= f.ellipticity() + 1e-12);
            }
        }
    }

    #[test]
    fn zero_bump_has_zero_residual() {
        let bump = BumpSpec {
            radius: 1.0,
            amplitude: 0.0,
        };
        let r = weak_form_check(&unit(3), &bump, &GridSpec { cells_per_side: 32, exclusion_cells: 2.0 }).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn coarse_grids_are_refused() {
        let r = weak_form_check(&unit(2), &BumpSpec::default(), &GridSpec { cells_per_side: 8, exclusion_cells: 2.0 });
        assert!(matches!(r, Err(Error::CoarseQuadrature(_))));
    }

    #[test]
    fn degenerate_sample_rejected() {
        let spec = SampleSpec { pairs: 5, r_min: 1e-3, r_max: 1e-1, seed: 1 };
        assert!(cz_estimate_check(&EllipticKernel::identity(3), &spec).is_err());
        let ok = SampleSpec { pairs: 50, ..spec };
        assert!(symmetrization_check(&EllipticKernel::identity(3), &ok).is_err());
    }
}
