//! Experiment pipelines behind the command-line subcommands. Every function
//! returns the text it would write, so outputs can be compared byte for byte.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{invalid, Error, Result};
use crate::filtration::{
    build_filtration, decompose_energy, decompose_energy_vec, lattice_filtration, select_finite_family,
    smoothed_measure, Filtration, StoppingParams, DEFAULT_QUAD_2D, DEFAULT_QUAD_3D,
};
use crate::geometry::{Ball, Point};
use crate::kernels::{weak_form_check, BumpSpec, ConstantMatrix, EllipticKernel, GridSpec, MatrixField};
use crate::lattice::DmLattice;
use crate::measure::AtomicMeasure;
use crate::operator::{apply_t, default_eps, operator_norm_estimate};
use crate::variational::{minimize_f, variation_derivative_check, MinimizerReport, NodeSystem};
use crate::vectorfield::{contradiction_report, g_field, reproducing_check, BumpField, ChainInputs, ContradictionReport};

/// Measure, lattice and kernel built from a configuration.
#[derive(Debug, Clone)]
pub struct Instance {
    pub mu: AtomicMeasure,
    pub lat: DmLattice,
    pub kern: EllipticKernel,
    pub eps: f64,
}

impl Instance {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        Self::from_measure(cfg, cfg.measure.build(cfg.seed)?)
    }

    pub fn from_measure(cfg: &ExperimentConfig, mu: AtomicMeasure) -> Result<Self> {
        let lat = DmLattice::build(&mu, cfg.lattice.params())?;
        let kern = cfg.kernel(mu.dim())?;
        let eps = cfg.operator.eps.unwrap_or_else(|| default_eps(&mu));
        Ok(Self { mu, lat, kern, eps })
    }

    pub fn stopping(&self, cfg: &ExperimentConfig) -> Result<StoppingParams> {
        cfg.stopping.resolve(StoppingParams::calibrated(&self.lat))
    }

    pub fn filtration(&self, cfg: &ExperimentConfig) -> Result<(StoppingParams, Filtration)> {
        let p = self.stopping(cfg)?;
        let f = build_filtration(&self.lat, &p, cfg.stopping.max_generations)?;
        Ok((p, f))
    }

    /// `Tμ` on the atoms.
    pub fn t_on_atoms(&self) -> Result<Vec<Point>> {
        Ok(apply_t(&self.mu, &self.kern, self.mu.positions(), self.eps)?.values)
    }
}

pub fn generate(cfg: &ExperimentConfig) -> Result<String> {
    Ok(cfg.measure.build(cfg.seed)?.to_text())
}

pub fn build_lattice_text(cfg: &ExperimentConfig) -> Result<String> {
    let inst = Instance::build(cfg)?;
    let mut out = inst.lat.dump();
    for v in inst.lat.check_invariants(&inst.mu) {
        let _ = writeln!(out, "# violation: {v}");
    }
    Ok(out)
}

fn fmt_point(out: &mut String, p: &Point, dim: usize) {
    for (k, c) in p[..dim].iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{c:e}");
    }
}

/// Target points, one per line: `x y [z]`, '#' comments.
pub fn parse_points(text: &str, dim: usize, origin: &str) -> Result<Vec<Point>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: idx + 1,
            message,
        };
        let fields: Vec<f64> = content
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(format!("bad number: {e}")))?;
        if fields.len() != dim {
            return Err(err(format!("expected {dim} coordinates, got {}", fields.len())));
        }
        let mut p = [0.0; 3];
        p[..dim].copy_from_slice(&fields);
        out.push(p);
    }
    Ok(out)
}

/// Rows `x y [z] Tx Ty [Tz]`; `targets = None` evaluates on the atoms.
pub fn apply_text(inst: &Instance, targets: Option<&[Point]>) -> Result<String> {
    let dim = inst.mu.dim();
    let pts = targets.unwrap_or(inst.mu.positions());
    let t = apply_t(&inst.mu, &inst.kern, pts, inst.eps)?;
    let mut out = String::new();
    out.push_str(if dim == 2 { "# x y Tx Ty\n" } else { "# x y z Tx Ty Tz\n" });
    for (p, v) in t.points.iter().zip(&t.values) {
        fmt_point(&mut out, p, dim);
        out.push(' ');
        fmt_point(&mut out, v, dim);
        out.push('\n');
    }
    Ok(out)
}

pub const DECOMPOSE_HEADER: &str = "generation,cube_id,mass,theta,hd_count,sigma1_count,delta_energy,ratio";

/// Per-node energies of `Tμ` on the stopping filtration.
pub fn decompose_text(cfg: &ExperimentConfig) -> Result<String> {
    let inst = Instance::build(cfg)?;
    let (_, filt) = inst.filtration(cfg)?;
    let f = inst.t_on_atoms()?;
    let dec = decompose_energy_vec(&f, inst.mu.dim(), &filt, &inst.lat, &inst.mu);
    let n = inst.lat.n();
    let mut out = String::new();
    let _ = writeln!(out, "{DECOMPOSE_HEADER}");
    for (node, e) in filt.nodes().iter().zip(&dec.node_energies) {
        let q = inst.lat.cube(node.cube);
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{},{},{:e},{:e}",
            node.generation,
            node.cube,
            q.mass,
            q.theta(n),
            node.hd.len(),
            node.sigma1.len(),
            e,
            e / q.mass
        );
    }
    Ok(out)
}

pub const SWEEP_HEADER: &str = "N,total_energy,max_node_ratio,op_norm,seconds";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub total_energy: f64,
    pub max_node_ratio: f64,
    pub op_norm: f64,
}

/// One sweep row. The stopping filtration is used when `τ` resolves;
/// otherwise the full lattice filtration.
pub fn sweep_row(cfg: &ExperimentConfig, n: usize) -> Result<SweepRow> {
    let spec = cfg.measure.with_size(n)?;
    let inst = Instance::from_measure(cfg, spec.build(cfg.seed)?)?;
    let filt = match inst.filtration(cfg) {
        Ok((_, f)) => f,
        Err(_) => lattice_filtration(&inst.lat),
    };
    let f = inst.t_on_atoms()?;
    let dec = decompose_energy_vec(&f, inst.mu.dim(), &filt, &inst.lat, &inst.mu);
    let max_node_ratio = filt
        .nodes()
        .iter()
        .zip(&dec.node_energies)
        .map(|(node, e)| e / inst.lat.cube(node.cube).mass)
        .fold(0.0, f64::max);
    Ok(SweepRow {
        n,
        total_energy: dec.total,
        max_node_ratio,
        op_norm: operator_norm_estimate(&inst.mu, &inst.kern, inst.eps)?,
    })
}

/// Sweep CSV. `timing = false` leaves the wall-clock column empty so the
/// file is reproducible byte for byte. Failed rows keep their `N` with
/// empty fields and are reported on stderr.
pub fn sweep_text(cfg: &ExperimentConfig, timing: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SWEEP_HEADER}");
    for &n in &cfg.sweep.sizes {
        let start = Instant::now();
        let row = sweep_row(cfg, n);
        let secs = if timing {
            format!("{:.3}", start.elapsed().as_secs_f64())
        } else {
            String::new()
        };
        match row {
            Ok(r) => {
                let _ = writeln!(
                    out,
                    "{},{:e},{:e},{:e},{secs}",
                    r.n, r.total_energy, r.max_node_ratio, r.op_norm
                );
            }
            Err(e) => {
                eprintln!("sweep N={n}: {e}");
                let _ = writeln!(out, "{n},,,,{secs}");
            }
        }
    }
    out
}

/// `σ` on the root of the stopping filtration, with its node system.
pub struct RootSystem {
    pub inst: Instance,
    pub params: StoppingParams,
    pub filt: Filtration,
    pub sys: NodeSystem,
}

impl RootSystem {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let inst = Instance::build(cfg)?;
        let (params, filt) = inst.filtration(cfg)?;
        let root = filt.node(0);
        let fam = select_finite_family(root, &inst.lat, params.eps0)?;
        let quad = if inst.mu.dim() == 2 { DEFAULT_QUAD_2D } else { DEFAULT_QUAD_3D };
        let sigma = smoothed_measure(&fam.cubes, &inst.lat, &inst.mu, root.cube, params.kappa0, quad)?;
        let sys = NodeSystem::from_measure(&sigma, &inst.kern)?;
        Ok(Self {
            inst,
            params,
            filt,
            sys,
        })
    }

    pub fn minimize(&self, cfg: &ExperimentConfig, lambda: f64) -> Result<MinimizerReport> {
        minimize_f(&self.sys, lambda, &cfg.variational.options)
    }

    pub fn contradiction(&self, cfg: &ExperimentConfig, rep: &MinimizerReport) -> Result<ContradictionReport> {
        let root = self.filt.node(0);
        contradiction_report(&ChainInputs {
            lat: &self.inst.lat,
            kern: &self.inst.kern,
            q: root.cube,
            hd: &root.hd,
            sys: &self.sys,
            b: &rep.b,
            lambda: rep.lambda,
            refine: cfg.variational.refine,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct VariationalOutput {
    pub lambda: f64,
    pub F_init: f64,
    pub F_final: f64,
    pub sup_b: f64,
    pub pointwise_defect: f64,
    pub iterations: usize,
    pub converged: bool,
    pub hypothesis_holds: bool,
    pub constraint_residual: f64,
    pub nodes: usize,
}

impl VariationalOutput {
    pub fn from_report(rep: &MinimizerReport, nodes: usize) -> Self {
        Self {
            lambda: rep.lambda,
            F_init: rep.f_init,
            F_final: rep.f_final,
            sup_b: rep.sup_b,
            pointwise_defect: rep.pointwise_defect,
            iterations: rep.iterations,
            converged: rep.converged,
            hypothesis_holds: rep.hypothesis_holds,
            constraint_residual: rep.constraint_residual,
            nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct ContradictionOutput {
    pub lambda: f64,
    pub nu_mass: f64,
    pub hd1_count: usize,
    pub captured_mass: f64,
    pub term_I: f64,
    pub term_II: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub contradiction_ratio: f64,
    pub detail: ContradictionReport,
}

impl From<ContradictionReport> for ContradictionOutput {
    fn from(r: ContradictionReport) -> Self {
        Self {
            lambda: r.lambda,
            nu_mass: r.nu_mass,
            hd1_count: r.hd1_count,
            captured_mass: r.captured_mass,
            term_I: r.term_i,
            term_II: r.term_ii,
            lhs: r.lhs,
            rhs: r.rhs,
            contradiction_ratio: r.contradiction_ratio,
            detail: r,
        }
    }
}

fn lambdas(cfg: &ExperimentConfig, lambda: Option<f64>) -> Result<Vec<f64>> {
    let ls = match lambda {
        Some(l) => vec![l],
        None => cfg.variational.lambdas.clone(),
    };
    if let Some(l) = ls.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(invalid(format!("lambda must be positive, got {l}")));
    }
    Ok(ls)
}

fn to_json<T: Serialize>(items: &[T], single: bool) -> String {
    let s = if single {
        serde_json::to_string_pretty(&items[0])
    } else {
        serde_json::to_string_pretty(items)
    };
    s.expect("reports serialize") + "\n"
}

/// JSON object for one `λ`, an array for the configured list.
pub fn variational_json(cfg: &ExperimentConfig, lambda: Option<f64>) -> Result<String> {
    let rs = RootSystem::build(cfg)?;
    let out = lambdas(cfg, lambda)?
        .into_iter()
        .map(|l| Ok(VariationalOutput::from_report(&rs.minimize(cfg, l)?, rs.sys.len())))
        .collect::<Result<Vec<_>>>()?;
    Ok(to_json(&out, lambda.is_some()))
}

pub fn contradiction_json(cfg: &ExperimentConfig, lambda: Option<f64>) -> Result<String> {
    let rs = RootSystem::build(cfg)?;
    let out = lambdas(cfg, lambda)?
        .into_iter()
        .map(|l| {
            let rep = rs.minimize(cfg, l)?;
            Ok(ContradictionOutput::from(rs.contradiction(cfg, &rep)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(to_json(&out, lambda.is_some()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Hard checks fail the run; the others are reported only.
    pub hard: bool,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn hard_failures(&self) -> usize {
        self.checks.iter().filter(|c| c.hard && !c.passed).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = match (c.passed, c.hard) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "NOTE",
            };
            let _ = writeln!(out, "{tag} {}: {}", c.name, c.detail);
        }
        out
    }
}

/// Random densities drawn for the Pythagoras audit.
pub const VERIFY_SAMPLES: usize = 5;

/// Runs the invariant suites on the configured instance.
pub fn verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut push = |name: &str, hard: bool, passed: bool, detail: String| {
        checks.push(CheckResult {
            name: name.to_string(),
            hard,
            passed,
            detail,
        })
    };
    let inst = Instance::build(cfg)?;
    let dim = inst.mu.dim();

    let bad = inst.lat.check_invariants(&inst.mu);
    push(
        "lattice invariants",
        true,
        bad.is_empty(),
        format!("{} cubes, {} violations", inst.lat.cubes().len(), bad.len()),
    );

    let wf = weak_form_check(&ConstantMatrix::identity(dim), &BumpSpec::default(), &GridSpec::default())?;
    push(
        "kernel weak form",
        true,
        wf.residual < 1e-2 * wf.phi0,
        format!("residual {:e}, φ(0) {:e}", wf.residual, wf.phi0),
    );

    let full = lattice_filtration(&inst.lat);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = 0.0_f64;
    for _ in 0..VERIFY_SAMPLES {
        let f: Vec<f64> = (0..inst.mu.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = decompose_energy(&f, &full, &inst.lat, &inst.mu);
        worst = worst.max((d.total - d.norm2).abs() / d.norm2);
    }
    push(
        "martingale Pythagoras",
        true,
        worst <= 1e-10,
        format!("worst relative gap {worst:e} over {VERIFY_SAMPLES} densities"),
    );

    match inst.filtration(cfg) {
        Ok((_, filt)) => {
            let v = filt.disjointness_violations(&inst.lat, inst.mu.len());
            push(
                "generation disjointness",
                true,
                v.is_empty(),
                format!("{} generations, {} overlaps", filt.generation_count(), v.len()),
            );
        }
        Err(e) => push("generation disjointness", false, false, format!("no filtration: {e}")),
    }

    let bump = BumpField::new(0, [0.0; 3], 1.0, 1.0)?;
    let g = g_field(&MatrixField::identity(dim), &bump, cfg.variational.refine)?;
    let rep = reproducing_check(&EllipticKernel::identity(dim), &bump, &g, &[[0.0; 3]])?;
    push(
        "reproducing formula",
        true,
        rep.residual < 5e-2,
        format!("residual {:e} at the center", rep.residual),
    );

    match RootSystem::build(cfg) {
        Ok(rs) => {
            for &l in &cfg.variational.lambdas {
                let m = rs.minimize(cfg, l)?;
                push(
                    &format!("minimizer constraint (λ = {l})"),
                    true,
                    m.constraint_residual <= 1e-9 * rs.sys.total_mass(),
                    format!("residual {:e}", m.constraint_residual),
                );
                let mut worst = f64::INFINITY;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
                let radius = rs.sys.positions().iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max)
                    - rs.sys.positions().iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
                for _ in 0..20 {
                    let c = rs.sys.positions()[rng.gen_range(0..rs.sys.len())];
                    let ball = Ball::new(c, radius.max(f64::MIN_POSITIVE) * rng.gen_range(0.001..0.5))?;
                    if let Ok(v) = variation_derivative_check(&m.b, &rs.sys, l, &ball) {
                        worst = worst.min(v.quotient / v.g0);
                    }
                }
                push(
                    &format!("first variation (λ = {l})"),
                    false,
                    worst >= -1e-3,
                    format!("min G′(0⁺)/G(0) = {worst:e}"),
                );
                push(
                    &format!("pointwise inequality (λ = {l})"),
                    false,
                    !m.hypothesis_holds || m.pointwise_defect <= 0.05 * 6.0 * l,
                    format!(
                        "hypothesis {}, defect {:e}, sup b {:.4}",
                        m.hypothesis_holds, m.pointwise_defect, m.sup_b
                    ),
                );
            }
        }
        Err(e) => push("minimizer audits", false, false, format!("skipped: {e}")),
    }
    Ok(VerifyReport { checks })
}
