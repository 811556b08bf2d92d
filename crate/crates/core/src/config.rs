//! JSON experiment configuration, validated at parse time.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::filtration::StoppingParams;
use crate::kernels::{EllipticKernel, FieldSpec};
use crate::lattice::LatticeParams;
use crate::measure::{make_cantor_measure, make_graph_measure, AtomicMeasure, RatioSchedule};
use crate::variational::MinimizeOptions;
use crate::vectorfield::DEFAULT_REFINE;

/// Measure section: a generator or a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// Four-corner Cantor set with one ratio per generation, or `ratio`
    /// repeated.
    Cantor {
        generations: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ratio: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ratios: Option<Vec<f64>>,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// `[gap, 1/4, 1/4, …]`.
    TwoPlateau {
        generations: usize,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// Block-alternating ratios, `[[ratio, count], …]` repeated.
    Blocks {
        generations: usize,
        blocks: Vec<(f64, usize)>,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Graph {
        atoms: usize,
        #[serde(default)]
        slope: f64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// Uniform atoms in the unit square (or cube), equal weights, drawn from
    /// the config seed.
    Random {
        atoms: usize,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    File { path: String },
}

fn default_dim() -> usize {
    2
}

impl Default for MeasureSpec {
    fn default() -> Self {
        MeasureSpec::TwoPlateau {
            generations: 4,
            dim: 2,
        }
    }
}

impl MeasureSpec {
    pub fn dim(&self) -> Option<usize> {
        match self {
            MeasureSpec::Cantor { dim, .. }
            | MeasureSpec::TwoPlateau { dim, .. }
            | MeasureSpec::Blocks { dim, .. }
            | MeasureSpec::Graph { dim, .. }
            | MeasureSpec::Random { dim, .. } => Some(*dim),
            MeasureSpec::File { .. } => None,
        }
    }

    /// The size parameter swept by `sweep`: generations or atom count.
    pub fn size(&self) -> Option<usize> {
        match self {
            MeasureSpec::Cantor { generations, .. }
            | MeasureSpec::TwoPlateau { generations, .. }
            | MeasureSpec::Blocks { generations, .. } => Some(*generations),
            MeasureSpec::Graph { atoms, .. } | MeasureSpec::Random { atoms, .. } => Some(*atoms),
            MeasureSpec::File { .. } => None,
        }
    }

    pub fn with_size(&self, n: usize) -> Result<Self> {
        let mut s = self.clone();
        match &mut s {
            MeasureSpec::Cantor {
                generations, ratios, ..
            } => {
                if let Some(r) = ratios {
                    if r.len() < n {
                        return Err(invalid(format!("ratio list has {} entries, need {n}", r.len())));
                    }
                    r.truncate(n);
                }
                *generations = n;
            }
            MeasureSpec::TwoPlateau { generations, .. } | MeasureSpec::Blocks { generations, .. } => {
                *generations = n
            }
            MeasureSpec::Graph { atoms, .. } | MeasureSpec::Random { atoms, .. } => *atoms = n,
            MeasureSpec::File { .. } => return Err(invalid("a measure file has no size parameter")),
        }
        Ok(s)
    }

    fn schedule(&self) -> Result<Option<RatioSchedule>> {
        Ok(match self {
            MeasureSpec::Cantor {
                generations,
                ratio,
                ratios,
                ..
            } => Some(match (ratio, ratios) {
                (Some(r), None) => RatioSchedule::uniform(*r, *generations)?,
                (None, Some(rs)) => {
                    if rs.len() != *generations {
                        return Err(invalid(format!(
                            "{} ratios listed for {generations} generations",
                            rs.len()
                        )));
                    }
                    RatioSchedule::new(rs.clone())?
                }
                _ => return Err(invalid("cantor measure needs exactly one of `ratio`, `ratios`")),
            }),
            MeasureSpec::TwoPlateau { generations, .. } => Some(RatioSchedule::two_plateau(*generations)?),
            MeasureSpec::Blocks {
                generations, blocks, ..
            } => Some(RatioSchedule::blocks(blocks, *generations)?),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.dim() {
            if d != 2 && d != 3 {
                return Err(invalid(format!("dim must be 2 or 3, got {d}")));
            }
        }
        self.schedule()?;
        match self {
            MeasureSpec::Cantor { generations, .. }
            | MeasureSpec::TwoPlateau { generations, .. }
            | MeasureSpec::Blocks { generations, .. } => {
                if *generations == 0 || *generations > crate::measure::MAX_CANTOR_GENERATIONS {
                    return Err(invalid(format!("generations must lie in 1..=12, got {generations}")));
                }
            }
            MeasureSpec::Graph { atoms, slope, .. } => {
                if *atoms < 2 || !(*slope >= 0.0) {
                    return Err(invalid("graph measure needs at least 2 atoms and slope ≥ 0"));
                }
            }
            MeasureSpec::Random { atoms, .. } => {
                if *atoms == 0 {
                    return Err(invalid("random measure needs at least 1 atom"));
                }
            }
            MeasureSpec::File { .. } => {}
        }
        Ok(())
    }

    pub fn build(&self, seed: u64) -> Result<AtomicMeasure> {
        self.validate()?;
        if let Some(s) = self.schedule()? {
            let generations = s.ratios().len();
            return make_cantor_measure(&s, generations, self.dim().unwrap_or(2));
        }
        match self {
            MeasureSpec::Graph { atoms, slope, dim } => make_graph_measure(*atoms, *slope, *dim),
            MeasureSpec::Random { atoms, dim } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let positions = (0..*atoms)
                    .map(|_| {
                        let mut p = [0.0; 3];
                        for c in p.iter_mut().take(*dim) {
                            *c = rng.gen::<f64>();
                        }
                        p
                    })
                    .collect();
                AtomicMeasure::new(*dim, positions, vec![1.0 / *atoms as f64; *atoms])
            }
            MeasureSpec::File { path } => AtomicMeasure::read_file(Path::new(path)),
            _ => unreachable!("schedule-based measures handled above"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSection {
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "A0")]
    pub a0: f64,
    pub depth: usize,
}

impl Default for LatticeSection {
    fn default() -> Self {
        Self {
            c0: 2.0,
            a0: 4.0,
            depth: 40,
        }
    }
}

impl LatticeSection {
    pub fn params(&self) -> LatticeParams {
        LatticeParams {
            c0: self.c0,
            a0: self.a0,
            depth: self.depth,
        }
    }
}

/// `τ` and `δ` default to the lattice calibration when absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingSection {
    pub tau: Option<f64>,
    pub delta: Option<f64>,
    #[serde(rename = "A")]
    pub a: f64,
    pub eps0: f64,
    pub kappa0: f64,
    pub max_generations: usize,
}

impl Default for StoppingSection {
    fn default() -> Self {
        Self {
            tau: None,
            delta: None,
            a: 20.0,
            eps0: 0.01,
            kappa0: 0.05,
            max_generations: 6,
        }
    }
}

impl StoppingSection {
    /// Fills `τ`, `δ` from `calibrated` where absent.
    pub fn resolve(&self, calibrated: Option<StoppingParams>) -> Result<StoppingParams> {
        let tau = self.tau.or(calibrated.map(|c| c.tau));
        let delta = self
            .delta
            .or_else(|| calibrated.filter(|_| self.tau.is_none()).map(|c| c.delta))
            .or_else(|| tau.map(|t| crate::filtration::DELTA_FRACTION * t));
        let (Some(tau), Some(delta)) = (tau, delta) else {
            return Err(invalid("no level qualifies for the τ calibration; set tau and delta"));
        };
        let p = StoppingParams {
            tau,
            delta,
            a: self.a,
            eps0: self.eps0,
            kappa0: self.kappa0,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    /// Truncation radius; half the minimum atom spacing when absent.
    #[serde(default)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationalSection {
    pub lambdas: Vec<f64>,
    pub options: MinimizeOptions,
    /// Grid pitch of `g_R` as a fraction of the annulus width.
    pub refine: usize,
}

impl Default for VariationalSection {
    fn default() -> Self {
        Self {
            lambdas: vec![1e-3, 10.0],
            options: MinimizeOptions::default(),
            refine: DEFAULT_REFINE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Size parameters: generations for Cantor-type measures, atom counts
    /// otherwise.
    pub sizes: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sizes: vec![2, 3, 4, 5, 6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub measure: MeasureSpec,
    pub field: FieldSpec,
    pub lattice: LatticeSection,
    pub stopping: StoppingSection,
    pub operator: OperatorSection,
    pub variational: VariationalSection,
    pub sweep: SweepSection,
    /// Output path used when `--out` is absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            measure: MeasureSpec::default(),
            field: FieldSpec::default(),
            lattice: LatticeSection::default(),
            stopping: StoppingSection::default(),
            operator: OperatorSection::default(),
            variational: VariationalSection::default(),
            sweep: SweepSection::default(),
            output: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.measure.validate()?;
        self.lattice.params().validate()?;
        self.field.build(self.measure.dim().unwrap_or(2))?;
        if let (Some(t), Some(d)) = (self.stopping.tau, self.stopping.delta) {
            StoppingParams {
                tau: t,
                delta: d,
                a: self.stopping.a,
                eps0: self.stopping.eps0,
                kappa0: self.stopping.kappa0,
            }
            .validate()?;
        } else if self.stopping.delta.is_some() {
            return Err(invalid("delta given without tau"));
        }
        if let Some(e) = self.operator.eps {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(invalid(format!("operator eps must be non-negative, got {e}")));
            }
        }
        if let Some(l) = self.variational.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(invalid(format!("lambda must be positive, got {l}")));
        }
        if self.variational.refine == 0 {
            return Err(invalid("refine must be positive"));
        }
        if self.sweep.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sweep sizes must be strictly ascending"));
        }
        Ok(())
    }

    /// Kernel for a measure of dimension `dim`.
    pub fn kernel(&self, dim: usize) -> Result<EllipticKernel> {
        Ok(EllipticKernel::new(self.field.build(dim)?))
    }
}
