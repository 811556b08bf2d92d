use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use irrsio::config::ExperimentConfig;
use irrsio::experiment::{self, Instance};
use irrsio::measure::AtomicMeasure;
use irrsio::Result;

#[derive(Parser, Debug)]
#[command(name = "irrsio", version, about = "Martingale energies of elliptic single-layer gradients on discrete measures")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "IRRSIO_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write the configured measure as `x y [z] weight` lines.
    Generate,
    /// Dump the lattice, one cube per line.
    BuildLattice,
    /// Evaluate `T_ε μ` at atoms or at target points.
    Apply {
        /// Measure file; the configured measure when absent.
        #[arg(long)]
        measure: Option<PathBuf>,
        /// Matrix-field spec as JSON, overriding the configured one.
        #[arg(long)]
        field: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        /// `atoms` or a file of `x y [z]` lines.
        #[arg(long, default_value = "atoms")]
        targets: String,
    },
    /// Per-node martingale energies of `Tμ`.
    Decompose,
    /// Energy and operator-norm growth over the configured sizes.
    Sweep {
        /// Sizes to sweep, overriding the configured list.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Leave the wall-clock column empty.
        #[arg(long)]
        no_timing: bool,
    },
    /// Minimize the variational functional on the root cube.
    Variational {
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Evaluate the final chain for the minimizer.
    Contradiction {
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Run the invariant suites; nonzero exit on hard failures.
    Verify,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::read_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                Err(e) if e.kind() == ErrorKind::BrokenPipe => {}
                r => r?,
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = load_config(&cli.common)?;
    let out = cli.common.out.clone().or_else(|| cfg.output.clone().map(PathBuf::from));
    let out = out.as_deref();
    match cli.cmd {
        Cmd::Generate => emit(&experiment::generate(&cfg)?, out)?,
        Cmd::BuildLattice => emit(&experiment::build_lattice_text(&cfg)?, out)?,
        Cmd::Apply {
            measure,
            field,
            eps,
            targets,
        } => {
            if let Some(f) = field {
                cfg.field = serde_json::from_str(&f)?;
            }
            if eps.is_some() {
                cfg.operator.eps = eps;
            }
            cfg.validate()?;
            let mu = match measure {
                Some(p) => AtomicMeasure::read_file(&p)?,
                None => cfg.measure.build(cfg.seed)?,
            };
            let inst = Instance::from_measure(&cfg, mu)?;
            let pts = if targets == "atoms" {
                None
            } else {
                let text = std::fs::read_to_string(&targets)?;
                Some(experiment::parse_points(&text, inst.mu.dim(), &targets)?)
            };
            emit(&experiment::apply_text(&inst, pts.as_deref())?, out)?;
        }
        Cmd::Decompose => emit(&experiment::decompose_text(&cfg)?, out)?,
        Cmd::Sweep { sizes, no_timing } => {
            if let Some(s) = sizes {
                cfg.sweep.sizes = s;
                cfg.validate()?;
            }
            emit(&experiment::sweep_text(&cfg, !no_timing), out)?;
        }
        Cmd::Variational { lambda, budget } => {
            if let Some(b) = budget {
                cfg.variational.options.budget = b;
            }
            emit(&experiment::variational_json(&cfg, lambda)?, out)?;
        }
        Cmd::Contradiction { lambda, budget } => {
            if let Some(b) = budget {
                cfg.variational.options.budget = b;
            }
            emit(&experiment::contradiction_json(&cfg, lambda)?, out)?;
        }
        Cmd::Verify => {
            let rep = experiment::verify(&cfg)?;
            emit(&rep.to_text(), out)?;
            if rep.hard_failures() > 0 {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
