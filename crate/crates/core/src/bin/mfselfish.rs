use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mfselfish::config::ExperimentConfig;
use mfselfish::experiments::{run_lemma_decay, run_matching, run_scaling, run_simulation, RunSummary};
use mfselfish::norms::{BlockKind, NormKind};

const EXIT_TREND: u8 = 2;
const EXIT_ERROR: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mfselfish",
    version,
    about = "Selfish decentralized control of heterogeneous agent populations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Social costs of selfish, compliant and violating parameters over n.
    Scaling(Common),
    /// Average-term norms against their closed-form bounds.
    LemmaDecay(Common),
    /// Closed-loop trajectories under a common sinusoid and noise.
    Simulate(Common),
    /// Single-agent model matching report.
    Matching {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated population sizes, ascending (the simulated sizes
    /// for `simulate`).
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long, value_enum)]
    block: Option<BlockArg>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Hinf,
    H2,
}

#[derive(Clone, Copy, ValueEnum)]
enum BlockArg {
    One,
    Two,
}

impl Common {
    fn resolve(&self) -> mfselfish::Result<ExperimentConfig> {
        self.resolve_for(false)
    }

    fn resolve_for(&self, simulate: bool) -> mfselfish::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        match &self.n_list {
            Some(list) if simulate => cfg.simulation.n_list = list.clone(),
            Some(list) => cfg.n_list = list.clone(),
            None => {}
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(norm) = self.norm {
            cfg.norm = match norm {
                NormArg::Hinf => NormKind::Hinf,
                NormArg::H2 => NormKind::H2,
            };
        }
        if let Some(block) = self.block {
            cfg.block = match block {
                BlockArg::One => BlockKind::One,
                BlockArg::Two => BlockKind::Two,
            };
        }
        cfg.deterministic |= self.deterministic;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(summary: &RunSummary) -> ExitCode {
    for path in &summary.outputs {
        println!("wrote {}", path.display());
    }
    println!("manifest {}", summary.manifest.display());
    for c in &summary.checks {
        println!(
            "{} {}: {:.6} (threshold {:.6})",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
    if summary.trends_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_TREND)
    }
}

fn run(cli: Cli) -> mfselfish::Result<ExitCode> {
    Ok(match cli.command {
        Command::Scaling(c) => report(&run_scaling(&c.resolve()?)?),
        Command::LemmaDecay(c) => report(&run_lemma_decay(&c.resolve()?)?),
        Command::Simulate(c) => report(&run_simulation(&c.resolve_for(true)?)?),
        Command::Matching { common, a, b } => {
            let mut cfg = common.resolve()?;
            if let Some(a) = a {
                cfg.single_agent.a = a;
            }
            if let Some(b) = b {
                cfg.single_agent.b = b;
            }
            let (summary, r) = run_matching(&cfg)?;
            println!(
                "a={} b={} mu={:.6} cost(Z=0)={:.6} gap={:.3e} iterations={} converged={} taps={}",
                r.a, r.b, r.mu, r.cost_at_zero, r.certificate_gap, r.iterations, r.converged, r.fir_order
            );
            report(&summary)
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
