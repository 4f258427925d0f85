mod output;
mod presets;

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coopmc::analytical::SdConstantObjective;
use coopmc::channel::{build_gains, DiffusionParams};
use coopmc::config::{Diagnostic, ExperimentConfig};
use coopmc::optimizer::{joint_optimize, OptimizationResult, Strategy};
use coopmc::schemes::{scheme_error, MajorityObjective, SchemeSpec, SingleLinkObjective};
use coopmc::simulator::Simulation;

use crate::output::{opt, Csv};

#[derive(Parser)]
#[command(name = "coopmc", version, about = "Cooperative molecular-communication error analysis and simulation")]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Globals {
    /// Experiment configuration (TOML). Reference defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Simulation seed; overrides `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Simulation trials; overrides `simulation.trials`.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Average over every TX sequence.
    #[arg(long, global = true, conflicts_with = "mc")]
    exact: bool,
    /// Average over sampled TX sequences.
    #[arg(long, global = true)]
    mc: bool,
}

impl Globals {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.simulation.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.simulation.trials = t;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.display().to_string();
        }
        if self.exact {
            cfg.sequence.averaging = "exact".into();
        }
        if self.mc {
            cfg.sequence.averaging = "mc".into();
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Analytical per-symbol error probabilities.
    Analytic,
    /// Particle simulation with standard errors, next to the analytical values.
    Simulate {
        /// Also write every trial as one JSON line to this file.
        #[arg(long)]
        trial_log: Option<PathBuf>,
    },
    /// Joint threshold optimization over the configured grid.
    Optimize {
        /// Coarse-to-fine search with this stride instead of the full grid.
        #[arg(long)]
        coarse: Option<u32>,
        /// Also write every evaluated point.
        #[arg(long)]
        surface: bool,
    },
    /// Analytical average error while one parameter varies.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Values to evaluate, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Preset experiments on the reference geometry.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    XiRx,
    XiFc,
    K,
    RxRadius,
    Position,
    SA,
    SB,
    P1,
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    Fig2,
    Fig3,
    Fig4,
}

/// Anything that ends a run with a nonzero status.
#[derive(Debug)]
pub enum Failure {
    Config(Vec<Diagnostic>),
    Model(coopmc::Error),
    Io(std::io::Error),
    Usage(String),
}

impl From<coopmc::Error> for Failure {
    fn from(e: coopmc::Error) -> Self {
        Failure::Model(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(d) => {
                writeln!(f, "invalid configuration:")?;
                for x in d {
                    writeln!(f, "  {x}")?;
                }
                Ok(())
            }
            Failure::Model(e) => write!(f, "error: {e}"),
            Failure::Io(e) => write!(f, "I/O error: {e}"),
            Failure::Usage(m) => write!(f, "error: {m}"),
        }
    }
}

fn load(g: &Globals) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p).map_err(Failure::Config)?,
        None => ExperimentConfig::default(),
    };
    g.apply(&mut cfg);
    let text = cfg.to_toml();
    coopmc::config::validate_config(&text).map_err(Failure::Config)
}

fn analytic(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, Failure> {
    let topo = cfg.topology()?;
    let r = scheme_error(
        &topo,
        &cfg.params(),
        &cfg.timing,
        &cfg.thresholds(),
        &cfg.scheme()?,
        cfg.sequence.length,
        cfg.sequence.p1,
        &cfg.average_config(),
    )?;
    let mut csv = Csv::new(cfg, cfg.simulation.seed, &["symbol", "q_md", "q_fa", "q_fc", "q_bar"]);
    for j in 0..r.q_fc.len() {
        csv.row([(j + 1).to_string(), r.q_md[j].to_string(), r.q_fa[j].to_string(), r.q_fc[j].to_string(), r.q_bar.to_string()]);
    }
    Ok(csv.write(out, "analytic.csv")?)
}

fn simulate(cfg: &ExperimentConfig, out: &Path, trial_log: Option<&Path>) -> Result<PathBuf, Failure> {
    let topo = cfg.topology()?;
    let len = cfg.sequence.length;
    let sim = Simulation::new(&topo, &cfg.params(), &cfg.timing, &cfg.thresholds(), cfg.sim_config())?;
    let est = match trial_log {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            sim.estimate_error(len, Some(&mut w))?
        }
        None => sim.estimate_error(len, None)?,
    };
    // Exact averaging may be out of reach for long sequences; the comparison
    // columns are then left empty.
    let analytic = scheme_error(
        &topo,
        &cfg.params(),
        &cfg.timing,
        &cfg.thresholds(),
        &cfg.scheme()?,
        len,
        cfg.sequence.p1,
        &cfg.average_config(),
    )
    .ok();
    let mut csv = Csv::new(
        cfg,
        cfg.simulation.seed,
        &["symbol", "ones", "zeros", "misses", "false_alarms", "q_md", "q_fa", "q_fc", "stderr", "q_fc_analytic"],
    );
    let n = est.trials as f64;
    for (j, s) in est.per_symbol.iter().enumerate() {
        csv.row([
            (j + 1).to_string(),
            s.ones.to_string(),
            s.zeros.to_string(),
            s.misses.to_string(),
            s.false_alarms.to_string(),
            s.q_md.to_string(),
            s.q_fa.to_string(),
            s.q_fc.to_string(),
            (s.q_fc * (1.0 - s.q_fc) / n).sqrt().to_string(),
            opt(analytic.as_ref().map(|a| a.q_fc[j])),
        ]);
    }
    let total = |f: fn(&coopmc::simulator::SymbolEstimate) -> u64| est.per_symbol.iter().map(f).sum::<u64>().to_string();
    csv.row([
        "mean".to_string(),
        total(|s| s.ones),
        total(|s| s.zeros),
        total(|s| s.misses),
        total(|s| s.false_alarms),
        String::new(),
        String::new(),
        est.q_bar.to_string(),
        est.stderr_pooled.to_string(),
        opt(analytic.as_ref().map(|a| a.q_bar)),
    ]);
    if let Some(a) = &analytic {
        let z = (est.q_bar - a.q_bar) / est.stderr_pooled;
        eprintln!("simulated {:.6e} +- {:.2e}, analytical {:.6e} ({z:+.2} standard errors)", est.q_bar, est.stderr_pooled, a.q_bar);
    }
    Ok(csv.write(out, "simulate.csv")?)
}

fn run_optimizer(cfg: &ExperimentConfig, strategy: Strategy) -> Result<OptimizationResult, Failure> {
    let topo = cfg.topology()?;
    let len = cfg.sequence.length;
    let p1 = cfg.sequence.p1;
    let mut avg = cfg.average_config();
    if !(coopmc::topology::is_symmetric(&topo, coopmc::analytical::SYMMETRY_TOL) && topo.uniform_radii()) {
        avg.window.path = coopmc::analytical::Path::Asymmetric;
    }
    let params = cfg.params();
    let (rx, fc) = (cfg.xi_rx_range(), cfg.xi_fc_range());
    Ok(match cfg.scheme()? {
        SchemeSpec::SdConstant => {
            let gains = build_gains(&topo, &params, &cfg.timing, len)?;
            joint_optimize(&SdConstantObjective::new(&gains, params, len, p1, avg)?, rx, fc, strategy)?
        }
        SchemeSpec::Majority { vote, .. } => {
            let gains = build_gains(&topo, &params, &cfg.timing, len)?;
            joint_optimize(&MajorityObjective::new(&gains, params, vote, len, p1, &avg)?, rx, fc, strategy)?
        }
        SchemeSpec::SingleLink { s_a } => {
            let gains = build_gains(&topo, &DiffusionParams { s_a, ..params }, &cfg.timing, len)?;
            let obj = SingleLinkObjective::new(&gains.tx_rx[0], s_a, len, p1, &avg)?;
            let first = *fc.start();
            joint_optimize(&obj, rx, first..=first, strategy)?
        }
    })
}

fn optimize(cfg: &ExperimentConfig, out: &Path, coarse: Option<u32>, surface: bool) -> Result<PathBuf, Failure> {
    let strategy = coarse.map_or(Strategy::Exhaustive, |stride| Strategy::CoarseToFine { stride });
    let best = run_optimizer(cfg, strategy)?;
    let label = match strategy {
        Strategy::Exhaustive => "exhaustive".to_string(),
        Strategy::CoarseToFine { stride } => format!("coarse-to-fine-{stride} (best effort)"),
    };
    let mut csv = Csv::new(cfg, cfg.simulation.seed, &["scheme", "strategy", "xi_rx_star", "xi_fc_star", "q_star", "evaluations"]);
    csv.row([
        cfg.detection.scheme.clone(),
        label,
        best.xi_rx.to_string(),
        best.xi_fc.to_string(),
        best.q_star.to_string(),
        best.evaluations.to_string(),
    ]);
    if surface {
        let mut s = Csv::new(cfg, cfg.simulation.seed, &["xi_rx", "xi_fc", "q_bar"]);
        for p in &best.surface {
            s.row([p.xi_rx.to_string(), p.xi_fc.to_string(), p.q_bar.to_string()]);
        }
        s.write(out, "surface.csv")?;
    }
    Ok(csv.write(out, "optimize.csv")?)
}

fn whole(v: f64, name: &str) -> Result<u64, Failure> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as u64)
    } else {
        Err(Failure::Usage(format!("{name} takes non-negative integer values, got {v}")))
    }
}

fn sweep(cfg: &ExperimentConfig, out: &Path, param: SweepParam, values: &[f64]) -> Result<PathBuf, Failure> {
    let name = SweepParam::to_possible_value(&param).unwrap().get_name().to_string();
    let mut csv = Csv::new(cfg, cfg.simulation.seed, &["param", "value", "q_bar"]);
    for &v in values {
        let mut c = cfg.clone();
        match param {
            SweepParam::XiRx => c.detection.xi_rx = vec![whole(v, &name)? as u32],
            SweepParam::XiFc => c.detection.xi_fc = whole(v, &name)? as u32,
            SweepParam::K => {
                c.topology.builder = "symmetric-ring".into();
                c.topology.k = Some(whole(v, &name)? as usize);
                c.diffusion.s_b = None;
            }
            SweepParam::RxRadius => c.topology.rx_radius_um = v,
            SweepParam::Position => {
                c.topology.builder = "line".into();
                c.topology.k = None;
                c.topology.position = Some(whole(v, &name)? as usize);
            }
            SweepParam::SA => c.diffusion.s_a = whole(v, &name)?,
            SweepParam::SB => c.diffusion.s_b = Some(whole(v, &name)?),
            SweepParam::P1 => c.sequence.p1 = v,
        }
        let c = coopmc::config::validate_config(&c.to_toml()).map_err(Failure::Config)?;
        let topo = c.topology()?;
        let r = scheme_error(
            &topo,
            &c.params(),
            &c.timing,
            &c.thresholds(),
            &c.scheme()?,
            c.sequence.length,
            c.sequence.p1,
            &c.average_config(),
        )?;
        csv.row([name.clone(), v.to_string(), r.q_bar.to_string()]);
    }
    Ok(csv.write(out, "sweep.csv")?)
}

fn run(cli: Cli) -> Result<PathBuf, Failure> {
    let g = &cli.globals;
    if let Command::Reproduce { figure } = cli.command {
        let out = g.out.clone().unwrap_or_else(|| PathBuf::from(ExperimentConfig::default().output.dir));
        return match figure {
            Figure::Fig2 => presets::fig2(g, &out),
            Figure::Fig3 => presets::fig3(g, &out),
            Figure::Fig4 => presets::fig4(g, &out),
        };
    }
    let cfg = load(g)?;
    let out = PathBuf::from(&cfg.output.dir);
    match cli.command {
        Command::Analytic => analytic(&cfg, &out),
        Command::Simulate { trial_log } => simulate(&cfg, &out, trial_log.as_deref()),
        Command::Optimize { coarse, surface } => optimize(&cfg, &out, coarse, surface),
        Command::Sweep { param, values } => sweep(&cfg, &out, param, &values),
        Command::Reproduce { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.globals.threads {
            b = b.num_threads(n);
        }
        match b.build() {
            Ok(p) => p,
            Err(e) => {
                eprintln!("error: cannot start worker threads: {e}");
                return ExitCode::FAILURE;
            }
        }
    };
    match pool.install(|| run(cli)) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e @ Failure::Config(_)) => {
            eprint!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
