//! Preset experiments on the reference geometry.

use std::path::{Path, PathBuf};

use coopmc::analytical::{Path as EvalPath, SdConstantObjective};
use coopmc::channel::{build_gains, DiffusionParams};
use coopmc::config::ExperimentConfig;
use coopmc::optimizer::{joint_optimize, Strategy};
use coopmc::schemes::{MajorityObjective, SchemeSpec, SingleLinkObjective, SINGLE_LINK_EMISSION};
use coopmc::simulator::{Culling, SimConfig, Simulation};
use coopmc::topology::{build_line_layout, build_single_link, build_symmetric_ring};

use crate::output::Csv;
use crate::{Failure, Globals};

/// Receiver thresholds swept by the threshold-curve preset.
pub const FIG2_XI_RX: std::ops::RangeInclusive<u32> = 1..=120;
/// Fixed FC threshold of the pooled scheme and per-type threshold of majority fusion.
pub const FIG2_XI_FC: u32 = 6;
pub const FIG2_XI_TYPE: u32 = 4;
/// Search grid of the optimizing presets.
pub const PRESET_XI_RX: std::ops::RangeInclusive<u32> = 1..=40;
pub const PRESET_XI_FC: std::ops::RangeInclusive<u32> = 1..=80;
pub const PRESET_TRIALS: u64 = 2000;

fn base(g: &Globals) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.detection.xi_rx_range = [*PRESET_XI_RX.start(), *PRESET_XI_RX.end()];
    cfg.detection.xi_fc_range = [*PRESET_XI_FC.start(), *PRESET_XI_FC.end()];
    cfg.simulation.trials = PRESET_TRIALS;
    g.apply(&mut cfg);
    cfg
}

/// Average error against the receiver threshold for the three schemes.
pub fn fig2(g: &Globals, out: &Path) -> Result<PathBuf, Failure> {
    let cfg = base(g);
    let len = cfg.sequence.length;
    let p1 = cfg.sequence.p1;
    let avg = cfg.average_config();
    let timing = cfg.timing;
    let topo = build_symmetric_ring(3, 0.225, 0.225)?;
    let params = DiffusionParams::reference(3);
    let gains = build_gains(&topo, &params, &timing, len)?;
    let sd = SdConstantObjective::new(&gains, params, len, p1, avg)?;
    let maj = MajorityObjective::new(&gains, params, 2, len, p1, &avg)?;
    let single_params = DiffusionParams { s_a: SINGLE_LINK_EMISSION, ..params };
    let single_gains = build_gains(&build_single_link(0.225, 0.225)?, &single_params, &timing, len)?;
    let single = SingleLinkObjective::new(&single_gains.tx_rx[0], SINGLE_LINK_EMISSION, len, p1, &avg)?;
    let single_curve = single.sweep(FIG2_XI_RX);

    let mut csv = Csv::new(&cfg, cfg.simulation.seed, &["xi_rx", "q_sd_constant", "q_majority", "q_single_link"]);
    for (i, xi) in FIG2_XI_RX.enumerate() {
        let a = sd.row(xi, FIG2_XI_FC..=FIG2_XI_FC)?[0];
        let b = coopmc::optimizer::GridObjective::point(&maj, xi, FIG2_XI_TYPE)?;
        csv.row([xi.to_string(), a.to_string(), b.to_string(), single_curve[i].to_string()]);
    }
    Ok(csv.write(out, "fig2.csv")?)
}

struct OptimumRow {
    label: String,
    xi_rx: u32,
    xi_fc: u32,
    q_analytic: f64,
    q_sim: f64,
    stderr: f64,
}

fn optimum_row(
    cfg: &ExperimentConfig,
    label: String,
    topo: &coopmc::topology::Topology,
    params: DiffusionParams,
    symmetric: bool,
) -> Result<OptimumRow, Failure> {
    let len = cfg.sequence.length;
    let mut avg = cfg.average_config();
    if !symmetric {
        avg.window.path = EvalPath::Asymmetric;
    }
    let gains = build_gains(topo, &params, &cfg.timing, len)?;
    let obj = SdConstantObjective::new(&gains, params, len, cfg.sequence.p1, avg)?;
    let best = joint_optimize(&obj, cfg.xi_rx_range(), cfg.xi_fc_range(), Strategy::Exhaustive)?;
    let thresholds = coopmc::analytical::Thresholds::uniform(topo.k(), best.xi_rx, best.xi_fc);
    let sim_cfg = SimConfig { scheme: SchemeSpec::SdConstant, culling: Culling::Aggressive, ..cfg.sim_config() };
    let est = Simulation::new(topo, &params, &cfg.timing, &thresholds, sim_cfg)?.estimate_error(len, None)?;
    Ok(OptimumRow {
        label,
        xi_rx: best.xi_rx,
        xi_fc: best.xi_fc,
        q_analytic: best.q_star,
        q_sim: est.q_bar,
        stderr: est.stderr_pooled,
    })
}

fn write_optima(cfg: &ExperimentConfig, first: &str, rows: Vec<OptimumRow>, out: &Path, name: &str) -> Result<PathBuf, Failure> {
    let mut csv = Csv::new(
        cfg,
        cfg.simulation.seed,
        &[first, "xi_rx_star", "xi_fc_star", "q_star_analytic", "q_star_sim", "sim_stderr"],
    );
    for r in rows {
        csv.row([r.label, r.xi_rx.to_string(), r.xi_fc.to_string(), r.q_analytic.to_string(), r.q_sim.to_string(), r.stderr.to_string()]);
    }
    Ok(csv.write(out, name)?)
}

/// Optimal error against the number of receivers, r_RX = 0.2 um.
pub fn fig3(g: &Globals, out: &Path) -> Result<PathBuf, Failure> {
    let mut cfg = base(g);
    cfg.topology.rx_radius_um = 0.2;
    let rows = (1..=6)
        .map(|k| {
            let topo = build_symmetric_ring(k, 0.2, 0.225)?;
            optimum_row(&cfg, k.to_string(), &topo, DiffusionParams::reference(k), true)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_optima(&cfg, "k", rows, out, "fig3.csv")
}

/// Optimal error against the distance of the moving receiver.
pub fn fig4(g: &Globals, out: &Path) -> Result<PathBuf, Failure> {
    let mut cfg = base(g);
    cfg.topology.builder = "line".into();
    cfg.topology.k = None;
    cfg.topology.position = Some(1);
    let rows = (1..=5)
        .map(|pos| {
            let topo = build_line_layout(pos, 0.225, 0.225)?;
            let d = topo.d_tx()[2];
            optimum_row(&cfg, format!("{d:.4}"), &topo, DiffusionParams::reference(3), false)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_optima(&cfg, "d_tx3", rows, out, "fig4.csv")
}
