//! Baselines: a single TX-RX link, and majority-vote fusion where every
//! receiver reports with its own molecule type.

use std::fmt;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytical::{
    average_error, pairwise_reduce, topology_hash, report_from_sums, tx_prefixes, AverageConfig, ErrorReport, Model, ReportMeta, Thresholds,
    WeightedPrefix,
};
use crate::channel::{build_gains, poisson_cdf_run, ChannelGains, DiffusionParams, ProtocolTiming};
use crate::error::{Error, Result};
use crate::optimizer::GridObjective;
use crate::topology::Topology;

/// Molecules released per "1" by the TX of the single-link baseline.
pub const SINGLE_LINK_EMISSION: u64 = 10_000;

/// Per-receiver report budget shared by both cooperative schemes.
pub const REPORT_BUDGET: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SchemeSpec {
    /// All receivers report with one molecule type; the FC thresholds the pooled count.
    SdConstant,
    /// The FC decodes each receiver's report against `xi_type` and declares
    /// "1" when at least `vote` receivers were decoded as "1".
    Majority { xi_type: u32, vote: usize },
    /// One TX and one RX, no FC; the TX releases `s_a` molecules per "1".
    SingleLink { s_a: u64 },
}

impl SchemeSpec {
    /// Majority with the default vote threshold `ceil((k + 1) / 2)`.
    pub fn majority(k: usize, xi_type: u32) -> Self {
        SchemeSpec::Majority { xi_type, vote: (k + 2) / 2 }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        match *self {
            SchemeSpec::Majority { xi_type, vote } => {
                if xi_type == 0 {
                    return Err(Error::InvalidArgument("per-type threshold must be at least 1".into()));
                }
                if vote == 0 || vote > k {
                    return Err(Error::InvalidArgument(format!("vote threshold must lie in 1..={k}, got {vote}")));
                }
                Ok(())
            }
            SchemeSpec::SingleLink { .. } | SchemeSpec::SdConstant => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchemeSpec::SdConstant => "sd-constant",
            SchemeSpec::Majority { .. } => "majority",
            SchemeSpec::SingleLink { .. } => "single-link",
        }
    }
}

impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeSpec::SdConstant => write!(f, "sd-constant"),
            SchemeSpec::Majority { xi_type, vote } => write!(f, "majority(xi_type={xi_type},vote={vote})"),
            SchemeSpec::SingleLink { s_a } => write!(f, "single-link(s_a={s_a})"),
        }
    }
}

fn meta(scheme: &SchemeSpec, xi_rx: Vec<u32>, xi_fc: u32, cfg: &AverageConfig, path: &str) -> ReportMeta {
    ReportMeta {
        scheme: scheme.to_string(),
        topology_hash: String::new(),
        xi_rx,
        xi_fc,
        isi_window: cfg.window.isi_window,
        averaging: cfg.averaging.to_string(),
        weighting: cfg.weighting,
        path: path.into(),
        clamped_gains: 0,
    }
}

fn single_link_sums(prefixes: &[WeightedPrefix], gains: &[f64], s_a: f64, xi_rx: RangeInclusive<u32>, len: usize) -> Vec<f64> {
    let lo = *xi_rx.start();
    let nx = (xi_rx.end() + 1).saturating_sub(lo) as usize;
    let width = nx * len * 2;
    let parts: Vec<Vec<f64>> = prefixes
        .par_chunks(256)
        .map(|chunk| {
            let mut acc = vec![0.0; width];
            let mut cdf = vec![0.0; nx];
            for pre in chunk {
                let s = pre.bits.len();
                let isi: f64 = pre.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| gains[s - i]).sum::<f64>() * s_a;
                poisson_cdf_run(i64::from(lo) - 1, isi + s_a * gains[0], &mut cdf);
                for (x, f) in cdf.iter().enumerate() {
                    acc[(x * len + s) * 2] += pre.weight * f;
                }
                poisson_cdf_run(i64::from(lo) - 1, isi, &mut cdf);
                for (x, f) in cdf.iter().enumerate() {
                    acc[(x * len + s) * 2 + 1] += pre.weight * (1.0 - f);
                }
            }
            acc
        })
        .collect();
    pairwise_reduce(parts, width)
}

/// Average error of a single TX-RX link whose receiver decision is final.
pub fn single_link_error(gains: &[f64], s_a: u64, xi_rx: u32, len: usize, p1: f64, cfg: &AverageConfig) -> Result<ErrorReport> {
    if xi_rx == 0 {
        return Err(Error::InvalidArgument("thresholds must be at least 1".into()));
    }
    if gains.len() < len {
        return Err(Error::LengthMismatch { seq: len, gains: gains.len() });
    }
    let prefixes = tx_prefixes(len, p1, cfg)?;
    let sums = single_link_sums(&prefixes, gains, s_a as f64, xi_rx..=xi_rx, len);
    let (q_md, q_fa, q_fc, q_bar) = report_from_sums(&sums, len, p1);
    Ok(ErrorReport {
        q_md,
        q_fa,
        q_fc,
        q_bar,
        meta: meta(&SchemeSpec::SingleLink { s_a }, vec![xi_rx], 0, cfg, "single-link"),
    })
}

/// Single-link average error as a function of the receiver threshold. The
/// FC threshold argument is ignored.
pub struct SingleLinkObjective {
    gains: Vec<f64>,
    s_a: f64,
    len: usize,
    p1: f64,
    prefixes: Vec<WeightedPrefix>,
}

impl SingleLinkObjective {
    pub fn new(gains: &[f64], s_a: u64, len: usize, p1: f64, cfg: &AverageConfig) -> Result<Self> {
        if gains.len() < len {
            return Err(Error::LengthMismatch { seq: len, gains: gains.len() });
        }
        Ok(Self { gains: gains.to_vec(), s_a: s_a as f64, len, p1, prefixes: tx_prefixes(len, p1, cfg)? })
    }

    /// `Q_bar` for each receiver threshold in `xi_rx`.
    pub fn sweep(&self, xi_rx: RangeInclusive<u32>) -> Vec<f64> {
        let sums = single_link_sums(&self.prefixes, &self.gains, self.s_a, xi_rx, self.len);
        sums.chunks(self.len * 2).map(|c| report_from_sums(c, self.len, self.p1).3).collect()
    }
}

impl GridObjective for SingleLinkObjective {
    fn point(&self, xi_rx: u32, _xi_fc: u32) -> Result<f64> {
        Ok(self.sweep(xi_rx..=xi_rx)[0])
    }

    fn row(&self, xi_rx: u32, xi_fc: RangeInclusive<u32>) -> Result<Vec<f64>> {
        let q = self.point(xi_rx, 0)?;
        Ok(xi_fc.map(|_| q).collect())
    }
}

/// `P(at least n of the independent events happen)` for each `n` in `0..=p.len()`.
fn at_least(p: &[f64]) -> Vec<f64> {
    let mut dist = vec![1.0];
    for &q in p {
        let mut next = vec![0.0; dist.len() + 1];
        for (n, &w) in dist.iter().enumerate() {
            next[n] += w * (1.0 - q);
            next[n + 1] += w * q;
        }
        dist = next;
    }
    let mut tail = vec![0.0; dist.len() + 1];
    for n in (0..dist.len()).rev() {
        tail[n] = tail[n + 1] + dist[n];
    }
    tail.truncate(dist.len());
    tail
}

/// FC-side mixtures of one receiver's own report mean, for the symbol after
/// `history`, for both TX bits. Older decisions enter through their mean.
fn own_report_mixtures(
    model: &Model<'_>,
    rx: usize,
    decision_probs: &[f64],
    current: [f64; 2],
    window: usize,
) -> [Vec<(f64, f64)>; 2] {
    let s = decision_probs.len();
    let c = &model.gains.rx_fc[rx];
    let first = s.saturating_sub(window);
    let tail: f64 = (0..first).map(|i| decision_probs[i] * model.s_b * c[s - i]).sum();
    let mut mix = vec![(tail, 1.0)];
    for i in first..s {
        let q = decision_probs[i];
        let step = model.s_b * c[s - i];
        mix = mix.iter().flat_map(|&(m, p)| [(m, p * (1.0 - q)), (m + step, p * q)]).filter(|e| e.1 > 0.0).collect();
    }
    current.map(|q| {
        mix.iter()
            .flat_map(|&(m, p)| [(m, p * (1.0 - q)), (m + model.s_b * c[0], p * q)])
            .filter(|e| e.1 > 0.0)
            .collect()
    })
}

/// Per-prefix, per-bit, per-receiver mixtures for the majority scheme.
type ReportMixtures = Vec<[Vec<Vec<(f64, f64)>>; 2]>;

fn majority_mixtures(model: &Model<'_>, prefixes: &[WeightedPrefix], window: usize) -> ReportMixtures {
    prefixes
        .par_iter()
        .map(|pre| {
            let probs = model.decision_probs(&pre.bits);
            let mut with_one = pre.bits.clone();
            with_one.push(true);
            let mut with_zero = pre.bits.clone();
            with_zero.push(false);
            let cur1 = model.decision_probs(&with_one);
            let cur0 = model.decision_probs(&with_zero);
            let s = pre.bits.len();
            let mut out: [Vec<Vec<(f64, f64)>>; 2] = [Vec::new(), Vec::new()];
            for rx in 0..model.gains.k() {
                let [m0, m1] = own_report_mixtures(model, rx, &probs[rx], [cur0[rx][s], cur1[rx][s]], window);
                out[0].push(m0);
                out[1].push(m1);
            }
            out
        })
        .collect()
}

fn majority_sums(
    prefixes: &[WeightedPrefix],
    mixtures: &ReportMixtures,
    xi_type: RangeInclusive<u32>,
    vote: usize,
    len: usize,
) -> Vec<f64> {
    let lo = *xi_type.start();
    let nx = (xi_type.end() + 1).saturating_sub(lo) as usize;
    let width = nx * len * 2;
    let parts: Vec<Vec<f64>> = prefixes
        .par_chunks(64)
        .zip(mixtures.par_chunks(64))
        .map(|(pres, mixes)| {
            let mut acc = vec![0.0; width];
            let mut cdf = vec![0.0; nx];
            for (pre, per_bit) in pres.iter().zip(mixes) {
                let s = pre.bits.len();
                for (bit, per_rx) in per_bit.iter().enumerate() {
                    // decoded[x][rx] = P(report of rx decoded as "1") at threshold lo + x
                    let mut decoded = vec![vec![0.0; per_rx.len()]; nx];
                    for (rx, mix) in per_rx.iter().enumerate() {
                        for &(m, p) in mix {
                            poisson_cdf_run(i64::from(lo) - 1, m, &mut cdf);
                            for (x, f) in cdf.iter().enumerate() {
                                decoded[x][rx] += p * (1.0 - f);
                            }
                        }
                    }
                    for (x, d) in decoded.iter().enumerate() {
                        let ge = at_least(d)[vote];
                        let err = if bit == 1 { 1.0 - ge } else { ge };
                        acc[(x * len + s) * 2 + (1 - bit)] += pre.weight * err;
                    }
                }
            }
            acc
        })
        .collect();
    pairwise_reduce(parts, width)
}

/// Average error of majority-vote fusion with distinct report molecule types.
pub fn majority_rule_error(
    gains: &ChannelGains,
    params: &DiffusionParams,
    xi_rx: &[u32],
    scheme: &SchemeSpec,
    len: usize,
    p1: f64,
    cfg: &AverageConfig,
) -> Result<ErrorReport> {
    let SchemeSpec::Majority { xi_type, vote } = *scheme else {
        return Err(Error::InvalidArgument(format!("majority_rule_error called with {scheme}")));
    };
    scheme.validate(gains.k())?;
    if gains.lags() < len {
        return Err(Error::LengthMismatch { seq: len, gains: gains.lags() });
    }
    let thresholds = Thresholds { xi_rx: xi_rx.to_vec(), xi_fc: xi_type };
    let model = Model::new(gains, params, &thresholds)?;
    let prefixes = tx_prefixes(len, p1, cfg)?;
    let mixtures = majority_mixtures(&model, &prefixes, cfg.window.isi_window);
    let sums = majority_sums(&prefixes, &mixtures, xi_type..=xi_type, vote, len);
    let (q_md, q_fa, q_fc, q_bar) = report_from_sums(&sums, len, p1);
    Ok(ErrorReport { q_md, q_fa, q_fc, q_bar, meta: meta(scheme, xi_rx.to_vec(), xi_type, cfg, "per-type") })
}

/// Majority-rule average error over (receiver threshold, per-type threshold).
pub struct MajorityObjective<'a> {
    gains: &'a ChannelGains,
    params: DiffusionParams,
    vote: usize,
    len: usize,
    p1: f64,
    window: usize,
    prefixes: Vec<WeightedPrefix>,
}

impl<'a> MajorityObjective<'a> {
    pub fn new(gains: &'a ChannelGains, params: DiffusionParams, vote: usize, len: usize, p1: f64, cfg: &AverageConfig) -> Result<Self> {
        SchemeSpec::Majority { xi_type: 1, vote }.validate(gains.k())?;
        if gains.lags() < len {
            return Err(Error::LengthMismatch { seq: len, gains: gains.lags() });
        }
        let prefixes = tx_prefixes(len, p1, cfg)?;
        Ok(Self { gains, params, vote, len, p1, window: cfg.window.isi_window, prefixes })
    }
}

impl GridObjective for MajorityObjective<'_> {
    fn point(&self, xi_rx: u32, xi_type: u32) -> Result<f64> {
        Ok(self.row(xi_rx, xi_type..=xi_type)?[0])
    }

    fn row(&self, xi_rx: u32, xi_type: RangeInclusive<u32>) -> Result<Vec<f64>> {
        let thresholds = Thresholds::uniform(self.gains.k(), xi_rx, (*xi_type.start()).max(1));
        let model = Model::new(self.gains, &self.params, &thresholds)?;
        let mixtures = majority_mixtures(&model, &self.prefixes, self.window);
        let sums = majority_sums(&self.prefixes, &mixtures, xi_type, self.vote, self.len);
        Ok(sums.chunks(self.len * 2).map(|c| report_from_sums(c, self.len, self.p1).3).collect())
    }
}

/// Sequence-averaged error of any scheme on a topology.
#[allow(clippy::too_many_arguments)]
pub fn scheme_error(
    topo: &Topology,
    params: &DiffusionParams,
    timing: &ProtocolTiming,
    thresholds: &Thresholds,
    scheme: &SchemeSpec,
    len: usize,
    p1: f64,
    cfg: &AverageConfig,
) -> Result<ErrorReport> {
    scheme.validate(topo.k())?;
    let mut report = match *scheme {
        SchemeSpec::SdConstant => average_error(topo, params, timing, thresholds, len, p1, cfg)?,
        SchemeSpec::Majority { .. } => {
            let gains = build_gains(topo, params, timing, len)?;
            majority_rule_error(&gains, params, &thresholds.xi_rx, scheme, len, p1, cfg)?
        }
        SchemeSpec::SingleLink { s_a } => {
            if topo.k() != 1 {
                return Err(Error::InvalidArgument("the single-link scheme needs exactly one receiver".into()));
            }
            let gains = build_gains(topo, &DiffusionParams { s_a, ..*params }, timing, len)?;
            single_link_error(&gains.tx_rx[0], s_a, thresholds.xi_rx[0], len, p1, cfg)?
        }
    };
    report.meta.topology_hash = topology_hash(topo);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytical::{average_error_with_gains, AverageConfig, SdConstantObjective};
    use crate::channel::poisson_tails;
    use crate::topology::{build_single_link, build_symmetric_ring};

    fn toy(k: usize, tx: &[f64], fc: &[f64]) -> ChannelGains {
        ChannelGains { tx_rx: vec![tx.to_vec(); k], rx_fc: vec![fc.to_vec(); k], clamped: 0 }
    }

    #[test]
    fn dead_link_misses_every_one() {
        let cfg = AverageConfig::default();
        for p1 in [0.2, 0.5, 0.9] {
            let r = single_link_error(&[0.0; 4], 10_000, 1, 4, p1, &cfg).unwrap();
            assert!((r.q_bar - p1).abs() < 1e-15);
        }
    }

    #[test]
    fn single_link_is_sd_constant_with_perfect_report() {
        let tx = [0.0012, 0.0003, 0.0001, 0.00005];
        // Huge first-lag report gain, nothing afterwards: the FC reproduces the RX decision.
        let g = toy(1, &tx, &[1.0, 0.0, 0.0, 0.0]);
        let params = DiffusionParams { d_a: 1.0, d_b: 1.0, s_a: 8000, s_b: 1000 };
        let cfg = AverageConfig::default();
        for xi in [3, 8, 12] {
            let sd = average_error_with_gains(&g, &params, &Thresholds::uniform(1, xi, 1), 4, 0.5, &cfg).unwrap().0;
            let single = single_link_error(&tx, 8000, xi, 4, 0.5, &cfg).unwrap();
            assert!((sd.q_bar - single.q_bar).abs() < 1e-12, "xi={xi}");
        }
    }

    #[test]
    fn majority_with_one_receiver_equals_sd_constant() {
        let g = toy(1, &[0.0012, 0.0003, 0.0001], &[0.02, 0.002, 0.0005]);
        let params = DiffusionParams { d_a: 1.0, d_b: 1.0, s_a: 8000, s_b: 400 };
        let cfg = AverageConfig::default();
        for (xi_rx, xi) in [(4, 3), (9, 6), (12, 1)] {
            let sd = average_error_with_gains(&g, &params, &Thresholds::uniform(1, xi_rx, xi), 3, 0.5, &cfg).unwrap().0;
            let maj = majority_rule_error(&g, &params, &[xi_rx], &SchemeSpec::Majority { xi_type: xi, vote: 1 }, 3, 0.5, &cfg)
                .unwrap();
            assert!((sd.q_bar - maj.q_bar).abs() < 1e-13, "{xi_rx} {xi}");
            for s in 0..3 {
                assert!((sd.q_md[s] - maj.q_md[s]).abs() < 1e-13);
                assert!((sd.q_fa[s] - maj.q_fa[s]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn majority_with_perfect_reports_is_n_out_of_k() {
        let tx = [0.0012, 0.0003];
        let g = toy(3, &tx, &[1.0, 0.0]);
        let params = DiffusionParams { d_a: 1.0, d_b: 1.0, s_a: 8000, s_b: 1000 };
        let cfg = AverageConfig::default();
        let r = majority_rule_error(&g, &params, &[7; 3], &SchemeSpec::majority(3, 1), 1, 0.5, &cfg).unwrap();
        let q = poisson_tails(6, 8000.0 * tx[0]).unwrap().1;
        let md = 1.0 - at_least(&[q; 3])[2];
        assert!((r.q_md[0] - md).abs() < 1e-13);
        assert_eq!(r.q_fa[0], 0.0);
    }

    #[test]
    fn at_least_counts() {
        let t = at_least(&[0.5, 0.5]);
        assert_eq!(t, vec![1.0, 0.75, 0.25]);
        assert_eq!(at_least(&[]), vec![1.0]);
    }

    #[test]
    fn majority_vote_validation() {
        assert!(SchemeSpec::Majority { xi_type: 4, vote: 0 }.validate(3).is_err());
        assert!(SchemeSpec::Majority { xi_type: 4, vote: 4 }.validate(3).is_err());
        assert!(SchemeSpec::Majority { xi_type: 0, vote: 2 }.validate(3).is_err());
        assert_eq!(SchemeSpec::majority(3, 4), SchemeSpec::Majority { xi_type: 4, vote: 2 });
        assert_eq!(SchemeSpec::majority(4, 4), SchemeSpec::Majority { xi_type: 4, vote: 3 });
    }

    #[test]
    fn objectives_agree_with_reports() {
        let timing = ProtocolTiming::default();
        let topo = build_symmetric_ring(3, 0.225, 0.225).unwrap();
        let params = DiffusionParams::reference(3);
        let g = build_gains(&topo, &params, &timing, 3).unwrap();
        let cfg = AverageConfig::default();
        let maj = MajorityObjective::new(&g, params, 2, 3, 0.5, &cfg).unwrap();
        let row = maj.row(6, 2..=6).unwrap();
        let direct = majority_rule_error(&g, &params, &[6; 3], &SchemeSpec::Majority { xi_type: 4, vote: 2 }, 3, 0.5, &cfg).unwrap();
        assert!((row[2] - direct.q_bar).abs() < 1e-14);

        let single = build_single_link(0.225, 0.225).unwrap();
        let gs = build_gains(&single, &DiffusionParams { s_a: 10_000, ..params }, &timing, 3).unwrap();
        let obj = SingleLinkObjective::new(&gs.tx_rx[0], 10_000, 3, 0.5, &cfg).unwrap();
        let sweep = obj.sweep(1..=30);
        for (i, xi) in (1..=30).enumerate() {
            let r = single_link_error(&gs.tx_rx[0], 10_000, xi, 3, 0.5, &cfg).unwrap();
            assert!((sweep[i] - r.q_bar).abs() < 1e-14);
        }
        let sd = SdConstantObjective::new(&g, params, 3, 0.5, cfg).unwrap();
        assert!(sd.row(6, 6..=6).unwrap()[0] > 0.0);
    }
}
