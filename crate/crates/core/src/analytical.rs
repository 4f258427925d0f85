//! Closed-form error probabilities of the SD-Constant scheme.
//!
//! Every receiver reports a "1" with the same molecule type, so the FC only
//! sees the pooled count. Given the TX sequence, the receiver decisions are
//! independent Bernoulli variables and the pooled FC count is Poisson with a
//! mean that depends on every receiver's decision history. The functions here
//! evaluate the conditional miss / false-alarm probabilities (both the
//! per-receiver enumeration and its binomial shortcut for symmetric layouts)
//! and average them over TX sequences and decision histories.
//!
//! Decision histories older than `isi_window` symbols are not enumerated;
//! their FC contribution enters through the expected decision value.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{build_gains, poisson_cdf_run, poisson_tails, ChannelGains, DiffusionParams, ProtocolTiming};
use crate::error::{Error, Result};
use crate::optimizer::GridObjective;
use crate::topology::{is_symmetric, Topology};

/// Relative tolerance used to decide whether a layout is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Default cap on the number of receivers enumerated jointly (2^K vectors).
pub const DEFAULT_MAX_RECEIVERS: usize = 16;

/// Default cap on enumerated states (history windows, TX prefixes).
pub const DEFAULT_STATE_CAP: u128 = 1 << 22;

/// Atoms per partial sum in parallel reductions. Fixed, so the summation
/// tree does not depend on the worker count.
const REDUCE_CHUNK: usize = 2048;

/// Decision thresholds: decide "1" iff the count is `>=` the threshold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub xi_rx: Vec<u32>,
    pub xi_fc: u32,
}

impl Thresholds {
    /// Same receiver threshold for all `k` receivers.
    pub fn uniform(k: usize, xi_rx: u32, xi_fc: u32) -> Self {
        Self { xi_rx: vec![xi_rx; k], xi_fc }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.xi_rx.len() != k {
            return Err(Error::InvalidArgument(format!(
                "{} receiver thresholds for {k} receivers",
                self.xi_rx.len()
            )));
        }
        if self.xi_fc == 0 || self.xi_rx.contains(&0) {
            return Err(Error::InvalidArgument("thresholds must be at least 1".into()));
        }
        Ok(())
    }

    fn shared_rx(&self) -> Option<u32> {
        let first = *self.xi_rx.first()?;
        self.xi_rx.iter().all(|&x| x == first).then_some(first)
    }
}

/// Which tail of the pooled FC count is wanted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    /// `P(count < xi_fc)`: the FC decides "0".
    Below,
    /// `P(count >= xi_fc)`: the FC decides "1".
    AtOrAbove,
}

impl Tail {
    fn for_bit(bit: bool) -> Tail {
        if bit {
            Tail::Below
        } else {
            Tail::AtOrAbove
        }
    }
}

/// Tail probability of the pooled FC count. Independent Poisson counts add,
/// so only the total mean matters.
pub fn fc_tail(total_mean: f64, xi_fc: u32, tail: Tail) -> f64 {
    let (below, above) = poisson_tails(i64::from(xi_fc) - 1, total_mean.max(0.0)).unwrap_or((f64::NAN, f64::NAN));
    match tail {
        Tail::Below => below,
        Tail::AtOrAbove => above,
    }
}

/// Miss and false-alarm probability of one TX to RX link in the symbol after
/// `history` (the previous TX bits), for emission size `s_a` and threshold `xi`.
pub fn link_md_fa(history: &[bool], gains: &[f64], s_a: f64, xi: u32) -> Result<(f64, f64)> {
    if history.len() >= gains.len() {
        return Err(Error::LengthMismatch { seq: history.len() + 1, gains: gains.len() });
    }
    let isi = isi_mean(history, gains, s_a);
    let (p_md, _) = poisson_tails(i64::from(xi) - 1, isi + s_a * gains[0])?;
    let (_, p_fa) = poisson_tails(i64::from(xi) - 1, isi)?;
    Ok((p_md, p_fa))
}

/// Mean contributed by `history` to the symbol right after it.
fn isi_mean(history: &[bool], gains: &[f64], emission: f64) -> f64 {
    let j = history.len();
    emission * history.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| gains[j - i]).sum::<f64>()
}

/// Probability that a receiver decides "1" when its expected count is `mean`.
fn decide_one(mean: f64, xi: u32) -> f64 {
    poisson_tails(i64::from(xi) - 1, mean).map(|(_, above)| above).unwrap_or(f64::NAN)
}

/// Inputs shared by every SD-Constant evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub gains: &'a ChannelGains,
    pub s_a: f64,
    pub s_b: f64,
    pub thresholds: &'a Thresholds,
}

impl<'a> Model<'a> {
    pub fn new(gains: &'a ChannelGains, params: &DiffusionParams, thresholds: &'a Thresholds) -> Result<Self> {
        thresholds.validate(gains.k())?;
        Ok(Self { gains, s_a: params.s_a as f64, s_b: params.s_b as f64, thresholds })
    }

    fn k(&self) -> usize {
        self.gains.k()
    }

    /// `p[k][i]`: probability that receiver k decides "1" at symbol i given `tx[..=i]`.
    pub fn decision_probs(&self, tx: &[bool]) -> Vec<Vec<f64>> {
        (0..self.k())
            .map(|k| {
                let c = &self.gains.tx_rx[k];
                let xi = self.thresholds.xi_rx[k];
                (0..tx.len())
                    .map(|i| {
                        let mean = isi_mean(&tx[..i], c, self.s_a) + if tx[i] { self.s_a * c[0] } else { 0.0 };
                        decide_one(mean, xi)
                    })
                    .collect()
            })
            .collect()
    }

    /// Current-symbol decision probabilities for both values of the TX bit.
    fn current_probs(&self, history: &[bool]) -> [Vec<f64>; 2] {
        let isi: Vec<f64> = (0..self.k()).map(|k| isi_mean(history, &self.gains.tx_rx[k], self.s_a)).collect();
        let probs = |bit: bool| {
            (0..self.k())
                .map(|k| {
                    let mean = isi[k] + if bit { self.s_a * self.gains.tx_rx[k][0] } else { 0.0 };
                    decide_one(mean, self.thresholds.xi_rx[k])
                })
                .collect()
        };
        [probs(false), probs(true)]
    }

    fn check_len(&self, symbol: usize) -> Result<()> {
        if symbol >= self.gains.lags() {
            return Err(Error::LengthMismatch { seq: symbol + 1, gains: self.gains.lags() });
        }
        Ok(())
    }

    /// True if the binomial shortcut is valid for this model.
    pub fn is_exchangeable(&self) -> bool {
        let g = self.gains;
        let same = |rows: &[Vec<f64>]| {
            rows.iter().all(|r| r.iter().zip(&rows[0]).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1e-300)))
        };
        same(&g.tx_rx) && same(&g.rx_fc) && self.thresholds.shared_rx().is_some()
    }
}

/// A list of (extra FC mean, probability) pairs.
type Mixture = Vec<(f64, f64)>;

fn push_nonzero(out: &mut Mixture, mean: f64, p: f64) {
    if p > 0.0 {
        out.push((mean, p));
    }
}

/// Joint distribution of the current decisions of all receivers, one
/// Bernoulli per receiver, expressed as FC mean increments.
fn current_mixture_asym(q: &[f64], fc_gain0: impl Fn(usize) -> f64, s_b: f64) -> Mixture {
    let mut mix = vec![(0.0, 1.0)];
    for (k, &qk) in q.iter().enumerate() {
        let step = s_b * fc_gain0(k);
        let mut next = Vec::with_capacity(mix.len() * 2);
        for &(m, p) in &mix {
            push_nonzero(&mut next, m, p * (1.0 - qk));
            push_nonzero(&mut next, m + step, p * qk);
        }
        mix = next;
    }
    mix
}

fn binomial_pmf(k: usize, q: f64) -> Vec<f64> {
    let mut coeff = 1.0;
    (0..=k)
        .map(|n| {
            if n > 0 {
                coeff = coeff * (k - n + 1) as f64 / n as f64;
            }
            coeff * q.powi(n as i32) * (1.0 - q).powi((k - n) as i32)
        })
        .collect()
}

/// Binomial count of receivers deciding "1": `C(K, n) q^n (1 - q)^(K - n)`.
///
/// For a miss `q = 1 - P_md`; for a false alarm `q = P_fa`, which gives
/// `P_fa^n (1 - P_fa)^(K-n)`.
fn current_mixture_sym(k: usize, q: f64, step: f64) -> Mixture {
    let mut mix = Vec::with_capacity(k + 1);
    for (n, w) in binomial_pmf(k, q).into_iter().enumerate() {
        push_nonzero(&mut mix, n as f64 * step, w);
    }
    mix
}

/// `Q_md` (for `current_bit = true`) or `Q_fa` (for `false`) in the symbol
/// after `tx_history`, conditioned on each receiver's full decision history.
///
/// Enumerates all 2^K current decision vectors.
pub fn q_md_fa_asym(model: &Model<'_>, tx_history: &[bool], current_bit: bool, rx_histories: &[Vec<bool>]) -> Result<f64> {
    q_md_fa_asym_capped(model, tx_history, current_bit, rx_histories, DEFAULT_MAX_RECEIVERS)
}

pub fn q_md_fa_asym_capped(
    model: &Model<'_>,
    tx_history: &[bool],
    current_bit: bool,
    rx_histories: &[Vec<bool>],
    max_receivers: usize,
) -> Result<f64> {
    let k = model.k();
    if k > max_receivers {
        return Err(Error::StateSpaceTooLarge { states: 1u128 << k.min(127), cap: 1u128 << max_receivers.min(127) });
    }
    let s = tx_history.len();
    model.check_len(s)?;
    if rx_histories.len() != k || rx_histories.iter().any(|h| h.len() != s) {
        return Err(Error::InvalidArgument(format!("expected {k} receiver histories of length {s}")));
    }
    let base: f64 = (0..k).map(|i| isi_mean(&rx_histories[i], &model.gains.rx_fc[i], model.s_b)).sum();
    let [q0, q1] = model.current_probs(tx_history);
    let q = if current_bit { q1 } else { q0 };
    let mix = current_mixture_asym(&q, |i| model.gains.rx_fc[i][0], model.s_b);
    let tail = Tail::for_bit(current_bit);
    Ok(mix.iter().map(|&(m, p)| p * fc_tail(base + m, model.thresholds.xi_fc, tail)).sum())
}

/// Symmetric-layout version of [`q_md_fa_asym`]: histories are given as the
/// number of receivers that decided "1" in each previous symbol.
pub fn q_md_fa_sym(model: &Model<'_>, tx_history: &[bool], current_bit: bool, history_counts: &[usize]) -> Result<f64> {
    if !model.is_exchangeable() {
        return Err(Error::NotSymmetric);
    }
    let k = model.k();
    let s = tx_history.len();
    model.check_len(s)?;
    if history_counts.len() != s || history_counts.iter().any(|&n| n > k) {
        return Err(Error::InvalidArgument(format!("expected {s} history counts in 0..={k}")));
    }
    let c = &model.gains.rx_fc[0];
    let base: f64 = history_counts.iter().enumerate().map(|(i, &n)| model.s_b * n as f64 * c[s - i]).sum();
    let [q0, q1] = model.current_probs(tx_history);
    let q = if current_bit { q1[0] } else { q0[0] };
    let mix = current_mixture_sym(k, q, model.s_b * c[0]);
    let tail = Tail::for_bit(current_bit);
    Ok(mix.iter().map(|&(m, p)| p * fc_tail(base + m, model.thresholds.xi_fc, tail)).sum())
}

/// Decisions of one enumerated history window.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowDecisions {
    /// `decisions[k][i]` for each receiver over the window symbols.
    PerReceiver(Vec<Vec<bool>>),
    /// Number of receivers deciding "1" in each window symbol.
    Counts(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryState {
    pub decisions: WindowDecisions,
    pub prob: f64,
}

/// Exact distribution of the receiver decisions in the `window` symbols
/// before the current one.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryDistribution {
    /// Index of the first window symbol.
    pub first_symbol: usize,
    pub states: Vec<HistoryState>,
}

impl HistoryDistribution {
    pub fn total_prob(&self) -> f64 {
        self.states.iter().map(|s| s.prob).sum()
    }
}

/// Enumerates receiver decisions over the last `window` symbols of `tx_history`.
///
/// Uses per-symbol counts (`(K+1)^I` states) when `symmetric` is set and the
/// model allows it, else per-receiver bits (`2^(K I)` states).
pub fn history_distribution(
    model: &Model<'_>,
    tx_history: &[bool],
    window: usize,
    symmetric: bool,
    cap: u128,
) -> Result<HistoryDistribution> {
    if symmetric && !model.is_exchangeable() {
        return Err(Error::NotSymmetric);
    }
    let k = model.k();
    let first = tx_history.len().saturating_sub(window);
    let w = tx_history.len() - first;
    let states = if symmetric { (k as u128 + 1).checked_pow(w as u32) } else { 1u128.checked_shl((k * w) as u32) };
    let states = states.unwrap_or(u128::MAX);
    if states > cap {
        return Err(Error::StateSpaceTooLarge { states, cap });
    }
    let p = model.decision_probs(tx_history);
    let mut out = Vec::with_capacity(states as usize);
    if symmetric {
        let pmfs: Vec<Vec<f64>> = (first..tx_history.len()).map(|i| binomial_pmf(k, p[0][i])).collect();
        let mut counts = vec![0usize; w];
        for idx in 0..states {
            let mut rem = idx;
            let mut prob = 1.0;
            for (i, c) in counts.iter_mut().enumerate() {
                *c = (rem % (k as u128 + 1)) as usize;
                rem /= k as u128 + 1;
                prob *= pmfs[i][*c];
            }
            out.push(HistoryState { decisions: WindowDecisions::Counts(counts.clone()), prob });
        }
    } else {
        for idx in 0..states {
            let mut prob = 1.0;
            let decisions: Vec<Vec<bool>> = (0..k)
                .map(|rx| {
                    (0..w)
                        .map(|i| {
                            let bit = (idx >> (rx * w + i)) & 1 == 1;
                            let q = p[rx][first + i];
                            prob *= if bit { q } else { 1.0 - q };
                            bit
                        })
                        .collect()
                })
                .collect();
            out.push(HistoryState { decisions: WindowDecisions::PerReceiver(decisions), prob });
        }
    }
    Ok(HistoryDistribution { first_symbol: first, states: out })
}

/// How the averaging over decision histories is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    /// Binomial counts when the layout is symmetric, per-receiver bits otherwise.
    Auto,
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    /// Previous symbols whose decisions are enumerated exactly.
    pub isi_window: usize,
    pub path: Path,
    pub state_cap: u128,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { isi_window: 2, path: Path::Auto, state_cap: DEFAULT_STATE_CAP }
    }
}

impl WindowConfig {
    fn symmetric(&self, model: &Model<'_>) -> Result<bool> {
        match self.path {
            Path::Auto => Ok(model.is_exchangeable()),
            Path::Symmetric if model.is_exchangeable() => Ok(true),
            Path::Symmetric => Err(Error::NotSymmetric),
            Path::Asymmetric => Ok(false),
        }
    }
}

/// FC mean mixture of the symbol after `tx_history`, for both TX bits.
///
/// Each entry is `(total FC mean, probability)`; the means include the
/// expected-value contribution of decisions older than the window.
fn fc_mixtures(model: &Model<'_>, tx_history: &[bool], cfg: &WindowConfig, symmetric: bool) -> Result<[Mixture; 2]> {
    let k = model.k();
    let s = tx_history.len();
    model.check_len(s)?;
    let first = s.saturating_sub(cfg.isi_window);
    let w = s - first;
    let states = if symmetric { (k as u128 + 1).checked_pow(w as u32 + 1) } else { 1u128.checked_shl((k * (w + 1)) as u32) };
    let states = states.unwrap_or(u128::MAX);
    if states > cfg.state_cap {
        return Err(Error::StateSpaceTooLarge { states, cap: cfg.state_cap });
    }
    let p = model.decision_probs(tx_history);
    let fc = &model.gains.rx_fc;
    let s_b = model.s_b;
    let tail_mean: f64 = (0..k).map(|rx| (0..first).map(|i| p[rx][i] * s_b * fc[rx][s - i]).sum::<f64>()).sum();

    let mut window: Mixture = vec![(tail_mean, 1.0)];
    if symmetric {
        for i in first..s {
            let step = s_b * fc[0][s - i];
            let pmf = binomial_pmf(k, p[0][i]);
            let mut next = Vec::with_capacity(window.len() * (k + 1));
            for &(m, pr) in &window {
                for (n, &wn) in pmf.iter().enumerate() {
                    push_nonzero(&mut next, m + n as f64 * step, pr * wn);
                }
            }
            window = next;
        }
    } else {
        for rx in 0..k {
            for i in first..s {
                let step = s_b * fc[rx][s - i];
                let q = p[rx][i];
                let mut next = Vec::with_capacity(window.len() * 2);
                for &(m, pr) in &window {
                    push_nonzero(&mut next, m, pr * (1.0 - q));
                    push_nonzero(&mut next, m + step, pr * q);
                }
                window = next;
            }
        }
    }

    let [q0, q1] = model.current_probs(tx_history);
    let combine = |q: &[f64]| {
        let current =
            if symmetric { current_mixture_sym(k, q[0], s_b * fc[0][0]) } else { current_mixture_asym(q, |rx| fc[rx][0], s_b) };
        let mut out = Vec::with_capacity(window.len() * current.len());
        for &(mw, pw) in &window {
            for &(mc, pc) in &current {
                push_nonzero(&mut out, mw + mc, pw * pc);
            }
        }
        out
    };
    Ok([combine(&q0), combine(&q1)])
}

/// Conditional global error of one symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolError {
    pub q_md: f64,
    pub q_fa: f64,
    pub q_fc: f64,
}

/// Global miss, false alarm and error probability of the symbol following
/// `tx_history`, averaged over receiver decision histories.
pub fn q_fc_symbol(model: &Model<'_>, tx_history: &[bool], p1: f64, cfg: &WindowConfig) -> Result<SymbolError> {
    let symmetric = cfg.symmetric(model)?;
    let [m0, m1] = fc_mixtures(model, tx_history, cfg, symmetric)?;
    let xi = model.thresholds.xi_fc;
    let q_md = m1.iter().map(|&(m, p)| p * fc_tail(m, xi, Tail::Below)).sum();
    let q_fa = m0.iter().map(|&(m, p)| p * fc_tail(m, xi, Tail::AtOrAbove)).sum();
    Ok(SymbolError { q_md, q_fa, q_fc: p1 * q_md + (1.0 - p1) * q_fa })
}

/// Weighting of TX prefixes when averaging over sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrefixWeighting {
    /// Each prefix weighted by its probability under the P1 prior.
    Prior,
    /// All prefixes of a given length weighted equally.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    /// Enumerate every TX prefix.
    Exact,
    /// Sample `sequences` random TX sequences.
    MonteCarlo { sequences: usize, seed: u64 },
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Averaging::Exact => write!(f, "exact"),
            Averaging::MonteCarlo { sequences, seed } => write!(f, "monte-carlo(n={sequences},seed={seed})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageConfig {
    pub window: WindowConfig,
    pub averaging: Averaging,
    pub weighting: PrefixWeighting,
    /// Largest number of TX prefixes per symbol enumerated in exact mode.
    pub max_exact_prefixes: u128,
}

impl Default for AverageConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            averaging: Averaging::Exact,
            weighting: PrefixWeighting::Prior,
            max_exact_prefixes: 1 << 20,
        }
    }
}

/// A weighted TX history: bits before the current symbol.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct WeightedPrefix {
    pub bits: Vec<bool>,
    pub weight: f64,
}

/// TX histories to average over, for every symbol index `0..len`.
pub(crate) fn tx_prefixes(len: usize, p1: f64, cfg: &AverageConfig) -> Result<Vec<WeightedPrefix>> {
    if !(0.0..=1.0).contains(&p1) {
        return Err(Error::InvalidArgument(format!("P1 must lie in [0, 1], got {p1}")));
    }
    if len == 0 {
        return Err(Error::InvalidArgument("sequence length must be at least 1".into()));
    }
    let mut out = Vec::new();
    match cfg.averaging {
        Averaging::Exact => {
            let needed = 1u128.checked_shl(len as u32 - 1).unwrap_or(u128::MAX);
            if needed > cfg.max_exact_prefixes {
                return Err(Error::StateSpaceTooLarge { states: needed, cap: cfg.max_exact_prefixes });
            }
            for s in 0..len {
                for idx in 0..1u64 << s {
                    let bits: Vec<bool> = (0..s).map(|i| (idx >> i) & 1 == 1).collect();
                    let weight = match cfg.weighting {
                        PrefixWeighting::Prior => {
                            bits.iter().map(|&b| if b { p1 } else { 1.0 - p1 }).product()
                        }
                        PrefixWeighting::Uniform => 1.0 / (1u64 << s) as f64,
                    };
                    if weight > 0.0 {
                        out.push(WeightedPrefix { bits, weight });
                    }
                }
            }
        }
        Averaging::MonteCarlo { sequences, seed } => {
            if sequences == 0 {
                return Err(Error::InvalidArgument("Monte Carlo averaging needs at least one sequence".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = 1.0 / sequences as f64;
            for _ in 0..sequences {
                let seq: Vec<bool> = (0..len).map(|_| rng.random_bool(p1)).collect();
                for s in 0..len {
                    out.push(WeightedPrefix { bits: seq[..s].to_vec(), weight: w });
                }
            }
        }
    }
    Ok(out)
}

/// One term of the averaged FC error: the FC count is Poisson(`mean`) and
/// the term contributes `weight * P(count < xi)` when `bit` is set and
/// `weight * P(count >= xi)` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FcAtom {
    pub symbol: u32,
    pub bit: bool,
    pub mean: f64,
    pub weight: f64,
}

/// All FC atoms of a sequence average, in deterministic order. Weights
/// include the prefix weight but not the P1 bit prior.
pub(crate) fn fc_atoms(model: &Model<'_>, prefixes: &[WeightedPrefix], window: &WindowConfig) -> Result<Vec<FcAtom>> {
    let symmetric = window.symmetric(model)?;
    let per_prefix: Vec<Vec<FcAtom>> = prefixes
        .par_iter()
        .map(|pre| {
            let mixes = fc_mixtures(model, &pre.bits, window, symmetric)?;
            let symbol = pre.bits.len() as u32;
            Ok(mixes
                .iter()
                .zip([false, true])
                .flat_map(|(mix, bit)| {
                    mix.iter().map(move |&(mean, p)| FcAtom { symbol, bit, mean, weight: pre.weight * p })
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_prefix.into_iter().flatten().collect())
}

/// Sums per-chunk vectors in a fixed pairwise tree.
pub(crate) fn pairwise_reduce(mut parts: Vec<Vec<f64>>, width: usize) -> Vec<f64> {
    if parts.is_empty() {
        return vec![0.0; width];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Per-symbol `(Q_md, Q_fa)` sums for every FC threshold in `xi_fc`, laid
/// out as `out[(x * len + symbol) * 2 + {0: md, 1: fa}]`.
pub(crate) fn accumulate_atoms(atoms: &[FcAtom], len: usize, xi_fc: std::ops::RangeInclusive<u32>) -> Vec<f64> {
    let lo = *xi_fc.start();
    let nx = (xi_fc.end() + 1).saturating_sub(lo) as usize;
    let width = nx * len * 2;
    let parts: Vec<Vec<f64>> = atoms
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; width];
            let mut cdf = vec![0.0; nx];
            for a in chunk {
                // P(count <= xi - 1) for xi in lo..=hi
                poisson_cdf_run(i64::from(lo) - 1, a.mean, &mut cdf);
                let base = a.symbol as usize * 2;
                if a.bit {
                    for (x, f) in cdf.iter().enumerate() {
                        acc[x * len * 2 + base] += a.weight * f;
                    }
                } else {
                    for (x, f) in cdf.iter().enumerate() {
                        acc[x * len * 2 + base + 1] += a.weight * (1.0 - f);
                    }
                }
            }
            acc
        })
        .collect();
    pairwise_reduce(parts, width)
}

/// Sequence-averaged error report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub q_md: Vec<f64>,
    pub q_fa: Vec<f64>,
    pub q_fc: Vec<f64>,
    /// Mean of `q_fc` over symbols.
    pub q_bar: f64,
    pub meta: ReportMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMeta {
    pub scheme: String,
    pub topology_hash: String,
    pub xi_rx: Vec<u32>,
    pub xi_fc: u32,
    pub isi_window: usize,
    pub averaging: String,
    pub weighting: PrefixWeighting,
    pub path: String,
    pub clamped_gains: usize,
}

/// Short hex digest identifying a topology.
pub fn topology_hash(topo: &Topology) -> String {
    let mut h = Sha256::new();
    let mut put = |v: f64| h.update(v.to_bits().to_le_bytes());
    topo.tx().as_array().into_iter().for_each(&mut put);
    for rx in topo.receivers() {
        rx.center.as_array().into_iter().for_each(&mut put);
        put(rx.radius);
    }
    topo.fc().center.as_array().into_iter().for_each(&mut put);
    put(topo.fc().radius);
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn report_from_sums(sums: &[f64], len: usize, p1: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let q_md: Vec<f64> = (0..len).map(|s| sums[s * 2].clamp(0.0, 1.0)).collect();
    let q_fa: Vec<f64> = (0..len).map(|s| sums[s * 2 + 1].clamp(0.0, 1.0)).collect();
    let q_fc: Vec<f64> = q_md.iter().zip(&q_fa).map(|(m, f)| p1 * m + (1.0 - p1) * f).collect();
    let q_bar = q_fc.iter().sum::<f64>() / len as f64;
    (q_md, q_fa, q_fc, q_bar)
}

/// Sequence-averaged SD-Constant error from precomputed gains.
pub fn average_error_with_gains(
    gains: &ChannelGains,
    params: &DiffusionParams,
    thresholds: &Thresholds,
    len: usize,
    p1: f64,
    cfg: &AverageConfig,
) -> Result<(ErrorReport, bool)> {
    let model = Model::new(gains, params, thresholds)?;
    if gains.lags() < len {
        return Err(Error::LengthMismatch { seq: len, gains: gains.lags() });
    }
    let symmetric = cfg.window.symmetric(&model)?;
    let prefixes = tx_prefixes(len, p1, cfg)?;
    let atoms = fc_atoms(&model, &prefixes, &cfg.window)?;
    let sums = accumulate_atoms(&atoms, len, thresholds.xi_fc..=thresholds.xi_fc);
    let (q_md, q_fa, q_fc, q_bar) = report_from_sums(&sums, len, p1);
    let meta = ReportMeta {
        scheme: "sd-constant".into(),
        topology_hash: String::new(),
        xi_rx: thresholds.xi_rx.clone(),
        xi_fc: thresholds.xi_fc,
        isi_window: cfg.window.isi_window,
        averaging: cfg.averaging.to_string(),
        weighting: cfg.weighting,
        path: if symmetric { "symmetric" } else { "asymmetric" }.into(),
        clamped_gains: gains.clamped,
    };
    Ok((ErrorReport { q_md, q_fa, q_fc, q_bar, meta }, symmetric))
}

/// Average global error probability of the SD-Constant scheme over TX
/// sequences of length `len` and all symbol intervals.
pub fn average_error(
    topo: &Topology,
    params: &DiffusionParams,
    timing: &ProtocolTiming,
    thresholds: &Thresholds,
    len: usize,
    p1: f64,
    cfg: &AverageConfig,
) -> Result<ErrorReport> {
    let gains = build_gains(topo, params, timing, len)?;
    let mut cfg = *cfg;
    // The binomial path also needs distance symmetry, not only equal gains.
    if cfg.window.path == Path::Auto && !(is_symmetric(topo, SYMMETRY_TOL) && topo.uniform_radii()) {
        cfg.window.path = Path::Asymmetric;
    }
    let (mut report, _) = average_error_with_gains(&gains, params, thresholds, len, p1, &cfg)?;
    report.meta.topology_hash = topology_hash(topo);
    Ok(report)
}

/// Evaluates the SD-Constant average error over many FC thresholds at once
/// for a fixed receiver threshold.
pub struct SdConstantObjective<'a> {
    pub gains: &'a ChannelGains,
    pub params: DiffusionParams,
    pub len: usize,
    pub p1: f64,
    pub cfg: AverageConfig,
    prefixes: Vec<WeightedPrefix>,
}

impl<'a> SdConstantObjective<'a> {
    pub fn new(gains: &'a ChannelGains, params: DiffusionParams, len: usize, p1: f64, cfg: AverageConfig) -> Result<Self> {
        let prefixes = tx_prefixes(len, p1, &cfg)?;
        if gains.lags() < len {
            return Err(Error::LengthMismatch { seq: len, gains: gains.lags() });
        }
        Ok(Self { gains, params, len, p1, cfg, prefixes })
    }

    /// `Q_bar` for receiver threshold `xi_rx` (shared) and each FC threshold in `xi_fc`.
    pub fn row(&self, xi_rx: u32, xi_fc: std::ops::RangeInclusive<u32>) -> Result<Vec<f64>> {
        let k = self.gains.k();
        let thresholds = Thresholds::uniform(k, xi_rx, (*xi_fc.start()).max(1));
        let model = Model::new(self.gains, &self.params, &thresholds)?;
        let atoms = fc_atoms(&model, &self.prefixes, &self.cfg.window)?;
        let sums = accumulate_atoms(&atoms, self.len, xi_fc.clone());
        Ok(sums
            .chunks(self.len * 2)
            .map(|chunk| report_from_sums(chunk, self.len, self.p1).3)
            .collect())
    }
}

impl GridObjective for SdConstantObjective<'_> {
    fn point(&self, xi_rx: u32, xi_fc: u32) -> Result<f64> {
        Ok(SdConstantObjective::row(self, xi_rx, xi_fc..=xi_fc)?[0])
    }

    fn row(&self, xi_rx: u32, xi_fc: std::ops::RangeInclusive<u32>) -> Result<Vec<f64>> {
        SdConstantObjective::row(self, xi_rx, xi_fc)
    }
}
