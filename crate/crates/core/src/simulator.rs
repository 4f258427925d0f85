//! Particle-based Monte Carlo of the three-phase protocol.
//!
//! Molecules diffuse freely and independently; observers are passive spheres
//! that count the molecules inside them at each sampling instant. Positions
//! are in micrometres and times in seconds.
//!
//! Free diffusion over an interval is an exact Gaussian increment, so by
//! default a cloud jumps straight from one observation instant to the next.
//! A fixed Brownian step can be requested instead; sampling instants are then
//! inserted as explicit events between steps.
//!
//! Random streams: trial `i` draws from a ChaCha8 generator seeded with the
//! master seed and switched to stream `i`. Within a trial the TX bits are
//! drawn first, then type A increments in event order and molecule order,
//! then type B increments. Results therefore do not depend on the number of
//! worker threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytical::Thresholds;
use crate::channel::{DiffusionParams, ProtocolTiming};
use crate::error::{Error, Result};
use crate::schemes::SchemeSpec;
use crate::topology::{SphericalObserver, Topology, Vec3};

/// m^2/s to um^2/s.
const UM2: f64 = 1e12;

/// Culling bound in standard deviations of the remaining displacement.
const CULL_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    A,
    /// Report molecule tagged with the index of the emitting receiver.
    B(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeciesFilter {
    Any,
    A,
    AnyB,
    BFrom(u16),
}

impl SpeciesFilter {
    fn matches(self, s: Species) -> bool {
        match (self, s) {
            (SpeciesFilter::Any, _) | (SpeciesFilter::A, Species::A) | (SpeciesFilter::AnyB, Species::B(_)) => true,
            (SpeciesFilter::BFrom(k), Species::B(j)) => k == j,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MoleculeCloud {
    pub positions: Vec<Vec3>,
    pub species: Vec<Species>,
    pub emitted_at: Vec<f64>,
}

impl MoleculeCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn emit(&mut self, n: u64, at: Vec3, species: Species, time: f64) {
        let n = n as usize;
        self.positions.extend(std::iter::repeat_n(at, n));
        self.species.extend(std::iter::repeat_n(species, n));
        self.emitted_at.extend(std::iter::repeat_n(time, n));
    }

    /// Keeps the molecules for which `keep(position, species, emission time)` holds.
    pub fn retain(&mut self, mut keep: impl FnMut(Vec3, Species, f64) -> bool) {
        let mut w = 0;
        for r in 0..self.len() {
            if keep(self.positions[r], self.species[r], self.emitted_at[r]) {
                self.positions[w] = self.positions[r];
                self.species[w] = self.species[r];
                self.emitted_at[w] = self.emitted_at[r];
                w += 1;
            }
        }
        self.positions.truncate(w);
        self.species.truncate(w);
        self.emitted_at.truncate(w);
    }
}

/// Diffusion coefficients per species, in m^2/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeciesDiffusion {
    pub a: f64,
    pub b: f64,
}

impl SpeciesDiffusion {
    fn of(&self, s: Species) -> f64 {
        match s {
            Species::A => self.a,
            Species::B(_) => self.b,
        }
    }
}

impl From<&DiffusionParams> for SpeciesDiffusion {
    fn from(p: &DiffusionParams) -> Self {
        Self { a: p.d_a, b: p.d_b }
    }
}

/// Advances every molecule by an independent Gaussian increment with
/// per-axis variance `2 D dt`.
pub fn step_brownian<R: Rng + ?Sized>(cloud: &mut MoleculeCloud, d: SpeciesDiffusion, dt: f64, rng: &mut R) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("Brownian step must be > 0, got {dt}")));
    }
    let sa = (2.0 * d.of(Species::A) * UM2 * dt).sqrt();
    let sb = (2.0 * d.of(Species::B(0)) * UM2 * dt).sqrt();
    for (p, s) in cloud.positions.iter_mut().zip(&cloud.species) {
        let sigma = if *s == Species::A { sa } else { sb };
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        let dz: f64 = rng.sample(StandardNormal);
        if sigma > 0.0 {
            *p = Vec3::new(p.x + sigma * dx, p.y + sigma * dy, p.z + sigma * dz);
        }
    }
    Ok(())
}

/// Number of matching molecules with `|pos - center| <= radius`.
pub fn count_inside(cloud: &MoleculeCloud, observer: &SphericalObserver, filter: SpeciesFilter) -> u64 {
    let r2 = observer.radius * observer.radius;
    cloud
        .positions
        .iter()
        .zip(&cloud.species)
        .filter(|(p, s)| filter.matches(**s) && (**p - observer.center).norm_sq() <= r2)
        .count() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Culling {
    None,
    /// Drop molecules this many symbol intervals after their emission.
    Horizon { intervals: usize },
    /// Drop molecules that are more than six standard deviations of the
    /// remaining displacement away from every observer.
    Aggressive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub trials: u64,
    pub seed: u64,
    /// Fixed Brownian step in seconds; `None` jumps exactly between events.
    pub sim_step: Option<f64>,
    pub culling: Culling,
    pub scheme: SchemeSpec,
    pub p1: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { trials: 1000, seed: 1, sim_step: None, culling: Culling::None, scheme: SchemeSpec::SdConstant, p1: 0.5 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("at least one trial is required".into()));
        }
        if !(0.0..=1.0).contains(&self.p1) {
            return Err(Error::InvalidArgument(format!("P1 must lie in [0, 1], got {}", self.p1)));
        }
        if let Some(h) = self.sim_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidArgument(format!("simulation step must be > 0, got {h}")));
            }
        }
        if let Culling::Horizon { intervals: 0 } = self.culling {
            return Err(Error::InvalidArgument("cull horizon must be at least one interval".into()));
        }
        Ok(())
    }
}

/// Outcome of one symbol interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SymbolRecord {
    pub bit: bool,
    pub rx_counts: Vec<u64>,
    pub rx_decisions: Vec<bool>,
    /// Pooled FC count, or one count per receiver for majority fusion.
    /// Empty for the single-link scheme.
    pub fc_counts: Vec<u64>,
    pub decision: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub symbols: Vec<SymbolRecord>,
}

impl TrialRecord {
    pub fn errors(&self) -> usize {
        self.symbols.iter().filter(|s| s.bit != s.decision).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Emit(usize),
    Sample(usize),
}

/// (bit, decision) pairs of one trial, plus the full record when logging.
type TrialOutcome = (Vec<(bool, bool)>, Option<TrialRecord>);

/// A validated simulation setup.
#[derive(Debug, Clone)]
pub struct Simulation {
    topo: Topology,
    params: DiffusionParams,
    timing: ProtocolTiming,
    thresholds: Thresholds,
    config: SimConfig,
}

impl Simulation {
    pub fn new(
        topo: &Topology,
        params: &DiffusionParams,
        timing: &ProtocolTiming,
        thresholds: &Thresholds,
        config: SimConfig,
    ) -> Result<Self> {
        params.validate()?;
        timing.validate()?;
        config.validate()?;
        config.scheme.validate(topo.k())?;
        thresholds.validate(topo.k())?;
        if matches!(config.scheme, SchemeSpec::SingleLink { .. }) && topo.k() != 1 {
            return Err(Error::InvalidArgument("the single-link scheme needs exactly one receiver".into()));
        }
        if topo.k() > usize::from(u16::MAX) {
            return Err(Error::InvalidArgument("too many receivers".into()));
        }
        let mut params = *params;
        if let SchemeSpec::SingleLink { s_a } = config.scheme {
            params.s_a = s_a;
        }
        Ok(Self { topo: topo.clone(), params, timing: *timing, thresholds: thresholds.clone(), config })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Generator for trial `index`.
    pub fn trial_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index);
        rng
    }

    fn advance(&self, cloud: &mut MoleculeCloud, gap: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        if gap <= 0.0 || cloud.is_empty() {
            return Ok(());
        }
        let d = SpeciesDiffusion::from(&self.params);
        match self.config.sim_step {
            None => step_brownian(cloud, d, gap, rng),
            Some(h) => {
                let ratio = gap / h;
                let whole = ratio.round();
                if (ratio - whole).abs() < 1e-9 {
                    let n = whole.max(1.0) as u64;
                    for _ in 0..n {
                        step_brownian(cloud, d, gap / n as f64, rng)?;
                    }
                } else {
                    for _ in 0..ratio.floor() as u64 {
                        step_brownian(cloud, d, h, rng)?;
                    }
                    step_brownian(cloud, d, gap - ratio.floor() * h, rng)?;
                }
                Ok(())
            }
        }
    }

    fn cull(&self, cloud: &mut MoleculeCloud, now: f64, last_sample: f64, observers: &[SphericalObserver], d: f64) {
        match self.config.culling {
            Culling::None => {}
            Culling::Horizon { intervals } => {
                let horizon = intervals as f64 * self.timing.symbol_interval;
                cloud.retain(|_, _, t0| now - t0 <= horizon);
            }
            Culling::Aggressive => {
                let remaining = (last_sample - now).max(0.0);
                let reach = CULL_SIGMAS * (2.0 * d * UM2 * remaining).sqrt();
                cloud.retain(|p, _, _| {
                    observers.iter().any(|o| {
                        let lim = reach + o.radius;
                        (p - o.center).norm_sq() <= lim * lim
                    })
                });
            }
        }
    }

    /// Runs one phase: emissions and energy-detection samples at the given
    /// per-symbol offsets. `emit(j)` gives the (count, position, species)
    /// batches released at the start of symbol `j`'s phase; the returned
    /// `sums[j][o]` is the summed count of observer `o` with filter `filters[o]`.
    #[allow(clippy::too_many_arguments)]
    fn run_phase(
        &self,
        len: usize,
        emit_offset: f64,
        sample_offsets: &[f64],
        observers: &[SphericalObserver],
        filters: &[SpeciesFilter],
        d: f64,
        mut emit: impl FnMut(usize) -> Vec<(u64, Vec3, Species)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<u64>>> {
        let t = self.timing.symbol_interval;
        let mut events: Vec<(f64, Event)> = Vec::with_capacity(len * (sample_offsets.len() + 1));
        for j in 0..len {
            events.push((j as f64 * t + emit_offset, Event::Emit(j)));
            events.extend(sample_offsets.iter().map(|&o| (j as f64 * t + o, Event::Sample(j))));
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| matches!(a.1, Event::Sample(_)).cmp(&matches!(b.1, Event::Sample(_)))));
        let last_sample = events.iter().rev().find(|e| matches!(e.1, Event::Sample(_))).map_or(0.0, |e| e.0);

        let mut sums = vec![vec![0u64; observers.len()]; len];
        let mut cloud = MoleculeCloud::new();
        let mut now = 0.0;
        for (time, ev) in events {
            self.advance(&mut cloud, time - now, rng)?;
            now = time;
            match ev {
                Event::Emit(j) => {
                    for (n, at, s) in emit(j) {
                        cloud.emit(n, at, s, time);
                    }
                }
                Event::Sample(j) => {
                    for (o, (obs, f)) in observers.iter().zip(filters).enumerate() {
                        sums[j][o] += count_inside(&cloud, obs, *f);
                    }
                    self.cull(&mut cloud, now, last_sample, observers, d);
                }
            }
        }
        Ok(sums)
    }

    /// Simulates one transmission of `tx`.
    pub fn run_sequence_trial(&self, tx: &[bool], rng: &mut ChaCha8Rng) -> Result<Vec<SymbolRecord>> {
        let len = tx.len();
        let k = self.topo.k();
        let rx_offsets: Vec<f64> = self.timing.rx_offsets().collect();
        let receivers = self.topo.receivers().to_vec();
        let s_a = self.params.s_a;
        let origin = self.topo.tx();
        let rx_counts = self.run_phase(
            len,
            0.0,
            &rx_offsets,
            &receivers,
            &vec![SpeciesFilter::A; k],
            self.params.d_a,
            |j| if tx[j] { vec![(s_a, origin, Species::A)] } else { Vec::new() },
            rng,
        )?;
        let decisions: Vec<Vec<bool>> = rx_counts
            .iter()
            .map(|c| c.iter().zip(&self.thresholds.xi_rx).map(|(&n, &xi)| n >= u64::from(xi)).collect())
            .collect();

        let fc_counts: Vec<Vec<u64>> = match self.config.scheme {
            SchemeSpec::SingleLink { .. } => vec![Vec::new(); len],
            scheme => {
                let fc = *self.topo.fc();
                let (observers, filters) = match scheme {
                    SchemeSpec::Majority { .. } => (vec![fc; k], (0..k).map(|i| SpeciesFilter::BFrom(i as u16)).collect()),
                    _ => (vec![fc], vec![SpeciesFilter::AnyB]),
                };
                let fc_offsets: Vec<f64> = self.timing.fc_offsets().collect();
                let s_b = self.params.s_b;
                self.run_phase(
                    len,
                    self.timing.t_trans,
                    &fc_offsets,
                    &observers,
                    &filters,
                    self.params.d_b,
                    |j| {
                        decisions[j]
                            .iter()
                            .enumerate()
                            .filter(|(_, &d)| d)
                            .map(|(i, _)| (s_b, receivers[i].center, Species::B(i as u16)))
                            .collect()
                    },
                    rng,
                )?
            }
        };

        Ok((0..len)
            .map(|j| {
                let decision = match self.config.scheme {
                    SchemeSpec::SingleLink { .. } => decisions[j][0],
                    SchemeSpec::SdConstant => fc_counts[j][0] >= u64::from(self.thresholds.xi_fc),
                    SchemeSpec::Majority { xi_type, vote } => {
                        fc_counts[j].iter().filter(|&&n| n >= u64::from(xi_type)).count() >= vote
                    }
                };
                SymbolRecord {
                    bit: tx[j],
                    rx_counts: rx_counts[j].clone(),
                    rx_decisions: decisions[j].clone(),
                    fc_counts: fc_counts[j].clone(),
                    decision,
                }
            })
            .collect())
    }

    /// Trial `index` with a fresh TX sequence of length `len`.
    pub fn trial(&self, index: u64, len: usize) -> Result<TrialRecord> {
        let mut rng = self.trial_rng(index);
        let tx: Vec<bool> = (0..len).map(|_| rng.random_bool(self.config.p1)).collect();
        Ok(TrialRecord { trial: index, symbols: self.run_sequence_trial(&tx, &mut rng)? })
    }

    /// Monte Carlo estimate over `config.trials` sequences of length `len`.
    /// Every trial record is written to `log` as one JSON line, in trial order.
    pub fn estimate_error(&self, len: usize, log: Option<&mut dyn Write>) -> Result<SimEstimate> {
        if len == 0 {
            return Err(Error::InvalidArgument("sequence length must be at least 1".into()));
        }
        let keep = log.is_some();
        let outcomes: Vec<TrialOutcome> = (0..self.config.trials)
            .into_par_iter()
            .map(|i| {
                let rec = self.trial(i, len)?;
                let summary = rec.symbols.iter().map(|s| (s.bit, s.decision)).collect();
                Ok((summary, keep.then_some(rec)))
            })
            .collect::<Result<_>>()?;
        if let Some(w) = log {
            for rec in outcomes.iter().filter_map(|o| o.1.as_ref()) {
                let line = serde_json::to_string(rec).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                writeln!(w, "{line}").map_err(|e| Error::InvalidArgument(format!("trial log: {e}")))?;
            }
        }
        Ok(SimEstimate::from_outcomes(outcomes.iter().map(|o| o.0.as_slice()), len))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymbolEstimate {
    pub ones: u64,
    pub zeros: u64,
    pub misses: u64,
    pub false_alarms: u64,
    /// Misses per transmitted "1".
    pub q_md: f64,
    /// False alarms per transmitted "0".
    pub q_fa: f64,
    /// Errors per trial at this symbol index.
    pub q_fc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEstimate {
    pub trials: u64,
    pub symbols: usize,
    pub q_bar: f64,
    /// Binomial standard error over all symbol decisions.
    pub stderr_pooled: f64,
    /// Standard error of the per-trial error fractions.
    pub stderr_trial: f64,
    pub per_symbol: Vec<SymbolEstimate>,
}

impl SimEstimate {
    /// Aggregates per-trial `(bit, decision)` lists, in order.
    pub fn from_outcomes<'a>(trials: impl Iterator<Item = &'a [(bool, bool)]>, len: usize) -> Self {
        let mut per = vec![(0u64, 0u64, 0u64, 0u64); len];
        let mut fractions = Vec::new();
        for t in trials {
            let mut errs = 0;
            for (j, &(bit, dec)) in t.iter().enumerate() {
                let e = &mut per[j];
                if bit {
                    e.0 += 1;
                    e.2 += u64::from(!dec);
                } else {
                    e.1 += 1;
                    e.3 += u64::from(dec);
                }
                errs += usize::from(bit != dec);
            }
            fractions.push(errs as f64 / len as f64);
        }
        let n = fractions.len() as u64;
        let ratio = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
        let per_symbol: Vec<SymbolEstimate> = per
            .iter()
            .map(|&(ones, zeros, misses, false_alarms)| SymbolEstimate {
                ones,
                zeros,
                misses,
                false_alarms,
                q_md: ratio(misses, ones),
                q_fa: ratio(false_alarms, zeros),
                q_fc: ratio(misses + false_alarms, n),
            })
            .collect();
        let q_bar = fractions.iter().sum::<f64>() / n as f64;
        let total = (n as f64) * len as f64;
        let stderr_pooled = (q_bar * (1.0 - q_bar) / total).sqrt();
        let var = if n > 1 { fractions.iter().map(|f| (f - q_bar).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let stderr_trial = (var / n as f64).sqrt();
        Self { trials: n, symbols: len, q_bar, stderr_pooled, stderr_trial, per_symbol }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_symmetric_ring;

    #[test]
    fn zero_diffusion_keeps_positions() {
        let mut c = MoleculeCloud::new();
        c.emit(10, Vec3::new(1.0, 2.0, 3.0), Species::A, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        step_brownian(&mut c, SpeciesDiffusion { a: 0.0, b: 1e-9 }, 1e-3, &mut rng).unwrap();
        assert!(c.positions.iter().all(|p| *p == Vec3::new(1.0, 2.0, 3.0)));
        assert!(step_brownian(&mut c, SpeciesDiffusion { a: 0.0, b: 0.0 }, 0.0, &mut rng).is_err());
    }

    #[test]
    fn count_inside_basics() {
        let obs = SphericalObserver::new(Vec3::new(1.0, 0.0, 0.0), 0.5).unwrap();
        let mut c = MoleculeCloud::new();
        assert_eq!(count_inside(&c, &obs, SpeciesFilter::Any), 0);
        c.emit(2, Vec3::new(1.0, 0.0, 0.0), Species::A, 0.0);
        c.emit(3, Vec3::new(1.0, 0.5, 0.0), Species::B(1), 0.0);
        c.emit(4, Vec3::new(1.0, 0.0, 0.0), Species::B(0), 0.0);
        c.emit(7, Vec3::new(0.0, 0.0, 0.0), Species::A, 0.0);
        assert_eq!(count_inside(&c, &obs, SpeciesFilter::A), 2);
        assert_eq!(count_inside(&c, &obs, SpeciesFilter::AnyB), 7);
        assert_eq!(count_inside(&c, &obs, SpeciesFilter::BFrom(1)), 3);
        assert_eq!(count_inside(&c, &obs, SpeciesFilter::Any), 9);
    }

    #[test]
    fn retain_keeps_columns_aligned() {
        let mut c = MoleculeCloud::new();
        c.emit(2, Vec3::ORIGIN, Species::A, 0.0);
        c.emit(2, Vec3::new(1.0, 1.0, 1.0), Species::B(4), 1.0);
        c.retain(|_, s, _| s != Species::A);
        assert_eq!(c.len(), 2);
        assert!(c.species.iter().all(|s| *s == Species::B(4)));
        assert!(c.emitted_at.iter().all(|t| *t == 1.0));
    }

    #[test]
    fn all_zero_sequence_never_errs() {
        let topo = build_symmetric_ring(3, 0.225, 0.225).unwrap();
        let sim = Simulation::new(
            &topo,
            &DiffusionParams::reference(3),
            &ProtocolTiming::default(),
            &Thresholds::uniform(3, 1, 1),
            SimConfig::default(),
        )
        .unwrap();
        let rec = sim.run_sequence_trial(&[false; 6], &mut sim.trial_rng(0)).unwrap();
        for s in rec {
            assert!(!s.decision && s.rx_decisions.iter().all(|d| !d));
            assert_eq!(s.fc_counts, vec![0]);
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            SimConfig { trials: 0, ..SimConfig::default() },
            SimConfig { p1: 1.5, ..SimConfig::default() },
            SimConfig { sim_step: Some(0.0), ..SimConfig::default() },
            SimConfig { culling: Culling::Horizon { intervals: 0 }, ..SimConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn estimate_statistics() {
        let a: Vec<(bool, bool)> = vec![(true, true), (false, true)];
        let b: Vec<(bool, bool)> = vec![(true, false), (false, false)];
        let e = SimEstimate::from_outcomes([a.as_slice(), b.as_slice()].into_iter(), 2);
        assert_eq!(e.q_bar, 0.5);
        assert_eq!(e.per_symbol[0].q_md, 0.5);
        assert_eq!(e.per_symbol[1].q_fa, 0.5);
        assert_eq!(e.per_symbol[0].q_fc, 0.5);
        assert!((e.stderr_pooled - 0.25).abs() < 1e-15);
        assert_eq!(e.stderr_trial, 0.0);
    }
}
