//! Free-diffusion observation probabilities, per-lag channel gains and the
//! Poisson helpers used to turn expected counts into decision probabilities.

use std::f64::consts::PI;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use libm::{erfc, lgamma as ln_gamma};

use crate::error::{Error, Result};
use crate::topology::Topology;

/// Diffusion coefficients (m^2/s) and per-"1" emission sizes of both species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    /// Type A (TX to RX) diffusion coefficient.
    pub d_a: f64,
    /// Type B (RX to FC) diffusion coefficient.
    pub d_b: f64,
    /// Type A molecules released by the TX per "1".
    pub s_a: u64,
    /// Type B molecules released by each RX per decided "1".
    pub s_b: u64,
}

impl DiffusionParams {
    /// Reference setup for `k` cooperating receivers: D = 5e-9 m^2/s for both
    /// species, 8000 type A molecules per "1" and a 2000-molecule report
    /// budget split evenly over the receivers.
    pub fn reference(k: usize) -> Self {
        Self { d_a: 5e-9, d_b: 5e-9, s_a: 8000, s_b: report_budget_per_rx(2000, k) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_a > 0.0 && self.d_a.is_finite()) || !(self.d_b > 0.0 && self.d_b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "diffusion coefficients must be positive, got D_A={} D_B={}",
                self.d_a, self.d_b
            )));
        }
        Ok(())
    }
}

/// Reporting budget per receiver: `ceil(total / k)` molecules per decided "1".
pub fn report_budget_per_rx(total: u64, k: usize) -> u64 {
    total.div_ceil(k as u64)
}

/// Symbol timing and sampling schedule, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTiming {
    pub symbol_interval: f64,
    pub t_trans: f64,
    pub t_report: f64,
    pub m_rx: usize,
    pub m_fc: usize,
    pub dt_rx: f64,
    pub dt_fc: f64,
}

impl Default for ProtocolTiming {
    /// Reference schedule: T = 1.1 ms, 1 ms transmission and 0.3 ms report
    /// windows, five RX samples 100 us apart and five FC samples 30 us apart.
    fn default() -> Self {
        Self {
            symbol_interval: 1.1e-3,
            t_trans: 1e-3,
            t_report: 3e-4,
            m_rx: 5,
            m_fc: 5,
            dt_rx: 1e-4,
            dt_fc: 3e-5,
        }
    }
}

impl ProtocolTiming {
    /// Returns every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("symbol_interval", self.symbol_interval),
            ("t_trans", self.t_trans),
            ("t_report", self.t_report),
            ("dt_rx", self.dt_rx),
            ("dt_fc", self.dt_fc),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be a positive duration, got {v}"));
            }
        }
        if self.m_rx == 0 {
            out.push("m_rx must be at least 1".into());
        }
        if self.m_fc == 0 {
            out.push("m_fc must be at least 1".into());
        }
        if self.m_rx as f64 * self.dt_rx >= self.t_trans {
            out.push(format!(
                "half-duplex constraint violated: m_rx * dt_rx = {} s must be < t_trans = {} s",
                self.m_rx as f64 * self.dt_rx,
                self.t_trans
            ));
        }
        if self.m_fc as f64 * self.dt_fc >= self.t_report {
            out.push(format!(
                "FC sampling must fit the report window: m_fc * dt_fc = {} s must be < t_report = {} s",
                self.m_fc as f64 * self.dt_fc,
                self.t_report
            ));
        }
        // The report window may run into the next interval (1.0 + 0.3 > 1.1 ms
        // in the reference setup); only the report emission must fall inside.
        if self.t_trans >= self.symbol_interval {
            out.push(format!(
                "t_trans = {} s must be shorter than the symbol interval {} s",
                self.t_trans, self.symbol_interval
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::Timing(v)),
        }
    }

    /// Offsets of the RX samples from the start of a symbol interval.
    pub fn rx_offsets(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.m_rx).map(move |m| m as f64 * self.dt_rx)
    }

    /// Offsets of the FC samples from the start of a symbol interval.
    pub fn fc_offsets(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.m_fc).map(move |m| self.t_trans + m as f64 * self.dt_fc)
    }
}

/// An observation probability, clamped to 1 if the uniform-concentration
/// approximation produced a value above 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationProb {
    pub value: f64,
    pub clamped: bool,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Probability that a molecule released at distance `d` is inside a small
/// observer of volume `volume` at time `t`, assuming the concentration over
/// the observer equals its value at the center. SI units throughout.
pub fn p_ob_uniform(t: f64, volume: f64, d: f64, diff: f64) -> Result<ObservationProb> {
    check_positive("t", t)?;
    check_positive("volume", volume)?;
    check_positive("d", d)?;
    check_positive("D", diff)?;
    let four_dt = 4.0 * diff * t;
    let raw = volume / (PI * four_dt).powf(1.5) * (-d * d / four_dt).exp();
    Ok(if raw > 1.0 {
        ObservationProb { value: 1.0, clamped: true }
    } else {
        ObservationProb { value: raw, clamped: false }
    })
}

/// Exact probability that a molecule released at distance `d` from the
/// center of a sphere of radius `r` is inside it at time `t`. SI units.
pub fn p_ob_sphere(t: f64, r: f64, d: f64, diff: f64) -> Result<f64> {
    check_positive("t", t)?;
    check_positive("r", r)?;
    check_positive("d", d)?;
    check_positive("D", diff)?;
    let s = (diff * t).sqrt();
    let a = (r + d) / (2.0 * s);
    let b = (r - d) / (2.0 * s);
    // erf(a) + erf(b) = erfc(-b) - erfc(a); the erfc form keeps precision
    // when both arguments are large and the erf values cancel.
    let erf_part = if b >= 0.0 {
        2.0 - erfc(a) - erfc(b)
    } else {
        erfc(-b) - erfc(a)
    };
    let four_dt = 4.0 * diff * t;
    let exp_part = s / (d * PI.sqrt()) * ((-(r - d) * (r - d) / four_dt).exp() - (-(r + d) * (r + d) / four_dt).exp());
    Ok((0.5 * erf_part - exp_part).clamp(0.0, 1.0))
}

/// Per-link sums of sampled observation probabilities, indexed by lag in
/// symbol intervals. Multiply by the emission size to get a Poisson mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGains {
    /// `tx_rx[k][l]`: TX to receiver k, uniform-concentration model.
    pub tx_rx: Vec<Vec<f64>>,
    /// `rx_fc[k][l]`: receiver k to the FC, exact sphere model.
    pub rx_fc: Vec<Vec<f64>>,
    /// Number of clamped TX to RX evaluations.
    pub clamped: usize,
}

impl ChannelGains {
    pub fn k(&self) -> usize {
        self.tx_rx.len()
    }

    pub fn lags(&self) -> usize {
        self.tx_rx.first().map_or(0, Vec::len)
    }

    /// Gains with receivers reordered.
    pub fn permuted(&self, order: &[usize]) -> ChannelGains {
        ChannelGains {
            tx_rx: order.iter().map(|&i| self.tx_rx[i].clone()).collect(),
            rx_fc: order.iter().map(|&i| self.rx_fc[i].clone()).collect(),
            clamped: self.clamped,
        }
    }
}

/// Gains of every link for lags `0..lags`.
pub fn build_gains(topo: &Topology, params: &DiffusionParams, timing: &ProtocolTiming, lags: usize) -> Result<ChannelGains> {
    params.validate()?;
    timing.validate()?;
    if lags == 0 {
        return Err(Error::InvalidArgument("sequence length must be at least 1".into()));
    }
    let fc_radius = topo.fc().radius_m();
    let mut clamped = 0;
    let mut tx_rx = Vec::with_capacity(topo.k());
    let mut rx_fc = Vec::with_capacity(topo.k());
    for (rx, (d_tx, d_fc)) in topo.receivers().iter().zip(topo.d_tx().into_iter().zip(topo.d_fc())) {
        let (d_tx, d_fc) = (d_tx * 1e-6, d_fc * 1e-6);
        let volume = rx.volume_m3();
        let mut row_a = Vec::with_capacity(lags);
        let mut row_b = Vec::with_capacity(lags);
        for l in 0..lags {
            let base = l as f64 * timing.symbol_interval;
            let mut sum = 0.0;
            for m in 1..=timing.m_rx {
                let p = p_ob_uniform(base + m as f64 * timing.dt_rx, volume, d_tx, params.d_a)?;
                clamped += usize::from(p.clamped);
                sum += p.value;
            }
            row_a.push(sum);
            let mut sum = 0.0;
            for m in 1..=timing.m_fc {
                sum += p_ob_sphere(base + m as f64 * timing.dt_fc, fc_radius, d_fc, params.d_b)?;
            }
            row_b.push(sum);
        }
        tx_rx.push(row_a);
        rx_fc.push(row_b);
    }
    Ok(ChannelGains { tx_rx, rx_fc, clamped })
}

/// Expected count in the last interval of `seq`: `emission * sum_i seq[i] * gains[j - i]`.
pub fn poisson_mean(seq: &[bool], gains: &[f64], emission: f64) -> Result<f64> {
    if seq.len() > gains.len() {
        return Err(Error::LengthMismatch { seq: seq.len(), gains: gains.len() });
    }
    let j = seq.len();
    let sum: f64 = seq.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| gains[j - 1 - i]).sum();
    Ok(emission * sum)
}

/// Returns `(P(N <= k_max), P(N > k_max))` for `N ~ Poisson(mean)`.
///
/// The smaller of the two is summed directly starting from its largest term,
/// which sits next to `k_max`, so both tails keep full relative precision.
pub fn poisson_tails(k_max: i64, mean: f64) -> Result<(f64, f64)> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(Error::InvalidArgument(format!("Poisson mean must be finite and >= 0, got {mean}")));
    }
    if k_max < 0 {
        return Ok((0.0, 1.0));
    }
    if mean == 0.0 {
        return Ok((1.0, 0.0));
    }
    let ln_pmf = |n: i64| n as f64 * mean.ln() - mean - ln_gamma(n as f64 + 1.0);
    if (k_max as f64) < mean {
        // Lower tail, terms fall going down from k_max.
        let mut term = ln_pmf(k_max).exp();
        let mut sum = term;
        let mut n = k_max;
        while n > 0 {
            term *= n as f64 / mean;
            sum += term;
            if term <= sum * 1e-18 {
                break;
            }
            n -= 1;
        }
        let sum = sum.min(1.0);
        Ok((sum, 1.0 - sum))
    } else {
        // Upper tail, terms fall going up from k_max + 1.
        let mut n = k_max + 1;
        let mut term = ln_pmf(n).exp();
        let mut sum = term;
        loop {
            n += 1;
            term *= mean / n as f64;
            sum += term;
            if term <= sum * 1e-18 || term == 0.0 {
                break;
            }
        }
        let sum = sum.min(1.0);
        Ok((1.0 - sum, sum))
    }
}

/// `P(N <= k_max)` for `N ~ Poisson(mean)`; `k_max = -1` gives 0.
pub fn poisson_cdf(k_max: i64, mean: f64) -> Result<f64> {
    poisson_tails(k_max, mean).map(|(cdf, _)| cdf)
}

/// Fills `out[i] = P(N <= first + i)` for consecutive count limits.
///
/// Used to evaluate one mean against a whole range of thresholds in a
/// single pass; accuracy is absolute (about 1e-16), not relative.
pub fn poisson_cdf_run(first: i64, mean: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    if mean <= 0.0 {
        for (i, o) in out.iter_mut().enumerate() {
            *o = if first + i as i64 >= 0 { 1.0 } else { 0.0 };
        }
        return;
    }
    let ln_mean = mean.ln();
    let mut n = first;
    let mut idx = 0;
    while n < 0 && idx < out.len() {
        out[idx] = 0.0;
        idx += 1;
        n += 1;
    }
    if idx == out.len() {
        return;
    }
    let mut cdf = poisson_cdf(n, mean).unwrap_or(f64::NAN);
    out[idx] = cdf;
    idx += 1;
    let mut pmf = 0.0;
    let mut have_pmf = false;
    while idx < out.len() {
        n += 1;
        if have_pmf && pmf > 1e-250 {
            pmf *= mean / n as f64;
        } else {
            pmf = (n as f64 * ln_mean - mean - ln_gamma(n as f64 + 1.0)).exp();
            have_pmf = true;
        }
        cdf += pmf;
        out[idx] = cdf.min(1.0);
        idx += 1;
        if n as f64 > mean {
            // Geometric bound on what is left of the upper tail.
            let ratio = mean / (n + 1) as f64;
            if pmf * ratio / (1.0 - ratio) < 1e-18 {
                out[idx..].fill(cdf.min(1.0));
                return;
            }
        }
    }
}

/// Stable cache key for a gain computation.
pub fn gains_cache_key(topo: &Topology, params: &DiffusionParams, timing: &ProtocolTiming, lags: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"coopmc-gains-v1\n");
    let mut put = |v: f64| h.update(v.to_bits().to_le_bytes());
    for c in topo.tx().as_array() {
        put(c);
    }
    for rx in topo.receivers() {
        for c in rx.center.as_array() {
            put(c);
        }
        put(rx.radius);
    }
    for c in topo.fc().center.as_array() {
        put(c);
    }
    put(topo.fc().radius);
    put(params.d_a);
    put(params.d_b);
    put(timing.symbol_interval);
    put(timing.t_trans);
    put(timing.t_report);
    put(timing.dt_rx);
    put(timing.dt_fc);
    put(timing.m_rx as f64);
    put(timing.m_fc as f64);
    put(lags as f64);
    h.finalize().into()
}

const SIDECAR_MAGIC: &[u8; 8] = b"CMCGAIN1";

/// Writes gains in the sidecar layout: magic, 32-byte key, `u32` K, `u32`
/// lags, `u64` clamp count, then `tx_rx` and `rx_fc` row-major as `f64`, all
/// little-endian.
pub fn write_gains_sidecar(path: &Path, key: &[u8; 32], gains: &ChannelGains) -> io::Result<()> {
    let mut buf = Vec::with_capacity(56 + 16 * gains.k() * gains.lags());
    buf.extend_from_slice(SIDECAR_MAGIC);
    buf.extend_from_slice(key);
    buf.extend_from_slice(&(gains.k() as u32).to_le_bytes());
    buf.extend_from_slice(&(gains.lags() as u32).to_le_bytes());
    buf.extend_from_slice(&(gains.clamped as u64).to_le_bytes());
    for row in gains.tx_rx.iter().chain(&gains.rx_fc) {
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(tmp, path)
}

/// Reads a sidecar; `Ok(None)` if it is missing or was built for other inputs.
pub fn read_gains_sidecar(path: &Path, key: &[u8; 32]) -> io::Result<Option<ChannelGains>> {
    let mut buf = Vec::new();
    match fs::File::open(path) {
        Ok(mut f) => f.read_to_end(&mut buf)?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    };
    if buf.len() < 56 || &buf[..8] != SIDECAR_MAGIC || &buf[8..40] != key {
        return Ok(None);
    }
    let k = u32::from_le_bytes(buf[40..44].try_into().unwrap()) as usize;
    let lags = u32::from_le_bytes(buf[44..48].try_into().unwrap()) as usize;
    let clamped = u64::from_le_bytes(buf[48..56].try_into().unwrap()) as usize;
    if buf.len() != 56 + 16 * k * lags {
        return Ok(None);
    }
    let mut values = buf[56..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut rows = || (0..k).map(|_| values.by_ref().take(lags).collect()).collect::<Vec<Vec<f64>>>();
    let tx_rx = rows();
    let rx_fc = rows();
    Ok(Some(ChannelGains { tx_rx, rx_fc, clamped }))
}

/// [`build_gains`] backed by a sidecar file in `dir`, named after the input hash.
pub fn build_gains_cached(
    dir: &Path,
    topo: &Topology,
    params: &DiffusionParams,
    timing: &ProtocolTiming,
    lags: usize,
) -> Result<ChannelGains> {
    let key = gains_cache_key(topo, params, timing, lags);
    let hex: String = key[..8].iter().map(|b| format!("{b:02x}")).collect();
    let path = dir.join(format!("gains-{hex}.bin"));
    if let Ok(Some(g)) = read_gains_sidecar(&path, &key) {
        return Ok(g);
    }
    let gains = build_gains(topo, params, timing, lags)?;
    // A failed cache write is not fatal.
    let _ = fs::create_dir_all(dir).and_then(|_| write_gains_sidecar(&path, &key, &gains));
    Ok(gains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_line_layout, build_symmetric_ring};

    fn reference_timing() -> ProtocolTiming {
        ProtocolTiming::default()
    }

    fn params() -> DiffusionParams {
        DiffusionParams { d_a: 5e-9, d_b: 5e-9, s_a: 8000, s_b: 667 }
    }

    const V_RX: f64 = 4.771_293_842_639_497e-20;

    #[test]
    fn uniform_regression_value() {
        // Direct 40-digit evaluation of the closed form.
        let p = p_ob_uniform(1e-4, V_RX, 2.088e-6, 5e-9).unwrap();
        assert!(!p.clamped);
        assert!((p.value / 3.424_995_303_013_042e-4 - 1.0).abs() < 1e-12, "{}", p.value);
    }

    #[test]
    fn uniform_limits_and_clamp() {
        assert_eq!(p_ob_uniform(1e-12, V_RX, 2e-6, 5e-9).unwrap().value, 0.0);
        assert!(p_ob_uniform(1e6, V_RX, 2e-6, 5e-9).unwrap().value < 1e-12);
        let near = p_ob_uniform(1e-9, 1e-18, 1e-9, 5e-9).unwrap();
        assert!(near.clamped);
        assert_eq!(near.value, 1.0);
        assert!(p_ob_uniform(0.0, V_RX, 2e-6, 5e-9).is_err());
        assert!(p_ob_uniform(1e-4, V_RX, -1.0, 5e-9).is_err());
        assert!(p_ob_uniform(1e-4, V_RX, 1e-6, 0.0).is_err());
    }

    #[test]
    fn sphere_regression_value() {
        // 40-digit evaluation of the closed form; agrees with adaptive
        // quadrature of the Gaussian kernel over the sphere to 1e-15.
        let p = p_ob_sphere(3e-5, 0.225e-6, 0.6e-6, 5e-9).unwrap();
        assert!((p / 9.815_506_355_593_155e-3 - 1.0).abs() < 1e-10, "{p}");
    }

    #[test]
    fn sphere_limits() {
        assert!(p_ob_sphere(1e-12, 0.225e-6, 0.6e-6, 5e-9).unwrap() < 1e-300);
        assert!((p_ob_sphere(1e-14, 0.225e-6, 0.1e-6, 5e-9).unwrap() - 1.0).abs() < 1e-12);
        assert!(p_ob_sphere(1e4, 0.225e-6, 0.6e-6, 5e-9).unwrap() < 1e-9);
        assert!(p_ob_sphere(1e-4, 0.0, 0.6e-6, 5e-9).is_err());
    }

    #[test]
    fn sphere_decreases_with_distance() {
        for &t in &[1e-5, 3e-5, 1e-4, 1e-3, 5e-3] {
            let mut prev = f64::INFINITY;
            for i in 1..=60 {
                let d = i as f64 * 0.05e-6;
                let p = p_ob_sphere(t, 0.225e-6, d, 5e-9).unwrap();
                assert!(p <= prev + 1e-15, "t={t} d={d}");
                prev = p;
            }
        }
    }

    #[test]
    fn sphere_approaches_uniform_model_far_away() {
        let r = 0.1e-6;
        for &d in &[1e-6, 2e-6, 3e-6] {
            for &factor in &[1.0, 2.0, 5.0] {
                let t = factor * d * d / (4.0 * 5e-9);
                let exact = p_ob_sphere(t, r, d, 5e-9).unwrap();
                let vol = 4.0 / 3.0 * PI * r.powi(3);
                let approx = p_ob_uniform(t, vol, d, 5e-9).unwrap().value;
                assert!((exact / approx - 1.0).abs() < 0.01, "d={d} t={t}");
            }
        }
    }

    #[test]
    fn gains_shapes_and_symmetry() {
        let topo = build_symmetric_ring(3, 0.225, 0.225).unwrap();
        let g = build_gains(&topo, &params(), &reference_timing(), 1).unwrap();
        assert_eq!(g.lags(), 1);
        let g = build_gains(&topo, &params(), &reference_timing(), 10).unwrap();
        assert_eq!(g.k(), 3);
        for k in 1..3 {
            for l in 0..10 {
                assert!((g.tx_rx[k][l] - g.tx_rx[0][l]).abs() <= 1e-12 * g.tx_rx[0][l]);
                assert!((g.rx_fc[k][l] - g.rx_fc[0][l]).abs() <= 1e-12 * g.rx_fc[0][l]);
            }
        }
        assert!(g.tx_rx[0][1] < g.tx_rx[0][0]);
        assert_eq!(g.clamped, 0);
        for row in g.tx_rx.iter().chain(&g.rx_fc) {
            assert!(row.iter().all(|&v| v >= 0.0));
            let peak = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            for l in peak.max(1)..row.len() - 1 {
                assert!(row[l + 1] <= row[l]);
            }
        }
    }

    #[test]
    fn gains_follow_receiver_order() {
        let topo = build_line_layout(3, 0.225, 0.225).unwrap();
        let order = [2, 0, 1];
        let g = build_gains(&topo, &params(), &reference_timing(), 4).unwrap();
        let gp = build_gains(&topo.permuted(&order).unwrap(), &params(), &reference_timing(), 4).unwrap();
        assert_eq!(g.permuted(&order), gp);
    }

    #[test]
    fn poisson_mean_examples() {
        let c = [0.5, 0.2, 0.1];
        assert_eq!(poisson_mean(&[false, false], &c, 100.0).unwrap(), 0.0);
        assert_eq!(poisson_mean(&[true], &c, 100.0).unwrap(), 50.0);
        assert!((poisson_mean(&[true, true], &c, 100.0).unwrap() - 70.0).abs() < 1e-12);
        assert!((poisson_mean(&[true, false, false], &c, 100.0).unwrap() - 10.0).abs() < 1e-12);
        assert!(poisson_mean(&[true; 4], &c, 1.0).is_err());
    }

    #[test]
    fn poisson_cdf_examples() {
        assert_eq!(poisson_cdf(-1, 4.0).unwrap(), 0.0);
        assert_eq!(poisson_cdf(0, 0.0).unwrap(), 1.0);
        assert_eq!(poisson_cdf(7, 0.0).unwrap(), 1.0);
        // Arbitrary-precision direct sum.
        assert!((poisson_cdf(5, 3.0).unwrap() - 0.916_082_057_968_696_6).abs() < 1e-14);
        assert!(poisson_cdf(0, -1.0).is_err());
        assert!((poisson_cdf(0, 2.5).unwrap() - (-2.5f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn poisson_tails_large_means() {
        // Normal approximation sanity at a large mean.
        let (lo, hi) = poisson_tails(5000, 5000.0).unwrap();
        assert!((lo - 0.5).abs() < 0.01 && (lo + hi - 1.0).abs() < 1e-15);
        // Deep lower tail keeps relative precision.
        let (lo, _) = poisson_tails(10, 200.0).unwrap();
        let direct: f64 = (0..=10).map(|n| (n as f64 * 200f64.ln() - 200.0 - ln_gamma(n as f64 + 1.0)).exp()).sum();
        assert!((lo / direct - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_run_matches_pointwise() {
        for &mu in &[0.0, 0.3, 4.0, 37.5, 180.0, 900.0] {
            let mut out = vec![0.0; 400];
            poisson_cdf_run(-2, mu, &mut out);
            for (i, v) in out.iter().enumerate() {
                let expect = poisson_cdf(i as i64 - 2, mu).unwrap();
                assert!((v - expect).abs() < 1e-13, "mu={mu} n={} {v} vs {expect}", i as i64 - 2);
            }
        }
    }

    #[test]
    fn sidecar_roundtrip_and_key_mismatch() {
        let dir = std::env::temp_dir().join(format!("coopmc-gains-{}", std::process::id()));
        let topo = build_symmetric_ring(2, 0.225, 0.225).unwrap();
        let g = build_gains_cached(&dir, &topo, &params(), &reference_timing(), 3).unwrap();
        let again = build_gains_cached(&dir, &topo, &params(), &reference_timing(), 3).unwrap();
        assert_eq!(g, again);
        let key = gains_cache_key(&topo, &params(), &reference_timing(), 3);
        let other = gains_cache_key(&topo, &params(), &reference_timing(), 4);
        assert_ne!(key, other);
        let file = fs::read_dir(&dir).unwrap().next().unwrap().unwrap().path();
        assert!(read_gains_sidecar(&file, &other).unwrap().is_none());
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn timing_violations_are_all_reported() {
        let mut t = reference_timing();
        assert!(t.violations().is_empty());
        t.m_rx = 10;
        t.m_fc = 10;
        t.t_report = 0.2e-3;
        let v = t.violations();
        assert!(v.iter().any(|s| s.contains("half-duplex")), "{v:?}");
        assert!(v.iter().any(|s| s.contains("report window")), "{v:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cdf_monotone(k in 0i64..200, mu in 0.0f64..300.0, dmu in 0.0f64..10.0) {
                let a = poisson_cdf(k, mu).unwrap();
                prop_assert!(poisson_cdf(k, mu + dmu).unwrap() <= a + 1e-15);
                prop_assert!(poisson_cdf(k + 1, mu).unwrap() >= a - 1e-15);
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }
}
