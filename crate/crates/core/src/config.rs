//! Experiment configuration files.
//!
//! A configuration is a TOML document with the sections `topology`,
//! `diffusion`, `timing`, `detection`, `sequence`, `simulation` and an
//! optional `output`. [`validate_config`] reports every problem it finds,
//! each with the line it refers to when there is one.

use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::analytical::{AverageConfig, Averaging, PrefixWeighting, Thresholds, WindowConfig};
use crate::channel::{report_budget_per_rx, DiffusionParams, ProtocolTiming};
use crate::schemes::{SchemeSpec, REPORT_BUDGET};
use crate::simulator::{Culling, SimConfig};
use crate::topology::{
    build_line_layout, build_single_link, build_symmetric_ring, SphericalObserver, Topology, Vec3,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySection {
    /// `symmetric-ring`, `line`, `single-link` or `explicit`.
    pub builder: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    pub rx_radius_um: f64,
    pub fc_radius_um: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx_um: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rx_um: Option<Vec<[f64; 3]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fc_um: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSection {
    pub d_a: f64,
    pub d_b: f64,
    pub s_a: u64,
    /// Defaults to the 2000-molecule report budget split over the receivers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_b: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSection {
    /// `sd-constant`, `majority` or `single-link`.
    pub scheme: String,
    pub xi_rx: Vec<u32>,
    /// FC threshold, or the per-type threshold for majority fusion.
    pub xi_fc: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vote: Option<usize>,
    pub xi_rx_range: [u32; 2],
    pub xi_fc_range: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSection {
    pub length: usize,
    pub p1: f64,
    /// `exact` or `mc`.
    pub averaging: String,
    pub mc_sequences: u64,
    pub mc_seed: u64,
    pub isi_window: usize,
    /// `prior` or `uniform`.
    pub weighting: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSection {
    pub trials: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim_step: Option<f64>,
    /// `none`, `horizon` or `aggressive`.
    pub culling: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cull_horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub topology: TopologySection,
    pub diffusion: DiffusionSection,
    pub timing: ProtocolTiming,
    pub detection: DetectionSection,
    pub sequence: SequenceSection,
    pub simulation: SimulationSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    /// Three receivers on the symmetric ring with the reference parameters.
    fn default() -> Self {
        Self {
            topology: TopologySection {
                builder: "symmetric-ring".into(),
                k: Some(3),
                position: None,
                rx_radius_um: 0.225,
                fc_radius_um: 0.225,
                tx_um: None,
                rx_um: None,
                fc_um: None,
            },
            diffusion: DiffusionSection { d_a: 5e-9, d_b: 5e-9, s_a: 8000, s_b: None },
            timing: ProtocolTiming::default(),
            detection: DetectionSection {
                scheme: "sd-constant".into(),
                xi_rx: vec![20],
                xi_fc: 6,
                vote: None,
                xi_rx_range: [1, 200],
                xi_fc_range: [1, 400],
            },
            sequence: SequenceSection {
                length: 10,
                p1: 0.5,
                averaging: "exact".into(),
                mc_sequences: 10_000,
                mc_seed: 1,
                isi_window: 2,
                weighting: "prior".into(),
            },
            simulation: SimulationSection {
                trials: 10_000,
                seed: 1,
                sim_step: None,
                culling: "aggressive".into(),
                cull_horizon: None,
            },
            output: OutputSection { dir: "out".into() },
        }
    }
}

/// One configuration problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line, when the problem can be tied to one.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

const SECTIONS: [&str; 7] = ["topology", "diffusion", "timing", "detection", "sequence", "simulation", "output"];

fn allowed_keys(section: &str) -> &'static [&'static str] {
    match section {
        "topology" => &["builder", "k", "position", "rx_radius_um", "fc_radius_um", "tx_um", "rx_um", "fc_um"],
        "diffusion" => &["d_a", "d_b", "s_a", "s_b"],
        "timing" => &["symbol_interval", "t_trans", "t_report", "m_rx", "m_fc", "dt_rx", "dt_fc"],
        "detection" => &["scheme", "xi_rx", "xi_fc", "vote", "xi_rx_range", "xi_fc_range"],
        "sequence" => &["length", "p1", "averaging", "mc_sequences", "mc_seed", "isi_window", "weighting"],
        "simulation" => &["trials", "seed", "sim_step", "culling", "cull_horizon"],
        "output" => &["dir"],
        _ => &[],
    }
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn section_line(text: &str, section: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let t = l.trim();
            t.starts_with('[') && t.trim_start_matches('[').trim_end_matches(']').trim() == section
        })
        .map(|i| i + 1)
}

fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, l) in text.lines().enumerate() {
        let t = l.trim();
        if t.starts_with('[') {
            current = t.trim_start_matches('[').trim_end_matches(']').trim().to_string();
        } else if current == section {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Reader<'a> {
    text: &'a str,
    diags: Vec<Diagnostic>,
}

impl Reader<'_> {
    fn push(&mut self, line: Option<usize>, message: String) {
        self.diags.push(Diagnostic { line, message });
    }

    fn at_key(&mut self, section: &str, key: &str, message: String) {
        let line = key_line(self.text, section, key).or_else(|| section_line(self.text, section));
        self.push(line, message);
    }

    fn raw<'t>(&mut self, t: Option<&'t Table>, section: &str, key: &str, required: bool) -> Option<&'t Value> {
        let v = t.and_then(|t| t.get(key));
        if v.is_none() && required {
            self.push(section_line(self.text, section), format!("missing required key `{section}.{key}`"));
        }
        v
    }

    fn typed<T>(
        &mut self,
        t: Option<&Table>,
        section: &str,
        key: &str,
        required: bool,
        what: &str,
        conv: impl Fn(&Value) -> Option<T>,
    ) -> Option<T> {
        let v = self.raw(t, section, key, required)?;
        let out = conv(v);
        if out.is_none() {
            self.at_key(section, key, format!("`{section}.{key}` must be {what}"));
        }
        out
    }

    fn f64(&mut self, t: Option<&Table>, s: &str, k: &str, req: bool) -> Option<f64> {
        self.typed(t, s, k, req, "a number", as_f64)
    }

    fn u64(&mut self, t: Option<&Table>, s: &str, k: &str, req: bool) -> Option<u64> {
        self.typed(t, s, k, req, "a non-negative integer", as_u64)
    }

    fn usize(&mut self, t: Option<&Table>, s: &str, k: &str, req: bool) -> Option<usize> {
        self.typed(t, s, k, req, "a non-negative integer", |v| as_u64(v).and_then(|x| usize::try_from(x).ok()))
    }

    fn u32(&mut self, t: Option<&Table>, s: &str, k: &str, req: bool) -> Option<u32> {
        self.typed(t, s, k, req, "a non-negative integer", as_u32)
    }

    fn string(&mut self, t: Option<&Table>, s: &str, k: &str, req: bool, choices: &[&str]) -> Option<String> {
        let v = self.typed(t, s, k, req, "a string", |v| v.as_str().map(str::to_string))?;
        if !choices.contains(&v.as_str()) {
            self.at_key(s, k, format!("`{s}.{k}` must be one of {}, got \"{v}\"", choices.join(", ")));
            return None;
        }
        Some(v)
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn as_u64(v: &Value) -> Option<u64> {
    v.as_integer().and_then(|i| u64::try_from(i).ok())
}

fn as_u32(v: &Value) -> Option<u32> {
    v.as_integer().and_then(|i| u32::try_from(i).ok())
}

fn as_vec3(v: &Value) -> Option<[f64; 3]> {
    let a = v.as_array()?;
    if a.len() != 3 {
        return None;
    }
    Some([as_f64(&a[0])?, as_f64(&a[1])?, as_f64(&a[2])?])
}

fn as_u32_list(v: &Value) -> Option<Vec<u32>> {
    match v {
        Value::Array(a) => a.iter().map(as_u32).collect(),
        other => as_u32(other).map(|x| vec![x]),
    }
}

fn as_pair(v: &Value) -> Option<[u32; 2]> {
    let a = as_u32_list(v)?;
    (a.len() == 2 && matches!(v, Value::Array(_))).then(|| [a[0], a[1]])
}

/// Parses and validates a configuration, returning every problem found.
pub fn validate_config(raw: &str) -> std::result::Result<ExperimentConfig, Vec<Diagnostic>> {
    let doc: Table = match raw.parse() {
        Ok(t) => t,
        Err(e) => {
            let e: toml::de::Error = e;
            let line = e.span().map(|s| line_at(raw, s.start));
            return Err(vec![Diagnostic { line, message: format!("syntax error: {}", e.message()) }]);
        }
    };
    let mut r = Reader { text: raw, diags: Vec::new() };

    for (name, value) in &doc {
        match SECTIONS.iter().find(|s| **s == name) {
            None => {
                let line = section_line(raw, name).or_else(|| key_line(raw, "", name));
                r.push(line, format!("unknown section `{name}`"));
            }
            Some(_) => match value.as_table() {
                None => r.push(key_line(raw, "", name), format!("`{name}` must be a table")),
                Some(t) => {
                    for key in t.keys() {
                        if !allowed_keys(name).contains(&key.as_str()) {
                            r.at_key(name, key, format!("unknown key `{name}.{key}`"));
                        }
                    }
                }
            },
        }
    }
    let sec = |name: &str| doc.get(name).and_then(Value::as_table);

    // topology
    let t = sec("topology");
    let builder = r.string(t, "topology", "builder", true, &["symmetric-ring", "line", "single-link", "explicit"]);
    let rx_radius_um = r.f64(t, "topology", "rx_radius_um", true);
    let fc_radius_um = r.f64(t, "topology", "fc_radius_um", true);
    let need = |b: &str| builder.as_deref() == Some(b);
    let k = r.usize(t, "topology", "k", need("symmetric-ring"));
    let position = r.usize(t, "topology", "position", need("line"));
    let tx_um = r.typed(t, "topology", "tx_um", false, "an [x, y, z] array", as_vec3);
    let rx_um = r.typed(t, "topology", "rx_um", need("explicit"), "an array of [x, y, z] arrays", |v| {
        v.as_array()?.iter().map(as_vec3).collect()
    });
    let fc_um = r.typed(t, "topology", "fc_um", false, "an [x, y, z] array", as_vec3);

    // diffusion
    let t = sec("diffusion");
    let d_a = r.f64(t, "diffusion", "d_a", true);
    let d_b = r.f64(t, "diffusion", "d_b", true);
    let s_a = r.u64(t, "diffusion", "s_a", true);
    let s_b = r.u64(t, "diffusion", "s_b", false);

    // timing
    let t = sec("timing");
    let symbol_interval = r.f64(t, "timing", "symbol_interval", true);
    let t_trans = r.f64(t, "timing", "t_trans", true);
    let t_report = r.f64(t, "timing", "t_report", true);
    let m_rx = r.usize(t, "timing", "m_rx", true);
    let m_fc = r.usize(t, "timing", "m_fc", true);
    let dt_rx = r.f64(t, "timing", "dt_rx", true);
    let dt_fc = r.f64(t, "timing", "dt_fc", true);

    // detection
    let t = sec("detection");
    let scheme = r.string(t, "detection", "scheme", true, &["sd-constant", "majority", "single-link"]);
    let xi_rx = r.typed(t, "detection", "xi_rx", true, "an integer or an array of integers", as_u32_list);
    let xi_fc = r.u32(t, "detection", "xi_fc", true);
    let vote = r.usize(t, "detection", "vote", false);
    let xi_rx_range = r.typed(t, "detection", "xi_rx_range", false, "a [min, max] integer pair", as_pair);
    let xi_fc_range = r.typed(t, "detection", "xi_fc_range", false, "a [min, max] integer pair", as_pair);

    // sequence
    let t = sec("sequence");
    let length = r.usize(t, "sequence", "length", true);
    let p1 = r.f64(t, "sequence", "p1", true);
    let averaging = r.string(t, "sequence", "averaging", false, &["exact", "mc"]);
    let mc_sequences = r.u64(t, "sequence", "mc_sequences", false);
    let mc_seed = r.u64(t, "sequence", "mc_seed", false);
    let isi_window = r.usize(t, "sequence", "isi_window", false);
    let weighting = r.string(t, "sequence", "weighting", false, &["prior", "uniform"]);

    // simulation
    let t = sec("simulation");
    let trials = r.u64(t, "simulation", "trials", true);
    let seed = r.u64(t, "simulation", "seed", true);
    let sim_step = r.f64(t, "simulation", "sim_step", false);
    let culling = r.string(t, "simulation", "culling", false, &["none", "horizon", "aggressive"]);
    let cull_horizon = r.usize(t, "simulation", "cull_horizon", false);

    // output
    let dir = r.typed(sec("output"), "output", "dir", false, "a string", |v| v.as_str().map(str::to_string));

    if !r.diags.is_empty() {
        return Err(r.diags);
    }
    let d = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        topology: TopologySection {
            builder: builder.unwrap(),
            k,
            position,
            rx_radius_um: rx_radius_um.unwrap(),
            fc_radius_um: fc_radius_um.unwrap(),
            tx_um,
            rx_um,
            fc_um,
        },
        diffusion: DiffusionSection { d_a: d_a.unwrap(), d_b: d_b.unwrap(), s_a: s_a.unwrap(), s_b },
        timing: ProtocolTiming {
            symbol_interval: symbol_interval.unwrap(),
            t_trans: t_trans.unwrap(),
            t_report: t_report.unwrap(),
            m_rx: m_rx.unwrap(),
            m_fc: m_fc.unwrap(),
            dt_rx: dt_rx.unwrap(),
            dt_fc: dt_fc.unwrap(),
        },
        detection: DetectionSection {
            scheme: scheme.unwrap(),
            xi_rx: xi_rx.unwrap(),
            xi_fc: xi_fc.unwrap(),
            vote,
            xi_rx_range: xi_rx_range.unwrap_or(d.detection.xi_rx_range),
            xi_fc_range: xi_fc_range.unwrap_or(d.detection.xi_fc_range),
        },
        sequence: SequenceSection {
            length: length.unwrap(),
            p1: p1.unwrap(),
            averaging: averaging.unwrap_or(d.sequence.averaging),
            mc_sequences: mc_sequences.unwrap_or(d.sequence.mc_sequences),
            mc_seed: mc_seed.unwrap_or(d.sequence.mc_seed),
            isi_window: isi_window.unwrap_or(d.sequence.isi_window),
            weighting: weighting.unwrap_or(d.sequence.weighting),
        },
        simulation: SimulationSection {
            trials: trials.unwrap(),
            seed: seed.unwrap(),
            sim_step,
            culling: culling.unwrap_or_else(|| "none".into()),
            cull_horizon,
        },
        output: OutputSection { dir: dir.unwrap_or(d.output.dir) },
    };
    let problems = cfg.semantic_problems(raw);
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(problems)
    }
}

impl ExperimentConfig {
    /// Reads and validates a configuration file.
    pub fn load(path: &std::path::Path) -> std::result::Result<Self, Vec<Diagnostic>> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            vec![Diagnostic { line: None, message: format!("cannot read {}: {e}", path.display()) }]
        })?;
        validate_config(&text)
    }

    fn semantic_problems(&self, raw: &str) -> Vec<Diagnostic> {
        let mut r = Reader { text: raw, diags: Vec::new() };
        let topo = match self.topology() {
            Ok(t) => Some(t),
            Err(e) => {
                r.at_key("topology", "builder", e.to_string());
                None
            }
        };
        if let Err(e) = self.params().validate() {
            r.at_key("diffusion", "d_a", e.to_string());
        }
        for v in self.timing.violations() {
            let key = if v.contains("half-duplex") {
                "m_rx"
            } else if v.contains("report window") {
                "m_fc"
            } else {
                v.split_whitespace().next().unwrap_or("")
            }
            .to_string();
            r.at_key("timing", &key, v);
        }
        if let Some(topo) = &topo {
            if let Err(e) = self.thresholds().validate(topo.k()) {
                r.at_key("detection", "xi_rx", e.to_string());
            }
            match self.scheme() {
                Ok(s) => {
                    if let Err(e) = s.validate(topo.k()) {
                        r.at_key("detection", "vote", e.to_string());
                    }
                    if matches!(s, SchemeSpec::SingleLink { .. }) && topo.k() != 1 {
                        r.at_key("detection", "scheme", "the single-link scheme needs exactly one receiver".into());
                    }
                }
                Err(e) => r.at_key("detection", "scheme", e.to_string()),
            }
        }
        for (key, [lo, hi]) in [("xi_rx_range", self.detection.xi_rx_range), ("xi_fc_range", self.detection.xi_fc_range)] {
            if lo == 0 || lo > hi {
                r.at_key("detection", key, format!("`detection.{key}` must satisfy 1 <= min <= max, got [{lo}, {hi}]"));
            }
        }
        if self.sequence.length == 0 {
            r.at_key("sequence", "length", "`sequence.length` must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.sequence.p1) {
            r.at_key("sequence", "p1", format!("`sequence.p1` must lie in [0, 1], got {}", self.sequence.p1));
        }
        if self.sequence.averaging == "mc" && self.sequence.mc_sequences == 0 {
            r.at_key("sequence", "mc_sequences", "`sequence.mc_sequences` must be at least 1".into());
        }
        if let Err(e) = self.sim_config().validate() {
            let key = if self.simulation.trials == 0 { "trials" } else { "sim_step" };
            r.at_key("simulation", key, e.to_string());
        }
        if self.simulation.culling == "horizon" && self.simulation.cull_horizon.is_none() {
            r.at_key("simulation", "culling", "`simulation.cull_horizon` is required when culling = \"horizon\"".into());
        }
        r.diags
    }

    pub fn topology(&self) -> crate::Result<Topology> {
        let t = &self.topology;
        match t.builder.as_str() {
            "symmetric-ring" => build_symmetric_ring(t.k.unwrap_or(3), t.rx_radius_um, t.fc_radius_um),
            "line" => build_line_layout(t.position.unwrap_or(1), t.rx_radius_um, t.fc_radius_um),
            "single-link" => build_single_link(t.rx_radius_um, t.fc_radius_um),
            "explicit" => {
                let v = |a: [f64; 3]| Vec3::new(a[0], a[1], a[2]);
                let rx = t
                    .rx_um
                    .as_deref()
                    .unwrap_or_default()
                    .iter()
                    .map(|&c| SphericalObserver::new(v(c), t.rx_radius_um))
                    .collect::<crate::Result<Vec<_>>>()?;
                let fc = SphericalObserver::new(t.fc_um.map_or(crate::topology::FC_CENTER_UM, v), t.fc_radius_um)?;
                Topology::new(t.tx_um.map_or(Vec3::ORIGIN, v), rx, fc)
            }
            other => Err(crate::Error::Topology(format!("unknown builder {other}"))),
        }
    }

    /// Receiver count implied by the topology section.
    pub fn k(&self) -> usize {
        match self.topology.builder.as_str() {
            "symmetric-ring" => self.topology.k.unwrap_or(3),
            "line" => 3,
            "explicit" => self.topology.rx_um.as_ref().map_or(0, Vec::len),
            _ => 1,
        }
    }

    pub fn params(&self) -> DiffusionParams {
        let d = &self.diffusion;
        DiffusionParams {
            d_a: d.d_a,
            d_b: d.d_b,
            s_a: d.s_a,
            s_b: d.s_b.unwrap_or_else(|| report_budget_per_rx(REPORT_BUDGET, self.k().max(1))),
        }
    }

    /// Per-receiver thresholds; a single value is shared by every receiver.
    pub fn thresholds(&self) -> Thresholds {
        let xi = &self.detection.xi_rx;
        let xi_rx = if xi.len() == 1 { vec![xi[0]; self.k()] } else { xi.clone() };
        Thresholds { xi_rx, xi_fc: self.detection.xi_fc }
    }

    pub fn scheme(&self) -> crate::Result<SchemeSpec> {
        match self.detection.scheme.as_str() {
            "sd-constant" => Ok(SchemeSpec::SdConstant),
            "majority" => {
                let base = SchemeSpec::majority(self.k(), self.detection.xi_fc);
                Ok(match (base, self.detection.vote) {
                    (SchemeSpec::Majority { xi_type, .. }, Some(vote)) => SchemeSpec::Majority { xi_type, vote },
                    _ => base,
                })
            }
            "single-link" => Ok(SchemeSpec::SingleLink { s_a: self.diffusion.s_a }),
            other => Err(crate::Error::InvalidArgument(format!("unknown scheme {other}"))),
        }
    }

    pub fn average_config(&self) -> AverageConfig {
        let s = &self.sequence;
        AverageConfig {
            window: WindowConfig { isi_window: s.isi_window, ..WindowConfig::default() },
            averaging: if s.averaging == "mc" {
                Averaging::MonteCarlo { sequences: s.mc_sequences as usize, seed: s.mc_seed }
            } else {
                Averaging::Exact
            },
            weighting: if s.weighting == "uniform" { PrefixWeighting::Uniform } else { PrefixWeighting::Prior },
            ..AverageConfig::default()
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.simulation;
        SimConfig {
            trials: s.trials,
            seed: s.seed,
            sim_step: s.sim_step,
            culling: match s.culling.as_str() {
                "aggressive" => Culling::Aggressive,
                "horizon" => Culling::Horizon { intervals: s.cull_horizon.unwrap_or(self.sequence.length) },
                _ => Culling::None,
            },
            scheme: self.scheme().unwrap_or(SchemeSpec::SdConstant),
            p1: self.sequence.p1,
        }
    }

    pub fn xi_rx_range(&self) -> RangeInclusive<u32> {
        self.detection.xi_rx_range[0]..=self.detection.xi_rx_range[1]
    }

    pub fn xi_fc_range(&self) -> RangeInclusive<u32> {
        self.detection.xi_fc_range[0]..=self.detection.xi_fc_range[1]
    }

    /// Canonical TOML text; parsing it gives back an identical configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Short hex digest of the canonical text.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        assert_eq!(validate_config(&text).unwrap(), cfg);
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn empty_file_lists_every_required_key() {
        let diags = validate_config("").unwrap_err();
        let msgs: Vec<String> = diags.iter().map(|d| d.message.clone()).collect();
        for key in [
            "topology.builder",
            "topology.rx_radius_um",
            "diffusion.s_a",
            "timing.t_trans",
            "timing.dt_fc",
            "detection.xi_fc",
            "sequence.p1",
            "simulation.seed",
        ] {
            assert!(msgs.iter().any(|m| m.contains(key)), "{key} not reported in {msgs:?}");
        }
        assert_eq!(msgs.len(), 3 + 3 + 7 + 3 + 2 + 2);
    }

    #[test]
    fn half_duplex_violation_is_located() {
        let text = ExperimentConfig::default().to_toml().replace("m_rx = 5", "m_rx = 12");
        let diags = validate_config(&text).unwrap_err();
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("half-duplex"));
        let line = text.lines().position(|l| l.starts_with("m_rx")).unwrap() + 1;
        assert_eq!(diags[0].line, Some(line));
    }

    #[test]
    fn unknown_keys_and_bad_types_are_all_reported() {
        let mut text = ExperimentConfig::default().to_toml();
        text = text.replace("s_a = 8000", "s_a = \"many\"\ncolour = 3");
        text.push_str("\n[extra]\nx = 1\n");
        let diags = validate_config(&text).unwrap_err();
        assert_eq!(diags.len(), 3, "{diags:?}");
        assert!(diags.iter().all(|d| d.line.is_some()));
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let diags = validate_config("[topology]\nbuilder = \n").unwrap_err();
        assert_eq!(diags[0].line, Some(2));
    }

    #[test]
    fn scalar_threshold_is_shared() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.thresholds().xi_rx, vec![20, 20, 20]);
        assert_eq!(cfg.params().s_b, 667);
        let text = cfg.to_toml().replace("xi_rx = [20]", "xi_rx = 20");
        assert_eq!(validate_config(&text).unwrap(), cfg);
    }
}
