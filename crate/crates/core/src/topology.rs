//! Receiver geometry.
//!
//! Coordinates and radii are kept in micrometres. Everything that feeds the
//! channel model goes through the `*_m` accessors, which return metres.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UM: f64 = 1e-6;

/// Maximum receiver count of the ring layout.
pub const RING_MAX_RECEIVERS: usize = 6;

/// Ring radius of the symmetric layout, in micrometres.
pub const RING_RADIUS_UM: f64 = 0.6;

/// FC position shared by both experimental layouts, in micrometres.
pub const FC_CENTER_UM: Vec3 = Vec3::new(2.0, 0.0, 0.0);

/// Receiver positions of the asymmetric layout that stay fixed while RX3 moves.
pub const LINE_FIXED_RX_UM: [Vec3; 2] = [Vec3::new(2.0, 0.0, 0.6), Vec3::new(2.0, 0.0, -0.6)];

/// Candidate positions of the moving receiver, from its symmetric start towards the TX.
pub const LINE_MOVING_RX_UM: [Vec3; 5] = [
    Vec3::new(2.0, 0.6, 0.0),
    Vec3::new(1.6, 0.48, 0.0),
    Vec3::new(1.2, 0.36, 0.0),
    Vec3::new(0.8, 0.24, 0.0),
    Vec3::new(0.4, 0.12, 0.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ORIGIN: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;

    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;

    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Euclidean distance, in whatever unit the inputs share.
pub fn distance(a: Vec3, b: Vec3) -> f64 {
    let d = a - b;
    d.x.hypot(d.y).hypot(d.z)
}

/// A passive sphere: molecules pass through it and are counted while inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalObserver {
    /// Center in micrometres.
    pub center: Vec3,
    /// Radius in micrometres.
    pub radius: f64,
}

impl SphericalObserver {
    pub fn new(center: Vec3, radius: f64) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::Topology(format!("non-finite observer center {center}")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Topology(format!("observer radius must be > 0, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.radius.powi(3)
    }

    pub fn center_m(&self) -> Vec3 {
        self.center.scale(UM)
    }

    pub fn radius_m(&self) -> f64 {
        self.radius * UM
    }

    pub fn volume_m3(&self) -> f64 {
        4.0 / 3.0 * PI * self.radius_m().powi(3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    tx: Vec3,
    receivers: Vec<SphericalObserver>,
    fc: SphericalObserver,
}

impl Topology {
    pub fn new(tx: Vec3, receivers: Vec<SphericalObserver>, fc: SphericalObserver) -> Result<Self> {
        if !tx.is_finite() {
            return Err(Error::Topology(format!("non-finite TX position {tx}")));
        }
        if receivers.is_empty() {
            return Err(Error::Topology("at least one receiver is required".into()));
        }
        for (k, rx) in receivers.iter().enumerate() {
            if distance(rx.center, tx) <= 0.0 {
                return Err(Error::Topology(format!("receiver {} coincides with the TX", k + 1)));
            }
            if distance(rx.center, fc.center) <= 0.0 {
                return Err(Error::Topology(format!("receiver {} coincides with the FC", k + 1)));
            }
        }
        Ok(Self { tx, receivers, fc })
    }

    pub fn tx(&self) -> Vec3 {
        self.tx
    }

    pub fn receivers(&self) -> &[SphericalObserver] {
        &self.receivers
    }

    pub fn fc(&self) -> &SphericalObserver {
        &self.fc
    }

    pub fn k(&self) -> usize {
        self.receivers.len()
    }

    /// TX to receiver-center distances, micrometres.
    pub fn d_tx(&self) -> Vec<f64> {
        self.receivers.iter().map(|rx| distance(rx.center, self.tx)).collect()
    }

    /// Receiver-center to FC-center distances, micrometres.
    pub fn d_fc(&self) -> Vec<f64> {
        self.receivers.iter().map(|rx| distance(rx.center, self.fc.center)).collect()
    }

    /// Same topology with the receivers listed in `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k()];
        for &i in order {
            if i >= self.k() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("{order:?} is not a permutation")));
            }
        }
        if order.len() != self.k() {
            return Err(Error::InvalidArgument(format!("{order:?} is not a permutation")));
        }
        let receivers = order.iter().map(|&i| self.receivers[i]).collect();
        Topology::new(self.tx, receivers, self.fc)
    }

    /// True when all receivers share the same radius.
    pub fn uniform_radii(&self) -> bool {
        let r0 = self.receivers[0].radius;
        self.receivers.iter().all(|rx| rx.radius == r0)
    }
}

fn agree(values: &[f64], tol: f64) -> bool {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo <= tol * hi.abs()
}

/// True iff all TX distances agree and all FC distances agree, to relative `tol`.
pub fn is_symmetric(topo: &Topology, tol: f64) -> bool {
    agree(&topo.d_tx(), tol) && agree(&topo.d_fc(), tol)
}

/// Symmetric layout: TX at the origin, FC at (2, 0, 0) um and `k` receivers
/// spaced 60 degrees apart on a 0.6 um ring in the x = 2 um plane.
///
/// Positions come from exact angles, so every receiver sits at exactly the
/// same distances from the TX and the FC.
pub fn build_symmetric_ring(k: usize, rx_radius: f64, fc_radius: f64) -> Result<Topology> {
    if !(1..=RING_MAX_RECEIVERS).contains(&k) {
        return Err(Error::Topology(format!(
            "ring layout supports 1..={RING_MAX_RECEIVERS} receivers, got {k}"
        )));
    }
    // Receiver order: 90, 330, 210, 270, 30, 150 degrees measured from +z towards +y.
    const ANGLES_DEG: [f64; RING_MAX_RECEIVERS] = [90.0, 330.0, 210.0, 270.0, 30.0, 150.0];
    let receivers = ANGLES_DEG[..k]
        .iter()
        .map(|deg| {
            let (s, c) = deg.to_radians().sin_cos();
            let center = Vec3::new(FC_CENTER_UM.x, round_ring(RING_RADIUS_UM * s), round_ring(RING_RADIUS_UM * c));
            SphericalObserver::new(center, rx_radius)
        })
        .collect::<Result<Vec<_>>>()?;
    Topology::new(Vec3::ORIGIN, receivers, SphericalObserver::new(FC_CENTER_UM, fc_radius)?)
}

// Snap cos(90 deg) style residue (~1e-17) to zero so the first receiver is exactly (2, 0.6, 0).
fn round_ring(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

/// Asymmetric layout: two fixed receivers at (2, 0, +-0.6) um and a third at
/// one of the five positions of [`LINE_MOVING_RX_UM`] (`position` is 1-based).
pub fn build_line_layout(position: usize, rx_radius: f64, fc_radius: f64) -> Result<Topology> {
    if !(1..=LINE_MOVING_RX_UM.len()).contains(&position) {
        return Err(Error::Topology(format!(
            "moving receiver position must be in 1..={}, got {position}",
            LINE_MOVING_RX_UM.len()
        )));
    }
    let receivers = LINE_FIXED_RX_UM
        .iter()
        .chain(std::iter::once(&LINE_MOVING_RX_UM[position - 1]))
        .map(|&c| SphericalObserver::new(c, rx_radius))
        .collect::<Result<Vec<_>>>()?;
    Topology::new(Vec3::ORIGIN, receivers, SphericalObserver::new(FC_CENTER_UM, fc_radius)?)
}

/// Baseline point-to-point link: TX at the origin and one receiver at (2, 0.6, 0) um.
///
/// The FC is kept at its usual place so the value is a valid [`Topology`]; the
/// single-link analysis ignores it.
pub fn build_single_link(rx_radius: f64, fc_radius: f64) -> Result<Topology> {
    build_symmetric_ring(1, rx_radius, fc_radius)
}
