//! Integer grid search over the (receiver, FC) threshold pair.

use std::collections::HashMap;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Something that maps a threshold pair to an average error probability.
///
/// `row` evaluates one receiver threshold against a run of FC thresholds;
/// objectives that share work across FC thresholds override it.
pub trait GridObjective: Sync {
    fn point(&self, xi_rx: u32, xi_fc: u32) -> Result<f64>;

    fn row(&self, xi_rx: u32, xi_fc: RangeInclusive<u32>) -> Result<Vec<f64>> {
        xi_fc.map(|f| self.point(xi_rx, f)).collect()
    }
}

impl<F> GridObjective for F
where
    F: Fn(u32, u32) -> f64 + Sync,
{
    fn point(&self, xi_rx: u32, xi_fc: u32) -> Result<f64> {
        Ok(self(xi_rx, xi_fc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Every pair in the grid.
    Exhaustive,
    /// A `stride`-spaced subgrid, then every pair within `stride` of its best
    /// point. Best effort: exact only for unimodal surfaces.
    CoarseToFine { stride: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfacePoint {
    pub xi_rx: u32,
    pub xi_fc: u32,
    pub q_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub xi_rx: u32,
    pub xi_fc: u32,
    pub q_star: f64,
    /// Every evaluated point, sorted by (xi_rx, xi_fc).
    pub surface: Vec<SurfacePoint>,
    pub evaluations: usize,
}

impl OptimizationResult {
    pub fn lookup(&self, xi_rx: u32, xi_fc: u32) -> Option<f64> {
        self.surface
            .binary_search_by_key(&(xi_rx, xi_fc), |p| (p.xi_rx, p.xi_fc))
            .ok()
            .map(|i| self.surface[i].q_bar)
    }
}

fn key(q: f64) -> f64 {
    if q.is_nan() {
        f64::INFINITY
    } else {
        q
    }
}

/// Argmin over points sorted by (xi_rx, xi_fc); the first minimum wins, so
/// ties go to the smallest receiver threshold, then the smallest FC threshold.
fn argmin(points: &[SurfacePoint]) -> SurfacePoint {
    points
        .iter()
        .copied()
        .reduce(|best, p| if key(p.q_bar) < key(best.q_bar) { p } else { best })
        .expect("non-empty grid")
}

fn finish(mut surface: Vec<SurfacePoint>) -> OptimizationResult {
    surface.sort_by_key(|p| (p.xi_rx, p.xi_fc));
    let best = argmin(&surface);
    OptimizationResult { xi_rx: best.xi_rx, xi_fc: best.xi_fc, q_star: best.q_bar, evaluations: surface.len(), surface }
}

/// Minimizes `objective` over the integer grid `xi_rx x xi_fc`.
pub fn joint_optimize<O: GridObjective + ?Sized>(
    objective: &O,
    xi_rx: RangeInclusive<u32>,
    xi_fc: RangeInclusive<u32>,
    strategy: Strategy,
) -> Result<OptimizationResult> {
    if xi_rx.is_empty() {
        return Err(Error::EmptyRange("xi_rx"));
    }
    if xi_fc.is_empty() {
        return Err(Error::EmptyRange("xi_fc"));
    }
    match strategy {
        Strategy::Exhaustive => {
            let rows: Vec<Vec<SurfacePoint>> = xi_rx
                .clone()
                .into_par_iter()
                .map(|r| {
                    let values = objective.row(r, xi_fc.clone())?;
                    Ok(xi_fc.clone().zip(values).map(|(f, q)| SurfacePoint { xi_rx: r, xi_fc: f, q_bar: q }).collect())
                })
                .collect::<Result<_>>()?;
            Ok(finish(rows.into_iter().flatten().collect()))
        }
        Strategy::CoarseToFine { stride } => {
            let stride = stride.max(1);
            let mut cache: HashMap<(u32, u32), f64> = HashMap::new();
            let eval = |pairs: Vec<(u32, u32)>, cache: &mut HashMap<(u32, u32), f64>| -> Result<()> {
                let todo: Vec<(u32, u32)> = pairs.into_iter().filter(|p| !cache.contains_key(p)).collect();
                let values: Vec<f64> = todo.par_iter().map(|&(r, f)| objective.point(r, f)).collect::<Result<_>>()?;
                cache.extend(todo.into_iter().zip(values));
                Ok(())
            };
            let coarse = |range: &RangeInclusive<u32>| {
                let mut v: Vec<u32> = range.clone().step_by(stride as usize).collect();
                if v.last() != Some(range.end()) {
                    v.push(*range.end());
                }
                v
            };
            let (rs, fs) = (coarse(&xi_rx), coarse(&xi_fc));
            eval(rs.iter().flat_map(|&r| fs.iter().map(move |&f| (r, f))).collect(), &mut cache)?;
            let snapshot = |cache: &HashMap<(u32, u32), f64>| {
                let mut pts: Vec<SurfacePoint> =
                    cache.iter().map(|(&(r, f), &q)| SurfacePoint { xi_rx: r, xi_fc: f, q_bar: q }).collect();
                pts.sort_by_key(|p| (p.xi_rx, p.xi_fc));
                argmin(&pts)
            };
            let best = snapshot(&cache);
            let around = |c: u32, range: &RangeInclusive<u32>| {
                c.saturating_sub(stride).max(*range.start())..=(c + stride).min(*range.end())
            };
            let fine: Vec<(u32, u32)> = around(best.xi_rx, &xi_rx)
                .flat_map(|r| around(best.xi_fc, &xi_fc).map(move |f| (r, f)))
                .collect();
            eval(fine, &mut cache)?;
            Ok(finish(cache.into_iter().map(|((r, f), q)| SurfacePoint { xi_rx: r, xi_fc: f, q_bar: q }).collect()))
        }
    }
}
