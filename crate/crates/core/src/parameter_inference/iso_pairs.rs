//! Iso-intensity point pairing.
//!
//! Equal-intensity point pairs cancel the unknown nonlinearity between
//! two instances of the same equation. Levels are equally spaced strictly
//! between the field extremes; points match a level when within a quarter
//! of the level spacing; within a level, the most distant points are
//! paired first (distant pairs condition the difference formulas better).

use crate::error::{Error, Result};
use crate::field_grid::ScalarField2D;

/// Two grid points sharing (approximately) one intensity level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IsoIntensityPair {
    pub p1: (usize, usize),
    pub p2: (usize, usize),
    pub level_index: usize,
}

impl IsoIntensityPair {
    pub fn level(&self, levels: &[f64]) -> f64 {
        levels[self.level_index]
    }
}

/// Candidate points per level are capped to keep the greedy pairing
/// quadratic cost bounded; selection is a deterministic stride.
const MAX_POINTS_PER_LEVEL: usize = 600;

pub struct IsoPairSet {
    pub pairs: Vec<IsoIntensityPair>,
    pub levels: Vec<f64>,
}

/// Find disjoint equal-intensity pairs on `n_levels` levels.
///
/// Only strict-interior points participate: the difference formulas the
/// pairs feed use interior stencils.
pub fn find_iso_pairs(intensity: &ScalarField2D, n_levels: usize) -> Result<IsoPairSet> {
    if n_levels == 0 {
        return Err(Error::InvalidParameter {
            what: "n_levels",
            why: "must be at least 1".into(),
        });
    }
    let lo = intensity.min();
    let hi = intensity.max();
    if !(hi > lo) {
        return Err(Error::ConstantField("iso-intensity pairing"));
    }
    let spacing = (hi - lo) / (n_levels + 1) as f64;
    let levels: Vec<f64> = (1..=n_levels).map(|m| lo + m as f64 * spacing).collect();
    let tol = 0.25 * spacing;

    let n = intensity.spec().nx();
    let h = intensity.spec().h();
    // bucket interior points by nearest level
    let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_levels];
    for iy in 1..n - 1 {
        for ix in 1..n - 1 {
            let v = intensity.get(ix, iy);
            let m = ((v - lo) / spacing).round() as isize;
            if m < 1 || m as usize > n_levels {
                continue;
            }
            let li = m as usize - 1;
            if (v - levels[li]).abs() <= tol {
                buckets[li].push((ix, iy));
            }
        }
    }

    let mut pairs = Vec::new();
    for (li, mut pts) in buckets.into_iter().enumerate() {
        if pts.len() > MAX_POINTS_PER_LEVEL {
            let stride = pts.len() / MAX_POINTS_PER_LEVEL + 1;
            pts = pts.into_iter().step_by(stride).collect();
        }
        if pts.len() < 2 {
            continue;
        }
        // greedy max-distance matching
        let d2 = |a: (usize, usize), b: (usize, usize)| {
            let dx = (a.0 as f64 - b.0 as f64) * h;
            let dy = (a.1 as f64 - b.1 as f64) * h;
            dx * dx + dy * dy
        };
        let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                edges.push((d2(pts[i], pts[j]), i, j));
            }
        }
        edges.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used = vec![false; pts.len()];
        for (_, i, j) in edges {
            if !used[i] && !used[j] {
                used[i] = true;
                used[j] = true;
                pairs.push(IsoIntensityPair {
                    p1: pts[i],
                    p2: pts[j],
                    level_index: li,
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoValidPairs("no level produced a pair"));
    }
    Ok(IsoPairSet { pairs, levels })
}
