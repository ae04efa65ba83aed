//! State extraction: MAP cell, then the mass-weighted mean of the cells
//! within radius `R` of it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{distance, GridIndex, LikelihoodField, Position};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub timestamp: f64,
    pub position: Position,
    pub map_cell: GridIndex,
    pub map_mass: f64,
    pub radius: f64,
    /// Number of cells inside the weighted-mean circle.
    pub support: usize,
}

/// Argmax cell, lowest index on ties.
pub fn map_estimate(field: &LikelihoodField) -> Result<GridIndex> {
    let mut best = None;
    let mut best_mass = 0.0;
    for (i, m) in field.mass().iter().enumerate() {
        if *m > best_mass {
            best_mass = *m;
            best = Some(GridIndex(i));
        }
    }
    best.ok_or(Error::DegenerateField)
}

/// Weighted centroid of the cells within `radius` of `center`, with the
/// number of contributing cells.
pub fn weighted_mean(field: &LikelihoodField, center: GridIndex, radius: f64) -> Result<(Position, usize)> {
    let spec = field.spec();
    let c = spec.position(center);
    let reach = if radius.is_finite() { (radius / spec.cell_size).floor() as i64 } else { i64::MAX / 4 };
    let cc = spec.coords(center);
    let lo = |axis: usize| (cc[axis] as i64 - reach).max(0) as usize;
    let hi = |axis: usize| ((cc[axis] as i64).saturating_add(reach)).min(spec.extent[axis] as i64 - 1) as usize;

    let mut acc = [0.0; 3];
    let mut total = 0.0;
    let mut support = 0;
    for z in lo(2)..=hi(2) {
        for y in lo(1)..=hi(1) {
            for x in lo(0)..=hi(0) {
                let idx = spec.index([x, y, z]);
                let p = spec.position(idx);
                if distance(&p, &c) > radius {
                    continue;
                }
                support += 1;
                let m = field.mass()[idx.0];
                total += m;
                for axis in 0..3 {
                    acc[axis] += m * p[axis];
                }
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateField);
    }
    Ok(([acc[0] / total, acc[1] / total, acc[2] / total], support))
}

/// MAP followed by the weighted mean around it.
pub fn estimate(field: &LikelihoodField, radius: f64, timestamp: f64) -> Result<Estimate> {
    let map_cell = map_estimate(field)?;
    let (position, support) = weighted_mean(field, map_cell, radius)?;
    Ok(Estimate { timestamp, position, map_cell, map_mass: field.mass()[map_cell.0], radius, support })
}
