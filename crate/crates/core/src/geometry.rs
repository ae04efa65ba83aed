//! Geometric relations between reference points and grid cells, and the
//! innovations of an observation against them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{distance, GridSpec, Position};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Satellite,
    Anchor,
}

/// A satellite or terrestrial anchor with known position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub id: String,
    pub position: Position,
    pub kind: ReferenceKind,
}

impl ReferencePoint {
    pub fn anchor(id: impl Into<String>, position: Position) -> Self {
        ReferencePoint { id: id.into(), position, kind: ReferenceKind::Anchor }
    }

    pub fn satellite(id: impl Into<String>, position: Position) -> Self {
        ReferencePoint { id: id.into(), position, kind: ReferenceKind::Satellite }
    }
}

/// Wraps an angle into (-pi, pi].
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Four-quadrant bearing of `to` seen from `from`, counterclockwise from +x.
#[inline]
pub fn bearing(from: &Position, to: &Position) -> f64 {
    wrap_angle((to[1] - from[1]).atan2(to[0] - from[0]))
}

/// Euclidean range from every cell to `reference`.
pub fn gamma_distance(reference: &ReferencePoint, grid: &GridSpec) -> Vec<f64> {
    grid.positions().map(|x| distance(&reference.position, &x)).collect()
}

/// Range difference `|a - x_i| - |b - x_i|` for every cell.
pub fn gamma_hyperbolic(a: &ReferencePoint, b: &ReferencePoint, grid: &GridSpec) -> Result<Vec<f64>> {
    if a.position == b.position {
        return Err(Error::CoincidentReferences(a.id.clone(), b.id.clone()));
    }
    Ok(grid
        .positions()
        .map(|x| distance(&a.position, &x) - distance(&b.position, &x))
        .collect())
}

/// Bearing from every cell to `reference`. Cells coincident with the
/// reference in the x-y plane have no defined bearing and carry `NaN`.
pub fn gamma_angle(reference: &ReferencePoint, grid: &GridSpec) -> Vec<f64> {
    let r = &reference.position;
    grid.positions()
        .map(|x| {
            if x[0] == r[0] && x[1] == r[1] {
                f64::NAN
            } else {
                bearing(&x, r)
            }
        })
        .collect()
}

/// `y_i = Z - gamma_i`, optionally wrapped into (-pi, pi]. `NaN` entries pass through.
pub fn innovations(observed: f64, gamma: &[f64], wrap: bool) -> Vec<f64> {
    gamma
        .iter()
        .map(|g| {
            let y = observed - g;
            if wrap {
                wrap_angle(y)
            } else {
                y
            }
        })
        .collect()
}
