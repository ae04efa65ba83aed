//! Discrete state space and the probability mass defined over it.
//!
//! The lattice is equidistant and axis aligned. Planar grids carry a single
//! z layer at `origin[2]`; volumetric grids add a z axis with the same cell
//! size. Cells are addressed by a linear index with x varying fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric position in the local ENU frame, meters.
pub type Position = [f64; 3];

/// Floor applied to every cell before normalization once the total mass is
/// known to be positive.
pub const MASS_FLOOR: f64 = 1e-300;

/// Euclidean distance between two positions.
#[inline]
pub fn distance(a: &Position, b: &Position) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Position of cell (0, 0, 0).
    pub origin: Position,
    pub cell_size: f64,
    /// Cell counts along x, y, z. A z extent of 1 marks a planar grid.
    pub extent: [usize; 3],
}

impl GridSpec {
    pub fn planar(origin: Position, cell_size: f64, nx: usize, ny: usize) -> Result<Self> {
        let spec = GridSpec { origin, cell_size, extent: [nx, ny, 1] };
        spec.validate()?;
        Ok(spec)
    }

    pub fn volumetric(
        origin: Position,
        cell_size: f64,
        nx: usize,
        ny: usize,
        nz: usize,
    ) -> Result<Self> {
        let spec = GridSpec { origin, cell_size, extent: [nx, ny, nz] };
        spec.validate()?;
        Ok(spec)
    }

    /// Planar grid centered on `center`, covering at least `width` x `height` meters.
    pub fn centered(center: Position, cell_size: f64, width: f64, height: f64) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidGrid(format!("cell_size must be positive, got {cell_size}")));
        }
        let nx = ((width / cell_size).round() as usize + 1).max(2);
        let ny = ((height / cell_size).round() as usize + 1).max(2);
        let origin = [
            center[0] - (nx - 1) as f64 * cell_size / 2.0,
            center[1] - (ny - 1) as f64 * cell_size / 2.0,
            center[2],
        ];
        Self::planar(origin, cell_size, nx, ny)
    }

    /// Same planar area at a different cell size, keeping the center.
    pub fn resampled(&self, cell_size: f64) -> Result<Self> {
        if self.extent[2] != 1 {
            return Err(Error::InvalidGrid("only planar grids can be resampled".into()));
        }
        let span = |axis: usize| (self.extent[axis] - 1) as f64 * self.cell_size;
        let center = [self.origin[0] + span(0) / 2.0, self.origin[1] + span(1) / 2.0, self.origin[2]];
        Self::centered(center, cell_size, span(0), span(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "cell_size must be positive and finite, got {}",
                self.cell_size
            )));
        }
        if self.origin.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        let [nx, ny, nz] = self.extent;
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!("extent must be >= 2 per axis, got {:?}", self.extent)));
        }
        if nz == 0 {
            return Err(Error::InvalidGrid("z extent must be 1 (planar) or >= 2".into()));
        }
        Ok(())
    }

    pub fn dimensionality(&self) -> usize {
        if self.extent[2] == 1 {
            2
        } else {
            3
        }
    }

    pub fn len(&self) -> usize {
        self.extent.iter().product()
    }

    /// Always false for a validated spec; present for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, coords: [usize; 3]) -> GridIndex {
        let [nx, ny, _] = self.extent;
        GridIndex(coords[0] + nx * (coords[1] + ny * coords[2]))
    }

    /// Index for possibly out-of-range signed coordinates.
    pub fn checked_index(&self, coords: [i64; 3]) -> Option<GridIndex> {
        let mut c = [0usize; 3];
        for axis in 0..3 {
            if coords[axis] < 0 || coords[axis] as usize >= self.extent[axis] {
                return None;
            }
            c[axis] = coords[axis] as usize;
        }
        Some(self.index(c))
    }

    pub fn coords(&self, index: GridIndex) -> [usize; 3] {
        let [nx, ny, _] = self.extent;
        let i = index.0;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn position(&self, index: GridIndex) -> Position {
        let c = self.coords(index);
        [
            self.origin[0] + c[0] as f64 * self.cell_size,
            self.origin[1] + c[1] as f64 * self.cell_size,
            self.origin[2] + c[2] as f64 * self.cell_size,
        ]
    }

    /// Positions of all cells in index order.
    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        (0..self.len()).map(move |i| self.position(GridIndex(i)))
    }

    /// Cell nearest to `p`, clamped to the grid.
    pub fn nearest(&self, p: &Position) -> GridIndex {
        let mut c = [0usize; 3];
        for axis in 0..3 {
            let raw = ((p[axis] - self.origin[axis]) / self.cell_size).round();
            let max = (self.extent[axis] - 1) as f64;
            c[axis] = raw.clamp(0.0, max) as usize;
        }
        self.index(c)
    }

    /// Same lattice, shifted origin.
    pub fn with_origin(&self, origin: Position) -> GridSpec {
        GridSpec { origin, ..*self }
    }
}

/// Linear cell index, x fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridIndex(pub usize);

/// Per-cell probability mass over a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodField {
    spec: GridSpec,
    mass: Vec<f64>,
}

impl LikelihoodField {
    pub fn uniform(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.len();
        Ok(LikelihoodField { spec, mass: vec![1.0 / n as f64; n] })
    }

    /// Wraps raw (not necessarily normalized) mass.
    pub fn from_mass(spec: GridSpec, mass: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if mass.len() != spec.len() {
            return Err(Error::SizeMismatch { expected: spec.len(), got: mass.len() });
        }
        if let Some(bad) = mass.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidGrid(format!("mass entries must be finite and >= 0, found {bad}")));
        }
        Ok(LikelihoodField { spec, mass })
    }

    /// Unit mass on a single cell.
    pub fn point_mass(spec: GridSpec, at: GridIndex) -> Result<Self> {
        spec.validate()?;
        let mut mass = vec![0.0; spec.len()];
        mass[at.0] = 1.0;
        Ok(LikelihoodField { spec, mass })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Scales the mass to unit sum.
    pub fn normalize(&self) -> Result<Self> {
        let mut out = self.clone();
        out.normalize_in_place()?;
        Ok(out)
    }

    pub fn normalize_in_place(&mut self) -> Result<()> {
        let total = self.total();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateField);
        }
        let eta = 1.0 / total;
        self.mass.iter_mut().for_each(|m| *m *= eta);
        Ok(())
    }

    /// Applies [`MASS_FLOOR`] and normalizes. Fails only if nothing is positive.
    pub(crate) fn floor_and_normalize(&mut self) -> Result<()> {
        let total = self.total();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateField);
        }
        self.mass.iter_mut().for_each(|m| *m = m.max(MASS_FLOOR));
        self.normalize_in_place()
    }

    /// Translates the field onto a grid with origin `new_origin`.
    ///
    /// Cells entering from outside the old extent receive `floor_mass`; the
    /// result is renormalized.
    pub fn recenter(&self, new_origin: Position, floor_mass: f64) -> Result<Self> {
        let cell = self.spec.cell_size;
        let mut shift = [0i64; 3];
        for axis in 0..3 {
            let cells = (new_origin[axis] - self.spec.origin[axis]) / cell;
            let rounded = cells.round();
            if (cells - rounded).abs() > 1e-6 {
                return Err(Error::OffGridShift([
                    new_origin[0] - self.spec.origin[0],
                    new_origin[1] - self.spec.origin[1],
                    new_origin[2] - self.spec.origin[2],
                ]));
            }
            shift[axis] = rounded as i64;
        }
        // snap exactly onto the old lattice so repeated shifts do not drift
        let snapped = [
            self.spec.origin[0] + shift[0] as f64 * cell,
            self.spec.origin[1] + shift[1] as f64 * cell,
            self.spec.origin[2] + shift[2] as f64 * cell,
        ];
        let spec = self.spec.with_origin(snapped);
        let mass = (0..spec.len())
            .map(|i| {
                let c = spec.coords(GridIndex(i));
                let src = [
                    c[0] as i64 + shift[0],
                    c[1] as i64 + shift[1],
                    c[2] as i64 + shift[2],
                ];
                match self.spec.checked_index(src) {
                    Some(j) => self.mass[j.0],
                    None => floor_mass,
                }
            })
            .collect();
        LikelihoodField { spec, mass }.normalize()
    }

    /// Indices of all cells sharing the maximal mass.
    pub fn argmax_set(&self) -> Vec<GridIndex> {
        let max = self.mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.mass
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == max)
            .map(|(i, _)| GridIndex(i))
            .collect()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        let total = self.total();
        self.mass
            .iter()
            .filter(|m| **m > 0.0)
            .map(|m| {
                let p = m / total;
                -p * p.ln()
            })
            .sum()
    }

    pub(crate) fn mass_mut(&mut self) -> &mut [f64] {
        &mut self.mass
    }
}
