//! Grid-based motion prediction from speed over ground and heading.
//!
//! Every candidate-to-candidate transition is weighted by the likelihood of
//! its length under the travelled distance `v * dt` and of its bearing under
//! the heading. On an equidistant lattice both depend only on the cell
//! offset, so the workspace caches one entry per offset and prediction is a
//! scatter of each source cell's mass through that kernel.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bearing, wrap_angle};
use crate::grid::{distance, GridIndex, GridSpec, LikelihoodField};

/// Odometry-driven motion over one prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionInput {
    /// Speed over ground, m/s.
    pub speed: f64,
    /// Heading, radians counterclockwise from +x. `None` when only speed is known.
    pub heading: Option<f64>,
    pub speed_std: f64,
    pub heading_std: f64,
    /// Prediction horizon, seconds.
    pub dt: f64,
}

impl MotionInput {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed >= 0.0) || !self.speed.is_finite() {
            return Err(Error::InvalidModel(format!("speed must be >= 0, got {}", self.speed)));
        }
        if !(self.speed_std > 0.0) || !(self.heading_std > 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidModel(format!(
                "motion needs speed_std, heading_std and dt > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Standard deviation of the travelled distance.
    pub fn distance_std(&self) -> f64 {
        self.speed_std * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionModel {
    Odometry(MotionInput),
    /// Isotropic Gaussian diffusion with standard deviation `rate * dt`.
    RandomWalk { rate: f64, dt: f64 },
}

/// How transition likelihoods are fused with the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// `p_i = eta * sum_j pv(i<-j) ph(i<-j) p_j`.
    #[default]
    SourceWeighted,
    /// `p_i = eta * (sum_j pv(i,j)) (sum_j ph(i,j)) p_i`, a direct transcription
    /// kept for comparison.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub mode: PredictionMode,
    /// Source cells with mass below `source_cutoff * max` are skipped.
    pub source_cutoff: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions { mode: PredictionMode::SourceWeighted, source_cutoff: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Offset {
    dx: i64,
    dy: i64,
    distance: f64,
    /// Bearing of the displacement, NaN for the zero offset.
    bearing: f64,
}

/// Cached in-plane distances and bearings for every cell offset up to a radius.
#[derive(Debug, Clone)]
pub struct TransitionWorkspace {
    spec: GridSpec,
    radius: f64,
    offsets: Vec<Offset>,
}

impl TransitionWorkspace {
    pub fn new(spec: GridSpec, radius: f64) -> Result<Self> {
        spec.validate()?;
        let mut ws = TransitionWorkspace { spec, radius: 0.0, offsets: Vec::new() };
        ws.build(radius);
        Ok(ws)
    }

    fn build(&mut self, radius: f64) {
        let c = self.spec.cell_size;
        let reach = (radius / c).ceil() as i64;
        let max_x = self.spec.extent[0] as i64 - 1;
        let max_y = self.spec.extent[1] as i64 - 1;
        let mut offsets = Vec::new();
        for dy in -reach.min(max_y)..=reach.min(max_y) {
            for dx in -reach.min(max_x)..=reach.min(max_x) {
                let d = ((dx * dx + dy * dy) as f64).sqrt() * c;
                if d > radius {
                    continue;
                }
                let b = if dx == 0 && dy == 0 { f64::NAN } else { wrap_angle((dy as f64).atan2(dx as f64)) };
                offsets.push(Offset { dx, dy, distance: d, bearing: b });
            }
        }
        self.offsets = offsets;
        self.radius = radius;
    }

    /// Grows the cached radius if needed.
    pub fn ensure_radius(&mut self, radius: f64) {
        if radius > self.radius {
            self.build(radius);
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Number of cached offsets including the zero offset.
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Distance between two cells.
    pub fn distance(&self, i: GridIndex, j: GridIndex) -> f64 {
        distance(&self.spec.position(i), &self.spec.position(j))
    }

    /// Bearing of the displacement from `from` to `to`; undefined for equal cells.
    pub fn bearing(&self, from: GridIndex, to: GridIndex) -> Option<f64> {
        (from != to).then(|| bearing(&self.spec.position(from), &self.spec.position(to)))
    }

    /// Offsets within `radius`, as `(dx, dy, distance, bearing)`.
    pub fn offsets_within(&self, radius: f64) -> impl Iterator<Item = (i64, i64, f64, f64)> + '_ {
        self.offsets
            .iter()
            .filter(move |o| o.distance <= radius)
            .map(|o| (o.dx, o.dy, o.distance, o.bearing))
    }
}

/// Radius beyond which transition likelihoods are neglected.
pub fn truncation_radius(motion: &MotionModel, cell_size: f64) -> f64 {
    match motion {
        MotionModel::Odometry(m) => m.speed * m.dt + 6.0 * m.distance_std() + 6.0 * cell_size,
        MotionModel::RandomWalk { rate, dt } => 6.0 * rate * dt + 6.0 * cell_size,
    }
}

/// Which factor of the transition likelihood to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Factor {
    Velocity,
    Heading,
    Both,
}

/// Log transition likelihood for one offset.
fn log_transition(o: &Offset, motion: &MotionModel, factor: Factor) -> f64 {
    match motion {
        MotionModel::Odometry(m) => {
            let mut ln = 0.0;
            if factor != Factor::Heading {
                let z = (m.speed * m.dt - o.distance) / m.distance_std();
                ln += -0.5 * z * z;
            }
            if factor != Factor::Velocity {
                if let Some(theta) = m.heading {
                    ln += if o.bearing.is_nan() {
                        -(2.0 * PI).ln()
                    } else {
                        let z = wrap_angle(theta - o.bearing) / m.heading_std;
                        -0.5 * z * z - (m.heading_std * (2.0 * PI).sqrt()).ln()
                    };
                }
            }
            ln
        }
        MotionModel::RandomWalk { rate, dt } => {
            let z = o.distance / (rate * dt);
            -0.5 * z * z
        }
    }
}

/// Kernel entries below this fraction of the peak are dropped.
pub const KERNEL_FLOOR: f64 = 1e-16;

/// One lattice row of the kernel: weights for `dx = dx0 ..` at fixed `dy`.
struct KernelRow {
    dy: i64,
    dx0: i64,
    weights: Vec<f64>,
}

/// Kernel over cached offsets, scaled so its largest entry is one.
fn kernel(ws: &TransitionWorkspace, motion: &MotionModel, factor: Factor) -> Vec<KernelRow> {
    let radius = truncation_radius(motion, ws.spec.cell_size);
    let logs: Vec<(i64, i64, f64)> = ws
        .offsets
        .iter()
        .filter(|o| o.distance <= radius)
        .map(|o| (o.dx, o.dy, log_transition(o, motion, factor)))
        .collect();
    let max = logs.iter().map(|k| k.2).fold(f64::NEG_INFINITY, f64::max);
    let mut entries: Vec<(i64, i64, f64)> = logs
        .into_iter()
        .map(|(dx, dy, l)| (dx, dy, (l - max).exp()))
        .filter(|k| k.2 >= KERNEL_FLOOR)
        .collect();
    entries.sort_by_key(|e| (e.1, e.0));
    let mut rows: Vec<KernelRow> = Vec::new();
    for (dx, dy, k) in entries {
        match rows.last_mut() {
            Some(r) if r.dy == dy => {
                let end = r.dx0 + r.weights.len() as i64;
                r.weights.resize((dx - r.dx0) as usize, 0.0);
                debug_assert!(dx >= end);
                r.weights.push(k);
            }
            _ => rows.push(KernelRow { dy, dx0: dx, weights: vec![k] }),
        }
    }
    rows
}

fn validate_motion(motion: &MotionModel) -> Result<()> {
    match motion {
        MotionModel::Odometry(m) => m.validate(),
        MotionModel::RandomWalk { rate, dt } => {
            if !(*rate > 0.0) || !(*dt > 0.0) {
                return Err(Error::InvalidModel(format!("random walk needs rate, dt > 0, got {rate}, {dt}")));
            }
            Ok(())
        }
    }
}

/// `out_i = sum_j k(i - j) * w_j` over the grid, in-plane.
fn scatter(spec: &GridSpec, weights: &[f64], kernel: &[KernelRow], cutoff: f64) -> Vec<f64> {
    let [nx, ny, nz] = spec.extent;
    let (nx, ny) = (nx as i64, ny as i64);
    let max = weights.iter().cloned().fold(0.0, f64::max);
    let threshold = cutoff * max;
    let mut out = vec![0.0; weights.len()];
    let layer = (nx * ny) as usize;
    for z in 0..nz {
        let base = z * layer;
        for y in 0..ny {
            for x in 0..nx {
                let w = weights[base + (x + nx * y) as usize];
                if w <= threshold || w == 0.0 {
                    continue;
                }
                for row in kernel {
                    let ty = y + row.dy;
                    if ty < 0 || ty >= ny {
                        continue;
                    }
                    // clip the row to the lattice
                    let first = x + row.dx0;
                    let skip = (-first).max(0);
                    let end = (first + row.weights.len() as i64).min(nx);
                    if first + skip >= end {
                        continue;
                    }
                    let start = base + (ty * nx + first + skip) as usize;
                    let len = (end - first - skip) as usize;
                    let src = &row.weights[skip as usize..skip as usize + len];
                    for (o, k) in out[start..start + len].iter_mut().zip(src) {
                        *o += k * w;
                    }
                }
            }
        }
    }
    out
}

fn factor_field(
    posterior: &LikelihoodField,
    motion: &MotionInput,
    ws: &mut TransitionWorkspace,
    factor: Factor,
) -> Result<Vec<f64>> {
    motion.validate()?;
    let motion = MotionModel::Odometry(*motion);
    ws.ensure_radius(truncation_radius(&motion, ws.spec.cell_size));
    let k = kernel(ws, &motion, factor);
    Ok(scatter(posterior.spec(), posterior.mass(), &k, 0.0))
}

/// Source-weighted velocity likelihood per target cell, up to a constant factor.
pub fn predict_velocity(
    posterior: &LikelihoodField,
    motion: &MotionInput,
    ws: &mut TransitionWorkspace,
) -> Result<Vec<f64>> {
    check_workspace(posterior, ws)?;
    factor_field(posterior, motion, ws, Factor::Velocity)
}

/// Source-weighted heading likelihood per target cell, up to a constant
/// factor. A missing heading makes the result isotropic.
pub fn predict_heading(
    posterior: &LikelihoodField,
    motion: &MotionInput,
    ws: &mut TransitionWorkspace,
) -> Result<Vec<f64>> {
    check_workspace(posterior, ws)?;
    factor_field(posterior, motion, ws, Factor::Heading)
}

fn check_workspace(posterior: &LikelihoodField, ws: &TransitionWorkspace) -> Result<()> {
    let (a, b) = (posterior.spec(), ws.spec());
    if a.extent != b.extent || a.cell_size != b.cell_size {
        return Err(Error::InvalidGrid("workspace was built for a different lattice".into()));
    }
    Ok(())
}

/// Propagates the posterior through the motion model and normalizes.
pub fn predict(posterior: &LikelihoodField, motion: &MotionModel, ws: &mut TransitionWorkspace) -> Result<LikelihoodField> {
    predict_with(posterior, motion, ws, &PredictOptions::default())
}

pub fn predict_with(
    posterior: &LikelihoodField,
    motion: &MotionModel,
    ws: &mut TransitionWorkspace,
    options: &PredictOptions,
) -> Result<LikelihoodField> {
    check_workspace(posterior, ws)?;
    validate_motion(motion)?;
    ws.ensure_radius(truncation_radius(motion, ws.spec.cell_size));
    let spec = *posterior.spec();
    let mass = match options.mode {
        PredictionMode::SourceWeighted => {
            let k = kernel(ws, motion, Factor::Both);
            scatter(&spec, posterior.mass(), &k, options.source_cutoff)
        }
        PredictionMode::Literal => {
            let ones = vec![1.0; spec.len()];
            let (v, h) = match motion {
                MotionModel::Odometry(_) => (
                    scatter(&spec, &ones, &kernel(ws, motion, Factor::Velocity), 0.0),
                    scatter(&spec, &ones, &kernel(ws, motion, Factor::Heading), 0.0),
                ),
                MotionModel::RandomWalk { .. } => (scatter(&spec, &ones, &kernel(ws, motion, Factor::Both), 0.0), ones),
            };
            posterior
                .mass()
                .iter()
                .zip(v.iter().zip(&h))
                .map(|(p, (a, b))| p * a * b)
                .collect()
        }
    };
    let mut out = LikelihoodField::from_mass(spec, mass)?;
    out.floor_and_normalize()?;
    Ok(out)
}
