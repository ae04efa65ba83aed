//! Multi-rate sequential filtering over a time-ordered event stream.
//!
//! Each admitted event first advances the field by the motion model over the
//! gap since the previous event, then applies its measurement update. GNSS and
//! terrestrial epochs emit an estimate; odometry only refreshes the motion
//! input, which is held constant until the next odometry event.
//!
//! Observations sharing a timestamp and sensor form one epoch. Within an
//! epoch the likelihoods are merged by the configured [`CombineMode`];
//! successive epochs are always chained through the prior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{estimate, Estimate};
use crate::geometry::ReferencePoint;
use crate::grid::{GridSpec, LikelihoodField, MASS_FLOOR};
use crate::prediction::{predict_with, truncation_radius, MotionInput, MotionModel, PredictOptions, TransitionWorkspace};
use crate::update::{
    visit_likelihoods, Accumulator, CombineMode, MeasurementModels, Observation, Payload, ReferenceSet, Sensor,
};

pub const FILTER_SCHEMA: &str = "gridfuse.filter/1";

fn default_speed_std() -> f64 {
    0.5
}
fn default_heading_std() -> f64 {
    0.2
}
fn default_random_walk() -> f64 {
    0.5
}
fn default_max_gap() -> f64 {
    10.0
}
fn default_cutoff() -> f64 {
    1e-12
}
fn default_true() -> bool {
    true
}
fn default_margin() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub combine: CombineMode,
    /// Weighted-mean radius, meters. Defaults to five cells.
    #[serde(default)]
    pub radius: Option<f64>,
    pub models: MeasurementModels,
    pub anchors: Vec<ReferencePoint>,
    #[serde(default = "default_speed_std")]
    pub speed_std: f64,
    #[serde(default = "default_heading_std")]
    pub heading_std: f64,
    /// Diffusion rate used while no odometry has been received, m/s.
    #[serde(default = "default_random_walk")]
    pub random_walk_rate: f64,
    /// Gaps longer than this recommend reinitialization, seconds.
    #[serde(default = "default_max_gap")]
    pub max_gap: f64,
    #[serde(default = "default_true")]
    pub reinit_on_gap: bool,
    #[serde(default)]
    pub prediction_mode: crate::prediction::PredictionMode,
    /// Relative mass below which cells are not propagated.
    #[serde(default = "default_cutoff")]
    pub prediction_cutoff: f64,
    #[serde(default = "default_true")]
    pub recenter: bool,
    /// Border band, as a fraction of the extent, that triggers recentering.
    #[serde(default = "default_margin")]
    pub recenter_margin: f64,
}

impl FilterConfig {
    pub fn new(grid: GridSpec, models: MeasurementModels, anchors: Vec<ReferencePoint>) -> Self {
        FilterConfig {
            grid,
            combine: CombineMode::Sum,
            radius: None,
            models,
            anchors,
            speed_std: default_speed_std(),
            heading_std: default_heading_std(),
            random_walk_rate: default_random_walk(),
            max_gap: default_max_gap(),
            reinit_on_gap: true,
            prediction_mode: Default::default(),
            prediction_cutoff: default_cutoff(),
            recenter: true,
            recenter_margin: default_margin(),
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or(5.0 * self.grid.cell_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.models.range.validate()?;
        self.models.range_difference.validate()?;
        self.models.angle.validate()?;
        self.models.bssd.los_los.validate()?;
        self.models.bssd.nlos_los.validate()?;
        self.models.bssd.los_nlos.validate()?;
        if !(self.radius() >= self.grid.cell_size) {
            return Err(Error::InvalidModel(format!(
                "weighted-mean radius {} is smaller than a cell",
                self.radius()
            )));
        }
        for (name, v) in [
            ("speed_std", self.speed_std),
            ("heading_std", self.heading_std),
            ("random_walk_rate", self.random_walk_rate),
            ("max_gap", self.max_gap),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidModel(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    OutOfSequence,
    NonFiniteTimestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accept { reinit_recommended: bool },
    Reject(RejectReason),
}

/// Mutable filter state carried between events.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub field: LikelihoodField,
    pub last_timestamp: Option<f64>,
    /// Held odometry input as `(speed, heading)`.
    pub motion: Option<(f64, f64)>,
    pub estimates: Vec<Estimate>,
    pub reinitializations: usize,
    pub rejected: usize,
}

/// Outcome of a batch run.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub estimates: Vec<Estimate>,
    /// Timestamps of every processed event, in processing order.
    pub processed: Vec<f64>,
    pub epochs: usize,
    pub rejected: usize,
    pub reinitializations: usize,
    /// Adjacent inversions found in the input before sorting.
    pub inversions: usize,
}

pub struct GridFilter {
    config: FilterConfig,
    refs: ReferenceSet,
    workspace: TransitionWorkspace,
    state: FilterState,
}

impl GridFilter {
    pub fn new(config: FilterConfig) -> Result<Self> {
        config.validate()?;
        let refs = config.anchors.iter().map(|a| (a.id.clone(), a.clone())).collect();
        let workspace = TransitionWorkspace::new(config.grid, 6.0 * config.grid.cell_size)?;
        let state = FilterState {
            field: LikelihoodField::uniform(config.grid)?,
            last_timestamp: None,
            motion: None,
            estimates: Vec::new(),
            reinitializations: 0,
            rejected: 0,
        };
        Ok(GridFilter { config, refs, workspace, state })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn field(&self) -> &LikelihoodField {
        &self.state.field
    }

    /// Timing consistency check against the last processed event.
    pub fn admit(&self, event: &Observation) -> Admission {
        if !event.timestamp.is_finite() {
            return Admission::Reject(RejectReason::NonFiniteTimestamp);
        }
        match self.state.last_timestamp {
            None => Admission::Accept { reinit_recommended: false },
            Some(last) if event.timestamp < last => Admission::Reject(RejectReason::OutOfSequence),
            Some(last) => Admission::Accept { reinit_recommended: event.timestamp - last > self.config.max_gap },
        }
    }

    fn reinitialize(&mut self, why: &str, t: f64) -> Result<()> {
        log::warn!("reinitializing field at t={t:.3}: {why}");
        self.state.field = LikelihoodField::uniform(*self.state.field.spec())?;
        self.state.reinitializations += 1;
        Ok(())
    }

    fn motion_model(&self, dt: f64) -> MotionModel {
        match self.state.motion {
            Some((speed, heading)) => MotionModel::Odometry(MotionInput {
                speed,
                heading: Some(heading),
                speed_std: self.config.speed_std,
                heading_std: self.config.heading_std,
                dt,
            }),
            None => MotionModel::RandomWalk { rate: self.config.random_walk_rate, dt },
        }
    }

    /// Advances the clock to `t`, predicting over the gap.
    fn advance(&mut self, t: f64) -> Result<()> {
        let dt = match self.state.last_timestamp {
            Some(last) => t - last,
            None => 0.0,
        };
        self.state.last_timestamp = Some(t);
        if dt <= 0.0 {
            return Ok(());
        }
        let motion = self.motion_model(dt);
        self.workspace.ensure_radius(truncation_radius(&motion, self.config.grid.cell_size));
        let options = PredictOptions { mode: self.config.prediction_mode, source_cutoff: self.config.prediction_cutoff };
        match predict_with(&self.state.field, &motion, &mut self.workspace, &options) {
            Ok(f) => self.state.field = f,
            Err(Error::DegenerateField) => self.reinitialize("prediction moved all mass off the grid", t)?,
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// Processes one observation. Returns the estimate for GNSS and
    /// terrestrial events; rejected events return `Ok(None)`.
    pub fn step(&mut self, event: &Observation) -> Result<Option<Estimate>> {
        self.step_epoch(std::slice::from_ref(event))
    }

    /// Processes observations sharing one timestamp and sensor as a single
    /// measurement epoch.
    pub fn step_epoch(&mut self, epoch: &[Observation]) -> Result<Option<Estimate>> {
        let Some(first) = epoch.first() else {
            return Ok(None);
        };
        let t = first.timestamp;
        let sensor = first.sensor();
        if epoch.iter().any(|o| o.timestamp != t || o.sensor() != sensor) {
            return Err(Error::Parse("epoch mixes timestamps or sensors".into()));
        }
        match self.admit(first) {
            Admission::Reject(reason) => {
                log::warn!("rejected event at t={t:.3}: {reason:?}");
                self.state.rejected += epoch.len();
                return Ok(None);
            }
            Admission::Accept { reinit_recommended: true } if self.config.reinit_on_gap => {
                self.state.last_timestamp = Some(t);
                self.reinitialize("timestamp gap exceeds max_gap", t)?;
            }
            Admission::Accept { .. } => self.advance(t)?,
        }

        if sensor == Sensor::Odometry {
            for o in epoch {
                if let Payload::Odometry { speed, heading } = o.payload {
                    self.state.motion = Some((speed.max(0.0), heading));
                }
            }
            return Ok(None);
        }

        let spec = *self.state.field.spec();
        let mut acc = Accumulator::new(&self.state.field, self.config.combine);
        let mut folded = Ok(());
        for o in epoch {
            match visit_likelihoods(&spec, &o.payload, &self.refs, &self.config.models, &mut |l| acc.add(l)) {
                Ok(()) => {}
                Err(Error::InsufficientSatellites(n)) => log::info!("t={t:.3}: BSSD skipped with {n} satellite(s)"),
                Err(e) => {
                    folded = Err(e);
                    break;
                }
            }
        }
        let combined = folded.and_then(|_| acc.finish());
        match combined {
            Ok(f) => self.state.field = f,
            Err(Error::DegenerateField) => self.reinitialize("measurement update collapsed the field", t)?,
            Err(e) => return Err(e),
        }

        let est = estimate(&self.state.field, self.config.radius(), t)?;
        if self.config.recenter {
            self.maybe_recenter(&est)?;
        }
        self.state.estimates.push(est.clone());
        Ok(Some(est))
    }

    fn maybe_recenter(&mut self, est: &Estimate) -> Result<()> {
        let spec = *self.state.field.spec();
        let c = spec.coords(est.map_cell);
        let mut shift = [0i64; 3];
        let mut needed = false;
        for axis in 0..2 {
            let n = spec.extent[axis];
            let margin = ((n as f64) * self.config.recenter_margin).ceil() as usize;
            if c[axis] < margin || c[axis] + margin > n - 1 {
                needed = true;
            }
            shift[axis] = c[axis] as i64 - (n as i64 - 1) / 2;
        }
        if !needed {
            return Ok(());
        }
        let origin = [
            spec.origin[0] + shift[0] as f64 * spec.cell_size,
            spec.origin[1] + shift[1] as f64 * spec.cell_size,
            spec.origin[2],
        ];
        log::debug!("recentering grid by {shift:?} cells");
        self.state.field = self.state.field.recenter(origin, MASS_FLOOR)?;
        Ok(())
    }

    /// Sorts, groups into epochs and processes a whole event stream.
    pub fn run(&mut self, events: &[Observation]) -> Result<RunReport> {
        let inversions = events
            .windows(2)
            .filter(|w| order_key(&w[1]) < order_key(&w[0]))
            .count();
        if inversions > 0 {
            log::info!("sorting input with {inversions} out-of-order neighbours");
        }
        let mut sorted: Vec<&Observation> = events.iter().collect();
        sorted.sort_by(|a, b| order_key(a).partial_cmp(&order_key(b)).unwrap_or(std::cmp::Ordering::Equal));

        let mut report = RunReport { inversions, ..Default::default() };
        let mut i = 0;
        while i < sorted.len() {
            let head = sorted[i];
            let mut j = i + 1;
            while j < sorted.len() && sorted[j].timestamp == head.timestamp && sorted[j].sensor() == head.sensor() {
                j += 1;
            }
            let epoch: Vec<Observation> = sorted[i..j].iter().map(|o| (*o).clone()).collect();
            let rejected_before = self.state.rejected;
            if let Some(est) = self.step_epoch(&epoch)? {
                report.estimates.push(est);
            }
            if self.state.rejected == rejected_before {
                report.processed.extend(epoch.iter().map(|o| o.timestamp));
                report.epochs += 1;
            }
            i = j;
        }
        report.rejected = self.state.rejected;
        report.reinitializations = self.state.reinitializations;
        Ok(report)
    }
}

/// Processing order: timestamp, then sensor, then reference id.
fn order_key(o: &Observation) -> (f64, Sensor, String) {
    let id = match &o.payload {
        Payload::Range { anchor_id, .. } | Payload::Angle { anchor_id, .. } => anchor_id.clone(),
        Payload::RangeDifference { ref_a, ref_b, .. } => format!("{ref_a}\u{1f}{ref_b}"),
        Payload::GnssPseudoranges { satellites } => satellites.first().map(|s| s.sat_id.clone()).unwrap_or_default(),
        Payload::Odometry { .. } => String::new(),
    };
    (o.timestamp, o.sensor(), id)
}
