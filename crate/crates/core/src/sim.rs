//! Synthetic scenarios: anchor and satellite geometry, a static pose or a
//! closed-course trajectory, and noisy GNSS, UWB and odometry observations
//! drawn from the calibrated error models.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::FilterConfig;
use crate::error::{Error, Result};
use crate::geometry::{ReferencePoint, SPEED_OF_LIGHT};
use crate::grid::{distance, GridSpec, Position};
use crate::noise::NoiseModel;
use crate::update::{MeasurementModels, Observation, Payload, SatelliteRange, Visibility, VisibilityOracle};

pub const SCENARIO_SCHEMA: &str = "gridfuse.scenario/1";

/// Height of the simulated satellite constellation above the local plane, m.
pub const SATELLITE_ALTITUDE: f64 = 20_200_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteTrack {
    pub id: String,
    pub position: Position,
    pub visibility: Visibility,
    /// Time windows `[start, end)` during which `visibility` is inverted.
    #[serde(default)]
    pub flips: Vec<[f64; 2]>,
}

impl SatelliteTrack {
    pub fn visibility_at(&self, t: f64) -> Visibility {
        let flipped = self.flips.iter().any(|w| t >= w[0] && t < w[1]);
        match (self.visibility, flipped) {
            (v, false) => v,
            (Visibility::Los, true) => Visibility::Nlos,
            (Visibility::Nlos, true) => Visibility::Los,
        }
    }
}

/// Visibility oracle backed by the scenario's own schedule.
pub struct ScheduleOracle<'a>(pub &'a [SatelliteTrack]);

impl VisibilityOracle for ScheduleOracle<'_> {
    fn visibility(&self, sat_id: &str, epoch: f64) -> Visibility {
        self.0
            .iter()
            .find(|s| s.id == sat_id)
            .map(|s| s.visibility_at(epoch))
            .unwrap_or(Visibility::Nlos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Position,
    pub speed: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Static { position: Position, heading: f64 },
    /// Counterclockwise circle starting at `start_angle`.
    Circuit { center: Position, radius: f64, speed: f64, start_angle: f64 },
}

impl Trajectory {
    pub fn pose(&self, t: f64) -> Pose {
        match self {
            Trajectory::Static { position, heading } => Pose { position: *position, speed: 0.0, heading: *heading },
            Trajectory::Circuit { center, radius, speed, start_angle } => {
                let phi = start_angle + speed / radius * t;
                Pose {
                    position: [center[0] + radius * phi.cos(), center[1] + radius * phi.sin(), center[2]],
                    speed: *speed,
                    heading: crate::geometry::wrap_angle(phi + PI / 2.0),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub gnss_hz: f64,
    pub uwb_hz: f64,
    /// Zero disables the odometry stream.
    pub odometry_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// LOS ranging error.
    pub uwb: NoiseModel,
    pub uwb_outlier_rate: f64,
    pub uwb_outlier: NoiseModel,
    /// Standard deviation of an individual LOS pseudorange, m.
    pub gnss_los_std: f64,
    /// Mean of the exponential NLOS pseudorange bias, m.
    pub nlos_bias_mean: f64,
    /// Receiver clock offset at t = 0 and its drift, s and s/s.
    pub receiver_clock_offset: f64,
    pub receiver_clock_drift: f64,
    pub odometry_speed_std: f64,
    pub odometry_heading_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            uwb: NoiseModel::gaussian(0.05, 0.31).expect("valid"),
            uwb_outlier_rate: 0.1,
            uwb_outlier: NoiseModel::Uniform { low: -30.0, high: 30.0 },
            gnss_los_std: 7.8,
            nlos_bias_mean: 13.0,
            receiver_clock_offset: 1.0e-4,
            receiver_clock_drift: 1.0e-8,
            odometry_speed_std: 0.05,
            odometry_heading_std: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    pub seed: u64,
    /// Suggested filter grid covering the test field.
    pub grid: GridSpec,
    pub anchors: Vec<ReferencePoint>,
    pub satellites: Vec<SatelliteTrack>,
    pub trajectory: Trajectory,
    pub rates: Rates,
    /// Number of GNSS plus UWB measurement epochs.
    pub epochs: usize,
    pub noise: NoiseConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(Error::InvalidScenario(format!("unsupported schema `{}`", self.schema)));
        }
        let r = &self.rates;
        if !(r.gnss_hz > 0.0) || !(r.uwb_hz > 0.0) || !(r.odometry_hz >= 0.0) {
            return Err(Error::InvalidScenario(format!("rates must be positive, got {r:?}")));
        }
        if !(0.0..=1.0).contains(&self.noise.uwb_outlier_rate) {
            return Err(Error::InvalidScenario("uwb_outlier_rate must lie in [0, 1]".into()));
        }
        if !(self.noise.gnss_los_std >= 0.0) || !(self.noise.nlos_bias_mean >= 0.0) {
            return Err(Error::InvalidScenario("GNSS noise parameters must be >= 0".into()));
        }
        if let Trajectory::Circuit { radius, speed, .. } = self.trajectory {
            if !(radius > 0.0) || !(speed >= 0.0) {
                return Err(Error::InvalidScenario("circuit needs radius > 0 and speed >= 0".into()));
            }
        }
        self.noise.uwb.validate()?;
        self.noise.uwb_outlier.validate()?;
        self.grid.validate()
    }
}

/// Reference position at a measurement epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub timestamp: f64,
    pub position: Position,
}

pub type GroundTruth = Vec<TruthSample>;

/// Knobs for the representative static and dynamic scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub epochs: usize,
    pub speed: f64,
    pub course_radius: f64,
    pub anchor_count: usize,
    pub anchor_ring_radius: f64,
    pub cell_size: f64,
    pub grid_width: f64,
    pub gnss_hz: f64,
    pub uwb_hz: f64,
    pub odometry_hz: f64,
    /// Tag antenna height above the local plane, m.
    pub tag_height: f64,
    pub noise: NoiseConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 42,
            epochs: 500,
            speed: 5.0,
            course_radius: 15.0,
            anchor_count: 11,
            anchor_ring_radius: 22.0,
            cell_size: 0.2,
            grid_width: 44.0,
            gnss_hz: 1.0,
            // 1411 GNSS to 655 UWB epochs
            uwb_hz: 655.0 / 1411.0,
            odometry_hz: 2.0,
            tag_height: 1.5,
            noise: NoiseConfig::default(),
        }
    }
}

fn layout_anchors(cfg: &ScenarioConfig) -> Vec<ReferencePoint> {
    let ring = cfg.anchor_count.saturating_sub(1).max(1);
    let mut anchors: Vec<ReferencePoint> = (0..ring)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / ring as f64 + 0.1;
            // alternate mounting heights and a slight radial stagger
            let r = cfg.anchor_ring_radius * if k % 2 == 0 { 1.0 } else { 0.9 };
            let z = if k % 3 == 0 { 3.0 } else { 2.2 };
            ReferencePoint::anchor(format!("A{:02}", k + 1), [r * a.cos(), r * a.sin(), z])
        })
        .collect();
    if cfg.anchor_count > ring {
        anchors.push(ReferencePoint::anchor(format!("A{:02}", ring + 1), [1.0, -2.0, 2.5]));
    }
    anchors.truncate(cfg.anchor_count);
    anchors
}

fn layout_satellites(seed: u64) -> Vec<SatelliteTrack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a7e_11a7);
    let names = ["G03", "G07", "E11", "G14", "E24", "R05", "G22", "E31"];
    names
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let az = 2.0 * PI * k as f64 / 8.0 + 0.3;
            let el = (15.0 + 60.0 * k as f64 / 7.0).to_radians();
            let slant = SATELLITE_ALTITUDE / el.sin();
            let position = [slant * el.cos() * az.cos(), slant * el.cos() * az.sin(), SATELLITE_ALTITUDE];
            // low satellites are blocked; mid elevations flicker
            let visibility = if el < 30f64.to_radians() { Visibility::Nlos } else { Visibility::Los };
            let mut flips = Vec::new();
            if el < 50f64.to_radians() {
                let mut t = rng.random_range(0.0..60.0);
                while t < 20_000.0 {
                    let len = rng.random_range(10.0..40.0);
                    flips.push([t, t + len]);
                    t += len + rng.random_range(30.0..120.0);
                }
            }
            SatelliteTrack { id: id.to_string(), position, visibility, flips }
        })
        .collect()
}

fn base_scenario(cfg: &ScenarioConfig, name: &str, trajectory: Trajectory) -> Result<Scenario> {
    let grid = GridSpec::centered([0.0, 0.0, cfg.tag_height], cfg.cell_size, cfg.grid_width, cfg.grid_width)?;
    let s = Scenario {
        schema: SCENARIO_SCHEMA.to_string(),
        name: name.to_string(),
        seed: cfg.seed,
        grid,
        anchors: layout_anchors(cfg),
        satellites: layout_satellites(cfg.seed),
        trajectory,
        rates: Rates { gnss_hz: cfg.gnss_hz, uwb_hz: cfg.uwb_hz, odometry_hz: cfg.odometry_hz },
        epochs: cfg.epochs,
        noise: cfg.noise.clone(),
    };
    s.validate()?;
    Ok(s)
}

/// Fixed pose at the start point of the course.
pub fn make_static_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    let start = Trajectory::Circuit {
        center: [0.0, 0.0, cfg.tag_height],
        radius: cfg.course_radius,
        speed: 0.0,
        start_angle: -PI / 2.0,
    }
    .pose(0.0);
    base_scenario(cfg, "static", Trajectory::Static { position: start.position, heading: start.heading })
}

/// Closed circular course at `cfg.speed`.
pub fn make_dynamic_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    base_scenario(
        cfg,
        "dynamic",
        Trajectory::Circuit {
            center: [0.0, 0.0, cfg.tag_height],
            radius: cfg.course_radius,
            speed: cfg.speed,
            start_angle: -PI / 2.0,
        },
    )
}

/// Filter configuration matching a scenario: its grid, anchors and the
/// reference measurement models.
pub fn filter_config(scenario: &Scenario) -> FilterConfig {
    let mut cfg = FilterConfig::new(scenario.grid, MeasurementModels::reference(), scenario.anchors.clone());
    cfg.speed_std = 0.1;
    cfg
}

/// Merged GNSS / UWB epoch times, first `n` in time order. UWB epochs are
/// offset by half a period so that the streams interleave.
fn epoch_schedule(rates: &Rates, n: usize) -> Vec<(f64, bool)> {
    let mut out = Vec::with_capacity(n);
    let (mut g, mut u) = (0usize, 0usize);
    while out.len() < n {
        let tg = g as f64 / rates.gnss_hz;
        let tu = (u as f64 + 0.5) / rates.uwb_hz;
        if tg <= tu {
            out.push((tg, true));
            g += 1;
        } else {
            out.push((tu, false));
            u += 1;
        }
    }
    out
}

/// Draws the observation stream and the matching ground truth.
pub fn generate(scenario: &Scenario) -> Result<(Vec<Observation>, GroundTruth)> {
    scenario.validate()?;
    let noise = &scenario.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let gnss_noise = Normal::new(0.0, noise.gnss_los_std).map_err(|e| Error::InvalidScenario(e.to_string()))?;
    let nlos_bias = (noise.nlos_bias_mean > 0.0)
        .then(|| Exp::new(1.0 / noise.nlos_bias_mean))
        .transpose()
        .map_err(|e| Error::InvalidScenario(e.to_string()))?;
    let odo_speed = Normal::new(0.0, noise.odometry_speed_std).map_err(|e| Error::InvalidScenario(e.to_string()))?;
    let odo_heading = Normal::new(0.0, noise.odometry_heading_std).map_err(|e| Error::InvalidScenario(e.to_string()))?;

    let schedule = epoch_schedule(&scenario.rates, scenario.epochs);
    let end = schedule.last().map(|e| e.0).unwrap_or(0.0);
    let mut events = Vec::new();
    let mut truth = Vec::with_capacity(schedule.len());

    for &(t, is_gnss) in &schedule {
        let pose = scenario.trajectory.pose(t);
        truth.push(TruthSample { timestamp: t, position: pose.position });
        if is_gnss {
            let clock = SPEED_OF_LIGHT * (noise.receiver_clock_offset + noise.receiver_clock_drift * t);
            let satellites = scenario
                .satellites
                .iter()
                .map(|s| {
                    let vis = s.visibility_at(t);
                    let mut rho = distance(&s.position, &pose.position) + clock;
                    if noise.gnss_los_std > 0.0 {
                        rho += gnss_noise.sample(&mut rng);
                    }
                    if vis == Visibility::Nlos {
                        if let Some(exp) = &nlos_bias {
                            rho += exp.sample(&mut rng);
                        }
                    }
                    SatelliteRange { sat_id: s.id.clone(), position: s.position, pseudorange: rho, visibility: vis }
                })
                .collect();
            events.push(Observation::new(t, Payload::GnssPseudoranges { satellites }));
        } else {
            for a in &scenario.anchors {
                let err = if rng.random::<f64>() < noise.uwb_outlier_rate {
                    noise.uwb_outlier.sample(&mut rng)
                } else {
                    noise.uwb.sample(&mut rng)
                };
                let range = distance(&a.position, &pose.position) + err;
                events.push(Observation::new(t, Payload::Range { anchor_id: a.id.clone(), range }));
            }
        }
    }

    if scenario.rates.odometry_hz > 0.0 {
        let mut k = 0usize;
        loop {
            let t = k as f64 / scenario.rates.odometry_hz;
            if t > end {
                break;
            }
            let pose = scenario.trajectory.pose(t);
            let speed = (pose.speed + odo_speed.sample(&mut rng)).max(0.0);
            let heading = crate::geometry::wrap_angle(pose.heading + odo_heading.sample(&mut rng));
            events.push(Observation::new(t, Payload::Odometry { speed, heading }));
            k += 1;
        }
    }

    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.sensor().cmp(&b.sensor())));
    Ok((events, truth))
}

/// Position of the truth sample nearest to `t`, if within `tolerance`.
pub fn truth_at(truth: &[TruthSample], t: f64, tolerance: f64) -> Option<Position> {
    let i = truth.partition_point(|s| s.timestamp < t);
    [i.checked_sub(1), Some(i)]
        .into_iter()
        .flatten()
        .filter_map(|k| truth.get(k))
        .filter(|s| (s.timestamp - t).abs() <= tolerance)
        .min_by(|a, b| (a.timestamp - t).abs().total_cmp(&(b.timestamp - t).abs()))
        .map(|s| s.position)
}

/// Which visibility cases to keep when extracting BSSD residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFilter {
    LosOnly,
    All,
}

/// Full-set single-difference residuals `drho - (d_a - d_b)` at the true
/// positions, over ordered satellite pairs.
pub fn bssd_residuals(events: &[Observation], truth: &[TruthSample], filter: PairFilter) -> Vec<f64> {
    let mut out = Vec::new();
    for e in events {
        let Payload::GnssPseudoranges { satellites } = &e.payload else { continue };
        let Some(x) = truth_at(truth, e.timestamp, 1e-3) else { continue };
        for a in satellites {
            for b in satellites {
                if a.sat_id == b.sat_id {
                    continue;
                }
                if filter == PairFilter::LosOnly && (a.visibility != Visibility::Los || b.visibility != Visibility::Los) {
                    continue;
                }
                let geometric = distance(&a.position, &x) - distance(&b.position, &x);
                out.push((a.pseudorange - b.pseudorange) - geometric);
            }
        }
    }
    out
}

/// Ranging residuals `range - |anchor - x|` at the true positions.
pub fn uwb_residuals(events: &[Observation], truth: &[TruthSample], anchors: &[ReferencePoint]) -> Vec<f64> {
    events
        .iter()
        .filter_map(|e| match &e.payload {
            Payload::Range { anchor_id, range } => {
                let x = truth_at(truth, e.timestamp, 1e-3)?;
                let a = anchors.iter().find(|a| &a.id == anchor_id)?;
                Some(range - distance(&a.position, &x))
            }
            _ => None,
        })
        .collect()
}
