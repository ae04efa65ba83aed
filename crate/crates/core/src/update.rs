//! Measurement update: per-cell likelihoods for terrestrial and GNSS
//! observations and their fusion with the prior field.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gamma_angle, gamma_distance, gamma_hyperbolic, innovations, ReferencePoint};
use crate::grid::{distance, GridSpec, LikelihoodField, Position};
use crate::noise::{GmmModel, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Visibility {
    Los,
    Nlos,
}

/// Predicts whether a satellite is received in line of sight at an epoch.
pub trait VisibilityOracle {
    fn visibility(&self, sat_id: &str, epoch: f64) -> Visibility;
}

impl<F: Fn(&str, f64) -> Visibility> VisibilityOracle for F {
    fn visibility(&self, sat_id: &str, epoch: f64) -> Visibility {
        self(sat_id, epoch)
    }
}

/// One corrected pseudorange of a GNSS epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteRange {
    pub sat_id: String,
    pub position: Position,
    /// Pseudorange with satellite clock and atmospheric terms removed, meters.
    pub pseudorange: f64,
    pub visibility: Visibility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Range { anchor_id: String, range: f64 },
    RangeDifference { ref_a: String, ref_b: String, difference: f64 },
    Angle { anchor_id: String, angle: f64 },
    GnssPseudoranges { satellites: Vec<SatelliteRange> },
    Odometry { speed: f64, heading: f64 },
}

/// Sensor family of a payload. The derived order is the processing order for
/// equal timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Gnss,
    Uwb,
    Odometry,
}

impl Payload {
    pub fn sensor(&self) -> Sensor {
        match self {
            Payload::GnssPseudoranges { .. } => Sensor::Gnss,
            Payload::Odometry { .. } => Sensor::Odometry,
            _ => Sensor::Uwb,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Scenario clock, seconds.
    pub timestamp: f64,
    pub payload: Payload,
}

impl Observation {
    pub fn new(timestamp: f64, payload: Payload) -> Self {
        Observation { timestamp, payload }
    }

    pub fn sensor(&self) -> Sensor {
        self.payload.sensor()
    }
}

/// How per-observation likelihoods are merged before fusion with the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    /// Normalized sum of the likelihoods, then multiplied with the prior.
    #[default]
    Sum,
    /// Elementwise product of prior and all likelihoods.
    Product,
}

impl std::str::FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(CombineMode::Sum),
            "product" => Ok(CombineMode::Product),
            other => Err(Error::Parse(format!("combine mode must be `sum` or `product`, got `{other}`"))),
        }
    }
}

/// Noise models used for the three BSSD visibility cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BssdModels {
    /// Both satellites LOS.
    pub los_los: NoiseModel,
    /// Minuend NLOS, subtrahend LOS (positive residual mean).
    pub nlos_los: NoiseModel,
    /// Minuend LOS, subtrahend NLOS (negative residual mean).
    pub los_nlos: NoiseModel,
}

impl BssdModels {
    /// Routes the first three mixture components to the three cases. Further
    /// components (outliers) are not used for updates.
    pub fn from_gmm(gmm: &GmmModel) -> Result<Self> {
        if gmm.components.len() < 3 {
            return Err(Error::InvalidModel(format!(
                "BSSD routing needs >= 3 mixture components, got {}",
                gmm.components.len()
            )));
        }
        let c = &gmm.components;
        Ok(BssdModels {
            los_los: NoiseModel::Gaussian(c[0].as_gaussian()),
            nlos_los: NoiseModel::Gaussian(c[1].as_gaussian()),
            los_nlos: NoiseModel::Gaussian(c[2].as_gaussian()),
        })
    }

    /// Same zero-mean Gaussian for every case.
    pub fn gaussian(std: f64) -> Result<Self> {
        let g = NoiseModel::gaussian(0.0, std)?;
        Ok(BssdModels { los_los: g.clone(), nlos_los: g.clone(), los_nlos: g })
    }

    /// Model for the pair `minuend - subtrahend`; `None` when both are NLOS.
    pub fn select(&self, minuend: Visibility, subtrahend: Visibility) -> Option<&NoiseModel> {
        match (minuend, subtrahend) {
            (Visibility::Los, Visibility::Los) => Some(&self.los_los),
            (Visibility::Nlos, Visibility::Los) => Some(&self.nlos_los),
            (Visibility::Los, Visibility::Nlos) => Some(&self.los_nlos),
            (Visibility::Nlos, Visibility::Nlos) => None,
        }
    }
}

/// Noise models for every observation type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModels {
    pub range: NoiseModel,
    pub range_difference: NoiseModel,
    pub angle: NoiseModel,
    pub bssd: BssdModels,
}

impl MeasurementModels {
    /// UWB ranging with a 0.9 / 0.1 split between the calibrated LOS error
    /// and a wide outlier Gaussian, BSSD routed through the reference GMM.
    pub fn reference() -> Self {
        let outlier = NoiseModel::gaussian(0.0, 300f64.sqrt()).expect("valid");
        let los = NoiseModel::gaussian(0.05, 0.31).expect("valid");
        let diff = NoiseModel::gaussian(0.0, 0.31 * 2f64.sqrt()).expect("valid");
        MeasurementModels {
            range: NoiseModel::mixture(0.9, los, outlier.clone()).expect("valid"),
            range_difference: NoiseModel::mixture(0.9, diff, outlier).expect("valid"),
            angle: NoiseModel::gaussian(0.0, 0.05).expect("valid"),
            bssd: BssdModels::from_gmm(&GmmModel::bssd_reference()).expect("valid"),
        }
    }
}

/// Anchors and other terrestrial reference points by id.
pub type ReferenceSet = BTreeMap<String, ReferencePoint>;

fn lookup<'a>(refs: &'a ReferenceSet, id: &str) -> Result<&'a ReferencePoint> {
    refs.get(id).ok_or_else(|| Error::UnknownReference(id.to_string()))
}

/// Likelihood assigned to cells where a bearing is undefined: the uniform
/// density over a full turn.
pub const UNDEFINED_BEARING_LIKELIHOOD: f64 = 1.0 / (2.0 * PI);

fn sample_density(model: &NoiseModel, innovation: Vec<f64>) -> Vec<f64> {
    let undefined: Vec<usize> = (0..innovation.len()).filter(|&i| innovation[i].is_nan()).collect();
    let mut out = innovation;
    model.density_in_place(&mut out);
    for i in undefined {
        out[i] = UNDEFINED_BEARING_LIKELIHOOD;
    }
    out
}

pub fn range_likelihood(grid: &GridSpec, anchor: &ReferencePoint, range: f64, model: &NoiseModel) -> Vec<f64> {
    sample_density(model, innovations(range, &gamma_distance(anchor, grid), false))
}

pub fn tdoa_likelihood(
    grid: &GridSpec,
    a: &ReferencePoint,
    b: &ReferencePoint,
    difference: f64,
    model: &NoiseModel,
) -> Result<Vec<f64>> {
    Ok(sample_density(model, innovations(difference, &gamma_hyperbolic(a, b, grid)?, false)))
}

pub fn aoa_likelihood(grid: &GridSpec, anchor: &ReferencePoint, angle: f64, model: &NoiseModel) -> Vec<f64> {
    sample_density(model, innovations(angle, &gamma_angle(anchor, grid), true))
}

/// Full-set BSSD likelihoods: one array per ordered satellite pair that is
/// not NLOS-NLOS.
pub fn bssd_likelihoods(grid: &GridSpec, satellites: &[SatelliteRange], models: &BssdModels) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    visit_bssd(grid, satellites, models, &mut |l| {
        out.push(l.to_vec());
        Ok(())
    })?;
    Ok(out)
}

type Visitor<'a> = dyn FnMut(&[f64]) -> Result<()> + 'a;

/// Streams the BSSD pair likelihoods through one scratch buffer.
fn visit_bssd(grid: &GridSpec, satellites: &[SatelliteRange], models: &BssdModels, f: &mut Visitor) -> Result<()> {
    if satellites.len() < 2 {
        return Err(Error::InsufficientSatellites(satellites.len()));
    }
    for (a, sa) in satellites.iter().enumerate() {
        for sb in &satellites[a + 1..] {
            if sa.position == sb.position {
                return Err(Error::CoincidentReferences(sa.sat_id.clone(), sb.sat_id.clone()));
            }
        }
    }
    let positions: Vec<Position> = grid.positions().collect();
    let ranges: Vec<Vec<f64>> = satellites
        .iter()
        .map(|s| positions.iter().map(|x| distance(&s.position, x)).collect())
        .collect();
    let mut scratch = vec![0.0; positions.len()];
    for (a, sa) in satellites.iter().enumerate() {
        for (b, sb) in satellites.iter().enumerate() {
            if a == b {
                continue;
            }
            let Some(model) = models.select(sa.visibility, sb.visibility) else {
                continue;
            };
            let observed = sa.pseudorange - sb.pseudorange;
            for ((v, da), db) in scratch.iter_mut().zip(&ranges[a]).zip(&ranges[b]) {
                *v = observed - (da - db);
            }
            model.density_in_place(&mut scratch);
            f(&scratch)?;
        }
    }
    Ok(())
}

/// Feeds every likelihood array of one observation to `f`.
pub(crate) fn visit_likelihoods(
    grid: &GridSpec,
    payload: &Payload,
    refs: &ReferenceSet,
    models: &MeasurementModels,
    f: &mut Visitor,
) -> Result<()> {
    match payload {
        Payload::GnssPseudoranges { satellites } => visit_bssd(grid, satellites, &models.bssd, f),
        other => {
            for l in observation_likelihoods(grid, other, refs, models)? {
                f(&l)?;
            }
            Ok(())
        }
    }
}

pub fn observation_likelihoods(
    grid: &GridSpec,
    payload: &Payload,
    refs: &ReferenceSet,
    models: &MeasurementModels,
) -> Result<Vec<Vec<f64>>> {
    Ok(match payload {
        Payload::Range { anchor_id, range } => {
            vec![range_likelihood(grid, lookup(refs, anchor_id)?, *range, &models.range)]
        }
        Payload::RangeDifference { ref_a, ref_b, difference } => vec![tdoa_likelihood(
            grid,
            lookup(refs, ref_a)?,
            lookup(refs, ref_b)?,
            *difference,
            &models.range_difference,
        )?],
        Payload::Angle { anchor_id, angle } => {
            vec![aoa_likelihood(grid, lookup(refs, anchor_id)?, *angle, &models.angle)]
        }
        Payload::GnssPseudoranges { satellites } => bssd_likelihoods(grid, satellites, &models.bssd)?,
        Payload::Odometry { .. } => Vec::new(),
    })
}

/// Fuses likelihood arrays with the prior and normalizes.
///
/// An empty list returns the prior unchanged.
pub fn combine(prior: &LikelihoodField, likelihoods: &[Vec<f64>], mode: CombineMode) -> Result<LikelihoodField> {
    let mut acc = Accumulator::new(prior, mode);
    for l in likelihoods {
        acc.add(l)?;
    }
    acc.finish()
}

/// Incremental form of [`combine`]: likelihood arrays are folded in one at a
/// time so they need not be held together.
pub struct Accumulator<'a> {
    prior: &'a LikelihoodField,
    mode: CombineMode,
    /// Running sum of likelihoods, or the running product with the prior.
    work: Option<Vec<f64>>,
}

impl<'a> Accumulator<'a> {
    pub fn new(prior: &'a LikelihoodField, mode: CombineMode) -> Self {
        Accumulator { prior, mode, work: None }
    }

    pub fn add(&mut self, l: &[f64]) -> Result<()> {
        let n = self.prior.spec().len();
        if l.len() != n {
            return Err(Error::SizeMismatch { expected: n, got: l.len() });
        }
        match self.mode {
            CombineMode::Sum => {
                let joint = self.work.get_or_insert_with(|| vec![0.0; n]);
                joint.iter_mut().zip(l).for_each(|(j, v)| *j += v);
            }
            CombineMode::Product => {
                let mass = self.work.get_or_insert_with(|| self.prior.mass().to_vec());
                mass.iter_mut().zip(l).for_each(|(p, v)| *p *= v);
                // keep the running product away from underflow
                let max = mass.iter().cloned().fold(0.0, f64::max);
                if !(max > 0.0) || !max.is_finite() {
                    return Err(Error::DegenerateField);
                }
                mass.iter_mut().for_each(|p| *p /= max);
            }
        }
        Ok(())
    }

    /// Posterior; the prior itself when nothing was added.
    pub fn finish(self) -> Result<LikelihoodField> {
        let Some(work) = self.work else {
            return Ok(self.prior.clone());
        };
        let mut out = self.prior.clone();
        match self.mode {
            CombineMode::Sum => {
                let total: f64 = work.iter().sum();
                if !(total > 0.0) || !total.is_finite() {
                    return Err(Error::DegenerateField);
                }
                out.mass_mut().iter_mut().zip(&work).for_each(|(p, j)| *p *= j / total);
            }
            CombineMode::Product => out.mass_mut().copy_from_slice(&work),
        }
        out.floor_and_normalize()?;
        Ok(out)
    }
}

pub fn update_range(
    prior: &LikelihoodField,
    anchor: &ReferencePoint,
    range: f64,
    model: &NoiseModel,
    mode: CombineMode,
) -> Result<LikelihoodField> {
    combine(prior, &[range_likelihood(prior.spec(), anchor, range, model)], mode)
}

pub fn update_tdoa(
    prior: &LikelihoodField,
    a: &ReferencePoint,
    b: &ReferencePoint,
    difference: f64,
    model: &NoiseModel,
    mode: CombineMode,
) -> Result<LikelihoodField> {
    combine(prior, &[tdoa_likelihood(prior.spec(), a, b, difference, model)?], mode)
}

pub fn update_aoa(
    prior: &LikelihoodField,
    anchor: &ReferencePoint,
    angle: f64,
    model: &NoiseModel,
    mode: CombineMode,
) -> Result<LikelihoodField> {
    combine(prior, &[aoa_likelihood(prior.spec(), anchor, angle, model)], mode)
}

/// BSSD update over all ordered satellite pairs. Fewer than two satellites
/// yields [`Error::InsufficientSatellites`]; callers keep the prior.
pub fn update_gnss_bssd(
    prior: &LikelihoodField,
    satellites: &[SatelliteRange],
    models: &BssdModels,
    mode: CombineMode,
) -> Result<LikelihoodField> {
    combine(prior, &bssd_likelihoods(prior.spec(), satellites, models)?, mode)
}

/// Dispatches on the payload type. Odometry leaves the field untouched.
pub fn update(
    prior: &LikelihoodField,
    payload: &Payload,
    refs: &ReferenceSet,
    models: &MeasurementModels,
    mode: CombineMode,
) -> Result<LikelihoodField> {
    combine(prior, &observation_likelihoods(prior.spec(), payload, refs, models)?, mode)
}
