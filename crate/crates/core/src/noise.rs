//! Density models used to turn innovations into likelihoods, and an EM fit
//! of one-dimensional Gaussian mixtures to residual samples.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[inline]
fn normal_pdf(y: f64, mean: f64, std: f64) -> f64 {
    let z = (y - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
}

#[inline]
fn normal_ln_pdf(y: f64, mean: f64, variance: f64) -> f64 {
    let d = y - mean;
    -0.5 * d * d / variance - 0.5 * variance.ln() - LN_SQRT_2PI
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel {
    pub mean: f64,
    pub std: f64,
}

impl GaussianModel {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        let m = GaussianModel { mean, std };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if !(self.std > 0.0) || !self.std.is_finite() || !self.mean.is_finite() {
            return Err(Error::InvalidModel(format!("gaussian needs finite mean and std > 0, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl GmmComponent {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn as_gaussian(&self) -> GaussianModel {
        GaussianModel { mean: self.mean, std: self.std() }
    }
}

/// How the third column of a published mixture table is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadUnit {
    #[default]
    Variance,
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
}

impl GmmModel {
    /// Validates that weights sum to one and variances are positive.
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        let m = GmmModel { components };
        m.validate()?;
        Ok(m)
    }

    /// Builds a mixture from `(weight, mean, spread)` rows, rescaling the
    /// weights to unit sum.
    pub fn from_rows(rows: &[(f64, f64, f64)], unit: SpreadUnit) -> Result<Self> {
        let total: f64 = rows.iter().map(|r| r.0).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidModel("mixture weights must have positive sum".into()));
        }
        let components = rows
            .iter()
            .map(|&(w, mean, spread)| GmmComponent {
                weight: w / total,
                mean,
                variance: match unit {
                    SpreadUnit::Variance => spread,
                    SpreadUnit::StdDev => spread * spread,
                },
            })
            .collect();
        Self::new(components)
    }

    /// Between-satellite single-difference residual mixture estimated on the
    /// static testbed data (four components, spread column in m^2). The
    /// published weights sum to 0.91 and are rescaled here.
    pub fn bssd_reference() -> Self {
        Self::from_rows(&BSSD_REFERENCE_ROWS, SpreadUnit::Variance).expect("reference table is valid")
    }

    fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidModel("mixture needs at least one component".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!("mixture weights sum to {total}, expected 1")));
        }
        for c in &self.components {
            if !(c.variance > 0.0) || !c.variance.is_finite() || !(c.weight >= 0.0) || !c.mean.is_finite() {
                return Err(Error::InvalidModel(format!("bad mixture component {c:?}")));
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.variance + (c.mean - m).powi(2)))
            .sum()
    }

    fn log_likelihood(&self, data: &[f64]) -> f64 {
        data.iter()
            .map(|&y| log_sum_exp(self.components.iter().map(|c| c.weight.ln() + normal_ln_pdf(y, c.mean, c.variance))))
            .sum()
    }
}

/// `(weight, mean, variance)` rows of the published BSSD residual mixture.
pub const BSSD_REFERENCE_ROWS: [(f64, f64, f64); 4] = [
    (0.42, 0.25, 13.06),
    (0.24, 13.09, 20.37),
    (0.24, -12.61, 21.05),
    (0.01, -0.3, 142.89),
];

/// Convex combination `ratio * primary + (1 - ratio) * secondary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureLikelihoodModel {
    pub ratio: f64,
    pub primary: Box<NoiseModel>,
    pub secondary: Box<NoiseModel>,
}

impl MixtureLikelihoodModel {
    pub fn new(ratio: f64, primary: NoiseModel, secondary: NoiseModel) -> Result<Self> {
        let m = MixtureLikelihoodModel { ratio, primary: Box::new(primary), secondary: Box::new(secondary) };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::InvalidModel(format!("mixture ratio must lie in [0, 1], got {}", self.ratio)));
        }
        self.primary.validate()?;
        self.secondary.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian(GaussianModel),
    Gmm(GmmModel),
    Uniform { low: f64, high: f64 },
    Mixture(MixtureLikelihoodModel),
}

impl NoiseModel {
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        Ok(NoiseModel::Gaussian(GaussianModel::new(mean, std)?))
    }

    pub fn mixture(ratio: f64, primary: NoiseModel, secondary: NoiseModel) -> Result<Self> {
        Ok(NoiseModel::Mixture(MixtureLikelihoodModel::new(ratio, primary, secondary)?))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::Gaussian(g) => g.validate(),
            NoiseModel::Gmm(g) => g.validate(),
            NoiseModel::Uniform { low, high } => {
                if !(low < high) || !low.is_finite() || !high.is_finite() {
                    return Err(Error::InvalidModel(format!("uniform needs low < high, got [{low}, {high}]")));
                }
                Ok(())
            }
            NoiseModel::Mixture(m) => m.validate(),
        }
    }

    /// Probability density at `y`.
    pub fn density(&self, y: f64) -> f64 {
        match self {
            NoiseModel::Gaussian(g) => normal_pdf(y, g.mean, g.std),
            NoiseModel::Gmm(g) => g
                .components
                .iter()
                .map(|c| c.weight * normal_pdf(y, c.mean, c.std()))
                .sum(),
            NoiseModel::Uniform { low, high } => {
                if y >= *low && y <= *high {
                    1.0 / (high - low)
                } else {
                    0.0
                }
            }
            NoiseModel::Mixture(m) => m.ratio * m.primary.density(y) + (1.0 - m.ratio) * m.secondary.density(y),
        }
    }

    /// Replaces every innovation in `values` by its density. Equivalent to
    /// mapping [`NoiseModel::density`], with the per-model constants hoisted.
    pub fn density_in_place(&self, values: &mut [f64]) {
        match self {
            NoiseModel::Gaussian(g) => {
                let inv = 1.0 / g.std;
                let norm = inv / (2.0 * PI).sqrt();
                for v in values.iter_mut() {
                    let z = (*v - g.mean) * inv;
                    *v = norm * (-0.5 * z * z).exp();
                }
            }
            NoiseModel::Gmm(g) => {
                let ys = values.to_vec();
                values.iter_mut().for_each(|v| *v = 0.0);
                for c in &g.components {
                    let inv = 1.0 / c.std();
                    let norm = c.weight * inv / (2.0 * PI).sqrt();
                    for (v, y) in values.iter_mut().zip(&ys) {
                        let z = (y - c.mean) * inv;
                        *v += norm * (-0.5 * z * z).exp();
                    }
                }
            }
            NoiseModel::Uniform { .. } => values.iter_mut().for_each(|v| *v = self.density(*v)),
            NoiseModel::Mixture(m) => {
                let mut secondary = values.to_vec();
                m.primary.density_in_place(values);
                m.secondary.density_in_place(&mut secondary);
                for (v, s) in values.iter_mut().zip(&secondary) {
                    *v = m.ratio * *v + (1.0 - m.ratio) * s;
                }
            }
        }
    }

    /// Draws one value from the model.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseModel::Gaussian(g) => g.mean + g.std * standard_normal(rng),
            NoiseModel::Gmm(g) => {
                let c = pick_component(&g.components, rng);
                c.mean + c.std() * standard_normal(rng)
            }
            NoiseModel::Uniform { low, high } => rng.random_range(*low..*high),
            NoiseModel::Mixture(m) => {
                if rng.random::<f64>() < m.ratio {
                    m.primary.sample(rng)
                } else {
                    m.secondary.sample(rng)
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            NoiseModel::Gaussian(g) => g.mean,
            NoiseModel::Gmm(g) => g.mean(),
            NoiseModel::Uniform { low, high } => 0.5 * (low + high),
            NoiseModel::Mixture(m) => m.ratio * m.primary.mean() + (1.0 - m.ratio) * m.secondary.mean(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            NoiseModel::Gaussian(g) => g.std * g.std,
            NoiseModel::Gmm(g) => g.variance(),
            NoiseModel::Uniform { low, high } => (high - low).powi(2) / 12.0,
            NoiseModel::Mixture(m) => {
                let mu = self.mean();
                let (p, s) = (&m.primary, &m.secondary);
                m.ratio * (p.variance() + (p.mean() - mu).powi(2))
                    + (1.0 - m.ratio) * (s.variance() + (s.mean() - mu).powi(2))
            }
        }
    }

    /// Interval carrying all but a negligible tail of the density.
    pub fn support(&self, sigmas: f64) -> (f64, f64) {
        match self {
            NoiseModel::Gaussian(g) => (g.mean - sigmas * g.std, g.mean + sigmas * g.std),
            NoiseModel::Gmm(g) => g.components.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                (lo.min(c.mean - sigmas * c.std()), hi.max(c.mean + sigmas * c.std()))
            }),
            NoiseModel::Uniform { low, high } => (*low, *high),
            NoiseModel::Mixture(m) => {
                let (a, b) = m.primary.support(sigmas);
                let (c, d) = m.secondary.support(sigmas);
                (a.min(c), b.max(d))
            }
        }
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

fn pick_component<'a, R: Rng + ?Sized>(components: &'a [GmmComponent], rng: &mut R) -> &'a GmmComponent {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for c in components {
        acc += c.weight;
        if u < acc {
            return c;
        }
    }
    components.last().expect("non-empty mixture")
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Outcome of an EM calibration run.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total data log-likelihood after each EM iteration.
    pub log_likelihood: Vec<f64>,
    pub restarts: usize,
    pub converged: bool,
}

pub const EM_TOLERANCE: f64 = 1e-6;
pub const EM_MAX_ITERATIONS: usize = 500;
pub const EM_MAX_RESTARTS: usize = 5;

/// Fits a `components`-term Gaussian mixture to `residuals` by EM with
/// k-means++ seeding.
///
/// Convergence is declared when the mean per-sample log-likelihood changes by
/// less than [`EM_TOLERANCE`]. A collapsing component triggers a reseeded
/// restart; after [`EM_MAX_RESTARTS`] the fit fails.
pub fn fit_gmm(residuals: &[f64], components: usize, seed: u64) -> Result<GmmFit> {
    if components == 0 {
        return Err(Error::CalibrationFailure("component count must be positive".into()));
    }
    if residuals.len() < 10 * components {
        return Err(Error::CalibrationFailure(format!(
            "need at least {} residuals for {components} components, got {}",
            10 * components,
            residuals.len()
        )));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::CalibrationFailure("residuals must be finite".into()));
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let spread = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let min_variance = (spread * 1e-8).max(1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for restart in 0..=EM_MAX_RESTARTS {
        if spread <= 1e-12 {
            break;
        }
        // two starts per attempt; the higher final likelihood wins
        let mut best: Option<GmmFit> = None;
        for background in [false, true] {
            let init = seed_components(residuals, components, spread, background, &mut rng);
            let Some((model, trace, converged)) = run_em(residuals, init, min_variance) else {
                log::debug!("EM start collapsed (background seed: {background})");
                continue;
            };
            let better = best.as_ref().is_none_or(|b| trace.last() > b.log_likelihood.last());
            if better {
                best = Some(GmmFit { model, log_likelihood: trace, restarts: restart, converged });
            }
        }
        match best {
            Some(fit) => return Ok(fit),
            None => log::debug!("EM restart {} after component collapse", restart + 1),
        }
    }
    Err(Error::CalibrationFailure(format!(
        "component variance collapsed in {} attempts",
        EM_MAX_RESTARTS + 1
    )))
}

/// k-means++ seeds followed by one assignment pass. With `background`, the
/// last component instead starts as a broad, light component covering the
/// whole sample, which lets EM find wide low-weight outlier modes.
fn seed_components<R: Rng>(data: &[f64], k: usize, spread: f64, background: bool, rng: &mut R) -> Vec<GmmComponent> {
    let background = background && k >= 2;
    let k = if background { k - 1 } else { k };
    let mut centers = vec![data[rng.random_range(0..data.len())]];
    let mut d2: Vec<f64> = data.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            data[pick]
        } else {
            data[rng.random_range(0..data.len())]
        };
        centers.push(next);
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min((x - next).powi(2));
        }
    }
    // one assignment pass gives each seed a local variance and weight
    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64); k];
    for x in data {
        let (j, _) = centers
            .iter()
            .enumerate()
            .map(|(j, c)| (j, (x - c).abs()))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        sums[j].0 += 1.0;
        sums[j].1 += x;
        sums[j].2 += x * x;
    }
    let n = data.len() as f64;
    let mut comps: Vec<GmmComponent> = centers
        .iter()
        .zip(&sums)
        .map(|(c, (cnt, s, s2))| {
            if *cnt >= 2.0 {
                let m = s / cnt;
                let v = (s2 / cnt - m * m).max(spread * 1e-3);
                GmmComponent { weight: cnt / n, mean: m, variance: v }
            } else {
                GmmComponent { weight: 1.0 / n, mean: *c, variance: spread }
            }
        })
        .collect();
    if background {
        let mean = data.iter().sum::<f64>() / n;
        comps.iter_mut().for_each(|c| c.weight *= 0.95);
        comps.push(GmmComponent { weight: 0.05, mean, variance: spread });
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    comps.iter_mut().for_each(|c| c.weight /= total);
    comps
}

fn run_em(data: &[f64], init: Vec<GmmComponent>, min_variance: f64) -> Option<(GmmModel, Vec<f64>, bool)> {
    let n = data.len() as f64;
    let k = init.len();
    let mut model = GmmModel { components: init };
    let total_w: f64 = model.components.iter().map(|c| c.weight).sum();
    model.components.iter_mut().for_each(|c| c.weight /= total_w);

    let mut trace = Vec::new();
    let mut resp = vec![0.0; k];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITERATIONS {
        let mut nk = vec![0.0; k];
        let mut sx = vec![0.0; k];
        let mut sxx = vec![0.0; k];
        let mut ll = 0.0;
        // per component: mean, 1 / (2 var), log weight + log normalizer
        let consts: Vec<(f64, f64, f64)> = model
            .components
            .iter()
            .map(|c| (c.mean, 0.5 / c.variance, c.weight.ln() - 0.5 * c.variance.ln() - LN_SQRT_2PI))
            .collect();
        for &x in data {
            let mut max = f64::NEG_INFINITY;
            for (r, (m, h, c0)) in resp.iter_mut().zip(&consts) {
                *r = c0 - (x - m) * (x - m) * h;
                max = max.max(*r);
            }
            let mut sum = 0.0;
            for r in resp.iter_mut() {
                *r = (*r - max).exp();
                sum += *r;
            }
            ll += max + sum.ln();
            for j in 0..k {
                let r = resp[j] / sum;
                nk[j] += r;
                sx[j] += r * x;
                sxx[j] += r * x * x;
            }
        }
        trace.push(ll);
        for j in 0..k {
            if nk[j] < 1e-9 {
                return None;
            }
            let mean = sx[j] / nk[j];
            let var = sxx[j] / nk[j] - mean * mean;
            if !(var > min_variance) {
                return None;
            }
            model.components[j] = GmmComponent { weight: nk[j] / n, mean, variance: var };
        }
        if (ll - prev).abs() < EM_TOLERANCE {
            let ll = model.log_likelihood(data);
            trace.push(ll);
            return Some((model, trace, true));
        }
        prev = ll;
    }
    let ll = model.log_likelihood(data);
    trace.push(ll);
    Some((model, trace, false))
}
