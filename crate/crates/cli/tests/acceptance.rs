//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use gridfuse_core::engine::{Admission, RejectReason};
use gridfuse_core::geometry::SPEED_OF_LIGHT;
use gridfuse_core::grid::MASS_FLOOR;
use gridfuse_core::io;
use gridfuse_core::metrics::{error_series, summarize};
use gridfuse_core::noise::{GmmModel, NoiseModel};
use gridfuse_core::prediction::{predict, MotionInput, MotionModel, TransitionWorkspace};
use gridfuse_core::sim::{self, bssd_residuals, generate, PairFilter, ScenarioConfig};
use gridfuse_core::update::{update, BssdModels, MeasurementModels, ReferenceSet, SatelliteRange};
use gridfuse_core::{
    CombineMode, FilterConfig, GridFilter, GridIndex, GridSpec, LikelihoodField, Observation, Payload,
    ReferencePoint, Sensor, Visibility,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn random_models(rng: &mut ChaCha8Rng) -> MeasurementModels {
    let s = rng.random_range(0.5..3.0);
    MeasurementModels {
        range: NoiseModel::mixture(
            0.9,
            NoiseModel::gaussian(rng.random_range(-0.2..0.2), s).unwrap(),
            NoiseModel::gaussian(0.0, 10.0).unwrap(),
        )
        .unwrap(),
        range_difference: NoiseModel::gaussian(0.0, rng.random_range(0.5..3.0)).unwrap(),
        angle: NoiseModel::gaussian(0.0, rng.random_range(0.05..0.5)).unwrap(),
        bssd: BssdModels::from_gmm(&GmmModel::bssd_reference()).unwrap(),
    }
}

fn random_anchors(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<ReferencePoint> {
    (0..n)
        .map(|k| {
            ReferencePoint::anchor(
                format!("A{k}"),
                [rng.random_range(-5.0..span + 5.0), rng.random_range(-5.0..span + 5.0), rng.random_range(0.0..3.0)],
            )
        })
        .collect()
}

fn sky(rng: &mut ChaCha8Rng, n: usize) -> Vec<(String, [f64; 3])> {
    (0..n)
        .map(|k| {
            let az = 2.0 * PI * k as f64 / n as f64 + rng.random_range(0.0..0.5);
            let el: f64 = rng.random_range(0.3..1.3);
            let r = 2.02e7 / el.sin();
            (format!("S{k}"), [r * el.cos() * az.cos(), r * el.cos() * az.sin(), 2.02e7])
        })
        .collect()
}

fn random_payload(rng: &mut ChaCha8Rng, anchors: &[ReferencePoint], truth: [f64; 3]) -> Payload {
    let d = |a: &ReferencePoint| gridfuse_core::grid::distance(&a.position, &truth);
    match rng.random_range(0..4) {
        0 => {
            let a = &anchors[rng.random_range(0..anchors.len())];
            Payload::Range { anchor_id: a.id.clone(), range: d(a) + rng.random_range(-1.0..1.0) }
        }
        1 => {
            let i = rng.random_range(0..anchors.len());
            let j = (i + 1 + rng.random_range(0..anchors.len() - 1)) % anchors.len();
            Payload::RangeDifference {
                ref_a: anchors[i].id.clone(),
                ref_b: anchors[j].id.clone(),
                difference: d(&anchors[i]) - d(&anchors[j]) + rng.random_range(-1.0..1.0),
            }
        }
        2 => {
            let a = &anchors[rng.random_range(0..anchors.len())];
            let angle = (a.position[1] - truth[1]).atan2(a.position[0] - truth[0]) + rng.random_range(-0.2..0.2);
            Payload::Angle { anchor_id: a.id.clone(), angle }
        }
        _ => {
            let clock = rng.random_range(-1e-3..1e-3) * SPEED_OF_LIGHT;
            let count = rng.random_range(2..7);
            let satellites = sky(rng, count)
                .into_iter()
                .map(|(id, p)| {
                    let vis = if rng.random::<f64>() < 0.7 { Visibility::Los } else { Visibility::Nlos };
                    SatelliteRange {
                        sat_id: id,
                        position: p,
                        pseudorange: gridfuse_core::grid::distance(&p, &truth) + clock + rng.random_range(-5.0..5.0),
                        visibility: vis,
                    }
                })
                .collect();
            Payload::GnssPseudoranges { satellites }
        }
    }
}

/// 1000 randomized filter steps on a 30 x 30 grid keep the posterior normalized.
fn c1_normalization() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = GridSpec::planar([0.0, 0.0, 1.0], 1.0, 30, 30).map_err(e2s)?;
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for mode in [CombineMode::Sum, CombineMode::Product] {
        let anchors = random_anchors(&mut rng, 6, 30.0);
        let mut cfg = FilterConfig::new(grid, random_models(&mut rng), anchors.clone());
        cfg.combine = mode;
        let mut f = GridFilter::new(cfg).map_err(e2s)?;
        let mut t = 0.0;
        for _ in 0..500 {
            t += rng.random_range(0.0..0.8);
            let truth = [rng.random_range(5.0..25.0), rng.random_range(5.0..25.0), 1.0];
            let payload = if rng.random::<f64>() < 0.2 {
                Payload::Odometry { speed: rng.random_range(0.0..3.0), heading: rng.random_range(-PI..PI) }
            } else {
                random_payload(&mut rng, &anchors, truth)
            };
            f.step(&Observation::new(t, payload)).map_err(e2s)?;
            worst = worst.max((f.field().total() - 1.0).abs());
            steps += 1;
        }
    }
    ensure(steps == 1000, "step count")?;
    ensure(worst < 1e-9, format!("max |sum p - 1| = {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{steps} steps, max |sum p - 1| = {worst:.1e}"))
}

fn gauss(y: f64, mean: f64, std: f64) -> f64 {
    let z = (y - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
}

/// Independent per-cell likelihood, written against the raw model parameters.
fn naive_density(model: &NoiseModel, y: f64) -> f64 {
    match model {
        NoiseModel::Gaussian(g) => gauss(y, g.mean, g.std),
        NoiseModel::Gmm(g) => g.components.iter().map(|c| c.weight * gauss(y, c.mean, c.variance.sqrt())).sum(),
        NoiseModel::Uniform { low, high } => {
            if y >= *low && y <= *high {
                1.0 / (high - low)
            } else {
                0.0
            }
        }
        NoiseModel::Mixture(m) => m.ratio * naive_density(&m.primary, y) + (1.0 - m.ratio) * naive_density(&m.secondary, y),
    }
}

fn naive_posterior(
    grid: &GridSpec,
    prior: &[f64],
    payload: &Payload,
    anchors: &BTreeMap<String, ReferencePoint>,
    models: &MeasurementModels,
) -> Vec<f64> {
    let mut post = Vec::with_capacity(prior.len());
    for z in 0..grid.extent[2] {
        for y in 0..grid.extent[1] {
            for x in 0..grid.extent[0] {
                let p = [
                    grid.origin[0] + x as f64 * grid.cell_size,
                    grid.origin[1] + y as f64 * grid.cell_size,
                    grid.origin[2] + z as f64 * grid.cell_size,
                ];
                let dist = |q: &[f64; 3]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                let l = match payload {
                    Payload::Range { anchor_id, range } => {
                        naive_density(&models.range, range - dist(&anchors[anchor_id].position))
                    }
                    Payload::RangeDifference { ref_a, ref_b, difference } => naive_density(
                        &models.range_difference,
                        difference - (dist(&anchors[ref_a].position) - dist(&anchors[ref_b].position)),
                    ),
                    Payload::Angle { anchor_id, angle } => {
                        let a = anchors[anchor_id].position;
                        if p[0] == a[0] && p[1] == a[1] {
                            1.0 / (2.0 * PI)
                        } else {
                            let mut d = angle - (a[1] - p[1]).atan2(a[0] - p[0]);
                            while d > PI {
                                d -= 2.0 * PI;
                            }
                            while d <= -PI {
                                d += 2.0 * PI;
                            }
                            naive_density(&models.angle, d)
                        }
                    }
                    Payload::GnssPseudoranges { satellites } => {
                        let mut sum = 0.0;
                        for a in satellites {
                            for b in satellites {
                                if a.sat_id == b.sat_id {
                                    continue;
                                }
                                let m = match (a.visibility, b.visibility) {
                                    (Visibility::Los, Visibility::Los) => &models.bssd.los_los,
                                    (Visibility::Nlos, Visibility::Los) => &models.bssd.nlos_los,
                                    (Visibility::Los, Visibility::Nlos) => &models.bssd.los_nlos,
                                    (Visibility::Nlos, Visibility::Nlos) => continue,
                                };
                                let y = (a.pseudorange - b.pseudorange) - (dist(&a.position) - dist(&b.position));
                                sum += naive_density(m, y);
                            }
                        }
                        sum
                    }
                    Payload::Odometry { .. } => 1.0,
                };
                post.push(l);
            }
        }
    }
    // eta-scaled likelihood sum times prior, floored, then normalized
    let eta = 1.0 / post.iter().sum::<f64>();
    let post: Vec<f64> = post.iter().zip(prior).map(|(l, p)| (p * (l * eta)).max(MASS_FLOOR)).collect();
    let total: f64 = post.iter().sum();
    post.into_iter().map(|v| v / total).collect()
}

/// 100 random single-observation updates against a naive per-cell loop.
fn c2_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (nx, ny) = (rng.random_range(5..=20), rng.random_range(5..=20));
        let cell = rng.random_range(0.3..1.5);
        let grid = GridSpec::planar([rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 1.0], cell, nx, ny)
            .map_err(e2s)?;
        let span = nx.max(ny) as f64 * cell;
        let anchors = random_anchors(&mut rng, 4, span);
        let refs: ReferenceSet = anchors.iter().map(|a| (a.id.clone(), a.clone())).collect();
        let models = random_models(&mut rng);
        let prior_mass: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.01..1.0)).collect();
        let prior = LikelihoodField::from_mass(grid, prior_mass.clone()).map_err(e2s)?.normalize().map_err(e2s)?;
        let o = grid.origin;
        let truth = [
            o[0] + rng.random_range(0.0..(nx - 1) as f64 * cell),
            o[1] + rng.random_range(0.0..(ny - 1) as f64 * cell),
            1.0,
        ];
        let mut payload = random_payload(&mut rng, &anchors, truth);
        while matches!(&payload, Payload::GnssPseudoranges { satellites } if satellites.iter().filter(|s| s.visibility == Visibility::Los).count() == 0)
        {
            payload = random_payload(&mut rng, &anchors, truth);
        }
        let got = update(&prior, &payload, &refs, &models, CombineMode::Sum).map_err(e2s)?;
        let want = naive_posterior(&grid, prior.mass(), &payload, &refs, &models);
        for (g, w) in got.mass().iter().zip(&want) {
            let rel = (g - w).abs() / w.abs().max(MASS_FLOOR);
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-12, format!("worst relative deviation {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("100 updates, worst relative deviation {worst:.1e}"))
}

fn cells_apart(grid: &GridSpec, a: GridIndex, b: [f64; 3]) -> f64 {
    let p = grid.position(a);
    ((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2)).sqrt() / grid.cell_size
}

/// Noiseless ranges from 3 anchors, and noiseless BSSD from 4 LOS satellites.
fn c3_noiseless() -> Check {
    let start = Instant::now();
    let grid = GridSpec::centered([0.0, 0.0, 1.5], 0.2, 20.0, 20.0).map_err(e2s)?;
    let truth = [1.37, -2.11, 1.5];
    let anchors = vec![
        ReferencePoint::anchor("A", [-8.0, -7.0, 2.5]),
        ReferencePoint::anchor("B", [9.0, -6.0, 2.0]),
        ReferencePoint::anchor("C", [0.5, 9.5, 3.0]),
    ];
    let refs: ReferenceSet = anchors.iter().map(|a| (a.id.clone(), a.clone())).collect();
    let mut models = MeasurementModels::reference();
    models.range = NoiseModel::gaussian(0.0, 0.1).map_err(e2s)?;
    let mut range_err = Vec::new();
    for mode in [CombineMode::Sum, CombineMode::Product] {
        let mut cfg = FilterConfig::new(grid, models.clone(), anchors.clone());
        cfg.combine = mode;
        let mut f = GridFilter::new(cfg).map_err(e2s)?;
        let epoch: Vec<Observation> = anchors
            .iter()
            .map(|a| {
                Observation::new(
                    0.0,
                    Payload::Range { anchor_id: a.id.clone(), range: gridfuse_core::grid::distance(&a.position, &truth) },
                )
            })
            .collect();
        f.step_epoch(&epoch).map_err(e2s)?;
        let map = gridfuse_core::estimation::map_estimate(f.field()).map_err(e2s)?;
        range_err.push(cells_apart(&grid, map, truth));
    }
    let _ = refs;
    ensure(range_err.iter().all(|d| *d <= 1.0), format!("range MAP off by {range_err:?} cells"))?;

    let sats: Vec<(&str, [f64; 3])> = [(0.3, 1.2), (2.0, 0.8), (3.6, 0.5), (5.0, 1.0)]
        .iter()
        .enumerate()
        .map(|(k, (az, el)): (usize, &(f64, f64))| {
            let r = 2.02e7 / el.sin();
            (["G1", "G2", "G3", "G4"][k], [r * el.cos() * az.cos(), r * el.cos() * az.sin(), 2.02e7])
        })
        .collect();
    let mut f = GridFilter::new(FilterConfig::new(grid, MeasurementModels::reference(), vec![])).map_err(e2s)?;
    for k in 0..3 {
        let clock = 2.9e4 + 3.0 * k as f64;
        let satellites = sats
            .iter()
            .map(|(id, p)| SatelliteRange {
                sat_id: id.to_string(),
                position: *p,
                pseudorange: gridfuse_core::grid::distance(p, &truth) + clock,
                visibility: Visibility::Los,
            })
            .collect();
        f.step(&Observation::new(k as f64, Payload::GnssPseudoranges { satellites })).map_err(e2s)?;
    }
    let map = gridfuse_core::estimation::map_estimate(f.field()).map_err(e2s)?;
    let gnss_err = cells_apart(&grid, map, truth);
    ensure(gnss_err <= 2.0, format!("BSSD MAP off by {gnss_err:.2} cells"))?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!(
        "range MAP {:.2}/{:.2} cells (sum/product), BSSD MAP {gnss_err:.2} cells",
        range_err[0], range_err[1]
    ))
}

struct RunStats {
    mean: f64,
    median: f64,
    gnss: usize,
    uwb: usize,
    elapsed: Duration,
}

fn run_scenario(dynamic: bool, epochs: usize) -> Result<RunStats, String> {
    let start = Instant::now();
    let cfg = ScenarioConfig { epochs, ..Default::default() };
    let s = if dynamic { sim::make_dynamic_scenario(&cfg) } else { sim::make_static_scenario(&cfg) }.map_err(e2s)?;
    let (events, truth) = generate(&s).map_err(e2s)?;
    let report = GridFilter::new(sim::filter_config(&s)).map_err(e2s)?.run(&events).map_err(e2s)?;
    let series = error_series(&report.estimates, &truth);
    ensure(series.unmatched == 0 && series.len() == epochs, "estimate count does not match epochs")?;
    let stats = summarize(&series.errors).map_err(e2s)?;
    let gnss = events.iter().filter(|e| e.sensor() == Sensor::Gnss).count();
    let uwb = events.iter().filter(|e| e.sensor() == Sensor::Uwb).count() / s.anchors.len();
    Ok(RunStats { mean: stats.mean, median: stats.median, gnss, uwb, elapsed: start.elapsed() })
}

fn c4_static(out: &mut Option<RunStats>) -> Check {
    let r = run_scenario(false, 500)?;
    let msg = format!("mean {:.3} m, median {:.3} m in {:.1?}", r.mean, r.median, r.elapsed);
    ensure(r.mean <= 0.8, format!("mean error {:.3} m > 0.8 m", r.mean))?;
    within(r.elapsed, Duration::from_secs(120))?;
    *out = Some(r);
    Ok(msg)
}

fn c5_dynamic(static_run: Option<&RunStats>) -> Check {
    let r = run_scenario(true, 2066)?;
    let ratio = r.gnss as f64 / r.uwb as f64;
    let msg = format!(
        "mean {:.3} m, median {:.3} m, GNSS:UWB {}:{} in {:.1?}",
        r.mean, r.median, r.gnss, r.uwb, r.elapsed
    );
    ensure(((ratio / (1411.0 / 655.0)) - 1.0).abs() < 0.01, format!("epoch ratio {ratio:.4}; {msg}"))?;
    ensure(r.mean <= 2.5, format!("mean {:.3} m > 2.5 m; {msg}", r.mean))?;
    ensure(r.median <= 1.2, format!("median {:.3} m > 1.2 m; {msg}", r.median))?;
    let s = static_run.ok_or("static run unavailable")?;
    ensure(s.median < r.median, format!("static median {:.3} not below dynamic {:.3}", s.median, r.median))?;
    within(r.elapsed, Duration::from_secs(300))?;
    Ok(format!("{msg}; static median {:.3} m", s.median))
}

fn c6_bssd_spread() -> Check {
    let start = Instant::now();
    let cfg = ScenarioConfig { epochs: 6000, odometry_hz: 0.0, seed: 6, ..Default::default() };
    let s = sim::make_static_scenario(&cfg).map_err(e2s)?;
    let (events, truth) = generate(&s).map_err(e2s)?;
    let r = bssd_residuals(&events, &truth, PairFilter::LosOnly);
    ensure(r.len() >= 100_000, format!("only {} pairs", r.len()))?;
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let std = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let expected = 2f64.sqrt() * 7.8;
    ensure((std - expected).abs() <= 0.15, format!("std {std:.3} m vs {expected:.3} m"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("std {std:.3} m over {} pairs (expected {expected:.3})", r.len()))
}

fn run_cli(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gridfuse")).args(args).output().map_err(e2s)?;
    if !out.status.success() {
        return Err(format!("gridfuse {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out)
}

fn c7_calibration(dir: &Path) -> Check {
    let start = Instant::now();
    let generating = GmmModel::bssd_reference();
    let model = NoiseModel::Gmm(generating.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let residuals: Vec<f64> = (0..100_000).map(|_| model.sample(&mut rng)).collect();
    let path = dir.join("residuals.csv");
    io::write_residuals(io::create(&path).map_err(e2s)?, &residuals).map_err(e2s)?;
    let out = dir.join("calib");
    run_cli(&["calibrate", "--residuals", path.to_str().ok_or("path")?, "--components", "4", "--seed", "7", "--out", out.to_str().ok_or("path")?])?;
    let fitted = io::read_gmm(io::open(&out.join("gmm.json")).map_err(e2s)?).map_err(e2s)?;
    // pair each generating component with the closest unused fitted one
    let mut unused: Vec<usize> = (0..fitted.components.len()).collect();
    let mut report = Vec::new();
    for (k, g) in generating.components.iter().enumerate() {
        let score = |j: &usize| {
            let f = &fitted.components[*j];
            (f.mean - g.mean).abs() / g.variance.sqrt() + (f.variance / g.variance).ln().abs()
        };
        let (pos, &j) = unused
            .iter()
            .enumerate()
            .min_by(|a, b| score(a.1).total_cmp(&score(b.1)))
            .ok_or("fewer fitted components than generating")?;
        unused.remove(pos);
        let f = &fitted.components[j];
        ensure(
            (f.weight - g.weight).abs() <= 0.05,
            format!("component {}: weight {:.3} vs {:.3}", k + 1, f.weight, g.weight),
        )?;
        if k < 3 {
            ensure((f.mean - g.mean).abs() <= 1.0, format!("component {}: mean {:.3} vs {:.3}", k + 1, f.mean, g.mean))?;
        }
        report.push(format!("w{:.3}/mu{:.2}", f.weight, f.mean));
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("fitted {}", report.join(", ")))
}

fn local_maxima(field: &[f64], n: usize, frac: f64) -> Vec<usize> {
    let max = field.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::new();
    for y in 0..n {
        for x in 0..n {
            let v = field[x + n * y];
            if v < frac * max {
                continue;
            }
            let mut peak = true;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (tx, ty) = (x as i64 + dx, y as i64 + dy);
                    if (dx, dy) != (0, 0) && tx >= 0 && ty >= 0 && tx < n as i64 && ty < n as i64 && field[tx as usize + n * ty as usize] > v {
                        peak = false;
                    }
                }
            }
            if peak {
                out.push(x + n * y);
            }
        }
    }
    out
}

fn c8_prediction() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cell = 0.2;

    // zero-motion identity on a random posterior
    let g30 = GridSpec::planar([0.0; 3], cell, 30, 30).map_err(e2s)?;
    let mut ws = TransitionWorkspace::new(g30, 2.0).map_err(e2s)?;
    let mass: Vec<f64> = (0..g30.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let post = LikelihoodField::from_mass(g30, mass).map_err(e2s)?.normalize().map_err(e2s)?;
    let still = MotionModel::Odometry(MotionInput { speed: 0.0, heading: None, speed_std: cell / 10.0, heading_std: 0.2, dt: 1.0 });
    let pred = predict(&post, &still, &mut ws).map_err(e2s)?;
    let am = |f: &LikelihoodField| gridfuse_core::estimation::map_estimate(f);
    ensure(am(&pred).map_err(e2s)? == am(&post).map_err(e2s)?, "zero motion moved the argmax")?;

    // ring radius for a centered point mass
    let g61 = GridSpec::planar([0.0; 3], cell, 61, 61).map_err(e2s)?;
    let mut ws = TransitionWorkspace::new(g61, 2.0).map_err(e2s)?;
    let center = g61.index([30, 30, 0]);
    let point = LikelihoodField::point_mass(g61, center).map_err(e2s)?;
    let ring = MotionModel::Odometry(MotionInput { speed: 1.0, heading: None, speed_std: 0.02, heading_std: 0.2, dt: 2.0 });
    let pr = predict(&point, &ring, &mut ws).map_err(e2s)?;
    let mode = am(&pr).map_err(e2s)?;
    let radius = gridfuse_core::grid::distance(&g61.position(mode), &g61.position(center));
    ensure((radius - 2.0).abs() <= cell + 1e-9, format!("ring mode at {radius:.3} m"))?;

    // rotation covariance: heading +90 degrees permutes cells
    let moving = |heading: f64| {
        MotionModel::Odometry(MotionInput { speed: 1.5, heading: Some(heading), speed_std: 0.3, heading_std: 0.3, dt: 1.0 })
    };
    let a = predict(&point, &moving(0.3), &mut ws).map_err(e2s)?;
    let b = predict(&point, &moving(0.3 + FRAC_PI_2), &mut ws).map_err(e2s)?;
    let peak = a.mass().iter().cloned().fold(0.0, f64::max);
    let mut rot_dev: f64 = 0.0;
    for y in 0..61i64 {
        for x in 0..61i64 {
            let (dx, dy) = (x - 30, y - 30);
            let (rx, ry) = (30 - dy, 30 + dx);
            let va = a.mass()[g61.index([x as usize, y as usize, 0]).0];
            let vb = b.mass()[g61.index([rx as usize, ry as usize, 0]).0];
            rot_dev = rot_dev.max((va - vb).abs() / peak);
        }
    }
    ensure(rot_dev < 1e-12, format!("rotation deviation {rot_dev:e}"))?;
    ensure(
        g61.coords(am(&b).map_err(e2s)?) == {
            let c = g61.coords(am(&a).map_err(e2s)?);
            [30 - (c[1] - 30), 30 + (c[0] - 30), 0]
        },
        "rotated argmax is not the permuted argmax",
    )?;

    // bimodality preserved, and equal to a direct per-source computation
    let mut bi = vec![0.0; g30.len()];
    bi[g30.index([6, 8, 0]).0] = 1.0;
    bi[g30.index([20, 20, 0]).0] = 0.8;
    let bi = LikelihoodField::from_mass(g30, bi).map_err(e2s)?.normalize().map_err(e2s)?;
    let input = MotionInput { speed: 0.4, heading: Some(0.0), speed_std: 0.05, heading_std: 0.2, dt: 1.0 };
    let mut ws = TransitionWorkspace::new(g30, 2.0).map_err(e2s)?;
    let pb = predict(&bi, &MotionModel::Odometry(input), &mut ws).map_err(e2s)?;
    let sep = gridfuse_core::grid::distance(&g30.position(g30.index([6, 8, 0])), &g30.position(g30.index([20, 20, 0])));
    ensure(sep > 4.0 * (0.4 + 3.0 * 0.05), "modes not well separated")?;
    let before = local_maxima(bi.mass(), 30, 0.5).len();
    let after = local_maxima(pb.mass(), 30, 0.5);
    ensure(before == 2 && after.len() == 2, format!("local maxima {before} -> {}", after.len()))?;
    for (src, tgt) in [([6usize, 8usize], [8usize, 8usize]), ([20, 20], [22, 20])] {
        let _ = src;
        ensure(after.contains(&g30.index([tgt[0], tgt[1], 0]).0), format!("mode not translated to {tgt:?}"))?;
    }
    let mut direct = vec![0.0; g30.len()];
    for (j, pj) in bi.mass().iter().enumerate() {
        if *pj <= 1e-200 {
            continue;
        }
        let sj = g30.position(GridIndex(j));
        for (i, d) in direct.iter_mut().enumerate() {
            let ti = g30.position(GridIndex(i));
            let dist = ((ti[0] - sj[0]).powi(2) + (ti[1] - sj[1]).powi(2)).sqrt();
            let hv = if i == j {
                1.0 / (2.0 * PI)
            } else {
                let mut w = 0.0 - (ti[1] - sj[1]).atan2(ti[0] - sj[0]);
                w = (w + PI).rem_euclid(2.0 * PI) - PI;
                gauss(w, 0.0, 0.2)
            };
            *d += gauss(0.4 - dist, 0.0, 0.05) * hv * pj;
        }
    }
    let total: f64 = direct.iter().sum();
    let dev = pb
        .mass()
        .iter()
        .zip(&direct)
        .map(|(p, d)| (p - d / total).abs())
        .fold(0.0, f64::max)
        / pb.mass().iter().cloned().fold(0.0, f64::max);
    ensure(dev < 1e-9, format!("direct computation deviates by {dev:e}"))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("ring at {radius:.2} m, rotation dev {rot_dev:.1e}, direct dev {dev:.1e}"))
}

fn c9_bookkeeping() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = GridSpec::planar([0.0, 0.0, 1.0], 0.5, 40, 40).map_err(e2s)?;
    let anchors = random_anchors(&mut rng, 5, 20.0);
    let mut cfg = FilterConfig::new(grid, MeasurementModels::reference(), anchors.clone());
    cfg.combine = CombineMode::Product;
    let truth = [8.3, 11.1, 1.0];
    let epoch: Vec<Observation> = anchors
        .iter()
        .map(|a| {
            Observation::new(
                2.0,
                Payload::Range { anchor_id: a.id.clone(), range: gridfuse_core::grid::distance(&a.position, &truth) + rng.random_range(-0.3..0.3) },
            )
        })
        .collect();
    let mut batch = GridFilter::new(cfg.clone()).map_err(e2s)?;
    batch.step_epoch(&epoch).map_err(e2s)?;
    let mut seq = GridFilter::new(cfg.clone()).map_err(e2s)?;
    for o in &epoch {
        seq.step(o).map_err(e2s)?;
    }
    let dev = batch.field().mass().iter().zip(seq.field().mass()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(dev <= 1e-9, format!("batch vs sequential deviation {dev:e}"))?;

    // out-of-sequence rejection and monotonic estimates
    let mut f = GridFilter::new(cfg.clone()).map_err(e2s)?;
    f.step(&epoch[0]).map_err(e2s)?;
    let late = Observation::new(1.5, epoch[1].payload.clone());
    ensure(f.admit(&late) == Admission::Reject(RejectReason::OutOfSequence), "late event admitted")?;
    ensure(f.step(&late).map_err(e2s)?.is_none() && f.state().rejected == 1, "late event processed")?;
    let nan = Observation::new(f64::NAN, epoch[1].payload.clone());
    ensure(f.admit(&nan) == Admission::Reject(RejectReason::NonFiniteTimestamp), "NaN timestamp admitted")?;

    let s = sim::make_dynamic_scenario(&ScenarioConfig { epochs: 60, ..Default::default() }).map_err(e2s)?;
    let (mut events, _) = generate(&s).map_err(e2s)?;
    events.reverse();
    let mut f = GridFilter::new(sim::filter_config(&s)).map_err(e2s)?;
    let report = f.run(&events).map_err(e2s)?;
    ensure(report.estimates.len() == 60, format!("{} estimates for 60 epochs", report.estimates.len()))?;
    ensure(report.estimates.windows(2).all(|w| w[0].timestamp <= w[1].timestamp), "estimates not monotonic")?;
    ensure(report.rejected == 0 && report.inversions > 0, "reversed stream was not reordered")?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("batch/sequential dev {dev:.1e}, {} inversions reordered", report.inversions))
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) -> Result<(), String> {
    let mut entries: Vec<_> = std::fs::read_dir(dir).map_err(e2s)?.collect::<Result<_, _>>().map_err(e2s)?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_files(&p, base, out)?;
        } else {
            let rel = p.strip_prefix(base).map_err(e2s)?.display().to_string();
            out.push((rel, std::fs::read(&p).map_err(e2s)?));
        }
    }
    Ok(())
}

fn c10_determinism(dir: &Path) -> Check {
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = dir.join(format!("demo{k}"));
        run_cli(&["demo", "--seed", "42", "--out", out.to_str().ok_or("path")?])?;
        let mut files = Vec::new();
        collect_files(&out, &out, &mut files)?;
        runs.push(files);
    }
    let csv = runs[0].iter().filter(|(n, _)| n.ends_with(".csv")).count();
    ensure(csv >= 8, format!("only {csv} CSV files written"))?;
    ensure(runs[0] == runs[1], "demo outputs differ between runs")?;
    Ok(format!("{} files ({csv} CSV) byte-identical", runs[0].len()))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut static_run = None;
    let results: Vec<(&str, Check)> = vec![
        ("1 normalization", c1_normalization()),
        ("2 oracle equivalence", c2_oracle()),
        ("3 noiseless convergence", c3_noiseless()),
        ("4 static analog", c4_static(&mut static_run)),
        ("5 dynamic analog", c5_dynamic(static_run.as_ref())),
        ("6 BSSD error propagation", c6_bssd_spread()),
        ("7 GMM calibration recovery", c7_calibration(tmp.path())),
        ("8 prediction properties", c8_prediction()),
        ("9 multi-rate bookkeeping", c9_bookkeeping()),
        ("10 determinism", c10_determinism(tmp.path())),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(msg) => println!("PASS criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
