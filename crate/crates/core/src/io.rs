//! File formats: JSON configs with a versioned `schema` field, and CSV
//! tables with a one-line header.
//!
//! Observation rows are `t,sensor,type,ref_ids,values...`:
//!
//! | type  | ref_ids   | values                                  |
//! |-------|-----------|-----------------------------------------|
//! | range | anchor    | range                                   |
//! | tdoa  | `a;b`     | difference                              |
//! | aoa   | anchor    | angle                                   |
//! | gnss  | satellite | pseudorange, x, y, z, `LOS` or `NLOS`   |
//! | odo   | (empty)   | speed, heading                          |
//!
//! A GNSS epoch spans one row per satellite with a shared `t`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is lossless.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::engine::{FilterConfig, FILTER_SCHEMA};
use crate::error::{Error, Result};
use crate::estimation::Estimate;
use crate::grid::GridIndex;
use crate::metrics::StatsSummary;
use crate::noise::GmmModel;
use crate::sim::{Scenario, TruthSample};
use crate::update::{Observation, Payload, SatelliteRange, Sensor, Visibility};

pub const GMM_SCHEMA: &str = "gridfuse.gmm/1";

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(field: &str, line: u64, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse(format!("line {line}: bad {what} `{field}`")))
}

fn sensor_name(s: Sensor) -> &'static str {
    match s {
        Sensor::Gnss => "gnss",
        Sensor::Uwb => "uwb",
        Sensor::Odometry => "odometry",
    }
}

pub fn write_observations<W: Write>(out: W, events: &[Observation]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["t", "sensor", "type", "ref_ids", "values"])?;
    for e in events {
        let t = num(e.timestamp);
        let sensor = sensor_name(e.sensor());
        match &e.payload {
            Payload::Range { anchor_id, range } => {
                w.write_record([t.as_str(), sensor, "range", anchor_id, &num(*range)])?
            }
            Payload::RangeDifference { ref_a, ref_b, difference } => {
                w.write_record([t.as_str(), sensor, "tdoa", &format!("{ref_a};{ref_b}"), &num(*difference)])?
            }
            Payload::Angle { anchor_id, angle } => {
                w.write_record([t.as_str(), sensor, "aoa", anchor_id, &num(*angle)])?
            }
            Payload::GnssPseudoranges { satellites } => {
                for s in satellites {
                    let vis = match s.visibility {
                        Visibility::Los => "LOS",
                        Visibility::Nlos => "NLOS",
                    };
                    w.write_record([
                        t.as_str(),
                        sensor,
                        "gnss",
                        &s.sat_id,
                        &num(s.pseudorange),
                        &num(s.position[0]),
                        &num(s.position[1]),
                        &num(s.position[2]),
                        vis,
                    ])?;
                }
            }
            Payload::Odometry { speed, heading } => {
                w.write_record([t.as_str(), sensor, "odo", "", &num(*speed), &num(*heading)])?
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations<R: Read>(input: R) -> Result<Vec<Observation>> {
    let mut r = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let mut events: Vec<Observation> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::Parse(format!("line {line}: missing column {k}")));
        let need = |n: usize| {
            if rec.len() < n {
                Err(Error::Parse(format!("line {line}: expected {n} columns, got {}", rec.len())))
            } else {
                Ok(())
            }
        };
        let t = parse_f64(field(0)?, line, "timestamp")?;
        let kind = field(2)?;
        let ids = field(3)?;
        let payload = match kind {
            "range" => {
                need(5)?;
                Payload::Range { anchor_id: ids.to_string(), range: parse_f64(field(4)?, line, "range")? }
            }
            "tdoa" => {
                need(5)?;
                let (a, b) = ids
                    .split_once(';')
                    .ok_or_else(|| Error::Parse(format!("line {line}: tdoa needs `a;b` reference ids")))?;
                Payload::RangeDifference {
                    ref_a: a.to_string(),
                    ref_b: b.to_string(),
                    difference: parse_f64(field(4)?, line, "difference")?,
                }
            }
            "aoa" => {
                need(5)?;
                Payload::Angle { anchor_id: ids.to_string(), angle: parse_f64(field(4)?, line, "angle")? }
            }
            "odo" => {
                need(6)?;
                Payload::Odometry {
                    speed: parse_f64(field(4)?, line, "speed")?,
                    heading: parse_f64(field(5)?, line, "heading")?,
                }
            }
            "gnss" => {
                need(9)?;
                let visibility = match field(8)? {
                    "LOS" | "los" => Visibility::Los,
                    "NLOS" | "nlos" => Visibility::Nlos,
                    other => return Err(Error::Parse(format!("line {line}: bad visibility `{other}`"))),
                };
                let sat = SatelliteRange {
                    sat_id: ids.to_string(),
                    pseudorange: parse_f64(field(4)?, line, "pseudorange")?,
                    position: [
                        parse_f64(field(5)?, line, "x")?,
                        parse_f64(field(6)?, line, "y")?,
                        parse_f64(field(7)?, line, "z")?,
                    ],
                    visibility,
                };
                if let Some(Observation { timestamp, payload: Payload::GnssPseudoranges { satellites } }) =
                    events.last_mut()
                {
                    if *timestamp == t {
                        satellites.push(sat);
                        continue;
                    }
                }
                Payload::GnssPseudoranges { satellites: vec![sat] }
            }
            other => return Err(Error::Parse(format!("line {line}: unknown observation type `{other}`"))),
        };
        events.push(Observation::new(t, payload));
    }
    Ok(events)
}

#[derive(Debug, Serialize, Deserialize)]
struct EstimateRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    map_cell: usize,
    map_mass: f64,
    radius: f64,
    support: usize,
}

pub fn write_estimates<W: Write>(out: W, estimates: &[Estimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "y", "z", "map_cell", "map_mass", "radius", "support"])?;
    for e in estimates {
        w.write_record([
            num(e.timestamp),
            num(e.position[0]),
            num(e.position[1]),
            num(e.position[2]),
            e.map_cell.0.to_string(),
            num(e.map_mass),
            num(e.radius),
            e.support.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates<R: Read>(input: R) -> Result<Vec<Estimate>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    r.deserialize::<EstimateRow>()
        .map(|row| {
            let row = row?;
            Ok(Estimate {
                timestamp: row.t,
                position: [row.x, row.y, row.z],
                map_cell: GridIndex(row.map_cell),
                map_mass: row.map_mass,
                radius: row.radius,
                support: row.support,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
}

pub fn write_truth<W: Write>(out: W, truth: &[TruthSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "y", "z"])?;
    for s in truth {
        w.write_record([num(s.timestamp), num(s.position[0]), num(s.position[1]), num(s.position[2])])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows are sorted by timestamp on return.
pub fn read_truth<R: Read>(input: R) -> Result<Vec<TruthSample>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut truth = r
        .deserialize::<TruthRow>()
        .map(|row| {
            let row = row?;
            Ok(TruthSample { timestamp: row.t, position: [row.x, row.y, row.z] })
        })
        .collect::<Result<Vec<_>>>()?;
    truth.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(truth)
}

pub fn write_stats<W: Write>(out: W, rows: &[(&str, &StatsSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "label", "count", "mean", "median", "variance", "sigma1", "sigma2", "sigma3", "p25", "p50", "p75",
    ])?;
    for (label, s) in rows {
        w.write_record([
            label.to_string(),
            s.count.to_string(),
            num(s.mean),
            num(s.median),
            num(s.variance),
            num(s.sigma1),
            num(s.sigma2),
            num(s.sigma3),
            num(s.p25),
            num(s.p50),
            num(s.p75),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ecdf<W: Write>(out: W, steps: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["error", "cdf"])?;
    for (q, f) in steps {
        w.write_record([num(*q), num(*f)])?;
    }
    w.flush()?;
    Ok(())
}

/// One value per row under a `residual` header.
pub fn write_residuals<W: Write>(out: W, residuals: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["residual"])?;
    for r in residuals {
        w.write_record([num(*r)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_residuals<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    r.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let field = rec.get(0).ok_or_else(|| Error::Parse(format!("line {line}: empty row")))?;
            parse_f64(field, line, "residual")
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    schema: String,
    #[serde(flatten)]
    body: T,
}

fn write_versioned<T: Serialize>(out: impl Write, schema: &str, body: &T) -> Result<()> {
    serde_json::to_writer_pretty(out, &Versioned { schema: schema.to_string(), body })?;
    Ok(())
}

fn read_versioned<T: DeserializeOwned>(input: impl Read, schema: &str) -> Result<T> {
    let v: Versioned<T> = serde_json::from_reader(input)?;
    if v.schema != schema {
        return Err(Error::Parse(format!("expected schema `{schema}`, found `{}`", v.schema)));
    }
    Ok(v.body)
}

pub fn write_filter_config<W: Write>(out: W, cfg: &FilterConfig) -> Result<()> {
    write_versioned(out, FILTER_SCHEMA, cfg)
}

pub fn read_filter_config<R: Read>(input: R) -> Result<FilterConfig> {
    let cfg: FilterConfig = read_versioned(input, FILTER_SCHEMA)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_gmm<W: Write>(out: W, model: &GmmModel) -> Result<()> {
    write_versioned(out, GMM_SCHEMA, model)
}

pub fn read_gmm<R: Read>(input: R) -> Result<GmmModel> {
    let m: GmmModel = read_versioned(input, GMM_SCHEMA)?;
    GmmModel::new(m.components)
}

/// Scenarios carry their own `schema` field.
pub fn write_scenario<W: Write>(out: W, scenario: &Scenario) -> Result<()> {
    serde_json::to_writer_pretty(out, scenario)?;
    Ok(())
}

pub fn read_scenario<R: Read>(input: R) -> Result<Scenario> {
    let s: Scenario = serde_json::from_reader(input)?;
    s.validate()?;
    Ok(s)
}

pub fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(File::create(path)?))
}

pub fn open(path: &Path) -> Result<std::io::BufReader<File>> {
    File::open(path).map(std::io::BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}
