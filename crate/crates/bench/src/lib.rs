//! Fixtures shared by the benchmarks in `benches/`.

use gridfuse_core::prediction::{MotionInput, MotionModel};
use gridfuse_core::sim::{self, ScenarioConfig};
use gridfuse_core::update::ReferenceSet;
use gridfuse_core::{FilterConfig, GridSpec, LikelihoodField, Observation, Payload};

/// Square grid of `width` meters at `cell` spacing, centered at the origin.
pub fn grid(width: f64, cell: f64) -> GridSpec {
    GridSpec::centered([0.0, 0.0, 1.5], cell, width, width).expect("valid grid")
}

/// Filter config and event stream of the built-in static scenario.
pub fn static_run(epochs: usize) -> (FilterConfig, Vec<Observation>) {
    let cfg = ScenarioConfig { epochs, ..Default::default() };
    let scenario = sim::make_static_scenario(&cfg).expect("scenario");
    let (events, _) = sim::generate(&scenario).expect("simulation");
    (sim::filter_config(&scenario), events)
}

/// First UWB range and first GNSS epoch of a static run, with the anchors.
pub fn sample_payloads() -> (ReferenceSet, Payload, Payload) {
    let (cfg, events) = static_run(4);
    let refs = cfg.anchors.iter().map(|a| (a.id.clone(), a.clone())).collect();
    let find = |pred: fn(&Payload) -> bool| events.iter().map(|e| e.payload.clone()).find(pred).expect("payload");
    let range = find(|p| matches!(p, Payload::Range { .. }));
    let gnss = find(|p| matches!(p, Payload::GnssPseudoranges { .. }));
    (refs, range, gnss)
}

/// A field with two separated bumps, a typical mid-run shape.
pub fn bimodal_field(spec: GridSpec) -> LikelihoodField {
    let mass = spec
        .positions()
        .map(|p| {
            let a = (p[0] - 3.0).powi(2) + p[1].powi(2);
            let b = (p[0] + 4.0).powi(2) + (p[1] - 2.0).powi(2);
            (-a / 2.0).exp() + 0.5 * (-b / 2.0).exp() + 1e-12
        })
        .collect();
    LikelihoodField::from_mass(spec, mass).and_then(|f| f.normalize()).expect("field")
}

pub fn driving(dt: f64) -> MotionModel {
    MotionModel::Odometry(MotionInput { speed: 5.0, heading: Some(0.3), speed_std: 0.1, heading_std: 0.05, dt })
}
