#![allow(dead_code)]

use irrsio::config::ExperimentConfig;
use irrsio::experiment::RootSystem;
use irrsio::filtration::{build_filtration, Filtration, StoppingParams};
use irrsio::geometry::{dist, Point};
use irrsio::lattice::{build_lattice, DmLattice};
use irrsio::measure::{make_cantor_measure, AtomicMeasure, RatioSchedule};

pub struct Plateau {
    pub mu: AtomicMeasure,
    pub lat: DmLattice,
    pub params: StoppingParams,
    pub filt: Filtration,
}

/// The two-plateau Cantor set with the calibrated thresholds.
pub fn two_plateau() -> Plateau {
    let mu = make_cantor_measure(&RatioSchedule::two_plateau(4).unwrap(), 4, 2).unwrap();
    let lat = build_lattice(&mu, 2.0, 4.0, 40).unwrap();
    let params = StoppingParams::calibrated(&lat).unwrap();
    let filt = build_filtration(&lat, &params, 6).unwrap();
    Plateau { mu, lat, params, filt }
}

pub fn root_system() -> RootSystem {
    RootSystem::build(&ExperimentConfig::default()).unwrap()
}

pub fn cantor(ratio: f64, generations: usize) -> AtomicMeasure {
    make_cantor_measure(&RatioSchedule::uniform(ratio, generations).unwrap(), generations, 2).unwrap()
}

/// `μ(B(c, r))` for the open ball by a plain scan.
pub fn brute_mass(mu: &AtomicMeasure, c: &Point, r: f64) -> f64 {
    mu.positions()
        .iter()
        .zip(mu.weights())
        .filter(|(p, _)| dist(p, c) < r)
        .map(|(_, w)| w)
        .sum()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
