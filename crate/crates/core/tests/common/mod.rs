#![allow(dead_code)]

use carbomarket_core::clearing::{Bid, BidSet};
use carbomarket_core::curve::PiecewiseLinearCurve;
use carbomarket_core::network::{Branch, Bus, CaseData, Generator, NetworkCase, StorageUnit};

/// Linear plant: fuel in $/kWh, intensity in kg/kWh.
pub fn plant(bus: usize, fuel: f64, psi: f64, p_min: f64, p_max: f64) -> Generator {
    Generator {
        id: bus,
        bus,
        fuel_curve: PiecewiseLinearCurve::linear(fuel * 1000.0, 0.0, p_min, p_max).unwrap(),
        emission_curve: PiecewiseLinearCurve::linear(psi * 1000.0, 0.0, p_min, p_max).unwrap(),
        unit_emission: psi,
        p_min,
        p_max,
        is_renewable: false,
    }
}

pub fn storage(bus: usize, p_max: f64) -> StorageUnit {
    StorageUnit {
        id: bus,
        bus,
        p_max,
        eta_c: 0.95,
        eta_d: 0.95,
        e_min: 2.0,
        e_max: 18.0,
        e_init: 10.0,
        gamma_lo: 0.02,
        gamma_hi: 0.1,
        n_segments: 10,
    }
}

/// `(from, to, reactance, capacity)` branches; one period of `load`.
pub fn case(
    load: Vec<f64>,
    branches: &[(usize, usize, f64, f64)],
    generators: Vec<Generator>,
    storages: Vec<StorageUnit>,
) -> NetworkCase {
    let nb = load.len();
    let renewable = generators.iter().filter(|g| g.is_renewable).count();
    NetworkCase::new(CaseData {
        name: "test".into(),
        buses: (0..nb).map(Bus::new).collect(),
        branches: branches
            .iter()
            .map(|&(from, to, x, capacity)| Branch { from, to, capacity, reactance: Some(x), ptdf_row: None })
            .collect(),
        generators,
        storages,
        load_series: vec![load],
        renewable_series: vec![vec![0.0; renewable]],
        tau: 1.0,
        kappa: 0.05,
        epsilon: 1e-4,
        delta: 0.002,
        slack_bus: 0,
        loss_offset: 0.0,
        loss_iteration: false,
    })
    .unwrap()
}

/// Generator offers `fuel + κ/2·emission`, storages fixed at `fixed[s]`.
pub fn bids(case: &NetworkCase, period: usize, storage_fixed: &[f64]) -> BidSet {
    let half = case.kappa / 2.0;
    let generators = case
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| {
            let p_max = case.generator_p_max(g, period);
            Bid {
                bus: gen.bus,
                curve: gen.fuel_curve.plus(&gen.emission_curve.scaled(half)).unwrap(),
                emission: Some(gen.emission_curve.clone()),
                p_min: gen.p_min.min(p_max),
                p_max,
            }
        })
        .collect();
    let storages = case
        .storages
        .iter()
        .zip(storage_fixed)
        .map(|(s, &p)| Bid {
            bus: s.bus,
            curve: PiecewiseLinearCurve::zero(p, p).unwrap(),
            emission: None,
            p_min: p,
            p_max: p,
        })
        .collect();
    BidSet { generators, storages, demands: case.demands(period).to_vec() }
}

/// Replaces the single-period series with `loads` (one row per period).
pub fn with_loads(case: NetworkCase, loads: Vec<Vec<f64>>) -> NetworkCase {
    let mut data = case.into_data();
    let renewable = data.generators.iter().filter(|g| g.is_renewable).count();
    data.renewable_series = vec![vec![0.0; renewable]; loads.len()];
    data.load_series = loads;
    NetworkCase::new(data).unwrap()
}
