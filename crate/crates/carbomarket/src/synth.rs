//! Seeded synthetic series and the bundled 30-bus replica.
//!
//! The replica keeps the published dimensions (six fossil plants, a PV
//! station, a wind farm and two storages on the standard 30-bus grid) but
//! the load and renewable series are generated here, so results only match
//! the published ones in direction.

use std::f64::consts::PI;

use carbomarket_core::curve::PiecewiseLinearCurve;
use carbomarket_core::network::{Branch, Bus, CaseData, Generator, NetworkCase, NetworkError, StorageUnit};
use carbomarket_core::simulator::{run_horizon, ScenarioConfig, SimulationError};
use carbomarket_core::units::KW_PER_MW;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(from, to, reactance p.u., rating MW)`, bus ids 1-based.
pub const IEEE30_BRANCHES: [(usize, usize, f64, f64); 41] = [
    (1, 2, 0.0575, 130.0),
    (1, 3, 0.1652, 130.0),
    (2, 4, 0.1737, 65.0),
    (3, 4, 0.0379, 130.0),
    (2, 5, 0.1983, 130.0),
    (2, 6, 0.1763, 65.0),
    (4, 6, 0.0414, 90.0),
    (5, 7, 0.1160, 70.0),
    (6, 7, 0.0820, 130.0),
    (6, 8, 0.0420, 32.0),
    (6, 9, 0.2080, 65.0),
    (6, 10, 0.5560, 32.0),
    (9, 11, 0.2080, 65.0),
    (9, 10, 0.1100, 65.0),
    (4, 12, 0.2560, 65.0),
    (12, 13, 0.1400, 65.0),
    (12, 14, 0.2559, 32.0),
    (12, 15, 0.1304, 32.0),
    (12, 16, 0.1987, 32.0),
    (14, 15, 0.1997, 16.0),
    (16, 17, 0.1923, 16.0),
    (15, 18, 0.2185, 16.0),
    (18, 19, 0.1292, 16.0),
    (19, 20, 0.0680, 32.0),
    (10, 20, 0.2090, 32.0),
    (10, 17, 0.0845, 32.0),
    (10, 21, 0.0749, 32.0),
    (10, 22, 0.1499, 32.0),
    (21, 22, 0.0236, 32.0),
    (15, 23, 0.2020, 16.0),
    (22, 24, 0.1790, 16.0),
    (23, 24, 0.2700, 16.0),
    (24, 25, 0.3292, 16.0),
    (25, 26, 0.3800, 16.0),
    (25, 27, 0.2087, 16.0),
    (28, 27, 0.3960, 65.0),
    (27, 29, 0.4153, 16.0),
    (27, 30, 0.6027, 16.0),
    (29, 30, 0.4533, 16.0),
    (8, 28, 0.2000, 32.0),
    (6, 28, 0.0599, 32.0),
];

/// Nominal active load per bus (MW), bus ids 1..=30.
pub const IEEE30_LOAD: [f64; 30] = [
    0.0, 21.7, 2.4, 7.6, 94.2, 0.0, 22.8, 30.0, 0.0, 5.8, 0.0, 11.2, 0.0, 6.2, 8.2, 3.5, 9.0, 3.2, 9.5, 2.2, 17.5,
    0.0, 3.2, 8.7, 0.0, 3.5, 0.0, 0.0, 2.4, 10.6,
];

/// `(bus, fuel $/kWh, intensity kgCO2/kWh, p_max MW)`.
pub const REPLICA_PLANTS: [(usize, f64, f64, f64); 6] = [
    (1, 0.047, 0.9, 80.0),
    (2, 0.055, 0.8, 80.0),
    (22, 0.055, 0.8, 50.0),
    (27, 0.047, 0.2, 55.0),
    (23, 0.055, 0.3, 30.0),
    (13, 0.047, 0.3, 40.0),
];

pub const PV_BUS: usize = 6;
pub const WIND_BUS: usize = 15;
pub const RENEWABLE_CAPACITY: f64 = 100.0;
pub const REPLICA_SEED: u64 = 20230;
pub const REPLICA_PERIODS: usize = 672;

/// Knobs of the synthetic series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesShape {
    /// Peak-hour multiplier on the nominal loads.
    pub load_peak: f64,
    /// Night-time trough multiplier.
    pub load_trough: f64,
    /// Relative per-bus noise amplitude.
    pub load_noise: f64,
    pub wind_mean: f64,
    /// AR(1) persistence of the wind capacity factor.
    pub wind_persistence: f64,
    pub wind_noise: f64,
}

impl Default for SeriesShape {
    fn default() -> Self {
        SeriesShape {
            load_peak: 0.8,
            load_trough: 0.45,
            load_noise: 0.05,
            wind_mean: 0.5,
            wind_persistence: 0.9,
            wind_noise: 0.12,
        }
    }
}

/// Hour-of-day load shape in [0, 1]: morning and evening peaks.
fn daily_shape(hour: f64) -> f64 {
    let morning = (-(hour - 10.0) * (hour - 10.0) / 8.0).exp();
    let evening = (-(hour - 19.0) * (hour - 19.0) / 6.0).exp();
    (0.8 * morning + evening).min(1.0)
}

/// Clear-sky PV shape, zero outside 6:00–18:00.
fn solar_shape(hour: f64) -> f64 {
    if (6.0..=18.0).contains(&hour) {
        (PI * (hour - 6.0) / 12.0).sin()
    } else {
        0.0
    }
}

/// `(load [t][bus], renewable [t][pv, wind])` for hourly periods.
pub fn synthetic_series(rng: &mut ChaCha8Rng, periods: usize, shape: &SeriesShape) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut load = Vec::with_capacity(periods);
    let mut renewable = Vec::with_capacity(periods);
    let mut wind: f64 = shape.wind_mean;
    let mut cloud: f64 = 0.8;
    for t in 0..periods {
        let hour = (t % 24) as f64;
        let day = t / 24;
        let weekend = if day % 7 >= 5 { 0.9 } else { 1.0 };
        let level = weekend * (shape.load_trough + (shape.load_peak - shape.load_trough) * daily_shape(hour));
        load.push(
            IEEE30_LOAD
                .iter()
                .map(|&base| {
                    let noise = 1.0 + shape.load_noise * (2.0 * rng.random::<f64>() - 1.0);
                    base * level * noise
                })
                .collect(),
        );
        if t % 24 == 0 {
            cloud = 0.5 + 0.5 * rng.random::<f64>();
        }
        let pv = RENEWABLE_CAPACITY * solar_shape(hour) * (cloud * (0.9 + 0.1 * rng.random::<f64>()));
        let step = shape.wind_noise * (2.0 * rng.random::<f64>() - 1.0);
        wind = (shape.wind_mean + shape.wind_persistence * (wind - shape.wind_mean) + step).clamp(0.0, 1.0);
        renewable.push(vec![pv, RENEWABLE_CAPACITY * wind]);
    }
    (load, renewable)
}

fn linear_plant(id: usize, bus: usize, fuel: f64, intensity: f64, p_max: f64) -> Generator {
    Generator {
        id,
        bus,
        fuel_curve: PiecewiseLinearCurve::linear(fuel * KW_PER_MW, 0.0, 0.0, p_max).expect("finite"),
        emission_curve: PiecewiseLinearCurve::linear(intensity * KW_PER_MW, 0.0, 0.0, p_max).expect("finite"),
        unit_emission: intensity,
        p_min: 0.0,
        p_max,
        is_renewable: false,
    }
}

fn renewable_plant(id: usize, bus: usize) -> Generator {
    Generator {
        id,
        bus,
        fuel_curve: PiecewiseLinearCurve::zero(0.0, RENEWABLE_CAPACITY).expect("finite"),
        emission_curve: PiecewiseLinearCurve::zero(0.0, RENEWABLE_CAPACITY).expect("finite"),
        unit_emission: 0.0,
        p_min: 0.0,
        p_max: RENEWABLE_CAPACITY,
        is_renewable: true,
    }
}

/// Storage at bus id `bus` with the published ratings for that site.
fn replica_storage(bus: usize, e_min: f64, e_max: f64) -> StorageUnit {
    StorageUnit {
        id: bus,
        bus: bus - 1,
        p_max: 4.0,
        eta_c: 0.95,
        eta_d: 0.95,
        e_min,
        e_max,
        e_init: (e_min + e_max) / 2.0,
        gamma_lo: 0.0,
        gamma_hi: 0.15,
        n_segments: 50,
    }
}

/// The bundled 30-bus replica with series drawn from `seed`.
pub fn replica30(seed: u64, periods: usize, shape: &SeriesShape) -> CaseData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (load_series, renewable_series) = synthetic_series(&mut rng, periods, shape);
    let mut generators: Vec<Generator> = REPLICA_PLANTS
        .iter()
        .enumerate()
        .map(|(k, &(bus, fuel, psi, p_max))| linear_plant(k + 1, bus - 1, fuel, psi, p_max))
        .collect();
    generators.push(renewable_plant(7, PV_BUS - 1));
    generators.push(renewable_plant(8, WIND_BUS - 1));
    CaseData {
        name: String::from("replica30"),
        buses: (1..=30).map(Bus::new).collect(),
        branches: IEEE30_BRANCHES
            .iter()
            .map(|&(f, t, x, cap)| Branch { from: f - 1, to: t - 1, capacity: cap, reactance: Some(x), ptdf_row: None })
            .collect(),
        generators,
        storages: vec![replica_storage(15, 4.0, 36.0), replica_storage(18, 2.0, 18.0)],
        load_series,
        renewable_series,
        tau: 1.0,
        kappa: 0.05,
        epsilon: 1e-4,
        delta: 0.002,
        slack_bus: 0,
        loss_offset: 0.0,
        loss_iteration: false,
    }
}

/// Percentiles of the pilot-run price used as each storage's `[γ̲, γ̄]`.
pub const PRICE_PERCENTILES: (f64, f64) = (0.1, 0.9);

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("pilot run failed: {0}")]
    Pilot(SimulationError),
}

fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * p).round() as usize]
}

/// Sets each storage's price range from a storage-free pilot run of the
/// case: the `lo`/`hi` percentiles of `LMP + ψ` at its bus, with the low end
/// pulled down if needed so a round trip stays profitable.
pub fn calibrate_price_ranges(data: &mut CaseData, lo: f64, hi: f64) -> Result<(), CalibrationError> {
    let case = NetworkCase::new(data.clone())?;
    let pilot = run_horizon(&case, &ScenarioConfig::a2()).map_err(|f| CalibrationError::Pilot(f.error))?;
    for unit in &mut data.storages {
        let prices: Vec<f64> = pilot.periods.iter().map(|r| r.lmp[unit.bus] / KW_PER_MW + r.psi[unit.bus]).collect();
        unit.gamma_hi = percentile(&prices, hi);
        unit.gamma_lo = percentile(&prices, lo).max(0.0);
        let round_trip = unit.gamma_hi * unit.eta_c * unit.eta_d;
        if unit.gamma_lo >= round_trip {
            unit.gamma_lo = 0.5 * round_trip;
        }
    }
    Ok(())
}

/// The replica with calibrated storage price ranges, as bundled in `cases/`.
pub fn bundled_replica30(seed: u64, periods: usize) -> Result<CaseData, CalibrationError> {
    let mut data = replica30(seed, periods, &SeriesShape::default());
    calibrate_price_ranges(&mut data, PRICE_PERCENTILES.0, PRICE_PERCENTILES.1)?;
    Ok(data)
}

/// One-bus, one-plant case used by the CLI examples.
pub fn single_gen() -> CaseData {
    CaseData {
        name: String::from("single_gen"),
        buses: vec![Bus::new(1), Bus::new(2)],
        branches: vec![Branch { from: 0, to: 1, capacity: f64::INFINITY, reactance: Some(0.1), ptdf_row: None }],
        generators: vec![linear_plant(1, 0, 0.05, 0.6, 200.0)],
        storages: Vec::new(),
        load_series: vec![vec![30.0, 50.0], vec![40.0, 60.0], vec![20.0, 35.0]],
        renewable_series: vec![Vec::new(); 3],
        tau: 1.0,
        kappa: 0.05,
        epsilon: 1e-4,
        delta: 0.002,
        slack_bus: 0,
        loss_offset: 0.0,
        loss_iteration: false,
    }
}
