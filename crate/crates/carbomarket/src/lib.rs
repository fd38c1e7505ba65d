//! File formats, reports and command-line plumbing around
//! `carbomarket-core`.

pub mod case;
pub mod error;
pub mod report;
pub mod synth;

use std::path::Path;

use carbomarket_core::cef::{cef_emission_prices, cef_solve, cef_storage_step, CefError, CefStorageState, FlowGraph, Source};
use carbomarket_core::network::NetworkCase;
use carbomarket_core::simulator::{run_horizon, PeriodRecord, ScenarioConfig, SimulationReport, StorageStrategy};
use serde::Deserialize;

pub use case::{load_case, save_case, LoadedCase, ScenarioDefaults};
pub use error::{CaseError, CliError, ExitClass};

/// Flow below which a branch is treated as idle in the carbon-flow graph, MW.
const IDLE_FLOW: f64 = 1e-9;

/// Scenario document. Every field but `name` is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub storage: Option<bool>,
    pub allocation: Option<bool>,
    pub kappa: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub horizon: Option<usize>,
    pub first_period: Option<usize>,
    pub seed: Option<u64>,
    pub v_scale: Option<f64>,
    /// One of `proposed`, `b1`, `b2` per storage.
    #[serde(default)]
    pub strategies: Vec<String>,
}

/// A built-in scenario name (`proposed`, `a1`, `a2`, `a3`) or a path to a
/// scenario TOML file, with case defaults filled in.
pub fn resolve_scenario(spec: &str, defaults: &ScenarioDefaults) -> Result<ScenarioConfig, CliError> {
    let mut sc = match spec.to_ascii_lowercase().as_str() {
        "proposed" => ScenarioConfig::proposed(),
        "a1" => ScenarioConfig::a1(),
        "a2" => ScenarioConfig::a2(),
        "a3" => ScenarioConfig::a3(),
        _ if Path::new(spec).is_file() => return scenario_from_file(Path::new(spec), defaults),
        _ => {
            return Err(CliError::Usage(format!(
                "unknown scenario \"{spec}\": expected proposed, a1, a2, a3 or a scenario file"
            )))
        }
    };
    apply_defaults(&mut sc, defaults);
    Ok(sc)
}

fn apply_defaults(sc: &mut ScenarioConfig, d: &ScenarioDefaults) {
    sc.horizon = d.horizon;
    sc.first_period = d.first_period;
    sc.seed = d.seed;
    sc.v_scale = d.v_scale;
}

pub fn scenario_from_file(path: &Path, defaults: &ScenarioDefaults) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io { path: path.to_path_buf(), source })?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| {
        CliError::Usage(format!("scenario {}: {}", path.display(), e.message()))
    })?;
    let mut sc = ScenarioConfig::new(&file.name, file.storage.unwrap_or(true), file.allocation.unwrap_or(true));
    apply_defaults(&mut sc, defaults);
    sc.kappa_override = file.kappa;
    sc.epsilon = file.epsilon;
    sc.delta = file.delta;
    if file.horizon.is_some() {
        sc.horizon = file.horizon;
    }
    if let Some(v) = file.first_period {
        sc.first_period = v;
    }
    if let Some(v) = file.seed {
        sc.seed = v;
    }
    if let Some(v) = file.v_scale {
        sc.v_scale = v;
    }
    for s in &file.strategies {
        sc.strategies.push(match s.to_ascii_lowercase().as_str() {
            "proposed" => StorageStrategy::Proposed,
            "b1" => StorageStrategy::B1,
            "b2" => StorageStrategy::B2 { lo: defaults.b2_lo, hi: defaults.b2_hi },
            other => return Err(CliError::Usage(format!("unknown storage strategy \"{other}\""))),
        });
    }
    Ok(sc)
}

/// Runs `scenario` from its first period through `period` inclusive; the
/// last record is that period. Storage state and price feedback carry over
/// from the earlier periods.
pub fn run_through(case: &NetworkCase, scenario: &ScenarioConfig, period: usize) -> Result<SimulationReport, CliError> {
    if period < scenario.first_period || period >= case.horizon() {
        return Err(CliError::Usage(format!(
            "period {period} outside [{}, {})",
            scenario.first_period,
            case.horizon()
        )));
    }
    let mut sc = scenario.clone();
    sc.horizon = Some(period + 1 - scenario.first_period);
    run_horizon(case, &sc).map_err(|f| CliError::Simulation(f.error))
}

/// Branch flows (MW, from→to positive) implied by a period's dispatch.
pub fn branch_flows(case: &NetworkCase, rec: &PeriodRecord) -> Vec<f64> {
    let inj = net_injection(case, rec);
    let t = case.ptdf();
    (0..case.branches.len()).map(|l| (0..inj.len()).map(|i| t.get(l, i) * inj[i]).sum()).collect()
}

fn net_injection(case: &NetworkCase, rec: &PeriodRecord) -> Vec<f64> {
    let mut inj: Vec<f64> = case.demands(rec.period).iter().map(|d| -d).collect();
    for (gen, p) in case.generators.iter().zip(&rec.generator_dispatch) {
        inj[gen.bus] += p;
    }
    for (unit, p) in case.storages.iter().zip(&rec.storage_dispatch) {
        inj[unit.bus] += p;
    }
    inj
}

/// Carbon-flow quantities of one period.
#[derive(Debug, Clone, PartialEq)]
pub struct CefPeriod {
    pub period: usize,
    /// Outflow intensity per bus, kgCO2/kWh.
    pub rho: Vec<f64>,
    /// `κρ/2`, $/kWh.
    pub psi: Vec<f64>,
    pub zero_throughput: Vec<usize>,
    /// Emission attributed to each storage, kgCO2.
    pub storage_emission: Vec<f64>,
}

/// Carbon-flow baseline over a simulated run. Storages act as containers:
/// they absorb their bus intensity when charging and release their mixed
/// intensity when discharging.
pub fn cef_baseline(case: &NetworkCase, report: &SimulationReport) -> Result<Vec<CefPeriod>, CefError> {
    let storages: Vec<_> = if report.scenario.enable_storage { case.storages.clone() } else { Vec::new() };
    let mut state: Vec<CefStorageState> = storages.iter().map(|u| CefStorageState::new(u.e_init)).collect();
    let mut out = Vec::with_capacity(report.periods.len());
    for rec in &report.periods {
        let flows = branch_flows(case, rec);
        let nb = case.buses.len();
        let mut edges = Vec::new();
        for (br, &f) in case.branches.iter().zip(&flows) {
            if f > IDLE_FLOW {
                edges.push((br.from, br.to, f));
            } else if f < -IDLE_FLOW {
                edges.push((br.to, br.from, -f));
            }
        }
        let mut sources = Vec::new();
        for (gen, &p) in case.generators.iter().zip(&rec.generator_dispatch) {
            if p > 0.0 {
                sources.push(Source { bus: gen.bus, power: p, intensity: gen.unit_emission });
            }
        }
        for ((unit, &p), st) in storages.iter().zip(&rec.storage_dispatch).zip(&state) {
            if p > 0.0 {
                sources.push(Source { bus: unit.bus, power: p, intensity: st.stored_intensity });
            }
        }
        // withdrawals implied by the flows keep the graph exactly conserved
        let mut demand = vec![0.0; nb];
        for s in &sources {
            demand[s.bus] += s.power;
        }
        for &(from, to, f) in &edges {
            demand[from] -= f;
            demand[to] += f;
        }
        for d in &mut demand {
            if d.abs() < IDLE_FLOW {
                *d = 0.0;
            }
        }
        let graph = FlowGraph::new(nb, edges, sources, demand)?;
        let sol = cef_solve(&graph)?;
        let mut storage_emission = Vec::with_capacity(storages.len());
        for ((unit, &p), st) in storages.iter().zip(&rec.storage_dispatch).zip(state.iter_mut()) {
            let (next, kg) = cef_storage_step(*st, p, sol.rho[unit.bus], case.tau, unit.eta_c, unit.eta_d)?;
            *st = next;
            storage_emission.push(kg);
        }
        out.push(CefPeriod {
            period: rec.period,
            psi: cef_emission_prices(&sol.rho, case.kappa),
            rho: sol.rho,
            zero_throughput: sol.zero_throughput,
            storage_emission,
        });
    }
    Ok(out)
}

/// Config echo for `meta.json`.
pub fn meta(case: &NetworkCase, case_path: &Path, scenarios: &[ScenarioConfig], command: &str) -> serde_json::Value {
    let scen: Vec<serde_json::Value> = scenarios
        .iter()
        .map(|s| {
            serde_json::json!({
                "name": s.name,
                "storage": s.enable_storage,
                "allocation": s.enable_allocation,
                "kappa_override": s.kappa_override,
                "epsilon": s.epsilon,
                "delta": s.delta,
                "horizon": s.horizon,
                "first_period": s.first_period,
                "seed": s.seed,
                "v_scale": s.v_scale,
                "strategies": s.strategies.iter().map(|st| format!("{st:?}")).collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::json!({
        "tool": "carbomarket",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "case": {
            "name": case.name,
            "path": case_path.display().to_string(),
            "buses": case.buses.len(),
            "branches": case.branches.len(),
            "generators": case.generators.len(),
            "storages": case.storages.len(),
            "periods": case.horizon(),
            "tau_h": case.tau,
            "kappa_usd_per_kg": case.kappa,
            "epsilon_usd_per_kg": case.epsilon,
            "delta": case.delta,
        },
        "seed": scenarios.first().map_or(0, |s| s.seed),
        "scenarios": scen,
    })
}
