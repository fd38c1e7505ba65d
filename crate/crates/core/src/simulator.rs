//! The rolling per-period procedure: collect bids, clear, allocate
//! emissions, settle, advance storage state.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::allocation::{allocate, build_compact_form, AllocationError, Breakpoint};
use crate::clearing::{clear_market, Bid, BidSet, ClearingError, ClearingResult, LossConvergence};
use crate::curve::PiecewiseLinearCurve;
use crate::network::{NetworkCase, StorageUnit};
use crate::storage::{
    b1_parameters, b1_power, b2_power, bid_curve, choose_parameters, feasible_power_range, next_energy,
    offline_optimal, optimal_power, update_state, PolicyParams, StorageError, StorageState,
};
use crate::units::KW_PER_MW;

/// Relative tolerance of the per-period settlement identity.
pub const SETTLEMENT_TOL: f64 = 1e-6;

/// How a storage unit decides its output.
#[derive(Debug, Clone, PartialEq)]
pub enum StorageStrategy {
    /// Bids the convex drift-plus-penalty curve.
    Proposed,
    /// Fixed output from the linear surrogate at the previous period's price.
    B1,
    /// Fixed output from price thresholds ($/kWh) at the previous period's price.
    B2 { lo: f64, hi: f64 },
    /// Fixed output from a recorded schedule, MW per period.
    Replay(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub enable_storage: bool,
    pub enable_allocation: bool,
    pub kappa_override: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    /// Periods to run; the whole series when `None`.
    pub horizon: Option<usize>,
    pub first_period: usize,
    pub seed: u64,
    /// One per storage; missing entries default to `Proposed`.
    pub strategies: Vec<StorageStrategy>,
    /// Multiplier on the tuned `V_s` of every proposed-strategy storage.
    pub v_scale: f64,
}

impl ScenarioConfig {
    pub fn new(name: &str, enable_storage: bool, enable_allocation: bool) -> Self {
        ScenarioConfig {
            name: String::from(name),
            enable_storage,
            enable_allocation,
            kappa_override: None,
            epsilon: None,
            delta: None,
            horizon: None,
            first_period: 0,
            seed: 0,
            strategies: Vec::new(),
            v_scale: 1.0,
        }
    }

    pub fn proposed() -> Self {
        Self::new("Proposed", true, true)
    }

    /// Storage, no allocation.
    pub fn a1() -> Self {
        Self::new("A1", true, false)
    }

    /// Allocation, no storage.
    pub fn a2() -> Self {
        Self::new("A2", false, true)
    }

    /// Neither.
    pub fn a3() -> Self {
        Self::new("A3", false, false)
    }

    pub fn table() -> [Self; 4] {
        [Self::proposed(), Self::a1(), Self::a2(), Self::a3()]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("period {period}: {source}")]
    Clearing { period: usize, source: ClearingError },
    #[error("period {period}: {source}")]
    Allocation { period: usize, source: AllocationError },
    #[error("period {period}, storage {storage}: {source}")]
    Storage { period: usize, storage: usize, source: StorageError },
    #[error("period {period}: settlement off by {relative} (relative)")]
    Settlement { period: usize, relative: f64 },
    #[error("scenario: {0}")]
    Config(String),
}

/// Money flows of one period, $.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Settlement {
    /// Σ λ_i·D_i·τ.
    pub load_energy_payment: f64,
    /// Σ ψ_i·D_i·τ.
    pub load_emission_payment: f64,
    /// Σ (λ_s + ψ_s)·p_s·τ, negative when charging.
    pub storage_revenue: f64,
    /// Σ λ_i·p_i·τ over generators.
    pub generator_revenue: f64,
    /// Σ_l F_l(μ⁺ + μ⁻)·τ.
    pub congestion_rent: f64,
    /// −λ̄·L0·τ: surplus from the fixed loss term.
    pub loss_residual: f64,
    /// Σ E_i + Σ E_s.
    pub emission_charges: f64,
    /// |payments − revenues − rent − residual − charges| / scale.
    pub relative_error: f64,
}

impl Settlement {
    pub fn payments(&self) -> f64 {
        self.load_energy_payment + self.load_emission_payment
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    pub period: usize,
    /// MW per generator.
    pub generator_dispatch: Vec<f64>,
    /// Available renewable output per generator (0 for fossil units), MW.
    pub renewable_available: Vec<f64>,
    /// MW per storage (positive = discharge).
    pub storage_dispatch: Vec<f64>,
    /// $/MWh per bus.
    pub lmp: Vec<f64>,
    /// $/kWh per bus.
    pub psi: Vec<f64>,
    pub lambda_bar: f64,
    /// Σ fuel cost, $/h.
    pub generation_cost: f64,
    /// Σ bid cost including storage bids, $/h.
    pub bid_cost: f64,
    /// kgCO2/h.
    pub emission: f64,
    /// MWh per storage after the period.
    pub storage_energy: Vec<f64>,
    pub storage_queue: Vec<f64>,
    /// $/kWh seen by each storage (`λ/1000 + ψ` at its bus).
    pub storage_gamma: Vec<f64>,
    /// $ per storage.
    pub storage_revenue: Vec<f64>,
    /// kgCO2 per storage (`E_s/κ`).
    pub storage_allocated_emission: Vec<f64>,
    /// $ per bus.
    pub load_allocation: Vec<f64>,
    pub settlement: Settlement,
    pub cost_sharing_error: f64,
    pub feasible_start: bool,
    pub breakpoints: Vec<Breakpoint>,
    pub loss_convergence: LossConvergence,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregates {
    /// $/h.
    pub avg_generation_cost: f64,
    /// kgCO2/h.
    pub avg_emission: f64,
    pub curtailment: f64,
    /// $/h per storage, least-squares slope of cumulative revenue.
    pub revenue_rate: Vec<f64>,
    /// kgCO2/h per storage.
    pub storage_emission_rate: Vec<f64>,
    pub max_cost_sharing_error: f64,
    pub mean_cost_sharing_error: f64,
    pub max_settlement_error: f64,
    pub feasible_start_periods: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub scenario: ScenarioConfig,
    pub periods: Vec<PeriodRecord>,
    pub aggregates: Aggregates,
}

impl SimulationReport {
    /// Per-storage cumulative revenue, $.
    pub fn cumulative_revenue(&self, storage: usize) -> Vec<f64> {
        let mut acc = 0.0;
        self.periods
            .iter()
            .map(|r| {
                acc += r.storage_revenue[storage];
                acc
            })
            .collect()
    }

    /// Combined price series seen by a storage, $/kWh.
    pub fn gamma_path(&self, storage: usize) -> Vec<f64> {
        self.periods.iter().map(|r| r.storage_gamma[storage]).collect()
    }
}

/// The report rows gathered before a period failed, and the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationFailure {
    pub partial: Box<SimulationReport>,
    pub error: SimulationError,
}

/// Ordinary least-squares slope of a cumulative series against elapsed
/// hours `(k + 1)·τ`.
pub fn fit_revenue_rate(cumulative: &[f64], tau: f64) -> f64 {
    let n = cumulative.len();
    if n < 2 {
        return 0.0;
    }
    let xs: Vec<f64> = (0..n).map(|k| (k + 1) as f64 * tau).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = cumulative.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(cumulative).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Generator offers for one period: fuel cost plus half the emission cost
/// when allocation is on. Renewable bounds come from the series.
pub fn plant_bids(case: &NetworkCase, period: usize, kappa: f64, enable_allocation: bool) -> Vec<Bid> {
    case.generators
        .iter()
        .enumerate()
        .map(|(g, gen)| {
            let p_max = case.generator_p_max(g, period);
            let curve = if enable_allocation && kappa != 0.0 {
                gen.fuel_curve
                    .plus(&gen.emission_curve.scaled(kappa / 2.0))
                    .unwrap_or_else(|_| gen.fuel_curve.clone())
            } else {
                gen.fuel_curve.clone()
            };
            Bid {
                bus: gen.bus,
                curve,
                emission: Some(gen.emission_curve.clone()),
                p_min: gen.p_min.min(p_max),
                p_max,
            }
        })
        .collect()
}

/// `E_s = Ē + V·γ̲/η_c` for a scaled `V`, the upper end of the feasible
/// offset range.
pub fn scaled_parameters(unit: &StorageUnit, v_scale: f64) -> Result<PolicyParams, StorageError> {
    let base = choose_parameters(unit)?;
    if v_scale == 1.0 {
        return Ok(base);
    }
    let v = base.v * v_scale;
    Ok(PolicyParams { e_offset: unit.e_max + v * unit.gamma_lo / unit.eta_c, v })
}

struct StorageAgent {
    strategy: StorageStrategy,
    params: PolicyParams,
    state: StorageState,
    /// γ seen in the previous period, for the fixed-output strategies.
    gamma_prev: f64,
}

fn fixed_bid(bus: usize, p: f64) -> Bid {
    Bid { bus, curve: PiecewiseLinearCurve::zero(p, p).expect("finite"), emission: None, p_min: p, p_max: p }
}

/// Runs the scenario over the requested periods.
pub fn run_horizon(case: &NetworkCase, scenario: &ScenarioConfig) -> Result<SimulationReport, SimulationFailure> {
    let mut report = SimulationReport { scenario: scenario.clone(), periods: Vec::new(), aggregates: Aggregates::default() };
    let fail = |report: SimulationReport, error| SimulationFailure { partial: Box::new(report), error };

    let mut data = case.data().clone();
    if let Some(k) = scenario.kappa_override {
        data.kappa = k;
    }
    if let Some(e) = scenario.epsilon {
        data.epsilon = e;
    }
    if let Some(d) = scenario.delta {
        data.delta = d;
    }
    if !scenario.enable_storage {
        data.storages.clear();
    }
    let case = match NetworkCase::new(data) {
        Ok(c) => c,
        Err(e) => return Err(fail(report, SimulationError::Config(alloc::format!("{e}")))),
    };
    let available = case.horizon().saturating_sub(scenario.first_period);
    let horizon = scenario.horizon.unwrap_or(available);
    if horizon > available {
        let msg = alloc::format!("horizon {horizon} exceeds the {available} periods in the series");
        return Err(fail(report, SimulationError::Config(msg)));
    }

    let mut agents = Vec::with_capacity(case.storages.len());
    for (s, unit) in case.storages.iter().enumerate() {
        let strategy = scenario.strategies.get(s).cloned().unwrap_or(StorageStrategy::Proposed);
        let params = match strategy {
            StorageStrategy::B1 => b1_parameters(unit, case.tau),
            _ => scaled_parameters(unit, scenario.v_scale),
        };
        let params = match params {
            Ok(p) => p,
            Err(source) => return Err(fail(report, SimulationError::Storage { period: 0, storage: s, source })),
        };
        if let StorageStrategy::Replay(schedule) = &strategy {
            if schedule.len() < horizon {
                let msg = alloc::format!("replay schedule for storage {s} is shorter than the horizon");
                return Err(fail(report, SimulationError::Config(msg)));
            }
        }
        agents.push(StorageAgent { strategy, params, state: StorageState::new(unit, &params), gamma_prev: 0.0 });
    }

    for k in 0..horizon {
        let t = scenario.first_period + k;
        match run_period(&case, scenario, &mut agents, t, k) {
            Ok(rec) => report.periods.push(rec),
            Err(e) => {
                report.aggregates = aggregate(&case, &report.periods);
                return Err(fail(report, e));
            }
        }
    }
    report.aggregates = aggregate(&case, &report.periods);
    Ok(report)
}

fn run_period(
    case: &NetworkCase,
    scenario: &ScenarioConfig,
    agents: &mut [StorageAgent],
    t: usize,
    k: usize,
) -> Result<PeriodRecord, SimulationError> {
    let tau = case.tau;
    let kappa = case.kappa;
    let nb = case.buses.len();

    // bids
    let mut storage_bids = Vec::with_capacity(agents.len());
    for (s, (agent, unit)) in agents.iter().zip(&case.storages).enumerate() {
        let bid = match &agent.strategy {
            StorageStrategy::Proposed => {
                let curve = bid_curve(agent.state.q, agent.state.psi_prev, &agent.params, unit, tau, unit.n_segments)
                    .map_err(|source| SimulationError::Storage { period: t, storage: s, source })?;
                let (lo, hi) = (curve.lo(), curve.hi());
                Bid { bus: unit.bus, curve, emission: None, p_min: lo, p_max: hi }
            }
            StorageStrategy::B1 => {
                let p = b1_power(agent.state.q, agent.gamma_prev, &agent.params, unit, tau);
                let (lo, hi) = feasible_power_range(agent.state.e, unit, tau);
                fixed_bid(unit.bus, p.clamp(lo, hi))
            }
            StorageStrategy::B2 { lo, hi } => fixed_bid(unit.bus, b2_power(agent.gamma_prev, agent.state.e, unit, tau, *lo, *hi)),
            StorageStrategy::Replay(schedule) => {
                let (lo, hi) = feasible_power_range(agent.state.e, unit, tau);
                fixed_bid(unit.bus, schedule[k].clamp(lo, hi))
            }
        };
        storage_bids.push(bid);
    }
    let bids = BidSet {
        generators: plant_bids(case, t, kappa, scenario.enable_allocation),
        storages: storage_bids,
        demands: case.demands(t).to_vec(),
    };

    // clear
    let result = clear_market(case, &bids).map_err(|source| SimulationError::Clearing { period: t, source })?;

    // allocate
    let mut psi = vec![0.0; nb];
    let mut load_allocation = vec![0.0; nb];
    let mut storage_alloc = vec![0.0; agents.len()];
    let mut cost_sharing_error = 0.0;
    let mut feasible_start = false;
    let mut breakpoints = Vec::new();
    if scenario.enable_allocation && kappa != 0.0 {
        let form = build_compact_form(case, &bids, &result).map_err(|source| SimulationError::Allocation { period: t, source })?;
        let alloc = allocate(&form, case.delta).map_err(|source| SimulationError::Allocation { period: t, source })?;
        psi = alloc.psi;
        load_allocation = alloc.load_cost;
        storage_alloc = alloc.storage_cost;
        cost_sharing_error = alloc.cost_sharing_error;
        feasible_start = alloc.start_point.is_some();
        breakpoints = alloc.breakpoints;
    }

    let settlement = settle(case, &bids, &result, &psi, &load_allocation, &storage_alloc);
    if !(settlement.relative_error <= SETTLEMENT_TOL) {
        return Err(SimulationError::Settlement { period: t, relative: settlement.relative_error });
    }

    // advance storage
    let mut storage_energy = Vec::with_capacity(agents.len());
    let mut storage_queue = Vec::with_capacity(agents.len());
    let mut storage_gamma = Vec::with_capacity(agents.len());
    let mut storage_revenue = Vec::with_capacity(agents.len());
    for (s, (agent, unit)) in agents.iter_mut().zip(&case.storages).enumerate() {
        let p = result.storage_dispatch[s];
        let gamma = result.lmp[unit.bus] / KW_PER_MW + psi[unit.bus];
        storage_revenue.push(gamma * p * tau * KW_PER_MW);
        let mut next = update_state(&agent.state, p, tau, unit, &agent.params)
            .map_err(|source| SimulationError::Storage { period: t, storage: s, source })?;
        next.psi_prev = psi[unit.bus];
        agent.state = next;
        agent.gamma_prev = gamma;
        storage_energy.push(next.e);
        storage_queue.push(next.q);
        storage_gamma.push(gamma);
    }

    let generation_cost = case
        .generators
        .iter()
        .zip(&result.generator_dispatch)
        .map(|(g, &p)| g.fuel_curve.value(p))
        .sum();
    let renewable_available = case
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| if gen.is_renewable { case.generator_p_max(g, t) } else { 0.0 })
        .collect();
    let storage_allocated_emission = storage_alloc.iter().map(|e| if kappa != 0.0 { e / kappa } else { 0.0 }).collect();
    Ok(PeriodRecord {
        period: t,
        generator_dispatch: result.generator_dispatch.clone(),
        renewable_available,
        storage_dispatch: result.storage_dispatch.clone(),
        lmp: result.lmp.clone(),
        psi,
        lambda_bar: result.lambda_bar,
        generation_cost,
        bid_cost: result.total_cost,
        emission: result.total_emission,
        storage_energy,
        storage_queue,
        storage_gamma,
        storage_revenue,
        storage_allocated_emission,
        load_allocation,
        settlement,
        cost_sharing_error,
        feasible_start,
        breakpoints,
        loss_convergence: result.loss_convergence,
        degenerate: result.degenerate,
    })
}

/// Money flows of a cleared and priced period. `psi` in $/kWh, allocations
/// in $.
pub fn settle(
    case: &NetworkCase,
    bids: &BidSet,
    result: &ClearingResult,
    psi: &[f64],
    load_allocation: &[f64],
    storage_allocation: &[f64],
) -> Settlement {
    let tau = case.tau;
    let mut s = Settlement::default();
    for (i, &d) in bids.demands.iter().enumerate() {
        s.load_energy_payment += result.lmp[i] * d * tau;
        s.load_emission_payment += psi[i] * d * tau * KW_PER_MW;
    }
    for (b, &p) in bids.storages.iter().zip(&result.storage_dispatch) {
        s.storage_revenue += (result.lmp[b.bus] + psi[b.bus] * KW_PER_MW) * p * tau;
    }
    for (b, &p) in bids.generators.iter().zip(&result.generator_dispatch) {
        s.generator_revenue += result.lmp[b.bus] * p * tau;
    }
    for (l, br) in case.branches.iter().enumerate() {
        if br.capacity.is_finite() {
            s.congestion_rent += br.capacity * (result.mu_plus[l] + result.mu_minus[l]) * tau;
        }
    }
    s.loss_residual = -result.lambda_bar * case.loss_offset * tau;
    s.emission_charges = load_allocation.iter().sum::<f64>() + storage_allocation.iter().sum::<f64>();
    let lhs = s.payments() - s.storage_revenue - s.generator_revenue;
    let rhs = s.congestion_rent + s.loss_residual + s.emission_charges;
    let scale = s.load_energy_payment.abs() + s.load_emission_payment.abs() + s.generator_revenue.abs() + 1.0;
    s.relative_error = (lhs - rhs).abs() / scale;
    s
}

pub fn aggregate(case: &NetworkCase, periods: &[PeriodRecord]) -> Aggregates {
    let n = periods.len();
    if n == 0 {
        return Aggregates::default();
    }
    let nf = n as f64;
    let ns = periods[0].storage_dispatch.len();
    let mut available = Vec::new();
    let mut dispatched = Vec::new();
    for r in periods {
        for (g, gen) in case.generators.iter().enumerate() {
            if gen.is_renewable {
                available.push(r.renewable_available[g]);
                dispatched.push(r.generator_dispatch[g]);
            }
        }
    }
    let revenue_rate = (0..ns)
        .map(|s| {
            let mut acc = 0.0;
            let cum: Vec<f64> = periods
                .iter()
                .map(|r| {
                    acc += r.storage_revenue[s];
                    acc
                })
                .collect();
            fit_revenue_rate(&cum, case.tau)
        })
        .collect();
    let storage_emission_rate = (0..ns)
        .map(|s| periods.iter().map(|r| r.storage_allocated_emission[s]).sum::<f64>() / (nf * case.tau))
        .collect();
    Aggregates {
        avg_generation_cost: periods.iter().map(|r| r.generation_cost).sum::<f64>() / nf,
        avg_emission: periods.iter().map(|r| r.emission).sum::<f64>() / nf,
        curtailment: crate::clearing::curtailment_fraction(&available, &dispatched).fraction,
        revenue_rate,
        storage_emission_rate,
        max_cost_sharing_error: periods.iter().map(|r| r.cost_sharing_error).fold(0.0, f64::max),
        mean_cost_sharing_error: periods.iter().map(|r| r.cost_sharing_error).sum::<f64>() / nf,
        max_settlement_error: periods.iter().map(|r| r.settlement.relative_error).fold(0.0, f64::max),
        feasible_start_periods: periods.iter().filter(|r| r.feasible_start).count(),
    }
}

/// Operating rules for evaluating a storage against a fixed price path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriceTaker {
    Proposed { v_scale: f64 },
    B1,
    B2 { lo: f64, hi: f64 },
    Offline,
}

/// Per-period revenue ($) of a storage that takes `prices` ($/kWh) as given.
pub fn price_taker_revenue(prices: &[f64], unit: &StorageUnit, tau: f64, rule: PriceTaker) -> Result<Vec<f64>, StorageError> {
    let revenue = |g: f64, p: f64| g * p * tau * KW_PER_MW;
    match rule {
        PriceTaker::Offline => Ok(offline_optimal(prices, unit, tau).period_revenue),
        PriceTaker::Proposed { v_scale } => {
            let params = scaled_parameters(unit, v_scale)?;
            let mut state = StorageState::new(unit, &params);
            let mut out = Vec::with_capacity(prices.len());
            for &g in prices {
                let p = optimal_power(state.q, g, &params, unit, tau);
                // prices outside the tuning range may push the SoC out; clip
                let (lo, hi) = feasible_power_range(state.e, unit, tau);
                let p = p.clamp(lo, hi);
                out.push(revenue(g, p));
                let e = next_energy(state.e, p, unit, tau);
                state = StorageState { e, q: e - params.e_offset, psi_prev: 0.0 };
            }
            Ok(out)
        }
        PriceTaker::B1 => {
            let params = b1_parameters(unit, tau)?;
            let mut e = unit.e_init;
            Ok(prices
                .iter()
                .map(|&g| {
                    let (lo, hi) = feasible_power_range(e, unit, tau);
                    let p = b1_power(e - params.e_offset, g, &params, unit, tau).clamp(lo, hi);
                    e = next_energy(e, p, unit, tau);
                    revenue(g, p)
                })
                .collect())
        }
        PriceTaker::B2 { lo, hi } => {
            let mut e = unit.e_init;
            Ok(prices
                .iter()
                .map(|&g| {
                    let p = b2_power(g, e, unit, tau, lo, hi);
                    e = next_energy(e, p, unit, tau);
                    revenue(g, p)
                })
                .collect())
        }
    }
}

/// Running sum of a per-period series.
pub fn cumulative(values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}
