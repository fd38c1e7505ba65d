//! Carbon-emission-flow baseline: nodal outflow intensities from the flow
//! pattern, a container model for storage, and the matching prices.
//!
//! Intensities are kgCO2/kWh, flows MW. Each bus mixes everything flowing
//! in (generation plus incoming branches) and sends it out at one intensity:
//! `(Σ_gen p·Ψ + Σ_in p_ji·ρ_j) = ρ_i·(Σ_gen p + Σ_in p_ji)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::clearing::{BidSet, ClearingResult};
use crate::linalg::{solve_dense, Matrix};
use crate::network::NetworkCase;

pub const CONSERVATION_TOL: f64 = 1e-6;
const THROUGHPUT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CefError {
    #[error("flow is not conserved at bus {bus} (mismatch {mismatch} MW)")]
    NotConserved { bus: usize, mismatch: f64 },
    #[error("edge {edge} has non-positive flow or a bad bus")]
    BadEdge { edge: usize },
    #[error("intensity system is singular")]
    Singular,
    #[error("cannot discharge {requested} MWh from a store holding {stored} MWh")]
    DischargeFromEmpty { requested: f64, stored: f64 },
}

/// A power injection with a known intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub bus: usize,
    /// MW, ≥ 0.
    pub power: f64,
    /// kgCO2/kWh.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    bus_count: usize,
    /// `(from, to, MW > 0)`.
    edges: Vec<(usize, usize, f64)>,
    sources: Vec<Source>,
    /// MW withdrawn per bus.
    demand: Vec<f64>,
}

impl FlowGraph {
    /// Checks conservation at every bus.
    pub fn new(
        bus_count: usize,
        edges: Vec<(usize, usize, f64)>,
        sources: Vec<Source>,
        demand: Vec<f64>,
    ) -> Result<Self, CefError> {
        for (e, &(f, t, p)) in edges.iter().enumerate() {
            if f >= bus_count || t >= bus_count || f == t || !(p > 0.0) {
                return Err(CefError::BadEdge { edge: e });
            }
        }
        let g = FlowGraph { bus_count, edges, sources, demand };
        let net = g.imbalance();
        if let Some((bus, &mismatch)) = net.iter().enumerate().find(|(_, m)| m.abs() > CONSERVATION_TOL) {
            return Err(CefError::NotConserved { bus, mismatch });
        }
        Ok(g)
    }

    /// Builds the graph of one cleared period. Branch flows come from the
    /// clearing, so any losses show up as withdrawal at the slack; bus
    /// withdrawals are taken as whatever the flows imply, which makes the
    /// graph lossless by construction. Discharging storages are sources at
    /// `storage_intensity`; charging storages add to their bus withdrawal.
    pub fn from_clearing(
        case: &NetworkCase,
        bids: &BidSet,
        result: &ClearingResult,
        storage_intensity: &[f64],
    ) -> Result<Self, CefError> {
        let nb = case.buses.len();
        let mut edges = Vec::new();
        for (br, &f) in case.branches.iter().zip(&result.flows) {
            if f > THROUGHPUT_EPS {
                edges.push((br.from, br.to, f));
            } else if f < -THROUGHPUT_EPS {
                edges.push((br.to, br.from, -f));
            }
        }
        let mut sources = Vec::new();
        for ((bid, &p), gen) in bids.generators.iter().zip(&result.generator_dispatch).zip(&case.generators) {
            if p > 0.0 {
                sources.push(Source { bus: bid.bus, power: p, intensity: gen.unit_emission });
            }
        }
        for ((bid, &p), &rho) in bids.storages.iter().zip(&result.storage_dispatch).zip(storage_intensity) {
            if p > 0.0 {
                sources.push(Source { bus: bid.bus, power: p, intensity: rho });
            }
        }
        let mut g = FlowGraph { bus_count: nb, edges, sources, demand: vec![0.0; nb] };
        g.demand = g.imbalance();
        Ok(g)
    }

    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Generation + inflow − outflow − demand per bus.
    fn imbalance(&self) -> Vec<f64> {
        let mut net = vec![0.0; self.bus_count];
        for s in &self.sources {
            net[s.bus] += s.power;
        }
        for &(f, t, p) in &self.edges {
            net[f] -= p;
            net[t] += p;
        }
        for (n, d) in net.iter_mut().zip(&self.demand) {
            *n -= d;
        }
        net
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CefSolution {
    /// kgCO2/kWh per bus.
    pub rho: Vec<f64>,
    /// Buses with no throughput; their intensity is set to 0.
    pub zero_throughput: Vec<usize>,
}

impl CefSolution {
    /// kgCO2/h attributed to each bus's withdrawal.
    pub fn demand_emission(&self, graph: &FlowGraph) -> Vec<f64> {
        self.rho.iter().zip(&graph.demand).map(|(r, d)| r * d * 1000.0).collect()
    }
}

/// Solves the nodal intensity equations directly, which handles cyclic flow
/// patterns the same way as radial ones.
pub fn cef_solve(graph: &FlowGraph) -> Result<CefSolution, CefError> {
    let n = graph.bus_count;
    let mut a = Matrix::zeros(n, n);
    let mut rhs = vec![0.0; n];
    let mut throughput = vec![0.0; n];
    for s in &graph.sources {
        throughput[s.bus] += s.power;
        rhs[s.bus] += s.power * s.intensity;
    }
    for &(f, t, p) in &graph.edges {
        throughput[t] += p;
        a.add_to(t, f, -p);
    }
    let mut zero_throughput = Vec::new();
    for i in 0..n {
        if throughput[i] <= THROUGHPUT_EPS {
            zero_throughput.push(i);
            // pin ρ_i = 0; nothing flows out of it anyway
            for j in 0..n {
                a.set(i, j, 0.0);
            }
            a.set(i, i, 1.0);
            rhs[i] = 0.0;
        } else {
            a.add_to(i, i, throughput[i]);
        }
    }
    let rho = solve_dense(&a, &rhs).map_err(|_| CefError::Singular)?;
    Ok(CefSolution { rho, zero_throughput })
}

/// `ψ_i = κ·ρ_i/2` in $/kWh, with `κ` in $/kg.
pub fn cef_emission_prices(rho: &[f64], kappa: f64) -> Vec<f64> {
    rho.iter().map(|r| kappa * r / 2.0).collect()
}

/// Storage as a container of mixed-intensity energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CefStorageState {
    /// MWh.
    pub stored_energy: f64,
    /// kgCO2/kWh, energy-weighted mean of what was charged.
    pub stored_intensity: f64,
}

impl CefStorageState {
    pub fn new(stored_energy: f64) -> Self {
        CefStorageState { stored_energy, stored_intensity: 0.0 }
    }
}

/// Applies one period of power `p` (MW, positive = discharge). Returns the
/// new state and the emission attributed to the storage in kgCO2: positive
/// for charging (grid energy times `inflow_intensity`), negative credit for
/// discharging (delivered energy times the stored intensity).
pub fn cef_storage_step(
    state: CefStorageState,
    p: f64,
    inflow_intensity: f64,
    tau: f64,
    eta_c: f64,
    eta_d: f64,
) -> Result<(CefStorageState, f64), CefError> {
    if p < 0.0 {
        let grid_energy = -p * tau;
        let added = grid_energy * eta_c;
        let total = state.stored_energy + added;
        let intensity = if total > 0.0 {
            (state.stored_energy * state.stored_intensity + added * inflow_intensity) / total
        } else {
            state.stored_intensity
        };
        let next = CefStorageState { stored_energy: total, stored_intensity: intensity };
        Ok((next, inflow_intensity * grid_energy * 1000.0))
    } else if p > 0.0 {
        let removed = p * tau / eta_d;
        if removed > state.stored_energy + 1e-9 {
            return Err(CefError::DischargeFromEmpty { requested: removed, stored: state.stored_energy });
        }
        let next = CefStorageState {
            stored_energy: (state.stored_energy - removed).max(0.0),
            stored_intensity: state.stored_intensity,
        };
        Ok((next, -state.stored_intensity * p * tau * 1000.0))
    } else {
        Ok((state, 0.0))
    }
}
