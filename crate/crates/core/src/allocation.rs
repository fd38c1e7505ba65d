//! Aumann-Shapley emission prices by a parametric sweep over optimal bases.
//!
//! With storage outputs fixed, half the emission cost for the period is a
//! function `E(D̃)` of bus net demand `D̃ = D − P_s`. On the ray `y·D̃*` each
//! optimal basis `B` is valid on an interval of `y`, and there
//! `∂E/∂D̃ = Gᵀ B⁻ᵀ K_B`. Summing `Δy · gradient` over the intervals from the
//! start point to `y = 1` gives the exact line integral.
//!
//! Units: demands in MW, `E` in $ for the period, gradients in $/kW, prices
//! `ψ` in $/kWh.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::clearing::{BidSet, ClearingResult};
use crate::linalg::{dot, Matrix};
use crate::lp::{basic_solution_interval, solve, solve_with_basis, BasisFactor, LpError, LpProblem, LpStatus};
use crate::network::NetworkCase;
use crate::opf::{assemble, Agent, ColumnKind, Formulation, Grid, RowKind};
use crate::units::KW_PER_MW;

/// Zero-length intervals tolerated in a row before giving up.
pub const MAX_STALLS: usize = 3;
const Y_TOL: f64 = 1e-9;
const MAX_REFINEMENTS: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocationError {
    #[error("modified OPF is infeasible at the origin; use the feasible start")]
    InfeasibleAtOrigin,
    #[error("modified OPF is infeasible at y = {y}")]
    InfeasibleAt { y: f64 },
    #[error("modified OPF is unbounded at y = {y}")]
    Unbounded { y: f64 },
    #[error("no progress in the basis sweep near y = {y}")]
    NonProgress { y: f64 },
    #[error("cannot map clearing data onto the case: {0}")]
    Mapping(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// `min Cᵀx s.t. Ax = G·D̃ + H, x ≥ 0` with `E = Kᵀx + k_offset`.
#[derive(Debug, Clone)]
pub struct CompactAllocationForm {
    pub formulation: Formulation,
    /// `C`, including the emission tiebreak.
    pub cost: Vec<f64>,
    /// $ per unit of each column over the period (κτ/2 times emission).
    pub k: Vec<f64>,
    pub k_offset: f64,
    /// `D̃*`, MW per bus.
    pub net_demand: Vec<f64>,
    /// `D*`, MW per bus.
    pub demands: Vec<f64>,
    /// `(bus, P_s*)` per storage.
    pub storages: Vec<(usize, f64)>,
    pub tau: f64,
    pub kappa: f64,
    /// Which agent each column belongs to, for splitting `K`.
    pub column_agent: Vec<Option<usize>>,
    /// Power-unit scale factor the form was built with (1 = MW).
    pub power_scale: f64,
}

impl CompactAllocationForm {
    pub fn a(&self) -> &Matrix {
        &self.formulation.matrix
    }

    pub fn g(&self) -> &Matrix {
        &self.formulation.g
    }

    pub fn h(&self) -> &[f64] {
        &self.formulation.h
    }

    pub fn problem_at(&self, net_demand: &[f64]) -> Result<LpProblem, LpError> {
        LpProblem::from_shared(self.cost.clone(), self.formulation.matrix.clone(), self.formulation.rhs(net_demand))
    }

    fn ray_point(&self, y: f64) -> Vec<f64> {
        self.net_demand.iter().map(|d| d * y).collect()
    }

    /// `E(D̃)` or `None` if the modified OPF is infeasible there.
    pub fn emission_cost(&self, net_demand: &[f64]) -> Result<Option<f64>, AllocationError> {
        let sol = solve(&self.problem_at(net_demand)?)?;
        Ok(match sol.status {
            LpStatus::Optimal => Some(dot(&self.k, &sol.primal) + self.k_offset),
            _ => None,
        })
    }

    fn units_per_kw(&self) -> f64 {
        KW_PER_MW / self.power_scale
    }
}

/// One critical interval of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Breakpoint {
    pub y_start: f64,
    pub y_end: f64,
    pub basis_id: u64,
    /// `∂E/∂D̃_i`, $/kW.
    pub gradient: Vec<f64>,
}

/// Start point used when the origin is infeasible.
#[derive(Debug, Clone, PartialEq)]
pub struct StartPoint {
    pub zeta: f64,
    /// `ζ·D̃*`.
    pub net_demand: Vec<f64>,
    /// `E` at the start point, $.
    pub emission_cost: f64,
    /// Proportional allocation of that cost per bus, $.
    pub allocation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    /// $/kWh per bus.
    pub psi: Vec<f64>,
    /// `E_i = ψ_i·D_i*·τ`, $ per bus.
    pub load_cost: Vec<f64>,
    /// `E_s = −ψ_s·P_s*·τ`, $ per storage.
    pub storage_cost: Vec<f64>,
    pub breakpoints: Vec<Breakpoint>,
    /// Present when the sweep started from the feasible-start point.
    pub start_point: Option<StartPoint>,
    /// `E(D̃*)`, $.
    pub emission_cost: f64,
    /// `E(0)` when starting from the origin; the start allocation is
    /// already part of the totals otherwise, so this is 0.
    pub baseline: f64,
    pub cost_sharing_error: f64,
    /// LP solves performed by the sweep.
    pub solves: usize,
}

impl AllocationResult {
    pub fn total_allocated(&self) -> f64 {
        self.load_cost.iter().sum::<f64>() + self.storage_cost.iter().sum::<f64>()
    }
}

/// Assembles the modified OPF of one period: generators only, storages fixed
/// at their cleared output and folded into net demand.
pub fn build_compact_form(
    case: &NetworkCase,
    bids: &BidSet,
    clearing: &ClearingResult,
) -> Result<CompactAllocationForm, AllocationError> {
    let nb = case.buses.len();
    if bids.demands.len() != nb {
        return Err(AllocationError::Mapping(format!("{} demands for {nb} buses", bids.demands.len())));
    }
    if clearing.storage_dispatch.len() != bids.storages.len() {
        return Err(AllocationError::Mapping(String::from("storage dispatch does not match storage bids")));
    }
    let mut net_demand = bids.demands.clone();
    let mut storages = Vec::with_capacity(bids.storages.len());
    for (s, (bid, &p)) in bids.storages.iter().zip(&clearing.storage_dispatch).enumerate() {
        if bid.bus >= nb {
            return Err(AllocationError::Mapping(format!("storage {s} sits at missing bus {}", bid.bus)));
        }
        net_demand[bid.bus] -= p;
        storages.push((bid.bus, p));
    }
    let agents: Vec<Agent> = bids
        .generators
        .iter()
        .map(|b| Agent {
            bus: b.bus,
            cost: b.curve.clone(),
            emission: b.emission.clone(),
            p_min: b.p_min,
            p_max: b.p_max,
        })
        .collect();
    let capacities: Vec<f64> = case.branches.iter().map(|b| b.capacity).collect();
    let grid = Grid {
        bus_count: nb,
        ptdf: case.ptdf(),
        capacities: &capacities,
        losses: &clearing.losses,
        loss_offset: case.loss_offset,
    };
    let formulation = assemble(&agents, &grid);
    Ok(from_formulation(
        formulation,
        case.epsilon,
        case.kappa,
        case.tau,
        net_demand,
        bids.demands.clone(),
        storages,
    ))
}

fn from_formulation(
    formulation: Formulation,
    epsilon: f64,
    kappa: f64,
    tau: f64,
    net_demand: Vec<f64>,
    demands: Vec<f64>,
    storages: Vec<(usize, f64)>,
) -> CompactAllocationForm {
    let half = kappa * tau / 2.0;
    let k = formulation.emission_coef.iter().map(|e| half * e).collect();
    let k_offset = half * formulation.emission_offset;
    let cost = formulation.objective(epsilon);
    let column_agent = formulation
        .columns
        .iter()
        .map(|c| match *c {
            ColumnKind::Power(a) | ColumnKind::CostEpigraph(a) | ColumnKind::EmissionEpigraph(a) => Some(a),
            _ => None,
        })
        .collect();
    CompactAllocationForm {
        formulation,
        cost,
        k,
        k_offset,
        net_demand,
        demands,
        storages,
        tau,
        kappa,
        column_agent,
        power_scale: 1.0,
    }
}

fn k_of(k: &[f64], j: usize) -> f64 {
    k.get(j).copied().unwrap_or(0.0)
}

/// `∂E/∂D̃_i = (K_Bᵀ A_B⁻¹ G)_i`, in $/kW, for the given optimal basis.
pub fn partial_derivative(form: &CompactAllocationForm, basis: &[usize]) -> Result<Vec<f64>, AllocationError> {
    let factor = BasisFactor::new(form.a(), basis)?;
    Ok(gradient_with(form, &form.k, &factor, basis))
}

fn gradient_with(form: &CompactAllocationForm, k: &[f64], factor: &BasisFactor, basis: &[usize]) -> Vec<f64> {
    let kb: Vec<f64> = basis.iter().map(|&j| k_of(k, j)).collect();
    let w = factor.btran(&kb);
    let per_kw = form.units_per_kw();
    form.g().tr_mul_vec(&w).into_iter().map(|v| v / per_kw).collect()
}

fn basis_id(basis: &[usize]) -> u64 {
    // FNV-1a over the sorted index set
    let mut sorted = basis.to_vec();
    sorted.sort_unstable();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for j in sorted {
        for byte in (j as u64).to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Result of integrating one or more `K` vectors along the ray.
struct Sweep {
    /// Per weight vector: `Σ Δy·gradient`, $/kW per bus.
    integrals: Vec<Vec<f64>>,
    breakpoints: Vec<Breakpoint>,
    solves: usize,
}

/// Walks the ray from `y0` to 1. Bases (and so interval boundaries) do not
/// depend on `K`, so several weight vectors share one walk; the first one is
/// recorded in the trace.
fn sweep(form: &CompactAllocationForm, weights: &[&[f64]], y0: f64, delta: f64) -> Result<Sweep, AllocationError> {
    assert!(delta > 0.0);
    let nb = form.net_demand.len();
    let dir = form.g().mul_vec(&form.net_demand);
    let h = form.h().to_vec();
    let mut integrals = vec![vec![0.0; nb]; weights.len()];
    let mut breakpoints = Vec::new();
    let mut warm: Option<Vec<usize>> = None;
    let mut y = y0;
    let mut stalls = 0;
    let mut solves = 0;
    while y < 1.0 {
        let mut step = delta;
        let mut refinements = 0;
        let (basis, factor, interval) = loop {
            let probe = (y + step).min(1.0);
            let problem = form.problem_at(&form.ray_point(probe))?;
            let sol = match &warm {
                Some(b) => solve_with_basis(&problem, b)?,
                None => solve(&problem)?,
            };
            solves += 1;
            match sol.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => return Err(AllocationError::InfeasibleAt { y: probe }),
                LpStatus::Unbounded => return Err(AllocationError::Unbounded { y: probe }),
            }
            let factor = BasisFactor::new(form.a(), &sol.basis)?;
            let interval = match basic_solution_interval(&factor, &dir, &h) {
                Ok(iv) if iv.contains(probe, 1e-7) => iv,
                _ => {
                    // the warm basis drifted; a cold solve gives a clean one
                    let cold = solve(&problem)?;
                    solves += 1;
                    let factor = BasisFactor::new(form.a(), &cold.basis)?;
                    let iv = basic_solution_interval(&factor, &dir, &h).map_err(|_| AllocationError::NonProgress { y })?;
                    warm = Some(cold.basis.clone());
                    if iv.lower > y + Y_TOL && refinements < MAX_REFINEMENTS && probe - y > Y_TOL {
                        refinements += 1;
                        step = 0.5 * (iv.lower - y).min(step);
                        continue;
                    }
                    break (cold.basis, factor, iv);
                }
            };
            warm = Some(sol.basis.clone());
            // The probe overshot a critical region lying between y and the
            // interval found; halve towards y so no region is skipped.
            if interval.lower > y + Y_TOL && refinements < MAX_REFINEMENTS && probe - y > Y_TOL {
                refinements += 1;
                step = 0.5 * (interval.lower - y).min(step);
                continue;
            }
            break (sol.basis, factor, interval);
        };
        // a rounding sliver below 1 is closed with the basis optimal at 1
        let closing = 1.0 - y <= Y_TOL * 1e-3;
        let y_next = if closing { 1.0 } else { interval.upper.min(1.0) };
        if !closing && y_next <= y + Y_TOL * 1e-3 {
            stalls += 1;
            if stalls > MAX_STALLS {
                return Err(AllocationError::NonProgress { y });
            }
            continue;
        }
        stalls = 0;
        let dy = y_next - y;
        for (acc, k) in integrals.iter_mut().zip(weights) {
            let grad = gradient_with(form, k, &factor, &basis);
            for (a, g) in acc.iter_mut().zip(&grad) {
                *a += dy * g;
            }
        }
        let gradient = gradient_with(form, weights[0], &factor, &basis);
        breakpoints.push(Breakpoint { y_start: y, y_end: y_next, basis_id: basis_id(&basis), gradient });
        y = y_next;
    }
    Ok(Sweep { integrals, breakpoints, solves })
}

/// Sweep from the origin. Errors with `InfeasibleAtOrigin` when the
/// modified OPF has no solution at zero net demand.
pub fn aumann_shapley_prices(form: &CompactAllocationForm, delta: f64) -> Result<AllocationResult, AllocationError> {
    let zero = vec![0.0; form.net_demand.len()];
    let Some(e0) = form.emission_cost(&zero)? else {
        return Err(AllocationError::InfeasibleAtOrigin);
    };
    let sw = sweep(form, &[&form.k], 0.0, delta)?;
    Ok(finish(form, &sw.integrals[0], sw.breakpoints, None, e0, sw.solves + 1))
}

/// Sweep from the origin if possible, otherwise from the feasible start.
pub fn allocate(form: &CompactAllocationForm, delta: f64) -> Result<AllocationResult, AllocationError> {
    match aumann_shapley_prices(form, delta) {
        Err(AllocationError::InfeasibleAtOrigin) => {
            let start = feasible_start(form)?;
            let sw = sweep(form, &[&form.k], start.zeta, delta)?;
            Ok(finish(form, &sw.integrals[0], sw.breakpoints, Some(start), 0.0, sw.solves + 2))
        }
        other => other,
    }
}

fn finish(
    form: &CompactAllocationForm,
    integral: &[f64],
    breakpoints: Vec<Breakpoint>,
    start: Option<StartPoint>,
    baseline: f64,
    solves: usize,
) -> AllocationResult {
    let tau = form.tau;
    let per_kw = form.units_per_kw();
    let total_net: f64 = form.net_demand.iter().sum();
    let start_share = match &start {
        Some(sp) if total_net != 0.0 => sp.emission_cost / (total_net * per_kw),
        _ => 0.0,
    };
    let psi: Vec<f64> = integral.iter().map(|v| (v + start_share) / tau).collect();
    let load_cost: Vec<f64> = psi.iter().zip(&form.demands).map(|(p, d)| p * d * tau * per_kw).collect();
    let storage_cost: Vec<f64> = form.storages.iter().map(|&(bus, p)| -psi[bus] * p * tau * per_kw).collect();
    let emission_cost = form
        .emission_cost(&form.net_demand)
        .ok()
        .flatten()
        .unwrap_or(f64::NAN);
    let allocated = load_cost.iter().sum::<f64>() + storage_cost.iter().sum::<f64>();
    let cost_sharing_error = (allocated - (emission_cost - baseline)).abs() / emission_cost.abs().max(1e-12);
    AllocationResult {
        psi,
        load_cost,
        storage_cost,
        breakpoints,
        start_point: start,
        emission_cost,
        baseline,
        cost_sharing_error,
        solves,
    }
}

/// Smallest `ζ ∈ [0, 1]` with `ζ·D̃*` feasible, and the proportional
/// allocation of `E(ζ·D̃*)`.
pub fn feasible_start(form: &CompactAllocationForm) -> Result<StartPoint, AllocationError> {
    let a = form.a();
    let m = a.rows();
    let n = a.cols();
    let dir = form.g().mul_vec(&form.net_demand);
    let mut ext = Matrix::zeros(m + 1, n + 2);
    for j in 0..n {
        ext.col_mut(j)[..m].copy_from_slice(a.col(j));
    }
    for i in 0..m {
        ext.set(i, n, -dir[i]);
    }
    ext.set(m, n, 1.0);
    ext.set(m, n + 1, 1.0);
    let mut rhs = form.h().to_vec();
    rhs.push(1.0);
    let mut cost = vec![0.0; n + 2];
    cost[n] = 1.0;
    let sol = solve(&LpProblem::new(cost, ext, rhs)?)?;
    if sol.status != LpStatus::Optimal {
        return Err(AllocationError::InfeasibleAt { y: 1.0 });
    }
    let zeta = sol.primal[n].clamp(0.0, 1.0);
    let start = form.ray_point(zeta);
    let emission_cost = form.emission_cost(&start)?.ok_or(AllocationError::InfeasibleAt { y: zeta })?;
    let total: f64 = start.iter().sum();
    let allocation = start
        .iter()
        .map(|d| if total != 0.0 { d * emission_cost / total } else { 0.0 })
        .collect();
    Ok(StartPoint { zeta, net_demand: start, emission_cost, allocation })
}

/// Gaps found by [`verify_axioms`], in $.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    /// Max |Σ_g allocation with K_g − allocation with K|.
    pub additivity_gap: f64,
    /// Max |allocation in kW units − allocation in MW units|.
    pub scale_gap: f64,
    /// Max |(split loads summed) − merged load|.
    pub consistency_gap: f64,
}

impl AxiomReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.additivity_gap <= tol && self.scale_gap <= tol && self.consistency_gap <= tol
    }
}

fn bus_allocations(form: &CompactAllocationForm, integral: &[f64]) -> Vec<f64> {
    let per_kw = form.units_per_kw();
    integral.iter().zip(&form.net_demand).map(|(v, d)| v * d * per_kw).collect()
}

/// Checks additivity (per-generator `K`), scale invariance (MW→kW) and
/// consistency (each listed `(bus, fraction)` split into two loads). Needs a
/// form that is feasible at the origin.
pub fn verify_axioms(
    form: &CompactAllocationForm,
    delta: f64,
    splits: &[(usize, f64)],
) -> Result<AxiomReport, AllocationError> {
    let agents = form.column_agent.iter().filter_map(|a| *a).max().map_or(0, |m| m + 1);
    let parts: Vec<Vec<f64>> = (0..agents)
        .map(|g| {
            form.k
                .iter()
                .zip(&form.column_agent)
                .map(|(k, a)| if *a == Some(g) { *k } else { 0.0 })
                .collect()
        })
        .collect();
    let mut weights: Vec<&[f64]> = vec![&form.k];
    weights.extend(parts.iter().map(|p| p.as_slice()));
    let sw = sweep(form, &weights, 0.0, delta)?;
    let combined = bus_allocations(form, &sw.integrals[0]);
    let mut summed = vec![0.0; combined.len()];
    for integral in &sw.integrals[1..] {
        for (s, v) in summed.iter_mut().zip(bus_allocations(form, integral)) {
            *s += v;
        }
    }
    let additivity_gap = max_gap(&combined, &summed);

    let scaled = rescale_power(form, KW_PER_MW);
    let sw_scaled = sweep(&scaled, &[&scaled.k], 0.0, delta)?;
    let scale_gap = max_gap(&combined, &bus_allocations(&scaled, &sw_scaled.integrals[0]));

    let mut consistency_gap: f64 = 0.0;
    for &(bus, fraction) in splits {
        let split = split_bus(form, bus, fraction);
        let sw_split = sweep(&split, &[&split.k], 0.0, delta)?;
        let alloc = bus_allocations(&split, &sw_split.integrals[0]);
        let nb = form.net_demand.len();
        let merged = combined[bus];
        consistency_gap = consistency_gap.max((alloc[bus] + alloc[nb] - merged).abs());
        for i in 0..nb {
            if i != bus {
                consistency_gap = consistency_gap.max((alloc[i] - combined[i]).abs());
            }
        }
    }
    Ok(AxiomReport { additivity_gap, scale_gap, consistency_gap })
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn is_power_row(kind: RowKind) -> bool {
    matches!(kind, RowKind::Balance | RowKind::BranchUpper(_) | RowKind::BranchLower(_) | RowKind::Bound(_))
}

/// The same modified OPF with every power quantity expressed in units
/// `scale` times smaller (e.g. 1000 for MW→kW).
pub fn rescale_power(form: &CompactAllocationForm, scale: f64) -> CompactAllocationForm {
    let f = &form.formulation;
    let row_scale: Vec<f64> = f.rows.iter().map(|&r| if is_power_row(r) { scale } else { 1.0 }).collect();
    let col_scale: Vec<f64> = f
        .columns
        .iter()
        .map(|c| match *c {
            ColumnKind::Power(_) => scale,
            ColumnKind::Slack(r) if is_power_row(f.rows[r]) => scale,
            _ => 1.0,
        })
        .collect();
    let mut a = (*f.matrix).clone();
    for j in 0..a.cols() {
        for i in 0..a.rows() {
            let v = a.get(i, j);
            if v != 0.0 {
                a.set(i, j, v * row_scale[i] / col_scale[j]);
            }
        }
    }
    let mut g = f.g.clone();
    for j in 0..g.cols() {
        for i in 0..g.rows() {
            let v = g.get(i, j);
            g.set(i, j, v * row_scale[i] / scale);
        }
    }
    let h: Vec<f64> = f.h.iter().zip(&row_scale).map(|(v, r)| v * r).collect();
    let per_col = |v: &[f64]| -> Vec<f64> { v.iter().zip(&col_scale).map(|(x, c)| x / c).collect() };
    let formulation = Formulation {
        matrix: Arc::new(a),
        cost_coef: per_col(&f.cost_coef),
        cost_offset: f.cost_offset,
        emission_coef: per_col(&f.emission_coef),
        emission_offset: f.emission_offset,
        g,
        h,
        rows: f.rows.clone(),
        columns: f.columns.clone(),
        power_col: f.power_col.clone(),
        p_min: f.p_min.iter().map(|p| p * scale).collect(),
        balance_row: f.balance_row,
        branch_rows: f.branch_rows.clone(),
    };
    CompactAllocationForm {
        formulation,
        cost: per_col(&form.cost),
        k: per_col(&form.k),
        k_offset: form.k_offset,
        net_demand: form.net_demand.iter().map(|d| d * scale).collect(),
        demands: form.demands.iter().map(|d| d * scale).collect(),
        storages: form.storages.iter().map(|&(b, p)| (b, p * scale)).collect(),
        tau: form.tau,
        kappa: form.kappa,
        column_agent: form.column_agent.clone(),
        power_scale: form.power_scale * scale,
    }
}

/// Splits the load at `bus` into two loads: the original keeps
/// `1 − fraction`, a new parameter (appended after the buses) takes the rest.
pub fn split_bus(form: &CompactAllocationForm, bus: usize, fraction: f64) -> CompactAllocationForm {
    let mut out = form.clone();
    let col: Vec<f64> = form.g().col(bus).to_vec();
    out.formulation.g.push_col(&col);
    let d = form.net_demand[bus];
    out.net_demand[bus] = d * (1.0 - fraction);
    out.net_demand.push(d * fraction);
    let dd = form.demands[bus];
    out.demands[bus] = dd * (1.0 - fraction);
    out.demands.push(dd * fraction);
    out
}
