//! Per-period clearing: weighted DC-OPF, LMPs from duals, curtailment.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::curve::PiecewiseLinearCurve;
use crate::linalg::Matrix;
use crate::lp::{solve, solve_with_basis, LpError, LpProblem, LpStatus, FEAS_TOL};
use crate::network::NetworkCase;
use crate::opf::{assemble, Agent, Formulation, Grid, RowKind};

/// One offer: cost curve over `[p_min, p_max]`. Storage bounds may be
/// negative (charging).
#[derive(Debug, Clone, PartialEq)]
pub struct Bid {
    pub bus: usize,
    /// $/h.
    pub curve: PiecewiseLinearCurve,
    /// kgCO2/h, for the emission tiebreak and reporting.
    pub emission: Option<PiecewiseLinearCurve>,
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidSet {
    pub generators: Vec<Bid>,
    pub storages: Vec<Bid>,
    /// MW per bus.
    pub demands: Vec<f64>,
}

impl BidSet {
    fn agents(&self) -> Vec<Agent> {
        self.generators
            .iter()
            .chain(&self.storages)
            .map(|b| Agent {
                bus: b.bus,
                cost: b.curve.clone(),
                emission: b.emission.clone(),
                p_min: b.p_min,
                p_max: b.p_max,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossConvergence {
    /// Fixed coefficients, nothing to iterate.
    Fixed,
    Converged { iterations: usize },
    Unconverged { iterations: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingResult {
    /// MW, generators in bid order.
    pub generator_dispatch: Vec<f64>,
    /// MW, storages in bid order (positive = discharge).
    pub storage_dispatch: Vec<f64>,
    /// $/MWh.
    pub lambda_bar: f64,
    /// $/MWh per branch (zero for unconstrained branches).
    pub mu_minus: Vec<f64>,
    pub mu_plus: Vec<f64>,
    /// $/MWh per bus.
    pub lmp: Vec<f64>,
    /// MW per branch, from→to positive.
    pub flows: Vec<f64>,
    /// Σ bid cost, $/h (no tiebreak term).
    pub total_cost: f64,
    /// kgCO2/h.
    pub total_emission: f64,
    /// Effective `L_i` used in the final solve.
    pub losses: Vec<f64>,
    pub loss_convergence: LossConvergence,
    /// Some basic variable is at zero: duals (and LMPs) may not be unique.
    pub degenerate: bool,
    pub basis: Vec<usize>,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClearingError {
    #[error("bid data does not match the case: {0}")]
    Dimension(String),
    #[error("market is infeasible (most violated row: {row})")]
    Infeasible { row: String },
    #[error("market is unbounded")]
    Unbounded,
    #[error(transparent)]
    Lp(#[from] LpError),
}

fn describe(kind: RowKind) -> String {
    match kind {
        RowKind::Balance => String::from("power balance"),
        RowKind::BranchUpper(l) => format!("branch {l} forward limit"),
        RowKind::BranchLower(l) => format!("branch {l} reverse limit"),
        RowKind::Bound(k) => format!("agent {k} upper bound"),
        RowKind::CostPiece(k) => format!("agent {k} cost piece"),
        RowKind::EmissionPiece(k) => format!("agent {k} emission piece"),
        RowKind::Extra => String::from("auxiliary row"),
    }
}

/// The clearing LP for given effective loss coefficients.
pub fn assemble_clearing_lp(
    case: &NetworkCase,
    bids: &BidSet,
    losses: &[f64],
) -> Result<(LpProblem, Formulation), ClearingError> {
    let nb = case.buses.len();
    if bids.demands.len() != nb {
        return Err(ClearingError::Dimension(format!("{} demands for {nb} buses", bids.demands.len())));
    }
    if losses.len() != nb {
        return Err(ClearingError::Dimension(format!("{} loss coefficients for {nb} buses", losses.len())));
    }
    for (k, b) in bids.generators.iter().chain(&bids.storages).enumerate() {
        if b.bus >= nb {
            return Err(ClearingError::Dimension(format!("bid {k} at missing bus {}", b.bus)));
        }
        if !(b.p_min.is_finite() && b.p_max.is_finite()) || b.p_min > b.p_max + 1e-12 {
            return Err(ClearingError::Dimension(format!("bid {k} has bounds [{}, {}]", b.p_min, b.p_max)));
        }
    }
    let capacities: Vec<f64> = case.branches.iter().map(|b| b.capacity).collect();
    let grid = Grid {
        bus_count: nb,
        ptdf: case.ptdf(),
        capacities: &capacities,
        losses,
        loss_offset: case.loss_offset,
    };
    let form = assemble(&bids.agents(), &grid);
    let problem = LpProblem::from_shared(form.objective(case.epsilon), form.matrix.clone(), form.rhs(&bids.demands))?;
    Ok((problem, form))
}

/// λ_i = λ̄(1 − L_i) + Σ_l T_li(μ⁻_l − μ⁺_l).
pub fn compute_lmps(lambda_bar: f64, mu_minus: &[f64], mu_plus: &[f64], losses: &[f64], ptdf: &Matrix) -> Vec<f64> {
    (0..losses.len())
        .map(|i| {
            let congestion: f64 = (0..mu_minus.len()).map(|l| ptdf.get(l, i) * (mu_minus[l] - mu_plus[l])).sum();
            lambda_bar * (1.0 - losses[i]) + congestion
        })
        .collect()
}

/// Clears with the given effective loss coefficients, optionally warm
/// started from a previous basis.
pub fn clear_with_losses(
    case: &NetworkCase,
    bids: &BidSet,
    losses: &[f64],
    warm: Option<&[usize]>,
) -> Result<ClearingResult, ClearingError> {
    let (problem, form) = assemble_clearing_lp(case, bids, losses)?;
    let sol = match warm {
        Some(basis) => solve_with_basis(&problem, basis)?,
        None => solve(&problem)?,
    };
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Unbounded => return Err(ClearingError::Unbounded),
        LpStatus::Infeasible => {
            let row = sol.violated_row.map_or(String::from("unknown"), |r| describe(form.rows[r]));
            return Err(ClearingError::Infeasible { row });
        }
    }
    let dispatch = form.dispatch(&sol.primal);
    let ng = bids.generators.len();
    let nl = case.branches.len();
    let lambda_bar = sol.duals[form.balance_row];
    let mut mu_minus = vec![0.0; nl];
    let mut mu_plus = vec![0.0; nl];
    for (l, rows) in form.branch_rows.iter().enumerate() {
        if let Some((up, lo)) = rows {
            mu_plus[l] = -sol.duals[*up];
            mu_minus[l] = -sol.duals[*lo];
        }
    }
    let lmp = compute_lmps(lambda_bar, &mu_minus, &mu_plus, losses, case.ptdf());
    let mut injection = vec![0.0; case.buses.len()];
    for (b, p) in bids.generators.iter().chain(&bids.storages).zip(&dispatch) {
        injection[b.bus] += p;
    }
    for (inj, d) in injection.iter_mut().zip(&bids.demands) {
        *inj -= d;
    }
    let flows = case.ptdf().mul_vec(&injection);
    let total_cost = bids.generators.iter().chain(&bids.storages).zip(&dispatch).map(|(b, &p)| b.curve.value(p)).sum();
    let total_emission = bids
        .generators
        .iter()
        .chain(&bids.storages)
        .zip(&dispatch)
        .filter_map(|(b, &p)| b.emission.as_ref().map(|e| e.value(p)))
        .sum();
    Ok(ClearingResult {
        generator_dispatch: dispatch[..ng].to_vec(),
        storage_dispatch: dispatch[ng..].to_vec(),
        lambda_bar,
        mu_minus,
        mu_plus,
        lmp,
        flows,
        total_cost,
        total_emission,
        losses: losses.to_vec(),
        loss_convergence: LossConvergence::Fixed,
        degenerate: sol.degenerate,
        basis: sol.basis,
        pivots: sol.pivots,
    })
}

fn initial_losses(case: &NetworkCase) -> Vec<f64> {
    case.buses
        .iter()
        .map(|b| b.withdrawal_loss_sensitivity.unwrap_or(b.loss_sensitivity))
        .collect()
}

/// Clears the market. Uses the direction iteration when the case asks for
/// it, otherwise the fixed (injection) coefficients.
pub fn clear_market(case: &NetworkCase, bids: &BidSet) -> Result<ClearingResult, ClearingError> {
    clear_market_warm(case, bids, None)
}

pub fn clear_market_warm(
    case: &NetworkCase,
    bids: &BidSet,
    warm: Option<&[usize]>,
) -> Result<ClearingResult, ClearingError> {
    if case.loss_iteration {
        loss_direction_iterate(case, bids, 10)
    } else {
        let losses: Vec<f64> = case.buses.iter().map(|b| b.loss_sensitivity).collect();
        clear_with_losses(case, bids, &losses, warm)
    }
}

/// Re-clears with each bus's loss coefficient chosen by the sign of its net
/// injection in the previous solve, until the choice stops changing.
/// Every bus starts on its withdrawal coefficient.
pub fn loss_direction_iterate(case: &NetworkCase, bids: &BidSet, max_iters: usize) -> Result<ClearingResult, ClearingError> {
    let mut losses = initial_losses(case);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut result = clear_with_losses(case, bids, &losses, None)?;
        let mut injection = vec![0.0; case.buses.len()];
        for (b, p) in bids
            .generators
            .iter()
            .chain(&bids.storages)
            .zip(result.generator_dispatch.iter().chain(&result.storage_dispatch))
        {
            injection[b.bus] += p;
        }
        let next: Vec<f64> = case
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| {
                if injection[i] - bids.demands[i] >= -FEAS_TOL {
                    b.loss_sensitivity
                } else {
                    b.withdrawal_loss_sensitivity.unwrap_or(b.loss_sensitivity)
                }
            })
            .collect();
        if next == losses {
            result.loss_convergence = LossConvergence::Converged { iterations };
            return Ok(result);
        }
        if iterations >= max_iters {
            result.loss_convergence = LossConvergence::Unconverged { iterations };
            return Ok(result);
        }
        losses = next;
    }
}

/// Curtailed share of available renewable energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curtailment {
    pub fraction: f64,
    /// No renewable energy was available; `fraction` is 0 by convention.
    pub no_renewable_energy: bool,
}

/// `Σ(P̄ − p) / ΣP̄` over paired availability and dispatch samples.
pub fn curtailment_fraction(available: &[f64], dispatched: &[f64]) -> Curtailment {
    let total: f64 = available.iter().sum();
    if total <= 0.0 {
        return Curtailment { fraction: 0.0, no_renewable_energy: true };
    }
    let lost: f64 = available.iter().zip(dispatched).map(|(a, p)| (a - p).max(0.0)).sum();
    Curtailment { fraction: (lost / total).clamp(0.0, 1.0), no_renewable_energy: false }
}

/// Curtailment over consecutive periods starting at `first_period`.
pub fn renewable_curtailment(case: &NetworkCase, first_period: usize, results: &[ClearingResult]) -> Curtailment {
    let mut available = Vec::new();
    let mut dispatched = Vec::new();
    for (t, r) in results.iter().enumerate() {
        for (g, gen) in case.generators.iter().enumerate() {
            if gen.is_renewable {
                available.push(case.generator_p_max(g, first_period + t));
                dispatched.push(r.generator_dispatch[g]);
            }
        }
    }
    curtailment_fraction(&available, &dispatched)
}
