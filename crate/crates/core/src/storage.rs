//! Storage operation and bidding from exact drift-plus-penalty minimization,
//! plus the comparison strategies.
//!
//! Prices `γ` are $/kWh, energies MWh, powers MW (positive = discharge).
//! `V` carries MWh·kWh/$ so that `V·γ` is MWh. Quantities of the form
//! `γ × MWh` are turned into dollars with [`KW_PER_MW`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::curve::{curve_from_points, CurveError, PiecewiseLinearCurve};
use crate::network::StorageUnit;
use crate::units::KW_PER_MW;

/// Slack allowed on SoC bounds before an update is rejected, MWh.
pub const SOC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StorageError {
    #[error("parameter assumption violated: {0}")]
    Assumption(String),
    #[error("simultaneous charge and discharge")]
    SimultaneousChargeDischarge,
    #[error("stored energy {e} MWh left [{lo}, {hi}]")]
    SocViolation { e: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Queue offset `E_s` (MWh) and penalty weight `V_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams {
    pub e_offset: f64,
    pub v: f64,
}

fn check_prices(unit: &StorageUnit) -> Result<(), StorageError> {
    if !(unit.gamma_lo >= 0.0) {
        return Err(StorageError::Assumption(format!("gamma_lo = {} must be ≥ 0", unit.gamma_lo)));
    }
    if !(unit.gamma_lo < unit.gamma_hi * unit.eta_c * unit.eta_d) {
        return Err(StorageError::Assumption(String::from(
            "gamma_lo must be below gamma_hi·eta_c·eta_d (no profitable round trip otherwise)",
        )));
    }
    Ok(())
}

/// Largest `V_s` keeping the SoC feasible, and the matching `E_s`.
pub fn choose_parameters(unit: &StorageUnit) -> Result<PolicyParams, StorageError> {
    check_prices(unit)?;
    let (lo, hi) = (unit.gamma_lo, unit.gamma_hi);
    let den = hi * unit.eta_c * unit.eta_d - lo;
    let v = unit.eta_c * (unit.e_max - unit.e_min) / den;
    let e_offset = (hi * unit.eta_c * unit.eta_d * unit.e_max - lo * unit.e_min) / den;
    if !(v > 0.0) {
        return Err(StorageError::Assumption(String::from("energy range must be positive")));
    }
    Ok(PolicyParams { e_offset, v })
}

/// Whether `params` lie in the range that guarantees SoC feasibility.
pub fn params_in_feasible_range(params: &PolicyParams, unit: &StorageUnit) -> bool {
    let tol = 1e-9 * (1.0 + unit.e_max.abs());
    let den = unit.gamma_hi * unit.eta_c * unit.eta_d - unit.gamma_lo;
    params.v > 0.0
        && params.v <= unit.eta_c * (unit.e_max - unit.e_min) / den * (1.0 + 1e-12)
        && unit.e_min + params.v * unit.gamma_hi * unit.eta_d <= params.e_offset + tol
        && params.e_offset <= unit.e_max + params.v * unit.gamma_lo / unit.eta_c + tol
}

/// Parameters of the linear-surrogate strategy (B1).
pub fn b1_parameters(unit: &StorageUnit, tau: f64) -> Result<PolicyParams, StorageError> {
    check_prices(unit)?;
    let pt = unit.p_max * tau;
    let den = unit.gamma_hi * unit.eta_d - unit.gamma_lo / unit.eta_c;
    let v = (unit.e_max - unit.e_min - pt * unit.eta_c - pt / unit.eta_d) / den;
    if !(den > 0.0 && v > 0.0) {
        return Err(StorageError::Assumption(String::from(
            "energy range too small for full-power steps in the linear surrogate",
        )));
    }
    Ok(PolicyParams { e_offset: unit.e_max + v * unit.gamma_lo / unit.eta_c - pt * unit.eta_c, v })
}

/// `Δ + V·(−γ·(p_d − p_c)·τ)` in MWh².
pub fn drift_plus_penalty(
    q: f64,
    gamma: f64,
    p_c: f64,
    p_d: f64,
    params: &PolicyParams,
    unit: &StorageUnit,
    tau: f64,
) -> Result<f64, StorageError> {
    if p_c > 0.0 && p_d > 0.0 {
        return Err(StorageError::SimultaneousChargeDischarge);
    }
    let de = p_c * tau * unit.eta_c - p_d * tau / unit.eta_d;
    Ok(de * de / 2.0 + de * q - params.v * gamma * (p_d - p_c) * tau)
}

/// Net power minimizing the drift-plus-penalty term. For `q ≤ 0` or
/// `γ ≥ 0` this is the five-branch closed form; otherwise both branches can
/// be attractive and the cheaper one wins.
pub fn optimal_power(q: f64, gamma: f64, params: &PolicyParams, unit: &StorageUnit, tau: f64) -> f64 {
    let (ec, ed, pmax, v) = (unit.eta_c, unit.eta_d, unit.p_max, params.v);
    // unconstrained minimizers of each one-sided quadratic
    let pc = (-(q * ec + v * gamma) / (tau * ec * ec)).clamp(0.0, pmax);
    let pd = ((q / ed + v * gamma) * ed * ed / tau).clamp(0.0, pmax);
    let (ce, de) = (pc * tau * ec, pd * tau / ed);
    let charge = ce * ce / 2.0 + pc * tau * q * ec + v * gamma * pc * tau;
    let discharge = de * de / 2.0 - pd * tau * q / ed - v * gamma * pd * tau;
    if pc > 0.0 && (pd == 0.0 || charge <= discharge) {
        -pc
    } else {
        pd
    }
}

/// `(P̲, P̄)`: the policy at the price extremes, clamped to straddle 0.
pub fn power_bounds(q: f64, params: &PolicyParams, unit: &StorageUnit, tau: f64) -> (f64, f64) {
    let lo = optimal_power(q, unit.gamma_lo, params, unit, tau).min(0.0);
    let hi = optimal_power(q, unit.gamma_hi, params, unit, tau).max(0.0);
    (lo, hi)
}

/// Exact bid cost `f(p)` in $/kWh·MW (multiply by 1000 for $/h).
pub fn bid_cost(p: f64, q: f64, psi_prev: f64, params: &PolicyParams, unit: &StorageUnit, tau: f64) -> f64 {
    let (ec, ed, v) = (unit.eta_c, unit.eta_d, params.v);
    let base = if p <= 0.0 {
        p * ec * (p * tau * ec - 2.0 * q) / (2.0 * v)
    } else {
        p * (p * tau - 2.0 * q * ed) / (2.0 * v * ed * ed)
    };
    base - psi_prev * p
}

/// Subgradient interval of the exact bid at 0, $/kWh.
pub fn dead_band(q: f64, psi_prev: f64, params: &PolicyParams, unit: &StorageUnit) -> (f64, f64) {
    (-q * unit.eta_c / params.v - psi_prev, -q / (params.v * unit.eta_d) - psi_prev)
}

/// Piecewise-linear bid over `[P̲, P̄]` from `n` uniform samples with 0
/// added as a sample, in $/h.
pub fn bid_curve(
    q: f64,
    psi_prev: f64,
    params: &PolicyParams,
    unit: &StorageUnit,
    tau: f64,
    n: usize,
) -> Result<PiecewiseLinearCurve, StorageError> {
    let (lo, hi) = power_bounds(q, params, unit, tau);
    if hi - lo <= 0.0 {
        return Ok(PiecewiseLinearCurve::zero(lo, hi)?);
    }
    let n = n.max(2);
    let mut ps: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    ps[n - 1] = hi;
    if !ps.iter().any(|&p| p == 0.0) {
        ps.push(0.0);
        ps.sort_by(f64::total_cmp);
    }
    ps.dedup();
    let points: Vec<(f64, f64)> = ps
        .iter()
        .map(|&p| (p, bid_cost(p, q, psi_prev, params, unit, tau) * KW_PER_MW))
        .collect();
    Ok(curve_from_points(&points)?)
}

/// Stored energy, virtual queue and the last emission price seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageState {
    /// MWh.
    pub e: f64,
    /// `e − E_s`, MWh.
    pub q: f64,
    /// $/kWh, 0 before the first allocation.
    pub psi_prev: f64,
}

impl StorageState {
    pub fn new(unit: &StorageUnit, params: &PolicyParams) -> Self {
        StorageState { e: unit.e_init, q: unit.e_init - params.e_offset, psi_prev: 0.0 }
    }
}

/// Energy after applying `p` for one period.
pub fn next_energy(e: f64, p: f64, unit: &StorageUnit, tau: f64) -> f64 {
    if p >= 0.0 {
        e - p * tau / unit.eta_d
    } else {
        e - p * tau * unit.eta_c
    }
}

/// Advances the state by one period of net power `p`.
pub fn update_state(
    state: &StorageState,
    p: f64,
    tau: f64,
    unit: &StorageUnit,
    params: &PolicyParams,
) -> Result<StorageState, StorageError> {
    let e = next_energy(state.e, p, unit, tau);
    let tol = SOC_TOL * (1.0 + unit.e_max.abs());
    if e < unit.e_min - tol || e > unit.e_max + tol {
        return Err(StorageError::SocViolation { e, lo: unit.e_min, hi: unit.e_max });
    }
    Ok(StorageState { e, q: e - params.e_offset, psi_prev: state.psi_prev })
}

/// Full-power bang-bang strategy minimizing the linear surrogate of the
/// drift-plus-penalty term.
pub fn b1_power(q: f64, gamma: f64, params: &PolicyParams, unit: &StorageUnit, tau: f64) -> f64 {
    let charge = tau * (q * unit.eta_c + params.v * gamma);
    let discharge = tau * (-q / unit.eta_d - params.v * gamma);
    if charge >= 0.0 && discharge >= 0.0 {
        0.0
    } else if charge < discharge {
        -unit.p_max
    } else {
        unit.p_max
    }
}

/// Largest charging (negative) and discharging power the SoC allows.
pub fn feasible_power_range(e: f64, unit: &StorageUnit, tau: f64) -> (f64, f64) {
    let charge = ((unit.e_max - e) / (tau * unit.eta_c)).clamp(0.0, unit.p_max);
    let discharge = ((e - unit.e_min) * unit.eta_d / tau).clamp(0.0, unit.p_max);
    (-charge, discharge)
}

/// Threshold strategy: full feasible charge below `lo`, full feasible
/// discharge above `hi`.
pub fn b2_power(gamma: f64, e: f64, unit: &StorageUnit, tau: f64, lo: f64, hi: f64) -> f64 {
    let (min, max) = feasible_power_range(e, unit, tau);
    if gamma < lo {
        min
    } else if gamma > hi {
        max
    } else {
        0.0
    }
}

/// Worst-case shortfall of the online policy's average revenue, $ per period.
pub fn revenue_gap_bound(params: &PolicyParams, unit: &StorageUnit, tau: f64) -> f64 {
    let pt = unit.p_max * tau;
    pt * pt / (2.0 * params.v * unit.eta_d * unit.eta_d) * KW_PER_MW
}

/// Empirical `(min, max)` of the last `window` prices.
pub fn estimate_price_range(history: &[f64], window: usize) -> Option<(f64, f64)> {
    let start = history.len().saturating_sub(window);
    let tail = &history[start..];
    if tail.is_empty() {
        return None;
    }
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSolution {
    /// $ over the horizon.
    pub revenue: f64,
    /// Net power per period, MW.
    pub schedule: Vec<f64>,
    /// $ per period.
    pub period_revenue: Vec<f64>,
    /// Some period charges and discharges at once (only possible when a
    /// price is ≤ 0).
    pub complementarity_violated: bool,
}

/// Concave piecewise-linear function on `[start, start + Σ len]`.
#[derive(Debug, Clone)]
struct Concave {
    start: f64,
    value0: f64,
    /// `(length, slope)`, slopes non-increasing.
    segs: Vec<(f64, f64)>,
}

impl Concave {
    fn end(&self) -> f64 {
        self.start + self.segs.iter().map(|s| s.0).sum::<f64>()
    }

    fn eval(&self, x: f64) -> f64 {
        let mut pos = self.start;
        let mut val = self.value0;
        for &(len, slope) in &self.segs {
            if x <= pos + len {
                return val + slope * (x - pos).max(0.0);
            }
            pos += len;
            val += slope * len;
        }
        val
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut xs = vec![self.start];
        let mut pos = self.start;
        for &(len, _) in &self.segs {
            pos += len;
            xs.push(pos);
        }
        xs
    }

    fn from_points(points: &[(f64, f64)]) -> Self {
        let mut segs: Vec<(f64, f64)> = points
            .windows(2)
            .filter(|w| w[1].0 > w[0].0)
            .map(|w| (w[1].0 - w[0].0, (w[1].1 - w[0].1) / (w[1].0 - w[0].0)))
            .collect();
        segs.sort_by(|a, b| b.1.total_cmp(&a.1));
        Concave { start: points[0].0, value0: points[0].1, segs }
    }

    /// `max_{x + w = e} self(x) + other(w)`.
    fn sup_convolve(&self, other: &Concave) -> Concave {
        let mut segs = Vec::with_capacity(self.segs.len() + other.segs.len());
        let (mut i, mut j) = (0, 0);
        while i < self.segs.len() || j < other.segs.len() {
            let take_self = j >= other.segs.len() || (i < self.segs.len() && self.segs[i].1 >= other.segs[j].1);
            let seg = if take_self {
                i += 1;
                self.segs[i - 1]
            } else {
                j += 1;
                other.segs[j - 1]
            };
            match segs.last_mut() {
                Some((len, slope)) if *slope == seg.1 => *len += seg.0,
                _ => segs.push(seg),
            }
        }
        Concave { start: self.start + other.start, value0: self.value0 + other.value0, segs }
    }

    fn restrict(&self, lo: f64, hi: f64) -> Concave {
        let value0 = self.eval(lo);
        let mut segs = Vec::new();
        let mut pos = self.start;
        for &(len, slope) in &self.segs {
            let a = pos.max(lo);
            let b = (pos + len).min(hi);
            if b > a {
                segs.push((b - a, slope));
            }
            pos += len;
        }
        Concave { start: lo, value0, segs }
    }
}

/// Best `(p_c, p_d)` for a given energy change `de` (MWh into the store)
/// at price `gamma`, with the complementarity constraint relaxed. Returns
/// `None` if `de` is unreachable.
fn period_best(de: f64, gamma: f64, unit: &StorageUnit, tau: f64) -> Option<(f64, f64, f64)> {
    // p_c = (de/τ + p_d/η_d)/η_c must lie in [0, P]
    let (ec, ed, pm) = (unit.eta_c, unit.eta_d, unit.p_max);
    let lo = ((-de / tau) * ed).max(0.0);
    let hi = ((pm * ec - de / tau) * ed).min(pm);
    if lo > hi + 1e-12 {
        return None;
    }
    let hi = hi.max(lo);
    let eval = |pd: f64| {
        let pc = ((de / tau + pd / ed) / ec).clamp(0.0, pm);
        (gamma * (pd - pc) * tau, pc, pd)
    };
    let (a, b) = (eval(lo), eval(hi));
    Some(if b.0 > a.0 { b } else { a })
}

/// Revenue as a function of the energy change, in γ·MWh.
fn period_revenue(gamma: f64, unit: &StorageUnit, tau: f64) -> Concave {
    let pt = unit.p_max * tau;
    let mut xs = vec![-pt / unit.eta_d, 0.0, pt * unit.eta_c, pt * (unit.eta_c - 1.0 / unit.eta_d)];
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let points: Vec<(f64, f64)> = xs
        .iter()
        .map(|&de| (de, period_best(de, gamma, unit, tau).map_or(f64::NEG_INFINITY, |b| b.0)))
        .collect();
    Concave::from_points(&points)
}

/// Revenue-maximizing schedule with perfect price foresight. Solves the
/// problem with the charge/discharge exclusivity relaxed, exactly, by a
/// backward pass over concave value functions of stored energy. The
/// terminal state is free within bounds.
pub fn offline_optimal(prices: &[f64], unit: &StorageUnit, tau: f64) -> OfflineSolution {
    let t_len = prices.len();
    let revenue_fns: Vec<Concave> = prices.iter().map(|&g| period_revenue(g, unit, tau)).collect();
    // value[t](e): best revenue from period t on, starting with energy e
    let mut value = Vec::with_capacity(t_len + 1);
    value.push(Concave { start: unit.e_min, value0: 0.0, segs: vec![(unit.e_max - unit.e_min, 0.0)] });
    for r in revenue_fns.iter().rev() {
        // value_t(e) = max_x r(x − e) + value_{t+1}(x); with w = e − x this
        // is a sup-convolution of value_{t+1} and r(−w)
        let mirrored = Concave {
            start: -r.end(),
            value0: r.eval(r.end()),
            segs: r.segs.iter().rev().map(|&(l, s)| (l, -s)).collect(),
        };
        let next = value.last().unwrap();
        value.push(next.sup_convolve(&mirrored).restrict(unit.e_min, unit.e_max));
    }
    value.reverse();

    let mut e = unit.e_init.clamp(unit.e_min, unit.e_max);
    let mut schedule = Vec::with_capacity(t_len);
    let mut period_revenue = Vec::with_capacity(t_len);
    let mut violated = false;
    let mut total = 0.0;
    for (t, r) in revenue_fns.iter().enumerate() {
        let v_next = &value[t + 1];
        let lo = r.start.max(unit.e_min - e);
        let hi = r.end().min(unit.e_max - e);
        let mut candidates = vec![lo, hi, 0.0_f64.clamp(lo, hi)];
        candidates.extend(r.breakpoints().into_iter().filter(|&d| d >= lo && d <= hi));
        candidates.extend(v_next.breakpoints().into_iter().map(|x| x - e).filter(|&d| d >= lo && d <= hi));
        let mut best: (f64, f64) = (f64::NEG_INFINITY, 0.0);
        for d in candidates {
            let val = r.eval(d) + v_next.eval(e + d);
            // prefer doing nothing on ties
            if val > best.0 + 1e-12 || (val >= best.0 - 1e-12 && d.abs() < best.1.abs()) {
                best = (val.max(best.0), d);
            }
        }
        let de = best.1;
        let (rev, pc, pd) = period_best(de, prices[t], unit, tau).unwrap_or((0.0, 0.0, 0.0));
        if pc > 1e-9 && pd > 1e-9 {
            violated = true;
        }
        schedule.push(pd - pc);
        period_revenue.push(rev * KW_PER_MW);
        total += rev * KW_PER_MW;
        e = (e + de).clamp(unit.e_min, unit.e_max);
    }
    OfflineSolution { revenue: total, schedule, period_revenue, complementarity_violated: violated }
}
