//! Grid topology, agents, time series and shift factors.
//!
//! Buses, generators and storages refer to each other by position (0-based
//! index into `CaseData::buses`). The `id` fields are external labels used by
//! file formats.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::curve::PiecewiseLinearCurve;
use crate::linalg::{invert, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    /// `L_i` used when the bus is a net injector (or always, if no
    /// withdrawal coefficient is given).
    pub loss_sensitivity: f64,
    /// Optional `L_i` for net withdrawal; makes the loss model
    /// direction-dependent.
    pub withdrawal_loss_sensitivity: Option<f64>,
}

impl Bus {
    pub fn new(id: usize) -> Self {
        Bus { id, loss_sensitivity: 0.0, withdrawal_loss_sensitivity: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// MW; `f64::INFINITY` for an unconstrained line.
    pub capacity: f64,
    /// Per-unit series reactance.
    pub reactance: Option<f64>,
    /// Explicit shift-factor row (one entry per bus); overrides the computed one.
    pub ptdf_row: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: usize,
    pub bus: usize,
    /// $/h vs MW.
    pub fuel_curve: PiecewiseLinearCurve,
    /// kgCO2/h vs MW.
    pub emission_curve: PiecewiseLinearCurve,
    /// kgCO2/kWh, used by the carbon-flow baseline.
    pub unit_emission: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub is_renewable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageUnit {
    pub id: usize,
    pub bus: usize,
    /// MW.
    pub p_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    /// MWh.
    pub e_min: f64,
    pub e_max: f64,
    pub e_init: f64,
    /// $/kWh.
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub n_segments: usize,
}

/// Plain case data as read from a file. See [`NetworkCase`] for the
/// validated form with shift factors attached.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseData {
    pub name: String,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub storages: Vec<StorageUnit>,
    /// `[period][bus]`, MW.
    pub load_series: Vec<Vec<f64>>,
    /// `[period][k]`, MW, where `k` runs over renewable generators in order.
    pub renewable_series: Vec<Vec<f64>>,
    /// h.
    pub tau: f64,
    /// $/kgCO2.
    pub kappa: f64,
    /// $/kgCO2 weight of the emission tiebreak.
    pub epsilon: f64,
    /// Probe step of the allocation sweep, as a fraction of the ray.
    pub delta: f64,
    pub slack_bus: usize,
    /// `L_0`, MW.
    pub loss_offset: f64,
    /// Iterate loss directions in clearing.
    pub loss_iteration: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("network is disconnected: bus index {bus} unreachable from the slack")]
    Disconnected { bus: usize },
    #[error("branch {branch} has non-positive or missing reactance")]
    BadReactance { branch: usize },
    #[error("branch {branch} references a missing bus")]
    BadBus { branch: usize },
    #[error("case has {} violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
}

/// `T[l][i]`: flow on branch `l` (from→to positive) per MW injected at bus
/// `i` and withdrawn at the slack.
pub fn compute_ptdf(bus_count: usize, branches: &[(usize, usize, f64)], slack: usize) -> Result<Matrix, NetworkError> {
    for (l, &(f, t, x)) in branches.iter().enumerate() {
        if f >= bus_count || t >= bus_count || f == t {
            return Err(NetworkError::BadBus { branch: l });
        }
        if !(x > 0.0 && x.is_finite()) {
            return Err(NetworkError::BadReactance { branch: l });
        }
    }
    // connectivity
    let mut adj = vec![Vec::new(); bus_count];
    for &(f, t, _) in branches {
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = vec![false; bus_count];
    let mut queue = VecDeque::from([slack]);
    seen[slack] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if let Some(bus) = seen.iter().position(|s| !s) {
        return Err(NetworkError::Disconnected { bus });
    }
    // reduced susceptance matrix without the slack
    let red = |i: usize| if i < slack { i } else { i - 1 };
    let n = bus_count - 1;
    let mut b = Matrix::zeros(n, n);
    for &(f, t, x) in branches {
        let y = 1.0 / x;
        if f != slack {
            b.add_to(red(f), red(f), y);
        }
        if t != slack {
            b.add_to(red(t), red(t), y);
        }
        if f != slack && t != slack {
            b.add_to(red(f), red(t), -y);
            b.add_to(red(t), red(f), -y);
        }
    }
    let x_inv = if n > 0 { invert(&b).map_err(|_| NetworkError::Disconnected { bus: 0 })? } else { Matrix::zeros(0, 0) };
    let theta = |bus: usize, inj: usize| -> f64 {
        if bus == slack || inj == slack {
            0.0
        } else {
            x_inv.get(red(bus), red(inj))
        }
    };
    let mut t = Matrix::zeros(branches.len(), bus_count);
    for (l, &(f, to, x)) in branches.iter().enumerate() {
        for i in 0..bus_count {
            t.set(l, i, (theta(f, i) - theta(to, i)) / x);
        }
    }
    Ok(t)
}

fn violation(field: String, rule: &str) -> Violation {
    Violation { field, rule: String::from(rule) }
}

/// Every broken invariant of the case, empty when the case is well formed.
pub fn validate_case(case: &CaseData) -> Vec<Violation> {
    let mut out = Vec::new();
    let nb = case.buses.len();
    if nb == 0 {
        out.push(violation("buses".into(), "at least one bus is required"));
    }
    if case.slack_bus >= nb.max(1) {
        out.push(violation("slack_bus".into(), "must reference an existing bus"));
    }
    for (i, bus) in case.buses.iter().enumerate() {
        let fine = |v: f64| v.is_finite() && v < 1.0;
        if !fine(bus.loss_sensitivity) || bus.withdrawal_loss_sensitivity.is_some_and(|v| !fine(v)) {
            out.push(violation(format!("buses[{i}].loss_sensitivity"), "must be finite and below 1"));
        }
    }
    for (l, br) in case.branches.iter().enumerate() {
        if br.from >= nb || br.to >= nb || br.from == br.to {
            out.push(violation(format!("branches[{l}]"), "must connect two distinct existing buses"));
        }
        if !(br.capacity > 0.0) || br.capacity.is_nan() {
            out.push(violation(format!("branches[{l}].capacity"), "must be positive"));
        }
        match (&br.ptdf_row, br.reactance) {
            (Some(row), _) => {
                if row.len() != nb || row.iter().any(|v| !v.is_finite()) {
                    out.push(violation(format!("branches[{l}].ptdf"), "needs one finite entry per bus"));
                }
            }
            (None, Some(x)) if x > 0.0 && x.is_finite() => {}
            (None, _) => out.push(violation(format!("branches[{l}].reactance"), "must be positive when no PTDF row is given")),
        }
    }
    for (g, gen) in case.generators.iter().enumerate() {
        let field = |f: &str| format!("generators[{g}].{f}");
        if gen.bus >= nb {
            out.push(violation(field("bus"), "must reference an existing bus"));
        }
        if !(gen.p_min.is_finite() && gen.p_max.is_finite()) || gen.p_min > gen.p_max {
            out.push(violation(field("p_min"), "need finite p_min <= p_max"));
        }
        if !gen.fuel_curve.listed_in_convex_order() {
            out.push(violation(field("fuel_curve"), "segments must be convex (slopes nondecreasing)"));
        }
        if !gen.emission_curve.listed_in_convex_order() {
            out.push(violation(field("emission_curve"), "segments must be convex (slopes nondecreasing)"));
        }
        if gen.p_min.is_finite() && gen.p_max.is_finite() && gen.p_min <= gen.p_max {
            let lowest = restricted_min(&gen.emission_curve, gen.p_min, gen.p_max);
            if lowest < -1e-9 {
                out.push(violation(field("emission_curve"), "must be nonnegative on [p_min, p_max]"));
            }
        }
        if gen.is_renewable && !gen.emission_curve.is_zero() {
            out.push(violation(field("emission_curve"), "renewable plants must have zero emission"));
        }
        if !(gen.unit_emission >= 0.0) {
            out.push(violation(field("unit_emission"), "must be nonnegative"));
        }
    }
    for (s, st) in case.storages.iter().enumerate() {
        let field = |f: &str| format!("storages[{s}].{f}");
        if st.bus >= nb {
            out.push(violation(field("bus"), "must reference an existing bus"));
        }
        if !(st.eta_c > 0.0 && st.eta_c <= 1.0) {
            out.push(violation(field("eta_c"), "must lie in (0, 1]"));
        }
        if !(st.eta_d > 0.0 && st.eta_d <= 1.0) {
            out.push(violation(field("eta_d"), "must lie in (0, 1]"));
        }
        if !(st.p_max >= 0.0 && st.p_max.is_finite()) {
            out.push(violation(field("p_max"), "must be finite and nonnegative"));
        }
        if !(st.e_min < st.e_max) {
            out.push(violation(field("e_min"), "e_min must be below e_max"));
        }
        if !(st.e_min <= st.e_init && st.e_init <= st.e_max) {
            out.push(violation(field("e_init"), "must lie in [e_min, e_max]"));
        }
        if !(st.gamma_lo >= 0.0) {
            out.push(violation(field("gamma_lo"), "price range must start at or above zero"));
        }
        if !(st.gamma_lo < st.gamma_hi * st.eta_c * st.eta_d) {
            out.push(violation(
                field("gamma_lo"),
                "need gamma_lo < gamma_hi*eta_c*eta_d so a round trip can be profitable",
            ));
        }
        if st.n_segments < 2 {
            out.push(violation(field("n_segments"), "need at least 2 bid points"));
        }
    }
    let horizon = case.load_series.len();
    if case.renewable_series.len() != horizon {
        out.push(violation("renewable_series".into(), "must share the load series horizon"));
    }
    for (t, row) in case.load_series.iter().enumerate() {
        if row.len() != nb || row.iter().any(|v| !v.is_finite()) {
            out.push(violation(format!("load_series[{t}]"), "needs one finite demand per bus"));
            break;
        }
    }
    let n_ren = case.generators.iter().filter(|g| g.is_renewable).count();
    for (t, row) in case.renewable_series.iter().enumerate() {
        if row.len() != n_ren || row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            out.push(violation(format!("renewable_series[{t}]"), "needs one nonnegative value per renewable plant"));
            break;
        }
    }
    if !(case.tau > 0.0) {
        out.push(violation("tau".into(), "must be positive"));
    }
    if !(case.kappa >= 0.0) {
        out.push(violation("kappa".into(), "must be nonnegative"));
    }
    if !(case.epsilon > 0.0) {
        out.push(violation("epsilon".into(), "must be positive"));
    }
    if !(case.delta > 0.0 && case.delta <= 1.0) {
        out.push(violation("delta".into(), "must lie in (0, 1]"));
    }
    if !case.loss_offset.is_finite() {
        out.push(violation("loss_offset".into(), "must be finite"));
    }
    out
}

fn restricted_min(c: &PiecewiseLinearCurve, lo: f64, hi: f64) -> f64 {
    let mut best = c.value(lo).min(c.value(hi));
    for x in c.breakpoints() {
        if x > lo && x < hi {
            best = best.min(c.value(x));
        }
    }
    best
}

/// Validated case with shift factors. Read-only after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    data: CaseData,
    ptdf: Matrix,
    renewable_index: Vec<Option<usize>>,
}

impl NetworkCase {
    pub fn new(data: CaseData) -> Result<Self, NetworkError> {
        let violations = validate_case(&data);
        if !violations.is_empty() {
            return Err(NetworkError::Invalid(violations));
        }
        let nb = data.buses.len();
        let computed: Vec<(usize, usize, f64)> = data
            .branches
            .iter()
            .filter(|b| b.ptdf_row.is_none())
            .map(|b| (b.from, b.to, b.reactance.unwrap_or(0.0)))
            .collect();
        let mut ptdf = Matrix::zeros(data.branches.len(), nb);
        if !computed.is_empty() {
            let all: Vec<(usize, usize, f64)> = data
                .branches
                .iter()
                .filter_map(|b| b.reactance.map(|x| (b.from, b.to, x)))
                .collect();
            let t = compute_ptdf(nb, &all, data.slack_bus)?;
            let mut k = 0;
            for (l, b) in data.branches.iter().enumerate() {
                if b.reactance.is_some() {
                    for i in 0..nb {
                        ptdf.set(l, i, t.get(k, i));
                    }
                    k += 1;
                }
            }
        }
        for (l, b) in data.branches.iter().enumerate() {
            if let Some(row) = &b.ptdf_row {
                for (i, &v) in row.iter().enumerate() {
                    ptdf.set(l, i, v);
                }
            }
        }
        let mut k = 0;
        let renewable_index = data
            .generators
            .iter()
            .map(|g| {
                if g.is_renewable {
                    k += 1;
                    Some(k - 1)
                } else {
                    None
                }
            })
            .collect();
        Ok(NetworkCase { data, ptdf, renewable_index })
    }

    pub fn data(&self) -> &CaseData {
        &self.data
    }

    pub fn into_data(self) -> CaseData {
        self.data
    }

    /// Branches × buses.
    pub fn ptdf(&self) -> &Matrix {
        &self.ptdf
    }

    pub fn horizon(&self) -> usize {
        self.data.load_series.len()
    }

    /// Upper bound of generator `g` in `period`: the renewable series value
    /// for renewable plants, `p_max` otherwise.
    pub fn generator_p_max(&self, g: usize, period: usize) -> f64 {
        match self.renewable_index[g] {
            Some(k) => self.data.renewable_series[period][k],
            None => self.data.generators[g].p_max,
        }
    }

    pub fn demands(&self, period: usize) -> &[f64] {
        &self.data.load_series[period]
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.data.buses.iter().position(|b| b.id == id)
    }
}

impl Deref for NetworkCase {
    type Target = CaseData;
    fn deref(&self) -> &CaseData {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bus_single_line() {
        let t = compute_ptdf(2, &[(0, 1, 0.1)], 0).unwrap();
        assert_eq!(t.get(0, 0), 0.0);
        assert!((t.get(0, 1) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_splits_two_thirds_one_third() {
        // buses 0,1,2; slack 0; injection at 1 goes 1->0 directly (2/3) and 1->2->0 (1/3)
        let t = compute_ptdf(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)], 0).unwrap();
        assert!((t.get(0, 1) + 2.0 / 3.0).abs() < 1e-12);
        assert!((t.get(1, 1) - 1.0 / 3.0).abs() < 1e-12);
        assert!((t.get(2, 1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn topology_errors() {
        assert_eq!(
            compute_ptdf(3, &[(0, 1, 1.0)], 0).unwrap_err(),
            NetworkError::Disconnected { bus: 2 }
        );
        assert_eq!(
            compute_ptdf(2, &[(0, 1, 0.0)], 0).unwrap_err(),
            NetworkError::BadReactance { branch: 0 }
        );
    }
}
