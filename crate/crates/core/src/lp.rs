//! Revised simplex for standard-form problems `min cᵀx s.t. Ax = b, x ≥ 0`.
//!
//! The solver exposes the final basis (so callers can warm start and do
//! parametric analysis), the simplex multipliers and reduced costs.
//!
//! Basis entries `>= variable_count` denote artificial unit columns. They only
//! survive in a returned basis for rows that are linearly dependent on the
//! others, where they sit at zero.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{dot, norm_inf, LuFactor, Matrix};

pub const FEAS_TOL: f64 = 1e-9;
pub const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("basis matrix is numerically singular")]
    Singular,
    #[error("pivot limit of {0} reached")]
    IterationLimit(usize),
    #[error("parameter interval is empty for this basis")]
    EmptyInterval,
}

/// Immutable standard-form LP. The constraint matrix is shared so that
/// re-solving with a different right-hand side does not copy it.
#[derive(Debug, Clone)]
pub struct LpProblem {
    cost: Vec<f64>,
    matrix: Arc<Matrix>,
    rhs: Vec<f64>,
}

impl LpProblem {
    pub fn new(cost: Vec<f64>, matrix: Matrix, rhs: Vec<f64>) -> Result<Self, LpError> {
        Self::from_shared(cost, Arc::new(matrix), rhs)
    }

    pub fn from_shared(cost: Vec<f64>, matrix: Arc<Matrix>, rhs: Vec<f64>) -> Result<Self, LpError> {
        if cost.len() != matrix.cols() {
            return Err(LpError::Dimension("cost length differs from column count"));
        }
        if rhs.len() != matrix.rows() {
            return Err(LpError::Dimension("rhs length differs from row count"));
        }
        if !cost.iter().all(|v| v.is_finite()) {
            return Err(LpError::NonFinite("cost"));
        }
        if !rhs.iter().all(|v| v.is_finite()) {
            return Err(LpError::NonFinite("rhs"));
        }
        if !matrix.is_finite() {
            return Err(LpError::NonFinite("constraint matrix"));
        }
        Ok(LpProblem { cost, matrix, rhs })
    }

    /// Same cost and matrix, new right-hand side.
    pub fn with_rhs(&self, rhs: Vec<f64>) -> Result<Self, LpError> {
        Self::from_shared(self.cost.clone(), self.matrix.clone(), rhs)
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn shared_matrix(&self) -> Arc<Matrix> {
        self.matrix.clone()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn variable_count(&self) -> usize {
        self.matrix.cols()
    }

    pub fn constraint_count(&self) -> usize {
        self.matrix.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Length `variable_count`; the last vertex visited when not optimal.
    pub primal: Vec<f64>,
    /// Basic variable per row position.
    pub basis: Vec<usize>,
    /// Simplex multipliers `y = B⁻ᵀ c_B`, one per constraint.
    pub duals: Vec<f64>,
    /// `c − Aᵀy`, zero on basic columns.
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
    /// For infeasible problems: the row whose artificial carried the largest
    /// residual at the end of phase one.
    pub violated_row: Option<usize>,
    /// Some basic variable sits at zero (within the feasibility tolerance).
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
struct Eta {
    row: usize,
    col: Vec<f64>,
}

/// LU factor of a basis matrix plus product-form updates.
#[derive(Debug, Clone)]
pub struct BasisFactor {
    lu: LuFactor,
    etas: Vec<Eta>,
}

/// Column `j` of `[A | I]`.
fn column_into(a: &Matrix, j: usize, out: &mut [f64]) {
    let n = a.cols();
    if j < n {
        out.copy_from_slice(a.col(j));
    } else {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[j - n] = 1.0;
    }
}

impl BasisFactor {
    /// Factorizes the columns of `[A | I]` listed in `basis`.
    pub fn new(a: &Matrix, basis: &[usize]) -> Result<Self, LpError> {
        let m = a.rows();
        if basis.len() != m {
            return Err(LpError::Dimension("basis size differs from row count"));
        }
        let mut b = Matrix::zeros(m, m);
        for (pos, &j) in basis.iter().enumerate() {
            if j >= a.cols() + m {
                return Err(LpError::Dimension("basis index out of range"));
            }
            column_into(a, j, b.col_mut(pos));
        }
        let lu = LuFactor::new(&b).map_err(|_| LpError::Singular)?;
        Ok(BasisFactor { lu, etas: Vec::new() })
    }

    /// `B⁻¹ v`.
    pub fn ftran(&self, v: &[f64]) -> Vec<f64> {
        let mut x = self.lu.solve(v);
        for eta in &self.etas {
            let xr = x[eta.row] / eta.col[eta.row];
            if xr != 0.0 {
                for (xi, di) in x.iter_mut().zip(&eta.col) {
                    *xi -= di * xr;
                }
            }
            x[eta.row] = xr;
        }
        x
    }

    /// `B⁻ᵀ v`.
    pub fn btran(&self, v: &[f64]) -> Vec<f64> {
        let mut c = v.to_vec();
        for eta in self.etas.iter().rev() {
            let r = eta.row;
            let s = dot(&eta.col, &c) - eta.col[r] * c[r];
            c[r] = (c[r] - s) / eta.col[r];
        }
        self.lu.solve_transpose(&c)
    }

    fn update(&mut self, row: usize, col: Vec<f64>) {
        self.etas.push(Eta { row, col });
    }

    fn eta_count(&self) -> usize {
        self.etas.len()
    }
}

/// Closed interval of a scalar parameter; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, y: f64, tol: f64) -> bool {
        y >= self.lower - tol && y <= self.upper + tol
    }
}

/// Range of `y` over which `B⁻¹(y·direction + offset) ≥ 0`, given
/// `direction` and `offset` already in row space. Endpoints are the exact
/// roots; the interval is reported empty only if no `y` keeps every component
/// above `−FEAS_TOL`.
pub fn basic_solution_interval(
    factor: &BasisFactor,
    direction: &[f64],
    offset: &[f64],
) -> Result<Interval, LpError> {
    let u = factor.ftran(offset);
    let v = factor.ftran(direction);
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    let mut tol_lower = f64::NEG_INFINITY;
    let mut tol_upper = f64::INFINITY;
    let scale = norm_inf(&v).max(1.0);
    for (ui, vi) in u.iter().zip(&v) {
        if vi.abs() <= 1e-13 * scale {
            if *ui < -FEAS_TOL {
                return Err(LpError::EmptyInterval);
            }
        } else if *vi > 0.0 {
            lower = lower.max(-ui / vi);
            tol_lower = tol_lower.max((-FEAS_TOL - ui) / vi);
        } else {
            upper = upper.min(-ui / vi);
            tol_upper = tol_upper.min((-FEAS_TOL - ui) / vi);
        }
    }
    if tol_lower > tol_upper {
        return Err(LpError::EmptyInterval);
    }
    if lower > upper {
        // degenerate vertex: the exact interval collapses to a point
        let mid = 0.5 * (lower + upper);
        return Ok(Interval { lower: mid, upper: mid });
    }
    Ok(Interval { lower, upper })
}

/// The maximal `y`-interval on which `basis` stays primal feasible for the
/// right-hand side `G·(y·ray) + H`.
pub fn feasibility_interval(
    basis: &[usize],
    a: &Matrix,
    g: &Matrix,
    h: &[f64],
    ray: &[f64],
) -> Result<Interval, LpError> {
    if g.rows() != a.rows() || h.len() != a.rows() || ray.len() != g.cols() {
        return Err(LpError::Dimension("parametric data does not match the matrix"));
    }
    let factor = BasisFactor::new(a, basis)?;
    basic_solution_interval(&factor, &g.mul_vec(ray), h)
}

/// Cold solve.
pub fn solve(problem: &LpProblem) -> Result<LpSolution, LpError> {
    let mut engine = Engine::cold(problem)?;
    engine.run_cold()
}

/// Solve starting from `start_basis`. Falls back to a cold solve whenever the
/// basis is unusable (wrong size, singular, or neither primal nor dual
/// feasible).
pub fn solve_with_basis(problem: &LpProblem, start_basis: &[usize]) -> Result<LpSolution, LpError> {
    match Engine::warm(problem, start_basis) {
        Some(mut engine) => match engine.run_warm()? {
            Some(sol) => Ok(sol),
            None => solve(problem),
        },
        None => solve(problem),
    }
}

enum Outcome {
    Optimal,
    Unbounded,
    Infeasible,
}

struct Engine<'a> {
    p: &'a LpProblem,
    n: usize,
    m: usize,
    sign: Vec<f64>,
    b: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    factor: BasisFactor,
    xb: Vec<f64>,
    pivots: usize,
    limit: usize,
    trace: bool,
    phase: u8,
}

impl<'a> Engine<'a> {
    fn new_raw(p: &'a LpProblem, sign: Vec<f64>, basis: Vec<usize>) -> Result<Self, LpError> {
        let n = p.variable_count();
        let m = p.constraint_count();
        let b: Vec<f64> = p.rhs().iter().zip(&sign).map(|(v, s)| v * s).collect();
        let mut is_basic = vec![false; n + m];
        for &j in &basis {
            is_basic[j] = true;
        }
        let factor = Self::factor_for(p.matrix(), &sign, &basis)?;
        let xb = factor.ftran(&b);
        Ok(Engine {
            p,
            n,
            m,
            sign,
            b,
            basis,
            is_basic,
            factor,
            xb,
            pivots: 0,
            limit: 50 * (n + m) + 1000,
            trace: trace_enabled(),
            phase: 2,
        })
    }

    fn factor_for(a: &Matrix, sign: &[f64], basis: &[usize]) -> Result<BasisFactor, LpError> {
        let m = a.rows();
        let n = a.cols();
        let mut bm = Matrix::zeros(m, m);
        for (pos, &j) in basis.iter().enumerate() {
            let col = bm.col_mut(pos);
            if j < n {
                for (i, (c, a)) in col.iter_mut().zip(a.col(j)).enumerate() {
                    *c = a * sign[i];
                }
            } else {
                col[j - n] = 1.0;
            }
        }
        let lu = LuFactor::new(&bm).map_err(|_| LpError::Singular)?;
        Ok(BasisFactor { lu, etas: Vec::new() })
    }

    /// Row signs chosen so the right-hand side is nonnegative, and a crash
    /// basis made of unit columns where available, artificials elsewhere.
    fn cold(p: &'a LpProblem) -> Result<Self, LpError> {
        let n = p.variable_count();
        let m = p.constraint_count();
        let a = p.matrix();
        // unit columns: (row, coefficient)
        let mut unit_for_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for j in 0..n {
            let mut hit = None;
            let mut count = 0;
            for (i, &v) in a.col(j).iter().enumerate() {
                if v != 0.0 {
                    count += 1;
                    hit = Some((i, v));
                }
            }
            if count == 1 {
                let (i, v) = hit.unwrap();
                unit_for_row[i].push((j, v));
            }
        }
        let mut sign = vec![1.0; m];
        let mut basis = vec![0; m];
        let mut used = vec![false; n];
        for i in 0..m {
            let bi = p.rhs()[i];
            let want_positive_coef = bi > 0.0;
            let pick = unit_for_row[i].iter().find(|&&(j, v)| {
                !used[j]
                    && if bi == 0.0 {
                        true
                    } else {
                        (v > 0.0) == want_positive_coef
                    }
            });
            match pick {
                Some(&(j, v)) => {
                    sign[i] = if v > 0.0 { 1.0 } else { -1.0 };
                    used[j] = true;
                    basis[i] = j;
                }
                None => {
                    sign[i] = if bi < 0.0 { -1.0 } else { 1.0 };
                    basis[i] = n + i;
                }
            }
        }
        Self::new_raw(p, sign, basis)
    }

    fn warm(p: &'a LpProblem, start: &[usize]) -> Option<Self> {
        let n = p.variable_count();
        let m = p.constraint_count();
        if start.len() != m {
            return None;
        }
        let mut seen = vec![false; n + m];
        for &j in start {
            if j >= n + m || seen[j] {
                return None;
            }
            seen[j] = true;
        }
        Self::new_raw(p, vec![1.0; m], start.to_vec()).ok()
    }

    fn internal_col(&self, j: usize, out: &mut [f64]) {
        if j < self.n {
            for (i, (o, a)) in out.iter_mut().zip(self.p.matrix().col(j)).enumerate() {
                *o = a * self.sign[i];
            }
        } else {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[j - self.n] = 1.0;
        }
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        self.factor = Self::factor_for(self.p.matrix(), &self.sign, &self.basis)?;
        self.xb = self.factor.ftran(&self.b);
        Ok(())
    }

    fn cost_of(&self, j: usize, phase1: bool) -> f64 {
        if phase1 {
            if j >= self.n {
                1.0
            } else {
                0.0
            }
        } else if j < self.n {
            self.p.cost()[j]
        } else {
            0.0
        }
    }

    /// Multipliers in original row space (`sign ∘ y'`).
    fn multipliers(&self, phase1: bool) -> Vec<f64> {
        let cb: Vec<f64> = self.basis.iter().map(|&j| self.cost_of(j, phase1)).collect();
        let y = self.factor.btran(&cb);
        y.iter().zip(&self.sign).map(|(v, s)| v * s).collect()
    }

    fn reduced_cost(&self, j: usize, y_orig: &[f64], phase1: bool) -> f64 {
        self.cost_of(j, phase1) - dot(self.p.matrix().col(j), y_orig)
    }

    fn pivot(&mut self, r: usize, q: usize, w: Vec<f64>, theta: f64) {
        for (x, wi) in self.xb.iter_mut().zip(&w) {
            *x -= theta * wi;
        }
        self.xb[r] = theta;
        for x in self.xb.iter_mut() {
            if *x < 0.0 && *x > -FEAS_TOL {
                *x = 0.0;
            }
        }
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
        self.factor.update(r, w);
        self.pivots += 1;
        if self.trace {
            trace_line(self.phase, self.pivots, q, leaving, theta);
        }
    }

    fn check_limit(&self) -> Result<(), LpError> {
        if self.pivots >= self.limit {
            Err(LpError::IterationLimit(self.limit))
        } else {
            Ok(())
        }
    }

    fn primal(&mut self, phase1: bool) -> Result<Outcome, LpError> {
        let mut zero_steps = 0usize;
        let mut fresh = false;
        let mut w = vec![0.0; self.m];
        loop {
            self.check_limit()?;
            if self.factor.eta_count() >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let bland = zero_steps > 3 * self.m;
            let y = self.multipliers(phase1);
            let mut entering = None;
            let mut best = -OPT_TOL;
            for j in 0..self.n {
                if self.is_basic[j] {
                    continue;
                }
                let d = self.reduced_cost(j, &y, phase1);
                if d < -OPT_TOL {
                    if bland {
                        entering = Some(j);
                        break;
                    }
                    if d < best {
                        best = d;
                        entering = Some(j);
                    }
                }
            }
            let Some(q) = entering else {
                if fresh || self.factor.eta_count() == 0 {
                    return Ok(Outcome::Optimal);
                }
                self.refactor()?;
                fresh = true;
                continue;
            };
            fresh = false;
            self.internal_col(q, &mut w);
            let d = self.factor.ftran(&w);
            let Some((r, theta)) = self.ratio_test(&d, bland) else {
                return Ok(Outcome::Unbounded);
            };
            if theta <= 1e-12 {
                zero_steps += 1;
            } else {
                zero_steps = 0;
            }
            self.pivot(r, q, d, theta);
        }
    }

    fn ratio_test(&self, d: &[f64], bland: bool) -> Option<(usize, f64)> {
        if bland {
            let mut best: Option<(usize, f64)> = None;
            for (i, &di) in d.iter().enumerate() {
                if di > PIVOT_TOL {
                    let t = self.xb[i].max(0.0) / di;
                    best = match best {
                        None => Some((i, t)),
                        Some((bi, bt)) => {
                            if t < bt - 1e-12 || (t <= bt + 1e-12 && self.basis[i] < self.basis[bi]) {
                                Some((i, t))
                            } else {
                                Some((bi, bt))
                            }
                        }
                    };
                }
            }
            return best;
        }
        // Harris two-pass
        let mut bound = f64::INFINITY;
        for (i, &di) in d.iter().enumerate() {
            if di > PIVOT_TOL {
                bound = bound.min((self.xb[i].max(0.0) + FEAS_TOL) / di);
            }
        }
        if !bound.is_finite() {
            return None;
        }
        if self.phase != 1 {
            // a zero artificial left in phase two must not move away from zero
            if let Some(i) = (0..self.m).find(|&i| self.basis[i] >= self.n && d[i] < -PIVOT_TOL) {
                return Some((i, 0.0));
            }
        }
        let mut pick: Option<usize> = None;
        for (i, &di) in d.iter().enumerate() {
            if di > PIVOT_TOL && self.xb[i].max(0.0) / di <= bound {
                if pick.map_or(true, |p| di > d[p]) {
                    pick = Some(i);
                }
            }
        }
        pick.map(|r| (r, (self.xb[r].max(0.0) / d[r]).max(0.0)))
    }

    /// Dual simplex from a dual-feasible basis.
    fn dual(&mut self) -> Result<Outcome, LpError> {
        let mut zero_steps = 0usize;
        let mut w = vec![0.0; self.m];
        let mut unit = vec![0.0; self.m];
        loop {
            self.check_limit()?;
            if self.factor.eta_count() >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let bland = zero_steps > 3 * self.m;
            let mut leave: Option<usize> = None;
            for (i, &x) in self.xb.iter().enumerate() {
                if x < -FEAS_TOL {
                    leave = match leave {
                        None => Some(i),
                        Some(l) => {
                            let better = if bland { self.basis[i] < self.basis[l] } else { x < self.xb[l] };
                            Some(if better { i } else { l })
                        }
                    };
                }
            }
            let Some(r) = leave else {
                return Ok(Outcome::Optimal);
            };
            let y = self.multipliers(false);
            unit.iter_mut().for_each(|v| *v = 0.0);
            unit[r] = 1.0;
            let rho: Vec<f64> = self.factor.btran(&unit).iter().zip(&self.sign).map(|(v, s)| v * s).collect();
            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..self.n {
                if self.is_basic[j] {
                    continue;
                }
                let alpha = dot(self.p.matrix().col(j), &rho);
                if alpha < -PIVOT_TOL {
                    let dj = self.reduced_cost(j, &y, false).max(0.0);
                    let ratio = dj / -alpha;
                    entering = match entering {
                        None => Some((j, ratio, alpha)),
                        Some((bj, br, ba)) => {
                            let better = if bland {
                                ratio < br - 1e-12 || (ratio <= br + 1e-12 && j < bj)
                            } else {
                                ratio < br - 1e-12 || (ratio <= br + 1e-12 && alpha.abs() > ba.abs())
                            };
                            Some(if better { (j, ratio, alpha) } else { (bj, br, ba) })
                        }
                    };
                }
            }
            let Some((q, ratio, _)) = entering else {
                return Ok(Outcome::Infeasible);
            };
            if ratio <= 1e-12 {
                zero_steps += 1;
            } else {
                zero_steps = 0;
            }
            self.internal_col(q, &mut w);
            let d = self.factor.ftran(&w);
            if d[r].abs() <= PIVOT_TOL {
                // factor drift; refresh and retry
                self.refactor()?;
                zero_steps += 1;
                continue;
            }
            let theta = self.xb[r] / d[r];
            for (x, di) in self.xb.iter_mut().zip(&d) {
                *x -= theta * di;
            }
            self.xb[r] = theta;
            let leaving = self.basis[r];
            self.is_basic[leaving] = false;
            self.is_basic[q] = true;
            self.basis[r] = q;
            self.factor.update(r, d);
            self.pivots += 1;
            if self.trace {
                trace_line(3, self.pivots, q, leaving, theta);
            }
        }
    }

    fn artificial_residual(&self) -> (f64, Option<usize>) {
        let mut total = 0.0;
        let mut worst: Option<(usize, f64)> = None;
        for (pos, &j) in self.basis.iter().enumerate() {
            if j >= self.n {
                let v = self.xb[pos].abs();
                total += v;
                if worst.map_or(true, |(_, w)| v > w) {
                    worst = Some((j - self.n, v));
                }
            }
        }
        (total, worst.map(|(row, _)| row))
    }

    /// Pivots zero-valued artificials out of the basis where a structural
    /// column can replace them; the rest mark redundant rows.
    fn drive_out_artificials(&mut self) -> Result<(), LpError> {
        let mut unit = vec![0.0; self.m];
        let mut w = vec![0.0; self.m];
        for pos in 0..self.m {
            if self.basis[pos] < self.n {
                continue;
            }
            unit.iter_mut().for_each(|v| *v = 0.0);
            unit[pos] = 1.0;
            let rho: Vec<f64> = self.factor.btran(&unit).iter().zip(&self.sign).map(|(v, s)| v * s).collect();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if self.is_basic[j] {
                    continue;
                }
                let alpha = dot(self.p.matrix().col(j), &rho).abs();
                if alpha > 1e-7 && best.map_or(true, |(_, b)| alpha > b) {
                    best = Some((j, alpha));
                }
            }
            if let Some((q, _)) = best {
                self.internal_col(q, &mut w);
                let d = self.factor.ftran(&w);
                let theta = self.xb[pos] / d[pos];
                self.pivot(pos, q, d, theta);
            }
        }
        Ok(())
    }

    fn run_cold(&mut self) -> Result<LpSolution, LpError> {
        let scale = norm_inf(&self.b).max(1.0);
        if self.basis.iter().any(|&j| j >= self.n) {
            self.phase = 1;
            self.primal(true)?;
            self.refactor()?;
            let (resid, row) = self.artificial_residual();
            if resid > 1e-8 * scale {
                return Ok(self.finish(LpStatus::Infeasible, row));
            }
            self.drive_out_artificials()?;
            self.refactor()?;
        }
        self.phase = 2;
        self.phase_two()
    }

    fn phase_two(&mut self) -> Result<LpSolution, LpError> {
        for _ in 0..4 {
            match self.primal(false)? {
                Outcome::Unbounded => return Ok(self.finish(LpStatus::Unbounded, None)),
                Outcome::Infeasible => unreachable!(),
                Outcome::Optimal => {}
            }
            self.refactor()?;
            if self.xb.iter().all(|&x| x >= -FEAS_TOL) {
                return Ok(self.finish(LpStatus::Optimal, None));
            }
            // drift pushed a basic variable negative; repair with dual steps
            if let Outcome::Infeasible = self.dual()? {
                return Ok(self.finish(LpStatus::Infeasible, None));
            }
        }
        Err(LpError::Singular)
    }

    /// Returns `None` when the start basis cannot be used and a cold solve is
    /// required.
    fn run_warm(&mut self) -> Result<Option<LpSolution>, LpError> {
        let artificial_ok = self
            .basis
            .iter()
            .zip(&self.xb)
            .all(|(&j, &x)| j < self.n || x.abs() <= FEAS_TOL);
        if !artificial_ok {
            return Ok(None);
        }
        let primal_ok = self.xb.iter().all(|&x| x >= -FEAS_TOL);
        if primal_ok {
            return self.phase_two().map(Some);
        }
        let y = self.multipliers(false);
        let dual_ok = (0..self.n).all(|j| self.is_basic[j] || self.reduced_cost(j, &y, false) >= -OPT_TOL);
        if !dual_ok {
            return Ok(None);
        }
        self.phase = 3;
        match self.dual()? {
            Outcome::Optimal => self.phase_two().map(Some),
            // a dual ray certifies infeasibility only up to round-off; confirm cold
            _ => Ok(None),
        }
    }

    fn finish(&self, status: LpStatus, violated_row: Option<usize>) -> LpSolution {
        let mut primal = vec![0.0; self.n];
        for (&j, &x) in self.basis.iter().zip(&self.xb) {
            if j < self.n {
                primal[j] = x.max(0.0);
            }
        }
        let y = self.multipliers(false);
        let reduced_costs: Vec<f64> = (0..self.n)
            .map(|j| if self.is_basic[j] { 0.0 } else { self.reduced_cost(j, &y, false) })
            .collect();
        let objective = dot(self.p.cost(), &primal);
        let degenerate = self.xb.iter().any(|&x| x.abs() <= FEAS_TOL);
        LpSolution {
            status,
            primal,
            basis: self.basis.clone(),
            duals: y,
            reduced_costs,
            objective,
            pivots: self.pivots,
            violated_row,
            degenerate,
        }
    }
}

#[cfg(feature = "std")]
fn trace_enabled() -> bool {
    extern crate std;
    std::env::var_os("CARBOMARKET_LP_TRACE").is_some_and(|v| !v.is_empty() && v != "0")
}

#[cfg(not(feature = "std"))]
fn trace_enabled() -> bool {
    false
}

#[cfg(feature = "std")]
fn trace_line(phase: u8, pivot: usize, entering: usize, leaving: usize, step: f64) {
    extern crate std;
    std::eprintln!("lp-trace phase={phase} pivot={pivot} enter={entering} leave={leaving} step={step:e}");
}

#[cfg(not(feature = "std"))]
fn trace_line(_phase: u8, _pivot: usize, _entering: usize, _leaving: usize, _step: f64) {}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn lp(c: Vec<f64>, rows: &[Vec<f64>], b: Vec<f64>) -> LpProblem {
        LpProblem::new(c, Matrix::from_rows(rows), b).unwrap()
    }

    #[test]
    fn one_constraint_lp() {
        let p = lp(vec![1.0, 0.0], &[vec![1.0, 1.0]], vec![1.0]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.primal, vec![0.0, 1.0]);
        assert_eq!(s.objective, 0.0);
        assert_eq!(s.basis, vec![1]);
    }

    #[test]
    fn single_bound_binds_with_dual_minus_one() {
        let p = lp(vec![-1.0, 0.0], &[vec![1.0, 1.0]], vec![1.0]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.primal[0] - 1.0).abs() < 1e-12);
        assert!((s.objective + 1.0).abs() < 1e-12);
        assert!((s.duals[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded_statuses() {
        // x1 + x2 = -1 with x >= 0
        let p = lp(vec![1.0, 1.0], &[vec![1.0, 1.0]], vec![-1.0]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Infeasible);
        assert_eq!(s.violated_row, Some(0));
        // min -x1 s.t. x1 - x2 = 0
        let p = lp(vec![-1.0, 0.0], &[vec![1.0, -1.0]], vec![0.0]);
        assert_eq!(solve(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn redundant_row_keeps_artificial() {
        let p = lp(
            vec![1.0, 2.0, 0.0],
            &[vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0]],
            vec![1.0, 2.0],
        );
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(s.objective.abs() < 1e-12);
        assert!(s.basis.iter().any(|&j| j >= 3));
        let again = solve_with_basis(&p, &s.basis).unwrap();
        assert_eq!(again.pivots, 0);
    }

    #[test]
    fn interval_of_one_linear_root() {
        // basic variable x = 1 - y: A = [1], G = [-1], H = [1]
        let a = Matrix::from_rows(&[vec![1.0]]);
        let g = Matrix::from_rows(&[vec![-1.0]]);
        let iv = feasibility_interval(&[0], &a, &g, &[1.0], &[1.0]).unwrap();
        assert_eq!(iv.lower, f64::NEG_INFINITY);
        assert!((iv.upper - 1.0).abs() < 1e-8);
        let iv = feasibility_interval(&[0], &a, &Matrix::zeros(1, 1), &[2.0], &[1.0]).unwrap();
        assert_eq!(iv.lower, f64::NEG_INFINITY);
        assert_eq!(iv.upper, f64::INFINITY);
    }
}
