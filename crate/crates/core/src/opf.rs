//! Standard-form assembly of the weighted DC-OPF.
//!
//! Every agent `k` gets a shifted power column `x_k = p_k − p_min_k`. A cost
//! or emission curve with several pieces gets an epigraph column
//! `f̂_k = f_k − min f_k` and one row per piece; a single-piece curve is
//! substituted directly into the objective. Inequalities carry explicit
//! slack columns. The right-hand side is affine in the bus demands:
//! `b = G·D + H`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::curve::PiecewiseLinearCurve;
use crate::linalg::Matrix;

/// One dispatchable participant as seen by the OPF.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub bus: usize,
    /// $/h.
    pub cost: PiecewiseLinearCurve,
    /// kgCO2/h; `None` for agents without emissions.
    pub emission: Option<PiecewiseLinearCurve>,
    pub p_min: f64,
    pub p_max: f64,
}

/// Network data the assembly needs.
#[derive(Debug, Clone, Copy)]
pub struct Grid<'a> {
    pub bus_count: usize,
    pub ptdf: &'a Matrix,
    pub capacities: &'a [f64],
    /// Effective `L_i` per bus.
    pub losses: &'a [f64],
    pub loss_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Balance,
    BranchUpper(usize),
    BranchLower(usize),
    Bound(usize),
    CostPiece(usize),
    EmissionPiece(usize),
    Extra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Power(usize),
    CostEpigraph(usize),
    EmissionEpigraph(usize),
    Slack(usize),
    Extra,
}

#[derive(Debug, Clone)]
pub struct Formulation {
    pub matrix: Arc<Matrix>,
    /// Bid-cost coefficient per column ($/h per unit).
    pub cost_coef: Vec<f64>,
    pub cost_offset: f64,
    /// Emission coefficient per column (kgCO2/h per unit).
    pub emission_coef: Vec<f64>,
    pub emission_offset: f64,
    /// Rows × buses.
    pub g: Matrix,
    pub h: Vec<f64>,
    pub rows: Vec<RowKind>,
    pub columns: Vec<ColumnKind>,
    /// Power column per agent.
    pub power_col: Vec<usize>,
    pub p_min: Vec<f64>,
    pub balance_row: usize,
    pub branch_rows: Vec<Option<(usize, usize)>>,
}

impl Formulation {
    /// Objective `cost + ε·emission` per column.
    pub fn objective(&self, epsilon: f64) -> Vec<f64> {
        self.cost_coef.iter().zip(&self.emission_coef).map(|(c, e)| c + epsilon * e).collect()
    }

    pub fn rhs(&self, demand: &[f64]) -> Vec<f64> {
        let mut b = self.g.mul_vec(demand);
        for (bi, hi) in b.iter_mut().zip(&self.h) {
            *bi += hi;
        }
        b
    }

    pub fn dispatch(&self, x: &[f64]) -> Vec<f64> {
        self.power_col.iter().zip(&self.p_min).map(|(&c, pm)| pm + x[c]).collect()
    }

    pub fn emission(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.emission_coef, x) + self.emission_offset
    }

    pub fn bid_cost(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.cost_coef, x) + self.cost_offset
    }
}

struct Builder {
    rows: Vec<RowKind>,
    h: Vec<f64>,
    g_rows: Vec<Vec<f64>>,
    // sparse column entries (row, value)
    cols: Vec<Vec<(usize, f64)>>,
    kinds: Vec<ColumnKind>,
    cost: Vec<f64>,
    emis: Vec<f64>,
}

impl Builder {
    fn row(&mut self, kind: RowKind, h: f64, g: Vec<f64>) -> usize {
        self.rows.push(kind);
        self.h.push(h);
        self.g_rows.push(g);
        self.rows.len() - 1
    }

    fn col(&mut self, kind: ColumnKind) -> usize {
        self.cols.push(Vec::new());
        self.kinds.push(kind);
        self.cost.push(0.0);
        self.emis.push(0.0);
        self.cols.len() - 1
    }

    fn put(&mut self, row: usize, col: usize, v: f64) {
        self.cols[col].push((row, v));
    }
}

/// Assembles the standard form. Demand enters only through `G`; agents are
/// fixed at their bounds only if the caller sets `p_min = p_max`.
pub fn assemble(agents: &[Agent], grid: &Grid<'_>) -> Formulation {
    let nb = grid.bus_count;
    let mut b = Builder {
        rows: Vec::new(),
        h: Vec::new(),
        g_rows: Vec::new(),
        cols: Vec::new(),
        kinds: Vec::new(),
        cost: Vec::new(),
        emis: Vec::new(),
    };
    let power_col: Vec<usize> = (0..agents.len()).map(|k| b.col(ColumnKind::Power(k))).collect();
    let p_min: Vec<f64> = agents.iter().map(|a| a.p_min).collect();

    // balance: Σ(1−L)(p_min + x) = Σ(1−L)D + L0
    let g_bal: Vec<f64> = grid.losses.iter().map(|l| 1.0 - l).collect();
    let shift: f64 = agents.iter().map(|a| (1.0 - grid.losses[a.bus]) * a.p_min).sum();
    let balance_row = b.row(RowKind::Balance, grid.loss_offset - shift, g_bal);
    for (k, a) in agents.iter().enumerate() {
        b.put(balance_row, power_col[k], 1.0 - grid.losses[a.bus]);
    }

    // branches: ±(T·inj − T·D) ≤ F
    let mut branch_rows = Vec::with_capacity(grid.capacities.len());
    for (l, &cap) in grid.capacities.iter().enumerate() {
        if !cap.is_finite() {
            branch_rows.push(None);
            continue;
        }
        let t_row: Vec<f64> = (0..nb).map(|i| grid.ptdf.get(l, i)).collect();
        let shift: f64 = agents.iter().map(|a| t_row[a.bus] * a.p_min).sum();
        let up = b.row(RowKind::BranchUpper(l), cap - shift, t_row.clone());
        let lo = b.row(RowKind::BranchLower(l), cap + shift, t_row.iter().map(|v| -v).collect());
        for (k, a) in agents.iter().enumerate() {
            let t = t_row[a.bus];
            if t != 0.0 {
                b.put(up, power_col[k], t);
                b.put(lo, power_col[k], -t);
            }
        }
        let su = b.col(ColumnKind::Slack(up));
        b.put(up, su, 1.0);
        let sl = b.col(ColumnKind::Slack(lo));
        b.put(lo, sl, 1.0);
        branch_rows.push(Some((up, lo)));
    }

    // bounds and curve epigraphs
    let mut cost_offset = 0.0;
    let mut emission_offset = 0.0;
    for (k, a) in agents.iter().enumerate() {
        let x = power_col[k];
        let r = b.row(RowKind::Bound(k), a.p_max - a.p_min, vec![0.0; nb]);
        b.put(r, x, 1.0);
        let s = b.col(ColumnKind::Slack(r));
        b.put(r, s, 1.0);

        let (coef, offset) = epigraph(&mut b, &a.cost, a, x, RowKind::CostPiece(k), ColumnKind::CostEpigraph(k), nb);
        for (col, v) in coef {
            b.cost[col] += v;
        }
        cost_offset += offset;
        if let Some(em) = &a.emission {
            let (coef, offset) =
                epigraph(&mut b, em, a, x, RowKind::EmissionPiece(k), ColumnKind::EmissionEpigraph(k), nb);
            for (col, v) in coef {
                b.emis[col] += v;
            }
            emission_offset += offset;
        }
    }

    let m = b.rows.len();
    let n = b.cols.len();
    let mut matrix = Matrix::zeros(m, n);
    for (j, entries) in b.cols.iter().enumerate() {
        for &(i, v) in entries {
            matrix.add_to(i, j, v);
        }
    }
    let g = Matrix::from_rows(&b.g_rows);
    Formulation {
        matrix: Arc::new(matrix),
        cost_coef: b.cost,
        cost_offset,
        emission_coef: b.emis,
        emission_offset,
        g,
        h: b.h,
        rows: b.rows,
        columns: b.kinds,
        power_col,
        p_min,
        balance_row,
        branch_rows,
    }
}

/// Adds the rows/columns representing `curve(p_min + x)` and returns the
/// linear expression (column coefficients plus constant) that equals it at
/// the optimum.
fn epigraph(
    b: &mut Builder,
    curve: &PiecewiseLinearCurve,
    agent: &Agent,
    x: usize,
    row_kind: RowKind,
    col_kind: ColumnKind,
    nb: usize,
) -> (Vec<(usize, f64)>, f64) {
    let lo = agent.p_min;
    let hi = agent.p_max.max(lo);
    let c = PiecewiseLinearCurve::new(curve.segments().to_vec(), lo, hi)
        .expect("bounds are finite")
        .normalized();
    let segs = c.segments();
    if segs.len() == 1 {
        let s = segs[0];
        return (vec![(x, s.slope)], s.at(lo));
    }
    let floor = c.min_value();
    let f = b.col(col_kind);
    for seg in segs {
        // f̂ − α x − s = β + α p_min − floor
        let r = b.row(row_kind, seg.at(lo) - floor, vec![0.0; nb]);
        b.put(r, f, 1.0);
        if seg.slope != 0.0 {
            b.put(r, x, -seg.slope);
        }
        let s = b.col(ColumnKind::Slack(r));
        b.put(r, s, -1.0);
    }
    (vec![(f, 1.0)], floor)
}
