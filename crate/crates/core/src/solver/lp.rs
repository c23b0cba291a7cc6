//! Bounded-variable simplex engine: primal two-phase solves from scratch,
//! dual reoptimization for warm starts after bound changes and row additions.
//!
//! Rows are held in equality form `a'x + s = rhs` with the row sense encoded
//! in the slack bounds. The basis inverse is kept explicitly (dense) and
//! updated by rank-one pivots with periodic refactorization; every answer is
//! verified against the raw row data before it is reported. Instances here
//! are small (a few thousand nonzeros), so determinism and transparency win
//! over sparse-factorization speed.

use super::SolverError;

pub const INF: f64 = f64::INFINITY;

/// Feasibility tolerance on variable bounds and row activities.
const FEAS_TOL: f64 = 1e-7;
/// Reduced-cost tolerance for entering candidates.
const COST_TOL: f64 = 1e-7;
/// Smallest usable pivot magnitude.
const PIVOT_TOL: f64 = 1e-9;
/// Ratio-test tie window.
const RATIO_TIE: f64 = 1e-9;
/// Degenerate iterations before switching to Bland's rule.
const STALL_LIMIT: usize = 120;
const REFRESH_EVERY: usize = 64;
const REFACTOR_EVERY: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A linear program in natural form: min c'x subject to rows and variable
/// bounds (`-inf`/`inf` allowed).
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LinearRow>,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub(crate) fn check_finite(&self) -> Result<(), SolverError> {
        if self.lower.len() != self.num_vars() || self.upper.len() != self.num_vars() {
            return Err(SolverError::InvalidModel(
                "bounds length does not match objective".into(),
            ));
        }
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(SolverError::InvalidModel(format!(
                "objective coefficient {j} is not finite"
            )));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(SolverError::InvalidModel(format!("row {r} rhs is not finite")));
            }
            for &(j, a) in &row.coeffs {
                if !a.is_finite() {
                    return Err(SolverError::InvalidModel(format!(
                        "row {r} coefficient on variable {j} is not finite"
                    )));
                }
                if j >= self.num_vars() {
                    return Err(SolverError::InvalidModel(format!(
                        "row {r} references unknown variable {j}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Nonbasic free variable pinned at zero.
    FreeZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// A basic optimal solution with its dual certificate.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row multipliers y with reduced costs d = c - A'y.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

/// Solves an LP from scratch and returns a basic optimal solution or the
/// infeasible/unbounded verdict. Numerical failure is an explicit error.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome, SolverError> {
    lp.check_finite()?;
    let mut simplex = Simplex::from_lp(lp);
    match simplex.solve_fresh()? {
        LpStatus::Optimal => Ok(LpOutcome::Optimal(simplex.solution())),
        LpStatus::Infeasible => Ok(LpOutcome::Infeasible),
        LpStatus::Unbounded => Ok(LpOutcome::Unbounded),
    }
}

enum PrimalEnd {
    Optimal,
    Unbounded,
}

enum DualEnd {
    PrimalFeasible,
    Infeasible,
}

pub struct Simplex {
    nstruct: usize,
    nrows: usize,
    /// Column-major coefficients, including slacks and artificials.
    cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    slack_of_row: Vec<usize>,
    artificial_of_row: Vec<Option<usize>>,
    is_artificial: Vec<bool>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    x: Vec<f64>,
    binv: Vec<f64>,
    phase1: bool,
    bland: bool,
    stall: usize,
    last_phase_obj: f64,
    pivots_since_refresh: usize,
    pivots_since_refactor: usize,
    pub iterations: u64,
    pub iteration_limit: u64,
}

impl Simplex {
    pub fn from_lp(lp: &LinearProgram) -> Simplex {
        let nstruct = lp.num_vars();
        let nrows = lp.rows.len();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nstruct];
        let mut rhs = Vec::with_capacity(nrows);
        for (r, row) in lp.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                if a != 0.0 {
                    cols[j].push((r, a));
                }
            }
            rhs.push(row.rhs);
        }
        let mut cost = lp.objective.clone();
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        let mut slack_of_row = Vec::with_capacity(nrows);
        for (r, row) in lp.rows.iter().enumerate() {
            let id = cols.len();
            cols.push(vec![(r, 1.0)]);
            cost.push(0.0);
            let (lo, hi) = match row.sense {
                Sense::Le => (0.0, INF),
                Sense::Ge => (-INF, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            lower.push(lo);
            upper.push(hi);
            slack_of_row.push(id);
        }
        let ncols = cols.len();
        Simplex {
            nstruct,
            nrows,
            cols,
            cost,
            lower,
            upper,
            rhs,
            slack_of_row,
            artificial_of_row: vec![None; nrows],
            is_artificial: vec![false; ncols],
            basis: Vec::new(),
            state: vec![VarState::AtLower; ncols],
            x: vec![0.0; ncols],
            binv: Vec::new(),
            phase1: false,
            bland: false,
            stall: 0,
            last_phase_obj: INF,
            pivots_since_refresh: 0,
            pivots_since_refactor: 0,
            iterations: 0,
            iteration_limit: 2_000_000,
        }
    }

    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn num_rows(&self) -> usize {
        self.nrows
    }

    pub fn value(&self, col: usize) -> f64 {
        self.x[col]
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn bounds(&self, col: usize) -> (f64, f64) {
        (self.lower[col], self.upper[col])
    }

    pub fn set_bounds(&mut self, col: usize, lo: f64, hi: f64) {
        self.lower[col] = lo;
        self.upper[col] = hi;
        match self.state[col] {
            VarState::Basic(_) => {}
            VarState::AtLower => {
                if lo.is_finite() {
                    self.x[col] = lo;
                } else {
                    let (st, v) = self.default_nonbasic(col);
                    self.state[col] = st;
                    self.x[col] = v;
                }
            }
            VarState::AtUpper => {
                if hi.is_finite() {
                    self.x[col] = hi;
                } else {
                    let (st, v) = self.default_nonbasic(col);
                    self.state[col] = st;
                    self.x[col] = v;
                }
            }
            VarState::FreeZero => {
                if lo > 0.0 || hi < 0.0 {
                    let (st, v) = self.default_nonbasic(col);
                    self.state[col] = st;
                    self.x[col] = v;
                }
            }
        }
    }

    /// Phase-2 objective value at the current point.
    pub fn objective_value(&self) -> f64 {
        self.cost.iter().zip(&self.x).map(|(c, v)| c * v).sum()
    }

    fn phase_objective(&self) -> f64 {
        if self.phase1 {
            (0..self.num_cols())
                .filter(|&j| self.is_artificial[j])
                .map(|j| self.x[j])
                .sum()
        } else {
            self.objective_value()
        }
    }

    fn active_cost(&self, j: usize) -> f64 {
        if self.phase1 {
            if self.is_artificial[j] {
                1.0
            } else {
                0.0
            }
        } else {
            self.cost[j]
        }
    }

    fn default_nonbasic(&self, j: usize) -> (VarState, f64) {
        if self.lower[j].is_finite() {
            (VarState::AtLower, self.lower[j])
        } else if self.upper[j].is_finite() {
            (VarState::AtUpper, self.upper[j])
        } else {
            (VarState::FreeZero, 0.0)
        }
    }

    /// Appends a row (referencing existing columns) with a fresh slack; the
    /// slack enters the basis so the inverse extends exactly.
    pub fn add_row(&mut self, coeffs: &[(usize, f64)], sense: Sense, rhs: f64) {
        let r = self.nrows;
        let old = self.nrows;
        for &(j, a) in coeffs {
            debug_assert!(j < self.num_cols());
            if a != 0.0 {
                self.cols[j].push((r, a));
            }
        }
        self.rhs.push(rhs);
        let slack = self.num_cols();
        self.cols.push(vec![(r, 1.0)]);
        self.cost.push(0.0);
        let (lo, hi) = match sense {
            Sense::Le => (0.0, INF),
            Sense::Ge => (-INF, 0.0),
            Sense::Eq => (0.0, 0.0),
        };
        self.lower.push(lo);
        self.upper.push(hi);
        self.slack_of_row.push(slack);
        self.artificial_of_row.push(None);
        self.is_artificial.push(false);
        self.state.push(VarState::Basic(r));
        self.x.push(0.0);
        self.nrows += 1;

        if self.basis.is_empty() && old > 0 {
            // never factorized yet; nothing to extend
            self.basis.clear();
        }
        if self.basis.len() == old {
            // bordered inverse: new row of B is (a_B', 1) for the new slack
            let m = self.nrows;
            let mut next = vec![0.0; m * m];
            for i in 0..old {
                next[i * m..i * m + old].copy_from_slice(&self.binv[i * old..(i + 1) * old]);
            }
            let coeff_of = |col: usize| -> f64 {
                coeffs
                    .iter()
                    .find(|&&(j, _)| j == col)
                    .map(|&(_, a)| a)
                    .unwrap_or(0.0)
            };
            for k in 0..old {
                let mut acc = 0.0;
                for (i, &b) in self.basis.iter().enumerate() {
                    let c = coeff_of(b);
                    if c != 0.0 {
                        acc += c * self.binv[i * old + k];
                    }
                }
                next[old * m + k] = -acc;
            }
            next[old * m + old] = 1.0;
            self.binv = next;
            self.basis.push(slack);
            self.compute_basics();
        }
    }

    /// Slack value of a row; zero means the row is tight.
    pub fn slack_value(&self, row: usize) -> f64 {
        self.x[self.slack_of_row[row]]
    }

    /// Overwrites a row's structural coefficients and right-hand side in
    /// place (the slack and its sense are kept). Refactorizes when a basic
    /// column is touched.
    pub fn replace_row(&mut self, row: usize, coeffs: &[(usize, f64)], rhs: f64) -> Result<(), SolverError> {
        let mut touched_basic = false;
        for j in 0..self.num_cols() {
            if j == self.slack_of_row[row] {
                continue;
            }
            let before = self.cols[j].len();
            self.cols[j].retain(|&(r, _)| r != row);
            if before != self.cols[j].len() && matches!(self.state[j], VarState::Basic(_)) {
                touched_basic = true;
            }
        }
        for &(j, a) in coeffs {
            debug_assert!(j < self.num_cols());
            if a != 0.0 {
                self.cols[j].push((row, a));
                if matches!(self.state[j], VarState::Basic(_)) {
                    touched_basic = true;
                }
            }
        }
        self.rhs[row] = rhs;
        if !self.basis.is_empty() {
            if touched_basic {
                if self.factorize().is_err() {
                    self.reset_to_slack_basis();
                    self.factorize()
                        .map_err(|_| SolverError::Numerical("slack basis is singular".into()))?;
                }
            }
            self.compute_basics();
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<VarState> {
        self.state.clone()
    }

    /// Restores a basis snapshot (possibly taken before rows/columns were
    /// added); missing rows get their slack back, unknown columns default to
    /// a bound. Falls back to the all-slack basis if the restored basis is
    /// singular.
    pub fn restore(&mut self, snap: &[VarState]) -> Result<(), SolverError> {
        let ncols = self.num_cols();
        let mut claimed = vec![false; self.nrows];
        let mut basis = vec![usize::MAX; self.nrows];
        for j in 0..ncols {
            let st = if j < snap.len() { snap[j] } else { self.default_nonbasic(j).0 };
            self.state[j] = st;
        }
        for j in 0..ncols {
            if let VarState::Basic(r) = self.state[j] {
                if r < self.nrows && !claimed[r] {
                    claimed[r] = true;
                    basis[r] = j;
                } else {
                    let (st, _) = self.default_nonbasic(j);
                    self.state[j] = st;
                }
            }
        }
        for r in 0..self.nrows {
            if basis[r] == usize::MAX {
                let slack = self.slack_of_row[r];
                basis[r] = slack;
                self.state[slack] = VarState::Basic(r);
            }
        }
        self.basis = basis;
        self.sync_nonbasic_values();
        if self.factorize().is_err() {
            self.reset_to_slack_basis();
            self.factorize()
                .map_err(|_| SolverError::Numerical("slack basis is singular".into()))?;
        }
        self.compute_basics();
        Ok(())
    }

    fn sync_nonbasic_values(&mut self) {
        for j in 0..self.num_cols() {
            match self.state[j] {
                VarState::Basic(_) => {}
                VarState::AtLower => {
                    if self.lower[j].is_finite() {
                        self.x[j] = self.lower[j];
                    } else {
                        let (st, v) = self.default_nonbasic(j);
                        self.state[j] = st;
                        self.x[j] = v;
                    }
                }
                VarState::AtUpper => {
                    if self.upper[j].is_finite() {
                        self.x[j] = self.upper[j];
                    } else {
                        let (st, v) = self.default_nonbasic(j);
                        self.state[j] = st;
                        self.x[j] = v;
                    }
                }
                VarState::FreeZero => self.x[j] = 0.0,
            }
        }
    }

    fn reset_to_slack_basis(&mut self) {
        for j in 0..self.num_cols() {
            let (st, v) = self.default_nonbasic(j);
            self.state[j] = st;
            self.x[j] = v;
        }
        self.basis = self.slack_of_row.clone();
        for r in 0..self.nrows {
            self.state[self.slack_of_row[r]] = VarState::Basic(r);
        }
    }

    /// Dense inversion of the basis matrix by Gauss-Jordan with partial
    /// pivoting.
    fn factorize(&mut self) -> Result<(), ()> {
        let m = self.nrows;
        let mut a = vec![0.0; m * m];
        for (i, &col) in self.basis.iter().enumerate() {
            for &(r, v) in &self.cols[col] {
                a[r * m + i] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for k in 0..m {
            let mut piv_row = k;
            let mut piv_val = a[k * m + k].abs();
            for i in (k + 1)..m {
                let v = a[i * m + k].abs();
                if v > piv_val {
                    piv_val = v;
                    piv_row = i;
                }
            }
            if piv_val < 1e-11 {
                return Err(());
            }
            if piv_row != k {
                for j in 0..m {
                    a.swap(k * m + j, piv_row * m + j);
                    inv.swap(k * m + j, piv_row * m + j);
                }
            }
            let piv = a[k * m + k];
            for j in 0..m {
                a[k * m + j] /= piv;
                inv[k * m + j] /= piv;
            }
            for i in 0..m {
                if i == k {
                    continue;
                }
                let f = a[i * m + k];
                if f != 0.0 {
                    for j in 0..m {
                        a[i * m + j] -= f * a[k * m + j];
                        inv[i * m + j] -= f * inv[k * m + j];
                    }
                }
            }
        }
        self.binv = inv;
        self.pivots_since_refactor = 0;
        Ok(())
    }

    /// Recomputes basic values from the nonbasic point through the inverse.
    fn compute_basics(&mut self) {
        let m = self.nrows;
        let mut r = self.rhs.clone();
        for j in 0..self.num_cols() {
            if matches!(self.state[j], VarState::Basic(_)) {
                continue;
            }
            let v = self.x[j];
            if v != 0.0 {
                for &(row, a) in &self.cols[j] {
                    r[row] -= a * v;
                }
            }
        }
        for i in 0..m {
            let mut acc = 0.0;
            let row = &self.binv[i * m..(i + 1) * m];
            for k in 0..m {
                acc += row[k] * r[k];
            }
            self.x[self.basis[i]] = acc;
        }
        self.pivots_since_refresh = 0;
    }

    fn ftran(&self, col: usize) -> Vec<f64> {
        let m = self.nrows;
        let mut w = vec![0.0; m];
        for &(r, a) in &self.cols[col] {
            if a != 0.0 {
                for i in 0..m {
                    w[i] += self.binv[i * m + r] * a;
                }
            }
        }
        w
    }

    /// y such that reduced costs are c_j - y . A_j for the active phase.
    fn duals(&self) -> Vec<f64> {
        let m = self.nrows;
        let mut y = vec![0.0; m];
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = self.active_cost(b);
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for k in 0..m {
                    y[k] += cb * row[k];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64]) -> f64 {
        let mut d = self.active_cost(j);
        for &(r, a) in &self.cols[j] {
            d -= y[r] * a;
        }
        d
    }

    /// Worst bound violation among basic variables.
    fn primal_infeasibility(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for &b in &self.basis {
            let v = self.x[b];
            worst = worst.max(self.lower[b] - v).max(v - self.upper[b]);
        }
        worst
    }

    fn dual_infeasibility(&self) -> f64 {
        let y = self.duals();
        let mut worst: f64 = 0.0;
        for j in 0..self.num_cols() {
            if self.lower[j] == self.upper[j] {
                continue;
            }
            match self.state[j] {
                VarState::Basic(_) => {}
                VarState::AtLower => worst = worst.max(-self.reduced_cost(j, y.as_slice())),
                VarState::AtUpper => worst = worst.max(self.reduced_cost(j, y.as_slice())),
                VarState::FreeZero => worst = worst.max(self.reduced_cost(j, y.as_slice()).abs()),
            }
        }
        worst
    }

    /// Max scaled row-activity residual computed from the raw column data;
    /// each row is measured against its own magnitude so large-coefficient
    /// cut rows are not failed on rounding noise.
    fn residual_infeasibility(&self) -> f64 {
        let mut acc = vec![0.0; self.nrows];
        let mut mag = vec![0.0; self.nrows];
        for j in 0..self.num_cols() {
            let v = self.x[j];
            if v != 0.0 {
                for &(r, a) in &self.cols[j] {
                    acc[r] += a * v;
                    mag[r] += (a * v).abs();
                }
            }
        }
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            let scale = 1.0f64.max(self.rhs[r].abs()).max(mag[r]);
            worst = worst.max((acc[r] - self.rhs[r]).abs() / scale);
        }
        worst
    }

    /// Full fresh solve: slack basis, artificials for violated rows, two
    /// phases.
    pub fn solve_fresh(&mut self) -> Result<LpStatus, SolverError> {
        self.reset_to_slack_basis();
        let m = self.nrows;
        self.binv = vec![0.0; m * m];
        for i in 0..m {
            self.binv[i * m + i] = 1.0;
        }
        self.pivots_since_refactor = 0;
        self.compute_basics();

        let mut need_phase1 = false;
        for r in 0..m {
            let slack = self.slack_of_row[r];
            let v = self.x[slack];
            let viol_low = self.lower[slack] - v;
            let viol_high = v - self.upper[slack];
            if viol_low > FEAS_TOL || viol_high > FEAS_TOL {
                need_phase1 = true;
                // clamp the slack to its nearest bound, cover the residual
                // with a nonnegative artificial
                let target = if viol_low > FEAS_TOL {
                    self.lower[slack]
                } else {
                    self.upper[slack]
                };
                let residual = v - target;
                self.x[slack] = target;
                self.state[slack] = if viol_low > FEAS_TOL {
                    VarState::AtLower
                } else {
                    VarState::AtUpper
                };
                let art = match self.artificial_of_row[r] {
                    Some(a) => a,
                    None => {
                        let id = self.num_cols();
                        self.cols.push(vec![(r, 1.0)]);
                        self.cost.push(0.0);
                        self.lower.push(0.0);
                        self.upper.push(INF);
                        self.is_artificial.push(true);
                        self.state.push(VarState::AtLower);
                        self.x.push(0.0);
                        self.artificial_of_row[r] = Some(id);
                        id
                    }
                };
                // orient the artificial so its basic value is nonnegative
                self.cols[art] = vec![(r, if residual >= 0.0 { 1.0 } else { -1.0 })];
                self.lower[art] = 0.0;
                self.upper[art] = INF;
                self.x[art] = residual.abs();
                self.state[art] = VarState::Basic(r);
                self.basis[r] = art;
                self.state[slack] = if viol_low > FEAS_TOL {
                    VarState::AtLower
                } else {
                    VarState::AtUpper
                };
            }
        }

        if need_phase1 {
            self.factorize()
                .map_err(|_| SolverError::Numerical("initial basis singular".into()))?;
            self.compute_basics();
            self.phase1 = true;
            self.bland = false;
            self.stall = 0;
            self.last_phase_obj = INF;
            match self.primal_loop()? {
                PrimalEnd::Optimal => {}
                PrimalEnd::Unbounded => {
                    return Err(SolverError::Numerical("phase 1 reported unbounded".into()))
                }
            }
            let infeas = self.phase_objective();
            self.phase1 = false;
            if infeas > 1e-6 {
                return Ok(LpStatus::Infeasible);
            }
            // pin artificials at zero for phase 2
            for j in 0..self.num_cols() {
                if self.is_artificial[j] {
                    self.upper[j] = 0.0;
                    if !matches!(self.state[j], VarState::Basic(_)) {
                        self.state[j] = VarState::AtLower;
                        self.x[j] = 0.0;
                    }
                }
            }
        }

        self.bland = false;
        self.stall = 0;
        self.last_phase_obj = INF;
        match self.primal_loop()? {
            PrimalEnd::Optimal => self.verified_optimal(0),
            PrimalEnd::Unbounded => Ok(LpStatus::Unbounded),
        }
    }

    /// Reoptimizes after bound changes or row additions, choosing the primal
    /// or dual method based on which feasibility survived. Falls back to a
    /// fresh solve when neither did, or when the warm path degrades
    /// numerically.
    pub fn reoptimize(&mut self) -> Result<LpStatus, SolverError> {
        match self.reoptimize_warm() {
            Err(SolverError::Numerical(_)) => self.solve_fresh(),
            other => other,
        }
    }

    fn reoptimize_warm(&mut self) -> Result<LpStatus, SolverError> {
        if self.basis.len() != self.nrows {
            return self.solve_fresh();
        }
        self.sync_nonbasic_values();
        self.compute_basics();
        let primal_ok = self.primal_infeasibility() <= FEAS_TOL;
        let dual_ok = self.dual_infeasibility() <= COST_TOL;
        self.bland = false;
        self.stall = 0;
        self.last_phase_obj = INF;
        self.phase1 = false;
        if primal_ok && dual_ok {
            return self.verified_optimal(0);
        }
        if dual_ok {
            match self.dual_loop()? {
                DualEnd::PrimalFeasible => return self.verified_optimal(0),
                DualEnd::Infeasible => return Ok(LpStatus::Infeasible),
            }
        }
        if primal_ok {
            return match self.primal_loop()? {
                PrimalEnd::Optimal => self.verified_optimal(0),
                PrimalEnd::Unbounded => Ok(LpStatus::Unbounded),
            };
        }
        self.solve_fresh()
    }

    /// Double-checks a claimed optimum against the raw rows; refactorizes and
    /// resumes on drift.
    fn verified_optimal(&mut self, depth: usize) -> Result<LpStatus, SolverError> {
        if self.residual_infeasibility() <= 10.0 * FEAS_TOL
            && self.primal_infeasibility() <= 10.0 * FEAS_TOL
        {
            return Ok(LpStatus::Optimal);
        }
        if depth >= 3 {
            return Err(SolverError::Numerical(
                "solution fails residual verification after refactorization".into(),
            ));
        }
        self.factorize()
            .map_err(|_| SolverError::Numerical("basis singular during verification".into()))?;
        self.compute_basics();
        if self.primal_infeasibility() > FEAS_TOL {
            match self.dual_loop()? {
                DualEnd::PrimalFeasible => {}
                DualEnd::Infeasible => return Ok(LpStatus::Infeasible),
            }
        }
        match self.primal_loop()? {
            PrimalEnd::Optimal => self.verified_optimal(depth + 1),
            PrimalEnd::Unbounded => Ok(LpStatus::Unbounded),
        }
    }

    fn track_progress(&mut self) {
        let obj = self.phase_objective();
        if obj < self.last_phase_obj - 1e-10 {
            self.last_phase_obj = obj;
            self.stall = 0;
            self.bland = false;
        } else {
            self.stall += 1;
            if self.stall > STALL_LIMIT {
                self.bland = true;
            }
        }
    }

    fn maintenance(&mut self) -> Result<(), SolverError> {
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            self.factorize()
                .map_err(|_| SolverError::Numerical("basis became singular".into()))?;
            self.compute_basics();
        } else if self.pivots_since_refresh >= REFRESH_EVERY {
            self.compute_basics();
        }
        Ok(())
    }

    fn primal_loop(&mut self) -> Result<PrimalEnd, SolverError> {
        loop {
            self.iterations += 1;
            if self.iterations > self.iteration_limit {
                return Err(SolverError::IterationLimit);
            }
            self.maintenance()?;
            let y = self.duals();

            // entering variable
            let mut entering: Option<(usize, f64, f64)> = None; // col, d, violation
            for j in 0..self.num_cols() {
                if matches!(self.state[j], VarState::Basic(_)) || self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = self.reduced_cost(j, &y);
                let viol = match self.state[j] {
                    VarState::AtLower => -d,
                    VarState::AtUpper => d,
                    VarState::FreeZero => d.abs(),
                    VarState::Basic(_) => unreachable!(),
                };
                if viol > COST_TOL {
                    if self.bland {
                        entering = Some((j, d, viol));
                        break;
                    }
                    match entering {
                        Some((_, _, best)) if best >= viol => {}
                        _ => entering = Some((j, d, viol)),
                    }
                }
            }
            let Some((q, dq, _)) = entering else {
                return Ok(PrimalEnd::Optimal);
            };

            let sigma = match self.state[q] {
                VarState::AtLower => 1.0,
                VarState::AtUpper => -1.0,
                VarState::FreeZero => {
                    if dq > 0.0 {
                        -1.0
                    } else {
                        1.0
                    }
                }
                VarState::Basic(_) => unreachable!(),
            };
            let w = self.ftran(q);

            // two-pass ratio test: first a tolerance-relaxed step bound, then
            // the largest pivot among rows whose exact ratio fits it
            let own_gap = if self.lower[q].is_finite() && self.upper[q].is_finite() {
                self.upper[q] - self.lower[q]
            } else {
                INF
            };
            let mut theta = own_gap;
            for (i, &wi) in w.iter().enumerate() {
                let swi = sigma * wi;
                let b = self.basis[i];
                if swi > PIVOT_TOL {
                    if self.lower[b] == -INF {
                        continue;
                    }
                    theta = theta.min(((self.x[b] - self.lower[b] + FEAS_TOL) / swi).max(0.0));
                } else if swi < -PIVOT_TOL {
                    if self.upper[b] == INF {
                        continue;
                    }
                    theta = theta.min(((self.x[b] - self.upper[b] - FEAS_TOL) / swi).max(0.0));
                }
            }

            if theta.is_infinite() {
                if self.phase1 {
                    return Err(SolverError::Numerical("phase 1 direction unbounded".into()));
                }
                return Ok(PrimalEnd::Unbounded);
            }

            let mut leave: Option<(usize, bool, f64)> = None; // row, to-upper, exact ratio
            for (i, &wi) in w.iter().enumerate() {
                let swi = sigma * wi;
                let b = self.basis[i];
                let (ratio, to_upper) = if swi > PIVOT_TOL {
                    if self.lower[b] == -INF {
                        continue;
                    }
                    (((self.x[b] - self.lower[b]) / swi).max(0.0), false)
                } else if swi < -PIVOT_TOL {
                    if self.upper[b] == INF {
                        continue;
                    }
                    (((self.x[b] - self.upper[b]) / swi).max(0.0), true)
                } else {
                    continue;
                };
                if ratio > theta + RATIO_TIE {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((li, _, _)) => {
                        if self.bland {
                            b < self.basis[li]
                        } else {
                            wi.abs() > w[li].abs()
                        }
                    }
                };
                if better {
                    leave = Some((i, to_upper, ratio));
                }
            }

            match leave {
                None if own_gap > theta + RATIO_TIE => {
                    // numerical corner: the relaxed bound admits no row and
                    // the bound flip overshoots it
                    return Err(SolverError::Numerical("ratio test found no step".into()));
                }
                None => {
                    // bound flip: the entering variable crosses to its other
                    // bound without a basis change
                    let t = own_gap;
                    self.x[q] += sigma * t;
                    self.state[q] = match self.state[q] {
                        VarState::AtLower => VarState::AtUpper,
                        VarState::AtUpper => VarState::AtLower,
                        other => other,
                    };
                    for (i, &wi) in w.iter().enumerate() {
                        if wi != 0.0 {
                            self.x[self.basis[i]] -= sigma * t * wi;
                        }
                    }
                    self.pivots_since_refresh += 1;
                }
                Some((ip, to_upper, ratio)) => {
                    self.pivot(q, sigma, ratio.min(own_gap), ip, to_upper, &w);
                }
            }
            self.track_progress();
        }
    }

    fn pivot(&mut self, q: usize, sigma: f64, t: f64, ip: usize, to_upper: bool, w: &[f64]) {
        let leaving = self.basis[ip];
        self.x[q] += sigma * t;
        for (i, &wi) in w.iter().enumerate() {
            if i != ip && wi != 0.0 {
                self.x[self.basis[i]] -= sigma * t * wi;
            }
        }
        self.x[leaving] = if to_upper { self.upper[leaving] } else { self.lower[leaving] };
        self.state[leaving] = if to_upper { VarState::AtUpper } else { VarState::AtLower };
        self.basis[ip] = q;
        self.state[q] = VarState::Basic(ip);

        // rank-one update of the explicit inverse
        let m = self.nrows;
        let piv = w[ip];
        let inv_piv = 1.0 / piv;
        for k in 0..m {
            self.binv[ip * m + k] *= inv_piv;
        }
        for (i, &wi) in w.iter().enumerate() {
            if i != ip && wi != 0.0 {
                for k in 0..m {
                    self.binv[i * m + k] -= wi * self.binv[ip * m + k];
                }
            }
        }
        self.pivots_since_refresh += 1;
        self.pivots_since_refactor += 1;
    }

    fn dual_loop(&mut self) -> Result<DualEnd, SolverError> {
        let mut retries = 0usize;
        loop {
            self.iterations += 1;
            if self.iterations > self.iteration_limit {
                return Err(SolverError::IterationLimit);
            }
            self.maintenance()?;

            // leaving row: worst primal violation (Bland: lowest variable index)
            let mut pick: Option<(usize, f64)> = None;
            for (i, &b) in self.basis.iter().enumerate() {
                let v = self.x[b];
                let viol = (self.lower[b] - v).max(v - self.upper[b]);
                if viol > FEAS_TOL {
                    let better = match pick {
                        None => true,
                        Some((pi, pv)) => {
                            if self.bland {
                                b < self.basis[pi]
                            } else {
                                viol > pv
                            }
                        }
                    };
                    if better {
                        pick = Some((i, viol));
                    }
                }
            }
            let Some((ip, _)) = pick else {
                return Ok(DualEnd::PrimalFeasible);
            };
            let bv = self.basis[ip];
            let below = self.x[bv] < self.lower[bv];

            let m = self.nrows;
            let rho = &self.binv[ip * m..(ip + 1) * m];
            let y = self.duals();

            // entering: two-pass dual ratio test guarding dual feasibility,
            // preferring large pivots inside the relaxed window
            let mut alphas: Vec<(usize, f64, f64)> = Vec::new(); // col, alpha, |d/alpha|
            let mut theta = INF;
            for j in 0..self.num_cols() {
                if matches!(self.state[j], VarState::Basic(_)) || self.lower[j] == self.upper[j] {
                    continue;
                }
                let mut alpha = 0.0;
                for &(r, a) in &self.cols[j] {
                    alpha += rho[r] * a;
                }
                let eligible = match (self.state[j], below) {
                    (VarState::AtLower, true) => alpha < -PIVOT_TOL,
                    (VarState::AtUpper, true) => alpha > PIVOT_TOL,
                    (VarState::AtLower, false) => alpha > PIVOT_TOL,
                    (VarState::AtUpper, false) => alpha < -PIVOT_TOL,
                    (VarState::FreeZero, _) => alpha.abs() > PIVOT_TOL,
                    (VarState::Basic(_), _) => false,
                };
                if !eligible {
                    continue;
                }
                let d = self.reduced_cost(j, &y);
                let ratio = (d / alpha).abs();
                theta = theta.min((d.abs() + COST_TOL) / alpha.abs());
                alphas.push((j, alpha, ratio));
            }
            let mut best: Option<(usize, f64)> = None; // col, alpha
            for &(j, alpha, ratio) in &alphas {
                if ratio > theta + RATIO_TIE {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bj, balpha)) => {
                        if self.bland {
                            j < bj
                        } else {
                            alpha.abs() > balpha.abs()
                        }
                    }
                };
                if better {
                    best = Some((j, alpha));
                }
            }
            let Some((q, alpha_q)) = best else {
                // no direction can repair this row; re-verify before declaring
                // the subproblem infeasible
                if retries < 2 {
                    retries += 1;
                    self.factorize()
                        .map_err(|_| SolverError::Numerical("basis became singular".into()))?;
                    self.compute_basics();
                    continue;
                }
                return Ok(DualEnd::Infeasible);
            };

            let target = if below { self.lower[bv] } else { self.upper[bv] };
            let delta = (self.x[bv] - target) / alpha_q;
            let w = self.ftran(q);
            self.x[q] += delta;
            for (i, &wi) in w.iter().enumerate() {
                if i != ip && wi != 0.0 {
                    self.x[self.basis[i]] -= delta * wi;
                }
            }
            self.x[bv] = target;
            self.state[bv] = if below { VarState::AtLower } else { VarState::AtUpper };
            self.basis[ip] = q;
            self.state[q] = VarState::Basic(ip);

            let piv = w[ip];
            let inv_piv = 1.0 / piv;
            for k in 0..m {
                self.binv[ip * m + k] *= inv_piv;
            }
            for (i, &wi) in w.iter().enumerate() {
                if i != ip && wi != 0.0 {
                    for k in 0..m {
                        self.binv[i * m + k] -= wi * self.binv[ip * m + k];
                    }
                }
            }
            self.pivots_since_refresh += 1;
            self.pivots_since_refactor += 1;

            // stall guard: total infeasibility should trend down
            self.track_dual_progress();
        }
    }

    fn track_dual_progress(&mut self) {
        let inf = self.total_primal_infeasibility();
        if inf < self.last_phase_obj - 1e-10 {
            self.last_phase_obj = inf;
            self.stall = 0;
            self.bland = false;
        } else {
            self.stall += 1;
            if self.stall > STALL_LIMIT {
                self.bland = true;
            }
        }
    }

    fn total_primal_infeasibility(&self) -> f64 {
        self.basis
            .iter()
            .map(|&b| {
                let v = self.x[b];
                (self.lower[b] - v).max(0.0) + (v - self.upper[b]).max(0.0)
            })
            .sum()
    }

    /// Solution view over the structural variables with the phase-2 dual
    /// certificate.
    pub fn solution(&self) -> LpSolution {
        let y = self.duals();
        let reduced: Vec<f64> = (0..self.nstruct).map(|j| self.reduced_cost(j, &y)).collect();
        LpSolution {
            x: self.x[..self.nstruct].to_vec(),
            objective: self.objective_value(),
            duals: y,
            reduced_costs: reduced,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(objective: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, rows: Vec<LinearRow>) -> LinearProgram {
        LinearProgram {
            objective,
            lower,
            upper,
            rows,
        }
    }

    fn optimal(outcome: LpOutcome) -> LpSolution {
        match outcome {
            LpOutcome::Optimal(sol) => sol,
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn min_x_with_floor() {
        // min x s.t. x >= 3
        let p = lp(
            vec![1.0],
            vec![-INF],
            vec![INF],
            vec![LinearRow {
                coeffs: vec![(0, 1.0)],
                sense: Sense::Ge,
                rhs: 3.0,
            }],
        );
        let sol = optimal(solve_lp(&p).unwrap());
        assert!((sol.x[0] - 3.0).abs() < 1e-9);
        assert!((sol.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn max_x_with_cap() {
        // max x s.t. x <= 5, x >= 0 as min -x
        let p = lp(
            vec![-1.0],
            vec![0.0],
            vec![INF],
            vec![LinearRow {
                coeffs: vec![(0, 1.0)],
                sense: Sense::Le,
                rhs: 5.0,
            }],
        );
        let sol = optimal(solve_lp(&p).unwrap());
        assert!((sol.x[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        let p = lp(
            vec![1.0],
            vec![0.0],
            vec![1.0],
            vec![LinearRow {
                coeffs: vec![(0, 1.0)],
                sense: Sense::Ge,
                rhs: 2.0,
            }],
        );
        assert!(matches!(solve_lp(&p).unwrap(), LpOutcome::Infeasible));
    }

    #[test]
    fn unbounded_detected() {
        let p = lp(vec![-1.0], vec![0.0], vec![INF], vec![]);
        assert!(matches!(solve_lp(&p).unwrap(), LpOutcome::Unbounded));
    }

    #[test]
    fn equality_and_bounds() {
        // min 2a + b s.t. a + b = 10, 0 <= a <= 4, 0 <= b <= 8
        let p = lp(
            vec![2.0, 1.0],
            vec![0.0, 0.0],
            vec![4.0, 8.0],
            vec![LinearRow {
                coeffs: vec![(0, 1.0), (1, 1.0)],
                sense: Sense::Eq,
                rhs: 10.0,
            }],
        );
        let sol = optimal(solve_lp(&p).unwrap());
        assert!((sol.x[0] - 2.0).abs() < 1e-8);
        assert!((sol.x[1] - 8.0).abs() < 1e-8);
        assert!((sol.objective - 12.0).abs() < 1e-8);
    }

    #[test]
    fn degenerate_transport_problem() {
        // min sum of shipments cost with several ties; exercises degeneracy
        // min x0 + x1 + x2  s.t. x0 + x1 >= 2, x1 + x2 >= 2, x0 + x2 >= 2
        let rows = vec![
            LinearRow {
                coeffs: vec![(0, 1.0), (1, 1.0)],
                sense: Sense::Ge,
                rhs: 2.0,
            },
            LinearRow {
                coeffs: vec![(1, 1.0), (2, 1.0)],
                sense: Sense::Ge,
                rhs: 2.0,
            },
            LinearRow {
                coeffs: vec![(0, 1.0), (2, 1.0)],
                sense: Sense::Ge,
                rhs: 2.0,
            },
        ];
        let p = lp(vec![1.0; 3], vec![0.0; 3], vec![INF; 3], rows);
        let sol = optimal(solve_lp(&p).unwrap());
        assert!((sol.objective - 3.0).abs() < 1e-8);
    }

    #[test]
    fn warm_start_after_bound_change_matches_fresh() {
        // min -x0 - 2x1 s.t. x0 + x1 <= 6, x0 <= 4, x1 <= 4
        let p = lp(
            vec![-1.0, -2.0],
            vec![0.0, 0.0],
            vec![4.0, 4.0],
            vec![LinearRow {
                coeffs: vec![(0, 1.0), (1, 1.0)],
                sense: Sense::Le,
                rhs: 6.0,
            }],
        );
        let mut s = Simplex::from_lp(&p);
        assert_eq!(s.solve_fresh().unwrap(), LpStatus::Optimal);
        assert!((s.objective_value() - (-10.0)).abs() < 1e-8);

        // tighten x1 <= 1 and reoptimize dually
        s.set_bounds(1, 0.0, 1.0);
        assert_eq!(s.reoptimize().unwrap(), LpStatus::Optimal);
        assert!((s.objective_value() - (-6.0)).abs() < 1e-8);

        let mut fresh_lp = p.clone();
        fresh_lp.upper[1] = 1.0;
        let sol = optimal(solve_lp(&fresh_lp).unwrap());
        assert!((sol.objective - s.objective_value()).abs() < 1e-8);
    }

    #[test]
    fn added_row_reoptimizes() {
        // min -x0 s.t. x0 <= 10 then add x0 <= 3.5
        let p = lp(
            vec![-1.0],
            vec![0.0],
            vec![INF],
            vec![LinearRow {
                coeffs: vec![(0, 1.0)],
                sense: Sense::Le,
                rhs: 10.0,
            }],
        );
        let mut s = Simplex::from_lp(&p);
        assert_eq!(s.solve_fresh().unwrap(), LpStatus::Optimal);
        s.add_row(&[(0, 1.0)], Sense::Le, 3.5);
        assert_eq!(s.reoptimize().unwrap(), LpStatus::Optimal);
        assert!((s.value(0) - 3.5).abs() < 1e-8);
    }

    #[test]
    fn free_variable_solves() {
        // min x s.t. x + y = 1, y in [0, 0.25], x free
        let p = lp(
            vec![1.0, 0.0],
            vec![-INF, 0.0],
            vec![INF, 0.25],
            vec![LinearRow {
                coeffs: vec![(0, 1.0), (1, 1.0)],
                sense: Sense::Eq,
                rhs: 1.0,
            }],
        );
        let sol = optimal(solve_lp(&p).unwrap());
        assert!((sol.x[0] - 0.75).abs() < 1e-8);
    }

    /// Optimality certificate: primal feasible, dual feasible, complementary.
    pub(crate) fn assert_certificate(p: &LinearProgram, sol: &LpSolution) {
        for (r, row) in p.rows.iter().enumerate() {
            let act: f64 = row.coeffs.iter().map(|&(j, a)| a * sol.x[j]).sum();
            match row.sense {
                Sense::Le => assert!(act <= row.rhs + 1e-6, "row {r} violated"),
                Sense::Ge => assert!(act >= row.rhs - 1e-6, "row {r} violated"),
                Sense::Eq => assert!((act - row.rhs).abs() <= 1e-6, "row {r} violated"),
            }
        }
        for j in 0..p.num_vars() {
            assert!(sol.x[j] >= p.lower[j] - 1e-6 && sol.x[j] <= p.upper[j] + 1e-6);
            let d = sol.reduced_costs[j];
            let at_lower = (sol.x[j] - p.lower[j]).abs() < 1e-6;
            let at_upper = (sol.x[j] - p.upper[j]).abs() < 1e-6;
            if !at_lower && !at_upper {
                assert!(d.abs() < 1e-6, "interior variable {j} has reduced cost {d}");
            } else if at_lower && !at_upper {
                assert!(d > -1e-6, "at-lower variable {j} has reduced cost {d}");
            } else if at_upper && !at_lower {
                assert!(d < 1e-6, "at-upper variable {j} has reduced cost {d}");
            }
        }
    }

    #[test]
    fn random_lps_satisfy_certificates() {
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut optimal_count = 0;
        for case in 0..60 {
            let n = 2 + (case % 5);
            let m = 1 + (case % 4);
            let objective: Vec<f64> = (0..n).map(|_| next() * 4.0 - 2.0).collect();
            let lower = vec![0.0; n];
            let upper: Vec<f64> = (0..n).map(|_| 1.0 + next() * 9.0).collect();
            let rows: Vec<LinearRow> = (0..m)
                .map(|_| {
                    let coeffs: Vec<(usize, f64)> =
                        (0..n).map(|j| (j, next() * 2.0 - 0.5)).collect();
                    let sense = match (next() * 3.0) as usize {
                        0 => Sense::Le,
                        1 => Sense::Ge,
                        _ => Sense::Eq,
                    };
                    LinearRow {
                        coeffs,
                        sense,
                        rhs: next() * 6.0 - 1.0,
                    }
                })
                .collect();
            let p = lp(objective, lower, upper, rows);
            match solve_lp(&p).unwrap() {
                LpOutcome::Optimal(sol) => {
                    assert_certificate(&p, &sol);
                    optimal_count += 1;
                }
                LpOutcome::Infeasible | LpOutcome::Unbounded => {}
            }
        }
        assert!(optimal_count > 20, "too few optimal cases: {optimal_count}");
    }
}
