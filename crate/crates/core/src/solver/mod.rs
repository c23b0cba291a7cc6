//! Mixed-integer solves: branch-and-bound over the model's binary marks with
//! Kelley cutting planes tightening the risk epigraphs at integer-feasible
//! points.

pub mod lp;

use std::rc::Rc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::model::{check_solution, OptimizationModel, ScheduleSolution, SolutionStatus};
use crate::uncertainty::risk_cut;

use lp::{LpStatus, Simplex, VarState};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("iteration limit exceeded")]
    IterationLimit,
    #[error("final incumbent failed verification: {0}")]
    Verification(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchingRule {
    MostFractional,
    PseudoCost,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    /// Relative optimality gap at which the search stops.
    pub mip_gap_rel: f64,
    /// Absolute feasibility tolerance (kW).
    pub feas_tol: f64,
    /// Relative epigraph gap at which the cut loop stops.
    pub cut_tol: f64,
    /// Integrality tolerance on binary values.
    pub int_tol: f64,
    pub node_limit: Option<u64>,
    pub time_limit_seconds: Option<f64>,
    pub branching_rule: BranchingRule,
    /// Cut pool cap per epigraph; oldest inactive cuts are replaced beyond it.
    pub max_cuts_per_epigraph: usize,
    /// Nonzero prints one line per node to stderr.
    pub verbosity: u8,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mip_gap_rel: 1e-6,
            feas_tol: 1e-6,
            cut_tol: 1e-6,
            int_tol: 1e-6,
            node_limit: None,
            time_limit_seconds: None,
            branching_rule: BranchingRule::MostFractional,
            max_cuts_per_epigraph: 200,
            verbosity: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        for (v, name) in [
            (self.mip_gap_rel, "mip_gap_rel"),
            (self.feas_tol, "feas_tol"),
            (self.cut_tol, "cut_tol"),
            (self.int_tol, "int_tol"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SolverError::InvalidModel(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// A limit stopped the search with an incumbent in hand.
    Feasible,
    Infeasible,
    Unbounded,
    /// A limit stopped the search before any incumbent was found.
    Limit,
}

#[derive(Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub incumbent: Option<ScheduleSolution>,
    /// Best proven lower bound on the optimal objective.
    pub bound: f64,
    pub nodes_explored: u64,
    pub cuts_added: usize,
    /// Global lower bound recorded at each node pop (nondecreasing).
    pub bound_sequence: Vec<f64>,
}

impl SolveResult {
    pub fn objective(&self) -> Option<f64> {
        self.incumbent.as_ref().map(|s| s.objective_total)
    }
}

struct Node {
    id: u64,
    bound: f64,
    depth: u32,
    changes: Vec<(usize, f64, f64)>,
    basis: Option<Rc<Vec<VarState>>>,
    branch_var: Option<usize>,
    branch_up: bool,
    parent_frac: f64,
    parent_obj: f64,
}

struct CutRec {
    row: usize,
    age: u64,
    is_buy: bool,
}

struct PseudoCosts {
    down_sum: Vec<f64>,
    down_count: Vec<f64>,
    up_sum: Vec<f64>,
    up_count: Vec<f64>,
}

impl PseudoCosts {
    fn new(n: usize) -> Self {
        Self {
            down_sum: vec![0.0; n],
            down_count: vec![0.0; n],
            up_sum: vec![0.0; n],
            up_count: vec![0.0; n],
        }
    }

    fn estimate(&self, j: usize, up: bool) -> f64 {
        let (sum, count) = if up {
            (self.up_sum[j], self.up_count[j])
        } else {
            (self.down_sum[j], self.down_count[j])
        };
        if count > 0.0 {
            sum / count
        } else {
            1.0
        }
    }

    fn record(&mut self, j: usize, up: bool, degradation_per_frac: f64) {
        if up {
            self.up_sum[j] += degradation_per_frac;
            self.up_count[j] += 1.0;
        } else {
            self.down_sum[j] += degradation_per_frac;
            self.down_count[j] += 1.0;
        }
    }
}

/// Exact branch-and-bound solve of a coalition model.
///
/// At every integer-feasible LP optimum the two risk epigraphs are tightened
/// with tangent cuts until the epigraph gap is below `cut_tol` (relative), so
/// the returned incumbent carries the exact quadratic risk. The final
/// incumbent must pass `check_solution`; a failure is reported as an error,
/// never as a wrong answer.
pub fn solve_mip(model: &OptimizationModel, cfg: &SolverConfig) -> Result<SolveResult, SolverError> {
    cfg.validate()?;
    let start = Instant::now();
    let binaries = model.binary_vars();
    let lp_form = model.as_linear_program();
    lp_form
        .check_finite()
        .map_err(|e| SolverError::InvalidModel(e.to_string()))?;
    let mut simplex = Simplex::from_lp(&lp_form);
    let nvars = model.num_vars();

    let mut cuts: Vec<CutRec> = Vec::new();
    let mut cuts_added = 0usize;
    let mut cut_age = 0u64;

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut min_pruned_bound = f64::INFINITY;
    let mut nodes_explored = 0u64;
    let mut next_id = 0u64;
    let mut bound_sequence: Vec<f64> = Vec::new();
    let mut reported_lb = f64::NEG_INFINITY;
    let mut pseudo = PseudoCosts::new(nvars);
    let mut limit_hit = false;
    let mut root_unbounded = false;

    let mut open: Vec<Node> = vec![Node {
        id: next_id,
        bound: f64::NEG_INFINITY,
        depth: 0,
        changes: Vec::new(),
        basis: None,
        branch_var: None,
        branch_up: false,
        parent_frac: 0.0,
        parent_obj: f64::NEG_INFINITY,
    }];
    next_id += 1;
    let mut last_snapshot: Option<Rc<Vec<VarState>>> = None;

    let gap_scale = |bound: f64| cfg.mip_gap_rel * bound.abs().max(1.0);

    while !open.is_empty() {
        if let Some(limit) = cfg.node_limit {
            if nodes_explored >= limit {
                limit_hit = true;
                break;
            }
        }
        if let Some(limit) = cfg.time_limit_seconds {
            if start.elapsed().as_secs_f64() > limit {
                limit_hit = true;
                break;
            }
        }

        // best-first: lowest bound, newest node on ties (keeps dives warm)
        let mut pick = 0usize;
        for i in 1..open.len() {
            let a = &open[i];
            let b = &open[pick];
            if a.bound < b.bound - 1e-12 || ((a.bound - b.bound).abs() <= 1e-12 && a.id > b.id) {
                pick = i;
            }
        }
        let node = open.swap_remove(pick);

        // frontier lower bound before solving this node
        let frontier = open
            .iter()
            .map(|n| n.bound)
            .chain(std::iter::once(node.bound))
            .chain(std::iter::once(min_pruned_bound))
            .fold(f64::INFINITY, f64::min);
        if frontier.is_finite() {
            reported_lb = reported_lb.max(frontier);
            bound_sequence.push(reported_lb);
        }

        // prune against the incumbent before paying for the solve
        if let Some((inc_obj, _)) = &incumbent {
            if node.bound >= inc_obj - gap_scale(node.bound) {
                min_pruned_bound = min_pruned_bound.min(node.bound);
                continue;
            }
        }

        nodes_explored += 1;

        // install the node: original binary bounds, then its own changes
        for &j in &binaries {
            simplex.set_bounds(j, model.vars[j].lower, model.vars[j].upper);
        }
        for &(j, lo, hi) in &node.changes {
            simplex.set_bounds(j, lo, hi);
        }
        let status = match (&node.basis, &last_snapshot) {
            (Some(nb), Some(ls)) if Rc::ptr_eq(nb, ls) => simplex.reoptimize()?,
            (Some(nb), _) => {
                simplex.restore(nb)?;
                simplex.reoptimize()?
            }
            (None, _) => simplex.solve_fresh()?,
        };
        last_snapshot = None;

        match status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                if node.depth == 0 {
                    root_unbounded = true;
                    break;
                }
                return Err(SolverError::Numerical(
                    "child subproblem unbounded under a bounded root".into(),
                ));
            }
            LpStatus::Optimal => {}
        }

        let mut node_obj = simplex.objective_value();
        if let Some(var) = node.branch_var {
            let frac = if node.branch_up {
                1.0 - node.parent_frac
            } else {
                node.parent_frac
            };
            if frac > 1e-9 && node.parent_obj.is_finite() {
                pseudo.record(var, node.branch_up, (node_obj - node.parent_obj).max(0.0) / frac);
            }
        }

        if cfg.verbosity > 0 {
            let inc = incumbent
                .as_ref()
                .map(|(o, _)| format!("{o:.6}"))
                .unwrap_or_else(|| "-".into());
            eprintln!(
                "node {} depth {} bound {:.6} incumbent {}",
                node.id, node.depth, node_obj, inc
            );
        }

        let mut fractional = most_fractional(&simplex, &binaries, cfg, &pseudo);

        if fractional.is_none() {
            // integer feasible: tighten the epigraphs until exact
            let converged = run_cut_loop(
                model,
                cfg,
                &mut simplex,
                &mut cuts,
                &mut cuts_added,
                &mut cut_age,
                &mut node_obj,
            )?;
            if !converged {
                return Err(SolverError::Numerical("risk cut loop did not converge".into()));
            }
            // cuts may have moved the optimum off integrality
            fractional = most_fractional(&simplex, &binaries, cfg, &pseudo);
            if fractional.is_none() {
                if let Some((inc_obj, _)) = &incumbent {
                    if node_obj >= inc_obj - gap_scale(node_obj) {
                        min_pruned_bound = min_pruned_bound.min(node_obj);
                        continue;
                    }
                }
                // polish: pin binaries at their integer values and reoptimize
                // so gated variables are cut off exactly
                for &j in &binaries {
                    let v = simplex.value(j).round();
                    simplex.set_bounds(j, v, v);
                }
                let polish = simplex.reoptimize()?;
                if polish != LpStatus::Optimal {
                    return Err(SolverError::Numerical("polish solve lost feasibility".into()));
                }
                let mut polished_obj = simplex.objective_value();
                let converged = run_cut_loop(
                    model,
                    cfg,
                    &mut simplex,
                    &mut cuts,
                    &mut cuts_added,
                    &mut cut_age,
                    &mut polished_obj,
                )?;
                if !converged {
                    return Err(SolverError::Numerical("risk cut loop did not converge".into()));
                }
                let x: Vec<f64> = simplex.values()[..nvars].to_vec();
                let exact = exact_objective(model, &simplex, &x)?;
                let better = match &incumbent {
                    None => true,
                    Some((best, _)) => exact < best - 1e-12,
                };
                if better {
                    incumbent = Some((exact, x));
                }
                min_pruned_bound = min_pruned_bound.min(node_obj);
                continue;
            }
        }

        let (var, frac) = fractional.expect("checked above");
        if let Some((inc_obj, _)) = &incumbent {
            if node_obj >= inc_obj - gap_scale(node_obj) {
                min_pruned_bound = min_pruned_bound.min(node_obj);
                continue;
            }
        }
        let value = simplex.value(var);
        let floor = value.floor();
        let shared = Rc::new(simplex.snapshot());
        last_snapshot = Some(shared.clone());
        let mut down_changes = node.changes.clone();
        down_changes.push((var, model.vars[var].lower, floor));
        let mut up_changes = node.changes.clone();
        up_changes.push((var, floor + 1.0, model.vars[var].upper));
        open.push(Node {
            id: next_id,
            bound: node_obj,
            depth: node.depth + 1,
            changes: down_changes,
            basis: Some(shared.clone()),
            branch_var: Some(var),
            branch_up: false,
            parent_frac: frac,
            parent_obj: node_obj,
        });
        next_id += 1;
        open.push(Node {
            id: next_id,
            bound: node_obj,
            depth: node.depth + 1,
            changes: up_changes,
            basis: Some(shared),
            branch_var: Some(var),
            branch_up: true,
            parent_frac: frac,
            parent_obj: node_obj,
        });
        next_id += 1;
    }

    if root_unbounded {
        return Ok(SolveResult {
            status: SolveStatus::Unbounded,
            incumbent: None,
            bound: f64::NEG_INFINITY,
            nodes_explored,
            cuts_added,
            bound_sequence,
        });
    }

    let open_min = open.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let (status, bound, solution) = match incumbent {
        None => {
            if limit_hit {
                (SolveStatus::Limit, open_min.min(min_pruned_bound), None)
            } else {
                (SolveStatus::Infeasible, f64::INFINITY, None)
            }
        }
        Some((obj, x)) => {
            let bound = open_min.min(min_pruned_bound).min(obj);
            let gap = (obj - bound) / bound.abs().max(1.0);
            let optimal = !limit_hit && gap <= cfg.mip_gap_rel;
            let status = if optimal { SolveStatus::Optimal } else { SolveStatus::Feasible };
            let sol_status = if optimal {
                SolutionStatus::Optimal
            } else {
                SolutionStatus::Feasible
            };
            let schedule = model.extract_solution(&x, sol_status, gap.max(0.0));
            let report = check_solution(model, &schedule);
            if !report.is_empty() {
                let first = &report.violations[0];
                return Err(SolverError::Verification(format!(
                    "{} ({} findings, worst {:.3e})",
                    first.constraint,
                    report.violations.len(),
                    first.amount
                )));
            }
            (status, bound, Some(schedule))
        }
    };

    Ok(SolveResult {
        status,
        incumbent: solution,
        bound,
        nodes_explored,
        cuts_added,
        bound_sequence,
    })
}

/// Most attractive fractional binary under the configured rule, with its
/// fractional part.
fn most_fractional(
    simplex: &Simplex,
    binaries: &[usize],
    cfg: &SolverConfig,
    pseudo: &PseudoCosts,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for &j in binaries {
        let v = simplex.value(j);
        let frac = v - v.floor();
        let dist = frac.min(1.0 - frac);
        if dist <= cfg.int_tol {
            continue;
        }
        let score = match cfg.branching_rule {
            BranchingRule::MostFractional => dist,
            BranchingRule::PseudoCost => {
                let down = pseudo.estimate(j, false) * frac;
                let up = pseudo.estimate(j, true) * (1.0 - frac);
                down.max(1e-6) * up.max(1e-6)
            }
        };
        match best {
            Some((_, s, _)) if s >= score => {}
            _ => best = Some((j, score, frac)),
        }
    }
    best.map(|(j, _, frac)| (j, frac))
}

/// Adds tangent cuts at the current trade point until both epigraphs are
/// within `cut_tol` of the exact quadratic. Returns false if the loop fails
/// to converge.
fn run_cut_loop(
    model: &OptimizationModel,
    cfg: &SolverConfig,
    simplex: &mut Simplex,
    cuts: &mut Vec<CutRec>,
    cuts_added: &mut usize,
    cut_age: &mut u64,
    node_obj: &mut f64,
) -> Result<bool, SolverError> {
    let Some(spec) = &model.risk else {
        return Ok(true);
    };
    let layout = &model.layout;
    let (Some(z_buy), Some(z_sell)) = (layout.z_buy, layout.z_sell) else {
        return Ok(true);
    };
    let mut prev_gap = f64::INFINITY;
    let mut refreshed = false;
    for _round in 0..500 {
        let x = simplex.values();
        let buy: Vec<f64> = layout.buy.iter().map(|&j| x[j]).collect();
        let sell: Vec<f64> = layout.sell.iter().map(|&j| x[j]).collect();
        let (rb, rs) = model
            .exact_risk(&buy, &sell)
            .map_err(|e| SolverError::InvalidModel(e.to_string()))?;
        let zb = x[z_buy];
        let zs = x[z_sell];
        let gap = spec.weight * ((rb - zb).max(0.0) + (rs - zs).max(0.0));
        if gap <= cfg.cut_tol * (1.0 + node_obj.abs()) {
            return Ok(true);
        }
        // warm reoptimization stops moving once cut violations drop under the
        // simplex feasibility tolerance; a fresh solve walks to an exact
        // vertex of the current envelope
        if gap >= prev_gap * (1.0 - 1e-9) {
            if refreshed {
                return Ok(false);
            }
            refreshed = true;
            match simplex.solve_fresh()? {
                LpStatus::Optimal => {}
                other => {
                    return Err(SolverError::Numerical(format!(
                        "cut refresh solve ended {other:?}"
                    )))
                }
            }
            *node_obj = simplex.objective_value();
            prev_gap = f64::INFINITY;
            continue;
        }
        refreshed = false;
        prev_gap = gap;
        let half = 0.5 * cfg.cut_tol * (1.0 + node_obj.abs());
        if spec.weight * (rb - zb) > half {
            let cut = risk_cut(spec.cov_for_buy(), &buy)
                .map_err(|e| SolverError::InvalidModel(e.to_string()))?;
            install_cut(simplex, cuts, cuts_added, cut_age, cfg, z_buy, &layout.buy, &cut, true)?;
        }
        if spec.weight * (rs - zs) > half {
            let cut = risk_cut(spec.cov_for_sell(), &sell)
                .map_err(|e| SolverError::InvalidModel(e.to_string()))?;
            install_cut(simplex, cuts, cuts_added, cut_age, cfg, z_sell, &layout.sell, &cut, false)?;
        }
        match simplex.reoptimize()? {
            LpStatus::Optimal => {}
            other => {
                return Err(SolverError::Numerical(format!(
                    "cut reoptimization ended {other:?}"
                )))
            }
        }
        *node_obj = simplex.objective_value();
    }
    Ok(false)
}

/// Installs `z >= gradient . p - offset`; the epigraph coefficient stays at
/// one so the row's slack violation equals the true epigraph gap. Reuses the
/// oldest inactive pool slot once the cap is hit.
#[allow(clippy::too_many_arguments)]
fn install_cut(
    simplex: &mut Simplex,
    cuts: &mut Vec<CutRec>,
    cuts_added: &mut usize,
    cut_age: &mut u64,
    cfg: &SolverConfig,
    z_var: usize,
    p_vars: &[usize],
    cut: &crate::uncertainty::RiskCut,
    is_buy: bool,
) -> Result<(), SolverError> {
    // cap coefficients near 1e3: big enough that slack violations stay well
    // above the simplex feasibility tolerance, small enough that row
    // activities do not drown in rounding noise
    let gmax = cut.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let scale = (gmax / 1e3).max(1.0);
    let mut coeffs: Vec<(usize, f64)> = vec![(z_var, 1.0 / scale)];
    for (t, &j) in p_vars.iter().enumerate() {
        let g = cut.gradient[t];
        if g != 0.0 {
            coeffs.push((j, -g / scale));
        }
    }
    let rhs = -cut.offset / scale;
    *cut_age += 1;
    *cuts_added += 1;

    let side_count = cuts.iter().filter(|c| c.is_buy == is_buy).count();
    if side_count >= cfg.max_cuts_per_epigraph {
        // oldest cut of this side that is not tight right now
        let victim = cuts
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_buy == is_buy && simplex.slack_value(c.row).abs() > 1e-9)
            .min_by_key(|(_, c)| c.age)
            .map(|(i, _)| i);
        if let Some(i) = victim {
            let row = cuts[i].row;
            simplex.replace_row(row, &coeffs, rhs)?;
            cuts[i] = CutRec {
                row,
                age: *cut_age,
                is_buy,
            };
            return Ok(());
        }
    }
    let row = simplex.num_rows();
    simplex.add_row(&coeffs, lp::Sense::Ge, rhs);
    cuts.push(CutRec {
        row,
        age: *cut_age,
        is_buy,
    });
    Ok(())
}

/// Objective with the epigraph values replaced by the exact quadratics.
fn exact_objective(
    model: &OptimizationModel,
    simplex: &Simplex,
    x: &[f64],
) -> Result<f64, SolverError> {
    let lp_obj = simplex.objective_value();
    let Some(spec) = &model.risk else {
        return Ok(lp_obj);
    };
    let layout = &model.layout;
    let buy: Vec<f64> = layout.buy.iter().map(|&j| x[j]).collect();
    let sell: Vec<f64> = layout.sell.iter().map(|&j| x[j]).collect();
    let (rb, rs) = model
        .exact_risk(&buy, &sell)
        .map_err(|e| SolverError::InvalidModel(e.to_string()))?;
    let zb = layout.z_buy.map_or(0.0, |j| x[j]);
    let zs = layout.z_sell.map_or(0.0, |j| x[j]);
    Ok(lp_obj - spec.weight * (zb + zs) + spec.weight * (rb + rs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, check_solution, Coalition};
    use crate::scenario::{
        BessSpec, CdgSpec, Horizon, HistoryDay, LoadProfile, Microgrid, PriceHistory, PriceSeries,
        PvProfile, Scenario, ScenarioOptions,
    };

    fn quiet_mg(name: &str, periods: usize, fixed: Vec<f64>) -> Microgrid {
        Microgrid {
            name: name.into(),
            cdg: CdgSpec {
                p_min: 0.0,
                p_max: 0.0,
                cost_tiers: vec![(0.0, 0.1)],
            },
            bess: BessSpec {
                capacity: 1.0,
                converter_efficiency: 1.0,
                converter_capacity: 0.0,
                loss_charge: 0.0,
                loss_discharge: 0.0,
                self_discharge_rate: 0.0,
                soc_initial: 0.0,
            },
            load: LoadProfile {
                fixed,
                controllable: vec![0.0; periods],
                inflow_max: vec![],
                load_upper_bound: vec![],
            },
            pv: PvProfile {
                forecast: vec![0.0; periods],
                lower_bound: vec![],
            },
        }
    }

    fn battery_toy() -> Scenario {
        let mut mg = quiet_mg("MG1", 2, vec![10.0, 10.0]);
        mg.bess = BessSpec {
            capacity: 10.0,
            converter_efficiency: 1.0,
            converter_capacity: 10.0,
            loss_charge: 0.0,
            loss_discharge: 0.0,
            self_discharge_rate: 0.0,
            soc_initial: 0.0,
        };
        let mut s = Scenario {
            horizon: Horizon {
                num_periods: 2,
                period_hours: 1.0,
            },
            microgrids: vec![mg],
            prices: PriceSeries {
                buy: vec![0.1, 0.3],
                sell: vec![0.0, 0.0],
            },
            buy_history: PriceHistory::default(),
            sell_history: PriceHistory::default(),
            risk_weight: 0.0,
            options: ScenarioOptions::default(),
        };
        s.fill_defaults();
        s.validate().unwrap();
        s
    }

    /// Enumerate every binary pattern, solve the LP with the binaries fixed,
    /// and return the best objective. Independent of the branch-and-bound
    /// path.
    fn enumerate_binaries(model: &crate::model::OptimizationModel) -> Option<f64> {
        let binaries = model.binary_vars();
        assert!(binaries.len() <= 20, "enumeration oracle wants small models");
        let mut best: Option<f64> = None;
        for pattern in 0..(1u64 << binaries.len()) {
            let mut lp_form = model.as_linear_program();
            for (i, &j) in binaries.iter().enumerate() {
                let v = ((pattern >> i) & 1) as f64;
                lp_form.lower[j] = v;
                lp_form.upper[j] = v;
            }
            match lp::solve_lp(&lp_form).unwrap() {
                lp::LpOutcome::Optimal(sol) => {
                    if best.map_or(true, |b| sol.objective < b) {
                        best = Some(sol.objective);
                    }
                }
                _ => {}
            }
        }
        best
    }

    #[test]
    fn battery_toy_charges_cheap_discharges_dear() {
        let s = battery_toy();
        let model = build_model(&s, &Coalition::grand(1).unwrap()).unwrap();
        let result = solve_mip(&model, &SolverConfig::default()).unwrap();
        assert_eq!(result.status, SolveStatus::Optimal);
        let sol = result.incumbent.as_ref().unwrap();
        assert!((sol.objective_total - 2.0).abs() < 1e-8, "cost {}", sol.objective_total);
        assert!((sol.bess_mode[0][0] - 0.0).abs() < 1e-6);
        assert!((sol.bess_mode[0][1] - 1.0).abs() < 1e-6);
        assert!((sol.charge[0][0] - 10.0).abs() < 1e-6);
        assert!((sol.discharge[0][1] - 10.0).abs() < 1e-6);
        assert!(check_solution(&model, sol).is_empty());

        // exhaustive binary enumeration agrees
        let oracle = enumerate_binaries(&model).unwrap();
        assert!((oracle - 2.0).abs() < 1e-8);
        assert!((result.objective().unwrap() - oracle).abs() <= 1e-6 * oracle.abs().max(1.0));
    }

    #[test]
    fn lossless_soc_recursion_is_pure_difference() {
        // eta = 1, losses 0, delta 0: soc(t) = soc(t-1) + (charge - discharge)/cap
        let s = battery_toy();
        let model = build_model(&s, &Coalition::grand(1).unwrap()).unwrap();
        let sol = solve_mip(&model, &SolverConfig::default())
            .unwrap()
            .incumbent
            .unwrap();
        let cap = 10.0;
        let mut soc_prev = 0.0;
        for t in 0..2 {
            let expect = soc_prev + (sol.charge[0][t] - sol.discharge[0][t]) / cap;
            assert!((sol.soc[0][t] - expect).abs() < 1e-8);
            soc_prev = sol.soc[0][t];
        }
    }

    #[test]
    fn fixing_all_binaries_degenerates_to_single_lp() {
        let s = battery_toy();
        let mut model = build_model(&s, &Coalition::grand(1).unwrap()).unwrap();
        // pin the optimal pattern by bounds
        let u0 = model.layout.bess_mode[0][0];
        let u1 = model.layout.bess_mode[0][1];
        model.vars[u0].upper = 0.0;
        model.vars[u1].lower = 1.0;
        let result = solve_mip(&model, &SolverConfig::default()).unwrap();
        assert_eq!(result.status, SolveStatus::Optimal);
        assert_eq!(result.nodes_explored, 1);
        assert!((result.objective().unwrap() - 2.0).abs() < 1e-8);
    }

    fn analytic_risk_scenario() -> Scenario {
        let mut mg = quiet_mg("MG1", 1, vec![1000.0]);
        mg.cdg = CdgSpec {
            p_min: 0.0,
            p_max: 2000.0,
            cost_tiers: vec![(2000.0, 1.0)],
        };
        let day = HistoryDay {
            actual: vec![1.0],
            forecast: vec![0.0],
        };
        let mut s = Scenario {
            horizon: Horizon {
                num_periods: 1,
                period_hours: 1.0,
            },
            microgrids: vec![mg],
            prices: PriceSeries {
                buy: vec![0.0],
                sell: vec![0.0],
            },
            buy_history: PriceHistory {
                alpha: 0.0,
                days: vec![day.clone()],
            },
            sell_history: PriceHistory {
                alpha: 0.0,
                days: vec![day],
            },
            risk_weight: 0.001,
            options: ScenarioOptions::default(),
        };
        s.fill_defaults();
        s.validate().unwrap();
        s
    }

    #[test]
    fn interior_risk_optimum_matches_calculus() {
        // marginal CDG saving 1 $/kW vs marginal risk 2 r p: p* = 1/(2r) = 500
        let s = analytic_risk_scenario();
        let model = build_model(&s, &Coalition::grand(1).unwrap()).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.cut_tol = 1e-13;
        let result = solve_mip(&model, &cfg).unwrap();
        assert_eq!(result.status, SolveStatus::Optimal);
        let sol = result.incumbent.unwrap();
        assert!(
            (sol.buy[0] - 500.0).abs() <= 500.0 * 1e-6,
            "p_buy = {}",
            sol.buy[0]
        );
        assert!(
            (sol.objective_total - 750.0).abs() <= 750.0 * 1e-6,
            "objective = {}",
            sol.objective_total
        );
        // epigraph agrees with the exact quadratic at the incumbent
        let exact = 0.001 * sol.buy[0] * sol.buy[0];
        assert!((0.001 * sol.risk_epigraph_buy - exact * 1.0).abs() <= 1e-6 * (1.0 + 750.0));
        assert!(result.cuts_added > 0);
    }

    #[test]
    fn infeasible_terminal_soc_reported() {
        let mut s = battery_toy();
        s.microgrids[0].bess.soc_initial = 1.0;
        s.microgrids[0].bess.self_discharge_rate = 0.5;
        s.microgrids[0].bess.converter_capacity = 0.0;
        s.options.terminal_soc = true;
        s.validate().unwrap();
        let model = build_model(&s, &Coalition::grand(1).unwrap()).unwrap();
        let result = solve_mip(&model, &SolverConfig::default()).unwrap();
        assert_eq!(result.status, SolveStatus::Infeasible);
        assert!(result.incumbent.is_none());
    }

    #[test]
    fn repeat_solves_are_bit_identical() {
        let s = battery_toy();
        let model = build_model(&s, &Coalition::grand(1).unwrap()).unwrap();
        let a = solve_mip(&model, &SolverConfig::default()).unwrap();
        let b = solve_mip(&model, &SolverConfig::default()).unwrap();
        let xa = &a.incumbent.as_ref().unwrap().raw_x;
        let xb = &b.incumbent.as_ref().unwrap().raw_x;
        assert_eq!(xa, xb);
        assert_eq!(a.nodes_explored, b.nodes_explored);
    }

    #[test]
    fn bound_sequence_is_monotone() {
        let s = battery_toy();
        let model = build_model(&s, &Coalition::grand(1).unwrap()).unwrap();
        let result = solve_mip(&model, &SolverConfig::default()).unwrap();
        for pair in result.bound_sequence.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9);
        }
    }
}
