//! Independent verification of solved schedules and the derived
//! per-microgrid diagnostics.

use serde::Serialize;

use crate::solver::lp::Sense;

use super::{OptimizationModel, ScheduleSolution};

/// Feasibility tolerance, absolute (kW / SOC fraction).
pub const CHECK_FEAS_TOL: f64 = 1e-6;
/// Relative tolerance on objective consistency.
pub const CHECK_OBJ_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub constraint: String,
    pub amount: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, constraint: String, amount: f64) {
        self.violations.push(Violation { constraint, amount });
    }
}

/// Re-evaluates every row, bound and binary mark of the model at the
/// solution point and re-prices the objective independently (exact quadratic
/// risk, not the epigraph). An empty report means the solution is feasible
/// and its reported objective is consistent.
pub fn check_solution(model: &OptimizationModel, sol: &ScheduleSolution) -> ViolationReport {
    let mut report = ViolationReport::default();
    let x = &sol.raw_x;
    if x.len() != model.num_vars() {
        report.push(
            format!(
                "solution has {} values, model has {} variables",
                x.len(),
                model.num_vars()
            ),
            f64::INFINITY,
        );
        return report;
    }

    for (j, var) in model.vars.iter().enumerate() {
        let v = x[j];
        if v < var.lower - CHECK_FEAS_TOL {
            report.push(format!("bound[{}] below lower", var.name), var.lower - v);
        }
        if v > var.upper + CHECK_FEAS_TOL {
            report.push(format!("bound[{}] above upper", var.name), v - var.upper);
        }
        if var.binary {
            let frac = (v - v.round()).abs();
            if frac > CHECK_FEAS_TOL {
                report.push(format!("integrality[{}]", var.name), frac);
            }
        }
    }

    for row in &model.rows {
        let activity: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
        let violation = match row.sense {
            Sense::Le => activity - row.rhs,
            Sense::Ge => row.rhs - activity,
            Sense::Eq => (activity - row.rhs).abs(),
        };
        if violation > CHECK_FEAS_TOL {
            report.push(row.name.clone(), violation);
        }
    }

    // epigraph variables must dominate the exact quadratic risk
    if let Some(spec) = &model.risk {
        let (rb, rs) = model
            .exact_risk(&sol.buy, &sol.sell)
            .expect("solution dimensions already checked");
        let scale = 1.0 + sol.objective_total.abs();
        if (rb - sol.risk_epigraph_buy) * spec.weight > CHECK_OBJ_TOL * scale {
            report.push(
                "risk_epigraph[buy] below exact quadratic".into(),
                (rb - sol.risk_epigraph_buy) * spec.weight,
            );
        }
        if (rs - sol.risk_epigraph_sell) * spec.weight > CHECK_OBJ_TOL * scale {
            report.push(
                "risk_epigraph[sell] below exact quadratic".into(),
                (rs - sol.risk_epigraph_sell) * spec.weight,
            );
        }
    }

    // objective consistency: independent re-pricing vs the reported numbers
    let fresh = model.breakdown(x);
    let scale = sol.objective_total.abs().max(1.0);
    let gap = (fresh.total() - sol.objective_total).abs();
    if gap > CHECK_OBJ_TOL * scale {
        report.push("objective recomputation mismatch".into(), gap);
    }
    let reported_sum = sol.breakdown.total();
    let sum_gap = (reported_sum - sol.objective_total).abs();
    if sum_gap > CHECK_OBJ_TOL * scale {
        report.push("objective breakdown does not sum to total".into(), sum_gap);
    }
    report
}

/// Per-microgrid shortage/surplus series and demand-response profit.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub mg_names: Vec<String>,
    /// Local supply deficit per member and period (kW).
    pub shortage: Vec<Vec<f64>>,
    /// Local excess per member and period (kW).
    pub surplus: Vec<Vec<f64>>,
    /// Profit from shifting load to cheaper hours, per member ($).
    pub dr_profit: Vec<f64>,
}

/// Shortage/surplus are how far each microgrid's own assets fall short of
/// (or exceed) its adjusted demand; trades inside the coalition and with the
/// grid cover the residual. DR profit prices every realized shift at the
/// purchase-price difference between its source and destination hours.
pub fn derive_diagnostics(sol: &ScheduleSolution) -> Diagnostics {
    let nm = sol.members.len();
    let mut shortage = vec![vec![0.0; sol.periods]; nm];
    let mut surplus = vec![vec![0.0; sol.periods]; nm];
    for k in 0..nm {
        for t in 0..sol.periods {
            let local_deficit = sol.load_adjusted[k][t] + sol.charge[k][t]
                - sol.pv[k][t]
                - sol.cdg[k][t]
                - sol.discharge[k][t];
            shortage[k][t] = local_deficit.max(0.0);
            surplus[k][t] = (-local_deficit).max(0.0);
        }
    }
    let mut dr_profit = vec![0.0; nm];
    for flow in &sol.shifts {
        if let Some(pos) = sol.member_pos(flow.member) {
            dr_profit[pos] +=
                flow.kw * (sol.buy_price[flow.from] - sol.buy_price[flow.to]) * sol.period_hours;
        }
    }
    Diagnostics {
        mg_names: sol.mg_names.clone(),
        shortage,
        surplus,
        dr_profit,
    }
}
