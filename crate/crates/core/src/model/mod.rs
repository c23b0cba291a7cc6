//! Translation of a scenario plus a coalition into a mixed-integer model:
//! variables, sparse linear rows, binary marks and the convex-risk
//! descriptors the solver turns into cutting planes.

mod build;
mod check;
mod mps;

pub use build::build_model;
pub use check::{check_solution, derive_diagnostics, Diagnostics, Violation, ViolationReport};

use serde::Serialize;
use thiserror::Error;

use crate::scenario::CdgPricingMode;
use crate::solver::lp::{LinearProgram, LinearRow, Sense, INF};
use crate::uncertainty::{risk_value, CovarianceEstimate, UncertaintyError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid coalition: {0}")]
    InvalidCoalition(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
}

/// A nonempty subset of the scenario's microgrids, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Coalition {
    members: Vec<usize>,
}

impl Coalition {
    pub fn new(mut members: Vec<usize>) -> Result<Self, ModelError> {
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            return Err(ModelError::InvalidCoalition("coalition must be nonempty".into()));
        }
        Ok(Self { members })
    }

    /// Builds a coalition from a bitmask over player indices.
    pub fn from_mask(mask: u64) -> Result<Self, ModelError> {
        let members: Vec<usize> = (0..64).filter(|k| mask & (1 << k) != 0).collect();
        Self::new(members)
    }

    pub fn grand(n: usize) -> Result<Self, ModelError> {
        Self::new((0..n).collect())
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn mask(&self) -> u64 {
        self.members.iter().fold(0u64, |m, &k| m | (1 << k))
    }

    pub fn contains(&self, player: usize) -> bool {
        self.members.binary_search(&player).is_ok()
    }

    pub fn validate_for(&self, num_microgrids: usize) -> Result<(), ModelError> {
        match self.members.last() {
            Some(&max) if max >= num_microgrids => Err(ModelError::InvalidCoalition(format!(
                "member index {max} out of range for {num_microgrids} microgrids"
            ))),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for Coalition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (i, m) in self.members.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", m + 1)?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone)]
pub struct VarDef {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub objective: f64,
    pub binary: bool,
}

#[derive(Debug, Clone)]
pub struct ModelRow {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Where every decision variable of a coalition model lives.
///
/// Indices are positions in `members` (ascending scenario microgrid ids),
/// not raw ids. Shift variables exist only for `from != to`.
#[derive(Debug, Clone)]
pub struct VariableLayout {
    pub members: Vec<usize>,
    pub periods: usize,
    pub cdg: Vec<Vec<usize>>,
    /// Per-tier segment variables (block pricing only).
    pub segment: Vec<Vec<Vec<usize>>>,
    /// Tier selection binaries (all-units pricing only).
    pub tier_select: Vec<Vec<Vec<usize>>>,
    /// Linearized tier-cost product variables (all-units pricing only).
    pub tier_cost: Vec<Vec<Vec<usize>>>,
    pub charge: Vec<Vec<usize>>,
    pub discharge: Vec<Vec<usize>>,
    /// BESS mode binaries: 1 discharging, 0 charging.
    pub bess_mode: Vec<Vec<usize>>,
    pub soc: Vec<Vec<usize>>,
    /// `shift[k][from][to]`; `None` on the diagonal.
    pub shift: Vec<Vec<Vec<Option<usize>>>>,
    pub load_adj: Vec<Vec<usize>>,
    pub buy: Vec<usize>,
    pub sell: Vec<usize>,
    pub z_buy: Option<usize>,
    pub z_sell: Option<usize>,
}

/// Convex-risk descriptor: the two covariance estimates, the weight, and the
/// pairing between histories and trade directions.
#[derive(Debug, Clone)]
pub struct RiskSpec {
    pub weight: f64,
    pub cov_buy: CovarianceEstimate,
    pub cov_sell: CovarianceEstimate,
    /// Pair the sell-history covariance with purchases (and vice versa), as
    /// the literal objective statement reads.
    pub paper_literal: bool,
}

impl RiskSpec {
    /// Covariance applied to the purchase vector under the active pairing.
    pub fn cov_for_buy(&self) -> &CovarianceEstimate {
        if self.paper_literal {
            &self.cov_sell
        } else {
            &self.cov_buy
        }
    }

    pub fn cov_for_sell(&self) -> &CovarianceEstimate {
        if self.paper_literal {
            &self.cov_buy
        } else {
            &self.cov_sell
        }
    }
}

/// Data the model keeps so solutions can be extracted, re-priced and checked
/// without going back to the scenario.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub period_hours: f64,
    pub periods: usize,
    pub mg_names: Vec<String>,
    pub buy_price: Vec<f64>,
    pub sell_price: Vec<f64>,
    pub pv: Vec<Vec<f64>>,
    pub fixed: Vec<Vec<f64>>,
    pub controllable: Vec<Vec<f64>>,
    pub inflow_max: Vec<Vec<f64>>,
    pub cdg_tiers: Vec<Vec<(f64, f64)>>,
    pub cdg_p_min: Vec<f64>,
    pub pricing_mode: CdgPricingMode,
    pub dr_objective_term: bool,
    pub soc_initial: Vec<f64>,
}

#[derive(Debug)]
pub struct OptimizationModel {
    pub vars: Vec<VarDef>,
    pub rows: Vec<ModelRow>,
    pub layout: VariableLayout,
    pub risk: Option<RiskSpec>,
    pub context: ModelContext,
}

impl OptimizationModel {
    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn binary_vars(&self) -> Vec<usize> {
        (0..self.vars.len()).filter(|&j| self.vars[j].binary).collect()
    }

    /// The continuous relaxation as a plain LP (risk epigraphs start with no
    /// cuts).
    pub fn as_linear_program(&self) -> LinearProgram {
        LinearProgram {
            objective: self.vars.iter().map(|v| v.objective).collect(),
            lower: self.vars.iter().map(|v| v.lower).collect(),
            upper: self.vars.iter().map(|v| v.upper).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| LinearRow {
                    coeffs: r.coeffs.clone(),
                    sense: r.sense,
                    rhs: r.rhs,
                })
                .collect(),
        }
    }

    pub fn to_mps(&self) -> String {
        mps::to_mps(self)
    }

    /// Exact quadratic risk value of a trade point under the model's pairing.
    pub fn exact_risk(&self, buy: &[f64], sell: &[f64]) -> Result<(f64, f64), ModelError> {
        match &self.risk {
            None => Ok((0.0, 0.0)),
            Some(spec) => Ok((
                risk_value(spec.cov_for_buy(), buy)?,
                risk_value(spec.cov_for_sell(), sell)?,
            )),
        }
    }

    /// Builds the structured schedule view from a raw solver point.
    pub fn extract_solution(&self, x: &[f64], status: SolutionStatus, gap: f64) -> ScheduleSolution {
        let layout = &self.layout;
        let ctx = &self.context;
        let periods = layout.periods;
        let nm = layout.members.len();
        let series = |ids: &Vec<Vec<usize>>| -> Vec<Vec<f64>> {
            ids.iter()
                .map(|row| row.iter().map(|&j| x[j]).collect())
                .collect()
        };
        let mut shifts = Vec::new();
        for k in 0..nm {
            for from in 0..periods {
                for to in 0..periods {
                    if let Some(j) = layout.shift[k][from][to] {
                        if x[j] > 1e-9 {
                            shifts.push(ShiftFlow {
                                member: layout.members[k],
                                from,
                                to,
                                kw: x[j],
                            });
                        }
                    }
                }
            }
        }
        let buy: Vec<f64> = layout.buy.iter().map(|&j| x[j]).collect();
        let sell: Vec<f64> = layout.sell.iter().map(|&j| x[j]).collect();
        let breakdown = self.breakdown(x);
        let load_original = (0..nm)
            .map(|k| {
                (0..periods)
                    .map(|t| ctx.fixed[k][t] + ctx.controllable[k][t])
                    .collect()
            })
            .collect();
        ScheduleSolution {
            members: layout.members.clone(),
            mg_names: ctx.mg_names.clone(),
            periods,
            period_hours: ctx.period_hours,
            cdg: series(&layout.cdg),
            charge: series(&layout.charge),
            discharge: series(&layout.discharge),
            bess_mode: series(&layout.bess_mode),
            soc: series(&layout.soc),
            load_adjusted: series(&layout.load_adj),
            load_original,
            pv: ctx.pv.clone(),
            shifts,
            buy,
            sell,
            risk_epigraph_buy: layout.z_buy.map_or(0.0, |j| x[j]),
            risk_epigraph_sell: layout.z_sell.map_or(0.0, |j| x[j]),
            buy_price: ctx.buy_price.clone(),
            sell_price: ctx.sell_price.clone(),
            objective_total: breakdown.total(),
            breakdown,
            status,
            gap,
            raw_x: x.to_vec(),
        }
    }

    /// Independent objective decomposition from a raw point; risk is the
    /// exact quadratic, never the epigraph value.
    pub fn breakdown(&self, x: &[f64]) -> ObjectiveBreakdown {
        let layout = &self.layout;
        let ctx = &self.context;
        let dt = ctx.period_hours;
        let mut cdg_cost = 0.0;
        for k in 0..layout.members.len() {
            for t in 0..layout.periods {
                cdg_cost += dt
                    * cdg_energy_cost(
                        &ctx.cdg_tiers[k],
                        ctx.pricing_mode,
                        x[layout.cdg[k][t]],
                    );
            }
        }
        let mut grid_buy_cost = 0.0;
        let mut grid_sell_revenue = 0.0;
        for t in 0..layout.periods {
            grid_buy_cost += dt * ctx.buy_price[t] * x[layout.buy[t]];
            grid_sell_revenue += dt * ctx.sell_price[t] * x[layout.sell[t]];
        }
        let mut dr_term = 0.0;
        if ctx.dr_objective_term {
            for k in 0..layout.members.len() {
                for from in 0..layout.periods {
                    for to in 0..layout.periods {
                        if let Some(j) = layout.shift[k][from][to] {
                            dr_term += dt * (ctx.buy_price[to] - ctx.buy_price[from]) * x[j];
                        }
                    }
                }
            }
        }
        let buy: Vec<f64> = layout.buy.iter().map(|&j| x[j]).collect();
        let sell: Vec<f64> = layout.sell.iter().map(|&j| x[j]).collect();
        let risk_term = match &self.risk {
            None => 0.0,
            Some(spec) => {
                let (rb, rs) = self.exact_risk(&buy, &sell).expect("dimensions fixed by layout");
                spec.weight * (rb + rs)
            }
        };
        ObjectiveBreakdown {
            cdg_cost,
            grid_buy_cost,
            grid_sell_revenue,
            dr_term,
            risk_term,
        }
    }
}

/// Cost of one period of CDG output under a tier curve, per unit time.
///
/// Block mode: each tier's price applies to the units inside that tier
/// (convex, marginal pricing). All-units mode: the price of the tier
/// containing the output applies to every unit; at a shared tier boundary
/// the cheaper tier wins, matching cost minimization.
pub fn cdg_energy_cost(tiers: &[(f64, f64)], mode: CdgPricingMode, output: f64) -> f64 {
    match mode {
        CdgPricingMode::Block => {
            let mut cost = 0.0;
            let mut edge = 0.0;
            for &(bound, price) in tiers {
                let width = bound - edge;
                let inside = (output - edge).clamp(0.0, width);
                cost += price * inside;
                edge = bound;
            }
            cost
        }
        CdgPricingMode::AllUnits => {
            let mut edge = 0.0;
            for &(bound, price) in tiers {
                if output <= bound + 1e-9 {
                    return price * output;
                }
                edge = bound;
            }
            let _ = edge;
            tiers.last().map_or(0.0, |&(_, price)| price * output)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionStatus {
    Optimal,
    Feasible,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ObjectiveBreakdown {
    pub cdg_cost: f64,
    pub grid_buy_cost: f64,
    pub grid_sell_revenue: f64,
    pub dr_term: f64,
    pub risk_term: f64,
}

impl ObjectiveBreakdown {
    pub fn total(&self) -> f64 {
        self.cdg_cost + self.grid_buy_cost - self.grid_sell_revenue + self.dr_term + self.risk_term
    }
}

/// A realized load shift: `kw` moved from period `from` to period `to`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShiftFlow {
    pub member: usize,
    pub from: usize,
    pub to: usize,
    pub kw: f64,
}

/// Optimal variable values for one coalition plus the objective
/// decomposition and solve metadata.
#[derive(Debug, Clone, Serialize)]
pub struct ScheduleSolution {
    pub members: Vec<usize>,
    pub mg_names: Vec<String>,
    pub periods: usize,
    pub period_hours: f64,
    pub cdg: Vec<Vec<f64>>,
    pub charge: Vec<Vec<f64>>,
    pub discharge: Vec<Vec<f64>>,
    pub bess_mode: Vec<Vec<f64>>,
    pub soc: Vec<Vec<f64>>,
    pub load_adjusted: Vec<Vec<f64>>,
    pub load_original: Vec<Vec<f64>>,
    pub pv: Vec<Vec<f64>>,
    pub shifts: Vec<ShiftFlow>,
    pub buy: Vec<f64>,
    pub sell: Vec<f64>,
    pub risk_epigraph_buy: f64,
    pub risk_epigraph_sell: f64,
    pub buy_price: Vec<f64>,
    pub sell_price: Vec<f64>,
    pub objective_total: f64,
    pub breakdown: ObjectiveBreakdown,
    pub status: SolutionStatus,
    pub gap: f64,
    #[serde(skip)]
    pub raw_x: Vec<f64>,
}

impl ScheduleSolution {
    pub fn total_buy(&self) -> f64 {
        self.buy.iter().sum()
    }

    pub fn total_sell(&self) -> f64 {
        self.sell.iter().sum()
    }

    /// Position of a scenario microgrid id within this solution, if present.
    pub fn member_pos(&self, mg: usize) -> Option<usize> {
        self.members.iter().position(|&m| m == mg)
    }
}

pub(crate) const MODEL_INF: f64 = INF;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coalition_display_and_mask() {
        let c = Coalition::new(vec![2, 0]).unwrap();
        assert_eq!(c.to_string(), "{1,3}");
        assert_eq!(c.mask(), 0b101);
        assert_eq!(Coalition::from_mask(0b101).unwrap(), c);
        assert!(Coalition::new(vec![]).is_err());
    }

    #[test]
    fn block_cost_hand_values() {
        // 25 $/unit up to 200, 41 to 400, 60 to 500
        let tiers = vec![(200.0, 25.0), (400.0, 41.0), (500.0, 60.0)];
        let block = cdg_energy_cost(&tiers, CdgPricingMode::Block, 351.0);
        assert!((block - 11191.0).abs() < 1e-9, "block cost {block}");
        let all_units = cdg_energy_cost(&tiers, CdgPricingMode::AllUnits, 351.0);
        assert!((all_units - 14391.0).abs() < 1e-9, "all-units cost {all_units}");
        // boundary: 200 exactly is priced at the cheaper tier in both modes
        assert!((cdg_energy_cost(&tiers, CdgPricingMode::AllUnits, 200.0) - 5000.0).abs() < 1e-9);
        assert!((cdg_energy_cost(&tiers, CdgPricingMode::Block, 200.0) - 5000.0).abs() < 1e-9);
        // block marginal price is nondecreasing
        let mut prev = 0.0;
        for step in 1..=500 {
            let p = step as f64;
            let marginal = cdg_energy_cost(&tiers, CdgPricingMode::Block, p)
                - cdg_energy_cost(&tiers, CdgPricingMode::Block, p - 1.0);
            assert!(marginal >= prev - 1e-9);
            prev = marginal;
        }
    }
}
