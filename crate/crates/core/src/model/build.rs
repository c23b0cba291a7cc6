//! Assembly of the coalition optimization model.

use crate::scenario::{CdgPricingMode, Scenario};
use crate::solver::lp::Sense;
use crate::uncertainty::estimate_covariance;

use super::{
    Coalition, ModelContext, ModelError, ModelRow, OptimizationModel, RiskSpec, VarDef,
    VariableLayout, MODEL_INF,
};

struct Builder {
    vars: Vec<VarDef>,
    rows: Vec<ModelRow>,
}

impl Builder {
    fn var(&mut self, name: String, lower: f64, upper: f64, objective: f64, binary: bool) -> usize {
        let id = self.vars.len();
        self.vars.push(VarDef {
            name,
            lower,
            upper,
            objective,
            binary,
        });
        id
    }

    fn row(&mut self, name: String, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(ModelRow {
            name,
            coeffs,
            sense,
            rhs,
        });
    }
}

/// Builds the mixed-integer model for one coalition.
///
/// The scenario is used as given: the worst-case transform, when enabled,
/// must already have been applied (`Scenario::effective`). Fails only on
/// dimension/coalition errors; feasibility is the solver's business.
pub fn build_model(scenario: &Scenario, coalition: &Coalition) -> Result<OptimizationModel, ModelError> {
    coalition.validate_for(scenario.num_microgrids())?;
    let periods = scenario.horizon.num_periods;
    let dt = scenario.horizon.period_hours;
    let members = coalition.members().to_vec();
    let nm = members.len();
    let mode = scenario.options.cdg_pricing_mode;
    let dr_term = scenario.options.dr_objective_term;

    for &k in &members {
        let mg = &scenario.microgrids[k];
        for (len, what) in [
            (mg.load.fixed.len(), "load.fixed"),
            (mg.load.controllable.len(), "load.controllable"),
            (mg.load.inflow_max.len(), "load.inflow_max"),
            (mg.pv.forecast.len(), "pv.forecast"),
            (scenario.prices.buy.len(), "prices.buy"),
            (scenario.prices.sell.len(), "prices.sell"),
        ] {
            if len != periods {
                return Err(ModelError::Dimension(format!(
                    "{what} has {len} entries, expected {periods}"
                )));
            }
        }
    }

    let mut b = Builder {
        vars: Vec::new(),
        rows: Vec::new(),
    };

    let risk = if scenario.risk_weight > 0.0 {
        Some(RiskSpec {
            weight: scenario.risk_weight,
            cov_buy: estimate_covariance(&scenario.buy_history)?,
            cov_sell: estimate_covariance(&scenario.sell_history)?,
            paper_literal: scenario.options.paper_literal_risk,
        })
    } else {
        None
    };
    if let Some(spec) = &risk {
        for (cov, name) in [(&spec.cov_buy, "buy"), (&spec.cov_sell, "sell")] {
            if cov.dim() != periods {
                return Err(ModelError::Dimension(format!(
                    "{name} history covariance is {0}x{0}, horizon has {periods} periods",
                    cov.dim()
                )));
            }
        }
    }

    // --- variables ---
    let mut cdg = vec![vec![0usize; periods]; nm];
    let mut segment = vec![Vec::new(); nm];
    let mut tier_select = vec![Vec::new(); nm];
    let mut tier_cost = vec![Vec::new(); nm];
    let mut charge = vec![vec![0usize; periods]; nm];
    let mut discharge = vec![vec![0usize; periods]; nm];
    let mut bess_mode = vec![vec![0usize; periods]; nm];
    let mut soc = vec![vec![0usize; periods]; nm];
    let mut shift = vec![vec![vec![None; periods]; periods]; nm];
    let mut load_adj = vec![vec![0usize; periods]; nm];

    for (pos, &k) in members.iter().enumerate() {
        let mg = &scenario.microgrids[k];
        let name = &mg.name;
        let eta = mg.bess.converter_efficiency;
        let charge_cap = mg.bess.converter_capacity / eta;
        let discharge_cap = mg.bess.converter_capacity * eta;
        for t in 0..periods {
            let tn = t + 1;
            cdg[pos][t] = b.var(
                format!("cdg[{name},t{tn}]"),
                mg.cdg.p_min,
                mg.cdg.p_max,
                0.0,
                false,
            );
            charge[pos][t] = b.var(format!("charge[{name},t{tn}]"), 0.0, charge_cap, 0.0, false);
            discharge[pos][t] = b.var(
                format!("discharge[{name},t{tn}]"),
                0.0,
                discharge_cap,
                0.0,
                false,
            );
            bess_mode[pos][t] = b.var(format!("mode[{name},t{tn}]"), 0.0, 1.0, 0.0, true);
            soc[pos][t] = b.var(format!("soc[{name},t{tn}]"), 0.0, 1.0, 0.0, false);
            load_adj[pos][t] = b.var(format!("load_adj[{name},t{tn}]"), 0.0, MODEL_INF, 0.0, false);
        }
        match mode {
            CdgPricingMode::Block => {
                let mut per_t = vec![Vec::new(); periods];
                for t in 0..periods {
                    let mut edge = 0.0;
                    for (i, &(bound, price)) in mg.cdg.cost_tiers.iter().enumerate() {
                        let width = bound - edge;
                        per_t[t].push(b.var(
                            format!("cdg_seg{i}[{name},t{}]", t + 1),
                            0.0,
                            width.max(0.0),
                            price * dt,
                            false,
                        ));
                        edge = bound;
                    }
                }
                segment[pos] = per_t;
            }
            CdgPricingMode::AllUnits => {
                let mut sel_t = vec![Vec::new(); periods];
                let mut w_t = vec![Vec::new(); periods];
                for t in 0..periods {
                    for (i, &(_, price)) in mg.cdg.cost_tiers.iter().enumerate() {
                        sel_t[t].push(b.var(
                            format!("tier{i}[{name},t{}]", t + 1),
                            0.0,
                            1.0,
                            0.0,
                            true,
                        ));
                        w_t[t].push(b.var(
                            format!("tier_out{i}[{name},t{}]", t + 1),
                            0.0,
                            mg.cdg.p_max,
                            price * dt,
                            false,
                        ));
                    }
                }
                tier_select[pos] = sel_t;
                tier_cost[pos] = w_t;
            }
        }
        for from in 0..periods {
            for to in 0..periods {
                if from == to {
                    continue;
                }
                let cap = mg.load.controllable[from].min(mg.load.inflow_max[to]);
                shift[pos][from][to] = Some(b.var(
                    format!("shift[{name},t{}->t{}]", from + 1, to + 1),
                    0.0,
                    cap,
                    if dr_term {
                        (scenario.prices.buy[to] - scenario.prices.buy[from]) * dt
                    } else {
                        0.0
                    },
                    false,
                ));
            }
        }
    }

    let buy: Vec<usize> = (0..periods)
        .map(|t| {
            b.var(
                format!("buy[t{}]", t + 1),
                0.0,
                MODEL_INF,
                scenario.prices.buy[t] * dt,
                false,
            )
        })
        .collect();
    let sell: Vec<usize> = (0..periods)
        .map(|t| {
            b.var(
                format!("sell[t{}]", t + 1),
                0.0,
                MODEL_INF,
                -scenario.prices.sell[t] * dt,
                false,
            )
        })
        .collect();
    let (z_buy, z_sell) = match &risk {
        Some(spec) => (
            Some(b.var("risk_buy".into(), 0.0, MODEL_INF, spec.weight, false)),
            Some(b.var("risk_sell".into(), 0.0, MODEL_INF, spec.weight, false)),
        ),
        None => (None, None),
    };

    // --- rows ---
    for t in 0..periods {
        // coalition power balance: pv + cdg + discharge + buy = load + charge + sell
        let mut coeffs = Vec::with_capacity(nm * 4 + 2);
        let mut pv_total = 0.0;
        for (pos, &k) in members.iter().enumerate() {
            let mg = &scenario.microgrids[k];
            pv_total += mg.pv.forecast[t];
            coeffs.push((cdg[pos][t], 1.0));
            coeffs.push((discharge[pos][t], 1.0));
            coeffs.push((load_adj[pos][t], -1.0));
            coeffs.push((charge[pos][t], -1.0));
        }
        coeffs.push((buy[t], 1.0));
        coeffs.push((sell[t], -1.0));
        b.row(format!("balance[t{}]", t + 1), coeffs, Sense::Eq, -pv_total);
    }

    for (pos, &k) in members.iter().enumerate() {
        let mg = &scenario.microgrids[k];
        let name = &mg.name;
        let eta = mg.bess.converter_efficiency;
        let cap = mg.bess.capacity;
        let keep = 1.0 - mg.bess.self_discharge_rate;
        let charge_stored = (1.0 - mg.bess.loss_charge) * eta; // kWh stored per grid kWh
        let discharge_drawn = 1.0 / ((1.0 - mg.bess.loss_discharge) * eta); // kWh drawn per grid kWh
        let soc0 = mg.bess.soc_initial;

        match mode {
            CdgPricingMode::Block => {
                for t in 0..periods {
                    let mut coeffs = vec![(cdg[pos][t], 1.0)];
                    for &s in &segment[pos][t] {
                        coeffs.push((s, -1.0));
                    }
                    b.row(format!("cdg_link[{name},t{}]", t + 1), coeffs, Sense::Eq, 0.0);
                }
            }
            CdgPricingMode::AllUnits => {
                let p_max = mg.cdg.p_max;
                for t in 0..periods {
                    let tn = t + 1;
                    let sel = &tier_select[pos][t];
                    let w = &tier_cost[pos][t];
                    b.row(
                        format!("tier_pick[{name},t{tn}]"),
                        sel.iter().map(|&j| (j, 1.0)).collect(),
                        Sense::Eq,
                        1.0,
                    );
                    // active tier brackets the output
                    let mut ub_coeffs = vec![(cdg[pos][t], 1.0)];
                    let mut lb_coeffs = vec![(cdg[pos][t], 1.0)];
                    let mut edge = mg.cdg.p_min;
                    for (i, &(bound, _)) in mg.cdg.cost_tiers.iter().enumerate() {
                        ub_coeffs.push((sel[i], -bound));
                        lb_coeffs.push((sel[i], -edge));
                        edge = bound;
                    }
                    b.row(format!("tier_ub[{name},t{tn}]"), ub_coeffs, Sense::Le, 0.0);
                    b.row(format!("tier_lb[{name},t{tn}]"), lb_coeffs, Sense::Ge, 0.0);
                    for i in 0..sel.len() {
                        // w_i >= cdg - p_max (1 - y_i); cost minimization
                        // presses w_i onto cdg when tier i is picked
                        b.row(
                            format!("tier_out_lo{i}[{name},t{tn}]"),
                            vec![(cdg[pos][t], 1.0), (w[i], -1.0), (sel[i], p_max)],
                            Sense::Le,
                            p_max,
                        );
                        b.row(
                            format!("tier_out_hi{i}[{name},t{tn}]"),
                            vec![(w[i], 1.0), (sel[i], -p_max)],
                            Sense::Le,
                            0.0,
                        );
                    }
                }
            }
        }

        for t in 0..periods {
            let tn = t + 1;
            // converter power gating
            if mg.bess.converter_capacity > 0.0 {
                b.row(
                    format!("bess_charge_power_cap[{name},t{tn}]"),
                    vec![
                        (charge[pos][t], 1.0),
                        (bess_mode[pos][t], mg.bess.converter_capacity / eta),
                    ],
                    Sense::Le,
                    mg.bess.converter_capacity / eta,
                );
                b.row(
                    format!("bess_discharge_power_cap[{name},t{tn}]"),
                    vec![
                        (discharge[pos][t], 1.0),
                        (bess_mode[pos][t], -mg.bess.converter_capacity * eta),
                    ],
                    Sense::Le,
                    0.0,
                );
            }

            // SOC-dependent caps, big-M = capacity
            let mut charge_coeffs = vec![(charge[pos][t], charge_stored), (bess_mode[pos][t], -cap)];
            let mut charge_rhs = cap;
            let mut discharge_coeffs =
                vec![(discharge[pos][t], discharge_drawn), (bess_mode[pos][t], cap)];
            let mut discharge_rhs = cap;
            if t == 0 {
                charge_rhs -= cap * keep * soc0;
                discharge_rhs += cap * keep * soc0;
            } else {
                charge_coeffs.push((soc[pos][t - 1], cap * keep));
                discharge_coeffs.push((soc[pos][t - 1], -cap * keep));
            }
            b.row(
                format!("bess_charge_soc_cap[{name},t{tn}]"),
                charge_coeffs,
                Sense::Le,
                charge_rhs,
            );
            b.row(
                format!("bess_discharge_soc_cap[{name},t{tn}]"),
                discharge_coeffs,
                Sense::Le,
                discharge_rhs,
            );

            // SOC recursion with pre-period self-discharge
            let mut rec = vec![
                (soc[pos][t], 1.0),
                (charge[pos][t], -dt * charge_stored / cap),
                (discharge[pos][t], dt * discharge_drawn / cap),
            ];
            let rhs = if t == 0 {
                keep * soc0
            } else {
                rec.push((soc[pos][t - 1], -keep));
                0.0
            };
            b.row(format!("soc_recursion[{name},t{tn}]"), rec, Sense::Eq, rhs);
        }

        if scenario.options.terminal_soc {
            b.row(
                format!("terminal_soc[{name}]"),
                vec![(soc[pos][periods - 1], 1.0)],
                Sense::Ge,
                soc0,
            );
        }

        for t in 0..periods {
            let tn = t + 1;
            let inflow: Vec<(usize, f64)> = (0..periods)
                .filter_map(|from| shift[pos][from][t].map(|j| (j, 1.0)))
                .collect();
            if !inflow.is_empty() {
                b.row(
                    format!("dr_inflow[{name},t{tn}]"),
                    inflow,
                    Sense::Le,
                    mg.load.inflow_max[t],
                );
            }
            let outflow: Vec<(usize, f64)> = (0..periods)
                .filter_map(|to| shift[pos][t][to].map(|j| (j, 1.0)))
                .collect();
            if !outflow.is_empty() {
                b.row(
                    format!("dr_outflow[{name},t{tn}]"),
                    outflow,
                    Sense::Le,
                    mg.load.controllable[t],
                );
            }
            let mut def = vec![(load_adj[pos][t], 1.0)];
            for from in 0..periods {
                if let Some(j) = shift[pos][from][t] {
                    def.push((j, -1.0));
                }
            }
            for to in 0..periods {
                if let Some(j) = shift[pos][t][to] {
                    def.push((j, 1.0));
                }
            }
            b.row(
                format!("load_def[{name},t{tn}]"),
                def,
                Sense::Eq,
                mg.load.fixed[t] + mg.load.controllable[t],
            );
        }
    }

    let context = ModelContext {
        period_hours: dt,
        periods,
        mg_names: members
            .iter()
            .map(|&k| scenario.microgrids[k].name.clone())
            .collect(),
        buy_price: scenario.prices.buy.clone(),
        sell_price: scenario.prices.sell.clone(),
        pv: members
            .iter()
            .map(|&k| scenario.microgrids[k].pv.forecast.clone())
            .collect(),
        fixed: members
            .iter()
            .map(|&k| scenario.microgrids[k].load.fixed.clone())
            .collect(),
        controllable: members
            .iter()
            .map(|&k| scenario.microgrids[k].load.controllable.clone())
            .collect(),
        inflow_max: members
            .iter()
            .map(|&k| scenario.microgrids[k].load.inflow_max.clone())
            .collect(),
        cdg_tiers: members
            .iter()
            .map(|&k| scenario.microgrids[k].cdg.cost_tiers.clone())
            .collect(),
        cdg_p_min: members.iter().map(|&k| scenario.microgrids[k].cdg.p_min).collect(),
        pricing_mode: mode,
        dr_objective_term: dr_term,
        soc_initial: members
            .iter()
            .map(|&k| scenario.microgrids[k].bess.soc_initial)
            .collect(),
    };

    Ok(OptimizationModel {
        vars: b.vars,
        rows: b.rows,
        layout: VariableLayout {
            members,
            periods,
            cdg,
            segment,
            tier_select,
            tier_cost,
            charge,
            discharge,
            bess_mode,
            soc,
            shift,
            load_adj,
            buy,
            sell,
            z_buy,
            z_sell,
        },
        risk,
        context,
    })
}
