//! The cooperative game: characteristic-function evaluation over all
//! coalitions, Shapley cost allocation, and the rationality diagnostics.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{build_model, Coalition, ModelError};
use crate::scenario::Scenario;
use crate::solver::{solve_mip, SolveStatus, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum GameError {
    #[error("coalition {coalition} solve ended {status:?}")]
    CoalitionSolve { coalition: String, status: SolveStatus },
    #[error("coalition {coalition}: {source}")]
    Solver {
        coalition: String,
        #[source]
        source: SolverError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("value table is incomplete: missing coalition mask {0:#b}")]
    IncompleteTable(u64),
    #[error("{0}")]
    Invalid(String),
}

/// Optimal cost V(S) for every nonempty coalition S; V(empty) = 0 by
/// definition. Subadditivity is checked on construction and violations are
/// recorded, never silently accepted.
#[derive(Debug, Clone, Serialize)]
pub struct CoalitionValueTable {
    pub n: usize,
    /// `values[mask - 1]` is V(S) for the coalition with that bitmask.
    pub values: Vec<f64>,
    pub subadditivity_violations: Vec<SubadditivityViolation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubadditivityViolation {
    pub left_mask: u64,
    pub right_mask: u64,
    /// V(S u T) - V(S) - V(T), positive.
    pub excess: f64,
}

impl CoalitionValueTable {
    /// Builds a table from per-mask values (`values[mask - 1]`, all 2^n - 1
    /// present) and records subadditivity violations beyond a scale-aware
    /// tolerance.
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self, GameError> {
        if n == 0 || n > 20 {
            return Err(GameError::Invalid(format!("n = {n} out of the supported 1..=20")));
        }
        let expected = (1usize << n) - 1;
        if values.len() != expected {
            return Err(GameError::Invalid(format!(
                "expected {expected} coalition values, got {}",
                values.len()
            )));
        }
        let mut table = Self {
            n,
            values,
            subadditivity_violations: Vec::new(),
        };
        table.subadditivity_violations = table.scan_subadditivity();
        Ok(table)
    }

    pub fn value(&self, mask: u64) -> f64 {
        if mask == 0 {
            return 0.0;
        }
        self.values[(mask - 1) as usize]
    }

    pub fn grand_mask(&self) -> u64 {
        (1u64 << self.n) - 1
    }

    pub fn grand_value(&self) -> f64 {
        self.value(self.grand_mask())
    }

    pub fn singleton_value(&self, player: usize) -> f64 {
        self.value(1 << player)
    }

    /// V(S u T) <= V(S) + V(T) for all disjoint nonempty S, T.
    fn scan_subadditivity(&self) -> Vec<SubadditivityViolation> {
        let mut out = Vec::new();
        let full = self.grand_mask();
        for s in 1..=full {
            // enumerate nonempty subsets t of the complement, t > s to visit
            // each unordered pair once
            let complement = full & !s;
            let mut t = complement;
            while t > 0 {
                if t > s {
                    let sum = self.value(s) + self.value(t);
                    let union = self.value(s | t);
                    let tol = 1e-6 * sum.abs().max(1.0);
                    if union > sum + tol {
                        out.push(SubadditivityViolation {
                            left_mask: s,
                            right_mask: t,
                            excess: union - sum,
                        });
                    }
                }
                t = (t - 1) & complement;
            }
        }
        out
    }

    /// Elementwise sum of two games over the same player set.
    pub fn add(&self, other: &CoalitionValueTable) -> Result<CoalitionValueTable, GameError> {
        if self.n != other.n {
            return Err(GameError::Invalid("player counts differ".into()));
        }
        CoalitionValueTable::new(
            self.n,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }
}

/// Shapley allocation with the isolated-mode comparison.
#[derive(Debug, Clone, Serialize)]
pub struct AllocationReport {
    pub n: usize,
    pub mg_names: Vec<String>,
    /// Allocated cooperative cost per player.
    pub shapley: Vec<f64>,
    /// Stand-alone cost V({k}) per player.
    pub isolated: Vec<f64>,
    /// (isolated - shapley) / isolated * 100, None when isolated <= 0.
    pub savings_pct: Vec<Option<f64>>,
    pub grand_cost: f64,
    pub grand_savings_pct: Option<f64>,
    /// |sum(shapley) - V(N)|.
    pub efficiency_residual: f64,
    /// Every player no worse off than alone (checked, not axiomatic).
    pub individually_rational: bool,
    pub subadditivity_violations: Vec<SubadditivityViolation>,
    /// Coalitions whose members are allocated more than V(S) in total.
    pub core_violations: Vec<CoreViolation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoreViolation {
    pub mask: u64,
    /// sum of allocations in S minus V(S), positive.
    pub excess: f64,
}

const FACTORIALS: [u128; 21] = {
    let mut f = [1u128; 21];
    let mut i = 1;
    while i <= 20 {
        f[i] = f[i - 1] * i as u128;
        i += 1;
    }
    f
};

/// Exact-weight Shapley allocation over a complete value table.
///
/// For each player the subset sum uses factorial weights kept in exact
/// integer arithmetic; the single division by n! happens once per player at
/// the end.
pub fn shapley(table: &CoalitionValueTable) -> AllocationReport {
    let n = table.n;
    let n_fact = FACTORIALS[n] as f64;
    let mut shapley_costs = vec![0.0f64; n];
    for k in 0..n {
        let bit = 1u64 << k;
        let mut acc = 0.0f64;
        for mask in 1..=table.grand_mask() {
            if mask & bit == 0 {
                continue;
            }
            let size = mask.count_ones() as usize;
            let weight = FACTORIALS[size - 1] * FACTORIALS[n - size];
            let marginal = table.value(mask) - table.value(mask & !bit);
            acc += weight as f64 * marginal;
        }
        shapley_costs[k] = acc / n_fact;
    }
    report_from(table, shapley_costs, (0..n).map(|k| format!("MG{}", k + 1)).collect())
}

fn report_from(
    table: &CoalitionValueTable,
    shapley_costs: Vec<f64>,
    mg_names: Vec<String>,
) -> AllocationReport {
    let n = table.n;
    let isolated: Vec<f64> = (0..n).map(|k| table.singleton_value(k)).collect();
    let grand = table.grand_value();
    let total_alloc: f64 = shapley_costs.iter().sum();
    let efficiency_residual = (total_alloc - grand).abs();
    let savings_pct: Vec<Option<f64>> = (0..n)
        .map(|k| {
            if isolated[k] > 0.0 {
                Some((isolated[k] - shapley_costs[k]) / isolated[k] * 100.0)
            } else {
                None
            }
        })
        .collect();
    let isolated_total: f64 = isolated.iter().sum();
    let grand_savings_pct = if isolated_total > 0.0 {
        Some((isolated_total - grand) / isolated_total * 100.0)
    } else {
        None
    };
    let individually_rational = (0..n).all(|k| {
        shapley_costs[k] <= isolated[k] + 1e-6 * isolated[k].abs().max(1.0)
    });
    let mut core_violations = Vec::new();
    for mask in 1..=table.grand_mask() {
        let alloc: f64 = (0..n)
            .filter(|&k| mask & (1 << k) != 0)
            .map(|k| shapley_costs[k])
            .sum();
        let v = table.value(mask);
        let tol = 1e-6 * v.abs().max(1.0);
        if alloc > v + tol {
            core_violations.push(CoreViolation {
                mask,
                excess: alloc - v,
            });
        }
    }
    AllocationReport {
        n,
        mg_names,
        shapley: shapley_costs,
        isolated,
        savings_pct,
        grand_cost: grand,
        grand_savings_pct,
        efficiency_residual,
        individually_rational,
        subadditivity_violations: table.subadditivity_violations.clone(),
        core_violations,
    }
}

/// Solves every nonempty coalition of the scenario at the same tolerance.
///
/// Solves fan out in parallel (each is single-threaded and deterministic);
/// the table is assembled in mask order so the result does not depend on
/// scheduling.
pub fn evaluate_coalitions(
    scenario: &Scenario,
    cfg: &SolverConfig,
) -> Result<CoalitionValueTable, GameError> {
    let n = scenario.num_microgrids();
    if n > 20 {
        return Err(GameError::Invalid(format!(
            "{n} microgrids means {} coalition solves; 20 is the supported cap",
            (1u64 << n) - 1
        )));
    }
    let effective = scenario.effective();
    let masks: Vec<u64> = (1..=((1u64 << n) - 1)).collect();
    let results: Vec<Result<f64, GameError>> = masks
        .par_iter()
        .map(|&mask| {
            let coalition = Coalition::from_mask(mask).map_err(GameError::Model)?;
            let model = build_model(&effective, &coalition).map_err(GameError::Model)?;
            let result = solve_mip(&model, cfg).map_err(|e| GameError::Solver {
                coalition: coalition.to_string(),
                source: e,
            })?;
            match (result.status, result.objective()) {
                (SolveStatus::Optimal, Some(obj)) => Ok(obj),
                (status, _) => Err(GameError::CoalitionSolve {
                    coalition: coalition.to_string(),
                    status,
                }),
            }
        })
        .collect();
    let mut values = Vec::with_capacity(masks.len());
    for r in results {
        values.push(r?);
    }
    CoalitionValueTable::new(n, values)
}

/// Full pipeline: evaluate all coalitions, allocate with the Shapley value,
/// compare against isolated operation.
pub fn compare_modes(scenario: &Scenario, cfg: &SolverConfig) -> Result<AllocationReport, GameError> {
    let table = evaluate_coalitions(scenario, cfg)?;
    let mut report = shapley(&table);
    report.mg_names = scenario.microgrids.iter().map(|m| m.name.clone()).collect();
    Ok(report)
}

/// Members of a mask as 1-based labels, e.g. `{1,3}`.
pub fn mask_label(mask: u64) -> String {
    let members: Vec<String> = (0..64)
        .filter(|k| mask & (1 << k) != 0)
        .map(|k| (k + 1).to_string())
        .collect();
    format!("{{{}}}", members.join(","))
}

/// CSV rows of a value table: mask, coalition label, value.
pub fn value_table_csv(table: &CoalitionValueTable) -> String {
    let mut out = String::from("mask,coalition,value\n");
    for mask in 1..=table.grand_mask() {
        out.push_str(&format!("{},{},{}\n", mask, mask_label(mask), table.value(mask)));
    }
    out
}

/// CSV rows of an allocation report: one line per microgrid.
pub fn allocation_csv(report: &AllocationReport) -> String {
    let mut out = String::from("mg,shapley_cost,isolated_cost,savings_pct\n");
    for k in 0..report.n {
        let savings = report.savings_pct[k]
            .map(|s| s.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            report.mg_names[k], report.shapley[k], report.isolated[k], savings
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: usize, values: Vec<f64>) -> CoalitionValueTable {
        CoalitionValueTable::new(n, values).unwrap()
    }

    /// Brute-force Shapley: average marginal contribution over all n!
    /// orderings.
    pub(crate) fn shapley_by_orderings(t: &CoalitionValueTable) -> Vec<f64> {
        let n = t.n;
        let mut players: Vec<usize> = (0..n).collect();
        let mut totals = vec![0.0; n];
        let mut count = 0u64;
        permute(&mut players, 0, &mut |order| {
            let mut mask = 0u64;
            for &p in order {
                let before = t.value(mask);
                mask |= 1 << p;
                totals[p] += t.value(mask) - before;
            }
            count += 1;
        });
        totals.iter().map(|v| v / count as f64).collect()
    }

    fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    #[test]
    fn single_player_gets_everything() {
        let t = table(1, vec![42.0]);
        let report = shapley(&t);
        assert_eq!(report.shapley, vec![42.0]);
        assert!(report.efficiency_residual < 1e-12);
    }

    #[test]
    fn two_player_hand_example() {
        // V({1}) = V({2}) = 10, V({1,2}) = 16 -> (8, 8)
        let t = table(2, vec![10.0, 10.0, 16.0]);
        let report = shapley(&t);
        assert!((report.shapley[0] - 8.0).abs() < 1e-12);
        assert!((report.shapley[1] - 8.0).abs() < 1e-12);
        assert!(report.subadditivity_violations.is_empty());
    }

    #[test]
    fn three_player_symmetric_hand_example() {
        // singletons 6, pairs 10, grand 12 -> (4, 4, 4)
        let t = table(3, vec![6.0, 6.0, 10.0, 6.0, 10.0, 10.0, 12.0]);
        let report = shapley(&t);
        for k in 0..3 {
            assert!((report.shapley[k] - 4.0).abs() < 1e-12);
        }
        let brute = shapley_by_orderings(&t);
        for k in 0..3 {
            assert!((report.shapley[k] - brute[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn dummy_player_gets_zero() {
        // player 2 contributes nothing to any coalition
        let t = table(2, vec![7.0, 0.0, 7.0]);
        let report = shapley(&t);
        assert!((report.shapley[0] - 7.0).abs() < 1e-12);
        assert!(report.shapley[1].abs() < 1e-12);
    }

    #[test]
    fn additivity_of_games() {
        let a = table(3, vec![1.0, 2.0, 4.0, 3.0, 5.0, 6.0, 7.0]);
        let b = table(3, vec![2.0, 1.0, 3.5, 2.0, 4.0, 3.0, 6.0]);
        let sum = a.add(&b).unwrap();
        let ra = shapley(&a);
        let rb = shapley(&b);
        let rs = shapley(&sum);
        for k in 0..3 {
            assert!((rs.shapley[k] - ra.shapley[k] - rb.shapley[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn permuting_players_permutes_allocations() {
        // swap players 0 and 1 in the table; allocations must swap too
        let t = table(3, vec![6.0, 9.0, 14.0, 5.0, 10.0, 13.0, 18.0]);
        let swap_mask = |mask: u64| -> u64 {
            let b0 = (mask >> 0) & 1;
            let b1 = (mask >> 1) & 1;
            (mask & !0b11) | (b0 << 1) | (b1 << 0)
        };
        let swapped_values: Vec<f64> = (1..=7u64).map(|m| t.value(swap_mask(m))).collect();
        let swapped = table(3, swapped_values);
        let r = shapley(&t);
        let rs = shapley(&swapped);
        assert!((r.shapley[0] - rs.shapley[1]).abs() < 1e-12);
        assert!((r.shapley[1] - rs.shapley[0]).abs() < 1e-12);
        assert!((r.shapley[2] - rs.shapley[2]).abs() < 1e-12);
    }

    #[test]
    fn subadditivity_violation_is_recorded() {
        // grand coalition more expensive than split: violation
        let t = table(2, vec![5.0, 5.0, 11.0]);
        assert_eq!(t.subadditivity_violations.len(), 1);
        assert!((t.subadditivity_violations[0].excess - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_tables_match_ordering_average() {
        let mut state = 0xDEADBEEFCAFEu64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for n in 1..=6usize {
            for _case in 0..4 {
                let values: Vec<f64> = (0..(1usize << n) - 1).map(|_| next() * 100.0).collect();
                let t = table(n, values);
                let fast = shapley(&t);
                let brute = shapley_by_orderings(&t);
                for k in 0..n {
                    assert!(
                        (fast.shapley[k] - brute[k]).abs() < 1e-9,
                        "n={n} player {k}: {} vs {}",
                        fast.shapley[k],
                        brute[k]
                    );
                }
                assert!(fast.efficiency_residual <= 1e-6 * t.grand_value().abs().max(1.0));
            }
        }
    }
}
