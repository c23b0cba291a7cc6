// One-off generator for scenarios/paper3mg.toml. Builds the reconstructed
// instance, verifies the qualitative properties the acceptance suite needs,
// and writes the frozen TOML. Not part of the deliverable.

use coopgrid_core::game::{compare_modes, evaluate_coalitions};
use coopgrid_core::model::{build_model, Coalition};
use coopgrid_core::scenario::*;
use coopgrid_core::solver::{solve_mip, SolverConfig};

struct XorShift(u64);
impl XorShift {
    fn next_f64(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
    /// uniform in [-1, 1]
    fn sym(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn main() {
    let buy: Vec<f64> = vec![
        43.0, 42.2, 42.0, 42.5, 43.5, 45.0, 57.6, 58.0, 58.2, 58.4, 58.6, 58.8, 58.6, 58.8, 59.0,
        59.3, 59.5, 59.2, 59.0, 58.8, 58.4, 57.8, 46.0, 43.5,
    ];
    let sell: Vec<f64> = buy.iter().map(|b| round1(b * 0.25)).collect();

    let totals = [
        vec![
            650.0, 630.0, 620.0, 625.0, 640.0, 680.0, 760.0, 840.0, 900.0, 920.0, 940.0, 960.0,
            970.0, 990.0, 1000.0, 1010.0, 1040.0, 1090.0, 1130.0, 1120.0, 1080.0, 990.0, 860.0,
            730.0,
        ],
        vec![
            375.0, 365.0, 360.0, 365.0, 370.0, 380.0, 470.0, 500.0, 520.0, 530.0, 540.0, 545.0,
            550.0, 555.0, 558.0, 560.0, 565.0, 567.0, 565.0, 560.0, 550.0, 520.0, 380.0, 378.0,
        ],
        vec![
            310.0, 300.0, 295.0, 300.0, 310.0, 330.0, 370.0, 400.0, 420.0, 435.0, 445.0, 450.0,
            455.0, 460.0, 465.0, 470.0, 485.0, 505.0, 525.0, 520.0, 505.0, 460.0, 400.0, 345.0,
        ],
    ];
    let pv1: Vec<f64> = vec![
        0.0, 0.0, 0.0, 0.0, 0.0, 10.0, 40.0, 75.0, 105.0, 125.0, 140.0, 148.0, 150.0, 145.0,
        132.0, 112.0, 85.0, 55.0, 28.0, 8.0, 0.0, 0.0, 0.0, 0.0,
    ];
    let pv_scale = [1.0, 0.8, 2.0 / 3.0];

    let cdg_specs = [
        CdgSpec {
            p_min: 0.0,
            p_max: 500.0,
            cost_tiers: vec![(200.0, 25.0), (400.0, 41.0), (500.0, 60.0)],
        },
        CdgSpec {
            p_min: 0.0,
            p_max: 600.0,
            cost_tiers: vec![(200.0, 25.0), (400.0, 39.0), (600.0, 57.0)],
        },
        CdgSpec {
            p_min: 0.0,
            p_max: 550.0,
            cost_tiers: vec![(200.0, 16.0), (400.0, 21.0), (550.0, 26.0)],
        },
    ];
    let bess = BessSpec {
        capacity: 200.0,
        converter_efficiency: 0.98,
        converter_capacity: 200.0,
        loss_charge: 0.03,
        loss_discharge: 0.03,
        self_discharge_rate: 0.0,
        soc_initial: 0.25,
    };

    let mut microgrids = Vec::new();
    for k in 0..3 {
        let total = &totals[k];
        let fixed: Vec<f64> = total.iter().map(|v| round1(v * 0.94)).collect();
        let controllable: Vec<f64> = total.iter().map(|v| round1(v * 0.06)).collect();
        let upper: Vec<f64> = total.iter().map(|v| round1(v * 1.04)).collect();
        let forecast: Vec<f64> = pv1.iter().map(|v| round1(v * pv_scale[k])).collect();
        let lower: Vec<f64> = forecast.iter().map(|v| round1(v * 0.85)).collect();
        microgrids.push(Microgrid {
            name: format!("MG{}", k + 1),
            cdg: cdg_specs[k].clone(),
            bess: bess.clone(),
            load: LoadProfile {
                fixed,
                controllable,
                inflow_max: vec![],
                load_upper_bound: upper,
            },
            pv: PvProfile {
                forecast,
                lower_bound: lower,
            },
        });
    }

    // 30 days of price history; residuals i.i.d. per hour so the covariance
    // is near-diagonal and positive definite
    let mut rng = XorShift(0x5EED_2015_0601);
    let mut history = |forecast: &[f64], sigma: f64, rng: &mut XorShift| -> PriceHistory {
        let days = (0..30)
            .map(|_| {
                let actual: Vec<f64> = forecast
                    .iter()
                    .map(|f| round1(f + sigma * rng.sym()))
                    .collect();
                HistoryDay {
                    actual,
                    forecast: forecast.to_vec(),
                }
            })
            .collect();
        PriceHistory { alpha: 0.85, days }
    };
    let buy_history = history(&buy, 9.0, &mut rng);
    let sell_history = history(&sell, 2.5, &mut rng);

    let mut scenario = Scenario {
        horizon: Horizon {
            num_periods: 24,
            period_hours: 1.0,
        },
        microgrids,
        prices: PriceSeries { buy, sell },
        buy_history,
        sell_history,
        risk_weight: 0.001,
        options: ScenarioOptions {
            worst_case: true,
            dr_objective_term: true,
            cdg_pricing_mode: CdgPricingMode::Block,
            paper_literal_risk: false,
            terminal_soc: false,
        },
    };
    scenario.fill_defaults();
    scenario.validate().unwrap();

    let cfg = SolverConfig::default();
    let t0 = std::time::Instant::now();

    println!("== coalition table at r = 0.001 ==");
    {
        let eff = scenario.effective();
        for mask in 1..=7u64 {
            let c = Coalition::from_mask(mask).unwrap();
            let m = build_model(&eff, &c).unwrap();
            let t = std::time::Instant::now();
            let r = solve_mip(&m, &cfg).unwrap();
            println!(
                "  mask {mask:03b}: obj {:.2} nodes {} cuts {} in {:.2}s",
                r.objective().unwrap(), r.nodes_explored, r.cuts_added,
                t.elapsed().as_secs_f64()
            );
        }
    }
    let table = evaluate_coalitions(&scenario, &cfg).unwrap();
    for mask in 1..=7u64 {
        println!("V({mask:03b}) = {:.2}", table.value(mask));
    }
    println!("subadditivity violations: {}", table.subadditivity_violations.len());
    for v in &table.subadditivity_violations {
        println!("  VIOLATION {:b}+{:b} excess {:.3}", v.left_mask, v.right_mask, v.excess);
    }
    let report = compare_modes(&scenario, &cfg).unwrap();
    println!(
        "grand {:.2} vs isolated sum {:.2} -> savings {:?}%",
        report.grand_cost,
        report.isolated.iter().sum::<f64>(),
        report.grand_savings_pct
    );
    for k in 0..3 {
        println!(
            "  MG{}: shapley {:.2} isolated {:.2} savings {:?}",
            k + 1,
            report.shapley[k],
            report.isolated[k],
            report.savings_pct[k]
        );
    }

    println!("== risk trend ==");
    let eff = scenario.effective();
    let grand = Coalition::grand(3).unwrap();
    let model_r = build_model(&eff, &grand).unwrap();
    let sol_r = solve_mip(&model_r, &cfg).unwrap().incumbent.unwrap();
    let mut no_risk = scenario.clone();
    no_risk.risk_weight = 0.0;
    let model_0 = build_model(&no_risk.effective(), &grand).unwrap();
    let sol_0 = solve_mip(&model_0, &cfg).unwrap().incumbent.unwrap();
    println!(
        "total buys: r=0.001 -> {:.1}, r=0 -> {:.1}",
        sol_r.total_buy(),
        sol_0.total_buy()
    );
    println!(
        "total sells: r=0.001 -> {:.1}, r=0 -> {:.1}",
        sol_r.total_sell(),
        sol_0.total_sell()
    );

    let mg3_at_cap = (0..24).filter(|&t| sol_r.cdg[2][t] >= 549.999).count();
    println!("MG3 at 550 kW in {mg3_at_cap}/24 hours (r=0.001)");
    let mg3_at_cap0 = (0..24).filter(|&t| sol_0.cdg[2][t] >= 549.999).count();
    println!("MG3 at 550 kW in {mg3_at_cap0}/24 hours (r=0)");

    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());

    // freeze
    let header = "# paper3mg: three-microgrid day-ahead scheduling instance.\n\
# Generator limits, tier prices, and battery/converter parameters are taken\n\
# verbatim from the published test system. The hourly load, PV, price and\n\
# price-history series are RECONSTRUCTED (the original series were never\n\
# published); see scenarios/README.md for the construction rules.\n\n";
    let body = toml::to_string_pretty(&scenario).unwrap();
    std::fs::create_dir_all("scenarios").unwrap();
    std::fs::write("scenarios/paper3mg.toml", format!("{header}{body}")).unwrap();
    println!("wrote scenarios/paper3mg.toml");
}
