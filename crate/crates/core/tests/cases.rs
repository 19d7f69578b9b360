use tdm_core::cases::*;
use tdm_core::distribution::ConeMode;
use tdm_core::fixtures;
use tdm_core::mpec::Phase1Revenue;
use tdm_core::risk::{cc_adjusted_price, CvarFormula, RiskMeasure};
use tdm_nlp::SolverOptions;

fn run(data: &Dataset, case: Case, formula: CvarFormula) -> CaseResult {
    let mut cfg = CaseConfig::new(case);
    cfg.cvar_formula = formula;
    run_case(data, &cfg).unwrap()
}

fn assert_accounting(res: &CaseResult) {
    assert!(res.failed_seasons().is_empty(), "{:?}", res.failed_seasons());
    for h in res.hours() {
        assert!(h.accounting_gap <= 1e-6, "hour {} gap {}", h.hour, h.accounting_gap);
        for s in &h.solves {
            assert!(s.class.converged());
            assert!(s.complementarity <= 1e-8, "{} {}", s.phase, s.complementarity);
        }
    }
}

#[test]
fn case_a_on_toy_reaches_hand_optimum() {
    let data = fixtures::t2d2_dataset(30.0, 50.0, 5.65, 100.0);
    let res = run(&data, Case::A, CvarFormula::PaperLiteral);
    assert_accounting(&res);
    let t = res.totals();
    assert!((t.profit() - 2850.0).abs() < 1e-4, "{}", t.profit());
    let rows = res.revenue_rows();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.revenue_at_mean.is_none()));
}

#[test]
fn zero_capacity_gives_all_zero_report() {
    let data = fixtures::t2d2_dataset(0.0, 50.0, 5.65, 100.0);
    for case in Case::ALL {
        let res = run(&data, case, CvarFormula::PaperLiteral);
        assert_accounting(&res);
        for r in res.revenue_rows() {
            assert!(r.revenue.abs() < 1e-8 && r.profit.abs() < 1e-8, "{case} {r:?}");
        }
    }
}

#[test]
fn case_b_pays_the_tariff() {
    let data = fixtures::t2d2_dataset(30.0, 50.0, 5.65, 100.0);
    let res = run(&data, Case::B, CvarFormula::PaperLiteral);
    assert_accounting(&res);
    for h in res.hours() {
        assert_eq!(h.dm_price, vec![100.0]);
        // the tariff beats every market price, so everything goes to the feeder
        assert!((h.offer_d[0] - 30.0).abs() < 1e-6);
    }
    assert!((res.totals().dm_revenue - 9000.0).abs() < 1e-4);
}

#[test]
fn sequential_cc_phases_match_oracles_and_lose_to_joint() {
    let data = fixtures::t2d2_dataset(30.0, 50.0, 5.65, 100.0);
    let joint = run(&data, Case::A, CvarFormula::PaperLiteral);
    let seq = run(&data, Case::C, CvarFormula::PaperLiteral);
    assert_accounting(&seq);
    let opts = SolverOptions::default();
    let spec = data.risk_spec(0.05, RiskMeasure::Cc, CvarFormula::PaperLiteral).unwrap();
    let demand = &data.seasons[0].demand;
    let mode = ConeMode::Polyhedral(12);
    for h in seq.hours() {
        let t = h.hour;
        let forecast = forecast_link_flows(&data.sys, demand, &[t], mode, &opts).unwrap();
        let o1 = grid_search_oracle(
            &data.sys,
            demand,
            &[t],
            OracleGame::Phase1 {
                revenue: Phase1Revenue::Risk(&spec),
                forecast: &forecast,
            },
            0.5,
            mode,
            &opts,
        )
        .unwrap();
        let p1 = &h.solves[0];
        assert!(p1.objective >= o1.profit - o1.lipschitz * 0.5, "hour {t}: {} vs {}", p1.objective, o1.profit);

        let mut g = vec![vec![0.0; 3]];
        g[0][t] = h.offer_t[0];
        let lam = vec![vec![h.lmp[1]; 3]];
        let o2 = grid_search_oracle(
            &data.sys,
            demand,
            &[t],
            OracleGame::Phase2 {
                g_t_star: &g,
                lambda_t_star: &lam,
                tariff: None,
            },
            0.5,
            mode,
            &opts,
        )
        .unwrap();
        let p2 = &h.solves[1];
        assert!(p2.objective >= o2.profit - o2.lipschitz * 0.5, "hour {t}: {} vs {}", p2.objective, o2.profit);

        // phase-1 promise versus what the mean price pays, net of the risk margin
        let adjusted = cc_adjusted_price(50.0, 5.65, 0.05).unwrap();
        let margin = (50.0 - adjusted) * (30.0 - h.offer_t[0]);
        let realized = h.wm_profit + h.dm_profit_mean.unwrap();
        assert!(p1.objective >= realized - margin - 1e-6);
    }
    let (s, j) = (seq.totals(), joint.totals());
    assert!(s.profit_at_mean() <= j.profit() + 1e-6);
    assert!(s.profit() <= j.profit() + 1e-6);
}

#[test]
fn cvar_participation_follows_the_price_adjustment() {
    let data = fixtures::t2d2_dataset(30.0, 50.0, 5.65, 100.0);
    let cc = run(&data, Case::C, CvarFormula::PaperLiteral);
    let tail = run(&data, Case::D, CvarFormula::StandardTail);
    let literal = run(&data, Case::D, CvarFormula::PaperLiteral);
    let dm = |r: &CaseResult| r.hours().map(|h| h.offer_d[0]).sum::<f64>();
    assert!(dm(&tail) <= dm(&cc) + 1e-6);
    // the printed CVaR line deducts less than the chance constraint
    assert!(dm(&literal) >= dm(&cc) - 1e-6);
    assert!(dm(&tail) < dm(&literal));
}

#[test]
fn comparing_a_case_with_itself_gives_zero_deltas() {
    let data = fixtures::t2d2_dataset(30.0, 50.0, 5.65, 100.0);
    let a = run(&data, Case::A, CvarFormula::PaperLiteral);
    let rows = compare_cases(&[a.clone(), a.clone()]).unwrap();
    assert_eq!(rows.len(), 2 * COMPARISON_METRICS.len());
    assert!(rows.iter().all(|r| r.delta_pct == Some(0.0)));

    let mut other = a.clone();
    other.data_key.push_str("x");
    assert!(compare_cases(&[a.clone(), other]).is_err());
    assert!(compare_cases(&[a]).is_err());
}

#[test]
fn case_config_validation() {
    let mut data = fixtures::t2d2_dataset(30.0, 50.0, 5.65, 100.0);
    let mut cfg = CaseConfig::new(Case::C);
    cfg.epsilon = 1.5;
    assert!(cfg.validate(&data).unwrap_err().to_string().contains("epsilon must be in (0, 0.5)"));
    data.tariff = None;
    assert!(CaseConfig::new(Case::B).validate(&data).is_err());
    data.history = None;
    assert!(CaseConfig::new(Case::D).validate(&data).is_err());
    assert!(CaseConfig::new(Case::A).validate(&data).is_ok());
    let mut cfg = CaseConfig::new(Case::A);
    cfg.seasons = vec!["winter".into()];
    assert!(cfg.validate(&data).is_err());
    assert_eq!("c".parse::<Case>().unwrap(), Case::C);
    assert!("E".parse::<Case>().is_err());
}

#[test]
fn oracle_edge_cases() {
    let opts = SolverOptions::default();
    let mode = ConeMode::Polyhedral(12);
    let (sys, demand) = fixtures::t2d2(0.0);
    let o = grid_search_oracle(&sys, &demand, &[0], OracleGame::Joint, 0.5, mode, &opts).unwrap();
    assert_eq!(o.points, 1);
    assert_eq!(o.profit, 0.0);
    assert!(grid_search_oracle(&sys, &demand, &[0], OracleGame::Joint, 0.0, mode, &opts).is_err());
    assert!(grid_search_oracle(&sys, &demand, &[0, 1, 2, 0], OracleGame::Joint, 1.0, mode, &opts).is_err());
    let (big, demand) = fixtures::t2d2(1e5);
    let err = grid_search_oracle(&big, &demand, &[0], OracleGame::Joint, 0.01, mode, &opts).unwrap_err();
    assert!(err.to_string().contains("grid too large"));
}

#[test]
fn oracle_profit_grows_with_capacity() {
    let opts = SolverOptions::default();
    let mode = ConeMode::Polyhedral(12);
    let mut last = f64::NEG_INFINITY;
    for cap in [0.0, 10.0, 20.0, 30.0] {
        let (sys, demand) = fixtures::t2d2(cap);
        let o = grid_search_oracle(&sys, &demand, &[1], OracleGame::Joint, 2.0, mode, &opts).unwrap();
        assert!(o.profit >= last - 1e-9);
        last = o.profit;
    }
}

#[test]
fn parallel_map_keeps_order() {
    let items: Vec<usize> = (0..37).collect();
    for jobs in [1, 3, 8] {
        assert_eq!(parallel_map(&items, jobs, |i| i * 2), items.iter().map(|i| i * 2).collect::<Vec<_>>());
    }
}
