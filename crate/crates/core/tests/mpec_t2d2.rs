use tdm_core::cases::{grid_search_oracle, OracleGame};
use tdm_core::distribution::ConeMode;
use tdm_core::fixtures;
use tdm_core::mpec::*;
use tdm_core::network::TariffSchedule;
use tdm_nlp::SolverOptions;

fn solve_joint(capacity: f64, hours: &[usize], tariff: Option<&TariffSchedule>) -> (Mpec, MpecSolution) {
    let (sys, demand) = fixtures::t2d2(capacity);
    let input = MpecInput::new(&sys, &demand, hours, 12);
    let m = build_joint_mpec(input, tariff).unwrap();
    let opts = SolverOptions::default();
    let starts = price_taker_starts(&m, input, None, None, &opts).unwrap();
    let sol = solve_multistart(&m, &Schedule::default(), &starts, &opts);
    (m, sol)
}

#[test]
fn joint_mpec_structure_keeps_bilinear_terms_in_objective_and_pairs() {
    let (sys, demand) = fixtures::t2d2(30.0);
    let m = build_joint_mpec(MpecInput::new(&sys, &demand, &[0], 12), None).unwrap();
    assert!(m.wm.is_some() && m.dm.is_some());
    assert_eq!(m.count_bilinear_outside_pairs(), m.objective.quadratic.len());
    assert_eq!(m.objective.quadratic.len(), 2);
    assert!(m.pairs.iter().all(|p| p.h.is_affine()));
    assert_eq!(m.inequalities.len(), 2);
}

#[test]
fn regulated_objective_has_no_distribution_price_term() {
    let (sys, demand) = fixtures::t2d2(30.0);
    let tar = TariffSchedule::new(vec![100.0; 3]).unwrap();
    let m = build_joint_mpec(MpecInput::new(&sys, &demand, &[0], 12), Some(&tar)).unwrap();
    // only the wholesale price x quantity product stays bilinear
    assert_eq!(m.objective.quadratic.len(), 1);
    let gd = m.leader.offer_d[0][0].unwrap();
    let coef: f64 = m.objective.linear.iter().filter(|(v, _)| *v == gd).map(|(_, c)| c).sum();
    assert!((coef - (100.0 - 15.0)).abs() < 1e-12);
}

#[test]
fn exact_cone_needs_the_experimental_flag() {
    let (sys, demand) = fixtures::t2d2(30.0);
    let mut input = MpecInput::new(&sys, &demand, &[0], 12);
    input.cone = ConeMode::Exact;
    assert!(build_joint_mpec(input, None).is_err());
    input.experimental_conic = true;
    let m = build_joint_mpec(input, None).unwrap();
    assert!(!m.conic.is_empty());
}

#[test]
fn zero_capacity_converges_in_one_outer_iteration() {
    let (sys, demand) = fixtures::t2d2(0.0);
    let hours = [0];
    let input = MpecInput::new(&sys, &demand, &hours, 12);
    let m = build_joint_mpec(input, None).unwrap();
    let opts = SolverOptions::default();
    let starts = price_taker_starts(&m, input, None, None, &opts).unwrap();
    let sol = scholtes_solve(&m, &Schedule::default(), &starts[0].x, &opts);
    assert_eq!(sol.trace.iter().map(|r| r.outer).max(), Some(1));
    assert!(sol.objective.abs() < 1e-8);
    assert!(sol.class.converged());
}

#[test]
fn joint_matches_grid_oracle_on_one_hour() {
    let (sys, demand) = fixtures::t2d2(30.0);
    let (m, sol) = solve_joint(30.0, &[0], None);
    let oracle = grid_search_oracle(
        &sys,
        &demand,
        &[0],
        OracleGame::Joint,
        0.5,
        ConeMode::Polyhedral(12),
        &SolverOptions::default(),
    )
    .unwrap();
    assert!(
        sol.objective >= oracle.profit - oracle.lipschitz * 0.5,
        "mpec {} oracle {} L {}",
        sol.objective,
        oracle.profit,
        oracle.lipschitz
    );
    assert!(sol.complementarity <= 1e-8);
    assert!(m.feasibility(&sol.x) <= 1e-8);
    // the producer holds the feeder price at the local unit's cost
    let (gt, gd) = m.offers(&sol.x);
    assert!((gt[0][0] + gd[0][0] - 30.0).abs() < 1e-6);
    assert!((sol.objective - 1150.0).abs() < 1e-4, "{}", sol.objective);
}

#[test]
fn joint_solution_passes_stationarity_and_follower_kkt() {
    let (m, sol) = solve_joint(30.0, &[1], None);
    let class = stationarity_check(&m, &sol).unwrap();
    assert!(matches!(class, StationarityClass::Strong | StationarityClass::CStationary));
    assert!(m.follower_residuals(&sol.x).max() <= 1e-6);
}

#[test]
fn joint_profit_dominates_price_taker() {
    for t in 0..3 {
        let (sys, demand) = fixtures::t2d2(30.0);
        let hours = [t];
        let input = MpecInput::new(&sys, &demand, &hours, 12);
        let m = build_joint_mpec(input, None).unwrap();
        let opts = SolverOptions::default();
        let starts = price_taker_starts(&m, input, None, None, &opts).unwrap();
        let sol = solve_multistart(&m, &Schedule::default(), &starts, &opts);
        for s in &starts {
            assert!(sol.objective >= m.objective_value(&s.x) - 1e-6);
        }
    }
}

#[test]
fn classification_sign_test() {
    let pass = [PairMultipliers {
        h: 0.0,
        k: 0.0,
        nu_h: 1.0,
        nu_k: 1.0,
    }];
    assert_eq!(classify(&pass, 1e-6), StationarityClass::CStationary);
    let fail = [PairMultipliers {
        h: 0.0,
        k: 0.0,
        nu_h: 1.0,
        nu_k: -1.0,
    }];
    assert_eq!(classify(&fail, 1e-6), StationarityClass::Weaker);
    let strong = [PairMultipliers {
        h: 2.0,
        k: 0.0,
        nu_h: 1.0,
        nu_k: -1.0,
    }];
    assert_eq!(classify(&strong, 1e-6), StationarityClass::Strong);
}

#[test]
fn corrupted_multipliers_fail_the_check() {
    let (m, mut sol) = solve_joint(30.0, &[0], None);
    let i = sol
        .multipliers
        .iter()
        .position(|p| p.h.abs() > 1e-3 || p.k.abs() > 1e-3)
        .unwrap();
    sol.multipliers[i] = PairMultipliers {
        h: 0.0,
        k: 0.0,
        nu_h: 5.0,
        nu_k: -5.0,
    };
    assert_eq!(stationarity_check(&m, &sol).unwrap(), StationarityClass::Weaker);
    sol.multipliers.pop();
    assert!(stationarity_check(&m, &sol).is_err());
}

#[test]
fn phase2_with_exhausted_capacity_offers_nothing() {
    let (sys, demand) = fixtures::t2d2(30.0);
    let hours = [0];
    let input = MpecInput::new(&sys, &demand, &hours, 12);
    let g = vec![vec![30.0; 3]];
    let lam = vec![vec![40.0; 3]];
    let m = build_sequential_phase2(input, &g, &lam, None).unwrap();
    let opts = SolverOptions::default();
    let starts = price_taker_starts(&m, input, None, Some(&lam), &opts).unwrap();
    let sol = solve_multistart(&m, &Schedule::default(), &starts, &opts);
    assert!(sol.objective.abs() < 1e-6);
    assert!(m.offers(&sol.x).1[0][0].abs() < 1e-6);

    let free = build_sequential_phase2(input, &[vec![0.0; 3]], &lam, None).unwrap();
    let cap = free.inequalities.iter().find(|c| c.tag == TAG_CAPACITY_MAX).unwrap();
    assert!((cap.expr.constant - 30.0).abs() < 1e-12);
}

#[test]
fn phase2_rejects_unbound_parameters() {
    let (sys, demand) = fixtures::t2d2(30.0);
    let input = MpecInput::new(&sys, &demand, &[2], 12);
    let err = build_sequential_phase2(input, &[vec![0.0; 2]], &[vec![40.0; 3]], None).unwrap_err();
    assert!(err.to_string().contains("unbound parameter"));
}

#[test]
fn joint_three_hours_matches_per_hour_sum() {
    let (_, whole) = solve_joint(30.0, &[0, 1, 2], None);
    let sum: f64 = (0..3).map(|t| solve_joint(30.0, &[t], None).1.objective).sum();
    assert!((whole.objective - sum).abs() <= 1e-4 * (1.0 + sum.abs()), "{} vs {}", whole.objective, sum);
}
