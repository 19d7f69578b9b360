mod common;

use common::{assert_close, DenseLp};
use tdm_core::coupled::clear_coupled;
use tdm_core::distribution::*;
use tdm_core::fixtures::{self, gen, two_bus_dm, two_bus_wm, unit};
use tdm_core::network::{Demand, DistGenerator, InterfaceLink, TransmissionNetwork};
use tdm_core::program::ResidualKind;
use tdm_core::wholesale::*;
use tdm_nlp::SolverOptions;

fn opts() -> SolverOptions {
    SolverOptions::default()
}

fn wm_demand(load2: f64, hours: usize) -> Demand {
    fixtures::demand(vec![vec![0.0; hours], vec![load2; hours]])
}

fn wm_program(net: &TransmissionNetwork, load2: f64) -> WholesaleProgram {
    build_dcopf(net, &wm_demand(load2, 1), &[], &[], &[], &[], &[0]).unwrap()
}

/// Optimal cost and bus-2 price by finite differences of the LP oracle.
fn oracle_price(net: &TransmissionNetwork, load2: f64) -> (f64, f64) {
    let v0 = DenseLp::from_program(&wm_program(net, load2).program).solve().unwrap().0;
    let v1 = DenseLp::from_program(&wm_program(net, load2 + 1e-3).program).solve().unwrap().0;
    (v0, (v1 - v0) / 1e-3)
}

#[test]
fn uncongested_two_bus_prices_equal_cheapest_cost() {
    let net = two_bus_wm(100.0, vec![gen("G1", 1, 10.0, 100.0)]);
    let prog = wm_program(&net, 50.0);
    let res = clear_wholesale(&prog, &opts()).unwrap();
    let (obj, price) = oracle_price(&net, 50.0);
    assert_close(res.objective, obj, 1e-6, "objective");
    assert_close(res.dispatch[0][0], 50.0, 1e-6, "dispatch");
    assert_close(res.lmp[0][0], 10.0, 1e-6, "lmp bus 1");
    assert_close(res.lmp[1][0], price, 1e-4, "lmp bus 2");
    assert!(res.solution.duality_gap() <= 1e-6);
    let rep = kkt_residuals_wholesale(&prog, &res).unwrap();
    assert!(rep.max() <= 1e-6, "{}", rep.dump());
}

#[test]
fn congestion_splits_prices() {
    let net = two_bus_wm(30.0, vec![gen("G1", 1, 10.0, 100.0), gen("G2", 2, 40.0, 100.0)]);
    let prog = wm_program(&net, 50.0);
    let res = clear_wholesale(&prog, &opts()).unwrap();
    let (obj, price) = oracle_price(&net, 50.0);
    assert_close(res.objective, obj, 1e-5, "objective");
    assert_close(res.lmp[0][0], 10.0, 1e-6, "lmp bus 1");
    assert_close(res.lmp[1][0], 40.0, 1e-6, "lmp bus 2");
    assert_close(price, 40.0, 1e-4, "oracle price");
    // merchandising surplus equals the congestion rent
    let surplus = res.merchandising_surplus(&prog, &wm_demand(50.0, 1));
    assert_close(surplus, res.congestion_rent(&net), 1e-6, "rent");
    assert_close(surplus, 30.0 * 30.0, 1e-5, "rent value");
}

#[test]
fn zero_demand_clears_to_zero() {
    let net = two_bus_wm(30.0, vec![gen("G1", 1, 10.0, 100.0), gen("G2", 2, 40.0, 100.0)]);
    let res = clear_wholesale(&wm_program(&net, 0.0), &opts()).unwrap();
    assert!(res.objective.abs() < 1e-7);
    assert!(res.dispatch.iter().flatten().all(|g| g.abs() < 1e-7));
}

#[test]
fn wholesale_row_counts() {
    let net = two_bus_wm(30.0, vec![gen("G1", 1, 10.0, 100.0)]);
    let hours: Vec<usize> = (0..24).collect();
    let prog = build_dcopf(&net, &wm_demand(10.0, 24), &[], &[], &[], &[], &hours).unwrap();
    assert_eq!(prog.program.count_rows(TAG_BALANCE), 48);
    assert_eq!(prog.program.count_rows(TAG_FLOW_DEF), 24);
    assert_eq!(prog.program.count_rows(TAG_REF_ANGLE), 24);
    let block = prog.kkt();
    // one stationarity row per generator, flow and angle column
    assert_eq!(block.stationarity.len(), 24 * (1 + 1 + 2));
}

#[test]
fn offer_above_capacity_is_rejected() {
    let net = two_bus_wm(30.0, vec![gen("G1", 1, 10.0, 100.0)]);
    let u = unit("S", 2, 2, 15.0, 30.0);
    let err = build_dcopf(&net, &wm_demand(10.0, 1), &[u], &[], &[vec![31.0]], &[], &[0]).unwrap_err();
    assert!(err.to_string().contains("outside"));
}

#[test]
fn zero_offer_pins_strategic_column() {
    let net = two_bus_wm(100.0, vec![gen("G1", 1, 50.0, 100.0)]);
    let u = unit("S", 2, 2, 15.0, 30.0);
    let prog = build_dcopf(&net, &wm_demand(10.0, 1), &[u], &[], &[vec![0.0]], &[], &[0]).unwrap();
    let res = clear_wholesale(&prog, &opts()).unwrap();
    assert!(res.strategic[0][0].abs() < 1e-7);
    assert_close(res.lmp[1][0], 50.0, 1e-6, "price");
}

#[test]
fn perturbed_dual_shows_in_stationarity() {
    let net = two_bus_wm(30.0, vec![gen("G1", 1, 10.0, 100.0), gen("G2", 2, 40.0, 100.0)]);
    let prog = wm_program(&net, 50.0);
    let res = clear_wholesale(&prog, &opts()).unwrap();
    let block = prog.kkt();
    let mut pt = block.point(&res.solution, &prog.program.param_values());
    let gmax = prog.hours[0].gen_max[0];
    pt[block.row_dual(gmax)] += 1.0;
    let rep = block.residual(&pt).unwrap();
    let e = rep.find("wm.stationarity", "g[G1,h0]").unwrap();
    assert_close(e.value, 1.0, 1e-6, "stationarity residual");
    assert!(block.residual(&pt[1..]).is_err());
}

fn dm_case(link_limit: f64) -> (DistributionProgram, DistributionResult) {
    let net = two_bus_dm(100.0, vec![], vec![unit("S", 1, 2, 15.0, 30.0)]);
    let links = [InterfaceLink {
        trans_bus: 1,
        dist_bus: 1,
        f_max: link_limit,
    }];
    let d = fixtures::demand(vec![vec![0.0], vec![20.0]]);
    let prog = build_lindistflow(&net, &d, &net.strategic.units, &links, &[vec![30.0]], &[vec![10.0]], &[0], ConeMode::Exact)
        .unwrap();
    let res = clear_distribution(&prog, &opts()).unwrap();
    (prog, res)
}

#[test]
fn feeder_price_follows_cheapest_source() {
    let (prog, res) = dm_case(100.0);
    assert_close(res.dlmp[0][0], 10.0, 1e-6, "root");
    assert_close(res.dlmp[1][0], 10.0, 1e-6, "child");
    assert_close(res.link_flow[0][0], 20.0, 1e-6, "import");
    assert!(res.solution.duality_gap() <= 1e-6);
    let rep = kkt_residuals_distribution(&prog, &res).unwrap();
    assert!(rep.max() <= 1e-6, "{}", rep.dump());
    // reactive price at the root vanishes
    assert!(res.dlmp_q[0][0].abs() <= 1e-6);
    for b in dlmp_decomposition(&prog, &res) {
        assert_close(b.energy + b.voltage + b.congestion, b.total, 1e-6, "decomposition");
        assert_close(b.energy, 10.0, 1e-6, "energy");
    }
}

#[test]
fn link_limit_makes_strategic_unit_marginal() {
    let (prog, res) = dm_case(5.0);
    assert_close(res.dlmp[1][0], 15.0, 1e-6, "child");
    assert_close(res.strategic[0][0], 15.0, 1e-6, "strategic dispatch");
    let rep = kkt_residuals_distribution(&prog, &res).unwrap();
    assert!(rep.max() <= 1e-6, "{}", rep.dump());
}

#[test]
fn zero_load_gives_flat_voltage() {
    let net = two_bus_dm(100.0, vec![], vec![]);
    let links = [InterfaceLink {
        trans_bus: 1,
        dist_bus: 1,
        f_max: 10.0,
    }];
    let d = fixtures::demand(vec![vec![0.0], vec![0.0]]);
    let prog = build_lindistflow(&net, &d, &[], &links, &[], &[vec![10.0]], &[0], ConeMode::Exact).unwrap();
    let res = clear_distribution(&prog, &opts()).unwrap();
    assert!(res.voltage.iter().flatten().all(|u| (u - 1.0).abs() < 1e-7));
    assert!(res.fp.iter().flatten().all(|f| f.abs() < 1e-7));
}

#[test]
fn cone_counts_by_mode() {
    let net = two_bus_dm(100.0, vec![], vec![]);
    let links = [InterfaceLink {
        trans_bus: 1,
        dist_bus: 1,
        f_max: 10.0,
    }];
    let d = fixtures::demand(vec![vec![0.0], vec![1.0]]);
    let exact = build_lindistflow(&net, &d, &[], &links, &[], &[vec![10.0]], &[0], ConeMode::Exact).unwrap();
    assert_eq!(exact.program.count_cones(), 1);
    let poly = build_lindistflow(&net, &d, &[], &links, &[], &[vec![10.0]], &[0], ConeMode::Polyhedral(12)).unwrap();
    assert_eq!(poly.program.count_cones(), 0);
    assert_eq!(poly.program.count_rows(TAG_CONE_FACET), 12);
    assert_eq!(poly.kkt().pairs.iter().filter(|p| p.tag == TAG_CONE_FACET).count(), 12);
    assert!(build_lindistflow(&net, &d, &[], &links, &[], &[vec![10.0]], &[0], ConeMode::Polyhedral(3)).is_err());
}

#[test]
fn binding_feeder_limit_shows_in_congestion_component() {
    // the child load exceeds the feeder rating; a local unit covers the rest
    let local = DistGenerator {
        name: "L".into(),
        bus: 2,
        cost: 50.0,
        p_min: 0.0,
        p_max: 100.0,
        q_min: -100.0,
        q_max: 100.0,
    };
    let net = two_bus_dm(30.0, vec![local], vec![]);
    let links = [InterfaceLink {
        trans_bus: 1,
        dist_bus: 1,
        f_max: 100.0,
    }];
    let d = fixtures::demand(vec![vec![0.0], vec![60.0]]);
    for mode in [ConeMode::Exact, ConeMode::Polyhedral(24)] {
        let prog = build_lindistflow(&net, &d, &[], &links, &[], &[vec![10.0]], &[0], mode).unwrap();
        let res = clear_distribution(&prog, &opts()).unwrap();
        assert_close(res.dlmp[1][0], 50.0, 1e-6, "child price");
        let parts = dlmp_decomposition(&prog, &res);
        let child = parts.iter().find(|b| b.bus == 2).unwrap();
        assert_close(child.energy + child.voltage + child.congestion, 50.0, 1e-6, "sum");
        assert!(child.congestion > 30.0, "{child:?}");
        let rep = kkt_residuals_distribution(&prog, &res).unwrap();
        assert!(rep.max_of(ResidualKind::Stationarity) <= 1e-6);
    }
}

#[test]
fn coupled_clearing_of_t2d2() {
    let (sys, demand) = fixtures::t2d2(30.0);
    // no strategic offers: 110 MW served by A (60) and B (50), price 40
    let zero = vec![vec![0.0; 3]];
    let res = clear_coupled(&sys, &demand, &zero, &zero, &[0], ConeMode::Exact, &opts()).unwrap();
    assert_close(res.wm.lmp[1][0], 40.0, 1e-6, "wm price");
    // the feeder imports 50 MW and the local unit covers 20 MW at 60
    assert_close(res.dm.link_flow[0][0], 50.0, 1e-6, "import");
    assert_close(res.dm.dlmp[1][0], 60.0, 1e-6, "dm price");
    let wm_rep = kkt_residuals_wholesale(&res.wm_program, &res.wm).unwrap();
    let dm_rep = kkt_residuals_distribution(&res.dm_program, &res.dm).unwrap();
    assert!(wm_rep.max() <= 1e-6, "{}", wm_rep.dump());
    assert!(dm_rep.max() <= 1e-6, "{}", dm_rep.dump());
}
