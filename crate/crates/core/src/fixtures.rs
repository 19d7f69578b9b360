//! Small hand-checkable instances.

use crate::coupled::SystemDemand;
use crate::network::{
    CoupledSystem, Demand, DistBus, DistGenerator, DistributionNetwork, Feeder, Generator, InterfaceLink,
    StrategicProducer, StrategicUnit, TransBus, TransLine, TransmissionNetwork,
};

pub fn gen(name: &str, bus: usize, cost: f64, g_max: f64) -> Generator {
    Generator {
        name: name.to_string(),
        bus,
        fuel: None,
        cost,
        g_min: 0.0,
        g_max,
    }
}

/// Two buses joined by one line of reactance 0.1 p.u.
pub fn two_bus_wm(line_limit: f64, generators: Vec<Generator>) -> TransmissionNetwork {
    TransmissionNetwork {
        name: "two-bus".into(),
        base_mva: 100.0,
        buses: vec![TransBus { id: 1, name: None }, TransBus { id: 2, name: None }],
        lines: vec![TransLine {
            from: 1,
            to: 2,
            x: 0.1,
            f_max: line_limit,
        }],
        generators,
        interfaces: Vec::new(),
    }
}

/// Root bus 1 feeding bus 2 through one feeder.
pub fn two_bus_dm(s_max: f64, generators: Vec<DistGenerator>, units: Vec<StrategicUnit>) -> DistributionNetwork {
    DistributionNetwork {
        name: "two-bus feeder".into(),
        base_mva: 100.0,
        root: 1,
        buses: vec![
            DistBus {
                id: 1,
                u_min: 0.9,
                u_max: 1.1,
            },
            DistBus {
                id: 2,
                u_min: 0.9,
                u_max: 1.1,
            },
        ],
        feeders: vec![Feeder {
            from: 1,
            to: 2,
            r: 0.01,
            x: 0.02,
            s_max,
        }],
        generators,
        strategic: StrategicProducer { units },
    }
}

pub fn unit(name: &str, trans_bus: usize, dist_bus: usize, cost: f64, g_max: f64) -> StrategicUnit {
    StrategicUnit {
        name: name.to_string(),
        trans_bus,
        dist_bus,
        cost,
        g_min: 0.0,
        g_max,
    }
}

/// Demand table with the given active loads `[bus][hour]` and reactive
/// loads at the default ratio.
pub fn demand(p: Vec<Vec<f64>>) -> Demand {
    let q = p
        .iter()
        .map(|row| row.iter().map(|v| v * crate::network::DEFAULT_Q_RATIO).collect())
        .collect();
    Demand { p, q }
}

/// DM child-bus loads of the three-hour toy horizon.
pub const T2D2_DM_LOAD: [f64; 3] = [70.0, 60.0, 40.0];

/// Two-bus wholesale grid and two-bus feeder with one 30 MW strategic unit.
///
/// Wholesale: a 60 MW unit at 10 $/MWh on bus 1 and a 100 MW unit at
/// 40 $/MWh on bus 2 serving 80 MW at bus 2. Feeder: the root imports
/// through a 50 MW link from wholesale bus 2; the child has a local unit at
/// 60 $/MWh. The strategic unit (15 $/MWh) sits at wholesale bus 2 and at
/// the feeder's child bus. When the feeder load exceeds the link limit the
/// producer can hold the distribution price at the local unit's cost.
pub fn t2d2(capacity: f64) -> (CoupledSystem, SystemDemand) {
    let trans = two_bus_wm(100.0, vec![gen("A", 1, 10.0, 60.0), gen("B", 2, 40.0, 100.0)]);
    let local = DistGenerator {
        name: "L".into(),
        bus: 2,
        cost: 60.0,
        p_min: 0.0,
        p_max: 40.0,
        q_min: -40.0,
        q_max: 40.0,
    };
    let dist = two_bus_dm(150.0, vec![local], vec![unit("S", 2, 2, 15.0, capacity)]);
    let links = vec![InterfaceLink {
        trans_bus: 2,
        dist_bus: 1,
        f_max: 50.0,
    }];
    let sys = crate::network::attach_interfaces(trans, dist, links).expect("valid toy");
    let demand = SystemDemand {
        wm: demand(vec![vec![0.0; 3], vec![80.0; 3]]),
        dm: demand(vec![vec![0.0; 3], T2D2_DM_LOAD.to_vec()]),
    };
    (sys, demand)
}

/// T2D2 as a one-season dataset. The price history holds two samples per
/// distribution bus and hour whose mean and sample deviation are `mean`
/// and `sigma`; the tariff is flat at `tariff`.
pub fn t2d2_dataset(capacity: f64, mean: f64, sigma: f64, tariff: f64) -> crate::cases::Dataset {
    let (sys, demand) = t2d2(capacity);
    let hours = demand.hours();
    let half = sigma / std::f64::consts::SQRT_2;
    let mut history = crate::risk::PriceHistory::default();
    for b in &sys.dist.buses {
        for t in 0..hours {
            history.samples.insert((b.id, t), vec![mean - half, mean + half]);
        }
    }
    crate::cases::Dataset {
        sys,
        seasons: vec![crate::cases::Season {
            name: "toy".into(),
            demand,
        }],
        tariff: Some(crate::network::TariffSchedule::new(vec![tariff; hours]).expect("positive tariff")),
        history: Some(history),
    }
}
