use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;

use proptest::prelude::*;
use tdm_core::fixtures;
use tdm_core::network::*;

fn write_temp(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
    path
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn feeder(from: usize, to: usize) -> Feeder {
    Feeder {
        from,
        to,
        r: 0.01,
        x: 0.02,
        s_max: 10.0,
    }
}

fn dist_with(buses: &[usize], root: usize, edges: &[(usize, usize)]) -> DistributionNetwork {
    let mut net = fixtures::two_bus_dm(10.0, vec![], vec![]);
    net.root = root;
    net.buses = buses
        .iter()
        .map(|&id| DistBus {
            id,
            u_min: 0.9,
            u_max: 1.1,
        })
        .collect();
    net.feeders = edges.iter().map(|&(a, b)| feeder(a, b)).collect();
    net
}

#[test]
fn transmission_round_trip_is_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixtures::two_bus_wm(50.0, vec![fixtures::gen("g1", 1, 10.0, 100.0)]);
    let text = net.to_json();
    let path = write_temp(&dir, "t.json", &text);
    let back = TransmissionNetwork::load(&path).unwrap();
    assert_eq!(back, net);
    assert_eq!(back.buses.len(), 2);
    assert_eq!(back.lines.len(), 1);
    assert_eq!(back.to_json(), text);
}

#[test]
fn distribution_round_trip_is_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixtures::two_bus_dm(5.0, vec![], vec![fixtures::unit("r", 1, 2, 20.0, 3.0)]);
    let text = net.to_json();
    let path = write_temp(&dir, "d.json", &text);
    let back = DistributionNetwork::load(&path).unwrap();
    assert_eq!(back.feeders.len(), 1);
    assert_eq!(back.to_json(), text);
}

#[test]
fn zero_reactance_is_rejected() {
    let mut net = fixtures::two_bus_wm(50.0, vec![fixtures::gen("g1", 1, 10.0, 100.0)]);
    net.lines[0].x = 0.0;
    let err = net.validate().unwrap_err().to_string();
    assert!(err.contains("reactance must be positive"), "{err}");
}

#[test]
fn schema_errors_name_the_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_temp(&dir, "bad.json", "{\"buses\": [{\"id\": 1, \"colour\": 3}], \"lines\": [], \"generators\": []}");
    let err = TransmissionNetwork::load(&path).unwrap_err().to_string();
    assert!(err.contains("colour") && err.contains("line 1"), "{err}");
}

#[test]
fn disconnected_transmission_is_rejected() {
    let mut net = fixtures::two_bus_wm(50.0, vec![]);
    net.buses.push(TransBus { id: 3, name: None });
    assert!(net.validate().unwrap_err().to_string().contains("connected"));
}

#[test]
fn feeder_cycle_is_not_radial() {
    let net = dist_with(&[1, 2, 3], 1, &[(1, 2), (2, 3), (3, 1)]);
    let err = net.validate().unwrap_err().to_string();
    assert!(err.contains("distribution network must be radial"), "{err}");
}

#[test]
fn single_bus_is_a_degenerate_tree() {
    let net = dist_with(&[1], 1, &[]);
    assert!(validate_radiality(&net).radial);
}

#[test]
fn extra_edge_is_named_in_the_diagnostic() {
    let net = dist_with(&[1, 2, 3, 4], 1, &[(1, 2), (1, 3), (3, 4), (2, 4)]);
    let check = validate_radiality(&net);
    assert!(!check.radial);
    assert!(check.diagnostic.unwrap().contains("2-4"));
}

#[test]
fn interface_to_missing_bus_is_rejected() {
    let trans = fixtures::two_bus_wm(50.0, vec![]);
    let dist = fixtures::two_bus_dm(5.0, vec![], vec![]);
    let ok = attach_interfaces(
        trans.clone(),
        dist.clone(),
        vec![InterfaceLink {
            trans_bus: 2,
            dist_bus: 1,
            f_max: 10.0,
        }],
    )
    .unwrap();
    assert_eq!(ok.links.len(), 1);
    let err = attach_interfaces(
        trans,
        dist,
        vec![InterfaceLink {
            trans_bus: 99,
            dist_bus: 1,
            f_max: 10.0,
        }],
    )
    .unwrap_err();
    assert!(err.to_string().contains("99"));
}

#[test]
fn demand_csv_defaults_reactive_share() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_temp(&dir, "d.csv", "bus,hour,mw,mvar\n1,0,10,\n2,1,4,1.5\n");
    let d = Demand::from_csv(&path, &[1, 2]).unwrap();
    assert_eq!(d.hours(), 2);
    assert!((d.q[0][0] - 3.0).abs() < 1e-12);
    assert_eq!(d.q[1][1], 1.5);
    assert!((d.total(0) - 10.0).abs() < 1e-12);
    let bad = write_temp(&dir, "e.csv", "bus,hour,mw\n7,0,1\n");
    assert!(Demand::from_csv(&bad, &[1, 2]).is_err());
}

#[test]
fn tariff_csv_checks_sign_and_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_temp(&dir, "a.csv", "hour,price\n0,15.5\n1,219.7\n");
    assert_eq!(TariffSchedule::from_csv(&good).unwrap().price, vec![15.5, 219.7]);
    let neg = write_temp(&dir, "b.csv", "hour,price\n0,-1\n");
    assert!(TariffSchedule::from_csv(&neg).is_err());
    let gap = write_temp(&dir, "c.csv", "hour,price\n0,1\n2,1\n");
    assert!(TariffSchedule::from_csv(&gap).unwrap_err().to_string().contains("every hour"));
}

#[test]
fn bundled_transmission_has_eleven_zones() {
    let net = TransmissionNetwork::load(&bundled("nyiso11.json")).unwrap();
    assert_eq!(net.buses.len(), 11);
    assert!((net.installed_capacity() / 1000.0 - 39.3).abs() < 0.05);
}

#[test]
fn bundled_feeder_is_a_seven_bus_tree_with_three_links() {
    let dist = DistributionNetwork::load(&bundled("manhattan7.json")).unwrap();
    assert_eq!(dist.buses.len(), 7);
    assert_eq!(dist.feeders.len(), 6);
    assert!(validate_radiality(&dist).radial);
    let units = &dist.strategic.units;
    assert_eq!(units.len(), 1);
    assert_eq!(units[0].g_max, 716.0);
    let trans = TransmissionNetwork::load(&bundled("nyiso11.json")).unwrap();
    let links = trans.interfaces.clone();
    let sys = attach_interfaces(trans, dist, links).unwrap();
    let pairs: Vec<_> = sys.links.iter().map(|l| (l.trans_bus, l.dist_bus)).collect();
    assert_eq!(pairs, vec![(10, 1), (11, 1), (11, 6)]);
}

/// Reference answer: a spanning tree iff |E| = |V| - 1 and the graph is connected.
fn tree_oracle(n: usize, edges: &[(usize, usize)]) -> bool {
    if edges.len() + 1 != n {
        return false;
    }
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen = BTreeSet::from([0]);
    let mut queue = vec![0];
    while let Some(v) = queue.pop() {
        for &w in adj.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(w) {
                queue.push(w);
            }
        }
    }
    seen.len() == n
}

/// Orient undirected edges away from bus 0 by breadth-first search; edges
/// that close a cycle keep their input orientation.
fn orient(n: usize, edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut depth = vec![usize::MAX; n];
    depth[0] = 0;
    let mut frontier = std::collections::VecDeque::from([0]);
    while let Some(v) = frontier.pop_front() {
        for &(a, b) in edges {
            let w = if a == v { b } else if b == v { a } else { continue };
            if depth[w] == usize::MAX {
                depth[w] = depth[v] + 1;
                frontier.push_back(w);
            }
        }
    }
    edges
        .iter()
        .map(|&(a, b)| if depth[a] != usize::MAX && depth[b] == depth[a] + 1 { (a, b) } else if depth[b] != usize::MAX && depth[a] == depth[b] + 1 { (b, a) } else { (a, b) })
        .collect()
}

fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..9).prop_flat_map(|n| {
        let tree: Vec<BoxedStrategy<usize>> = (1..n).map(|v| (0..v).boxed()).collect();
        let extra = proptest::collection::vec((0..n, 0..n), 0..3);
        (Just(n), tree, extra, proptest::collection::vec(any::<bool>(), n))
            .prop_map(|(n, parents, extra, drop)| {
                let mut edges: Vec<(usize, usize)> = parents.iter().enumerate().map(|(i, &p)| (p, i + 1)).collect();
                // random deletions make forests, random insertions make cycles
                let mut kept: Vec<_> = edges.drain(..).zip(drop.iter()).filter(|(_, d)| !**d || n < 3).map(|(e, _)| e).collect();
                let mut seen: BTreeSet<(usize, usize)> = kept.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
                for (a, b) in extra {
                    if a != b && seen.insert((a.min(b), a.max(b))) {
                        kept.push((a, b));
                    }
                }
                (n, kept)
            })
    })
}

proptest! {
    #[test]
    fn radiality_matches_tree_oracle((n, edges) in graph()) {
        let oriented = orient(n, &edges);
        let ids: Vec<usize> = (0..n).collect();
        let net = dist_with(&ids, 0, &oriented);
        prop_assert_eq!(validate_radiality(&net).radial, tree_oracle(n, &edges));
    }
}
