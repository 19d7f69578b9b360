//! Network data model: transmission grid, radial distribution feeder,
//! strategic producer, demand profiles and tariffs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

fn default_base() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransBus {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransLine {
    pub from: usize,
    pub to: usize,
    /// Series reactance in p.u. on the network base.
    pub x: f64,
    /// Thermal limit in MW.
    pub f_max: f64,
}

/// Price-taking generator with a constant marginal cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub name: String,
    pub bus: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel: Option<String>,
    /// $/MWh
    pub cost: f64,
    pub g_min: f64,
    pub g_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceLink {
    pub trans_bus: usize,
    pub dist_bus: usize,
    pub f_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmissionNetwork {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_base")]
    pub base_mva: f64,
    pub buses: Vec<TransBus>,
    pub lines: Vec<TransLine>,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub interfaces: Vec<InterfaceLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistBus {
    pub id: usize,
    /// Bounds on the squared voltage magnitude, p.u.²
    pub u_min: f64,
    pub u_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feeder {
    /// Parent (upstream) bus.
    pub from: usize,
    /// Child (downstream) bus.
    pub to: usize,
    /// Resistance, p.u.
    pub r: f64,
    /// Reactance, p.u.
    pub x: f64,
    /// Apparent power limit, MVA.
    pub s_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistGenerator {
    pub name: String,
    pub bus: usize,
    pub cost: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategicUnit {
    pub name: String,
    pub trans_bus: usize,
    pub dist_bus: usize,
    pub cost: f64,
    pub g_min: f64,
    pub g_max: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategicProducer {
    pub units: Vec<StrategicUnit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionNetwork {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_base")]
    pub base_mva: f64,
    pub root: usize,
    pub buses: Vec<DistBus>,
    pub feeders: Vec<Feeder>,
    #[serde(default)]
    pub generators: Vec<DistGenerator>,
    #[serde(default)]
    pub strategic: StrategicProducer,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ModelError::Schema {
        path: path.display().to_string(),
        message: format!("line {} column {}: {}", e.line(), e.column(), e),
    })
}

fn unique_ids(ids: impl Iterator<Item = usize>, what: &str) -> Result<BTreeSet<usize>, ModelError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(ModelError::invariant(format!("duplicate {what} id {id}")));
        }
    }
    Ok(seen)
}

impl TransmissionNetwork {
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let net: TransmissionNetwork = read_json(path)?;
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.buses.is_empty() {
            return Err(ModelError::invariant("transmission network has no buses"));
        }
        if self.base_mva <= 0.0 {
            return Err(ModelError::invariant("base_mva must be positive"));
        }
        let ids = unique_ids(self.buses.iter().map(|b| b.id), "bus")?;
        let known = |id: usize, what: &str| {
            if ids.contains(&id) {
                Ok(())
            } else {
                Err(ModelError::invariant(format!("{what} references unknown bus {id}")))
            }
        };
        for (k, l) in self.lines.iter().enumerate() {
            known(l.from, &format!("line {k}"))?;
            known(l.to, &format!("line {k}"))?;
            if l.from == l.to {
                return Err(ModelError::invariant(format!("line {k} is a self-loop")));
            }
            if !(l.x > 0.0) {
                return Err(ModelError::invariant(format!("line {k}: reactance must be positive")));
            }
            if !(l.f_max > 0.0) {
                return Err(ModelError::invariant(format!("line {k}: flow limit must be positive")));
            }
        }
        for g in &self.generators {
            known(g.bus, &format!("generator {}", g.name))?;
            if g.g_min > g.g_max {
                return Err(ModelError::invariant(format!("generator {}: g_min exceeds g_max", g.name)));
            }
        }
        for (k, link) in self.interfaces.iter().enumerate() {
            known(link.trans_bus, &format!("interface {k}"))?;
            if !(link.f_max > 0.0) {
                return Err(ModelError::invariant(format!("interface {k}: flow limit must be positive")));
            }
        }
        // connectivity
        let adj = adjacency(self.buses.iter().map(|b| b.id), self.lines.iter().map(|l| (l.from, l.to)));
        let start = self.buses[0].id;
        if reachable(&adj, start).len() != self.buses.len() {
            return Err(ModelError::invariant("transmission network must be connected"));
        }
        Ok(())
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Bus with the lowest id; its angle is the reference.
    pub fn reference_bus(&self) -> usize {
        self.buses.iter().map(|b| b.id).min().expect("non-empty")
    }

    pub fn installed_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.g_max).sum()
    }
}

fn adjacency(
    nodes: impl Iterator<Item = usize>,
    edges: impl Iterator<Item = (usize, usize)>,
) -> BTreeMap<usize, Vec<usize>> {
    let mut adj: BTreeMap<usize, Vec<usize>> = nodes.map(|n| (n, Vec::new())).collect();
    for (a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    adj
}

fn reachable(adj: &BTreeMap<usize, Vec<usize>>, start: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for &m in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(m) {
                stack.push(m);
            }
        }
    }
    seen
}

/// Outcome of a radiality check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Radiality {
    pub radial: bool,
    pub diagnostic: Option<String>,
}

/// True iff the feeders form a spanning tree oriented away from the root.
pub fn validate_radiality(net: &DistributionNetwork) -> Radiality {
    let fail = |msg: String| Radiality {
        radial: false,
        diagnostic: Some(msg),
    };
    let ids: BTreeSet<usize> = net.buses.iter().map(|b| b.id).collect();
    if !ids.contains(&net.root) {
        return fail(format!("root bus {} does not exist", net.root));
    }
    let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
    let mut seen_edges = BTreeSet::new();
    for f in &net.feeders {
        if !ids.contains(&f.from) || !ids.contains(&f.to) {
            return fail(format!("feeder {}-{} references an unknown bus", f.from, f.to));
        }
        let key = (f.from.min(f.to), f.from.max(f.to));
        if !seen_edges.insert(key) || f.from == f.to {
            return fail(format!("feeder {}-{} closes a loop", f.from, f.to));
        }
        if f.to == net.root {
            return fail(format!("feeder {}-{} feeds the root bus", f.from, f.to));
        }
        if parent.insert(f.to, f.from).is_some() {
            return fail(format!("feeder {}-{} gives bus {} a second parent", f.from, f.to, f.to));
        }
    }
    if net.feeders.len() + 1 != net.buses.len() {
        // more edges than a tree allows: the last one closes a cycle
        if let Some(f) = net.feeders.get(net.buses.len().saturating_sub(1)) {
            return fail(format!("feeder {}-{} closes a loop", f.from, f.to));
        }
        return fail("feeders do not reach every bus".to_string());
    }
    let adj = adjacency(ids.iter().copied(), net.feeders.iter().map(|f| (f.from, f.to)));
    let reach = reachable(&adj, net.root);
    if reach.len() != ids.len() {
        let missing = ids.difference(&reach).next().copied().unwrap_or(net.root);
        return fail(format!("bus {missing} is not connected to the root"));
    }
    // every bus reaches the root through parents (no directed cycle)
    for &b in &ids {
        let mut cur = b;
        let mut steps = 0;
        while cur != net.root {
            match parent.get(&cur) {
                Some(&p) => cur = p,
                None => return fail(format!("bus {b} has no path to the root")),
            }
            steps += 1;
            if steps > ids.len() {
                return fail(format!("bus {b} lies on a directed cycle"));
            }
        }
    }
    Radiality {
        radial: true,
        diagnostic: None,
    }
}

impl DistributionNetwork {
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let net: DistributionNetwork = read_json(path)?;
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.base_mva <= 0.0 {
            return Err(ModelError::invariant("base_mva must be positive"));
        }
        let ids = unique_ids(self.buses.iter().map(|b| b.id), "bus")?;
        let check = validate_radiality(self);
        if !check.radial {
            return Err(ModelError::invariant(format!(
                "distribution network must be radial: {}",
                check.diagnostic.unwrap_or_default()
            )));
        }
        for b in &self.buses {
            if b.u_min > b.u_max {
                return Err(ModelError::invariant(format!("bus {}: u_min exceeds u_max", b.id)));
            }
        }
        for f in &self.feeders {
            if !(f.s_max > 0.0) {
                return Err(ModelError::invariant(format!(
                    "feeder {}-{}: apparent power limit must be positive",
                    f.from, f.to
                )));
            }
        }
        for g in &self.generators {
            if !ids.contains(&g.bus) {
                return Err(ModelError::invariant(format!("generator {} references unknown bus {}", g.name, g.bus)));
            }
            if g.p_min > g.p_max || g.q_min > g.q_max {
                return Err(ModelError::invariant(format!("generator {}: lower bound exceeds upper bound", g.name)));
            }
        }
        for u in &self.strategic.units {
            if !ids.contains(&u.dist_bus) {
                return Err(ModelError::invariant(format!(
                    "strategic unit {} references unknown distribution bus {}",
                    u.name, u.dist_bus
                )));
            }
            if !(0.0 <= u.g_min && u.g_min <= u.g_max) {
                return Err(ModelError::invariant(format!(
                    "strategic unit {}: need 0 <= g_min <= g_max",
                    u.name
                )));
            }
        }
        Ok(())
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Feeder index whose child is bus `id`.
    pub fn parent_feeder(&self, id: usize) -> Option<usize> {
        self.feeders.iter().position(|f| f.to == id)
    }

    /// Feeder indices from the root down to bus `id`.
    pub fn path_from_root(&self, id: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = id;
        while let Some(e) = self.parent_feeder(cur) {
            path.push(e);
            cur = self.feeders[e].from;
        }
        path.reverse();
        path
    }
}

/// Transmission and distribution networks joined by interface links.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSystem {
    pub trans: TransmissionNetwork,
    pub dist: DistributionNetwork,
    pub links: Vec<InterfaceLink>,
}

impl CoupledSystem {
    pub fn producer(&self) -> &StrategicProducer {
        &self.dist.strategic
    }

    pub fn units(&self) -> &[StrategicUnit] {
        &self.dist.strategic.units
    }
}

pub fn attach_interfaces(
    trans: TransmissionNetwork,
    dist: DistributionNetwork,
    links: Vec<InterfaceLink>,
) -> Result<CoupledSystem, ModelError> {
    if links.is_empty() {
        return Err(ModelError::invariant("at least one interface link is required"));
    }
    for (k, l) in links.iter().enumerate() {
        if trans.bus_index(l.trans_bus).is_none() {
            return Err(ModelError::invariant(format!(
                "interface {k} references unknown transmission bus {}",
                l.trans_bus
            )));
        }
        if dist.bus_index(l.dist_bus).is_none() {
            return Err(ModelError::invariant(format!(
                "interface {k} references unknown distribution bus {}",
                l.dist_bus
            )));
        }
        if !(l.f_max > 0.0) {
            return Err(ModelError::invariant(format!("interface {k}: flow limit must be positive")));
        }
    }
    for u in &dist.strategic.units {
        if trans.bus_index(u.trans_bus).is_none() {
            return Err(ModelError::invariant(format!(
                "strategic unit {} references unknown transmission bus {}",
                u.name, u.trans_bus
            )));
        }
    }
    Ok(CoupledSystem { trans, dist, links })
}

/// Hourly demand per bus, indexed `[bus index][hour]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Demand {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

/// Reactive demand as a share of active demand when none is given.
pub const DEFAULT_Q_RATIO: f64 = 0.3;

impl Demand {
    pub fn zeros(buses: usize, hours: usize) -> Self {
        Demand {
            p: vec![vec![0.0; hours]; buses],
            q: vec![vec![0.0; hours]; buses],
        }
    }

    pub fn hours(&self) -> usize {
        self.p.first().map(Vec::len).unwrap_or(0)
    }

    /// Read `bus,hour,mw[,mvar]` rows. Missing reactive values default to
    /// [`DEFAULT_Q_RATIO`] times the active value.
    pub fn from_csv(path: &Path, bus_ids: &[usize]) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|e| ModelError::schema(path, e.to_string()))?;
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ModelError::schema(path, e.to_string()))?;
            let field = |i: usize| -> Result<&str, ModelError> {
                rec.get(i)
                    .ok_or_else(|| ModelError::schema(path, format!("row {}: missing column {}", line + 2, i + 1)))
            };
            let parse = |s: &str, what: &str| -> Result<f64, ModelError> {
                s.parse::<f64>()
                    .map_err(|_| ModelError::schema(path, format!("row {}: bad {what} '{s}'", line + 2)))
            };
            let bus = parse(field(0)?, "bus")? as usize;
            let hour = parse(field(1)?, "hour")? as usize;
            let p = parse(field(2)?, "mw")?;
            let q = match rec.get(3) {
                Some(s) if !s.is_empty() => Some(parse(s, "mvar")?),
                _ => None,
            };
            rows.push((bus, hour, p, q));
        }
        let hours = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let mut d = Demand::zeros(bus_ids.len(), hours);
        for (bus, hour, p, q) in rows {
            let idx = bus_ids
                .iter()
                .position(|&b| b == bus)
                .ok_or_else(|| ModelError::schema(path, format!("unknown bus {bus}")))?;
            d.p[idx][hour] = p;
            d.q[idx][hour] = q.unwrap_or(DEFAULT_Q_RATIO * p);
        }
        Ok(d)
    }

    pub fn total(&self, hour: usize) -> f64 {
        self.p.iter().map(|row| row[hour]).sum()
    }
}

/// Time-of-use tariff in $/MWh per hour.
#[derive(Debug, Clone, PartialEq)]
pub struct TariffSchedule {
    pub price: Vec<f64>,
}

impl TariffSchedule {
    pub fn new(price: Vec<f64>) -> Result<Self, ModelError> {
        if price.iter().any(|p| !(*p >= 0.0)) {
            return Err(ModelError::invariant("tariff must be non-negative"));
        }
        Ok(TariffSchedule { price })
    }

    /// Read `hour,price` rows (price in $/MWh).
    pub fn from_csv(path: &Path) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| ModelError::schema(path, e.to_string()))?;
        let mut entries = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| ModelError::schema(path, e.to_string()))?;
            let h: usize = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ModelError::schema(path, "bad hour".to_string()))?;
            let p: f64 = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ModelError::schema(path, "bad price".to_string()))?;
            entries.insert(h, p);
        }
        let n = entries.keys().next_back().map(|h| h + 1).unwrap_or(0);
        if entries.len() != n {
            return Err(ModelError::schema(path, "tariff must define every hour".to_string()));
        }
        TariffSchedule::new(entries.into_values().collect())
    }
}

/// Ordered hourly intervals of one representative day.
#[derive(Debug, Clone, PartialEq)]
pub struct Horizon {
    pub hours: usize,
    pub season: String,
}

impl Horizon {
    pub fn new(hours: usize, season: impl Into<String>) -> Result<Self, ModelError> {
        if hours == 0 {
            return Err(ModelError::invariant("horizon needs at least one interval"));
        }
        Ok(Horizon {
            hours,
            season: season.into(),
        })
    }
}
