//! LinDistFlow distribution market over a radial feeder, with either the
//! exact apparent-power cone or an inscribed polygon in its place.

use std::f64::consts::PI;

use tdm_nlp::SolverOptions;

use crate::error::{ModelError, SolveError};
use crate::network::{validate_radiality, Demand, DistributionNetwork, InterfaceLink, StrategicUnit};
use crate::program::{Cone, ConvexProgram, KktBlock, Lin, ProgramSolution, ResidualReport, Sense};

pub const TAG_BALANCE_P: &str = "dm.balance_p";
pub const TAG_BALANCE_Q: &str = "dm.balance_q";
pub const TAG_GEN_P_MIN: &str = "dm.gen_p_min";
pub const TAG_GEN_P_MAX: &str = "dm.gen_p_max";
pub const TAG_GEN_Q_MIN: &str = "dm.gen_q_min";
pub const TAG_GEN_Q_MAX: &str = "dm.gen_q_max";
pub const TAG_OFFER_MIN: &str = "dm.offer_min";
pub const TAG_OFFER_MAX: &str = "dm.offer_max";
pub const TAG_VOLT_MIN: &str = "dm.volt_min";
pub const TAG_VOLT_MAX: &str = "dm.volt_max";
pub const TAG_ROOT_VOLTAGE: &str = "dm.root_voltage";
pub const TAG_LINK_MIN: &str = "dm.link_min";
pub const TAG_LINK_MAX: &str = "dm.link_max";
pub const TAG_CONE: &str = "dm.cone";
pub const TAG_CONE_FACET: &str = "dm.cone_facet";
pub const TAG_VOLTAGE_DROP: &str = "dm.voltage_drop";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeMode {
    Exact,
    /// Inscribed regular polygon with this many sides.
    Polyhedral(usize),
}

/// Inscribed regular `k`-gon replacing the disc `||(p, q)|| <= S`.
///
/// Facet `j` has outward normal at angle `(2j + 1) pi / k` and reads
/// `cos(a_j) p + sin(a_j) q <= S cos(pi / k)`, so the vertices sit on the
/// circle at angles `2 pi j / k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeApproximation {
    pub k: usize,
}

impl ConeApproximation {
    pub fn new(k: usize) -> Result<Self, ModelError> {
        if k < 4 {
            return Err(ModelError::invariant("polygon needs at least 4 sides"));
        }
        Ok(ConeApproximation { k })
    }

    /// Relative radial shortfall of the polygon against the disc.
    pub fn error_bound(&self) -> f64 {
        1.0 - (PI / self.k as f64).cos()
    }

    pub fn apothem(&self) -> f64 {
        (PI / self.k as f64).cos()
    }

    /// `(cos a_j, sin a_j)` for every facet.
    pub fn normals(&self) -> Vec<(f64, f64)> {
        (0..self.k)
            .map(|j| {
                let a = (2 * j + 1) as f64 * PI / self.k as f64;
                (a.cos(), a.sin())
            })
            .collect()
    }

    /// Linear rows `(a, b, rhs)` meaning `a p + b q <= rhs` for limit `s`.
    pub fn rows(&self, s: f64) -> Vec<(f64, f64, f64)> {
        let rhs = s * self.apothem();
        self.normals().into_iter().map(|(a, b)| (a, b, rhs)).collect()
    }
}

/// Indices of one hour of the distribution program.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DmHour {
    pub hour: usize,
    pub gen_p: Vec<usize>,
    pub gen_q: Vec<usize>,
    pub strat: Vec<usize>,
    pub link: Vec<usize>,
    pub q_root: usize,
    pub fp: Vec<usize>,
    pub fq: Vec<usize>,
    pub u: Vec<usize>,
    pub offer_param: Vec<usize>,
    pub price_param: Vec<usize>,
    pub balance_p: Vec<usize>,
    pub balance_q: Vec<usize>,
    pub gen_p_min: Vec<usize>,
    pub gen_p_max: Vec<usize>,
    pub gen_q_min: Vec<usize>,
    pub gen_q_max: Vec<usize>,
    pub offer_min: Vec<usize>,
    pub offer_max: Vec<usize>,
    pub volt_min: Vec<usize>,
    pub volt_max: Vec<usize>,
    pub root_voltage: usize,
    pub link_min: Vec<usize>,
    pub link_max: Vec<usize>,
    /// Exact mode: cone index per feeder.
    pub cone: Vec<usize>,
    /// Polyhedral mode: facet rows per feeder.
    pub facets: Vec<Vec<usize>>,
    pub voltage_drop: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionProgram {
    pub program: ConvexProgram,
    pub hours: Vec<DmHour>,
    pub mode: ConeMode,
    pub bus_ids: Vec<usize>,
    pub root: usize,
    pub unit_bus: Vec<usize>,
    pub link_bus: Vec<usize>,
    /// `(parent index, child index)` per feeder.
    pub feeder_ends: Vec<(usize, usize)>,
    /// Voltage variables hold `(u - 1) / voltage_scale`, which keeps the
    /// voltage-drop coefficients near one.
    pub voltage_scale: f64,
}

/// Build the distribution clearing over `hours`.
///
/// `offer[r][t]` is the quantity offered by unit `r` and `price[k][t]` the
/// transmission price seen by interface link `k`.
pub fn build_lindistflow(
    net: &DistributionNetwork,
    demand: &Demand,
    units: &[StrategicUnit],
    links: &[InterfaceLink],
    offer: &[Vec<f64>],
    price: &[Vec<f64>],
    hours: &[usize],
    mode: ConeMode,
) -> Result<DistributionProgram, ModelError> {
    let rad = validate_radiality(net);
    if !rad.radial {
        return Err(ModelError::invariant(format!(
            "distribution network must be radial: {}",
            rad.diagnostic.unwrap_or_default()
        )));
    }
    let poly = match mode {
        ConeMode::Exact => None,
        ConeMode::Polyhedral(k) => Some(ConeApproximation::new(k)?),
    };
    let nb = net.buses.len();
    if demand.p.len() != nb {
        return Err(ModelError::invariant(format!(
            "demand covers {} buses, feeder has {nb}",
            demand.p.len()
        )));
    }
    if offer.len() != units.len() || price.len() != links.len() {
        return Err(ModelError::invariant("offer or price table has the wrong number of rows"));
    }
    for &t in hours {
        if t >= demand.hours() {
            return Err(ModelError::invariant(format!("hour {t} beyond demand horizon")));
        }
        for (r, u) in units.iter().enumerate() {
            let o = *offer[r]
                .get(t)
                .ok_or_else(|| ModelError::invariant(format!("no offer for unit {} hour {t}", u.name)))?;
            if o < -1e-9 {
                return Err(ModelError::invariant(format!("negative offer {o} MW for unit {} hour {t}", u.name)));
            }
        }
    }
    let bus = |id: usize| net.bus_index(id).ok_or_else(|| ModelError::invariant(format!("unknown bus {id}")));
    let root = bus(net.root)?;
    let unit_bus = units.iter().map(|u| bus(u.dist_bus)).collect::<Result<Vec<_>, _>>()?;
    let link_bus = links.iter().map(|l| bus(l.dist_bus)).collect::<Result<Vec<_>, _>>()?;
    let gen_bus = net.generators.iter().map(|g| bus(g.bus)).collect::<Result<Vec<_>, _>>()?;
    let feeder_ends = net
        .feeders
        .iter()
        .map(|f| Ok((bus(f.from)?, bus(f.to)?)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let base = net.base_mva;
    let kappa = if net.feeders.is_empty() {
        1.0
    } else {
        let z = net.feeders.iter().map(|f| f.r.max(f.x).max(1e-9).ln()).sum::<f64>() / net.feeders.len() as f64;
        2.0 * z.exp() / base
    };

    let mut p = ConvexProgram::new("dm");
    let mut out = Vec::with_capacity(hours.len());
    for &t in hours {
        let mut h = DmHour {
            hour: t,
            ..Default::default()
        };
        for g in &net.generators {
            let v = p.add_var(format!("p[{},h{t}]", g.name));
            p.set_cost(v, Lin::constant(g.cost));
            h.gen_p.push(v);
            h.gen_q.push(p.add_var(format!("q[{},h{t}]", g.name)));
        }
        for (r, u) in units.iter().enumerate() {
            let v = p.add_var(format!("gD[{},h{t}]", u.name));
            p.set_cost(v, Lin::constant(u.cost));
            h.strat.push(v);
            h.offer_param.push(p.add_param(format!("gDo[{},h{t}]", u.name), offer[r][t]));
        }
        for (k, l) in links.iter().enumerate() {
            let v = p.add_var(format!("g0[{}-{},h{t}]", l.trans_bus, l.dist_bus));
            let pp = p.add_param(format!("lambda_T*[{}-{},h{t}]", l.trans_bus, l.dist_bus), price[k][t]);
            p.set_cost(v, Lin::param(pp, 1.0));
            h.link.push(v);
            h.price_param.push(pp);
        }
        h.q_root = p.add_var(format!("q0[h{t}]"));
        for f in &net.feeders {
            h.fp.push(p.add_var(format!("fp[{}-{},h{t}]", f.from, f.to)));
            h.fq.push(p.add_var(format!("fq[{}-{},h{t}]", f.from, f.to)));
        }
        for b in &net.buses {
            h.u.push(p.add_var(format!("u[{},h{t}]", b.id)));
        }

        for (b, db) in net.buses.iter().enumerate() {
            let mut ep = Lin::constant(-demand.p[b][t]);
            let mut eq = Lin::constant(-demand.q[b][t]);
            for (i, &gb) in gen_bus.iter().enumerate() {
                if gb == b {
                    ep.add_var(h.gen_p[i], 1.0);
                    eq.add_var(h.gen_q[i], 1.0);
                }
            }
            for (r, &ub) in unit_bus.iter().enumerate() {
                if ub == b {
                    ep.add_var(h.strat[r], 1.0);
                }
            }
            for (k, &lb) in link_bus.iter().enumerate() {
                if lb == b {
                    ep.add_var(h.link[k], 1.0);
                }
            }
            if b == root {
                eq.add_var(h.q_root, 1.0);
            }
            for (e, &(from, to)) in feeder_ends.iter().enumerate() {
                if to == b {
                    ep.add_var(h.fp[e], 1.0);
                    eq.add_var(h.fq[e], 1.0);
                }
                if from == b {
                    ep.add_var(h.fp[e], -1.0);
                    eq.add_var(h.fq[e], -1.0);
                }
            }
            h.balance_p.push(p.add_row(TAG_BALANCE_P, format!("bus{} h{t}", db.id), Sense::Eq, ep, format!("lambda_D[{},h{t}]", db.id)));
            h.balance_q.push(p.add_row(TAG_BALANCE_Q, format!("bus{} h{t}", db.id), Sense::Eq, eq, format!("lambda_Dq[{},h{t}]", db.id)));
        }
        for (i, g) in net.generators.iter().enumerate() {
            let lbl = format!("{} h{t}", g.name);
            let mut e = Lin::var(h.gen_p[i], 1.0);
            e.add_constant(-g.p_min);
            h.gen_p_min.push(p.add_row(TAG_GEN_P_MIN, lbl.clone(), Sense::Ge, e, format!("delta_lo[{},h{t}]", g.name)));
            let mut e = Lin::var(h.gen_p[i], -1.0);
            e.add_constant(g.p_max);
            h.gen_p_max.push(p.add_row(TAG_GEN_P_MAX, lbl.clone(), Sense::Ge, e, format!("delta_hi[{},h{t}]", g.name)));
            let mut e = Lin::var(h.gen_q[i], 1.0);
            e.add_constant(-g.q_min);
            h.gen_q_min.push(p.add_row(TAG_GEN_Q_MIN, lbl.clone(), Sense::Ge, e, format!("theta_lo[{},h{t}]", g.name)));
            let mut e = Lin::var(h.gen_q[i], -1.0);
            e.add_constant(g.q_max);
            h.gen_q_max.push(p.add_row(TAG_GEN_Q_MAX, lbl, Sense::Ge, e, format!("theta_hi[{},h{t}]", g.name)));
        }
        for (r, u) in units.iter().enumerate() {
            let lbl = format!("{} h{t}", u.name);
            h.offer_min.push(p.add_row(TAG_OFFER_MIN, lbl.clone(), Sense::Ge, Lin::var(h.strat[r], 1.0), format!("alphaD_lo[{},h{t}]", u.name)));
            let mut e = Lin::param(h.offer_param[r], 1.0);
            e.add_var(h.strat[r], -1.0);
            h.offer_max.push(p.add_row(TAG_OFFER_MAX, lbl, Sense::Ge, e, format!("alphaD_hi[{},h{t}]", u.name)));
        }
        for (b, db) in net.buses.iter().enumerate() {
            let lbl = format!("bus{} h{t}", db.id);
            let mut e = Lin::var(h.u[b], 1.0);
            e.add_constant((1.0 - db.u_min) / kappa);
            h.volt_min.push(p.add_row(TAG_VOLT_MIN, lbl.clone(), Sense::Ge, e, format!("mu_lo[{},h{t}]", db.id)));
            let mut e = Lin::var(h.u[b], -1.0);
            e.add_constant((db.u_max - 1.0) / kappa);
            h.volt_max.push(p.add_row(TAG_VOLT_MAX, lbl, Sense::Ge, e, format!("mu_hi[{},h{t}]", db.id)));
        }
        let e = Lin::var(h.u[root], 1.0);
        h.root_voltage = p.add_row(TAG_ROOT_VOLTAGE, format!("bus{} h{t}", net.root), Sense::Eq, e, format!("nu_root[h{t}]"));
        for (k, l) in links.iter().enumerate() {
            let lbl = format!("{}-{} h{t}", l.trans_bus, l.dist_bus);
            let mut e = Lin::var(h.link[k], 1.0);
            e.add_constant(l.f_max);
            h.link_min.push(p.add_row(TAG_LINK_MIN, lbl.clone(), Sense::Ge, e, format!("tau_lo[{}-{},h{t}]", l.trans_bus, l.dist_bus)));
            let mut e = Lin::var(h.link[k], -1.0);
            e.add_constant(l.f_max);
            h.link_max.push(p.add_row(TAG_LINK_MAX, lbl, Sense::Ge, e, format!("tau_hi[{}-{},h{t}]", l.trans_bus, l.dist_bus)));
        }
        for (e, f) in net.feeders.iter().enumerate() {
            let lbl = format!("{}-{} h{t}", f.from, f.to);
            match poly {
                None => {
                    h.cone.push(p.add_cone(Cone {
                        tag: TAG_CONE,
                        label: lbl.clone(),
                        bound: f.s_max,
                        comps: [Lin::var(h.fp[e], 1.0), Lin::var(h.fq[e], 1.0)],
                        dual: format!("eta[{}-{},h{t}]", f.from, f.to),
                    }));
                }
                Some(ap) => {
                    let rows = ap
                        .rows(f.s_max)
                        .into_iter()
                        .enumerate()
                        .map(|(j, (a, b, rhs))| {
                            let mut ex = Lin::constant(rhs);
                            ex.add_var(h.fp[e], -a).add_var(h.fq[e], -b);
                            p.add_row(TAG_CONE_FACET, format!("{lbl} j{j}"), Sense::Ge, ex, format!("w[{}-{},h{t},{j}]", f.from, f.to))
                        })
                        .collect();
                    h.facets.push(rows);
                }
            }
            let (from, to) = feeder_ends[e];
            let mut ex = Lin::var(h.u[from], 1.0);
            ex.add_var(h.u[to], -1.0)
                .add_var(h.fp[e], -2.0 * f.r / base / kappa)
                .add_var(h.fq[e], -2.0 * f.x / base / kappa);
            h.voltage_drop.push(p.add_row(TAG_VOLTAGE_DROP, lbl, Sense::Eq, ex, format!("beta[{}-{},h{t}]", f.from, f.to)));
        }
        out.push(h);
    }
    Ok(DistributionProgram {
        program: p,
        hours: out,
        mode,
        bus_ids: net.buses.iter().map(|b| b.id).collect(),
        root,
        unit_bus,
        link_bus,
        feeder_ends,
        voltage_scale: kappa,
    })
}

impl DistributionProgram {
    pub fn set_offer(&mut self, unit: usize, hour_pos: usize, value: f64) {
        let p = self.hours[hour_pos].offer_param[unit];
        self.program.set_param(p, value);
    }

    pub fn set_price(&mut self, link: usize, hour_pos: usize, value: f64) {
        let p = self.hours[hour_pos].price_param[link];
        self.program.set_param(p, value);
    }

    pub fn kkt(&self) -> KktBlock {
        KktBlock::of(&self.program)
    }
}

/// Cleared distribution market, tables indexed `[item][hour position]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionResult {
    pub dlmp: Vec<Vec<f64>>,
    pub dlmp_q: Vec<Vec<f64>>,
    pub voltage: Vec<Vec<f64>>,
    pub dispatch_p: Vec<Vec<f64>>,
    pub dispatch_q: Vec<Vec<f64>>,
    pub strategic: Vec<Vec<f64>>,
    pub link_flow: Vec<Vec<f64>>,
    pub fp: Vec<Vec<f64>>,
    pub fq: Vec<Vec<f64>>,
    pub objective: f64,
    pub dual_objective: f64,
    pub solution: ProgramSolution,
}

fn table(prog: &DistributionProgram, pick: &dyn Fn(&DmHour) -> &Vec<usize>, src: &[f64]) -> Vec<Vec<f64>> {
    let n = prog.hours.first().map(|h| pick(h).len()).unwrap_or(0);
    (0..n)
        .map(|i| prog.hours.iter().map(|h| src[pick(h)[i]]).collect())
        .collect()
}

impl DistributionResult {
    pub fn from_solution(prog: &DistributionProgram, sol: ProgramSolution) -> Self {
        DistributionResult {
            dlmp: table(prog, &|h| &h.balance_p, &sol.duals),
            dlmp_q: table(prog, &|h| &h.balance_q, &sol.duals),
            voltage: table(prog, &|h| &h.u, &sol.x)
                .into_iter()
                .map(|row| row.into_iter().map(|w| 1.0 + prog.voltage_scale * w).collect())
                .collect(),
            dispatch_p: table(prog, &|h| &h.gen_p, &sol.x),
            dispatch_q: table(prog, &|h| &h.gen_q, &sol.x),
            strategic: table(prog, &|h| &h.strat, &sol.x),
            link_flow: table(prog, &|h| &h.link, &sol.x),
            fp: table(prog, &|h| &h.fp, &sol.x),
            fq: table(prog, &|h| &h.fq, &sol.x),
            objective: sol.objective,
            dual_objective: sol.dual_objective,
            solution: sol,
        }
    }

    /// Largest cone bound multiplier over all feeders and hours. In
    /// polyhedral mode this is the norm of the aggregated facet multipliers.
    pub fn max_cone_dual(&self, prog: &DistributionProgram) -> f64 {
        match prog.mode {
            ConeMode::Exact => self.solution.cone_duals.iter().fold(0.0, |m, d| m.max(d[0])),
            ConeMode::Polyhedral(k) => {
                let ap = ConeApproximation { k };
                let normals = ap.normals();
                let mut m: f64 = 0.0;
                for h in &prog.hours {
                    for rows in &h.facets {
                        let (mut a, mut b) = (0.0, 0.0);
                        for (j, &r) in rows.iter().enumerate() {
                            a += self.solution.duals[r] * normals[j].0;
                            b += self.solution.duals[r] * normals[j].1;
                        }
                        m = m.max((a * a + b * b).sqrt());
                    }
                }
                m
            }
        }
    }
}

pub fn clear_distribution(prog: &DistributionProgram, opts: &SolverOptions) -> Result<DistributionResult, SolveError> {
    let sol = prog.program.solve(opts)?;
    Ok(DistributionResult::from_solution(prog, sol))
}

pub fn kkt_residuals_distribution(
    prog: &DistributionProgram,
    result: &DistributionResult,
) -> Result<ResidualReport, ModelError> {
    let block = prog.kkt();
    let pt = block.point(&result.solution, &prog.program.param_values());
    block.residual(&pt).map_err(ModelError::Invariant)
}

/// DLMP of one bus split along its path from the root.
#[derive(Debug, Clone, PartialEq)]
pub struct DlmpBreakdown {
    pub bus: usize,
    pub hour: usize,
    /// Price at the root bus.
    pub energy: f64,
    /// Sum of voltage-drop dual contributions along the path.
    pub voltage: f64,
    /// Sum of apparent-power limit contributions along the path.
    pub congestion: f64,
    pub total: f64,
}

/// Walk every path from the root and attribute the price differences to
/// the voltage-drop and apparent-power terms of each feeder's active-flow
/// stationarity condition.
pub fn dlmp_decomposition(prog: &DistributionProgram, result: &DistributionResult) -> Vec<DlmpBreakdown> {
    let sol = &result.solution;
    let nb = prog.bus_ids.len();
    let mut out = Vec::new();
    for (pos, h) in prog.hours.iter().enumerate() {
        let mut voltage = vec![0.0; prog.feeder_ends.len()];
        let mut congestion = vec![0.0; prog.feeder_ends.len()];
        for e in 0..prog.feeder_ends.len() {
            let fp = h.fp[e];
            let row = &prog.program.rows[h.voltage_drop[e]];
            voltage[e] = -sol.duals[h.voltage_drop[e]] * row.expr.coef(fp);
            congestion[e] = match prog.mode {
                ConeMode::Exact => -sol.cone_duals[h.cone[e]][1],
                ConeMode::Polyhedral(_) => h.facets[e]
                    .iter()
                    .map(|&r| -sol.duals[r] * prog.program.rows[r].expr.coef(fp))
                    .sum(),
            };
        }
        let energy = result.dlmp[prog.root][pos];
        for b in 0..nb {
            let (mut v, mut c) = (0.0, 0.0);
            let mut cur = b;
            while cur != prog.root {
                let e = prog
                    .feeder_ends
                    .iter()
                    .position(|&(_, to)| to == cur)
                    .expect("radial feeder has a parent edge");
                v += voltage[e];
                c += congestion[e];
                cur = prog.feeder_ends[e].0;
            }
            out.push(DlmpBreakdown {
                bus: prog.bus_ids[b],
                hour: h.hour,
                energy,
                voltage: v,
                congestion: c,
                total: result.dlmp[b][pos],
            });
        }
    }
    out
}
