//! Wholesale DC optimal power flow with the producer's offer as a parameter.

use tdm_nlp::SolverOptions;

use crate::error::{ModelError, SolveError};
use crate::network::{Demand, InterfaceLink, StrategicUnit, TransmissionNetwork};
use crate::program::{ConvexProgram, KktBlock, Lin, ProgramSolution, ResidualReport, Sense};

pub const TAG_BALANCE: &str = "wm.balance";
pub const TAG_GEN_MIN: &str = "wm.gen_min";
pub const TAG_GEN_MAX: &str = "wm.gen_max";
pub const TAG_OFFER_MIN: &str = "wm.offer_min";
pub const TAG_OFFER_MAX: &str = "wm.offer_max";
pub const TAG_FLOW_DEF: &str = "wm.flow_def";
pub const TAG_FLOW_MIN: &str = "wm.flow_min";
pub const TAG_FLOW_MAX: &str = "wm.flow_max";
pub const TAG_REF_ANGLE: &str = "wm.ref_angle";

/// Variable, parameter and row indices of one hour of the wholesale program.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WmHour {
    pub hour: usize,
    pub gen: Vec<usize>,
    pub strat: Vec<usize>,
    pub flow: Vec<usize>,
    pub angle: Vec<usize>,
    pub offer_param: Vec<usize>,
    pub link_param: Vec<usize>,
    pub balance: Vec<usize>,
    pub gen_min: Vec<usize>,
    pub gen_max: Vec<usize>,
    pub offer_min: Vec<usize>,
    pub offer_max: Vec<usize>,
    pub flow_def: Vec<usize>,
    pub flow_min: Vec<usize>,
    pub flow_max: Vec<usize>,
    pub ref_angle: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WholesaleProgram {
    pub program: ConvexProgram,
    pub hours: Vec<WmHour>,
    pub bus_ids: Vec<usize>,
    pub gen_names: Vec<String>,
    pub unit_names: Vec<String>,
    /// Transmission bus index of each strategic unit.
    pub unit_bus: Vec<usize>,
    pub unit_cost: Vec<f64>,
    pub line_ends: Vec<(usize, usize)>,
    /// Angle variables hold `theta * angle_scale`, which keeps the
    /// flow-definition coefficients near one.
    pub angle_scale: f64,
}

/// Offers indexed `[unit][hour]`, hours are absolute.
pub type Offers = Vec<Vec<f64>>;

/// Build the wholesale clearing over `hours`.
///
/// `offer[r][t]` is the quantity unit `r` offers in hour `t`, and
/// `link_flow[k][t]` the flow withdrawn by interface link `k` (positive
/// towards the distribution side).
pub fn build_dcopf(
    net: &TransmissionNetwork,
    demand: &Demand,
    units: &[StrategicUnit],
    links: &[InterfaceLink],
    offer: &[Vec<f64>],
    link_flow: &[Vec<f64>],
    hours: &[usize],
) -> Result<WholesaleProgram, ModelError> {
    let nb = net.buses.len();
    if demand.p.len() != nb {
        return Err(ModelError::invariant(format!(
            "demand covers {} buses, network has {nb}",
            demand.p.len()
        )));
    }
    if offer.len() != units.len() || link_flow.len() != links.len() {
        return Err(ModelError::invariant("offer or link-flow table has the wrong number of rows"));
    }
    for &t in hours {
        if t >= demand.hours() {
            return Err(ModelError::invariant(format!("hour {t} beyond demand horizon")));
        }
        for (r, u) in units.iter().enumerate() {
            let o = *offer[r]
                .get(t)
                .ok_or_else(|| ModelError::invariant(format!("no offer for unit {} hour {t}", u.name)))?;
            if !(o >= -1e-9 && o <= u.g_max + 1e-9) {
                return Err(ModelError::invariant(format!(
                    "offer {o} MW of unit {} in hour {t} outside [0, {}]",
                    u.name, u.g_max
                )));
            }
        }
    }
    let bus = |id: usize| net.bus_index(id).ok_or_else(|| ModelError::invariant(format!("unknown bus {id}")));
    let unit_bus = units.iter().map(|u| bus(u.trans_bus)).collect::<Result<Vec<_>, _>>()?;
    let link_bus = links.iter().map(|l| bus(l.trans_bus)).collect::<Result<Vec<_>, _>>()?;
    let gen_bus = net.generators.iter().map(|g| bus(g.bus)).collect::<Result<Vec<_>, _>>()?;
    let line_ends = net
        .lines
        .iter()
        .map(|l| Ok((bus(l.from)?, bus(l.to)?)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let reference = bus(net.reference_bus())?;
    let x_ref = if net.lines.is_empty() {
        1.0
    } else {
        (net.lines.iter().map(|l| l.x.ln()).sum::<f64>() / net.lines.len() as f64).exp()
    };
    let angle_scale = net.base_mva / x_ref;

    let mut p = ConvexProgram::new("wm");
    let mut out = Vec::with_capacity(hours.len());
    for &t in hours {
        let mut h = WmHour {
            hour: t,
            ..Default::default()
        };
        for g in &net.generators {
            let v = p.add_var(format!("g[{},h{t}]", g.name));
            p.set_cost(v, Lin::constant(g.cost));
            h.gen.push(v);
        }
        for (r, u) in units.iter().enumerate() {
            let v = p.add_var(format!("gT[{},h{t}]", u.name));
            p.set_cost(v, Lin::constant(u.cost));
            h.strat.push(v);
            h.offer_param.push(p.add_param(format!("gTo[{},h{t}]", u.name), offer[r][t]));
        }
        for l in &net.lines {
            h.flow.push(p.add_var(format!("f[{}-{},h{t}]", l.from, l.to)));
        }
        for b in &net.buses {
            h.angle.push(p.add_var(format!("theta[{},h{t}]", b.id)));
        }
        for (k, l) in links.iter().enumerate() {
            h.link_param
                .push(p.add_param(format!("link[{}-{},h{t}]", l.trans_bus, l.dist_bus), link_flow[k][t]));
        }

        for (b, tb) in net.buses.iter().enumerate() {
            let mut e = Lin::constant(-demand.p[b][t]);
            for (i, &gb) in gen_bus.iter().enumerate() {
                if gb == b {
                    e.add_var(h.gen[i], 1.0);
                }
            }
            for (r, &ub) in unit_bus.iter().enumerate() {
                if ub == b {
                    e.add_var(h.strat[r], 1.0);
                }
            }
            for (l, &(from, to)) in line_ends.iter().enumerate() {
                if to == b {
                    e.add_var(h.flow[l], 1.0);
                }
                if from == b {
                    e.add_var(h.flow[l], -1.0);
                }
            }
            for (k, &lb) in link_bus.iter().enumerate() {
                if lb == b {
                    e.add_param(h.link_param[k], -1.0);
                }
            }
            h.balance.push(p.add_row(
                TAG_BALANCE,
                format!("bus{} h{t}", tb.id),
                Sense::Eq,
                e,
                format!("lambda_T[{},h{t}]", tb.id),
            ));
        }
        for (i, g) in net.generators.iter().enumerate() {
            let mut lo = Lin::var(h.gen[i], 1.0);
            lo.add_constant(-g.g_min);
            h.gen_min.push(p.add_row(TAG_GEN_MIN, format!("{} h{t}", g.name), Sense::Ge, lo, format!("gamma_lo[{},h{t}]", g.name)));
            let mut hi = Lin::var(h.gen[i], -1.0);
            hi.add_constant(g.g_max);
            h.gen_max.push(p.add_row(TAG_GEN_MAX, format!("{} h{t}", g.name), Sense::Ge, hi, format!("gamma_hi[{},h{t}]", g.name)));
        }
        for (r, u) in units.iter().enumerate() {
            h.offer_min.push(p.add_row(
                TAG_OFFER_MIN,
                format!("{} h{t}", u.name),
                Sense::Ge,
                Lin::var(h.strat[r], 1.0),
                format!("alphaT_lo[{},h{t}]", u.name),
            ));
            let mut hi = Lin::param(h.offer_param[r], 1.0);
            hi.add_var(h.strat[r], -1.0);
            h.offer_max.push(p.add_row(TAG_OFFER_MAX, format!("{} h{t}", u.name), Sense::Ge, hi, format!("alphaT_hi[{},h{t}]", u.name)));
        }
        for (l, line) in net.lines.iter().enumerate() {
            let (from, to) = line_ends[l];
            let b = net.base_mva / line.x / angle_scale;
            let mut def = Lin::var(h.flow[l], 1.0);
            def.add_var(h.angle[from], -b).add_var(h.angle[to], b);
            let label = format!("{}-{} h{t}", line.from, line.to);
            h.flow_def.push(p.add_row(TAG_FLOW_DEF, label.clone(), Sense::Eq, def, format!("xi[{}-{},h{t}]", line.from, line.to)));
            let mut lo = Lin::var(h.flow[l], 1.0);
            lo.add_constant(line.f_max);
            h.flow_min.push(p.add_row(TAG_FLOW_MIN, label.clone(), Sense::Ge, lo, format!("delta_lo[{}-{},h{t}]", line.from, line.to)));
            let mut hi = Lin::var(h.flow[l], -1.0);
            hi.add_constant(line.f_max);
            h.flow_max.push(p.add_row(TAG_FLOW_MAX, label, Sense::Ge, hi, format!("delta_hi[{}-{},h{t}]", line.from, line.to)));
        }
        h.ref_angle = p.add_row(
            TAG_REF_ANGLE,
            format!("bus{} h{t}", net.buses[reference].id),
            Sense::Eq,
            Lin::var(h.angle[reference], 1.0),
            format!("ref[h{t}]"),
        );
        out.push(h);
    }
    Ok(WholesaleProgram {
        program: p,
        hours: out,
        bus_ids: net.buses.iter().map(|b| b.id).collect(),
        gen_names: net.generators.iter().map(|g| g.name.clone()).collect(),
        unit_names: units.iter().map(|u| u.name.clone()).collect(),
        unit_bus,
        unit_cost: units.iter().map(|u| u.cost).collect(),
        line_ends,
        angle_scale,
    })
}

impl WholesaleProgram {
    pub fn set_offer(&mut self, unit: usize, hour_pos: usize, value: f64) {
        let p = self.hours[hour_pos].offer_param[unit];
        self.program.set_param(p, value);
    }

    pub fn set_link_flow(&mut self, link: usize, hour_pos: usize, value: f64) {
        let p = self.hours[hour_pos].link_param[link];
        self.program.set_param(p, value);
    }

    pub fn kkt(&self) -> KktBlock {
        KktBlock::of(&self.program)
    }
}

/// Cleared wholesale market, every table indexed `[item][hour position]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WholesaleResult {
    pub lmp: Vec<Vec<f64>>,
    pub dispatch: Vec<Vec<f64>>,
    pub strategic: Vec<Vec<f64>>,
    pub flows: Vec<Vec<f64>>,
    pub angles: Vec<Vec<f64>>,
    pub flow_min_dual: Vec<Vec<f64>>,
    pub flow_max_dual: Vec<Vec<f64>>,
    pub objective: f64,
    pub dual_objective: f64,
    pub solution: ProgramSolution,
}

impl WholesaleResult {
    pub fn from_solution(prog: &WholesaleProgram, sol: ProgramSolution) -> Self {
        let table = |pick: &dyn Fn(&WmHour) -> &Vec<usize>, src: &[f64]| -> Vec<Vec<f64>> {
            let n = prog.hours.first().map(|h| pick(h).len()).unwrap_or(0);
            (0..n)
                .map(|i| prog.hours.iter().map(|h| src[pick(h)[i]]).collect())
                .collect()
        };
        WholesaleResult {
            lmp: table(&|h| &h.balance, &sol.duals),
            dispatch: table(&|h| &h.gen, &sol.x),
            strategic: table(&|h| &h.strat, &sol.x),
            flows: table(&|h| &h.flow, &sol.x),
            angles: table(&|h| &h.angle, &sol.x)
                .into_iter()
                .map(|row| row.into_iter().map(|v| v / prog.angle_scale).collect())
                .collect(),
            flow_min_dual: table(&|h| &h.flow_min, &sol.duals),
            flow_max_dual: table(&|h| &h.flow_max, &sol.duals),
            objective: sol.objective,
            dual_objective: sol.dual_objective,
            solution: sol,
        }
    }

    /// Congestion rent from the line-limit duals: `sum (dl + du) F`.
    pub fn congestion_rent(&self, net: &TransmissionNetwork) -> f64 {
        let mut rent = 0.0;
        for (l, line) in net.lines.iter().enumerate() {
            for t in 0..self.flow_max_dual[l].len() {
                rent += (self.flow_max_dual[l][t] + self.flow_min_dual[l][t]) * line.f_max;
            }
        }
        rent
    }

    /// Merchandising surplus: load payments minus generator and link revenues.
    pub fn merchandising_surplus(&self, prog: &WholesaleProgram, demand: &Demand) -> f64 {
        let params = prog.program.param_values();
        let mut s = 0.0;
        for (pos, h) in prog.hours.iter().enumerate() {
            let t = h.hour;
            for b in 0..prog.bus_ids.len() {
                let mut withdraw = demand.p[b][t];
                let row = &prog.program.rows[h.balance[b]];
                for &(sym, c) in &row.expr.terms {
                    if let crate::program::Sym::Param(pi) = sym {
                        withdraw -= c * params[pi];
                    }
                }
                s += self.lmp[b][pos] * withdraw;
            }
            for i in 0..prog.gen_names.len() {
                let b = bus_of_gen(prog, pos, i);
                s -= self.lmp[b][pos] * self.dispatch[i][pos];
            }
            for (r, &b) in prog.unit_bus.iter().enumerate() {
                s -= self.lmp[b][pos] * self.strategic[r][pos];
            }
        }
        s
    }
}

fn bus_of_gen(prog: &WholesaleProgram, pos: usize, gen: usize) -> usize {
    let h = &prog.hours[pos];
    let v = h.gen[gen];
    h.balance
        .iter()
        .position(|&r| prog.program.rows[r].expr.coef(v) != 0.0)
        .expect("generator appears in a balance row")
}

pub fn clear_wholesale(prog: &WholesaleProgram, opts: &SolverOptions) -> Result<WholesaleResult, SolveError> {
    let sol = prog.program.solve(opts)?;
    Ok(WholesaleResult::from_solution(prog, sol))
}

pub fn kkt_residuals_wholesale(prog: &WholesaleProgram, result: &WholesaleResult) -> Result<ResidualReport, ModelError> {
    let block = prog.kkt();
    let pt = block.point(&result.solution, &prog.program.param_values());
    block.residual(&pt).map_err(ModelError::Invariant)
}
