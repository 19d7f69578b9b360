//! Single-level MPECs of the strategic producer and their Scholtes
//! relaxation solver.
//!
//! Each follower market enters through the KKT block of its clearing
//! program. Block slots become MPEC variables; block parameters (offers,
//! interface flows and prices) are replaced by leader variables, by slots
//! of the other block, or by constants.

use std::fmt::Write as _;

use log::{debug, info};
use tdm_nlp::{ConeRow, QuadExpr, SmoothNlp, SolverOptions, StartPoint};

use crate::coupled::{clear_coupled, SystemDemand};
use crate::distribution::{build_lindistflow, ConeMode, DistributionProgram, DistributionResult};
use crate::error::{ModelError, SolveError};
use crate::network::{CoupledSystem, TariffSchedule};
use crate::program::{KktBlock, ProgramSolution, ResidualReport, SlotKind, DEGENERACY_TOL};
use crate::risk::RiskSpec;
use crate::wholesale::{build_dcopf, WholesaleProgram, WholesaleResult};

pub const TAG_CAPACITY_MIN: &str = "leader.capacity_min";
pub const TAG_CAPACITY_MAX: &str = "leader.capacity_max";
pub const TAG_REVENUE_BOUND: &str = "leader.revenue_bound";

/// A named scalar condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Cond {
    pub tag: String,
    pub label: String,
    pub expr: QuadExpr,
}

/// `0 <= h ⊥ x[k] >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub tag: String,
    pub label: String,
    pub h: QuadExpr,
    pub k: usize,
}

/// Second-order cone complementarity between `(bound, comps)` and the
/// dual variables `duals`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicPair {
    pub tag: String,
    pub label: String,
    pub bound: f64,
    pub comps: [QuadExpr; 2],
    pub duals: [usize; 3],
}

/// A follower KKT block placed inside an MPEC.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedBlock {
    pub block: KktBlock,
    /// MPEC variable of every non-parameter slot.
    pub slot_var: Vec<Option<usize>>,
    /// Expression (over MPEC variables) replacing each block parameter.
    pub param_image: Vec<QuadExpr>,
}

impl EmbeddedBlock {
    fn image(&self, slot: usize) -> QuadExpr {
        match self.slot_var[slot] {
            Some(v) => QuadExpr::var(v),
            None => self.param_image[slot - self.block.param_offset].clone(),
        }
    }

    /// Rewrite an affine slot-space expression over MPEC variables.
    pub fn map(&self, e: &QuadExpr) -> QuadExpr {
        assert!(e.is_affine(), "block expressions are affine");
        let mut out = QuadExpr::constant(e.constant);
        for &(s, c) in &e.linear {
            out.add_scaled(&self.image(s), c);
        }
        out.canonical()
    }

    pub fn var(&self, slot: usize) -> usize {
        self.slot_var[slot].expect("slot is a variable")
    }

    /// Values of every slot at MPEC point `x`.
    pub fn point(&self, x: &[f64]) -> Vec<f64> {
        (0..self.block.num_slots()).map(|s| self.image(s).eval(x)).collect()
    }

    /// Follower solution and parameter values read off MPEC point `x`.
    pub fn program_solution(&self, prog: &crate::program::ConvexProgram, x: &[f64]) -> (ProgramSolution, Vec<f64>) {
        let pt = self.point(x);
        let b = &self.block;
        let params = pt[b.param_offset..].to_vec();
        let primal = pt[..b.num_primal].to_vec();
        let duals = pt[b.dual_offset..b.cone_offset].to_vec();
        let cone_duals = pt[b.cone_offset..b.param_offset]
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect::<Vec<_>>();
        let sol = ProgramSolution {
            objective: prog.objective(&primal, &params),
            dual_objective: prog.dual_objective(&params, &duals, &cone_duals),
            x: primal,
            duals,
            cone_duals,
            iterations: 0,
            log: String::new(),
        };
        (sol, params)
    }

    pub fn residual(&self, x: &[f64]) -> ResidualReport {
        self.block.residual(&self.point(x)).expect("every slot is assigned")
    }
}

/// Leader decision variables, indexed `[unit][hour position]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LeaderIndex {
    pub hours: Vec<usize>,
    pub offer_t: Vec<Vec<Option<usize>>>,
    pub offer_d: Vec<Vec<Option<usize>>>,
    /// Revenue-bound auxiliaries of the risk-aware first phase.
    pub aux: Vec<Vec<Option<usize>>>,
    /// Wholesale quantities fixed by an earlier phase.
    pub fixed_t: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpecKind {
    Joint,
    JointRegulated,
    Phase1,
    Phase2,
}

/// What pays for distribution-side offers in the first sequential phase.
#[derive(Debug, Clone, Copy)]
pub enum Phase1Revenue<'a> {
    Risk(&'a RiskSpec),
    Tariff(&'a TariffSchedule),
}

/// Single-level program: maximize `objective` subject to bounds,
/// equalities, inequalities (`>= 0`) and complementarity pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mpec {
    pub kind: MpecKind,
    pub labels: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: QuadExpr,
    pub equalities: Vec<Cond>,
    pub inequalities: Vec<Cond>,
    pub pairs: Vec<Pair>,
    pub conic: Vec<ConicPair>,
    pub leader: LeaderIndex,
    pub wm: Option<(WholesaleProgram, EmbeddedBlock)>,
    pub dm: Option<(DistributionProgram, EmbeddedBlock)>,
    /// System and demand of a joint game, used to restore follower
    /// equilibria for given offers.
    pub coupling: Option<Box<(CoupledSystem, SystemDemand)>>,
}

/// Shared inputs of every MPEC build.
#[derive(Debug, Clone, Copy)]
pub struct MpecInput<'a> {
    pub sys: &'a CoupledSystem,
    pub demand: &'a SystemDemand,
    pub hours: &'a [usize],
    pub cone: ConeMode,
    /// Allow exact cone complementarity inside the MPEC.
    pub experimental_conic: bool,
}

impl<'a> MpecInput<'a> {
    pub fn new(sys: &'a CoupledSystem, demand: &'a SystemDemand, hours: &'a [usize], sides: usize) -> Self {
        MpecInput {
            sys,
            demand,
            hours,
            cone: ConeMode::Polyhedral(sides),
            experimental_conic: false,
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.cone == ConeMode::Exact && !self.experimental_conic {
            return Err(ModelError::invariant(
                "exact cone complementarity inside the MPEC is experimental; enable it explicitly",
            ));
        }
        if self.hours.is_empty() {
            return Err(ModelError::invariant("MPEC needs at least one hour"));
        }
        if let Some(&t) = self.hours.iter().find(|&&t| t >= self.demand.hours()) {
            return Err(ModelError::invariant(format!("hour {t} beyond demand horizon")));
        }
        Ok(())
    }

    fn nunits(&self) -> usize {
        self.sys.units().len()
    }

    fn table(&self, v: f64, n: usize) -> Vec<Vec<f64>> {
        vec![vec![v; self.demand.hours()]; n]
    }
}

impl Mpec {
    fn new(kind: MpecKind, hours: &[usize], units: usize) -> Self {
        let none = vec![vec![None; hours.len()]; units];
        Mpec {
            kind,
            labels: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            objective: QuadExpr::default(),
            equalities: Vec::new(),
            inequalities: Vec::new(),
            pairs: Vec::new(),
            conic: Vec::new(),
            leader: LeaderIndex {
                hours: hours.to_vec(),
                offer_t: none.clone(),
                offer_d: none.clone(),
                aux: none,
                fixed_t: Vec::new(),
            },
            wm: None,
            dm: None,
            coupling: None,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.labels.len()
    }

    fn add_var(&mut self, label: String, lo: f64, hi: f64) -> usize {
        self.labels.push(label);
        self.lower.push(lo);
        self.upper.push(hi);
        self.labels.len() - 1
    }

    fn allocate(&mut self, block: KktBlock) -> EmbeddedBlock {
        let mut slot_var = Vec::with_capacity(block.num_slots());
        for slot in &block.slots {
            let v = match slot.kind {
                SlotKind::Param => None,
                SlotKind::NonnegDual => Some(self.add_var(slot.label.clone(), 0.0, f64::INFINITY)),
                SlotKind::Primal | SlotKind::FreeDual => {
                    Some(self.add_var(slot.label.clone(), f64::NEG_INFINITY, f64::INFINITY))
                }
            };
            slot_var.push(v);
        }
        let np = block.slots.len() - block.param_offset;
        EmbeddedBlock {
            block,
            slot_var,
            param_image: vec![QuadExpr::default(); np],
        }
    }

    fn emit(&mut self, eb: &EmbeddedBlock) {
        let b = &eb.block;
        for row in b.stationarity.iter().chain(&b.equalities) {
            self.equalities.push(Cond {
                tag: row.tag.clone(),
                label: row.label.clone(),
                expr: eb.map(&row.expr),
            });
        }
        for p in &b.pairs {
            self.pairs.push(Pair {
                tag: p.tag.clone(),
                label: p.label.clone(),
                h: eb.map(&p.h),
                k: eb.var(p.k),
            });
        }
        for c in &b.cone_pairs {
            self.conic.push(ConicPair {
                tag: c.tag.clone(),
                label: c.label.clone(),
                bound: c.bound,
                comps: [eb.map(&c.comps[0]), eb.map(&c.comps[1])],
                duals: c.duals.map(|d| eb.var(d)),
            });
        }
    }

    /// Leader offer variables and the capacity coupling for every unit and hour.
    fn add_offers(&mut self, sys: &CoupledSystem, to_wm: bool, to_dm: bool) {
        let hours = self.leader.hours.clone();
        for (r, u) in sys.units().iter().enumerate() {
            for (pos, &t) in hours.iter().enumerate() {
                if to_wm {
                    self.leader.offer_t[r][pos] = Some(self.add_var(format!("gTo[{},h{t}]", u.name), 0.0, u.g_max));
                }
                if to_dm {
                    self.leader.offer_d[r][pos] = Some(self.add_var(format!("gDo[{},h{t}]", u.name), 0.0, u.g_max));
                }
                let mut total = QuadExpr::default();
                if let Some(v) = self.leader.offer_t[r][pos] {
                    total.add_term(v, 1.0);
                }
                if let Some(v) = self.leader.offer_d[r][pos] {
                    total.add_term(v, 1.0);
                }
                if let Some(f) = self.leader.fixed_t.get(r).map(|row| row[pos]) {
                    total.add_constant(f);
                }
                let mut lo = total.clone();
                lo.add_constant(-u.g_min);
                self.inequalities.push(Cond {
                    tag: TAG_CAPACITY_MIN.into(),
                    label: format!("{} h{t}", u.name),
                    expr: lo,
                });
                let mut hi = total.scaled(-1.0);
                hi.add_constant(u.g_max);
                self.inequalities.push(Cond {
                    tag: TAG_CAPACITY_MAX.into(),
                    label: format!("{} h{t}", u.name),
                    expr: hi,
                });
            }
        }
    }

    /// Add `(price - cost) * quantity` to the objective.
    fn add_profit(&mut self, price: QuadExpr, cost: f64, qty: usize) {
        let mut margin = price;
        margin.add_constant(-cost);
        let term = QuadExpr::mul_affine(&margin, &QuadExpr::var(qty));
        self.objective.add_scaled(&term, 1.0);
    }

    /// Wholesale price at the bus of unit `r`, as an MPEC expression.
    pub fn lmp_expr(&self, r: usize, pos: usize) -> QuadExpr {
        let (prog, eb) = self.wm.as_ref().expect("wholesale block");
        let row = prog.hours[pos].balance[prog.unit_bus[r]];
        QuadExpr::var(eb.var(eb.block.row_dual(row)))
    }

    /// Distribution price at the bus of unit `r`, as an MPEC expression.
    pub fn dlmp_expr(&self, r: usize, pos: usize) -> QuadExpr {
        let (prog, eb) = self.dm.as_ref().expect("distribution block");
        let row = prog.hours[pos].balance_p[prog.unit_bus[r]];
        QuadExpr::var(eb.var(eb.block.row_dual(row)))
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Largest violation of bounds, equalities and leader inequalities.
    pub fn feasibility(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for i in 0..x.len() {
            v = v.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        for c in &self.equalities {
            v = v.max(c.expr.eval(x).abs());
        }
        for c in &self.inequalities {
            v = v.max(-c.expr.eval(x));
        }
        for p in &self.pairs {
            v = v.max(-p.h.eval(x));
        }
        v
    }

    /// `max |min(h, k)|` over scalar pairs and `|<., .>|` over conic pairs.
    pub fn complementarity(&self, x: &[f64]) -> f64 {
        let mut m: f64 = 0.0;
        for p in &self.pairs {
            m = m.max(p.h.eval(x).min(x[p.k]).abs());
        }
        for c in &self.conic {
            let inner = x[c.duals[0]] * c.bound + x[c.duals[1]] * c.comps[0].eval(x) + x[c.duals[2]] * c.comps[1].eval(x);
            m = m.max(inner.abs());
        }
        m
    }

    /// Largest pair product `h * k`.
    pub fn max_product(&self, x: &[f64]) -> f64 {
        self.pairs.iter().fold(0.0, |m, p| m.max((p.h.eval(x) * x[p.k]).abs()))
    }

    pub fn count_bilinear_outside_pairs(&self) -> usize {
        let mut n = self.objective.quadratic.len();
        for c in self.equalities.iter().chain(&self.inequalities) {
            n += c.expr.quadratic.len();
        }
        n
    }

    /// Leader offers at point `x`, `[unit][hour position]`.
    pub fn offers(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let read = |tab: &Vec<Vec<Option<usize>>>| -> Vec<Vec<f64>> {
            tab.iter()
                .map(|row| row.iter().map(|v| v.map_or(0.0, |i| x[i])).collect())
                .collect()
        };
        (read(&self.leader.offer_t), read(&self.leader.offer_d))
    }

    pub fn wholesale_result(&self, x: &[f64]) -> Option<WholesaleResult> {
        self.wm.as_ref().map(|(prog, eb)| {
            let (sol, _) = eb.program_solution(&prog.program, x);
            WholesaleResult::from_solution(prog, sol)
        })
    }

    pub fn distribution_result(&self, x: &[f64]) -> Option<DistributionResult> {
        self.dm.as_ref().map(|(prog, eb)| {
            let (sol, _) = eb.program_solution(&prog.program, x);
            DistributionResult::from_solution(prog, sol)
        })
    }

    /// Residuals of every embedded follower KKT system at `x`.
    pub fn follower_residuals(&self, x: &[f64]) -> ResidualReport {
        let mut rep = ResidualReport::default();
        if let Some((_, eb)) = &self.wm {
            rep.merge(eb.residual(x));
        }
        if let Some((_, eb)) = &self.dm {
            rep.merge(eb.residual(x));
        }
        rep
    }

    /// MPEC point from follower solutions and leader values.
    pub fn assemble_point(
        &self,
        offer_t: &[Vec<f64>],
        offer_d: &[Vec<f64>],
        aux: &[Vec<f64>],
        wm: Option<&ProgramSolution>,
        dm: Option<&ProgramSolution>,
    ) -> Vec<f64> {
        let mut x = vec![0.0; self.num_vars()];
        let mut fill = |eb: &EmbeddedBlock, sol: &ProgramSolution| {
            let b = &eb.block;
            let mut vals: Vec<f64> = Vec::with_capacity(b.param_offset);
            vals.extend_from_slice(&sol.x);
            vals.extend_from_slice(&sol.duals);
            for c in &sol.cone_duals {
                vals.extend_from_slice(c);
            }
            for (s, v) in vals.into_iter().enumerate() {
                if let Some(i) = eb.slot_var[s] {
                    x[i] = v;
                }
            }
        };
        if let (Some((_, eb)), Some(sol)) = (&self.wm, wm) {
            fill(eb, sol);
        }
        if let (Some((_, eb)), Some(sol)) = (&self.dm, dm) {
            fill(eb, sol);
        }
        let leader = &self.leader;
        for r in 0..leader.offer_t.len() {
            for pos in 0..leader.hours.len() {
                if let Some(i) = leader.offer_t[r][pos] {
                    x[i] = offer_t[r][pos];
                }
                if let Some(i) = leader.offer_d[r][pos] {
                    x[i] = offer_d[r][pos];
                }
                if let Some(i) = leader.aux[r][pos] {
                    x[i] = aux[r][pos];
                }
            }
        }
        x
    }

    /// Exact follower equilibrium at the leader offers of `x`: the convex
    /// clearing(s) are solved for those offers and the revenue bounds are
    /// made tight. The result satisfies every pair exactly.
    pub fn restore(&self, x: &[f64], opts: &SolverOptions) -> Option<Vec<f64>> {
        let (ot, od) = self.offers(x);
        let nu = ot.len();
        let hours = &self.leader.hours;
        let mut aux = vec![vec![0.0; hours.len()]; nu];
        for r in 0..nu {
            for pos in 0..hours.len() {
                if let Some(z) = self.leader.aux[r][pos] {
                    let bound = self
                        .inequalities
                        .iter()
                        .find(|c| c.tag == TAG_REVENUE_BOUND && c.expr.linear.iter().any(|&(v, _)| v == z))
                        .expect("revenue bound of every auxiliary");
                    aux[r][pos] = x[z] + bound.expr.eval(x);
                }
            }
        }
        let point = match self.kind {
            MpecKind::Joint | MpecKind::JointRegulated => {
                let (sys, demand) = self.coupling.as_deref()?;
                let mode = self.dm.as_ref()?.0.mode;
                let widen = |tab: &[Vec<f64>]| -> Vec<Vec<f64>> {
                    tab.iter()
                        .map(|row| {
                            let mut full = vec![0.0; demand.hours()];
                            for (pos, &t) in hours.iter().enumerate() {
                                full[t] = row[pos];
                            }
                            full
                        })
                        .collect()
                };
                let res = clear_coupled(sys, demand, &widen(&ot), &widen(&od), hours, mode, opts).ok()?;
                self.assemble_point(&ot, &od, &aux, Some(&res.wm.solution), Some(&res.dm.solution))
            }
            MpecKind::Phase1 => {
                let mut p = self.wm.as_ref()?.0.clone();
                for r in 0..nu {
                    for pos in 0..hours.len() {
                        p.set_offer(r, pos, ot[r][pos]);
                    }
                }
                let res = crate::wholesale::clear_wholesale(&p, opts).ok()?;
                self.assemble_point(&ot, &od, &aux, Some(&res.solution), None)
            }
            MpecKind::Phase2 => {
                let mut p = self.dm.as_ref()?.0.clone();
                for r in 0..nu {
                    for pos in 0..hours.len() {
                        p.set_offer(r, pos, od[r][pos]);
                    }
                }
                let res = crate::distribution::clear_distribution(&p, opts).ok()?;
                self.assemble_point(&ot, &od, &aux, None, Some(&res.solution))
            }
        };
        Some(point)
    }

    /// Human-readable structure summary.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:?}: {} variables, {} equalities, {} inequalities, {} pairs, {} conic pairs",
            self.kind,
            self.num_vars(),
            self.equalities.len(),
            self.inequalities.len(),
            self.pairs.len(),
            self.conic.len()
        );
        s
    }
}

/// Joint game: the leader offers into both markets, which clear
/// simultaneously and are coupled through the interface flows. With a
/// tariff the distribution revenue is paid at the tariff instead of the
/// distribution price.
pub fn build_joint_mpec(input: MpecInput<'_>, tariff: Option<&TariffSchedule>) -> Result<Mpec, ModelError> {
    input.check()?;
    let sys = input.sys;
    let nu = input.nunits();
    let nl = sys.links.len();
    if let Some(tar) = tariff {
        if let Some(&t) = input.hours.iter().find(|&&t| t >= tar.price.len()) {
            return Err(ModelError::invariant(format!("tariff does not cover hour {t}")));
        }
    }
    let wm = build_dcopf(&sys.trans, &input.demand.wm, sys.units(), &sys.links, &input.table(0.0, nu), &input.table(0.0, nl), input.hours)?;
    let dm = build_lindistflow(
        &sys.dist,
        &input.demand.dm,
        sys.units(),
        &sys.links,
        &input.table(0.0, nu),
        &input.table(0.0, nl),
        input.hours,
        input.cone,
    )?;
    let kind = if tariff.is_some() {
        MpecKind::JointRegulated
    } else {
        MpecKind::Joint
    };
    let mut m = Mpec::new(kind, input.hours, nu);
    m.add_offers(sys, true, true);
    let mut wb = m.allocate(wm.kkt());
    let mut db = m.allocate(dm.kkt());
    for (pos, h) in wm.hours.iter().enumerate() {
        for r in 0..nu {
            wb.param_image[h.offer_param[r]] = QuadExpr::var(m.leader.offer_t[r][pos].expect("offer"));
        }
        for k in 0..nl {
            let link = db.var(dm.hours[pos].link[k]);
            wb.param_image[h.link_param[k]] = QuadExpr::var(link);
        }
    }
    for (pos, h) in dm.hours.iter().enumerate() {
        for r in 0..nu {
            db.param_image[h.offer_param[r]] = QuadExpr::var(m.leader.offer_d[r][pos].expect("offer"));
        }
        for k in 0..nl {
            let row = wm.hours[pos].balance[wm_link_bus(sys, k)];
            db.param_image[h.price_param[k]] = QuadExpr::var(wb.var(wb.block.row_dual(row)));
        }
    }
    m.emit(&wb);
    m.emit(&db);
    m.wm = Some((wm, wb));
    m.dm = Some((dm, db));
    m.coupling = Some(Box::new((sys.clone(), input.demand.clone())));
    for (r, u) in sys.units().iter().enumerate() {
        for (pos, &t) in input.hours.iter().enumerate() {
            let gt = m.leader.offer_t[r][pos].expect("offer");
            let gd = m.leader.offer_d[r][pos].expect("offer");
            let lmp = m.lmp_expr(r, pos);
            m.add_profit(lmp, u.cost, gt);
            let dm_price = match tariff {
                Some(tar) => QuadExpr::constant(tar.price[t]),
                None => m.dlmp_expr(r, pos),
            };
            m.add_profit(dm_price, u.cost, gd);
        }
    }
    Ok(m)
}

fn wm_link_bus(sys: &CoupledSystem, k: usize) -> usize {
    sys.trans.bus_index(sys.links[k].trans_bus).expect("validated link")
}

/// Distribution-side revenue per MWh of unit `r` in hour `t` in the first phase.
pub fn phase1_price(sys: &CoupledSystem, revenue: Phase1Revenue<'_>, r: usize, t: usize) -> Result<f64, ModelError> {
    match revenue {
        Phase1Revenue::Tariff(tar) => tar
            .price
            .get(t)
            .copied()
            .ok_or_else(|| ModelError::invariant(format!("tariff does not cover hour {t}"))),
        Phase1Revenue::Risk(spec) => {
            let u = &sys.units()[r];
            let b = sys.dist.bus_index(u.dist_bus).expect("validated unit");
            spec.adjusted_price(b, t).map_err(|_| {
                ModelError::invariant(format!(
                    "missing risk data for distribution bus {} (hosts unit {}) in hour {t}",
                    u.dist_bus, u.name
                ))
            })
        }
    }
}

/// First sequential phase: the leader splits capacity between the
/// wholesale market (through its KKT block, with the interface flows fixed
/// at `forecast_link[k][t]`) and a distribution revenue proxy bounded by
/// the risk-adjusted or tariff price.
pub fn build_sequential_phase1(
    input: MpecInput<'_>,
    revenue: Phase1Revenue<'_>,
    forecast_link: &[Vec<f64>],
) -> Result<Mpec, ModelError> {
    input.check()?;
    if let Phase1Revenue::Risk(spec) = revenue {
        spec.validate()?;
    }
    let sys = input.sys;
    let nu = input.nunits();
    if forecast_link.len() != sys.links.len() {
        return Err(ModelError::invariant("forecast needs one row per interface link"));
    }
    let wm = build_dcopf(&sys.trans, &input.demand.wm, sys.units(), &sys.links, &input.table(0.0, nu), forecast_link, input.hours)?;
    let mut m = Mpec::new(MpecKind::Phase1, input.hours, nu);
    m.add_offers(sys, true, true);
    let mut wb = m.allocate(wm.kkt());
    for (pos, h) in wm.hours.iter().enumerate() {
        for r in 0..nu {
            wb.param_image[h.offer_param[r]] = QuadExpr::var(m.leader.offer_t[r][pos].expect("offer"));
        }
        for (k, &p) in h.link_param.iter().enumerate() {
            wb.param_image[p] = QuadExpr::constant(forecast_link[k][h.hour]);
        }
    }
    m.emit(&wb);
    m.wm = Some((wm, wb));
    for (r, u) in sys.units().iter().enumerate() {
        for (pos, &t) in input.hours.iter().enumerate() {
            let price = phase1_price(sys, revenue, r, t)?;
            let gt = m.leader.offer_t[r][pos].expect("offer");
            let gd = m.leader.offer_d[r][pos].expect("offer");
            let z = m.add_var(format!("z[{},h{t}]", u.name), f64::NEG_INFINITY, f64::INFINITY);
            m.leader.aux[r][pos] = Some(z);
            // z <= price * gDo
            let mut bound = QuadExpr::term(gd, price);
            bound.add_term(z, -1.0);
            m.inequalities.push(Cond {
                tag: TAG_REVENUE_BOUND.into(),
                label: format!("{} h{t}", u.name),
                expr: bound,
            });
            let lmp = m.lmp_expr(r, pos);
            m.add_profit(lmp, u.cost, gt);
            m.objective.add_term(z, 1.0).add_term(gd, -u.cost);
        }
    }
    Ok(m)
}

/// Second sequential phase: with the wholesale quantities `g_t_star[r][t]`
/// and interface prices `lambda_t_star[k][t]` fixed, the leader offers the
/// remaining capacity into the distribution market.
pub fn build_sequential_phase2(
    input: MpecInput<'_>,
    g_t_star: &[Vec<f64>],
    lambda_t_star: &[Vec<f64>],
    tariff: Option<&TariffSchedule>,
) -> Result<Mpec, ModelError> {
    input.check()?;
    let sys = input.sys;
    let nu = input.nunits();
    let nl = sys.links.len();
    let bound = |tab: &[Vec<f64>], n: usize, what: &str| -> Result<(), ModelError> {
        if tab.len() != n || input.hours.iter().any(|&t| tab.iter().any(|row| row.get(t).map_or(true, |v| !v.is_finite()))) {
            return Err(ModelError::invariant(format!("unbound parameter: {what} missing for some unit or hour")));
        }
        Ok(())
    };
    bound(g_t_star, nu, "fixed wholesale quantity")?;
    bound(lambda_t_star, nl, "fixed interface price")?;
    let dm = build_lindistflow(&sys.dist, &input.demand.dm, sys.units(), &sys.links, &input.table(0.0, nu), lambda_t_star, input.hours, input.cone)?;
    let mut m = Mpec::new(MpecKind::Phase2, input.hours, nu);
    m.leader.fixed_t = g_t_star
        .iter()
        .map(|row| input.hours.iter().map(|&t| row[t]).collect())
        .collect();
    m.add_offers(sys, false, true);
    let mut db = m.allocate(dm.kkt());
    for (pos, h) in dm.hours.iter().enumerate() {
        for r in 0..nu {
            db.param_image[h.offer_param[r]] = QuadExpr::var(m.leader.offer_d[r][pos].expect("offer"));
        }
        for (k, &p) in h.price_param.iter().enumerate() {
            db.param_image[p] = QuadExpr::constant(lambda_t_star[k][h.hour]);
        }
    }
    m.emit(&db);
    m.dm = Some((dm, db));
    for (r, u) in sys.units().iter().enumerate() {
        for (pos, &t) in input.hours.iter().enumerate() {
            let gd = m.leader.offer_d[r][pos].expect("offer");
            let price = match tariff {
                Some(tar) => QuadExpr::constant(*tar.price.get(t).ok_or_else(|| ModelError::invariant(format!("tariff does not cover hour {t}")))?),
                None => m.dlmp_expr(r, pos),
            };
            m.add_profit(price, u.cost, gd);
        }
    }
    Ok(m)
}

/// Prices that pay the producer's offers, all indexed `[unit][hour]`.
#[derive(Debug, Clone, Copy)]
pub enum LeaderPricing<'a> {
    /// Market prices in both markets.
    Deterministic { lmp: &'a [Vec<f64>], dlmp: &'a [Vec<f64>] },
    /// Distribution offers paid at a regulated tariff.
    Tariff { lmp: &'a [Vec<f64>], tariff: &'a TariffSchedule },
    /// Distribution revenue replaced by the risk-adjusted bound `z`; with
    /// `aux = None` every bound is taken as tight.
    Risk {
        lmp: &'a [Vec<f64>],
        spec: &'a RiskSpec,
        aux: Option<&'a [Vec<f64>]>,
    },
}

/// Producer profit over `hours` for given offers, `[unit][hour]`.
pub fn leader_objective(
    sys: &CoupledSystem,
    pricing: LeaderPricing<'_>,
    offer_t: &[Vec<f64>],
    offer_d: &[Vec<f64>],
    hours: &[usize],
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (r, u) in sys.units().iter().enumerate() {
        for &t in hours {
            let (gt, gd) = (offer_t[r][t], offer_d[r][t]);
            if gt < -1e-9 || gd < -1e-9 || gt + gd > u.g_max + 1e-9 || gt + gd < u.g_min - 1e-9 {
                return Err(ModelError::invariant(format!(
                    "offers of unit {} in hour {t} violate its production limits",
                    u.name
                )));
            }
            let dist = match pricing {
                LeaderPricing::Deterministic { lmp, dlmp } => {
                    total += (lmp[r][t] - u.cost) * gt;
                    dlmp[r][t] * gd
                }
                LeaderPricing::Tariff { lmp, tariff } => {
                    total += (lmp[r][t] - u.cost) * gt;
                    *tariff
                        .price
                        .get(t)
                        .ok_or_else(|| ModelError::invariant(format!("tariff does not cover hour {t}")))?
                        * gd
                }
                LeaderPricing::Risk { lmp, spec, aux } => {
                    total += (lmp[r][t] - u.cost) * gt;
                    let price = phase1_price(sys, Phase1Revenue::Risk(spec), r, t)?;
                    match aux {
                        Some(z) if z[r][t] > price * gd + 1e-9 => {
                            return Err(ModelError::invariant(format!(
                                "revenue bound of unit {} in hour {t} exceeds its risk-adjusted value",
                                u.name
                            )))
                        }
                        Some(z) => z[r][t],
                        None => price * gd,
                    }
                }
            };
            total += dist - u.cost * gd;
        }
    }
    Ok(total)
}

/// Geometric relaxation schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub rho0: f64,
    pub factor: f64,
    pub rho_min: f64,
    pub max_outer: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            rho0: 1.0,
            factor: 0.1,
            rho_min: 1e-8,
            max_outer: 12,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.rho0 > self.rho_min && self.rho_min > 0.0) {
            return Err(ModelError::invariant("need rho0 > rho_min > 0"));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(ModelError::invariant("shrink factor must be in (0, 1)"));
        }
        if self.max_outer == 0 {
            return Err(ModelError::invariant("need at least one outer iteration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationarityClass {
    /// No bi-active pairs.
    Strong,
    CStationary,
    Weaker,
    Failed,
}

impl StationarityClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            StationarityClass::Strong => "strong",
            StationarityClass::CStationary => "c-stationary",
            StationarityClass::Weaker => "weaker",
            StationarityClass::Failed => "failed",
        }
    }

    pub fn converged(&self) -> bool {
        !matches!(self, StationarityClass::Failed)
    }
}

/// Values and MPEC multipliers of one complementarity pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMultipliers {
    pub h: f64,
    pub k: f64,
    pub nu_h: f64,
    pub nu_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub outer: usize,
    pub rho: f64,
    pub objective: f64,
    pub complementarity: f64,
    pub inner_iterations: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpecSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub rho: f64,
    pub class: StationarityClass,
    pub complementarity: f64,
    pub feasibility: f64,
    pub multipliers: Vec<PairMultipliers>,
    pub trace: Vec<TraceRow>,
    /// Whether the point came from the active-set polish.
    pub polished: bool,
    pub start: String,
    pub nlp_log: String,
}

/// Bi-active tolerance for the stationarity test.
pub const BIACTIVE_TOL: f64 = DEGENERACY_TOL;

/// Classify by the C-stationarity sign test on bi-active pairs. The
/// product of the two multipliers must be at least `-tol` relative to their
/// magnitudes, so a multiplier at solver-noise level counts as zero.
pub fn classify(multipliers: &[PairMultipliers], tol: f64) -> StationarityClass {
    let mut biactive = false;
    for m in multipliers {
        if m.h.abs() <= BIACTIVE_TOL && m.k.abs() <= BIACTIVE_TOL {
            biactive = true;
            let scale = m.nu_h.abs().max(1.0) * m.nu_k.abs().max(1.0);
            if m.nu_h * m.nu_k < -tol * scale {
                return StationarityClass::Weaker;
            }
        }
    }
    if biactive {
        StationarityClass::CStationary
    } else {
        StationarityClass::Strong
    }
}

/// Recheck the classification of a solution from its stored multipliers.
pub fn stationarity_check(mpec: &Mpec, sol: &MpecSolution) -> Result<StationarityClass, ModelError> {
    if sol.multipliers.len() != mpec.pairs.len() {
        return Err(ModelError::invariant("solution carries no multipliers for some pairs"));
    }
    if !sol.class.converged() {
        return Ok(StationarityClass::Failed);
    }
    Ok(classify(&sol.multipliers, 1e-6))
}

fn base_nlp(mpec: &Mpec) -> SmoothNlp {
    let mut nlp = SmoothNlp::new(mpec.num_vars());
    nlp.lower = mpec.lower.clone();
    nlp.upper = mpec.upper.clone();
    nlp.objective = mpec.objective.scaled(-1.0);
    for c in &mpec.equalities {
        nlp.add_equality(c.expr.clone());
    }
    for c in &mpec.inequalities {
        nlp.add_inequality(c.expr.clone());
    }
    nlp
}

/// Relaxed program: `h >= 0`, `k >= 0`, `rho - h k >= 0`.
fn relaxed_nlp(mpec: &Mpec, rho: f64) -> SmoothNlp {
    let mut nlp = base_nlp(mpec);
    for p in &mpec.pairs {
        nlp.add_inequality(p.h.clone());
    }
    for p in &mpec.pairs {
        let mut e = QuadExpr::mul_affine(&p.h, &QuadExpr::var(p.k)).scaled(-1.0);
        e.add_constant(rho);
        nlp.add_inequality(e);
    }
    for c in &mpec.conic {
        nlp.add_cone(ConeRow {
            bound: QuadExpr::constant(c.bound),
            components: c.comps.to_vec(),
        });
        nlp.add_cone(ConeRow {
            bound: QuadExpr::var(c.duals[0]),
            components: vec![QuadExpr::var(c.duals[1]), QuadExpr::var(c.duals[2])],
        });
        let mut inner = QuadExpr::term(c.duals[0], c.bound);
        inner.add_scaled(&QuadExpr::mul_affine(&QuadExpr::var(c.duals[1]), &c.comps[0]), 1.0);
        inner.add_scaled(&QuadExpr::mul_affine(&QuadExpr::var(c.duals[2]), &c.comps[1]), 1.0);
        let mut e = inner.scaled(-1.0);
        e.add_constant(rho);
        nlp.add_inequality(e);
    }
    nlp
}

/// Which side of each pair the polish sets to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    H,
    K,
    Both,
}

/// Pairs whose smaller side is at least this fraction of the larger one
/// have no clear active side at a relaxed iterate.
const AMBIGUOUS_RATIO: f64 = 1e-2;

fn side_of(h: f64, k: f64) -> Side {
    let (h, k) = (h.max(0.0), k.max(0.0));
    if h <= BIACTIVE_TOL && k <= BIACTIVE_TOL {
        Side::Both
    } else if h <= k {
        Side::H
    } else {
        Side::K
    }
}

/// Active side of every pair at `x`. Ambiguous pairs take their side from
/// `reference`, an exactly complementary point, when one is given.
fn choose_sides(mpec: &Mpec, x: &[f64], reference: Option<&[f64]>) -> Vec<Side> {
    mpec.pairs
        .iter()
        .map(|p| {
            let (h, k) = (p.h.eval(x).max(0.0), x[p.k].max(0.0));
            match reference {
                Some(xr) if h.min(k) > AMBIGUOUS_RATIO * h.max(k) && h.min(k) > BIACTIVE_TOL => {
                    side_of(p.h.eval(xr), xr[p.k])
                }
                _ => side_of(h, k),
            }
        })
        .collect()
}

/// Solve the smooth program obtained by fixing one side of every pair.
fn polish(mpec: &Mpec, x: &[f64], sides: &[Side], opts: &SolverOptions) -> Option<(Vec<f64>, Vec<PairMultipliers>, usize, String)> {
    if !mpec.conic.is_empty() {
        return None;
    }
    let mut nlp = base_nlp(mpec);
    let mut h_row = Vec::with_capacity(sides.len());
    for (p, side) in mpec.pairs.iter().zip(sides) {
        match side {
            Side::H | Side::Both => {
                h_row.push((true, nlp.add_equality(p.h.clone())));
            }
            Side::K => {
                h_row.push((false, nlp.add_inequality(p.h.clone())));
            }
        }
        if matches!(side, Side::K | Side::Both) {
            nlp.lower[p.k] = 0.0;
            nlp.upper[p.k] = 0.0;
        }
    }
    let mut start = x.to_vec();
    for (p, side) in mpec.pairs.iter().zip(sides) {
        if matches!(side, Side::K | Side::Both) {
            start[p.k] = 0.0;
        }
    }
    let sol = tdm_nlp::solve(&nlp, &StartPoint::primal(start), opts);
    if !sol.status.is_success() {
        debug!("polish failed: {}", sol.status.as_str());
        return None;
    }
    let mults = mpec
        .pairs
        .iter()
        .zip(&h_row)
        .map(|(p, &(is_eq, row))| PairMultipliers {
            h: p.h.eval(&sol.x),
            k: sol.x[p.k],
            nu_h: if is_eq { sol.eq_multipliers[row] } else { sol.ineq_multipliers[row] },
            nu_k: sol.lower_multipliers[p.k] - sol.upper_multipliers[p.k],
        })
        .collect();
    Some((sol.x.clone(), mults, sol.iterations, sol.log_text()))
}

/// Polish `x`; if the active set read off `x` is infeasible, polish the
/// restored follower equilibrium at the offers of `x` instead.
fn polish_or_restore(mpec: &Mpec, x: &[f64], opts: &SolverOptions) -> Option<(Vec<f64>, Vec<PairMultipliers>, usize, String)> {
    if !mpec.conic.is_empty() {
        return None;
    }
    let restored = mpec.restore(x, opts);
    let sides = choose_sides(mpec, x, restored.as_deref());
    if let Some(p) = polish(mpec, x, &sides, opts) {
        return Some(p);
    }
    let xr = restored?;
    debug!("polishing the restored equilibrium");
    polish(mpec, &xr, &choose_sides(mpec, &xr, None), opts)
}

fn polished_solution(
    mpec: &Mpec,
    (px, mults, iters, _): (Vec<f64>, Vec<PairMultipliers>, usize, String),
    outer: usize,
    rho: f64,
    trace: &[TraceRow],
    log: &str,
) -> MpecSolution {
    let objective = mpec.objective_value(&px);
    let complementarity = mpec.complementarity(&px);
    let mut trace = trace.to_vec();
    trace.push(TraceRow {
        outer,
        rho: 0.0,
        objective,
        complementarity,
        inner_iterations: iters,
        status: "polished".into(),
    });
    MpecSolution {
        objective,
        complementarity,
        feasibility: mpec.feasibility(&px),
        class: classify(&mults, 1e-6),
        x: px,
        rho,
        multipliers: mults,
        trace,
        polished: true,
        start: String::new(),
        nlp_log: log.to_string(),
    }
}

/// Scholtes relaxation loop from `init`, with an active-set polish after
/// every outer iteration. The loop stops once a polished point is at least
/// as good as the relaxed one, or when `rho` reaches its floor; it then
/// returns the latest polished point if there is one.
pub fn scholtes_solve(mpec: &Mpec, schedule: &Schedule, init: &[f64], opts: &SolverOptions) -> MpecSolution {
    let mut x: Vec<f64> = init
        .iter()
        .enumerate()
        .map(|(i, v)| v.clamp(mpec.lower[i], mpec.upper[i]))
        .collect();
    let mut rho = schedule.rho0;
    let mut trace = Vec::new();
    let mut log = String::new();
    let mut last_mults: Vec<PairMultipliers> = Vec::new();
    let mut have_iterate = false;
    let mut fallback: Option<MpecSolution> = None;
    for outer in 1..=schedule.max_outer {
        let nlp = relaxed_nlp(mpec, rho);
        let sol = tdm_nlp::solve(&nlp, &StartPoint::primal(x.clone()), opts);
        let _ = writeln!(log, "# outer {outer} rho {rho:e}\n{}", sol.log_text());
        trace.push(TraceRow {
            outer,
            rho,
            objective: mpec.objective_value(&sol.x),
            complementarity: mpec.complementarity(&sol.x),
            inner_iterations: sol.iterations,
            status: sol.status.as_str().to_string(),
        });
        if !sol.status.is_success() {
            if fallback.is_none() && !have_iterate {
                // the start itself may still polish
                if let Some(p) = polish_or_restore(mpec, &x, opts) {
                    let _ = writeln!(log, "# polish of the start\n{}", p.3);
                    fallback = Some(polished_solution(mpec, p, outer, rho, &trace, &log));
                }
            }
            break;
        }
        have_iterate = true;
        x = sol.x.clone();
        let np = mpec.pairs.len();
        let n_base = mpec.inequalities.len();
        last_mults = mpec
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let w = sol.ineq_multipliers[n_base + np + i];
                let h = p.h.eval(&x);
                let k = x[p.k];
                PairMultipliers {
                    h,
                    k,
                    nu_h: sol.ineq_multipliers[n_base + i] - w * k,
                    nu_k: sol.lower_multipliers[p.k] - w * h,
                }
            })
            .collect();
        let relaxed_obj = mpec.objective_value(&x);
        let last = rho <= schedule.rho_min * (1.0 + 1e-12) || outer == schedule.max_outer;
        if let Some(p) = polish_or_restore(mpec, &x, opts) {
            let _ = writeln!(log, "# polish after outer {outer}\n{}", p.3);
            let cand = polished_solution(mpec, p, outer, rho, &trace, &log);
            if cand.objective >= relaxed_obj - 1e-6 * (1.0 + relaxed_obj.abs()) || last {
                return cand;
            }
            fallback = Some(cand);
        }
        if last {
            break;
        }
        rho = (rho * schedule.factor).max(schedule.rho_min);
    }
    if let Some(mut f) = fallback {
        f.trace = trace.clone();
        f.trace.push(TraceRow {
            outer: trace.last().map_or(0, |t| t.outer),
            rho: 0.0,
            objective: f.objective,
            complementarity: f.complementarity,
            inner_iterations: 0,
            status: "polished".into(),
        });
        f.nlp_log = log;
        return f;
    }
    let compl = mpec.complementarity(&x);
    let class = if have_iterate && compl <= 1e-6 {
        classify(&last_mults, 1e-6)
    } else {
        StationarityClass::Failed
    };
    MpecSolution {
        objective: mpec.objective_value(&x),
        complementarity: compl,
        feasibility: mpec.feasibility(&x),
        x,
        rho,
        class,
        multipliers: last_mults,
        trace,
        polished: false,
        start: String::new(),
        nlp_log: log,
    }
}

/// A labelled starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct Start {
    pub label: String,
    pub x: Vec<f64>,
}

/// Run the relaxation loop from every start and also polish each start
/// directly; return the best converged candidate (first one on ties).
pub fn solve_multistart(mpec: &Mpec, schedule: &Schedule, starts: &[Start], opts: &SolverOptions) -> MpecSolution {
    let mut best: Option<MpecSolution> = None;
    let consider = |cand: MpecSolution, best: &mut Option<MpecSolution>| {
        info!(
            "start {}: objective {:.6} class {} complementarity {:.2e}",
            cand.start,
            cand.objective,
            cand.class.as_str(),
            cand.complementarity
        );
        let better = match best {
            None => true,
            Some(b) => {
                (!b.class.converged() && cand.class.converged())
                    || (cand.class.converged() == b.class.converged()
                        && cand.objective > b.objective + 1e-7 * (1.0 + b.objective.abs()))
            }
        };
        if better {
            *best = Some(cand);
        }
    };
    for s in starts {
        let mut sol = scholtes_solve(mpec, schedule, &s.x, opts);
        sol.start = s.label.clone();
        consider(sol, &mut best);
        if let Some((px, mults, iters, plog)) = polish_or_restore(mpec, &s.x, opts) {
            let obj = mpec.objective_value(&px);
            let cand = MpecSolution {
                objective: obj,
                complementarity: mpec.complementarity(&px),
                feasibility: mpec.feasibility(&px),
                class: classify(&mults, 1e-6),
                x: px,
                rho: 0.0,
                multipliers: mults,
                trace: vec![TraceRow {
                    outer: 0,
                    rho: 0.0,
                    objective: obj,
                    complementarity: 0.0,
                    inner_iterations: iters,
                    status: "polished".into(),
                }],
                polished: true,
                start: format!("{} (direct polish)", s.label),
                nlp_log: plog,
            };
            consider(cand, &mut best);
        }
    }
    best.expect("at least one start")
}

/// Starting points from convex clearings at the price-taker splits: every
/// unit offers its whole capacity to the wholesale market, or to the
/// distribution market. For the first phase the revenue auxiliaries are set
/// at their bounds; for the second phase only the distribution split applies.
pub fn price_taker_starts(
    mpec: &Mpec,
    input: MpecInput<'_>,
    revenue: Option<Phase1Revenue<'_>>,
    lambda_t_star: Option<&[Vec<f64>]>,
    opts: &SolverOptions,
) -> Result<Vec<Start>, SolveError> {
    let sys = input.sys;
    let nu = sys.units().len();
    let hours = &mpec.leader.hours;
    let cap: Vec<Vec<f64>> = sys.units().iter().map(|u| vec![u.g_max; input.demand.hours()]).collect();
    let zero = vec![vec![0.0; input.demand.hours()]; nu];
    let per_pos = |tab: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        tab.iter().map(|row| hours.iter().map(|&t| row[t]).collect()).collect()
    };
    // distribution demand the interface links cannot carry, shared by capacity
    let link_cap: f64 = sys.links.iter().map(|l| l.f_max).sum();
    let total_cap: f64 = sys.units().iter().map(|u| u.g_max).sum();
    let residual: Vec<Vec<f64>> = sys
        .units()
        .iter()
        .map(|u| {
            (0..input.demand.hours())
                .map(|t| {
                    let short = (input.demand.dm.total(t) - link_cap).max(0.0);
                    if total_cap > 0.0 {
                        (short * u.g_max / total_cap).min(u.g_max)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let interior = |tab: &Vec<Vec<f64>>, top: &dyn Fn(usize, usize) -> f64| {
        hours.iter().any(|&t| (0..nu).any(|r| tab[r][t] > 1e-9 && tab[r][t] < top(r, t) - 1e-9))
    };
    let mut starts = Vec::new();
    match mpec.kind {
        MpecKind::Joint | MpecKind::JointRegulated => {
            let rest: Vec<Vec<f64>> = cap.iter().zip(&residual).map(|(c, d)| c.iter().zip(d).map(|(c, d)| c - d).collect()).collect();
            let mut splits = vec![("all-wholesale", &cap, &zero), ("all-distribution", &zero, &cap)];
            if interior(&residual, &|r, t| cap[r][t]) {
                splits.push(("residual-demand", &rest, &residual));
            }
            for (label, ot, od) in splits {
                let res = clear_coupled(sys, input.demand, ot, od, hours, input.cone, opts)?;
                let x = mpec.assemble_point(&per_pos(ot), &per_pos(od), &[], Some(&res.wm.solution), Some(&res.dm.solution));
                starts.push(Start {
                    label: label.into(),
                    x,
                });
            }
        }
        MpecKind::Phase1 => {
            let (prog, _) = mpec.wm.as_ref().expect("wholesale block");
            for (label, ot, od) in [("all-wholesale", &cap, &zero), ("all-distribution", &zero, &cap)] {
                let mut p = prog.clone();
                for (pos, _) in hours.iter().enumerate() {
                    for r in 0..nu {
                        p.set_offer(r, pos, per_pos(ot)[r][pos]);
                    }
                }
                let res = crate::wholesale::clear_wholesale(&p, opts)?;
                let od_pos = per_pos(od);
                let mut aux = vec![vec![0.0; hours.len()]; nu];
                if let Some(rev) = revenue {
                    for r in 0..nu {
                        for (pos, &t) in hours.iter().enumerate() {
                            aux[r][pos] = phase1_price(sys, rev, r, t)? * od_pos[r][pos];
                        }
                    }
                }
                let x = mpec.assemble_point(&per_pos(ot), &od_pos, &aux, Some(&res.solution), None);
                starts.push(Start {
                    label: label.into(),
                    x,
                });
            }
        }
        MpecKind::Phase2 => {
            let (prog, _) = mpec.dm.as_ref().expect("distribution block");
            let lam = lambda_t_star.expect("phase-2 starts need the interface prices");
            let remaining: Vec<Vec<f64>> = (0..nu)
                .map(|r| {
                    (0..hours.len())
                        .map(|pos| (sys.units()[r].g_max - mpec.leader.fixed_t[r][pos]).max(0.0))
                        .collect()
                })
                .collect();
            let nothing = vec![vec![0.0; hours.len()]; nu];
            let short: Vec<Vec<f64>> = (0..nu)
                .map(|r| (0..hours.len()).map(|pos| residual[r][hours[pos]].min(remaining[r][pos])).collect())
                .collect();
            let mut offers = vec![("remaining-capacity", &remaining), ("no-offer", &nothing)];
            if short.iter().flatten().zip(remaining.iter().flatten()).any(|(s, m)| *s > 1e-9 && *s < m - 1e-9) {
                offers.push(("residual-demand", &short));
            }
            for (label, od) in offers {
                let mut p = prog.clone();
                for (pos, &t) in hours.iter().enumerate() {
                    for r in 0..nu {
                        p.set_offer(r, pos, od[r][pos]);
                    }
                    for (k, row) in lam.iter().enumerate() {
                        p.set_price(k, pos, row[t]);
                    }
                }
                let res = crate::distribution::clear_distribution(&p, opts)?;
                let x = mpec.assemble_point(&nothing, od, &[], None, Some(&res.solution));
                starts.push(Start {
                    label: label.into(),
                    x,
                });
            }
        }
    }
    Ok(starts)
}
