//! Parametric convex programs with named, tagged rows.
//!
//! Both market clearings are written in this form: a linear objective whose
//! cost coefficients may depend on parameters, linear equality and
//! inequality rows (`expr = 0`, `expr >= 0`) and optional second-order cone
//! rows `S >= ||(a, b)||`. Parameters are values owned by someone else (the
//! producer's offers, interface flows, interface prices); they let the same
//! program be solved standalone or turned into a KKT block for an MPEC.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use tdm_nlp::{ConeRow, QuadExpr, SmoothNlp, SolveStatus, SolverOptions, StartPoint};

use crate::error::SolveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sym {
    Var(usize),
    Param(usize),
}

/// Affine expression over program variables and parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lin {
    pub constant: f64,
    pub terms: Vec<(Sym, f64)>,
}

impl Lin {
    pub fn constant(c: f64) -> Self {
        Lin {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(i: usize, coef: f64) -> Self {
        Lin {
            constant: 0.0,
            terms: vec![(Sym::Var(i), coef)],
        }
    }

    pub fn param(p: usize, coef: f64) -> Self {
        Lin {
            constant: 0.0,
            terms: vec![(Sym::Param(p), coef)],
        }
    }

    pub fn add(&mut self, sym: Sym, coef: f64) -> &mut Self {
        self.terms.push((sym, coef));
        self
    }

    pub fn add_var(&mut self, i: usize, coef: f64) -> &mut Self {
        self.add(Sym::Var(i), coef)
    }

    pub fn add_param(&mut self, p: usize, coef: f64) -> &mut Self {
        self.add(Sym::Param(p), coef)
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64], params: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, &(s, c)| {
            acc + c * match s {
                Sym::Var(i) => x[i],
                Sym::Param(p) => params[p],
            }
        })
    }

    /// Constant plus parameter part, i.e. the value with all variables zero.
    pub fn offset(&self, params: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, &(s, c)| match s {
            Sym::Var(_) => acc,
            Sym::Param(p) => acc + c * params[p],
        })
    }

    /// Coefficient of variable `i` (summing duplicates).
    pub fn coef(&self, i: usize) -> f64 {
        self.terms
            .iter()
            .filter(|(s, _)| *s == Sym::Var(i))
            .map(|(_, c)| c)
            .sum()
    }

    /// Map into a quadratic expression given an image for every symbol.
    pub fn map(&self, var: impl Fn(usize) -> QuadExpr, param: impl Fn(usize) -> QuadExpr) -> QuadExpr {
        let mut out = QuadExpr::constant(self.constant);
        for &(s, c) in &self.terms {
            let image = match s {
                Sym::Var(i) => var(i),
                Sym::Param(p) => param(p),
            };
            out.add_scaled(&image, c);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `expr = 0`
    Eq,
    /// `expr >= 0`
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub tag: &'static str,
    pub label: String,
    pub sense: Sense,
    pub expr: Lin,
    /// Name of the row's dual variable.
    pub dual: String,
}

/// `bound >= ||(comps[0], comps[1])||` with a constant bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Cone {
    pub tag: &'static str,
    pub label: String,
    pub bound: f64,
    pub comps: [Lin; 2],
    pub dual: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexProgram {
    /// Short prefix used in tags of derived rows (e.g. `wm`, `dm`).
    pub domain: &'static str,
    pub vars: Vec<String>,
    pub params: Vec<Parameter>,
    /// Cost coefficient of each variable; may depend on parameters only.
    pub cost: Vec<Lin>,
    pub rows: Vec<Row>,
    pub cones: Vec<Cone>,
}

impl ConvexProgram {
    pub fn new(domain: &'static str) -> Self {
        ConvexProgram {
            domain,
            ..Default::default()
        }
    }

    pub fn add_var(&mut self, label: impl Into<String>) -> usize {
        self.vars.push(label.into());
        self.cost.push(Lin::default());
        self.vars.len() - 1
    }

    pub fn add_param(&mut self, label: impl Into<String>, value: f64) -> usize {
        self.params.push(Parameter {
            label: label.into(),
            value,
        });
        self.params.len() - 1
    }

    pub fn set_cost(&mut self, var: usize, cost: Lin) {
        debug_assert!(cost.terms.iter().all(|(s, _)| matches!(s, Sym::Param(_))));
        self.cost[var] = cost;
    }

    pub fn add_row(
        &mut self,
        tag: &'static str,
        label: impl Into<String>,
        sense: Sense,
        expr: Lin,
        dual: impl Into<String>,
    ) -> usize {
        self.rows.push(Row {
            tag,
            label: label.into(),
            sense,
            expr,
            dual: dual.into(),
        });
        self.rows.len() - 1
    }

    pub fn add_cone(&mut self, cone: Cone) -> usize {
        self.cones.push(cone);
        self.cones.len() - 1
    }

    pub fn param_values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    pub fn set_param(&mut self, p: usize, value: f64) {
        self.params[p].value = value;
    }

    pub fn count_rows(&self, tag: &str) -> usize {
        self.rows.iter().filter(|r| r.tag == tag).count()
    }

    pub fn count_cones(&self) -> usize {
        self.cones.len()
    }

    pub fn objective(&self, x: &[f64], params: &[f64]) -> f64 {
        self.cost
            .iter()
            .zip(x)
            .map(|(c, xi)| c.offset(params) * xi)
            .sum()
    }

    /// Value of the Lagrangian dual function at the given multipliers
    /// (assuming they satisfy stationarity).
    pub fn dual_objective(&self, params: &[f64], duals: &[f64], cone_duals: &[[f64; 3]]) -> f64 {
        let mut d = 0.0;
        for (row, y) in self.rows.iter().zip(duals) {
            d -= y * row.expr.offset(params);
        }
        for (cone, eta) in self.cones.iter().zip(cone_duals) {
            d -= eta[0] * cone.bound
                + eta[1] * cone.comps[0].offset(params)
                + eta[2] * cone.comps[1].offset(params);
        }
        d
    }

    fn to_nlp(&self, params: &[f64]) -> SmoothNlp {
        let mut nlp = SmoothNlp::new(self.vars.len());
        let image = |l: &Lin| l.map(QuadExpr::var, |p| QuadExpr::constant(params[p]));
        let mut obj = QuadExpr::default();
        for (i, c) in self.cost.iter().enumerate() {
            obj.add_term(i, c.offset(params));
        }
        nlp.objective = obj;
        for row in &self.rows {
            match row.sense {
                Sense::Eq => nlp.add_equality(image(&row.expr)),
                Sense::Ge => nlp.add_inequality(image(&row.expr)),
            };
        }
        for cone in &self.cones {
            nlp.add_cone(ConeRow {
                bound: QuadExpr::constant(cone.bound),
                components: vec![image(&cone.comps[0]), image(&cone.comps[1])],
            });
        }
        nlp
    }

    /// Append all variables, rows and cones of `src`. Parameter `p` of `src`
    /// becomes `image[p]` when given (an expression over this program's
    /// symbols), otherwise a fresh parameter of this program.
    pub fn append(&mut self, src: &ConvexProgram, image: &[Option<Lin>]) -> Embedding {
        let var_offset = self.vars.len();
        let row_offset = self.rows.len();
        let cone_offset = self.cones.len();
        let mut param_map = Vec::with_capacity(src.params.len());
        let mut lin_image = Vec::with_capacity(src.params.len());
        for (p, par) in src.params.iter().enumerate() {
            match image.get(p).cloned().flatten() {
                Some(l) => {
                    param_map.push(None);
                    lin_image.push(l);
                }
                None => {
                    let np = self.add_param(par.label.clone(), par.value);
                    param_map.push(Some(np));
                    lin_image.push(Lin::param(np, 1.0));
                }
            }
        }
        let remap = |l: &Lin| -> Lin {
            let mut out = Lin::constant(l.constant);
            for &(s, c) in &l.terms {
                match s {
                    Sym::Var(i) => {
                        out.add_var(var_offset + i, c);
                    }
                    Sym::Param(p) => {
                        let img = &lin_image[p];
                        out.constant += c * img.constant;
                        for &(s2, c2) in &img.terms {
                            out.add(s2, c * c2);
                        }
                    }
                }
            }
            out
        };
        for (v, cost) in src.vars.iter().zip(&src.cost) {
            let i = self.add_var(v.clone());
            let c = remap(cost);
            assert!(
                c.terms.iter().all(|(s, _)| matches!(s, Sym::Param(_))),
                "cost of {v} would depend on a variable"
            );
            self.cost[i] = c;
        }
        for row in &src.rows {
            self.rows.push(Row {
                expr: remap(&row.expr),
                ..row.clone()
            });
        }
        for cone in &src.cones {
            self.cones.push(Cone {
                comps: [remap(&cone.comps[0]), remap(&cone.comps[1])],
                ..cone.clone()
            });
        }
        Embedding {
            var_offset,
            row_offset,
            cone_offset,
            param_map,
        }
    }

    /// Solve with the parameter values stored in the program.
    pub fn solve(&self, opts: &SolverOptions) -> Result<ProgramSolution, SolveError> {
        self.solve_with(&self.param_values(), opts)
    }

    pub fn solve_with(&self, params: &[f64], opts: &SolverOptions) -> Result<ProgramSolution, SolveError> {
        let nlp = self.to_nlp(params);
        let sol = tdm_nlp::solve(&nlp, &StartPoint::primal(vec![0.0; self.vars.len()]), opts);
        match sol.status {
            SolveStatus::Optimal | SolveStatus::Acceptable => {}
            SolveStatus::Infeasible => {
                let mut eq = 0;
                let mut ge = 0;
                let mut names = BTreeMap::new();
                for (k, row) in self.rows.iter().enumerate() {
                    let r = match row.sense {
                        Sense::Eq => {
                            eq += 1;
                            tdm_nlp::RowRef::Equality(eq - 1)
                        }
                        Sense::Ge => {
                            ge += 1;
                            tdm_nlp::RowRef::Inequality(ge - 1)
                        }
                    };
                    names.insert(r, k);
                }
                let rows = sol
                    .infeasible_rows
                    .iter()
                    .map(|r| match names.get(r) {
                        Some(&k) => format!("{} {}", self.rows[k].tag, self.rows[k].label),
                        None => match r {
                            tdm_nlp::RowRef::Cone(c) => format!("{} {}", self.cones[*c].tag, self.cones[*c].label),
                            other => format!("{other:?}"),
                        },
                    })
                    .collect();
                return Err(SolveError::Infeasible { rows });
            }
            s => {
                log::debug!("{} stopped with status {}:\n{}", self.domain, s.as_str(), sol.log_text());
                return Err(SolveError::NotConverged {
                    status: s.as_str().to_string(),
                })
            }
        }
        let mut duals = Vec::with_capacity(self.rows.len());
        let (mut eq, mut ge) = (0, 0);
        for row in &self.rows {
            match row.sense {
                Sense::Eq => {
                    duals.push(sol.eq_multipliers[eq]);
                    eq += 1;
                }
                Sense::Ge => {
                    duals.push(sol.ineq_multipliers[ge]);
                    ge += 1;
                }
            }
        }
        let cone_duals: Vec<[f64; 3]> = sol
            .cone_multipliers
            .iter()
            .map(|d| [d.bound, d.components[0], d.components[1]])
            .collect();
        let objective = self.objective(&sol.x, params);
        let dual_objective = self.dual_objective(params, &duals, &cone_duals);
        Ok(ProgramSolution {
            x: sol.x.clone(),
            duals,
            cone_duals,
            objective,
            dual_objective,
            iterations: sol.iterations,
            log: sol.log_text(),
        })
    }
}

/// Where an appended program landed inside the host program.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub var_offset: usize,
    pub row_offset: usize,
    pub cone_offset: usize,
    /// Host parameter of each source parameter (`None` when substituted).
    pub param_map: Vec<Option<usize>>,
}

impl Embedding {
    /// Cut the part belonging to the embedded program out of a host solution.
    pub fn slice(&self, src: &ConvexProgram, host: &ProgramSolution, params: &[f64]) -> ProgramSolution {
        let x = host.x[self.var_offset..self.var_offset + src.vars.len()].to_vec();
        let duals = host.duals[self.row_offset..self.row_offset + src.rows.len()].to_vec();
        let cone_duals = host.cone_duals[self.cone_offset..self.cone_offset + src.cones.len()].to_vec();
        ProgramSolution {
            objective: src.objective(&x, params),
            dual_objective: src.dual_objective(params, &duals, &cone_duals),
            x,
            duals,
            cone_duals,
            iterations: host.iterations,
            log: String::new(),
        }
    }
}

/// Optimal primal/dual pair of a [`ConvexProgram`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramSolution {
    pub x: Vec<f64>,
    /// One multiplier per row (free for equalities, >= 0 for inequalities).
    pub duals: Vec<f64>,
    /// `(eta_s, eta_p, eta_q)` per cone.
    pub cone_duals: Vec<[f64; 3]>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub log: String,
}

impl ProgramSolution {
    pub fn duality_gap(&self) -> f64 {
        (self.objective - self.dual_objective).abs() / self.objective.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Primal,
    FreeDual,
    NonnegDual,
    Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub label: String,
    pub kind: SlotKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktRow {
    pub tag: String,
    pub label: String,
    pub expr: QuadExpr,
}

/// `0 <= h ⊥ k >= 0` with `k` a dual slot.
#[derive(Debug, Clone, PartialEq)]
pub struct KktPair {
    pub tag: String,
    pub label: String,
    pub h: QuadExpr,
    pub k: usize,
}

/// `[S; a; b] ⊥ [eta_s; eta_p; eta_q]` over the second-order cone.
#[derive(Debug, Clone, PartialEq)]
pub struct ConePair {
    pub tag: String,
    pub label: String,
    pub bound: f64,
    pub comps: [QuadExpr; 2],
    pub duals: [usize; 3],
}

/// Stationarity, primal feasibility and complementarity conditions of a
/// [`ConvexProgram`], expressed over its own slot space: primal variables,
/// then row duals, then cone duals (three per cone), then parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KktBlock {
    pub domain: &'static str,
    pub slots: Vec<Slot>,
    pub stationarity: Vec<KktRow>,
    pub equalities: Vec<KktRow>,
    pub pairs: Vec<KktPair>,
    pub cone_pairs: Vec<ConePair>,
    pub num_primal: usize,
    pub dual_offset: usize,
    pub cone_offset: usize,
    pub param_offset: usize,
}

impl KktBlock {
    pub fn of(prog: &ConvexProgram) -> KktBlock {
        let n = prog.vars.len();
        let m = prog.rows.len();
        let dual_offset = n;
        let cone_offset = n + m;
        let param_offset = cone_offset + 3 * prog.cones.len();
        let mut slots: Vec<Slot> = prog
            .vars
            .iter()
            .map(|v| Slot {
                label: v.clone(),
                kind: SlotKind::Primal,
            })
            .collect();
        for row in &prog.rows {
            slots.push(Slot {
                label: row.dual.clone(),
                kind: match row.sense {
                    Sense::Eq => SlotKind::FreeDual,
                    Sense::Ge => SlotKind::NonnegDual,
                },
            });
        }
        for cone in &prog.cones {
            for part in ["s", "p", "q"] {
                slots.push(Slot {
                    label: format!("{}.{}", cone.dual, part),
                    kind: SlotKind::FreeDual,
                });
            }
        }
        for p in &prog.params {
            slots.push(Slot {
                label: p.label.clone(),
                kind: SlotKind::Param,
            });
        }
        let image = |l: &Lin| l.map(QuadExpr::var, |p| QuadExpr::var(param_offset + p));

        // stationarity: cost_j - sum_r y_r a_rj - sum_c eta_c . d comps / dx_j = 0
        let mut stat: Vec<QuadExpr> = prog.cost.iter().map(&image).collect();
        for (r, row) in prog.rows.iter().enumerate() {
            for &(s, c) in &row.expr.terms {
                if let Sym::Var(j) = s {
                    stat[j].add_term(dual_offset + r, -c);
                }
            }
        }
        for (k, cone) in prog.cones.iter().enumerate() {
            for (part, comp) in cone.comps.iter().enumerate() {
                for &(s, c) in &comp.terms {
                    if let Sym::Var(j) = s {
                        stat[j].add_term(cone_offset + 3 * k + 1 + part, -c);
                    }
                }
            }
        }
        let stat_tag = format!("{}.stationarity", prog.domain);
        let stationarity = stat
            .into_iter()
            .zip(&prog.vars)
            .map(|(e, v)| KktRow {
                tag: stat_tag.clone(),
                label: v.clone(),
                expr: e.canonical(),
            })
            .collect();
        let mut equalities = Vec::new();
        let mut pairs = Vec::new();
        for (r, row) in prog.rows.iter().enumerate() {
            match row.sense {
                Sense::Eq => equalities.push(KktRow {
                    tag: row.tag.to_string(),
                    label: row.label.clone(),
                    expr: image(&row.expr).canonical(),
                }),
                Sense::Ge => pairs.push(KktPair {
                    tag: row.tag.to_string(),
                    label: row.label.clone(),
                    h: image(&row.expr).canonical(),
                    k: dual_offset + r,
                }),
            }
        }
        let cone_pairs = prog
            .cones
            .iter()
            .enumerate()
            .map(|(k, cone)| ConePair {
                tag: cone.tag.to_string(),
                label: cone.label.clone(),
                bound: cone.bound,
                comps: [image(&cone.comps[0]).canonical(), image(&cone.comps[1]).canonical()],
                duals: [cone_offset + 3 * k, cone_offset + 3 * k + 1, cone_offset + 3 * k + 2],
            })
            .collect();
        KktBlock {
            domain: prog.domain,
            slots,
            stationarity,
            equalities,
            pairs,
            cone_pairs,
            num_primal: n,
            dual_offset,
            cone_offset,
            param_offset,
        }
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// Slot index of the dual of program row `r`.
    pub fn row_dual(&self, r: usize) -> usize {
        self.dual_offset + r
    }

    pub fn param_slot(&self, p: usize) -> usize {
        self.param_offset + p
    }

    /// Assemble a point in slot space from a solved program.
    pub fn point(&self, sol: &ProgramSolution, params: &[f64]) -> Vec<f64> {
        let mut pt = Vec::with_capacity(self.num_slots());
        pt.extend_from_slice(&sol.x);
        pt.extend_from_slice(&sol.duals);
        for eta in &sol.cone_duals {
            pt.extend_from_slice(eta);
        }
        pt.extend_from_slice(params);
        pt
    }

    /// Itemized residuals at `point` (one entry per KKT condition).
    pub fn residual(&self, point: &[f64]) -> Result<ResidualReport, String> {
        if point.len() != self.num_slots() {
            return Err(format!(
                "point assigns {} values but the block has {} slots",
                point.len(),
                self.num_slots()
            ));
        }
        if let Some((i, _)) = point.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(format!("slot {} ({}) is not assigned", i, self.slots[i].label));
        }
        let mut rep = ResidualReport::default();
        for row in &self.stationarity {
            rep.push(&row.tag, &row.label, ResidualKind::Stationarity, row.expr.eval(point).abs());
        }
        for row in &self.equalities {
            rep.push(&row.tag, &row.label, ResidualKind::Feasibility, row.expr.eval(point).abs());
        }
        for pair in &self.pairs {
            let h = pair.h.eval(point);
            let k = point[pair.k];
            rep.push(&pair.tag, &pair.label, ResidualKind::Complementarity, h.min(k).abs());
            if h.abs() <= DEGENERACY_TOL && k.abs() <= DEGENERACY_TOL {
                rep.degenerate.push(format!("{} {}", pair.tag, pair.label));
            }
        }
        for cp in &self.cone_pairs {
            let a = cp.comps[0].eval(point);
            let b = cp.comps[1].eval(point);
            let [es, ep, eq] = cp.duals.map(|d| point[d]);
            let primal = ((a * a + b * b).sqrt() - cp.bound).max(0.0);
            let dual = ((ep * ep + eq * eq).sqrt() - es).max(0.0);
            let inner = (es * cp.bound + ep * a + eq * b).abs();
            rep.push(&cp.tag, &cp.label, ResidualKind::Complementarity, inner.max(primal).max(dual));
        }
        Ok(rep)
    }
}

/// Pairs with both sides below this magnitude are flagged as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ResidualKind {
    Stationarity,
    Feasibility,
    Complementarity,
}

impl ResidualKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResidualKind::Stationarity => "stationarity",
            ResidualKind::Feasibility => "feasibility",
            ResidualKind::Complementarity => "complementarity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEntry {
    pub tag: String,
    pub label: String,
    pub kind: ResidualKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResidualReport {
    pub entries: Vec<ResidualEntry>,
    /// Complementarity pairs with both sides numerically zero.
    pub degenerate: Vec<String>,
}

impl ResidualReport {
    fn push(&mut self, tag: &str, label: &str, kind: ResidualKind, value: f64) {
        self.entries.push(ResidualEntry {
            tag: tag.to_string(),
            label: label.to_string(),
            kind,
            value,
        });
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.value))
    }

    pub fn max_of(&self, kind: ResidualKind) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .fold(0.0, |m, e| m.max(e.value))
    }

    pub fn by_tag(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let v = out.entry(e.tag.clone()).or_insert(0.0f64);
            *v = v.max(e.value);
        }
        out
    }

    pub fn find(&self, tag: &str, label: &str) -> Option<&ResidualEntry> {
        self.entries.iter().find(|e| e.tag == tag && e.label == label)
    }

    pub fn merge(&mut self, other: ResidualReport) {
        self.entries.extend(other.entries);
        self.degenerate.extend(other.degenerate);
    }

    /// Plain-text dump: one line per condition with its tag and residual.
    pub fn dump(&self) -> String {
        let mut s = String::from("tag\tcondition\tkind\tresidual\n");
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}\t{:.3e}", e.tag, e.label, e.kind.as_str(), e.value);
        }
        s
    }
}
