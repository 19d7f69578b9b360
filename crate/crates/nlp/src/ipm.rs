//! Primal-dual interior-point method with a filter line search.
//!
//! Inequalities receive slacks, bounds are handled by a logarithmic barrier,
//! and every Newton step solves the symmetric augmented system
//!
//! ```txt
//!   [ W + Σ + δw I   J_Eᵀ     J_Iᵀ        ] [ Δx ]
//!   [ J_E           -δc I     0           ] [-Δy ]
//!   [ J_I            0       -S/W - δc I  ] [-Δw ]
//! ```
//!
//! with a sparse LDLᵀ factorization. `δw` is raised until the factor has
//! exactly `n` positive pivots, which makes the step a descent direction on
//! nonconvex (bilinear) problems as well.

use log::{debug, trace};

use crate::expr::QuadExpr;
use crate::problem::{
    ConeDual, IterationRecord, KktResidual, NlpSolution, RowRef, SmoothNlp, SolveStatus,
    SolverOptions, StartPoint,
};
use crate::sparse::SymbolicLdl;

const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const KAPPA_SIGMA: f64 = 1e10;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-5;
const ETA_PHI: f64 = 1e-4;
const S_PHI: f64 = 2.3;
const S_THETA: f64 = 1.1;
const DELTA_SWITCH: f64 = 1.0;
/// Smallest primal regularization once the Hessian has needed a correction;
/// flat directions of degenerate linear programs otherwise produce huge steps.
const DELTA_W_MIN: f64 = 1e-8;
const S_MAX: f64 = 100.0;

/// Row compiled against its own support for fast evaluation.
#[derive(Debug, Clone)]
struct CompiledRow {
    constant: f64,
    vars: Vec<usize>,
    lin: Vec<f64>,
    /// Products as positions into `vars`.
    quad: Vec<(usize, usize, f64)>,
}

impl CompiledRow {
    fn new(expr: &QuadExpr) -> Self {
        let e = expr.canonical();
        let vars = e.support();
        let pos = |v: usize| vars.binary_search(&v).unwrap();
        let mut lin = vec![0.0; vars.len()];
        for &(i, c) in &e.linear {
            lin[pos(i)] += c;
        }
        let quad = e
            .quadratic
            .iter()
            .map(|&(i, j, c)| (pos(i), pos(j), c))
            .collect();
        CompiledRow {
            constant: e.constant,
            vars,
            lin,
            quad,
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for (k, &i) in self.vars.iter().enumerate() {
            v += self.lin[k] * x[i];
        }
        for &(a, b, c) in &self.quad {
            v += c * x[self.vars[a]] * x[self.vars[b]];
        }
        v
    }

    fn grad(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.lin);
        for &(a, b, c) in &self.quad {
            let (xa, xb) = (x[self.vars[a]], x[self.vars[b]]);
            if a == b {
                out[a] += 2.0 * c * xa;
            } else {
                out[a] += c * xb;
                out[b] += c * xa;
            }
        }
    }

    fn scaled(mut self, s: f64) -> Self {
        self.constant *= s;
        self.lin.iter_mut().for_each(|v| *v *= s);
        self.quad.iter_mut().for_each(|q| q.2 *= s);
        self
    }

    fn max_coef(&self) -> f64 {
        self.lin
            .iter()
            .map(|v| v.abs())
            .chain(self.quad.iter().map(|q| q.2.abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
enum IneqOrigin {
    Row(usize),
    ConeQuad(usize),
    ConeBound(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BoundSource {
    Native,
    Row(usize, f64),
}

/// Problem after presolve and scaling, ready for the iteration.
struct Compiled {
    n: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    lower_src: Vec<BoundSource>,
    upper_src: Vec<BoundSource>,
    fixed: Vec<bool>,
    obj: CompiledRow,
    obj_scale: f64,
    eq: Vec<CompiledRow>,
    eq_scale: Vec<f64>,
    eq_origin: Vec<usize>,
    ineq: Vec<CompiledRow>,
    ineq_scale: Vec<f64>,
    ineq_origin: Vec<IneqOrigin>,
    /// Presolve found a constant row that is violated.
    inconsistent: Vec<RowRef>,
}

fn row_scale(row: &CompiledRow) -> f64 {
    let m = row.max_coef();
    if m > 1.0 {
        1.0 / m
    } else {
        1.0
    }
}

fn compile(nlp: &SmoothNlp, x0: &[f64], feas_tol: f64) -> Compiled {
    let n = nlp.num_vars();
    let mut lower = nlp.lower.clone();
    let mut upper = nlp.upper.clone();
    let mut lower_src = vec![BoundSource::Native; n];
    let mut upper_src = vec![BoundSource::Native; n];
    let mut inconsistent = Vec::new();

    let mut ineq_raw: Vec<(QuadExpr, IneqOrigin)> = Vec::new();
    for (j, row) in nlp.inequalities.iter().enumerate() {
        let c = row.canonical();
        if c.quadratic.is_empty() && c.linear.len() == 1 {
            let (i, a) = c.linear[0];
            let bound = -c.constant / a;
            if a > 0.0 {
                if bound > lower[i] {
                    lower[i] = bound;
                    lower_src[i] = BoundSource::Row(j, a);
                }
            } else if bound < upper[i] {
                upper[i] = bound;
                upper_src[i] = BoundSource::Row(j, a);
            }
            continue;
        }
        ineq_raw.push((c, IneqOrigin::Row(j)));
    }
    for (k, cone) in nlp.cones.iter().enumerate() {
        let mut q = QuadExpr::mul_affine(&cone.bound, &cone.bound);
        for comp in &cone.components {
            q.add_scaled(&QuadExpr::mul_affine(comp, comp), -1.0);
        }
        ineq_raw.push((q.canonical(), IneqOrigin::ConeQuad(k)));
        let b = cone.bound.canonical();
        if !b.linear.is_empty() {
            ineq_raw.push((b, IneqOrigin::ConeBound(k)));
        }
    }

    let mut fixed = vec![false; n];
    for i in 0..n {
        if lower[i] > upper[i] + feas_tol.max(1e-12 * lower[i].abs()) {
            inconsistent.push(RowRef::Bound(i));
        }
        if lower[i].is_finite() && upper[i] - lower[i] <= 1e-12 * (1.0 + lower[i].abs()) {
            fixed[i] = true;
        }
    }

    // point used to decide whether a row still has free variables
    let xfix: Vec<f64> = (0..n)
        .map(|i| {
            if fixed[i] {
                0.5 * (lower[i] + upper[i])
            } else {
                x0.get(i).copied().unwrap_or(0.0)
            }
        })
        .collect();
    let has_free = |row: &CompiledRow| row.vars.iter().any(|&v| !fixed[v]);

    let obj_row = CompiledRow::new(&nlp.objective);
    let mut g = Vec::new();
    obj_row.grad(x0, &mut g);
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let obj_scale = if gmax > S_MAX { S_MAX / gmax } else { 1.0 };
    let obj = obj_row.scaled(obj_scale);

    let mut eq = Vec::new();
    let mut eq_scale = Vec::new();
    let mut eq_origin = Vec::new();
    for (i, row) in nlp.equalities.iter().enumerate() {
        let r = CompiledRow::new(row);
        if !has_free(&r) {
            if r.value(&xfix).abs() > feas_tol {
                inconsistent.push(RowRef::Equality(i));
            }
            continue;
        }
        let s = row_scale(&r);
        eq.push(r.scaled(s));
        eq_scale.push(s);
        eq_origin.push(i);
    }
    let mut ineq = Vec::new();
    let mut ineq_scale = Vec::new();
    let mut ineq_origin = Vec::new();
    for (q, origin) in ineq_raw {
        let r = CompiledRow::new(&q);
        if !has_free(&r) {
            if r.value(&xfix) < -feas_tol {
                inconsistent.push(match origin {
                    IneqOrigin::Row(j) => RowRef::Inequality(j),
                    IneqOrigin::ConeQuad(k) | IneqOrigin::ConeBound(k) => RowRef::Cone(k),
                });
            }
            continue;
        }
        let s = row_scale(&r);
        ineq.push(r.scaled(s));
        ineq_scale.push(s);
        ineq_origin.push(origin);
    }

    Compiled {
        n,
        lower,
        upper,
        lower_src,
        upper_src,
        fixed,
        obj,
        obj_scale,
        eq,
        eq_scale,
        eq_origin,
        ineq,
        ineq_scale,
        ineq_origin,
        inconsistent,
    }
}

/// KKT matrix structure with value slots for fast assembly.
struct KktPattern {
    sym: SymbolicLdl,
    diag: Vec<usize>,
    /// Slots for the objective products and each row's products.
    obj_hess: Vec<usize>,
    eq_hess: Vec<Vec<usize>>,
    ineq_hess: Vec<Vec<usize>>,
    eq_jac: Vec<Vec<usize>>,
    ineq_jac: Vec<Vec<usize>>,
}

impl KktPattern {
    fn new(p: &Compiled) -> Self {
        let n = p.n;
        let m_e = p.eq.len();
        let dim = n + m_e + p.ineq.len();
        let mut entries: Vec<(usize, usize)> = Vec::new();
        let hess_entries = |row: &CompiledRow, entries: &mut Vec<(usize, usize)>| -> Vec<usize> {
            row.quad
                .iter()
                .map(|&(a, b, _)| {
                    entries.push((row.vars[a], row.vars[b]));
                    entries.len() - 1
                })
                .collect::<Vec<_>>()
        };
        let obj_h = hess_entries(&p.obj, &mut entries);
        let eq_h: Vec<Vec<usize>> = p.eq.iter().map(|r| hess_entries(r, &mut entries)).collect();
        let ineq_h: Vec<Vec<usize>> = p.ineq.iter().map(|r| hess_entries(r, &mut entries)).collect();
        let jac = |row: &CompiledRow, r: usize, entries: &mut Vec<(usize, usize)>| -> Vec<usize> {
            row.vars
                .iter()
                .map(|&v| {
                    entries.push((r, v));
                    entries.len() - 1
                })
                .collect::<Vec<_>>()
        };
        let eq_j: Vec<Vec<usize>> = p
            .eq
            .iter()
            .enumerate()
            .map(|(i, r)| jac(r, n + i, &mut entries))
            .collect();
        let ineq_j: Vec<Vec<usize>> = p
            .ineq
            .iter()
            .enumerate()
            .map(|(i, r)| jac(r, n + m_e + i, &mut entries))
            .collect();
        let sym = SymbolicLdl::new(dim, &entries);
        let slot = |e: usize| sym.slot(e);
        let map = |v: &Vec<usize>| v.iter().map(|&e| slot(e)).collect::<Vec<_>>();
        KktPattern {
            diag: sym.diag_slots(),
            obj_hess: map(&obj_h),
            eq_hess: eq_h.iter().map(map).collect(),
            ineq_hess: ineq_h.iter().map(map).collect(),
            eq_jac: eq_j.iter().map(map).collect(),
            ineq_jac: ineq_j.iter().map(map).collect(),
            sym,
        }
    }
}

#[derive(Clone)]
struct State {
    x: Vec<f64>,
    s: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
}

struct Evaluation {
    f: f64,
    grad_f: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    jac_e: Vec<Vec<f64>>,
    jac_i: Vec<Vec<f64>>,
}

fn evaluate(p: &Compiled, x: &[f64]) -> Evaluation {
    let mut grad_f = vec![0.0; p.n];
    let mut buf = Vec::new();
    p.obj.grad(x, &mut buf);
    for (k, &v) in p.obj.vars.iter().enumerate() {
        grad_f[v] += buf[k];
    }
    let mut jac_e = Vec::with_capacity(p.eq.len());
    let c = p
        .eq
        .iter()
        .map(|r| {
            r.grad(x, &mut buf);
            jac_e.push(buf.clone());
            r.value(x)
        })
        .collect();
    let mut jac_i = Vec::with_capacity(p.ineq.len());
    let d = p
        .ineq
        .iter()
        .map(|r| {
            r.grad(x, &mut buf);
            jac_i.push(buf.clone());
            r.value(x)
        })
        .collect();
    Evaluation {
        f: p.obj.value(x),
        grad_f,
        c,
        d,
        jac_e,
        jac_i,
    }
}

fn finite(v: f64) -> bool {
    v.is_finite()
}

fn dual_residual(p: &Compiled, ev: &Evaluation, st: &State) -> Vec<f64> {
    let mut r = ev.grad_f.clone();
    for (i, row) in p.eq.iter().enumerate() {
        for (k, &v) in row.vars.iter().enumerate() {
            r[v] -= st.y[i] * ev.jac_e[i][k];
        }
    }
    for (j, row) in p.ineq.iter().enumerate() {
        for (k, &v) in row.vars.iter().enumerate() {
            r[v] -= st.w[j] * ev.jac_i[j][k];
        }
    }
    for i in 0..p.n {
        if p.fixed[i] {
            r[i] = 0.0;
            continue;
        }
        r[i] -= st.zl[i];
        r[i] += st.zu[i];
    }
    r
}

fn theta(ev: &Evaluation, s: &[f64]) -> f64 {
    ev.c.iter().map(|v| v.abs()).sum::<f64>()
        + ev.d.iter().zip(s).map(|(d, s)| (d - s).abs()).sum::<f64>()
}

fn barrier_phi(p: &Compiled, ev: &Evaluation, x: &[f64], s: &[f64], mu: f64) -> f64 {
    let mut phi = ev.f;
    for i in 0..p.n {
        if p.fixed[i] {
            continue;
        }
        if finite(p.lower[i]) {
            phi -= mu * (x[i] - p.lower[i]).ln();
        }
        if finite(p.upper[i]) {
            phi -= mu * (p.upper[i] - x[i]).ln();
        }
    }
    for &sj in s {
        phi -= mu * sj.ln();
    }
    phi
}

/// Optimality error of the barrier problem for a given `mu`.
fn optimality_error(p: &Compiled, ev: &Evaluation, st: &State, mu: f64) -> (f64, f64, f64, f64) {
    let r = dual_residual(p, ev, st);
    let mut n_mult = 0usize;
    let mut sum_mult = 0.0;
    let mut n_comp = 0usize;
    let mut sum_comp = 0.0;
    for v in st.y.iter() {
        sum_mult += v.abs();
        n_mult += 1;
    }
    for v in st.w.iter() {
        sum_mult += v.abs();
        sum_comp += v.abs();
        n_mult += 1;
        n_comp += 1;
    }
    for i in 0..p.n {
        if p.fixed[i] {
            continue;
        }
        if finite(p.lower[i]) {
            sum_mult += st.zl[i];
            sum_comp += st.zl[i];
            n_mult += 1;
            n_comp += 1;
        }
        if finite(p.upper[i]) {
            sum_mult += st.zu[i];
            sum_comp += st.zu[i];
            n_mult += 1;
            n_comp += 1;
        }
    }
    let s_d = if n_mult == 0 {
        1.0
    } else {
        (S_MAX.max(sum_mult / n_mult as f64)) / S_MAX
    };
    let s_c = if n_comp == 0 {
        1.0
    } else {
        (S_MAX.max(sum_comp / n_comp as f64)) / S_MAX
    };
    let dual_inf = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut primal_inf = ev.c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (d, s) in ev.d.iter().zip(&st.s) {
        primal_inf = primal_inf.max((d - s).abs());
    }
    let mut comp: f64 = 0.0;
    for (s, w) in st.s.iter().zip(&st.w) {
        comp = comp.max((s * w - mu).abs());
    }
    for i in 0..p.n {
        if p.fixed[i] {
            continue;
        }
        if finite(p.lower[i]) {
            comp = comp.max(((st.x[i] - p.lower[i]) * st.zl[i] - mu).abs());
        }
        if finite(p.upper[i]) {
            comp = comp.max(((p.upper[i] - st.x[i]) * st.zu[i] - mu).abs());
        }
    }
    let err = (dual_inf / s_d).max(primal_inf).max(comp / s_c);
    (err, dual_inf, primal_inf, comp)
}

/// Largest step in (0, 1] keeping `v + a dv >= (1 - tau) v` for all entries.
fn max_step(v: &[f64], dv: &[f64], tau: f64, mask: impl Fn(usize) -> bool) -> f64 {
    let mut a: f64 = 1.0;
    for i in 0..v.len() {
        if !mask(i) {
            continue;
        }
        if dv[i] < 0.0 {
            a = a.min(-tau * v[i] / dv[i]);
        }
    }
    a
}

struct Filter {
    entries: Vec<(f64, f64)>,
}

impl Filter {
    fn acceptable(&self, theta: f64, phi: f64) -> bool {
        self.entries.iter().all(|&(t, f)| theta < t || phi < f)
    }
    fn add(&mut self, theta: f64, phi: f64) {
        self.entries.retain(|&(t, f)| !(theta <= t && phi <= f));
        self.entries.push((theta, phi));
    }
}

/// Solve `nlp` from `start`. Deterministic: identical inputs give identical
/// iterates and logs.
pub fn solve(nlp: &SmoothNlp, start: &StartPoint, opts: &SolverOptions) -> NlpSolution {
    let sol = solve_inner(nlp, start, opts);
    if !sol.status.is_success()
        && sol.status != SolveStatus::Infeasible
        && opts.detect_infeasibility
        && sol.residual.feasibility > opts.constr_viol_tol
    {
        let (violation, rows) = crate::elastic::minimize_violation(nlp, &sol.x, opts);
        if let Some(v) = violation {
            if v > opts.constr_viol_tol.max(1e-6) {
                let mut s = sol;
                s.status = SolveStatus::Infeasible;
                s.infeasible_rows = rows;
                return s;
            }
        }
    }
    sol
}

pub(crate) fn solve_inner(nlp: &SmoothNlp, start: &StartPoint, opts: &SolverOptions) -> NlpSolution {
    let n = nlp.num_vars();
    assert_eq!(start.x.len(), n, "start point has wrong dimension");
    let p = compile(nlp, &start.x, opts.constr_viol_tol);
    if !p.inconsistent.is_empty() {
        let mut sol = empty_solution(nlp, &start.x);
        sol.status = SolveStatus::Infeasible;
        sol.infeasible_rows = p.inconsistent.clone();
        sol.residual = crate::kkt_residual(nlp, &sol);
        return sol;
    }
    let m_e = p.eq.len();
    let m_i = p.ineq.len();
    let pattern = KktPattern::new(&p);
    let dim = n + m_e + m_i;

    // initial point
    let push = opts.bound_push;
    let mut x = start.x.clone();
    for i in 0..n {
        let (l, u) = (p.lower[i], p.upper[i]);
        if p.fixed[i] {
            x[i] = 0.5 * (l + u);
            continue;
        }
        let pl = if finite(l) {
            let mut d = push * l.abs().max(1.0);
            if finite(u) {
                d = d.min(push * (u - l));
            }
            d
        } else {
            0.0
        };
        let pu = if finite(u) {
            let mut d = push * u.abs().max(1.0);
            if finite(l) {
                d = d.min(push * (u - l));
            }
            d
        } else {
            0.0
        };
        if finite(l) && x[i] < l + pl {
            x[i] = l + pl;
        }
        if finite(u) && x[i] > u - pu {
            x[i] = u - pu;
        }
    }
    let mut mu = opts.mu_init;
    let ev0 = evaluate(&p, &x);
    let s: Vec<f64> = ev0
        .d
        .iter()
        .map(|&d| d.max(push * d.abs().max(1.0)))
        .collect();
    let w: Vec<f64> = match &start.ineq_multipliers {
        Some(wm) => p
            .ineq_origin
            .iter()
            .zip(&s)
            .zip(&p.ineq_scale)
            .map(|((o, &sj), &sc)| {
                let guess = match o {
                    IneqOrigin::Row(j) => wm.get(*j).copied().unwrap_or(0.0) * p.obj_scale / sc,
                    _ => 0.0,
                };
                guess.max(mu / sj)
            })
            .collect(),
        None => s.iter().map(|&sj| mu / sj).collect(),
    };
    let y: Vec<f64> = match &start.eq_multipliers {
        Some(ym) => p
            .eq_origin
            .iter()
            .zip(&p.eq_scale)
            .map(|(&i, &sc)| ym.get(i).copied().unwrap_or(0.0) * p.obj_scale / sc)
            .collect(),
        None => vec![0.0; m_e],
    };
    let zl: Vec<f64> = (0..n)
        .map(|i| {
            if !p.fixed[i] && finite(p.lower[i]) {
                mu / (x[i] - p.lower[i])
            } else {
                0.0
            }
        })
        .collect();
    let zu: Vec<f64> = (0..n)
        .map(|i| {
            if !p.fixed[i] && finite(p.upper[i]) {
                mu / (p.upper[i] - x[i])
            } else {
                0.0
            }
        })
        .collect();
    let mut st = State { x, s, y, w, zl, zu };

    let mut ev = evaluate(&p, &st.x);
    let theta0 = theta(&ev, &st.s);
    let theta_max = 1e4 * theta0.max(1.0);
    let theta_min = 1e-4 * theta0.max(1.0);
    let mut filter = Filter { entries: vec![] };
    let mut delta_w_last = 0.0f64;
    let mut log = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut iter = 0usize;
    let mut consecutive_failures = 0usize;
    let mut acceptable_run = 0usize;
    // last iterate meeting the acceptable tolerances, returned if the
    // iteration later breaks down
    let mut fallback: Option<State> = None;
    let mut values = vec![0.0; pattern.sym.nnz()];

    loop {
        // convergence test and barrier update
        let (err0, _, _, _) = optimality_error(&p, &ev, &st, 0.0);
        let feasible = unscaled_ok(&p, &ev, &st, opts);
        if err0 <= opts.tol && feasible {
            status = SolveStatus::Optimal;
            break;
        }
        if err0 <= opts.acceptable_tol && feasible {
            fallback = Some(st.clone());
            acceptable_run += 1;
            if acceptable_run >= opts.acceptable_iter.max(1) {
                status = SolveStatus::Acceptable;
                break;
            }
        } else {
            acceptable_run = 0;
        }
        loop {
            let (err_mu, _, _, _) = optimality_error(&p, &ev, &st, mu);
            let mu_floor = opts.tol / 10.0;
            if err_mu <= KAPPA_EPS * mu && mu > mu_floor {
                mu = mu_floor.max((KAPPA_MU * mu).min(mu.powf(THETA_MU)));
                filter.entries.clear();
            } else {
                break;
            }
        }
        if iter >= opts.max_iter {
            break;
        }
        iter += 1;

        // assemble KKT values
        let assemble = |values: &mut Vec<f64>, delta_w: f64, delta_c: f64| {
            values.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                let slot = pattern.diag[i];
                if p.fixed[i] {
                    values[slot] = 1.0;
                    continue;
                }
                let mut sigma = delta_w;
                if finite(p.lower[i]) {
                    sigma += st.zl[i] / (st.x[i] - p.lower[i]);
                }
                if finite(p.upper[i]) {
                    sigma += st.zu[i] / (p.upper[i] - st.x[i]);
                }
                values[slot] += sigma;
            }
            let add_hess = |row: &CompiledRow, slots: &[usize], mult: f64, values: &mut Vec<f64>| {
                for (k, &(a, b, c)) in row.quad.iter().enumerate() {
                    let (va, vb) = (row.vars[a], row.vars[b]);
                    if p.fixed[va] || p.fixed[vb] {
                        continue;
                    }
                    let v = if a == b { 2.0 * c * mult } else { c * mult };
                    values[slots[k]] += v;
                }
            };
            add_hess(&p.obj, &pattern.obj_hess, 1.0, values);
            for (i, row) in p.eq.iter().enumerate() {
                add_hess(row, &pattern.eq_hess[i], -st.y[i], values);
            }
            for (j, row) in p.ineq.iter().enumerate() {
                add_hess(row, &pattern.ineq_hess[j], -st.w[j], values);
            }
            for (i, row) in p.eq.iter().enumerate() {
                for (k, &v) in row.vars.iter().enumerate() {
                    if !p.fixed[v] {
                        values[pattern.eq_jac[i][k]] += ev.jac_e[i][k];
                    }
                }
                values[pattern.diag[n + i]] -= delta_c;
            }
            for (j, row) in p.ineq.iter().enumerate() {
                for (k, &v) in row.vars.iter().enumerate() {
                    if !p.fixed[v] {
                        values[pattern.ineq_jac[j][k]] += ev.jac_i[j][k];
                    }
                }
                values[pattern.diag[n + m_e + j]] -= st.s[j] / st.w[j] + delta_c;
            }
        };

        // inertia-correcting factorization
        let delta_c = 1e-9 * mu.max(1e-6).powf(0.25);
        let mut delta_w = 0.0;
        let mut factor = None;
        for attempt in 0..60 {
            assemble(&mut values, delta_w, delta_c);
            match pattern.sym.factor(&values) {
                Ok(f) if f.inertia().0 == n => {
                    factor = Some(f);
                    break;
                }
                _ => {
                    delta_w = if attempt == 0 {
                        if delta_w_last == 0.0 {
                            1e-4
                        } else {
                            (delta_w_last / 3.0).max(DELTA_W_MIN)
                        }
                    } else if delta_w_last == 0.0 {
                        delta_w * 100.0
                    } else {
                        delta_w * 8.0
                    };
                    if delta_w > 1e40 {
                        break;
                    }
                }
            }
        }
        let Some(factor) = factor else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        if delta_w > 0.0 {
            delta_w_last = delta_w;
        }

        // right-hand side
        let mut rhs = vec![0.0; dim];
        let mut rx = ev.grad_f.clone();
        for (i, row) in p.eq.iter().enumerate() {
            for (k, &v) in row.vars.iter().enumerate() {
                rx[v] -= st.y[i] * ev.jac_e[i][k];
            }
        }
        for (j, row) in p.ineq.iter().enumerate() {
            for (k, &v) in row.vars.iter().enumerate() {
                rx[v] -= st.w[j] * ev.jac_i[j][k];
            }
        }
        for i in 0..n {
            if p.fixed[i] {
                rhs[i] = 0.0;
                continue;
            }
            let mut r = rx[i];
            if finite(p.lower[i]) {
                r -= mu / (st.x[i] - p.lower[i]);
            }
            if finite(p.upper[i]) {
                r += mu / (p.upper[i] - st.x[i]);
            }
            rhs[i] = -r;
        }
        for i in 0..m_e {
            rhs[n + i] = -ev.c[i];
        }
        for j in 0..m_i {
            rhs[n + m_e + j] = -ev.d[j] + mu / st.w[j];
        }
        let mut sol = factor.solve(&rhs);
        // iterative refinement against the matrix without dual regularization
        {
            let mut exact = values.clone();
            for i in 0..(m_e + m_i) {
                exact[pattern.diag[n + i]] += delta_c;
            }
            let mut best = residual_norm(&pattern.sym, &exact, &sol, &rhs);
            for _ in 0..3 {
                let ax = pattern.sym.mul_vec(&exact, &sol);
                let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
                let corr = factor.solve(&r);
                let cand: Vec<f64> = sol.iter().zip(&corr).map(|(a, b)| a + b).collect();
                let nr = residual_norm(&pattern.sym, &exact, &cand, &rhs);
                if nr < best {
                    best = nr;
                    sol = cand;
                } else {
                    break;
                }
            }
        }
        let dx: Vec<f64> = sol[..n].to_vec();
        let dy: Vec<f64> = sol[n..n + m_e].iter().map(|v| -v).collect();
        let dw: Vec<f64> = sol[n + m_e..].iter().map(|v| -v).collect();
        let ds: Vec<f64> = (0..m_i)
            .map(|j| {
                let row = &p.ineq[j];
                let mut jd = 0.0;
                for (k, &v) in row.vars.iter().enumerate() {
                    jd += ev.jac_i[j][k] * dx[v];
                }
                jd + ev.d[j] - st.s[j]
            })
            .collect();
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        for i in 0..n {
            if p.fixed[i] {
                continue;
            }
            if finite(p.lower[i]) {
                let gap = st.x[i] - p.lower[i];
                dzl[i] = mu / gap - st.zl[i] - st.zl[i] / gap * dx[i];
            }
            if finite(p.upper[i]) {
                let gap = p.upper[i] - st.x[i];
                dzu[i] = mu / gap - st.zu[i] + st.zu[i] / gap * dx[i];
            }
        }

        // fraction to the boundary
        let tau = 0.99f64.max(1.0 - mu);
        let mut alpha_max: f64 = 1.0;
        for i in 0..n {
            if p.fixed[i] {
                continue;
            }
            if finite(p.lower[i]) && dx[i] < 0.0 {
                alpha_max = alpha_max.min(-tau * (st.x[i] - p.lower[i]) / dx[i]);
            }
            if finite(p.upper[i]) && dx[i] > 0.0 {
                alpha_max = alpha_max.min(tau * (p.upper[i] - st.x[i]) / dx[i]);
            }
        }
        alpha_max = alpha_max.min(max_step(&st.s, &ds, tau, |_| true));
        let alpha_z = max_step(&st.zl, &dzl, tau, |i| !p.fixed[i] && finite(p.lower[i]))
            .min(max_step(&st.zu, &dzu, tau, |i| !p.fixed[i] && finite(p.upper[i])))
            .min(max_step(&st.w, &dw, tau, |_| true));

        // filter line search
        let theta_k = theta(&ev, &st.s);
        let phi_k = barrier_phi(&p, &ev, &st.x, &st.s, mu);
        let mut grad_phi_dir = 0.0;
        for i in 0..n {
            if p.fixed[i] {
                continue;
            }
            let mut gi = ev.grad_f[i];
            if finite(p.lower[i]) {
                gi -= mu / (st.x[i] - p.lower[i]);
            }
            if finite(p.upper[i]) {
                gi += mu / (p.upper[i] - st.x[i]);
            }
            grad_phi_dir += gi * dx[i];
        }
        for j in 0..m_i {
            grad_phi_dir -= mu / st.s[j] * ds[j];
        }
        let alpha_min = {
            let mut a = GAMMA_THETA;
            if grad_phi_dir < 0.0 {
                a = a.min(GAMMA_PHI * theta_k / -grad_phi_dir);
                if theta_k <= theta_min {
                    a = a.min(DELTA_SWITCH * theta_k.powf(S_THETA) / (-grad_phi_dir).powf(S_PHI));
                }
            }
            0.05 * a
        };
        let mut alpha = alpha_max;
        let mut accepted: Option<(Vec<f64>, Vec<f64>, Evaluation, bool)> = None;
        let mut last_trial: Option<(Vec<f64>, Vec<f64>, Evaluation)> = None;
        while alpha >= alpha_min.min(alpha_max) {
            let xt: Vec<f64> = st.x.iter().zip(&dx).map(|(a, b)| a + alpha * b).collect();
            let stv: Vec<f64> = st.s.iter().zip(&ds).map(|(a, b)| a + alpha * b).collect();
            let evt = evaluate(&p, &xt);
            let theta_t = theta(&evt, &stv);
            let phi_t = barrier_phi(&p, &evt, &xt, &stv, mu);
            if theta_t.is_finite() && phi_t.is_finite() && theta_t <= theta_max {
                let switching = grad_phi_dir < 0.0
                    && alpha * (-grad_phi_dir).powf(S_PHI) > DELTA_SWITCH * theta_k.powf(S_THETA);
                if switching && theta_k <= theta_min {
                    if phi_t <= phi_k + ETA_PHI * alpha * grad_phi_dir && filter.acceptable(theta_t, phi_t) {
                        accepted = Some((xt, stv, evt, false));
                        break;
                    }
                } else if (theta_t <= (1.0 - GAMMA_THETA) * theta_k || phi_t <= phi_k - GAMMA_PHI * theta_k)
                    && filter.acceptable(theta_t, phi_t)
                {
                    let augment = !(switching
                        && phi_t <= phi_k + ETA_PHI * alpha * grad_phi_dir);
                    accepted = Some((xt, stv, evt, augment));
                    break;
                }
            }
            if theta_t.is_finite() && phi_t.is_finite() {
                last_trial = Some((xt, stv, evt));
            }
            alpha *= 0.5;
        }
        let (xn, sn, evn) = match accepted {
            Some((xt, stv, evt, augment)) => {
                if augment {
                    filter.add((1.0 - GAMMA_THETA) * theta_k, phi_k - GAMMA_PHI * theta_k);
                }
                consecutive_failures = 0;
                (xt, stv, evt)
            }
            None => {
                // no acceptable point: restart the filter and take the
                // shortest trial step so the iteration can move on
                consecutive_failures += 1;
                filter.entries.clear();
                if consecutive_failures > 15 {
                    status = SolveStatus::NumericalFailure;
                    break;
                }
                match last_trial {
                    Some(t) => {
                        alpha *= 2.0;
                        t
                    }
                    None => {
                        status = SolveStatus::NumericalFailure;
                        break;
                    }
                }
            }
        };
        let step = alpha;
        st.x = xn;
        st.s = sn;
        for i in 0..m_e {
            st.y[i] += step * dy[i];
        }
        for j in 0..m_i {
            st.w[j] += alpha_z * dw[j];
        }
        for i in 0..n {
            st.zl[i] += alpha_z * dzl[i];
            st.zu[i] += alpha_z * dzu[i];
        }
        ev = evn;
        // keep slacks consistent with strictly feasible rows
        // and safeguard the bound multipliers
        for j in 0..m_i {
            let lo = mu / (KAPPA_SIGMA * st.s[j]);
            let hi = KAPPA_SIGMA * mu / st.s[j];
            st.w[j] = st.w[j].clamp(lo, hi);
        }
        for i in 0..n {
            if p.fixed[i] {
                continue;
            }
            if finite(p.lower[i]) {
                let gap = st.x[i] - p.lower[i];
                st.zl[i] = st.zl[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
            }
            if finite(p.upper[i]) {
                let gap = p.upper[i] - st.x[i];
                st.zu[i] = st.zu[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
            }
        }

        let (_, dinf, pinf, _) = optimality_error(&p, &ev, &st, mu);
        let rec = IterationRecord {
            iteration: iter,
            objective: ev.f / p.obj_scale,
            primal_infeasibility: pinf,
            dual_infeasibility: dinf,
            barrier: mu,
            step,
            regularization: delta_w,
        };
        trace!("ipm {:?}", rec);
        log.push(rec);
    }
    if matches!(status, SolveStatus::NumericalFailure | SolveStatus::MaxIterations) {
        if let Some(saved) = fallback {
            debug!("ipm {:?}; returning the last acceptable iterate", status);
            st = saved;
            status = SolveStatus::Acceptable;
        }
    }
    debug!("ipm finished: {:?} after {} iterations (dim {}, nnz(L) {})", status, iter, dim, pattern.sym.factor_nnz());
    let mut sol = unscale(nlp, &p, &st, status, iter, log);
    sol.residual = crate::kkt_residual(nlp, &sol);
    sol
}

fn residual_norm(sym: &SymbolicLdl, values: &[f64], x: &[f64], b: &[f64]) -> f64 {
    let ax = sym.mul_vec(values, x);
    ax.iter()
        .zip(b)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn unscaled_ok(p: &Compiled, ev: &Evaluation, st: &State, opts: &SolverOptions) -> bool {
    for (i, c) in ev.c.iter().enumerate() {
        if (c / p.eq_scale[i]).abs() > opts.constr_viol_tol {
            return false;
        }
    }
    for (j, d) in ev.d.iter().enumerate() {
        let v = d / p.ineq_scale[j];
        if -v > opts.constr_viol_tol {
            return false;
        }
        // complementarity in original units
        let mult = st.w[j] * p.ineq_scale[j] / p.obj_scale;
        if (v.max(0.0) * mult) > opts.compl_tol {
            return false;
        }
    }
    for i in 0..p.n {
        if p.fixed[i] {
            continue;
        }
        if finite(p.lower[i]) && (st.x[i] - p.lower[i]) * st.zl[i] / p.obj_scale > opts.compl_tol {
            return false;
        }
        if finite(p.upper[i]) && (p.upper[i] - st.x[i]) * st.zu[i] / p.obj_scale > opts.compl_tol {
            return false;
        }
    }
    true
}

fn empty_solution(nlp: &SmoothNlp, x: &[f64]) -> NlpSolution {
    let n = nlp.num_vars();
    NlpSolution {
        x: x.to_vec(),
        eq_multipliers: vec![0.0; nlp.equalities.len()],
        ineq_multipliers: vec![0.0; nlp.inequalities.len()],
        cone_multipliers: nlp
            .cones
            .iter()
            .map(|c| ConeDual {
                bound: 0.0,
                components: vec![0.0; c.components.len()],
            })
            .collect(),
        lower_multipliers: vec![0.0; n],
        upper_multipliers: vec![0.0; n],
        objective: nlp.objective.eval(x),
        residual: KktResidual::default(),
        iterations: 0,
        status: SolveStatus::NumericalFailure,
        infeasible_rows: Vec::new(),
        log: Vec::new(),
    }
}

fn unscale(
    nlp: &SmoothNlp,
    p: &Compiled,
    st: &State,
    status: SolveStatus,
    iterations: usize,
    log: Vec<IterationRecord>,
) -> NlpSolution {
    let mut sol = empty_solution(nlp, &st.x);
    sol.status = status;
    sol.iterations = iterations;
    sol.log = log;
    let of = p.obj_scale;
    for (k, &i) in p.eq_origin.iter().enumerate() {
        sol.eq_multipliers[i] = st.y[k] * p.eq_scale[k] / of;
    }
    let mut cone_quad = vec![0.0; nlp.cones.len()];
    let mut cone_bound = vec![0.0; nlp.cones.len()];
    for (k, origin) in p.ineq_origin.iter().enumerate() {
        let m = st.w[k] * p.ineq_scale[k] / of;
        match *origin {
            IneqOrigin::Row(j) => sol.ineq_multipliers[j] = m,
            IneqOrigin::ConeQuad(c) => cone_quad[c] = m,
            IneqOrigin::ConeBound(c) => cone_bound[c] = m,
        }
    }
    for (c, cone) in nlp.cones.iter().enumerate() {
        let t = cone.bound.eval(&st.x);
        sol.cone_multipliers[c] = ConeDual {
            bound: 2.0 * cone_quad[c] * t + cone_bound[c],
            components: cone
                .components
                .iter()
                .map(|v| -2.0 * cone_quad[c] * v.eval(&st.x))
                .collect(),
        };
    }
    // bound multipliers; for fixed variables recover them from stationarity
    let mut grad_l = nlp.objective.gradient(&st.x);
    for (i, row) in nlp.equalities.iter().enumerate() {
        row.add_gradient(&st.x, -sol.eq_multipliers[i], &mut grad_l);
    }
    for (j, row) in nlp.inequalities.iter().enumerate() {
        if matches!(p.lower_src.iter().chain(&p.upper_src).find(|s| matches!(s, BoundSource::Row(r, _) if *r == j)), Some(_)) {
            continue;
        }
        row.add_gradient(&st.x, -sol.ineq_multipliers[j], &mut grad_l);
    }
    for (c, cone) in nlp.cones.iter().enumerate() {
        let d = &sol.cone_multipliers[c];
        cone.bound.add_gradient(&st.x, -d.bound, &mut grad_l);
        for (v, &eta) in cone.components.iter().zip(&d.components) {
            v.add_gradient(&st.x, -eta, &mut grad_l);
        }
    }
    for i in 0..p.n {
        let (zl, zu) = if p.fixed[i] {
            if grad_l[i] >= 0.0 {
                (grad_l[i], 0.0)
            } else {
                (0.0, -grad_l[i])
            }
        } else {
            (st.zl[i] / of, st.zu[i] / of)
        };
        match p.lower_src[i] {
            BoundSource::Native => sol.lower_multipliers[i] = zl,
            BoundSource::Row(j, a) => sol.ineq_multipliers[j] = zl / a,
        }
        match p.upper_src[i] {
            BoundSource::Native => sol.upper_multipliers[i] = zu,
            BoundSource::Row(j, a) => sol.ineq_multipliers[j] = zu / -a,
        }
    }
    sol
}
