//! Elastic (ℓ1) feasibility problem used to certify infeasibility.

use crate::expr::QuadExpr;
use crate::problem::{ConeRow, RowRef, SmoothNlp, SolverOptions, StartPoint};

/// Minimize the total violation of the equality, inequality and cone rows of
/// `nlp` while keeping its variable bounds. Returns the optimal violation
/// (if the elastic problem solved) and the rows that remain violated.
pub fn minimize_violation(
    nlp: &SmoothNlp,
    x0: &[f64],
    opts: &SolverOptions,
) -> (Option<f64>, Vec<RowRef>) {
    let n = nlp.num_vars();
    let mut el = SmoothNlp {
        lower: nlp.lower.clone(),
        upper: nlp.upper.clone(),
        ..Default::default()
    };
    let mut x: Vec<f64> = x0.to_vec();
    let mut objective = QuadExpr::default();
    let mut owners = Vec::new();
    for (i, row) in nlp.equalities.iter().enumerate() {
        let v = row.eval(x0);
        let p = el.add_var(0.0, f64::INFINITY);
        let m = el.add_var(0.0, f64::INFINITY);
        x.push(v.max(0.0) + 1.0);
        x.push((-v).max(0.0) + 1.0);
        objective.add_term(p, 1.0).add_term(m, 1.0);
        let mut r = row.clone();
        r.add_term(p, -1.0).add_term(m, 1.0);
        el.add_equality(r);
        owners.push((RowRef::Equality(i), vec![p, m]));
    }
    for (j, row) in nlp.inequalities.iter().enumerate() {
        let v = row.eval(x0);
        let t = el.add_var(0.0, f64::INFINITY);
        x.push((-v).max(0.0) + 1.0);
        objective.add_term(t, 1.0);
        let mut r = row.clone();
        r.add_term(t, 1.0);
        el.add_inequality(r);
        owners.push((RowRef::Inequality(j), vec![t]));
    }
    for (k, cone) in nlp.cones.iter().enumerate() {
        let t = el.add_var(0.0, f64::INFINITY);
        x.push(1.0 + nlp.max_violation(x0).max(0.0));
        objective.add_term(t, 1.0);
        let mut bound = cone.bound.clone();
        bound.add_term(t, 1.0);
        el.add_cone(ConeRow {
            bound,
            components: cone.components.clone(),
        });
        owners.push((RowRef::Cone(k), vec![t]));
    }
    el.objective = objective;
    let mut inner = opts.clone();
    inner.detect_infeasibility = false;
    let sol = crate::ipm::solve_inner(&el, &StartPoint::primal(x), &inner);
    if !sol.is_optimal() {
        return (None, Vec::new());
    }
    let thresh = opts.constr_viol_tol.max(1e-6);
    let rows = owners
        .into_iter()
        .filter(|(_, vars)| vars.iter().map(|&v| sol.x[v]).sum::<f64>() > thresh)
        .map(|(r, _)| r)
        .collect();
    debug_assert!(sol.x.len() >= n);
    (Some(sol.objective), rows)
}
