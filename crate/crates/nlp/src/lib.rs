//! Sparse primal-dual interior-point solver for smooth programs whose
//! functions are at most quadratic, with second-order cone rows.

pub mod elastic;
pub mod expr;
pub mod ipm;
pub mod problem;
pub mod sparse;

pub use expr::{QuadExpr, SmoothFunction};
pub use ipm::solve;
pub use problem::{
    ConeDual, ConeRow, IterationRecord, KktResidual, NlpSolution, RowRef, SmoothNlp, SolveStatus,
    SolverOptions, StartPoint,
};

/// KKT residual of `sol` measured on the original (unscaled) problem.
///
/// Stationarity is the max-norm of the Lagrangian gradient, feasibility the
/// largest constraint or bound violation and complementarity the largest
/// product of a constraint value and its multiplier.
pub fn kkt_residual(nlp: &SmoothNlp, sol: &NlpSolution) -> KktResidual {
    let x = &sol.x;
    let mut g = nlp.objective.gradient(x);
    let mut comp: f64 = 0.0;
    for (row, &y) in nlp.equalities.iter().zip(&sol.eq_multipliers) {
        row.add_gradient(x, -y, &mut g);
    }
    for (row, &w) in nlp.inequalities.iter().zip(&sol.ineq_multipliers) {
        row.add_gradient(x, -w, &mut g);
        comp = comp.max((row.eval(x) * w).abs());
    }
    for (cone, dual) in nlp.cones.iter().zip(&sol.cone_multipliers) {
        cone.bound.add_gradient(x, -dual.bound, &mut g);
        let mut inner = dual.bound * cone.bound.eval(x);
        for (v, &eta) in cone.components.iter().zip(&dual.components) {
            v.add_gradient(x, -eta, &mut g);
            inner += eta * v.eval(x);
        }
        comp = comp.max(inner.abs());
    }
    for i in 0..x.len() {
        g[i] -= sol.lower_multipliers[i];
        g[i] += sol.upper_multipliers[i];
        if nlp.lower[i].is_finite() {
            comp = comp.max(((x[i] - nlp.lower[i]) * sol.lower_multipliers[i]).abs());
        }
        if nlp.upper[i].is_finite() {
            comp = comp.max(((nlp.upper[i] - x[i]) * sol.upper_multipliers[i]).abs());
        }
    }
    KktResidual {
        stationarity: g.iter().fold(0.0, |m, v| m.max(v.abs())),
        feasibility: nlp.max_violation(x).max(0.0),
        complementarity: comp,
    }
}

/// Largest relative mismatch between `f.gradient(x)` and central finite
/// differences with step `h`.
pub fn check_derivatives(f: &dyn SmoothFunction, x: &[f64], h: f64) -> f64 {
    let g = f.gradient(x);
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        xp[i] = x[i] + step;
        let fp = f.value(&xp);
        xp[i] = x[i] - step;
        let fm = f.value(&xp);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * step);
        let err = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}
