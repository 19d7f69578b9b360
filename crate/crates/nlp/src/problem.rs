use crate::expr::QuadExpr;

/// Second-order cone row `bound >= ||components||₂` with affine pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeRow {
    pub bound: QuadExpr,
    pub components: Vec<QuadExpr>,
}

/// Smooth, bounded program
///
/// ```txt
///   min  f(x)
///   s.t. c_i(x)  = 0        (equalities)
///        d_j(x) >= 0        (inequalities)
///        t_k(x) >= ||v_k(x)||  (cones)
///        lower <= x <= upper
/// ```
///
/// where every function is affine or quadratic.
#[derive(Debug, Clone, Default)]
pub struct SmoothNlp {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: QuadExpr,
    pub equalities: Vec<QuadExpr>,
    pub inequalities: Vec<QuadExpr>,
    pub cones: Vec<ConeRow>,
}

impl SmoothNlp {
    pub fn new(n: usize) -> Self {
        SmoothNlp {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64) -> usize {
        self.lower.push(lower);
        self.upper.push(upper);
        self.lower.len() - 1
    }

    pub fn add_equality(&mut self, row: QuadExpr) -> usize {
        self.equalities.push(row);
        self.equalities.len() - 1
    }

    pub fn add_inequality(&mut self, row: QuadExpr) -> usize {
        self.inequalities.push(row);
        self.inequalities.len() - 1
    }

    pub fn add_cone(&mut self, cone: ConeRow) -> usize {
        self.cones.push(cone);
        self.cones.len() - 1
    }

    pub fn is_convex_structure(&self) -> bool {
        self.objective.is_affine()
            && self.equalities.iter().all(QuadExpr::is_affine)
            && self.inequalities.iter().all(QuadExpr::is_affine)
            && self
                .cones
                .iter()
                .all(|c| c.bound.is_affine() && c.components.iter().all(QuadExpr::is_affine))
    }

    /// Maximum violation of all constraints and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            v = v.max(self.lower[i] - xi).max(xi - self.upper[i]);
        }
        for row in &self.equalities {
            v = v.max(row.eval(x).abs());
        }
        for row in &self.inequalities {
            v = v.max(-row.eval(x));
        }
        for cone in &self.cones {
            let t = cone.bound.eval(x);
            let norm = cone
                .components
                .iter()
                .map(|c| c.eval(x).powi(2))
                .sum::<f64>()
                .sqrt();
            v = v.max(norm - t);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Stopped after the optimality error stayed below the acceptable
    /// tolerance for several iterations without reaching the tight one.
    Acceptable,
    MaxIterations,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Acceptable)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Acceptable => "acceptable",
            SolveStatus::MaxIterations => "max-iter",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical-failure",
        }
    }
}

/// Dual of a cone row: `(eta_t, eta_v)` with `eta_t >= ||eta_v||` and
/// `eta_t * t + eta_v · v = 0` at a solution. The Lagrangian carries the
/// term `-(eta_t * t + eta_v · v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeDual {
    pub bound: f64,
    pub components: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub barrier: f64,
    pub step: f64,
    pub regularization: f64,
}

/// Result of a solve. Multiplier signs follow the Lagrangian
/// `f - yᵀc - wᵀd - Σ(eta_t t + eta_vᵀv) - z_lᵀ(x - l) - z_uᵀ(u - x)`.
#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    pub cone_multipliers: Vec<ConeDual>,
    pub lower_multipliers: Vec<f64>,
    pub upper_multipliers: Vec<f64>,
    pub objective: f64,
    pub residual: KktResidual,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Rows (by kind and index) with positive elastic violation when the
    /// problem was declared infeasible.
    pub infeasible_rows: Vec<RowRef>,
    pub log: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RowRef {
    Equality(usize),
    Inequality(usize),
    Cone(usize),
    Bound(usize),
}

impl NlpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status.is_success()
    }

    /// Iteration log in the plain-text layout written to `nlp_log.txt`.
    pub fn log_text(&self) -> String {
        let mut s = String::from("iter objective inf_pr inf_du mu alpha reg\n");
        for r in &self.log {
            s.push_str(&format!(
                "{} {:.10e} {:.3e} {:.3e} {:.3e} {:.3e} {:.3e}\n",
                r.iteration,
                r.objective,
                r.primal_infeasibility,
                r.dual_infeasibility,
                r.barrier,
                r.step,
                r.regularization
            ));
        }
        s
    }
}

/// Starting point, optionally with multiplier estimates for warm starts.
#[derive(Debug, Clone, Default)]
pub struct StartPoint {
    pub x: Vec<f64>,
    pub eq_multipliers: Option<Vec<f64>>,
    pub ineq_multipliers: Option<Vec<f64>>,
}

impl StartPoint {
    pub fn primal(x: Vec<f64>) -> Self {
        StartPoint {
            x,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Scaled KKT tolerance.
    pub tol: f64,
    /// Absolute tolerance on unscaled constraint violation.
    pub constr_viol_tol: f64,
    /// Absolute tolerance on unscaled complementarity.
    pub compl_tol: f64,
    pub max_iter: usize,
    pub mu_init: f64,
    pub bound_push: f64,
    /// Try an elastic solve to certify infeasibility after a failure.
    pub detect_infeasibility: bool,
    /// Looser scaled optimality tolerance accepted after
    /// `acceptable_iter` consecutive iterations below it.
    pub acceptable_tol: f64,
    pub acceptable_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            constr_viol_tol: 1e-8,
            compl_tol: 1e-8,
            max_iter: 500,
            mu_init: 0.1,
            bound_push: 1e-2,
            detect_infeasibility: true,
            acceptable_tol: 1e-7,
            acceptable_iter: 10,
        }
    }
}
