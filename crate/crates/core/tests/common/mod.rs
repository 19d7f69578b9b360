//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use tdm_core::program::{ConvexProgram, Sense, Sym};

/// Dense LP `min c x  s.t.  A x = b, G x >= h` solved by enumerating every
/// basic solution. Only for a handful of variables.
pub struct DenseLp {
    pub c: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub ge: Vec<(Vec<f64>, f64)>,
}

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for k in col..n {
                        a[r][k] -= f * a[col][k];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn combinations(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in start..n {
        cur.push(i);
        combinations(n, k, i + 1, cur, out);
        cur.pop();
    }
}

impl DenseLp {
    /// Extract from a parameter-free program with no cones.
    pub fn from_program(p: &ConvexProgram) -> DenseLp {
        let params = p.param_values();
        let n = p.vars.len();
        let dense = |e: &tdm_core::program::Lin| {
            let mut row = vec![0.0; n];
            for &(s, c) in &e.terms {
                if let Sym::Var(i) = s {
                    row[i] += c;
                }
            }
            (row, -e.offset(&params))
        };
        let mut lp = DenseLp {
            c: p.cost.iter().map(|c| c.offset(&params)).collect(),
            eq: Vec::new(),
            ge: Vec::new(),
        };
        for r in &p.rows {
            match r.sense {
                Sense::Eq => lp.eq.push(dense(&r.expr)),
                Sense::Ge => lp.ge.push(dense(&r.expr)),
            }
        }
        lp
    }

    /// Optimal value and a minimizer, or `None` when infeasible.
    pub fn solve(&self) -> Option<(f64, Vec<f64>)> {
        let n = self.c.len();
        let k = n.checked_sub(self.eq.len())?;
        let mut combos = Vec::new();
        combinations(self.ge.len(), k, 0, &mut Vec::new(), &mut combos);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for set in combos {
            let mut a: Vec<Vec<f64>> = self.eq.iter().map(|r| r.0.clone()).collect();
            let mut b: Vec<f64> = self.eq.iter().map(|r| r.1).collect();
            for &i in &set {
                a.push(self.ge[i].0.clone());
                b.push(self.ge[i].1);
            }
            let Some(x) = solve_square(a, b) else { continue };
            let dot = |r: &[f64]| r.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            let feasible = self.eq.iter().all(|(r, v)| (dot(r) - v).abs() < 1e-7)
                && self.ge.iter().all(|(r, v)| dot(r) >= v - 1e-7);
            if feasible {
                let obj = dot(&self.c);
                if best.as_ref().map_or(true, |(o, _)| obj < *o - 1e-12) {
                    best = Some((obj, x));
                }
            }
        }
        best
    }
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}
