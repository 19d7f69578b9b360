//! Quadratic expressions with explicit sparse structure.
//!
//! Every function handled by the solver is at most quadratic: a constant,
//! a sparse linear part and a sparse list of products `x_i * x_j`. This is
//! enough for the linear clearing programs, the bilinear price-times-quantity
//! leader objectives and the relaxed complementarity products, and it gives
//! exact first and second derivatives for free.

use std::collections::BTreeMap;

/// `constant + sum(coef * x_i) + sum(coef * x_i * x_j)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadExpr {
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    /// Products `coef * x_i * x_j`; `i == j` denotes a square.
    pub quadratic: Vec<(usize, usize, f64)>,
}

impl QuadExpr {
    pub fn constant(value: f64) -> Self {
        QuadExpr {
            constant: value,
            ..Default::default()
        }
    }

    pub fn var(index: usize) -> Self {
        Self::term(index, 1.0)
    }

    pub fn term(index: usize, coef: f64) -> Self {
        QuadExpr {
            constant: 0.0,
            linear: vec![(index, coef)],
            quadratic: Vec::new(),
        }
    }

    pub fn product(i: usize, j: usize, coef: f64) -> Self {
        QuadExpr {
            constant: 0.0,
            linear: Vec::new(),
            quadratic: vec![(i, j, coef)],
        }
    }

    pub fn add_constant(&mut self, value: f64) -> &mut Self {
        self.constant += value;
        self
    }

    pub fn add_term(&mut self, index: usize, coef: f64) -> &mut Self {
        self.linear.push((index, coef));
        self
    }

    pub fn add_product(&mut self, i: usize, j: usize, coef: f64) -> &mut Self {
        self.quadratic.push((i, j, coef));
        self
    }

    pub fn add_scaled(&mut self, other: &QuadExpr, scale: f64) -> &mut Self {
        self.constant += scale * other.constant;
        self.linear
            .extend(other.linear.iter().map(|&(i, c)| (i, scale * c)));
        self.quadratic
            .extend(other.quadratic.iter().map(|&(i, j, c)| (i, j, scale * c)));
        self
    }

    pub fn scaled(&self, scale: f64) -> QuadExpr {
        let mut out = QuadExpr::default();
        out.add_scaled(self, scale);
        out
    }

    /// Product of two affine expressions. Panics if either has quadratic terms.
    pub fn mul_affine(a: &QuadExpr, b: &QuadExpr) -> QuadExpr {
        assert!(a.is_affine() && b.is_affine(), "mul_affine needs affine inputs");
        let mut out = QuadExpr::constant(a.constant * b.constant);
        for &(i, c) in &a.linear {
            out.linear.push((i, c * b.constant));
        }
        for &(j, c) in &b.linear {
            out.linear.push((j, c * a.constant));
        }
        for &(i, ci) in &a.linear {
            for &(j, cj) in &b.linear {
                out.quadratic.push((i, j, ci * cj));
            }
        }
        out.canonical()
    }

    pub fn is_affine(&self) -> bool {
        self.quadratic.iter().all(|&(_, _, c)| c == 0.0)
    }

    /// Merge duplicate terms, order products as `i <= j` and drop zeros.
    pub fn canonical(&self) -> QuadExpr {
        let mut lin: BTreeMap<usize, f64> = BTreeMap::new();
        for &(i, c) in &self.linear {
            *lin.entry(i).or_insert(0.0) += c;
        }
        let mut quad: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, c) in &self.quadratic {
            let key = if i <= j { (i, j) } else { (j, i) };
            *quad.entry(key).or_insert(0.0) += c;
        }
        QuadExpr {
            constant: self.constant,
            linear: lin.into_iter().filter(|&(_, c)| c != 0.0).collect(),
            quadratic: quad
                .into_iter()
                .filter(|&(_, c)| c != 0.0)
                .map(|((i, j), c)| (i, j, c))
                .collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for &(i, c) in &self.linear {
            v += c * x[i];
        }
        for &(i, j, c) in &self.quadratic {
            v += c * x[i] * x[j];
        }
        v
    }

    /// Dense gradient accumulated into `out` (scaled by `scale`).
    pub fn add_gradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        for &(i, c) in &self.linear {
            out[i] += scale * c;
        }
        for &(i, j, c) in &self.quadratic {
            if i == j {
                out[i] += scale * 2.0 * c * x[i];
            } else {
                out[i] += scale * c * x[j];
                out[j] += scale * c * x[i];
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.add_gradient(x, 1.0, &mut g);
        g
    }

    /// Sorted, de-duplicated indices of the variables the expression touches.
    pub fn support(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .linear
            .iter()
            .map(|&(i, _)| i)
            .chain(self.quadratic.iter().flat_map(|&(i, j, _)| [i, j]))
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.linear
            .iter()
            .map(|&(_, c)| c.abs())
            .chain(self.quadratic.iter().map(|&(_, _, c)| c.abs()))
            .fold(0.0, f64::max)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.support().last().copied()
    }
}

/// Differentiable scalar function of a dense point; used by the derivative
/// checker so that user-supplied (possibly wrong) gradients can be audited.
pub trait SmoothFunction {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

impl SmoothFunction for QuadExpr {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        QuadExpr::gradient(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_gradient_of_bilinear() {
        let mut e = QuadExpr::constant(1.0);
        e.add_term(0, 2.0).add_product(0, 1, 3.0).add_product(1, 1, 0.5);
        let x = [2.0, -1.0];
        assert_eq!(e.eval(&x), 1.0 + 4.0 - 6.0 + 0.5);
        assert_eq!(e.gradient(&x), vec![2.0 - 3.0, 6.0 - 1.0]);
    }

    #[test]
    fn canonical_merges_and_orders() {
        let mut e = QuadExpr::default();
        e.add_term(3, 1.0)
            .add_term(3, -1.0)
            .add_product(2, 1, 1.0)
            .add_product(1, 2, 2.0);
        let c = e.canonical();
        assert!(c.linear.is_empty());
        assert_eq!(c.quadratic, vec![(1, 2, 3.0)]);
    }

    #[test]
    fn mul_affine_expands() {
        let mut a = QuadExpr::constant(2.0);
        a.add_term(0, 1.0);
        let b = QuadExpr::var(1);
        let p = QuadExpr::mul_affine(&a, &b);
        let x = [3.0, 4.0];
        assert_eq!(p.eval(&x), (2.0 + 3.0) * 4.0);
    }
}
