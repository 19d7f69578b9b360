//! Sparse symmetric LDLᵀ factorization without pivoting.
//!
//! The interior-point KKT systems are symmetric and, after primal/dual
//! regularization, quasi-definite, so a static fill-reducing ordering plus an
//! up-looking LDLᵀ (elimination-tree driven) factors them for any ordering.
//! The signs of `D` give the inertia used by the Hessian correction.

use std::collections::BTreeSet;

const NONE: usize = usize::MAX;

/// Greedy minimum-degree ordering of a symmetric sparsity graph.
///
/// `edges` lists off-diagonal pairs in any order; duplicates are ignored.
/// Ties are broken by the smallest node index so the ordering is
/// deterministic.
pub fn minimum_degree_order(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(i, j) in edges {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (a, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[a + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            if !eliminated[u] {
                queue.insert((adj[u].len(), u));
            }
        }
    }
    order
}

/// Fixed sparsity structure of a symmetric matrix, permuted and stored as
/// the upper triangle in compressed columns, with the symbolic factor.
#[derive(Debug, Clone)]
pub struct SymbolicLdl {
    n: usize,
    /// `perm[k]` is the original index placed at position `k`.
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Slot in the value array for every entry the caller registered.
    entry_slot: Vec<usize>,
    etree: Vec<usize>,
    l_col_ptr: Vec<usize>,
}

impl SymbolicLdl {
    /// `entries` are `(row, col)` positions in original numbering; both
    /// triangles may be given (they are folded onto the upper triangle).
    /// Every diagonal position is always part of the structure.
    pub fn new(n: usize, entries: &[(usize, usize)]) -> Self {
        let edges: Vec<(usize, usize)> = entries.iter().copied().filter(|&(i, j)| i != j).collect();
        let perm = minimum_degree_order(n, &edges);
        let mut iperm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        // permuted upper-triangle coordinates
        let mut coords: Vec<(usize, usize)> = entries
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (iperm[i], iperm[j]);
                if a <= b {
                    (b, a)
                } else {
                    (a, b)
                }
            })
            .collect();
        // (col, row) keys for column-major order
        let mut keys: Vec<(usize, usize)> = coords.clone();
        keys.extend((0..n).map(|k| (k, k)));
        keys.sort_unstable();
        keys.dedup();

        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(keys.len());
        for &(c, r) in &keys {
            col_ptr[c + 1] += 1;
            row_idx.push(r);
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        let entry_slot = coords
            .drain(..)
            .map(|key| keys.binary_search(&key).expect("registered entry"))
            .collect();

        // elimination tree and column counts
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &r in &row_idx[col_ptr[j]..col_ptr[j + 1]] {
                let mut i = r;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut l_col_ptr = vec![0usize; n + 1];
        for i in 0..n {
            l_col_ptr[i + 1] = l_col_ptr[i] + lnz[i];
        }

        SymbolicLdl {
            n,
            perm,
            col_ptr,
            row_idx,
            entry_slot,
            etree,
            l_col_ptr,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_col_ptr[self.n]
    }

    /// Slot of the `k`-th entry passed to [`SymbolicLdl::new`].
    pub fn slot(&self, entry: usize) -> usize {
        self.entry_slot[entry]
    }

    /// Slot of the diagonal entry of original index `i`.
    pub fn diag_slot(&self, i: usize) -> usize {
        // diagonal is the last entry of its column in the upper triangle
        let k = self.position(i);
        self.col_ptr[k + 1] - 1
    }

    fn position(&self, i: usize) -> usize {
        // perm is small enough that a linear inverse map is built lazily by callers
        self.perm.iter().position(|&p| p == i).expect("index in range")
    }

    pub fn diag_slots(&self) -> Vec<usize> {
        let mut slots = vec![0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            slots[p] = self.col_ptr[k + 1] - 1;
        }
        slots
    }

    /// Numeric LDLᵀ of the matrix whose (summed) values live in `values`.
    pub fn factor(&self, values: &[f64]) -> Result<LdlFactor, FactorError> {
        let n = self.n;
        let lnnz = self.l_col_ptr[n];
        let mut li = vec![0usize; lnnz];
        let mut lx = vec![0.0f64; lnnz];
        let mut d = vec![0.0f64; n];
        let mut dinv = vec![0.0f64; n];
        let mut next = self.l_col_ptr[..n].to_vec();
        let mut y_vals = vec![0.0f64; n];
        let mut y_mark = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut buffer = vec![0usize; n];

        for k in 0..n {
            let mut nnz_y = 0;
            for p in self.col_ptr[k]..self.col_ptr[k + 1] {
                let b = self.row_idx[p];
                if b == k {
                    d[k] = values[p];
                    continue;
                }
                y_vals[b] = values[p];
                if !y_mark[b] {
                    y_mark[b] = true;
                    buffer[0] = b;
                    let mut n_e = 1;
                    let mut nxt = self.etree[b];
                    while nxt != NONE && nxt < k {
                        if y_mark[nxt] {
                            break;
                        }
                        y_mark[nxt] = true;
                        buffer[n_e] = nxt;
                        n_e += 1;
                        nxt = self.etree[nxt];
                    }
                    while n_e > 0 {
                        n_e -= 1;
                        y_idx[nnz_y] = buffer[n_e];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let tmp = next[c];
                let yc = y_vals[c];
                for j in self.l_col_ptr[c]..tmp {
                    y_vals[li[j]] -= lx[j] * yc;
                }
                li[tmp] = k;
                lx[tmp] = yc * dinv[c];
                d[k] -= yc * lx[tmp];
                next[c] += 1;
                y_vals[c] = 0.0;
                y_mark[c] = false;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(FactorError::ZeroPivot(self.perm[k]));
            }
            dinv[k] = 1.0 / d[k];
        }
        Ok(LdlFactor {
            perm: self.perm.clone(),
            l_col_ptr: self.l_col_ptr.clone(),
            li,
            lx,
            d,
        })
    }

    /// `y = A x` for the symmetric matrix stored in `values` (original numbering).
    pub fn mul_vec(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for c in 0..n {
            let oc = self.perm[c];
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                let or = self.perm[r];
                let v = values[p];
                y[or] += v * x[oc];
                if r != c {
                    y[oc] += v * x[or];
                }
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorError {
    ZeroPivot(usize),
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    perm: Vec<usize>,
    l_col_ptr: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    /// Number of positive and negative pivots.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|&&v| v > 0.0).count();
        (pos, self.d.len() - pos)
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            let xi = x[i];
            for j in self.l_col_ptr[i]..self.l_col_ptr[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut xi = x[i];
            for j in self.l_col_ptr[i]..self.l_col_ptr[i + 1] {
                xi -= self.lx[j] * x[self.li[j]];
            }
            x[i] = xi;
        }
        let mut out = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            out[p] = x[k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_from(n: usize, entries: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; n]; n];
        for &(i, j, v) in entries {
            a[i][j] += v;
            if i != j {
                a[j][i] += v;
            }
        }
        a
    }

    fn assemble(sym: &SymbolicLdl, entries: &[(usize, usize, f64)]) -> Vec<f64> {
        let mut values = vec![0.0; sym.nnz()];
        for (k, &(_, _, v)) in entries.iter().enumerate() {
            values[sym.slot(k)] += v;
        }
        values
    }

    #[test]
    fn factor_small_quasidefinite() {
        // [4 1 2; 1 3 0; 2 0 -1]
        let entries = vec![
            (0, 0, 4.0),
            (1, 1, 3.0),
            (2, 2, -1.0),
            (0, 1, 1.0),
            (0, 2, 2.0),
        ];
        let pattern: Vec<_> = entries.iter().map(|&(i, j, _)| (i, j)).collect();
        let sym = SymbolicLdl::new(3, &pattern);
        let values = assemble(&sym, &entries);
        let f = sym.factor(&values).unwrap();
        assert_eq!(f.inertia(), (2, 1));
        let b = [1.0, 2.0, 3.0];
        let x = f.solve(&b);
        let a = dense_from(3, &entries);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let entries = vec![(0, 0, 0.0), (1, 1, 1.0)];
        let pattern: Vec<_> = entries.iter().map(|&(i, j, _)| (i, j)).collect();
        let sym = SymbolicLdl::new(2, &pattern);
        let values = assemble(&sym, &entries);
        assert!(sym.factor(&values).is_err());
    }

    #[test]
    fn ordering_is_a_permutation() {
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)];
        let mut p = minimum_degree_order(4, &edges);
        p.sort_unstable();
        assert_eq!(p, vec![0, 1, 2, 3]);
    }

    proptest! {
        #[test]
        fn solves_random_quasidefinite(
            n_p in 1usize..8, n_d in 0usize..5,
            vals in proptest::collection::vec(-1.0f64..1.0, 200),
            mask in proptest::collection::vec(0u8..3, 200),
        ) {
            let n = n_p + n_d;
            let mut entries = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if mask[k % 200] == 0 {
                        entries.push((i, j, vals[k % 200]));
                    }
                    k += 1;
                }
            }
            for i in 0..n {
                // diagonally dominant blocks of opposite sign
                let v = if i < n_p { n as f64 + 1.0 } else { -(n as f64) - 1.0 };
                entries.push((i, i, v));
            }
            let pattern: Vec<_> = entries.iter().map(|&(i, j, _)| (i, j)).collect();
            let sym = SymbolicLdl::new(n, &pattern);
            let values = assemble(&sym, &entries);
            let f = sym.factor(&values).unwrap();
            prop_assert_eq!(f.inertia(), (n_p, n_d));
            let b: Vec<f64> = (0..n).map(|i| (i as f64) - 1.5).collect();
            let x = f.solve(&b);
            let ax = sym.mul_vec(&values, &x);
            for i in 0..n {
                prop_assert!((ax[i] - b[i]).abs() < 1e-9);
            }
        }
    }
}
