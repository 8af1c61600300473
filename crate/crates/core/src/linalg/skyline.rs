//! Envelope (skyline) Cholesky factorization with reverse Cuthill–McKee
//! reordering. Structured FE matrices on grids have envelopes of width
//! `O(√n)`, which keeps every direct solve in this crate well below a
//! second.

use std::collections::VecDeque;

use super::sparse::SparseSym;
use crate::error::{Error, Result};

/// Reverse Cuthill–McKee ordering. Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(a: &SparseSym) -> Vec<usize> {
    let n = a.dim();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while order.len() < n {
        // Lowest-degree unvisited node, then walk to a pseudo-peripheral one.
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited node exists");
        let start = pseudo_peripheral(seed, &adj, &degree, &visited);

        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize], blocked: &[bool]) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(node, adj, blocked);
        let depth = *levels.iter().filter_map(|l| l.as_ref()).max().unwrap_or(&0);
        if depth <= ecc && ecc > 0 {
            break;
        }
        ecc = depth;
        node = levels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(depth))
            .min_by_key(|&(i, _)| (degree[i], i))
            .map(|(i, _)| i)
            .unwrap_or(node);
    }
    node
}

fn bfs_levels(start: usize, adj: &[Vec<usize>], blocked: &[bool]) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[start] = Some(0);
    let mut q = VecDeque::from([start]);
    while let Some(v) = q.pop_front() {
        let l = level[v].unwrap();
        for &w in &adj[v] {
            if !blocked[w] && level[w].is_none() {
                level[w] = Some(l + 1);
                q.push_back(w);
            }
        }
    }
    level
}

/// `P A Pᵀ = L Lᵀ` with `L` stored row-wise inside its envelope.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    n: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(a: &SparseSym) -> Result<Self> {
        Self::factor_with(a, rcm_ordering(a))
    }

    pub fn factor_with(a: &SparseSym, perm: Vec<usize>) -> Result<Self> {
        let n = a.dim();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old_i, old_j, _) in a.iter() {
            let (i, j) = (inv[old_i], inv[old_j]);
            if j < first[i] {
                first[i] = j;
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i] + 1));
        }
        let mut data = vec![0.0; offset[n]];
        for (old_i, old_j, v) in a.iter() {
            let (i, j) = (inv[old_i], inv[old_j]);
            if j <= i {
                data[offset[i] + (j - first[i])] = v;
            }
        }

        for i in 0..n {
            let fi = first[i];
            let row_i = offset[i];
            for j in fi..i {
                let fj = first[j];
                let row_j = offset[j];
                let k0 = fi.max(fj);
                let mut s = data[row_i + (j - fi)];
                for k in k0..j {
                    s -= data[row_i + (k - fi)] * data[row_j + (k - fj)];
                }
                data[row_i + (j - fi)] = s / data[row_j + (j - fj)];
            }
            let mut d = data[row_i + (i - fi)];
            for k in fi..i {
                let l = data[row_i + (k - fi)];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: perm[i],
                    value: d,
                });
            }
            data[row_i + (i - fi)] = d.sqrt();
        }

        Ok(Self {
            n,
            perm,
            inv,
            first,
            offset,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.data[self.offset[i] + (j - self.first[i])]
    }

    /// Solves `L y = P b` (result in permuted order).
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = (0..self.n).map(|i| b[self.perm[i]]).collect();
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let mut s = y[i];
            for (k, &l) in (fi..i).zip(row) {
                s -= l * y[k];
            }
            y[i] = s / row[i - fi];
        }
        y
    }

    /// Solves `Lᵀ z = y` and undoes the permutation.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let mut z = y.to_vec();
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            z[i] /= self.l(i, i);
            let zi = z[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            for (k, &l) in (fi..i).zip(row) {
                z[k] -= l * zi;
            }
        }
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            x[self.perm[i]] = z[i];
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Position of original index `i` in the factor ordering.
    pub fn permuted_index(&self, i: usize) -> usize {
        self.inv[i]
    }
}
