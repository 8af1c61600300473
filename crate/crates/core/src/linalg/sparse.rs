use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Accumulates the upper triangle of a symmetric matrix.
///
/// Every entry is summed in insertion order and mirrored only at
/// [`SymBuilder::build`], so the stored matrix is exactly symmetric.
#[derive(Debug, Clone)]
pub struct SymBuilder {
    rows: Vec<BTreeMap<usize, f64>>,
}

impl SymBuilder {
    pub fn new(dim: usize) -> Self {
        Self {
            rows: vec![BTreeMap::new(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        *self.rows[r].entry(c).or_insert(0.0) += value;
    }

    pub fn build(self) -> SparseSym {
        let n = self.rows.len();
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (r, row) in self.rows.iter().enumerate() {
            for (&c, &v) in row {
                per_row[r].push((c, v));
                if c != r {
                    per_row[c].push((r, v));
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in per_row {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseSym {
            dim: n,
            row_ptr,
            cols,
            vals,
        }
    }
}

/// Symmetric sparse matrix in CSR form, both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut b = SymBuilder::new(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            b.add(i, i, d);
        }
        b.build()
    }

    /// Builds from a dense matrix, reading the upper triangle only.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let mut b = SymBuilder::new(m.nrows());
        for i in 0..m.nrows() {
            for j in i..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 || i == j {
                    b.add(i, j, v);
                }
            }
        }
        b.build()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        }
    }

    /// `xᵀ A y`.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.matvec(y))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Largest absolute row sum; an upper bound on the spectral norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.iter()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `i j value` lines for every stored entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# dim {}", self.dim)?;
        for (i, j, v) in self.iter() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        Ok(())
    }

    pub fn read_coo<R: BufRead>(r: R) -> Result<Self> {
        let mut dim = None;
        let mut entries = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# dim") {
                dim = Some(
                    rest.trim()
                        .parse::<usize>()
                        .map_err(|e| Error::Parse(format!("bad dim line: {e}")))?,
                );
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Parse(format!("expected `i j value`, got `{line}`")));
            }
            let i: usize = parts[0].parse().map_err(|e| Error::Parse(format!("{e}")))?;
            let j: usize = parts[1].parse().map_err(|e| Error::Parse(format!("{e}")))?;
            let v: f64 = parts[2].parse().map_err(|e| Error::Parse(format!("{e}")))?;
            entries.push((i, j, v));
        }
        let dim = dim.unwrap_or_else(|| {
            entries
                .iter()
                .map(|&(i, j, _)| i.max(j) + 1)
                .max()
                .unwrap_or(0)
        });
        let mut b = SymBuilder::new(dim);
        for (i, j, v) in entries {
            if i >= dim || j >= dim {
                return Err(Error::Parse(format!("entry ({i},{j}) outside dim {dim}")));
            }
            if i <= j {
                b.add(i, j, v);
            }
        }
        Ok(b.build())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_mirrors_exactly() {
        let mut b = SymBuilder::new(3);
        b.add(0, 1, 0.1);
        b.add(1, 0, 0.2);
        b.add(2, 2, 1.0);
        let a = b.build();
        assert_eq!(a.get(0, 1), a.get(1, 0));
        assert_eq!(a.max_asymmetry(), 0.0);
        assert!((a.get(0, 1) - 0.30000000000000004).abs() < 1e-16);
    }

    #[test]
    fn coo_text_round_trip() {
        let mut b = SymBuilder::new(4);
        b.add(0, 0, 2.0);
        b.add(0, 3, -1.25);
        b.add(2, 1, 1e-7);
        let a = b.build();
        let mut buf = Vec::new();
        a.write_coo(&mut buf).unwrap();
        let back = SparseSym::read_coo(buf.as_slice()).unwrap();
        assert_eq!(a, back);
    }
}
