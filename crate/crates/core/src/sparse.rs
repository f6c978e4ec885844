//! Minimal CSR sparse matrix: triplet assembly, products, and Matrix Market
//! export. Factorizations are delegated to `faer` in the solver.

use std::io::{BufWriter, Write};
use std::path::Path;

/// Accumulator for duplicate-summing triplet assembly.
#[derive(Debug, Clone)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, val));
    }

    pub fn extend(&mut self, other: Triplets) {
        debug_assert!(other.nrows == self.nrows && other.ncols == self.ncols);
        self.entries.extend(other.entries);
    }

    pub fn to_csr(mut self) -> SpMat {
        self.entries
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut counts = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut data: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            data.push(v);
            counts[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        SpMat {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: counts,
            indices,
            data,
        }
    }
}

/// Compressed-row sparse matrix.
#[derive(Debug, Clone)]
pub struct SpMat {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl SpMat {
    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[r]..self.indptr[r + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.data[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r)
            .find(|&(j, _)| j == c)
            .map(|(_, v)| v)
            .unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for idx in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[idx] * x[self.indices[idx]];
            }
            y[r] = acc;
        }
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for idx in self.indptr[r]..self.indptr[r + 1] {
                y[self.indices[idx]] += self.data[idx] * xr;
            }
        }
        y
    }

    /// Largest absolute asymmetry `|A - A^T|_max`, for symmetry audits.
    pub fn max_asymmetry(&self) -> f64 {
        let mut max = 0.0f64;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                max = max.max((v - self.get(c, r)).abs());
            }
        }
        max
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn to_faer(&self) -> faer::sparse::SparseColMat<usize, f64> {
        let mut trips = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                trips.push(faer::sparse::Triplet::new(r, c, v));
            }
        }
        faer::sparse::SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trips)
            .expect("valid triplets")
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based).
    pub fn write_matrix_market(&self, path: &Path, comment: &str) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "% {}", comment)?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                writeln!(w, "{} {} {:.17e}", r + 1, c + 1, v)?;
            }
        }
        w.flush()
    }
}

/// Writes a dense vector in Matrix Market array format.
pub fn write_vector_matrix_market(v: &[f64], path: &Path, comment: &str) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "% {}", comment)?;
    writeln!(w, "{} 1", v.len())?;
    for x in v {
        writeln!(w, "{:.17e}", x)?;
    }
    w.flush()
}
