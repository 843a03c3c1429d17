//! Minimal complex CSR matrix used by the assembly and solver stages.
//!
//! Matrices are built from triplets and compressed with a stable sort keyed
//! on (row, col); duplicate entries are summed in that fixed order, so
//! repeated assemblies of the same input are bit-identical.

use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl CsrMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Entries of one row as (column, value) pairs, columns ascending.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .zip(&self.values[range])
            .map(|(&c, &v)| (c, v))
    }

    /// All stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![Complex64::new(0.0, 0.0); self.nrows];
        for r in 0..self.nrows {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
        y
    }

    /// y = Aᵀ x (plain transpose, no conjugation).
    pub fn mul_transpose_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![Complex64::new(0.0, 0.0); self.ncols];
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * x[r];
            }
        }
        y
    }

    pub fn scale(&self, s: Complex64) -> CsrMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Add `dv` to a stored entry; returns false if the entry is not stored.
    pub fn add_to_entry(&mut self, r: usize, c: usize, dv: Complex64) -> bool {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(k) => {
                self.values[range.start + k] += dv;
                true
            }
            Err(_) => false,
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] = v;
        }
        m
    }

    /// Largest relative asymmetry |a_ij - a_ji| / max|a| over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for (r, c, v) in self.iter() {
            let d = (v - self.get(c, r)).norm() / scale;
            worst = worst.max(d);
        }
        worst
    }
}

/// Triplet accumulator; `build` produces a deterministic CSR.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, Complex64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: Complex64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> CsrMatrix {
        // Stable sort keeps equal-key triplets in insertion order, which fixes
        // the floating-point summation order across runs.
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_counts = vec![0usize; self.nrows];
        let mut col_idx = Vec::new();
        let mut values: Vec<Complex64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_counts[r] += 1;
                last = Some((r, c));
            }
        }
        let mut row_ptr = vec![0usize; self.nrows + 1];
        for r in 0..self.nrows {
            row_ptr[r + 1] = row_ptr[r] + row_counts[r];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn builds_and_sums_duplicates() {
        let mut b = TripletBuilder::new(3, 3);
        b.push(1, 2, c(1.0, 0.0));
        b.push(0, 0, c(2.0, 1.0));
        b.push(1, 2, c(0.5, -1.0));
        b.push(2, 1, c(3.0, 0.0));
        let m = b.build();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 2), c(1.5, -1.0));
        assert_eq!(m.get(0, 0), c(2.0, 1.0));
        assert_eq!(m.get(0, 1), c(0.0, 0.0));
    }

    #[test]
    fn matvec_matches_dense() {
        let mut b = TripletBuilder::new(2, 3);
        b.push(0, 0, c(1.0, 1.0));
        b.push(0, 2, c(2.0, 0.0));
        b.push(1, 1, c(0.0, -1.0));
        let m = b.build();
        let x = vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, 2.0)];
        let y = m.mul_vec(&x);
        assert_eq!(y[0], c(1.0, 1.0) + c(4.0, 4.0));
        assert_eq!(y[1], c(0.0, -1.0) * c(0.0, 1.0));
        let yt = m.mul_transpose_vec(&y);
        assert_eq!(yt.len(), 3);
    }

    #[test]
    fn deterministic_build() {
        let mut b1 = TripletBuilder::new(4, 4);
        let mut b2 = TripletBuilder::new(4, 4);
        for k in 0..200 {
            let r = (k * 7) % 4;
            let cidx = (k * 13) % 4;
            let v = c(0.1 * k as f64, -0.05 * k as f64);
            b1.push(r, cidx, v);
            b2.push(r, cidx, v);
        }
        assert_eq!(b1.build(), b2.build());
    }
}
