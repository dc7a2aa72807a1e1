//! Contiguous integer ranges and dense age × year matrices.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

/// Inclusive, contiguous range of ages or calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub first: i32,
    pub last: i32,
}

impl Span {
    pub fn new(first: i32, last: i32) -> Option<Self> {
        (first <= last).then_some(Span { first, last })
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, v: i32) -> bool {
        v >= self.first && v <= self.last
    }

    pub fn offset(&self, v: i32) -> Option<usize> {
        self.contains(v).then(|| (v - self.first) as usize)
    }

    pub fn at(&self, i: usize) -> i32 {
        self.first + i as i32
    }

    pub fn intersect(&self, other: &Span) -> Option<Span> {
        Span::new(self.first.max(other.first), self.last.min(other.last))
    }

    pub fn iter(&self) -> impl Iterator<Item = i32> {
        self.first..=self.last
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.first as f64 + self.last as f64)
    }
}

/// Row-major matrix, rows indexed by age and columns by year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Grid { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Grid { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Grid { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
        debug_assert_eq!(self.shape(), other.shape());
        Grid { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// Sub-grid of `nrows × ncols` starting at (`row0`, `col0`).
    pub fn slice(&self, row0: usize, nrows: usize, col0: usize, ncols: usize) -> Grid {
        Grid::from_fn(nrows, ncols, |i, j| self[(row0 + i, col0 + j)])
    }

    pub fn max_abs_diff(&self, other: &Grid) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| f64::max(m, libm::fabs(a - b)))
    }
}

impl Index<(usize, usize)> for Grid {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_intersection() {
        let a = Span::new(60, 89).unwrap();
        let b = Span::new(65, 95).unwrap();
        assert_eq!(a.intersect(&b), Span::new(65, 89));
        assert_eq!(a.intersect(&Span::new(90, 95).unwrap()), None);
        assert_eq!(a.len(), 30);
        assert_eq!(a.offset(61), Some(1));
        assert_eq!(a.offset(59), None);
    }

    #[test]
    fn grid_slice() {
        let g = Grid::from_fn(3, 4, |i, j| (10 * i + j) as f64);
        let s = g.slice(1, 2, 2, 2);
        assert_eq!(s.as_slice(), &[12.0, 13.0, 22.0, 23.0]);
    }
}
