//! Minimal dense row-major matrix with column-block access.
//!
//! The solvers only need matrix-vector products, their transposes, and
//! column-block views, so we keep this hand-rolled rather than pulling in a
//! linear-algebra crate. All reductions run in a fixed order, which the
//! determinism contracts of the engines rely on.

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    /// `A v` over the column block `[offset, offset+width)`.
    pub fn block_matvec(&self, offset: usize, width: usize, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), width);
        assert!(offset + width <= self.cols);
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = &self.row(i)[offset..offset + width];
            out.push(dot(row, v));
        }
        out
    }

    /// `A* v` over the column block `[offset, offset+width)` (`*` = transpose).
    pub fn block_matvec_t(&self, offset: usize, width: usize, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows);
        assert!(offset + width <= self.cols);
        let mut out = vec![T::zero(); width];
        for i in 0..self.rows {
            let row = &self.row(i)[offset..offset + width];
            let c = v[i];
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * c;
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        self.block_matvec(0, self.cols, v)
    }

    pub fn matvec_t(&self, v: &[T]) -> Vec<T> {
        self.block_matvec_t(0, self.cols, v)
    }

    /// Owned copy of a column block; workers hold these locally.
    pub fn extract_block(&self, offset: usize, width: usize) -> Mat<T> {
        assert!(offset + width <= self.cols);
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[offset..offset + width]);
        }
        Mat {
            rows: self.rows,
            cols: width,
            data,
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm_sq<T: Real>(v: &[T]) -> T {
    dot(v, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Mat<f64> {
        // 2x3: [1 2 3; 4 5 6]
        Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    }

    #[test]
    fn matvec_and_transpose() {
        let a = sample();
        assert_eq!(a.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(a.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn block_views_match_extracted_block() {
        let a = sample();
        let b = a.extract_block(1, 2);
        let v = [2.0, -1.0];
        assert_eq!(a.block_matvec(1, 2, &v), b.matvec(&v));
        let z = [0.5, 2.0];
        assert_eq!(a.block_matvec_t(1, 2, &z), b.matvec_t(&z));
    }

    #[test]
    fn full_matvec_equals_block_sum() {
        let a = sample();
        let x = [1.0, 2.0, 3.0];
        let full = a.matvec(&x);
        let left = a.block_matvec(0, 1, &x[..1]);
        let right = a.block_matvec(1, 2, &x[1..]);
        for i in 0..2 {
            assert!((full[i] - (left[i] + right[i])).abs() < 1e-12);
        }
    }
}
