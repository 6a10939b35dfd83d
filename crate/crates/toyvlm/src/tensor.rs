use laser_core::Scalar;
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    /// Gaussian entries with standard deviation `std`, drawn row by row.
    pub fn gaussian<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal))).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        self.data.chunks_exact(self.cols).map(|row| dot(row, x)).collect()
    }

    pub fn zero_cols(&mut self, cols: std::ops::Range<usize>) {
        for r in 0..self.rows {
            for c in cols.clone() {
                self.set(r, c, T::zero());
            }
        }
    }

    pub fn zero_rows(&mut self, rows: std::ops::Range<usize>) {
        for r in rows {
            for c in 0..self.cols {
                self.set(r, c, T::zero());
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v = *v * factor;
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Parameter-free RMS normalization.
pub fn rms_norm<T: Scalar>(x: &[T]) -> Vec<T> {
    let mean_sq = x.iter().map(|&v| v * v).sum::<T>() / T::count(x.len());
    let inv = (mean_sq + T::of(1e-5)).sqrt().recip();
    x.iter().map(|&v| v * inv).collect()
}

/// Softmax in place with max subtraction.
pub fn softmax_in_place<T: Scalar>(x: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in x.iter_mut() {
        *v = *v / sum;
    }
}
