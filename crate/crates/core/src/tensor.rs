//! Dense row-major `f64` matrices.
//!
//! Everything in the model is expressed over 2-D matrices: token sequences are
//! `T x d`, single vectors are `1 x d`, scalars are `1 x 1`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length does not match {rows}x{cols}"
        );
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Self::from_vec(1, cols, data)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Scalar value of a `1 x 1` matrix.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar matrix");
        self.data[0]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat::from_vec(idx.len(), self.cols, data)
    }

    pub fn mean_rows(&self) -> Mat {
        let mut out = Mat::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out.scale_assign(1.0 / self.rows as f64);
        out
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        let mut out = Mat::zeros(self.rows, other.cols);
        gemm(self, false, other, false, 1.0, 0.0, &mut out);
        out
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
pub fn gemm(a: &Mat, trans_a: bool, b: &Mat, trans_b: bool, alpha: f64, beta: f64, c: &mut Mat) {
    let (m, k, rsa, csa) = if trans_a {
        (a.cols, a.rows, 1isize, a.cols as isize)
    } else {
        (a.rows, a.cols, a.cols as isize, 1isize)
    };
    let (kb, n, rsb, csb) = if trans_b {
        (b.cols, b.rows, 1isize, b.cols as isize)
    } else {
        (b.rows, b.cols, b.cols as isize, 1isize)
    };
    assert_eq!(k, kb, "gemm inner dimension mismatch");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.scale_assign(beta);
        return;
    }
    if m <= SKINNY_ROWS || k == 1 {
        skinny_gemm(a, trans_a, b, trans_b, alpha, beta, c, k);
        return;
    }
    // SAFETY: pointers and strides describe the full extents of `a`, `b`, `c`,
    // whose shapes were checked above; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// Row counts up to this go through [`skinny_gemm`]; the packed kernel
/// spends more time copying panels than multiplying for them.
const SKINNY_ROWS: usize = 4;

/// Row-at-a-time product for few output rows or a rank-1 update. Streams
/// contiguous rows of `b` (or dots against them when transposed).
#[allow(clippy::too_many_arguments)]
fn skinny_gemm(a: &Mat, trans_a: bool, b: &Mat, trans_b: bool, alpha: f64, beta: f64, c: &mut Mat, k: usize) {
    let n = c.cols;
    let a_at = |i: usize, p: usize| if trans_a { a.data[p * a.cols + i] } else { a.data[i * a.cols + p] };
    let mut a_row = vec![0.0; k];
    for i in 0..c.rows {
        for (p, v) in a_row.iter_mut().enumerate() {
            *v = alpha * a_at(i, p);
        }
        let out = &mut c.data[i * n..(i + 1) * n];
        if beta == 0.0 {
            out.fill(0.0);
        } else if beta != 1.0 {
            out.iter_mut().for_each(|x| *x *= beta);
        }
        if trans_b {
            for (j, o) in out.iter_mut().enumerate() {
                let row = &b.data[j * b.cols..(j + 1) * b.cols];
                *o += a_row.iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
            }
        } else {
            for (p, &s) in a_row.iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                let row = &b.data[p * b.cols..(p + 1) * b.cols];
                for (o, &y) in out.iter_mut().zip(row) {
                    *o += s * y;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn gemm_transposes_match_naive() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let b = Mat::from_vec(3, 2, vec![0.3, -2.0, 1.0, 1.5, 2.0, 0.0]);
        let expect = naive(&a, &b);
        assert!(a.matmul(&b).max_abs_diff(&expect) < 1e-12);

        let mut c = Mat::zeros(2, 2);
        gemm(&a, false, &b.transpose(), true, 1.0, 0.0, &mut c);
        assert!(c.max_abs_diff(&expect) < 1e-12);

        let mut c = Mat::zeros(2, 2);
        gemm(&a.transpose(), true, &b, false, 1.0, 0.0, &mut c);
        assert!(c.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn skinny_and_packed_paths_agree_with_naive() {
        let mut seed = 0x2545_f491_u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for &m in &[1, 3, 4, 5, 9] {
            for &k in &[1, 2, 7] {
                for &n in &[1, 6] {
                    let a = Mat::from_vec(m, k, (0..m * k).map(|_| next()).collect());
                    let b = Mat::from_vec(k, n, (0..k * n).map(|_| next()).collect());
                    let c0 = Mat::from_vec(m, n, (0..m * n).map(|_| next()).collect());
                    let mut expect = naive(&a, &b);
                    expect.scale_assign(0.5);
                    expect.add_assign(&c0.map(|x| -2.0 * x));
                    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
                        let aa = if ta { a.transpose() } else { a.clone() };
                        let bb = if tb { b.transpose() } else { b.clone() };
                        let mut c = c0.clone();
                        gemm(&aa, ta, &bb, tb, 0.5, -2.0, &mut c);
                        assert!(c.max_abs_diff(&expect) < 1e-12, "m={m} k={k} n={n} ta={ta} tb={tb}");
                    }
                }
            }
        }
    }

    #[test]
    fn mean_rows_and_select() {
        let m = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 6.0]);
        assert_eq!(m.mean_rows().data(), &[2.0, 4.0]);
        assert_eq!(m.select_rows(&[1, 1]).data(), &[3.0, 6.0, 3.0, 6.0]);
    }
}
