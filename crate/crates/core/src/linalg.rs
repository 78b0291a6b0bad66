//! Dense row-major matrices and the matrix-product kernel.
//!
//! Every output element is a fused multiply-add chain over the inner dimension
//! in ascending order, starting from zero. The chain does not depend on the
//! number of rows, the tile an element lands in, or which CPU path runs, so a
//! row computed alone is bitwise equal to the same row computed in a batch.

use std::sync::OnceLock;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        transpose(&self.data, self.rows, self.cols)
    }

    pub fn gather_rows(&self, rows: &[usize]) -> Mat {
        let mut out = Mat::zeros(rows.len(), self.cols);
        for (o, &r) in rows.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(r));
        }
        out
    }

    pub fn scatter_rows(&mut self, rows: &[usize], src: &Mat) {
        debug_assert_eq!(rows.len(), src.rows);
        for (s, &r) in rows.iter().enumerate() {
            self.row_mut(r).copy_from_slice(src.row(s));
        }
    }

    /// Contiguous copy of columns `[start, start + width)`.
    pub fn columns(&self, start: usize, width: usize) -> Mat {
        let mut out = Mat::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    pub fn set_columns(&mut self, start: usize, src: &Mat) {
        for i in 0..self.rows {
            let w = src.cols;
            self.row_mut(i)[start..start + w].copy_from_slice(src.row(i));
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

pub fn transpose(data: &[f64], rows: usize, cols: usize) -> Mat {
    let mut out = Mat::zeros(cols, rows);
    for i in 0..rows {
        for j in 0..cols {
            out.data[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

/// `a · b` for row-major slices `a: m×k`, `b: k×n`.
pub fn matmul_slices(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Mat {
    assert_eq!(a.len(), m * k, "lhs shape");
    assert_eq!(b.len(), k * n, "rhs shape");
    let mut c = Mat::zeros(m, n);
    if m == 0 || n == 0 {
        return c;
    }
    (kernel())(a, b, &mut c.data, m, k, n);
    c
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    matmul_slices(&a.data, a.rows, a.cols, &b.data, b.cols)
}

type KernelFn = fn(&[f64], &[f64], &mut [f64], usize, usize, usize);

fn kernel() -> KernelFn {
    static KERNEL: OnceLock<KernelFn> = OnceLock::new();
    *KERNEL.get_or_init(select_kernel)
}

fn select_kernel() -> KernelFn {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("fma") {
            return |a, b, c, m, k, n| unsafe { x86::gemm_avx512(a, b, c, m, k, n) };
        }
        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            return |a, b, c, m, k, n| unsafe { x86::gemm_avx2(a, b, c, m, k, n) };
        }
    }
    gemm_generic
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    #[target_feature(enable = "avx512f,fma")]
    pub unsafe fn gemm_avx512(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
        super::gemm_generic(a, b, c, m, k, n)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn gemm_avx2(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
        super::gemm_generic(a, b, c, m, k, n)
    }
}

#[inline(always)]
fn tile<const R: usize, const J: usize>(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    i: usize,
    j: usize,
    k: usize,
    n: usize,
) {
    let mut acc = [[0.0f64; J]; R];
    for kk in 0..k {
        let brow: &[f64; J] = b[kk * n + j..kk * n + j + J].try_into().unwrap();
        for r in 0..R {
            let av = a[(i + r) * k + kk];
            for jj in 0..J {
                acc[r][jj] = av.mul_add(brow[jj], acc[r][jj]);
            }
        }
    }
    for r in 0..R {
        c[(i + r) * n + j..(i + r) * n + j + J].copy_from_slice(&acc[r]);
    }
}

#[inline(always)]
fn row_block<const R: usize>(a: &[f64], b: &[f64], c: &mut [f64], i: usize, k: usize, n: usize) {
    let mut j = 0;
    while j + 32 <= n {
        tile::<R, 32>(a, b, c, i, j, k, n);
        j += 32;
    }
    while j + 8 <= n {
        tile::<R, 8>(a, b, c, i, j, k, n);
        j += 8;
    }
    while j < n {
        tile::<R, 1>(a, b, c, i, j, k, n);
        j += 1;
    }
}

#[inline(always)]
fn gemm_generic(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        row_block::<4>(a, b, c, i, k, n);
        i += 4;
    }
    while i < m {
        row_block::<1>(a, b, c, i, k, n);
        i += 1;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| x.mul_add(*y, acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        let mut c = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut acc = 0.0f64;
                for kk in 0..a.cols {
                    acc = a.data[i * a.cols + kk].mul_add(b.data[kk * b.cols + j], acc);
                }
                c.data[i * b.cols + j] = acc;
            }
        }
        c
    }

    fn pseudo(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        Mat::from_vec(rows, cols, data)
    }

    #[test]
    fn matches_naive_bitwise_on_odd_shapes() {
        for &(m, k, n) in &[(1, 1, 1), (5, 3, 7), (9, 17, 41), (4, 128, 64), (13, 8, 33)] {
            let a = pseudo(m, k, 1);
            let b = pseudo(k, n, 2);
            assert_eq!(matmul(&a, &b), naive(&a, &b), "{m}x{k}x{n}");
        }
    }

    #[test]
    fn rows_are_independent_of_batch() {
        let a = pseudo(11, 24, 3);
        let b = pseudo(24, 45, 4);
        let full = matmul(&a, &b);
        for r in 0..a.rows {
            let single = matmul(&a.gather_rows(&[r]), &b);
            assert_eq!(single.row(0), full.row(r));
        }
        let subset = [1, 4, 5, 9, 10];
        let part = matmul(&a.gather_rows(&subset), &b);
        for (o, &r) in subset.iter().enumerate() {
            assert_eq!(part.row(o), full.row(r));
        }
    }

    #[test]
    fn transpose_round_trip() {
        let a = pseudo(3, 5, 9);
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().data[3], a.data[1]);
    }
}
