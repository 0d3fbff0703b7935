//! Small dense-math kit: libm wrappers, vector kernels and a row-major matrix
//! backed by `matrixmultiply` for the products.

use alloc::vec;
use alloc::vec::Vec;

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Dot product with eight independent accumulators so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// All pairwise row dot products, `out[j][i] = a_j · b_i`.
///
/// Rows of `a` are streamed once, so `a` should be the larger operand.
/// x86-64 builds with `std` use an AVX-512 or AVX2/FMA kernel when the CPU
/// has one.
pub fn row_dots(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols, "row_dots: width mismatch");
    let mut out = Matrix::zeros(a.rows, b.rows);
    #[cfg(all(feature = "std", target_arch = "x86_64"))]
    {
        // SAFETY: each kernel runs only after its CPU features are detected.
        if std::is_x86_feature_detected!("avx512f") {
            unsafe { simd::avx512::row_dots(a, b, &mut out) };
            return out;
        }
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            unsafe { simd::avx2::row_dots(a, b, &mut out) };
            return out;
        }
    }
    for (j, ra) in a.iter_rows().enumerate() {
        let row = out.row_mut(j);
        for (i, rb) in b.iter_rows().enumerate() {
            row[i] = dot(ra, rb);
        }
    }
    out
}

#[cfg(all(feature = "std", target_arch = "x86_64"))]
mod simd {
    macro_rules! row_dot_kernel {
        ($name:ident, $feat:literal, $vec:ty, $lanes:expr, $tile_a:expr,
         $zero:ident, $load:ident, $fma:ident, $hsum:expr) => {
            pub(super) mod $name {
                use super::super::Matrix;
                use core::arch::x86_64::*;

                /// `a_j · b_i` over columns `k0..k1` for `C` rows of `a` and
                /// `R` rows of `b`.
                #[target_feature(enable = $feat)]
                #[inline]
                unsafe fn tile<const C: usize, const R: usize>(
                    a: [*const f64; C],
                    b: [*const f64; R],
                    k: usize,
                ) -> [[f64; R]; C] {
                    let mut acc: [[$vec; R]; C] = [[$zero(); R]; C];
                    let mut t = 0;
                    while t + $lanes <= k {
                        let mut av: [$vec; C] = [$zero(); C];
                        for c in 0..C {
                            av[c] = $load(a[c].add(t));
                        }
                        for r in 0..R {
                            let bv = $load(b[r].add(t));
                            for c in 0..C {
                                acc[c][r] = $fma(av[c], bv, acc[c][r]);
                            }
                        }
                        t += $lanes;
                    }
                    let mut out = [[0.0; R]; C];
                    for c in 0..C {
                        for r in 0..R {
                            let mut s = $hsum(acc[c][r]);
                            for u in t..k {
                                s += *a[c].add(u) * *b[r].add(u);
                            }
                            out[c][r] = s;
                        }
                    }
                    out
                }

                #[target_feature(enable = $feat)]
                unsafe fn rows_for<const C: usize>(a: &Matrix, j: usize, b: &Matrix, out: &mut Matrix) {
                    let k = a.cols;
                    let ap: [*const f64; C] = core::array::from_fn(|c| a.data.as_ptr().add((j + c) * k));
                    let bp = |i: usize| b.data.as_ptr().add(i * k);
                    let mut i = 0;
                    while i + 4 <= b.rows {
                        let v = tile::<C, 4>(ap, [bp(i), bp(i + 1), bp(i + 2), bp(i + 3)], k);
                        for c in 0..C {
                            out.data[(j + c) * out.cols + i..][..4].copy_from_slice(&v[c]);
                        }
                        i += 4;
                    }
                    while i < b.rows {
                        let v = tile::<C, 1>(ap, [bp(i)], k);
                        for c in 0..C {
                            out.data[(j + c) * out.cols + i] = v[c][0];
                        }
                        i += 1;
                    }
                }

                #[target_feature(enable = $feat)]
                pub(in super::super) unsafe fn row_dots(a: &Matrix, b: &Matrix, out: &mut Matrix) {
                    let mut j = 0;
                    while j + $tile_a <= a.rows {
                        rows_for::<{ $tile_a }>(a, j, b, out);
                        j += $tile_a;
                    }
                    while j < a.rows {
                        rows_for::<1>(a, j, b, out);
                        j += 1;
                    }
                }
            }
        };
    }

    #[target_feature(enable = "avx2,fma")]
    #[inline]
    unsafe fn hsum256(v: core::arch::x86_64::__m256d) -> f64 {
        use core::arch::x86_64::*;
        let s = _mm_add_pd(_mm256_castpd256_pd128(v), _mm256_extractf128_pd(v, 1));
        _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)))
    }

    row_dot_kernel!(avx2, "avx2,fma", __m256d, 4, 2, _mm256_setzero_pd, _mm256_loadu_pd, _mm256_fmadd_pd, super::hsum256);
    row_dot_kernel!(avx512, "avx512f", __m512d, 8, 4, _mm512_setzero_pd, _mm512_loadu_pd, _mm512_fmadd_pd, _mm512_reduce_add_pd);
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// Cosine similarity; a zero vector on either side yields 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(v: &mut [f64], s: f64) {
    for x in v {
        *x *= s;
    }
}

/// Scales `v` to unit length in place unless its norm is below `eps`, in
/// which case it is zeroed. Returns the original norm.
pub fn normalize_or_zero(v: &mut [f64], eps: f64) -> f64 {
    let n = norm(v);
    if n < eps {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        scale(v, 1.0 / n);
    }
    n
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|x| *x = f(*x));
    }

    /// Copies columns `start..start + width` into a new matrix.
    pub fn columns(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Writes `src` into columns `start..start + src.cols()`.
    pub fn set_columns(&mut self, start: usize, src: &Matrix) {
        assert_eq!(src.rows, self.rows);
        for i in 0..self.rows {
            let w = src.cols;
            self.row_mut(i)[start..start + w].copy_from_slice(src.row(i));
        }
    }

    /// Product `op(a) * op(b)` where `op` optionally transposes.
    pub fn product(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Matrix {
        let m = if ta { a.cols } else { a.rows };
        let n = if tb { b.rows } else { b.cols };
        let mut c = Matrix::zeros(m, n);
        gemm(1.0, a, ta, b, tb, 0.0, &mut c);
        c
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for (r, row) in self.iter_rows().enumerate() {
            for (c, &x) in row.iter().enumerate() {
                t.data[c * self.rows + r] = x;
            }
        }
        t
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`.
pub fn gemm(alpha: f64, a: &Matrix, ta: bool, b: &Matrix, tb: bool, beta: f64, c: &mut Matrix) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "inner dimensions differ");
    assert_eq!((c.rows, c.cols), (m, n), "output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        } else {
            scale(&mut c.data, beta);
        }
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if tb { (1, b.cols) } else { (b.cols, 1) };
    // SAFETY: the strides describe in-bounds views of `a`, `b` and `c`,
    // whose shapes were checked above; `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn avx2_kernel_matches_dot() {
        if !(std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")) {
            return;
        }
        let (m, n, k) = (7, 6, 1029);
        let a = Matrix::from_vec(m, k, (0..m * k).map(|i| ((i * 31) % 17) as f64 - 8.0).collect());
        let b = Matrix::from_vec(n, k, (0..n * k).map(|i| ((i * 7) % 5) as f64).collect());
        let mut out = Matrix::zeros(m, n);
        unsafe { simd::avx2::row_dots(&a, &b, &mut out) };
        for j in 0..m {
            for i in 0..n {
                assert!((out.get(j, i) - dot(a.row(j), b.row(i))).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn row_dots_matches_dot() {
        for (m, n, k) in [(1, 1, 1), (5, 7, 13), (2, 4, 1030), (3, 9, 8)] {
            let a = Matrix::from_vec(m, k, (0..m * k).map(|i| ((i * 37) % 11) as f64 - 5.0).collect());
            let b = Matrix::from_vec(n, k, (0..n * k).map(|i| ((i * 13) % 7) as f64 * 0.5).collect());
            let out = row_dots(&a, &b);
            for j in 0..m {
                for i in 0..n {
                    assert!((out.get(j, i) - dot(a.row(j), b.row(i))).abs() < 1e-9);
                }
            }
        }
    }

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    fn transpose(a: &Matrix) -> Matrix {
        let mut t = Matrix::zeros(a.cols(), a.rows());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                t.set(j, i, a.get(i, j));
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_under_transposes() {
        let a = Matrix::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.5 - 2.0).collect());
        let b = Matrix::from_vec(4, 2, (0..8).map(|i| 1.0 / (i as f64 + 1.0)).collect());
        let want = naive(&a, &b);
        let at = transpose(&a);
        let bt = transpose(&b);
        for (x, tx, y, ty) in [(&a, false, &b, false), (&at, true, &b, false), (&a, false, &bt, true), (&at, true, &bt, true)] {
            let got = Matrix::product(x, tx, y, ty);
            for (g, w) in got.as_slice().iter().zip(want.as_slice()) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = Matrix::from_vec(1, 1, vec![2.0]);
        let b = Matrix::from_vec(1, 1, vec![3.0]);
        let mut c = Matrix::from_vec(1, 1, vec![1.0]);
        gemm(1.0, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c.get(0, 0), 7.0);
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (0..19).map(|i| i as f64).collect();
        let want: f64 = a.iter().map(|x| x * x).sum();
        assert_eq!(dot(&a, &a), want);
    }

    #[test]
    fn cosine_of_zero_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
    }
}
