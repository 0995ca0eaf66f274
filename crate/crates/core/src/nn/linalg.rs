//! Safe wrappers around `matrixmultiply::dgemm` for row-major slices.
//!
//! matrixmultiply is single-threaded here and sums in a fixed order, so
//! results are bit-reproducible for fixed shapes.

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches, given
    // the strides callers pass describe dense m*k, k*n and m*n layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c (m x n) = a (m x k) * b (k x n) + beta * c`
pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    gemm(m, k, n, a, k as isize, 1, b, n as isize, 1, c, beta);
}

/// `c (m x n) = a (m x k) * b^T + beta * c`, with `b` stored as n x k.
pub fn matmul_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    gemm(m, k, n, a, k as isize, 1, b, 1, k as isize, c, beta);
}

/// `c (m x n) = a^T * b (k x n) + beta * c`, with `a` stored as k x m.
pub fn matmul_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    gemm(m, k, n, a, 1, m as isize, b, n as isize, 1, c, beta);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: impl Fn(usize, usize) -> f64, b: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a(i, p) * b(p, j)).sum();
            }
        }
        c
    }

    #[test]
    fn transposed_variants_agree_with_naive_loops() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64).sin()).collect();
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let want = naive(m, k, n, |i, p| a[i * k + p], |p, j| b[p * n + j]);

        let mut c = vec![0.0; m * n];
        matmul(m, k, n, &a, &b, &mut c, 0.0);
        let mut c2 = vec![0.0; m * n];
        matmul_nt(m, k, n, &a, &bt, &mut c2, 0.0);
        let mut c3 = vec![0.0; m * n];
        matmul_tn(m, k, n, &at, &b, &mut c3, 0.0);
        for idx in 0..m * n {
            assert!((c[idx] - want[idx]).abs() < 1e-12);
            assert!((c2[idx] - want[idx]).abs() < 1e-12);
            assert!((c3[idx] - want[idx]).abs() < 1e-12);
        }
    }
}
