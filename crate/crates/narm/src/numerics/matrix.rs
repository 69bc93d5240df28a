//! Dense row-major f64 matrices and the small set of vector ops the model
//! needs. Nothing here allocates behind your back except ops that return a
//! new matrix; shapes are checked with asserts since a mismatch is always a
//! programming error, not bad input.

use crate::error::{Error, Result};
use crate::numerics::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Build from row-major data. Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    /// Column vector from a slice.
    pub fn col_vec(data: &[f64]) -> Self {
        Matrix { rows: data.len(), cols: 1, data: data.to_vec() }
    }

    /// Uniform entries in [lo, hi).
    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut RngState) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
        Matrix { rows, cols, data }
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
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// self · other, (n×k)·(k×m) → n×m. Loop order i-k-j so the inner loop
    /// walks both operands contiguously.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} vs {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for k in 0..self.cols {
                let a_ik = a_row[k];
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                let o_row = out.row_mut(i);
                for j in 0..other.cols {
                    o_row[j] += a_ik * b_row[j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        self.zip(other, |a, b| a * b)
    }

    fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    /// self += alpha * other
    pub fn add_scaled(&mut self, other: &Matrix, alpha: f64) {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn sigmoid(&self) -> Matrix {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Matrix {
        self.map(f64::tanh)
    }

    /// Stack two matrices vertically: [self; other].
    pub fn concat_rows(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "concat_rows column mismatch");
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Matrix { rows: self.rows + other.rows, cols: self.cols, data }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn validate_finite(&self, name: &str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(name.to_string()))
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Numerically stable softmax: shifts by the max before exponentiating.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    assert!(!scores.is_empty(), "softmax of empty slice");
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// y += A·x where A is (n×m), x has m entries, y has n.
pub(crate) fn matvec_acc(y: &mut [f64], a: &Matrix, x: &[f64]) {
    debug_assert_eq!(y.len(), a.rows());
    debug_assert_eq!(x.len(), a.cols());
    for (i, yi) in y.iter_mut().enumerate() {
        *yi += dot(a.row(i), x);
    }
}

/// y += Aᵀ·x where A is (n×m), x has n entries, y has m.
pub(crate) fn matvec_t_acc(y: &mut [f64], a: &Matrix, x: &[f64]) {
    debug_assert_eq!(x.len(), a.rows());
    debug_assert_eq!(y.len(), a.cols());
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (yj, &aij) in y.iter_mut().zip(a.row(i)) {
            *yj += xi * aij;
        }
    }
}

/// A += scale · x·yᵀ where A is (n×m), x has n entries, y has m.
pub(crate) fn outer_acc(a: &mut Matrix, x: &[f64], y: &[f64], scale: f64) {
    debug_assert_eq!(x.len(), a.rows());
    debug_assert_eq!(y.len(), a.cols());
    for (i, &xi) in x.iter().enumerate() {
        let s = scale * xi;
        if s == 0.0 {
            continue;
        }
        for (aij, &yj) in a.row_mut(i).iter_mut().zip(y) {
            *aij += s * yj;
        }
    }
}

/// Inverted-dropout mask: each entry is 0 with probability 1−keep, else
/// 1/keep, so the expected value of mask⊙x equals x.
pub fn dropout_mask(rows: usize, cols: usize, keep: f64, rng: &mut RngState) -> Matrix {
    assert!(keep > 0.0 && keep <= 1.0, "keep probability must be in (0, 1]");
    let inv = 1.0 / keep;
    let data = (0..rows * cols)
        .map(|_| if rng.next_f64() < keep { inv } else { 0.0 })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Central-difference gradient of `f` at `theta`:
/// g_i ≈ (f(θ+εe_i) − f(θ−εe_i)) / 2ε.
pub fn finite_difference_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut work = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let fp = f(&work);
        work[i] = orig - eps;
        let fm = f(&work);
        work[i] = orig;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
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
    fn matmul_hand_value() {
        // [[1,2,3],[4,5,6]] · [[7,8],[9,10],[11,12]] = [[58,64],[139,154]]
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.as_slice(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_matches_naive_on_random_inputs() {
        let mut rng = RngState::new(7);
        for _ in 0..20 {
            let n = 1 + rng.below(6) as usize;
            let k = 1 + rng.below(6) as usize;
            let m = 1 + rng.below(6) as usize;
            let a = Matrix::uniform(n, k, -2.0, 2.0, &mut rng);
            let b = Matrix::uniform(k, m, -2.0, 2.0, &mut rng);
            let fast = a.matmul(&b);
            let slow = naive_matmul(&a, &b);
            for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn matmul_identity() {
        let mut rng = RngState::new(3);
        let a = Matrix::uniform(4, 4, -1.0, 1.0, &mut rng);
        let mut eye = Matrix::zeros(4, 4);
        for i in 0..4 {
            eye.set(i, i, 1.0);
        }
        assert_eq!(a.matmul(&eye), a);
        assert_eq!(eye.matmul(&a), a);
    }

    #[test]
    fn transpose_involution() {
        let mut rng = RngState::new(11);
        let a = Matrix::uniform(3, 5, -1.0, 1.0, &mut rng);
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().get(4, 2), a.get(2, 4));
    }

    #[test]
    fn elementwise_ops() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Matrix::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]);
        assert_eq!(a.add(&b).as_slice(), &[6.0, 8.0, 10.0, 12.0]);
        assert_eq!(b.sub(&a).as_slice(), &[4.0, 4.0, 4.0, 4.0]);
        assert_eq!(a.hadamard(&b).as_slice(), &[5.0, 12.0, 21.0, 32.0]);
        let mut c = a.clone();
        c.add_scaled(&b, 0.5);
        assert_eq!(c.as_slice(), &[3.5, 5.0, 6.5, 8.0]);
    }

    #[test]
    fn concat_rows_stacks() {
        let a = Matrix::from_vec(2, 1, vec![1.0, 2.0]);
        let b = Matrix::from_vec(3, 1, vec![3.0, 4.0, 5.0]);
        let c = a.concat_rows(&b);
        assert_eq!(c.shape(), (5, 1));
        assert_eq!(c.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn sigmoid_known_values() {
        assert_abs_diff_eq!(sigmoid(0.0), 0.5, epsilon = 1e-15);
        // σ(x) + σ(−x) = 1
        for &x in &[0.1, 1.0, 3.7, 20.0] {
            assert_abs_diff_eq!(sigmoid(x) + sigmoid(-x), 1.0, epsilon = 1e-12);
        }
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn softmax_uniform_on_equal_scores() {
        let p = softmax(&[3.0, 3.0, 3.0, 3.0]);
        for &pi in &p {
            assert_abs_diff_eq!(pi, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_stable_for_large_scores() {
        let p = softmax(&[1000.0, 1000.5]);
        assert!(p.iter().all(|x| x.is_finite() && *x > 0.0));
        assert_abs_diff_eq!(p[0] + p[1], 1.0, epsilon = 1e-12);
        // exact ratio e^{0.5} survives the shift
        assert_abs_diff_eq!(p[1] / p[0], 0.5f64.exp(), epsilon = 1e-9);
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut rng = RngState::new(21);
        for _ in 0..50 {
            let n = 1 + rng.below(8) as usize;
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform(-10.0, 10.0)).collect();
            let shift = rng.uniform(-100.0, 100.0);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let p = softmax(&scores);
            let q = softmax(&shifted);
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            for (a, b) in p.iter().zip(&q) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn accumulating_matvec_helpers_match_matmul() {
        let mut rng = RngState::new(9);
        let a = Matrix::uniform(4, 6, -1.0, 1.0, &mut rng);
        let x6: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x4: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let mut y = vec![0.0; 4];
        matvec_acc(&mut y, &a, &x6);
        let want = a.matmul(&Matrix::col_vec(&x6));
        for (got, want) in y.iter().zip(want.as_slice()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }

        let mut yt = vec![0.0; 6];
        matvec_t_acc(&mut yt, &a, &x4);
        let want_t = a.transpose().matmul(&Matrix::col_vec(&x4));
        for (got, want) in yt.iter().zip(want_t.as_slice()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }

        let mut acc = Matrix::zeros(4, 6);
        outer_acc(&mut acc, &x4, &x6, 2.0);
        for i in 0..4 {
            for j in 0..6 {
                assert_abs_diff_eq!(acc.get(i, j), 2.0 * x4[i] * x6[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dropout_mask_values_and_mean() {
        let mut rng = RngState::new(5);
        let keep = 0.75;
        let mask = dropout_mask(250, 400, keep, &mut rng); // 1e5 entries
        let inv = 1.0 / keep;
        let mut sum = 0.0;
        for &v in mask.as_slice() {
            assert!(v == 0.0 || v == inv, "mask entry must be 0 or 1/keep, got {v}");
            sum += v;
        }
        let mean = sum / (250.0 * 400.0);
        assert!((mean - 1.0).abs() < 0.02, "inverted dropout mean {mean} too far from 1");
    }

    #[test]
    fn dropout_keep_one_is_identity_mask() {
        let mut rng = RngState::new(5);
        let mask = dropout_mask(10, 10, 1.0, &mut rng);
        assert!(mask.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn uniform_init_range_and_mean() {
        let mut rng = RngState::new(13);
        let m = Matrix::uniform(200, 500, -0.1, 0.1, &mut rng);
        let mut sum = 0.0;
        for &v in m.as_slice() {
            assert!((-0.1..0.1).contains(&v));
            sum += v;
        }
        let mean = sum / 1e5;
        assert!(mean.abs() < 0.002, "mean {mean} of uniform(-0.1, 0.1) should be near 0");
    }

    #[test]
    fn validate_finite_flags_bad_values() {
        let good = Matrix::from_vec(1, 2, vec![1.0, -2.0]);
        assert!(good.validate_finite("g").is_ok());
        let bad = Matrix::from_vec(1, 2, vec![1.0, f64::NAN]);
        assert!(bad.validate_finite("b").is_err());
        let inf = Matrix::from_vec(1, 2, vec![f64::INFINITY, 0.0]);
        assert!(inf.validate_finite("i").is_err());
    }

    #[test]
    fn fd_grad_of_sum_of_squares() {
        // f(θ) = Σ θ_i² ⇒ ∇f = 2θ
        let theta = vec![0.3, -1.2, 0.0, 2.5];
        let g = finite_difference_grad(|t| t.iter().map(|x| x * x).sum(), &theta, 1e-5);
        for (gi, ti) in g.iter().zip(&theta) {
            assert_abs_diff_eq!(gi, &(2.0 * ti), epsilon = 1e-6);
        }
    }

    #[test]
    fn fd_grad_of_constant_is_zero() {
        let g = finite_difference_grad(|_| 4.2, &[1.0, 2.0, 3.0], 1e-5);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fd_grad_of_quadratic_form() {
        // f(θ) = θᵀAθ ⇒ ∇f = (A + Aᵀ)θ
        let a = Matrix::from_vec(3, 3, vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0, 0.25, -2.0, 1.5]);
        let theta = vec![0.7, -0.4, 1.1];
        let f = |t: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += t[i] * a.get(i, j) * t[j];
                }
            }
            s
        };
        let g = finite_difference_grad(f, &theta, 1e-5);
        let sym = a.add(&a.transpose());
        let want = sym.matmul(&Matrix::col_vec(&theta));
        for (gi, wi) in g.iter().zip(want.as_slice()) {
            assert_abs_diff_eq!(gi, wi, epsilon = 1e-7);
        }
    }
}
