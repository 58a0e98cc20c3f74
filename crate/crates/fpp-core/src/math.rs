//! Small numeric helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::LazyLock;

static STD_NORMAL: LazyLock<Normal> =
    LazyLock::new(|| Normal::new(0.0, 1.0).expect("standard normal"));

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    STD_NORMAL.cdf(x)
}

/// Standard normal quantile function.
pub fn norm_inv_cdf(p: f64) -> f64 {
    STD_NORMAL.inverse_cdf(p)
}

/// Log of the standard normal density.
pub fn norm_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Density of a normal truncated to `[lo, hi]`, evaluated at `x`.
///
/// Returns 0 outside the interval. The normalising mass must be positive;
/// callers are expected to keep `lo < hi` with nonnegligible mass between.
pub fn trunc_normal_pdf(x: f64, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if x < lo || x > hi {
        return 0.0;
    }
    let mass = norm_cdf((hi - mean) / sd) - norm_cdf((lo - mean) / sd);
    let z = (x - mean) / sd;
    (norm_log_pdf(z).exp() / sd) / mass
}

/// Draw from a normal truncated to `[lo, hi]` by inverse-CDF sampling.
///
/// Uses a single uniform variate, so the caller's stream advances by exactly
/// one draw regardless of the truncation interval.
pub fn trunc_normal_sample(mean: f64, sd: f64, lo: f64, hi: f64, uniform: f64) -> f64 {
    let a = norm_cdf((lo - mean) / sd);
    let b = norm_cdf((hi - mean) / sd);
    let p = (a + uniform * (b - a)).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
    (mean + sd * norm_inv_cdf(p)).clamp(lo, hi)
}

/// Mean and sample standard deviation (n-1 denominator) of a slice.
///
/// Returns (mean, sd); sd is 0 for fewer than two observations.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, (ss / (n as f64 - 1.0)).sqrt())
}

/// Linear-interpolation quantile of a sample (type-7, the R default).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = lo.min(n - 2) + 1;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Solve the square system `a x = b` in place by Gaussian elimination with
/// partial pivoting. `a` is row-major `n` by `n`; `b` has length `n`.
///
/// Returns the solution, or `None` when a pivot underflows.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        let inv = 1.0 / a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

/// Lower Cholesky factor of a symmetric positive-definite matrix, in place.
///
/// `a` is row-major `n` by `n`; on success its lower triangle holds `L` with
/// `L L' = A` and the strict upper triangle is zeroed. Returns `false` when a
/// pivot is not strictly positive.
pub fn cholesky_lower(a: &mut [f64], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
        for i in 0..j {
            a[i * n + j] = 0.0;
        }
    }
    true
}

/// LU factorisation of a banded matrix with partial pivoting, in the LAPACK
/// band layout: entry `(i, j)` lives at storage row `kl + ku + i - j` of
/// column `j`, with the top `kl` storage rows reserved as pivoting fill.
///
/// Row pivoting is what makes this safe on staircase systems whose one-way
/// recursions carry exponentially growing modes in either direction.
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
    ipiv: Vec<usize>,
    factored: bool,
}

impl BandedLu {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        assert!(n > 0 && kl < n && ku < n);
        BandedLu {
            n,
            kl,
            ku,
            data: vec![0.0; (2 * kl + ku + 1) * n],
            ipiv: vec![0; n],
            factored: false,
        }
    }

    #[inline]
    fn idx(&self, store_row: usize, col: usize) -> usize {
        store_row * self.n + col
    }

    /// Set entry `(i, j)`; the entry must lie inside the declared band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(!self.factored);
        debug_assert!(j <= i + self.ku && i <= j + self.kl, "({i}, {j}) outside band");
        let r = self.kl + self.ku + i - j;
        let id = self.idx(r, j);
        self.data[id] = v;
    }

    /// Factor in place. Returns `false` on a zero pivot.
    pub fn factor(&mut self) -> bool {
        let kv = self.kl + self.ku;
        let n = self.n;
        for j in 0..n {
            let km = self.kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = self.data[self.idx(kv, j)].abs();
            for i in 1..=km {
                let v = self.data[self.idx(kv + i, j)].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            self.ipiv[j] = j + jp;
            if best < 1e-300 {
                return false;
            }
            if jp != 0 {
                for c in j..=(j + kv).min(n - 1) {
                    let a = self.idx(kv + j - c, c);
                    let b = self.idx(kv + j + jp - c, c);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(kv, j)];
            for i in 1..=km {
                let id = self.idx(kv + i, j);
                self.data[id] /= pivot;
            }
            for c in (j + 1)..=(j + kv).min(n - 1) {
                let up = self.data[self.idx(kv + j - c, c)];
                if up == 0.0 {
                    continue;
                }
                for i in 1..=km {
                    let mult = self.data[self.idx(kv + i, j)];
                    let id = self.idx(kv + j + i - c, c);
                    self.data[id] -= mult * up;
                }
            }
        }
        self.factored = true;
        true
    }

    /// Solve `A x = b` in place using the factorisation.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert!(self.factored);
        debug_assert_eq!(b.len(), self.n);
        let kv = self.kl + self.ku;
        let n = self.n;
        for j in 0..n {
            if self.ipiv[j] != j {
                b.swap(j, self.ipiv[j]);
            }
            let km = self.kl.min(n - 1 - j);
            for i in 1..=km {
                b[j + i] -= self.data[self.idx(kv + i, j)] * b[j];
            }
        }
        for j in (0..n).rev() {
            let x = b[j] / self.data[self.idx(kv, j)];
            b[j] = x;
            let lo = j.saturating_sub(kv);
            for i in lo..j {
                b[i] -= self.data[self.idx(kv + i - j, j)] * x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_matches_tabulated_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(1.96) - 0.9750021048517795).abs() < 1e-9);
        assert!((norm_inv_cdf(0.975) - 1.959963984540054).abs() < 1e-9);
    }

    #[test]
    fn cholesky_reproduces_matrix_and_rejects_indefinite() {
        // A = L0 L0' for a known lower factor.
        let l0 = [2.0, 0.0, 0.0, -1.0, 1.5, 0.0, 0.5, -0.25, 0.8];
        let n = 3;
        let mut a = vec![0.0; 9];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    a[i * n + j] += l0[i * n + k] * l0[j * n + k];
                }
            }
        }
        assert!(cholesky_lower(&mut a, n));
        for i in 0..9 {
            assert!((a[i] - l0[i]).abs() < 1e-12, "entry {i}: {} vs {}", a[i], l0[i]);
        }
        let mut indef = vec![1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_lower(&mut indef, 2));
    }

    #[test]
    fn truncated_normal_integrates_to_one() {
        let (lo, hi) = (0.3, 1.0);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            acc += trunc_normal_pdf(x, 1.0, 0.25, lo, hi) * h;
        }
        assert!((acc - 1.0).abs() < 1e-6);
    }

    #[test]
    fn truncated_sampler_stays_in_bounds_and_hits_median() {
        let x = trunc_normal_sample(1.0, 0.25, 0.3, 1.0, 0.5);
        assert!(x > 0.3 && x < 1.0);
        // Median of the truncated distribution solves F(x) = (F(lo)+F(hi))/2.
        let target = 0.5 * (norm_cdf((0.3 - 1.0) / 0.25) + norm_cdf(0.0));
        let median = 1.0 + 0.25 * norm_inv_cdf(target);
        assert!((x - median).abs() < 1e-12);
    }

    #[test]
    fn quantile_matches_linear_interpolation() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((quantile(&xs, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&xs, 0.0) - 1.0).abs() < 1e-15);
        assert!((quantile(&xs, 1.0) - 4.0).abs() < 1e-15);
        assert!((quantile(&xs, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn dense_solver_inverts_a_known_system() {
        let mut a = vec![2.0, 1.0, -1.0, -3.0, -1.0, 2.0, -2.0, 1.0, 2.0];
        let mut b = vec![8.0, -11.0, -3.0];
        let x = solve_dense(&mut a, &mut b, 3).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
        assert!((x[2] - -1.0).abs() < 1e-12);
    }

    #[test]
    fn banded_lu_matches_dense_solver() {
        // Pseudo-random band entries, checked against the dense routine.
        let n = 40;
        let (kl, ku) = (3, 2);
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut dense = vec![0.0; n * n];
        let mut band = BandedLu::new(n, kl, ku);
        for i in 0..n {
            for j in 0..n {
                if j <= i + ku && i <= j + kl {
                    let v = next() + if i == j { 0.3 } else { 0.0 };
                    dense[i * n + j] = v;
                    band.set(i, j, v);
                }
            }
        }
        let b: Vec<f64> = (0..n).map(|_| next()).collect();
        let mut a_copy = dense.clone();
        let mut b_copy = b.clone();
        let expect = solve_dense(&mut a_copy, &mut b_copy, n).unwrap();
        assert!(band.factor());
        let mut x = b.clone();
        band.solve_in_place(&mut x);
        for (got, want) in x.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn banded_lu_handles_growth_prone_staircase() {
        // Bidiagonal recursion with multiplier 1.2 per step: a one-way sweep
        // amplifies machine error by 1.2^n, a pivoted factorisation does not.
        let n = 200;
        let mut band = BandedLu::new(n, 1, 1);
        for i in 0..n {
            band.set(i, i, 1.0);
            if i + 1 < n {
                band.set(i, i + 1, -1.2);
            }
        }
        // Exact solution x = 1 when b_i = 1 - 1.2 (interior), b_last = 1.
        let mut b = vec![1.0 - 1.2; n];
        b[n - 1] = 1.0;
        assert!(band.factor());
        band.solve_in_place(&mut b);
        for x in &b {
            assert!((x - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn banded_lu_rejects_singular_matrix() {
        let mut band = BandedLu::new(4, 1, 1);
        for i in 0..4 {
            band.set(i, i, 0.0);
        }
        assert!(!band.factor());
    }
}
