//! Shifted, normalised Legendre basis on [0, 1].
//!
//! The j-th basis function is `phi_j(c) = sqrt(2j+1) * P_j(2c - 1)` with `P_j`
//! the classical Legendre polynomial, so the family is orthonormal under the
//! uniform weight on [0, 1] and `phi_0` (the constant, excluded here) is 1.

use crate::error::{Error, Result};

/// `phi_j(c)` for `j >= 1`, `c` in [0, 1].
pub fn legendre_basis(j: usize, c: f64) -> Result<f64> {
    check_args(j, c)?;
    Ok(basis_unchecked(j, c))
}

/// Derivative `phi_j'(c)` for `j >= 1`, `c` in [0, 1].
pub fn legendre_basis_deriv(j: usize, c: f64) -> Result<f64> {
    check_args(j, c)?;
    Ok(basis_deriv_unchecked(j, c))
}

/// Fill `out[j-1] = phi_j(c)` for `j = 1..=out.len()` in one recurrence pass.
pub fn fill_basis(c: f64, out: &mut [f64]) {
    debug_assert!((0.0..=1.0).contains(&c));
    let x = 2.0 * c - 1.0;
    let mut p0 = 1.0;
    let mut p1 = x;
    for (idx, slot) in out.iter_mut().enumerate() {
        let j = idx + 1;
        if j >= 2 {
            let k = j as f64;
            let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        *slot = ((2 * j + 1) as f64).sqrt() * p1;
    }
}

/// Fill `out[j-1] = phi_j'(c)` for `j = 1..=out.len()`.
pub fn fill_basis_deriv(c: f64, out: &mut [f64]) {
    debug_assert!((0.0..=1.0).contains(&c));
    for (idx, slot) in out.iter_mut().enumerate() {
        *slot = basis_deriv_unchecked(idx + 1, c);
    }
}

pub(crate) fn basis_unchecked(j: usize, c: f64) -> f64 {
    let x = 2.0 * c - 1.0;
    ((2 * j + 1) as f64).sqrt() * legendre_p(j, x)
}

pub(crate) fn basis_deriv_unchecked(j: usize, c: f64) -> f64 {
    let x = 2.0 * c - 1.0;
    2.0 * ((2 * j + 1) as f64).sqrt() * legendre_p_deriv(j, x)
}

fn check_args(j: usize, c: f64) -> Result<()> {
    if j == 0 {
        return Err(Error::domain("basis index must be at least 1"));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::domain(format!("cost {c} outside [0, 1]")));
    }
    Ok(())
}

/// Legendre polynomial `P_j` on [-1, 1] by the three-term recurrence.
fn legendre_p(j: usize, x: f64) -> f64 {
    let mut p0 = 1.0;
    let mut p1 = x;
    if j == 0 {
        return p0;
    }
    for k in 2..=j {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Derivative of `P_j` on [-1, 1], with the endpoint limit handled exactly.
fn legendre_p_deriv(j: usize, x: f64) -> f64 {
    if j == 0 {
        return 0.0;
    }
    if (x * x - 1.0).abs() < 1e-14 {
        // P_j'(+-1) = (+-1)^(j-1) * j(j+1)/2.
        let sign = if x > 0.0 || j % 2 == 1 { 1.0 } else { -1.0 };
        return sign * (j * (j + 1)) as f64 / 2.0;
    }
    let pj = legendre_p(j, x);
    let pjm1 = legendre_p(j - 1, x);
    j as f64 * (x * pj - pjm1) / (x * x - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::GL64;

    #[test]
    fn pinned_values_at_midpoint_and_endpoints() {
        assert_eq!(legendre_basis(1, 0.5).unwrap(), 0.0);
        assert!((legendre_basis(1, 1.0).unwrap() - 3.0f64.sqrt()).abs() < 1e-15);
        assert!((legendre_basis(2, 0.5).unwrap() - (-5.0f64.sqrt() / 2.0)).abs() < 1e-15);
        // phi_1(c) = sqrt(3)(2c-1) has constant derivative 2 sqrt(3).
        assert!((legendre_basis_deriv(1, 0.3).unwrap() - 2.0 * 3.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn family_is_orthonormal_on_unit_interval() {
        for j in 1..=5 {
            for l in 1..=5 {
                let ip = GL64.integrate(|c| basis_unchecked(j, c) * basis_unchecked(l, c));
                let expect = if j == l { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-10, "<phi_{j}, phi_{l}> = {ip}");
            }
        }
    }

    #[test]
    fn interior_extrema_count_grows_with_degree() {
        // phi_j' has j-1 interior roots; count sign changes of the derivative.
        for j in 1..=6usize {
            let mut changes = 0;
            let mut prev = basis_deriv_unchecked(j, 1e-6);
            let steps = 20_000;
            for i in 1..steps {
                let c = i as f64 / steps as f64;
                let d = basis_deriv_unchecked(j, c.min(1.0 - 1e-6));
                if d * prev < 0.0 {
                    changes += 1;
                }
                if d != 0.0 {
                    prev = d;
                }
            }
            assert_eq!(changes, j - 1, "phi_{j} extrema");
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let h = 1e-6;
        for j in 1..=5 {
            for &c in &[0.12, 0.48, 0.77] {
                let fd = (basis_unchecked(j, c + h) - basis_unchecked(j, c - h)) / (2.0 * h);
                let an = basis_deriv_unchecked(j, c);
                assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()));
            }
        }
    }

    #[test]
    fn endpoint_derivative_uses_closed_form() {
        for j in 1..=6usize {
            let inner = basis_deriv_unchecked(j, 1.0 - 1e-9);
            let end = basis_deriv_unchecked(j, 1.0);
            assert!((inner - end).abs() < 1e-4 * end.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(legendre_basis(0, 0.5).is_err());
        assert!(legendre_basis(1, -0.1).is_err());
        assert!(legendre_basis(1, 1.5).is_err());
    }

    #[test]
    fn fill_matches_single_evaluations() {
        let mut out = [0.0; 5];
        fill_basis(0.37, &mut out);
        for (idx, &v) in out.iter().enumerate() {
            assert!((v - basis_unchecked(idx + 1, 0.37)).abs() < 1e-14);
        }
    }
}
