//! Boundary diagnostic for risk-parameter identification.
//!
//! In a two-type configuration the inverse first-order condition evaluated
//! at the lowest bid ties the types' risk parameters together through their
//! bid densities there: both types' costs hit the common lower endpoint, so
//! g_a eta_a − g_b eta_b = g_a − g_b. Three pairwise configurations covering
//! three types stack into a 3x3 linear system for (eta_1, eta_2, eta_3).
//!
//! The construction carries a built-in degeneracy: eta = (1, 1, 1) satisfies
//! every row by inspection, so a nonsingular instance can only return
//! all-ones, and inputs consistent with unequal risk parameters necessarily
//! make the matrix singular. This module assembles the system verbatim and
//! reports its conditioning; it does not attempt to repair the construction
//! or estimate densities from data.

use crate::error::{Error, Result};
use crate::math::solve_dense;

/// One two-type configuration: the participating types and their bid-density
/// values at that configuration's lowest bid.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryPair {
    /// Zero-based type labels, distinct, both < 3.
    pub types: (usize, usize),
    /// Bid densities of `types.0` and `types.1` at the lowest bid.
    pub densities: (f64, f64),
}

/// Density information from three pairwise configurations.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryDensityInput {
    pub pairs: [BoundaryPair; 3],
}

impl BoundaryDensityInput {
    /// The canonical layout {1,2}, {1,3}, {2,3} with densities in pair
    /// order: (g1, g2) at the first configuration's lowest bid, (g1', g3')
    /// at the second, (g2'', g3'') at the third.
    pub fn pairwise(g: [f64; 6]) -> Self {
        BoundaryDensityInput {
            pairs: [
                BoundaryPair { types: (0, 1), densities: (g[0], g[1]) },
                BoundaryPair { types: (0, 2), densities: (g[2], g[3]) },
                BoundaryPair { types: (1, 2), densities: (g[4], g[5]) },
            ],
        }
    }
}

/// Solved boundary system with its conditioning report.
#[derive(Debug, Clone)]
pub struct EtaIdentification {
    pub eta: [f64; 3],
    pub determinant: f64,
    /// 1-norm condition number of the assembled matrix.
    pub condition: f64,
}

fn assemble(input: &BoundaryDensityInput) -> Result<([f64; 9], [f64; 3])> {
    let mut a = [0.0f64; 9];
    let mut rhs = [0.0f64; 3];
    for (row, pair) in input.pairs.iter().enumerate() {
        let (ta, tb) = pair.types;
        if ta >= 3 || tb >= 3 || ta == tb {
            return Err(Error::shape(
                "each configuration names two distinct types among the first three",
            ));
        }
        let (ga, gb) = pair.densities;
        if !(ga.is_finite() && gb.is_finite() && ga > 0.0 && gb > 0.0) {
            return Err(Error::domain("boundary bid densities must be positive"));
        }
        a[row * 3 + ta] = ga;
        a[row * 3 + tb] = -gb;
        rhs[row] = ga - gb;
    }
    Ok((a, rhs))
}

fn det3(a: &[f64; 9]) -> f64 {
    a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
        + a[2] * (a[3] * a[7] - a[4] * a[6])
}

fn norm1(a: &[f64; 9]) -> f64 {
    (0..3)
        .map(|j| (0..3).map(|i| a[i * 3 + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn condition_number(a: &[f64; 9], det: f64) -> f64 {
    if det == 0.0 || !det.is_finite() {
        return f64::INFINITY;
    }
    let m = |r: usize, c: usize| a[r * 3 + c];
    let inv_det = 1.0 / det;
    let inv = [
        (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) * inv_det,
        (m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2)) * inv_det,
        (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) * inv_det,
        (m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2)) * inv_det,
        (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) * inv_det,
        (m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2)) * inv_det,
        (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0)) * inv_det,
        (m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1)) * inv_det,
        (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) * inv_det,
    ];
    norm1(a) * norm1(&inv)
}

/// Solve the stacked boundary system for the three risk parameters.
///
/// Fails with a singularity error when the matrix is singular or its
/// condition number exceeds 1e12. Because all-ones solves every instance,
/// a singular matrix is exactly what model-consistent inputs with unequal
/// risk parameters produce.
pub fn solve_eta_system(input: &BoundaryDensityInput) -> Result<EtaIdentification> {
    let (a, rhs) = assemble(input)?;
    let determinant = det3(&a);
    let condition = condition_number(&a, determinant);
    if !condition.is_finite() || condition > 1e12 {
        return Err(Error::Singular { cond: condition });
    }
    let mut work = a.to_vec();
    let mut b = rhs.to_vec();
    let x = solve_dense(&mut work, &mut b, 3)
        .ok_or(Error::Singular { cond: condition })?;
    Ok(EtaIdentification { eta: [x[0], x[1], x[2]], determinant, condition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_instance_returns_all_ones() {
        let input = BoundaryDensityInput::pairwise([1.0, 1.0, 1.0, 2.0, 1.0, 1.0]);
        let out = solve_eta_system(&input).unwrap();
        assert!((out.determinant - 1.0).abs() < 1e-14);
        for e in out.eta {
            assert!((e - 1.0).abs() < 1e-10);
        }
        assert!(out.condition >= 1.0 && out.condition < 100.0);
    }

    #[test]
    fn equal_densities_are_singular() {
        let input = BoundaryDensityInput::pairwise([0.8; 6]);
        match solve_eta_system(&input) {
            Err(Error::Singular { cond }) => assert!(cond.is_infinite() || cond > 1e12),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn near_singular_conditioning_is_rejected() {
        let eps = 1e-14;
        let input = BoundaryDensityInput::pairwise([1.0 + eps, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(solve_eta_system(&input), Err(Error::Singular { .. })));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut input = BoundaryDensityInput::pairwise([1.0, 1.0, 1.0, 2.0, 1.0, 1.0]);
        input.pairs[1].densities.0 = 0.0;
        assert!(solve_eta_system(&input).is_err());
        input.pairs[1].densities.0 = -0.3;
        assert!(solve_eta_system(&input).is_err());
        let mut input = BoundaryDensityInput::pairwise([1.0, 1.0, 1.0, 2.0, 1.0, 1.0]);
        input.pairs[2].types = (1, 1);
        assert!(solve_eta_system(&input).is_err());
        input.pairs[2].types = (1, 3);
        assert!(solve_eta_system(&input).is_err());
    }

    proptest! {
        // All-ones satisfies each row exactly: the residual is the same
        // floating-point subtraction on both sides.
        #[test]
        fn all_ones_residual_is_exactly_zero(
            g in prop::array::uniform6(0.1f64..4.0)
        ) {
            let input = BoundaryDensityInput::pairwise(g);
            let (a, rhs) = assemble(&input).unwrap();
            for row in 0..3 {
                let lhs = a[row * 3] + a[row * 3 + 1] + a[row * 3 + 2];
                prop_assert_eq!(lhs, rhs[row]);
            }
        }

        #[test]
        fn closed_form_determinant_matches_generic_expansion(
            g in prop::array::uniform6(0.1f64..4.0)
        ) {
            let input = BoundaryDensityInput::pairwise(g);
            let (a, _) = assemble(&input).unwrap();
            let closed = g[0] * g[3] * g[4] - g[1] * g[2] * g[5];
            prop_assert!((det3(&a) - closed).abs() < 1e-12);
        }

        #[test]
        fn nonsingular_instances_solve_to_all_ones(
            g in prop::array::uniform6(0.1f64..4.0)
        ) {
            let input = BoundaryDensityInput::pairwise(g);
            match solve_eta_system(&input) {
                Ok(out) => {
                    for e in out.eta {
                        prop_assert!((e - 1.0).abs() < 1e-10);
                    }
                }
                Err(Error::Singular { .. }) => {}
                Err(other) => prop_assert!(false, "unexpected error {other:?}"),
            }
        }
    }
}
