//! Prepared cost densities: pointwise pdf, accurate CDF and survival grids,
//! and table-based sampling.
//!
//! A [`CostDensity`] is built once per parameter value. The CDF and the
//! survival function are accumulated on a fine grid by per-interval
//! Gauss-Legendre panels and interpolated with pdf-slope Hermite cubics; the
//! survival grid is cumulated from the upper endpoint so that small upper
//! tails are never computed as `1 - F` cancellations.

use crate::basis::{fill_basis, fill_basis_deriv};
use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::model::DensityKind;
use crate::quad::GL8;
use rand::Rng;
use statrs::function::gamma::ln_gamma;

/// Uniform floor weight of the tilted family.
const FLOOR: f64 = 0.01;
/// Weight of the normalised exponential tilt.
const TILT: f64 = 0.99;
/// Exponent clip bound for the tilt, applied symmetrically.
const EXP_CLIP: f64 = 50.0;
/// Number of CDF table intervals.
const TABLE_INTERVALS: usize = 1024;
/// Largest supported basis order.
pub const MAX_BASIS_ORDER: usize = 16;

#[derive(Clone)]
enum Family {
    Tilted { psi: Vec<f64>, z: f64 },
    Mixture { w: f64, a: f64, b: f64, ln_beta: f64 },
}

/// A cost density prepared for repeated evaluation.
#[derive(Clone)]
pub struct CostDensity {
    family: Family,
    cost_cdf: MonotoneCubic,
    value_cdf: MonotoneCubic,
    grid: Vec<f64>,
    cum: Vec<f64>,
}

impl std::fmt::Debug for CostDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.family {
            Family::Tilted { psi, .. } => write!(f, "CostDensity::Tilted(k={})", psi.len()),
            Family::Mixture { w, a, b, .. } => {
                write!(f, "CostDensity::Mixture(w={w}, a={a}, b={b})")
            }
        }
    }
}

impl CostDensity {
    pub fn build(kind: &DensityKind) -> Result<Self> {
        let n = TABLE_INTERVALS;
        let grid: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();

        // The tilt normaliser and the CDF increments are accumulated from the
        // same quadrature panels, so the table mass is 1 by construction even
        // when the exponent clip is active.
        let (family, increments) = match kind {
            DensityKind::Tilted(spec) => {
                if spec.psi.iter().any(|p| !p.is_finite()) {
                    return Err(Error::domain("tilt coefficients must be finite"));
                }
                if spec.order() > MAX_BASIS_ORDER {
                    return Err(Error::shape(format!(
                        "basis order {} exceeds cap {MAX_BASIS_ORDER}",
                        spec.order()
                    )));
                }
                let psi = spec.psi.clone();
                let panels: Vec<f64> = (0..n)
                    .map(|k| GL8.integrate_over(grid[k], grid[k + 1], |c| tilt_exp(&psi, c)))
                    .collect();
                let z: f64 = panels.iter().sum();
                let width = 1.0 / n as f64;
                let increments: Vec<f64> = panels
                    .iter()
                    .map(|t| FLOOR * width + TILT * t / z)
                    .collect();
                (Family::Tilted { psi, z }, increments)
            }
            DensityKind::BetaMixture { uniform_weight, alpha, beta } => {
                let (w, a, b) = (*uniform_weight, *alpha, *beta);
                if !(0.0..=1.0).contains(&w) || !(a > 0.0) || !(b > 0.0) {
                    return Err(Error::domain(format!(
                        "invalid mixture parameters w={w}, alpha={a}, beta={b}"
                    )));
                }
                let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
                let family = Family::Mixture { w, a, b, ln_beta };
                let increments: Vec<f64> = (0..n)
                    .map(|k| GL8.integrate_over(grid[k], grid[k + 1], |c| family_pdf(&family, c)))
                    .collect();
                (family, increments)
            }
        };
        if increments.iter().any(|&inc| !(inc > 0.0)) {
            return Err(Error::domain("density not strictly positive everywhere"));
        }
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for k in 0..n {
            cum.push(cum[k] + increments[k]);
        }
        if (cum[n] - 1.0).abs() > 1e-6 {
            return Err(Error::domain(format!(
                "density mass {:.8} differs from 1",
                cum[n]
            )));
        }
        let mut vcum = Vec::with_capacity(n + 1);
        vcum.push(0.0);
        for k in 0..n {
            vcum.push(vcum[k] + increments[n - 1 - k]);
        }
        let pdf_nodes: Vec<f64> = grid.iter().map(|&c| family_pdf(&family, c)).collect();
        let pdf_rev: Vec<f64> = pdf_nodes.iter().rev().copied().collect();
        let cost_cdf = MonotoneCubic::with_slopes(grid.clone(), cum.clone(), pdf_nodes)?;
        let value_cdf = MonotoneCubic::with_slopes(grid.clone(), vcum, pdf_rev)?;
        Ok(CostDensity { family, cost_cdf, value_cdf, grid, cum })
    }

    /// Density at cost `c`; zero outside [0, 1].
    pub fn pdf(&self, c: f64) -> f64 {
        if !(0.0..=1.0).contains(&c) {
            return 0.0;
        }
        family_pdf(&self.family, c)
    }

    /// Derivative of the density at `c` in (0, 1), endpoints included where
    /// the one-sided limit is finite.
    pub fn pdf_deriv(&self, c: f64) -> f64 {
        match &self.family {
            Family::Tilted { psi, z } => {
                let k = psi.len();
                if k == 0 {
                    return 0.0;
                }
                let mut vals = [0.0; MAX_BASIS_ORDER];
                fill_basis(c, &mut vals[..k]);
                let e: f64 = psi.iter().zip(&vals[..k]).map(|(p, v)| p * v).sum();
                if e.abs() >= EXP_CLIP {
                    return 0.0;
                }
                let mut dvals = [0.0; MAX_BASIS_ORDER];
                fill_basis_deriv(c, &mut dvals[..k]);
                let de: f64 = psi.iter().zip(&dvals[..k]).map(|(p, v)| p * v).sum();
                TILT * e.exp() / z * de
            }
            Family::Mixture { w, a, b, ln_beta } => {
                let scale = (1.0 - w) * (-ln_beta).exp();
                let t1 = if *a == 1.0 {
                    0.0
                } else {
                    (a - 1.0) * c.powf(a - 2.0) * (1.0 - c).powf(b - 1.0)
                };
                let t2 = if *b == 1.0 {
                    0.0
                } else {
                    (b - 1.0) * c.powf(a - 1.0) * (1.0 - c).powf(b - 2.0)
                };
                scale * (t1 - t2)
            }
        }
    }

    /// Mass at or below `c` (clamped into [0, 1]).
    pub fn cdf(&self, c: f64) -> f64 {
        self.cost_cdf.eval(c)
    }

    /// Mass strictly above `c`, accumulated from the upper endpoint.
    pub fn survival(&self, c: f64) -> f64 {
        self.value_cdf.eval(1.0 - c)
    }

    /// Survival expressed in value coordinates: mass of costs above `1 - v`.
    pub fn value_mass(&self, v: f64) -> f64 {
        self.value_cdf.eval(v)
    }

    /// Inverse CDF by linear interpolation of the cumulative table.
    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        let total = *self.cum.last().unwrap();
        if p >= total {
            return 1.0;
        }
        let i = self
            .cum
            .partition_point(|&m| m <= p)
            .saturating_sub(1)
            .min(self.cum.len() - 2);
        let span = self.cum[i + 1] - self.cum[i];
        let frac = (p - self.cum[i]) / span;
        self.grid[i] + frac * (self.grid[i + 1] - self.grid[i])
    }

    /// Draw one cost, consuming exactly one uniform variate.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// Pointwise tilted pdf without building tables, for summaries over many
/// posterior draws. The normaliser is computed once per call site via
/// [`tilt_normalizer`].
pub(crate) fn tilted_pdf_with(psi: &[f64], z: f64, c: f64) -> f64 {
    FLOOR + TILT * tilt_exp(psi, c) / z
}

pub(crate) fn tilt_normalizer(psi: &[f64]) -> f64 {
    crate::quad::GL64.integrate(|c| tilt_exp(psi, c))
}

fn tilt_exp(psi: &[f64], c: f64) -> f64 {
    let k = psi.len();
    if k == 0 {
        return 1.0;
    }
    let mut vals = [0.0; MAX_BASIS_ORDER];
    fill_basis(c, &mut vals[..k]);
    let e: f64 = psi.iter().zip(&vals[..k]).map(|(p, v)| p * v).sum();
    e.clamp(-EXP_CLIP, EXP_CLIP).exp()
}

fn family_pdf(family: &Family, c: f64) -> f64 {
    match family {
        Family::Tilted { psi, z } => FLOOR + TILT * tilt_exp(psi, c) / z,
        Family::Mixture { w, a, b, ln_beta } => {
            let t1 = if *a == 1.0 { 0.0 } else { (a - 1.0) * c.ln() };
            let t2 = if *b == 1.0 { 0.0 } else { (b - 1.0) * (1.0 - c).ln() };
            w + (1.0 - w) * (t1 + t2 - ln_beta).exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostDensitySpec;
    use crate::rng::substream;

    /// Composite Simpson integration, independent of the quadrature module.
    fn simpson(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let n = n + n % 2;
        let h = (hi - lo) / n as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    fn tilted(psi: Vec<f64>) -> CostDensity {
        CostDensity::build(&DensityKind::Tilted(CostDensitySpec::new(psi).unwrap())).unwrap()
    }

    #[test]
    fn zero_tilt_is_exactly_uniform() {
        let d = tilted(vec![0.0; 5]);
        for &c in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            assert_eq!(d.pdf(c), 1.0);
        }
        for &c in &[0.1, 0.37, 0.9] {
            assert!((d.cdf(c) - c).abs() < 1e-13);
            assert!((d.survival(c) - (1.0 - c)).abs() < 1e-13);
            assert!((d.quantile(c) - c).abs() < 1e-13);
        }
    }

    #[test]
    fn tilted_pdf_matches_independent_normalisation() {
        let psi = vec![0.8, -0.4, 0.2];
        let d = tilted(psi.clone());
        let z = simpson(0.0, 1.0, 4000, |c| tilt_exp(&psi, c));
        for &c in &[0.05, 0.3, 0.62, 0.97] {
            let expect = 0.01 + 0.99 * tilt_exp(&psi, c) / z;
            assert!((d.pdf(c) - expect).abs() < 1e-10, "pdf({c})");
        }
        let mass = simpson(0.0, 1.0, 4000, |c| d.pdf(c));
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cdf_matches_direct_integration_and_complements_survival() {
        let d = tilted(vec![0.6, 0.3, -0.5, 0.1, 0.05]);
        for &c in &[0.08, 0.33, 0.5, 0.81, 0.99] {
            let direct = simpson(0.0, c, 4000, |x| d.pdf(x));
            assert!((d.cdf(c) - direct).abs() < 1e-10, "cdf({c})");
            assert!((d.cdf(c) + d.survival(c) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn survival_tail_avoids_cancellation() {
        let d = tilted(vec![0.5]);
        let c = 1.0 - 1e-6;
        let tail = simpson(c, 1.0, 2000, |x| d.pdf(x));
        let rel = (d.survival(c) - tail).abs() / tail;
        assert!(rel < 1e-8, "relative tail error {rel}");
    }

    #[test]
    fn beta_mixture_values_and_derivative() {
        let kind = DensityKind::BetaMixture { uniform_weight: 0.1, alpha: 1.0, beta: 4.0 };
        let d = CostDensity::build(&kind).unwrap();
        // Beta(1,4) has pdf 4(1-c)^3, so the mixture at 0 is 0.1 + 0.9*4.
        assert!((d.pdf(0.0) - 3.7).abs() < 1e-12);
        assert!((d.pdf(1.0) - 0.1).abs() < 1e-12);
        let mass = simpson(0.0, 1.0, 4000, |c| d.pdf(c));
        assert!((mass - 1.0).abs() < 1e-10);
        let h = 1e-6;
        for &c in &[0.2, 0.5, 0.8] {
            let fd = (d.pdf(c + h) - d.pdf(c - h)) / (2.0 * h);
            assert!((d.pdf_deriv(c) - fd).abs() < 1e-5);
        }
        // Endpoint derivative of the Beta(1,4) part: -0.9 * 4 * 3 = -10.8.
        assert!((d.pdf_deriv(0.0) + 10.8).abs() < 1e-10);
        assert_eq!(d.pdf_deriv(1.0), 0.0);
    }

    #[test]
    fn tilted_derivative_matches_finite_differences() {
        let d = tilted(vec![0.7, -0.3, 0.2, 0.0, 0.1]);
        let h = 1e-6;
        for &c in &[0.1, 0.45, 0.77] {
            let fd = (d.pdf(c + h) - d.pdf(c - h)) / (2.0 * h);
            assert!((d.pdf_deriv(c) - fd).abs() < 1e-5, "deriv({c})");
        }
    }

    #[test]
    fn quantile_inverts_cdf_on_the_table() {
        let d = tilted(vec![-0.9, 0.4]);
        // The sampling table interpolates linearly, so the roundtrip is only
        // accurate to the table's quadratic error; that is ample for draws.
        for &p in &[0.01, 0.2, 0.5, 0.8, 0.99] {
            let c = d.quantile(p);
            assert!((d.cdf(c) - p).abs() < 1e-5, "roundtrip at {p}");
        }
        assert_eq!(d.quantile(0.0), 0.0);
        assert_eq!(d.quantile(1.0), 1.0);
    }

    #[test]
    fn sampling_matches_distribution_moments() {
        let d = tilted(vec![0.5, -0.2]);
        let mut rng = substream(7, &[1]);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        let expect = simpson(0.0, 1.0, 4000, |c| c * d.pdf(c));
        assert!((mean - expect).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn extreme_tilts_stay_finite() {
        // The exponent clip kicks in; the density must remain finite,
        // floored, and normalised to within the clip kink's quadrature error.
        let d = tilted(vec![40.0]);
        for &c in &[0.0, 0.5, 1.0] {
            assert!(d.pdf(c).is_finite());
            assert!(d.pdf(c) >= 0.01);
        }
        assert!((simpson(0.0, 1.0, 8000, |c| d.pdf(c)) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(CostDensity::build(&DensityKind::BetaMixture {
            uniform_weight: 1.2,
            alpha: 1.0,
            beta: 1.0
        })
        .is_err());
        assert!(CostDensity::build(&DensityKind::BetaMixture {
            uniform_weight: 0.5,
            alpha: 0.0,
            beta: 1.0
        })
        .is_err());
    }
}
