//! Sample statistics: two-sample Kolmogorov-Smirnov tests, posterior draw
//! summaries, and pointwise predictive density bands.

use crate::density::{tilt_normalizer, tilted_pdf_with};
use crate::error::{Error, Result};
use crate::math::{mean_sd, quantile};
use crate::model::CostDensitySpec;

/// Direction of the Kolmogorov-Smirnov alternative.
///
/// `Less` tests whether the first sample is stochastically smaller (its CDF
/// lies above); `Greater` the reverse; `TwoSided` any difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    TwoSided,
    Less,
    Greater,
}

#[derive(Debug, Clone, Copy)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Set when either sample has fewer than 20 points and the asymptotic
    /// p-value is unreliable.
    pub small_sample: bool,
}

/// Two-sample Kolmogorov-Smirnov test with tie-aware CDF comparison.
pub fn ks_two_sample(x: &[f64], y: &[f64], alternative: Alternative) -> Result<KsResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::input("Kolmogorov-Smirnov needs nonempty samples"));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    ys.sort_by(|a, b| a.total_cmp(b));
    let (n, m) = (xs.len(), ys.len());

    // Merge walk: at each distinct value advance both samples through all
    // ties before comparing the empirical CDFs.
    let mut d_plus: f64 = 0.0;
    let mut d_minus: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n || j < m {
        let t = match (xs.get(i), ys.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => break,
        };
        while i < n && xs[i] == t {
            i += 1;
        }
        while j < m && ys[j] == t {
            j += 1;
        }
        let fx = i as f64 / n as f64;
        let fy = j as f64 / m as f64;
        d_plus = d_plus.max(fx - fy);
        d_minus = d_minus.max(fy - fx);
    }

    let ne = (n as f64 * m as f64) / (n + m) as f64;
    let (statistic, p_value) = match alternative {
        Alternative::TwoSided => {
            let d = d_plus.max(d_minus);
            (d, kolmogorov_q(ne.sqrt() * d))
        }
        Alternative::Less => (d_plus, (-2.0 * ne * d_plus * d_plus).exp()),
        Alternative::Greater => (d_minus, (-2.0 * ne * d_minus * d_minus).exp()),
    };
    Ok(KsResult {
        statistic,
        p_value: p_value.clamp(0.0, 1.0),
        small_sample: n.min(m) < 20,
    })
}

/// Asymptotic Kolmogorov survival function `Q(lambda)`, using the
/// theta-function series for small arguments and the alternating
/// exponential series otherwise.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    if lambda < 1.18 {
        let t = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let sum = t + t.powi(9) + t.powi(25) + t.powi(49);
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum
    } else {
        let e = (-2.0 * lambda * lambda).exp();
        2.0 * (e - e.powi(4) + e.powi(9) - e.powi(16))
    }
}

/// Moments and central 95% interval of a scalar posterior sample.
#[derive(Debug, Clone, Copy)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn posterior_summary(draws: &[f64]) -> Result<Summary> {
    if draws.is_empty() {
        return Err(Error::input("summary of an empty sample"));
    }
    let (mean, sd) = mean_sd(draws);
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(Summary {
        mean,
        sd,
        lo: quantile(&sorted, 0.025),
        hi: quantile(&sorted, 0.975),
    })
}

/// Pointwise posterior band of the tilted cost density.
#[derive(Debug, Clone, Copy)]
pub struct BandPoint {
    pub c: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// For each grid point, the mean and central 95% interval of the cost
/// density across posterior tilt draws.
pub fn predictive_density_band(
    draws: &[CostDensitySpec],
    grid: &[f64],
) -> Result<Vec<BandPoint>> {
    if draws.is_empty() {
        return Err(Error::input("band of an empty posterior sample"));
    }
    if grid.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::domain("band grid points must lie in [0, 1]"));
    }
    let normalizers: Vec<f64> = draws.iter().map(|d| tilt_normalizer(&d.psi)).collect();
    let mut out = Vec::with_capacity(grid.len());
    let mut values = vec![0.0; draws.len()];
    for &c in grid {
        for (slot, (draw, &z)) in values.iter_mut().zip(draws.iter().zip(&normalizers)) {
            *slot = tilted_pdf_with(&draw.psi, z, c);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        out.push(BandPoint {
            c,
            mean,
            lo: quantile(&sorted, 0.025),
            hi: quantile(&sorted, 0.975),
        });
    }
    Ok(out)
}
