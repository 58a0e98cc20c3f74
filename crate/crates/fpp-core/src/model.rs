//! Model primitives: cost-density specifications, unobserved-heterogeneity
//! scale, priors, bidder configurations, and the prepared [`Model`] bundle.

use crate::density::CostDensity;
use crate::error::{Error, Result};
use crate::math::{norm_cdf, norm_log_pdf};

/// Truncation constant for the latent scale: `u` lives on
/// `[1 - C_U * sigma_u, 1]`, i.e. `C_U` standard deviations below the mean.
pub const C_U: f64 = 2.5758293;

/// Upper bound of the latent-scale standard deviation, chosen so the support
/// floor `1 - C_U * sigma_u` stays at or above 0.1.
pub fn sigma_u_cap() -> f64 {
    0.9 / C_U
}

/// Log-tilted cost density coefficients on the shifted Legendre basis.
///
/// The implied density is `0.01 + 0.99 * exp(phi(c)' psi) / Z` on [0, 1],
/// where `Z` normalises the exponential tilt to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct CostDensitySpec {
    pub psi: Vec<f64>,
}

impl CostDensitySpec {
    pub fn new(psi: Vec<f64>) -> Result<Self> {
        if psi.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("tilt coefficients must be finite"));
        }
        Ok(CostDensitySpec { psi })
    }

    pub fn uniform(k: usize) -> Self {
        CostDensitySpec { psi: vec![0.0; k] }
    }

    pub fn order(&self) -> usize {
        self.psi.len()
    }
}

/// A cost density: either the estimable tilted family or a fixed beta
/// mixture used as a simulation truth.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    Tilted(CostDensitySpec),
    /// `uniform_weight + (1 - uniform_weight) * Beta(alpha, beta)` on [0, 1].
    BetaMixture {
        uniform_weight: f64,
        alpha: f64,
        beta: f64,
    },
}

impl DensityKind {
    pub fn tilted(&self) -> Option<&CostDensitySpec> {
        match self {
            DensityKind::Tilted(spec) => Some(spec),
            DensityKind::BetaMixture { .. } => None,
        }
    }
}

/// Latent procurement-level scale: `u ~ N(1, sigma_u^2)` truncated to
/// `[1 - C_U * sigma_u, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UHSpec {
    pub sigma_u: f64,
}

impl UHSpec {
    pub fn new(sigma_u: f64) -> Result<Self> {
        if !sigma_u.is_finite() || sigma_u < 0.0 || sigma_u > sigma_u_cap() + 1e-12 {
            return Err(Error::domain(format!(
                "sigma_u {sigma_u} outside [0, {:.6}]",
                sigma_u_cap()
            )));
        }
        Ok(UHSpec { sigma_u })
    }

    /// Lower support endpoint of the latent scale.
    pub fn u_floor(&self) -> f64 {
        1.0 - C_U * self.sigma_u
    }

    /// Whether the scale is degenerate at 1 (no unobserved heterogeneity).
    pub fn is_degenerate(&self) -> bool {
        self.sigma_u == 0.0
    }
}

/// Log density of the truncated latent scale at `u`.
///
/// Returns negative infinity outside the support. Errors when the scale
/// specification is degenerate (`sigma_u = 0` has no density).
pub fn log_uh_density(u: f64, spec: &UHSpec) -> Result<f64> {
    if spec.is_degenerate() {
        return Err(Error::domain("latent scale density undefined at sigma_u = 0"));
    }
    if u < spec.u_floor() || u > 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    // Mass between C_U standard deviations below the mean and the mean.
    let mass = norm_cdf(0.0) - norm_cdf(-C_U);
    Ok(norm_log_pdf((u - 1.0) / spec.sigma_u) - spec.sigma_u.ln() - mass.ln())
}

/// Independent priors: mean-zero Gaussians with geometrically decaying
/// standard deviations on the tilt coefficients, uniform risk parameters on
/// `[0, eta_max)`, uniform latent-scale standard deviation on `(0, cap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub psi_sd: Vec<f64>,
    pub eta_max: f64,
    pub sigma_u_max: f64,
}

impl PriorSpec {
    /// Default prior for a basis of order `k`: sd of the j-th coefficient
    /// is `2^-j`.
    pub fn defaults(k: usize) -> Self {
        PriorSpec {
            psi_sd: (1..=k as i32).map(|j| 0.5f64.powi(j)).collect(),
            eta_max: 0.9,
            sigma_u_max: sigma_u_cap(),
        }
    }
}

/// Full parameter vector: one cost density and risk parameter per bidder
/// type, plus the latent-scale spread.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub densities: Vec<DensityKind>,
    pub eta: Vec<f64>,
    pub uh: UHSpec,
}

impl ModelParams {
    pub fn n_types(&self) -> usize {
        self.densities.len()
    }
}

/// Joint log prior density, negative infinity off the support.
///
/// Only the tilted family carries prior mass; fixed mixtures are simulation
/// devices outside the parameter space.
pub fn log_prior(params: &ModelParams, prior: &PriorSpec) -> f64 {
    let mut total = 0.0;
    for kind in &params.densities {
        let Some(spec) = kind.tilted() else {
            return f64::NEG_INFINITY;
        };
        if spec.order() > prior.psi_sd.len() {
            return f64::NEG_INFINITY;
        }
        for (psi, sd) in spec.psi.iter().zip(&prior.psi_sd) {
            total += norm_log_pdf(psi / sd) - sd.ln();
        }
    }
    for &eta in &params.eta {
        if !(0.0..prior.eta_max).contains(&eta) {
            return f64::NEG_INFINITY;
        }
        total -= prior.eta_max.ln();
    }
    let sigma = params.uh.sigma_u;
    if sigma <= 0.0 || sigma > prior.sigma_u_max {
        return f64::NEG_INFINITY;
    }
    total - prior.sigma_u_max.ln()
}

/// A procurement's bidder composition: how many bidders of each type attend.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BidderConfig {
    counts: Vec<u32>,
}

impl BidderConfig {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::shape("configuration needs at least one type slot"));
        }
        if counts.iter().map(|&c| c as u64).sum::<u64>() < 2 {
            return Err(Error::input("competitive bidding needs at least two bidders"));
        }
        Ok(BidderConfig { counts })
    }

    /// Build from per-bidder type labels (0-based), padding to `n_types`.
    pub fn from_types(types: &[usize], n_types: usize) -> Result<Self> {
        let mut counts = vec![0u32; n_types];
        for &t in types {
            if t >= n_types {
                return Err(Error::input(format!("type label {t} out of range")));
            }
            counts[t] += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n_types(&self) -> usize {
        self.counts.len()
    }

    pub fn n_bidders(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Types with at least one bidder present.
    pub fn participating(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(t, _)| t)
    }

    pub fn contains_type(&self, tau: usize) -> bool {
        self.counts.get(tau).is_some_and(|&c| c > 0)
    }

    /// The same composition with one extra bidder of type `tau`.
    pub fn with_added(&self, tau: usize) -> Result<Self> {
        if tau >= self.counts.len() {
            return Err(Error::input(format!("type label {tau} out of range")));
        }
        let mut counts = self.counts.clone();
        counts[tau] += 1;
        Self::new(counts)
    }
}

/// Validated parameters together with prepared density tables.
///
/// Building the tables once per parameter value keeps equilibrium solves and
/// likelihood evaluations cheap; everything downstream borrows a `Model`.
#[derive(Debug, Clone)]
pub struct Model {
    params: ModelParams,
    densities: Vec<CostDensity>,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        if params.densities.is_empty() {
            return Err(Error::shape("model needs at least one bidder type"));
        }
        if params.eta.len() != params.densities.len() {
            return Err(Error::shape(format!(
                "{} risk parameters for {} types",
                params.eta.len(),
                params.densities.len()
            )));
        }
        for &eta in &params.eta {
            if !(0.0..1.0).contains(&eta) {
                return Err(Error::domain(format!("risk parameter {eta} outside [0, 1)")));
            }
        }
        UHSpec::new(params.uh.sigma_u)?;
        let densities = params
            .densities
            .iter()
            .map(CostDensity::build)
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { params, densities })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n_types(&self) -> usize {
        self.densities.len()
    }

    pub fn density(&self, tau: usize) -> &CostDensity {
        &self.densities[tau]
    }

    pub fn eta(&self, tau: usize) -> f64 {
        self.params.eta[tau]
    }
}
