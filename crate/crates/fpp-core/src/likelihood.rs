//! Bid likelihoods through the equilibrium change of variables.
//!
//! An observed bid is `b = u * beta_tau(c)` with `u` the procurement-level
//! latent scale, so its density is `f_tau(phi_tau(b/u)) / (u * beta_tau'(...))`
//! on the scaled support `[u * b_min, u * max_bid]` and zero elsewhere.

use crate::equilibrium::{solve_equilibrium, EquilibriumSolution};
use crate::error::{Error, Result};
use crate::model::{log_uh_density, BidderConfig, Model};
use std::collections::HashMap;

/// One procurement: its observed (normalised) bids and bidder types.
#[derive(Debug, Clone)]
pub struct ProcurementRecord {
    pub id: String,
    /// Original reserve price the bids were normalised by.
    pub reserve: f64,
    /// Type label of each bid's submitter, parallel to `bids`.
    pub bidder_types: Vec<usize>,
    /// Bids divided by the reserve price, in (0, 1].
    pub bids: Vec<f64>,
    /// Latent scale slot, filled during estimation or simulation.
    pub u: Option<f64>,
}

impl ProcurementRecord {
    pub fn config(&self, n_types: usize) -> Result<BidderConfig> {
        BidderConfig::from_types(&self.bidder_types, n_types)
    }
}

/// Density of one observed bid `b` from a type-`tau` bidder, given the
/// latent scale `u` and the solved equilibrium of the record's configuration.
///
/// Returns 0 when `b / u` falls outside the equilibrium bid support.
pub fn bid_density(
    b: f64,
    u: f64,
    tau: usize,
    model: &Model,
    sol: &EquilibriumSolution,
) -> Result<f64> {
    if !(u > 0.0) {
        return Err(Error::input(format!("latent scale {u} must be positive")));
    }
    let x = b / u;
    if x < sol.b_min() || x > sol.max_bid() {
        return Ok(0.0);
    }
    let c = sol.inverse_bid(tau, x)?;
    let slope = sol.bid_deriv(tau, c)?;
    Ok(model.density(tau).pdf(c) / (slope * u))
}

/// Log density of all bids in a record given an explicit latent scale.
pub fn record_loglik_at(
    rec: &ProcurementRecord,
    model: &Model,
    sol: &EquilibriumSolution,
    u: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (&b, &tau) in rec.bids.iter().zip(&rec.bidder_types) {
        let g = bid_density(b, u, tau, model, sol)?;
        if g <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += g.ln();
    }
    Ok(total)
}

/// Log density of a record's bids at its stored latent scale.
pub fn procurement_loglik(
    rec: &ProcurementRecord,
    model: &Model,
    sol: &EquilibriumSolution,
) -> Result<f64> {
    let u = rec
        .u
        .ok_or_else(|| Error::input(format!("record {} has no latent scale set", rec.id)))?;
    record_loglik_at(rec, model, sol, u)
}

/// Joint log likelihood of a dataset: per-record bid densities plus the
/// latent-scale density, solving each distinct configuration once.
///
/// Equilibrium failures are reported as a negative-infinity likelihood with
/// one diagnostic line per failed configuration.
pub fn dataset_loglik(data: &[ProcurementRecord], model: &Model) -> f64 {
    dataset_loglik_detailed(data, model).0
}

pub fn dataset_loglik_detailed(data: &[ProcurementRecord], model: &Model) -> (f64, Vec<String>) {
    let mut cache: HashMap<Vec<u32>, EquilibriumSolution> = HashMap::new();
    let mut diagnostics = Vec::new();
    let mut total = 0.0;
    for rec in data {
        let config = match rec.config(model.n_types()) {
            Ok(c) => c,
            Err(e) => {
                diagnostics.push(format!("record {}: {e}", rec.id));
                return (f64::NEG_INFINITY, diagnostics);
            }
        };
        let key = config.counts().to_vec();
        if !cache.contains_key(&key) {
            match solve_equilibrium(model, &config) {
                Ok(sol) => {
                    cache.insert(key.clone(), sol);
                }
                Err(e) => {
                    diagnostics.push(format!("configuration {key:?}: {e}"));
                    return (f64::NEG_INFINITY, diagnostics);
                }
            }
        }
        let sol = &cache[&key];
        let rec_ll = match procurement_loglik(rec, model, sol) {
            Ok(v) => v,
            Err(e) => {
                diagnostics.push(format!("record {}: {e}", rec.id));
                return (f64::NEG_INFINITY, diagnostics);
            }
        };
        if rec_ll == f64::NEG_INFINITY {
            return (f64::NEG_INFINITY, diagnostics);
        }
        total += rec_ll;
        if !model.params().uh.is_degenerate() {
            let lu = match log_uh_density(rec.u.unwrap(), &model.params().uh) {
                Ok(v) => v,
                Err(e) => {
                    diagnostics.push(format!("record {}: {e}", rec.id));
                    return (f64::NEG_INFINITY, diagnostics);
                }
            };
            if lu == f64::NEG_INFINITY {
                return (f64::NEG_INFINITY, diagnostics);
            }
            total += lu;
        }
    }
    (total, diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostDensitySpec, DensityKind, ModelParams, UHSpec};

    fn uniform_pair_model(sigma_u: f64) -> Model {
        Model::new(ModelParams {
            densities: vec![DensityKind::Tilted(CostDensitySpec::uniform(0))],
            eta: vec![0.0],
            uh: UHSpec { sigma_u },
        })
        .unwrap()
    }

    fn pair_solution(model: &Model) -> EquilibriumSolution {
        solve_equilibrium(model, &BidderConfig::new(vec![2]).unwrap()).unwrap()
    }

    #[test]
    fn uniform_pair_bid_density_is_flat_at_two() {
        // bid = (1 + c)/2, so the bid density is f(2b-1) * 2 = 2 on [1/2, 1].
        let model = uniform_pair_model(0.0);
        let sol = pair_solution(&model);
        for &b in &[0.55, 0.7, 0.85, 0.99] {
            let g = bid_density(b, 1.0, 0, &model, &sol).unwrap();
            assert!((g - 2.0).abs() < 1e-7, "g({b}) = {g}");
        }
        assert_eq!(bid_density(0.45, 1.0, 0, &model, &sol).unwrap(), 0.0);
        assert_eq!(bid_density(1.05, 1.0, 0, &model, &sol).unwrap(), 0.0);
    }

    #[test]
    fn latent_scale_shifts_and_rescales_the_support() {
        let model = uniform_pair_model(0.0);
        let sol = pair_solution(&model);
        let u = 0.8;
        // Support becomes [0.4, 0.8] with density 2 / 0.8 = 2.5.
        let g = bid_density(0.6, u, 0, &model, &sol).unwrap();
        assert!((g - 2.5).abs() < 1e-7);
        assert_eq!(bid_density(0.39, u, 0, &model, &sol).unwrap(), 0.0);
        assert_eq!(bid_density(0.81, u, 0, &model, &sol).unwrap(), 0.0);
        assert!(bid_density(0.6, 0.0, 0, &model, &sol).is_err());
    }

    #[test]
    fn bid_density_integrates_to_one() {
        let model = Model::new(ModelParams {
            densities: vec![
                DensityKind::Tilted(CostDensitySpec::new(vec![0.5, -0.3]).unwrap()),
                DensityKind::Tilted(CostDensitySpec::new(vec![-0.4]).unwrap()),
            ],
            eta: vec![0.35, 0.1],
            uh: UHSpec { sigma_u: 0.0 },
        })
        .unwrap();
        let config = BidderConfig::new(vec![1, 2]).unwrap();
        let sol = solve_equilibrium(&model, &config).unwrap();
        for tau in [0usize, 1] {
            let n = 4000;
            let (lo, hi) = (sol.b_min(), sol.max_bid());
            let h = (hi - lo) / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let b = lo + (i as f64 + 0.5) * h;
                acc += bid_density(b, 1.0, tau, &model, &sol).unwrap() * h;
            }
            assert!((acc - 1.0).abs() < 1e-4, "type {tau} mass {acc}");
        }
    }

    #[test]
    fn record_loglik_sums_bid_terms() {
        let model = uniform_pair_model(0.0);
        let sol = pair_solution(&model);
        let rec = ProcurementRecord {
            id: "p1".into(),
            reserve: 1.0,
            bidder_types: vec![0, 0],
            bids: vec![0.6, 0.8],
            u: Some(1.0),
        };
        let ll = procurement_loglik(&rec, &model, &sol).unwrap();
        assert!((ll - 2.0 * 2.0f64.ln()).abs() < 1e-7);
        let missing = ProcurementRecord { u: None, ..rec.clone() };
        assert!(procurement_loglik(&missing, &model, &sol).is_err());
    }

    #[test]
    fn dataset_loglik_adds_latent_density_and_handles_support() {
        let model = uniform_pair_model(0.2);
        let recs = vec![ProcurementRecord {
            id: "p1".into(),
            reserve: 1.0,
            bidder_types: vec![0, 0],
            bids: vec![0.6, 0.8],
            u: Some(0.9),
        }];
        let sol = pair_solution(&model);
        let expect = record_loglik_at(&recs[0], &model, &sol, 0.9).unwrap()
            + log_uh_density(0.9, &model.params().uh).unwrap();
        let got = dataset_loglik(&recs, &model);
        assert!((got - expect).abs() < 1e-10);

        // A bid impossible under the support must kill the likelihood.
        let bad = vec![ProcurementRecord {
            id: "p2".into(),
            reserve: 1.0,
            bidder_types: vec![0, 0],
            bids: vec![0.2, 0.8],
            u: Some(0.9),
        }];
        assert_eq!(dataset_loglik(&bad, &model), f64::NEG_INFINITY);
    }

    #[test]
    fn degenerate_scale_omits_latent_term() {
        let model = uniform_pair_model(0.0);
        let sol = pair_solution(&model);
        let recs = vec![ProcurementRecord {
            id: "p1".into(),
            reserve: 1.0,
            bidder_types: vec![0, 0],
            bids: vec![0.7, 0.9],
            u: Some(1.0),
        }];
        let direct = record_loglik_at(&recs[0], &model, &sol, 1.0).unwrap();
        assert!((dataset_loglik(&recs, &model) - direct).abs() < 1e-12);
    }
}
