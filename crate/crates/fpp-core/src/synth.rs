//! Synthetic datasets from known truths, including the reference three-type
//! study design with beta-mixture costs.

use crate::equilibrium::{solve_equilibrium, EquilibriumSolution};
use crate::error::{Error, Result};
use crate::likelihood::ProcurementRecord;
use crate::math::trunc_normal_sample;
use crate::model::{BidderConfig, DensityKind, Model, ModelParams, UHSpec};
use crate::rng::substream;
use rand::Rng;
use statrs::function::gamma::ln_gamma;
use std::collections::HashMap;

/// Simulated records plus ground truth hidden from estimators.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// Records with the latent scale slot left empty.
    pub records: Vec<ProcurementRecord>,
    /// True latent scale of each record.
    pub true_u: Vec<f64>,
    /// Bidder identities per record, arranged so that re-deriving types from
    /// participation frequencies reproduces the true types.
    pub bidder_ids: Vec<Vec<String>>,
}

/// Density of `w * Uniform + (1 - w) * Beta(alpha, beta)` at `c`.
pub fn beta_mixture_density(c: f64, uniform_weight: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&uniform_weight) || !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::domain(format!(
            "invalid mixture parameters w={uniform_weight}, alpha={alpha}, beta={beta}"
        )));
    }
    if !(0.0..=1.0).contains(&c) {
        return Ok(0.0);
    }
    let ln_beta = ln_gamma(alpha) + ln_gamma(beta) - ln_gamma(alpha + beta);
    let t1 = if alpha == 1.0 { 0.0 } else { (alpha - 1.0) * c.ln() };
    let t2 = if beta == 1.0 { 0.0 } else { (beta - 1.0) * (1.0 - c).ln() };
    Ok(uniform_weight + (1.0 - uniform_weight) * (t1 + t2 - ln_beta).exp())
}

/// The reference simulation truth: three bidder types with beta-mixture
/// costs, descending risk aversion, and a latent scale spread of 0.1.
pub fn study_truth() -> ModelParams {
    let mixture = |alpha: f64, beta: f64| DensityKind::BetaMixture {
        uniform_weight: 0.1,
        alpha,
        beta,
    };
    ModelParams {
        densities: vec![mixture(1.0, 4.0), mixture(1.0, 3.0), mixture(2.0, 4.0)],
        eta: vec![0.7, 0.4, 0.1],
        uh: UHSpec { sigma_u: 0.1 },
    }
}

/// The reference design: ten bidder configurations, `reps` procurements each.
pub fn study_configs(reps: usize) -> Vec<(BidderConfig, usize)> {
    let counts = [
        vec![2, 0, 0],
        vec![3, 0, 0],
        vec![0, 2, 0],
        vec![0, 3, 0],
        vec![0, 0, 2],
        vec![0, 0, 3],
        vec![1, 1, 0],
        vec![1, 0, 1],
        vec![0, 1, 1],
        vec![1, 1, 1],
    ];
    counts
        .into_iter()
        .map(|c| (BidderConfig::new(c).expect("static design"), reps))
        .collect()
}

/// Draw a dataset from `model` under the given design.
///
/// Per record: one latent scale, then one cost and bid per bidder in type
/// order. Identities rotate through small pools for the first two types
/// (making them frequent and intermediate participants respectively) while
/// every third-type bidder is fresh.
pub fn simulate_dataset(
    model: &Model,
    design: &[(BidderConfig, usize)],
    seed: u64,
) -> Result<SimulatedData> {
    let mut solutions: HashMap<Vec<u32>, EquilibriumSolution> = HashMap::new();
    for (config, _) in design {
        let key = config.counts().to_vec();
        if !solutions.contains_key(&key) {
            solutions.insert(key, solve_equilibrium(model, config)?);
        }
    }

    let pool1: Vec<String> = (0..4).map(|i| format!("t1_{i:02}")).collect();
    let pool2: Vec<String> = (0..12).map(|i| format!("t2_{i:02}")).collect();
    let mut rotations = [0usize; 2];
    let mut fresh = 0usize;

    let mut rng = substream(seed, &[]);
    let uh = model.params().uh;
    let mut records = Vec::new();
    let mut true_u = Vec::new();
    let mut bidder_ids = Vec::new();
    for (config, reps) in design {
        let sol = &solutions[&config.counts().to_vec()];
        for _ in 0..*reps {
            let u = if uh.is_degenerate() {
                1.0
            } else {
                trunc_normal_sample(1.0, uh.sigma_u, uh.u_floor(), 1.0, rng.random())
            };
            let mut types = Vec::new();
            let mut bids = Vec::new();
            let mut ids = Vec::new();
            for tau in config.participating() {
                for slot in 0..config.counts()[tau] as usize {
                    let c = model.density(tau).sample(&mut rng);
                    bids.push(u * sol.bid(tau, c)?);
                    types.push(tau);
                    ids.push(match tau {
                        0 => pool1[(rotations[0] + slot) % pool1.len()].clone(),
                        1 => pool2[(rotations[1] + slot) % pool2.len()].clone(),
                        _ => {
                            fresh += 1;
                            format!("s3_{fresh:06}")
                        }
                    });
                }
                match tau {
                    0 => rotations[0] += config.counts()[0] as usize,
                    1 => rotations[1] += config.counts()[1] as usize,
                    _ => {}
                }
            }
            records.push(ProcurementRecord {
                id: format!("sim_{:06}", records.len() + 1),
                reserve: 1.0,
                bidder_types: types,
                bids,
                u: None,
            });
            true_u.push(u);
            bidder_ids.push(ids);
        }
    }
    Ok(SimulatedData { records, true_u, bidder_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostDensitySpec;
    use crate::stats::{ks_two_sample, Alternative};

    fn uniform_pair() -> (Model, Vec<(BidderConfig, usize)>) {
        let model = Model::new(ModelParams {
            densities: vec![DensityKind::Tilted(CostDensitySpec::uniform(0))],
            eta: vec![0.0],
            uh: UHSpec { sigma_u: 0.0 },
        })
        .unwrap();
        let design = vec![(BidderConfig::new(vec![2]).unwrap(), 400)];
        (model, design)
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let (model, design) = uniform_pair();
        let a = simulate_dataset(&model, &design, 99).unwrap();
        let b = simulate_dataset(&model, &design, 99).unwrap();
        let c = simulate_dataset(&model, &design, 100).unwrap();
        assert_eq!(a.records.len(), 400);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.bids, rb.bids);
        }
        assert!(a.records[0].bids != c.records[0].bids);
    }

    #[test]
    fn uniform_pair_bids_are_uniform_on_upper_half() {
        // bid = (1 + c)/2 with uniform c, so bids are uniform on [1/2, 1].
        let (model, design) = uniform_pair();
        let data = simulate_dataset(&model, &design, 7).unwrap();
        let bids: Vec<f64> = data.records.iter().flat_map(|r| r.bids.clone()).collect();
        assert!(bids.iter().all(|&b| (0.5 - 1e-9..=1.0 + 1e-9).contains(&b)));
        let mut rng = substream(13, &[2]);
        let reference: Vec<f64> = (0..2000).map(|_| 0.5 + 0.5 * rng.random::<f64>()).collect();
        let ks = ks_two_sample(&bids, &reference, Alternative::TwoSided).unwrap();
        assert!(ks.p_value > 0.001, "p = {}", ks.p_value);
    }

    #[test]
    fn latent_scale_stays_in_support_and_scales_bids() {
        let model = Model::new(ModelParams {
            densities: vec![DensityKind::Tilted(CostDensitySpec::uniform(0))],
            eta: vec![0.2],
            uh: UHSpec { sigma_u: 0.25 },
        })
        .unwrap();
        let design = vec![(BidderConfig::new(vec![3]).unwrap(), 300)];
        let data = simulate_dataset(&model, &design, 21).unwrap();
        let floor = model.params().uh.u_floor();
        for (rec, &u) in data.records.iter().zip(&data.true_u) {
            assert!(u >= floor && u <= 1.0);
            for &b in &rec.bids {
                assert!(b <= u + 1e-12, "bid {b} above scale {u}");
            }
        }
        // The scales vary.
        let (lo, hi) = data
            .true_u
            .iter()
            .fold((1.0f64, 0.0f64), |(lo, hi), &u| (lo.min(u), hi.max(u)));
        assert!(hi - lo > 0.05);
    }

    #[test]
    fn study_design_matches_reference_shape() {
        let truth = study_truth();
        assert_eq!(truth.densities.len(), 3);
        assert!(Model::new(truth.clone()).is_ok());
        let configs = study_configs(20);
        assert_eq!(configs.len(), 10);
        assert_eq!(configs.iter().map(|(_, r)| r).sum::<usize>(), 200);
        let total_bidders: u32 = configs.iter().map(|(c, _)| c.n_bidders()).sum();
        assert_eq!(total_bidders, 24);
    }

    #[test]
    fn mixture_density_values() {
        // Beta(1,3): density 3(1-c)^2.
        let d = beta_mixture_density(0.5, 0.1, 1.0, 3.0).unwrap();
        assert!((d - (0.1 + 0.9 * 3.0 * 0.25)).abs() < 1e-12);
        assert_eq!(beta_mixture_density(1.2, 0.1, 1.0, 3.0).unwrap(), 0.0);
        assert!(beta_mixture_density(0.5, 0.1, 0.0, 3.0).is_err());
    }

    #[test]
    fn identity_pools_reproduce_type_frequencies() {
        let truth = Model::new(study_truth()).unwrap();
        let configs = study_configs(20);
        let data = simulate_dataset(&truth, &configs, 5).unwrap();
        let t = data.records.len();
        let mut appearances: HashMap<&str, usize> = HashMap::new();
        for ids in &data.bidder_ids {
            for id in ids {
                *appearances.entry(id).or_default() += 1;
            }
        }
        let threshold = t.div_ceil(10);
        for (id, count) in &appearances {
            if id.starts_with("t1_") {
                assert!(*count >= threshold, "{id} appeared {count} < {threshold}");
            } else if id.starts_with("t2_") {
                assert!(*count > 1 && *count < threshold, "{id} appeared {count}");
            } else {
                assert_eq!(*count, 1, "{id} should be fresh");
            }
        }
    }
}
