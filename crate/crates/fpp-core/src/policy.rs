//! Counterfactual reserve-price policy: predictive procurement cost,
//! efficiency measures, reserve optimization, and scenario analysis.
//!
//! A policy assigns each bidder type a reserve in (0, 1], normalized to the
//! current reserve. In a simulated procurement the bidders whose costs clear
//! their own reserves enter; the entrants observe each other and bid in the
//! equilibrium truncated at the effective reserve, the smallest reserve among
//! them. No entrant means the buyer falls back to the outside cost of 1; a
//! single entrant is paid its own reserve.
//!
//! Everything is Monte Carlo with named substreams: the cost draws for one
//! (posterior draw, configuration) pair depend only on that pair, so every
//! reserve candidate is evaluated on common random numbers and re-running at
//! the same seed is bit-identical at any worker count.

use crate::equilibrium::{solve_with_reserve, EquilibriumSolution};
use crate::error::{Error, Result};
use crate::likelihood::ProcurementRecord;
use crate::math::quantile;
use crate::model::{BidderConfig, CostDensitySpec, DensityKind, Model, ModelParams, UHSpec};
use crate::rng::substream;
use crate::sampler::ParamDraw;
use rand::Rng;
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};

/// Cost paid when no bidder enters, in units of the current reserve.
pub const FALLBACK_COST: f64 = 1.0;

const COST_STREAM: u64 = 4;
const CHUNK: usize = 1024;

/// Per-type reserve prices, normalized to the current reserve.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservePolicy {
    rho: Vec<f64>,
}

impl ReservePolicy {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::shape("reserve policy needs at least one type"));
        }
        if rho.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::domain("each type reserve must lie in (0, 1]"));
        }
        Ok(ReservePolicy { rho })
    }

    pub fn common(r: f64, n_types: usize) -> Result<Self> {
        Self::new(vec![r; n_types])
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn n_types(&self) -> usize {
        self.rho.len()
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEstimate {
    pub mean: f64,
    pub se: f64,
}

/// Simulated procurement outcome for one parameter point and configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedPolicyCost {
    pub cost: SimEstimate,
    /// Frequency with which the lowest-cost bidder of the full configuration
    /// wins the procurement.
    pub prob_lowest_wins: SimEstimate,
    /// Frequency of a non-empty entrant set.
    pub prob_transaction: SimEstimate,
}

/// Posterior summary: mean with central 95% interval over draws.
#[derive(Debug, Clone, Copy)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Predictive policy outcome over a posterior sample.
#[derive(Debug, Clone)]
pub struct PolicyOutcome {
    pub predictive_cost: Interval,
    pub prob_lowest_wins: Interval,
    pub prob_transaction: Interval,
}

/// One evaluated candidate in a reserve search.
#[derive(Debug, Clone)]
pub struct ReserveSearchPoint {
    pub rho: Vec<f64>,
    pub cost: f64,
}

/// Bidder type of every slot in a configuration, grouped by type.
fn flatten_types(config: &BidderConfig) -> Vec<usize> {
    let mut typs = Vec::with_capacity(config.n_bidders() as usize);
    for (tau, &c) in config.counts().iter().enumerate() {
        typs.extend(std::iter::repeat_n(tau, c as usize));
    }
    typs
}

/// Entrant set: slots whose cost clears the slot type's reserve.
pub fn refine_config(config: &BidderConfig, rho: &ReservePolicy, costs: &[f64]) -> Vec<usize> {
    let typs = flatten_types(config);
    debug_assert_eq!(costs.len(), typs.len());
    typs.iter()
        .zip(costs)
        .enumerate()
        .filter(|(_, (&ty, &c))| c <= rho.rho[ty])
        .map(|(i, _)| i)
        .collect()
}

/// Effective reserve faced by an entrant set: the smallest reserve among the
/// entrants' types. Duplicate type labels are fine; the caller handles the
/// empty and singleton entrant branches.
pub fn effective_reserve(entrant_types: &[usize], rho: &ReservePolicy) -> f64 {
    debug_assert!(!entrant_types.is_empty());
    entrant_types
        .iter()
        .map(|&ty| rho.rho[ty])
        .fold(f64::INFINITY, f64::min)
}

/// Stable stream label of a configuration, so the same configuration reuses
/// the same cost draws wherever it appears.
fn config_stream_key(counts: &[u32]) -> u64 {
    debug_assert!(counts.len() <= 8 && counts.iter().all(|&c| c < 256));
    counts
        .iter()
        .enumerate()
        .fold(0u64, |acc, (t, &c)| acc | ((c as u64) << (8 * t)))
}

/// Simulated cost matrix for one (posterior draw, configuration) pair.
struct CostMatrix {
    typs: Vec<usize>,
    draws: Vec<f64>,
    m3: usize,
}

fn draw_costs(model: &Model, config: &BidderConfig, m3: usize, seed: u64, draw_idx: u64) -> CostMatrix {
    let typs = flatten_types(config);
    let n = typs.len();
    let key = config_stream_key(config.counts());
    let chunks = m3.div_ceil(CHUNK);
    let draws: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let rows = CHUNK.min(m3 - chunk * CHUNK);
            let mut rng = substream(seed, &[COST_STREAM, draw_idx, key, chunk as u64]);
            let mut out = Vec::with_capacity(rows * n);
            for _ in 0..rows {
                for &ty in &typs {
                    out.push(model.density(ty).quantile(rng.random::<f64>()));
                }
            }
            out
        })
        .collect();
    CostMatrix { typs, draws, m3 }
}

type SolutionCache = BTreeMap<(Vec<u32>, u64), EquilibriumSolution>;

/// Truncated equilibrium for an entrant composition, warm-started from the
/// cached solution of the same composition with the nearest reserve.
fn solve_entrants(
    model: &Model,
    counts: &[u32],
    rho_e: f64,
    cache: &mut SolutionCache,
) -> Result<()> {
    let key = (counts.to_vec(), rho_e.to_bits());
    if cache.contains_key(&key) {
        return Ok(());
    }
    let lo = (counts.to_vec(), 0u64);
    let hi = (counts.to_vec(), u64::MAX);
    let warm = cache
        .range(lo..=hi)
        .min_by_key(|((_, bits), _)| bits.abs_diff(rho_e.to_bits()))
        .map(|(_, sol)| sol.clone());
    let config = BidderConfig::new(counts.to_vec())?;
    let sol = solve_with_reserve(model, &config, rho_e, warm.as_ref())?;
    cache.insert(key, sol);
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
struct RawSums {
    cost: f64,
    cost_sq: f64,
    lowest: u64,
    trade: u64,
}

/// One simulated procurement: classify entrants, pick the branch, and return
/// (cost, lowest-cost-bidder-won, transaction-happened).
fn simulate_row(
    row: &[f64],
    typs: &[usize],
    rho: &ReservePolicy,
    cache: &SolutionCache,
    counts_buf: &mut [u32],
) -> (f64, bool, bool) {
    counts_buf.fill(0);
    let mut total = 0u32;
    let mut single = usize::MAX;
    let mut min_cost = f64::INFINITY;
    for (j, (&ty, &c)) in typs.iter().zip(row).enumerate() {
        min_cost = min_cost.min(c);
        if c <= rho.rho[ty] {
            counts_buf[ty] += 1;
            total += 1;
            single = j;
        }
    }
    match total {
        0 => (FALLBACK_COST, false, false),
        1 => (rho.rho[typs[single]], row[single] == min_cost, true),
        _ => {
            let rho_e = typs
                .iter()
                .zip(row.iter())
                .filter(|(&ty, &c)| c <= rho.rho[ty])
                .map(|(&ty, _)| rho.rho[ty])
                .fold(f64::INFINITY, f64::min);
            let sol = &cache[&(counts_buf.to_vec(), rho_e.to_bits())];
            let mut best_bid = f64::INFINITY;
            let mut best_cost = f64::INFINITY;
            for (&ty, &c) in typs.iter().zip(row) {
                // Entrants priced out by a rival's lower reserve never win.
                if c <= rho.rho[ty] && c <= rho_e {
                    let bid = sol.bid(ty, c).expect("cost inside truncated support");
                    if bid < best_bid {
                        best_bid = bid;
                        best_cost = c;
                    }
                }
            }
            (best_bid, best_cost == min_cost, true)
        }
    }
}

/// Monte Carlo procurement outcomes for one parameter point, configuration,
/// and reserve policy, reusing the supplied cost draws.
fn eval_lambda(
    model: &Model,
    costs: &CostMatrix,
    rho: &ReservePolicy,
    cache: &mut SolutionCache,
) -> Result<SimulatedPolicyCost> {
    let n = costs.typs.len();
    let n_types = rho.rho.len();

    // First sweep: entrant compositions that actually occur, so equilibrium
    // failures are reported only for realized subsets.
    let realized: BTreeSet<Vec<u32>> = costs
        .draws
        .par_chunks(CHUNK * n)
        .map(|block| {
            let mut seen = BTreeSet::new();
            let mut buf = vec![0u32; n_types];
            for row in block.chunks_exact(n) {
                buf.fill(0);
                let mut total = 0u32;
                for (&ty, &c) in costs.typs.iter().zip(row) {
                    if c <= rho.rho[ty] {
                        buf[ty] += 1;
                        total += 1;
                    }
                }
                if total >= 2 {
                    seen.insert(buf.clone());
                }
            }
            seen
        })
        .reduce(BTreeSet::new, |mut a, b| {
            a.extend(b);
            a
        });
    for counts in &realized {
        let entrant_types: Vec<usize> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(t, _)| t)
            .collect();
        let rho_e = effective_reserve(&entrant_types, rho);
        solve_entrants(model, counts, rho_e, cache)?;
    }

    // Second sweep: per-chunk sums, folded in chunk order so worker count
    // never changes the result.
    let chunk_sums: Vec<RawSums> = costs
        .draws
        .par_chunks(CHUNK * n)
        .map(|block| {
            let mut sums = RawSums::default();
            let mut buf = vec![0u32; n_types];
            for row in block.chunks_exact(n) {
                let (cost, lowest, trade) = simulate_row(row, &costs.typs, rho, cache, &mut buf);
                sums.cost += cost;
                sums.cost_sq += cost * cost;
                sums.lowest += u64::from(lowest);
                sums.trade += u64::from(trade);
            }
            sums
        })
        .collect();
    let mut total = RawSums::default();
    for s in chunk_sums {
        total.cost += s.cost;
        total.cost_sq += s.cost_sq;
        total.lowest += s.lowest;
        total.trade += s.trade;
    }

    let m = costs.m3 as f64;
    let mean = total.cost / m;
    let var = (total.cost_sq / m - mean * mean).max(0.0);
    let binom = |count: u64| {
        let p = count as f64 / m;
        SimEstimate { mean: p, se: (p * (1.0 - p) / m).sqrt() }
    };
    Ok(SimulatedPolicyCost {
        cost: SimEstimate { mean, se: (var / m).sqrt() },
        prob_lowest_wins: binom(total.lowest),
        prob_transaction: binom(total.trade),
    })
}

/// Simulate procurement outcomes for explicit parameters and one
/// configuration. Draws, entry refinement, truncated equilibria, and winning
/// bids all derive deterministically from the seed.
pub fn simulate_cost(
    model: &Model,
    config: &BidderConfig,
    rho: &ReservePolicy,
    m3: usize,
    seed: u64,
) -> Result<SimulatedPolicyCost> {
    if m3 == 0 {
        return Err(Error::input("simulation size must be positive"));
    }
    if rho.n_types() != model.n_types() || config.n_types() != model.n_types() {
        return Err(Error::shape("policy, configuration, and model type counts must agree"));
    }
    let costs = draw_costs(model, config, m3, seed, 0);
    let mut cache = SolutionCache::new();
    eval_lambda(model, &costs, rho, &mut cache)
}

fn params_from_draw(draw: &ParamDraw) -> ModelParams {
    ModelParams {
        densities: draw
            .psi
            .iter()
            .map(|p| DensityKind::Tilted(CostDensitySpec { psi: p.clone() }))
            .collect(),
        eta: draw.eta.clone(),
        uh: UHSpec { sigma_u: draw.sigma_u },
    }
}

/// Empirical configuration distribution of the data.
fn empirical_configs(
    records: &[ProcurementRecord],
    n_types: usize,
) -> Result<Vec<(BidderConfig, f64)>> {
    if records.is_empty() {
        return Err(Error::input("no procurements to take configurations from"));
    }
    let mut weights: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for rec in records {
        let config = rec.config(n_types)?;
        *weights.entry(config.counts().to_vec()).or_insert(0.0) += 1.0;
    }
    let total: f64 = weights.values().sum();
    weights
        .into_iter()
        .map(|(counts, w)| Ok((BidderConfig::new(counts)?, w / total)))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct DrawEval {
    cost: f64,
    lowest: f64,
    trade: f64,
}

/// Configuration-weighted procurement outcome for one posterior draw.
fn lambda_for_draw(
    model: &Model,
    configs: &[(BidderConfig, f64)],
    rho: &ReservePolicy,
    m3: usize,
    seed: u64,
    draw_idx: u64,
    cache: &mut SolutionCache,
) -> Result<DrawEval> {
    let mut out = DrawEval { cost: 0.0, lowest: 0.0, trade: 0.0 };
    for (config, weight) in configs {
        let costs = draw_costs(model, config, m3, seed, draw_idx);
        let sim = eval_lambda(model, &costs, rho, cache)?;
        out.cost += weight * sim.cost.mean;
        out.lowest += weight * sim.prob_lowest_wins.mean;
        out.trade += weight * sim.prob_transaction.mean;
    }
    Ok(out)
}

fn summarize(values: &[f64]) -> Interval {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Interval { mean, lo: quantile(&sorted, 0.025), hi: quantile(&sorted, 0.975) }
}

fn outcome_from_evals(evals: &[DrawEval]) -> PolicyOutcome {
    let pick = |f: fn(&DrawEval) -> f64| summarize(&evals.iter().map(f).collect::<Vec<_>>());
    PolicyOutcome {
        predictive_cost: pick(|e| e.cost),
        prob_lowest_wins: pick(|e| e.lowest),
        prob_transaction: pick(|e| e.trade),
    }
}

fn predictive_over_configs(
    draws: &[ParamDraw],
    configs: &[(BidderConfig, f64)],
    rho: &ReservePolicy,
    m3: usize,
    seed: u64,
) -> Result<PolicyOutcome> {
    if draws.is_empty() {
        return Err(Error::input("predictive cost needs at least one posterior draw"));
    }
    let evals: Result<Vec<DrawEval>> = draws
        .par_iter()
        .enumerate()
        .map(|(idx, draw)| {
            let model = Model::new(params_from_draw(draw))?;
            let mut cache = SolutionCache::new();
            lambda_for_draw(&model, configs, rho, m3, seed, idx as u64, &mut cache)
        })
        .collect();
    Ok(outcome_from_evals(&evals?))
}

/// Predictive procurement cost and efficiency measures at one reserve
/// policy: the posterior mean of the per-draw expected cost, with a 95%
/// credible interval from the per-draw percentiles. Configurations are
/// weighted by their empirical frequency in the data.
pub fn predictive_cost(
    draws: &[ParamDraw],
    records: &[ProcurementRecord],
    rho: &ReservePolicy,
    m3: usize,
    seed: u64,
) -> Result<PolicyOutcome> {
    let configs = empirical_configs(records, rho.n_types())?;
    predictive_over_configs(draws, &configs, rho, m3, seed)
}

/// The common-reserve candidate set 0.15, 0.16, ..., 0.99, 1.00.
pub fn common_reserve_grid() -> Vec<f64> {
    (15..=100).map(|k| k as f64 / 100.0).collect()
}

/// Minimize predictive cost over a grid of common reserves. All candidates
/// are evaluated on the same cost draws per posterior draw, so the argmin is
/// not blurred by Monte Carlo noise between candidates.
pub fn optimize_common_reserve(
    draws: &[ParamDraw],
    records: &[ProcurementRecord],
    grid: &[f64],
    m3: usize,
    seed: u64,
) -> Result<(f64, PolicyOutcome, Vec<ReserveSearchPoint>)> {
    if grid.is_empty() {
        return Err(Error::input("empty reserve grid"));
    }
    if draws.is_empty() {
        return Err(Error::input("predictive cost needs at least one posterior draw"));
    }
    let n_types = draws[0].eta.len();
    let configs = empirical_configs(records, n_types)?;
    let policies: Result<Vec<ReservePolicy>> =
        grid.iter().map(|&r| ReservePolicy::common(r, n_types)).collect();
    let policies = policies?;

    // evals[draw][grid point]
    let evals: Result<Vec<Vec<DrawEval>>> = draws
        .par_iter()
        .enumerate()
        .map(|(idx, draw)| {
            let model = Model::new(params_from_draw(draw))?;
            let mut cache = SolutionCache::new();
            let matrices: Vec<CostMatrix> = configs
                .iter()
                .map(|(config, _)| draw_costs(&model, config, m3, seed, idx as u64))
                .collect();
            policies
                .iter()
                .map(|rho| {
                    let mut out = DrawEval { cost: 0.0, lowest: 0.0, trade: 0.0 };
                    for (costs, (_, weight)) in matrices.iter().zip(&configs) {
                        let sim = eval_lambda(&model, costs, rho, &mut cache)?;
                        out.cost += weight * sim.cost.mean;
                        out.lowest += weight * sim.prob_lowest_wins.mean;
                        out.trade += weight * sim.prob_transaction.mean;
                    }
                    Ok(out)
                })
                .collect()
        })
        .collect();
    let evals = evals?;

    let mut trace = Vec::with_capacity(grid.len());
    let mut best = 0usize;
    for (g, &r) in grid.iter().enumerate() {
        let mean = evals.iter().map(|row| row[g].cost).sum::<f64>() / evals.len() as f64;
        trace.push(ReserveSearchPoint { rho: vec![r; n_types], cost: mean });
        if mean < trace[best].cost {
            best = g;
        }
    }
    let at_best: Vec<DrawEval> = evals.iter().map(|row| row[best]).collect();
    Ok((grid[best], outcome_from_evals(&at_best), trace))
}

/// Integer search units for the adaptive type-specific grid: all candidate
/// coordinates are multiples of 0.000625, so halving the step five times
/// from 0.2 stays exact and the visited set needs no tolerance.
const RHO_UNIT: f64 = 0.000625;
const UNIT_LO: i64 = 320; // 0.2
const UNIT_HI: i64 = 1600; // 1.0

/// Adaptive search for type-specific reserves: start on a step-0.2 grid over
/// [0.2, 1] per type, then repeatedly halve the step and re-grid around the
/// incumbent (skipping already-visited points) until the step falls below
/// 0.005. Returns the best policy, its outcome, and the full search trace.
pub fn optimize_type_reserve(
    draws: &[ParamDraw],
    records: &[ProcurementRecord],
    m3: usize,
    seed: u64,
) -> Result<(Vec<f64>, PolicyOutcome, Vec<ReserveSearchPoint>)> {
    if draws.is_empty() {
        return Err(Error::input("predictive cost needs at least one posterior draw"));
    }
    let n_types = draws[0].eta.len();
    let configs = empirical_configs(records, n_types)?;

    let models: Result<Vec<Model>> =
        draws.iter().map(|d| Model::new(params_from_draw(d))).collect();
    let models = models?;

    let mut visited: BTreeSet<Vec<i64>> = BTreeSet::new();
    let mut trace: Vec<ReserveSearchPoint> = Vec::new();
    let mut incumbent: Option<(Vec<i64>, f64)> = None;
    let mut lo = vec![UNIT_LO; n_types];
    let mut hi = vec![UNIT_HI; n_types];
    let mut step: i64 = 320; // 0.2

    while step as f64 * RHO_UNIT >= 0.005 {
        let mut axes: Vec<Vec<i64>> = Vec::with_capacity(n_types);
        for tau in 0..n_types {
            let mut axis = Vec::new();
            let mut v = lo[tau];
            while v <= hi[tau] {
                axis.push(v);
                v += step;
            }
            axes.push(axis);
        }
        let mut candidates: Vec<Vec<i64>> = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(candidates.len() * axis.len());
            for base in &candidates {
                for &v in axis {
                    let mut point = base.clone();
                    point.push(v);
                    next.push(point);
                }
            }
            candidates = next;
        }
        candidates.retain(|p| visited.insert(p.clone()));
        let policies: Result<Vec<ReservePolicy>> = candidates
            .iter()
            .map(|p| ReservePolicy::new(p.iter().map(|&u| u as f64 * RHO_UNIT).collect()))
            .collect();
        let policies = policies?;

        // costs[draw][candidate], one cost-matrix set and one solution cache
        // per draw for the whole round.
        let round: Result<Vec<Vec<f64>>> = models
            .par_iter()
            .enumerate()
            .map(|(idx, model)| {
                let mut cache = SolutionCache::new();
                let matrices: Vec<CostMatrix> = configs
                    .iter()
                    .map(|(config, _)| draw_costs(model, config, m3, seed, idx as u64))
                    .collect();
                policies
                    .iter()
                    .map(|rho| {
                        let mut cost = 0.0;
                        for (costs, (_, weight)) in matrices.iter().zip(&configs) {
                            cost += weight * eval_lambda(model, costs, rho, &mut cache)?.cost.mean;
                        }
                        Ok(cost)
                    })
                    .collect()
            })
            .collect();
        let round = round?;

        for (k, point) in candidates.iter().enumerate() {
            let mean = round.iter().map(|row| row[k]).sum::<f64>() / round.len() as f64;
            trace.push(ReserveSearchPoint { rho: policies[k].rho().to_vec(), cost: mean });
            let better = match &incumbent {
                None => true,
                Some((_, cost)) => mean < *cost,
            };
            if better {
                incumbent = Some((point.clone(), mean));
            }
        }

        let center = &incumbent.as_ref().expect("non-empty round").0;
        for tau in 0..n_types {
            lo[tau] = (center[tau] - step).max(lo[tau]);
            hi[tau] = (center[tau] + step).min(hi[tau]);
        }
        step /= 2;
    }

    let (best_units, _) = incumbent.expect("at least one round");
    let rho_star: Vec<f64> = best_units.iter().map(|&u| u as f64 * RHO_UNIT).collect();
    let rho = ReservePolicy::new(rho_star.clone())?;
    let evals: Result<Vec<DrawEval>> = models
        .par_iter()
        .enumerate()
        .map(|(idx, model)| {
            let mut cache = SolutionCache::new();
            lambda_for_draw(model, &configs, &rho, m3, seed, idx as u64, &mut cache)
        })
        .collect();
    Ok((rho_star, outcome_from_evals(&evals?), trace))
}

/// Predictive cost at non-binding reserves with one extra bidder of type
/// `tau` joining every observed configuration.
pub fn add_bidder_scenario(
    draws: &[ParamDraw],
    records: &[ProcurementRecord],
    tau: usize,
    m3: usize,
    seed: u64,
) -> Result<PolicyOutcome> {
    if draws.is_empty() {
        return Err(Error::input("predictive cost needs at least one posterior draw"));
    }
    let n_types = draws[0].eta.len();
    if tau >= n_types {
        return Err(Error::input(format!("type label {tau} out of range")));
    }
    let base = empirical_configs(records, n_types)?;
    let mut weights: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (config, w) in &base {
        let bigger = config.with_added(tau)?;
        *weights.entry(bigger.counts().to_vec()).or_insert(0.0) += w;
    }
    let configs: Result<Vec<(BidderConfig, f64)>> = weights
        .into_iter()
        .map(|(counts, w)| Ok((BidderConfig::new(counts)?, w)))
        .collect();
    let rho = ReservePolicy::common(1.0, n_types)?;
    predictive_over_configs(draws, &configs?, &rho, m3, seed)
}

/// Second-price procurement under a common reserve: entrants bid their
/// costs, the winner is paid the second-lowest entrant cost, a single
/// entrant is paid the reserve, and no entrant means the fallback cost.
pub fn spp_cost(
    model: &Model,
    config: &BidderConfig,
    rho: f64,
    m3: usize,
    seed: u64,
) -> Result<SimEstimate> {
    if m3 == 0 {
        return Err(Error::input("simulation size must be positive"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::domain(format!("reserve {rho} outside [0, 1]")));
    }
    let costs = draw_costs(model, config, m3, seed, 0);
    let n = costs.typs.len();
    let chunk_sums: Vec<(f64, f64)> = costs
        .draws
        .par_chunks(CHUNK * n)
        .map(|block| {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for row in block.chunks_exact(n) {
                let mut lo = f64::INFINITY;
                let mut second = f64::INFINITY;
                let mut entrants = 0u32;
                for &c in row {
                    if c <= rho {
                        entrants += 1;
                        if c < lo {
                            second = lo;
                            lo = c;
                        } else if c < second {
                            second = c;
                        }
                    }
                }
                let cost = match entrants {
                    0 => FALLBACK_COST,
                    1 => rho,
                    _ => second,
                };
                sum += cost;
                sq += cost * cost;
            }
            (sum, sq)
        })
        .collect();
    let (sum, sq) = chunk_sums
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let m = m3 as f64;
    let mean = sum / m;
    let var = (sq / m - mean * mean).max(0.0);
    Ok(SimEstimate { mean, se: (var / m).sqrt() })
}
