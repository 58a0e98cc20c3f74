//! Subcommand implementations. Each writes its artifacts plus a manifest
//! into the output directory and reports a one-line result on stdout.

use crate::data_io;
use crate::formats::{self, Manifest};
use fpp_core::identify::{solve_eta_system, BoundaryDensityInput};
use fpp_core::likelihood::ProcurementRecord;
use fpp_core::model::CostDensitySpec;
use fpp_core::policy::{
    add_bidder_scenario, common_reserve_grid, optimize_common_reserve, optimize_type_reserve,
    predictive_cost, PolicyOutcome, ReservePolicy,
};
use fpp_core::sampler::{run_chain, ChainConfig, ParamDraw, Restriction};
use fpp_core::stats::predictive_density_band;
use fpp_core::synth::{simulate_dataset, study_configs, study_truth};
use fpp_core::{Error, Model, PriorSpec, Result};
use std::fs;
use std::path::{Path, PathBuf};

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", dir.display())))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<(data_io::TypedDataset, data_io::ExclusionReport)> {
    let (dataset, report) = data_io::ingest(open(path)?)?;
    for warning in &dataset.warnings {
        eprintln!("warning: {warning}");
    }
    Ok((dataset, report))
}

pub struct SimulateOpts {
    pub t: usize,
    pub sigma_u: f64,
    pub seed: u64,
    pub out: PathBuf,
}

/// Draw an equilibrium-consistent dataset from the reference three-type
/// design and write it in the ingestion schema.
pub fn simulate(opts: &SimulateOpts) -> Result<()> {
    if opts.t == 0 || opts.t % 10 != 0 {
        return Err(Error::input(format!(
            "dataset size {} must be a positive multiple of the 10 design configurations",
            opts.t
        )));
    }
    if !(0.0..0.35).contains(&opts.sigma_u) {
        return Err(Error::domain(format!("sigma_u {} outside [0, 0.35)", opts.sigma_u)));
    }
    prepare_out(&opts.out)?;

    let mut params = study_truth();
    params.uh.sigma_u = opts.sigma_u;
    let model = Model::new(params)?;
    let design = study_configs(opts.t / 10);
    let data = simulate_dataset(&model, &design, opts.seed)?;

    let bids_path = opts.out.join("bids.csv");
    let mut w = csv::Writer::from_path(&bids_path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", bids_path.display())))?;
    w.write_record(["procurement_id", "reserve_price", "bidder_id", "bid"])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    for (rec, ids) in data.records.iter().zip(&data.bidder_ids) {
        for (bid, id) in rec.bids.iter().zip(ids) {
            w.write_record([rec.id.as_str(), "1", id.as_str(), &format!("{bid}")])
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;

    let mut manifest = Manifest::new("simulate");
    manifest
        .flag("design", "s7")
        .flag("t", opts.t)
        .flag("sigma_u", opts.sigma_u)
        .flag("seed", opts.seed);
    manifest.output(&bids_path)?;
    manifest.write(&opts.out)?;
    println!(
        "simulated {} procurements ({} bids) into {}",
        data.records.len(),
        data.records.iter().map(|r| r.bids.len()).sum::<usize>(),
        bids_path.display()
    );
    Ok(())
}

pub struct IngestOpts {
    pub data: PathBuf,
    pub out: PathBuf,
}

/// Parse, filter, type, and normalize a raw dataset; write the exclusion
/// report, the typed dataset, and the configuration distribution.
pub fn ingest(opts: &IngestOpts) -> Result<()> {
    prepare_out(&opts.out)?;
    let raw = data_io::parse_procurements(open(&opts.data)?)?;
    let (filtered, report) = data_io::apply_exclusions(raw);
    let dataset = data_io::normalize_and_build(filtered.clone())?;
    for warning in &dataset.warnings {
        eprintln!("warning: {warning}");
    }

    let report_path = opts.out.join("exclusion_report.json");
    formats::write_json(&report_path, &report)?;

    let typed_path = opts.out.join("typed.csv");
    let mut w = csv::Writer::from_path(&typed_path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", typed_path.display())))?;
    w.write_record(["procurement_id", "reserve_price", "bidder_id", "bid", "type"])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    for rec in &filtered {
        for bid in &rec.bids {
            w.write_record([
                rec.procurement_id.as_str(),
                &format!("{}", rec.reserve_price),
                bid.bidder_id.as_str(),
                &format!("{}", bid.bid.expect("retained bids recorded")),
                &format!("{}", dataset.bidder_types[&bid.bidder_id] + 1),
            ])
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;

    let config_path = opts.out.join("configurations.csv");
    let mut w = csv::Writer::from_path(&config_path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", config_path.display())))?;
    w.write_record(["type_1", "type_2", "type_3", "records", "weight"])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    for (counts, n, weight) in &dataset.configurations {
        w.write_record([
            counts[0].to_string(),
            counts[1].to_string(),
            counts[2].to_string(),
            n.to_string(),
            format!("{weight}"),
        ])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;

    let mut manifest = Manifest::new("ingest");
    manifest.input(&opts.data)?;
    manifest.output(&report_path)?;
    manifest.output(&typed_path)?;
    manifest.output(&config_path)?;
    manifest.write(&opts.out)?;
    println!(
        "retained {} of {} procurements (excluded: {} single-bidder, {} missing, {} above reserve); \
         type bid counts {:?}",
        report.retained,
        report.input,
        report.single_bidder,
        report.missing_bid,
        report.above_reserve,
        dataset.type_bid_counts
    );
    Ok(())
}

pub struct EstimateOpts {
    pub data: PathBuf,
    pub k: usize,
    pub m1: usize,
    pub thin: usize,
    pub burn: usize,
    pub seed: u64,
    pub restriction: Restriction,
    pub adapt_until: Option<usize>,
    pub out: PathBuf,
}

fn restriction_name(r: Restriction) -> &'static str {
    match r {
        Restriction::None => "none",
        Restriction::CommonEta => "common-eta",
        Restriction::RiskNeutral => "risk-neutral",
    }
}

/// Ingest a dataset and run the posterior sampler; write the thinned chain
/// and its summary.
pub fn estimate(opts: &EstimateOpts) -> Result<()> {
    prepare_out(&opts.out)?;
    let (dataset, report) = load_dataset(&opts.data)?;

    let mut cfg = ChainConfig::new(opts.seed, data_io::N_TYPES, opts.k);
    cfg.total_iterations = opts.m1;
    cfg.thin = opts.thin;
    cfg.burn_in = opts.burn;
    cfg.restriction = opts.restriction;
    cfg.adapt_until = opts.adapt_until;
    cfg.validate()?;
    let prior = PriorSpec::defaults(opts.k);
    let sample = run_chain(&dataset.records, &cfg, &prior)?;
    for warning in &sample.warnings {
        eprintln!("warning: {warning}");
    }

    let chain_path = opts.out.join("chain.csv");
    formats::write_chain(&chain_path, &sample.draws)?;
    let summary = formats::summary_of_sample(&sample, dataset.records.len())?;
    let summary_path = opts.out.join("summary.json");
    formats::write_json(&summary_path, &summary)?;

    let mut manifest = Manifest::new("estimate");
    manifest
        .flag("k", opts.k)
        .flag("m1", opts.m1)
        .flag("thin", opts.thin)
        .flag("burn", opts.burn)
        .flag("seed", opts.seed)
        .flag("restrict", restriction_name(opts.restriction));
    if let Some(a) = opts.adapt_until {
        manifest.flag("adapt_until", a);
    }
    manifest.input(&opts.data)?;
    manifest.output(&chain_path)?;
    manifest.output(&summary_path)?;
    manifest.write(&opts.out)?;

    let rates: Vec<String> = sample
        .acceptance
        .iter()
        .map(|b| format!("{} {:.2}", b.name, b.rate()))
        .collect();
    println!(
        "estimated from {} procurements ({} retained of {}); kept {} draws; acceptance {}",
        dataset.records.len(),
        report.retained,
        report.input,
        sample.draws.len(),
        rates.join(", ")
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterfactualMode {
    Common,
    TypeSpecific,
    /// One-based type label of the bidder added to every configuration.
    AddBidder(usize),
}

impl std::str::FromStr for CounterfactualMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "common" => Ok(CounterfactualMode::Common),
            "type-specific" => Ok(CounterfactualMode::TypeSpecific),
            _ => match s.strip_prefix("add-bidder:") {
                Some(t) => {
                    let tau: usize =
                        t.parse().map_err(|_| format!("bad type label {t:?}"))?;
                    if tau == 0 {
                        return Err("type labels are one-based".to_string());
                    }
                    Ok(CounterfactualMode::AddBidder(tau))
                }
                None => Err(format!(
                    "unknown mode {s:?}; expected common, type-specific, or add-bidder:<type>"
                )),
            },
        }
    }
}

pub struct CounterfactualOpts {
    pub chain: PathBuf,
    pub data: PathBuf,
    pub mode: CounterfactualMode,
    pub m2: usize,
    pub m3: usize,
    pub seed: u64,
    pub out: PathBuf,
}

fn mode_name(mode: CounterfactualMode) -> String {
    match mode {
        CounterfactualMode::Common => "common".to_string(),
        CounterfactualMode::TypeSpecific => "type-specific".to_string(),
        CounterfactualMode::AddBidder(t) => format!("add-bidder:{t}"),
    }
}

/// One draw per stratum of the kept chain, preserving order.
fn subsample(draws: Vec<ParamDraw>, m2: usize) -> Vec<ParamDraw> {
    if m2 == 0 || m2 >= draws.len() {
        return draws;
    }
    (0..m2).map(|i| draws[i * draws.len() / m2].clone()).collect()
}

/// Evaluate a counterfactual reserve policy on a posterior chain: the
/// non-binding baseline plus the requested scenario, with the search trace
/// when a reserve was optimized.
pub fn counterfactual(opts: &CounterfactualOpts) -> Result<()> {
    prepare_out(&opts.out)?;
    if opts.m3 == 0 {
        return Err(Error::input("m3 must be positive"));
    }
    let draws = subsample(formats::read_chain(&opts.chain)?, opts.m2);
    let n_types = draws[0].eta.len();
    let (dataset, _) = load_dataset(&opts.data)?;
    let records: &[ProcurementRecord] = &dataset.records;

    let ones = vec![1.0; n_types];
    let baseline_policy = ReservePolicy::new(ones.clone())?;
    let baseline = predictive_cost(&draws, records, &baseline_policy, opts.m3, opts.seed)?;

    let mut rows: Vec<(Vec<f64>, PolicyOutcome)> = vec![(ones.clone(), baseline)];
    let mut trace = None;
    match opts.mode {
        CounterfactualMode::Common => {
            let (best, outcome, tr) = optimize_common_reserve(
                &draws,
                records,
                &common_reserve_grid(),
                opts.m3,
                opts.seed,
            )?;
            rows.push((vec![best; n_types], outcome));
            trace = Some(tr);
        }
        CounterfactualMode::TypeSpecific => {
            let (rho, outcome, tr) =
                optimize_type_reserve(&draws, records, opts.m3, opts.seed)?;
            rows.push((rho, outcome));
            trace = Some(tr);
        }
        CounterfactualMode::AddBidder(label) => {
            if label > n_types {
                return Err(Error::input(format!(
                    "type {label} out of range: chain has {n_types} types"
                )));
            }
            let outcome =
                add_bidder_scenario(&draws, records, label - 1, opts.m3, opts.seed)?;
            rows.push((ones, outcome));
        }
    }

    let table_path = opts.out.join("counterfactual.csv");
    formats::write_counterfactual(&table_path, &rows)?;
    let mut manifest = Manifest::new("counterfactual");
    manifest
        .flag("mode", mode_name(opts.mode))
        .flag("m2", opts.m2)
        .flag("m3", opts.m3)
        .flag("seed", opts.seed);
    manifest.input(&opts.chain)?;
    manifest.input(&opts.data)?;
    manifest.output(&table_path)?;
    if let Some(tr) = trace {
        let trace_path = opts.out.join("trace.json");
        formats::write_trace(&trace_path, &tr)?;
        manifest.output(&trace_path)?;
    }
    manifest.write(&opts.out)?;

    let (rho, outcome) = &rows[1];
    println!(
        "{}: rho {:?} cost {:.4} [{:.4}, {:.4}] (baseline {:.4})",
        mode_name(opts.mode),
        rho,
        outcome.predictive_cost.mean,
        outcome.predictive_cost.lo,
        outcome.predictive_cost.hi,
        rows[0].1.predictive_cost.mean
    );
    Ok(())
}

/// Solve the boundary-density system for the per-type risk parameters and
/// report its conditioning.
pub fn diagnose_identify(densities: &str) -> Result<()> {
    let parts: Vec<&str> = densities.split(',').collect();
    if parts.len() != 6 {
        return Err(Error::input(format!(
            "expected six comma-separated boundary densities, found {}",
            parts.len()
        )));
    }
    let mut g = [0.0f64; 6];
    for (slot, part) in g.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| Error::input(format!("bad density {part:?}")))?;
    }
    let input = BoundaryDensityInput::pairwise(g);
    match solve_eta_system(&input) {
        Ok(sol) => {
            let report = serde_json::json!({
                "eta": sol.eta,
                "determinant": sol.determinant,
                "condition": sol.condition,
            });
            println!("{report:#}");
            Ok(())
        }
        Err(e) => {
            eprintln!(
                "note: every consistent boundary-density system admits the constant solution \
                 (1, 1, 1); risk parameters are not separately identified from boundary \
                 densities alone"
            );
            Err(e)
        }
    }
}

pub struct SummarizeOpts {
    pub chain: PathBuf,
    pub grid_points: usize,
    pub out: PathBuf,
}

/// Posterior summaries and predictive cost-density bands from a stored
/// chain.
pub fn summarize(opts: &SummarizeOpts) -> Result<()> {
    prepare_out(&opts.out)?;
    if opts.grid_points < 2 {
        return Err(Error::input("need at least two grid points"));
    }
    let draws = formats::read_chain(&opts.chain)?;
    let n_types = draws[0].eta.len();

    let summary = formats::summarize_chain(&draws, &[], &[], 0)?;
    let summary_path = opts.out.join("summary.json");
    formats::write_json(&summary_path, &summary)?;

    let mut manifest = Manifest::new("summarize");
    manifest.flag("grid_points", opts.grid_points);
    manifest.input(&opts.chain)?;
    manifest.output(&summary_path)?;

    let grid: Vec<f64> = (0..opts.grid_points)
        .map(|g| g as f64 / (opts.grid_points - 1) as f64)
        .collect();
    for tau in 0..n_types {
        let tilts: Vec<CostDensitySpec> = draws
            .iter()
            .map(|d| CostDensitySpec { psi: d.psi[tau].clone() })
            .collect();
        let band = predictive_density_band(&tilts, &grid)?;
        let band_path = opts.out.join(format!("band_type{}.csv", tau + 1));
        formats::write_band(&band_path, &band)?;
        manifest.output(&band_path)?;
    }
    manifest.write(&opts.out)?;
    println!(
        "summarized {} draws over {} types into {}",
        draws.len(),
        n_types,
        opts.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_strings_parse_and_reject() {
        assert_eq!("common".parse::<CounterfactualMode>().unwrap(), CounterfactualMode::Common);
        assert_eq!(
            "type-specific".parse::<CounterfactualMode>().unwrap(),
            CounterfactualMode::TypeSpecific
        );
        assert_eq!(
            "add-bidder:2".parse::<CounterfactualMode>().unwrap(),
            CounterfactualMode::AddBidder(2)
        );
        assert!("add-bidder:0".parse::<CounterfactualMode>().is_err());
        assert!("optimal".parse::<CounterfactualMode>().is_err());
    }

    #[test]
    fn subsampling_is_evenly_spaced_and_order_preserving() {
        let draws: Vec<ParamDraw> = (0..10)
            .map(|i| ParamDraw {
                psi: vec![vec![i as f64]],
                eta: vec![0.0],
                sigma_u: 0.1,
                logpost: 0.0,
            })
            .collect();
        let picked = subsample(draws.clone(), 4);
        let ids: Vec<f64> = picked.iter().map(|d| d.psi[0][0]).collect();
        assert_eq!(ids, vec![0.0, 2.0, 5.0, 7.0]);
        assert_eq!(subsample(draws.clone(), 0).len(), 10);
        assert_eq!(subsample(draws, 99).len(), 10);
    }
}
