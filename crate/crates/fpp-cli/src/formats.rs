//! On-disk formats: chain CSV, posterior summary JSON, counterfactual CSV,
//! search-trace JSON, density-band CSV, and run manifests.
//!
//! Every writer is deterministic: map keys are sorted, floats print in
//! shortest round-trip form, and nothing records time or machine state, so
//! identical runs produce identical bytes.

use fpp_core::policy::{PolicyOutcome, ReserveSearchPoint};
use fpp_core::sampler::{BlockRate, ParamDraw, PosteriorSample};
use fpp_core::stats::{posterior_summary, BandPoint};
use fpp_core::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{}: {e}", path.display()))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Column names of a chain CSV for the given shape: per-type tilt
/// coefficients, per-type risk parameters, the latent-scale spread, and the
/// log posterior.
pub fn chain_columns(n_types: usize, basis_order: usize) -> Vec<String> {
    let mut cols = vec!["draw".to_string()];
    for tau in 1..=n_types {
        for j in 1..=basis_order {
            cols.push(format!("psi_{tau}_{j}"));
        }
    }
    for tau in 1..=n_types {
        cols.push(format!("eta_{tau}"));
    }
    cols.push("sigma_u".to_string());
    cols.push("logpost".to_string());
    cols
}

pub fn write_chain(path: &Path, draws: &[ParamDraw]) -> Result<()> {
    let first = draws.first().ok_or_else(|| Error::input("empty chain"))?;
    let n_types = first.eta.len();
    let basis_order = first.psi.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(chain_columns(n_types, basis_order))
        .map_err(|e| io_err(path, e))?;
    for (i, draw) in draws.iter().enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(draw.psi.iter().flatten().map(|&v| fmt(v)));
        row.extend(draw.eta.iter().map(|&v| fmt(v)));
        row.push(fmt(draw.sigma_u));
        row.push(fmt(draw.logpost));
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn read_chain(path: &Path) -> Result<Vec<ParamDraw>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers: Vec<String> =
        r.headers().map_err(|e| io_err(path, e))?.iter().map(str::to_string).collect();
    let n_types = headers.iter().filter(|h| h.starts_with("eta_")).count();
    let n_psi = headers.iter().filter(|h| h.starts_with("psi_")).count();
    if n_types == 0 || n_psi % n_types != 0 {
        return Err(io_err(path, "not a chain file: need eta_* and per-type psi_* columns"));
    }
    let basis_order = n_psi / n_types;
    if headers != chain_columns(n_types, basis_order) {
        return Err(io_err(path, "unexpected chain column layout"));
    }

    let mut draws = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| io_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| {
                io_err(path, format!("line {line}: bad number {:?} in {}", &row[i], headers[i]))
            })
        };
        let mut at = 1;
        let mut psi = Vec::with_capacity(n_types);
        for _ in 0..n_types {
            let mut coeffs = Vec::with_capacity(basis_order);
            for _ in 0..basis_order {
                coeffs.push(field(at)?);
                at += 1;
            }
            psi.push(coeffs);
        }
        let mut eta = Vec::with_capacity(n_types);
        for _ in 0..n_types {
            eta.push(field(at)?);
            at += 1;
        }
        let sigma_u = field(at)?;
        let logpost = field(at + 1)?;
        draws.push(ParamDraw { psi, eta, sigma_u, logpost });
    }
    if draws.is_empty() {
        return Err(io_err(path, "chain has no draws"));
    }
    Ok(draws)
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct ParameterSummary {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct AcceptanceSummary {
    pub block: String,
    pub rate: f64,
    pub frozen_rate: f64,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct ChainSummary {
    pub records: usize,
    pub draws: usize,
    pub basis_order: usize,
    pub parameters: BTreeMap<String, ParameterSummary>,
    pub acceptance: Vec<AcceptanceSummary>,
    pub warnings: Vec<String>,
}

/// Per-parameter posterior summaries in Table-1 shape (mean, spread, central
/// 95% interval), plus acceptance bookkeeping.
pub fn summarize_chain(
    draws: &[ParamDraw],
    acceptance: &[BlockRate],
    warnings: &[String],
    records: usize,
) -> Result<ChainSummary> {
    let first = draws.first().ok_or_else(|| Error::input("empty chain"))?;
    let n_types = first.eta.len();
    let basis_order = first.psi.first().map_or(0, Vec::len);

    let mut parameters = BTreeMap::new();
    let mut put = |name: String, values: Vec<f64>| -> Result<()> {
        let s = posterior_summary(&values)?;
        parameters.insert(
            name,
            ParameterSummary { mean: s.mean, sd: s.sd, lo: s.lo, hi: s.hi },
        );
        Ok(())
    };
    for tau in 0..n_types {
        for j in 0..basis_order {
            put(
                format!("psi_{}_{}", tau + 1, j + 1),
                draws.iter().map(|d| d.psi[tau][j]).collect(),
            )?;
        }
        put(format!("eta_{}", tau + 1), draws.iter().map(|d| d.eta[tau]).collect())?;
    }
    put("sigma_u".to_string(), draws.iter().map(|d| d.sigma_u).collect())?;
    put("logpost".to_string(), draws.iter().map(|d| d.logpost).collect())?;

    Ok(ChainSummary {
        records,
        draws: draws.len(),
        basis_order,
        parameters,
        acceptance: acceptance
            .iter()
            .map(|b| AcceptanceSummary {
                block: b.name.clone(),
                rate: b.rate(),
                frozen_rate: b.frozen_rate(),
            })
            .collect(),
        warnings: warnings.to_vec(),
    })
}

pub fn summary_of_sample(sample: &PosteriorSample, records: usize) -> Result<ChainSummary> {
    summarize_chain(&sample.draws, &sample.acceptance, &sample.warnings, records)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// One counterfactual row: a reserve policy and its posterior outcome.
pub fn write_counterfactual(
    path: &Path,
    rows: &[(Vec<f64>, PolicyOutcome)],
) -> Result<()> {
    let n_types = rows
        .first()
        .map(|(rho, _)| rho.len())
        .ok_or_else(|| Error::input("no counterfactual rows"))?;
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header: Vec<String> = (1..=n_types).map(|t| format!("rho_{t}")).collect();
    header.extend(
        ["cost_mean", "cost_lo", "cost_hi", "p_lowest", "p_trade"].map(str::to_string),
    );
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for (rho, out) in rows {
        let mut row: Vec<String> = rho.iter().map(|&v| fmt(v)).collect();
        row.push(fmt(out.predictive_cost.mean));
        row.push(fmt(out.predictive_cost.lo));
        row.push(fmt(out.predictive_cost.hi));
        row.push(fmt(out.prob_lowest_wins.mean));
        row.push(fmt(out.prob_transaction.mean));
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

#[derive(serde::Serialize)]
struct TracePoint<'a> {
    rho: &'a [f64],
    cost: f64,
}

pub fn write_trace(path: &Path, trace: &[ReserveSearchPoint]) -> Result<()> {
    let points: Vec<TracePoint> =
        trace.iter().map(|p| TracePoint { rho: &p.rho, cost: p.cost }).collect();
    write_json(path, &points)
}

pub fn write_band(path: &Path, band: &[BandPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["c", "mean", "lo", "hi"]).map_err(|e| io_err(path, e))?;
    for p in band {
        w.write_record([fmt(p.c), fmt(p.mean), fmt(p.lo), fmt(p.hi)])
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Reproducibility record of one run: subcommand, flags, and SHA-256 digests
/// of inputs and outputs. Deliberately no timestamps and no machine state.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub command: String,
    pub flags: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            command: command.to_string(),
            flags: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn flag(&mut self, name: &str, value: impl std::fmt::Display) -> &mut Self {
        self.flags.insert(name.to_string(), value.to_string());
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        let digest = sha256_file(path)?;
        self.inputs.insert(file_label(path), digest);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        let digest = sha256_file(path)?;
        self.outputs.insert(file_label(path), digest);
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

fn file_label(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draw(k: f64) -> ParamDraw {
        ParamDraw {
            psi: vec![vec![0.1 * k, -0.2], vec![0.3, 0.4 * k]],
            eta: vec![0.5, 0.25 * k],
            sigma_u: 0.07 * k,
            logpost: -12.5 * k,
        }
    }

    #[test]
    fn chain_roundtrips_exactly() {
        let dir = std::env::temp_dir().join(format!("fpp_chain_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("chain.csv");
        let draws = vec![draw(1.0), draw(std::f64::consts::PI), draw(1e-17)];
        write_chain(&path, &draws).unwrap();
        let back = read_chain(&path).unwrap();
        assert_eq!(draws, back);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn chain_header_is_shape_deterministic() {
        assert_eq!(
            chain_columns(2, 1),
            vec!["draw", "psi_1_1", "psi_2_1", "eta_1", "eta_2", "sigma_u", "logpost"]
        );
    }

    #[test]
    fn summary_matches_posterior_statistics() {
        let draws = vec![draw(1.0), draw(2.0), draw(3.0)];
        let s = summarize_chain(&draws, &[], &[], 10).unwrap();
        assert_eq!(s.draws, 3);
        assert_eq!(s.basis_order, 2);
        let eta2 = &s.parameters["eta_2"];
        assert!((eta2.mean - 0.5).abs() < 1e-15);
        assert!(s.parameters.contains_key("sigma_u"));
        assert!(s.parameters.contains_key("psi_2_2"));
    }

    #[test]
    fn manifest_digests_are_stable() {
        let dir = std::env::temp_dir().join(format!("fpp_manifest_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let input = dir.join("in.txt");
        fs::write(&input, b"stable bytes").unwrap();
        let mut m = Manifest::new("test");
        m.flag("seed", 7);
        m.input(&input).unwrap();
        let path = m.write(&dir).unwrap();
        let first = fs::read(&path).unwrap();
        m.write(&dir).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        let parsed: Manifest = serde_json::from_slice(&first).unwrap();
        assert_eq!(parsed.flags["seed"], "7");
        assert_eq!(parsed.inputs["in.txt"].len(), 64);
        fs::remove_dir_all(&dir).unwrap();
    }
}
