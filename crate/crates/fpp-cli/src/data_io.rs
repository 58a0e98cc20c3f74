//! Ingestion of procurement CSV files: parsing, exclusion filters, bidder
//! type assignment, bid normalization, and the empirical configuration
//! distribution.

use fpp_core::likelihood::ProcurementRecord;
use fpp_core::{Error, Result};
use std::collections::BTreeMap;
use std::io::Read;

pub const N_TYPES: usize = 3;

/// One bidder's row in a raw procurement.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBid {
    pub bidder_id: String,
    /// Bid in currency units; `None` when the bid field was empty.
    pub bid: Option<f64>,
}

/// One procurement as read from disk, bids in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub procurement_id: String,
    pub reserve_price: f64,
    pub bids: Vec<RawBid>,
}

/// Where the dropped records went; one reason per record, attributed in the
/// order single-bidder, missing bid, above reserve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExclusionReport {
    pub input: usize,
    pub single_bidder: usize,
    pub missing_bid: usize,
    pub above_reserve: usize,
    pub retained: usize,
}

/// Retained sample with types assigned and bids normalized.
#[derive(Debug, Clone)]
pub struct TypedDataset {
    pub records: Vec<ProcurementRecord>,
    /// Zero-based type of every bidder in the retained sample.
    pub bidder_types: BTreeMap<String, usize>,
    /// Bids per type over the retained sample.
    pub type_bid_counts: [usize; N_TYPES],
    /// Configuration type counts, record count, and empirical weight.
    pub configurations: Vec<(Vec<u32>, usize, f64)>,
    pub warnings: Vec<String>,
}

const HEADER: [&str; 4] = ["procurement_id", "reserve_price", "bidder_id", "bid"];

fn parse_err(line: u64, msg: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("line {line}: {msg}"))
}

/// Read `procurement_id,reserve_price,bidder_id,bid` rows, grouping bids by
/// procurement in order of first appearance. An empty bid field marks a
/// missing bid; malformed numbers, duplicate bidders within a procurement,
/// and inconsistent reserves are errors naming the offending line.
pub fn parse_procurements<R: Read>(source: R) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidInput(format!("unreadable header: {e}")))?;
    if headers.iter().ne(HEADER) {
        return Err(Error::InvalidInput(format!(
            "expected header {}, found {}",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, RawRecord> = BTreeMap::new();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(parse_err(line, e));
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != HEADER.len() {
            return Err(parse_err(line, format!("expected 4 fields, found {}", row.len())));
        }
        let pid = row[0].to_string();
        if pid.is_empty() {
            return Err(parse_err(line, "empty procurement_id"));
        }
        let reserve: f64 = row[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad reserve_price {:?}", &row[1])))?;
        if !(reserve > 0.0 && reserve.is_finite()) {
            return Err(parse_err(line, format!("reserve_price {reserve} must be positive")));
        }
        let bidder = row[2].to_string();
        if bidder.is_empty() {
            return Err(parse_err(line, "empty bidder_id"));
        }
        let bid = if row[3].is_empty() {
            None
        } else {
            let b: f64 = row[3]
                .parse()
                .map_err(|_| parse_err(line, format!("bad bid {:?}", &row[3])))?;
            if !(b > 0.0 && b.is_finite()) {
                return Err(parse_err(line, format!("bid {b} must be positive")));
            }
            Some(b)
        };

        let entry = by_id.entry(pid.clone()).or_insert_with(|| {
            order.push(pid.clone());
            RawRecord { procurement_id: pid.clone(), reserve_price: reserve, bids: Vec::new() }
        });
        if entry.reserve_price != reserve {
            return Err(parse_err(
                line,
                format!(
                    "procurement {pid} lists reserve {reserve} after {}",
                    entry.reserve_price
                ),
            ));
        }
        if entry.bids.iter().any(|b| b.bidder_id == bidder) {
            return Err(parse_err(line, format!("duplicate bidder {bidder} in procurement {pid}")));
        }
        entry.bids.push(RawBid { bidder_id: bidder, bid });
    }
    Ok(order.into_iter().map(|pid| by_id.remove(&pid).expect("grouped")).collect())
}

/// Drop single-bidder, missing-bid, and above-reserve procurements, in that
/// attribution order; every retained record has at least two bids, all at or
/// below the reserve.
pub fn apply_exclusions(raw: Vec<RawRecord>) -> (Vec<RawRecord>, ExclusionReport) {
    let mut report = ExclusionReport {
        input: raw.len(),
        single_bidder: 0,
        missing_bid: 0,
        above_reserve: 0,
        retained: 0,
    };
    let mut kept = Vec::with_capacity(raw.len());
    for rec in raw {
        if rec.bids.len() < 2 {
            report.single_bidder += 1;
        } else if rec.bids.iter().any(|b| b.bid.is_none()) {
            report.missing_bid += 1;
        } else if rec.bids.iter().any(|b| b.bid.unwrap() > rec.reserve_price) {
            report.above_reserve += 1;
        } else {
            kept.push(rec);
        }
    }
    report.retained = kept.len();
    (kept, report)
}

/// Appearance threshold for the most frequent type: at least ten percent of
/// retained procurements, rounded up.
pub fn type_one_threshold(retained: usize) -> usize {
    retained.div_ceil(10)
}

/// Map every bidder in the retained sample to a type: one appearance makes
/// type 3, clearing the ten-percent threshold makes type 1, the remainder
/// type 2. Returns zero-based types.
pub fn assign_types(filtered: &[RawRecord]) -> BTreeMap<String, usize> {
    let mut appearances: BTreeMap<&str, usize> = BTreeMap::new();
    for rec in filtered {
        for bid in &rec.bids {
            *appearances.entry(&bid.bidder_id).or_insert(0) += 1;
        }
    }
    let threshold = type_one_threshold(filtered.len());
    appearances
        .into_iter()
        .map(|(id, n)| {
            let tau = if n == 1 {
                2
            } else if n >= threshold {
                0
            } else {
                1
            };
            (id.to_string(), tau)
        })
        .collect()
}

/// Normalize bids by each procurement's reserve and assemble the estimation
/// dataset together with the empirical configuration distribution.
pub fn normalize_and_build(filtered: Vec<RawRecord>) -> Result<TypedDataset> {
    if filtered.is_empty() {
        return Err(Error::input("no procurements survived the exclusion filters"));
    }
    let bidder_types = assign_types(&filtered);

    let mut type_bid_counts = [0usize; N_TYPES];
    let mut config_counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    let mut records = Vec::with_capacity(filtered.len());
    for rec in &filtered {
        let mut types = Vec::with_capacity(rec.bids.len());
        let mut bids = Vec::with_capacity(rec.bids.len());
        let mut counts = vec![0u32; N_TYPES];
        for bid in &rec.bids {
            let tau = bidder_types[&bid.bidder_id];
            let b = bid.bid.expect("exclusions keep only recorded bids") / rec.reserve_price;
            types.push(tau);
            bids.push(b);
            type_bid_counts[tau] += 1;
            counts[tau] += 1;
        }
        *config_counts.entry(counts).or_insert(0) += 1;
        records.push(ProcurementRecord {
            id: rec.procurement_id.clone(),
            reserve: 1.0,
            bidder_types: types,
            bids,
            u: None,
        });
    }

    let total = filtered.len() as f64;
    let configurations: Vec<(Vec<u32>, usize, f64)> = config_counts
        .into_iter()
        .map(|(counts, n)| (counts, n, n as f64 / total))
        .collect();
    let warnings = type_bid_counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == 0)
        .map(|(tau, _)| format!("type {} has no bids; its cost density is unidentified", tau + 1))
        .collect();

    Ok(TypedDataset {
        records,
        bidder_types,
        type_bid_counts,
        configurations,
        warnings,
    })
}

/// Full pipeline: parse, filter, type, and normalize.
pub fn ingest<R: Read>(source: R) -> Result<(TypedDataset, ExclusionReport)> {
    let raw = parse_procurements(source)?;
    let (filtered, report) = apply_exclusions(raw);
    let dataset = normalize_and_build(filtered)?;
    Ok((dataset, report))
}
