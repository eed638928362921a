//! Header-bidding analytics: per-persona CPM aggregates over common ad
//! slots, one-sided rank tests of each treatment persona against a control,
//! partner/non-partner splits, and the cross-group comparison matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{SlotKey, StatsConfig};
use crate::error::{AuditError, Result};
use crate::stats::{self, StatResult, StatsError};
use crate::trace::{IngestReport, MalformedLine, PersonaId};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// One bid response captured from a header-bidding auction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidRecord {
    pub persona: PersonaId,
    /// Crawl iteration the auction ran in, starting at 1.
    pub iteration: u32,
    /// Registered domain of the page hosting the slot.
    pub site: String,
    pub slot_id: String,
    /// Bidder name, normalized to an organization name where known.
    pub bidder: String,
    /// Cost per mille in the export's currency.
    pub cpm: f64,
    pub currency: String,
    pub timestamp_ms: i64,
}

impl BidRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if !self.cpm.is_finite() || self.cpm < 0.0 {
            return Err(format!("cpm must be finite and >= 0, got {}", self.cpm));
        }
        if self.iteration < 1 {
            return Err("iteration must be >= 1".into());
        }
        Ok(())
    }

    /// Uniqueness key for duplicate detection.
    fn identity(&self) -> (PersonaId, u32, String, String, String, i64) {
        (
            self.persona.clone(),
            self.iteration,
            self.site.clone(),
            self.slot_id.clone(),
            self.bidder.clone(),
            self.timestamp_ms,
        )
    }
}

#[derive(Debug)]
pub struct BidIngest {
    pub bids: Vec<BidRecord>,
    pub report: IngestReport,
}

/// Reads a JSONL bid export. Malformed lines are skipped and reported, but
/// strictly more than 10% malformed rejects the file. Two records sharing
/// the full identity tuple mean the export is internally inconsistent.
pub fn load_bids(path: &Path) -> Result<BidIngest> {
    let file = std::fs::File::open(path).map_err(|e| AuditError::io(path, e))?;
    let reader = BufReader::new(file);

    let mut bids = Vec::new();
    let mut malformed = Vec::new();
    let mut total_lines = 0usize;
    let mut seen: HashMap<_, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| AuditError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        total_lines += 1;
        match parse_bid_line(&line) {
            Ok(bid) => {
                if let Some(first) = seen.insert(bid.identity(), line_no) {
                    return Err(AuditError::Invariant(format!(
                        "{}: duplicate bid record on line {line_no} (first seen on line {first})",
                        path.display()
                    )));
                }
                bids.push(bid);
            }
            Err(reason) => malformed.push(MalformedLine { line: line_no, reason }),
        }
    }

    if malformed.len() * 10 > total_lines {
        return Err(AuditError::MalformedInput {
            path: path.to_path_buf(),
            bad: malformed.len(),
            total: total_lines,
            lines: malformed.iter().map(|m| m.line).collect(),
        });
    }

    let accepted = bids.len();
    Ok(BidIngest {
        bids,
        report: IngestReport { total_lines, accepted, malformed },
    })
}

fn parse_bid_line(line: &str) -> std::result::Result<BidRecord, String> {
    let bid: BidRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    bid.check()?;
    Ok(bid)
}

/// Slot identity under the configured key.
fn slot_of(bid: &BidRecord, key: SlotKey) -> (String, String, Option<u32>) {
    let iteration = match key {
        SlotKey::SiteSlot => None,
        SlotKey::SiteSlotIteration => Some(bid.iteration),
    };
    (bid.site.clone(), bid.slot_id.clone(), iteration)
}

/// Keeps only bids on slots that received at least one bid under every
/// persona in `personas`. No common slot is a warning, not an error.
pub fn common_slots(
    bids: &[BidRecord],
    personas: &BTreeSet<PersonaId>,
    key: SlotKey,
    warnings: &mut Vec<String>,
) -> Vec<BidRecord> {
    let mut coverage: HashMap<(String, String, Option<u32>), HashSet<&PersonaId>> = HashMap::new();
    for bid in bids {
        if personas.contains(&bid.persona) {
            coverage.entry(slot_of(bid, key)).or_default().insert(&bid.persona);
        }
    }
    let common: HashSet<_> = coverage
        .into_iter()
        .filter(|(_, seen)| seen.len() == personas.len())
        .map(|(slot, _)| slot)
        .collect();
    if common.is_empty() {
        warnings.push(format!(
            "no ad slot received bids under all {} personas; comparison set is empty",
            personas.len()
        ));
        return Vec::new();
    }
    bids.iter().filter(|b| common.contains(&slot_of(b, key))).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CpmAggregate {
    pub n: usize,
    pub median_cpm: f64,
    pub mean_cpm: f64,
}

fn aggregate_values(mut values: Vec<f64>) -> Option<CpmAggregate> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite cpm"));
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    };
    let mean = values.iter().sum::<f64>() / n as f64;
    Some(CpmAggregate { n, median_cpm: median, mean_cpm: mean })
}

/// CPM values per persona, sorted so downstream sums do not depend on input
/// order.
fn per_persona(bids: &[BidRecord]) -> BTreeMap<PersonaId, Vec<f64>> {
    let mut out: BTreeMap<PersonaId, Vec<f64>> = BTreeMap::new();
    for bid in bids {
        out.entry(bid.persona.clone()).or_default().push(bid.cpm);
    }
    for values in out.values_mut() {
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite cpm"));
    }
    out
}

/// Median and mean CPM per persona. Personas without bids are absent.
pub fn aggregate(bids: &[BidRecord]) -> BTreeMap<PersonaId, CpmAggregate> {
    per_persona(bids)
        .into_iter()
        .filter_map(|(p, values)| aggregate_values(values).map(|a| (p, a)))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub treatment: PersonaId,
    #[serde(flatten)]
    pub result: StatResult,
    /// Present only when the multiple-comparison correction is enabled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_adjusted: Option<f64>,
    pub significant: bool,
}

fn stat_error(err: StatsError, context: &str) -> AuditError {
    match err {
        StatsError::EmptySample(which) => AuditError::MissingInput {
            stage: "bids".into(),
            what: format!("{which} sample for {context} has no bids on common slots"),
        },
        StatsError::NonFinite(which) => {
            AuditError::Invariant(format!("non-finite cpm in {which} sample for {context}"))
        }
    }
}

/// One-sided test of each treatment persona against the control. With the
/// correction enabled, significance is judged on `min(1, p * treatments)`.
pub fn persona_comparison(
    bids: &[BidRecord],
    treatments: &[PersonaId],
    control: &PersonaId,
    cfg: &StatsConfig,
) -> Result<Vec<ComparisonRow>> {
    let buckets = per_persona(bids);
    let empty = Vec::new();
    let control_values = buckets.get(control).unwrap_or(&empty);
    let m = treatments.len().max(1);
    let mut rows = Vec::with_capacity(treatments.len());
    for persona in treatments {
        let treatment_values = buckets.get(persona).unwrap_or(&empty);
        let context = format!("{} vs {}", persona.name, control.name);
        let result =
            stats::mann_whitney_one_sided(treatment_values, control_values, cfg.exact_cutoff)
                .map_err(|e| stat_error(e, &context))?;
        let p_adjusted = cfg.bonferroni.then(|| (result.p_value * m as f64).min(1.0));
        let significant = p_adjusted.unwrap_or(result.p_value) < SIGNIFICANCE_LEVEL;
        rows.push(ComparisonRow { treatment: persona.clone(), result, p_adjusted, significant });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartnerLabel {
    Partner,
    NonPartner,
}

#[derive(Debug, Clone, Serialize)]
pub struct LabeledBid {
    #[serde(flatten)]
    pub bid: BidRecord,
    pub label: PartnerLabel,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partner: Option<CpmAggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub non_partner: Option<CpmAggregate>,
    /// partner median over non-partner median, when both sides have bids and
    /// the non-partner median is nonzero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_ratio: Option<f64>,
}

/// Aggregates per persona, split by the partner label.
pub fn partner_split(bids: &[LabeledBid]) -> BTreeMap<PersonaId, SplitRow> {
    let mut buckets: BTreeMap<PersonaId, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for labeled in bids {
        let entry = buckets.entry(labeled.bid.persona.clone()).or_default();
        match labeled.label {
            PartnerLabel::Partner => entry.0.push(labeled.bid.cpm),
            PartnerLabel::NonPartner => entry.1.push(labeled.bid.cpm),
        }
    }
    buckets
        .into_iter()
        .map(|(persona, (partner, non_partner))| {
            let partner = aggregate_values(partner);
            let non_partner = aggregate_values(non_partner);
            let median_ratio = match (&partner, &non_partner) {
                (Some(p), Some(np)) if np.median_cpm > 0.0 => {
                    Some(p.median_cpm / np.median_cpm)
                }
                _ => None,
            };
            (persona, SplitRow { partner, non_partner, median_ratio })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossGroupCell {
    pub group_a_persona: PersonaId,
    pub group_b_persona: PersonaId,
    #[serde(flatten)]
    pub result: StatResult,
    pub p_two_sided: f64,
    pub significant_two_sided: bool,
}

/// Pairwise comparisons between two persona groups. Each cell carries both
/// the one-sided result (a over b) and a two-sided p-value; the report layer
/// notes that significance is judged two-sided here.
pub fn cross_group_comparison(
    bids: &[BidRecord],
    group_a: &[PersonaId],
    group_b: &[PersonaId],
    cfg: &StatsConfig,
) -> Result<Vec<CrossGroupCell>> {
    let buckets = per_persona(bids);
    let empty = Vec::new();
    let mut cells = Vec::with_capacity(group_a.len() * group_b.len());
    for a in group_a {
        for b in group_b {
            let va = buckets.get(a).unwrap_or(&empty);
            let vb = buckets.get(b).unwrap_or(&empty);
            let context = format!("{} vs {}", a.name, b.name);
            let (result, p_two_sided) = stats::mann_whitney_both(va, vb, cfg.exact_cutoff)
                .map_err(|e| stat_error(e, &context))?;
            cells.push(CrossGroupCell {
                group_a_persona: a.clone(),
                group_b_persona: b.clone(),
                result,
                p_two_sided,
                significant_two_sided: p_two_sided < SIGNIFICANCE_LEVEL,
            });
        }
    }
    Ok(cells)
}
