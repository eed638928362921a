//! Pipeline orchestration, the consolidated audit report, and its emitters.
//!
//! The pipeline runs a fixed stage order: ingest -> resolve -> classify ->
//! syncs -> bids -> policy -> interests. Partial runs take a non-empty
//! prefix of that order; every stage reads only products of earlier stages,
//! so a prefix is always self-contained. Each requested stage validates its
//! own mandatory inputs and fails with the stage name attached.
//!
//! ## Determinism
//!
//! Identical inputs and config produce byte-identical canonical JSON:
//!
//! * map keys are sorted (the report round-trips through
//!   [`serde_json::Value`], whose object type keeps keys ordered),
//! * every float is rounded when the report is built (percentages to 2
//!   decimals, CPM and test statistics to 3, validation metrics to 4), so
//!   shortest-roundtrip printing is stable,
//! * nothing wall-clock enters the report; all timestamps come from inputs,
//!   and input files are identified by content digest, not by mtime or path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bids::{self, BidRecord, CpmAggregate};
use crate::config::{AuditConfig, SlotKey, Weight};
use crate::endpoint::{
    parse_filter_list, load_purpose_overrides, traffic_distribution, EndpointIntel, OrgOntology,
    Party, PublicSuffixList, Purpose, PurposeClassifier, SkillRegistry,
};
use crate::error::{AuditError, Result};
use crate::policy::{
    audit_skill, diff_interests, extract_flows, load_gold_labels, load_interest_snapshots,
    validation_metrics, DataOntology, DisclosureSummary, EntityVagueTerms, InterestTimeline,
    LabeledTuple, PayloadSignatures, PolicyAnalyzer, PolicyStore, Verdict, VERDICT_CLASSES,
};
use crate::stats::{EffectSize, StatMethod};
use crate::sync::{self, PartnerGraph, SyncEdge, SyncEvent};
use crate::trace::{
    ingest_trace, resolve_domains, segment_sessions, FlowRecord, MalformedLine, PersonaId,
    PersonaKind, Protocol, Resolution, SkillSession,
};

// ---------------------------------------------------------------------------
// Stages

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Resolve,
    Classify,
    Syncs,
    Bids,
    Policy,
    Interests,
}

pub const STAGE_ORDER: [Stage; 7] = [
    Stage::Ingest,
    Stage::Resolve,
    Stage::Classify,
    Stage::Syncs,
    Stage::Bids,
    Stage::Policy,
    Stage::Interests,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Resolve => "resolve",
            Stage::Classify => "classify",
            Stage::Syncs => "syncs",
            Stage::Bids => "bids",
            Stage::Policy => "policy",
            Stage::Interests => "interests",
        }
    }

    /// Stages up to and including this one, the unit a subcommand runs.
    pub fn prefix(self) -> Vec<Stage> {
        let end = STAGE_ORDER.iter().position(|s| *s == self).expect("stage is in the order");
        STAGE_ORDER[..=end].to_vec()
    }
}

/// Parses a `--stages` value: comma-separated stage names that must form a
/// non-empty prefix of the pipeline order.
pub fn parse_stages(spec: &str) -> Result<Vec<Stage>> {
    let mut requested = Vec::new();
    for raw in spec.split(',') {
        let name = raw.trim();
        if name.is_empty() {
            continue;
        }
        let stage = STAGE_ORDER
            .iter()
            .copied()
            .find(|s| s.name() == name)
            .ok_or_else(|| {
                AuditError::Config(format!(
                    "unknown stage {name:?}; stages are {}",
                    stage_names(&STAGE_ORDER)
                ))
            })?;
        requested.push(stage);
    }
    if requested.is_empty() {
        return Err(AuditError::Config("--stages must name at least one stage".into()));
    }
    if requested != STAGE_ORDER[..requested.len()] {
        return Err(AuditError::Config(format!(
            "stages must be a prefix of the pipeline ({}); got {}",
            stage_names(&STAGE_ORDER),
            stage_names(&requested)
        )));
    }
    Ok(requested)
}

fn stage_names(stages: &[Stage]) -> String {
    stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
}

/// Run-time switches that are not part of the dataset config.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub stages: Vec<Stage>,
    /// Treat HTTP body excerpts as readable payload evidence. Off models a
    /// capture without TLS interception: every flow is graded entity-only.
    pub unencrypted: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { stages: STAGE_ORDER.to_vec(), unencrypted: true }
    }
}

// ---------------------------------------------------------------------------
// Report types

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub stages: Vec<String>,
    pub platform_org: String,
    /// SHA-256 digest per configured input, keyed by config-file path name.
    pub fingerprints: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<ResolutionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub syncs: Option<SyncSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bids: Option<BidsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interests: Option<InterestsSection>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSection {
    pub total_lines: usize,
    pub accepted: usize,
    pub malformed: Vec<MalformedLine>,
    pub sessions: usize,
    pub personas: Vec<PersonaId>,
    pub skills: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolutionSection {
    /// Distinct `(session, destination ip)` pairs with a hostname.
    pub resolved_pairs: usize,
    pub resolved_flows: usize,
    pub unresolved_flows: usize,
    pub unresolved: Vec<crate::trace::UnresolvedGroup>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartyPurposeCell {
    pub party: Party,
    pub purpose: Purpose,
    pub weight: u64,
    pub pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PurposeTotalRow {
    pub purpose: Purpose,
    pub weight: u64,
    pub pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PersonaHostsRow {
    pub persona: String,
    pub ats_hosts: usize,
    pub functional_hosts: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkillAtsRow {
    pub skill_id: String,
    pub hosts: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrgDomainReportRow {
    pub org_name: String,
    pub display_domain: String,
    pub registered_domain: String,
    pub purpose: Purpose,
    pub skills: Vec<String>,
    pub weight: u64,
    pub pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrafficSection {
    pub weight_basis: Weight,
    pub resolved_weight: u64,
    pub unresolved_weight: u64,
    pub unresolved_flows: usize,
    pub dns_flows: usize,
    pub crawl_flows: usize,
    pub party_purpose: Vec<PartyPurposeCell>,
    pub purpose_totals: Vec<PurposeTotalRow>,
    pub per_persona_hosts: Vec<PersonaHostsRow>,
    pub per_skill_ats: Vec<SkillAtsRow>,
    /// Sorted by descending weight, then organization and domain.
    pub org_domains: Vec<OrgDomainReportRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SyncSection {
    pub focus_org: String,
    pub tokens: usize,
    pub events: Vec<SyncEvent>,
    pub edges: Vec<SyncEdge>,
    pub direct_partners: Vec<String>,
    pub second_hop: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PersonaCpmRow {
    pub persona: String,
    pub kind: PersonaKind,
    pub n: usize,
    pub median_cpm: f64,
    pub mean_cpm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReportRow {
    pub treatment: String,
    pub n_treatment: usize,
    pub n_control: usize,
    pub u_statistic: f64,
    pub p_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_adjusted: Option<f64>,
    pub effect_size_r: f64,
    pub size_label: EffectSize,
    pub method: StatMethod,
    pub significant: bool,
}

/// Bids split by whether the bidder is a direct identifier-sharing partner
/// of the focus org. A side with no bids reports null aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct PartnerSplitReportRow {
    pub persona: String,
    pub partner_n: usize,
    pub partner_median_cpm: Option<f64>,
    pub partner_mean_cpm: Option<f64>,
    pub non_partner_n: usize,
    pub non_partner_median_cpm: Option<f64>,
    pub non_partner_mean_cpm: Option<f64>,
    pub median_ratio: Option<f64>,
}

/// Device persona vs its same-name web-crawl twin; significance is judged
/// two-sided, with U and r oriented device-over-web.
#[derive(Debug, Clone, Serialize)]
pub struct EchoWebRow {
    pub persona: String,
    pub n_device: usize,
    pub n_web: usize,
    pub u_statistic: f64,
    pub p_two_sided: f64,
    pub effect_size_r: f64,
    pub size_label: EffectSize,
    pub method: StatMethod,
    pub significant_two_sided: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BidsSection {
    pub total_bids: usize,
    pub malformed: Vec<MalformedLine>,
    pub slot_key: SlotKey,
    pub control: String,
    /// Device-side bids surviving the common-slot intersection.
    pub common_slot_bids: usize,
    pub per_persona: Vec<PersonaCpmRow>,
    pub comparisons: Vec<ComparisonReportRow>,
    pub partner_split: Vec<PartnerSplitReportRow>,
    pub echo_vs_web: Vec<EchoWebRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_type: Option<String>,
    pub entity: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_term: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence_sentence: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkillAuditReport {
    pub skill_id: String,
    pub include_platform_policy: bool,
    pub summary: DisclosureSummary,
    pub verdicts: Vec<VerdictRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub class_order: [&'static str; 4],
    /// Rows = hand label, columns = predicted, in `class_order`.
    pub confusion: [[u64; 4]; 4],
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicySection {
    pub tuples: usize,
    /// Skill policies with the platform policy's sentences merged in.
    pub audits: Vec<SkillAuditReport>,
    /// Skill policies alone; a skill without one grades as no_policy.
    pub audits_skill_only: Vec<SkillAuditReport>,
    pub totals: DisclosureSummary,
    pub totals_skill_only: DisclosureSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterestsSection {
    pub timelines: Vec<InterestTimeline>,
}

// ---------------------------------------------------------------------------
// Rounding and digests

/// Rounds half away from zero at `decimals` places, so equal pipelines print
/// equal shortest-roundtrip literals.
pub fn round_to(value: f64, decimals: i32) -> f64 {
    let m = 10f64.powi(decimals);
    (value * m).round() / m
}

fn round_opt(value: Option<f64>, decimals: i32) -> Option<f64> {
    value.map(|v| round_to(v, decimals))
}

fn sha256_hex(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Content digest of one configured input. Directories hash their files in
/// sorted name order (name and contents both enter the digest), so renaming
/// or editing any policy file changes the fingerprint.
pub fn fingerprint_path(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| AuditError::io(path, e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| AuditError::io(path, e))?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for entry in entries {
            if let Some(name) = entry.file_name() {
                hasher.update(name.to_string_lossy().as_bytes());
                hasher.update([0u8]);
            }
            let bytes = std::fs::read(&entry).map_err(|e| AuditError::io(&entry, e))?;
            hasher.update(&bytes);
            hasher.update([0u8]);
        }
    } else {
        let bytes = std::fs::read(path).map_err(|e| AuditError::io(path, e))?;
        hasher.update(&bytes);
    }
    Ok(sha256_hex(hasher))
}

// ---------------------------------------------------------------------------
// Pipeline

fn require_path<'a>(
    path: &'a Option<PathBuf>,
    stage: Stage,
    what: &str,
) -> Result<&'a PathBuf> {
    path.as_ref().ok_or_else(|| AuditError::MissingInput {
        stage: stage.name().into(),
        what: what.into(),
    })
}

/// Runs the requested stage prefix over the configured inputs and assembles
/// the report. Products flow forward only: classify reuses ingest and
/// resolve results, syncs reuses the classify attribution, and so on.
pub fn run_pipeline(cfg: &AuditConfig, opts: &RunOptions) -> Result<AuditReport> {
    if opts.stages.is_empty() || opts.stages != STAGE_ORDER[..opts.stages.len()] {
        return Err(AuditError::Config(format!(
            "stages must be a non-empty prefix of the pipeline ({})",
            stage_names(&STAGE_ORDER)
        )));
    }
    let run = |stage: Stage| opts.stages.contains(&stage);

    let mut fingerprints = BTreeMap::new();
    for (name, path) in cfg.paths.referenced() {
        fingerprints.insert(name, fingerprint_path(path)?);
    }

    let mut report = AuditReport {
        stages: opts.stages.iter().map(|s| s.name().to_string()).collect(),
        platform_org: cfg.platform_org.clone(),
        fingerprints,
        ingest: None,
        resolution: None,
        traffic: None,
        syncs: None,
        bids: None,
        policy: None,
        interests: None,
        warnings: Vec::new(),
    };
    let mut warnings: Vec<String> = Vec::new();

    // Stage: ingest.
    let mut sessions: Vec<SkillSession> = Vec::new();
    if run(Stage::Ingest) {
        let traces = require_path(&cfg.paths.traces, Stage::Ingest, "paths.traces")?;
        let ingested = ingest_trace(traces, &cfg.ingest)?;
        sessions = segment_sessions(ingested.records)?;
        let personas: BTreeSet<PersonaId> =
            sessions.iter().map(|s| s.persona.clone()).collect();
        let skills: BTreeSet<String> =
            sessions.iter().filter_map(|s| s.skill_id.clone()).collect();
        report.ingest = Some(IngestSection {
            total_lines: ingested.report.total_lines,
            accepted: ingested.report.accepted,
            malformed: ingested.report.malformed,
            sessions: sessions.len(),
            personas: personas.into_iter().collect(),
            skills: skills.into_iter().collect(),
        });
    }

    // Stage: resolve.
    let mut resolution = Resolution::default();
    if run(Stage::Resolve) {
        resolution = resolve_domains(&sessions);
        let mut resolved_flows = 0usize;
        let mut unresolved_flows = 0usize;
        for (sess, hosts) in sessions.iter().zip(&resolution.flow_hosts) {
            for (flow, host) in sess.flows.iter().zip(hosts) {
                if flow.protocol == Protocol::Dns {
                    continue;
                }
                match host {
                    Some(_) => resolved_flows += 1,
                    None => unresolved_flows += 1,
                }
            }
        }
        warnings.extend(resolution.warnings.iter().cloned());
        report.resolution = Some(ResolutionSection {
            resolved_pairs: resolution.map.len(),
            resolved_flows,
            unresolved_flows,
            unresolved: resolution.unresolved.clone(),
        });
    }

    // Stage: classify.
    let mut intel: Option<EndpointIntel> = None;
    if run(Stage::Classify) {
        let psl_path = require_path(&cfg.paths.public_suffix, Stage::Classify, "paths.public_suffix")?;
        let ontology_path =
            require_path(&cfg.paths.org_ontology, Stage::Classify, "paths.org_ontology")?;
        let skills_path = require_path(&cfg.paths.skills, Stage::Classify, "paths.skills")?;

        let psl = PublicSuffixList::load(psl_path)?;
        let ontology = OrgOntology::load(ontology_path)?;
        let skills = SkillRegistry::load(skills_path)?;
        let mut rule_sets = Vec::new();
        for list in &cfg.paths.filter_lists {
            rule_sets.push(parse_filter_list(list)?);
        }
        let overrides = match &cfg.paths.purpose_overrides {
            Some(path) => load_purpose_overrides(path)?,
            None => Vec::new(),
        };
        let classifier = PurposeClassifier::compile(&rule_sets, &overrides);
        let built = EndpointIntel {
            psl,
            ontology,
            classifier,
            skills,
            platform_org: cfg.platform_org.clone(),
        };

        let tables =
            traffic_distribution(&sessions, &resolution, &built, cfg.distribution.weight);

        let mut suffix_flags: BTreeSet<String> = BTreeSet::new();
        for row in &tables.org_rows {
            for host in &row.hostnames {
                if let Some(flag) = built.suffix_flag(host) {
                    suffix_flags.insert(flag);
                }
            }
        }
        warnings.extend(suffix_flags);

        let party_purpose = [Party::Platform, Party::SkillVendor, Party::ThirdParty]
            .into_iter()
            .flat_map(|party| {
                [Purpose::Functional, Purpose::AdvertisingTracking].into_iter().map(
                    move |purpose| (party, purpose),
                )
            })
            .map(|(party, purpose)| PartyPurposeCell {
                party,
                purpose,
                weight: tables.cell_weight(party, purpose),
                pct: round_to(tables.cell_pct(party, purpose), 2),
            })
            .collect();
        let purpose_totals = [Purpose::Functional, Purpose::AdvertisingTracking]
            .into_iter()
            .map(|purpose| PurposeTotalRow {
                purpose,
                weight: tables
                    .matrix
                    .values()
                    .map(|row| row.get(&purpose).copied().unwrap_or(0))
                    .sum(),
                pct: round_to(tables.purpose_total_pct(purpose), 2),
            })
            .collect();
        let per_persona_hosts = tables
            .per_persona_third_party
            .iter()
            .map(|(persona, hosts)| PersonaHostsRow {
                persona: persona.clone(),
                ats_hosts: hosts.ats_hosts.len(),
                functional_hosts: hosts.functional_hosts.len(),
            })
            .collect();
        let per_skill_ats = tables
            .per_skill_ats
            .iter()
            .map(|(skill_id, hosts)| SkillAtsRow {
                skill_id: skill_id.clone(),
                hosts: hosts.iter().cloned().collect(),
            })
            .collect();
        let mut org_domains: Vec<OrgDomainReportRow> = tables
            .org_rows
            .iter()
            .map(|row| OrgDomainReportRow {
                org_name: row.org_name.clone(),
                display_domain: row.display_domain.clone(),
                registered_domain: row.registered_domain.clone(),
                purpose: row.purpose,
                skills: row.skills.iter().cloned().collect(),
                weight: row.weight,
                pct: round_to(
                    if tables.resolved_weight == 0 {
                        0.0
                    } else {
                        row.weight as f64 * 100.0 / tables.resolved_weight as f64
                    },
                    2,
                ),
            })
            .collect();
        org_domains.sort_by(|a, b| {
            b.weight
                .cmp(&a.weight)
                .then_with(|| a.org_name.cmp(&b.org_name))
                .then_with(|| a.registered_domain.cmp(&b.registered_domain))
                .then_with(|| a.purpose.cmp(&b.purpose))
        });

        report.traffic = Some(TrafficSection {
            weight_basis: tables.weight_basis,
            resolved_weight: tables.resolved_weight,
            unresolved_weight: tables.unresolved_weight,
            unresolved_flows: tables.unresolved_flows,
            dns_flows: tables.dns_flows,
            crawl_flows: tables.crawl_flows,
            party_purpose,
            purpose_totals,
            per_persona_hosts,
            per_skill_ats,
            org_domains,
        });
        intel = Some(built);
    }

    // Stage: syncs. Organizations fall back to the registered domain so two
    // distinct unmapped parties never merge into one "unknown" node.
    let mut direct_partners: BTreeSet<String> = BTreeSet::new();
    if run(Stage::Syncs) {
        let intel = intel.as_ref().expect("classify precedes syncs in every prefix");
        let org_of = |host: &str| {
            let verdict = intel.verdict(host, None);
            if verdict.org_name == crate::endpoint::UNKNOWN_ORG {
                verdict.registered_domain
            } else {
                verdict.org_name
            }
        };
        let http_flows: Vec<FlowRecord> = sessions
            .iter()
            .flat_map(|s| s.flows.iter())
            .filter(|f| f.http_event.is_some())
            .cloned()
            .collect();
        let tokens = sync::extract_identifiers(&http_flows, cfg.sync.min_id_length, org_of);
        let events = sync::detect_syncs(&tokens, &http_flows, org_of);
        let graph = PartnerGraph::from_events(&events, &cfg.platform_org);
        let sets = sync::partner_sets(&events, &cfg.platform_org, &mut warnings);
        direct_partners = sets.direct_partners.clone();
        report.syncs = Some(SyncSection {
            focus_org: cfg.platform_org.clone(),
            tokens: tokens.len(),
            events,
            edges: graph.edges,
            direct_partners: sets.direct_partners.into_iter().collect(),
            second_hop: sets.second_hop.into_iter().collect(),
        });
    }

    // Stage: bids.
    if run(Stage::Bids) {
        let bids_path = require_path(&cfg.paths.bids, Stage::Bids, "paths.bids")?;
        let ingest = bids::load_bids(bids_path)?;
        let intel = intel.as_ref().expect("classify precedes bids in every prefix");

        let device_bids: Vec<BidRecord> = ingest
            .bids
            .iter()
            .filter(|b| b.persona.kind != PersonaKind::WebControl)
            .cloned()
            .collect();
        let device_personas: BTreeSet<PersonaId> =
            device_bids.iter().map(|b| b.persona.clone()).collect();

        let controls: Vec<&PersonaId> = device_personas
            .iter()
            .filter(|p| p.kind == PersonaKind::Vanilla)
            .collect();
        let control = match controls.as_slice() {
            [one] => (*one).clone(),
            [] => {
                return Err(AuditError::MissingInput {
                    stage: Stage::Bids.name().into(),
                    what: "a control persona of kind \"vanilla\" in the bid export".into(),
                })
            }
            many => {
                return Err(AuditError::Invariant(format!(
                    "bid export has {} vanilla personas; exactly one control is expected",
                    many.len()
                )))
            }
        };
        let treatments: Vec<PersonaId> = device_personas
            .iter()
            .filter(|p| p.kind == PersonaKind::Interest)
            .cloned()
            .collect();

        let common =
            bids::common_slots(&device_bids, &device_personas, cfg.slots.key, &mut warnings);

        let per_persona = bids::aggregate(&common)
            .into_iter()
            .map(|(persona, agg)| PersonaCpmRow {
                persona: persona.name,
                kind: persona.kind,
                n: agg.n,
                median_cpm: round_to(agg.median_cpm, 3),
                mean_cpm: round_to(agg.mean_cpm, 3),
            })
            .collect();

        let control_has_bids = common.iter().any(|b| b.persona == control);
        let comparisons = if control_has_bids && !treatments.is_empty() {
            bids::persona_comparison(&common, &treatments, &control, &cfg.stats)?
                .into_iter()
                .map(|row| ComparisonReportRow {
                    treatment: row.treatment.name,
                    n_treatment: row.result.n_treatment,
                    n_control: row.result.n_control,
                    u_statistic: round_to(row.result.u_statistic, 3),
                    p_value: round_to(row.result.p_value, 3),
                    p_adjusted: round_opt(row.p_adjusted, 3),
                    effect_size_r: round_to(row.result.effect_size_r, 3),
                    size_label: row.result.size_label,
                    method: row.result.method,
                    significant: row.significant,
                })
                .collect()
        } else {
            if !control_has_bids {
                warnings.push(format!(
                    "control persona {} has no bids on common slots; persona comparison skipped",
                    control.name
                ));
            }
            Vec::new()
        };

        let known_orgs: BTreeSet<String> =
            intel.ontology.orgs.iter().map(|o| o.org_name.clone()).collect();
        let labeled = sync::label_bidders(&common, &direct_partners, &known_orgs, &mut warnings);
        let split_aggregate = |side: &Option<CpmAggregate>| match side {
            Some(a) => (a.n, Some(round_to(a.median_cpm, 3)), Some(round_to(a.mean_cpm, 3))),
            None => (0, None, None),
        };
        let partner_split = bids::partner_split(&labeled)
            .into_iter()
            .map(|(persona, row)| {
                let (partner_n, partner_median_cpm, partner_mean_cpm) =
                    split_aggregate(&row.partner);
                let (non_partner_n, non_partner_median_cpm, non_partner_mean_cpm) =
                    split_aggregate(&row.non_partner);
                PartnerSplitReportRow {
                    persona: persona.name,
                    partner_n,
                    partner_median_cpm,
                    partner_mean_cpm,
                    non_partner_n,
                    non_partner_median_cpm,
                    non_partner_mean_cpm,
                    median_ratio: round_opt(row.median_ratio, 3),
                }
            })
            .collect();

        // Device persona vs its web twin, matched by persona name: slots are
        // intersected per pair, and the null is judged two-sided.
        let mut kinds_by_name: BTreeMap<&str, BTreeSet<PersonaKind>> = BTreeMap::new();
        for bid in &ingest.bids {
            kinds_by_name.entry(&bid.persona.name).or_default().insert(bid.persona.kind);
        }
        let mut echo_vs_web = Vec::new();
        for (name, kinds) in kinds_by_name {
            if !(kinds.contains(&PersonaKind::Interest) && kinds.contains(&PersonaKind::WebControl))
            {
                continue;
            }
            let device = PersonaId { name: name.to_string(), kind: PersonaKind::Interest };
            let web = PersonaId { name: name.to_string(), kind: PersonaKind::WebControl };
            let pair_bids: Vec<BidRecord> = ingest
                .bids
                .iter()
                .filter(|b| b.persona == device || b.persona == web)
                .cloned()
                .collect();
            let pair_set: BTreeSet<PersonaId> = [device.clone(), web.clone()].into();
            let pair_common =
                bids::common_slots(&pair_bids, &pair_set, cfg.slots.key, &mut warnings);
            if pair_common.is_empty() {
                continue;
            }
            let cells = bids::cross_group_comparison(
                &pair_common,
                std::slice::from_ref(&device),
                std::slice::from_ref(&web),
                &cfg.stats,
            )?;
            let cell = cells.into_iter().next().expect("one cell per pair");
            echo_vs_web.push(EchoWebRow {
                persona: name.to_string(),
                n_device: cell.result.n_treatment,
                n_web: cell.result.n_control,
                u_statistic: round_to(cell.result.u_statistic, 3),
                p_two_sided: round_to(cell.p_two_sided, 3),
                effect_size_r: round_to(cell.result.effect_size_r, 3),
                size_label: cell.result.size_label,
                method: cell.result.method,
                significant_two_sided: cell.significant_two_sided,
            });
        }

        report.bids = Some(BidsSection {
            total_bids: ingest.report.accepted,
            malformed: ingest.report.malformed,
            slot_key: cfg.slots.key,
            control: control.name,
            common_slot_bids: common.len(),
            per_persona,
            comparisons,
            partner_split,
            echo_vs_web,
        });
    }

    // Stage: policy.
    if run(Stage::Policy) {
        let policies_path = require_path(&cfg.paths.policies, Stage::Policy, "paths.policies")?;
        let data_path =
            require_path(&cfg.paths.data_ontology, Stage::Policy, "paths.data_ontology")?;
        let verbs_path =
            require_path(&cfg.paths.verb_lexicon, Stage::Policy, "paths.verb_lexicon")?;
        let entity_path = require_path(
            &cfg.paths.entity_vague_terms,
            Stage::Policy,
            "paths.entity_vague_terms",
        )?;
        let intel = intel.as_ref().expect("classify precedes policy in every prefix");

        let store = PolicyStore::load(policies_path)?;
        let data_ontology = DataOntology::load(data_path)?;
        let verbs = crate::policy::VerbLexicon::load(verbs_path)?;
        let entity_terms = EntityVagueTerms::load(entity_path)?;
        let signatures = match &cfg.paths.payload_signatures {
            Some(path) => PayloadSignatures::load(path, &data_ontology)?,
            None => PayloadSignatures::default(),
        };
        let analyzer = PolicyAnalyzer {
            data_ontology: &data_ontology,
            org_ontology: &intel.ontology,
            verbs: &verbs,
            entity_terms: &entity_terms,
        };

        let tuples = extract_flows(&sessions, &resolution, intel, &signatures, opts.unencrypted);
        let skill_ids: BTreeSet<&str> = tuples.iter().map(|t| t.skill_id.as_str()).collect();

        let mut totals = DisclosureSummary::default();
        let mut totals_skill_only = DisclosureSummary::default();
        let mut audits = Vec::new();
        let mut audits_skill_only = Vec::new();
        for skill_id in &skill_ids {
            for (include_platform, out, total) in [
                (true, &mut audits, &mut totals),
                (false, &mut audits_skill_only, &mut totals_skill_only),
            ] {
                let audit = audit_skill(&analyzer, skill_id, &tuples, &store, include_platform);
                for v in &audit.verdicts {
                    total.add(v.verdict);
                }
                out.push(SkillAuditReport {
                    skill_id: audit.skill_id,
                    include_platform_policy: audit.include_platform_policy,
                    summary: audit.summary,
                    verdicts: audit
                        .verdicts
                        .into_iter()
                        .map(|v| VerdictRow {
                            data_type: v.tuple.data_type,
                            entity: v.tuple.entity,
                            verdict: v.verdict,
                            matched_term: v.matched_term,
                            evidence_sentence: v.evidence_sentence,
                        })
                        .collect(),
                });
            }
        }

        // Validation grades the hand-labeled tuples themselves (skill policy
        // only, matching how the labels were assigned), so the two tuple
        // sets align by construction.
        let validation = match &cfg.paths.gold_labels {
            Some(path) => {
                let gold = load_gold_labels(path)?;
                let predicted: Vec<LabeledTuple> = gold
                    .iter()
                    .map(|l| {
                        let policy = store.effective_policy(&l.tuple.skill_id, false);
                        LabeledTuple {
                            tuple: l.tuple.clone(),
                            verdict: analyzer.classify_disclosure(&l.tuple, policy.as_ref()).verdict,
                        }
                    })
                    .collect();
                let metrics = validation_metrics(&predicted, &gold)?;
                Some(ValidationReport {
                    n: metrics.n,
                    micro_precision: round_to(metrics.micro_precision, 4),
                    micro_recall: round_to(metrics.micro_recall, 4),
                    micro_f1: round_to(metrics.micro_f1, 4),
                    macro_precision: round_to(metrics.macro_precision, 4),
                    macro_recall: round_to(metrics.macro_recall, 4),
                    macro_f1: round_to(metrics.macro_f1, 4),
                    class_order: VERDICT_CLASSES.map(|v| v.as_str()),
                    confusion: metrics.confusion,
                })
            }
            None => None,
        };

        report.policy = Some(PolicySection {
            tuples: tuples.len(),
            audits,
            audits_skill_only,
            totals,
            totals_skill_only,
            validation,
        });
    }

    // Stage: interests.
    if run(Stage::Interests) {
        let snapshots_path = require_path(
            &cfg.paths.interest_snapshots,
            Stage::Interests,
            "paths.interest_snapshots",
        )?;
        let snapshots = load_interest_snapshots(snapshots_path)?;
        report.interests = Some(InterestsSection { timelines: diff_interests(&snapshots) });
    }

    report.warnings = warnings;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Canonical JSON

/// Serializes the report with sorted keys and a trailing newline. Combined
/// with construction-time rounding this is byte-stable across runs.
pub fn canonical_json(report: &AuditReport) -> Result<String> {
    let value = serde_json::to_value(report)
        .map_err(|e| AuditError::Internal(format!("report serialization: {e}")))?;
    let mut out = serde_json::to_string_pretty(&value)
        .map_err(|e| AuditError::Internal(format!("report serialization: {e}")))?;
    out.push('\n');
    Ok(out)
}

// ---------------------------------------------------------------------------
// Emission

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Json,
    CsvBundle,
    Text,
}

impl FromStr for EmitFormat {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<EmitFormat> {
        match s {
            "json" => Ok(EmitFormat::Json),
            "csv_bundle" => Ok(EmitFormat::CsvBundle),
            "text" => Ok(EmitFormat::Text),
            other => Err(AuditError::Config(format!(
                "unknown format {other:?}; expected json, csv_bundle, or text"
            ))),
        }
    }
}

/// Writes the report into `out_dir` and returns the created files: one
/// canonical JSON file, one CSV per non-empty table, or one aligned-text
/// file, depending on the format.
pub fn emit(report: &AuditReport, format: EmitFormat, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| AuditError::io(out_dir, e))?;
    match format {
        EmitFormat::Json => {
            let path = out_dir.join("audit_report.json");
            std::fs::write(&path, canonical_json(report)?)
                .map_err(|e| AuditError::io(&path, e))?;
            Ok(vec![path])
        }
        EmitFormat::CsvBundle => emit_csv_bundle(report, out_dir),
        EmitFormat::Text => {
            let path = out_dir.join("audit_report.txt");
            std::fs::write(&path, render_text(report)).map_err(|e| AuditError::io(&path, e))?;
            Ok(vec![path])
        }
    }
}

/// Enum-to-string through serde, so CSV and text reuse the JSON spellings.
fn enum_str<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn f2(v: f64) -> String {
    format!("{v:.2}")
}

fn f3(v: f64) -> String {
    format!("{v:.3}")
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn opt3(v: Option<f64>) -> String {
    v.map(f3).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => AuditError::io(path, io),
        other => AuditError::Internal(format!("{}: {other:?}", path.display())),
    })?;
    let fail = |e: csv::Error| AuditError::Internal(format!("{}: {e}", path.display()));
    writer.write_record(header).map_err(fail)?;
    for row in rows {
        writer.write_record(row).map_err(fail)?;
    }
    writer.flush().map_err(|e| AuditError::io(path, e))?;
    Ok(())
}

fn emit_csv_bundle(report: &AuditReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    // (file name, header, rows); empty tables produce no file, so the bundle
    // has exactly one file per table that actually has content.
    let mut tables: Vec<(&str, Vec<&str>, Vec<Vec<String>>)> = Vec::new();

    if let Some(traffic) = &report.traffic {
        tables.push((
            "traffic_party_purpose.csv",
            vec!["party", "purpose", "weight", "pct"],
            traffic
                .party_purpose
                .iter()
                .map(|c| {
                    vec![
                        enum_str(&c.party),
                        enum_str(&c.purpose),
                        c.weight.to_string(),
                        f2(c.pct),
                    ]
                })
                .collect(),
        ));
        tables.push((
            "traffic_purpose_totals.csv",
            vec!["purpose", "weight", "pct"],
            traffic
                .purpose_totals
                .iter()
                .map(|r| vec![enum_str(&r.purpose), r.weight.to_string(), f2(r.pct)])
                .collect(),
        ));
        tables.push((
            "persona_third_party_hosts.csv",
            vec!["persona", "ats_hosts", "functional_hosts"],
            traffic
                .per_persona_hosts
                .iter()
                .map(|r| {
                    vec![
                        r.persona.clone(),
                        r.ats_hosts.to_string(),
                        r.functional_hosts.to_string(),
                    ]
                })
                .collect(),
        ));
        tables.push((
            "skill_ats_hosts.csv",
            vec!["skill_id", "hostname"],
            traffic
                .per_skill_ats
                .iter()
                .flat_map(|r| {
                    r.hosts.iter().map(move |h| vec![r.skill_id.clone(), h.clone()])
                })
                .collect(),
        ));
        tables.push((
            "org_domains.csv",
            vec![
                "org_name",
                "display_domain",
                "registered_domain",
                "purpose",
                "skills",
                "weight",
                "pct",
            ],
            traffic
                .org_domains
                .iter()
                .map(|r| {
                    vec![
                        r.org_name.clone(),
                        r.display_domain.clone(),
                        r.registered_domain.clone(),
                        enum_str(&r.purpose),
                        r.skills.join(" "),
                        r.weight.to_string(),
                        f2(r.pct),
                    ]
                })
                .collect(),
        ));
    }

    if let Some(syncs) = &report.syncs {
        tables.push((
            "sync_events.csv",
            vec![
                "value",
                "source",
                "origin_org",
                "sender_org",
                "receiver_org",
                "first_seen_ms",
                "timestamp_ms",
                "evidence_url",
            ],
            syncs
                .events
                .iter()
                .map(|e| {
                    vec![
                        e.token.value.clone(),
                        enum_str(&e.token.source),
                        e.token.origin_org.clone(),
                        e.sender_org.clone(),
                        e.receiver_org.clone(),
                        e.token.first_seen_ms.to_string(),
                        e.timestamp_ms.to_string(),
                        e.evidence_url.clone(),
                    ]
                })
                .collect(),
        ));
        tables.push((
            "sync_edges.csv",
            vec!["sender_org", "receiver_org", "events"],
            syncs
                .edges
                .iter()
                .map(|e| vec![e.sender_org.clone(), e.receiver_org.clone(), e.count.to_string()])
                .collect(),
        ));
        let mut partner_rows: Vec<Vec<String>> = Vec::new();
        for org in &syncs.direct_partners {
            partner_rows.push(vec!["direct".into(), org.clone()]);
        }
        for org in &syncs.second_hop {
            partner_rows.push(vec!["second_hop".into(), org.clone()]);
        }
        tables.push(("sync_partners.csv", vec!["relation", "org"], partner_rows));
    }

    if let Some(bids) = &report.bids {
        tables.push((
            "bids_median_mean.csv",
            vec!["persona", "kind", "n", "median_cpm", "mean_cpm"],
            bids.per_persona
                .iter()
                .map(|r| {
                    vec![
                        r.persona.clone(),
                        enum_str(&r.kind),
                        r.n.to_string(),
                        f3(r.median_cpm),
                        f3(r.mean_cpm),
                    ]
                })
                .collect(),
        ));
        tables.push((
            "bids_comparisons.csv",
            vec![
                "treatment",
                "n_treatment",
                "n_control",
                "u_statistic",
                "p_value",
                "p_adjusted",
                "effect_size_r",
                "size_label",
                "method",
                "significant",
            ],
            bids.comparisons
                .iter()
                .map(|r| {
                    vec![
                        r.treatment.clone(),
                        r.n_treatment.to_string(),
                        r.n_control.to_string(),
                        f3(r.u_statistic),
                        f3(r.p_value),
                        opt3(r.p_adjusted),
                        f3(r.effect_size_r),
                        enum_str(&r.size_label),
                        enum_str(&r.method),
                        r.significant.to_string(),
                    ]
                })
                .collect(),
        ));
        tables.push((
            "bids_partner_split.csv",
            vec![
                "persona",
                "partner_n",
                "partner_median_cpm",
                "partner_mean_cpm",
                "non_partner_n",
                "non_partner_median_cpm",
                "non_partner_mean_cpm",
                "median_ratio",
            ],
            bids.partner_split
                .iter()
                .map(|r| {
                    vec![
                        r.persona.clone(),
                        r.partner_n.to_string(),
                        opt3(r.partner_median_cpm),
                        opt3(r.partner_mean_cpm),
                        r.non_partner_n.to_string(),
                        opt3(r.non_partner_median_cpm),
                        opt3(r.non_partner_mean_cpm),
                        opt3(r.median_ratio),
                    ]
                })
                .collect(),
        ));
        tables.push((
            "bids_device_vs_web.csv",
            vec![
                "persona",
                "n_device",
                "n_web",
                "u_statistic",
                "p_two_sided",
                "effect_size_r",
                "size_label",
                "method",
                "significant_two_sided",
            ],
            bids.echo_vs_web
                .iter()
                .map(|r| {
                    vec![
                        r.persona.clone(),
                        r.n_device.to_string(),
                        r.n_web.to_string(),
                        f3(r.u_statistic),
                        f3(r.p_two_sided),
                        f3(r.effect_size_r),
                        enum_str(&r.size_label),
                        enum_str(&r.method),
                        r.significant_two_sided.to_string(),
                    ]
                })
                .collect(),
        ));
    }

    if let Some(policy) = &report.policy {
        let mut audit_rows = Vec::new();
        let mut summary_rows = Vec::new();
        for (scope, audits, totals) in [
            ("with_platform", &policy.audits, &policy.totals),
            ("skill_only", &policy.audits_skill_only, &policy.totals_skill_only),
        ] {
            for audit in audits {
                for v in &audit.verdicts {
                    audit_rows.push(vec![
                        scope.to_string(),
                        audit.skill_id.clone(),
                        v.data_type.clone().unwrap_or_default(),
                        v.entity.clone(),
                        enum_str(&v.verdict),
                        v.matched_term.clone().unwrap_or_default(),
                    ]);
                }
                summary_rows.push(vec![
                    scope.to_string(),
                    audit.skill_id.clone(),
                    audit.summary.clear.to_string(),
                    audit.summary.vague.to_string(),
                    audit.summary.omitted.to_string(),
                    audit.summary.no_policy.to_string(),
                ]);
            }
            summary_rows.push(vec![
                scope.to_string(),
                "(total)".to_string(),
                totals.clear.to_string(),
                totals.vague.to_string(),
                totals.omitted.to_string(),
                totals.no_policy.to_string(),
            ]);
        }
        tables.push((
            "policy_audits.csv",
            vec!["scope", "skill_id", "data_type", "entity", "verdict", "matched_term"],
            audit_rows,
        ));
        tables.push((
            "policy_summary.csv",
            vec!["scope", "skill_id", "clear", "vague", "omitted", "no_policy"],
            summary_rows,
        ));
        if let Some(v) = &policy.validation {
            tables.push((
                "policy_validation.csv",
                vec!["metric", "value"],
                vec![
                    vec!["n".into(), v.n.to_string()],
                    vec!["micro_precision".into(), f4(v.micro_precision)],
                    vec!["micro_recall".into(), f4(v.micro_recall)],
                    vec!["micro_f1".into(), f4(v.micro_f1)],
                    vec!["macro_precision".into(), f4(v.macro_precision)],
                    vec!["macro_recall".into(), f4(v.macro_recall)],
                    vec!["macro_f1".into(), f4(v.macro_f1)],
                ],
            ));
            tables.push((
                "validation_confusion.csv",
                vec!["hand_label", "clear", "vague", "omitted", "no_policy"],
                v.class_order
                    .iter()
                    .zip(&v.confusion)
                    .map(|(class, row)| {
                        let mut out = vec![class.to_string()];
                        out.extend(row.iter().map(|c| c.to_string()));
                        out
                    })
                    .collect(),
            ));
        }
    }

    if let Some(interests) = &report.interests {
        tables.push((
            "interest_timelines.csv",
            vec![
                "persona",
                "kind",
                "request_label",
                "missing",
                "compared_to",
                "interests",
                "added",
                "removed",
            ],
            interests
                .timelines
                .iter()
                .flat_map(|t| {
                    t.steps.iter().map(move |s| {
                        vec![
                            t.persona.name.clone(),
                            enum_str(&t.persona.kind),
                            s.request_label.as_str().to_string(),
                            s.missing.to_string(),
                            s.compared_to.map(|c| c.as_str().to_string()).unwrap_or_default(),
                            join_set(&s.interests),
                            join_set(&s.added),
                            join_set(&s.removed),
                        ]
                    })
                })
                .collect(),
        ));
    }

    let mut written = Vec::new();
    for (name, header, rows) in tables {
        if rows.is_empty() {
            continue;
        }
        let path = out_dir.join(name);
        write_csv(&path, &header, &rows)?;
        written.push(path);
    }
    Ok(written)
}

fn join_set(set: &BTreeSet<String>) -> String {
    set.iter().cloned().collect::<Vec<_>>().join("; ")
}

// ---------------------------------------------------------------------------
// Text rendering

/// Left-pads every column to its widest cell and joins cells with two
/// spaces. Rows that should keep exact inner spacing can pre-join cells.
fn render_table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let columns = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(columns) {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut render_row = |cells: Vec<String>| {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            if i + 1 == columns {
                line.push_str(cell);
            } else {
                let _ = write!(line, "{cell:<width$}", width = widths[i]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    };
    render_row(header.iter().map(|h| h.to_string()).collect());
    for row in rows {
        render_row(row.clone());
    }
}

/// Renders the aligned-text report, the same content `emit` writes for
/// [`EmitFormat::Text`].
pub fn render_text(report: &AuditReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "privacy audit report");
    let _ = writeln!(out, "platform org: {}", report.platform_org);
    let _ = writeln!(out, "stages: {}", report.stages.join(", "));
    out.push('\n');

    if let Some(ingest) = &report.ingest {
        let _ = writeln!(out, "== ingest ==");
        let _ = writeln!(
            out,
            "lines {}  accepted {}  malformed {}  sessions {}  personas {}  skills {}",
            ingest.total_lines,
            ingest.accepted,
            ingest.malformed.len(),
            ingest.sessions,
            ingest.personas.len(),
            ingest.skills.len()
        );
        out.push('\n');
    }

    if let Some(res) = &report.resolution {
        let _ = writeln!(out, "== resolution ==");
        let _ = writeln!(
            out,
            "resolved pairs {}  resolved flows {}  unresolved flows {}",
            res.resolved_pairs, res.resolved_flows, res.unresolved_flows
        );
        out.push('\n');
    }

    if let Some(traffic) = &report.traffic {
        let _ = writeln!(
            out,
            "== traffic by party and purpose (% of resolved weight, basis {}) ==",
            enum_str(&traffic.weight_basis)
        );
        let rows: Vec<Vec<String>> = traffic
            .party_purpose
            .iter()
            .map(|c| {
                vec![enum_str(&c.party), enum_str(&c.purpose), c.weight.to_string(), f2(c.pct)]
            })
            .chain(traffic.purpose_totals.iter().map(|t| {
                vec!["(total)".to_string(), enum_str(&t.purpose), t.weight.to_string(), f2(t.pct)]
            }))
            .collect();
        render_table(&mut out, &["party", "purpose", "weight", "pct"], &rows);
        out.push('\n');

        if !traffic.per_persona_hosts.is_empty() {
            let _ = writeln!(out, "== distinct third-party hosts per persona ==");
            let rows: Vec<Vec<String>> = traffic
                .per_persona_hosts
                .iter()
                .map(|r| {
                    vec![
                        r.persona.clone(),
                        r.ats_hosts.to_string(),
                        r.functional_hosts.to_string(),
                    ]
                })
                .collect();
            render_table(&mut out, &["persona", "ats", "functional"], &rows);
            out.push('\n');
        }

        if !traffic.per_skill_ats.is_empty() {
            let _ = writeln!(out, "== advertising/tracking hosts per skill ==");
            let rows: Vec<Vec<String>> = traffic
                .per_skill_ats
                .iter()
                .map(|r| vec![r.skill_id.clone(), r.hosts.join(" ")])
                .collect();
            render_table(&mut out, &["skill", "hosts"], &rows);
            out.push('\n');
        }

        if !traffic.org_domains.is_empty() {
            let _ = writeln!(out, "== organizations and registered domains ==");
            let rows: Vec<Vec<String>> = traffic
                .org_domains
                .iter()
                .map(|r| {
                    vec![
                        r.org_name.clone(),
                        r.display_domain.clone(),
                        enum_str(&r.purpose),
                        r.weight.to_string(),
                        f2(r.pct),
                        r.skills.join(" "),
                    ]
                })
                .collect();
            render_table(
                &mut out,
                &["organization", "domain", "purpose", "weight", "pct", "skills"],
                &rows,
            );
            out.push('\n');
        }
    }

    if let Some(syncs) = &report.syncs {
        let _ = writeln!(out, "== identifier sharing (focus {}) ==", syncs.focus_org);
        let _ = writeln!(out, "tokens {}  events {}", syncs.tokens, syncs.events.len());
        let _ = writeln!(out, "direct partners: {}", syncs.direct_partners.join(", "));
        let _ = writeln!(out, "second hop: {}", syncs.second_hop.join(", "));
        if !syncs.edges.is_empty() {
            let rows: Vec<Vec<String>> = syncs
                .edges
                .iter()
                .map(|e| vec![e.sender_org.clone(), e.receiver_org.clone(), e.count.to_string()])
                .collect();
            render_table(&mut out, &["sender", "receiver", "events"], &rows);
        }
        out.push('\n');
    }

    if let Some(bids) = &report.bids {
        let _ = writeln!(
            out,
            "== cpm by persona (slots common to every device persona, key {}) ==",
            enum_str(&bids.slot_key)
        );
        // Median and mean are kept one space apart so a row reads as the
        // published pair, e.g. "0.030 0.153".
        let rows: Vec<Vec<String>> = bids
            .per_persona
            .iter()
            .map(|r| {
                vec![
                    r.persona.clone(),
                    enum_str(&r.kind),
                    r.n.to_string(),
                    format!("{} {}", f3(r.median_cpm), f3(r.mean_cpm)),
                ]
            })
            .collect();
        render_table(&mut out, &["persona", "kind", "n", "median mean"], &rows);
        out.push('\n');

        if !bids.comparisons.is_empty() {
            let _ = writeln!(
                out,
                "== treatment vs control {} (one-sided: treatment > control) ==",
                bids.control
            );
            let rows: Vec<Vec<String>> = bids
                .comparisons
                .iter()
                .map(|r| {
                    vec![
                        r.treatment.clone(),
                        r.n_treatment.to_string(),
                        r.n_control.to_string(),
                        f3(r.u_statistic),
                        f3(r.p_value),
                        opt3(r.p_adjusted),
                        f3(r.effect_size_r),
                        enum_str(&r.size_label),
                        enum_str(&r.method),
                        r.significant.to_string(),
                    ]
                })
                .collect();
            render_table(
                &mut out,
                &["treatment", "n_t", "n_c", "U", "p", "p_adj", "r", "size", "method", "significant"],
                &rows,
            );
            out.push('\n');
        }

        if !bids.partner_split.is_empty() {
            let _ = writeln!(out, "== partner vs non-partner bidders ==");
            let rows: Vec<Vec<String>> = bids
                .partner_split
                .iter()
                .map(|r| {
                    vec![
                        r.persona.clone(),
                        r.partner_n.to_string(),
                        opt3(r.partner_median_cpm),
                        opt3(r.partner_mean_cpm),
                        r.non_partner_n.to_string(),
                        opt3(r.non_partner_median_cpm),
                        opt3(r.non_partner_mean_cpm),
                        opt3(r.median_ratio),
                    ]
                })
                .collect();
            render_table(
                &mut out,
                &["persona", "p_n", "p_median", "p_mean", "np_n", "np_median", "np_mean", "ratio"],
                &rows,
            );
            out.push('\n');
        }

        if !bids.echo_vs_web.is_empty() {
            let _ = writeln!(out, "== device persona vs web twin (two-sided test) ==");
            let rows: Vec<Vec<String>> = bids
                .echo_vs_web
                .iter()
                .map(|r| {
                    vec![
                        r.persona.clone(),
                        r.n_device.to_string(),
                        r.n_web.to_string(),
                        f3(r.u_statistic),
                        f3(r.p_two_sided),
                        f3(r.effect_size_r),
                        enum_str(&r.size_label),
                        r.significant_two_sided.to_string(),
                    ]
                })
                .collect();
            render_table(
                &mut out,
                &["persona", "n_dev", "n_web", "U", "p_two", "r", "size", "significant"],
                &rows,
            );
            out.push('\n');
        }
    }

    if let Some(policy) = &report.policy {
        let _ = writeln!(out, "== disclosure summary ({} observed flows) ==", policy.tuples);
        let mut rows: Vec<Vec<String>> = Vec::new();
        for (scope, audits, totals) in [
            ("with_platform", &policy.audits, &policy.totals),
            ("skill_only", &policy.audits_skill_only, &policy.totals_skill_only),
        ] {
            for a in audits {
                rows.push(vec![
                    scope.to_string(),
                    a.skill_id.clone(),
                    a.summary.clear.to_string(),
                    a.summary.vague.to_string(),
                    a.summary.omitted.to_string(),
                    a.summary.no_policy.to_string(),
                ]);
            }
            rows.push(vec![
                scope.to_string(),
                "(total)".to_string(),
                totals.clear.to_string(),
                totals.vague.to_string(),
                totals.omitted.to_string(),
                totals.no_policy.to_string(),
            ]);
        }
        render_table(
            &mut out,
            &["scope", "skill", "clear", "vague", "omitted", "no_policy"],
            &rows,
        );
        out.push('\n');

        if let Some(v) = &policy.validation {
            let _ = writeln!(out, "== validation against hand labels (n {}) ==", v.n);
            let _ = writeln!(
                out,
                "micro precision {}  recall {}  f1 {}",
                f4(v.micro_precision),
                f4(v.micro_recall),
                f4(v.micro_f1)
            );
            let _ = writeln!(
                out,
                "macro precision {}  recall {}  f1 {}",
                f4(v.macro_precision),
                f4(v.macro_recall),
                f4(v.macro_f1)
            );
            let rows: Vec<Vec<String>> = v
                .class_order
                .iter()
                .zip(&v.confusion)
                .map(|(class, row)| {
                    let mut cells = vec![class.to_string()];
                    cells.extend(row.iter().map(|c| c.to_string()));
                    cells
                })
                .collect();
            render_table(
                &mut out,
                &["hand\\predicted", "clear", "vague", "omitted", "no_policy"],
                &rows,
            );
            out.push('\n');
        }
    }

    if let Some(interests) = &report.interests {
        let _ = writeln!(out, "== interest profile timelines ==");
        for timeline in &interests.timelines {
            let _ = writeln!(
                out,
                "{} ({})",
                timeline.persona.name,
                enum_str(&timeline.persona.kind)
            );
            for step in &timeline.steps {
                if step.missing {
                    let _ = writeln!(out, "  {}: profile absent", step.request_label.as_str());
                    continue;
                }
                let mut line = format!(
                    "  {}: [{}]",
                    step.request_label.as_str(),
                    join_set(&step.interests)
                );
                if !step.added.is_empty() {
                    let _ = write!(line, " added [{}]", join_set(&step.added));
                }
                if !step.removed.is_empty() {
                    let _ = write!(line, " removed [{}]", join_set(&step.removed));
                }
                out.push_str(&line);
                out.push('\n');
            }
        }
        out.push('\n');
    }

    if !report.warnings.is_empty() {
        let _ = writeln!(out, "== warnings ==");
        for w in &report.warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    out
}
