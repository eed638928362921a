//! Endpoint attribution: registered domains, organizations, parties,
//! purposes, and the traffic distribution tables built from them.
//!
//! ## Attribution chain
//!
//! hostname -> registered domain (public-suffix snapshot)
//!          -> organization (ontology lookup, "unknown" when unmapped)
//!          -> party (platform operator / skill vendor / third party)
//!          -> purpose (filter lists with config overrides)
//!
//! Purpose matching is label-aligned: a `domain_and_subdomains` rule matches
//! a hostname only when the hostname equals the pattern or ends with
//! `"." + pattern`, so `ads.example.com` never matches pattern `s.example.com`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Weight;
use crate::error::{AuditError, Result};
use crate::trace::{normalize_host, Phase, Protocol, Resolution, SkillSession};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrgCategory {
    AnalyticProvider,
    AdvertisingNetwork,
    ContentProvider,
    PlatformProvider,
    VoiceAssistantService,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Org {
    pub org_name: String,
    /// Registered domains operated by this organization, lowercase.
    pub domains: Vec<String>,
    #[serde(default)]
    pub categories: Vec<OrgCategory>,
}

/// Organization ontology: maps registered domains to named organizations.
#[derive(Debug, Clone)]
pub struct OrgOntology {
    pub orgs: Vec<Org>,
    by_domain: HashMap<String, usize>,
    by_name: HashMap<String, usize>,
}

impl OrgOntology {
    pub fn load(path: &Path) -> Result<OrgOntology> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        let orgs: Vec<Org> = serde_json::from_str(&text).map_err(|e| AuditError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        Self::from_orgs(orgs)
    }

    pub fn from_orgs(orgs: Vec<Org>) -> Result<OrgOntology> {
        let mut by_domain = HashMap::new();
        let mut by_name = HashMap::new();
        for (i, org) in orgs.iter().enumerate() {
            if by_name.insert(org.org_name.clone(), i).is_some() {
                return Err(AuditError::Invariant(format!(
                    "organization {} appears twice in the ontology",
                    org.org_name
                )));
            }
            for d in &org.domains {
                let d = normalize_host(d);
                if let Some(prev) = by_domain.insert(d.clone(), i) {
                    return Err(AuditError::Invariant(format!(
                        "domain {d} is claimed by both {} and {}",
                        orgs[prev].org_name, org.org_name
                    )));
                }
            }
        }
        Ok(OrgOntology { orgs, by_domain, by_name })
    }

    pub fn org_for_domain(&self, registered_domain: &str) -> Option<&Org> {
        self.by_domain.get(registered_domain).map(|&i| &self.orgs[i])
    }

    pub fn org_by_name(&self, name: &str) -> Option<&Org> {
        self.by_name.get(name).map(|&i| &self.orgs[i])
    }
}

/// How a hostname's registered domain was derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SuffixMatch {
    /// A snapshot rule matched.
    Listed,
    /// No rule matched; fell back to the last two labels.
    UnknownSuffix,
    /// Single-label hostname, returned unchanged.
    SingleLabel,
    /// The hostname itself is a public suffix; returned unchanged.
    IsPublicSuffix,
    /// IP literal, returned unchanged.
    IpLiteral,
}

#[derive(Debug, Clone)]
pub struct RegisteredDomain {
    pub domain: String,
    pub matched: SuffixMatch,
}

impl RegisteredDomain {
    /// Matches that deserve a warning in reports.
    pub fn flag(&self, hostname: &str) -> Option<String> {
        match self.matched {
            SuffixMatch::Listed | SuffixMatch::IpLiteral => None,
            SuffixMatch::UnknownSuffix => Some(format!(
                "public suffix of {hostname} not in snapshot; using last two labels"
            )),
            SuffixMatch::SingleLabel => {
                Some(format!("single-label hostname {hostname} kept as-is"))
            }
            SuffixMatch::IsPublicSuffix => {
                Some(format!("{hostname} is itself a public suffix; kept as-is"))
            }
        }
    }
}

/// Public-suffix snapshot in the conventional list format: one rule per
/// line, `//` comments, `*.` wildcard rules, `!` exception rules.
#[derive(Debug, Clone, Default)]
pub struct PublicSuffixList {
    exact: HashSet<String>,
    /// Rule `*.foo` stored as `foo`.
    wildcard: HashSet<String>,
    /// Rule `!bar.foo` stored as `bar.foo`.
    exception: HashSet<String>,
}

impl PublicSuffixList {
    pub fn load(path: &Path) -> Result<PublicSuffixList> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn parse(text: &str) -> PublicSuffixList {
        let mut psl = PublicSuffixList::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let rule = line.split_whitespace().next().unwrap().to_ascii_lowercase();
            if let Some(rest) = rule.strip_prefix('!') {
                psl.exception.insert(rest.to_string());
            } else if let Some(rest) = rule.strip_prefix("*.") {
                psl.wildcard.insert(rest.to_string());
            } else {
                psl.exact.insert(rule);
            }
        }
        psl
    }

    /// eTLD+1 of `hostname`. Unknown suffixes fall back to the last two
    /// labels; single-label names, public suffixes themselves, and IP
    /// literals come back unchanged, each with a distinguishing flag.
    pub fn registered_domain(&self, hostname: &str) -> RegisteredDomain {
        let host = normalize_host(hostname);
        if host.parse::<IpAddr>().is_ok() {
            return RegisteredDomain { domain: host, matched: SuffixMatch::IpLiteral };
        }
        let labels: Vec<&str> = host.split('.').collect();
        let n = labels.len();
        if n == 1 {
            return RegisteredDomain { domain: host, matched: SuffixMatch::SingleLabel };
        }

        // Longest matching rule wins; an exception rule beats a wildcard by
        // shortening the suffix it would otherwise create.
        let mut suffix_len: Option<usize> = None;
        for i in 1..=n {
            let chain = labels[n - i..].join(".");
            if self.exception.contains(&chain) {
                suffix_len = Some(i - 1);
                break;
            }
            let exact_hit = self.exact.contains(&chain);
            let wildcard_hit = i >= 2 && self.wildcard.contains(&labels[n - i + 1..].join("."));
            if exact_hit || wildcard_hit {
                suffix_len = Some(suffix_len.map_or(i, |s: usize| s.max(i)));
            }
        }

        match suffix_len {
            None => RegisteredDomain {
                domain: labels[n - 2..].join("."),
                matched: SuffixMatch::UnknownSuffix,
            },
            Some(s) if s >= n => RegisteredDomain { domain: host, matched: SuffixMatch::IsPublicSuffix },
            Some(s) => RegisteredDomain {
                domain: labels[n - s - 1..].join("."),
                matched: SuffixMatch::Listed,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleScope {
    ExactHost,
    DomainAndSubdomains,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Block,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterRule {
    /// Lowercase hostname or registered domain; never a URL.
    pub pattern: String,
    pub scope: RuleScope,
    pub action: RuleAction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterRuleSet {
    pub source: String,
    pub rules: Vec<FilterRule>,
}

/// Parses a filter list. `0.0.0.0 host` style lines become exact-host rules,
/// bare domain lines cover the domain and its subdomains, `#` starts a
/// comment line. Any line with extra whitespace-separated fields is rejected
/// with its line number.
pub fn parse_filter_list(path: &Path) -> Result<FilterRuleSet> {
    let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    let source = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());

    let mut rules = Vec::new();
    let mut rejected = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [domain] if is_plain_hostname(domain) => rules.push(FilterRule {
                pattern: domain.to_ascii_lowercase(),
                scope: RuleScope::DomainAndSubdomains,
                action: RuleAction::Block,
            }),
            [addr, host] if addr.parse::<IpAddr>().is_ok() && is_plain_hostname(host) => {
                rules.push(FilterRule {
                    pattern: host.to_ascii_lowercase(),
                    scope: RuleScope::ExactHost,
                    action: RuleAction::Block,
                })
            }
            _ => rejected.push(line_no),
        }
    }
    if !rejected.is_empty() {
        return Err(AuditError::RejectedLines {
            path: path.to_path_buf(),
            what: "not a bare domain or hosts-style entry".into(),
            lines: rejected,
        });
    }
    Ok(FilterRuleSet { source, rules })
}

fn is_plain_hostname(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && !s.ends_with('.')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Functional,
    AdvertisingTracking,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurposeOverride {
    pub pattern: String,
    pub scope: RuleScope,
    pub purpose: Purpose,
}

pub fn load_purpose_overrides(path: &Path) -> Result<Vec<PurposeOverride>> {
    let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    let mut overrides: Vec<PurposeOverride> =
        serde_json::from_str(&text).map_err(|e| AuditError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
    for o in &mut overrides {
        o.pattern = o.pattern.to_ascii_lowercase();
    }
    Ok(overrides)
}

/// Filter rules and overrides compiled into hash lookups so classification
/// is O(labels) per hostname.
#[derive(Debug, Clone, Default)]
pub struct PurposeClassifier {
    exact: HashSet<String>,
    domains: HashSet<String>,
    override_exact: HashMap<String, Purpose>,
    override_domains: HashMap<String, Purpose>,
}

impl PurposeClassifier {
    pub fn compile(rule_sets: &[FilterRuleSet], overrides: &[PurposeOverride]) -> PurposeClassifier {
        let mut c = PurposeClassifier::default();
        for set in rule_sets {
            for rule in &set.rules {
                match rule.scope {
                    RuleScope::ExactHost => c.exact.insert(rule.pattern.clone()),
                    RuleScope::DomainAndSubdomains => c.domains.insert(rule.pattern.clone()),
                };
            }
        }
        for o in overrides {
            match o.scope {
                RuleScope::ExactHost => c.override_exact.insert(o.pattern.clone(), o.purpose),
                RuleScope::DomainAndSubdomains => {
                    c.override_domains.insert(o.pattern.clone(), o.purpose)
                }
            };
        }
        c
    }

    /// Overrides win over list rules; exact overrides win over domain
    /// overrides; among domain overrides the longest pattern wins.
    pub fn classify(&self, hostname: &str) -> Purpose {
        let host = normalize_host(hostname);
        if let Some(p) = self.override_exact.get(&host) {
            return *p;
        }
        for suffix in label_suffixes(&host) {
            if let Some(p) = self.override_domains.get(suffix) {
                return *p;
            }
        }
        if self.matches_block_rule(&host) {
            Purpose::AdvertisingTracking
        } else {
            Purpose::Functional
        }
    }

    pub fn matches_block_rule(&self, hostname: &str) -> bool {
        let host = normalize_host(hostname);
        if self.exact.contains(&host) {
            return true;
        }
        let hit = label_suffixes(&host).any(|suffix| self.domains.contains(suffix));
        hit
    }
}

/// Suffixes of `host` starting at label boundaries, longest first,
/// including `host` itself.
fn label_suffixes(host: &str) -> impl Iterator<Item = &str> {
    std::iter::once(host).chain(host.match_indices('.').map(move |(i, _)| &host[i + 1..]))
}

/// Vendor identity for one skill: which organization publishes it and which
/// registered domains that vendor operates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillVendor {
    pub vendor_org: String,
    #[serde(default)]
    pub vendor_domains: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SkillRegistry {
    pub skills: BTreeMap<String, SkillVendor>,
}

impl SkillRegistry {
    pub fn load(path: &Path) -> Result<SkillRegistry> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        let mut skills: BTreeMap<String, SkillVendor> =
            serde_json::from_str(&text).map_err(|e| AuditError::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                reason: e.to_string(),
            })?;
        for vendor in skills.values_mut() {
            for d in &mut vendor.vendor_domains {
                *d = normalize_host(d);
            }
        }
        Ok(SkillRegistry { skills })
    }

    fn is_vendor_domain(&self, skill_id: &str, registered_domain: &str) -> bool {
        self.skills
            .get(skill_id)
            .map(|v| v.vendor_domains.iter().any(|d| d == registered_domain))
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Platform,
    SkillVendor,
    ThirdParty,
}

pub const UNKNOWN_ORG: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EndpointVerdict {
    pub hostname: String,
    pub registered_domain: String,
    /// Ontology organization, or `"unknown"`.
    pub org_name: String,
    pub party: Party,
    pub purpose: Purpose,
}

/// Everything needed to attribute one hostname, bundled so call sites stay
/// small and the lookups are shared.
pub struct EndpointIntel {
    pub psl: PublicSuffixList,
    pub ontology: OrgOntology,
    pub classifier: PurposeClassifier,
    pub skills: SkillRegistry,
    pub platform_org: String,
}

impl EndpointIntel {
    /// Party assignment checks platform first, then the skill vendor, so a
    /// platform-operated domain never counts as a vendor domain.
    pub fn verdict(&self, hostname: &str, skill_id: Option<&str>) -> EndpointVerdict {
        let hostname = normalize_host(hostname);
        let reg = self.psl.registered_domain(&hostname);
        let org_name = self
            .ontology
            .org_for_domain(&reg.domain)
            .map(|o| o.org_name.clone())
            .unwrap_or_else(|| UNKNOWN_ORG.to_string());
        let party = if org_name != UNKNOWN_ORG && org_name == self.platform_org {
            Party::Platform
        } else if skill_id
            .map(|s| self.skills.is_vendor_domain(s, &reg.domain))
            .unwrap_or(false)
        {
            Party::SkillVendor
        } else {
            Party::ThirdParty
        };
        let purpose = self.classifier.classify(&hostname);
        EndpointVerdict {
            hostname,
            registered_domain: reg.domain,
            org_name,
            party,
            purpose,
        }
    }

    /// Warning for hostnames whose registered domain needed a fallback.
    pub fn suffix_flag(&self, hostname: &str) -> Option<String> {
        let host = normalize_host(hostname);
        self.psl.registered_domain(&host).flag(&host)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PersonaThirdParty {
    pub ats_hosts: BTreeSet<String>,
    pub functional_hosts: BTreeSet<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrgDomainRow {
    pub org_name: String,
    pub registered_domain: String,
    pub purpose: Purpose,
    pub display_domain: String,
    pub hostnames: BTreeSet<String>,
    pub skills: BTreeSet<String>,
    pub weight: u64,
}

/// The three table families derived from attributed device traffic, plus
/// the org/domain inventory.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionTables {
    pub weight_basis: Weight,
    /// Total weight of resolved, attributed device flows (the percentage
    /// denominator).
    pub resolved_weight: u64,
    pub unresolved_weight: u64,
    pub unresolved_flows: usize,
    /// DNS lookups are resolution evidence, not destination traffic; they are
    /// counted here and excluded from the matrix.
    pub dns_flows: usize,
    /// Crawl-phase flows feed sync detection, not the device-traffic tables.
    pub crawl_flows: usize,
    pub matrix: BTreeMap<Party, BTreeMap<Purpose, u64>>,
    pub per_persona_third_party: BTreeMap<String, PersonaThirdParty>,
    pub per_skill_ats: BTreeMap<String, BTreeSet<String>>,
    pub org_rows: Vec<OrgDomainRow>,
}

impl DistributionTables {
    pub fn cell_weight(&self, party: Party, purpose: Purpose) -> u64 {
        self.matrix
            .get(&party)
            .and_then(|m| m.get(&purpose))
            .copied()
            .unwrap_or(0)
    }

    /// Percentage of resolved weight, full precision.
    pub fn cell_pct(&self, party: Party, purpose: Purpose) -> f64 {
        if self.resolved_weight == 0 {
            return 0.0;
        }
        self.cell_weight(party, purpose) as f64 * 100.0 / self.resolved_weight as f64
    }

    pub fn purpose_total_pct(&self, purpose: Purpose) -> f64 {
        if self.resolved_weight == 0 {
            return 0.0;
        }
        let total: u64 = self
            .matrix
            .values()
            .map(|m| m.get(&purpose).copied().unwrap_or(0))
            .sum();
        total as f64 * 100.0 / self.resolved_weight as f64
    }

    pub fn party_total_pct(&self, party: Party) -> f64 {
        if self.resolved_weight == 0 {
            return 0.0;
        }
        let total: u64 = self
            .matrix
            .get(&party)
            .map(|m| m.values().sum())
            .unwrap_or(0);
        total as f64 * 100.0 / self.resolved_weight as f64
    }
}

/// Groups a set of hostnames under one registered domain for display:
/// a single hostname prints as-is, several print as `*(n).domain`.
pub fn display_domain(hostnames: &BTreeSet<String>, registered_domain: &str) -> String {
    if hostnames.len() == 1 {
        hostnames.iter().next().unwrap().clone()
    } else {
        format!("*({}).{}", hostnames.len(), registered_domain)
    }
}

/// Attributes every resolved device flow and aggregates the distribution
/// tables. Crawl-phase and DNS flows are counted but excluded from the
/// matrix; flows without a resolved hostname land in the unresolved bucket.
pub fn traffic_distribution(
    sessions: &[SkillSession],
    resolution: &Resolution,
    intel: &EndpointIntel,
    weight: Weight,
) -> DistributionTables {
    let mut matrix: BTreeMap<Party, BTreeMap<Purpose, u64>> = BTreeMap::new();
    for party in [Party::Platform, Party::SkillVendor, Party::ThirdParty] {
        let row = matrix.entry(party).or_default();
        row.insert(Purpose::Functional, 0);
        row.insert(Purpose::AdvertisingTracking, 0);
    }
    let mut per_persona: BTreeMap<String, PersonaThirdParty> = BTreeMap::new();
    let mut per_skill_ats: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    // (org, registered_domain, purpose) -> (hostnames, skills, weight)
    let mut org_acc: BTreeMap<(String, String, Purpose), (BTreeSet<String>, BTreeSet<String>, u64)> =
        BTreeMap::new();
    let mut verdict_cache: HashMap<(String, Option<String>), EndpointVerdict> = HashMap::new();

    let mut resolved_weight = 0u64;
    let mut unresolved_weight = 0u64;
    let mut unresolved_flows = 0usize;
    let mut dns_flows = 0usize;
    let mut crawl_flows = 0usize;

    for (i, sess) in sessions.iter().enumerate() {
        for (j, flow) in sess.flows.iter().enumerate() {
            if flow.phase == Phase::Crawl {
                crawl_flows += 1;
                continue;
            }
            if flow.protocol == Protocol::Dns {
                dns_flows += 1;
                continue;
            }
            let w = match weight {
                Weight::Flows => 1,
                Weight::Bytes => flow.byte_count,
            };
            let Some(host) = resolution.flow_hosts[i][j].as_deref() else {
                unresolved_weight += w;
                unresolved_flows += 1;
                continue;
            };
            let key = (host.to_string(), sess.skill_id.clone());
            let verdict = verdict_cache
                .entry(key)
                .or_insert_with(|| intel.verdict(host, sess.skill_id.as_deref()));

            resolved_weight += w;
            *matrix
                .get_mut(&verdict.party)
                .unwrap()
                .get_mut(&verdict.purpose)
                .unwrap() += w;

            if verdict.party == Party::ThirdParty {
                let entry = per_persona.entry(sess.persona.name.clone()).or_default();
                match verdict.purpose {
                    Purpose::AdvertisingTracking => {
                        entry.ats_hosts.insert(verdict.hostname.clone())
                    }
                    Purpose::Functional => entry.functional_hosts.insert(verdict.hostname.clone()),
                };
            }
            if verdict.purpose == Purpose::AdvertisingTracking {
                if let Some(skill) = &sess.skill_id {
                    per_skill_ats
                        .entry(skill.clone())
                        .or_default()
                        .insert(verdict.hostname.clone());
                }
            }

            let acc = org_acc
                .entry((
                    verdict.org_name.clone(),
                    verdict.registered_domain.clone(),
                    verdict.purpose,
                ))
                .or_default();
            acc.0.insert(verdict.hostname.clone());
            if let Some(skill) = &sess.skill_id {
                acc.1.insert(skill.clone());
            }
            acc.2 += w;
        }
    }

    let org_rows = org_acc
        .into_iter()
        .map(|((org_name, registered_domain, purpose), (hostnames, skills, weight))| {
            let display_domain = display_domain(&hostnames, &registered_domain);
            OrgDomainRow {
                org_name,
                registered_domain,
                purpose,
                display_domain,
                hostnames,
                skills,
                weight,
            }
        })
        .collect();

    DistributionTables {
        weight_basis: weight,
        resolved_weight,
        unresolved_weight,
        unresolved_flows,
        dns_flows,
        crawl_flows,
        matrix,
        per_persona_third_party: per_persona,
        per_skill_ats,
        org_rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PSL_SNAPSHOT: &str = "\
// test snapshot
com
org
net
uk
co.uk
*.ck
!www.ck
";

    fn psl() -> PublicSuffixList {
        PublicSuffixList::parse(PSL_SNAPSHOT)
    }

    #[test]
    fn registered_domain_basic() {
        let p = psl();
        assert_eq!(p.registered_domain("device-metrics-us-2.amazon.com").domain, "amazon.com");
        assert_eq!(
            p.registered_domain("ingestion.us-east-1.prod.arteries.alexa.a2z.com").domain,
            "a2z.com"
        );
        assert_eq!(p.registered_domain("1432239411.rsc.cdn77.org").domain, "cdn77.org");
        assert_eq!(p.registered_domain("amazon.com").domain, "amazon.com");
    }

    #[test]
    fn registered_domain_multi_label_suffix() {
        let p = psl();
        let r = p.registered_domain("shop.example.co.uk");
        assert_eq!(r.domain, "example.co.uk");
        assert_eq!(r.matched, SuffixMatch::Listed);
    }

    #[test]
    fn registered_domain_wildcard_and_exception() {
        let p = psl();
        // *.ck makes foo.ck a public suffix, so bar.foo.ck registers there.
        assert_eq!(p.registered_domain("bar.foo.ck").domain, "bar.foo.ck");
        assert_eq!(p.registered_domain("deep.bar.foo.ck").domain, "bar.foo.ck");
        // !www.ck carves out www.ck as registrable.
        assert_eq!(p.registered_domain("www.ck").domain, "www.ck");
        assert_eq!(p.registered_domain("sub.www.ck").domain, "www.ck");
    }

    #[test]
    fn unknown_suffix_uses_last_two_labels_with_flag() {
        let p = psl();
        let r = p.registered_domain("a.b.c.internal");
        assert_eq!(r.domain, "c.internal");
        assert_eq!(r.matched, SuffixMatch::UnknownSuffix);
        assert!(r.flag("a.b.c.internal").is_some());
    }

    #[test]
    fn single_label_host_is_flagged_unchanged() {
        let p = psl();
        let r = p.registered_domain("localhost");
        assert_eq!(r.domain, "localhost");
        assert_eq!(r.matched, SuffixMatch::SingleLabel);
    }

    #[test]
    fn public_suffix_itself_is_flagged_unchanged() {
        let p = psl();
        let r = p.registered_domain("co.uk");
        assert_eq!(r.domain, "co.uk");
        assert_eq!(r.matched, SuffixMatch::IsPublicSuffix);
    }

    #[test]
    fn ip_literal_is_left_alone() {
        let p = psl();
        let r = p.registered_domain("203.0.113.5");
        assert_eq!(r.domain, "203.0.113.5");
        assert_eq!(r.matched, SuffixMatch::IpLiteral);
    }

    fn write_file(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn filter_list_parses_both_styles() {
        let f = write_file(
            "# comment\n\n0.0.0.0 device-metrics-us-2.amazon.com\ntritondigital.com\n",
        );
        let set = parse_filter_list(f.path()).unwrap();
        assert_eq!(set.rules.len(), 2);
        assert_eq!(set.rules[0].scope, RuleScope::ExactHost);
        assert_eq!(set.rules[1].scope, RuleScope::DomainAndSubdomains);
    }

    #[test]
    fn filter_list_rejects_extra_fields_with_line_number() {
        let f = write_file("good.com\n0.0.0.0 host.com extra\n");
        let err = parse_filter_list(f.path()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains('2'), "{err}");
    }

    #[test]
    fn purpose_matching_is_label_aligned() {
        let rules = FilterRuleSet {
            source: "t".into(),
            rules: vec![
                FilterRule {
                    pattern: "tritondigital.com".into(),
                    scope: RuleScope::DomainAndSubdomains,
                    action: RuleAction::Block,
                },
                FilterRule {
                    pattern: "device-metrics-us-2.amazon.com".into(),
                    scope: RuleScope::ExactHost,
                    action: RuleAction::Block,
                },
            ],
        };
        let c = PurposeClassifier::compile(&[rules], &[]);
        assert_eq!(c.classify("tritondigital.com"), Purpose::AdvertisingTracking);
        assert_eq!(c.classify("cdn.tritondigital.com"), Purpose::AdvertisingTracking);
        // Not label-aligned: plain suffix but not ".pattern".
        assert_eq!(c.classify("nottritondigital.com"), Purpose::Functional);
        assert_eq!(c.classify("device-metrics-us-2.amazon.com"), Purpose::AdvertisingTracking);
        // Exact-host rules leave the rest of the domain alone.
        assert_eq!(c.classify("avs-alexa-na.amazon.com"), Purpose::Functional);
        assert_eq!(c.classify("sub.device-metrics-us-2.amazon.com"), Purpose::Functional);
    }

    #[test]
    fn overrides_win_over_list_rules() {
        let rules = FilterRuleSet {
            source: "t".into(),
            rules: vec![FilterRule {
                pattern: "megaphone.fm".into(),
                scope: RuleScope::DomainAndSubdomains,
                action: RuleAction::Block,
            }],
        };
        let overrides = vec![PurposeOverride {
            pattern: "cdn.megaphone.fm".into(),
            scope: RuleScope::ExactHost,
            purpose: Purpose::Functional,
        }];
        let c = PurposeClassifier::compile(&[rules], &overrides);
        assert_eq!(c.classify("ads.megaphone.fm"), Purpose::AdvertisingTracking);
        assert_eq!(c.classify("cdn.megaphone.fm"), Purpose::Functional);
    }

    fn intel() -> EndpointIntel {
        let ontology = OrgOntology::from_orgs(vec![
            Org {
                org_name: "Amazon".into(),
                domains: vec!["amazon.com".into(), "a2z.com".into()],
                categories: vec![OrgCategory::PlatformProvider],
            },
            Org {
                org_name: "Triton Digital".into(),
                domains: vec!["tritondigital.com".into()],
                categories: vec![OrgCategory::AdvertisingNetwork],
            },
        ])
        .unwrap();
        let rules = FilterRuleSet {
            source: "t".into(),
            rules: vec![FilterRule {
                pattern: "tritondigital.com".into(),
                scope: RuleScope::DomainAndSubdomains,
                action: RuleAction::Block,
            }],
        };
        let mut skills = SkillRegistry::default();
        skills.skills.insert(
            "garmin".into(),
            SkillVendor {
                vendor_org: "Garmin".into(),
                vendor_domains: vec!["garmincdn.com".into()],
            },
        );
        EndpointIntel {
            psl: psl(),
            ontology,
            classifier: PurposeClassifier::compile(&[rules], &[]),
            skills,
            platform_org: "Amazon".into(),
        }
    }

    #[test]
    fn verdict_maps_platform_vendor_and_third_party() {
        let intel = intel();
        let v = intel.verdict("avs-alexa-na.amazon.com", Some("garmin"));
        assert_eq!(v.party, Party::Platform);
        assert_eq!(v.org_name, "Amazon");

        let v = intel.verdict("static.garmincdn.com", Some("garmin"));
        assert_eq!(v.party, Party::SkillVendor);
        assert_eq!(v.org_name, UNKNOWN_ORG);

        // Same hostname outside the skill context is third party.
        let v = intel.verdict("static.garmincdn.com", Some("sonos"));
        assert_eq!(v.party, Party::ThirdParty);

        let v = intel.verdict("cdn.tritondigital.com", None);
        assert_eq!(v.party, Party::ThirdParty);
        assert_eq!(v.org_name, "Triton Digital");
        assert_eq!(v.purpose, Purpose::AdvertisingTracking);
    }

    #[test]
    fn display_domain_aggregates_subdomains() {
        let one: BTreeSet<String> = ["chtbl.com".to_string()].into_iter().collect();
        assert_eq!(display_domain(&one, "chtbl.com"), "chtbl.com");
        let two: BTreeSet<String> =
            ["a.megaphone.fm".to_string(), "b.megaphone.fm".to_string()].into_iter().collect();
        assert_eq!(display_domain(&two, "megaphone.fm"), "*(2).megaphone.fm");
    }
}
