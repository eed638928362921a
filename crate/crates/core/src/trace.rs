//! Flow-trace data model, JSONL ingestion, session segmentation, and
//! hostname resolution.
//!
//! ## Input format
//!
//! A trace file is JSONL: one flow record per line, blank lines ignored.
//! Ingestion parses and validates each line, truncates HTTP body excerpts to
//! the configured cap, and sorts records by `(session_id, timestamp_ms)`.
//! Malformed lines are collected with their line numbers; when more than 10%
//! of non-blank lines are malformed the whole file is rejected, otherwise the
//! offenders are reported as warnings and skipped.
//!
//! ## Hostname resolution
//!
//! A non-DNS flow is attributed to a hostname using only in-trace evidence:
//! the TLS SNI when present, otherwise the query name of the most recent
//! prior (or same-millisecond) DNS answer containing the destination IP
//! within the same persona's flow stream. Flows with neither kind of
//! evidence are reported in a separate unresolved bucket, never guessed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::IngestConfig;
use crate::error::{AuditError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaKind {
    Interest,
    Vanilla,
    WebControl,
}

/// A persona is a clean device identity with a single configured interest
/// (or none, for vanilla and web-control baselines).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaId {
    pub name: String,
    pub kind: PersonaKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Install,
    Interact,
    Idle,
    Crawl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Outbound,
    Inbound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Dns,
    Tls,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Post,
    /// Any other method; deserialization normalizes unknown strings here.
    #[serde(other)]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnsQuery {
    pub qname: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpEvent {
    pub method: HttpMethod,
    pub url: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub request_headers: Vec<(String, String)>,
    /// Cookies set by the response to this request, as (name, value).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub set_cookies: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referer: Option<String>,
    /// First bytes of the request body; capped at ingest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_excerpt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowRecord {
    pub session_id: String,
    pub persona: PersonaId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_id: Option<String>,
    pub phase: Phase,
    pub timestamp_ms: i64,
    pub direction: Direction,
    pub dst_ip: String,
    pub dst_port: u16,
    pub protocol: Protocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sni: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dns_query: Option<DnsQuery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http_event: Option<HttpEvent>,
    pub byte_count: u64,
}

impl FlowRecord {
    /// Protocol-dependent field requirements; a record violating these is
    /// treated as malformed at ingest.
    fn check_shape(&self) -> std::result::Result<(), String> {
        match self.protocol {
            Protocol::Dns => {
                if self.dns_query.is_none() {
                    return Err("protocol dns requires dns_query".into());
                }
                if self.http_event.is_some() || self.sni.is_some() {
                    return Err("protocol dns allows neither http_event nor sni".into());
                }
            }
            Protocol::Tls => {
                if self.dns_query.is_some() || self.http_event.is_some() {
                    return Err("protocol tls allows neither dns_query nor http_event".into());
                }
            }
            Protocol::Http => {
                if self.http_event.is_none() {
                    return Err("protocol http requires http_event".into());
                }
                if self.dns_query.is_some() || self.sni.is_some() {
                    return Err("protocol http allows neither dns_query nor sni".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_lines: usize,
    pub accepted: usize,
    pub malformed: Vec<MalformedLine>,
}

#[derive(Debug)]
pub struct Ingested {
    pub records: Vec<FlowRecord>,
    pub report: IngestReport,
}

/// Reads a trace file, skipping blank lines. Returns records sorted by
/// `(session_id, timestamp_ms)` with body excerpts truncated to the cap.
pub fn ingest_trace(path: &Path, cfg: &IngestConfig) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| AuditError::io(path, e))?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut malformed = Vec::new();
    let mut total_lines = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| AuditError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        total_lines += 1;
        match parse_flow_line(&line, cfg) {
            Ok(rec) => records.push(rec),
            Err(reason) => malformed.push(MalformedLine { line: line_no, reason }),
        }
    }

    // Strictly more than 10% malformed means the file cannot be trusted.
    if malformed.len() * 10 > total_lines {
        return Err(AuditError::MalformedInput {
            path: path.to_path_buf(),
            bad: malformed.len(),
            total: total_lines,
            lines: malformed.iter().map(|m| m.line).collect(),
        });
    }

    records.sort_by(|a, b| {
        (&a.session_id, a.timestamp_ms).cmp(&(&b.session_id, b.timestamp_ms))
    });
    let accepted = records.len();
    Ok(Ingested {
        records,
        report: IngestReport { total_lines, accepted, malformed },
    })
}

fn parse_flow_line(line: &str, cfg: &IngestConfig) -> std::result::Result<FlowRecord, String> {
    let mut rec: FlowRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    rec.check_shape()?;
    if let Some(http) = rec.http_event.as_mut() {
        if let Some(body) = http.body_excerpt.as_mut() {
            truncate_to_boundary(body, cfg.body_excerpt_max);
        }
    }
    Ok(rec)
}

/// Truncates to at most `max` bytes without splitting a UTF-8 character.
fn truncate_to_boundary(s: &mut String, max: usize) {
    if s.len() <= max {
        return;
    }
    let mut cut = max;
    while cut > 0 && !s.is_char_boundary(cut) {
        cut -= 1;
    }
    s.truncate(cut);
}

/// One skill session: every flow sharing a `session_id`, bracketed from
/// launch to teardown by the capture harness.
#[derive(Debug, Clone, Serialize)]
pub struct SkillSession {
    pub session_id: String,
    pub persona: PersonaId,
    pub skill_id: Option<String>,
    /// Ordered by timestamp.
    pub flows: Vec<FlowRecord>,
    pub start_ms: i64,
    pub end_ms: i64,
}

/// Groups records into sessions. Every flow of a session must carry the same
/// persona, and at most one distinct skill id (flows without a skill label
/// may ride along inside a labeled session).
pub fn segment_sessions(records: Vec<FlowRecord>) -> Result<Vec<SkillSession>> {
    let mut grouped: BTreeMap<String, Vec<FlowRecord>> = BTreeMap::new();
    for rec in records {
        grouped.entry(rec.session_id.clone()).or_default().push(rec);
    }

    let mut sessions = Vec::with_capacity(grouped.len());
    for (session_id, mut flows) in grouped {
        flows.sort_by_key(|f| f.timestamp_ms);
        let persona = flows[0].persona.clone();
        let mut skill_id: Option<String> = None;
        for f in &flows {
            if f.persona != persona {
                return Err(AuditError::Invariant(format!(
                    "session {session_id} is labeled with two personas: {:?} and {:?}",
                    persona.name, f.persona.name
                )));
            }
            if let Some(s) = &f.skill_id {
                match &skill_id {
                    None => skill_id = Some(s.clone()),
                    Some(prev) if prev != s => {
                        return Err(AuditError::Invariant(format!(
                            "session {session_id} is labeled with two skills: {prev} and {s}"
                        )));
                    }
                    Some(_) => {}
                }
            }
        }
        let start_ms = flows.first().map(|f| f.timestamp_ms).unwrap_or_default();
        let end_ms = flows.last().map(|f| f.timestamp_ms).unwrap_or_default();
        sessions.push(SkillSession { session_id, persona, skill_id, flows, start_ms, end_ms });
    }
    Ok(sessions)
}

#[derive(Debug, Clone, Serialize)]
pub struct UnresolvedGroup {
    pub session_id: String,
    pub dst_ip: String,
    pub flow_count: usize,
}

#[derive(Debug, Default)]
pub struct Resolution {
    /// `(session_id, dst_ip)` to hostname, first resolved flow wins.
    pub map: BTreeMap<(String, String), String>,
    /// Per-flow hostnames, aligned with the session slice passed to
    /// [`resolve_domains`]: `flow_hosts[i][j]` belongs to
    /// `sessions[i].flows[j]`. `None` means that flow had no evidence of its
    /// own, even when a later flow resolved the same destination.
    pub flow_hosts: Vec<Vec<Option<String>>>,
    pub unresolved: Vec<UnresolvedGroup>,
    pub warnings: Vec<String>,
}

impl Resolution {
    pub fn hostname_for(&self, session_id: &str, dst_ip: &str) -> Option<&str> {
        self.map
            .get(&(session_id.to_string(), dst_ip.to_string()))
            .map(|s| s.as_str())
    }
}

/// DNS answers observed for one persona, ordered by time.
struct DnsHistory {
    // (persona, ip) -> [(timestamp, qname)] sorted by (timestamp, qname)
    by_ip: HashMap<(PersonaId, String), Vec<(i64, String)>>,
}

impl DnsHistory {
    fn build(sessions: &[SkillSession]) -> DnsHistory {
        let mut by_ip: HashMap<(PersonaId, String), Vec<(i64, String)>> = HashMap::new();
        for sess in sessions {
            for f in &sess.flows {
                if f.protocol != Protocol::Dns {
                    continue;
                }
                let q = f.dns_query.as_ref().expect("shape-checked at ingest");
                for ip in &q.answers {
                    by_ip
                        .entry((sess.persona.clone(), ip.clone()))
                        .or_default()
                        .push((f.timestamp_ms, q.qname.clone()));
                }
            }
        }
        for entries in by_ip.values_mut() {
            entries.sort();
            entries.dedup();
        }
        DnsHistory { by_ip }
    }

    /// Most recent answer containing `ip` at or before `ts`. Simultaneous
    /// conflicting answers resolve to the lexicographically smallest qname.
    fn lookup(&self, persona: &PersonaId, ip: &str, ts: i64) -> Option<(String, bool)> {
        let entries = self.by_ip.get(&(persona.clone(), ip.to_string()))?;
        let cut = entries.partition_point(|(t, _)| *t <= ts);
        if cut == 0 {
            return None;
        }
        let best_ts = entries[cut - 1].0;
        let mut names: Vec<&str> = entries[..cut]
            .iter()
            .rev()
            .take_while(|(t, _)| *t == best_ts)
            .map(|(_, q)| q.as_str())
            .collect();
        names.sort();
        names.dedup();
        let conflicted = names.len() > 1;
        Some((names[0].to_string(), conflicted))
    }
}

/// Maps every non-DNS flow to a hostname where the trace supports one.
///
/// SNI evidence wins over DNS history. Within a `(session_id, dst_ip)` pair
/// the first flow's hostname wins; a later conflicting resolution only adds a
/// warning. DNS flows carry their own query name and are not mapped.
pub fn resolve_domains(sessions: &[SkillSession]) -> Resolution {
    let history = DnsHistory::build(sessions);

    let mut map: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut flow_hosts: Vec<Vec<Option<String>>> = Vec::with_capacity(sessions.len());
    let mut unresolved: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut warnings: BTreeSet<String> = BTreeSet::new();

    for sess in sessions {
        let mut hosts = Vec::with_capacity(sess.flows.len());
        for f in &sess.flows {
            if f.protocol == Protocol::Dns {
                hosts.push(None);
                continue;
            }
            let hostname = match &f.sni {
                Some(sni) => Some(normalize_host(sni)),
                None => match history.lookup(&sess.persona, &f.dst_ip, f.timestamp_ms) {
                    Some((qname, conflicted)) => {
                        if conflicted {
                            warnings.insert(format!(
                                "dns conflict: {} answered by multiple names at the same \
                                 timestamp for persona {}; picked {}",
                                f.dst_ip, sess.persona.name, qname
                            ));
                        }
                        Some(normalize_host(&qname))
                    }
                    None => None,
                },
            };
            let key = (sess.session_id.clone(), f.dst_ip.clone());
            match &hostname {
                Some(h) => match map.get(&key) {
                    None => {
                        map.insert(key, h.clone());
                    }
                    Some(prev) if prev != h => {
                        warnings.insert(format!(
                            "resolution conflict in session {}: {} first resolved to {}, \
                             later evidence says {}; keeping {}",
                            sess.session_id, f.dst_ip, prev, h, prev
                        ));
                    }
                    Some(_) => {}
                },
                None => {
                    *unresolved.entry(key).or_default() += 1;
                }
            }
            hosts.push(hostname);
        }
        flow_hosts.push(hosts);
    }

    let unresolved = unresolved
        .into_iter()
        .map(|((session_id, dst_ip), flow_count)| UnresolvedGroup {
            session_id,
            dst_ip,
            flow_count,
        })
        .collect();

    Resolution { map, flow_hosts, unresolved, warnings: warnings.into_iter().collect() }
}

/// Lowercases and strips any trailing dot.
pub fn normalize_host(host: &str) -> String {
    host.trim_end_matches('.').to_ascii_lowercase()
}
