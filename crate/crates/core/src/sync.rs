//! Identifier-sharing detection over crawl HTTP traffic.
//!
//! Identifiers are harvested from Set-Cookie values and query-parameter
//! values, then traced into later requests to other organizations, either
//! directly in the request URL or leaking through a Referer that belongs to
//! the identifier's origin. Matching is verbatim substring only; hashed or
//! re-encoded identifiers are out of scope by design, which keeps every
//! reported event auditable against the raw trace.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use url::Url;

use crate::bids::{BidRecord, LabeledBid, PartnerLabel};
use crate::trace::FlowRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    CookieValue,
    QueryParam,
    /// Representable for completeness; the default harvester mints tokens
    /// from cookies and query params only. Path occurrences still count on
    /// the receiving side of a sync.
    PathSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifierToken {
    pub value: String,
    /// Organization of the request or response that first carried the value.
    pub origin_org: String,
    pub source: TokenSource,
    pub first_seen_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncEvent {
    pub token: IdentifierToken,
    pub sender_org: String,
    pub receiver_org: String,
    pub evidence_url: String,
    pub timestamp_ms: i64,
}

/// Low-entropy shapes that masquerade as identifiers: short pure numbers,
/// epoch timestamps (10-digit seconds, 13-digit milliseconds), locale codes
/// like `en-US`/`en_us`, and `WxH` dimension strings.
fn is_low_entropy(value: &str) -> bool {
    let bytes = value.as_bytes();
    if bytes.iter().all(|b| b.is_ascii_digit()) {
        return value.len() < 6 || value.len() == 10 || value.len() == 13;
    }
    if value.len() == 5 {
        let b = bytes;
        let sep = b[2] == b'-' || b[2] == b'_';
        if sep
            && b[0].is_ascii_alphabetic()
            && b[1].is_ascii_alphabetic()
            && b[3].is_ascii_alphabetic()
            && b[4].is_ascii_alphabetic()
        {
            return true;
        }
    }
    if let Some((w, h)) = value.split_once(['x', 'X']) {
        if !w.is_empty()
            && !h.is_empty()
            && w.bytes().all(|b| b.is_ascii_digit())
            && h.bytes().all(|b| b.is_ascii_digit())
        {
            return true;
        }
    }
    false
}

fn passes_gate(value: &str, min_id_length: usize) -> bool {
    value.len() >= min_id_length && !is_low_entropy(value)
}

/// Cookie value with any trailing attributes stripped: exporters sometimes
/// leave `; Path=/; Secure` inside the value field.
fn cookie_value(raw: &str) -> Option<&str> {
    let value = raw.split(';').next()?.trim();
    (!value.is_empty()).then_some(value)
}

pub(crate) fn host_of(url: &str) -> Option<String> {
    Url::parse(url).ok()?.host_str().map(|h| h.trim_end_matches('.').to_ascii_lowercase())
}

/// HTTP flows ordered by `(timestamp, url)` so the outcome never depends on
/// input file order.
fn http_flows_in_order(flows: &[FlowRecord]) -> Vec<&FlowRecord> {
    let mut http: Vec<&FlowRecord> = flows.iter().filter(|f| f.http_event.is_some()).collect();
    http.sort_by(|a, b| {
        let ua = a.http_event.as_ref().map(|h| h.url.as_str()).unwrap_or("");
        let ub = b.http_event.as_ref().map(|h| h.url.as_str()).unwrap_or("");
        (a.timestamp_ms, ua).cmp(&(b.timestamp_ms, ub))
    });
    http
}

/// Harvests identifier candidates from Set-Cookie and query-parameter
/// values. The earliest carrier of a value (ties broken by URL, cookies
/// before query params) determines its origin; later carriers of the same
/// value do not mint a second token. Sub-threshold candidates and flows with
/// unparseable URLs are skipped without error.
pub fn extract_identifiers(
    flows: &[FlowRecord],
    min_id_length: usize,
    org_of: impl Fn(&str) -> String,
) -> Vec<IdentifierToken> {
    let mut tokens: BTreeMap<String, IdentifierToken> = BTreeMap::new();
    for flow in http_flows_in_order(flows) {
        let http = flow.http_event.as_ref().expect("filtered to http flows");
        let Some(host) = host_of(&http.url) else { continue };
        let org = org_of(&host);

        let mut candidates: Vec<(TokenSource, &str)> = Vec::new();
        for (_name, raw_value) in &http.set_cookies {
            if let Some(value) = cookie_value(raw_value) {
                candidates.push((TokenSource::CookieValue, value));
            }
        }
        // Query values come from the raw query string; percent-decoding is
        // deliberately skipped so matches stay verbatim against URLs.
        if let Some(query) = http.url.split_once('?').map(|(_, q)| q) {
            let query = query.split('#').next().unwrap_or(query);
            for pair in query.split('&') {
                let value = pair.split_once('=').map(|(_, v)| v).unwrap_or("");
                if !value.is_empty() {
                    candidates.push((TokenSource::QueryParam, value));
                }
            }
        }

        for (source, value) in candidates {
            if !passes_gate(value, min_id_length) {
                continue;
            }
            tokens.entry(value.to_string()).or_insert_with(|| IdentifierToken {
                value: value.to_string(),
                origin_org: org.clone(),
                source,
                first_seen_ms: flow.timestamp_ms,
            });
        }
    }
    tokens.into_values().collect()
}

/// Finds identifier-sharing events: a token minted by org A appearing, at or
/// after its first sighting, in a request to org B ≠ A, either inside the
/// request URL or inside a Referer URL that belongs to A. Events are
/// deduplicated per (token, sender, receiver), keeping the earliest by
/// `(timestamp, evidence URL)`.
pub fn detect_syncs(
    tokens: &[IdentifierToken],
    flows: &[FlowRecord],
    org_of: impl Fn(&str) -> String,
) -> Vec<SyncEvent> {
    let by_value: HashMap<&str, &IdentifierToken> =
        tokens.iter().map(|t| (t.value.as_str(), t)).collect();
    let mut events: BTreeMap<(String, String, String), SyncEvent> = BTreeMap::new();

    for flow in http_flows_in_order(flows) {
        let http = flow.http_event.as_ref().expect("filtered to http flows");
        let Some(receiver_host) = host_of(&http.url) else { continue };
        let receiver = org_of(&receiver_host);

        let referer_org = http
            .referer
            .as_deref()
            .and_then(host_of)
            .map(|h| org_of(&h));

        for token in by_value.values() {
            if flow.timestamp_ms < token.first_seen_ms || receiver == token.origin_org {
                continue;
            }
            let in_url = http.url.contains(&token.value);
            let in_referer = referer_org.as_deref() == Some(token.origin_org.as_str())
                && http.referer.as_deref().is_some_and(|r| r.contains(&token.value));
            if !(in_url || in_referer) {
                continue;
            }
            let key =
                (token.value.clone(), token.origin_org.clone(), receiver.clone());
            let candidate = SyncEvent {
                token: (*token).clone(),
                sender_org: token.origin_org.clone(),
                receiver_org: receiver.clone(),
                evidence_url: http.url.clone(),
                timestamp_ms: flow.timestamp_ms,
            };
            match events.get(&key) {
                Some(existing)
                    if (existing.timestamp_ms, existing.evidence_url.as_str())
                        <= (candidate.timestamp_ms, candidate.evidence_url.as_str()) => {}
                _ => {
                    events.insert(key, candidate);
                }
            }
        }
    }
    events.into_values().collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SyncEdge {
    pub sender_org: String,
    pub receiver_org: String,
    pub count: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartnerGraph {
    pub nodes: BTreeSet<String>,
    pub edges: Vec<SyncEdge>,
    pub focus_org: String,
}

impl PartnerGraph {
    pub fn from_events(events: &[SyncEvent], focus_org: &str) -> PartnerGraph {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        let mut nodes = BTreeSet::new();
        for e in events {
            nodes.insert(e.sender_org.clone());
            nodes.insert(e.receiver_org.clone());
            *counts.entry((e.sender_org.clone(), e.receiver_org.clone())).or_default() += 1;
        }
        let edges = counts
            .into_iter()
            .map(|((sender_org, receiver_org), count)| SyncEdge { sender_org, receiver_org, count })
            .collect();
        PartnerGraph { nodes, edges, focus_org: focus_org.to_string() }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PartnerSets {
    pub direct_partners: BTreeSet<String>,
    pub second_hop: BTreeSet<String>,
}

/// Orgs that exchanged an identifier with the focus org (either direction),
/// and the orgs those partners exchanged with beyond the focus circle.
pub fn partner_sets(
    events: &[SyncEvent],
    focus_org: &str,
    warnings: &mut Vec<String>,
) -> PartnerSets {
    let mut adjacency: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in events {
        adjacency.entry(&e.sender_org).or_default().insert(&e.receiver_org);
        adjacency.entry(&e.receiver_org).or_default().insert(&e.sender_org);
    }
    let Some(direct) = adjacency.get(focus_org) else {
        if !events.is_empty() {
            warnings.push(format!(
                "focus org {focus_org:?} absent from the identifier-sharing graph"
            ));
        }
        return PartnerSets::default();
    };
    let direct_partners: BTreeSet<String> = direct.iter().map(|s| s.to_string()).collect();
    let mut second_hop = BTreeSet::new();
    for partner in direct {
        if let Some(neighbors) = adjacency.get(partner) {
            for n in neighbors {
                if *n != focus_org && !direct_partners.contains(*n) {
                    second_hop.insert(n.to_string());
                }
            }
        }
    }
    PartnerSets { direct_partners, second_hop }
}

/// Labels each bid by whether its bidder is a direct partner of the focus
/// org. A bidder name missing from the known-organization set cannot be
/// vouched for and is conservatively labeled non-partner, with a warning.
pub fn label_bidders(
    bids: &[BidRecord],
    direct_partners: &BTreeSet<String>,
    known_orgs: &BTreeSet<String>,
    warnings: &mut Vec<String>,
) -> Vec<LabeledBid> {
    let mut unmapped = BTreeSet::new();
    let labeled = bids
        .iter()
        .map(|bid| {
            let label = if direct_partners.contains(&bid.bidder) {
                PartnerLabel::Partner
            } else {
                if !known_orgs.contains(&bid.bidder) {
                    unmapped.insert(bid.bidder.clone());
                }
                PartnerLabel::NonPartner
            };
            LabeledBid { bid: bid.clone(), label }
        })
        .collect();
    for bidder in unmapped {
        warnings.push(format!(
            "bidder {bidder:?} is not a known organization; labeled non_partner"
        ));
    }
    labeled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{
        Direction, FlowRecord, HttpEvent, HttpMethod, PersonaId, PersonaKind, Phase, Protocol,
    };

    fn http_flow(
        ts: i64,
        url: &str,
        set_cookies: &[(&str, &str)],
        referer: Option<&str>,
    ) -> FlowRecord {
        FlowRecord {
            session_id: "crawl-1".into(),
            persona: PersonaId { name: "crawl".into(), kind: PersonaKind::WebControl },
            skill_id: None,
            phase: Phase::Crawl,
            timestamp_ms: ts,
            direction: Direction::Outbound,
            protocol: Protocol::Http,
            dst_ip: "198.51.100.1".into(),
            dst_port: 80,
            byte_count: 200,
            sni: None,
            dns_query: None,
            http_event: Some(HttpEvent {
                method: HttpMethod::Get,
                url: url.into(),
                request_headers: vec![],
                set_cookies: set_cookies
                    .iter()
                    .map(|(name, value)| (name.to_string(), value.to_string()))
                    .collect(),
                referer: referer.map(|s| s.into()),
                body_excerpt: None,
            }),
        }
    }

    fn org_by_domain(host: &str) -> String {
        for (dom, org) in [
            ("adorg.example", "AdOrg"),
            ("partner.example", "PartnerCo"),
            ("other.example", "OtherCo"),
            ("focus.example", "FocusCo"),
        ] {
            if host == dom || host.ends_with(&format!(".{dom}")) {
                return org.to_string();
            }
        }
        host.to_string()
    }

    #[test]
    fn cookie_value_mints_a_token() {
        let flows = [http_flow(
            1000,
            "http://adorg.example/init",
            &[("uid", "AbC123xYz789; Path=/; Secure")],
            None,
        )];
        let tokens = extract_identifiers(&flows, 8, org_by_domain);
        assert_eq!(tokens.len(), 1);
        assert_eq!(tokens[0].value, "AbC123xYz789");
        assert_eq!(tokens[0].origin_org, "AdOrg");
        assert_eq!(tokens[0].source, TokenSource::CookieValue);
        assert_eq!(tokens[0].first_seen_ms, 1000);
    }

    #[test]
    fn short_and_low_entropy_values_are_skipped() {
        let flows = [http_flow(
            1000,
            "http://adorg.example/p?w=300&size=300x250&locale=en-US&ts=1700000000000&id=AbCdEfGh1234",
            &[],
            None,
        )];
        let tokens = extract_identifiers(&flows, 8, org_by_domain);
        assert_eq!(tokens.len(), 1);
        assert_eq!(tokens[0].value, "AbCdEfGh1234");
        assert_eq!(tokens[0].source, TokenSource::QueryParam);
    }

    #[test]
    fn low_entropy_shapes() {
        assert!(is_low_entropy("12345"));
        assert!(is_low_entropy("1700000000")); // epoch seconds
        assert!(is_low_entropy("1700000000000")); // epoch millis
        assert!(is_low_entropy("en-US"));
        assert!(is_low_entropy("pt_BR"));
        assert!(is_low_entropy("300x250"));
        assert!(is_low_entropy("1920X1080"));
        assert!(!is_low_entropy("AbC123xYz789"));
        assert!(!is_low_entropy("123456789")); // 9 digits: not an epoch shape
        assert!(!is_low_entropy("abcde"));
    }

    #[test]
    fn earliest_carrier_wins_origin() {
        let flows = [
            http_flow(2000, "http://other.example/p?sync=TOKENVALUE01", &[], None),
            http_flow(1000, "http://adorg.example/init", &[("uid", "TOKENVALUE01")], None),
        ];
        let tokens = extract_identifiers(&flows, 8, org_by_domain);
        assert_eq!(tokens.len(), 1);
        assert_eq!(tokens[0].origin_org, "AdOrg");
        assert_eq!(tokens[0].first_seen_ms, 1000);
    }

    #[test]
    fn direct_url_sync_is_detected() {
        let flows = [
            http_flow(1000, "http://adorg.example/init", &[("uid", "TOKENVALUE01")], None),
            http_flow(2000, "http://partner.example/pixel?u=TOKENVALUE01", &[], None),
        ];
        let tokens = extract_identifiers(&flows, 8, org_by_domain);
        let events = detect_syncs(&tokens, &flows, org_by_domain);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].sender_org, "AdOrg");
        assert_eq!(events[0].receiver_org, "PartnerCo");
        assert_eq!(events[0].timestamp_ms, 2000);
    }

    #[test]
    fn same_org_reuse_is_not_a_sync() {
        let flows = [
            http_flow(1000, "http://adorg.example/init", &[("uid", "TOKENVALUE01")], None),
            http_flow(2000, "http://cdn.adorg.example/beacon?u=TOKENVALUE01", &[], None),
        ];
        let tokens = extract_identifiers(&flows, 8, org_by_domain);
        let events = detect_syncs(&tokens, &flows, org_by_domain);
        assert!(events.is_empty());
    }

    #[test]
    fn referer_leak_requires_origin_org_referer() {
        let flows = [
            http_flow(1000, "http://adorg.example/page?uid=TOKENVALUE01", &[], None),
            // Referer belongs to the origin org and carries the token.
            http_flow(
                2000,
                "http://partner.example/ad.js",
                &[],
                Some("http://adorg.example/page?uid=TOKENVALUE01"),
            ),
            // Referer carries the token but belongs to an unrelated org.
            http_flow(
                3000,
                "http://other.example/ad.js",
                &[],
                Some("http://partner.example/copy?uid=TOKENVALUE01"),
            ),
        ];
        let tokens = extract_identifiers(&flows, 8, org_by_domain);
        let events = detect_syncs(&tokens, &flows, org_by_domain);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].receiver_org, "PartnerCo");
        assert_eq!(events[0].evidence_url, "http://partner.example/ad.js");
    }

    #[test]
    fn three_planted_chains_two_decoys() {
        let flows = [
            http_flow(1000, "http://adorg.example/a", &[("uid", "AAAAAAAA0001")], None),
            http_flow(1001, "http://partner.example/b", &[("uid", "BBBBBBBB0002")], None),
            http_flow(1002, "http://other.example/c", &[("uid", "CCCCCCCC0003")], None),
            // Three cross-org shares.
            http_flow(2000, "http://partner.example/s?x=AAAAAAAA0001", &[], None),
            http_flow(2001, "http://other.example/s?x=BBBBBBBB0002", &[], None),
            http_flow(2002, "http://adorg.example/s?x=CCCCCCCC0003", &[], None),
            // Two same-org decoys.
            http_flow(3000, "http://adorg.example/self?x=AAAAAAAA0001", &[], None),
            http_flow(3001, "http://partner.example/self?x=BBBBBBBB0002", &[], None),
        ];
        let tokens = extract_identifiers(&flows, 8, org_by_domain);
        let events = detect_syncs(&tokens, &flows, org_by_domain);
        assert_eq!(events.len(), 3);
    }

    #[test]
    fn dedup_keeps_earliest_with_url_tie_break() {
        let mut flows = vec![
            http_flow(1000, "http://adorg.example/a", &[("uid", "AAAAAAAA0001")], None),
            http_flow(2000, "http://partner.example/z?x=AAAAAAAA0001", &[], None),
            http_flow(2000, "http://partner.example/a?x=AAAAAAAA0001", &[], None),
        ];
        let events_fwd = detect_syncs(
            &extract_identifiers(&flows, 8, org_by_domain),
            &flows,
            org_by_domain,
        );
        flows.swap(1, 2);
        let events_rev = detect_syncs(
            &extract_identifiers(&flows, 8, org_by_domain),
            &flows,
            org_by_domain,
        );
        assert_eq!(events_fwd, events_rev);
        assert_eq!(events_fwd.len(), 1);
        assert_eq!(events_fwd[0].evidence_url, "http://partner.example/a?x=AAAAAAAA0001");
    }

    #[test]
    fn no_event_before_token_first_seen() {
        let flows = [
            // The value flies to PartnerCo before AdOrg ever mints it.
            http_flow(500, "http://partner.example/early?x=AAAAAAAA0001", &[], None),
            http_flow(1000, "http://adorg.example/a", &[("uid", "AAAAAAAA0001")], None),
        ];
        let tokens = extract_identifiers(&flows, 8, org_by_domain);
        // Origin resolves to the earliest carrier, PartnerCo.
        assert_eq!(tokens[0].origin_org, "PartnerCo");
        let events = detect_syncs(&tokens, &flows, org_by_domain);
        assert!(events.iter().all(|e| e.timestamp_ms >= e.token.first_seen_ms));
    }

    #[test]
    fn partner_sets_two_edge_graph() {
        let mk = |sender: &str, receiver: &str| SyncEvent {
            token: IdentifierToken {
                value: "AAAAAAAA0001".into(),
                origin_org: sender.into(),
                source: TokenSource::CookieValue,
                first_seen_ms: 0,
            },
            sender_org: sender.into(),
            receiver_org: receiver.into(),
            evidence_url: "http://x.example/".into(),
            timestamp_ms: 1,
        };
        let events = [mk("B", "F"), mk("C", "B")];
        let mut warnings = Vec::new();
        let sets = partner_sets(&events, "F", &mut warnings);
        assert_eq!(sets.direct_partners, BTreeSet::from(["B".to_string()]));
        assert_eq!(sets.second_hop, BTreeSet::from(["C".to_string()]));
        assert!(warnings.is_empty());

        let absent = partner_sets(&events, "Z", &mut warnings);
        assert!(absent.direct_partners.is_empty());
        assert!(absent.second_hop.is_empty());
        assert_eq!(warnings.len(), 1);

        let none = partner_sets(&[], "F", &mut warnings);
        assert!(none.direct_partners.is_empty() && none.second_hop.is_empty());
        assert_eq!(warnings.len(), 1, "empty graph is not warning-worthy");
    }

    #[test]
    fn label_bidders_fixture() {
        use crate::bids::BidRecord;
        let bid = |bidder: &str, i: u32| BidRecord {
            persona: PersonaId { name: "pets".into(), kind: PersonaKind::Interest },
            iteration: i,
            site: "site.com".into(),
            slot_id: "s".into(),
            bidder: bidder.into(),
            cpm: 0.1,
            currency: "USD".into(),
            timestamp_ms: i as i64,
        };
        let bids: Vec<BidRecord> = [
            "Criteo", "Criteo", "PubMatic", "Magnite", // partners: 4 bids
            "OpenX", "OpenX", "Sovrn", "Sovrn", "Sovrn", // known non-partners
            "Mystery Exchange", // unmapped
        ]
        .iter()
        .enumerate()
        .map(|(i, b)| bid(b, i as u32 + 1))
        .collect();
        let partners: BTreeSet<String> =
            ["Criteo", "PubMatic", "Magnite"].iter().map(|s| s.to_string()).collect();
        let known: BTreeSet<String> = ["Criteo", "PubMatic", "Magnite", "OpenX", "Sovrn"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut warnings = Vec::new();
        let labeled = label_bidders(&bids, &partners, &known, &mut warnings);
        let partner_count =
            labeled.iter().filter(|l| l.label == PartnerLabel::Partner).count();
        assert_eq!(partner_count, 4);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("Mystery Exchange"));
    }

    #[test]
    fn graph_aggregates_edge_counts() {
        let mk = |value: &str, sender: &str, receiver: &str| SyncEvent {
            token: IdentifierToken {
                value: value.into(),
                origin_org: sender.into(),
                source: TokenSource::CookieValue,
                first_seen_ms: 0,
            },
            sender_org: sender.into(),
            receiver_org: receiver.into(),
            evidence_url: "http://x.example/".into(),
            timestamp_ms: 1,
        };
        let events =
            [mk("AAAAAAAA0001", "A", "B"), mk("CCCCCCCC0002", "A", "B"), mk("DDDDDDDD0003", "B", "A")];
        let graph = PartnerGraph::from_events(&events, "A");
        assert_eq!(graph.nodes.len(), 2);
        assert_eq!(graph.edges.len(), 2);
        let ab = graph.edges.iter().find(|e| e.sender_org == "A").unwrap();
        assert_eq!(ab.count, 2);
    }
}
