//! Deterministic sample dataset generator.
//!
//! `write_demo` materializes a complete, self-contained audit workspace:
//! the bundled reference data (ontologies, suffix snapshot, filter list,
//! lexicons, policies), a flow trace, a bid export, and a `config.json`
//! wiring them together. The dataset is synthetic but shaped like a real
//! capture: ten device personas (nine interest-primed plus a vanilla
//! control) run twelve skills, idle telemetry runs in the background, one
//! web-control twin browses ad-funded sites while identifier syncs fire,
//! and nineteen crawler identities submit header-bidding records.
//!
//! Everything is generated from fixed tables, so two invocations produce
//! byte-identical files and the full pipeline run over them is reproducible
//! down to the report bytes.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::bids::BidRecord;
use crate::bundled;
use crate::error::{AuditError, Result};
use crate::trace::{
    Direction, DnsQuery, FlowRecord, HttpEvent, HttpMethod, PersonaId, PersonaKind, Phase,
    Protocol,
};

pub const CONFIG_FILE: &str = "config.json";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const BIDS_FILE: &str = "bids.jsonl";

const BASE_MS: i64 = 1_700_000_000_000;
const PERSONA_SPACING_MS: i64 = 3_600_000;
const RESOLVER_IP: &str = "192.0.2.53";
/// Destination that never appears in any DNS answer or SNI, so its flows
/// exercise the unresolved bucket.
const UNRESOLVED_IP: &str = "203.0.113.250";

const AVS_HOST: &str = "avs-alexa-na.amazon.com";
const METRICS_HOST: &str = "device-metrics-us-2.amazon.com";
const PORTAL_HOST: &str = "fireoscaptiveportal.com";
/// Background platform endpoints every device keeps talking to while idle.
const IDLE_FUNCTIONAL_HOSTS: [&str; 5] = [
    "api.amazonalexa.com",
    "prod.amcs-tachyon.com",
    "device-messaging-na.amazon.com",
    "softwareupdates.amazon.com",
    "arcus-uswest.amazon.com",
];

struct SkillPlan {
    skill: &'static str,
    /// TLS exchanges with the voice service during the interaction.
    avs_tls: usize,
    /// Decrypted request bodies posted to the voice service.
    payloads: &'static [&'static str],
    /// Non-platform endpoints contacted during the interaction, with flow
    /// counts. Party and purpose fall out of classification, not out of
    /// this table.
    hosts: &'static [(&'static str, usize)],
}

struct PersonaPlan {
    name: &'static str,
    kind: PersonaKind,
    /// Platform flows in the idle session beyond the fixed telemetry.
    idle_functional: usize,
    skills: &'static [SkillPlan],
}

const PLANS: [PersonaPlan; 10] = [
    PersonaPlan {
        name: "connected_car",
        kind: PersonaKind::Interest,
        idle_functional: 789,
        skills: &[SkillPlan {
            skill: "garmin",
            avs_tls: 80,
            payloads: &[
                r#"{"customerId":"A2CARDEMO411"}"#,
                r#"{"customerId":"A2CARDEMO411","unit":"miles"}"#,
            ],
            hosts: &[
                ("static.garmincdn.com", 9),
                ("api.here.com", 6),
                ("traffic.inrix.com", 6),
                ("api.accuweather.com", 6),
                ("playerservices.streamtheworld.com", 6),
                ("cmod.streamtheworld.com", 6),
                ("np.tritondigital.com", 6),
                ("sep.tritondigital.com", 6),
                ("traffic.omny.fm", 6),
                ("dts.podtrac.com", 6),
                ("media.libsyn.com", 5),
            ],
        }],
    },
    PersonaPlan {
        name: "dating",
        kind: PersonaKind::Interest,
        idle_functional: 818,
        skills: &[SkillPlan {
            skill: "dating-tips",
            avs_tls: 70,
            payloads: &[
                r#"{"customerId":"A2DATEDEMO733"}"#,
                r#"{"customerId":"A2DATEDEMO733","topic":"first-date"}"#,
            ],
            hosts: &[
                ("api.spotify.com", 6),
                ("cdn.datingadvice.com", 6),
                ("quotes.theknot.com", 6),
                ("adx.megaphone.fm", 5),
                ("dts.podtrac.com", 5),
                ("tracking.chtbl.com", 5),
                ("stats.libsyn.com", 5),
                ("cmod.streamtheworld.com", 5),
            ],
        }],
    },
    PersonaPlan {
        name: "fashion_style",
        kind: PersonaKind::Interest,
        idle_functional: 738,
        skills: &[SkillPlan {
            skill: "fashion-daily",
            avs_tls: 100,
            payloads: &[
                r#"{"customerId":"A2FASHDEMO001"}"#,
                r#"{"customerId":"A2FASHDEMO001","list":"trends"}"#,
                r#"{"event":"AudioPlayer.PlaybackStarted","offsetMs":0}"#,
                r#"{"event":"AudioPlayer.PlaybackFinished","offsetMs":183000}"#,
                r#"{"customerId":"A2FASHDEMO001","event":"AudioPlayer.PlaybackNearlyFinished"}"#,
            ],
            hosts: &[
                ("api.spotify.com", 6),
                ("img.fashionwire.com", 6),
                ("rss.fashionwire.com", 6),
                ("api.stylefeed.io", 6),
                ("cdn.megaphone.fm", 6),
                ("adx.megaphone.fm", 6),
                ("traffic.megaphone.fm", 6),
                ("dts.podtrac.com", 6),
                ("redirect.podtrac.com", 6),
                ("mgln.chtbl.com", 6),
                ("tracking.chtbl.com", 6),
                ("media.libsyn.com", 6),
                ("stats.libsyn.com", 6),
            ],
        }],
    },
    PersonaPlan {
        name: "health_fitness",
        kind: PersonaKind::Interest,
        idle_functional: 853,
        skills: &[SkillPlan {
            skill: "health-coach",
            avs_tls: 60,
            payloads: &[
                r#"{"preferences":{"diet":"vegetarian","units":"metric"}}"#,
                r#"{"timezone":"America/Denver"}"#,
            ],
            hosts: &[
                ("api.edamam.com", 6),
                ("cdn.workoutlib.com", 6),
                ("api.nutritionix.com", 6),
            ],
        }],
    },
    PersonaPlan {
        name: "navigation",
        kind: PersonaKind::Interest,
        idle_functional: 864,
        skills: &[SkillPlan {
            skill: "trip-planner",
            avs_tls: 55,
            payloads: &[
                r#"{"timezone":"America/New_York"}"#,
                r#"{"timezone":"America/New_York","favorite":"coastal route"}"#,
            ],
            hosts: &[("tiles.openstreetmap.org", 6), ("api.mapbox.com", 6)],
        }],
    },
    PersonaPlan {
        name: "pets_animals",
        kind: PersonaKind::Interest,
        idle_functional: 748,
        skills: &[SkillPlan {
            skill: "pets-trivia",
            avs_tls: 90,
            payloads: &[
                r#"{"timezone":"America/Chicago"}"#,
                r#"{"customerId":"A2PETSDEMO902"}"#,
            ],
            hosts: &[
                ("api.npr.org", 6),
                ("ondemand.npr.org", 6),
                ("api.petfinder.com", 6),
                ("dts.podtrac.com", 5),
                ("mgln.chtbl.com", 5),
                ("play.podtrac.com", 5),
            ],
        }],
    },
    PersonaPlan {
        name: "religion_spirituality",
        kind: PersonaKind::Interest,
        idle_functional: 724,
        skills: &[
            SkillPlan {
                skill: "charles-stanley-radio",
                avs_tls: 50,
                payloads: &[
                    r#"{"event":"AudioPlayer.PlaybackStarted","stream":"oneplace-live"}"#,
                    r#"{"event":"AudioPlayer.PlaybackStopped","offsetMs":45000}"#,
                ],
                hosts: &[
                    ("api.biblegateway.com", 6),
                    ("img.biblegateway.com", 6),
                    ("media.lightcast.com", 6),
                    ("playerservices.streamtheworld.com", 5),
                    ("np.tritondigital.com", 5),
                    ("traffic.omny.fm", 5),
                ],
            },
            SkillPlan {
                skill: "bible",
                avs_tls: 40,
                payloads: &[
                    "RIFF2408WAVEfmt alexa-voice-capture segment=1",
                    "RIFF2408WAVEfmt alexa-voice-capture segment=2",
                    "RIFF2408WAVEfmt alexa-voice-capture segment=3",
                    "RIFF2408WAVEfmt alexa-voice-capture segment=4",
                ],
                hosts: &[("api.youversionapi.com", 4), ("cdn.youversionapi.com", 4)],
            },
            SkillPlan { skill: "prayer-time", avs_tls: 30, payloads: &[], hosts: &[] },
        ],
    },
    PersonaPlan {
        name: "smart_home",
        kind: PersonaKind::Interest,
        idle_functional: 843,
        skills: &[
            SkillPlan {
                skill: "sonos",
                avs_tls: 45,
                payloads: &[
                    "RIFF1764WAVEfmt alexa-voice-capture segment=1",
                    "RIFF1764WAVEfmt alexa-voice-capture segment=2",
                    "RIFF1764WAVEfmt alexa-voice-capture segment=3",
                ],
                hosts: &[("api.weatherhub.com", 6), ("time.ntppool.org", 6)],
            },
            SkillPlan { skill: "harmony", avs_tls: 30, payloads: &[], hosts: &[] },
        ],
    },
    PersonaPlan {
        name: "vanilla",
        kind: PersonaKind::Vanilla,
        idle_functional: 921,
        skills: &[],
    },
    PersonaPlan {
        name: "wine_beverages",
        kind: PersonaKind::Interest,
        idle_functional: 869,
        skills: &[SkillPlan {
            skill: "wine-expert",
            avs_tls: 50,
            payloads: &[
                r#"{"skillId":"wine-expert"}"#,
                r#"{"skillId":"wine-expert","query":"dry riesling"}"#,
            ],
            hosts: &[("api.winefacts.com", 6), ("cdn.cellarnotes.com", 6)],
        }],
    },
];

// ---------------------------------------------------------------------------
// Identifier-sharing crawl

const SYNC_HOSTS: [&str; 8] = [
    "criteo.com",
    "pubmatic.com",
    "magnite.com",
    "adform.net",
    "id5-sync.com",
    "sovrn.com",
    "amazon-adsystem.com",
    "openx.net",
];

/// (host, path, cookie name, token) for each identifier mint.
const MINTS: [(&str, &str, &str, &str); 6] = [
    ("criteo.com", "/sync", "uid", "CRTuid7743Xq"),
    ("pubmatic.com", "/pixel", "pm_uid", "PMuid88213Lk"),
    ("magnite.com", "/usync", "mg_uid", "MGuid55602Rv"),
    ("adform.net", "/cm", "af_id", "AFid90331Tz"),
    ("id5-sync.com", "/gm", "id5id", "ID5tok4417Pq"),
    ("sovrn.com", "/beacon", "ljtrtb", "SVRNtok2209Bd"),
];

/// (request host, URL, referer) for each token appearance after its mint.
/// The last row echoes a token back to its own origin and must not count as
/// a sharing event.
const CARRIES: [(&str, &str, Option<&str>); 7] = [
    ("amazon-adsystem.com", "https://amazon-adsystem.com/x/px?uid=CRTuid7743Xq", None),
    ("amazon-adsystem.com", "https://amazon-adsystem.com/x/px?uid=PMuid88213Lk", None),
    ("amazon-adsystem.com", "https://amazon-adsystem.com/x/px?uid=MGuid55602Rv", None),
    ("criteo.com", "https://criteo.com/cm?af=AFid90331Tz", None),
    ("criteo.com", "https://criteo.com/cm", Some("https://id5-sync.com/lp?cb=ID5tok4417Pq")),
    ("openx.net", "https://openx.net/px?sv=SVRNtok2209Bd", None),
    ("criteo.com", "https://criteo.com/rtus?uid=CRTuid7743Xq", None),
];

// ---------------------------------------------------------------------------
// Bids

const BID_SITES: [&str; 4] = ["espn.com", "foxnews.com", "tmz.com", "usatoday.com"];
const BID_SLOTS: [&str; 3] = ["div-gpt-ad-top", "div-gpt-ad-mid", "div-gpt-ad-rail"];
const BID_ITERATIONS: u32 = 5;
const BIDDERS: [&str; 6] = ["Criteo", "PubMatic", "Magnite", "OpenX", "Sovrn", "Index Exchange"];
/// Interest persona names; each also gets a web-control twin in the export.
const INTEREST_NAMES: [&str; 9] = [
    "connected_car",
    "dating",
    "fashion_style",
    "health_fitness",
    "navigation",
    "pets_animals",
    "religion_spirituality",
    "smart_home",
    "wine_beverages",
];

/// Control CPM distribution over the 60 common slot/iteration combinations:
/// median 0.030, mean 0.153.
fn vanilla_cpms() -> Vec<f64> {
    let mut v = Vec::with_capacity(60);
    for k in 0..10 {
        v.push((10 + k) as f64 / 1_000.0);
    }
    for k in 0..10 {
        v.push((20 + k) as f64 / 1_000.0);
    }
    v.extend(std::iter::repeat(0.030).take(11));
    for k in 0..10 {
        v.push((4 + k) as f64 / 100.0);
    }
    for k in 0..10 {
        v.push((15 + 2 * k) as f64 / 100.0);
    }
    v.extend([0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.70, 0.80, 0.86]);
    v
}

/// Elevated distribution: `lows` values just above the control median plus
/// `highs` values above the control maximum. More highs means a larger
/// rank-sum advantage over the control.
fn shifted_cpms(lows: usize, highs: usize) -> Vec<f64> {
    debug_assert_eq!(lows + highs, 60);
    let mut v = Vec::with_capacity(60);
    for k in 0..lows {
        v.push((311 + k) as f64 / 10_000.0);
    }
    for k in 0..highs {
        v.push((90 + k) as f64 / 100.0);
    }
    v
}

fn persona_cpms(name: &str) -> Vec<f64> {
    match name {
        "connected_car" => shifted_cpms(40, 20),
        "dating" => shifted_cpms(39, 21),
        "fashion_style" => shifted_cpms(38, 22),
        "pets_animals" => shifted_cpms(37, 23),
        "religion_spirituality" => shifted_cpms(36, 24),
        "navigation" => shifted_cpms(41, 19),
        // health_fitness, smart_home, wine_beverages: indistinguishable
        // from the control.
        _ => vanilla_cpms(),
    }
}

// ---------------------------------------------------------------------------
// Flow construction

/// Stable hostname-to-address assignment; every hostname gets its own
/// address so DNS evidence never conflicts.
#[derive(Default)]
struct Net {
    ips: BTreeMap<String, String>,
}

impl Net {
    fn ip(&mut self, host: &str) -> String {
        if let Some(ip) = self.ips.get(host) {
            return ip.clone();
        }
        let n = self.ips.len();
        assert!(n < 254, "demo address pool exhausted");
        let ip = format!("198.51.100.{}", n + 1);
        self.ips.insert(host.to_string(), ip.clone());
        ip
    }
}

struct SessionCtx<'a> {
    session_id: String,
    persona: PersonaId,
    skill: Option<&'a str>,
    phase: Phase,
}

fn base_record(ctx: &SessionCtx, ts: i64, dst_ip: &str, dst_port: u16, bytes: u64) -> FlowRecord {
    FlowRecord {
        session_id: ctx.session_id.clone(),
        persona: ctx.persona.clone(),
        skill_id: ctx.skill.map(str::to_string),
        phase: ctx.phase,
        timestamp_ms: ts,
        direction: Direction::Outbound,
        dst_ip: dst_ip.to_string(),
        dst_port,
        protocol: Protocol::Tls,
        sni: None,
        dns_query: None,
        http_event: None,
        byte_count: bytes,
    }
}

fn dns_flow(ctx: &SessionCtx, ts: i64, qname: &str, answer: &str) -> FlowRecord {
    let mut r = base_record(ctx, ts, RESOLVER_IP, 53, 120 + (qname.len() as u64));
    r.protocol = Protocol::Dns;
    r.dns_query = Some(DnsQuery { qname: qname.to_string(), answers: vec![answer.to_string()] });
    r
}

fn tls_flow(ctx: &SessionCtx, ts: i64, host: &str, ip: &str, bytes: u64) -> FlowRecord {
    let mut r = base_record(ctx, ts, ip, 443, bytes);
    r.sni = Some(host.to_string());
    r
}

fn http_flow(ctx: &SessionCtx, ts: i64, ip: &str, event: HttpEvent, bytes: u64) -> FlowRecord {
    let mut r = base_record(ctx, ts, ip, 443, bytes);
    r.protocol = Protocol::Http;
    r.http_event = Some(event);
    r
}

fn avs_payload(body: &str) -> HttpEvent {
    HttpEvent {
        method: HttpMethod::Post,
        url: format!("https://{AVS_HOST}/v20160207/events"),
        request_headers: vec![
            ("content-type".to_string(), "application/json".to_string()),
            ("user-agent".to_string(), "EchoDevice/6401".to_string()),
        ],
        set_cookies: Vec::new(),
        referer: None,
        body_excerpt: Some(body.to_string()),
    }
}

fn device_records(net: &mut Net) -> Vec<FlowRecord> {
    let mut records = Vec::new();
    for (pi, plan) in PLANS.iter().enumerate() {
        let base = BASE_MS + pi as i64 * PERSONA_SPACING_MS;
        let persona = PersonaId { name: plan.name.to_string(), kind: plan.kind };

        // Every endpoint this persona will contact, voice service first:
        // decrypted HTTP flows carry no SNI, so the voice host must be in
        // the DNS warm-up for them to resolve.
        let mut warmup: Vec<&str> = vec![AVS_HOST, METRICS_HOST, PORTAL_HOST];
        warmup.extend(IDLE_FUNCTIONAL_HOSTS);
        for sp in plan.skills {
            for (host, _) in sp.hosts {
                if !warmup.contains(host) {
                    warmup.push(host);
                }
            }
        }

        let idle = SessionCtx {
            session_id: format!("{}-idle-01", plan.name),
            persona: persona.clone(),
            skill: None,
            phase: Phase::Idle,
        };
        for k in 0..15 {
            let host = warmup[k % warmup.len()];
            let ip = net.ip(host);
            records.push(dns_flow(&idle, base + k as i64 * 500, host, &ip));
        }

        let mut ts = base + 20_000;
        let mut next_ts = || {
            let t = ts;
            ts += 50;
            t
        };
        for j in 0..70 {
            let ip = net.ip(METRICS_HOST);
            records.push(tls_flow(&idle, next_ts(), METRICS_HOST, &ip, 540 + (j % 4) * 130));
        }
        for j in 0..9 {
            let ip = net.ip(PORTAL_HOST);
            records.push(tls_flow(&idle, next_ts(), PORTAL_HOST, &ip, 360 + (j % 3) * 90));
        }
        for j in 0..plan.idle_functional {
            let host = IDLE_FUNCTIONAL_HOSTS[j % IDLE_FUNCTIONAL_HOSTS.len()];
            let ip = net.ip(host);
            records.push(tls_flow(&idle, next_ts(), host, &ip, 880 + (j as u64 % 7) * 210));
        }
        if plan.kind == PersonaKind::Vanilla {
            // Opaque traffic with no resolution evidence at all.
            for _ in 0..3 {
                records.push(base_record(&idle, next_ts(), UNRESOLVED_IP, 443, 1490));
            }
        }

        for (si, sp) in plan.skills.iter().enumerate() {
            let ctx = SessionCtx {
                session_id: format!("{}-{}-01", plan.name, sp.skill),
                persona: persona.clone(),
                skill: Some(sp.skill),
                phase: Phase::Interact,
            };
            let mut ts = base + 100_000 * (si as i64 + 1);
            let mut next_ts = || {
                let t = ts;
                ts += 50;
                t
            };
            let avs_ip = net.ip(AVS_HOST);
            for j in 0..sp.avs_tls {
                records.push(tls_flow(&ctx, next_ts(), AVS_HOST, &avs_ip, 2100 + (j as u64 % 5) * 260));
            }
            for body in sp.payloads {
                records.push(http_flow(
                    &ctx,
                    next_ts(),
                    &avs_ip,
                    avs_payload(body),
                    900 + body.len() as u64,
                ));
            }
            for (host, count) in sp.hosts {
                let ip = net.ip(host);
                for j in 0..*count {
                    records.push(tls_flow(&ctx, next_ts(), host, &ip, 640 + (j as u64 % 6) * 170));
                }
            }
        }
    }
    records
}

/// One web-control crawl session: the six identifier mints, their
/// cross-organization appearances, and a same-origin echo that must not be
/// flagged.
fn crawl_records(net: &mut Net) -> Vec<FlowRecord> {
    let mut records = Vec::new();
    let ctx = SessionCtx {
        session_id: "web-fashion_style-crawl-01".to_string(),
        persona: PersonaId { name: "fashion_style".to_string(), kind: PersonaKind::WebControl },
        skill: None,
        phase: Phase::Crawl,
    };
    let base = BASE_MS + PLANS.len() as i64 * PERSONA_SPACING_MS;
    for (k, host) in SYNC_HOSTS.iter().enumerate() {
        let ip = net.ip(host);
        records.push(dns_flow(&ctx, base + k as i64 * 500, host, &ip));
    }
    let mut ts = base + 10_000;
    for (host, path, cookie, token) in MINTS {
        let ip = net.ip(host);
        let event = HttpEvent {
            method: HttpMethod::Get,
            url: format!("https://{host}{path}"),
            request_headers: Vec::new(),
            set_cookies: vec![(
                cookie.to_string(),
                format!("{token}; Path=/; Max-Age=31536000"),
            )],
            referer: None,
            body_excerpt: None,
        };
        records.push(http_flow(&ctx, ts, &ip, event, 410));
        ts += 1_000;
    }
    for (host, url, referer) in CARRIES {
        let ip = net.ip(host);
        let event = HttpEvent {
            method: HttpMethod::Get,
            url: url.to_string(),
            request_headers: Vec::new(),
            set_cookies: Vec::new(),
            referer: referer.map(str::to_string),
            body_excerpt: None,
        };
        records.push(http_flow(&ctx, ts, &ip, event, 380));
        ts += 1_000;
    }
    records
}

/// Trace lines that must be skipped and reported: a truncated record and a
/// DNS record missing its query.
const MALFORMED_LINES: [&str; 2] = [
    r#"{"session_id":"corrupt-01","persona":{"name":"vanilla","#,
    r#"{"session_id":"corrupt-02","persona":{"name":"vanilla","kind":"vanilla"},"phase":"idle","timestamp_ms":1700000000000,"direction":"outbound","dst_ip":"192.0.2.53","dst_port":53,"protocol":"dns","byte_count":96}"#,
];

fn bid_records() -> Vec<BidRecord> {
    let mut personas: Vec<PersonaId> = Vec::new();
    for plan in &PLANS {
        personas.push(PersonaId { name: plan.name.to_string(), kind: plan.kind });
    }
    for name in INTEREST_NAMES {
        personas.push(PersonaId { name: name.to_string(), kind: PersonaKind::WebControl });
    }

    let mut bids = Vec::new();
    let bid_base = BASE_MS + 40 * PERSONA_SPACING_MS;
    for (pi, persona) in personas.iter().enumerate() {
        let cpms = persona_cpms(&persona.name);
        let mut c = 0usize;
        for site in BID_SITES {
            for slot in BID_SLOTS {
                for iteration in 1..=BID_ITERATIONS {
                    bids.push(BidRecord {
                        persona: persona.clone(),
                        iteration,
                        site: site.to_string(),
                        slot_id: slot.to_string(),
                        bidder: BIDDERS[c % BIDDERS.len()].to_string(),
                        cpm: cpms[c],
                        currency: "USD".to_string(),
                        timestamp_ms: bid_base + (pi * 60 + c) as i64 * 997,
                    });
                    c += 1;
                }
            }
        }
    }
    // One auction on a site only the control visited; the common-slot
    // intersection must drop it, and its bidder is not in the ontology.
    bids.push(BidRecord {
        persona: PersonaId { name: "vanilla".to_string(), kind: PersonaKind::Vanilla },
        iteration: 1,
        site: "nichesite.com".to_string(),
        slot_id: "div-gpt-ad-top".to_string(),
        bidder: "TradeLens Media".to_string(),
        cpm: 0.25,
        currency: "USD".to_string(),
        timestamp_ms: bid_base + 19 * 60 * 997,
    });
    bids
}

fn config_json() -> String {
    let config = serde_json::json!({
        "paths": {
            "traces": TRACES_FILE,
            "bids": BIDS_FILE,
            "policies": "policies",
            "org_ontology": "org_ontology.json",
            "data_ontology": "data_ontology.json",
            "public_suffix": "public_suffix.dat",
            "filter_lists": ["filter_list.txt"],
            "verb_lexicon": "verb_lexicon.txt",
            "entity_vague_terms": "entity_vague_terms.json",
            "payload_signatures": "payload_signatures.json",
            "skills": "skills.json",
            "gold_labels": "gold_labels.csv",
            "interest_snapshots": "interest_snapshots.json"
        },
        "platform_org": "Amazon"
    });
    let mut out = serde_json::to_string_pretty(&config).expect("static config serializes");
    out.push('\n');
    out
}

/// Writes the complete sample workspace into `dir` and returns the path of
/// its config file.
pub fn write_demo(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| AuditError::io(dir, e))?;
    bundled::write_all(dir)?;

    let mut net = Net::default();
    let traces_path = dir.join(TRACES_FILE);
    {
        let file = std::fs::File::create(&traces_path).map_err(|e| AuditError::io(&traces_path, e))?;
        let mut w = BufWriter::new(file);
        let fail = |e: std::io::Error| AuditError::io(&traces_path, e);
        for record in device_records(&mut net).iter().chain(crawl_records(&mut net).iter()) {
            let line = serde_json::to_string(record)
                .map_err(|e| AuditError::Internal(format!("demo trace serialization: {e}")))?;
            writeln!(w, "{line}").map_err(fail)?;
        }
        for line in MALFORMED_LINES {
            writeln!(w, "{line}").map_err(fail)?;
        }
        w.flush().map_err(fail)?;
    }

    let bids_path = dir.join(BIDS_FILE);
    {
        let file = std::fs::File::create(&bids_path).map_err(|e| AuditError::io(&bids_path, e))?;
        let mut w = BufWriter::new(file);
        let fail = |e: std::io::Error| AuditError::io(&bids_path, e);
        for bid in bid_records() {
            let line = serde_json::to_string(&bid)
                .map_err(|e| AuditError::Internal(format!("demo bid serialization: {e}")))?;
            writeln!(w, "{line}").map_err(fail)?;
        }
        w.flush().map_err(fail)?;
    }

    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, config_json()).map_err(|e| AuditError::io(&config_path, e))?;
    Ok(config_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AuditConfig;

    #[test]
    fn control_cpms_hit_the_published_marginals() {
        let mut values = vanilla_cpms();
        assert_eq!(values.len(), 60);
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = (values[29] + values[30]) / 2.0;
        let mean = values.iter().sum::<f64>() / 60.0;
        assert!((median - 0.030).abs() < 1e-12, "median {median}");
        assert!((mean - 0.153).abs() < 1e-9, "mean {mean}");
    }

    #[test]
    fn every_persona_distribution_has_sixty_bids() {
        let mut names: Vec<&str> = INTEREST_NAMES.to_vec();
        names.push("vanilla");
        for name in names {
            assert_eq!(persona_cpms(name).len(), 60, "{name}");
        }
    }

    #[test]
    fn planned_traffic_volume_is_exact() {
        let mut platform_functional = 0usize;
        let mut other = 0usize;
        for plan in &PLANS {
            platform_functional += plan.idle_functional;
            for sp in plan.skills {
                platform_functional += sp.avs_tls + sp.payloads.len();
                other += sp.hosts.iter().map(|(_, n)| n).sum::<usize>();
            }
        }
        assert_eq!(platform_functional, 8893);
        // Idle telemetry (79 x 10 personas) plus vendor and third-party
        // skill traffic completes the 10000 attributable flows.
        assert_eq!(790 + other, 1107);
        assert_eq!(platform_functional + 790 + other, 10_000);
    }

    #[test]
    fn demo_workspace_loads_and_counts_match() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = write_demo(dir.path()).unwrap();
        let cfg = AuditConfig::load(&config_path).unwrap();
        assert_eq!(cfg.platform_org, "Amazon");

        let traces = std::fs::read_to_string(dir.path().join(TRACES_FILE)).unwrap();
        // 10000 attributable + 3 unresolved + 150 lookup + 21 crawl flows,
        // plus two deliberately malformed lines.
        assert_eq!(traces.lines().count(), 10_176);

        let bids = std::fs::read_to_string(dir.path().join(BIDS_FILE)).unwrap();
        assert_eq!(bids.lines().count(), 19 * 60 + 1);
    }

    #[test]
    fn two_runs_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_demo(a.path()).unwrap();
        write_demo(b.path()).unwrap();
        for name in [TRACES_FILE, BIDS_FILE, CONFIG_FILE] {
            let left = std::fs::read(a.path().join(name)).unwrap();
            let right = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(left, right, "{name} differs between runs");
        }
    }
}
