//! Acceptance gate: the eight release criteria, one test per criterion.
//!
//! Each test prints a single `C<n> ...: PASS` line when it succeeds (visible
//! with `--nocapture`); a failed assertion fails the test, so the harness
//! output itself is the pass/fail line per criterion.

use std::collections::{BTreeSet, HashMap};
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spkaudit::bundled;
use spkaudit::demo;
use spkaudit::endpoint::{
    parse_filter_list, FilterRuleSet, OrgOntology, Party, Purpose, PurposeClassifier,
};
use spkaudit::policy::{
    validation_metrics, DataFlowTuple, DataOntology, EntityVagueTerms, LabeledTuple,
    PolicyAnalyzer, PolicyStore, Verdict, VerbLexicon, VERDICT_CLASSES,
};
use spkaudit::report::{canonical_json, round_to, run_pipeline, RunOptions};
use spkaudit::stats::{
    effect_size_label, exact_distribution, mann_whitney_one_sided, EffectSize, StatMethod,
};
use spkaudit::sync::{detect_syncs, extract_identifiers, partner_sets};
use spkaudit::trace::{
    Direction, FlowRecord, HttpEvent, HttpMethod, PersonaId, PersonaKind, Phase, Protocol,
};
use spkaudit::AuditConfig;

// ---------------------------------------------------------------------------
// C1: disclosure grading reproduces the bundled worked examples

#[test]
fn c1_policy_worked_examples() {
    let dir = tempfile::tempdir().unwrap();
    bundled::write_all(dir.path()).unwrap();
    let d = dir.path();

    let data = DataOntology::load(&d.join("data_ontology.json")).unwrap();
    let orgs = OrgOntology::load(&d.join("org_ontology.json")).unwrap();
    let verbs = VerbLexicon::load(&d.join("verb_lexicon.txt")).unwrap();
    let entity_terms = EntityVagueTerms::load(&d.join("entity_vague_terms.json")).unwrap();
    let store = PolicyStore::load(&d.join("policies")).unwrap();
    let analyzer = PolicyAnalyzer {
        data_ontology: &data,
        org_ontology: &orgs,
        verbs: &verbs,
        entity_terms: &entity_terms,
    };

    let tuple = |skill: &str, data_type: Option<&str>, entity: &str| DataFlowTuple {
        skill_id: skill.to_string(),
        data_type: data_type.map(str::to_string),
        entity: entity.to_string(),
    };
    let grade = |t: &DataFlowTuple| {
        let policy = store.effective_policy(&t.skill_id, false);
        analyzer.classify_disclosure(t, policy.as_ref())
    };

    // A voice recording sent to Amazon, named outright in the Sonos policy.
    let sonos = grade(&tuple("sonos", Some("voice_recording"), "Amazon"));
    assert_eq!(
        sonos.verdict,
        Verdict::Clear,
        "sonos <voice_recording, Amazon> graded {:?} via {:?}",
        sonos.verdict,
        sonos.matched_term
    );

    // Harmony only admits sending data to "an analytics tool"; Amazon is an
    // analytics provider, so the disclosure is vague, not clear.
    let harmony = grade(&tuple("harmony", None, "Amazon"));
    assert_eq!(
        harmony.verdict,
        Verdict::Vague,
        "harmony <*, Amazon> graded {:?} via {:?}",
        harmony.verdict,
        harmony.matched_term
    );

    // Charles Stanley Radio discloses only "external service providers";
    // traffic observed to Triton Digital is covered vaguely at best.
    let csr = grade(&tuple("charles-stanley-radio", None, "Triton Digital"));
    assert_eq!(
        csr.verdict,
        Verdict::Vague,
        "charles-stanley-radio <*, Triton Digital> graded {:?} via {:?}",
        csr.verdict,
        csr.matched_term
    );

    // prayer-time ships no policy at all.
    assert!(store.effective_policy("prayer-time", false).is_none());
    let none = grade(&tuple("prayer-time", None, "Triton Digital"));
    assert_eq!(none.verdict, Verdict::NoPolicy);

    println!("C1 policy worked-example fidelity: PASS (4/4 verdicts exact)");
}

// ---------------------------------------------------------------------------
// C2: Mann-Whitney against brute-force enumeration

/// Number of ways to pick treatment ranks out of `n1 + n2` pooled ranks,
/// per resulting U value, by walking every subset.
fn brute_force_counts(n1: usize, n2: usize) -> Vec<u64> {
    let n = n1 + n2;
    let mut counts = vec![0u64; n1 * n2 + 1];
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let rank_sum: usize = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| i + 1).sum();
        counts[rank_sum - n1 * (n1 + 1) / 2] += 1;
    }
    counts
}

#[test]
fn c2_mann_whitney_matches_brute_force() {
    let started = Instant::now();

    // Exhaustive: every rank assignment for every tie-free size pair up to
    // 6x6. Treatment values are the assigned ranks themselves.
    let mut exhaustive_cases = 0usize;
    for n1 in 1..=6usize {
        for n2 in 1..=6usize {
            let n = n1 + n2;
            let counts = brute_force_counts(n1, n2);
            assert_eq!(
                exact_distribution(n1, n2),
                counts,
                "null distribution mismatch at n1={n1} n2={n2}"
            );
            let total: f64 = counts.iter().map(|&c| c as f64).sum();

            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != n1 {
                    continue;
                }
                let treatment: Vec<f64> =
                    (0..n).filter(|i| mask & (1 << i) != 0).map(|i| (i + 1) as f64).collect();
                let control: Vec<f64> =
                    (0..n).filter(|i| mask & (1 << i) == 0).map(|i| (i + 1) as f64).collect();
                let r = mann_whitney_one_sided(&treatment, &control, 36).unwrap();
                assert_eq!(r.method, StatMethod::Exact);

                let u = r.u_statistic.round() as usize;
                assert!((r.u_statistic - u as f64).abs() < 1e-9);
                let tail: f64 = counts[u..].iter().map(|&c| c as f64).sum();
                let expected = tail / total;
                assert!(
                    (r.p_value - expected).abs() < 1e-12,
                    "p mismatch at n1={n1} n2={n2} u={u}: {} vs brute force {}",
                    r.p_value,
                    expected
                );
                exhaustive_cases += 1;
            }
        }
    }

    // 1,000 random tie-free samples at n1 = n2 = 20: the normal
    // approximation must sit within 0.01 of the exact tail, the effect size
    // must stay in [-1, 1] and flip its sign when the samples swap roles.
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut max_gap = 0.0f64;
    for _ in 0..1000 {
        let mut values: Vec<f64> = (0..40).map(|k| k as f64 * 1.5 + 0.25).collect();
        values.shuffle(&mut rng);
        let (treatment, control) = values.split_at(20);

        let exact = mann_whitney_one_sided(treatment, control, 400).unwrap();
        let normal = mann_whitney_one_sided(treatment, control, 0).unwrap();
        assert_eq!(exact.method, StatMethod::Exact);
        assert_eq!(normal.method, StatMethod::NormalApprox);
        let gap = (exact.p_value - normal.p_value).abs();
        assert!(gap <= 0.01, "normal vs exact gap {gap} at U={}", exact.u_statistic);
        max_gap = max_gap.max(gap);

        assert!((-1.0..=1.0).contains(&exact.effect_size_r));
        let swapped = mann_whitney_one_sided(control, treatment, 400).unwrap();
        assert!(
            (swapped.effect_size_r + exact.effect_size_r).abs() < 1e-12,
            "effect size did not flip sign under swap"
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "statistics suite took {elapsed:?}");
    println!(
        "C2 Mann-Whitney correctness: PASS ({exhaustive_cases} exhaustive assignments, \
         1000 random samples, max |exact-normal| gap {max_gap:.5}, {elapsed:?})"
    );
}

// ---------------------------------------------------------------------------
// C3: effect-size bands at their boundaries

#[test]
fn c3_effect_size_boundaries() {
    let cases = [
        (0.1099, EffectSize::Negligible),
        (0.11, EffectSize::Small),
        (0.2799, EffectSize::Small),
        (0.28, EffectSize::Medium),
        (0.4299, EffectSize::Medium),
        (0.43, EffectSize::Large),
    ];
    for (r, expected) in cases {
        assert_eq!(effect_size_label(r), expected, "label for r={r}");
        assert_eq!(effect_size_label(-r), expected, "label for r={}", -r);
    }
    println!("C3 effect-size boundary labels: PASS (6/6 boundaries, both signs)");
}

// ---------------------------------------------------------------------------
// C4: the demo dataset reproduces its frozen headline numbers

#[test]
fn c4_demo_table_reproduction() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = demo::write_demo(dir.path()).unwrap();
    let cfg = AuditConfig::load(&config_path).unwrap();
    let report = run_pipeline(&cfg, &RunOptions::default()).unwrap();

    let traffic = report.traffic.as_ref().expect("traffic section");
    let platform_functional = traffic
        .party_purpose
        .iter()
        .find(|c| c.party == Party::Platform && c.purpose == Purpose::Functional)
        .expect("platform/functional cell");
    assert_eq!(
        platform_functional.pct, 88.93,
        "platform-functional share was {}",
        platform_functional.pct
    );
    let ats_total = traffic
        .purpose_totals
        .iter()
        .find(|t| t.purpose == Purpose::AdvertisingTracking)
        .expect("ats total row");
    assert_eq!(ats_total.pct, 9.4, "total ATS share was {}", ats_total.pct);

    let bids = report.bids.as_ref().expect("bids section");
    let vanilla = bids
        .per_persona
        .iter()
        .find(|r| r.persona == "vanilla" && r.kind == PersonaKind::Vanilla)
        .expect("vanilla persona row");
    assert_eq!(vanilla.median_cpm, 0.030, "vanilla median was {}", vanilla.median_cpm);
    assert_eq!(vanilla.mean_cpm, 0.153, "vanilla mean was {}", vanilla.mean_cpm);

    assert_eq!(bids.comparisons.len(), 9, "expected 9 treatment personas");
    let significant: Vec<_> = bids.comparisons.iter().filter(|c| c.significant).collect();
    assert_eq!(
        significant.len(),
        6,
        "significant treatments: {:?}",
        bids.comparisons
            .iter()
            .filter(|c| c.significant)
            .map(|c| c.treatment.as_str())
            .collect::<Vec<_>>()
    );
    for row in &significant {
        assert!(row.p_value < 0.05, "{} p={}", row.treatment, row.p_value);
        assert_eq!(
            row.size_label,
            EffectSize::Medium,
            "{} r={} labeled {:?}",
            row.treatment,
            row.effect_size_r,
            row.size_label
        );
    }

    println!(
        "C4 demo table reproduction: PASS (platform-functional 88.93%, ATS 9.4%, \
         vanilla 0.030/0.153, 6 of 9 treatments significant in the medium band)"
    );
}

// ---------------------------------------------------------------------------
// C5: sync detection on planted chains, decoys, and noise

fn crawl_http_flow(ts: i64, url: &str, set_cookies: &[(&str, &str)]) -> FlowRecord {
    FlowRecord {
        session_id: "planted-crawl-01".into(),
        persona: PersonaId { name: "planted".into(), kind: PersonaKind::WebControl },
        skill_id: None,
        phase: Phase::Crawl,
        timestamp_ms: ts,
        direction: Direction::Outbound,
        protocol: Protocol::Http,
        dst_ip: "198.51.100.77".into(),
        dst_port: 443,
        byte_count: 320,
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
            referer: None,
            body_excerpt: None,
        }),
    }
}

#[test]
fn c5_sync_detection_planted_chains() {
    let org_of = |host: &str| -> String {
        let stem = host.strip_suffix(".example").unwrap_or(host);
        if stem == "focus" {
            "FocusOrg".to_string()
        } else if let Some(idx) = stem.strip_prefix("mint-") {
            format!("Mint-{idx}")
        } else if stem == "decoy-a" || stem == "decoy-b" {
            "DecoyOrg".to_string()
        } else {
            host.to_string()
        }
    };

    let mut flows = Vec::new();
    let mut expected: BTreeSet<(String, String, String)> = BTreeSet::new();

    // 25 planted chains: each mints a cookie identifier at one org and later
    // carries it in a request URL to a different org. Chains 0-9 hit the
    // focus org directly; chains 10-24 hit one of those direct partners.
    for i in 0..25usize {
        let value = format!("plantedtoken{i:02}qq");
        flows.push(crawl_http_flow(
            1_000 + i as i64,
            &format!("https://mint-{i:02}.example/init"),
            &[("uid", &format!("{value}; Path=/; Secure"))],
        ));
        let (carry_url, receiver) = if i < 10 {
            (format!("https://focus.example/pixel?uid={value}"), "FocusOrg".to_string())
        } else {
            let hub = i % 10;
            (
                format!("https://mint-{hub:02}.example/match?partner_uid={value}"),
                format!("Mint-{hub:02}"),
            )
        };
        flows.push(crawl_http_flow(5_000 + i as i64, &carry_url, &[]));
        expected.insert((value, format!("Mint-{i:02}"), receiver));
    }

    // 50 decoys: the identifier travels between two hosts of the same
    // organization, which is not a sync.
    for j in 0..50usize {
        let value = format!("decoyvalue{j:02}zz");
        flows.push(crawl_http_flow(
            2_000 + j as i64,
            "https://decoy-a.example/set",
            &[("did", &value)],
        ));
        flows.push(crawl_http_flow(
            6_000 + j as i64,
            &format!("https://decoy-b.example/sync?u={value}"),
            &[],
        ));
    }

    // 200 noise parameters: unique values that never reappear anywhere else.
    for k in 0..200usize {
        flows.push(crawl_http_flow(
            7_000 + k as i64,
            &format!("https://noise-{k:03}.example/collect?sid=noisevalue{k:03}ww"),
            &[],
        ));
    }

    let tokens = extract_identifiers(&flows, 8, org_of);
    assert_eq!(tokens.len(), 25 + 50 + 200, "token gate admitted {}", tokens.len());

    let events = detect_syncs(&tokens, &flows, org_of);
    let detected: BTreeSet<(String, String, String)> = events
        .iter()
        .map(|e| (e.token.value.clone(), e.sender_org.clone(), e.receiver_org.clone()))
        .collect();
    assert_eq!(detected.len(), events.len(), "duplicate events");
    let false_positives: Vec<_> = detected.difference(&expected).collect();
    let misses: Vec<_> = expected.difference(&detected).collect();
    assert!(false_positives.is_empty(), "precision < 1.0: {false_positives:?}");
    assert!(misses.is_empty(), "recall < 1.0: {misses:?}");

    let mut warnings = Vec::new();
    let sets = partner_sets(&events, "FocusOrg", &mut warnings);
    assert!(warnings.is_empty(), "{warnings:?}");
    assert_eq!(sets.direct_partners.len(), 10, "direct: {:?}", sets.direct_partners);
    assert_eq!(sets.second_hop.len(), 15, "second hop: {:?}", sets.second_hop);
    assert!(sets.direct_partners.iter().all(|o| o.starts_with("Mint-0")));
    assert!(!sets.second_hop.contains("FocusOrg"));

    println!(
        "C5 sync detection: PASS (25/25 planted chains, 0 of 50 decoys, \
         0 of 200 noise params; partners 10 direct + 15 second-hop)"
    );
}

// ---------------------------------------------------------------------------
// C6: filter rules match on equality or label-aligned suffix only

#[test]
fn c6_filter_matching_semantics() {
    // Deliberately collision-prone vocabulary: "xads.com" must not match the
    // rule "ads.com" even though it is a string suffix.
    const LABELS: [&str; 8] = ["ads", "track", "cdn", "beacon", "img", "xads", "ytrack", "a"];
    const TLDS: [&str; 3] = ["com", "net", "io"];
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6);

    let random_name = |rng: &mut ChaCha8Rng, max_labels: usize| {
        let n = rng.gen_range(1..=max_labels);
        let mut parts: Vec<&str> =
            (0..n).map(|_| LABELS[rng.gen_range(0..LABELS.len())]).collect();
        parts.push(TLDS[rng.gen_range(0..TLDS.len())]);
        parts.join(".")
    };

    let rules: Vec<String> = {
        let mut set = BTreeSet::new();
        while set.len() < 100 {
            set.insert(random_name(&mut rng, 2));
        }
        set.into_iter().collect()
    };

    // The rules file must round-trip through the parser.
    let dir = tempfile::tempdir().unwrap();
    let list_path = dir.path().join("random_rules.txt");
    let mut text = String::from("# generated domain rules\n");
    for r in &rules {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(&list_path, text).unwrap();
    let parsed = parse_filter_list(&list_path).unwrap();
    assert_eq!(parsed.rules.len(), rules.len());

    let single_rule: HashMap<&str, PurposeClassifier> = parsed
        .rules
        .iter()
        .map(|rule| {
            let set = FilterRuleSet {
                source: "single".to_string(),
                rules: vec![rule.clone()],
            };
            (rule.pattern.as_str(), PurposeClassifier::compile(&[set], &[]))
        })
        .collect();
    let all_rules = PurposeClassifier::compile(&[parsed.clone()], &[]);

    let mut violations = 0usize;
    let mut matches = 0usize;
    for _ in 0..10_000 {
        let host = random_name(&mut rng, 4);
        let rule = &rules[rng.gen_range(0..rules.len())];
        let expected = host == *rule || host.ends_with(&format!(".{rule}"));

        let classifier = &single_rule[rule.as_str()];
        if classifier.matches_block_rule(&host) != expected {
            violations += 1;
        }
        let purpose = if expected { Purpose::AdvertisingTracking } else { Purpose::Functional };
        if classifier.classify(&host) != purpose {
            violations += 1;
        }
        // The combined classifier is the disjunction over all rules.
        let any = rules.iter().any(|r| host == *r || host.ends_with(&format!(".{r}")));
        if all_rules.matches_block_rule(&host) != any {
            violations += 1;
        }
        matches += expected as usize;
    }
    assert_eq!(violations, 0, "{violations} violations in 10000 pairs");
    assert!(matches > 0, "vocabulary produced no positive pairs");

    println!(
        "C6 filter matching semantics: PASS (10000 hostname/rule pairs, \
         {matches} positives, 0 violations)"
    );
}

// ---------------------------------------------------------------------------
// C7: validation metrics

/// Builds predicted/gold label lists realizing `matrix[gold][pred]` counts
/// over distinct tuples.
fn labels_from_matrix(case: usize, matrix: &[[u64; 4]; 4]) -> (Vec<LabeledTuple>, Vec<LabeledTuple>) {
    let mut predicted = Vec::new();
    let mut gold = Vec::new();
    for (g, row) in matrix.iter().enumerate() {
        for (p, &count) in row.iter().enumerate() {
            for k in 0..count {
                let tuple = DataFlowTuple {
                    skill_id: format!("case-{case}"),
                    data_type: None,
                    entity: format!("entity-{g}-{p}-{k}"),
                };
                gold.push(LabeledTuple { tuple: tuple.clone(), verdict: VERDICT_CLASSES[g] });
                predicted.push(LabeledTuple { tuple, verdict: VERDICT_CLASSES[p] });
            }
        }
    }
    (predicted, gold)
}

#[test]
fn c7_validation_metrics() {
    // Identity: on single-label data, micro precision equals micro recall
    // (both are accuracy), on 100 random confusion matrices.
    let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
    for case in 0..100usize {
        let mut matrix = [[0u64; 4]; 4];
        for row in matrix.iter_mut() {
            for cell in row.iter_mut() {
                *cell = rng.gen_range(0..7);
            }
        }
        if matrix.iter().flatten().sum::<u64>() == 0 {
            matrix[0][0] = 1;
        }
        let (predicted, gold) = labels_from_matrix(case, &matrix);
        let metrics = validation_metrics(&predicted, &gold).unwrap();
        assert_eq!(metrics.confusion, matrix, "case {case} confusion mismatch");
        assert!(
            metrics.micro_precision == metrics.micro_recall
                && metrics.micro_recall == metrics.micro_f1,
            "case {case}: micro P/R/F1 diverged"
        );
    }

    // Hand-computed matrix, rows = gold, columns = predicted, class order
    // [clear, vague, omitted, no_policy]:
    //   clear:     P 3/4          R 3/4   F1 0.75
    //   vague:     P 2/4          R 2/3   F1 4/7
    //   omitted:   P 4/5          R 4/5   F1 0.8
    //   no_policy: P 3/3          R 3/4   F1 6/7
    //   macro P 0.7625, macro R 0.7417, macro F1 0.7446; micro 12/16.
    let matrix = [[3, 1, 0, 0], [0, 2, 1, 0], [1, 0, 4, 0], [0, 1, 0, 3]];
    let (predicted, gold) = labels_from_matrix(999, &matrix);
    let metrics = validation_metrics(&predicted, &gold).unwrap();
    assert_eq!(metrics.n, 16);
    assert_eq!(metrics.micro_precision, 0.75);
    assert_eq!(round_to(metrics.macro_precision, 4), 0.7625);
    assert_eq!(round_to(metrics.macro_recall, 4), 0.7417);
    assert_eq!(round_to(metrics.macro_f1, 4), 0.7446);

    println!(
        "C7 validation metrics: PASS (micro P = R on 100 random matrices; \
         hand matrix macro P/R/F1 = 0.7625/0.7417/0.7446)"
    );
}

// ---------------------------------------------------------------------------
// C8: scale and determinism

const BULK_PERSONAS: [(&str, PersonaKind, Option<&str>); 10] = [
    ("connected_car", PersonaKind::Interest, Some("garmin")),
    ("dating", PersonaKind::Interest, Some("dating-tips")),
    ("fashion_style", PersonaKind::Interest, Some("fashion-daily")),
    ("health_fitness", PersonaKind::Interest, Some("health-coach")),
    ("navigation", PersonaKind::Interest, Some("trip-planner")),
    ("pets_animals", PersonaKind::Interest, Some("pets-trivia")),
    ("religion_spirituality", PersonaKind::Interest, Some("charles-stanley-radio")),
    ("smart_home", PersonaKind::Interest, Some("sonos")),
    ("vanilla", PersonaKind::Vanilla, None),
    ("wine_beverages", PersonaKind::Interest, Some("wine-expert")),
];

const BULK_HOSTS: [&str; 20] = [
    "avs-alexa-na.amazon.com",
    "device-metrics-us-2.amazon.com",
    "todo-ta-g7g.amazon.com",
    "api.garmin.com",
    "static.garmincdn.com",
    "cdn.fashiondaily.net",
    "api.matchword.io",
    "api.fitcoach.app",
    "maps.trailmaps.net",
    "api.pettrivialabs.com",
    "streams.intouch.org",
    "api.sonos.com",
    "api.corknotes.com",
    "cdn.megaphone.fm",
    "dts.podtrac.com",
    "ingest.chtbl.com",
    "traffic.libsyn.com",
    "live.streamtheworld.com",
    "tags.tritondigital.com",
    "cdn.omny.fm",
];

fn bulk_ip(host: &str) -> String {
    let idx = BULK_HOSTS.iter().position(|h| *h == host).expect("pool host");
    format!("198.51.100.{}", 30 + idx)
}

/// 100,000 records: 10 personas x 10 sessions x 1,000 flows. Mostly TLS with
/// SNI evidence, a sprinkle of DNS and bare HTTP per session.
fn write_bulk_trace(path: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let file = std::fs::File::create(path).unwrap();
    let mut w = std::io::BufWriter::new(file);

    for (p, (name, kind, skill)) in BULK_PERSONAS.iter().enumerate() {
        for s in 0..10usize {
            let session_id = format!("{name}-bulk-{s:02}");
            let (skill_id, phase) = if s == 9 {
                (None, Phase::Idle)
            } else {
                (skill.map(str::to_string), Phase::Interact)
            };
            let base = 1_700_000_000_000i64 + p as i64 * 3_600_000 + s as i64 * 120_000;
            let session_host = BULK_HOSTS[(p * 10 + s) % BULK_HOSTS.len()];

            for k in 0..1_000usize {
                let ts = base + k as i64 * 7 + rng.gen_range(0..5);
                let mut record = FlowRecord {
                    session_id: session_id.clone(),
                    persona: PersonaId { name: name.to_string(), kind: *kind },
                    skill_id: skill_id.clone(),
                    phase,
                    timestamp_ms: ts,
                    direction: Direction::Outbound,
                    protocol: Protocol::Tls,
                    dst_ip: String::new(),
                    dst_port: 443,
                    byte_count: rng.gen_range(180..3800),
                    sni: None,
                    dns_query: None,
                    http_event: None,
                };
                match k {
                    0 | 1 => {
                        let host = if k == 0 { BULK_HOSTS[0] } else { session_host };
                        record.protocol = Protocol::Dns;
                        record.dst_ip = "192.0.2.53".to_string();
                        record.dst_port = 53;
                        record.dns_query = Some(spkaudit::trace::DnsQuery {
                            qname: host.to_string(),
                            answers: vec![bulk_ip(host)],
                        });
                    }
                    2 | 3 => {
                        record.protocol = Protocol::Http;
                        record.dst_ip = bulk_ip(session_host);
                        record.dst_port = 80;
                        record.http_event = Some(HttpEvent {
                            method: HttpMethod::Get,
                            url: format!("http://{session_host}/ping/{s}/{k}"),
                            request_headers: vec![],
                            set_cookies: vec![],
                            referer: None,
                            body_excerpt: None,
                        });
                    }
                    _ => {
                        let roll: u32 = rng.gen_range(0..100);
                        let host = if roll < 55 {
                            BULK_HOSTS[0]
                        } else if roll < 75 {
                            BULK_HOSTS[1]
                        } else if roll < 88 {
                            session_host
                        } else {
                            BULK_HOSTS[rng.gen_range(13..BULK_HOSTS.len())]
                        };
                        record.dst_ip = bulk_ip(host);
                        record.sni = Some(host.to_string());
                    }
                }
                let line = serde_json::to_string(&record).unwrap();
                writeln!(w, "{line}").unwrap();
            }
        }
    }
    w.flush().unwrap();
}

#[test]
fn c8_determinism_and_scale() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = demo::write_demo(dir.path()).unwrap();
    write_bulk_trace(&dir.path().join(demo::TRACES_FILE), 0xC8);

    let started = Instant::now();
    let cfg = AuditConfig::load(&config_path).unwrap();
    let report = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let first = canonical_json(&report).unwrap();
    let elapsed = started.elapsed();

    let ingest = report.ingest.as_ref().expect("ingest section");
    assert_eq!(ingest.total_lines, 100_000);
    assert_eq!(ingest.accepted, 100_000);
    assert_eq!(ingest.sessions, 100);
    assert!(
        elapsed < Duration::from_secs(10),
        "full audit over 100k flows took {elapsed:?}"
    );

    let cfg2 = AuditConfig::load(&config_path).unwrap();
    let report2 = run_pipeline(&cfg2, &RunOptions::default()).unwrap();
    let second = canonical_json(&report2).unwrap();
    assert!(first == second, "canonical reports differ between identical runs");

    println!(
        "C8 determinism and scale: PASS (100000 flows audited in {elapsed:?}, \
         two runs byte-identical, {} bytes of canonical report)",
        first.len()
    );
}
