//! Disclosure auditing: checks observed `<data type, entity>` flows against
//! privacy-policy text and grades each as clear, vague, omitted, or
//! no_policy; also computes validation metrics against hand labels and the
//! interest-profile timeline diff.
//!
//! ## Sentence splitter
//!
//! Policy text is normalized by collapsing every whitespace run (including
//! CRLF) to a single space. Sentences split after `.`, `!`, or `?` when
//! followed by one space and an ASCII uppercase letter, except when the
//! token ending in `.` is a known abbreviation or a single-letter initial.
//! Joining the sentences back with single spaces reproduces the normalized
//! text exactly.
//!
//! ## Grading rules
//!
//! A sentence is considered only if it contains a collection/sharing verb
//! from the verb lexicon and no negation cue ("we do not share..." is not a
//! disclosure). For a tuple with a data type, a sentence naming a synonym of
//! the data type itself is clear; naming only a broader (non-generic)
//! ancestor is vague. For an entity-only tuple, naming the organization
//! exactly is clear; naming a generic third-party term, or a category term
//! matching the organization's categories, is vague. The first clear
//! sentence in document order wins; otherwise the first vague sentence;
//! otherwise the flow is omitted. A missing policy is no_policy.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::endpoint::{EndpointIntel, OrgCategory, OrgOntology, UNKNOWN_ORG};
use crate::error::{AuditError, Result};
use crate::sync::host_of;
use crate::trace::{PersonaId, Phase, Protocol, Resolution, SkillSession};

/// One observed data flow to be checked against a policy. `data_type` is
/// absent for encrypted-only traffic, where only the endpoint is knowable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataFlowTuple {
    pub skill_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_type: Option<String>,
    pub entity: String,
}

/// Ranked worst (no_policy) to best (clear); `max` picks the clearest.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NoPolicy,
    Omitted,
    Vague,
    Clear,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::NoPolicy => "no_policy",
            Verdict::Omitted => "omitted",
            Verdict::Vague => "vague",
            Verdict::Clear => "clear",
        }
    }
}

/// Report/tabulation order, clearest first.
pub const VERDICT_CLASSES: [Verdict; 4] =
    [Verdict::Clear, Verdict::Vague, Verdict::Omitted, Verdict::NoPolicy];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisclosureVerdict {
    pub tuple: DataFlowTuple,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence_sentence: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_term: Option<String>,
}

// ---------------------------------------------------------------------------
// Data-type ontology

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataNode {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Generic umbrella terms ("personal information") are too broad to
    /// count even as vague; generic nodes are skipped during matching.
    #[serde(default)]
    pub generic: bool,
    pub synonyms: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DataOntology {
    nodes: BTreeMap<String, DataNode>,
}

impl DataOntology {
    pub fn load(path: &Path) -> Result<DataOntology> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        let nodes: Vec<DataNode> = serde_json::from_str(&text).map_err(|e| AuditError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        DataOntology::from_nodes(nodes)
    }

    pub fn from_nodes(nodes: Vec<DataNode>) -> Result<DataOntology> {
        let mut map = BTreeMap::new();
        for mut node in nodes {
            for syn in &mut node.synonyms {
                *syn = syn.to_lowercase();
            }
            let name = node.name.clone();
            if map.insert(node.name.clone(), node).is_some() {
                return Err(AuditError::Invariant(format!(
                    "data ontology defines node {name:?} more than once"
                )));
            }
        }
        let ontology = DataOntology { nodes: map };
        for node in ontology.nodes.values() {
            if let Some(parent) = &node.parent {
                if !ontology.nodes.contains_key(parent) {
                    return Err(AuditError::Invariant(format!(
                        "data ontology node {:?} references missing parent {parent:?}",
                        node.name
                    )));
                }
            }
            // Walk to the root; revisiting a name means a cycle.
            let mut seen = BTreeSet::from([node.name.as_str()]);
            let mut cursor = node.parent.as_deref();
            while let Some(name) = cursor {
                if !seen.insert(name) {
                    return Err(AuditError::Invariant(format!(
                        "data ontology contains a cycle through {name:?}"
                    )));
                }
                cursor = ontology.nodes.get(name).and_then(|n| n.parent.as_deref());
            }
        }
        Ok(ontology)
    }

    pub fn node(&self, name: &str) -> Option<&DataNode> {
        self.nodes.get(name)
    }

    /// A leaf has no children.
    pub fn is_leaf(&self, name: &str) -> bool {
        self.nodes.contains_key(name)
            && !self.nodes.values().any(|n| n.parent.as_deref() == Some(name))
    }

    pub fn leaves(&self) -> BTreeSet<&str> {
        self.nodes.keys().map(|k| k.as_str()).filter(|k| self.is_leaf(k)).collect()
    }

    /// Strict ancestors, nearest first.
    pub fn ancestors(&self, name: &str) -> Vec<&DataNode> {
        let mut out = Vec::new();
        let mut cursor = self.nodes.get(name).and_then(|n| n.parent.as_deref());
        while let Some(parent) = cursor {
            let Some(node) = self.nodes.get(parent) else { break };
            out.push(node);
            cursor = node.parent.as_deref();
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Lexicons

#[derive(Debug, Clone)]
pub struct VerbLexicon {
    verbs: Vec<String>,
}

impl VerbLexicon {
    pub fn load(path: &Path) -> Result<VerbLexicon> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        let lexicon = VerbLexicon::from_lines(&text);
        if lexicon.verbs.is_empty() {
            return Err(AuditError::Config(format!(
                "verb lexicon {} contains no verbs",
                path.display()
            )));
        }
        Ok(lexicon)
    }

    /// One verb or verb phrase per line; `#` starts a comment.
    pub fn from_lines(text: &str) -> VerbLexicon {
        let verbs = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        VerbLexicon { verbs }
    }

    pub fn sentence_has_verb(&self, sentence_lower: &str) -> bool {
        self.verbs.iter().any(|v| contains_phrase(sentence_lower, v))
    }
}

/// Vague vocabulary for entity-mode grading: `generic` terms apply to any
/// organization; `by_category` terms apply only when the organization holds
/// that category.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityVagueTerms {
    pub generic: Vec<String>,
    #[serde(default)]
    pub by_category: BTreeMap<OrgCategory, Vec<String>>,
}

impl EntityVagueTerms {
    pub fn load(path: &Path) -> Result<EntityVagueTerms> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        let mut terms: EntityVagueTerms =
            serde_json::from_str(&text).map_err(|e| AuditError::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                reason: e.to_string(),
            })?;
        for t in &mut terms.generic {
            *t = t.to_lowercase();
        }
        for list in terms.by_category.values_mut() {
            for t in list {
                *t = t.to_lowercase();
            }
        }
        Ok(terms)
    }
}

/// A sentence carrying any of these reads as a denial, not a disclosure.
const NEGATION_CUES: [&str; 8] =
    ["do not", "does not", "don't", "doesn't", "never", "will not", "won't", "no longer"];

/// Case-folded phrase match with word boundaries: the match may not be
/// flanked by ASCII alphanumerics. Both arguments must already be lowercase.
pub(crate) fn contains_phrase(haystack_lower: &str, needle_lower: &str) -> bool {
    if needle_lower.is_empty() {
        return false;
    }
    let hay = haystack_lower.as_bytes();
    let mut start = 0;
    while let Some(pos) = haystack_lower[start..].find(needle_lower) {
        let abs = start + pos;
        let end = abs + needle_lower.len();
        let before_ok = abs == 0 || !hay[abs - 1].is_ascii_alphanumeric();
        let after_ok = end == hay.len() || !hay[end].is_ascii_alphanumeric();
        if before_ok && after_ok {
            return true;
        }
        // Advance one character so overlapping occurrences are not skipped.
        start = abs
            + haystack_lower[abs..].chars().next().map(|c| c.len_utf8()).unwrap_or(1);
    }
    false
}

// ---------------------------------------------------------------------------
// Policy documents

pub const PLATFORM_POLICY_STEM: &str = "platform";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyDocument {
    pub skill_id: String,
    /// Whitespace-normalized text; `sentences` partition it.
    pub text: String,
    pub sentences: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    pub includes_platform_policy: bool,
}

impl PolicyDocument {
    pub fn from_text(skill_id: &str, raw: &str) -> PolicyDocument {
        let text = normalize_text(raw);
        let sentences = split_sentences(&text);
        PolicyDocument {
            skill_id: skill_id.to_string(),
            text,
            sentences,
            source_url: None,
            includes_platform_policy: false,
        }
    }
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn normalize_text(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

const ABBREVIATIONS: [&str; 21] = [
    "e.g.", "i.e.", "etc.", "cf.", "vs.", "inc.", "ltd.", "llc.", "co.", "corp.", "mr.", "mrs.",
    "ms.", "dr.", "jr.", "sr.", "st.", "no.", "u.s.", "u.k.", "u.s.a.",
];

/// Splits normalized text into sentences; see the module docs for the exact
/// rule. Joining the result with single spaces reproduces the input.
pub fn split_sentences(normalized: &str) -> Vec<String> {
    let bytes = normalized.as_bytes();
    let mut sentences = Vec::new();
    let mut sentence_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if matches!(b, b'.' | b'!' | b'?')
            && i + 2 < bytes.len()
            && bytes[i + 1] == b' '
            && bytes[i + 2].is_ascii_uppercase()
        {
            let splits = if b == b'.' {
                let token_start = normalized[sentence_start..=i]
                    .rfind(' ')
                    .map(|p| sentence_start + p + 1)
                    .unwrap_or(sentence_start);
                let token = normalized[token_start..=i].to_lowercase();
                let initial = token.len() == 2 && token.as_bytes()[0].is_ascii_alphabetic();
                !initial && !ABBREVIATIONS.contains(&token.as_str())
            } else {
                true
            };
            if splits {
                sentences.push(normalized[sentence_start..=i].to_string());
                sentence_start = i + 2;
                i += 2;
                continue;
            }
        }
        i += 1;
    }
    if sentence_start < normalized.len() {
        sentences.push(normalized[sentence_start..].to_string());
    }
    sentences
}

#[derive(Debug, Default)]
pub struct PolicyStore {
    pub skill_policies: BTreeMap<String, PolicyDocument>,
    pub platform: Option<PolicyDocument>,
}

impl PolicyStore {
    /// Loads every `<skill_id>.txt` in a directory; `platform.txt` is the
    /// platform's own policy, used when audits include it.
    pub fn load(dir: &Path) -> Result<PolicyStore> {
        let entries = std::fs::read_dir(dir).map_err(|e| AuditError::io(dir, e))?;
        let mut store = PolicyStore::default();
        let mut paths: Vec<_> = entries
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| AuditError::io(dir, e))?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let raw = std::fs::read_to_string(&path).map_err(|e| AuditError::io(&path, e))?;
            let doc = PolicyDocument::from_text(stem, &raw);
            if stem == PLATFORM_POLICY_STEM {
                store.platform = Some(doc);
            } else {
                store.skill_policies.insert(stem.to_string(), doc);
            }
        }
        Ok(store)
    }

    /// The document a skill is audited against: its own policy, with the
    /// platform policy's sentences appended when included. Returns None only
    /// when neither document exists.
    pub fn effective_policy(
        &self,
        skill_id: &str,
        include_platform: bool,
    ) -> Option<PolicyDocument> {
        let skill = self.skill_policies.get(skill_id);
        let platform = if include_platform { self.platform.as_ref() } else { None };
        match (skill, platform) {
            (Some(s), Some(p)) => {
                let mut merged = s.clone();
                if !merged.text.is_empty() && !p.text.is_empty() {
                    merged.text.push(' ');
                }
                merged.text.push_str(&p.text);
                merged.sentences.extend(p.sentences.iter().cloned());
                merged.includes_platform_policy = true;
                Some(merged)
            }
            (Some(s), None) => Some(s.clone()),
            (None, Some(p)) => Some(PolicyDocument {
                skill_id: skill_id.to_string(),
                text: p.text.clone(),
                sentences: p.sentences.clone(),
                source_url: p.source_url.clone(),
                includes_platform_policy: true,
            }),
            (None, None) => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Classification

pub struct PolicyAnalyzer<'a> {
    pub data_ontology: &'a DataOntology,
    pub org_ontology: &'a OrgOntology,
    pub verbs: &'a VerbLexicon,
    pub entity_terms: &'a EntityVagueTerms,
}

impl PolicyAnalyzer<'_> {
    /// Grades one flow against one (possibly absent) policy document. Total:
    /// every input yields a verdict.
    pub fn classify_disclosure(
        &self,
        tuple: &DataFlowTuple,
        policy: Option<&PolicyDocument>,
    ) -> DisclosureVerdict {
        let Some(policy) = policy else {
            return DisclosureVerdict {
                tuple: tuple.clone(),
                verdict: Verdict::NoPolicy,
                evidence_sentence: None,
                matched_term: None,
            };
        };
        let mut first_vague: Option<(String, String)> = None;
        for sentence in &policy.sentences {
            let lower = sentence.to_lowercase();
            if NEGATION_CUES.iter().any(|cue| contains_phrase(&lower, cue)) {
                continue;
            }
            if !self.verbs.sentence_has_verb(&lower) {
                continue;
            }
            match self.grade_sentence(tuple, &lower) {
                Some((Verdict::Clear, term)) => {
                    return DisclosureVerdict {
                        tuple: tuple.clone(),
                        verdict: Verdict::Clear,
                        evidence_sentence: Some(sentence.clone()),
                        matched_term: Some(term),
                    };
                }
                Some((Verdict::Vague, term)) => {
                    first_vague.get_or_insert((sentence.clone(), term));
                }
                _ => {}
            }
        }
        match first_vague {
            Some((sentence, term)) => DisclosureVerdict {
                tuple: tuple.clone(),
                verdict: Verdict::Vague,
                evidence_sentence: Some(sentence),
                matched_term: Some(term),
            },
            None => DisclosureVerdict {
                tuple: tuple.clone(),
                verdict: Verdict::Omitted,
                evidence_sentence: None,
                matched_term: None,
            },
        }
    }

    fn grade_sentence(&self, tuple: &DataFlowTuple, lower: &str) -> Option<(Verdict, String)> {
        match &tuple.data_type {
            Some(data_type) => {
                let node = self.data_ontology.node(data_type)?;
                for syn in &node.synonyms {
                    if contains_phrase(lower, syn) {
                        return Some((Verdict::Clear, syn.clone()));
                    }
                }
                for ancestor in self.data_ontology.ancestors(data_type) {
                    if ancestor.generic {
                        continue;
                    }
                    for syn in &ancestor.synonyms {
                        if contains_phrase(lower, syn) {
                            return Some((Verdict::Vague, syn.clone()));
                        }
                    }
                }
                None
            }
            None => {
                if tuple.entity != UNKNOWN_ORG
                    && contains_phrase(lower, &tuple.entity.to_lowercase())
                {
                    return Some((Verdict::Clear, tuple.entity.clone()));
                }
                for term in &self.entity_terms.generic {
                    if contains_phrase(lower, term) {
                        return Some((Verdict::Vague, term.clone()));
                    }
                }
                if let Some(org) = self.org_ontology.org_by_name(&tuple.entity) {
                    for category in &org.categories {
                        let Some(terms) = self.entity_terms.by_category.get(category) else {
                            continue;
                        };
                        for term in terms {
                            if contains_phrase(lower, term) {
                                return Some((Verdict::Vague, term.clone()));
                            }
                        }
                    }
                }
                None
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Per-skill audit

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DisclosureSummary {
    pub clear: u64,
    pub vague: u64,
    pub omitted: u64,
    pub no_policy: u64,
}

impl DisclosureSummary {
    pub fn add(&mut self, verdict: Verdict) {
        match verdict {
            Verdict::Clear => self.clear += 1,
            Verdict::Vague => self.vague += 1,
            Verdict::Omitted => self.omitted += 1,
            Verdict::NoPolicy => self.no_policy += 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SkillAudit {
    pub skill_id: String,
    pub include_platform_policy: bool,
    pub verdicts: Vec<DisclosureVerdict>,
    pub summary: DisclosureSummary,
}

/// Grades a skill's observed flows against its effective policy. Tuples
/// belonging to other skills are ignored.
pub fn audit_skill(
    analyzer: &PolicyAnalyzer,
    skill_id: &str,
    tuples: &[DataFlowTuple],
    store: &PolicyStore,
    include_platform_policy: bool,
) -> SkillAudit {
    let policy = store.effective_policy(skill_id, include_platform_policy);
    let mut verdicts = Vec::new();
    let mut summary = DisclosureSummary::default();
    for tuple in tuples.iter().filter(|t| t.skill_id == skill_id) {
        let verdict = analyzer.classify_disclosure(tuple, policy.as_ref());
        summary.add(verdict.verdict);
        verdicts.push(verdict);
    }
    SkillAudit {
        skill_id: skill_id.to_string(),
        include_platform_policy: include_platform_policy && store.platform.is_some(),
        verdicts,
        summary,
    }
}

// ---------------------------------------------------------------------------
// Validation metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTuple {
    pub tuple: DataFlowTuple,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationMetrics {
    pub n: usize,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Rows = actual, columns = predicted, class order [`VERDICT_CLASSES`].
    pub confusion: [[u64; 4]; 4],
}

fn class_index(v: Verdict) -> usize {
    VERDICT_CLASSES.iter().position(|c| *c == v).expect("every verdict is a class")
}

fn tuple_map(labeled: &[LabeledTuple], which: &str) -> Result<BTreeMap<DataFlowTuple, Verdict>> {
    let mut map = BTreeMap::new();
    for l in labeled {
        if map.insert(l.tuple.clone(), l.verdict).is_some() {
            return Err(AuditError::Invariant(format!(
                "{which} labels list tuple <{}, {:?}, {}> more than once",
                l.tuple.skill_id, l.tuple.data_type, l.tuple.entity
            )));
        }
    }
    Ok(map)
}

/// Four-class single-label metrics. Micro precision, recall, and F1 all
/// equal accuracy on single-label input; macro averages are unweighted means
/// over the classes that actually occur in the gold labels.
pub fn validation_metrics(
    predicted: &[LabeledTuple],
    gold: &[LabeledTuple],
) -> Result<ValidationMetrics> {
    let predicted = tuple_map(predicted, "predicted")?;
    let gold = tuple_map(gold, "gold")?;
    if gold.is_empty() {
        return Err(AuditError::MissingInput {
            stage: "policy".into(),
            what: "gold labels for validation".into(),
        });
    }
    if predicted.len() != gold.len() || !predicted.keys().eq(gold.keys()) {
        let example = gold
            .keys()
            .find(|k| !predicted.contains_key(*k))
            .or_else(|| predicted.keys().find(|k| !gold.contains_key(*k)));
        return Err(AuditError::Invariant(format!(
            "predicted and gold tuple sets differ ({} predicted, {} gold; e.g. <{}>)",
            predicted.len(),
            gold.len(),
            example
                .map(|t| format!("{}, {:?}, {}", t.skill_id, t.data_type, t.entity))
                .unwrap_or_default()
        )));
    }

    let mut confusion = [[0u64; 4]; 4];
    for (tuple, gold_verdict) in &gold {
        let predicted_verdict = predicted[tuple];
        confusion[class_index(*gold_verdict)][class_index(predicted_verdict)] += 1;
    }

    let total: u64 = confusion.iter().flatten().sum();
    let diag: u64 = (0..4).map(|i| confusion[i][i]).sum();
    let micro = diag as f64 / total as f64;

    let mut macro_p = 0.0;
    let mut macro_r = 0.0;
    let mut macro_f1 = 0.0;
    let mut present = 0usize;
    for c in 0..4 {
        let row: u64 = confusion[c].iter().sum();
        if row == 0 {
            continue; // class absent from gold: excluded from the macro mean
        }
        present += 1;
        let col: u64 = (0..4).map(|r| confusion[r][c]).sum();
        let tp = confusion[c][c] as f64;
        let p = if col == 0 { 0.0 } else { tp / col as f64 };
        let r = tp / row as f64;
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        macro_p += p;
        macro_r += r;
        macro_f1 += f1;
    }
    let present = present as f64;

    Ok(ValidationMetrics {
        n: total as usize,
        micro_precision: micro,
        micro_recall: micro,
        micro_f1: micro,
        macro_precision: macro_p / present,
        macro_recall: macro_r / present,
        macro_f1: macro_f1 / present,
        confusion,
    })
}

/// Gold labels: CSV with header `skill_id,data_type,entity,verdict`; an
/// empty data_type means an entity-only tuple.
pub fn load_gold_labels(path: &Path) -> Result<Vec<LabeledTuple>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => AuditError::io(path, io),
        other => AuditError::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("{other:?}"),
        },
    })?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| AuditError::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |reason: String| AuditError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        if record.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, got {}", record.len())));
        }
        let data_type = record[1].trim();
        let verdict = match record[3].trim() {
            "clear" => Verdict::Clear,
            "vague" => Verdict::Vague,
            "omitted" => Verdict::Omitted,
            "no_policy" => Verdict::NoPolicy,
            other => return Err(parse_err(format!("unknown verdict {other:?}"))),
        };
        out.push(LabeledTuple {
            tuple: DataFlowTuple {
                skill_id: record[0].trim().to_string(),
                data_type: (!data_type.is_empty()).then(|| data_type.to_string()),
                entity: record[2].trim().to_string(),
            },
            verdict,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Interest-profile snapshots

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RequestLabel {
    #[serde(rename = "post_install")]
    PostInstall,
    #[serde(rename = "post_interact_1")]
    PostInteract1,
    #[serde(rename = "post_interact_2")]
    PostInteract2,
}

impl RequestLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestLabel::PostInstall => "post_install",
            RequestLabel::PostInteract1 => "post_interact_1",
            RequestLabel::PostInteract2 => "post_interact_2",
        }
    }
}

/// One advertising-interest profile fetch. A request the platform answered
/// with no file at all has `file_present = false`, which is distinct from an
/// empty interest list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterestSnapshot {
    pub persona: PersonaId,
    pub request_label: RequestLabel,
    #[serde(default)]
    pub interests: BTreeSet<String>,
    pub file_present: bool,
}

pub fn load_interest_snapshots(path: &Path) -> Result<Vec<InterestSnapshot>> {
    let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    let snapshots: Vec<InterestSnapshot> =
        serde_json::from_str(&text).map_err(|e| AuditError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
    let mut seen = BTreeSet::new();
    for snap in &snapshots {
        if !snap.file_present && !snap.interests.is_empty() {
            return Err(AuditError::Parse {
                path: path.to_path_buf(),
                line: 0,
                reason: format!(
                    "snapshot {}/{} has file_present=false but lists interests",
                    snap.persona.name,
                    snap.request_label.as_str()
                ),
            });
        }
        if !seen.insert((snap.persona.clone(), snap.request_label)) {
            return Err(AuditError::Parse {
                path: path.to_path_buf(),
                line: 0,
                reason: format!(
                    "duplicate snapshot for {}/{}",
                    snap.persona.name,
                    snap.request_label.as_str()
                ),
            });
        }
    }
    Ok(snapshots)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterestStep {
    pub request_label: RequestLabel,
    /// The most recent earlier request whose file existed; differences are
    /// computed against it. None for the first present snapshot.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compared_to: Option<RequestLabel>,
    /// The file was absent at this request; never reported as removals.
    pub missing: bool,
    pub interests: BTreeSet<String>,
    pub added: BTreeSet<String>,
    pub removed: BTreeSet<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterestTimeline {
    pub persona: PersonaId,
    pub steps: Vec<InterestStep>,
}

/// Per-persona interest evolution across the three profile requests.
pub fn diff_interests(snapshots: &[InterestSnapshot]) -> Vec<InterestTimeline> {
    let mut by_persona: BTreeMap<PersonaId, Vec<&InterestSnapshot>> = BTreeMap::new();
    for snap in snapshots {
        by_persona.entry(snap.persona.clone()).or_default().push(snap);
    }
    by_persona
        .into_iter()
        .map(|(persona, mut snaps)| {
            snaps.sort_by_key(|s| s.request_label);
            let mut steps = Vec::with_capacity(snaps.len());
            let mut last_present: Option<&InterestSnapshot> = None;
            for snap in snaps {
                if !snap.file_present {
                    steps.push(InterestStep {
                        request_label: snap.request_label,
                        compared_to: None,
                        missing: true,
                        interests: BTreeSet::new(),
                        added: BTreeSet::new(),
                        removed: BTreeSet::new(),
                    });
                    continue;
                }
                let (compared_to, added, removed) = match last_present {
                    None => (None, BTreeSet::new(), BTreeSet::new()),
                    Some(prev) => (
                        Some(prev.request_label),
                        snap.interests.difference(&prev.interests).cloned().collect(),
                        prev.interests.difference(&snap.interests).cloned().collect(),
                    ),
                };
                steps.push(InterestStep {
                    request_label: snap.request_label,
                    compared_to,
                    missing: false,
                    interests: snap.interests.clone(),
                    added,
                    removed,
                });
                last_present = Some(snap);
            }
            InterestTimeline { persona, steps }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Flow extraction

/// Payload signatures mapping traffic evidence to data-type leaves:
/// `body_prefix` keys match the start of a body excerpt (container magic),
/// `key_name` keys match field names anywhere in the body (word-bounded,
/// case-insensitive), `body_contains` keys match verbatim.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadSignatures {
    #[serde(default)]
    pub body_prefix: BTreeMap<String, String>,
    #[serde(default)]
    pub key_name: BTreeMap<String, String>,
    #[serde(default)]
    pub body_contains: BTreeMap<String, String>,
}

impl PayloadSignatures {
    pub fn load(path: &Path, ontology: &DataOntology) -> Result<PayloadSignatures> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        let signatures: PayloadSignatures =
            serde_json::from_str(&text).map_err(|e| AuditError::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                reason: e.to_string(),
            })?;
        for data_type in signatures
            .body_prefix
            .values()
            .chain(signatures.key_name.values())
            .chain(signatures.body_contains.values())
        {
            if !ontology.is_leaf(data_type) {
                return Err(AuditError::Config(format!(
                    "payload signature targets {data_type:?}, which is not a data-ontology leaf"
                )));
            }
        }
        Ok(signatures)
    }

    pub fn detect(&self, body: &str) -> BTreeSet<String> {
        let mut found = BTreeSet::new();
        for (prefix, data_type) in &self.body_prefix {
            if body.starts_with(prefix) {
                found.insert(data_type.clone());
            }
        }
        let lower = body.to_lowercase();
        for (key, data_type) in &self.key_name {
            if contains_phrase(&lower, &key.to_lowercase()) {
                found.insert(data_type.clone());
            }
        }
        for (needle, data_type) in &self.body_contains {
            if body.contains(needle) {
                found.insert(data_type.clone());
            }
        }
        found
    }
}

/// Derives the distinct flow tuples of every skill session. With payload
/// evidence enabled, HTTP bodies matching a signature yield typed tuples and
/// bodies matching nothing yield no tuple; payload-less traffic yields
/// entity-only tuples. With it disabled, everything is entity-only. DNS
/// flows and flows without a resolvable endpoint produce nothing.
pub fn extract_flows(
    sessions: &[SkillSession],
    resolution: &Resolution,
    intel: &EndpointIntel,
    signatures: &PayloadSignatures,
    unencrypted: bool,
) -> Vec<DataFlowTuple> {
    let mut tuples = BTreeSet::new();
    for (i, session) in sessions.iter().enumerate() {
        let Some(skill_id) = &session.skill_id else { continue };
        for (j, flow) in session.flows.iter().enumerate() {
            if flow.protocol == Protocol::Dns || flow.phase == Phase::Crawl {
                continue;
            }
            let host = flow
                .http_event
                .as_ref()
                .and_then(|h| host_of(&h.url))
                .or_else(|| resolution.flow_hosts[i][j].clone());
            let Some(host) = host else { continue };
            let entity = intel.verdict(&host, Some(skill_id)).org_name;

            let body = flow.http_event.as_ref().and_then(|h| h.body_excerpt.as_deref());
            match body {
                Some(body) if unencrypted => {
                    for data_type in signatures.detect(body) {
                        tuples.insert(DataFlowTuple {
                            skill_id: skill_id.clone(),
                            data_type: Some(data_type),
                            entity: entity.clone(),
                        });
                    }
                }
                _ => {
                    tuples.insert(DataFlowTuple {
                        skill_id: skill_id.clone(),
                        data_type: None,
                        entity,
                    });
                }
            }
        }
    }
    tuples.into_iter().collect()
}
