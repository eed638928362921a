//! Audit configuration: one JSON file plus CLI flag overrides.
//!
//! Relative paths inside the file are resolved against the directory the
//! config file lives in, so a dataset directory can be moved or checked in
//! wholesale. Flags always win over file values; defaults are documented on
//! each field and surfaced in `--help`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub paths: Paths,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub distribution: DistributionConfig,
    #[serde(default)]
    pub slots: SlotsConfig,
    #[serde(default)]
    pub sync: SyncConfig,
    #[serde(default)]
    pub stats: StatsConfig,
    /// Organization treated as the platform operator when assigning parties.
    #[serde(default = "default_platform_org")]
    pub platform_org: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Flow trace JSONL. Required by the ingest stage.
    pub traces: Option<PathBuf>,
    /// Bid export JSONL. Required by the bids stage.
    pub bids: Option<PathBuf>,
    /// Directory of `<skill_id>.txt` policy files; `platform.txt` is the
    /// platform operator's policy.
    pub policies: Option<PathBuf>,
    /// Organization ontology (JSON array of {org_name, domains, categories}).
    pub org_ontology: Option<PathBuf>,
    /// Data-type ontology with per-node synonym lists (JSON).
    pub data_ontology: Option<PathBuf>,
    /// Public-suffix snapshot used for registered-domain extraction.
    pub public_suffix: Option<PathBuf>,
    /// Filter lists (hosts-style or bare-domain), applied in order.
    #[serde(default)]
    pub filter_lists: Vec<PathBuf>,
    /// Purpose overrides that win over filter-list classification.
    pub purpose_overrides: Option<PathBuf>,
    /// Collection/sharing verb lexicon, one phrase per line.
    pub verb_lexicon: Option<PathBuf>,
    /// Vague entity terms (generic and per-category), JSON.
    pub entity_vague_terms: Option<PathBuf>,
    /// Payload signatures for data-type extraction, JSON.
    pub payload_signatures: Option<PathBuf>,
    /// Skill registry: vendor organization and domains per skill id, JSON.
    pub skills: Option<PathBuf>,
    /// Gold disclosure labels CSV for validation (optional).
    pub gold_labels: Option<PathBuf>,
    /// Interest-profile snapshots, one JSON array (optional).
    pub interest_snapshots: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    /// HTTP body excerpts are truncated to this many bytes at ingest.
    #[serde(default = "default_body_excerpt_max")]
    pub body_excerpt_max: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { body_excerpt_max: default_body_excerpt_max() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    Flows,
    Bytes,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionConfig {
    /// Whether traffic percentages weight each flow equally or by bytes.
    #[serde(default = "default_weight")]
    pub weight: Weight,
}

impl Default for DistributionConfig {
    fn default() -> Self {
        DistributionConfig { weight: default_weight() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKey {
    #[serde(rename = "site+slot")]
    SiteSlot,
    #[serde(rename = "site+slot+iteration")]
    SiteSlotIteration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotsConfig {
    /// Ad-slot identity used when intersecting slots across personas.
    #[serde(default = "default_slot_key")]
    pub key: SlotKey,
}

impl Default for SlotsConfig {
    fn default() -> Self {
        SlotsConfig { key: default_slot_key() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncConfig {
    /// Minimum length for a cookie or query value to count as an identifier.
    #[serde(default = "default_min_id_length")]
    pub min_id_length: usize,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig { min_id_length: default_min_id_length() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    /// Exact Mann-Whitney distribution is used while n1*n2 stays at or under
    /// this cutoff and the pooled sample is tie-free.
    #[serde(default = "default_exact_cutoff")]
    pub exact_cutoff: usize,
    /// Divide the significance level by the number of comparisons.
    #[serde(default)]
    pub bonferroni: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { exact_cutoff: default_exact_cutoff(), bonferroni: false }
    }
}

fn default_platform_org() -> String {
    "Amazon".to_string()
}

fn default_body_excerpt_max() -> usize {
    4096
}

fn default_weight() -> Weight {
    Weight::Flows
}

fn default_slot_key() -> SlotKey {
    SlotKey::SiteSlot
}

fn default_min_id_length() -> usize {
    8
}

fn default_exact_cutoff() -> usize {
    400
}

impl AuditConfig {
    /// Loads a config file, resolves relative paths against its directory,
    /// and validates that every referenced path exists.
    pub fn load(path: &Path) -> Result<AuditConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        let mut cfg: AuditConfig = serde_json::from_str(&text)
            .map_err(|e| AuditError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.paths.resolve_relative(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sync.min_id_length == 0 {
            return Err(AuditError::Config("sync.min_id_length must be at least 1".into()));
        }
        if self.platform_org.trim().is_empty() {
            return Err(AuditError::Config("platform_org must be non-empty".into()));
        }
        for (name, p) in self.paths.referenced() {
            if !p.exists() {
                return Err(AuditError::Config(format!(
                    "paths.{name}: {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

impl Paths {
    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        for p in [
            &mut self.traces,
            &mut self.bids,
            &mut self.policies,
            &mut self.org_ontology,
            &mut self.data_ontology,
            &mut self.public_suffix,
            &mut self.purpose_overrides,
            &mut self.verb_lexicon,
            &mut self.entity_vague_terms,
            &mut self.payload_signatures,
            &mut self.skills,
            &mut self.gold_labels,
            &mut self.interest_snapshots,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for p in &mut self.filter_lists {
            fix(p);
        }
    }

    /// Every configured path with its config-file key, for validation and
    /// input fingerprinting.
    pub fn referenced(&self) -> Vec<(String, &PathBuf)> {
        let named: [(&str, &Option<PathBuf>); 13] = [
            ("traces", &self.traces),
            ("bids", &self.bids),
            ("policies", &self.policies),
            ("org_ontology", &self.org_ontology),
            ("data_ontology", &self.data_ontology),
            ("public_suffix", &self.public_suffix),
            ("purpose_overrides", &self.purpose_overrides),
            ("verb_lexicon", &self.verb_lexicon),
            ("entity_vague_terms", &self.entity_vague_terms),
            ("payload_signatures", &self.payload_signatures),
            ("skills", &self.skills),
            ("gold_labels", &self.gold_labels),
            ("interest_snapshots", &self.interest_snapshots),
        ];
        let mut out: Vec<(String, &PathBuf)> = named
            .into_iter()
            .filter_map(|(name, p)| p.as_ref().map(|p| (name.to_string(), p)))
            .collect();
        for (i, p) in self.filter_lists.iter().enumerate() {
            out.push((format!("filter_lists[{i}]"), p));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let cfg: AuditConfig =
            serde_json::from_str(r#"{"paths": {}}"#).expect("minimal config parses");
        assert_eq!(cfg.ingest.body_excerpt_max, 4096);
        assert_eq!(cfg.distribution.weight, Weight::Flows);
        assert_eq!(cfg.slots.key, SlotKey::SiteSlot);
        assert_eq!(cfg.sync.min_id_length, 8);
        assert_eq!(cfg.stats.exact_cutoff, 400);
        assert!(!cfg.stats.bonferroni);
        assert_eq!(cfg.platform_org, "Amazon");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<AuditConfig>(r#"{"paths": {}, "typo": 1}"#);
        assert!(err.is_err());
    }

    #[test]
    fn missing_path_fails_validation() {
        let cfg: AuditConfig = serde_json::from_str(
            r#"{"paths": {"traces": "/definitely/not/here.jsonl"}}"#,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("traces"));
    }
}
