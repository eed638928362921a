//! Reference data compiled into the binary: organization and data-type
//! ontologies, a public-suffix snapshot, an advertising/tracking filter
//! list, grading lexicons, payload signatures, a skill registry, and the
//! policy texts the demo dataset is audited against.
//!
//! The files live under `data/` in the crate source and are embedded with
//! `include_str!`, so the toolkit works offline with no setup. `write_all`
//! materializes them into a dataset directory; the `demo` subcommand calls
//! it and then adds generated traces and bids alongside.

use std::path::Path;

use crate::error::{AuditError, Result};

pub const PUBLIC_SUFFIX: &str = include_str!("../data/public_suffix.dat");
pub const ORG_ONTOLOGY: &str = include_str!("../data/org_ontology.json");
pub const DATA_ONTOLOGY: &str = include_str!("../data/data_ontology.json");
pub const FILTER_LIST: &str = include_str!("../data/filter_list.txt");
pub const VERB_LEXICON: &str = include_str!("../data/verb_lexicon.txt");
pub const ENTITY_VAGUE_TERMS: &str = include_str!("../data/entity_vague_terms.json");
pub const PAYLOAD_SIGNATURES: &str = include_str!("../data/payload_signatures.json");
pub const SKILLS: &str = include_str!("../data/skills.json");
pub const GOLD_LABELS: &str = include_str!("../data/gold_labels.csv");
pub const INTEREST_SNAPSHOTS: &str = include_str!("../data/interest_snapshots.json");

/// One embedded file and the path it takes inside a dataset directory.
pub struct BundledFile {
    pub relative_path: &'static str,
    pub contents: &'static str,
}

pub const FILES: &[BundledFile] = &[
    BundledFile { relative_path: "public_suffix.dat", contents: PUBLIC_SUFFIX },
    BundledFile { relative_path: "org_ontology.json", contents: ORG_ONTOLOGY },
    BundledFile { relative_path: "data_ontology.json", contents: DATA_ONTOLOGY },
    BundledFile { relative_path: "filter_list.txt", contents: FILTER_LIST },
    BundledFile { relative_path: "verb_lexicon.txt", contents: VERB_LEXICON },
    BundledFile { relative_path: "entity_vague_terms.json", contents: ENTITY_VAGUE_TERMS },
    BundledFile { relative_path: "payload_signatures.json", contents: PAYLOAD_SIGNATURES },
    BundledFile { relative_path: "skills.json", contents: SKILLS },
    BundledFile { relative_path: "gold_labels.csv", contents: GOLD_LABELS },
    BundledFile { relative_path: "interest_snapshots.json", contents: INTEREST_SNAPSHOTS },
    BundledFile {
        relative_path: "policies/platform.txt",
        contents: include_str!("../data/policies/platform.txt"),
    },
    BundledFile {
        relative_path: "policies/sonos.txt",
        contents: include_str!("../data/policies/sonos.txt"),
    },
    BundledFile {
        relative_path: "policies/harmony.txt",
        contents: include_str!("../data/policies/harmony.txt"),
    },
    BundledFile {
        relative_path: "policies/charles-stanley-radio.txt",
        contents: include_str!("../data/policies/charles-stanley-radio.txt"),
    },
    BundledFile {
        relative_path: "policies/bible.txt",
        contents: include_str!("../data/policies/bible.txt"),
    },
    BundledFile {
        relative_path: "policies/garmin.txt",
        contents: include_str!("../data/policies/garmin.txt"),
    },
    BundledFile {
        relative_path: "policies/fashion-daily.txt",
        contents: include_str!("../data/policies/fashion-daily.txt"),
    },
    BundledFile {
        relative_path: "policies/pets-trivia.txt",
        contents: include_str!("../data/policies/pets-trivia.txt"),
    },
    BundledFile {
        relative_path: "policies/dating-tips.txt",
        contents: include_str!("../data/policies/dating-tips.txt"),
    },
    BundledFile {
        relative_path: "policies/health-coach.txt",
        contents: include_str!("../data/policies/health-coach.txt"),
    },
    BundledFile {
        relative_path: "policies/wine-expert.txt",
        contents: include_str!("../data/policies/wine-expert.txt"),
    },
    BundledFile {
        relative_path: "policies/trip-planner.txt",
        contents: include_str!("../data/policies/trip-planner.txt"),
    },
];

/// Writes every bundled file under `dir`, creating subdirectories as needed.
pub fn write_all(dir: &Path) -> Result<()> {
    for file in FILES {
        let path = dir.join(file.relative_path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| AuditError::io(parent, e))?;
        }
        std::fs::write(&path, file.contents).map_err(|e| AuditError::io(&path, e))?;
    }
    Ok(())
}
