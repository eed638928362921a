//! `spkaudit`: offline privacy auditor for smart speaker network captures.
//!
//! Every analysis subcommand loads one JSON config describing the dataset,
//! runs the pipeline prefix it needs, and prints its results as JSON on
//! stdout. `audit` runs everything; `report emit` writes files instead.
//! Exit codes: 0 success, 1 input problems, 2 data-model violations,
//! 3 internal errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use spkaudit::config::{AuditConfig, SlotKey, Weight};
use spkaudit::demo::write_demo;
use spkaudit::error::{AuditError, Result};
use spkaudit::report::{
    canonical_json, emit, parse_stages, render_text, run_pipeline, AuditReport, EmitFormat,
    RunOptions, Stage, STAGE_ORDER,
};

#[derive(Parser)]
#[command(
    name = "spkaudit",
    version,
    about = "Offline privacy auditor for smart speaker network captures",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and print or write the report.
    Audit(RunArgs),
    /// Parse the flow trace and segment it into sessions.
    Ingest(RunArgs),
    /// Attribute destination addresses to hostnames.
    Resolve(RunArgs),
    /// Classify traffic by responsible party and purpose.
    Classify(RunArgs),
    /// Detect cross-organization identifier sharing.
    Syncs(RunArgs),
    /// Header-bidding statistics.
    #[command(subcommand)]
    Bids(BidsCommand),
    /// Privacy-policy disclosure auditing.
    #[command(subcommand)]
    Policy(PolicyCommand),
    /// Advertising interest-profile changes.
    #[command(subcommand)]
    Interests(InterestsCommand),
    /// Report emission.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Write a self-contained sample dataset and print its config path.
    Demo(DemoArgs),
}

#[derive(Subcommand)]
enum BidsCommand {
    /// Per-persona CPM aggregates over slots every persona saw.
    Stats(RunArgs),
    /// Rank-sum comparisons of each treatment persona against the control.
    Compare(RunArgs),
    /// CPM split by identifier-sharing partners versus other bidders.
    Split(RunArgs),
}

#[derive(Subcommand)]
enum PolicyCommand {
    /// Grade observed data flows against policy disclosures.
    Check(RunArgs),
    /// Score the disclosure grader against hand labels.
    Validate(RunArgs),
}

#[derive(Subcommand)]
enum InterestsCommand {
    /// Diff consecutive interest-profile snapshots per persona.
    Diff(RunArgs),
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Run the pipeline and write report files into --out.
    Emit(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Audit configuration file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Comma-separated stage prefix to run, e.g. "ingest,resolve".
    /// Defaults to the stages this subcommand needs.
    #[arg(long, value_name = "LIST")]
    stages: Option<String>,

    /// Directory to write report files into.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Report format: json, csv_bundle, or text.
    #[arg(long, default_value = "json")]
    format: String,

    /// Weight traffic by "flows" or "bytes" (overrides the config).
    #[arg(long, value_name = "BASIS")]
    weight: Option<String>,

    /// Ad-slot identity: "site+slot" or "site+slot+iteration".
    #[arg(long, value_name = "KEY")]
    slot_key: Option<String>,

    /// Minimum length for a value to count as an identifier.
    #[arg(long, value_name = "N")]
    min_id_length: Option<usize>,

    /// Largest n1*n2 for which the exact rank-sum distribution is used.
    #[arg(long, value_name = "N")]
    exact_cutoff: Option<usize>,

    /// Divide the significance level by the number of comparisons.
    #[arg(long)]
    bonferroni: bool,

    /// Organization treated as the platform operator.
    #[arg(long, value_name = "ORG")]
    platform_org: Option<String>,

    /// Truncate HTTP body excerpts to this many bytes at ingest.
    #[arg(long, value_name = "BYTES")]
    body_excerpt_max: Option<usize>,

    /// Treat payload bodies as unreadable, as in a capture without TLS
    /// interception; every data flow is then graded entity-only.
    #[arg(long)]
    encrypted_only: bool,
}

#[derive(Args)]
struct DemoArgs {
    /// Directory to create the dataset in.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Audit(args) => full_report(args, false),
        Command::Report(ReportCommand::Emit(args)) => full_report(args, true),
        Command::Ingest(args) => section_command(args, Stage::Ingest),
        Command::Resolve(args) => section_command(args, Stage::Resolve),
        Command::Classify(args) => section_command(args, Stage::Classify),
        Command::Syncs(args) => section_command(args, Stage::Syncs),
        Command::Bids(cmd) => {
            let (args, view) = match cmd {
                BidsCommand::Stats(a) => (a, BidsView::Stats),
                BidsCommand::Compare(a) => (a, BidsView::Compare),
                BidsCommand::Split(a) => (a, BidsView::Split),
            };
            bids_command(args, view)
        }
        Command::Policy(cmd) => {
            let (args, validate) = match cmd {
                PolicyCommand::Check(a) => (a, false),
                PolicyCommand::Validate(a) => (a, true),
            };
            policy_command(args, validate)
        }
        Command::Interests(InterestsCommand::Diff(args)) => interests_command(args),
        Command::Demo(args) => {
            let config_path = write_demo(&args.out)?;
            println!("{}", config_path.display());
            Ok(())
        }
    }
}

/// Loads the config, applies flag overrides, and fixes the stage list.
/// `need` is the stage the subcommand reports on; the run must include it.
fn prepare(args: &RunArgs, need: Option<Stage>) -> Result<(AuditConfig, RunOptions)> {
    let mut cfg = AuditConfig::load(&args.config)?;

    if let Some(weight) = &args.weight {
        cfg.distribution.weight = match weight.as_str() {
            "flows" => Weight::Flows,
            "bytes" => Weight::Bytes,
            other => {
                return Err(AuditError::Config(format!(
                    "unknown weight {other:?}; expected flows or bytes"
                )))
            }
        };
    }
    if let Some(key) = &args.slot_key {
        cfg.slots.key = match key.as_str() {
            "site+slot" => SlotKey::SiteSlot,
            "site+slot+iteration" => SlotKey::SiteSlotIteration,
            other => {
                return Err(AuditError::Config(format!(
                    "unknown slot key {other:?}; expected site+slot or site+slot+iteration"
                )))
            }
        };
    }
    if let Some(n) = args.min_id_length {
        cfg.sync.min_id_length = n;
    }
    if let Some(n) = args.exact_cutoff {
        cfg.stats.exact_cutoff = n;
    }
    if args.bonferroni {
        cfg.stats.bonferroni = true;
    }
    if let Some(org) = &args.platform_org {
        cfg.platform_org = org.clone();
    }
    if let Some(n) = args.body_excerpt_max {
        cfg.ingest.body_excerpt_max = n;
    }
    cfg.validate()?;

    let stages = match &args.stages {
        Some(spec) => {
            let stages = parse_stages(spec)?;
            if let Some(stage) = need {
                if !stages.contains(&stage) {
                    return Err(AuditError::Config(format!(
                        "--stages must include {:?} for this subcommand",
                        stage.name()
                    )));
                }
            }
            stages
        }
        None => match need {
            Some(stage) => stage.prefix(),
            None => STAGE_ORDER.to_vec(),
        },
    };

    Ok((cfg, RunOptions { stages, unencrypted: !args.encrypted_only }))
}

/// `audit` and `report emit`: the whole report, printed or written.
fn full_report(args: RunArgs, require_out: bool) -> Result<()> {
    let format: EmitFormat = args.format.parse()?;
    if require_out && args.out.is_none() {
        return Err(AuditError::Config("report emit requires --out".into()));
    }
    let (cfg, opts) = prepare(&args, None)?;
    let report = run_pipeline(&cfg, &opts)?;

    match &args.out {
        Some(dir) => {
            for path in emit(&report, format, dir)? {
                println!("{}", path.display());
            }
        }
        None => match format {
            EmitFormat::Json => print!("{}", canonical_json(&report)?),
            EmitFormat::Text => print!("{}", render_text(&report)),
            EmitFormat::CsvBundle => {
                return Err(AuditError::Config("format csv_bundle requires --out".into()))
            }
        },
    }
    Ok(())
}

fn section_command(args: RunArgs, stage: Stage) -> Result<()> {
    let report = run_for(&args, stage)?;
    match stage {
        Stage::Ingest => print_view(&required(&report.ingest, stage)?),
        Stage::Resolve => print_view(&required(&report.resolution, stage)?),
        Stage::Classify => print_view(&required(&report.traffic, stage)?),
        Stage::Syncs => print_view(&required(&report.syncs, stage)?),
        _ => Err(AuditError::Internal(format!("no section view for stage {}", stage.name()))),
    }
}

enum BidsView {
    Stats,
    Compare,
    Split,
}

fn bids_command(args: RunArgs, view: BidsView) -> Result<()> {
    let report = run_for(&args, Stage::Bids)?;
    let bids = required(&report.bids, Stage::Bids)?;
    let value = match view {
        BidsView::Stats => serde_json::json!({
            "slot_key": bids.slot_key,
            "control": &bids.control,
            "total_bids": bids.total_bids,
            "common_slot_bids": bids.common_slot_bids,
            "per_persona": &bids.per_persona,
        }),
        BidsView::Compare => serde_json::json!({
            "control": &bids.control,
            "comparisons": &bids.comparisons,
            "echo_vs_web": &bids.echo_vs_web,
        }),
        BidsView::Split => serde_json::json!({
            "partner_split": &bids.partner_split,
        }),
    };
    print_view(&value)
}

fn policy_command(args: RunArgs, validate: bool) -> Result<()> {
    let report = run_for(&args, Stage::Policy)?;
    let policy = required(&report.policy, Stage::Policy)?;
    if validate {
        let validation = policy.validation.as_ref().ok_or(AuditError::MissingInput {
            stage: Stage::Policy.name().to_string(),
            what: "paths.gold_labels".to_string(),
        })?;
        print_view(&serde_json::json!({ "validation": validation }))
    } else {
        print_view(&serde_json::json!({
            "tuples": policy.tuples,
            "audits": &policy.audits,
            "audits_skill_only": &policy.audits_skill_only,
            "totals": policy.totals,
            "totals_skill_only": policy.totals_skill_only,
        }))
    }
}

fn interests_command(args: RunArgs) -> Result<()> {
    let report = run_for(&args, Stage::Interests)?;
    print_view(&required(&report.interests, Stage::Interests)?)
}

fn run_for(args: &RunArgs, stage: Stage) -> Result<AuditReport> {
    if args.format != "json" {
        return Err(AuditError::Config(
            "only audit and report emit support csv_bundle and text".into(),
        ));
    }
    if args.out.is_some() {
        return Err(AuditError::Config(
            "only audit and report emit write files; remove --out".into(),
        ));
    }
    let (cfg, opts) = prepare(args, Some(stage))?;
    run_pipeline(&cfg, &opts)
}

fn required<'a, T>(section: &'a Option<T>, stage: Stage) -> Result<&'a T> {
    section.as_ref().ok_or_else(|| {
        AuditError::Internal(format!("stage {} produced no section", stage.name()))
    })
}

/// Prints a stable JSON view: key-sorted, pretty, trailing newline.
fn print_view<T: Serialize>(view: &T) -> Result<()> {
    let value = serde_json::to_value(view)
        .map_err(|e| AuditError::Internal(format!("section serialization: {e}")))?;
    let text = serde_json::to_string_pretty(&value)
        .map_err(|e| AuditError::Internal(format!("section serialization: {e}")))?;
    println!("{text}");
    Ok(())
}
