use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use osn_rebac::oracle::{audit, AuditReport, ConsentMode};
use osn_rebac::platform::{DecisionRecord, ExplainReport};
use osn_rebac::plc::{check_flow, detect_anomaly, IfLogRecord};
use osn_rebac::scenario::{to_jsonl, RequestDoc, RunOutput, Scenario, TraceStep};
use osn_rebac::Alert;

const EXIT_CLEAN: u8 = 0;
const EXIT_FINDINGS: u8 = 1;
const EXIT_LOAD: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "osn-rebac",
    version,
    about = "Relationship-based access control simulator for third-party apps"
)]
struct Cli {
    #[arg(long, value_enum, default_value = "text", global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay a scenario's trace and emit the decision and information-flow logs.
    Run {
        file: PathBuf,
        /// Write decisions.jsonl and iflog.jsonl here instead of stdout.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Exit 0 even when alerts were raised.
        #[arg(long)]
        allow_alerts: bool,
    },
    /// Compare the engine against the reference evaluator, or re-check flows.
    Audit {
        #[command(subcommand)]
        what: AuditCommand,
    },
    /// Show how a single request would be decided.
    Explain {
        file: PathBuf,
        /// `app/component,owner/attribute,action[+action...]`
        #[arg(long)]
        request: String,
    },
}

#[derive(Debug, Subcommand)]
enum AuditCommand {
    /// Oversharing and undersharing over every (component, data item, action).
    Policies {
        file: PathBuf,
        /// Pretend every user consented to every app instead of using the
        /// scenario's grants.
        #[arg(long)]
        assume_consent: bool,
    },
    /// Blocked flows and anomalies in the trace, or in a recorded IF log.
    Flows {
        file: PathBuf,
        /// JSON-lines IF log to re-check instead of replaying the trace.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            file,
            out_dir,
            allow_alerts,
        } => run(&file, out_dir.as_deref(), allow_alerts, cli.format),
        Command::Audit {
            what: AuditCommand::Policies { file, assume_consent },
        } => audit_policies(&file, assume_consent, cli.format),
        Command::Audit {
            what: AuditCommand::Flows { file, log },
        } => audit_flows(&file, log.as_deref(), cli.format),
        Command::Explain { file, request } => explain(&file, &request, cli.format),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Load(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_LOAD)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FINDINGS)
        }
    }
}

enum Failure {
    Load(String),
    Runtime(String),
}

fn load(file: &Path) -> Result<Scenario, Failure> {
    Scenario::load(file).map_err(|e| Failure::Load(e.to_string()))
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn decision_line(d: &DecisionRecord) -> String {
    let mut line = format!(
        "[{}] {} {} {} -> {}",
        d.ts,
        d.requester,
        d.target,
        d.actions.iter().cloned().collect::<Vec<_>>().join("+"),
        d.outcome
    );
    if let Some(v) = &d.value {
        line.push_str(&format!(" {:?}", v));
    }
    line.push_str(&format!(" ({}: {})", d.stage, d.reason));
    if let Some(p) = &d.matched_policy {
        line.push_str(&format!(" policy={p}"));
    }
    if let Some(a) = d.alert {
        line.push_str(&format!(" ALERT {a}"));
    }
    line
}

fn flow_line(r: &IfLogRecord) -> String {
    let e = &r.event;
    let mut line = format!(
        "[{}] {}: {} -> {} {:?} {} {:?}",
        e.timestamp, e.app, e.source, e.sink, e.payload, r.payload_sensitivity, r.verdict
    );
    if let Some(reason) = r.reason {
        line.push_str(&format!(" ({reason})"));
    }
    line
}

fn alert_line(a: &Alert) -> String {
    format!("{} {}: {}", a.kind, a.subject, a.detail)
}

fn run(file: &Path, out_dir: Option<&Path>, allow_alerts: bool, format: Format) -> Result<u8, Failure> {
    let mut s = load(file)?;
    let out: RunOutput = s.run().map_err(|e| Failure::Runtime(e.to_string()))?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
        for (name, body) in [
            ("decisions.jsonl", out.decision_log_jsonl()),
            ("iflog.jsonl", out.if_log_jsonl()),
            ("alerts.jsonl", to_jsonl(&out.alerts)),
        ] {
            fs::write(dir.join(name), body).map_err(|e| Failure::Runtime(format!("{name}: {e}")))?;
        }
    }
    match format {
        Format::Json => print_json(&json!({
            "decisions": out.decisions,
            "flows": out.flows,
            "alerts": out.alerts,
        })),
        Format::Text if out_dir.is_some() => println!(
            "{} decisions, {} flows, {} alerts",
            out.decisions.len(),
            out.flows.len(),
            out.alerts.len()
        ),
        Format::Text => {
            out.decisions.iter().for_each(|d| println!("{}", decision_line(d)));
            out.flows.iter().for_each(|r| println!("{}", flow_line(r)));
            out.alerts.iter().for_each(|a| println!("alert: {}", alert_line(a)));
        }
    }
    Ok(if out.alerts.is_empty() || allow_alerts {
        EXIT_CLEAN
    } else {
        EXIT_FINDINGS
    })
}

fn audit_policies(file: &Path, assume_consent: bool, format: Format) -> Result<u8, Failure> {
    let s = load(file)?;
    let mode = if assume_consent {
        ConsentMode::AssumeConsent
    } else {
        ConsentMode::Tokens
    };
    let report: AuditReport = audit(&s.platform, mode).map_err(|e| Failure::Runtime(e.to_string()))?;
    match format {
        Format::Json => print_json(&serde_json::to_value(&report).expect("report serializes")),
        Format::Text => {
            println!("checked {} requests", report.checked);
            for t in &report.oversharing {
                println!("oversharing: {t}");
            }
            for t in &report.undersharing {
                println!("undersharing: {t}");
            }
            if report.is_clean() {
                println!("no oversharing, no undersharing");
            }
        }
    }
    Ok(if report.is_clean() { EXIT_CLEAN } else { EXIT_FINDINGS })
}

fn read_if_log(path: &Path) -> Result<Vec<IfLogRecord>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Load(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Failure::Load(format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

fn audit_flows(file: &Path, log: Option<&Path>, format: Format) -> Result<u8, Failure> {
    let mut s = load(file)?;
    let (records, mismatches) = match log {
        None => (s.run().map_err(|e| Failure::Runtime(e.to_string()))?.flows, Vec::new()),
        Some(path) => {
            // Recorded verdicts are re-derived against the scenario's state
            // after its grants and generalizations.
            let logged = read_if_log(path)?;
            let snap = s.platform.snapshot();
            let mut mismatches = Vec::new();
            for rec in &logged {
                match check_flow(&rec.event, snap.flow_context()) {
                    Ok(fresh) if fresh.verdict == rec.verdict && fresh.reason == rec.reason => {}
                    Ok(fresh) => mismatches.push(format!(
                        "{}: logged {:?}, expected {:?}",
                        flow_line(rec),
                        rec.verdict,
                        fresh.verdict
                    )),
                    Err(e) => mismatches.push(format!("{}: {e}", flow_line(rec))),
                }
            }
            (logged, mismatches)
        }
    };
    let blocked: Vec<&IfLogRecord> = records.iter().filter(|r| r.reason.is_some()).collect();
    let alerts = detect_anomaly(&records, s.platform.profiles());
    match format {
        Format::Json => print_json(&json!({
            "checked": records.len(),
            "blocked": blocked,
            "alerts": alerts,
            "mismatches": mismatches,
        })),
        Format::Text => {
            println!("checked {} flows", records.len());
            blocked.iter().for_each(|r| println!("blocked: {}", flow_line(r)));
            alerts.iter().for_each(|a| println!("alert: {}", alert_line(a)));
            mismatches.iter().for_each(|m| println!("mismatch: {m}"));
        }
    }
    Ok(if alerts.is_empty() && mismatches.is_empty() {
        EXIT_CLEAN
    } else {
        EXIT_FINDINGS
    })
}

fn parse_request(text: &str) -> Option<RequestDoc> {
    let mut parts = text.split(',').map(str::trim);
    let (app, component) = parts.next()?.split_once('/')?;
    let (owner, attribute) = parts.next()?.split_once('/')?;
    let actions: Vec<String> = parts.next()?.split('+').map(|a| a.trim().to_string()).collect();
    if parts.next().is_some() || actions.iter().any(|a| a.is_empty()) {
        return None;
    }
    Some(RequestDoc {
        app: app.into(),
        component: component.into(),
        owner: owner.into(),
        attribute: attribute.into(),
        actions,
        grant: None,
    })
}

fn explain(file: &Path, request: &str, format: Format) -> Result<u8, Failure> {
    let doc = parse_request(request).ok_or_else(|| {
        Failure::Load(format!(
            "bad request `{request}`, expected app/component,owner/attribute,action"
        ))
    })?;
    let mut s = load(file)?;
    // Validated the same way as a trace step.
    s.trace = vec![TraceStep::Request(doc.clone())];
    s.check_trace().map_err(|e| Failure::Load(e.to_string()))?;
    let r = Scenario::request(&doc).ok_or_else(|| Failure::Load(format!("bad request `{request}`")))?;
    let report: ExplainReport = s.platform.explain(&r);
    let record = DecisionRecord::from_decision(0, &report.decision);
    match format {
        Format::Json => print_json(&json!({
            "decision": record,
            "token": report.token,
            "policies": report.policies.iter().map(|p| json!({
                "id": p.id,
                "owner": p.owner,
                "policy": p.text,
                "matches": p.matches,
                "stakeholder": p.stakeholder,
                "condition_holds": p.condition.as_ref().map(|c| c.holds),
                "trace": p.condition.as_ref().map(|c| c.to_string()),
            })).collect::<Vec<_>>(),
        })),
        Format::Text => {
            println!("{}", decision_line(&record));
            println!("token: {}", report.token.as_deref().unwrap_or("none"));
            for p in &report.policies {
                let status = match (p.matches, p.stakeholder) {
                    (true, true) => "applies to request",
                    (true, false) => "author is not a contact of the owner",
                    (false, _) => "target, data or action do not match",
                };
                println!("policy {} by {}: {} [{status}]", p.id, p.owner, p.text);
                if p.matches {
                    if let Some(c) = &p.condition {
                        for line in c.to_string().lines() {
                            println!("    {line}");
                        }
                    }
                }
            }
        }
    }
    Ok(EXIT_CLEAN)
}
