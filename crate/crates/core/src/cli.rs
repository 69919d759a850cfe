//! `explore`, `replay` and `show`.
//!
//! Exit codes: 0 success, 1 a property failed or a guard failed, 2 bad input
//! or I/O error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::algebra::{AgentName, Message, Role};
use crate::config::parse_scenario;
use crate::explorer::{explore_seeded, replay, ExploreError, ExplorationReport};
use crate::properties::Status;
use crate::rules::{
    apply_rule, parse_accept_note, parse_cert_verify,
    parse_client_hello, parse_finished_hash, parse_key_exchange, parse_pms_note,
    parse_server_hello, parse_session_crypt, Binding, RuleId,
};
use crate::syntax::{format_script, format_trace, parse_script, parse_trace};
use crate::trace::{Event, Knowledge, Scenario, Trace};

#[derive(Parser, Debug)]
#[command(name = "tls-inductive", version, about = "Bounded exploration of an inductive TLS handshake model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Explore a scenario and write a JSON report.
    Explore {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides bounds.max_events from the config.
        #[arg(long)]
        max_events: Option<usize>,
        /// Directory of `.script` files whose traces join Nil as start states.
        #[arg(long)]
        seed_scripts: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Replay a rule script and print the resulting trace.
    Replay {
        script: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pretty-print a trace with the rule behind each event.
    Show {
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    let result = match cli.command {
        Command::Explore {
            config,
            out: report_path,
            max_events,
            seed_scripts,
            workers,
        } => cmd_explore(&config, &report_path, max_events, seed_scripts.as_deref(), workers, out, err),
        Command::Replay { script, config } => cmd_replay(&script, config.as_deref(), out, err),
        Command::Show { trace, config } => cmd_show(&trace, config.as_deref(), out, err),
    };
    result.unwrap_or_else(|msg| {
        let _ = writeln!(err, "error: {msg}");
        2
    })
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_scenario(path: &Path) -> Result<Scenario, String> {
    parse_scenario(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

/// Scenario for files that name agents but come without a config.
fn scenario_for(config: Option<&Path>, mentioned: impl Iterator<Item = AgentName>) -> Result<Scenario, String> {
    match config {
        Some(p) => load_scenario(p),
        None => {
            let friends = mentioned
                .filter_map(|a| match a {
                    AgentName::Friend(i) => Some(i),
                    _ => None,
                })
                .max()
                .unwrap_or(2)
                .max(2);
            Ok(Scenario::with_friends(friends))
        }
    }
}

fn load_seeds(dir: &Path) -> Result<Vec<Vec<Binding>>, String> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "script"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let steps = parse_script(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok(steps.into_iter().map(|s| s.binding).collect())
        })
        .collect()
}

fn witness_path(report: &Path, property: &str, ext: &str) -> PathBuf {
    let stem = report
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    report.with_file_name(format!("{stem}.{property}.{ext}"))
}

fn cmd_explore(
    config: &Path,
    report_path: &Path,
    max_events: Option<usize>,
    seed_dir: Option<&Path>,
    workers: Option<usize>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, String> {
    let mut s = load_scenario(config)?;
    if let Some(n) = max_events {
        s.bounds.max_events = n;
    }
    let seeds = match seed_dir {
        Some(d) => load_seeds(d)?,
        None => vec![],
    };
    let (report, capped) = match explore_seeded(&s, &seeds, workers, |_, _| {}) {
        Ok(r) => (r, false),
        Err(ExploreError::StateCapExceeded { report, cap }) => {
            let _ = writeln!(err, "warning: state cap {cap} reached; report is partial");
            (*report, true)
        }
        Err(e @ ExploreError::BadSeed { .. }) => return Err(e.to_string()),
    };
    write_file(report_path, &report.to_json())?;
    for v in &report.verdicts {
        let _ = writeln!(out, "{:<32} {}", v.property.name(), status_word(v.status));
        if v.status == Status::Violated {
            if let (Some(t), Some(sc)) = (&v.witness_trace, &v.witness_script) {
                let tp = witness_path(report_path, v.property.name(), "trace");
                let sp = witness_path(report_path, v.property.name(), "script");
                write_file(&tp, &format_trace(t))?;
                write_file(&sp, &format_script(sc))?;
                let _ = writeln!(out, "  witness: {} ({} events)", tp.display(), t.len());
            }
        }
    }
    summary(&report, out);
    Ok(if report.all_ok() && !capped { 0 } else { 1 })
}

fn status_word(s: Status) -> &'static str {
    match s {
        Status::Holds => "holds",
        Status::Violated => "VIOLATED",
        Status::Witnessed => "witnessed",
        Status::NotWitnessed => "NOT WITNESSED",
    }
}

fn summary(r: &ExplorationReport, out: &mut dyn Write) {
    let _ = writeln!(
        out,
        "{} states, {} duplicates, depth {}/{}{}",
        r.states_visited,
        r.states_deduplicated,
        r.max_depth_reached,
        r.max_events,
        if r.stopped_early { ", stopped once all properties were decided" } else { "" }
    );
    let _ = writeln!(out, "note: {}", r.incompleteness);
}

fn cmd_replay(path: &Path, config: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, String> {
    let steps = parse_script(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?;
    let mentioned: Vec<AgentName> = format_script(&steps.iter().map(|s| s.binding.clone()).collect::<Vec<_>>())
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter_map(crate::syntax::parse_agent_name)
        .collect();
    let s = scenario_for(config, mentioned.into_iter())?;
    let mut t = Trace::new();
    for (i, step) in steps.iter().enumerate() {
        match apply_rule(&s, &t, &step.binding) {
            Ok(next) => t = next,
            Err(f) => {
                let _ = writeln!(
                    err,
                    "step {} (line {}): {} guard failed: {}",
                    i + 1,
                    step.line,
                    f.rule,
                    f.conjunct
                );
                return Ok(1);
            }
        }
    }
    debug_assert_eq!(
        replay(&s, &steps.iter().map(|s| s.binding.clone()).collect::<Vec<_>>()).ok(),
        Some(t.clone())
    );
    let _ = write!(out, "{}", format_trace(&t));
    Ok(0)
}

/// The rule that produces an event of this shape.
pub fn infer_rule(e: &Event) -> &'static str {
    match e {
        Event::Says(AgentName::Spy, _, _) => "Fake",
        Event::Says(_, AgentName::Spy, Message::Key(_)) => RuleId::Oops.name(),
        Event::Says(from, _, x) => {
            if parse_client_hello(x).is_some() {
                RuleId::ClientHello.name()
            } else if parse_server_hello(x).is_some() {
                RuleId::ServerHello.name()
            } else if crate::algebra::as_certificate(x).is_some() {
                RuleId::Certificate.name()
            } else if parse_key_exchange(x).is_some() {
                RuleId::ClientKeyExch.name()
            } else if parse_cert_verify(x).is_some_and(|cv| cv.0 == *from) {
                RuleId::CertVerify.name()
            } else if let Some((k, body)) = parse_session_crypt(x) {
                let full = parse_finished_hash(body)
                    .and_then(|f| f.m.prf_args().map(|(_, na, nb)| na == f.na && nb == f.nb))
                    .unwrap_or(false);
                match (k.role, full) {
                    (Role::ClientRole, true) => RuleId::ClientFinished.name(),
                    (Role::ClientRole, false) => RuleId::ClientResume.name(),
                    (Role::ServerRole, true) => RuleId::ServerFinished.name(),
                    (Role::ServerRole, false) => RuleId::ServerResume.name(),
                }
            } else {
                "unknown"
            }
        }
        Event::Notes(AgentName::Spy, _) => RuleId::SpyKeys.name(),
        Event::Notes(a, x) => {
            if parse_pms_note(x).is_some() {
                RuleId::ClientKeyExch.name()
            } else if let Some((_, ca, _, _)) = parse_accept_note(x) {
                if ca == *a {
                    RuleId::ClientAccepts.name()
                } else {
                    RuleId::ServerAccepts.name()
                }
            } else {
                "unknown"
            }
        }
    }
}

fn cmd_show(path: &Path, config: Option<&Path>, out: &mut dyn Write, _err: &mut dyn Write) -> Result<i32, String> {
    let t = parse_trace(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?;
    if t.is_empty() {
        let _ = writeln!(out, "Nil");
        return Ok(0);
    }
    let mentioned: Vec<AgentName> = t
        .events()
        .iter()
        .flat_map(|e| match e {
            Event::Says(a, b, _) => vec![*a, *b],
            Event::Notes(a, _) => vec![*a],
        })
        .collect();
    let s = scenario_for(config, mentioned.into_iter())?;
    let events: Vec<Event> = t.chronological().cloned().collect();
    let mut k = Knowledge::of(&s, &Trace::new());
    for (i, e) in events.iter().enumerate() {
        let rule = infer_rule(e);
        let label = if rule == "Fake" { "Fake or spy's own step" } else { rule };
        let _ = writeln!(out, "{:>3}. [{label}] {e}", i + 1);
        let next = k.extended(&s, std::slice::from_ref(e));
        let learned: Vec<String> = next
            .analz
            .difference(&k.analz)
            .filter(|m| matches!(m, Message::Nonce(_) | Message::Key(_)))
            .map(|m| m.to_string())
            .collect();
        if !learned.is_empty() {
            let _ = writeln!(out, "     spy learns: {}", learned.join(", "));
        }
        k = next;
    }
    Ok(0)
}
