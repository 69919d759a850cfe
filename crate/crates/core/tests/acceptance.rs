//! One line per acceptance criterion. Everything runs from a single test so
//! the large explorations never overlap in memory.

mod common;

use std::fs;
use std::io::Write;
use std::time::{Duration, Instant};

use common::*;

use tls_inductive::algebra::{analz, parts, synthesizes, Message};
use tls_inductive::cli;
use tls_inductive::explorer::{explore, explore_with_workers, replay, ExplorationReport};
use tls_inductive::properties::{PropertyId, Status};
use tls_inductive::rules::{apply_rule, RuleId};
use tls_inductive::syntax::{format_trace, parse_script};
use tls_inductive::trace::{Scenario, Trace};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut out = f();
    let took = start.elapsed();
    if let (Ok(_), Some(limit)) = (&out, limit) {
        if took >= limit {
            out = Err(format!("took {took:.1?}, limit {limit:?}"));
        }
    }
    (out, took)
}

fn statuses(r: &ExplorationReport) -> String {
    r.verdicts
        .iter()
        .map(|v| format!("{}={:?}", v.property, v.status))
        .collect::<Vec<_>>()
        .join(" ")
}

fn expect_status(r: &ExplorationReport, ids: &[PropertyId], want: Status) -> Result<(), String> {
    for id in ids {
        let got = r.verdict(*id).map(|v| v.status);
        check(got == Some(want), format!("{id}: {got:?}, want {want:?}"))?;
    }
    Ok(())
}

/// The violation's witness replays to itself and fits the bound.
fn witness_ok(s: &Scenario, r: &ExplorationReport, id: PropertyId, max: usize) -> Result<usize, String> {
    let v = r.verdict(id).ok_or(format!("{id} not checked"))?;
    check(v.status == Status::Violated, format!("{id}: {:?}", v.status))?;
    let (t, script) = (v.witness_trace.as_ref().unwrap(), v.witness_script.as_ref().unwrap());
    check(t.len() <= max, format!("witness has {} events", t.len()))?;
    check(replay(s, script).as_ref() == Ok(t), "witness does not replay")?;
    Ok(t.len())
}

fn c1_algebra() -> Outcome {
    let mut r = rng(0xacce_0001);
    for case in 0..1000 {
        let h = random_set(&mut r, 8, 4);
        check(parts(&h) == oracle_parts(&h), format!("parts differs on case {case}"))?;
        check(analz(&h) == oracle_analz(&h), format!("analz differs on case {case}"))?;
    }
    let mut yes = 0;
    for case in 0..1000 {
        let h = random_set(&mut r, 8, 4);
        let closed = oracle_analz(&h);
        let x: Message = if case % 2 == 0 { random_message(&mut r, 4) } else { buildable(&mut r, &closed, 4) };
        let got = synthesizes(&analz(&h), &x);
        check(got == oracle_synth(&closed, &x, 3), format!("synthesizes differs on case {case}"))?;
        yes += got as usize;
    }
    Ok(format!("1000 parts/analz sets, 1000 synth pairs ({yes} synthesizable)"))
}

fn c2_possibility() -> Outcome {
    let s = bundled_scenario("possibility");
    check(s.bounds.max_events == 13, "possibility scenario bound")?;
    let r = explore(&s).map_err(|e| e.to_string())?;
    expect_status(&r, &PropertyId::POSSIBILITY, Status::Witnessed).map_err(|e| format!("{e}; {}", statuses(&r)))?;
    let lens: Vec<String> = PropertyId::POSSIBILITY
        .iter()
        .map(|id| format!("{id}@{}", r.verdict(*id).unwrap().witness_trace.as_ref().unwrap().len()))
        .collect();
    Ok(format!("{} states; {}", r.states_visited, lens.join(" ")))
}

fn c3_safety() -> Outcome {
    let s = bundled_scenario("faithful");
    check(s.bounds.max_events == 10, "faithful scenario bound")?;
    for rule in [RuleId::Fake, RuleId::SpyKeys, RuleId::Oops] {
        check(s.bounds.enabled_rules.contains(&rule), format!("{rule} disabled"))?;
    }
    let r = explore(&s).map_err(|e| e.to_string())?;
    check(!r.partial && r.max_depth_reached == 10, "exploration incomplete")?;
    expect_status(&r, &PropertyId::SAFETY, Status::Holds).map_err(|e| format!("{e}; {}", statuses(&r)))?;
    Ok(format!("{} properties hold over {} states", PropertyId::SAFETY.len(), r.states_visited))
}

fn c4_oops() -> Outcome {
    let s = bundled_scenario("oops-robustness");
    check(s.bounds.max_events == 12, "oops scenario bound")?;
    check(s.bounds.enabled_rules.contains(&RuleId::Oops), "Oops disabled")?;
    let r = explore(&s).map_err(|e| e.to_string())?;
    check(!r.partial && r.max_depth_reached == 12, "exploration incomplete")?;
    expect_status(&r, &s.properties, Status::Holds).map_err(|e| format!("{e}; {}", statuses(&r)))?;

    let s2 = bundled_scenario("resumption-after-oops");
    let r2 = explore(&s2).map_err(|e| e.to_string())?;
    let id = PropertyId::PossibleResumptionAfterOops;
    expect_status(&r2, &[id], Status::Witnessed)?;
    let w = r2.verdict(id).unwrap().witness_trace.as_ref().unwrap();
    Ok(format!(
        "{} states at 12, no leak; resumption after Oops witnessed at {} events",
        r.states_visited,
        w.len()
    ))
}

fn c5_rollback() -> Outcome {
    let s = bundled_scenario("rollback-mutant");
    check(s.variant.omit_prefs_in_finished && s.bounds.max_events <= 12, "rollback scenario")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = dir.path().join("rollback.json");
    let config = manifest_dir().join("scenarios/rollback-mutant.json");
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(
        ["tls-inductive", "explore", "--config", config.to_str().unwrap(), "--out", report.to_str().unwrap()],
        &mut out,
        &mut err,
    );
    check(code == 1, format!("explore exited {code}"))?;
    let script = dir.path().join("rollback.pref_agreement.script");
    let trace = fs::read_to_string(dir.path().join("rollback.pref_agreement.trace")).map_err(|e| e.to_string())?;
    let steps: Vec<_> = parse_script(&fs::read_to_string(&script).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|s| s.binding)
        .collect();
    let replayed = replay(&s, &steps).map_err(|(i, f)| format!("witness step {i}: {f}"))?;
    check(format_trace(&replayed) == trace, "witness trace and script disagree")?;
    check(replayed.len() <= 12, format!("witness has {} events", replayed.len()))?;
    let code = cli::run(
        ["tls-inductive", "replay", script.to_str().unwrap(), "--config", config.to_str().unwrap()],
        &mut Vec::new(),
        &mut Vec::new(),
    );
    check(code == 0, "replay command failed on the witness")?;
    Ok(format!("pref_agreement violated at {} events, exit 1, witness replays", replayed.len()))
}

fn c6_certverify() -> Outcome {
    let s = bundled_scenario("certverify-mutant");
    check(s.variant.omit_pms_in_certverify && s.bounds.max_events <= 14, "certverify scenario")?;
    let r = explore(&s).map_err(|e| e.to_string())?;
    let n = witness_ok(&s, &r, PropertyId::NotesDischarge, 14)?;
    Ok(format!("notes_discharge violated at {n} events"))
}

fn c7_goldens() -> Outcome {
    let s = Scenario::with_friends(2);
    let mut lens = Vec::new();
    for name in ["full-handshake", "resumption"] {
        let src = fs::read_to_string(manifest_dir().join(format!("scripts/{name}.script"))).map_err(|e| e.to_string())?;
        let golden = fs::read(manifest_dir().join(format!("tests/golden/{name}.trace"))).map_err(|e| e.to_string())?;
        let mut t = Trace::new();
        for step in parse_script(&src).map_err(|e| e.to_string())? {
            let next = apply_rule(&s, &t, &step.binding).map_err(|f| format!("{name} line {}: {f}", step.line))?;
            let added = next.len() - t.len();
            let want = if step.binding.rule() == RuleId::ClientKeyExch { 2 } else { 1 };
            check(added == want, format!("{name} line {}: {added} events", step.line))?;
            t = next;
        }
        check(format_trace(&t).into_bytes() == golden, format!("{name} differs from golden"))?;
        lens.push(format!("{name}={}", t.len()));
    }
    Ok(format!("byte-identical ({}), ClientKeyExch adds 2", lens.join(" ")))
}

fn c8_determinism() -> Outcome {
    let mut s = bundled_scenario("certverify-mutant");
    s.bounds.max_events = 9;
    s.bounds.stop_when_decided = false;
    s.properties = PropertyId::SAFETY.to_vec();
    let first = explore(&s).map_err(|e| e.to_string())?.to_json();
    for run in 2..=3 {
        check(explore(&s).map_err(|e| e.to_string())?.to_json() == first, format!("run {run} differs"))?;
    }
    for workers in [1, 4] {
        let r = explore_with_workers(&s, workers).map_err(|e| e.to_string())?;
        check(r.to_json() == first, format!("{workers} workers differ"))?;
    }

    let mut f = bundled_scenario("faithful");
    f.bounds.max_events = 6;
    let (naive, nodes) = naive_family(&f);
    check(explored_family(&f) == naive, "dedup and naive families differ at 6 events")?;
    Ok(format!("3 runs and 1/4 workers identical; {} event sets match naive search ({nodes} nodes)", naive.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, Option<Duration>, fn() -> Outcome); 8] = [
        ("algebra oracle equivalence", Some(Duration::from_secs(30)), c1_algebra),
        ("possibility targets at 13 events", Some(Duration::from_secs(300)), c2_possibility),
        ("bounded safety sweep at 10 events", None, c3_safety),
        ("oops robustness at 12 events", None, c4_oops),
        ("rollback mutant detected", None, c5_rollback),
        ("certificate-verify mutant detected", None, c6_certverify),
        ("replay goldens", None, c7_goldens),
        ("determinism and dedup soundness", None, c8_determinism),
    ];
    let mut failed = Vec::new();
    let mut stdout = std::io::stdout().lock();
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let (outcome, took) = timed(limit, f);
        let (word, detail) = match &outcome {
            Ok(d) => ("PASS", d.clone()),
            Err(e) => ("FAIL", e.clone()),
        };
        let _ = writeln!(stdout, "acceptance {} {word}: {name}: {detail} [{took:.1?}]", i + 1);
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
