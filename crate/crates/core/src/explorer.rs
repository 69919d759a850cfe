//! Breadth-first exploration of reachable event sets.
//!
//! Every guard is a function of the event set of a trace, so two traces with
//! the same events have the same futures and only one of them is expanded.
//! States are processed level by level (by event count); within a level they
//! are expanded in parallel and merged sequentially in dedup-key order, which
//! makes the report independent of the number of workers.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{AgentName, KeyTerm, Message, NonceBody};
use crate::intruder::discharge_receipt;
use crate::properties::{self, Finding, PropertyId, PropertyKind, Status, View};
use crate::rules::{
    accept_note, apply_rule, check_guard, client_hello, enumerate_bindings_with, fresh_for,
    key_exchange_body, parse_finished_hash, server_hello, Binding, GuardFailure,
    Resumption, RuleId, Session, TraceIndex,
};
use crate::syntax::format_binding;
use crate::trace::{Event, Knowledge, Scenario, Trace};

/// How the spy's messages enter the search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FakeMode {
    /// Fake, SpyKeys and Certificate steps are taken only to supply a missing
    /// premise of an honest step, right before that step.
    #[default]
    OnDemand,
    /// Every enabled rule is enumerated literally, with Fake over all
    /// candidates and premises matched only against existing events.
    Eager,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bounds {
    pub max_events: usize,
    pub max_fresh_nonces: usize,
    pub sid_pool: Vec<u64>,
    pub pref_pool: Vec<u64>,
    pub enabled_rules: BTreeSet<RuleId>,
    pub max_states: usize,
    pub fake_mode: FakeMode,
    /// Stop after the first level at which every selected property is decided.
    pub stop_when_decided: bool,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_events: 8,
            max_fresh_nonces: 4,
            sid_pool: vec![0, 1],
            pref_pool: vec![0, 1],
            enabled_rules: RuleId::ALL.into_iter().collect(),
            max_states: 20_000_000,
            fake_mode: FakeMode::OnDemand,
            stop_when_decided: false,
        }
    }
}

impl Bounds {
    pub fn enabled(&self, r: RuleId) -> bool {
        self.enabled_rules.contains(&r)
    }
}

fn event_hash(e: &Event) -> u128 {
    let half = |salt: u8| {
        let mut h = DefaultHasher::new();
        salt.hash(&mut h);
        e.hash(&mut h);
        h.finish() as u128
    };
    half(0) << 64 | half(1)
}

/// Sorted, deduplicated event hashes: a compact stand-in for the event set.
fn event_hashes(evs: &[Event]) -> Vec<u128> {
    let mut hs: Vec<u128> = evs.iter().map(event_hash).collect();
    hs.sort_unstable();
    hs.dedup();
    hs
}

fn set_digest(hashes: &[u128]) -> [u8; 16] {
    let mut h = DefaultHasher::new();
    hashes.hash(&mut h);
    let lo = h.finish();
    0xa5u8.hash(&mut h);
    let hi = h.finish();
    ((hi as u128) << 64 | lo as u128).to_be_bytes()
}

/// Digest of a trace's event set: order and repetition do not matter.
pub fn dedup_key(evs: &Trace) -> [u8; 16] {
    set_digest(&event_hashes(evs.events()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub instantiation: String,
    /// Events oldest first, in the trace file format.
    pub trace: Vec<String>,
    /// Rule steps that rebuild the trace from Nil, in the script format.
    pub script: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub property: PropertyId,
    pub kind: PropertyKind,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip)]
    pub witness_trace: Option<Trace>,
    #[serde(skip)]
    pub witness_script: Option<Vec<Binding>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExplorationReport {
    pub states_visited: u64,
    pub states_deduplicated: u64,
    pub max_depth_reached: usize,
    pub max_events: usize,
    pub partial: bool,
    pub stopped_early: bool,
    pub verdicts: Vec<Verdict>,
    pub incompleteness: String,
    /// Wall-clock time; left out of the JSON so reports are reproducible.
    #[serde(skip)]
    pub duration: std::time::Duration,
}

impl ExplorationReport {
    pub fn verdict(&self, id: PropertyId) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.property == id)
    }

    /// No violation and every possibility target witnessed.
    pub fn all_ok(&self) -> bool {
        self.verdicts
            .iter()
            .all(|v| matches!(v.status, Status::Holds | Status::Witnessed))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExploreError {
    #[error("state cap of {cap} exceeded; the attached report is partial")]
    StateCapExceeded {
        cap: usize,
        report: Box<ExplorationReport>,
    },
    #[error("seed script step {step}: {failure}")]
    BadSeed { step: usize, failure: GuardFailure },
}

#[derive(Clone, Debug)]
struct State {
    trace: Trace,
    script: Script,
    hashes: Vec<u128>,
}

impl State {
    fn new(trace: Trace, steps: Vec<Binding>) -> Self {
        let hashes = event_hashes(trace.events());
        State {
            trace,
            script: Script::root(steps),
            hashes,
        }
    }
}

/// A script stored as a chain of macro steps, so states share their common
/// prefix with the parent.
#[derive(Clone, Debug)]
struct Script(Option<Arc<ScriptNode>>);

#[derive(Debug)]
struct ScriptNode {
    steps: Vec<Binding>,
    parent: Script,
}

impl Script {
    fn root(steps: Vec<Binding>) -> Self {
        Script(None).then(steps)
    }

    fn then(&self, steps: Vec<Binding>) -> Self {
        if steps.is_empty() {
            return self.clone();
        }
        Script(Some(Arc::new(ScriptNode {
            steps,
            parent: self.clone(),
        })))
    }

    fn to_vec(&self) -> Vec<Binding> {
        let mut chunks = Vec::new();
        let mut cur = &self.0;
        while let Some(node) = cur {
            chunks.push(&node.steps);
            cur = &node.parent.0;
        }
        chunks.into_iter().rev().flatten().cloned().collect()
    }
}

/// A successor: the steps taken and the trace they produce.
#[derive(Clone, Debug)]
pub struct Successor {
    pub steps: Vec<Binding>,
    pub trace: Trace,
}

/// Replays a script from Nil; on failure reports the 0-based step index.
pub fn replay(s: &Scenario, script: &[Binding]) -> Result<Trace, (usize, GuardFailure)> {
    let mut t = Trace::new();
    for (i, b) in script.iter().enumerate() {
        t = apply_rule(s, &t, b).map_err(|f| (i, f))?;
    }
    Ok(t)
}

fn selected(s: &Scenario) -> Vec<PropertyId> {
    let mut ids: BTreeSet<PropertyId> = s.properties.iter().copied().collect();
    if s.possibility {
        ids.extend(PropertyId::POSSIBILITY);
    }
    ids.into_iter().collect()
}

pub fn explore(s: &Scenario) -> Result<ExplorationReport, ExploreError> {
    explore_seeded(s, &[], None, |_, _| {})
}

/// [`explore`] on a dedicated pool of `workers` threads.
pub fn explore_with_workers(s: &Scenario, workers: usize) -> Result<ExplorationReport, ExploreError> {
    explore_seeded(s, &[], Some(workers), |_, _| {})
}

/// The general entry point. `seeds` are scripts whose traces join Nil as
/// initial states; `visit` sees every visited state in canonical order.
pub fn explore_seeded(
    s: &Scenario,
    seeds: &[Vec<Binding>],
    workers: Option<usize>,
    visit: impl FnMut(&Trace, &[Binding]),
) -> Result<ExplorationReport, ExploreError> {
    let pool = workers.map(|n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
    });
    run(s, seeds, pool.as_ref(), visit)
}

const CHUNK: usize = 4096;

type Decided = BTreeMap<PropertyId, (Finding, Trace, Vec<Binding>)>;

fn in_pool<T: Send>(pool: Option<&rayon::ThreadPool>, f: impl FnOnce() -> T + Send) -> T {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

/// Keeps the first finding per property, with its concrete witness.
fn record(s: &Scenario, decided: &mut Decided, st: &State, findings: Vec<(PropertyId, Finding)>) {
    for (id, f) in findings {
        decided.entry(id).or_insert_with(|| {
            let (trace, script) = match &f.extra {
                Some(b) => {
                    let t = apply_rule(s, &st.trace, b).expect("finding step applies");
                    let mut sc = st.script.to_vec();
                    sc.push(b.clone());
                    (t, sc)
                }
                None => (st.trace.clone(), st.script.to_vec()),
            };
            (f, trace, script)
        });
    }
}

struct Expanded {
    findings: Vec<(PropertyId, Finding)>,
    successors: Vec<([u8; 16], Vec<u128>, Successor)>,
}

fn run(
    s: &Scenario,
    seeds: &[Vec<Binding>],
    pool: Option<&rayon::ThreadPool>,
    mut visit: impl FnMut(&Trace, &[Binding]),
) -> Result<ExplorationReport, ExploreError> {
    let started = std::time::Instant::now();
    let ids = selected(s);
    let mut decided: Decided = BTreeMap::new();
    let mut visited: HashSet<[u8; 16]> = HashSet::new();
    let mut levels: BTreeMap<usize, Vec<([u8; 16], State)>> = BTreeMap::new();
    let mut states_visited = 0u64;
    let mut deduplicated = 0u64;
    let mut max_depth = 0usize;
    let mut partial = false;
    let mut stopped_early = false;

    let mut initial = vec![State::new(Trace::new(), vec![])];
    for seed in seeds {
        let trace = replay(s, seed).map_err(|(step, failure)| ExploreError::BadSeed { step, failure })?;
        initial.push(State::new(trace, seed.clone()));
    }
    for st in initial {
        let d = set_digest(&st.hashes);
        if visited.insert(d) {
            levels.entry(st.trace.len()).or_default().push((d, st));
        }
    }

    let base = Knowledge::initial(s);
    while let Some((depth, mut level)) = levels.pop_first() {
        if depth > s.bounds.max_events {
            break;
        }
        level.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let open: Vec<PropertyId> = ids.iter().copied().filter(|id| !decided.contains_key(id)).collect();
        let expand = depth < s.bounds.max_events;
        // Chunks bound the successors held in memory at once; merging them in
        // digest order keeps the result independent of the worker count.
        for chunk in level.chunks(CHUNK) {
            let results = in_pool(pool, || {
                chunk
                    .par_iter()
                    .map(|(_, st)| expand_state(s, &base, st, &open, expand))
                    .collect::<Vec<_>>()
            });
            // States at the event bound have no successors; they are checked
            // straight away instead of being queued as another level.
            let mut leaves: Vec<State> = Vec::new();
            for ((_, st), ex) in chunk.iter().zip(results) {
                states_visited += 1;
                max_depth = max_depth.max(depth);
                visit(&st.trace, &st.script.to_vec());
                record(s, &mut decided, st, ex.findings);
                for (d, hashes, succ) in ex.successors {
                    if !visited.insert(d) {
                        deduplicated += 1;
                        continue;
                    }
                    let next = State {
                        trace: succ.trace,
                        script: st.script.then(succ.steps),
                        hashes,
                    };
                    if next.trace.len() == s.bounds.max_events {
                        leaves.push(next);
                    } else {
                        levels.entry(next.trace.len()).or_default().push((d, next));
                    }
                }
            }
            let leaf_results = in_pool(pool, || {
                leaves
                    .par_iter()
                    .map(|st| expand_state(s, &base, st, &open, false))
                    .collect::<Vec<_>>()
            });
            for (st, ex) in leaves.iter().zip(leaf_results) {
                states_visited += 1;
                max_depth = max_depth.max(st.trace.len());
                visit(&st.trace, &st.script.to_vec());
                record(s, &mut decided, st, ex.findings);
            }
        }
        drop(level);
        if visited.len() > s.bounds.max_states {
            partial = true;
            break;
        }
        if s.bounds.stop_when_decided && !ids.is_empty() && ids.iter().all(|id| decided.contains_key(id)) {
            stopped_early = !levels.is_empty();
            break;
        }
    }

    let verdicts = ids
        .iter()
        .map(|id| {
            let kind = id.kind();
            match decided.get(id) {
                Some((f, trace, script)) => Verdict {
                    property: *id,
                    kind,
                    status: match kind {
                        PropertyKind::Safety => Status::Violated,
                        PropertyKind::Possibility => Status::Witnessed,
                    },
                    witness: Some(Witness {
                        instantiation: f.instantiation.clone(),
                        trace: trace.chronological().map(|e| e.to_string()).collect(),
                        script: script.iter().map(format_binding).collect(),
                    }),
                    witness_trace: Some(trace.clone()),
                    witness_script: Some(script.clone()),
                },
                None => Verdict {
                    property: *id,
                    kind,
                    status: match kind {
                        PropertyKind::Safety => Status::Holds,
                        PropertyKind::Possibility => Status::NotWitnessed,
                    },
                    witness: None,
                    witness_trace: None,
                    witness_script: None,
                },
            }
        })
        .collect();

    let report = ExplorationReport {
        states_visited,
        states_deduplicated: deduplicated,
        max_depth_reached: max_depth,
        max_events: s.bounds.max_events,
        partial,
        stopped_early,
        verdicts,
        incompleteness: incompleteness_note(s),
        duration: started.elapsed(),
    };
    if partial {
        return Err(ExploreError::StateCapExceeded {
            cap: s.bounds.max_states,
            report: Box::new(report),
        });
    }
    Ok(report)
}

fn incompleteness_note(s: &Scenario) -> String {
    let b = &s.bounds;
    let mode = match b.fake_mode {
        FakeMode::OnDemand => "spy messages are sent only to supply a premise of the next honest step",
        FakeMode::Eager => "spy messages range over rule-shaped candidates only",
    };
    format!(
        "bounded search: at most {} events, {} fresh nonces, SID pool {:?}, preference pool {:?}; {}; \
         no violation here is evidence, not proof",
        b.max_events, b.max_fresh_nonces, b.sid_pool, b.pref_pool, mode
    )
}

fn expand_state(s: &Scenario, base: &Knowledge, st: &State, open: &[PropertyId], expand: bool) -> Expanded {
    let k = base.extended(s, st.trace.events());
    let ix = TraceIndex::of(&st.trace);
    let view = View {
        s,
        evs: &st.trace,
        k: &k,
        ix: &ix,
    };
    let findings = open
        .iter()
        .filter_map(|id| properties::check(*id, &view).map(|f| (*id, f)))
        .collect();
    let successors = if expand {
        successors_with(s, &st.trace, &k, &ix)
            .into_iter()
            .filter(|succ| succ.trace.len() <= s.bounds.max_events)
            .map(|succ| {
                let fresh = succ.trace.len() - st.trace.len();
                let mut hashes = st.hashes.clone();
                for e in &succ.trace.events()[..fresh] {
                    let h = event_hash(e);
                    if let Err(i) = hashes.binary_search(&h) {
                        hashes.insert(i, h);
                    }
                }
                (set_digest(&hashes), hashes, succ)
            })
            .collect()
    } else {
        vec![]
    };
    Expanded {
        findings,
        successors,
    }
}

/// All one-step successors of a trace under the scenario's fake mode.
pub fn successors(s: &Scenario, evs: &Trace) -> Vec<Successor> {
    let k = Knowledge::of(s, evs);
    successors_with(s, evs, &k, &TraceIndex::of(evs))
}

fn successors_with(s: &Scenario, evs: &Trace, k: &Knowledge, ix: &TraceIndex) -> Vec<Successor> {
    match s.bounds.fake_mode {
        FakeMode::Eager => eager_successors(s, evs, k, ix),
        FakeMode::OnDemand => on_demand_successors(s, evs, k, ix),
    }
}

fn adds_something(evs: &Trace, effects: &[Event]) -> bool {
    effects.iter().any(|e| !evs.contains(e))
}

fn eager_successors(s: &Scenario, evs: &Trace, k: &Knowledge, ix: &TraceIndex) -> Vec<Successor> {
    let mut out = Vec::new();
    for r in RuleId::ALL {
        if r == RuleId::Nil || !s.bounds.enabled(r) {
            continue;
        }
        for b in enumerate_bindings_with(s, evs, k, ix, r) {
            let effects = b.effects(&s.variant);
            if !adds_something(evs, &effects) {
                continue;
            }
            if check_guard(s, evs, k, &b).is_ok() {
                out.push(Successor {
                    trace: evs.extended(&effects),
                    steps: vec![b],
                });
            }
        }
    }
    out
}

/// Builds one macro step: discharges of missing premises, then an honest step.
struct MacroStep<'a> {
    s: &'a Scenario,
    trace: Trace,
    k: Cow<'a, Knowledge>,
    steps: Vec<Binding>,
}

impl<'a> MacroStep<'a> {
    fn new(s: &'a Scenario, evs: &Trace, k: &'a Knowledge) -> Self {
        MacroStep {
            s,
            trace: evs.clone(),
            k: Cow::Borrowed(k),
            steps: vec![],
        }
    }

    fn apply(&mut self, b: Binding) -> bool {
        let effects = b.effects(&self.s.variant);
        self.apply_effects(b, effects)
    }

    fn apply_effects(&mut self, b: Binding, effects: Vec<Event>) -> bool {
        if check_guard(self.s, &self.trace, &self.k, &b).is_err() {
            return false;
        }
        if matches!(b, Binding::SpyKeys { .. }) {
            let next = self.k.extended(self.s, &effects);
            self.k = Cow::Owned(next);
        }
        self.trace = self.trace.extended(&effects);
        self.steps.push(b);
        true
    }

    fn receive(&mut self, to: AgentName, payload: &Message) -> bool {
        match discharge_receipt(self.s, &self.trace, &self.k, to, payload) {
            Some(bs) => bs.into_iter().all(|b| self.apply(b)),
            None => false,
        }
    }

    fn finish(mut self, b: Binding) -> Option<Successor> {
        let effects = b.effects(&self.s.variant);
        if !adds_something(&self.trace, &effects) {
            return None;
        }
        if !self.apply_effects(b, effects) {
            return None;
        }
        Some(Successor {
            steps: self.steps,
            trace: self.trace,
        })
    }
}

fn on_demand_successors(s: &Scenario, evs: &Trace, k: &Knowledge, ix: &TraceIndex) -> Vec<Successor> {
    let bounds = &s.bounds;
    let v = &s.variant;
    let agents = s.agents();
    let actors: Vec<AgentName> = agents.iter().copied().filter(|a| !a.is_spy()).collect();
    let known_client_randoms: Vec<NonceBody> =
        ix.client_randoms().into_iter().filter(|n| k.knows_nonce(n)).collect();
    let server_randoms: Vec<NonceBody> = ix.server_randoms().into_iter().collect();
    let sid0 = bounds.sid_pool[0];
    let pref0 = bounds.pref_pool[0];
    let mut out: Vec<Successor> = Vec::new();
    let mut push = |o: Option<Successor>| {
        if let Some(x) = o {
            out.push(x);
        }
    };

    if bounds.enabled(RuleId::ClientHello) {
        if let Some(na) = fresh_for(s, k) {
            for &a in &actors {
                for &b in &agents {
                    if a == b {
                        continue;
                    }
                    for &sid in &bounds.sid_pool {
                        for &pa in &bounds.pref_pool {
                            let m = MacroStep::new(s, evs, k);
                            push(m.finish(Binding::ClientHello { a, b, na: na.clone(), sid, pa }));
                        }
                    }
                }
            }
        }
    }

    if bounds.enabled(RuleId::ServerHello) {
        if let Some(nb) = fresh_for(s, k) {
            for &b in &actors {
                for &a in &agents {
                    if a == b {
                        continue;
                    }
                    for &sid in &bounds.sid_pool {
                        // the effect does not depend on which hello is answered
                        let existing = ix
                            .client_hellos
                            .iter()
                            .find(|h| h.1 == b && h.2 == a && h.4 == sid)
                            .map(|h| (h.3.clone(), h.5));
                        let (na, pa) = match existing {
                            Some(x) => x,
                            None => match known_client_randoms.first() {
                                Some(n) => (n.clone(), pref0),
                                None => continue,
                            },
                        };
                        for &pb in &bounds.pref_pool {
                            let mut m = MacroStep::new(s, evs, k);
                            if !m.receive(b, &client_hello(a, &na, sid, pa)) {
                                continue;
                            }
                            push(m.finish(Binding::ServerHello {
                                b,
                                a,
                                na: na.clone(),
                                sid,
                                pa,
                                nb: nb.clone(),
                                pb,
                            }));
                        }
                    }
                }
            }
        }
    }

    if bounds.enabled(RuleId::ClientKeyExch) {
        if let Some(pms) = fresh_for(s, k) {
            for &a in &actors {
                for &b in &agents {
                    if a == b {
                        continue;
                    }
                    let kb = KeyTerm::Pub(b);
                    let mut m = MacroStep::new(s, evs, k);
                    if !m.receive(a, &crate::algebra::certificate(b, kb.clone())) {
                        continue;
                    }
                    push(m.finish(Binding::ClientKeyExch { a, b, kb, pms: pms.clone() }));
                }
            }
        }
    }

    if bounds.enabled(RuleId::CertVerify) {
        for (a, b, pms) in &ix.pms_notes {
            if a.is_spy() {
                continue;
            }
            for nb in &server_randoms {
                let existing = ix
                    .server_hellos
                    .iter()
                    .find(|h| h.1 == *a && &h.2 == nb)
                    .map(|h| (h.3, h.4));
                let (sid, pb) = existing.unwrap_or((sid0, pref0));
                let mut m = MacroStep::new(s, evs, k);
                if !m.receive(*a, &server_hello(nb, sid, pb)) {
                    continue;
                }
                push(m.finish(Binding::CertVerify {
                    a: *a,
                    b: *b,
                    nb: nb.clone(),
                    sid,
                    pb,
                    pms: pms.clone(),
                }));
            }
        }
    }

    if bounds.enabled(RuleId::ClientFinished) {
        for (from, to, ca, na, sid, pa) in &ix.client_hellos {
            if from != ca || from == to || from.is_spy() {
                continue;
            }
            let (a, b) = (*from, *to);
            for (na_, nb_, pms) in &ix.pms_notes {
                if *na_ != a || *nb_ != b {
                    continue;
                }
                for nb in &server_randoms {
                    for &pb in &bounds.pref_pool {
                        let mut m = MacroStep::new(s, evs, k);
                        if !m.receive(a, &server_hello(nb, *sid, pb)) {
                            continue;
                        }
                        push(m.finish(Binding::ClientFinished(Session {
                            a,
                            b,
                            na: na.clone(),
                            sid: *sid,
                            pa: *pa,
                            nb: nb.clone(),
                            pb,
                            pms: pms.clone(),
                        })));
                    }
                }
            }
        }
    }

    if bounds.enabled(RuleId::ServerFinished) {
        let mut pms_choices: BTreeSet<NonceBody> = k.known_nonces().into_iter().collect();
        pms_choices.extend(ix.key_exchanges.iter().map(|x| x.4.clone()));
        for (from, to, nb, sid, pb) in &ix.server_hellos {
            let (b, a) = (*from, *to);
            if a == b || b.is_spy() {
                continue;
            }
            let mut client_randoms: BTreeSet<NonceBody> = known_client_randoms.iter().cloned().collect();
            client_randoms.extend(
                ix.client_hellos
                    .iter()
                    .filter(|h| h.1 == b && h.2 == a && h.4 == *sid)
                    .map(|h| h.3.clone()),
            );
            for na in &client_randoms {
                for &pa in &bounds.pref_pool {
                    for pms in &pms_choices {
                        let kx = Message::crypt(KeyTerm::Pub(b), key_exchange_body(a, pms, v));
                        let mut m = MacroStep::new(s, evs, k);
                        if !m.receive(b, &client_hello(a, na, *sid, pa)) || !m.receive(b, &kx) {
                            continue;
                        }
                        push(m.finish(Binding::ServerFinished(Session {
                            a,
                            b,
                            na: na.clone(),
                            sid: *sid,
                            pa,
                            nb: nb.clone(),
                            pb: *pb,
                            pms: pms.clone(),
                        })));
                    }
                }
            }
        }
    }

    for rule in [RuleId::ClientAccepts, RuleId::ServerAccepts] {
        if !bounds.enabled(rule) {
            continue;
        }
        let is_client = rule == RuleId::ClientAccepts;
        for (from, to, key, body) in &ix.session_crypts {
            let want = if is_client {
                crate::algebra::Role::ClientRole
            } else {
                crate::algebra::Role::ServerRole
            };
            if key.role != want || from.is_spy() {
                continue;
            }
            let Some(f) = parse_finished_hash(body) else { continue };
            let (a, b) = if is_client { (*from, *to) } else { (*to, *from) };
            if f.a != a || f.b != b || f.na != &key.na || f.nb != &key.nb || f.m != &key.m {
                continue;
            }
            let Some((pms, na, nb)) = key.m.prf_args() else { continue };
            if na != &key.na || nb != &key.nb {
                continue;
            }
            let ses = Session {
                a,
                b,
                na: na.clone(),
                sid: f.sid,
                pa: f.pa.unwrap_or(pref0),
                pb: f.pb.unwrap_or(pref0),
                nb: nb.clone(),
                pms: pms.clone(),
            };
            let mut m = MacroStep::new(s, evs, k);
            let ok = if is_client {
                m.receive(a, &ses.server_crypt(v))
            } else {
                let kx = Message::crypt(KeyTerm::Pub(b), key_exchange_body(a, pms, v));
                m.receive(b, &kx) && m.receive(b, &ses.client_crypt(v))
            };
            if !ok {
                continue;
            }
            push(m.finish(if is_client {
                Binding::ClientAccepts(ses)
            } else {
                Binding::ServerAccepts(ses)
            }));
        }
    }

    if bounds.enabled(RuleId::ClientResume) {
        for (noter, sid, a, b, mm) in &ix.accept_notes {
            if noter != a || a == b || a.is_spy() {
                continue;
            }
            for (from, to, ca, na, ch_sid, pa) in &ix.client_hellos {
                if from != a || to != b || ca != a || ch_sid != sid {
                    continue;
                }
                for nb in &server_randoms {
                    for &pb in &bounds.pref_pool {
                        let mut m = MacroStep::new(s, evs, k);
                        if !m.receive(*a, &server_hello(nb, *sid, pb)) {
                            continue;
                        }
                        push(m.finish(Binding::ClientResume(Resumption {
                            a: *a,
                            b: *b,
                            na: na.clone(),
                            sid: *sid,
                            pa: *pa,
                            nb: nb.clone(),
                            pb,
                            m: mm.clone(),
                        })));
                    }
                }
            }
        }
    }

    if bounds.enabled(RuleId::ServerResume) {
        for (noter, sid, a, b, mm) in &ix.accept_notes {
            if noter != b || a == b || b.is_spy() {
                continue;
            }
            debug_assert!(evs.contains(&Event::Notes(*b, accept_note(*sid, *a, *b, mm))));
            for (from, to, nb, sh_sid, pb) in &ix.server_hellos {
                if from != b || to != a || sh_sid != sid {
                    continue;
                }
                let mut client_randoms: BTreeSet<NonceBody> =
                    known_client_randoms.iter().cloned().collect();
                client_randoms.extend(
                    ix.client_hellos
                        .iter()
                        .filter(|h| h.1 == *b && h.2 == *a && h.4 == *sid)
                        .map(|h| h.3.clone()),
                );
                for na in &client_randoms {
                    for &pa in &bounds.pref_pool {
                        let mut m = MacroStep::new(s, evs, k);
                        if !m.receive(*b, &client_hello(*a, na, *sid, pa)) {
                            continue;
                        }
                        push(m.finish(Binding::ServerResume(Resumption {
                            a: *a,
                            b: *b,
                            na: na.clone(),
                            sid: *sid,
                            pa,
                            nb: nb.clone(),
                            pb: *pb,
                            m: mm.clone(),
                        })));
                    }
                }
            }
        }
    }

    if bounds.enabled(RuleId::Oops) {
        let mut seen = BTreeSet::new();
        for (from, _, key, _) in &ix.session_crypts {
            if from.is_spy() || !seen.insert((*from, key.clone())) {
                continue;
            }
            let m = MacroStep::new(s, evs, k);
            push(m.finish(Binding::Oops {
                a: *from,
                key: KeyTerm::SessK(std::sync::Arc::new(key.clone())),
            }));
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(max_events: usize) -> Scenario {
        let mut s = Scenario::with_friends(2);
        s.bounds.max_events = max_events;
        s.bounds.sid_pool = vec![0];
        s.bounds.pref_pool = vec![0];
        s.bounds.max_fresh_nonces = 3;
        s
    }

    #[test]
    fn zero_events_visits_only_nil() {
        let r = explore(&tiny(0)).unwrap();
        assert_eq!(r.states_visited, 1);
        for v in &r.verdicts {
            if v.kind == PropertyKind::Safety {
                assert_eq!(v.status, Status::Holds);
            } else {
                assert_eq!(v.status, Status::NotWitnessed);
            }
        }
    }

    #[test]
    fn dedup_key_ignores_order() {
        let e1 = Event::Notes(AgentName::Friend(1), Message::Number(1));
        let e2 = Event::Notes(AgentName::Friend(2), Message::Number(2));
        let t1 = Trace::from_chronological([e1.clone(), e2.clone()]);
        let t2 = Trace::from_chronological([e2.clone(), e1.clone()]);
        let t3 = Trace::from_chronological([e1]);
        assert_eq!(dedup_key(&t1), dedup_key(&t2));
        assert_ne!(dedup_key(&t1), dedup_key(&t3));
    }

    #[test]
    fn visited_states_replay() {
        let s = tiny(5);
        let mut n = 0;
        explore_seeded(&s, &[], None, |t, script| {
            assert_eq!(&replay(&s, script).unwrap(), t);
            n += 1;
        })
        .unwrap();
        assert!(n > 1);
    }
}
