#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tls_inductive::algebra::{invert, AgentName, KeyTerm, Message, MessageSet, NonceBody, Role};
use tls_inductive::config::parse_scenario;
use tls_inductive::explorer::{explore_seeded, successors};
use tls_inductive::rules::Binding;
use tls_inductive::trace::{Event, Scenario, Trace};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn bundled_scenario(name: &str) -> Scenario {
    let path = manifest_dir().join("scenarios").join(format!("{name}.json"));
    let src = std::fs::read_to_string(&path).unwrap();
    parse_scenario(&src).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Random terms over a small vocabulary, so that sets share subterms and keys.

const AGENTS: [AgentName; 4] = [
    AgentName::Server,
    AgentName::Friend(1),
    AgentName::Friend(2),
    AgentName::Spy,
];

pub fn random_nonce(r: &mut ChaCha8Rng) -> NonceBody {
    if r.gen_ratio(1, 6) {
        NonceBody::prf(
            NonceBody::Atom(r.gen_range(1..=3)),
            NonceBody::Atom(r.gen_range(1..=3)),
            NonceBody::Atom(r.gen_range(1..=3)),
        )
    } else {
        NonceBody::Atom(r.gen_range(1..=4))
    }
}

pub fn random_key(r: &mut ChaCha8Rng) -> KeyTerm {
    match r.gen_range(0..3) {
        0 => KeyTerm::Pub(*AGENTS.choose(r).unwrap()),
        1 => KeyTerm::Pri(*AGENTS.choose(r).unwrap()),
        _ => KeyTerm::session(
            NonceBody::Atom(r.gen_range(1..=2)),
            NonceBody::Atom(r.gen_range(1..=2)),
            NonceBody::Atom(3),
            if r.gen_bool(0.5) { Role::ClientRole } else { Role::ServerRole },
        ),
    }
}

pub fn random_atom(r: &mut ChaCha8Rng) -> Message {
    match r.gen_range(0..4) {
        0 => Message::Agent(*AGENTS.choose(r).unwrap()),
        1 => Message::Number(r.gen_range(0..2)),
        2 => Message::Nonce(random_nonce(r)),
        _ => Message::Key(random_key(r)),
    }
}

/// A term of depth at most `depth` (atoms have depth 1).
pub fn random_message(r: &mut ChaCha8Rng, depth: usize) -> Message {
    if depth <= 1 || r.gen_ratio(1, 3) {
        return random_atom(r);
    }
    match r.gen_range(0..3) {
        0 => Message::hash(random_message(r, depth - 1)),
        1 => Message::crypt(random_key(r), random_message(r, depth - 1)),
        _ => Message::pair(random_message(r, depth - 1), random_message(r, depth - 1)),
    }
}

pub fn random_set(r: &mut ChaCha8Rng, max_len: usize, depth: usize) -> Vec<Message> {
    let n = r.gen_range(0..=max_len);
    (0..n).map(|_| random_message(r, depth)).collect()
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    any::<u64>().prop_map(|seed| random_message(&mut rng(seed), 4))
}

pub fn arb_set() -> impl Strategy<Value = Vec<Message>> {
    any::<u64>().prop_map(|seed| random_set(&mut rng(seed), 8, 4))
}

/// A target the spy can often build: pieces of what it can read, glued with
/// keys it holds.
pub fn buildable(r: &mut ChaCha8Rng, known: &MessageSet, depth: usize) -> Message {
    let pool: Vec<&Message> = known.iter().collect();
    if depth <= 1 || pool.is_empty() || r.gen_ratio(1, 3) {
        return if pool.is_empty() || r.gen_ratio(1, 4) {
            random_atom(r)
        } else {
            pool[r.gen_range(0..pool.len())].clone()
        };
    }
    let keys: Vec<KeyTerm> = known
        .iter()
        .filter_map(|m| match m {
            Message::Key(k) => Some(k.clone()),
            _ => None,
        })
        .collect();
    match r.gen_range(0..3) {
        0 => Message::hash(buildable(r, known, depth - 1)),
        1 if !keys.is_empty() => {
            let k = keys[r.gen_range(0..keys.len())].clone();
            Message::crypt(k, buildable(r, known, depth - 1))
        }
        _ => Message::pair(buildable(r, known, depth - 1), buildable(r, known, depth - 1)),
    }
}

// ---------------------------------------------------------------------------
// Oracles. Deliberately naive: plain vectors, whole-set rescans until nothing
// changes, no incremental bookkeeping.

fn push_new(v: &mut Vec<Message>, m: Message) -> bool {
    if v.contains(&m) {
        false
    } else {
        v.push(m);
        true
    }
}

pub fn oracle_parts(h: &[Message]) -> MessageSet {
    let mut v: Vec<Message> = Vec::new();
    for m in h {
        push_new(&mut v, m.clone());
    }
    loop {
        let mut changed = false;
        for m in v.clone() {
            match m {
                Message::MPair(x, y) => {
                    changed |= push_new(&mut v, (*x).clone());
                    changed |= push_new(&mut v, (*y).clone());
                }
                Message::Crypt(_, x) => changed |= push_new(&mut v, (*x).clone()),
                _ => {}
            }
        }
        if !changed {
            return v.into_iter().collect();
        }
    }
}

pub fn oracle_analz(h: &[Message]) -> MessageSet {
    let mut v: Vec<Message> = Vec::new();
    for m in h {
        push_new(&mut v, m.clone());
    }
    loop {
        let mut changed = false;
        for m in v.clone() {
            match m {
                Message::MPair(x, y) => {
                    changed |= push_new(&mut v, (*x).clone());
                    changed |= push_new(&mut v, (*y).clone());
                }
                Message::Crypt(k, x) => {
                    if v.contains(&Message::Key(invert(&k))) {
                        changed |= push_new(&mut v, (*x).clone());
                    }
                }
                _ => {}
            }
        }
        if !changed {
            return v.into_iter().collect();
        }
    }
}

fn subterms(x: &Message, out: &mut Vec<Message>) {
    if out.contains(x) {
        return;
    }
    out.push(x.clone());
    match x {
        Message::Hash(b) => subterms(b, out),
        Message::Crypt(_, b) => subterms(b, out),
        Message::MPair(a, b) => {
            subterms(a, out);
            subterms(b, out);
        }
        _ => {}
    }
}

/// Brute-force synth: start from `h` plus every guessable atom, then apply
/// each constructor to everything built so far, `rounds` times. Only terms
/// that occur inside `x` are kept, which does not change the answer for `x`
/// and keeps the enumeration finite.
pub fn oracle_synth(h: &MessageSet, x: &Message, rounds: usize) -> bool {
    let mut universe = Vec::new();
    subterms(x, &mut universe);
    let mut built: Vec<Message> = universe
        .iter()
        .filter(|u| h.contains(u) || matches!(u, Message::Agent(_) | Message::Number(_)))
        .cloned()
        .collect();
    for _ in 0..rounds {
        let mut next = built.clone();
        for a in &built {
            push_new(&mut next, Message::hash(a.clone()));
            for b in &built {
                push_new(&mut next, Message::pair(a.clone(), b.clone()));
            }
            for k in h {
                if let Message::Key(k) = k {
                    push_new(&mut next, Message::crypt(k.clone(), a.clone()));
                }
            }
        }
        next.retain(|m| universe.contains(m));
        built = next;
    }
    built.contains(x)
}

// ---------------------------------------------------------------------------
// Reachable traces.

/// A random path through the explorer's successor relation, as the list of
/// traces along it (starting with Nil) and the script that produced the last.
pub fn random_walk(s: &Scenario, seed: u64, max_events: usize) -> (Vec<Trace>, Vec<Binding>) {
    let mut r = rng(seed);
    let mut path = vec![Trace::new()];
    let mut script = Vec::new();
    loop {
        let cur = path.last().unwrap();
        let succ: Vec<_> = successors(s, cur)
            .into_iter()
            .filter(|x| x.trace.len() <= max_events)
            .collect();
        if succ.is_empty() {
            break;
        }
        let pick = succ[r.gen_range(0..succ.len())].clone();
        script.extend(pick.steps);
        path.push(pick.trace);
    }
    (path, script)
}

/// Small faithful scenario: two friends, every rule, one SID, one preference.
pub fn small_scenario() -> Scenario {
    let mut s = Scenario::with_friends(2);
    s.bounds.sid_pool = vec![0];
    s.bounds.pref_pool = vec![0];
    s.bounds.max_fresh_nonces = 5;
    s
}

// ---------------------------------------------------------------------------
// Dedup soundness.

pub type EventSet = BTreeSet<Event>;

pub fn event_set(t: &Trace) -> EventSet {
    t.events().iter().cloned().collect()
}

/// Every trace reachable within the bound, found by plain recursion with no
/// memory of what was already seen.
pub fn naive_family(s: &Scenario) -> (BTreeSet<EventSet>, usize) {
    fn go(s: &Scenario, t: &Trace, out: &mut BTreeSet<EventSet>, nodes: &mut usize) {
        *nodes += 1;
        out.insert(event_set(t));
        for succ in successors(s, t) {
            if succ.trace.len() <= s.bounds.max_events {
                go(s, &succ.trace, out, nodes);
            }
        }
    }
    let mut out = BTreeSet::new();
    let mut nodes = 0;
    go(s, &Trace::new(), &mut out, &mut nodes);
    (out, nodes)
}

pub fn explored_family(s: &Scenario) -> BTreeSet<EventSet> {
    let mut out = BTreeSet::new();
    explore_seeded(s, &[], Some(1), |t, _| {
        assert!(out.insert(event_set(t)), "event set visited twice");
    })
    .unwrap();
    out
}
