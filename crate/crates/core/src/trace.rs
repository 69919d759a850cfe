//! Events, traces and what the spy can see of them.

use std::collections::BTreeSet;
use std::fmt;

use crate::algebra::{
    analz, analz_into, certificate, parts, parts_into, AgentName, KeyTerm, Message, MessageSet,
    NonceBody,
};
use crate::explorer::Bounds;
use crate::properties::PropertyId;
use crate::rules::VariantFlags;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Event {
    Says(AgentName, AgentName, Message),
    Notes(AgentName, Message),
}

impl Event {
    pub fn payload(&self) -> &Message {
        match self {
            Event::Says(_, _, x) | Event::Notes(_, x) => x,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Says(a, b, x) => write!(f, "Says {a} {b} {x}"),
            Event::Notes(a, x) => write!(f, "Notes {a} {x}"),
        }
    }
}

/// A protocol history, newest event first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Trace {
    events: Vec<Event>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a trace from events listed oldest first.
    pub fn from_chronological(events: impl IntoIterator<Item = Event>) -> Self {
        let mut events: Vec<Event> = events.into_iter().collect();
        events.reverse();
        Trace { events }
    }

    /// Prefixes `new` (given oldest first) onto the trace.
    pub fn extended(&self, new: &[Event]) -> Trace {
        let mut events = Vec::with_capacity(self.events.len() + new.len());
        events.extend(new.iter().rev().cloned());
        events.extend(self.events.iter().cloned());
        Trace { events }
    }

    /// Newest first.
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Oldest first.
    pub fn chronological(&self) -> impl DoubleEndedIterator<Item = &Event> + '_ {
        self.events.iter().rev()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn contains(&self, e: &Event) -> bool {
        self.events.contains(e)
    }

    pub fn event_set(&self) -> BTreeSet<&Event> {
        self.events.iter().collect()
    }
}

/// Agent population, compromised agents, protocol variant and exploration limits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub honest_agents: BTreeSet<AgentName>,
    pub bad: BTreeSet<AgentName>,
    pub variant: VariantFlags,
    pub bounds: Bounds,
    /// Safety properties to check; empty means none.
    pub properties: Vec<PropertyId>,
    /// Whether to search for the possibility targets.
    pub possibility: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("the spy must be in the bad set")]
    SpyNotBad,
    #[error("the certification authority cannot be compromised")]
    ServerBad,
    #[error("the certification authority cannot take part in sessions")]
    ServerHonest,
}

impl Scenario {
    /// `friends` honest-capable agents plus the spy, nothing else compromised.
    pub fn with_friends(friends: u32) -> Self {
        Scenario {
            honest_agents: (1..=friends).map(AgentName::Friend).collect(),
            bad: [AgentName::Spy].into_iter().collect(),
            variant: VariantFlags::default(),
            bounds: Bounds::default(),
            properties: PropertyId::SAFETY.to_vec(),
            possibility: true,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !self.bad.contains(&AgentName::Spy) {
            return Err(ScenarioError::SpyNotBad);
        }
        if self.bad.contains(&AgentName::Server) {
            return Err(ScenarioError::ServerBad);
        }
        if self.honest_agents.contains(&AgentName::Server) {
            return Err(ScenarioError::ServerHonest);
        }
        Ok(())
    }

    /// Agents that take part in protocol runs: honest ones and bad ones.
    pub fn agents(&self) -> Vec<AgentName> {
        self.honest_agents.union(&self.bad).copied().collect()
    }

    pub fn is_bad(&self, a: AgentName) -> bool {
        self.bad.contains(&a)
    }
}

/// All public keys and certificates, plus the private keys of bad agents.
pub fn initial_spy_knowledge(s: &Scenario) -> MessageSet {
    let mut known = MessageSet::new();
    let mut everyone = s.agents();
    everyone.push(AgentName::Server);
    for a in everyone {
        known.insert(Message::Key(KeyTerm::Pub(a)));
        known.insert(certificate(a, KeyTerm::Pub(a)));
        if s.is_bad(a) {
            known.insert(Message::Key(KeyTerm::Pri(a)));
        }
    }
    known
}

fn visible<'a>(s: &'a Scenario, e: &'a Event) -> Option<&'a Message> {
    match e {
        Event::Says(_, _, x) => Some(x),
        Event::Notes(a, x) if s.is_bad(*a) => Some(x),
        Event::Notes(..) => None,
    }
}

/// Everything the spy has observed: initial knowledge, all traffic and the
/// notes of bad agents.
pub fn spies(s: &Scenario, evs: &Trace) -> MessageSet {
    let mut out = initial_spy_knowledge(s);
    out.extend(evs.events().iter().filter_map(|e| visible(s, e)).cloned());
    out
}

/// Parts of every message in the trace, sent or noted, plus the parts of the
/// spy's initial knowledge.
pub fn used(evs: &Trace, s: &Scenario) -> MessageSet {
    let init = initial_spy_knowledge(s);
    let mut out = parts(&init);
    parts_into(&mut out, evs.events().iter().map(Event::payload));
    out
}

/// `analz(spies(s, evs))`.
pub fn spy_sees(s: &Scenario, evs: &Trace) -> MessageSet {
    analz(&spies(s, evs))
}

/// The derived sets every guard and property needs, computed once per trace.
#[derive(Clone, Debug)]
pub struct Knowledge {
    pub spies: MessageSet,
    pub analz: MessageSet,
    pub parts: MessageSet,
    pub used: MessageSet,
}

impl Knowledge {
    pub fn of(s: &Scenario, evs: &Trace) -> Self {
        Knowledge::initial(s).extended(s, evs.events())
    }

    /// Knowledge on the empty trace.
    pub fn initial(s: &Scenario) -> Self {
        let spies = initial_spy_knowledge(s);
        let analz = analz(&spies);
        let parts = parts(&spies);
        let used = parts.clone();
        Knowledge {
            spies,
            analz,
            parts,
            used,
        }
    }

    /// Knowledge after appending `new` events, without recomputing from scratch.
    pub fn extended(&self, s: &Scenario, new: &[Event]) -> Self {
        let mut k = self.clone();
        let seen: Vec<&Message> = new.iter().filter_map(|e| visible(s, e)).collect();
        k.spies.extend(seen.iter().map(|m| (*m).clone()));
        analz_into(&mut k.analz, seen.iter().copied());
        parts_into(&mut k.parts, seen.iter().copied());
        parts_into(&mut k.used, new.iter().map(Event::payload));
        k
    }

    pub fn knows_nonce(&self, n: &NonceBody) -> bool {
        self.analz.contains(&Message::Nonce(n.clone()))
    }

    pub fn nonce_used(&self, n: &NonceBody) -> bool {
        self.used.contains(&Message::Nonce(n.clone()))
    }

    /// Least atom id whose nonce is not yet used.
    pub fn next_fresh_atom(&self) -> u32 {
        (1..)
            .find(|i| !self.nonce_used(&NonceBody::Atom(*i)))
            .expect("unbounded range")
    }

    /// Number of distinct atoms drawn so far.
    pub fn atoms_used(&self) -> usize {
        self.used
            .iter()
            .filter(|m| matches!(m, Message::Nonce(NonceBody::Atom(_))))
            .count()
    }

    /// Nonces the spy holds, in canonical order.
    pub fn known_nonces(&self) -> Vec<NonceBody> {
        self.analz
            .iter()
            .filter_map(|m| match m {
                Message::Nonce(n) => Some(n.clone()),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Message as M;

    const A: AgentName = AgentName::Friend(1);
    const B: AgentName = AgentName::Friend(2);

    fn scenario() -> Scenario {
        Scenario::with_friends(2)
    }

    #[test]
    fn initial_knowledge_spy_only() {
        let k = initial_spy_knowledge(&scenario());
        assert!(k.contains(&M::Key(KeyTerm::Pri(AgentName::Spy))));
        assert!(k.contains(&M::Key(KeyTerm::Pub(A))));
        assert!(k.contains(&M::Key(KeyTerm::Pub(B))));
        assert!(!k.contains(&M::Key(KeyTerm::Pri(A))));
        assert!(!k.contains(&M::Key(KeyTerm::Pri(B))));
        assert!(!k.contains(&M::Key(KeyTerm::Pri(AgentName::Server))));
        assert!(k.contains(&certificate(B, KeyTerm::Pub(B))));
    }

    #[test]
    fn initial_knowledge_with_bad_friend() {
        let mut s = scenario();
        s.bad.insert(B);
        let k = initial_spy_knowledge(&s);
        assert!(k.contains(&M::Key(KeyTerm::Pri(B))));
        assert!(!k.contains(&M::Key(KeyTerm::Pri(A))));
    }

    #[test]
    fn spies_of_empty_trace() {
        let s = scenario();
        assert_eq!(spies(&s, &Trace::new()), initial_spy_knowledge(&s));
    }

    #[test]
    fn traffic_is_visible_honest_notes_are_not() {
        let s = scenario();
        let hello = M::tuple(vec![M::Agent(A), M::nonce_atom(1), M::Number(5), M::Number(9)]);
        let note = M::pair(M::Agent(B), M::nonce_atom(4));
        let evs = Trace::new().extended(&[Event::Says(A, B, hello.clone()), Event::Notes(A, note)]);
        let seen = spies(&s, &evs);
        assert!(seen.contains(&hello));
        assert!(!parts(&seen).contains(&M::nonce_atom(4)));
        // but the note still makes the nonce used
        let u = used(&evs, &s);
        assert!(u.contains(&M::nonce_atom(4)));
        assert!(!u.contains(&M::nonce_atom(5)));
    }

    #[test]
    fn used_contains_public_keys() {
        let s = scenario();
        let u = used(&Trace::new(), &s);
        assert!(u.contains(&M::Key(KeyTerm::Pub(A))));
        assert!(u.contains(&M::Key(KeyTerm::Pub(AgentName::Server))));
    }

    #[test]
    fn spy_cannot_open_pms_for_honest_server() {
        let s = scenario();
        let evs = Trace::new().extended(&[Event::Says(
            A,
            B,
            M::crypt(KeyTerm::Pub(B), M::nonce_atom(3)),
        )]);
        let k = spy_sees(&s, &evs);
        assert!(k.contains(&M::Key(KeyTerm::Pri(AgentName::Spy))));
        assert!(!k.contains(&M::nonce_atom(3)));
    }

    #[test]
    fn incremental_knowledge_matches_recomputation() {
        let s = scenario();
        let first = vec![Event::Says(A, AgentName::Spy, M::crypt(KeyTerm::Pub(AgentName::Spy), M::nonce_atom(3)))];
        let t1 = Trace::new().extended(&first);
        let k1 = Knowledge::of(&s, &t1);
        let second = vec![Event::Notes(AgentName::Spy, M::nonce_atom(7))];
        let t2 = t1.extended(&second);
        let inc = k1.extended(&s, &second);
        let full = Knowledge::of(&s, &t2);
        assert_eq!(inc.spies, full.spies);
        assert_eq!(inc.analz, full.analz);
        assert_eq!(inc.parts, full.parts);
        assert_eq!(inc.used, full.used);
        assert!(full.knows_nonce(&NonceBody::Atom(3)));
        assert_eq!(full.next_fresh_atom(), 1);
        assert_eq!(full.atoms_used(), 2);
    }

    #[test]
    fn extending_prefixes_newest_first() {
        let e1 = Event::Notes(A, M::Number(1));
        let e2 = Event::Notes(A, M::Number(2));
        let t = Trace::new().extended(&[e1.clone()]).extended(&[e2.clone()]);
        assert_eq!(t.events(), &[e2.clone(), e1.clone()]);
        assert_eq!(t.chronological().collect::<Vec<_>>(), vec![&e1, &e2]);
    }
}
