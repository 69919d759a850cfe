//! A finite Fake rule. The spy only ever needs to send messages that some
//! honest rule is waiting to receive, so candidates are instances of those
//! receive shapes whose holes are filled from what the spy already holds.

use std::collections::BTreeSet;

use crate::algebra::{certificate, synthesizes, AgentName, KeyTerm, Message, NonceBody, Role};
use crate::rules::{
    client_hello, finished_hash, key_exchange_body, parse_cert_verify, parse_key_exchange,
    parse_session_crypt, received, server_hello, Binding, RuleId, TraceIndex,
};
use crate::trace::{Event, Knowledge, Scenario, Trace};

/// Rule-shaped messages the spy could send now. Sorted, no duplicates,
/// each one checked with [`synthesizes`].
pub fn fake_candidates(s: &Scenario, evs: &Trace) -> Vec<Message> {
    let k = Knowledge::of(s, evs);
    fake_candidates_with(s, evs, &k, &TraceIndex::of(evs))
}

pub fn fake_candidates_with(
    s: &Scenario,
    _evs: &Trace,
    k: &Knowledge,
    _ix: &TraceIndex,
) -> Vec<Message> {
    let v = &s.variant;
    let agents = s.agents();
    let nonces = k.known_nonces();
    let sids = &s.bounds.sid_pool;
    let prefs = &s.bounds.pref_pool;
    let mut out: BTreeSet<Message> = BTreeSet::new();

    for a in &agents {
        for n in &nonces {
            for &sid in sids {
                for &p in prefs {
                    out.insert(client_hello(*a, n, sid, p));
                }
            }
        }
    }
    for n in &nonces {
        for &sid in sids {
            for &p in prefs {
                out.insert(server_hello(n, sid, p));
            }
        }
    }
    for a in agents.iter().chain([&AgentName::Server]) {
        out.insert(certificate(*a, KeyTerm::Pub(*a)));
    }

    let mut keys: BTreeSet<KeyTerm> = agents.iter().map(|a| KeyTerm::Pub(*a)).collect();
    keys.extend(k.analz.iter().filter_map(|m| match m {
        Message::Key(key) => Some(key.clone()),
        _ => None,
    }));
    for key in &keys {
        if let KeyTerm::Pub(_) = key {
            for n in &nonces {
                for a in &agents {
                    out.insert(Message::crypt(key.clone(), key_exchange_body(*a, n, v)));
                }
            }
        }
    }
    for key in &keys {
        if let KeyTerm::Pri(_) = key {
            for nb in &nonces {
                for b in &agents {
                    for pms in &nonces {
                        out.insert(Message::crypt(
                            key.clone(),
                            crate::rules::cert_verify_hash(nb, *b, pms, v),
                        ));
                    }
                }
            }
        }
    }
    for key in &keys {
        let KeyTerm::SessK(sk) = key else { continue };
        for a in &agents {
            for b in &agents {
                for &sid in sids {
                    for &pa in prefs {
                        for &pb in prefs {
                            out.insert(Message::crypt(
                                key.clone(),
                                finished_hash(sid, &sk.m, &sk.na, pa, *a, &sk.nb, pb, *b, v),
                            ));
                        }
                    }
                }
            }
        }
    }

    // replays of whole ciphertexts the spy has seen
    for m in &k.analz {
        let replayable = parse_key_exchange(m).is_some()
            || parse_cert_verify(m).is_some()
            || parse_session_crypt(m).is_some()
            || crate::algebra::as_certificate(m).is_some();
        if replayable {
            out.insert(m.clone());
        }
    }

    out.into_iter().filter(|x| synthesizes(&k.analz, x)).collect()
}

/// Steps that make `Says _ to payload` hold, or `None` if the spy cannot
/// produce the message. Existing events are reused (no steps); a missing
/// certificate comes from the Certificate rule when enabled; anything else
/// is faked, after deriving the session key with SpyKeys if needed.
pub fn discharge_receipt(
    s: &Scenario,
    evs: &Trace,
    k: &Knowledge,
    to: AgentName,
    payload: &Message,
) -> Option<Vec<Binding>> {
    if received(evs, to, payload) {
        return Some(vec![]);
    }
    let enabled = |r: RuleId| s.bounds.enabled_rules.contains(&r);
    if let Some((b, kb)) = crate::algebra::as_certificate(payload) {
        if *kb == KeyTerm::Pub(b) && b != to && enabled(RuleId::Certificate) {
            return Some(vec![Binding::Certificate { b, a: to }]);
        }
    }
    if !enabled(RuleId::Fake) {
        return None;
    }
    let fake = Binding::Fake {
        b: to,
        x: payload.clone(),
    };
    if synthesizes(&k.analz, payload) {
        return Some(vec![fake]);
    }
    let (key, _) = parse_session_crypt(payload)?;
    if !enabled(RuleId::SpyKeys) {
        return None;
    }
    let mut steps = derive_session_key(evs, k, &key.na, &key.nb, &key.m, key.role)?;
    let effects: Vec<Event> = steps.iter().flat_map(|b| b.effects(&s.variant)).collect();
    let k2 = k.extended(s, &effects);
    if !synthesizes(&k2.analz, payload) {
        return None;
    }
    steps.push(fake);
    Some(steps)
}

/// SpyKeys steps that put `sessionK((na, nb, m), role)` into the spy's
/// hands: one step if `m` is known, two if `m` must first be computed from
/// its PRF arguments. Randoms must come from hello traffic.
pub fn derive_session_key(
    evs: &Trace,
    k: &Knowledge,
    na: &NonceBody,
    nb: &NonceBody,
    m: &NonceBody,
    role: Role,
) -> Option<Vec<Binding>> {
    let ix = TraceIndex::of(evs);
    let hello_randoms = |x: &NonceBody, y: &NonceBody| {
        ix.client_randoms().contains(x)
            && ix.server_randoms().contains(y)
            && k.knows_nonce(x)
            && k.knows_nonce(y)
    };
    if !hello_randoms(na, nb) {
        return None;
    }
    let last = Binding::SpyKeys {
        na: na.clone(),
        nb: nb.clone(),
        m: m.clone(),
        role,
    };
    if k.knows_nonce(m) {
        return Some(vec![last]);
    }
    let (pms, na0, nb0) = m.prf_args()?;
    if !k.knows_nonce(pms) || !hello_randoms(na0, nb0) {
        return None;
    }
    // either role yields the master secret; pick one canonically
    let first = Binding::SpyKeys {
        na: na0.clone(),
        nb: nb0.clone(),
        m: pms.clone(),
        role: Role::ClientRole,
    };
    Some(vec![first, last])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::apply_rule;

    const A: AgentName = AgentName::Friend(1);
    const B: AgentName = AgentName::Friend(2);

    fn scenario() -> Scenario {
        let mut s = Scenario::with_friends(2);
        s.bounds.sid_pool = vec![0];
        s.bounds.pref_pool = vec![0];
        s
    }

    #[test]
    fn no_nonce_bearing_candidates_initially() {
        let s = scenario();
        let c = fake_candidates(&s, &Trace::new());
        assert!(!c.is_empty());
        for x in &c {
            let mut ns = BTreeSet::new();
            crate::algebra::collect_nonces(x, &mut ns);
            assert!(ns.is_empty(), "{x}");
        }
    }

    #[test]
    fn key_exchange_ciphertext_is_replayable() {
        let s = scenario();
        let kx = Message::crypt(KeyTerm::Pub(B), Message::nonce_atom(3));
        let evs = Trace::new().extended(&[Event::Says(A, B, kx.clone())]);
        let c = fake_candidates(&s, &evs);
        assert!(c.contains(&kx));
        let k = Knowledge::of(&s, &evs);
        assert!(!k.knows_nonce(&NonceBody::Atom(3)));
    }

    #[test]
    fn candidates_are_synthesizable() {
        let s = scenario();
        let evs = Trace::new().extended(&[
            Event::Says(A, B, client_hello(A, &NonceBody::Atom(1), 0, 0)),
            Event::Says(B, A, server_hello(&NonceBody::Atom(2), 0, 0)),
        ]);
        let k = Knowledge::of(&s, &evs);
        for x in fake_candidates(&s, &evs) {
            assert!(synthesizes(&k.analz, &x));
            assert!(apply_rule(&s, &evs, &Binding::Fake { b: A, x }).is_ok());
        }
    }

    #[test]
    fn discharge_prefers_existing_then_certificate() {
        let s = scenario();
        let cert = certificate(B, KeyTerm::Pub(B));
        let k = Knowledge::of(&s, &Trace::new());
        assert_eq!(
            discharge_receipt(&s, &Trace::new(), &k, A, &cert),
            Some(vec![Binding::Certificate { b: B, a: A }])
        );
        let evs = Trace::new().extended(&[Event::Says(AgentName::Spy, A, cert.clone())]);
        let k = Knowledge::of(&s, &evs);
        assert_eq!(discharge_receipt(&s, &evs, &k, A, &cert), Some(vec![]));
    }

    #[test]
    fn discharge_refuses_unknown_nonces() {
        let s = scenario();
        let k = Knowledge::of(&s, &Trace::new());
        let hello = client_hello(A, &NonceBody::Atom(1), 0, 0);
        assert_eq!(discharge_receipt(&s, &Trace::new(), &k, B, &hello), None);
    }
}
