mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;

use tls_inductive::algebra::{
    analz, certificate, collect_nonces, synthesizes, AgentName, KeyTerm, Message, NonceBody, Role,
};
use tls_inductive::intruder::fake_candidates;
use tls_inductive::rules::{client_hello, finished_hash, key_exchange_body, server_hello};
use tls_inductive::trace::{spies, Scenario, Trace};

/// Every message some honest rule waits to receive, with holes filled from
/// the nonces occurring in the trace, the agents, every key the trace or the
/// agents give rise to, and the number pools. The certification authority
/// only ever appears inside certificates.
fn premise_shapes(s: &Scenario, t: &Trace) -> BTreeSet<Message> {
    let mut nonces: BTreeSet<NonceBody> = BTreeSet::new();
    for e in t.events() {
        collect_nonces(e.payload(), &mut nonces);
    }
    let agents = s.agents();
    let mut with_server = agents.clone();
    with_server.push(AgentName::Server);
    let mut keys: Vec<KeyTerm> = Vec::new();
    for a in &with_server {
        keys.push(KeyTerm::Pub(*a));
        keys.push(KeyTerm::Pri(*a));
    }
    let (sids, prefs) = (&s.bounds.sid_pool, &s.bounds.pref_pool);
    let v = &s.variant;
    let mut out = BTreeSet::new();
    for a in &agents {
        for n in &nonces {
            for &sid in sids {
                for &p in prefs {
                    out.insert(client_hello(*a, n, sid, p));
                    out.insert(server_hello(n, sid, p));
                }
            }
        }
    }
    for a in &with_server {
        for k in &keys {
            out.insert(certificate(*a, k.clone()));
        }
    }
    for b in &agents {
        for a in &agents {
            for pms in &nonces {
                out.insert(Message::crypt(KeyTerm::Pub(*b), key_exchange_body(*a, pms, v)));
            }
        }
    }
    for na in &nonces {
        for nb in &nonces {
            for m in &nonces {
                for role in [Role::ClientRole, Role::ServerRole] {
                    let key = KeyTerm::session(na.clone(), nb.clone(), m.clone(), role);
                    for a in &agents {
                        for b in &agents {
                            for &sid in sids {
                                for &pa in prefs {
                                    for &pb in prefs {
                                        let h = finished_hash(sid, m, na, pa, *a, nb, pb, *b, v);
                                        out.insert(Message::crypt(key.clone(), h));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn scenario_for_seed(seed: u64) -> Scenario {
    let mut s = small_scenario();
    s.bounds.max_fresh_nonces = 4;
    if seed % 2 == 1 {
        s.bounds.pref_pool = vec![0, 1];
    }
    if seed % 3 == 2 {
        s.bad.insert(AgentName::Friend(2));
    }
    if seed % 5 == 0 {
        s.variant.omit_prefs_in_finished = true;
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn candidates_are_synthesizable(seed in any::<u64>()) {
        let s = scenario_for_seed(seed);
        let (path, _) = random_walk(&s, seed, 9);
        for t in &path {
            let known = oracle_analz(&spies(&s, t).into_iter().collect::<Vec<_>>());
            for x in fake_candidates(&s, t) {
                prop_assert!(oracle_synth(&known, &x, x.depth()), "{}", x);
            }
        }
    }

    #[test]
    fn candidates_cover_every_fakeable_premise(seed in any::<u64>()) {
        let s = scenario_for_seed(seed);
        let (path, _) = random_walk(&s, seed, 7);
        for t in &path {
            let known = analz(&spies(&s, t));
            let cands: BTreeSet<Message> = fake_candidates(&s, t).into_iter().collect();
            for p in premise_shapes(&s, t) {
                if synthesizes(&known, &p) {
                    prop_assert!(cands.contains(&p), "missing candidate {}", p);
                }
            }
        }
    }

    #[test]
    fn candidates_grow_with_the_trace(seed in any::<u64>()) {
        let s = scenario_for_seed(seed);
        let (path, _) = random_walk(&s, seed, 10);
        let sets: Vec<BTreeSet<Message>> =
            path.iter().map(|t| fake_candidates(&s, t).into_iter().collect()).collect();
        for w in sets.windows(2) {
            prop_assert!(w[0].is_subset(&w[1]));
        }
    }
}
