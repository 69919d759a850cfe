//! Security goals as predicates over a single trace.
//!
//! Safety properties quantify over terms occurring in the trace, so each
//! check is finite. Hypotheses of the form "X is in parts(spies)" are also
//! tested against what the spy could inject right now: if a violating
//! message is synthesizable, the finding carries the Fake step that sends it.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::algebra::{
    analz_into, as_certificate, certificate, synthesizes, AgentName, KeyTerm, Message, NonceBody,
    Role, SessionKey,
};
use crate::rules::{
    cert_verify_hash, finished_hash, parse_cert_verify, parse_finished_hash, parse_session_crypt,
    pms_note, Binding, TraceIndex,
};
use crate::trace::{Event, Knowledge, Scenario, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyId {
    CertRegularity,
    MasterImpliesPms,
    FreshPmsNoSessionkey,
    ClientAuth,
    SessionkeyCompromise,
    ClientkSecrecy,
    ServerkSecrecy,
    PmsSecrecy,
    MasterSecrecy,
    ClientFinishedGuarantee,
    ServerFinishedGuarantee,
    NotesDischarge,
    PrefAgreement,
    PossibleFullHandshake,
    PossibleCertVerify,
    PossibleResumption,
    PossibleClientAuth,
    PossibleResumptionAfterOops,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    Safety,
    Possibility,
}

impl PropertyId {
    pub const SAFETY: [PropertyId; 13] = [
        PropertyId::CertRegularity,
        PropertyId::MasterImpliesPms,
        PropertyId::FreshPmsNoSessionkey,
        PropertyId::ClientAuth,
        PropertyId::SessionkeyCompromise,
        PropertyId::ClientkSecrecy,
        PropertyId::ServerkSecrecy,
        PropertyId::PmsSecrecy,
        PropertyId::MasterSecrecy,
        PropertyId::ClientFinishedGuarantee,
        PropertyId::ServerFinishedGuarantee,
        PropertyId::NotesDischarge,
        PropertyId::PrefAgreement,
    ];

    /// The four standard possibility targets.
    pub const POSSIBILITY: [PropertyId; 4] = [
        PropertyId::PossibleFullHandshake,
        PropertyId::PossibleCertVerify,
        PropertyId::PossibleResumption,
        PropertyId::PossibleClientAuth,
    ];

    pub fn kind(self) -> PropertyKind {
        match self {
            PropertyId::PossibleFullHandshake
            | PropertyId::PossibleCertVerify
            | PropertyId::PossibleResumption
            | PropertyId::PossibleClientAuth
            | PropertyId::PossibleResumptionAfterOops => PropertyKind::Possibility,
            _ => PropertyKind::Safety,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PropertyId::CertRegularity => "cert_regularity",
            PropertyId::MasterImpliesPms => "master_implies_pms",
            PropertyId::FreshPmsNoSessionkey => "fresh_pms_no_sessionkey",
            PropertyId::ClientAuth => "client_auth",
            PropertyId::SessionkeyCompromise => "sessionkey_compromise",
            PropertyId::ClientkSecrecy => "clientk_secrecy",
            PropertyId::ServerkSecrecy => "serverk_secrecy",
            PropertyId::PmsSecrecy => "pms_secrecy",
            PropertyId::MasterSecrecy => "master_secrecy",
            PropertyId::ClientFinishedGuarantee => "client_finished_guarantee",
            PropertyId::ServerFinishedGuarantee => "server_finished_guarantee",
            PropertyId::NotesDischarge => "notes_discharge",
            PropertyId::PrefAgreement => "pref_agreement",
            PropertyId::PossibleFullHandshake => "possible_full_handshake",
            PropertyId::PossibleCertVerify => "possible_cert_verify",
            PropertyId::PossibleResumption => "possible_resumption",
            PropertyId::PossibleClientAuth => "possible_client_auth",
            PropertyId::PossibleResumptionAfterOops => "possible_resumption_after_oops",
        }
    }

    pub fn from_name(s: &str) -> Option<PropertyId> {
        PropertyId::SAFETY
            .into_iter()
            .chain(PropertyId::POSSIBILITY)
            .chain([PropertyId::PossibleResumptionAfterOops])
            .find(|p| p.name() == s)
    }
}

impl fmt::Display for PropertyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A violation (safety) or a satisfying instance (possibility) on one trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    /// The quantified variables, as `NAME=value` pairs.
    pub instantiation: String,
    /// A Fake step to append when the offending message is only synthesizable.
    pub extra: Option<Binding>,
}

fn found(instantiation: String) -> Option<Finding> {
    Some(Finding {
        instantiation,
        extra: None,
    })
}

fn found_with_fake(instantiation: String, to: AgentName, x: Message) -> Option<Finding> {
    Some(Finding {
        instantiation,
        extra: Some(Binding::Fake { b: to, x }),
    })
}

/// Status of a property after exploration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Holds,
    Violated,
    Witnessed,
    NotWitnessed,
}

/// Everything the predicates look at, computed once per trace.
pub struct View<'a> {
    pub s: &'a Scenario,
    pub evs: &'a Trace,
    pub k: &'a Knowledge,
    pub ix: &'a TraceIndex,
}

impl<'a> View<'a> {
    fn honest(&self, a: AgentName) -> bool {
        !self.s.is_bad(a)
    }

    fn has(&self, e: &Event) -> bool {
        self.evs.contains(e)
    }

    /// `Says _ Spy (Key K)` sent by someone other than the spy.
    fn oopsed(&self, key: &KeyTerm) -> bool {
        self.evs.events().iter().any(|e| {
            matches!(e, Event::Says(from, AgentName::Spy, Message::Key(k))
                if !from.is_spy() && k == key)
        })
    }

    fn oopsed_by(&self, who: AgentName, key: &KeyTerm) -> bool {
        self.has(&Event::Says(who, AgentName::Spy, Message::Key(key.clone())))
    }

    /// `Notes A {|Agent B, Nonce PMS|}` with both parties honest.
    fn honest_pms_notes(&self) -> impl Iterator<Item = &(AgentName, AgentName, NonceBody)> + '_ {
        self.ix
            .pms_notes
            .iter()
            .filter(|(a, b, _)| self.honest(*a) && self.honest(*b))
    }

    fn honest_pms_set(&self) -> BTreeSet<&NonceBody> {
        self.honest_pms_notes().map(|(_, _, p)| p).collect()
    }

    fn session_keys_in_parts(&self) -> impl Iterator<Item = &SessionKey> + '_ {
        self.k.parts.iter().filter_map(|m| match m {
            Message::Key(KeyTerm::SessK(sk)) => Some(&**sk),
            _ => None,
        })
    }

    fn first_receiver(&self) -> AgentName {
        self.s
            .agents()
            .into_iter()
            .find(|a| self.honest(*a))
            .unwrap_or(AgentName::Spy)
    }
}

fn pms_of(m: &NonceBody) -> Option<&NonceBody> {
    m.prf_args().map(|(p, _, _)| p)
}

fn key_of(sk: &SessionKey) -> KeyTerm {
    KeyTerm::SessK(std::sync::Arc::new(sk.clone()))
}

/// Evaluates one property on one trace. For safety properties `Some` is a
/// violation; for possibility targets `Some` is a satisfying instance.
pub fn check(id: PropertyId, v: &View) -> Option<Finding> {
    match id {
        PropertyId::CertRegularity => cert_regularity(v),
        PropertyId::MasterImpliesPms => master_implies_pms(v),
        PropertyId::FreshPmsNoSessionkey => fresh_pms_no_sessionkey(v),
        PropertyId::ClientAuth => client_auth(v),
        PropertyId::SessionkeyCompromise => sessionkey_compromise(v),
        PropertyId::ClientkSecrecy => session_key_secrecy(v, Role::ClientRole),
        PropertyId::ServerkSecrecy => session_key_secrecy(v, Role::ServerRole),
        PropertyId::PmsSecrecy => pms_secrecy(v),
        PropertyId::MasterSecrecy => master_secrecy(v),
        PropertyId::ClientFinishedGuarantee => client_finished_guarantee(v),
        PropertyId::ServerFinishedGuarantee => server_finished_guarantee(v),
        PropertyId::NotesDischarge => notes_discharge(v),
        PropertyId::PrefAgreement => pref_agreement(v),
        PropertyId::PossibleFullHandshake => possible_full_handshake(v),
        PropertyId::PossibleCertVerify => possible_cert_verify(v),
        PropertyId::PossibleResumption => possible_resumption(v, false),
        PropertyId::PossibleClientAuth => possible_client_auth(v),
        PropertyId::PossibleResumptionAfterOops => possible_resumption(v, true),
    }
}

/// [`check`] on a bare trace.
pub fn check_trace(id: PropertyId, s: &Scenario, evs: &Trace) -> Option<Finding> {
    let k = Knowledge::of(s, evs);
    let ix = TraceIndex::of(evs);
    check(
        id,
        &View {
            s,
            evs,
            k: &k,
            ix: &ix,
        },
    )
}

fn cert_regularity(v: &View) -> Option<Finding> {
    for m in &v.k.parts {
        if let Some((b, kb)) = as_certificate(m) {
            if *kb != KeyTerm::Pub(b) {
                return found(format!("B={b} KB={kb}"));
            }
        }
    }
    if v.k.analz.contains(&Message::Key(KeyTerm::Pri(AgentName::Server))) {
        let b = v.first_receiver();
        let x = certificate(b, KeyTerm::Pub(AgentName::Spy));
        return found_with_fake(format!("B={b} KB={}", KeyTerm::Pub(AgentName::Spy)), b, x);
    }
    None
}

fn master_implies_pms(v: &View) -> Option<Finding> {
    for m in &v.k.parts {
        if let Message::Nonce(n) = m {
            if let Some((pms, _, _)) = n.prf_args() {
                if !v.k.parts.contains(&Message::Nonce(pms.clone())) {
                    return found(format!("M={n} PMS={pms}"));
                }
            }
        }
    }
    None
}

fn fresh_pms_no_sessionkey(v: &View) -> Option<Finding> {
    for m in &v.k.parts {
        let sk = match m {
            Message::Key(KeyTerm::SessK(sk)) | Message::Crypt(KeyTerm::SessK(sk), _) => sk,
            _ => continue,
        };
        if let Some(pms) = pms_of(&sk.m) {
            if !v.k.parts.contains(&Message::Nonce(pms.clone())) {
                return found(format!("PMS={pms} K={}", key_of(sk)));
            }
        }
    }
    None
}

fn client_auth(v: &View) -> Option<Finding> {
    for m in &v.k.parts {
        if let Some((a, _, b, _)) = parse_cert_verify(m) {
            if v.honest(a) && !v.has(&Event::Says(a, b, m.clone())) {
                return found(format!("A={a} B={b} X={m}"));
            }
        }
    }
    forged_cert_verify(v)
}

/// A certificate-verify signature the spy could forge with a stolen honest key.
fn forged_cert_verify(v: &View) -> Option<Finding> {
    let n = v.k.known_nonces().into_iter().next()?;
    for a in v.s.agents() {
        if v.honest(a) && v.k.analz.contains(&Message::Key(KeyTerm::Pri(a))) {
            let b = AgentName::Spy;
            let x = Message::crypt(KeyTerm::Pri(a), cert_verify_hash(&n, b, &n, &v.s.variant));
            if !v.has(&Event::Says(a, b, x.clone())) {
                return found_with_fake(format!("A={a} B={b} X={x}"), b, x);
            }
        }
    }
    None
}

fn known_nonce_set(ms: &crate::algebra::MessageSet) -> BTreeSet<&NonceBody> {
    ms.iter()
        .filter_map(|m| match m {
            Message::Nonce(n) => Some(n),
            _ => None,
        })
        .collect()
}

fn sessionkey_compromise(v: &View) -> Option<Finding> {
    let base = known_nonce_set(&v.k.analz);
    let mut tried = BTreeSet::new();
    for m in &v.k.analz {
        let Message::Crypt(key @ KeyTerm::SessK(_), _) = m else { continue };
        let as_msg = Message::Key(key.clone());
        if v.k.analz.contains(&as_msg) || !tried.insert(key.clone()) {
            continue;
        }
        let mut ext = v.k.analz.clone();
        analz_into(&mut ext, [&as_msg]);
        if let Some(n) = known_nonce_set(&ext).difference(&base).next() {
            return found(format!("K={key} N={n}"));
        }
    }
    None
}

fn session_key_secrecy(v: &View, role: Role) -> Option<Finding> {
    let secret_pms = v.honest_pms_set();
    if secret_pms.is_empty() {
        return None;
    }
    for sk in v.session_keys_in_parts() {
        if sk.role != role {
            continue;
        }
        let Some(pms) = pms_of(&sk.m) else { continue };
        if secret_pms.contains(pms) && !v.oopsed(&key_of(sk)) {
            return found(format!("PMS={pms} K={}", key_of(sk)));
        }
    }
    None
}

fn pms_secrecy(v: &View) -> Option<Finding> {
    for (a, b, pms) in v.honest_pms_notes() {
        if v.k.knows_nonce(pms) {
            return found(format!("A={a} B={b} PMS={pms}"));
        }
    }
    None
}

fn master_secrecy(v: &View) -> Option<Finding> {
    let secret_pms = v.honest_pms_set();
    if secret_pms.is_empty() {
        return None;
    }
    for n in known_nonce_set(&v.k.analz) {
        if let Some(pms) = pms_of(n) {
            if secret_pms.contains(pms) {
                return found(format!("PMS={pms} M={n}"));
            }
        }
    }
    None
}

/// `(A, B)` pairs with `Notes A {|Agent B, Nonce pms|}`, both honest.
fn honest_notes_for<'a>(
    v: &'a View,
    pms: &'a NonceBody,
) -> impl Iterator<Item = (AgentName, AgentName)> + 'a {
    v.honest_pms_notes()
        .filter(move |(_, _, p)| p == pms)
        .map(|(a, b, _)| (*a, *b))
}

fn client_finished_guarantee(v: &View) -> Option<Finding> {
    for m in &v.k.parts {
        let Some((sk, body)) = parse_session_crypt(m) else { continue };
        if sk.role != Role::ServerRole {
            continue;
        }
        let Some(f) = parse_finished_hash(body) else { continue };
        if f.na != &sk.na || f.nb != &sk.nb || f.m != &sk.m {
            continue;
        }
        let Some(pms) = pms_of(&sk.m) else { continue };
        let (a, b) = (f.a, f.b);
        if !v.honest(a) || !v.honest(b) || !v.has(&Event::Notes(a, pms_note(b, pms))) {
            continue;
        }
        if v.oopsed_by(b, &key_of(sk)) {
            continue;
        }
        if !v.has(&Event::Says(b, a, m.clone())) {
            return found(format!("A={a} B={b} PMS={pms} X={m}"));
        }
    }
    // a server finished the spy could forge with a session key it holds
    for key in v.k.analz.iter().filter_map(|m| match m {
        Message::Key(KeyTerm::SessK(sk)) if sk.role == Role::ServerRole => Some(sk),
        _ => None,
    }) {
        let Some(pms) = pms_of(&key.m) else { continue };
        if !(v.k.knows_nonce(&key.na) && v.k.knows_nonce(&key.nb) && v.k.knows_nonce(&key.m)) {
            continue;
        }
        for (a, b) in honest_notes_for(v, pms) {
            if v.oopsed_by(b, &key_of(key)) {
                continue;
            }
            let bounds = &v.s.bounds;
            let h = finished_hash(
                bounds.sid_pool[0],
                &key.m,
                &key.na,
                bounds.pref_pool[0],
                a,
                &key.nb,
                bounds.pref_pool[0],
                b,
                &v.s.variant,
            );
            let x = Message::crypt(key_of(key), h);
            if synthesizes(&v.k.analz, &x) && !v.has(&Event::Says(b, a, x.clone())) {
                return found_with_fake(format!("A={a} B={b} PMS={pms} X={x}"), a, x);
            }
        }
    }
    None
}

fn server_finished_guarantee(v: &View) -> Option<Finding> {
    for m in &v.k.parts {
        let Some((sk, _)) = parse_session_crypt(m) else { continue };
        if sk.role != Role::ClientRole {
            continue;
        }
        let Some(pms) = pms_of(&sk.m) else { continue };
        for (a, b) in honest_notes_for(v, pms) {
            if v.oopsed_by(a, &key_of(sk)) {
                continue;
            }
            if !v.has(&Event::Says(a, b, m.clone())) {
                return found(format!("A={a} B={b} PMS={pms} X={m}"));
            }
        }
    }
    for key in v.k.analz.iter().filter_map(|m| match m {
        Message::Key(KeyTerm::SessK(sk)) if sk.role == Role::ClientRole => Some(sk),
        _ => None,
    }) {
        let Some(pms) = pms_of(&key.m) else { continue };
        for (a, b) in honest_notes_for(v, pms) {
            if v.oopsed_by(a, &key_of(key)) {
                continue;
            }
            let x = Message::crypt(key_of(key), Message::Agent(AgentName::Spy));
            if !v.has(&Event::Says(a, b, x.clone())) {
                return found_with_fake(format!("A={a} B={b} PMS={pms} X={x}"), b, x);
            }
        }
    }
    None
}

fn notes_discharge(v: &View) -> Option<Finding> {
    // a signature naming the PMS attributes the note to its signer
    for m in &v.k.parts {
        if let Some((a, _, b, Some(pms))) = parse_cert_verify(m) {
            if v.honest(a) && !v.has(&Event::Notes(a, pms_note(b, pms))) {
                return found(format!("A={a} B={b} PMS={pms} X={m}"));
            }
        }
    }
    // the PMS behind B's server finished is A's, if A signed B's random
    for (from, to, sk, body) in &v.ix.session_crypts {
        if sk.role != Role::ServerRole {
            continue;
        }
        let Some(f) = parse_finished_hash(body) else { continue };
        let (b, a) = (*from, *to);
        if f.a != a || f.b != b || !v.honest(a) || !v.honest(b) {
            continue;
        }
        let Some(pms) = pms_of(&sk.m) else { continue };
        if v.has(&Event::Notes(a, pms_note(b, pms))) {
            continue;
        }
        for m in &v.k.parts {
            let Some((signer, nb, named, signed_pms)) = parse_cert_verify(m) else { continue };
            let covers = signer == a
                && named == b
                && nb == &sk.nb
                && signed_pms.map_or(true, |p| p == pms);
            if covers {
                return found(format!("A={a} B={b} PMS={pms} CV={m}"));
            }
        }
    }
    forged_cert_verify(v)
}

/// The `(PA, PB)` pairs an agent's hellos allow for a finished hash.
fn pref_views(
    v: &View,
    a: AgentName,
    b: AgentName,
    sk: &SessionKey,
    body: &Message,
    client_side: bool,
) -> BTreeSet<(u64, u64)> {
    let Some(f) = parse_finished_hash(body) else { return BTreeSet::new() };
    let mut out = BTreeSet::new();
    for (ch_from, ch_to, ca, na, sid, pa) in &v.ix.client_hellos {
        let ch_ok = if client_side {
            *ch_from == a && *ch_to == b
        } else {
            *ch_to == b
        };
        if !ch_ok || *ca != a || na != f.na || *sid != f.sid {
            continue;
        }
        for (sh_from, sh_to, nb, sh_sid, pb) in &v.ix.server_hellos {
            let sh_ok = if client_side {
                *sh_to == a
            } else {
                *sh_from == b && *sh_to == a
            };
            if !sh_ok || nb != f.nb || sh_sid != sid {
                continue;
            }
            let h = finished_hash(*sid, &sk.m, na, *pa, a, nb, *pb, b, &v.s.variant);
            if &h == body {
                out.insert((*pa, *pb));
            }
        }
    }
    out
}

fn pref_agreement(v: &View) -> Option<Finding> {
    for (noter, sid, a, b, m) in &v.ix.accept_notes {
        if noter != a || a == b || !v.honest(*a) || !v.honest(*b) {
            continue;
        }
        let server_note = (*b, *sid, *a, *b, m.clone());
        if !v.ix.accept_notes.contains(&server_note) {
            continue;
        }
        for (cf, ct, ck, cbody) in &v.ix.session_crypts {
            if cf != a || ct != b || ck.role != Role::ClientRole || &ck.m != m {
                continue;
            }
            for (sf, st, sk, sbody) in &v.ix.session_crypts {
                if sf != b || st != a || sk.role != Role::ServerRole {
                    continue;
                }
                if sk.na != ck.na || sk.nb != ck.nb || &sk.m != m || sbody != cbody {
                    continue;
                }
                let client = pref_views(v, *a, *b, ck, cbody, true);
                let server = pref_views(v, *a, *b, sk, sbody, false);
                for c in &client {
                    for s in &server {
                        if c != s {
                            return found(format!(
                                "A={a} B={b} SID={sid} M={m} client=(PA={},PB={}) server=(PA={},PB={})",
                                c.0, c.1, s.0, s.1
                            ));
                        }
                    }
                }
            }
        }
    }
    None
}

/// Sessions both sides accepted: `(SID, A, B, M)` with honest, distinct A and B.
fn accepted_sessions<'a>(
    v: &'a View,
) -> impl Iterator<Item = (u64, AgentName, AgentName, &'a NonceBody)> + 'a {
    v.ix.accept_notes.iter().filter_map(move |(noter, sid, a, b, m)| {
        let ok = noter == a
            && a != b
            && v.honest(*a)
            && v.honest(*b)
            && v.ix.accept_notes.contains(&(*b, *sid, *a, *b, m.clone()));
        ok.then_some((*sid, *a, *b, m))
    })
}

/// Certificate-verify messages sent by `a` to `b` that bind `pms`.
fn sent_cert_verify(v: &View, a: AgentName, b: AgentName, nb: &NonceBody, pms: &NonceBody) -> bool {
    v.evs.events().iter().any(|e| match e {
        Event::Says(from, to, x) if *from == a && *to == b => matches!(
            parse_cert_verify(x),
            Some((signer, n, named, p))
                if signer == a && named == b && n == nb && p.map_or(true, |p| p == pms)
        ),
        _ => false,
    })
}

fn signed_anything(v: &View, a: AgentName) -> bool {
    v.evs.events().iter().any(|e| {
        matches!(e, Event::Says(from, _, Message::Crypt(KeyTerm::Pri(k), _)) if *from == a && *k == a)
    })
}

fn possible_full_handshake(v: &View) -> Option<Finding> {
    for (sid, a, b, m) in accepted_sessions(v) {
        if !signed_anything(v, a) {
            return found(format!("SID={sid} A={a} B={b} M={m}"));
        }
    }
    None
}

fn possible_cert_verify(v: &View) -> Option<Finding> {
    for (sid, a, b, m) in accepted_sessions(v) {
        let Some((pms, _, nb)) = m.prf_args() else { continue };
        if sent_cert_verify(v, a, b, nb, pms) {
            return found(format!("SID={sid} A={a} B={b} M={m}"));
        }
    }
    None
}

fn possible_client_auth(v: &View) -> Option<Finding> {
    for (noter, sid, a, b, m) in &v.ix.accept_notes {
        if noter != b || a == b || !v.honest(*a) || !v.honest(*b) {
            continue;
        }
        let Some((pms, _, nb)) = m.prf_args() else { continue };
        if sent_cert_verify(v, *a, *b, nb, pms) {
            return found(format!("SID={sid} A={a} B={b} M={m}"));
        }
    }
    None
}

fn possible_resumption(v: &View, after_oops: bool) -> Option<Finding> {
    let chrono: Vec<&Event> = v.evs.chronological().collect();
    let position = |e: &Event| chrono.iter().position(|x| *x == e);
    for (sid, a, b, m) in accepted_sessions(v) {
        let Some((_, na0, nb0)) = m.prf_args() else { continue };
        for (cf, ct, ck, cbody) in &v.ix.session_crypts {
            if *cf != a || *ct != b || ck.role != Role::ClientRole || &ck.m != m {
                continue;
            }
            if &ck.na == na0 && &ck.nb == nb0 {
                continue;
            }
            let server_key = KeyTerm::server_k(ck.na.clone(), ck.nb.clone(), m.clone());
            let sr = Event::Says(b, a, Message::crypt(server_key, cbody.clone()));
            if !v.has(&sr) {
                continue;
            }
            let inst = format!("SID={sid} A={a} B={b} M={m} NA={} NB={}", ck.na, ck.nb);
            if !after_oops {
                return found(inst);
            }
            let cr = Event::Says(a, b, Message::crypt(key_of(ck), cbody.clone()));
            let first_resume = position(&cr)?.min(position(&sr)?);
            for role in [Role::ClientRole, Role::ServerRole] {
                let old = KeyTerm::session(na0.clone(), nb0.clone(), m.clone(), role);
                let leaked = chrono.iter().enumerate().any(|(i, e)| {
                    i < first_resume
                        && matches!(e, Event::Says(from, AgentName::Spy, Message::Key(k))
                            if !from.is_spy() && *k == old)
                });
                if leaked {
                    return found(format!("{inst} oops={old}"));
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{apply_rule, Session};

    const A: AgentName = AgentName::Friend(1);
    const B: AgentName = AgentName::Friend(2);

    fn n(i: u32) -> NonceBody {
        NonceBody::Atom(i)
    }

    fn run(s: &Scenario, steps: &[Binding]) -> Trace {
        steps.iter().fold(Trace::new(), |t, b| apply_rule(s, &t, b).unwrap())
    }

    fn session() -> Session {
        Session {
            a: A,
            b: B,
            na: n(1),
            sid: 0,
            pa: 0,
            nb: n(2),
            pb: 0,
            pms: n(3),
        }
    }

    pub(crate) fn handshake(with_cv: bool) -> Vec<Binding> {
        let ses = session();
        let mut steps = vec![
            Binding::ClientHello { a: A, b: B, na: n(1), sid: 0, pa: 0 },
            Binding::ServerHello { b: B, a: A, na: n(1), sid: 0, pa: 0, nb: n(2), pb: 0 },
            Binding::Certificate { b: B, a: A },
            Binding::ClientKeyExch { a: A, b: B, kb: KeyTerm::Pub(B), pms: n(3) },
        ];
        if with_cv {
            steps.push(Binding::CertVerify { a: A, b: B, nb: n(2), sid: 0, pb: 0, pms: n(3) });
        }
        steps.extend([
            Binding::ClientFinished(ses.clone()),
            Binding::ServerFinished(ses.clone()),
            Binding::ClientAccepts(ses.clone()),
            Binding::ServerAccepts(ses),
        ]);
        steps
    }

    #[test]
    fn empty_trace_satisfies_every_safety_property() {
        let s = Scenario::with_friends(2);
        for id in PropertyId::SAFETY {
            assert_eq!(check_trace(id, &s, &Trace::new()), None, "{id}");
        }
        for id in PropertyId::POSSIBILITY {
            assert_eq!(check_trace(id, &s, &Trace::new()), None, "{id}");
        }
    }

    #[test]
    fn honest_handshake_is_safe_and_reaches_targets() {
        let s = Scenario::with_friends(2);
        let plain = run(&s, &handshake(false));
        let signed = run(&s, &handshake(true));
        for id in PropertyId::SAFETY {
            assert_eq!(check_trace(id, &s, &plain), None, "{id}");
            assert_eq!(check_trace(id, &s, &signed), None, "{id}");
        }
        assert!(check_trace(PropertyId::PossibleFullHandshake, &s, &plain).is_some());
        assert!(check_trace(PropertyId::PossibleFullHandshake, &s, &signed).is_none());
        assert!(check_trace(PropertyId::PossibleCertVerify, &s, &signed).is_some());
        assert!(check_trace(PropertyId::PossibleClientAuth, &s, &signed).is_some());
        assert!(check_trace(PropertyId::PossibleResumption, &s, &signed).is_none());
    }

    #[test]
    fn forged_certificate_breaks_regularity() {
        let s = Scenario::with_friends(2);
        let evs = Trace::new().extended(&[Event::Says(
            AgentName::Spy,
            A,
            certificate(B, KeyTerm::Pub(AgentName::Spy)),
        )]);
        assert!(check_trace(PropertyId::CertRegularity, &s, &evs).is_some());
    }

    #[test]
    fn leaked_pms_breaks_secrecy() {
        let s = Scenario::with_friends(2);
        let mut evs = run(&s, &handshake(false));
        evs = evs.extended(&[Event::Says(A, AgentName::Spy, Message::nonce_atom(3))]);
        assert!(check_trace(PropertyId::PmsSecrecy, &s, &evs).is_some());
        // with a bad peer the precondition fails
        let mut bad = s.clone();
        bad.bad.insert(B);
        assert!(check_trace(PropertyId::PmsSecrecy, &bad, &evs).is_none());
    }

    #[test]
    fn oops_of_one_key_spares_the_other() {
        let s = Scenario::with_friends(2);
        let ses = session();
        let mut steps = handshake(false);
        steps.push(Binding::Oops {
            a: A,
            key: KeyTerm::client_k(n(1), n(2), ses.master()),
        });
        let evs = run(&s, &steps);
        assert!(check_trace(PropertyId::ClientkSecrecy, &s, &evs).is_none());
        assert!(check_trace(PropertyId::ServerkSecrecy, &s, &evs).is_none());
        assert!(check_trace(PropertyId::PmsSecrecy, &s, &evs).is_none());
        assert!(check_trace(PropertyId::MasterSecrecy, &s, &evs).is_none());
        assert!(check_trace(PropertyId::ServerFinishedGuarantee, &s, &evs).is_none());
    }

    #[test]
    fn resumption_target() {
        let s = Scenario::with_friends(2);
        let m = session().master();
        let mut steps = handshake(false);
        steps.extend([
            Binding::ClientHello { a: A, b: B, na: n(4), sid: 0, pa: 0 },
            Binding::ServerHello { b: B, a: A, na: n(4), sid: 0, pa: 0, nb: n(5), pb: 0 },
        ]);
        let r = crate::rules::Resumption {
            a: A,
            b: B,
            na: n(4),
            sid: 0,
            pa: 0,
            nb: n(5),
            pb: 0,
            m: m.clone(),
        };
        steps.push(Binding::ClientResume(r.clone()));
        steps.push(Binding::ServerResume(r));
        let evs = run(&s, &steps);
        assert!(check_trace(PropertyId::PossibleResumption, &s, &evs).is_some());
        assert!(check_trace(PropertyId::PossibleResumptionAfterOops, &s, &evs).is_none());
        for id in PropertyId::SAFETY {
            assert_eq!(check_trace(id, &s, &evs), None, "{id}");
        }
    }
}
