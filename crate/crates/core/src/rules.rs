//! The fifteen inductive rules as guarded trace extensions.
//!
//! Guards only ever ask three things of a trace: whether an event is in it,
//! whether a nonce is used, and what the spy can analyse. All three are
//! functions of the event set, so the order of past events never matters.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::algebra::{
    as_certificate, certificate, synthesizes, AgentName, KeyTerm, Message, NonceBody, Role,
    SessionKey,
};
use crate::intruder;
use crate::trace::{Event, Knowledge, Scenario, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    Nil,
    Fake,
    SpyKeys,
    ClientHello,
    ServerHello,
    Certificate,
    ClientKeyExch,
    CertVerify,
    ClientFinished,
    ServerFinished,
    ClientAccepts,
    ServerAccepts,
    ClientResume,
    ServerResume,
    Oops,
}

impl RuleId {
    pub const ALL: [RuleId; 15] = [
        RuleId::Nil,
        RuleId::Fake,
        RuleId::SpyKeys,
        RuleId::ClientHello,
        RuleId::ServerHello,
        RuleId::Certificate,
        RuleId::ClientKeyExch,
        RuleId::CertVerify,
        RuleId::ClientFinished,
        RuleId::ServerFinished,
        RuleId::ClientAccepts,
        RuleId::ServerAccepts,
        RuleId::ClientResume,
        RuleId::ServerResume,
        RuleId::Oops,
    ];

    /// Rules that model honest protocol steps (as opposed to the spy and Oops).
    pub const HONEST: [RuleId; 11] = [
        RuleId::ClientHello,
        RuleId::ServerHello,
        RuleId::Certificate,
        RuleId::ClientKeyExch,
        RuleId::CertVerify,
        RuleId::ClientFinished,
        RuleId::ServerFinished,
        RuleId::ClientAccepts,
        RuleId::ServerAccepts,
        RuleId::ClientResume,
        RuleId::ServerResume,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleId::Nil => "Nil",
            RuleId::Fake => "Fake",
            RuleId::SpyKeys => "SpyKeys",
            RuleId::ClientHello => "ClientHello",
            RuleId::ServerHello => "ServerHello",
            RuleId::Certificate => "Certificate",
            RuleId::ClientKeyExch => "ClientKeyExch",
            RuleId::CertVerify => "CertVerify",
            RuleId::ClientFinished => "ClientFinished",
            RuleId::ServerFinished => "ServerFinished",
            RuleId::ClientAccepts => "ClientAccepts",
            RuleId::ServerAccepts => "ServerAccepts",
            RuleId::ClientResume => "ClientResume",
            RuleId::ServerResume => "ServerResume",
            RuleId::Oops => "Oops",
        }
    }

    pub fn from_name(s: &str) -> Option<RuleId> {
        RuleId::ALL.into_iter().find(|r| r.name() == s)
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Protocol mutants. All false is the faithful model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariantFlags {
    /// Drop PA and PB from the finished hash.
    pub omit_prefs_in_finished: bool,
    /// Drop the PMS from the certificate-verify hash.
    pub omit_pms_in_certverify: bool,
    /// Client key exchange carries `{Agent A, Nonce PMS}` instead of `Nonce PMS`.
    pub include_client_identity_in_keyexch: bool,
}

// ---------------------------------------------------------------------------
// Message shapes

pub fn client_hello(a: AgentName, na: &NonceBody, sid: u64, pa: u64) -> Message {
    Message::tuple(vec![
        Message::Agent(a),
        Message::Nonce(na.clone()),
        Message::Number(sid),
        Message::Number(pa),
    ])
}

pub fn server_hello(nb: &NonceBody, sid: u64, pb: u64) -> Message {
    Message::tuple(vec![
        Message::Nonce(nb.clone()),
        Message::Number(sid),
        Message::Number(pb),
    ])
}

/// Plaintext of client key exchange.
pub fn key_exchange_body(a: AgentName, pms: &NonceBody, v: &VariantFlags) -> Message {
    if v.include_client_identity_in_keyexch {
        Message::pair(Message::Agent(a), Message::Nonce(pms.clone()))
    } else {
        Message::Nonce(pms.clone())
    }
}

pub fn pms_note(b: AgentName, pms: &NonceBody) -> Message {
    Message::pair(Message::Agent(b), Message::Nonce(pms.clone()))
}

pub fn accept_note(sid: u64, a: AgentName, b: AgentName, m: &NonceBody) -> Message {
    Message::tuple(vec![
        Message::Number(sid),
        Message::Agent(a),
        Message::Agent(b),
        Message::Nonce(m.clone()),
    ])
}

pub fn cert_verify_hash(nb: &NonceBody, b: AgentName, pms: &NonceBody, v: &VariantFlags) -> Message {
    let mut items = vec![Message::Nonce(nb.clone()), Message::Agent(b)];
    if !v.omit_pms_in_certverify {
        items.push(Message::Nonce(pms.clone()));
    }
    Message::hash(Message::tuple(items))
}

/// `Hash{|SID, M, NA, PA, A, NB, PB, B|}`; PA and PB are dropped under
/// `omit_prefs_in_finished`.
#[allow(clippy::too_many_arguments)]
pub fn finished_hash(
    sid: u64,
    m: &NonceBody,
    na: &NonceBody,
    pa: u64,
    a: AgentName,
    nb: &NonceBody,
    pb: u64,
    b: AgentName,
    v: &VariantFlags,
) -> Message {
    let mut items = vec![
        Message::Number(sid),
        Message::Nonce(m.clone()),
        Message::Nonce(na.clone()),
    ];
    if !v.omit_prefs_in_finished {
        items.push(Message::Number(pa));
    }
    items.push(Message::Agent(a));
    items.push(Message::Nonce(nb.clone()));
    if !v.omit_prefs_in_finished {
        items.push(Message::Number(pb));
    }
    items.push(Message::Agent(b));
    Message::hash(Message::tuple(items))
}

fn as_nonce(m: &Message) -> Option<&NonceBody> {
    match m {
        Message::Nonce(n) => Some(n),
        _ => None,
    }
}

fn as_agent(m: &Message) -> Option<AgentName> {
    match m {
        Message::Agent(a) => Some(*a),
        _ => None,
    }
}

fn as_number(m: &Message) -> Option<u64> {
    match m {
        Message::Number(n) => Some(*n),
        _ => None,
    }
}

/// Matches a client hello payload: `(A, NA, SID, PA)`.
pub fn parse_client_hello(m: &Message) -> Option<(AgentName, &NonceBody, u64, u64)> {
    match m.components().as_slice() {
        [a, na, sid, pa] => Some((as_agent(a)?, as_nonce(na)?, as_number(sid)?, as_number(pa)?)),
        _ => None,
    }
}

/// Matches a server hello payload: `(NB, SID, PB)`.
pub fn parse_server_hello(m: &Message) -> Option<(&NonceBody, u64, u64)> {
    match m.components().as_slice() {
        [nb, sid, pb] => Some((as_nonce(nb)?, as_number(sid)?, as_number(pb)?)),
        _ => None,
    }
}

/// Matches `Notes A {|Agent B, Nonce PMS|}` payloads: `(B, PMS)`.
pub fn parse_pms_note(m: &Message) -> Option<(AgentName, &NonceBody)> {
    match m {
        Message::MPair(b, pms) => Some((as_agent(b)?, as_nonce(pms)?)),
        _ => None,
    }
}

/// Matches accept notes: `(SID, A, B, M)`.
pub fn parse_accept_note(m: &Message) -> Option<(u64, AgentName, AgentName, &NonceBody)> {
    match m.components().as_slice() {
        [sid, a, b, mm] => Some((as_number(sid)?, as_agent(a)?, as_agent(b)?, as_nonce(mm)?)),
        _ => None,
    }
}

/// Matches `Crypt (pubK B) body` where body is a key-exchange plaintext.
/// Returns `(B, claimed client, PMS)`; the client is only present in the
/// identity-carrying variant.
pub fn parse_key_exchange(m: &Message) -> Option<(AgentName, Option<AgentName>, &NonceBody)> {
    match m {
        Message::Crypt(KeyTerm::Pub(b), body) => match &**body {
            Message::Nonce(pms) => Some((*b, None, pms)),
            Message::MPair(a, pms) => Some((*b, Some(as_agent(a)?), as_nonce(pms)?)),
            _ => None,
        },
        _ => None,
    }
}

/// A finished hash taken apart. Prefs are absent when the variant omits them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinishedFields<'a> {
    pub sid: u64,
    pub m: &'a NonceBody,
    pub na: &'a NonceBody,
    pub pa: Option<u64>,
    pub a: AgentName,
    pub nb: &'a NonceBody,
    pub pb: Option<u64>,
    pub b: AgentName,
}

/// Matches the body of a finished hash in either layout.
pub fn parse_finished_hash(h: &Message) -> Option<FinishedFields<'_>> {
    let Message::Hash(body) = h else { return None };
    match body.components().as_slice() {
        [sid, m, na, pa, a, nb, pb, b] => Some(FinishedFields {
            sid: as_number(sid)?,
            m: as_nonce(m)?,
            na: as_nonce(na)?,
            pa: Some(as_number(pa)?),
            a: as_agent(a)?,
            nb: as_nonce(nb)?,
            pb: Some(as_number(pb)?),
            b: as_agent(b)?,
        }),
        [sid, m, na, a, nb, b] => Some(FinishedFields {
            sid: as_number(sid)?,
            m: as_nonce(m)?,
            na: as_nonce(na)?,
            pa: None,
            a: as_agent(a)?,
            nb: as_nonce(nb)?,
            pb: None,
            b: as_agent(b)?,
        }),
        _ => None,
    }
}

/// Matches `Crypt (sessionK ...) X`, returning the key and body.
pub fn parse_session_crypt(m: &Message) -> Option<(&SessionKey, &Message)> {
    match m {
        Message::Crypt(KeyTerm::SessK(k), x) => Some((k, x)),
        _ => None,
    }
}

/// Matches a certificate-verify signature `Crypt (priK A) (Hash{|NB, B, [PMS]|})`.
pub fn parse_cert_verify(
    m: &Message,
) -> Option<(AgentName, &NonceBody, AgentName, Option<&NonceBody>)> {
    let Message::Crypt(KeyTerm::Pri(a), h) = m else { return None };
    let Message::Hash(body) = &**h else { return None };
    match body.components().as_slice() {
        [nb, b, pms] => Some((*a, as_nonce(nb)?, as_agent(b)?, Some(as_nonce(pms)?))),
        [nb, b] => Some((*a, as_nonce(nb)?, as_agent(b)?, None)),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Bindings

/// One instantiation of a rule's variables.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Binding {
    Nil,
    Fake {
        b: AgentName,
        x: Message,
    },
    SpyKeys {
        na: NonceBody,
        nb: NonceBody,
        m: NonceBody,
        role: Role,
    },
    ClientHello {
        a: AgentName,
        b: AgentName,
        na: NonceBody,
        sid: u64,
        pa: u64,
    },
    ServerHello {
        b: AgentName,
        a: AgentName,
        na: NonceBody,
        sid: u64,
        pa: u64,
        nb: NonceBody,
        pb: u64,
    },
    Certificate {
        b: AgentName,
        a: AgentName,
    },
    ClientKeyExch {
        a: AgentName,
        b: AgentName,
        kb: KeyTerm,
        pms: NonceBody,
    },
    CertVerify {
        a: AgentName,
        b: AgentName,
        nb: NonceBody,
        sid: u64,
        pb: u64,
        pms: NonceBody,
    },
    ClientFinished(Session),
    ServerFinished(Session),
    ClientAccepts(Session),
    ServerAccepts(Session),
    ClientResume(Resumption),
    ServerResume(Resumption),
    Oops {
        a: AgentName,
        key: KeyTerm,
    },
}

/// Variables of a full-handshake finished or accept step. `a` is the client
/// and `b` the server regardless of which side acts.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Session {
    pub a: AgentName,
    pub b: AgentName,
    pub na: NonceBody,
    pub sid: u64,
    pub pa: u64,
    pub nb: NonceBody,
    pub pb: u64,
    pub pms: NonceBody,
}

impl Session {
    pub fn master(&self) -> NonceBody {
        NonceBody::prf(self.pms.clone(), self.na.clone(), self.nb.clone())
    }

    pub fn hash(&self, v: &VariantFlags) -> Message {
        finished_hash(
            self.sid,
            &self.master(),
            &self.na,
            self.pa,
            self.a,
            &self.nb,
            self.pb,
            self.b,
            v,
        )
    }

    pub fn client_crypt(&self, v: &VariantFlags) -> Message {
        let m = self.master();
        Message::crypt(KeyTerm::client_k(self.na.clone(), self.nb.clone(), m), self.hash(v))
    }

    pub fn server_crypt(&self, v: &VariantFlags) -> Message {
        let m = self.master();
        Message::crypt(KeyTerm::server_k(self.na.clone(), self.nb.clone(), m), self.hash(v))
    }
}

/// Variables of a resumption step: the stored master secret replaces the PMS.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Resumption {
    pub a: AgentName,
    pub b: AgentName,
    pub na: NonceBody,
    pub sid: u64,
    pub pa: u64,
    pub nb: NonceBody,
    pub pb: u64,
    pub m: NonceBody,
}

impl Resumption {
    pub fn hash(&self, v: &VariantFlags) -> Message {
        finished_hash(self.sid, &self.m, &self.na, self.pa, self.a, &self.nb, self.pb, self.b, v)
    }
}

impl Binding {
    pub fn rule(&self) -> RuleId {
        match self {
            Binding::Nil => RuleId::Nil,
            Binding::Fake { .. } => RuleId::Fake,
            Binding::SpyKeys { .. } => RuleId::SpyKeys,
            Binding::ClientHello { .. } => RuleId::ClientHello,
            Binding::ServerHello { .. } => RuleId::ServerHello,
            Binding::Certificate { .. } => RuleId::Certificate,
            Binding::ClientKeyExch { .. } => RuleId::ClientKeyExch,
            Binding::CertVerify { .. } => RuleId::CertVerify,
            Binding::ClientFinished(_) => RuleId::ClientFinished,
            Binding::ServerFinished(_) => RuleId::ServerFinished,
            Binding::ClientAccepts(_) => RuleId::ClientAccepts,
            Binding::ServerAccepts(_) => RuleId::ServerAccepts,
            Binding::ClientResume(_) => RuleId::ClientResume,
            Binding::ServerResume(_) => RuleId::ServerResume,
            Binding::Oops { .. } => RuleId::Oops,
        }
    }

    /// The events this step adds, oldest first. Empty for `Nil`.
    pub fn effects(&self, v: &VariantFlags) -> Vec<Event> {
        use AgentName::Spy;
        match self {
            Binding::Nil => vec![],
            Binding::Fake { b, x } => vec![Event::Says(Spy, *b, x.clone())],
            Binding::SpyKeys { na, nb, m, role } => vec![Event::Notes(
                Spy,
                Message::pair(
                    Message::Nonce(NonceBody::prf(m.clone(), na.clone(), nb.clone())),
                    Message::Key(KeyTerm::session(na.clone(), nb.clone(), m.clone(), *role)),
                ),
            )],
            Binding::ClientHello { a, b, na, sid, pa } => {
                vec![Event::Says(*a, *b, client_hello(*a, na, *sid, *pa))]
            }
            Binding::ServerHello { b, a, nb, sid, pb, .. } => {
                vec![Event::Says(*b, *a, server_hello(nb, *sid, *pb))]
            }
            Binding::Certificate { b, a } => {
                vec![Event::Says(*b, *a, certificate(*b, KeyTerm::Pub(*b)))]
            }
            Binding::ClientKeyExch { a, b, kb, pms } => vec![
                Event::Notes(*a, pms_note(*b, pms)),
                Event::Says(*a, *b, Message::crypt(kb.clone(), key_exchange_body(*a, pms, v))),
            ],
            Binding::CertVerify { a, b, nb, pms, .. } => vec![Event::Says(
                *a,
                *b,
                Message::crypt(KeyTerm::Pri(*a), cert_verify_hash(nb, *b, pms, v)),
            )],
            Binding::ClientFinished(s) => vec![Event::Says(s.a, s.b, s.client_crypt(v))],
            Binding::ServerFinished(s) => vec![Event::Says(s.b, s.a, s.server_crypt(v))],
            Binding::ClientAccepts(s) => {
                vec![Event::Notes(s.a, accept_note(s.sid, s.a, s.b, &s.master()))]
            }
            Binding::ServerAccepts(s) => {
                vec![Event::Notes(s.b, accept_note(s.sid, s.a, s.b, &s.master()))]
            }
            Binding::ClientResume(r) => vec![Event::Says(
                r.a,
                r.b,
                Message::crypt(KeyTerm::client_k(r.na.clone(), r.nb.clone(), r.m.clone()), r.hash(v)),
            )],
            Binding::ServerResume(r) => vec![Event::Says(
                r.b,
                r.a,
                Message::crypt(KeyTerm::server_k(r.na.clone(), r.nb.clone(), r.m.clone()), r.hash(v)),
            )],
            Binding::Oops { a, key } => {
                vec![Event::Says(*a, Spy, Message::Key(key.clone()))]
            }
        }
    }
}

/// A rule could not fire; names the first premise that failed.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{rule}: {conjunct}")]
pub struct GuardFailure {
    pub rule: RuleId,
    pub conjunct: String,
}

fn fail(rule: RuleId, conjunct: impl Into<String>) -> GuardFailure {
    GuardFailure {
        rule,
        conjunct: conjunct.into(),
    }
}

/// `Says _ to payload ∈ set evs`: the sender is not checked.
pub fn received(evs: &Trace, to: AgentName, payload: &Message) -> bool {
    evs.events()
        .iter()
        .any(|e| matches!(e, Event::Says(_, r, x) if *r == to && x == payload))
}

fn fresh_atom(rule: RuleId, k: &Knowledge, n: &NonceBody, what: &str) -> Result<(), GuardFailure> {
    if !n.is_atom() {
        return Err(fail(rule, format!("{what} must not be a PRF value")));
    }
    if k.nonce_used(n) {
        return Err(fail(rule, format!("Nonce {what} is already used")));
    }
    Ok(())
}

/// Evaluates the guard of `b` against `evs` with its precomputed knowledge.
pub fn check_guard(
    s: &Scenario,
    evs: &Trace,
    k: &Knowledge,
    b: &Binding,
) -> Result<(), GuardFailure> {
    let v = &s.variant;
    let rule = b.rule();
    match b {
        Binding::Nil | Binding::Certificate { .. } => Ok(()),
        Binding::Fake { x, .. } => {
            if synthesizes(&k.analz, x) {
                Ok(())
            } else {
                Err(fail(rule, "X is not in synth(analz(spies evs))"))
            }
        }
        Binding::SpyKeys { na, nb, m, .. } => {
            for (n, what) in [(na, "NA"), (nb, "NB"), (m, "M")] {
                if !k.knows_nonce(n) {
                    return Err(fail(rule, format!("Nonce {what} is not in analz(spies evs)")));
                }
            }
            Ok(())
        }
        Binding::ClientHello { na, .. } => fresh_atom(rule, k, na, "NA"),
        Binding::ServerHello { b, a, na, sid, pa, nb, .. } => {
            fresh_atom(rule, k, nb, "NB")?;
            if !received(evs, *b, &client_hello(*a, na, *sid, *pa)) {
                return Err(fail(rule, "missing client hello received by B"));
            }
            Ok(())
        }
        Binding::ClientKeyExch { a, b, kb, pms } => {
            fresh_atom(rule, k, pms, "PMS")?;
            if !received(evs, *a, &certificate(*b, kb.clone())) {
                return Err(fail(rule, "missing certificate B KB received by A"));
            }
            Ok(())
        }
        Binding::CertVerify { a, b, nb, sid, pb, pms } => {
            if !received(evs, *a, &server_hello(nb, *sid, *pb)) {
                return Err(fail(rule, "missing server hello received by A"));
            }
            if !evs.contains(&Event::Notes(*a, pms_note(*b, pms))) {
                return Err(fail(rule, "missing Notes A {Agent B, Nonce PMS}"));
            }
            Ok(())
        }
        Binding::ClientFinished(ses) => {
            if !evs.contains(&Event::Says(ses.a, ses.b, client_hello(ses.a, &ses.na, ses.sid, ses.pa))) {
                return Err(fail(rule, "missing client hello sent by A"));
            }
            if !received(evs, ses.a, &server_hello(&ses.nb, ses.sid, ses.pb)) {
                return Err(fail(rule, "missing server hello received by A"));
            }
            if !evs.contains(&Event::Notes(ses.a, pms_note(ses.b, &ses.pms))) {
                return Err(fail(rule, "missing Notes A {Agent B, Nonce PMS}"));
            }
            Ok(())
        }
        Binding::ServerFinished(ses) => {
            if !received(evs, ses.b, &client_hello(ses.a, &ses.na, ses.sid, ses.pa)) {
                return Err(fail(rule, "missing client hello received by B"));
            }
            if !evs.contains(&Event::Says(ses.b, ses.a, server_hello(&ses.nb, ses.sid, ses.pb))) {
                return Err(fail(rule, "missing server hello sent by B"));
            }
            let kx = Message::crypt(KeyTerm::Pub(ses.b), key_exchange_body(ses.a, &ses.pms, v));
            if !received(evs, ses.b, &kx) {
                return Err(fail(rule, "missing client key exchange received by B"));
            }
            Ok(())
        }
        Binding::ClientAccepts(ses) => {
            if !evs.contains(&Event::Notes(ses.a, pms_note(ses.b, &ses.pms))) {
                return Err(fail(rule, "missing Notes A {Agent B, Nonce PMS}"));
            }
            if !evs.contains(&Event::Says(ses.a, ses.b, ses.client_crypt(v))) {
                return Err(fail(rule, "missing client finished sent by A"));
            }
            if !received(evs, ses.a, &ses.server_crypt(v)) {
                return Err(fail(rule, "missing matching server finished received by A"));
            }
            Ok(())
        }
        Binding::ServerAccepts(ses) => {
            if ses.a == ses.b {
                return Err(fail(rule, "A = B"));
            }
            let kx = Message::crypt(KeyTerm::Pub(ses.b), key_exchange_body(ses.a, &ses.pms, v));
            if !received(evs, ses.b, &kx) {
                return Err(fail(rule, "missing client key exchange received by B"));
            }
            if !evs.contains(&Event::Says(ses.b, ses.a, ses.server_crypt(v))) {
                return Err(fail(rule, "missing server finished sent by B"));
            }
            if !received(evs, ses.b, &ses.client_crypt(v)) {
                return Err(fail(rule, "missing matching client finished received by B"));
            }
            Ok(())
        }
        Binding::ClientResume(r) => {
            if !evs.contains(&Event::Says(r.a, r.b, client_hello(r.a, &r.na, r.sid, r.pa))) {
                return Err(fail(rule, "missing client hello sent by A"));
            }
            if !received(evs, r.a, &server_hello(&r.nb, r.sid, r.pb)) {
                return Err(fail(rule, "missing server hello received by A"));
            }
            if !evs.contains(&Event::Notes(r.a, accept_note(r.sid, r.a, r.b, &r.m))) {
                return Err(fail(rule, "missing Notes A {Number SID, Agent A, Agent B, Nonce M}"));
            }
            Ok(())
        }
        Binding::ServerResume(r) => {
            if !received(evs, r.b, &client_hello(r.a, &r.na, r.sid, r.pa)) {
                return Err(fail(rule, "missing client hello received by B"));
            }
            if !evs.contains(&Event::Says(r.b, r.a, server_hello(&r.nb, r.sid, r.pb))) {
                return Err(fail(rule, "missing server hello sent by B"));
            }
            if !evs.contains(&Event::Notes(r.b, accept_note(r.sid, r.a, r.b, &r.m))) {
                return Err(fail(rule, "missing Notes B {Number SID, Agent A, Agent B, Nonce M}"));
            }
            Ok(())
        }
        Binding::Oops { a, key } => {
            if a.is_spy() {
                return Err(fail(rule, "A = Spy"));
            }
            if !key.is_symmetric() {
                return Err(fail(rule, "key is not a session key"));
            }
            let used_by_a = evs.events().iter().any(|e| match e {
                Event::Says(s, _, Message::Crypt(k, _)) => s == a && k == key,
                _ => false,
            });
            if !used_by_a {
                return Err(fail(rule, "missing Says A B (Crypt (sessionK ...) X)"));
            }
            Ok(())
        }
    }
}

/// Applies one rule. `Nil` always yields the empty trace.
pub fn apply_rule(s: &Scenario, evs: &Trace, b: &Binding) -> Result<Trace, GuardFailure> {
    let k = Knowledge::of(s, evs);
    apply_rule_with(s, evs, &k, b)
}

/// [`apply_rule`] with knowledge already computed for `evs`.
pub fn apply_rule_with(
    s: &Scenario,
    evs: &Trace,
    k: &Knowledge,
    b: &Binding,
) -> Result<Trace, GuardFailure> {
    if let Binding::Nil = b {
        return Ok(Trace::new());
    }
    check_guard(s, evs, k, b)?;
    Ok(evs.extended(&b.effects(&s.variant)))
}

// ---------------------------------------------------------------------------
// Literal enumeration

/// Typed view of the events of a trace, grouped by payload shape.
#[derive(Debug, Default)]
pub struct TraceIndex {
    /// `(sender, receiver, A, NA, SID, PA)`
    pub client_hellos: Vec<(AgentName, AgentName, AgentName, NonceBody, u64, u64)>,
    /// `(sender, receiver, NB, SID, PB)`
    pub server_hellos: Vec<(AgentName, AgentName, NonceBody, u64, u64)>,
    /// `(sender, receiver, B, KB)`
    pub certificates: Vec<(AgentName, AgentName, AgentName, KeyTerm)>,
    /// `(sender, receiver, B, claimed client, PMS)`
    pub key_exchanges: Vec<(AgentName, AgentName, AgentName, Option<AgentName>, NonceBody)>,
    /// `(A, B, PMS)` from `Notes A {|Agent B, Nonce PMS|}`
    pub pms_notes: Vec<(AgentName, AgentName, NonceBody)>,
    /// `(noter, SID, A, B, M)`
    pub accept_notes: Vec<(AgentName, u64, AgentName, AgentName, NonceBody)>,
    /// `(sender, receiver, key, body)` for every session-key ciphertext sent
    pub session_crypts: Vec<(AgentName, AgentName, SessionKey, Message)>,
}

impl TraceIndex {
    pub fn of(evs: &Trace) -> Self {
        let mut ix = TraceIndex::default();
        // chronological order keeps enumeration deterministic for equal sets
        let mut events: Vec<&Event> = evs.events().iter().collect();
        events.sort();
        events.dedup();
        for e in events {
            match e {
                Event::Says(s, r, x) => {
                    if let Some((a, na, sid, pa)) = parse_client_hello(x) {
                        ix.client_hellos.push((*s, *r, a, na.clone(), sid, pa));
                    } else if let Some((nb, sid, pb)) = parse_server_hello(x) {
                        ix.server_hellos.push((*s, *r, nb.clone(), sid, pb));
                    } else if let Some((b, kb)) = as_certificate(x) {
                        ix.certificates.push((*s, *r, b, kb.clone()));
                    } else if let Some((b, a, pms)) = parse_key_exchange(x) {
                        ix.key_exchanges.push((*s, *r, b, a, pms.clone()));
                    } else if let Some((k, body)) = parse_session_crypt(x) {
                        ix.session_crypts.push((*s, *r, k.clone(), body.clone()));
                    }
                }
                Event::Notes(a, x) => {
                    if let Some((b, pms)) = parse_pms_note(x) {
                        ix.pms_notes.push((*a, b, pms.clone()));
                    } else if let Some((sid, ca, cb, m)) = parse_accept_note(x) {
                        ix.accept_notes.push((*a, sid, ca, cb, m.clone()));
                    }
                }
            }
        }
        ix
    }

    /// Client randoms seen in hello traffic.
    pub fn client_randoms(&self) -> BTreeSet<NonceBody> {
        self.client_hellos.iter().map(|h| h.3.clone()).collect()
    }

    /// Server randoms seen in hello traffic.
    pub fn server_randoms(&self) -> BTreeSet<NonceBody> {
        self.server_hellos.iter().map(|h| h.2.clone()).collect()
    }
}

/// Fresh atom for a rule that draws one, if the nonce budget allows.
pub fn fresh_for(s: &Scenario, k: &Knowledge) -> Option<NonceBody> {
    (k.atoms_used() < s.bounds.max_fresh_nonces).then(|| NonceBody::Atom(k.next_fresh_atom()))
}

/// Ordered pairs of distinct participating agents.
pub fn agent_pairs(s: &Scenario) -> Vec<(AgentName, AgentName)> {
    let agents = s.agents();
    let mut out = Vec::new();
    for &x in &agents {
        for &y in &agents {
            if x != y {
                out.push((x, y));
            }
        }
    }
    out
}

/// Every binding of `r` whose guard holds on `evs`, with premises matched
/// only against events already in the trace. Self-sessions are not
/// enumerated, fresh nonces are the canonical least unused atom, and the
/// spy's session-key derivations take their randoms from hello traffic.
pub fn enumerate_bindings(s: &Scenario, evs: &Trace, r: RuleId) -> Vec<Binding> {
    let k = Knowledge::of(s, evs);
    enumerate_bindings_with(s, evs, &k, &TraceIndex::of(evs), r)
}

pub fn enumerate_bindings_with(
    s: &Scenario,
    evs: &Trace,
    k: &Knowledge,
    ix: &TraceIndex,
    r: RuleId,
) -> Vec<Binding> {
    let v = &s.variant;
    let bounds = &s.bounds;
    let mut out: Vec<Binding> = Vec::new();
    match r {
        RuleId::Nil => {}
        RuleId::Fake => {
            let candidates = intruder::fake_candidates_with(s, evs, k, ix);
            for x in candidates {
                for b in s.agents() {
                    out.push(Binding::Fake { b, x: x.clone() });
                }
            }
        }
        RuleId::SpyKeys => {
            let known = k.known_nonces();
            for na in ix.client_randoms().into_iter().filter(|n| k.knows_nonce(n)) {
                for nb in ix.server_randoms().into_iter().filter(|n| k.knows_nonce(n)) {
                    for m in &known {
                        for role in [Role::ClientRole, Role::ServerRole] {
                            out.push(Binding::SpyKeys {
                                na: na.clone(),
                                nb: nb.clone(),
                                m: m.clone(),
                                role,
                            });
                        }
                    }
                }
            }
        }
        RuleId::ClientHello => {
            if let Some(na) = fresh_for(s, k) {
                for (a, b) in agent_pairs(s) {
                    for &sid in &bounds.sid_pool {
                        for &pa in &bounds.pref_pool {
                            out.push(Binding::ClientHello { a, b, na: na.clone(), sid, pa });
                        }
                    }
                }
            }
        }
        RuleId::ServerHello => {
            if let Some(nb) = fresh_for(s, k) {
                for (_, b, a, na, sid, pa) in &ix.client_hellos {
                    if a == b {
                        continue;
                    }
                    for &pb in &bounds.pref_pool {
                        out.push(Binding::ServerHello {
                            b: *b,
                            a: *a,
                            na: na.clone(),
                            sid: *sid,
                            pa: *pa,
                            nb: nb.clone(),
                            pb,
                        });
                    }
                }
            }
        }
        RuleId::Certificate => {
            for (b, a) in agent_pairs(s) {
                out.push(Binding::Certificate { b, a });
            }
        }
        RuleId::ClientKeyExch => {
            if let Some(pms) = fresh_for(s, k) {
                for (_, a, b, kb) in &ix.certificates {
                    if a == b {
                        continue;
                    }
                    out.push(Binding::ClientKeyExch { a: *a, b: *b, kb: kb.clone(), pms: pms.clone() });
                }
            }
        }
        RuleId::CertVerify => {
            for (a, b, pms) in &ix.pms_notes {
                for (_, to, nb, sid, pb) in &ix.server_hellos {
                    if to == a {
                        out.push(Binding::CertVerify {
                            a: *a,
                            b: *b,
                            nb: nb.clone(),
                            sid: *sid,
                            pb: *pb,
                            pms: pms.clone(),
                        });
                    }
                }
            }
        }
        RuleId::ClientFinished => {
            for (from, to, ca, na, sid, pa) in &ix.client_hellos {
                if from != ca || from == to {
                    continue;
                }
                for (_, sh_to, nb, sh_sid, pb) in &ix.server_hellos {
                    if sh_to != from || sh_sid != sid {
                        continue;
                    }
                    for (na_, nb_, pms) in &ix.pms_notes {
                        if na_ == from && nb_ == to {
                            out.push(Binding::ClientFinished(Session {
                                a: *from,
                                b: *to,
                                na: na.clone(),
                                sid: *sid,
                                pa: *pa,
                                nb: nb.clone(),
                                pb: *pb,
                                pms: pms.clone(),
                            }));
                        }
                    }
                }
            }
        }
        RuleId::ServerFinished => {
            for (sh_from, sh_to, nb, sid, pb) in &ix.server_hellos {
                let (b, a) = (*sh_from, *sh_to);
                if a == b {
                    continue;
                }
                for (_, ch_to, ca, na, ch_sid, pa) in &ix.client_hellos {
                    if *ch_to != b || *ca != a || ch_sid != sid {
                        continue;
                    }
                    for (_, kx_to, kb, claimed, pms) in &ix.key_exchanges {
                        let identity_ok = if v.include_client_identity_in_keyexch {
                            *claimed == Some(a)
                        } else {
                            claimed.is_none()
                        };
                        if *kx_to == b && *kb == b && identity_ok {
                            out.push(Binding::ServerFinished(Session {
                                a,
                                b,
                                na: na.clone(),
                                sid: *sid,
                                pa: *pa,
                                nb: nb.clone(),
                                pb: *pb,
                                pms: pms.clone(),
                            }));
                        }
                    }
                }
            }
        }
        RuleId::ClientAccepts | RuleId::ServerAccepts => {
            for ses in finished_sessions(evs, ix, v, r == RuleId::ClientAccepts) {
                let b = if r == RuleId::ClientAccepts {
                    Binding::ClientAccepts(ses)
                } else {
                    Binding::ServerAccepts(ses)
                };
                if check_guard(s, evs, k, &b).is_ok() {
                    out.push(b);
                }
            }
        }
        RuleId::ClientResume => {
            for (noter, sid, a, b, m) in &ix.accept_notes {
                if noter != a || a == b {
                    continue;
                }
                for (from, to, ca, na, ch_sid, pa) in &ix.client_hellos {
                    if from != a || to != b || ca != a || ch_sid != sid {
                        continue;
                    }
                    for (_, sh_to, nb, sh_sid, pb) in &ix.server_hellos {
                        if sh_to == a && sh_sid == sid {
                            out.push(Binding::ClientResume(Resumption {
                                a: *a,
                                b: *b,
                                na: na.clone(),
                                sid: *sid,
                                pa: *pa,
                                nb: nb.clone(),
                                pb: *pb,
                                m: m.clone(),
                            }));
                        }
                    }
                }
            }
        }
        RuleId::ServerResume => {
            for (noter, sid, a, b, m) in &ix.accept_notes {
                if noter != b || a == b {
                    continue;
                }
                for (_, ch_to, ca, na, ch_sid, pa) in &ix.client_hellos {
                    if ch_to != b || ca != a || ch_sid != sid {
                        continue;
                    }
                    for (sh_from, sh_to, nb, sh_sid, pb) in &ix.server_hellos {
                        if sh_from == b && sh_to == a && sh_sid == sid {
                            out.push(Binding::ServerResume(Resumption {
                                a: *a,
                                b: *b,
                                na: na.clone(),
                                sid: *sid,
                                pa: *pa,
                                nb: nb.clone(),
                                pb: *pb,
                                m: m.clone(),
                            }));
                        }
                    }
                }
            }
        }
        RuleId::Oops => {
            let mut seen = BTreeSet::new();
            for (from, _, key, _) in &ix.session_crypts {
                if !from.is_spy() && seen.insert((*from, key.clone())) {
                    out.push(Binding::Oops {
                        a: *from,
                        key: KeyTerm::SessK(std::sync::Arc::new(key.clone())),
                    });
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Candidate full-handshake sessions read off finished messages: from the
/// client's own (`client_side`) or the server's own finished message.
fn finished_sessions(
    evs: &Trace,
    ix: &TraceIndex,
    v: &VariantFlags,
    client_side: bool,
) -> Vec<Session> {
    let mut out = Vec::new();
    for (from, to, key, body) in &ix.session_crypts {
        let want = if client_side { Role::ClientRole } else { Role::ServerRole };
        if key.role != want {
            continue;
        }
        let Some(f) = parse_finished_hash(body) else { continue };
        let (a, b) = if client_side { (*from, *to) } else { (*to, *from) };
        if f.a != a || f.b != b || f.na != &key.na || f.nb != &key.nb || f.m != &key.m {
            continue;
        }
        let Some((pms, na, nb)) = key.m.prf_args() else { continue };
        if na != &key.na || nb != &key.nb {
            continue;
        }
        let prefs: Vec<(u64, u64)> = match (f.pa, f.pb) {
            (Some(pa), Some(pb)) => vec![(pa, pb)],
            // prefs are not in the hash: recover them from the hellos
            _ => ix
                .client_hellos
                .iter()
                .filter(|h| h.2 == a && &h.3 == f.na && h.4 == f.sid)
                .flat_map(|h| {
                    ix.server_hellos
                        .iter()
                        .filter(|sh| &sh.2 == f.nb && sh.3 == f.sid)
                        .map(move |sh| (h.5, sh.4))
                })
                .collect(),
        };
        for (pa, pb) in prefs {
            let ses = Session {
                a,
                b,
                na: na.clone(),
                sid: f.sid,
                pa,
                nb: nb.clone(),
                pb,
                pms: pms.clone(),
            };
            debug_assert!(!client_side || evs.contains(&Event::Says(a, b, ses.client_crypt(v))) || v.omit_prefs_in_finished);
            out.push(ses);
        }
    }
    out
}
