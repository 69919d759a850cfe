//! Symbolic message terms and the `parts` / `analz` / `synth` knowledge operators.
//!
//! Encryption is perfect: the only way to open `Crypt(k, x)` is to hold the
//! inverse of `k`, and hashes never yield their bodies. Equality is purely
//! structural, so the injectivity of the PRF and of session-key derivation
//! comes for free from the constructors.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

/// Set of messages with a deterministic iteration order.
pub type MessageSet = BTreeSet<Message>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentName {
    /// The certification authority.
    Server,
    Friend(u32),
    Spy,
}

impl AgentName {
    pub fn is_spy(self) -> bool {
        self == AgentName::Spy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    ClientRole,
    ServerRole,
}

/// Non-guessable numbers: fresh atoms drawn by honest agents, or PRF images.
///
/// The two constructors never coincide, which is how a fresh atom is kept
/// outside the range of the PRF.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NonceBody {
    Atom(u32),
    Prf(Arc<(NonceBody, NonceBody, NonceBody)>),
}

impl NonceBody {
    /// `PRF(pms, na, nb)`: the master secret of a session.
    pub fn prf(pms: NonceBody, na: NonceBody, nb: NonceBody) -> Self {
        NonceBody::Prf(Arc::new((pms, na, nb)))
    }

    pub fn is_atom(&self) -> bool {
        matches!(self, NonceBody::Atom(_))
    }

    /// Arguments of a PRF image, if this is one.
    pub fn prf_args(&self) -> Option<(&NonceBody, &NonceBody, &NonceBody)> {
        match self {
            NonceBody::Prf(args) => Some((&args.0, &args.1, &args.2)),
            NonceBody::Atom(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyTerm {
    Pub(AgentName),
    Pri(AgentName),
    SessK(Arc<SessionKey>),
}

/// `sessionK((na, nb, m), role)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SessionKey {
    pub na: NonceBody,
    pub nb: NonceBody,
    pub m: NonceBody,
    pub role: Role,
}

impl KeyTerm {
    pub fn session(na: NonceBody, nb: NonceBody, m: NonceBody, role: Role) -> Self {
        KeyTerm::SessK(Arc::new(SessionKey { na, nb, m, role }))
    }

    pub fn client_k(na: NonceBody, nb: NonceBody, m: NonceBody) -> Self {
        Self::session(na, nb, m, Role::ClientRole)
    }

    pub fn server_k(na: NonceBody, nb: NonceBody, m: NonceBody) -> Self {
        Self::session(na, nb, m, Role::ServerRole)
    }

    pub fn as_session(&self) -> Option<&SessionKey> {
        match self {
            KeyTerm::SessK(k) => Some(k),
            _ => None,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, KeyTerm::SessK(_))
    }
}

/// The decryption key for `k`. Session keys are symmetric.
pub fn invert(k: &KeyTerm) -> KeyTerm {
    match k {
        KeyTerm::Pub(a) => KeyTerm::Pri(*a),
        KeyTerm::Pri(a) => KeyTerm::Pub(*a),
        KeyTerm::SessK(_) => k.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Message {
    Agent(AgentName),
    Number(u64),
    Nonce(NonceBody),
    Key(KeyTerm),
    Hash(Arc<Message>),
    Crypt(KeyTerm, Arc<Message>),
    MPair(Arc<Message>, Arc<Message>),
}

/// Same order a derive would give; shared subterms compare without descending.
fn cmp_shared(a: &Arc<Message>, b: &Arc<Message>) -> Ordering {
    if Arc::ptr_eq(a, b) {
        Ordering::Equal
    } else {
        a.as_ref().cmp(b.as_ref())
    }
}

impl Ord for Message {
    fn cmp(&self, other: &Self) -> Ordering {
        use Message::*;
        fn rank(m: &Message) -> u8 {
            match m {
                Agent(_) => 0,
                Number(_) => 1,
                Nonce(_) => 2,
                Key(_) => 3,
                Hash(_) => 4,
                Crypt(..) => 5,
                MPair(..) => 6,
            }
        }
        match (self, other) {
            (Agent(a), Agent(b)) => a.cmp(b),
            (Number(a), Number(b)) => a.cmp(b),
            (Nonce(a), Nonce(b)) => a.cmp(b),
            (Key(a), Key(b)) => a.cmp(b),
            (Hash(a), Hash(b)) => cmp_shared(a, b),
            (Crypt(k1, x1), Crypt(k2, x2)) => k1.cmp(k2).then_with(|| cmp_shared(x1, x2)),
            (MPair(x1, y1), MPair(x2, y2)) => cmp_shared(x1, x2).then_with(|| cmp_shared(y1, y2)),
            _ => rank(self).cmp(&rank(other)),
        }
    }
}

impl PartialOrd for Message {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Message {
    pub fn hash(x: Message) -> Self {
        Message::Hash(Arc::new(x))
    }

    pub fn crypt(k: KeyTerm, x: Message) -> Self {
        Message::Crypt(k, Arc::new(x))
    }

    pub fn pair(x: Message, y: Message) -> Self {
        Message::MPair(Arc::new(x), Arc::new(y))
    }

    /// Right-nested concatenation `{|x1, ..., xn|}`. Panics on an empty list.
    pub fn tuple(items: Vec<Message>) -> Self {
        let mut iter = items.into_iter().rev();
        let last = iter.next().expect("tuple needs at least one component");
        iter.fold(last, |acc, x| Message::pair(x, acc))
    }

    /// Flattens the right spine of nested pairs.
    pub fn components(&self) -> Vec<&Message> {
        let mut out = Vec::new();
        let mut cur = self;
        while let Message::MPair(x, y) = cur {
            out.push(&**x);
            cur = y;
        }
        out.push(cur);
        out
    }

    pub fn nonce_atom(id: u32) -> Self {
        Message::Nonce(NonceBody::Atom(id))
    }

    pub fn is_atomic(&self) -> bool {
        matches!(
            self,
            Message::Agent(_) | Message::Number(_) | Message::Nonce(_) | Message::Key(_)
        )
    }

    /// Maximum nesting depth; atoms have depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Message::Hash(x) | Message::Crypt(_, x) => 1 + x.depth(),
            Message::MPair(x, y) => 1 + x.depth().max(y.depth()),
            _ => 1,
        }
    }
}

/// `certificate A KA == Crypt(priK Server) {|Agent A, Key KA|}`.
pub fn certificate(a: AgentName, k: KeyTerm) -> Message {
    Message::crypt(
        KeyTerm::Pri(AgentName::Server),
        Message::pair(Message::Agent(a), Message::Key(k)),
    )
}

/// Matches `certificate B KB`, returning `(B, KB)`.
pub fn as_certificate(m: &Message) -> Option<(AgentName, &KeyTerm)> {
    match m {
        Message::Crypt(KeyTerm::Pri(AgentName::Server), body) => match &**body {
            Message::MPair(a, k) => match (&**a, &**k) {
                (Message::Agent(a), Message::Key(k)) => Some((*a, k)),
                _ => None,
            },
            _ => None,
        },
        _ => None,
    }
}

/// Closure of `h` under pair projection and (unconditional) decryption.
pub fn parts<'a>(h: impl IntoIterator<Item = &'a Message>) -> MessageSet {
    let mut out = MessageSet::new();
    parts_into(&mut out, h);
    out
}

/// Adds `parts(h)` to an already parts-closed set.
pub fn parts_into<'a>(out: &mut MessageSet, h: impl IntoIterator<Item = &'a Message>) {
    let mut work: Vec<&Message> = h.into_iter().collect();
    while let Some(m) = work.pop() {
        if out.contains(m) {
            continue;
        }
        match m {
            Message::MPair(x, y) => {
                work.push(x);
                work.push(y);
            }
            Message::Crypt(_, x) => work.push(x),
            _ => {}
        }
        out.insert(m.clone());
    }
}

/// Closure of `h` under pair projection and decryption with available keys.
pub fn analz<'a>(h: impl IntoIterator<Item = &'a Message>) -> MessageSet {
    let mut out = MessageSet::new();
    analz_into(&mut out, h);
    out
}

/// Adds messages to an already analz-closed set and re-closes it.
///
/// Sound because `analz(analz(H) ∪ N) = analz(H ∪ N)`.
pub fn analz_into<'a>(out: &mut MessageSet, h: impl IntoIterator<Item = &'a Message>) {
    let mut work: Vec<Message> = h.into_iter().cloned().collect();
    while let Some(m) = work.pop() {
        if out.contains(&m) {
            continue;
        }
        match &m {
            Message::MPair(x, y) => {
                work.push((**x).clone());
                work.push((**y).clone());
            }
            Message::Crypt(k, x) => {
                if out.contains(&Message::Key(invert(k))) {
                    work.push((**x).clone());
                }
            }
            Message::Key(k) => {
                // a new key may open ciphertexts that were stuck so far
                for c in out.iter() {
                    if let Message::Crypt(ck, x) = c {
                        if invert(ck) == *k && !out.contains(x) {
                            work.push((**x).clone());
                        }
                    }
                }
            }
            _ => {}
        }
        out.insert(m);
    }
}

/// Decides `x ∈ synth(h)`; `h` is expected to be analz-closed.
///
/// Agent names and numbers are guessable. Nonces and keys must be known
/// outright. Compound messages are either known whole or built from parts.
pub fn synthesizes(h: &MessageSet, x: &Message) -> bool {
    match x {
        Message::Agent(_) | Message::Number(_) => true,
        Message::Nonce(_) | Message::Key(_) => h.contains(x),
        Message::Hash(body) => h.contains(x) || synthesizes(h, body),
        Message::Crypt(k, body) => {
            h.contains(x) || (h.contains(&Message::Key(k.clone())) && synthesizes(h, body))
        }
        Message::MPair(a, b) => synthesizes(h, a) && synthesizes(h, b),
    }
}

/// Every nonce body occurring anywhere inside `m`, including hash bodies,
/// PRF arguments and session-key parameters.
pub fn collect_nonces(m: &Message, out: &mut BTreeSet<NonceBody>) {
    fn nonce(n: &NonceBody, out: &mut BTreeSet<NonceBody>) {
        if out.insert(n.clone()) {
            if let Some((a, b, c)) = n.prf_args() {
                nonce(a, out);
                nonce(b, out);
                nonce(c, out);
            }
        }
    }
    fn key(k: &KeyTerm, out: &mut BTreeSet<NonceBody>) {
        if let KeyTerm::SessK(s) = k {
            nonce(&s.na, out);
            nonce(&s.nb, out);
            nonce(&s.m, out);
        }
    }
    match m {
        Message::Nonce(n) => nonce(n, out),
        Message::Key(k) => key(k, out),
        Message::Hash(x) => collect_nonces(x, out),
        Message::Crypt(k, x) => {
            key(k, out);
            collect_nonces(x, out);
        }
        Message::MPair(x, y) => {
            collect_nonces(x, out);
            collect_nonces(y, out);
        }
        Message::Agent(_) | Message::Number(_) => {}
    }
}

impl fmt::Display for AgentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentName::Server => f.write_str("Server"),
            AgentName::Spy => f.write_str("Spy"),
            AgentName::Friend(i) => write!(f, "Friend{i}"),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::ClientRole => "client",
            Role::ServerRole => "server",
        })
    }
}

impl fmt::Display for NonceBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonceBody::Atom(i) => write!(f, "n{i}"),
            NonceBody::Prf(args) => write!(f, "PRF({},{},{})", args.0, args.1, args.2),
        }
    }
}

impl fmt::Display for KeyTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyTerm::Pub(a) => write!(f, "pub({a})"),
            KeyTerm::Pri(a) => write!(f, "pri({a})"),
            KeyTerm::SessK(s) => write!(f, "sessK({},{},{},{})", s.na, s.nb, s.m, s.role),
        }
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Agent(a) => write!(f, "Agent({a})"),
            Message::Number(n) => write!(f, "Num({n})"),
            Message::Nonce(n) => write!(f, "Nonce({n})"),
            Message::Key(k) => write!(f, "Key({k})"),
            Message::Hash(x) => write!(f, "Hash({x})"),
            Message::Crypt(k, x) => write!(f, "Crypt({k}, {x})"),
            Message::MPair(..) => {
                f.write_str("Pair(")?;
                for (i, c) in self.components().into_iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
        }
    }
}
